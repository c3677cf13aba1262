"""Command-line front end.

One binary, six subcommands::

    fairtrace gen-data   draw the synthetic benchmark (CSV + latents + split)
    fairtrace audit      train a model and rank training samples by influence
    fairtrace mitigate   edit the top-ranked samples and retrain
    fairtrace inject     corrupt a dataset (noise / poison / imbalance)
    fairtrace detect     flag top-ranked samples and score against the truth
    fairtrace theory     run the weighted-mean and long-tail experiments

Every hyperparameter is settable by flag or by a JSON config file
(``--config``); explicit flags win over config-file values. All randomness
flows from ``--seed``, and rerunning any command with identical inputs
rewrites byte-identical outputs.

Exit codes: 0 success; 1 usage or I/O errors; 2 numeric failures (undefined
metric cell, non-convergent solves, diverged recursions).
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import click
import numpy as np

from .counterfactual import ConceptError, TransportError, parse_concept
from .data import (DEFAULT_FRACTIONS, FLOAT_FORMAT, DataValidationError,
                   Dataset, SchemaError, SplitError, load_csv, read_schema,
                   reload_schema_for, save_csv, split_dataset, write_schema)
from .fairness import METRICS, UndefinedMetricError
from .influence import (DEFAULT_DEPTH, HVP_METHODS, InverseHvpConfig,
                        NumericalError, audit_influence)
from .model import (DEFAULT_DAMPING, DEFAULT_EPOCHS, DEFAULT_LR, OPTIMIZERS,
                    TrainConfig, TrainingError, train_theta)
from .oracle import OracleError
from .pipeline import (ImbalanceSpec, NoiseSpec, PoisonSpec, detect,
                       inject_imbalance, inject_label_noise, inject_poison,
                       load_truth, mitigate, save_truth)
from .synthetic import generate, save_latents
from .theory import (INTERVENTIONS, LongTailConfig, TheoryError,
                     longtail_disparity_experiment, longtail_trials,
                     prop_basic_suite)

_USAGE_ERRORS = (SchemaError, DataValidationError, SplitError, ConceptError,
                 FileNotFoundError, IsADirectoryError, PermissionError,
                 json.JSONDecodeError)
_NUMERIC_ERRORS = (UndefinedMetricError, NumericalError, TrainingError,
                   TransportError, OracleError, TheoryError)


# -- option plumbing ---------------------------------------------------------------


def _apply_config_file(ctx: click.Context, params: dict) -> dict:
    """Overlay config-file values onto parameters the user left at default."""
    path = params.pop("config", None)
    if not path:
        return params
    payload = json.loads(Path(path).read_text())
    if not isinstance(payload, dict):
        raise SchemaError(f"{path}: config file must hold a JSON object")
    for name, value in payload.items():
        if name not in params:
            continue
        source = ctx.get_parameter_source(name)
        if source == click.core.ParameterSource.DEFAULT:
            params[name] = value
    return params


def _require(params: dict, *names: str) -> None:
    """Options that must arrive either as a flag or through the config file."""
    missing = [f"--{name.replace('_', '-')}" for name in names
               if params.get(name) is None]
    if missing:
        raise click.UsageError(f"missing required option(s): {', '.join(missing)}")


def _check_choice(params: dict, name: str, choices) -> None:
    value = params.get(name)
    if value is not None and value not in choices:
        raise click.UsageError(
            f"--{name.replace('_', '-')} must be one of {', '.join(choices)}; "
            f"got {value!r}")


def _fractions(text: str) -> tuple:
    try:
        parts = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise click.BadParameter(f"cannot parse fractions {text!r}") from None
    if len(parts) != 3:
        raise click.BadParameter("fractions must be three comma-separated numbers")
    return parts


def _probs_table(text: str) -> dict:
    """Four comma-separated cell probabilities: a0y0, a1y0, a0y1, a1y1."""
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise click.BadParameter(f"cannot parse probabilities {text!r}") from None
    if len(values) != 4:
        raise click.BadParameter("need four probabilities: a0y0,a1y0,a0y1,a1y1")
    return {(0, 0): values[0], (1, 0): values[1], (0, 1): values[2], (1, 1): values[3]}


def _check_concept(_ctx, _param, value):
    if value is not None:
        parse_concept(value)  # raises ConceptError on bad syntax
    return value


def config_option(f):
    return click.option("--config", type=click.Path(exists=True, dir_okay=False),
                        default=None, help="JSON file of defaults; flags win.")(f)


def data_options(f):
    f = click.option("--data", default=None, type=click.Path(dir_okay=False),
                     help="Input CSV.")(f)
    f = click.option("--schema", default=None, type=click.Path(dir_okay=False),
                     help="column=role schema file.")(f)
    f = click.option("--split", "split_file", default=None,
                     type=click.Path(dir_okay=False),
                     help="split.json sidecar; omit to re-split by --seed.")(f)
    f = click.option("--fractions", default="0.70,0.15,0.15", show_default=True,
                     help="train,val,test fractions when re-splitting.")(f)
    return f


def train_options(f):
    f = click.option("--optimizer", type=click.Choice(OPTIMIZERS), default="sgd",
                     show_default=True)(f)
    f = click.option("--lr", type=float, default=DEFAULT_LR, show_default=True)(f)
    f = click.option("--epochs", type=int, default=DEFAULT_EPOCHS, show_default=True)(f)
    f = click.option("--damping", type=float, default=DEFAULT_DAMPING,
                     show_default=True, help="L2 damping shared by training and Hessian.")(f)
    return f


def hvp_options(f):
    f = click.option("--hvp", type=click.Choice(HVP_METHODS), default="direct",
                     show_default=True, help="Inverse-Hessian application method.")(f)
    f = click.option("--depth", type=int, default=DEFAULT_DEPTH, show_default=True,
                     help="Recursion depth (recursive mode).")(f)
    f = click.option("--batch-size", type=int, default=None,
                     help="Recursion batch size (default min(n,64)).")(f)
    f = click.option("--scale", type=float, default=None,
                     help="Spectral pre-scale; default 1 + trace(H)/(d+1).")(f)
    return f


def audit_options(f):
    f = click.option("--metric", type=click.Choice(METRICS), default=None)(f)
    f = click.option("--concept", default=None, callback=_check_concept,
                     help="label | group | feature:<name> | removal")(f)
    f = click.option("--nn-k", type=int, default=1, show_default=True,
                     help="Counterfactuals averaged per sample (transport concepts).")(f)
    f = click.option("--standardize/--no-standardize", default=True,
                     show_default=True, help="Standardize features for NN distance.")(f)
    f = click.option("--cap", type=int, default=None,
                     help="Optional seeded cap on each NN target cell.")(f)
    return f


def common_options(f):
    f = click.option("--seed", type=int, default=0, show_default=True)(f)
    f = click.option("--threads", type=int, default=1, show_default=True,
                     help="Worker threads; results are thread-count invariant.")(f)
    f = click.option("--out", default=None, type=click.Path(file_okay=False),
                     help="Output directory (created if missing).")(f)
    return f


def _load_dataset(data, schema, split_file, seed, fractions) -> Dataset:
    ds = load_csv(data, read_schema(schema))
    if split_file:
        payload = json.loads(Path(split_file).read_text())
        return ds.with_split(np.asarray(payload["split"], dtype=np.int64))
    return split_dataset(ds, _fractions(fractions), seed=seed)


def _save_split(ds: Dataset, path) -> None:
    Path(path).write_text(json.dumps(
        {"split": [int(v) for v in ds.split]}, indent=2) + "\n")


def _write_scores_csv(report, path) -> None:
    lines = ["train_index,score"]
    for i, s in zip(report.train_indices, report.scores):
        lines.append(f"{int(i)},{FLOAT_FORMAT % s}")
    Path(path).write_text("\n".join(lines) + "\n")


def _out_dir(out) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# -- commands -----------------------------------------------------------------------


@click.group(name="fairtrace")
def cli() -> None:
    """Trace group-fairness violations back to individual training samples."""


@cli.command("gen-data")
@click.option("--n", type=int, default=None, help="Number of samples (>= 10).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--fractions", default="0.70,0.15,0.15", show_default=True)
@click.option("--out", default=None, type=click.Path(file_okay=False))
@config_option
@click.pass_context
def cmd_gen_data(ctx, **params):
    """Generate the synthetic benchmark: data.csv, latents.csv, schema, split."""
    p = _apply_config_file(ctx, params)
    _require(p, "n", "out")
    if p["n"] < 10:
        raise click.BadParameter("--n must be at least 10")
    ds, lat = generate(p["n"], seed=p["seed"], fractions=_fractions(p["fractions"]))
    out = _out_dir(p["out"])
    save_csv(ds, out / "data.csv")
    save_latents(lat, out / "latents.csv")
    write_schema(out / "schema.txt", reload_schema_for(ds))
    _save_split(ds, out / "split.json")
    click.echo(f"wrote {out}/data.csv ({ds.n} rows), latents.csv, schema.txt, split.json")


@cli.command("audit")
@data_options
@audit_options
@train_options
@hvp_options
@common_options
@config_option
@click.pass_context
def cmd_audit(ctx, **params):
    """Train, score every training sample, write report.json + scores.csv."""
    p = _apply_config_file(ctx, params)
    _require(p, "data", "schema", "metric", "concept", "out")
    _check_choice(p, "metric", METRICS)
    ds = _load_dataset(p["data"], p["schema"], p["split_file"], p["seed"], p["fractions"])
    train_cfg = TrainConfig(optimizer=p["optimizer"], lr=p["lr"], epochs=p["epochs"],
                            damping=p["damping"], seed=p["seed"])
    hvp_cfg = InverseHvpConfig(method=p["hvp"], depth=p["depth"],
                               batch_size=p["batch_size"], scale=p["scale"],
                               seed=p["seed"])
    tr = ds.train_idx
    theta, _, _, _ = train_theta(ds.X[tr], ds.y[tr].astype(np.float64), train_cfg)
    report = audit_influence(ds, theta, p["metric"], p["concept"],
                             damping=p["damping"], config=hvp_cfg, k=p["nn_k"],
                             standardize=p["standardize"], transport_cap=p["cap"],
                             threads=p["threads"])
    out = _out_dir(p["out"])
    report.save(out / "report.json")
    _write_scores_csv(report, out / "scores.csv")
    click.echo(f"audited {report.train_indices.size} samples "
               f"(metric={p['metric']}, concept={p['concept']}); "
               f"hard violation {report.hard_violation:.6g}")


@cli.command("mitigate")
@data_options
@audit_options
@train_options
@hvp_options
@click.option("--k", type=float, default=None,
              help="Fraction of training samples to edit (ceiling applied).")
@common_options
@config_option
@click.pass_context
def cmd_mitigate(ctx, **params):
    """Edit the top-k ranked samples, retrain, write mitigation.json."""
    p = _apply_config_file(ctx, params)
    _require(p, "data", "schema", "metric", "concept", "k", "out")
    _check_choice(p, "metric", METRICS)
    if not 0.0 <= p["k"] <= 1.0:
        raise click.BadParameter("--k must be a fraction in [0, 1]")
    ds = _load_dataset(p["data"], p["schema"], p["split_file"], p["seed"], p["fractions"])
    train_cfg = TrainConfig(optimizer=p["optimizer"], lr=p["lr"], epochs=p["epochs"],
                            damping=p["damping"], seed=p["seed"])
    hvp_cfg = InverseHvpConfig(method=p["hvp"], depth=p["depth"],
                               batch_size=p["batch_size"], scale=p["scale"],
                               seed=p["seed"])
    k_edit = math.ceil(p["k"] * ds.train_idx.size)
    mreport, _, report = mitigate(ds, p["metric"], p["concept"], k_edit,
                                  train_config=train_cfg, hvp_config=hvp_cfg,
                                  nn_k=p["nn_k"], standardize=p["standardize"],
                                  transport_cap=p["cap"], threads=p["threads"])
    out = _out_dir(p["out"])
    mreport.save(out / "mitigation.json")
    _write_scores_csv(report, out / "scores.csv")
    click.echo(f"edited {k_edit} samples; hard {p['metric']} "
               f"{mreport.hard_before:.6g} -> {mreport.hard_after:.6g}; "
               f"accuracy {mreport.accuracy_before:.6g} -> {mreport.accuracy_after:.6g}")


@cli.command("inject")
@data_options
@click.option("--kind", type=click.Choice(("noise", "poison", "imbalance")),
              default=None)
@click.option("--probs", default="0.45,0.35,0.15,0.55", show_default=True,
              help="Cell flip probabilities a0y0,a1y0,a0y1,a1y1 (noise/poison).")
@click.option("--feature", default="x4", show_default=True,
              help="Poison target feature.")
@click.option("--value", type=float, default=1.0, show_default=True,
              help="Poison fixed value.")
@click.option("--cell", default="1,1", show_default=True,
              help="Imbalance cell as group,label.")
@click.option("--factor", type=float, default=2.0, show_default=True,
              help="Imbalance duplication factor.")
@common_options
@config_option
@click.pass_context
def cmd_inject(ctx, **params):
    """Corrupt the training split; write corrupted.csv + schema + split + truth."""
    p = _apply_config_file(ctx, params)
    _require(p, "data", "schema", "kind", "out")
    _check_choice(p, "kind", ("noise", "poison", "imbalance"))
    ds = _load_dataset(p["data"], p["schema"], p["split_file"], p["seed"], p["fractions"])
    if p["kind"] == "noise":
        corrupted, truth = inject_label_noise(
            ds, NoiseSpec(probs=_probs_table(p["probs"]), seed=p["seed"]))
    elif p["kind"] == "poison":
        corrupted, truth = inject_poison(
            ds, PoisonSpec(probs=_probs_table(p["probs"]), feature=p["feature"],
                           value=p["value"], seed=p["seed"]))
    else:
        try:
            a, yv = (int(v) for v in p["cell"].split(","))
        except ValueError:
            raise click.BadParameter(f"cannot parse cell {p['cell']!r}") from None
        corrupted, truth = inject_imbalance(
            ds, ImbalanceSpec(group=a, label=yv, factor=p["factor"], seed=p["seed"]))
    out = _out_dir(p["out"])
    save_csv(corrupted, out / "corrupted.csv")
    write_schema(out / "corrupted.schema", reload_schema_for(corrupted))
    _save_split(corrupted, out / "split.json")
    save_truth(out / "truth.json", p["kind"], truth)
    click.echo(f"{p['kind']}: marked {truth.size} of {ds.train_idx.size} "
               f"training samples; wrote {out}/corrupted.csv, truth.json")


@cli.command("detect")
@data_options
@audit_options
@train_options
@hvp_options
@click.option("--flag-fraction", type=float, default=None,
              help="Fraction of training samples to flag, in (0, 1].")
@click.option("--truth", "truth_file", default=None,
              type=click.Path(dir_okay=False),
              help="truth.json from the inject step (omit to skip precision).")
@common_options
@config_option
@click.pass_context
def cmd_detect(ctx, **params):
    """Audit a corrupted dataset, flag top scores, write detection.json."""
    p = _apply_config_file(ctx, params)
    _require(p, "data", "schema", "metric", "concept", "flag_fraction", "out")
    _check_choice(p, "metric", METRICS)
    ds = _load_dataset(p["data"], p["schema"], p["split_file"], p["seed"], p["fractions"])
    truth = None
    if p["truth_file"] is not None:
        _, truth = load_truth(p["truth_file"])
    train_cfg = TrainConfig(optimizer=p["optimizer"], lr=p["lr"], epochs=p["epochs"],
                            damping=p["damping"], seed=p["seed"])
    hvp_cfg = InverseHvpConfig(method=p["hvp"], depth=p["depth"],
                               batch_size=p["batch_size"], scale=p["scale"],
                               seed=p["seed"])
    tr = ds.train_idx
    theta, _, _, _ = train_theta(ds.X[tr], ds.y[tr].astype(np.float64), train_cfg)
    report = audit_influence(ds, theta, p["metric"], p["concept"],
                             damping=p["damping"], config=hvp_cfg, k=p["nn_k"],
                             standardize=p["standardize"], transport_cap=p["cap"],
                             threads=p["threads"])
    dreport = detect(report, p["flag_fraction"], truth=truth)
    out = _out_dir(p["out"])
    dreport.save(out / "detection.json")
    _write_scores_csv(report, out / "scores.csv")
    if dreport.precision is None:
        click.echo(f"flagged {dreport.flagged.size} samples (no truth file given)")
    else:
        click.echo(f"flagged {dreport.flagged.size} samples; precision "
                   f"{dreport.precision:.6g} vs random baseline "
                   f"{dreport.random_baseline:.6g}")


@cli.command("theory")
@click.option("--suite", type=click.Choice(("prop-basic", "longtail")), default=None)
@click.option("--instances", type=int, default=2000, show_default=True,
              help="Random instances for the prop-basic suite.")
@click.option("--intervention", type=click.Choice(INTERVENTIONS),
              default="flip_label_minority", show_default=True)
@click.option("--trials", type=int, default=0, show_default=True,
              help="Long-tail trials; 0 runs a single experiment.")
@click.option("--universe", type=int, default=40, show_default=True)
@click.option("--priors", default="0.01,0.1,1.0", show_default=True,
              help="Comma-separated positive frequency levels.")
@click.option("--draws", type=int, default=200, show_default=True)
@click.option("--noise", default="0.1,0.35", show_default=True,
              help="majority,minority label-noise rates.")
@click.option("--minority-scale", type=float, default=0.5, show_default=True)
@common_options
@config_option
@click.pass_context
def cmd_theory(ctx, **params):
    """Run the weighted-mean proposition suite or the long-tail experiments."""
    p = _apply_config_file(ctx, params)
    _require(p, "suite", "out")
    _check_choice(p, "suite", ("prop-basic", "longtail"))
    _check_choice(p, "intervention", INTERVENTIONS)
    out = _out_dir(p["out"])
    if p["suite"] == "prop-basic":
        summary = prop_basic_suite(p["instances"], seed=p["seed"])
        (out / "theory.json").write_text(json.dumps(summary, indent=2) + "\n")
        click.echo(f"prop-basic: {summary['instances']} instances, "
                   f"{summary['violations']} violations")
        if summary["violations"]:
            raise NumericalError("proposition suite reported violations")
        return
    try:
        priors = tuple(float(v) for v in p["priors"].split(","))
        noise = tuple(float(v) for v in p["noise"].split(","))
    except ValueError:
        raise click.BadParameter("cannot parse --priors/--noise") from None
    if not priors or any(v <= 0 for v in priors):
        raise click.BadParameter("--priors must be positive reals")
    cfg = LongTailConfig(universe=p["universe"], priors=priors, draws=p["draws"],
                         noise=noise, minority_scale=p["minority_scale"],
                         seed=p["seed"])
    if p["trials"] > 0:
        summary = longtail_trials(cfg, p["intervention"], p["trials"],
                                  threads=p["threads"])
    else:
        before, after = longtail_disparity_experiment(cfg, p["intervention"])
        summary = {"intervention": p["intervention"], "F_before": before,
                   "F_after": after}
    (out / "theory.json").write_text(json.dumps(summary, indent=2) + "\n")
    click.echo(json.dumps(summary))


def main(argv=None) -> int:
    """Entry point mapping exceptions to documented exit codes."""
    try:
        cli.main(args=argv, prog_name="fairtrace", standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:  # --help and friends
        return int(exc.exit_code)
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except _NUMERIC_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except _USAGE_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
