"""Executable checks of the weighted-mean shift propositions and the
long-tail error-disparity experiments.

Two layers:

1. :class:`WeightedSet` with the two reweighting operations. Each op checks
   its precondition, renormalizes, and asserts the predicted strict
   inequality on the new mean — so a randomized suite over valid instances
   must pass with zero violations.

2. A discretized long-tail population model: a universe of patterns whose
   frequencies are drawn from a finite prior list, a training multiset drawn
   from those frequencies, and a classifier that memorizes training labels.
   A pattern observed l times carries importance weight tau_l (the
   Monte-Carlo posterior mean of its population frequency given l
   observations), and a group's excessive error is the tau-weighted mean of
   per-pattern empirical label-noise rates — precisely the structure the
   propositions govern. The experiments check the *direction* of disparity
   change under two interventions: correcting a mislabeled minority sample,
   and moving a clean majority sample into the minority group.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

_WEIGHT_TOL = 1e-12

# rng stream ids under the root seed
_STREAM_INSTANCE = 0
_STREAM_TAU = 1
_STREAM_PICK = 2

DEFAULT_MC_DRAWS = 10_000


class TheoryError(ValueError):
    """Precondition violation or a falsified proposition (which is a bug)."""


@dataclass(frozen=True, eq=False)
class WeightedSet:
    """Non-negative values with non-negative weights summing to one."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        if values.ndim != 1 or values.shape != weights.shape or values.size == 0:
            raise TheoryError("values and weights must be equal-length 1-D and non-empty")
        if (values < 0).any() or (weights < 0).any():
            raise TheoryError("values and weights must be non-negative")
        if abs(weights.sum() - 1.0) > _WEIGHT_TOL:
            raise TheoryError(f"weights must sum to 1 within {_WEIGHT_TOL}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def normalized(cls, values: Sequence[float], weights: Sequence[float]) -> "WeightedSet":
        w = np.asarray(weights, dtype=np.float64)
        total = w.sum()
        if total <= 0:
            raise TheoryError("total weight must be positive")
        return cls(np.asarray(values, dtype=np.float64), w / total)

    def mean(self) -> float:
        return float(self.values @ self.weights)


def _replace_and_renormalize(ws: WeightedSet, i: int, new_value: float,
                             new_weight: float) -> float:
    values = ws.values.copy()
    weights = ws.weights.copy()
    values[i] = new_value
    weights[i] = new_weight
    total = weights.sum()
    if total <= 0:
        raise TheoryError("reweighting removed all weight")
    return float((values @ weights) / total)


def reweight_case1(ws: WeightedSet, i: int, new_weight: float) -> float:
    """Shrink the weight of a strictly-below-mean value; the mean must rise.

    Returns the new (renormalized) mean and raises if the strict increase
    fails — that would falsify the proposition, not merely a tolerance.
    """
    old_mean = ws.mean()
    if not ws.values[i] < old_mean:
        raise TheoryError(f"value at {i} is not strictly below the mean")
    if not 0.0 <= new_weight < ws.weights[i]:
        raise TheoryError("new weight must satisfy 0 <= new < current")
    new_mean = _replace_and_renormalize(ws, i, float(ws.values[i]), new_weight)
    if not new_mean > old_mean:
        raise TheoryError(
            f"proposition violated: mean {old_mean!r} -> {new_mean!r} did not rise")
    return new_mean


def reweight_case2(ws: WeightedSet, i: int, new_value: float,
                   new_weight: float) -> float:
    """Grow the weight of a strictly-below-mean value (optionally lowering the
    value itself); the mean must fall.

    ``new_value`` may equal the current value — the strict drop comes from
    the weight increase alone whenever the value sits strictly below the
    mean, so only ``new_value <= value`` is required.
    """
    old_mean = ws.mean()
    if not ws.values[i] < old_mean:
        raise TheoryError(f"value at {i} is not strictly below the mean")
    if not 0.0 <= new_value <= ws.values[i]:
        raise TheoryError("new value must satisfy 0 <= new <= current")
    if not new_weight > ws.weights[i]:
        raise TheoryError("new weight must exceed the current weight")
    new_mean = _replace_and_renormalize(ws, i, new_value, new_weight)
    if not new_mean < old_mean:
        raise TheoryError(
            f"proposition violated: mean {old_mean!r} -> {new_mean!r} did not fall")
    return new_mean


def prop_basic_suite(instances: int, seed: int = 0, max_size: int = 10) -> dict:
    """Randomized suite over valid reweighting instances.

    Generates ``instances`` weighted sets (alternating between the two cases),
    applies a random valid reweighting, and counts violations. Any nonzero
    violation count falsifies the proposition (or reveals a bug).
    """
    rng = np.random.default_rng(seed)
    violations = 0
    ran = {"case1": 0, "case2": 0}
    for trial in range(instances):
        size = int(rng.integers(2, max_size + 1))
        values = rng.random(size)
        weights = rng.random(size) + 1e-3
        ws = WeightedSet.normalized(values, weights)
        below = np.flatnonzero(ws.values < ws.mean())
        if below.size == 0:  # cannot happen for non-constant values; resample
            continue
        i = int(rng.choice(below))
        case = "case1" if trial % 2 == 0 else "case2"
        try:
            if case == "case1":
                reweight_case1(ws, i, new_weight=float(ws.weights[i] * rng.random()))
            else:
                reweight_case2(ws, i,
                               new_value=float(ws.values[i] * rng.random()),
                               new_weight=float(ws.weights[i] * (1.0 + rng.random())))
        except TheoryError:
            violations += 1
        ran[case] += 1
    return {"instances": ran["case1"] + ran["case2"], "violations": violations,
            "case1": ran["case1"], "case2": ran["case2"]}


# -- long-tail population model ------------------------------------------------------


@dataclass(frozen=True)
class LongTailConfig:
    """Discretized two-group population with long-tailed pattern frequencies.

    ``universe`` patterns are split evenly: the first half form the majority
    group, the second half the minority; pattern j is paired with pattern
    j + universe/2 for move interventions. Each pattern's unnormalized
    frequency is drawn uniformly from ``priors``; minority frequencies are
    multiplied by ``minority_scale`` (< 1 makes minority patterns rarer, the
    'different frequency profiles' the experiments require). ``noise`` gives
    the per-group label-noise rates (majority, minority).
    """

    universe: int = 40
    priors: tuple = (0.01, 0.1, 1.0)
    draws: int = 200
    noise: tuple = (0.1, 0.35)
    minority_scale: float = 0.5
    seed: int = 0
    mc_draws: int = DEFAULT_MC_DRAWS

    def __post_init__(self) -> None:
        if self.universe < 2:
            raise TheoryError("degenerate universe: need at least two patterns")
        if self.universe % 2 != 0:
            raise TheoryError("universe size must be even (paired groups)")
        if len(self.priors) == 0 or any(p <= 0 for p in self.priors):
            raise TheoryError("priors must be a non-empty list of positive reals")
        if self.draws < 1:
            raise TheoryError("draws must be at least 1")
        if len(self.noise) != 2 or any(not 0.0 <= r <= 1.0 for r in self.noise):
            raise TheoryError("noise must be two rates in [0,1]")
        if not 0.0 < self.minority_scale:
            raise TheoryError("minority_scale must be positive")


def estimate_tau(cfg: LongTailConfig) -> np.ndarray:
    """Importance weight per observed count: tau[l] = E[D(X) | count(X) = l].

    Estimated by seeded Monte-Carlo under the uniform prior over ``priors``
    (draw a world's frequencies, draw a training multiset, bucket each
    pattern's true frequency by its observed count), then forced monotone
    non-decreasing in l by a running maximum — the property downstream
    claims rely on. Counts never seen in the simulation inherit the previous
    level before the running maximum.
    """
    rng = np.random.default_rng([cfg.seed, _STREAM_TAU])
    priors = np.asarray(cfg.priors, dtype=np.float64)
    sums = np.zeros(cfg.draws + 1)
    hits = np.zeros(cfg.draws + 1)
    for _ in range(cfg.mc_draws):
        q = rng.choice(priors, size=cfg.universe)
        D = q / q.sum()
        counts = rng.multinomial(cfg.draws, D)
        np.add.at(sums, counts, D)
        np.add.at(hits, counts, 1.0)
    tau = np.zeros(cfg.draws + 1)
    last = 0.0
    for level in range(cfg.draws + 1):
        if hits[level] > 0:
            last = sums[level] / hits[level]
        tau[level] = last
    return np.maximum.accumulate(tau)


@dataclass(frozen=True, eq=False)
class LongTailInstance:
    """One realized world: per-pattern training counts and mislabel counts."""

    counts: np.ndarray
    mislabeled: np.ndarray
    minority_mask: np.ndarray
    tau: np.ndarray

    def group_error(self, minority: bool) -> float:
        """Tau-weighted mean empirical noise rate over one group's patterns.

        Computed exactly as the disparity formula states: every pattern of
        the group contributes its tau weight to the denominator (unseen
        patterns carry their count-0 weight and a zero noise rate).
        """
        mask = self.minority_mask if minority else ~self.minority_mask
        w = self.tau[self.counts[mask]]
        c = self.counts[mask]
        noise = np.where(c > 0, self.mislabeled[mask] / np.maximum(c, 1), 0.0)
        denom = w.sum()
        if denom <= 0:
            raise TheoryError("group has no importance weight")
        return float((w * noise).sum() / denom)

    def disparity(self) -> float:
        return abs(self.group_error(minority=False) - self.group_error(minority=True))


def draw_instance(cfg: LongTailConfig, tau: Optional[np.ndarray] = None) -> LongTailInstance:
    """Sample a world and a training multiset from the configuration."""
    rng = np.random.default_rng([cfg.seed, _STREAM_INSTANCE])
    priors = np.asarray(cfg.priors, dtype=np.float64)
    half = cfg.universe // 2
    minority_mask = np.arange(cfg.universe) >= half
    q = rng.choice(priors, size=cfg.universe)
    q[minority_mask] *= cfg.minority_scale
    D = q / q.sum()
    counts = rng.multinomial(cfg.draws, D)
    rates = np.where(minority_mask, cfg.noise[1], cfg.noise[0])
    mislabeled = rng.binomial(counts, rates)
    if tau is None:
        tau = estimate_tau(cfg)
    return LongTailInstance(counts=counts, mislabeled=mislabeled,
                            minority_mask=minority_mask, tau=tau)


INTERVENTIONS = ("flip_label_minority", "move_sample_majority_to_minority")


def apply_intervention(inst: LongTailInstance, intervention: str, seed: int) -> LongTailInstance:
    """Apply one intervention; a world with no eligible sample is returned
    unchanged (the intervention has nothing to act on)."""
    rng = np.random.default_rng([seed, _STREAM_PICK])
    counts = inst.counts.copy()
    mislabeled = inst.mislabeled.copy()
    half = counts.size // 2
    if intervention == "flip_label_minority":
        eligible = np.flatnonzero(inst.minority_mask & (mislabeled >= 1))
        if eligible.size:
            j = int(rng.choice(eligible))
            mislabeled[j] -= 1  # correct one wrong label
    elif intervention == "move_sample_majority_to_minority":
        eligible = np.flatnonzero(~inst.minority_mask & (counts - mislabeled >= 1))
        if eligible.size:
            j = int(rng.choice(eligible))
            counts[j] -= 1           # a clean copy leaves the majority pattern
            counts[half + j] += 1    # and arrives, correctly labeled, at its
            #                          minority counterpart
    else:
        raise TheoryError(f"unknown intervention {intervention!r}; "
                          f"expected one of {INTERVENTIONS}")
    return LongTailInstance(counts=counts, mislabeled=mislabeled,
                            minority_mask=inst.minority_mask, tau=inst.tau)


def longtail_disparity_experiment(cfg: LongTailConfig, intervention: str,
                                  tau: Optional[np.ndarray] = None) -> tuple:
    """Disparity before and after one intervention on one sampled world."""
    inst = draw_instance(cfg, tau=tau)
    before = inst.disparity()
    after = apply_intervention(inst, intervention, cfg.seed).disparity()
    return before, after


def longtail_trials(cfg: LongTailConfig, intervention: str, trials: int,
                    threads: int = 1) -> dict:
    """Run seeded trials and count how often disparity does not increase.

    tau is estimated once (it depends only on the configuration, not the
    world) and shared across trials; trial t reuses the config with seed
    cfg.seed + t. Results are order-independent, so a thread pool changes
    nothing but wall time.
    """
    tau = estimate_tau(cfg)

    def one(t: int) -> bool:
        trial_cfg = LongTailConfig(universe=cfg.universe, priors=cfg.priors,
                                   draws=cfg.draws, noise=cfg.noise,
                                   minority_scale=cfg.minority_scale,
                                   seed=cfg.seed + t, mc_draws=cfg.mc_draws)
        before, after = longtail_disparity_experiment(trial_cfg, intervention, tau=tau)
        return after <= before

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(one, range(trials)))
    else:
        outcomes = [one(t) for t in range(trials)]
    satisfied = int(sum(outcomes))
    return {"intervention": intervention, "trials": trials,
            "satisfied": satisfied, "fraction": satisfied / trials}
