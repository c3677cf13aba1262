"""Trace group-fairness violations back to individual training samples.

The toolkit trains a binary logistic classifier, measures a group-fairness
violation (demographic parity, equal opportunity, or equalized odds) on a
validation split, and scores every *training* sample by how much a
counterfactual intervention on it — flipping its label, transporting it
across the sensitive group, flipping a categorical feature, or removing it
— would change that violation. The scores support three workflows:

* **audit** — rank training samples by their estimated effect;
* **mitigate** — edit the top-ranked samples and retrain;
* **stress-test** — inject known corruptions (label noise, poisoning,
  group imbalance) and check that the ranking recovers them.

Estimates come from a damped-Hessian influence approximation; a retraining
oracle (:mod:`fairtrace.oracle`) measures the same quantities exactly for
validation.
"""

from .counterfactual import (ConceptError, CounterfactualSample, TransportError,
                             TransportMap, build_transport_map,
                             concept_counterfactuals, parse_concept)
from .data import (DataValidationError, Dataset, SchemaError, SplitError,
                   load_csv, parse_schema, read_schema, save_csv,
                   split_dataset, write_schema)
from .fairness import (METRICS, FairnessValue, UndefinedMetricError,
                       fairness_value, grad_surrogate, hard_violation,
                       surrogate_violation)
from .influence import (InfluenceAuditor, InfluenceReport, InverseHvpConfig,
                        NumericalError, audit_influence, concept_influence,
                        fairness_direction, group_influence, inverse_hvp)
from .model import (LogisticModel, TrainConfig, TrainingDivergedError,
                    TrainingError, grad, hessian, hvp, load_model, loss,
                    save_model, train_theta)
from .oracle import (OracleError, OracleResult, influence_correlation,
                     load_oracle_csv, save_oracle_csv, true_influence,
                     true_influences)
from .pipeline import (DetectionReport, ImbalanceSpec, MitigationReport,
                       NoiseSpec, PoisonSpec, detect, inject_imbalance,
                       inject_label_noise, inject_poison, load_truth,
                       mitigate, run_detection, save_truth)
from .synthetic import Latents, generate, load_latents, save_latents
from .synthetic import true_counterfactuals as synthetic_counterfactuals
from .theory import (INTERVENTIONS, LongTailConfig, TheoryError, WeightedSet,
                     longtail_disparity_experiment, longtail_trials,
                     prop_basic_suite, reweight_case1, reweight_case2)

__version__ = "0.1.0"

__all__ = [
    "ConceptError", "CounterfactualSample", "TransportError", "TransportMap",
    "build_transport_map", "concept_counterfactuals", "parse_concept",
    "DataValidationError", "Dataset", "SchemaError", "SplitError", "load_csv",
    "parse_schema", "read_schema", "save_csv", "split_dataset", "write_schema",
    "METRICS", "FairnessValue", "UndefinedMetricError", "fairness_value",
    "grad_surrogate", "hard_violation", "surrogate_violation",
    "InfluenceAuditor", "InfluenceReport", "InverseHvpConfig",
    "NumericalError", "audit_influence", "concept_influence",
    "fairness_direction", "group_influence", "inverse_hvp",
    "LogisticModel", "TrainConfig", "TrainingDivergedError", "TrainingError",
    "grad", "hessian", "hvp", "load_model", "loss", "save_model",
    "train_theta",
    "OracleError", "OracleResult", "influence_correlation", "load_oracle_csv",
    "save_oracle_csv", "true_influence", "true_influences",
    "DetectionReport", "ImbalanceSpec", "MitigationReport", "NoiseSpec",
    "PoisonSpec", "detect", "inject_imbalance", "inject_label_noise",
    "inject_poison", "load_truth", "mitigate", "run_detection", "save_truth",
    "Latents", "generate", "load_latents", "save_latents",
    "synthetic_counterfactuals",
    "INTERVENTIONS", "LongTailConfig", "TheoryError", "WeightedSet",
    "longtail_disparity_experiment", "longtail_trials", "prop_basic_suite",
    "reweight_case1", "reweight_case2",
    "__version__",
]
