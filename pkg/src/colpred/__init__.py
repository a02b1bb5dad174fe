"""Collaborative prediction: decide when datasets should be merged before
fitting linear regression or classification models, and cluster many sources
greedily to minimize total out-of-sample error."""

from .data import Dataset, DataError, GaussianSpec, SplitDataset, ingest_csv, \
    sample_synthetic, split, write_csv
from .moments import MomentSet, moments_from_data, moments_from_spec
from .ols import CombinedFit, OlsFit, SingularFitError, fit_combined, fit_ols, \
    predict, whitening_matrix_d
from .oracle import GroundTruth, TheoremOneQuantities, exact_ose_combined, \
    exact_ose_single, ground_truth_merge, theorem1_quantities
from .criterion import CriterionInputs, CriterionOutput, a_tilde_coefficients, \
    algorithm0
from .tuner import MergeDecision, TunerConfig, bootstrap_ose, decide_pair, \
    ose_dif_hat, tune_alpha
from .cluster import Partition, evaluate_partition, greedy_cluster
from .bench import CellResult, ExperimentGrid, direct_comparison, run_grid

__all__ = [
    "Dataset", "DataError", "GaussianSpec", "SplitDataset", "ingest_csv",
    "sample_synthetic", "split", "write_csv",
    "MomentSet", "moments_from_data", "moments_from_spec",
    "CombinedFit", "OlsFit", "SingularFitError", "fit_combined", "fit_ols",
    "predict", "whitening_matrix_d",
    "GroundTruth", "TheoremOneQuantities", "exact_ose_combined",
    "exact_ose_single", "ground_truth_merge", "theorem1_quantities",
    "CriterionInputs", "CriterionOutput", "a_tilde_coefficients", "algorithm0",
    "MergeDecision", "TunerConfig", "bootstrap_ose", "decide_pair",
    "ose_dif_hat", "tune_alpha",
    "Partition", "evaluate_partition", "greedy_cluster",
    "CellResult", "ExperimentGrid", "direct_comparison", "run_grid",
]
