"""Fair coVariance Neural Networks.

Polynomial covariance filters trained end-to-end with a group-imbalance
penalty, fair covariance estimators, PCA baselines, and stability tooling.
"""

__version__ = "0.1.0"

from .covariance import (  # noqa: E402
    CovarianceEstimate,
    balanced_covariance,
    debiased_covariance,
    group_covariances,
    sample_covariance,
)
from .data import (  # noqa: E402
    CsvSchema,
    Dataset,
    SyntheticConfig,
    friedman_target,
    generate_two_group_gaussian,
    load_csv_dataset,
    partition_by_group,
    split,
    standardize,
)
from .metrics import classification_error, group_bias_report, smape  # noqa: E402
from .model import Architecture, VnnModel, backward, forward, init_model, predict  # noqa: E402
from .spectral import (  # noqa: E402
    apply_filter,
    eigendecompose,
    filter_distance,
    frequency_response,
    lipschitz_constant,
    stability_bound,
    stability_sweep,
)
from .training import TrainConfig, composite_objective, fairness_penalty, task_loss, train  # noqa: E402
