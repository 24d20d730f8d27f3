"""Desk-scale heterogeneous federated learning: engine and benchmark harness."""

from .datasets import CsvSchema, Dataset, gen_gaussian_mixture, gen_har_like, ingest_csv
from .engine import ExperimentSpec, FederatedRun, run_experiment
from .errors import (
    AggregationError,
    ConfigError,
    DataError,
    EngineError,
    HtflError,
    MethodInapplicableError,
    ModelError,
    PartitionError,
    ShapeError,
)
from .linalg import TruncatedSvd, truncated_svd
from .methods import MethodConfig, aggregate_weighted, byte_size, make_method
from .metrics import detect_convergence, summarize
from .models import (
    ModelGroup,
    ModelSpec,
    assign_model,
    auxiliary_spec,
    build,
    builtin_groups,
    get_group,
    parameter_count,
)
from .optim import Sgd, SgdConfig
from .partition import (
    PartitionResult,
    ScenarioSpec,
    partition_dirichlet,
    partition_feature_shift,
    partition_pathological,
    partition_real_world,
    run_scenario,
)
from .tensor import Tensor

__version__ = "0.1.0"
