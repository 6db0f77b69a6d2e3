"""Deterministic parameter-server training simulator.

Simulates asynchronous distributed SGD against a single parameter server
under three update protocols (dense async SGD, globally-compressed async
SGD, and per-tensor-compressed updates with per-parameter staleness
modulation), with byte-exact ingress accounting, worker crash and speed
heterogeneity models, and reproducible CSV reports.
"""

from .compression import (
    DenseUpdate,
    SelectionPolicy,
    SparseUpdate,
    decode,
    encode,
    make_update,
    select_grad,
)
from .config import RunConfig
from .data import Dataset, load_idx, load_mnist, shard_indices, synthetic_dataset
from .errors import (
    CodecError,
    ConfigurationError,
    IngestionError,
    LedgerError,
    NumericFault,
    PssimError,
    StalenessUnavailableError,
)
from .ledger import UpdateLedger, modulated_rate
from .nn import (
    ModelArch,
    ParamVector,
    TensorSpec,
    batch_loss,
    cnn_arch,
    forward,
    forward_batch,
    init_params,
    loss,
    mlp_arch,
    sgd_step,
)
from .rng import stream
from .server import ADACOMP, ASGD, COMP_ASGD, ParameterServer, ProtocolConfig
from .simulator import (
    Event,
    MetricsRecord,
    RunReport,
    RunSummary,
    evaluate,
    moving_average,
    read_records_csv,
    run,
    series_summary,
)
from .worker import Worker, assign_speed_classes

__version__ = "0.1.0"
