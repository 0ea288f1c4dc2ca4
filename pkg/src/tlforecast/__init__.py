"""Next-day pollutant forecasting with stacked LSTMs and pre-trained initialisation."""

from .dataset import (
    ScalerParams,
    SplitSpec,
    SynthConfig,
    TimeSeriesDataset,
    WindowedSample,
    chronological_split,
    fit_scaler,
    impute,
    inverse_scale,
    load_csv,
    make_windows,
    merge,
    scale,
    synthesize,
)
from .experiment import ComparisonRow, ScenarioConfig, Task, highlight_best, run_scenario
from .lstm import Network, NetworkArchitecture, backward, cell_step, finite_difference_gradients, forward, init_network
from .numkernel import SeededRng
from .training import TrainConfig, TrainingReport, adam_step, mse, train
from .transfer import NetworkCheckpoint, TransferSpec, adapt_for_target, load_checkpoint, run_transfer_task, save_checkpoint

__version__ = "0.1.0"
