"""Training loop, metrics, significance testing, grids and report tables."""
from .config import FULL_RUN, RunConfig, dump_run_config, load_run_config, parse_run_config
from .grid import grid_run
from .gradsuite import check_training_gradients, tiny_case
from .lmprep import DESK_LM, prepare_lm
from .metrics import bleu, edit_distance, tokens_per_second, wer
from .report import emit_report
from .significance import METRICS, bootstrap_significance, significant
from .train import (
    AdapterSystem,
    Example,
    RunReport,
    TrainResult,
    evaluate,
    evaluate_system,
    load_trained_system,
    open_system,
    train_adapter,
    train_system,
)

__all__ = [
    "DESK_LM", "METRICS", "FULL_RUN", "AdapterSystem", "Example", "RunConfig", "RunReport", "TrainResult",
    "bleu", "bootstrap_significance", "check_training_gradients", "dump_run_config", "edit_distance",
    "emit_report", "evaluate", "evaluate_system", "grid_run", "load_run_config", "load_trained_system",
    "open_system", "parse_run_config", "prepare_lm", "significant", "tiny_case", "tokens_per_second",
    "train_adapter", "train_system", "wer",
]
