"""Target speaker extraction with enrollment speech augmentation."""
from .data import AudioSignal, MixtureExample, MixtureRecord, TseDataset, UtteranceRecord
from .model import ModelConfig, TSEModel
from .objectives import ce_loss, combined_loss, sdr_metric, si_sdr_db, si_sdr_loss, ssa_multi, ssa_single
from .training import Checkpoint, TrainConfig, Trainer, average_checkpoints, lr_schedule, run_training
from .evaluation import EvalResult, evaluate, report

__version__ = "0.1.0"
