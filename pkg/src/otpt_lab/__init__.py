"""Orthogonality-regularized test-time prompt tuning on a toy dual encoder."""

from .calibration import CalibrationReport, ece, fit_temperature, report, sce
from .errors import OtptLabError
from .experiment import ExperimentConfig, run_experiment, run_sweep
from .model import ClassEmbeddings, EncoderParams, PromptState, init_prompt
from .optim import AdamWConfig
from .synthdata import BENCHMARK_SPEC, DatasetSpec, generate_dataset, load_dataset, save_dataset
from .tuner import TunerConfig, run_dataset, tune_sample

__version__ = "0.1.0"

__all__ = [
    "AdamWConfig", "BENCHMARK_SPEC", "CalibrationReport", "ClassEmbeddings", "DatasetSpec", "EncoderParams",
    "ExperimentConfig", "OtptLabError", "PromptState", "TunerConfig", "ece", "fit_temperature",
    "generate_dataset", "init_prompt", "load_dataset", "report", "run_dataset", "run_experiment", "run_sweep",
    "save_dataset", "sce", "tune_sample",
]
