"""Topology-augmented clustering of animal vocalisations."""

from .config import DPMMConfig, PipelineConfig, load_config
from .pipeline import StageError, run

__all__ = ["DPMMConfig", "PipelineConfig", "StageError", "load_config", "run"]
__version__ = "0.1.0"
