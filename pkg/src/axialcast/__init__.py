"""Additive axial-attention forecasts of player, team and match outcomes."""

from .axial import AxialAttention, AxialMaskSet, axial_attention, build_forecast_masks, sequential_oracle
from .model import ForecastModel, ForecastOutput, ModelConfig, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "AxialAttention", "AxialMaskSet", "ForecastModel", "ForecastOutput", "ModelConfig", "axial_attention",
    "build_forecast_masks", "load_checkpoint", "save_checkpoint", "sequential_oracle",
]
