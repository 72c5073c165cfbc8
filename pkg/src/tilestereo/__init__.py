"""Tile-hypothesis stereo matching on a small numpy autodiff engine."""

from .config import RunConfig, load_config
from .losses import GroundTruth, LossConfig, total_loss
from .metrics import MetricReport, bad_x, epe
from .model import ModelConfig, build_model, forward, half_channels, predict, preset

__version__ = "0.1.0"
