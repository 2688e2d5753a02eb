"""Checkerboard blind-spot denoising with a classification-aware loss."""
from .checkerboard import Parity, fuse, make_blind, parity_mask
from .image import DatasetManifest, Roi, load_image, save_image
from .losses import LossWeights, composite_loss
from .metrics import evaluate_image
from .nn import NetConfig
from .trainer import DualModel, TrainConfig, denoise, train_dual

__version__ = "0.1.0"
