"""From-scratch numpy CNN for ASL fingerspelling letters."""
from .augment import AugmentPlan, augment_dataset
from .data import Dataset, Manifest, load_directory, make_synthetic, split
from .metrics import ConfusionMatrix, compute_metrics
from .model import Model, ModelConfig, build_model, load_weights, save_weights
from .tensor import Rng
from .train import TrainConfig, evaluate, predict, train

__version__ = "0.1.0"
