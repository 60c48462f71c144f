"""Weight-sharing supernet training with path and data importance sampling."""

from .nn_core import Batch, OptimizerState, backward, cosine_lr, forward, sgd_step
from .search_space import CellSpec, OpKind, enumerate_paths, format_path, parse_path
from .supernet import Supernet, build_supernet, inherit_weights, path_params
from .trainer import SearchConfig, SupernetTrainer, TrainConfig, train_supernet

__version__ = "0.1.0"
