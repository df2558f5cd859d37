from .adam import AdamState, adam_step, DEFAULT_LR
from .losses import soft_dice_loss, sum_squares_loss
from .network import Network, NetworkSpec, build_network, pad_to_factor
from .weights_io import load_weights, save_weights

__all__ = [
    "AdamState", "adam_step", "DEFAULT_LR",
    "soft_dice_loss", "sum_squares_loss",
    "Network", "NetworkSpec", "build_network", "pad_to_factor",
    "load_weights", "save_weights",
]
