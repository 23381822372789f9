"""Training and bit-exact export of small fully connected ReLU networks."""

from .data import INPUT_DIMS, DatasetUnavailable, load_dataset
from .modelio import FormatError, forward, read_model, write_model
from .train import TrainSpec, train, train_and_export

__all__ = [
    "INPUT_DIMS",
    "DatasetUnavailable",
    "FormatError",
    "TrainSpec",
    "forward",
    "load_dataset",
    "read_model",
    "train",
    "train_and_export",
    "write_model",
]
