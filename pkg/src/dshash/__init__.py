"""Discriminative supervised hashing for cross-modal retrieval."""
from .codec import HashModel, encode, encode_batch, load_model, pack, save_model, unpack
from .errors import (
    DSHError,
    DegenerateKernelError,
    InvalidArgumentError,
    InvalidDataError,
    ModelFormatError,
    SingularSystemError,
)
from .data import PairedDataset, SplitSpec, load_dataset, split, synth_multimodal
from .kernel import KernelMap, center_features, estimate_sigma, kernel_features, sample_anchors
from .optimizer import TrainConfig, objective, train
from .retrieval import Task, average_precision, evaluate, hamming_rank, mean_ap

__version__ = "0.1.0"
