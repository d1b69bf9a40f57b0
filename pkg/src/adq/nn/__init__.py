"""Minimal deterministic dense-tensor training engine."""

from adq.nn.arch import LayerSpec, NetworkArch
from adq.nn.checkpoint import load_checkpoint, save_checkpoint
from adq.nn.data import Dataset, load_directory, synthetic_dataset
from adq.nn.engine import (OptimConfig, TrainState, accuracy, backward,
                           forward, init_state, loss_softmax_xent,
                           optimizer_step, predict)
