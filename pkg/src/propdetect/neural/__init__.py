"""Encoders, task heads, masked-LM pre-training, optimizer and checkpoints."""

from .checkpoint import Checkpoint, CheckpointError, encode, init_checkpoint, load_checkpoint, save_checkpoint
from .encoder import Encoder, EncoderConfig
from .heads import CrfLayer, SiHead, TcHead, funnel_sizes
from .mlm import DEFAULT_CHECKPOINT_FRACTIONS, mask_for_mlm, pretrain_mlm
from .optim import OptimState, RAdam, optimizer_step

__all__ = [
    "Checkpoint", "CheckpointError", "CrfLayer", "DEFAULT_CHECKPOINT_FRACTIONS", "Encoder",
    "EncoderConfig", "OptimState", "RAdam", "SiHead", "TcHead", "encode", "funnel_sizes",
    "init_checkpoint", "load_checkpoint", "mask_for_mlm", "optimizer_step", "pretrain_mlm",
    "save_checkpoint",
]
