"""Autodiff tape and neural-network building blocks."""
from .layers import (AdamConfig, MlpSpec, ParamStore, ShapeMismatch, adam_step, bounded_head,
                     init_lstm, init_mlp, load_checkpoint, lstm_step, mlp_forward, save_checkpoint)
from .tape import Tape, Var

__all__ = ["AdamConfig", "MlpSpec", "ParamStore", "ShapeMismatch", "Tape", "Var", "adam_step",
           "bounded_head", "init_lstm", "init_mlp", "load_checkpoint", "lstm_step", "mlp_forward",
           "save_checkpoint"]
