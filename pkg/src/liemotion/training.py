"""Mini-batch training loop with resumable state."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import core
from .data.preprocess import PreparedDataset, sample_batch
from .vae import TrainingState, VaeConfig, VaeModel, train_sequence


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 3000
    batch_size: int = 16
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    seed: int = 0
    log_every: int = 10
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.iterations < 0 or self.batch_size < 1:
            raise ValueError("iterations must be >= 0 and batch_size >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def init_training(vae_cfg: VaeConfig, train_cfg: TrainConfig, dataset: PreparedDataset) -> TrainingState:
    """Fresh model and optimizer; parameter init and the data/noise stream
    both derive from ``train_cfg.seed``."""
    init_rng, run_rng = (np.random.default_rng(s) for s in
                         np.random.SeedSequence(train_cfg.seed).spawn(2))
    model = VaeModel(vae_cfg, dataset.skeleton, dataset.stats, init_rng)
    adam = core.AdamState(lr=train_cfg.lr, beta1=train_cfg.beta1, beta2=train_cfg.beta2,
                          eps=train_cfg.eps, weight_decay=train_cfg.weight_decay)
    return TrainingState(model, adam, run_rng, 0)


def train(state: TrainingState, dataset: PreparedDataset, train_cfg: TrainConfig,
          until: int | None = None,
          on_log: Callable[[dict], None] | None = None,
          on_checkpoint: Callable[[TrainingState], None] | None = None) -> TrainingState:
    """Run iterations ``state.iteration + 1 .. until`` (default: all)."""
    until = train_cfg.iterations if until is None else until
    motions = dataset.split("train")
    model = state.model
    params = model.parameters()
    length = model.config.sequence_length
    while state.iteration < until:
        joints, actions = sample_batch(motions, train_cfg.batch_size, length, state.rng)
        res = train_sequence(model, joints, actions, state.rng)
        core.adam_step(params, res.grads, state.adam)
        state.iteration += 1
        it = state.iteration
        if on_log and (it % train_cfg.log_every == 0 or it == 1 or it == until):
            on_log({"iteration": it, "loss": res.loss,
                    "reconstruction": res.reconstruction / length,
                    "kl": res.kl / length})
        if on_checkpoint and (it % train_cfg.checkpoint_every == 0 or it == until):
            on_checkpoint(state)
    return state
