from __future__ import annotations
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from ..errors import BackendError, NonFiniteGradientError
from .base import DECAY_ALL, DECAY_GROUPS, DECAY_LAYER_NORM, DECAY_NON_LAYER_NORM

LAYER_NORM_GROUP = "layer_norm"


@dataclass
class AdamW:
    """Adam with decoupled weight decay, in place on numpy parameter dicts.

    `groups` maps parameter name -> group name; weight decay reaches only the
    groups selected by `decay_group` (the layer-norm group by default).
    """
    groups: Dict[str, str]
    lr: float = 1e-5
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    decay_group: str = DECAY_LAYER_NORM
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.decay_group not in DECAY_GROUPS:
            raise BackendError(f"unknown decay_group {self.decay_group!r}")
        if self.lr < 0:
            raise BackendError(f"learning rate must be >= 0, got {self.lr}")

    def decays(self, name: str) -> bool:
        group = self.groups[name]
        if self.decay_group == DECAY_ALL:
            return True
        if self.decay_group == DECAY_LAYER_NORM:
            return group == LAYER_NORM_GROUP
        if self.decay_group == DECAY_NON_LAYER_NORM:
            return group != LAYER_NORM_GROUP
        return False

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(self.groups.get(name, name))

        self.t += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if self.weight_decay and self.decays(name):
                p *= 1.0 - self.lr * self.weight_decay
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state(self) -> Dict[str, object]:
        return {
            "t": self.t,
            "m": {k: a.copy() for k, a in self.m.items()},
            "v": {k: a.copy() for k, a in self.v.items()},
        }

    def load(self, state: Dict[str, object]) -> None:
        self.t = int(state["t"])
        self.m = {k: np.array(a) for k, a in state["m"].items()}
        self.v = {k: np.array(a) for k, a in state["v"].items()}
