"""Optimizers: Adam and SGD with momentum, updating parameters in place."""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, model, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.model = model
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in model.param_items()}
        self.v = {name: np.zeros_like(p) for name, p in model.param_items()}

    def step(self) -> None:
        self.t += 1
        correct1 = 1.0 - self.beta1 ** self.t
        correct2 = 1.0 - self.beta2 ** self.t
        for name, p, g in self.model.param_grad_items():
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)


class SgdMomentum:
    def __init__(self, model, lr: float = 1e-3, momentum: float = 0.9):
        self.model = model
        self.lr, self.momentum = lr, momentum
        self.vel = {name: np.zeros_like(p) for name, p in model.param_items()}

    def step(self) -> None:
        for name, p, g in self.model.param_grad_items():
            vel = self.vel[name]
            vel *= self.momentum
            vel -= self.lr * g
            p += vel


OPTIMIZERS = ("adam", "sgd-momentum")


def make_optimizer(kind: str, model, lr: float, momentum: float = 0.9):
    if kind == "adam":
        return Adam(model, lr=lr)
    if kind == "sgd-momentum":
        return SgdMomentum(model, lr=lr, momentum=momentum)
    raise ValueError(f"unknown optimizer {kind!r}; choose from {OPTIMIZERS}")
