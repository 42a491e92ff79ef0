"""Adam and a Poincare-ball Riemannian Adam operating on dicts of arrays."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .hyperbolic import project_to_ball, riemannian_rescale


class Adam:
    """Plain Adam, updating a ``{name: array}`` dict in place."""

    def __init__(self, params: Mapping[str, np.ndarray], lr=5e-4, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: Mapping[str, np.ndarray]) -> None:
        b1, b2 = self.betas
        self.t += 1
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, g in grads.items():
            if name not in self.m:
                continue
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[name] = params[name] - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class RiemannianAdam:
    """Adam on per-point Poincare-ball coordinates.

    Moments accumulate Euclidean gradients; the resulting step direction is
    scaled per point by the inverse metric factor and the update is projected
    back into the ball.
    """

    def __init__(self, shape, lr=1e-2, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)

    def step(self, y: np.ndarray, egrad: np.ndarray) -> np.ndarray:
        b1, b2 = self.betas
        self.t += 1
        self.m = b1 * self.m + (1.0 - b1) * egrad
        self.v = b2 * self.v + (1.0 - b2) * egrad * egrad
        direction = (self.m / (1.0 - b1**self.t)) / (
            np.sqrt(self.v / (1.0 - b2**self.t)) + self.eps
        )
        direction = riemannian_rescale(y, direction)
        return project_to_ball(y - self.lr * direction)
