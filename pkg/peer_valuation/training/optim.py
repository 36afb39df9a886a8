"""First-order optimizers over a ``{name: Tensor}`` parameter store."""

import numpy as np

from peer_valuation.errors import InvalidInputError
from peer_valuation.nn.tensor import Tensor


class Sgd:
    """Plain gradient descent, ``p -= lr * g``."""

    def __init__(self, lr: float = 1e-3):
        if not lr > 0:
            raise InvalidInputError(f"Learning rate must be > 0. Got {lr}")
        self.lr = lr
        self.t = 0

    def step(self, params: dict[str, Tensor]):
        self.t += 1
        for p in params.values():
            if p.grad is not None:
                p.data -= self.lr * p.grad


class Adam:
    """Adam with bias-corrected moment estimates.

    Parameters without a gradient in a step are left untouched and their
    moments are not decayed.
    """

    def __init__(
        self,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if not lr > 0:
            raise InvalidInputError(f"Learning rate must be > 0. Got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise InvalidInputError(
                f"Betas must lie in [0, 1). Got {beta1}, {beta2}"
            )
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, Tensor]):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = p.grad
            if g is None:
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (
                g * g
            )
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(config) -> Adam | Sgd:
    """Build the optimizer named by a ``TrainConfig``."""
    if config.optimizer == "sgd":
        return Sgd(config.learning_rate)
    return Adam(config.learning_rate, config.beta1, config.beta2, config.eps)
