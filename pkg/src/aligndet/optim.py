"""Adam optimizer with per-group learning rates and a global-norm gradient clip."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, clip_grad_norm


class NonFiniteGradient(RuntimeError):
    """Raised when a step sees NaN/inf gradients; the step is rejected."""


class Adam:
    """Standard Adam with bias correction.

    ``groups`` maps a group name to (params, lr); distinct groups keep
    distinct learning rates (backbone vs detector heads).
    """

    def __init__(self, groups: dict[str, tuple[list[Tensor], float]],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 clip_norm: float = 0.1):
        self.groups = {name: (list(params), float(lr))
                       for name, (params, lr) in groups.items()}
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.clip_norm = clip_norm
        self.t = 0
        self._m = {}
        self._v = {}
        for name, (params, _) in self.groups.items():
            for i, p in enumerate(params):
                self._m[(name, i)] = np.zeros_like(p.data)
                self._v[(name, i)] = np.zeros_like(p.data)

    @property
    def all_params(self) -> list[Tensor]:
        out = []
        for params, _ in self.groups.values():
            out.extend(params)
        return out

    def set_lr(self, name: str, lr: float) -> None:
        params, _ = self.groups[name]
        self.groups[name] = (params, float(lr))

    def step(self) -> float:
        """Apply one update from the gradients currently on the parameters.

        Returns the pre-clip global gradient norm. Rejects the whole step if
        any gradient is non-finite.
        """
        for name, (params, _) in self.groups.items():
            for i, p in enumerate(params):
                if p.grad is not None and not np.all(np.isfinite(p.grad)):
                    raise NonFiniteGradient(
                        f"non-finite gradient in group '{name}' param {i} "
                        f"shape {p.shape}"
                    )
        norm = clip_grad_norm(self.all_params, self.clip_norm)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, (params, lr) in self.groups.items():
            for i, p in enumerate(params):
                if p.grad is None:
                    continue
                m = self._m[(name, i)]
                v = self._v[(name, i)]
                m *= b1
                m += (1.0 - b1) * p.grad
                v *= b2
                v += (1.0 - b2) * p.grad * p.grad
                m_hat = m / bc1
                v_hat = v / bc2
                p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return norm

    def zero_grad(self) -> None:
        for p in self.all_params:
            p.grad = None
