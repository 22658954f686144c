"""Central finite-difference gradient checking against the autodiff engine."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def finite_difference_grad(fn, value: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar-valued ``fn`` at ``value``.

    ``fn`` takes a plain ndarray and returns a float; evaluation never
    touches the reverse-mode path.
    """
    value = np.asarray(value, dtype=np.float64)
    grad = np.zeros_like(value)
    flat = value.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = fn(value)
        flat[i] = old - eps
        down = fn(value)
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return grad


def check_gradients(build_loss, inputs: dict[str, np.ndarray],
                    eps: float = 1e-6, rel_tol: float = 1e-4) -> dict[str, float]:
    """Compare autodiff gradients of ``build_loss`` with finite differences.

    ``build_loss`` maps {name: Tensor} to a scalar Tensor. Returns the
    per-input relative error; raises AssertionError past ``rel_tol``.
    """
    tensors = {name: Tensor(np.array(v, dtype=np.float64), requires_grad=True)
               for name, v in inputs.items()}
    loss = build_loss(tensors)
    loss.backward()
    errors = {}
    for name, t in tensors.items():
        def forward(value, _name=name):
            local = {n: Tensor(value if n == _name else inputs[n])
                     for n in inputs}
            return build_loss(local).item()

        fd = finite_difference_grad(forward, np.array(inputs[name],
                                                      dtype=np.float64), eps)
        scale = max(np.abs(fd).max(), np.abs(t.grad).max(), 1e-8)
        rel = np.abs(fd - t.grad).max() / scale
        errors[name] = float(rel)
        if rel > rel_tol:
            raise AssertionError(
                f"gradient mismatch for '{name}': rel err {rel:.3e} > {rel_tol}")
    return errors
