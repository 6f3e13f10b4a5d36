"""Running cost of a trajectory: actuator work plus a turn-rate penalty."""
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from core.errors import ParameterError


@dataclass(frozen=True)
class CostWeights:
    k_e: float = 1.0
    k_t: float = 1.0
    eps_e: float = 1e-3
    eps_t: float = 1e-3

    def __post_init__(self):
        for name in ("k_e", "k_t", "eps_e", "eps_t"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val >= 0):
                raise ParameterError(f"{name} must be finite and >= 0, got {val}")

    def scaled(self, factor: float) -> "CostWeights":
        return CostWeights(self.k_e * factor, self.k_t * factor, self.eps_e, self.eps_t)


def smooth_abs(a, eps: float):
    """sqrt(a^2 + eps^2) - eps; exact |a| when eps is 0."""
    a = np.asarray(a, dtype=float)
    return np.sqrt(a * a + eps * eps) - eps


def smooth_abs_grad(a, eps: float):
    a = np.asarray(a, dtype=float)
    if eps == 0.0:
        return np.sign(a)
    return a / np.sqrt(a * a + eps * eps)


def cost_rate(x: np.ndarray, ctrl: np.ndarray, w: CostWeights) -> np.ndarray:
    """Cost-to-go F for batched states (..., 6) and controls (..., 2)."""
    x = np.asarray(x, dtype=float)
    ctrl = np.asarray(ctrl, dtype=float)
    u, r = x[..., 3], x[..., 5]
    X, N = ctrl[..., 0], ctrl[..., 1]
    work = smooth_abs(X * u, w.eps_e) + smooth_abs(N * r, w.eps_e)
    return w.k_e * work + w.k_t * smooth_abs(r, w.eps_t)


def cost_rate_grad(x: np.ndarray, ctrl: np.ndarray, w: CostWeights) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """F with dF/dx (B,6) and dF/dctrl (B,2)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    ctrl = np.atleast_2d(np.asarray(ctrl, dtype=float))
    u, r = x[:, 3], x[:, 5]
    X, N = ctrl[:, 0], ctrl[:, 1]
    g_xu = smooth_abs_grad(X * u, w.eps_e)
    g_nr = smooth_abs_grad(N * r, w.eps_e)
    g_r = smooth_abs_grad(r, w.eps_t)
    dx = np.zeros_like(x)
    dx[:, 3] = w.k_e * g_xu * X
    dx[:, 5] = w.k_e * g_nr * N + w.k_t * g_r
    du = np.column_stack([w.k_e * g_xu * u, w.k_e * g_nr * r])
    return cost_rate(x, ctrl, w), dx, du


def cost_to_go(s, ctrl, weights: CostWeights) -> float:
    """Scalar form for a ``vessel.State``."""
    x = np.concatenate([np.asarray(s.eta, dtype=float), np.asarray(s.nu, dtype=float)])
    return float(cost_rate(x, np.asarray(ctrl, dtype=float), weights))
