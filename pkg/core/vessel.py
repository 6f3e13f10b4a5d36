"""3-DOF surface vessel model: kinematics, dynamics and fixed-step integrators.

State vectors are laid out as ``[x, y, psi, u, v, r]`` and controls as
``[X, N]``. The array functions accept a leading batch dimension so the
transcription can integrate all shooting intervals at once.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from core.errors import ParameterError, VesselConfigError

logger = logging.getLogger(__name__)

DEFAULT_VESSEL_FILE = Path(__file__).resolve().parent.parent / "assets" / "vessel_default.txt"

MASS_KEYS = ("m11", "m12", "m13", "m21", "m22", "m23", "m31", "m32", "m33")
BOUND_KEYS = ("x_min", "x_max", "n_min", "n_max",
              "u_min", "u_max", "v_min", "v_max", "r_min", "r_max")


@dataclass(frozen=True, eq=False)
class VesselParams:
    """Inertia, damping and actuator/velocity limits of one vessel.

    ``D(nu) nu = D_lin nu + d_quad * |nu| * nu``. ``C(nu)`` is generated from
    ``M`` in skew-symmetric form, so there are no separate Coriolis
    coefficients.
    """
    M: np.ndarray
    D_lin: np.ndarray
    d_quad: np.ndarray
    ctrl_lb: np.ndarray = field(default_factory=lambda: np.array([-np.inf, -np.inf]))
    ctrl_ub: np.ndarray = field(default_factory=lambda: np.array([np.inf, np.inf]))
    nu_lb: np.ndarray = field(default_factory=lambda: np.full(3, -np.inf))
    nu_ub: np.ndarray = field(default_factory=lambda: np.full(3, np.inf))
    name: str = "custom"

    def __post_init__(self):
        shapes = {"M": (3, 3), "D_lin": (3, 3), "d_quad": (3,),
                  "ctrl_lb": (2,), "ctrl_ub": (2,), "nu_lb": (3,), "nu_ub": (3,)}
        for key, shape in shapes.items():
            arr = np.array(getattr(self, key), dtype=float)
            if arr.shape != shape:
                raise VesselConfigError(f"{key} must have shape {shape}, got {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, key, arr)
        M = self.M
        if not np.isfinite(M).all() or not np.isfinite(self.D_lin).all() or not np.isfinite(self.d_quad).all():
            raise VesselConfigError("Inertia and damping entries must be finite")
        if not np.allclose(M, M.T, rtol=1e-12, atol=1e-9):
            raise VesselConfigError("Inertia matrix M must be symmetric")
        try:
            np.linalg.cholesky(M)
        except np.linalg.LinAlgError:
            raise VesselConfigError("Inertia matrix M must be positive definite") from None
        sym = 0.5 * (self.D_lin + self.D_lin.T)
        if np.linalg.eigvalsh(sym).min() < -1e-9 * max(1.0, np.abs(sym).max()):
            raise VesselConfigError("Linear damping D_lin must be positive semi-definite")
        if np.any(self.d_quad < 0):
            raise VesselConfigError("Quadratic damping coefficients must be >= 0")
        for lo, hi, label in ((self.ctrl_lb, self.ctrl_ub, "control"), (self.nu_lb, self.nu_ub, "velocity")):
            if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo >= hi):
                raise VesselConfigError(f"{label} bounds must satisfy min < max")

    @cached_property
    def M_inv(self) -> np.ndarray:
        inv = np.linalg.inv(self.M)
        inv.setflags(write=False)
        return inv

    @property
    def state_lb(self) -> np.ndarray:
        return np.concatenate([np.full(3, -np.inf), self.nu_lb])

    @property
    def state_ub(self) -> np.ndarray:
        return np.concatenate([np.full(3, np.inf), self.nu_ub])

    @property
    def turn_rate_max(self) -> float:
        return float(min(abs(self.nu_lb[2]), abs(self.nu_ub[2])))

    def to_dict(self) -> Dict[str, object]:
        d = {k: float(v) for k, v in zip(MASS_KEYS, self.M.ravel())}
        d["d_lin"] = self.D_lin.ravel().tolist()
        d["d_quad"] = self.d_quad.tolist()
        bounds = (self.ctrl_lb[0], self.ctrl_ub[0], self.ctrl_lb[1], self.ctrl_ub[1],
                  self.nu_lb[0], self.nu_ub[0], self.nu_lb[1], self.nu_ub[1], self.nu_lb[2], self.nu_ub[2])
        d.update({k: float(v) for k, v in zip(BOUND_KEYS, bounds)})
        return d

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "VesselParams":
        return load_vessel_file(path)

    @classmethod
    def default(cls) -> "VesselParams":
        return load_vessel_file(DEFAULT_VESSEL_FILE)


@dataclass(frozen=True, eq=False)
class State:
    eta: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        eta = np.array(self.eta, dtype=float).reshape(3)
        nu = np.array(self.nu, dtype=float).reshape(3)
        if not (np.isfinite(eta).all() and np.isfinite(nu).all()):
            raise ParameterError("State entries must be finite")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "nu", nu)

    @classmethod
    def from_vector(cls, x) -> "State":
        x = np.asarray(x, dtype=float)
        return cls(x[:3], x[3:6])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.eta, self.nu])


def load_vessel_file(path: Union[str, Path]) -> VesselParams:
    """Parse the flat ``key value...`` vessel file.

    Keys: m11..m33, ``d_lin`` (9 numbers, row-major), ``d_quad`` (3 numbers)
    and the bounds x_min/x_max, n_min/n_max, u_min/u_max, v_min/v_max,
    r_min/r_max. Missing bounds are left unbounded.
    """
    path = Path(path)
    if not path.exists():
        raise VesselConfigError(f"Vessel file not found: {path}")
    values: Dict[str, Tuple[float, ...]] = {}
    for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *rest = line.replace("=", " ").split()
        key = key.lower()
        try:
            nums = tuple(float(t) for t in rest)
        except ValueError:
            raise VesselConfigError(f"{path}:{line_no}: non-numeric value for '{key}'") from None
        expected = 9 if key == "d_lin" else 3 if key == "d_quad" else 1
        if key not in MASS_KEYS and key not in BOUND_KEYS and key not in ("d_lin", "d_quad"):
            raise VesselConfigError(f"{path}:{line_no}: unknown key '{key}'")
        if len(nums) != expected:
            raise VesselConfigError(f"{path}:{line_no}: '{key}' expects {expected} value(s), got {len(nums)}")
        if key in values:
            raise VesselConfigError(f"{path}:{line_no}: duplicate key '{key}'")
        values[key] = nums
    missing = [k for k in MASS_KEYS + ("d_lin", "d_quad") if k not in values]
    # off-diagonal inertia may be omitted
    missing = [k for k in missing if k not in ("m12", "m13", "m21", "m23", "m31", "m32")]
    if missing:
        raise VesselConfigError(f"{path}: missing key(s) {', '.join(missing)}")
    M = np.array([values.get(k, (0.0,))[0] for k in MASS_KEYS]).reshape(3, 3)

    def bound(key, default):
        return values[key][0] if key in values else default

    params = VesselParams(
        M=M,
        D_lin=np.array(values["d_lin"]).reshape(3, 3),
        d_quad=np.array(values["d_quad"]),
        ctrl_lb=np.array([bound("x_min", -np.inf), bound("n_min", -np.inf)]),
        ctrl_ub=np.array([bound("x_max", np.inf), bound("n_max", np.inf)]),
        nu_lb=np.array([bound("u_min", -np.inf), bound("v_min", -np.inf), bound("r_min", -np.inf)]),
        nu_ub=np.array([bound("u_max", np.inf), bound("v_max", np.inf), bound("r_max", np.inf)]),
        name=path.stem,
    )
    logger.debug("Loaded vessel parameters from %s", path)
    return params


def write_vessel_file(params: VesselParams, path: Union[str, Path]) -> Path:
    path = Path(path)
    d = params.to_dict()
    lines = [f"# vessel parameters: {params.name}"]
    for k in MASS_KEYS:
        lines.append(f"{k} {d[k]!r}")
    lines.append("d_lin " + " ".join(repr(v) for v in d["d_lin"]))
    lines.append("d_quad " + " ".join(repr(v) for v in d["d_quad"]))
    for k in BOUND_KEYS:
        if math.isfinite(d[k]):
            lines.append(f"{k} {d[k]!r}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

def rotation(psi: float) -> np.ndarray:
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def coriolis(nu, p: VesselParams) -> np.ndarray:
    u, v, r = np.asarray(nu, dtype=float)
    M = p.M
    c1 = M[1, 0] * u + M[1, 1] * v + M[1, 2] * r
    c2 = M[0, 0] * u + M[0, 1] * v + M[0, 2] * r
    return np.array([[0.0, 0.0, -c1], [0.0, 0.0, c2], [c1, -c2, 0.0]])


def coriolis_force(nu, p: VesselParams) -> np.ndarray:
    """C(nu) nu for ``nu`` of shape (..., 3)."""
    nu = np.asarray(nu, dtype=float)
    u, v, r = nu[..., 0], nu[..., 1], nu[..., 2]
    M = p.M
    c1 = M[1, 0] * u + M[1, 1] * v + M[1, 2] * r
    c2 = M[0, 0] * u + M[0, 1] * v + M[0, 2] * r
    return np.stack([-c1 * r, c2 * r, c1 * u - c2 * v], axis=-1)


def damping_force(nu, p: VesselParams) -> np.ndarray:
    """D(nu) nu = D_lin nu + d_quad |nu| nu for ``nu`` of shape (..., 3)."""
    nu = np.asarray(nu, dtype=float)
    return nu @ p.D_lin.T + p.d_quad * np.abs(nu) * nu


def state_derivative(x: np.ndarray, ctrl: np.ndarray, p: VesselParams) -> np.ndarray:
    """Batched right-hand side, ``x`` of shape (..., 6) and ``ctrl`` (..., 2)."""
    x = np.asarray(x, dtype=float)
    ctrl = np.asarray(ctrl, dtype=float)
    psi, u, v, r = x[..., 2], x[..., 3], x[..., 4], x[..., 5]
    c, s = np.cos(psi), np.sin(psi)
    nu = x[..., 3:6]
    cnu = coriolis_force(nu, p)
    dnu = damping_force(nu, p)
    tau = np.stack([ctrl[..., 0], np.zeros_like(ctrl[..., 0]), ctrl[..., 1]], axis=-1)
    nu_dot = (tau - cnu - dnu) @ p.M_inv.T
    eta_dot = np.stack([u * c - v * s, u * s + v * c, r], axis=-1)
    return np.concatenate([eta_dot, nu_dot], axis=-1)


def state_jacobians(x: np.ndarray, ctrl: np.ndarray, p: VesselParams):
    """Right-hand side plus its Jacobians: (f (B,6), A (B,6,6), B (B,6,2))."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    ctrl = np.atleast_2d(np.asarray(ctrl, dtype=float))
    f = state_derivative(x, ctrl, p)
    n = len(x)
    psi, u, v, r = x[:, 2], x[:, 3], x[:, 4], x[:, 5]
    M = p.M
    c, s = np.cos(psi), np.sin(psi)
    c1 = M[1, 0] * u + M[1, 1] * v + M[1, 2] * r
    c2 = M[0, 0] * u + M[0, 1] * v + M[0, 2] * r

    A = np.zeros((n, 6, 6))
    A[:, 0, 2] = -u * s - v * c
    A[:, 0, 3] = c
    A[:, 0, 4] = -s
    A[:, 1, 2] = u * c - v * s
    A[:, 1, 3] = s
    A[:, 1, 4] = c
    A[:, 2, 5] = 1.0

    jc = np.empty((n, 3, 3))
    jc[:, 0, 0] = -M[1, 0] * r
    jc[:, 0, 1] = -M[1, 1] * r
    jc[:, 0, 2] = -(M[1, 2] * r + c1)
    jc[:, 1, 0] = M[0, 0] * r
    jc[:, 1, 1] = M[0, 1] * r
    jc[:, 1, 2] = M[0, 2] * r + c2
    jc[:, 2, 0] = M[1, 0] * u + c1 - M[0, 0] * v
    jc[:, 2, 1] = M[1, 1] * u - c2 - M[0, 1] * v
    jc[:, 2, 2] = M[1, 2] * u - M[0, 2] * v
    jd = p.D_lin[None, :, :] + np.einsum("ij,bj->bij", np.eye(3), 2.0 * p.d_quad * np.abs(x[:, 3:6]))
    A[:, 3:, 3:] = -np.einsum("ij,bjk->bik", p.M_inv, jc + jd)

    B = np.zeros((n, 6, 2))
    B[:, 3:, :] = p.M_inv[:, [0, 2]]
    return f, A, B


def dynamics(s: State, ctrl, p: VesselParams) -> Tuple[np.ndarray, np.ndarray]:
    xdot = state_derivative(s.as_vector(), np.asarray(ctrl, dtype=float), p)
    return xdot[:3], xdot[3:]


def kinetic_energy(nu, p: VesselParams) -> np.ndarray:
    nu = np.asarray(nu, dtype=float)
    return 0.5 * np.einsum("...i,ij,...j->...", nu, p.M, nu)


# ---------------------------------------------------------------------------
# Integrators (zero-order hold on the control)
# ---------------------------------------------------------------------------

def _check_dt(dt: float):
    if not (math.isfinite(dt) and dt > 0):
        raise ParameterError(f"dt must be > 0, got {dt}")


def rk4_array(x, ctrl, p: VesselParams, dt: float, n_substeps: int = 1) -> np.ndarray:
    _check_dt(dt)
    x = np.asarray(x, dtype=float)
    h = dt / n_substeps
    for _ in range(n_substeps):
        k1 = state_derivative(x, ctrl, p)
        k2 = state_derivative(x + 0.5 * h * k1, ctrl, p)
        k3 = state_derivative(x + 0.5 * h * k2, ctrl, p)
        k4 = state_derivative(x + h * k3, ctrl, p)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def heun_array(x, ctrl, p: VesselParams, dt: float, n_substeps: int = 1) -> np.ndarray:
    _check_dt(dt)
    x = np.asarray(x, dtype=float)
    h = dt / n_substeps
    for _ in range(n_substeps):
        k1 = state_derivative(x, ctrl, p)
        k2 = state_derivative(x + h * k1, ctrl, p)
        x = x + 0.5 * h * (k1 + k2)
    return x


def rk4_with_sensitivity(x, ctrl, p: VesselParams, dt: float, n_substeps: int = 1):
    """RK4 over ``dt`` plus d(x_end)/d(x0) (B,6,6) and d(x_end)/d(ctrl) (B,6,2)."""
    _check_dt(dt)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    ctrl = np.atleast_2d(np.asarray(ctrl, dtype=float))
    n = len(x)
    h = dt / n_substeps
    # Z = d x / d [x0, ctrl]
    Z = np.zeros((n, 6, 8))
    Z[:, :, :6] = np.eye(6)
    E = np.zeros((2, 8))
    E[:, 6:] = np.eye(2)
    for _ in range(n_substeps):
        k1, A1, B1 = state_jacobians(x, ctrl, p)
        dk1 = A1 @ Z + B1 @ E
        k2, A2, B2 = state_jacobians(x + 0.5 * h * k1, ctrl, p)
        dk2 = A2 @ (Z + 0.5 * h * dk1) + B2 @ E
        k3, A3, B3 = state_jacobians(x + 0.5 * h * k2, ctrl, p)
        dk3 = A3 @ (Z + 0.5 * h * dk2) + B3 @ E
        k4, A4, B4 = state_jacobians(x + h * k3, ctrl, p)
        dk4 = A4 @ (Z + h * dk3) + B4 @ E
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        Z = Z + (h / 6.0) * (dk1 + 2.0 * dk2 + 2.0 * dk3 + dk4)
    return x, Z[:, :, :6], Z[:, :, 6:]


def rk4_step(s: State, ctrl, p: VesselParams, dt: float) -> State:
    return State.from_vector(rk4_array(s.as_vector(), np.asarray(ctrl, dtype=float), p, dt))


def heun_step(s: State, ctrl, p: VesselParams, dt: float) -> State:
    return State.from_vector(heun_array(s.as_vector(), np.asarray(ctrl, dtype=float), p, dt))


def simulate(s0: State, controls, p: VesselParams, dt: float, method: str = "rk4", n_substeps: int = 1) -> np.ndarray:
    """Roll out piecewise-constant controls; returns the (K+1, 6) state history."""
    step = {"rk4": rk4_array, "heun": heun_array}.get(method)
    if step is None:
        raise ParameterError(f"Unknown integrator '{method}'")
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    out = np.empty((len(controls) + 1, 6))
    out[0] = s0.as_vector()
    for k, u in enumerate(controls):
        out[k + 1] = step(out[k], u, p, dt, n_substeps)
    return out
