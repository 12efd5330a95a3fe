"""Double-well potential and finite-rank noise operator.

The potential is any nonnegative C^2 function with a curvature lower bound
-c1 and quadratic curvature growth c2. The noise operator maps a vector of
Brownian increments to a field increment through K smooth cosine modes;
multiplicative noise modulates the modes by a bounded shape function of the
state and is projected to zero mean mode by mode, which is what conserves
mass along stochastic trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, ShapeError
from .grid import Field, Grid

__all__ = [
    "Potential",
    "double_well",
    "quadratic_potential",
    "zero_potential",
    "psi_eval",
    "TruncationLevel",
    "NO_TRUNCATION",
    "psi_second_truncated",
    "validate_assumptions",
    "AssumptionReport",
    "NoiseModel",
    "additive_noise",
    "multiplicative_noise",
    "default_mode_indices",
    "apply_B",
    "apply_DB",
    "apply_DB_adjoint",
]


@dataclass(frozen=True)
class Potential:
    """Scalar potential with first and second derivatives and growth constants.

    ``c1`` bounds the second derivative from below (psi'' >= -c1) and ``c2``
    controls quadratic growth; both are declared, then checked by
    :func:`validate_assumptions`.
    """

    name: str
    psi: Callable[[np.ndarray], np.ndarray]
    psi_prime: Callable[[np.ndarray], np.ndarray]
    psi_second: Callable[[np.ndarray], np.ndarray]
    c1: float
    c2: float

    def __post_init__(self):
        if self.c1 < 0:
            raise DomainError(f"c1 must be nonnegative, got {self.c1}")
        if self.c2 <= 0:
            raise DomainError(f"c2 must be positive, got {self.c2}")


def double_well(c1: float = 1.0, c2: float = 3.0) -> Potential:
    """Classical double well psi(r) = (r^2 - 1)^2 / 4 with minima at +-1."""
    return Potential(
        name="double_well",
        psi=lambda r: 0.25 * (np.asarray(r, dtype=float) ** 2 - 1.0) ** 2,
        psi_prime=lambda r: np.asarray(r, dtype=float) ** 3 - np.asarray(r, dtype=float),
        psi_second=lambda r: 3.0 * np.asarray(r, dtype=float) ** 2 - 1.0,
        c1=c1,
        c2=c2,
    )


def quadratic_potential(curvature: float = 1.0) -> Potential:
    """Convex quadratic psi(r) = a r^2 / 2; makes the state dynamics linear."""
    a = float(curvature)
    if a < 0:
        raise DomainError("quadratic potential needs nonnegative curvature")
    c2 = max(1.0, a)
    return Potential(
        name="quadratic",
        psi=lambda r: 0.5 * a * np.asarray(r, dtype=float) ** 2,
        psi_prime=lambda r: a * np.asarray(r, dtype=float),
        psi_second=lambda r: np.full_like(np.asarray(r, dtype=float), a),
        c1=0.0,
        c2=c2,
    )


def zero_potential() -> Potential:
    """psi identically zero; reduces the dynamics to the bi-Laplacian flow."""
    return Potential(
        name="zero",
        psi=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
        psi_prime=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
        psi_second=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
        c1=0.0,
        c2=1.0,
    )


def psi_eval(pot: Potential, r, order: int = 0):
    """Evaluate psi (order 0), psi' (order 1) or psi'' (order 2)."""
    if order == 0:
        out = pot.psi(r)
    elif order == 1:
        out = pot.psi_prime(r)
    elif order == 2:
        out = pot.psi_second(r)
    else:
        raise DomainError(f"derivative order must be 0, 1 or 2, got {order}")
    if np.isscalar(r):
        return float(out)
    return np.asarray(out, dtype=float)


@dataclass(frozen=True)
class TruncationLevel:
    """Symmetric clamp level for the potential curvature; +inf disables it."""

    level: float

    def __post_init__(self):
        if not (self.level > 0):
            raise DomainError(f"truncation level must be positive, got {self.level}")

    @classmethod
    def coerce(cls, value) -> "TruncationLevel":
        if isinstance(value, TruncationLevel):
            return value
        return cls(float(value))

    @property
    def finite(self) -> bool:
        return math.isfinite(self.level)

    def clamp(self, values):
        # np.clip with infinite bounds returns the input values bit-for-bit.
        return np.clip(values, -self.level, self.level)


NO_TRUNCATION = TruncationLevel(math.inf)


def psi_second_truncated(pot: Potential, r, n) -> np.ndarray:
    """Curvature clamped to [-n, n]; identical to psi'' wherever |psi''| <= n."""
    n = TruncationLevel.coerce(n)
    out = n.clamp(pot.psi_second(np.asarray(r, dtype=float)))
    if np.isscalar(r):
        return float(out)
    return out


@dataclass(frozen=True)
class AssumptionReport:
    """Outcome of sampling the structural bounds of a potential."""

    ok: bool
    worst_margins: dict
    violations: tuple = ()

    def __bool__(self):
        return self.ok


def validate_assumptions(pot: Potential, sample_range=(-10.0, 10.0),
                         nsamples: int = 4001) -> AssumptionReport:
    """Sample the three structural inequalities of the potential on a range.

    Checks psi >= 0, psi'' >= -c1, |psi''| <= c2 (1 + r^2) and
    |psi'| <= c2 (1 + psi). Margins are reported as the minimum slack; the
    first violated inequality (with a witness point) makes the report fail.
    """
    if nsamples < 2:
        raise DomainError("need at least two sample points")
    lo, hi = map(float, sample_range)
    r = np.linspace(lo, hi, nsamples)
    psi = np.asarray(pot.psi(r), dtype=float)
    dpsi = np.asarray(pot.psi_prime(r), dtype=float)
    ddpsi = np.asarray(pot.psi_second(r), dtype=float)

    margins = {
        "psi_nonnegative": psi,
        "curvature_lower_bound": ddpsi + pot.c1,
        "curvature_growth": pot.c2 * (1.0 + r**2) - np.abs(ddpsi),
        "gradient_growth": pot.c2 * (1.0 + psi) - np.abs(dpsi),
    }
    worst = {}
    violations = []
    for name, m in margins.items():
        i = int(np.argmin(m))
        worst[name] = {"margin": float(m[i]), "at": float(r[i])}
        if m[i] < 0:
            violations.append((name, float(r[i]), float(m[i])))
    return AssumptionReport(ok=not violations, worst_margins=worst,
                            violations=tuple(violations))


# ---------------------------------------------------------------------------
# Noise operator


_SHAPES = {
    "tanh": (np.tanh, lambda r: 1.0 / np.cosh(r) ** 2, 1.0, 1.0),
    # sup|rho| is unbounded for the linear shape; the growth certificate
    # falls back to the Lipschitz constant, which is what the bounds use.
    "linear": (lambda r: r, lambda r: np.ones_like(r), math.inf, 1.0),
}


def default_mode_indices(ndims: int, nmodes: int) -> list:
    """Lowest nonconstant cosine modes, ordered by total wavenumber."""
    if ndims == 1:
        return [(m,) for m in range(1, nmodes + 1)]
    pairs = []
    level = 1
    while len(pairs) < nmodes:
        for mx in range(level + 1):
            my = level - mx
            pairs.append((mx, my))
            if len(pairs) == nmodes:
                break
        level += 1
    return pairs


@dataclass(frozen=True)
class NoiseModel:
    """Finite-rank noise operator over K independent scalar Brownian motions.

    Each mode is a smooth cosine profile ``g_k`` with amplitude ``sigma_k``.
    Additive noise adds ``sum_k sigma_k g_k dW_k``; multiplicative noise
    modulates the modes by a bounded shape of the state and removes the grid
    mean mode by mode. ``l_b`` is a conservative Lipschitz/growth certificate
    computed from the mode profiles at construction.
    """

    grid: Grid
    kind: str
    sigmas: np.ndarray
    modes: np.ndarray            # (K, *grid.shape)
    mode_indices: tuple
    shape_name: str = "tanh"
    l_b: float = 0.0

    @property
    def nmodes(self) -> int:
        return int(self.sigmas.shape[0])

    @property
    def is_multiplicative(self) -> bool:
        return self.kind == "multiplicative"

    def rho(self, values):
        return _SHAPES[self.shape_name][0](values)

    def rho_prime(self, values):
        return _SHAPES[self.shape_name][1](values)


def _build_modes(grid: Grid, indices) -> np.ndarray:
    mats = [grid.cosine_mode(ix) for ix in indices]
    if mats:
        return np.stack(mats)
    return np.zeros((0,) + grid.shape)


def _mode_sup_norms(grid: Grid, indices):
    sup = []
    grad_sup = []
    for ix in indices:
        ix = tuple(int(i) for i in np.atleast_1d(ix))
        sup.append(1.0)
        grad_sup.append(
            math.sqrt(sum((m * math.pi / L) ** 2 for m, L in zip(ix, grid.lengths)))
        )
    return np.asarray(sup), np.asarray(grad_sup)


def _certificate(grid: Grid, sigmas, indices, shape_name: str) -> float:
    if len(sigmas) == 0:
        return 0.0
    sup, grad_sup = _mode_sup_norms(grid, indices)
    _, _, rho_sup, rho_lip = _SHAPES[shape_name]
    factor = rho_lip if not math.isfinite(rho_sup) else max(rho_sup, rho_lip)
    w = (sup + grad_sup) * factor
    return float(np.sqrt(np.sum(np.asarray(sigmas) ** 2 * w**2)))


def _normalize_indices(grid: Grid, mode_indices, nmodes):
    if mode_indices is None:
        mode_indices = default_mode_indices(grid.ndims, nmodes)
    out = []
    for ix in mode_indices:
        ix = tuple(int(i) for i in np.atleast_1d(ix))
        if len(ix) != grid.ndims:
            raise ShapeError(f"mode index {ix} does not match grid dimension")
        out.append(ix)
    return tuple(out)


def additive_noise(grid: Grid, sigmas, mode_indices=None,
                   allow_nonzero_mean_modes: bool = False) -> NoiseModel:
    """State-independent noise on smooth cosine modes.

    Modes must be mean-free (all indices nonzero) unless explicitly
    overridden; a constant mode injects mass and is only useful as a
    negative control for the conservation checks.
    """
    sigmas = np.atleast_1d(np.asarray(sigmas, dtype=float))
    if np.any(sigmas < 0):
        raise DomainError("noise amplitudes must be nonnegative")
    indices = _normalize_indices(grid, mode_indices, len(sigmas))
    if len(indices) != len(sigmas):
        raise ShapeError("number of mode indices must match number of amplitudes")
    if not allow_nonzero_mean_modes:
        for ix in indices:
            if all(m == 0 for m in ix):
                raise ConfigurationError(
                    "constant noise mode breaks mass conservation; "
                    "pass allow_nonzero_mean_modes=True to force it"
                )
    return NoiseModel(
        grid=grid, kind="additive", sigmas=sigmas,
        modes=_build_modes(grid, indices), mode_indices=indices,
        shape_name="tanh", l_b=_certificate(grid, sigmas, indices, "tanh"),
    )


def multiplicative_noise(grid: Grid, sigmas, mode_indices=None, shape: str = "tanh",
                         allow_linear_shape: bool = False) -> NoiseModel:
    """State-modulated noise, projected to zero mean mode by mode."""
    sigmas = np.atleast_1d(np.asarray(sigmas, dtype=float))
    if np.any(sigmas < 0):
        raise DomainError("noise amplitudes must be nonnegative")
    if shape not in _SHAPES:
        raise ConfigurationError(f"unknown multiplicative shape {shape!r}")
    if shape == "linear" and not allow_linear_shape:
        raise ConfigurationError(
            "linear multiplicative shape is unbounded; "
            "pass allow_linear_shape=True to use it anyway"
        )
    indices = _normalize_indices(grid, mode_indices, len(sigmas))
    if len(indices) != len(sigmas):
        raise ShapeError("number of mode indices must match number of amplitudes")
    return NoiseModel(
        grid=grid, kind="multiplicative", sigmas=sigmas,
        modes=_build_modes(grid, indices), mode_indices=indices,
        shape_name=shape, l_b=_certificate(grid, sigmas, indices, shape),
    )


def no_noise(grid: Grid) -> NoiseModel:
    """K = 0: the deterministic equation."""
    return NoiseModel(grid=grid, kind="additive", sigmas=np.zeros(0),
                      modes=np.zeros((0,) + grid.shape), mode_indices=(),
                      shape_name="tanh", l_b=0.0)


def _check_dw(nm: NoiseModel, dw) -> np.ndarray:
    dw = np.atleast_1d(np.asarray(dw, dtype=float))
    if dw.shape != (nm.nmodes,):
        raise ShapeError(f"expected {nm.nmodes} increments, got shape {dw.shape}")
    return dw


def b_increment_values(nm: NoiseModel, t: float, y: np.ndarray,
                       dw: np.ndarray) -> np.ndarray:
    """Array-level noise increment; the hot path used by the solvers."""
    if nm.nmodes == 0:
        return np.zeros(nm.grid.shape)
    if not nm.is_multiplicative:
        return np.tensordot(nm.sigmas * dw, nm.modes, axes=(0, 0))
    rho_y = nm.rho(y)
    out = np.zeros(nm.grid.shape)
    for k in range(nm.nmodes):
        col = nm.modes[k] * rho_y
        col = col - np.mean(col)
        out += nm.sigmas[k] * dw[k] * col
    return out


def db_increment_values(nm: NoiseModel, t: float, y: np.ndarray, z: np.ndarray,
                        dw: np.ndarray) -> np.ndarray:
    """Derivative of the noise operator in the state, applied to z."""
    if nm.nmodes == 0 or not nm.is_multiplicative:
        return np.zeros(nm.grid.shape)
    rz = nm.rho_prime(y) * z
    out = np.zeros(nm.grid.shape)
    for k in range(nm.nmodes):
        col = nm.modes[k] * rz
        col = col - np.mean(col)
        out += nm.sigmas[k] * dw[k] * col
    return out


def db_adjoint_values(nm: NoiseModel, t: float, y: np.ndarray,
                      q_columns: np.ndarray) -> np.ndarray:
    """Adjoint of the noise derivative for per-mode fields ``q_columns``.

    Satisfies the exact discrete identity
    sum_k <DB(y)[z] e_k, q_k>_H = <z, DB*(y) q>_H.
    """
    if nm.nmodes == 0 or not nm.is_multiplicative:
        return np.zeros(nm.grid.shape)
    acc = np.zeros(nm.grid.shape)
    for k in range(nm.nmodes):
        qk = q_columns[k]
        acc += nm.sigmas[k] * nm.modes[k] * (qk - np.mean(qk))
    return nm.rho_prime(y) * acc


def db_adjoint_scaled_values(nm: NoiseModel, t: float, y: np.ndarray,
                             p: np.ndarray, dw: np.ndarray) -> np.ndarray:
    """Adjoint of z -> DB(y)[z] dW for a single field p: the q_k are p dw_k."""
    if nm.nmodes == 0 or not nm.is_multiplicative:
        return np.zeros(nm.grid.shape)
    p0 = p - np.mean(p)
    weights = np.tensordot(nm.sigmas * dw, nm.modes, axes=(0, 0))
    return nm.rho_prime(y) * weights * p0


def apply_B(nm: NoiseModel, t: float, y: Field, dw) -> Field:
    """Noise increment for Brownian increments ``dw`` (length K)."""
    if y.grid != nm.grid:
        raise ConfigurationError("state field lives on a different grid")
    dw = _check_dw(nm, dw)
    return Field(nm.grid, b_increment_values(nm, t, y.values, dw))


def apply_DB(nm: NoiseModel, t: float, y: Field, z: Field, dw) -> Field:
    """Directional derivative of the noise operator at y along z."""
    if y.grid != nm.grid or z.grid != nm.grid:
        raise ConfigurationError("fields live on a different grid")
    dw = _check_dw(nm, dw)
    return Field(nm.grid, db_increment_values(nm, t, y.values, z.values, dw))


def apply_DB_adjoint(nm: NoiseModel, t: float, y: Field, q: Sequence[Field]) -> Field:
    """Adjoint of the noise derivative for one field per mode."""
    if y.grid != nm.grid:
        raise ConfigurationError("state field lives on a different grid")
    if len(q) != nm.nmodes:
        raise ShapeError(f"expected {nm.nmodes} adjoint fields, got {len(q)}")
    cols = np.zeros((nm.nmodes,) + nm.grid.shape)
    for k, qk in enumerate(q):
        if qk.grid != nm.grid:
            raise ConfigurationError("adjoint field lives on a different grid")
        cols[k] = qk.values
    return Field(nm.grid, db_adjoint_values(nm, t, y.values, cols))
