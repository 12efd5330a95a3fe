"""Cost functional, Monte Carlo reduced cost, adjoint gradient, and
projected gradient descent on the admissible ball.

Controls are deterministic time-space fields by default (one field per time
step). The reduced cost fixes the Wiener seeds once per ensemble, so for a
finite ensemble it is a smooth deterministic function of the control and the
transpose-backend adjoint supplies its exact gradient

    grad J(u) = mean over paths of ptilde + alpha3 * u.

An open-loop random control class (one control per path) shares the same
code path behind the ``per_path`` flag of :class:`ControlProcess`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, DomainError
from .grid import Field, Grid
from .physics import NO_TRUNCATION, TruncationLevel
from .sensitivity import solve_adjoint
from .state import (
    StateParams,
    TimeGrid,
    Trajectory,
    WienerPath,
    control_values,
    mix_seed,
    sample_wiener_path,
    solve_state,
)

__all__ = [
    "ControlProcess",
    "EnsembleSpec",
    "Problem",
    "OptimizerOptions",
    "OptimizationResult",
    "l2q_norm",
    "l2q_inner",
    "evaluate_cost",
    "reduced_cost",
    "gradient",
    "project_admissible",
    "optimize",
    "optimality_residual",
]


@dataclass(frozen=True)
class ControlProcess:
    """Piecewise-constant-in-time control with an admissibility radius.

    ``values`` has shape (nsteps, *grid.shape); with ``per_path=True`` a
    leading path axis is added and the admissibility norm averages over it.
    """

    grid: Grid
    timegrid: TimeGrid
    values: np.ndarray
    c0: float = 1.0
    per_path: bool = False

    def __post_init__(self):
        if self.c0 <= 0:
            raise DomainError(f"admissibility radius must be positive, got {self.c0}")
        values = np.asarray(self.values, dtype=float)
        base = (self.timegrid.nsteps,) + self.grid.shape
        expected_ndim = len(base) + (1 if self.per_path else 0)
        if values.ndim != expected_ndim or values.shape[-len(base):] != base:
            raise ConfigurationError(
                f"control values shape {values.shape} incompatible with "
                f"{base} (per_path={self.per_path})"
            )
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: Grid, tg: TimeGrid, c0: float = 1.0) -> "ControlProcess":
        return cls(grid, tg, np.zeros((tg.nsteps,) + grid.shape), c0)

    def with_values(self, values) -> "ControlProcess":
        return replace(self, values=np.asarray(values, dtype=float))

    def path_values(self, i: int) -> np.ndarray:
        return self.values[i] if self.per_path else self.values

    def norm_l2q(self) -> float:
        return l2q_norm(self.values, self.timegrid, self.grid,
                        per_path=self.per_path)


def l2q_norm(values: np.ndarray, tg: TimeGrid, grid: Grid,
             per_path: bool = False) -> float:
    """Discrete L2 norm over the time-space cylinder; with a path axis the
    square is averaged over paths (an expectation norm)."""
    values = np.asarray(values, dtype=float)
    sq = np.sum(values**2) * tg.tau * grid.cell_volume
    if per_path:
        sq /= values.shape[0]
    return float(np.sqrt(sq))


def l2q_inner(a: np.ndarray, b: np.ndarray, tg: TimeGrid, grid: Grid) -> float:
    return float(np.sum(np.asarray(a) * np.asarray(b)) * tg.tau * grid.cell_volume)


@dataclass(frozen=True)
class EnsembleSpec:
    """Monte Carlo ensemble: path count plus the base seed that fixes every
    per-path stream (common random numbers)."""

    npaths: int
    base_seed: int

    def __post_init__(self):
        if self.npaths < 1:
            raise DomainError(f"need at least one path, got {self.npaths}")

    def path_seed(self, i: int) -> int:
        return mix_seed(self.base_seed, i)

    def sample_paths(self, params: StateParams) -> list[WienerPath]:
        return [sample_wiener_path(params.noise, params.timegrid, self.path_seed(i))
                for i in range(self.npaths)]


@dataclass(frozen=True)
class Problem:
    """Tracking problem: dynamics, initial datum, targets, and weights.

    Targets may be shared across paths (shapes (nsteps, *grid) / (*grid)) or
    per path (leading npaths axis), as produced by the synthetic target
    generator.
    """

    params: StateParams
    y0: Field
    alphas: tuple[float, float, float]
    x_q: np.ndarray | None = None
    x_t: np.ndarray | None = None
    c0: float = 1.0
    trunc: TruncationLevel = NO_TRUNCATION
    backend: str = "discrete_transpose"

    def __post_init__(self):
        if any(a < 0 for a in self.alphas):
            raise DomainError(f"cost weights must be nonnegative, got {self.alphas}")
        if self.y0.grid != self.params.grid:
            raise ConfigurationError("initial datum lives on a different grid")

    def target_q(self, i: int):
        if self.x_q is None:
            return None
        xq = np.asarray(self.x_q)
        base_ndim = 1 + self.params.grid.ndims
        return xq[i] if xq.ndim == base_ndim + 1 else xq

    def target_t(self, i: int):
        if self.x_t is None:
            return None
        xt = np.asarray(self.x_t)
        return xt[i] if xt.ndim == self.params.grid.ndims + 1 else xt

    def zero_control(self) -> ControlProcess:
        return ControlProcess.zeros(self.params.grid, self.params.timegrid, self.c0)


def evaluate_cost(traj: Trajectory, u, x_q, x_t, alphas) -> float:
    """Per-path quadratic tracking cost (ensemble averaging is the caller's).

    (a1/2) sum_n tau |y_n - xQ_n|_H^2 + (a2/2) |y_N - x_T|_H^2
    + (a3/2) sum_n tau |u_n|_H^2, with the distributed sums over the step
    starts n = 0..N-1.
    """
    a1, a2, a3 = alphas
    tg = traj.timegrid
    g = traj.grid
    cv = g.cell_volume
    tau = tg.tau
    total = 0.0
    if a1 != 0.0:
        xq = control_values(x_q, tg, g) if x_q is not None else 0.0
        diff = traj.ys[: tg.nsteps] - xq
        total += 0.5 * a1 * tau * cv * float(np.sum(diff**2))
    if a2 != 0.0:
        xt = 0.0 if x_t is None else np.asarray(getattr(x_t, "values", x_t), dtype=float)
        total += 0.5 * a2 * cv * float(np.sum((traj.ys[tg.nsteps] - xt) ** 2))
    if a3 != 0.0:
        uvals = control_values(u, tg, g)
        total += 0.5 * a3 * tau * cv * float(np.sum(uvals**2))
    return total


def _path_cost(problem: Problem, u: ControlProcess, wp: WienerPath, i: int) -> float:
    traj = solve_state(problem.y0, u.path_values(i), wp, problem.params,
                       record_energy=False)
    return evaluate_cost(traj, u.path_values(i), problem.target_q(i),
                         problem.target_t(i), problem.alphas)


def _path_workers() -> int:
    """Path-level thread count, CHOC_THREADS override (default sequential)."""
    import os
    try:
        return max(1, int(os.environ.get("CHOC_THREADS", "1")))
    except ValueError:
        return 1


def _map_paths(fn, paths):
    """Run a per-path function; results land in path order regardless of
    scheduling, so threaded and sequential runs agree bitwise."""
    workers = _path_workers()
    if workers == 1 or len(paths) <= 1:
        return [fn(i, wp) for i, wp in enumerate(paths)]
    from concurrent.futures import ThreadPoolExecutor
    out = [None] * len(paths)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(fn, i, wp): i for i, wp in enumerate(paths)}
        for fut, i in futures.items():
            out[i] = fut.result()
    return out


def reduced_cost(u: ControlProcess, es: EnsembleSpec, problem: Problem,
                 paths: list[WienerPath] | None = None) -> tuple[float, float]:
    """Monte Carlo mean and standard error of the tracking cost.

    The Wiener paths are fixed by ``es`` independently of ``u``, so repeated
    evaluations are bitwise identical and the map u -> mean is smooth.
    """
    if paths is None:
        paths = es.sample_paths(problem.params)
    costs = np.array(_map_paths(lambda i, wp: _path_cost(problem, u, wp, i),
                                paths))
    mean = float(np.mean(costs))
    if len(costs) < 2:
        return mean, 0.0
    stderr = float(np.std(costs, ddof=1) / np.sqrt(len(costs)))
    return mean, stderr


def gradient(u: ControlProcess, es: EnsembleSpec, problem: Problem,
             paths: list[WienerPath] | None = None) -> np.ndarray:
    """Exact gradient of the finite-ensemble reduced cost at ``u``.

    Runs the state and transpose-adjoint solves per path and averages
    ptilde; the control penalty contributes alpha3 * u. With a per-path
    control the path gradients are returned unaveraged.
    """
    if problem.backend != "discrete_transpose":
        raise ConfigurationError(
            "exact gradients require the discrete_transpose backend"
        )
    if paths is None:
        paths = es.sample_paths(problem.params)
    tg = problem.params.timegrid
    a3 = problem.alphas[2]

    def path_ptilde(i, wp):
        traj = solve_state(problem.y0, u.path_values(i), wp, problem.params,
                           record_energy=False)
        adj = solve_adjoint(traj, problem.target_q(i), problem.target_t(i),
                            problem.alphas, backend="discrete_transpose",
                            trunc=problem.trunc)
        return adj.ptildes[: tg.nsteps]

    ptildes = _map_paths(path_ptilde, paths)
    if u.per_path:
        return np.stack([pt + a3 * u.values[i] for i, pt in enumerate(ptildes)])
    acc = ptildes[0].copy()
    for pt in ptildes[1:]:
        acc += pt
    return acc / len(paths) + a3 * u.values


def project_admissible(u: ControlProcess, c0: float | None = None) -> ControlProcess:
    """Radial projection onto the closed admissibility ball; idempotent."""
    radius = u.c0 if c0 is None else float(c0)
    if radius <= 0:
        raise DomainError(f"admissibility radius must be positive, got {radius}")
    norm = l2q_norm(u.values, u.timegrid, u.grid, per_path=u.per_path)
    if norm <= radius:
        return u if radius == u.c0 else replace(u, c0=radius)
    return replace(u, values=u.values * (radius / norm), c0=radius)


@dataclass(frozen=True)
class OptimizerOptions:
    """Projected gradient settings: Armijo backtracking from an adaptive
    (Barzilai-Borwein) trial step, gradient-map termination."""

    tol: float = 1e-6
    max_iter: int = 200
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5
    max_backtracks: int = 40
    eta0: float = 1.0            # reference step for the termination metric
    eta_min: float = 1e-6
    eta_max: float = 1e8


@dataclass
class OptimizationResult:
    """Outcome of a projected gradient run."""

    control: ControlProcess
    cost_history: list[float]
    gradient_map_history: list[float]
    step_history: list[float]
    projection_residual: float
    termination: str
    n_iterations: int

    def summary(self) -> dict:
        return {
            "iterations": self.n_iterations,
            "termination": self.termination,
            "initial_cost": self.cost_history[0],
            "final_cost": self.cost_history[-1],
            "final_gradient_map": (
                self.gradient_map_history[-1] if self.gradient_map_history else 0.0
            ),
            "projection_residual": self.projection_residual,
            "control_norm": self.control.norm_l2q(),
        }


def _gradient_map_norm(u: ControlProcess, grad: np.ndarray, eta0: float) -> float:
    trial = project_admissible(u.with_values(u.values - eta0 * grad))
    return l2q_norm(u.values - trial.values, u.timegrid, u.grid,
                    per_path=u.per_path) / eta0


def optimize(u0: ControlProcess, es: EnsembleSpec, problem: Problem,
             opts: OptimizerOptions = OptimizerOptions()) -> OptimizationResult:
    """Projected gradient descent with Armijo backtracking.

    Accepted steps never increase the cost; termination on the gradient-map
    norm at the fixed reference step, on the iteration budget, or on a
    stalled line search.
    """
    paths = es.sample_paths(problem.params)
    u = project_admissible(u0)
    cost, _ = reduced_cost(u, es, problem, paths)
    cost_history = [cost]
    gmap_history: list[float] = []
    step_history: list[float] = []
    termination = "max_iter"
    tg = u.timegrid

    eta = opts.eta0
    prev_u = None
    prev_grad = None
    it = 0
    while it < opts.max_iter:
        grad = gradient(u, es, problem, paths)
        gmap = _gradient_map_norm(u, grad, opts.eta0)
        gmap_history.append(gmap)
        if gmap <= opts.tol:
            termination = "converged"
            break

        # Barzilai-Borwein trial step from the last accepted move.
        if prev_u is not None:
            du = u.values - prev_u
            dg = grad - prev_grad
            denom = l2q_inner(du, dg, tg, u.grid)
            if denom > 0:
                eta = l2q_inner(du, du, tg, u.grid) / denom
        eta = float(np.clip(eta, opts.eta_min, opts.eta_max))

        accepted = False
        trial_eta = eta
        for _ in range(opts.max_backtracks):
            cand = project_admissible(u.with_values(u.values - trial_eta * grad))
            step_sq = l2q_norm(u.values - cand.values, tg, u.grid,
                               per_path=u.per_path) ** 2
            cand_cost, _ = reduced_cost(cand, es, problem, paths)
            if cand_cost <= cost - (opts.armijo_c / trial_eta) * step_sq:
                accepted = True
                break
            trial_eta *= opts.armijo_shrink
        if not accepted:
            termination = "stalled"
            break

        prev_u = u.values
        prev_grad = grad
        u = cand
        cost = cand_cost
        cost_history.append(cost)
        step_history.append(trial_eta)
        eta = trial_eta
        it += 1

    residual = optimality_residual(u, es, problem, paths)
    return OptimizationResult(
        control=u,
        cost_history=cost_history,
        gradient_map_history=gmap_history,
        step_history=step_history,
        projection_residual=residual,
        termination=termination,
        n_iterations=it,
    )


def optimality_residual(u: ControlProcess, es: EnsembleSpec, problem: Problem,
                        paths: list[WienerPath] | None = None) -> float:
    """Distance between u and the projected point -mean(ptilde)/alpha3.

    Vanishes exactly at a stationary point of the discrete problem when
    alpha3 > 0. For alpha3 = 0 the projection form degenerates; the most
    negative directional derivative over unit coordinate directions is
    reported instead.
    """
    a3 = problem.alphas[2]
    grad = gradient(u, es, problem, paths)
    tg = u.timegrid
    g = u.grid
    if a3 > 0:
        mean_ptilde = grad - a3 * u.values
        target = project_admissible(u.with_values(-mean_ptilde / a3),
                                    c0=problem.c0)
        return l2q_norm(u.values - target.values, tg, g, per_path=u.per_path)
    unit = np.sqrt(tg.tau * g.cell_volume)
    return float(-np.max(np.abs(grad)) * unit)
