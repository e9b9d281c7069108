"""Training: dense BFGS for smooth objectives, accelerated proximal gradient for l1."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .basis import Basis, as_points
from .mfnet import ParamVector, init_params, key_name
from .objective import Problem, RegConfig


class NonFiniteObjectiveError(RuntimeError):
    pass


class InvalidConfigError(ValueError):
    pass


@dataclass
class FitConfig:
    max_iters: int = 500
    grad_tol: float = 1e-8
    step_tol: float = 1e-10
    init: str = "edge-one"
    seed: int = 0
    init_scale: float = 1.0
    restarts: int = 0
    reg: RegConfig = field(default_factory=RegConfig)

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidConfigError("max_iters must be positive")
        if not (self.grad_tol > 0 and self.step_tol > 0):
            raise InvalidConfigError("tolerances must be positive")
        if self.restarts < 0:
            raise InvalidConfigError("restarts must be nonnegative")


@dataclass
class FitResult:
    params: ParamVector
    objective_trace: list
    converged: bool
    reason: str
    grad_norm_final: float
    iterations: int

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def _initial_points(problem: Problem, config: FitConfig) -> list[np.ndarray]:
    net = problem.net
    starts = [init_params(net, config.init, config.seed, config.init_scale).values]
    for r in range(1, config.restarts + 1):
        starts.append(init_params(net, "gaussian", config.seed + r, config.init_scale).values)
    return starts


def _best(results: list[FitResult]) -> FitResult:
    # ties go to the earliest start, keeping restarts=0 behaviour identical
    return min(results, key=lambda r: r.objective)


def bfgs(fun: Callable, x0: np.ndarray, max_iters: int = 500, grad_tol: float = 1e-8,
         step_tol: float = 1e-10, c1: float = 1e-4):
    """Minimize ``fun`` (returning value and gradient) with dense inverse-Hessian BFGS.

    Backtracking line search enforces the Armijo sufficient-decrease condition;
    the update is skipped when the curvature condition fails.

    Returns ``(x, trace, converged, reason, grad_inf_norm, iterations)``.
    """
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteObjectiveError("objective is not finite at the initial point")
    n = x.size
    H = np.eye(n)
    trace = [float(f)]
    first = True
    for it in range(max_iters):
        gnorm = np.max(np.abs(g)) if n else 0.0
        if gnorm <= grad_tol:
            return x, trace, True, "grad_tol", gnorm, it
        d = -H @ g
        slope = g @ d
        if slope >= 0:
            H = np.eye(n)
            d = -g
            slope = -(g @ g)
        t = 1.0
        if first:
            t = min(1.0, 1.0 / max(np.max(np.abs(d)), 1e-300))
        while True:
            x_new = x + t * d
            f_new, g_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= f + c1 * t * slope:
                break
            t *= 0.5
            if t * np.max(np.abs(d)) <= 1e-16 * max(1.0, np.max(np.abs(x))):
                if not np.isfinite(f_new) and not np.isfinite(f):
                    raise NonFiniteObjectiveError("line search diverged")
                return x, trace, False, "line_search", gnorm, it
        if not np.all(np.isfinite(g_new)):
            raise NonFiniteObjectiveError("non-finite gradient")
        s = x_new - x
        y = g_new - g
        x, f, g = x_new, f_new, g_new
        trace.append(float(f))
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if first:
                H = np.eye(n) * (sy / (y @ y))
            rho = 1.0 / sy
            Hy = H @ y
            H = H + (rho * rho * (y @ Hy) + rho) * np.outer(s, s) - rho * (np.outer(Hy, s) + np.outer(s, Hy))
            first = False
        if np.max(np.abs(s)) <= step_tol * max(1.0, np.max(np.abs(x))):
            gnorm = np.max(np.abs(g))
            return x, trace, True, "step_tol", gnorm, it + 1
    gnorm = np.max(np.abs(g)) if n else 0.0
    return x, trace, gnorm <= grad_tol, "max_iters" if gnorm > grad_tol else "grad_tol", gnorm, max_iters


def _smooth_fun(problem: Problem, reg: RegConfig):
    w = reg.weights(problem.layout) if reg.kind == "gaussian" else None

    def fun(theta):
        f, g = problem.misfit(theta)
        if w is not None:
            f += float(np.sum(w * theta * theta))
            g = g + 2.0 * w * theta
        return f, g

    return fun


def fit(graph, datasets, config: Optional[FitConfig] = None) -> FitResult:
    """Fit all node and edge parameters jointly by BFGS on the (l2-)regularized NLL."""
    config = FitConfig() if config is None else config
    if config.reg.kind not in ("none", "gaussian"):
        raise InvalidConfigError("fit handles 'none' and 'gaussian' regularization; use fit_sparse for l1")
    problem = datasets if isinstance(datasets, Problem) else Problem(graph, datasets)
    fun = _smooth_fun(problem, config.reg)
    const = problem.constant
    results = []
    for x0 in _initial_points(problem, config):
        x, trace, ok, reason, gnorm, its = bfgs(
            fun, x0, config.max_iters, config.grad_tol, config.step_tol
        )
        trace = [v + const for v in trace]
        results.append(FitResult(ParamVector(x, problem.layout), trace, ok, reason, float(gnorm), its))
    return _best(results)


# -- l1 ----------------------------------------------------------------------


def soft_threshold(v: np.ndarray, thresh) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)


def kkt_residual(grad: np.ndarray, theta: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Per-coordinate violation of the l1 first-order optimality conditions.

    Nonzero coordinates need ``grad + w * sign(theta) = 0``; zero coordinates
    need ``|grad| <= w``.
    """
    nz = theta != 0
    out = np.maximum(np.abs(grad) - weights, 0.0)
    out[nz] = np.abs(grad[nz] + weights[nz] * np.sign(theta[nz]))
    return out


def _fista(fun, x0, w, max_iters, tol, step_tol):
    x = np.array(x0, dtype=float)
    fx, gx = fun(x)
    if not np.isfinite(fx):
        raise NonFiniteObjectiveError("objective is not finite at the initial point")
    Fx = fx + float(w @ np.abs(x))
    trace = [Fx]
    L = max(1.0, float(np.max(np.abs(gx))))
    y, fy, gy = x, fx, gx
    t = 1.0
    stalled = 0
    for it in range(max_iters):
        kkt = float(np.max(kkt_residual(gx, x, w), initial=0.0))
        if kkt <= tol:
            return x, trace, True, "grad_tol", kkt, it
        L = max(L * 0.5, 1e-12)
        while True:
            z = soft_threshold(y - gy / L, w / L)
            fz, gz = fun(z)
            dz = z - y
            if np.isfinite(fz) and fz <= fy + gy @ dz + 0.5 * L * (dz @ dz) + 1e-12 * abs(fy):
                break
            L *= 2.0
            if L > 1e30:
                raise NonFiniteObjectiveError("proximal line search diverged")
        Fz = fz + float(w @ np.abs(z))
        x_old = x
        if Fz <= Fx:
            x, fx, gx, Fx = z, fz, gz, Fz
        trace.append(Fx)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x + (t / t_new) * (z - x) + ((t - 1.0) / t_new) * (x - x_old)
        t = t_new
        if Fz > Fx or np.array_equal(y, x):
            # restart momentum whenever the extrapolated point did not descend
            y, t = x, 1.0
        fy, gy = (fx, gx) if y is x else fun(y)
        if y is x and np.max(np.abs(x - x_old), initial=0.0) <= step_tol * max(1.0, np.max(np.abs(x), initial=0.0)):
            stalled += 1
            if stalled > 2:
                kkt = float(np.max(kkt_residual(gx, x, w), initial=0.0))
                return x, trace, kkt <= tol, "step_tol", kkt, it + 1
        else:
            stalled = 0
    kkt = float(np.max(kkt_residual(gx, x, w), initial=0.0))
    return x, trace, kkt <= tol, "max_iters" if kkt > tol else "grad_tol", kkt, max_iters


def _polish(fun, x, w, max_iters, tol, step_tol):
    """BFGS on the current support with signs frozen, where the l1 term is linear.

    If a coordinate would change sign, the step is cut back to where the first
    one reaches zero. Returns ``x`` itself when the composite objective does
    strictly decrease.
    """
    nz = x != 0
    if not np.any(nz):
        return x
    sgn = np.sign(x[nz])
    wn = w[nz]

    def restricted(v):
        full = x.copy()
        full[nz] = v
        f, g = fun(full)
        return f + float(wn @ (sgn * v)), g[nz] + wn * sgn

    v, *_ = bfgs(restricted, x[nz], max_iters, tol, step_tol)
    flipped = np.sign(v) != sgn
    if np.any(flipped):
        # stop at the first coordinate to reach zero and drop it from the support
        xs = x[nz]
        t = np.full(xs.size, np.inf)
        t[flipped] = xs[flipped] / (xs[flipped] - v[flipped])
        tmin = float(np.min(t))
        v = xs + tmin * (v - xs)
        v[t <= tmin] = 0.0
        v[np.sign(v) != sgn] = 0.0
    cand = x.copy()
    cand[nz] = v
    if fun(cand)[0] + float(w @ np.abs(cand)) < fun(x)[0] + float(w @ np.abs(x)):
        return cand
    return x


def _sparse_solve(fun, x0, w, max_iters, tol, step_tol, burst=100):
    # Proximal steps identify the support quickly but converge slowly on
    # ill-conditioned misfits; a sign-frozen quasi-Newton polish finishes it.
    x = np.array(x0, dtype=float)
    trace, used = [], 0
    reason, kkt = "max_iters", np.inf
    while used < max_iters:
        n = min(burst, max_iters - used)
        x, tr, ok, reason, kkt, its = _fista(fun, x, w, n, tol, step_tol)
        trace.extend(tr if not trace else tr[1:])
        used += max(its, 1)
        if ok:
            return x, trace, True, reason, kkt, used
        polished = _polish(fun, x, w, min(500, max_iters), tol, step_tol)
        if polished is not x:
            x = polished
            trace.append(fun(x)[0] + float(w @ np.abs(x)))
            kkt = float(np.max(kkt_residual(fun(x)[1], x, w), initial=0.0))
            if kkt <= tol:
                return x, trace, True, "grad_tol", kkt, used
        elif reason == "step_tol":
            break
    return x, trace, False, reason, kkt, used


def fit_sparse(graph, datasets, config: Optional[FitConfig] = None,
               start: Optional[ParamVector] = None) -> FitResult:
    """Minimize NLL + weighted l1 norm by accelerated proximal gradient (FISTA).

    Uses backtracking on the Lipschitz estimate, a monotone acceptance rule and
    momentum restarts; between bursts of proximal steps the current support is
    polished by BFGS with frozen signs. ``grad_tol`` bounds the l1 optimality
    residual. ``start`` (e.g. an unregularized fit) replaces the configured
    initialization of the first run.
    """
    config = FitConfig() if config is None else config
    if config.reg.kind != "laplace":
        raise InvalidConfigError("fit_sparse requires 'laplace' regularization")
    problem = datasets if isinstance(datasets, Problem) else Problem(graph, datasets)
    w = config.reg.weights(problem.layout)
    const = problem.constant
    starts = _initial_points(problem, config)
    if start is not None:
        problem.net.check(start)
        starts[0] = np.array(start.values, dtype=float)
    results = []
    for x0 in starts:
        x, trace, ok, reason, kkt, its = _sparse_solve(
            problem.misfit, x0, w, config.max_iters, config.grad_tol, config.step_tol
        )
        trace = [v + const for v in trace]
        results.append(FitResult(ParamVector(x, problem.layout), trace, ok, reason, float(kkt), its))
    return _best(results)


def fit_auto(graph, datasets, config: Optional[FitConfig] = None) -> FitResult:
    config = FitConfig() if config is None else config
    if config.reg.kind == "laplace":
        return fit_sparse(graph, datasets, config)
    return fit(graph, datasets, config)


# -- single fidelity -----------------------------------------------------------


def single_fidelity_fit(basis: Basis, x, y, ridge: Optional[float] = None) -> np.ndarray:
    """Least-squares coefficients of ``basis`` for data ``(x, y)``.

    SVD-based, so rank-deficient systems return the minimum-norm solution.
    ``ridge`` adds ``ridge * ||theta||^2``.
    """
    V = basis(as_points(x, basis.dim))
    y = np.asarray(y, dtype=float).ravel()
    if V.shape[0] == 0:
        raise ValueError("single-fidelity fit needs at least one observation")
    if V.shape[0] != y.size:
        raise ValueError(f"{V.shape[0]} points but {y.size} observations")
    if ridge:
        if ridge < 0:
            raise ValueError("ridge weight must be nonnegative")
        p = V.shape[1]
        V = np.vstack([V, np.sqrt(ridge) * np.eye(p)])
        y = np.concatenate([y, np.zeros(p)])
    return np.linalg.lstsq(V, y, rcond=None)[0]


# -- gradient audit ------------------------------------------------------------


@dataclass
class GradCheck:
    max_discrepancy: float
    coordinate: int
    name: str
    analytic: np.ndarray
    numeric: np.ndarray


def gradient_check(graph, params, datasets, fd_step: float = 1e-6,
                   grad_fn: Optional[Callable] = None) -> GradCheck:
    """Compare the sweep gradient of the total NLL with central finite differences.

    The discrepancy for each coordinate is ``|analytic - fd| / max(1, |analytic|)``.
    ``grad_fn`` overrides the analytic gradient (used to audit fault injection).
    """
    if not fd_step > 0:
        raise ValueError("fd_step must be positive")
    problem = datasets if isinstance(datasets, Problem) else Problem(graph, datasets)
    theta = np.array(params.values if isinstance(params, ParamVector) else params, dtype=float)
    analytic = grad_fn(theta) if grad_fn is not None else problem.nll(theta)[1]
    numeric = np.empty_like(theta)
    for i in range(theta.size):
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += fd_step
        tm[i] -= fd_step
        numeric[i] = (problem.nll(tp, False)[0] - problem.nll(tm, False)[0]) / (2 * fd_step)
    disc = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    worst = int(np.argmax(disc)) if disc.size else -1
    name = ""
    if worst >= 0:
        for key, s in problem.layout.slices.items():
            if s.start <= worst < s.stop:
                name = f"{key_name(key)}[{worst - s.start}]"
    return GradCheck(float(disc[worst]) if worst >= 0 else 0.0, worst, name, analytic, numeric)
