"""Nearest attainable point under a freeze mask.

:func:`solve` runs sequential importance sampling with resampling over the
free dimensions. Feasibility is a hard constraint and proximity to the query
is weighted with an annealed temperature. :func:`brute_force_nearest`
enumerates a grid and serves as the reference answer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import DIM_NAMES, N_DIMS, ConfigError, FeatureParameterPoint, dim_index
from .region import AttainmentQuery, grid_probabilities, success_probabilities

# line search resolution used to pull a feasible point toward the query
_LINE_POINTS = 33
_LINE_PASSES = 3


@dataclass(frozen=True)
class FreezeMask:
    frozen: tuple = (False,) * N_DIMS

    def __post_init__(self):
        frozen = tuple(bool(f) for f in self.frozen)
        if len(frozen) != N_DIMS:
            raise ConfigError(f"freeze mask needs {N_DIMS} flags")
        if all(frozen):
            raise ConfigError("freeze mask must leave at least one dimension free")
        object.__setattr__(self, "frozen", frozen)

    @classmethod
    def adaptive(cls) -> "FreezeMask":
        """Features frozen, controller gains free."""
        return cls((True, True, False, False, False))

    @classmethod
    def counterfactual(cls) -> "FreezeMask":
        """Gains frozen, environment features free."""
        return cls((False, False, True, True, True))

    @classmethod
    def freezing(cls, *dims) -> "FreezeMask":
        idx = {dim_index(d) for d in dims}
        return cls(tuple(i in idx for i in range(N_DIMS)))

    @property
    def free(self) -> np.ndarray:
        return ~np.array(self.frozen)

    @property
    def mode(self) -> str:
        if self == FreezeMask.adaptive():
            return "adaptive"
        if self == FreezeMask.counterfactual():
            return "counterfactual"
        return "masked"

    def frozen_names(self) -> list[str]:
        return [n for n, f in zip(DIM_NAMES, self.frozen) if f]


@dataclass(frozen=True)
class SolverConfig:
    population: int = 512
    elite_fraction: float = 0.125
    max_iterations: int = 50
    convergence_tol: float = 1e-3
    seed: int = 0
    init_std: float = 0.3
    tau_start: float = 0.5
    tau_end: float = 0.05
    tau_decay: float = 0.9
    patience: int = 5

    def __post_init__(self):
        if self.population < 16:
            raise ConfigError("population must be >= 16")
        if not 0.0 < self.elite_fraction < 1.0:
            raise ConfigError("elite_fraction must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.convergence_tol < 0 or self.init_std <= 0:
            raise ConfigError("convergence_tol >= 0 and init_std > 0 required")
        if not 0 < self.tau_end <= self.tau_start or not 0 < self.tau_decay <= 1:
            raise ConfigError("need 0 < tau_end <= tau_start and 0 < tau_decay <= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def temperature(self, iteration: int) -> float:
        # depends on the iteration index only, so longer budgets extend shorter runs
        return max(self.tau_end, self.tau_start * self.tau_decay**iteration)


@dataclass(frozen=True)
class SolutionResult:
    x_star: FeatureParameterPoint
    distance: float
    predicted: float
    feasible: bool
    iterations: int
    samples_used: int
    query: FeatureParameterPoint | None = None
    mask: FreezeMask = field(default_factory=FreezeMask)
    eta_p: float = 0.8
    seed: int | None = None

    def to_json(self) -> dict:
        return {
            "query": self.query.as_list() if self.query is not None else None,
            "mode": self.mask.mode,
            "frozen": self.mask.frozen_names(),
            "x_star": self.x_star.as_list(),
            "distance": self.distance,
            "predicted": self.predicted,
            "feasible": self.feasible,
            "eta_p": self.eta_p,
            "iterations": self.iterations,
            "samples_used": self.samples_used,
            "seed": self.seed,
        }

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=2) + "\n")

    def summary(self) -> str:
        """One-line report, e.g. ``adaptive solution: kp 1.30 -> 0.80, predicted 0.81``."""
        if not self.feasible:
            return f"{self.mask.mode} solution: none found (best predicted {self.predicted:.2f})"
        changes = []
        if self.query is not None:
            before, after = self.query.as_array(), self.x_star.as_array()
            for name, a, b in zip(DIM_NAMES, before, after):
                if a != b:
                    changes.append(f"{name} {_fmt(a)} -> {_fmt(b)}")
        body = ", ".join(changes) if changes else "query already attainable"
        return f"{self.mask.mode} solution: {body}, predicted {self.predicted:.2f}"


def _fmt(v: float) -> str:
    return f"{v:.2f}" if abs(v) >= 0.01 or v == 0 else f"{v:.2g}"


def _query_row(q: AttainmentQuery, x) -> np.ndarray:
    if isinstance(x, FeatureParameterPoint):
        x = x.as_array()
    return q.bounds.check(np.asarray(x, dtype=float))[0]


class _Subspace:
    """Maps unit-cube coordinates of the free dims to full raw-unit rows."""

    def __init__(self, q: AttainmentQuery, x_raw: np.ndarray, free: np.ndarray):
        self.q = q
        self.x_raw = x_raw
        self.free = free
        self.lo = q.bounds.lo_array[free]
        self.hi = q.bounds.hi_array[free]
        self.span = q.bounds.span[free]
        self.u0 = ((x_raw - q.bounds.lo_array) / q.bounds.span)[free]

    def raw(self, U) -> np.ndarray:
        U = np.atleast_2d(U)
        rows = np.tile(self.x_raw, (len(U), 1))
        rows[:, self.free] = np.clip(self.lo + U * self.span, self.lo, self.hi)
        return rows

    def probabilities(self, U) -> np.ndarray:
        return success_probabilities(self.q, self.raw(U))

    def distance(self, U) -> np.ndarray:
        return np.linalg.norm(np.atleast_2d(U) - self.u0, axis=1)

    def verified(self, u):
        """Single-point probability if ``u`` is attainable, else None."""
        p = float(success_probabilities(self.q, self.raw(u))[0])
        return p if p >= self.q.eta_p else None

    def pull_toward_query(self, u):
        """Move a feasible point along the segment toward the query while it stays feasible."""
        t_lo, t_hi = 0.0, 1.0
        evaluated = 0
        for _ in range(_LINE_PASSES):
            ts = np.linspace(t_lo, t_hi, _LINE_POINTS)
            p = self.probabilities(self.u0 + ts[:, None] * (u - self.u0))
            evaluated += len(ts)
            ok = np.flatnonzero(p >= self.q.eta_p)
            if len(ok) == 0 or ok[0] == 0:
                break
            t_lo, t_hi = ts[ok[0] - 1], ts[ok[0]]
        return self.u0 + t_hi * (u - self.u0), evaluated


def solve(
    q: AttainmentQuery,
    x,
    mask: FreezeMask,
    cfg: SolverConfig | None = None,
) -> SolutionResult:
    """Nearest attainable point to ``x`` moving only the free dimensions of ``mask``.

    Distances are Euclidean in unit-cube coordinates. If ``x`` is already
    attainable it is returned unchanged.
    """
    cfg = cfg or SolverConfig()
    x_raw = _query_row(q, x)
    query = FeatureParameterPoint.from_array(x_raw)
    sub = _Subspace(q, x_raw, mask.free)
    k = int(mask.free.sum())

    def result(raw, distance, predicted, feasible, iterations, samples):
        return SolutionResult(
            FeatureParameterPoint.from_array(raw), distance, predicted, feasible,
            iterations, samples, query, mask, q.eta_p, cfg.seed,
        )  # fmt: skip

    p0 = float(success_probabilities(q, x_raw)[0])
    if p0 >= q.eta_p:
        return result(x_raw, 0.0, p0, True, 0, 1)

    rng = np.random.default_rng(cfg.seed)
    n_elite = max(1, int(round(cfg.population * cfg.elite_fraction)))
    mean = sub.u0.copy()
    std = np.full(k, cfg.init_std)
    best_u, best_d, best_p = None, math.inf, p0
    top_p = p0
    samples, stall, iterations = 1, 0, 0

    for it in range(cfg.max_iterations):
        iterations = it + 1
        U = np.clip(mean + std * rng.standard_normal((cfg.population, k)), 0.0, 1.0)
        p = sub.probabilities(U)
        samples += cfg.population
        top_p = max(top_p, float(p.max()))
        feasible = p >= q.eta_p
        dist = sub.distance(U)

        previous = best_d
        if feasible.any():
            cand = np.flatnonzero(feasible)
            i = cand[np.argmin(dist[cand])]
            if dist[i] < best_d:
                pulled, used = sub.pull_toward_query(U[i])
                samples += used + 2
                for u in (pulled, U[i]):
                    d = float(sub.distance(u)[0])
                    pu = sub.verified(u) if d < best_d else None
                    if pu is not None:
                        best_u, best_d, best_p = u.copy(), d, pu
                        break

            tau = cfg.temperature(it)
            logw = np.where(feasible, -(dist**2) / (2.0 * tau**2), -np.inf)
            w = np.exp(logw - logw.max())
            w /= w.sum()
            # systematic resampling
            positions = (rng.random() + np.arange(n_elite)) / n_elite
            idx = np.minimum(np.searchsorted(np.cumsum(w), positions), cfg.population - 1)
            elites = U[idx]
            centre = elites.mean(axis=0)
            if best_u is not None:
                centre = 0.5 * (centre + best_u)
            mean = centre
            std = np.maximum(elites.std(axis=0), 0.25 * cfg.convergence_tol)
        else:
            std = np.minimum(std * 1.5, 1.0)

        if math.isfinite(previous) and previous - best_d < cfg.convergence_tol:
            stall += 1
            if stall >= cfg.patience:
                break
        else:
            stall = 0

    if best_u is None:
        return result(x_raw, 0.0, top_p, False, iterations, samples)
    return result(sub.raw(best_u)[0], best_d, best_p, True, iterations, samples)


def brute_force_nearest(q: AttainmentQuery, x, mask: FreezeMask, grid_res: int = 200) -> SolutionResult:
    """Exhaustive search over ``grid_res`` points per free dimension.

    Ties are broken by the lowest row-major grid index.
    """
    if grid_res < 2:
        raise ConfigError("grid_res must be >= 2")
    x_raw = _query_row(q, x)
    query = FeatureParameterPoint.from_array(x_raw)
    lo, span = q.bounds.lo_array, q.bounds.span
    u0 = (x_raw - lo) / span
    free = mask.free

    unit = np.linspace(0.0, 1.0, grid_res)
    axes, unit_axes = [], []
    for d in range(N_DIMS):
        if free[d]:
            axes.append(lo[d] + unit * span[d])
            unit_axes.append(unit)
        else:
            axes.append(np.array([x_raw[d]]))
            unit_axes.append(np.array([u0[d]]))
    probs = grid_probabilities(q, axes)
    sq = np.zeros(probs.shape)
    for d in range(N_DIMS):
        if free[d]:
            shape = [1] * N_DIMS
            shape[d] = grid_res
            sq = sq + ((unit_axes[d] - u0[d]) ** 2).reshape(shape)
    masked = np.where(probs >= q.eta_p, sq, np.inf)
    flat = int(np.argmin(masked))
    n = probs.size
    if not np.isfinite(masked.flat[flat]):
        return SolutionResult(query, 0.0, float(probs.max()), False, 1, n, query, mask, q.eta_p)
    idx = np.unravel_index(flat, probs.shape)
    raw = np.array([axes[d][idx[d]] for d in range(N_DIMS)])
    return SolutionResult(
        FeatureParameterPoint.from_array(raw),
        float(math.sqrt(masked.flat[flat])),
        float(probs.flat[flat]),
        True,
        1,
        n,
        query,
        mask,
        q.eta_p,
    )


def grid_cell_diagonal(grid_res: int, n_free: int) -> float:
    """Diagonal of one grid cell in unit-cube coordinates."""
    return math.sqrt(n_free) / (grid_res - 1)
