"""Attainment-region membership and 2-D slices of the success model."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .core import DIM_NAMES, N_DIMS, ConfigError, DomainBounds, FeatureParameterPoint, dim_index

UNRESTRICTED = "unrestricted"
UNRESTRICTED_POINTS = 9


@dataclass(frozen=True)
class AttainmentQuery:
    """A fitted success model paired with the threshold ``eta_p``.

    ``model`` needs ``predict(X)`` on raw-unit arrays of shape (n, 5) and a
    ``bounds_`` attribute; ``predict_grid(axes)`` is used when available.
    """

    model: Any
    eta_p: float = 0.8

    def __post_init__(self):
        if not 0.0 < float(self.eta_p) < 1.0:
            raise ConfigError(f"eta_p must lie in (0, 1), got {self.eta_p}")
        object.__setattr__(self, "eta_p", float(self.eta_p))

    @property
    def bounds(self) -> DomainBounds:
        return getattr(self.model, "bounds_", None) or DomainBounds()


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, FeatureParameterPoint):
        return x.as_array()[None, :]
    return np.atleast_2d(np.asarray(x, dtype=float))


def success_probabilities(q: AttainmentQuery, X) -> np.ndarray:
    """Clamped posterior mean at each row of ``X`` (raw units)."""
    X = q.bounds.check(_as_matrix(X))
    return np.clip(np.asarray(q.model.predict(X), dtype=float), 0.0, 1.0)


def success_probability(q: AttainmentQuery, x) -> float:
    return float(success_probabilities(q, x)[0])


def is_attainable(q: AttainmentQuery, x) -> bool:
    return success_probability(q, x) >= q.eta_p


def grid_probabilities(q: AttainmentQuery, axes) -> np.ndarray:
    """Clamped mean over a full tensor grid of raw-unit axes."""
    axes = [np.atleast_1d(np.asarray(a, dtype=float)) for a in axes]
    if hasattr(q.model, "predict_grid"):
        mu = q.model.predict_grid(axes)
    else:
        mesh = np.meshgrid(*axes, indexing="ij")
        flat = np.stack([m.ravel() for m in mesh], axis=1)
        mu = np.asarray(q.model.predict(q.bounds.check(flat)), dtype=float).reshape([len(a) for a in axes])
    return np.clip(mu, 0.0, 1.0)


@dataclass(frozen=True)
class SliceSpec:
    """Two free dimensions swept on a grid; others constant or ``UNRESTRICTED``.

    ``fixed_values`` maps dimension name or index to a value. Dimensions not
    listed are unrestricted.
    """

    free_dims: tuple
    fixed_values: Mapping = field(default_factory=dict)
    resolution: int = 100

    def __post_init__(self):
        free = tuple(dim_index(d) for d in self.free_dims)
        if len(free) != 2 or free[0] == free[1]:
            raise ConfigError("a slice needs exactly two distinct free dimensions")
        if int(self.resolution) < 2:
            raise ConfigError("resolution must be >= 2")
        fixed = {}
        for key, value in dict(self.fixed_values).items():
            i = dim_index(key)
            if i in free:
                raise ConfigError(f"{DIM_NAMES[i]} is free and cannot also be fixed")
            fixed[i] = value if value == UNRESTRICTED else float(value)
        object.__setattr__(self, "free_dims", free)
        object.__setattr__(self, "fixed_values", fixed)
        object.__setattr__(self, "resolution", int(self.resolution))

    def fixed(self, dim: int):
        return self.fixed_values.get(dim, UNRESTRICTED)


@dataclass
class SliceGrid:
    spec: SliceSpec
    eta_p: float
    x_values: np.ndarray  # along free_dims[0]
    y_values: np.ndarray  # along free_dims[1]
    probability: np.ndarray  # shape (len(x_values), len(y_values))

    @property
    def attainable(self) -> np.ndarray:
        return self.probability >= self.eta_p

    @property
    def shape(self) -> tuple[int, int]:
        return self.probability.shape

    def rows(self):
        """Row-major cells: free_dims[0] outer ascending, free_dims[1] inner ascending."""
        att = self.attainable
        for i, xv in enumerate(self.x_values):
            for j, yv in enumerate(self.y_values):
                yield float(xv), float(yv), float(self.probability[i, j]), bool(att[i, j])

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        names = [DIM_NAMES[d] for d in self.spec.free_dims]
        with path.open("w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow([names[0], names[1], "probability", "attainable"])
            for xv, yv, p, a in self.rows():
                writer.writerow([repr(xv), repr(yv), repr(p), int(a)])

    def to_svg(self, path, records=None, size=400) -> None:
        write_slice_svg(self, path, records=records, size=size)


def slice_grid(q: AttainmentQuery, s: SliceSpec) -> SliceGrid:
    bounds = q.bounds
    axes = []
    reduce_axes = []
    for d in range(N_DIMS):
        lo, hi = bounds.lo[d], bounds.hi[d]
        if d in s.free_dims:
            axes.append(np.linspace(lo, hi, s.resolution))
        elif s.fixed(d) == UNRESTRICTED:
            axes.append(np.linspace(lo, hi, UNRESTRICTED_POINTS))
            reduce_axes.append(d)
        else:
            axes.append(np.array([s.fixed(d)]))
    probs = grid_probabilities(q, axes)
    if reduce_axes:
        probs = probs.max(axis=tuple(reduce_axes), keepdims=True)
    a, b = s.free_dims
    probs = probs.reshape([len(axes[d]) if d in (a, b) else 1 for d in range(N_DIMS)])
    probs = probs.squeeze(axis=tuple(d for d in range(N_DIMS) if d not in (a, b)))
    if a > b:
        probs = probs.T
    return SliceGrid(s, q.eta_p, axes[a], axes[b], np.ascontiguousarray(probs))


def write_slice_svg(grid: SliceGrid, path, records=None, size=400) -> None:
    """Attainable cells filled light blue; trial points grey (success) or red (failure)."""
    margin = 40
    nx, ny = grid.shape
    cw, ch = size / nx, size / ny
    a, b = grid.spec.free_dims
    x0, x1 = grid.x_values[0], grid.x_values[-1]
    y0, y1 = grid.y_values[0], grid.y_values[-1]

    def px(v):
        return margin + (v - x0) / (x1 - x0) * size

    def py(v):
        return margin + size - (v - y0) / (y1 - y0) * size

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size + 2 * margin}" height="{size + 2 * margin}">',
        f'<rect x="{margin}" y="{margin}" width="{size}" height="{size}" fill="white" stroke="black"/>',
    ]
    att = grid.attainable
    for i in range(nx):
        for j in range(ny):
            if att[i, j]:
                parts.append(
                    f'<rect x="{margin + i * cw:.2f}" y="{margin + size - (j + 1) * ch:.2f}" '
                    f'width="{cw:.2f}" height="{ch:.2f}" fill="#add8e6" stroke="none"/>'
                )
    for rec in records or ():
        x = rec.x.as_array()
        color = "#808080" if rec.y == 1 else "#d62728"
        parts.append(f'<circle cx="{px(x[a]):.2f}" cy="{py(x[b]):.2f}" r="2.5" fill="{color}"/>')
    parts.append(f'<text x="{margin + size / 2}" y="{size + 2 * margin - 8}" text-anchor="middle">{DIM_NAMES[a]}</text>')
    parts.append(
        f'<text x="12" y="{margin + size / 2}" text-anchor="middle" '
        f'transform="rotate(-90 12 {margin + size / 2})">{DIM_NAMES[b]}</text>'
    )
    parts.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts) + "\n")
