"""Domain types, bounds, normalization and the JSONL trial dataset format.

Every array in this package uses the fixed column order
``[ice, angle, kp, ki, kd]`` (see :data:`DIM_NAMES`).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DIM_NAMES = ("ice", "angle", "kp", "ki", "kd")
N_DIMS = len(DIM_NAMES)
SCHEMA = "attainment-v1"
SOURCES = ("simulated", "physical")

ICE_RANGE = (0.0, 1.0)
ANGLE_RANGE = (0.0, 30.0)


class BoundsError(ValueError):
    """A coordinate lies outside its allowed interval."""

    def __init__(self, dim, value, lo, hi):
        self.dim = dim
        self.value = value
        super().__init__(f"{dim}={value!r} is outside bounds [{lo}, {hi}]")


class ConfigError(ValueError):
    pass


class DatasetError(ValueError):
    """Malformed dataset or model file."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaVersionError(DatasetError):
    pass


def dim_index(name) -> int:
    """Resolve a dimension name (or integer index) to its column index."""
    if isinstance(name, (int, np.integer)):
        if not 0 <= int(name) < N_DIMS:
            raise ConfigError(f"dimension index {name} not in 0..{N_DIMS - 1}")
        return int(name)
    aliases = {"angle_deg": "angle"}
    key = aliases.get(str(name).strip().lower(), str(name).strip().lower())
    try:
        return DIM_NAMES.index(key)
    except ValueError:
        raise ConfigError(f"unknown dimension {name!r}; expected one of {DIM_NAMES}") from None


def _check_finite(name, value):
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return value


def _check_range(name, value, lo, hi):
    value = _check_finite(name, value)
    if not lo <= value <= hi:
        raise BoundsError(name, value, lo, hi)
    return value


@dataclass(frozen=True)
class FeatureVector:
    ice: float
    angle_deg: float

    def __post_init__(self):
        object.__setattr__(self, "ice", _check_range("ice", self.ice, *ICE_RANGE))
        object.__setattr__(self, "angle_deg", _check_range("angle", self.angle_deg, *ANGLE_RANGE))

    @property
    def ice_present(self) -> bool:
        return self.ice >= 0.5


@dataclass(frozen=True)
class GainVector:
    kp: float
    ki: float
    kd: float

    def __post_init__(self):
        for name in ("kp", "ki", "kd"):
            value = _check_finite(name, getattr(self, name))
            if value < 0:
                raise BoundsError(name, value, 0.0, math.inf)
            object.__setattr__(self, name, value)


@dataclass(frozen=True)
class FeatureParameterPoint:
    z: FeatureVector
    theta: GainVector

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.z.ice, self.z.angle_deg, self.theta.kp, self.theta.ki, self.theta.kd],
            dtype=float,
        )

    def as_list(self) -> list[float]:
        return [float(v) for v in self.as_array()]

    @classmethod
    def from_array(cls, values) -> "FeatureParameterPoint":
        values = [float(v) for v in np.asarray(values, dtype=float).ravel()]
        if len(values) != N_DIMS:
            raise ValueError(f"expected {N_DIMS} values, got {len(values)}")
        return cls(FeatureVector(values[0], values[1]), GainVector(*values[2:]))

    @classmethod
    def of(cls, ice=0.0, angle=0.0, kp=0.0, ki=0.0, kd=0.0) -> "FeatureParameterPoint":
        return cls(FeatureVector(ice, angle), GainVector(kp, ki, kd))


@dataclass(frozen=True)
class TrialRecord:
    x: FeatureParameterPoint
    y: int
    seed: int = 0
    source: str = "simulated"

    def __post_init__(self):
        if self.y not in (0, 1):
            raise ValueError(f"outcome must be 0 or 1, got {self.y!r}")
        object.__setattr__(self, "y", int(self.y))
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")
        if isinstance(self.seed, bool) or int(self.seed) != self.seed:
            raise ValueError(f"seed must be an integer, got {self.seed!r}")
        object.__setattr__(self, "seed", int(self.seed))

    def to_json(self) -> dict:
        return {"x": self.x.as_list(), "y": self.y, "seed": self.seed, "source": self.source}

    @classmethod
    def from_json(cls, obj) -> "TrialRecord":
        return cls(
            x=FeatureParameterPoint.from_array(obj["x"]),
            y=obj["y"],
            seed=obj["seed"],
            source=obj["source"],
        )


_DEFAULT_LO = (0.0, 0.0, 0.0, 0.0, 0.0)
_DEFAULT_HI = (1.0, 30.0, 2.0, 0.1, 0.5)


@dataclass(frozen=True)
class DomainBounds:
    """Per-dimension closed intervals for the 5-D feature-parameter space."""

    lo: tuple = field(default=_DEFAULT_LO)
    hi: tuple = field(default=_DEFAULT_HI)

    def __post_init__(self):
        lo = tuple(_check_finite("lo", v) for v in self.lo)
        hi = tuple(_check_finite("hi", v) for v in self.hi)
        if len(lo) != N_DIMS or len(hi) != N_DIMS:
            raise ConfigError(f"bounds need {N_DIMS} entries per side")
        for name, a, b in zip(DIM_NAMES, lo, hi):
            if not a < b:
                raise ConfigError(f"bounds for {name} must satisfy lo < hi, got [{a}, {b}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def lo_array(self) -> np.ndarray:
        return np.array(self.lo, dtype=float)

    @property
    def hi_array(self) -> np.ndarray:
        return np.array(self.hi, dtype=float)

    @property
    def span(self) -> np.ndarray:
        return self.hi_array - self.lo_array

    def interval(self, dim) -> tuple[float, float]:
        i = dim_index(dim)
        return self.lo[i], self.hi[i]

    def check(self, X) -> np.ndarray:
        """Return ``X`` as a float array of shape (n, 5), raising BoundsError on violations."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != N_DIMS:
            raise ValueError(f"expected {N_DIMS} columns, got {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise ValueError("coordinates must be finite")
        for i, name in enumerate(DIM_NAMES):
            col = X[:, i]
            bad = (col < self.lo[i]) | (col > self.hi[i])
            if bad.any():
                raise BoundsError(name, float(col[bad][0]), self.lo[i], self.hi[i])
        return X

    def contains(self, x) -> bool:
        try:
            self.check(_as_array(x))
        except BoundsError:
            return False
        return True

    def clip(self, X) -> np.ndarray:
        return np.clip(np.asarray(X, dtype=float), self.lo_array, self.hi_array)

    def to_json(self) -> dict:
        return {name: [self.lo[i], self.hi[i]] for i, name in enumerate(DIM_NAMES)}

    @classmethod
    def from_json(cls, obj) -> "DomainBounds":
        try:
            pairs = [obj[name] for name in DIM_NAMES]
        except (KeyError, TypeError) as exc:
            raise DatasetError(f"bounds object missing dimension {exc}") from None
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))


def _as_array(x) -> np.ndarray:
    if isinstance(x, FeatureParameterPoint):
        return x.as_array()
    return np.asarray(x, dtype=float)


def normalize(x, bounds: DomainBounds | None = None) -> np.ndarray:
    """Affinely map point(s) into the unit cube; 1-D input gives a 1-D result."""
    bounds = bounds or DomainBounds()
    arr = _as_array(x)
    X = bounds.check(arr)
    U = (X - bounds.lo_array) / bounds.span
    return U[0] if arr.ndim == 1 else U


def denormalize(u, bounds: DomainBounds | None = None) -> np.ndarray:
    bounds = bounds or DomainBounds()
    U = np.asarray(u, dtype=float)
    return bounds.lo_array + U * bounds.span


# -- dataset persistence ---------------------------------------------------------------


def save_dataset(records: Iterable[TrialRecord], path, bounds: DomainBounds | None = None) -> None:
    bounds = bounds or DomainBounds()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        f.write(json.dumps({"schema": SCHEMA, "bounds": bounds.to_json()}) + "\n")
        for rec in records:
            f.write(json.dumps(rec.to_json()) + "\n")


def read_dataset(path) -> tuple[list[TrialRecord], DomainBounds]:
    """Load records plus the bounds stored in the header."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise DatasetError("empty file, missing header", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetError(f"invalid header: {exc.msg}", line=1) from None
    if not isinstance(header, dict) or "schema" not in header:
        raise DatasetError("header object lacks a 'schema' field", line=1)
    if header["schema"] != SCHEMA:
        raise SchemaVersionError(f"unsupported schema {header['schema']!r}, expected {SCHEMA!r}", line=1)
    bounds = DomainBounds.from_json(header.get("bounds", DomainBounds().to_json()))

    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            records.append(TrialRecord.from_json(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise DatasetError(f"invalid JSON: {exc.msg}", line=lineno) from None
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"invalid record: {exc}", line=lineno) from None
    return records, bounds


def load_dataset(path) -> list[TrialRecord]:
    return read_dataset(path)[0]


def records_to_arrays(records: Sequence[TrialRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Stack records into ``X`` of shape (n, 5) and ``y`` of shape (n,)."""
    if not records:
        return np.empty((0, N_DIMS)), np.empty(0)
    X = np.array([r.x.as_array() for r in records])
    y = np.array([r.y for r in records], dtype=float)
    return X, y
