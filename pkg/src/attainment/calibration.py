"""Linear maps from raw encoder latents to calibrated features.

Each feature dimension gets its own map ``feature = slope * raw + intercept``
fitted exactly through two endpoint readings (e.g. images of the flattest and
steepest ramp). Mapped values are clamped into the feature's domain bounds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .core import (
    DIM_NAMES,
    ConfigError,
    DomainBounds,
    FeatureParameterPoint,
    FeatureVector,
    GainVector,
    SchemaVersionError,
    dim_index,
)
from .region import AttainmentQuery, success_probability

CALIBRATION_SCHEMA = "attainment-calibration-v1"
FEATURE_DIMS = (0, 1)  # ice, angle
ICE_THRESHOLD = 0.5


class DegenerateEndpointsError(ValueError):
    pass


@dataclass(frozen=True)
class LinearMap:
    slope: float
    intercept: float
    source_endpoints: tuple
    feature_dim: int

    def __call__(self, raw):
        return self.slope * raw + self.intercept

    def to_json(self) -> dict:
        return {
            "feature": DIM_NAMES[self.feature_dim],
            "endpoints": [list(p) for p in self.source_endpoints],
            "slope": self.slope,
            "intercept": self.intercept,
        }

    @classmethod
    def from_json(cls, obj) -> "LinearMap":
        (r1, f1), (r2, f2) = obj["endpoints"]
        m = fit_linear_map((r1, f1), (r2, f2), dim_index(obj["feature"]))
        if not (math.isclose(m.slope, obj["slope"], rel_tol=1e-12, abs_tol=1e-12)
                and math.isclose(m.intercept, obj["intercept"], rel_tol=1e-12, abs_tol=1e-12)):
            raise ConfigError(f"stored coefficients for {obj['feature']} disagree with its endpoints")
        return m


def identity_map(dim: int) -> LinearMap:
    return LinearMap(1.0, 0.0, ((0.0, 0.0), (1.0, 1.0)), dim)


def fit_linear_map(p1, p2, dim) -> LinearMap:
    """Exact line through two ``(raw, feature)`` readings."""
    dim = dim_index(dim)
    if dim not in FEATURE_DIMS:
        raise ConfigError("linear maps apply to feature dimensions (ice, angle) only")
    (r1, f1), (r2, f2) = ((float(a), float(b)) for a, b in (p1, p2))
    if not all(math.isfinite(v) for v in (r1, f1, r2, f2)):
        raise ValueError("endpoint readings must be finite")
    if r1 == r2:
        raise DegenerateEndpointsError(f"both endpoints share the raw value {r1}; the map is undetermined")
    slope = (f2 - f1) / (r2 - r1)
    intercept = f1 - slope * r1
    return LinearMap(slope, intercept, ((r1, f1), (r2, f2)), dim)


def apply_map(m: LinearMap, raw: float, bounds: DomainBounds | None = None) -> tuple[float, bool]:
    """Mapped feature value, clamped into the feature's bounds, and whether clamping occurred."""
    raw = float(raw)
    if not math.isfinite(raw):
        raise ValueError("raw latent must be finite")
    lo, hi = (bounds or DomainBounds()).interval(m.feature_dim)
    value = m(raw)
    clamped = min(hi, max(lo, value))
    return clamped, clamped != value


def decode_binary(value: float) -> str:
    """Read a continuous ice coordinate as 'present' or 'absent' at the 0.5 midpoint."""
    return "present" if float(value) >= ICE_THRESHOLD else "absent"


def calibrated_predict(model, maps, raw_latents, theta: GainVector, eta_p: float = 0.8) -> tuple[float, bool]:
    """Success probability and attainability for raw encoder readings ``(ice_raw, angle_raw)``."""
    maps = _maps_by_dim(maps)
    q = AttainmentQuery(model, eta_p)
    ice, _ = apply_map(maps[0], raw_latents[0], q.bounds)
    angle, _ = apply_map(maps[1], raw_latents[1], q.bounds)
    x = FeatureParameterPoint(FeatureVector(ice, angle), theta)
    p = success_probability(q, x)
    return p, p >= q.eta_p


def _maps_by_dim(maps) -> dict[int, LinearMap]:
    if isinstance(maps, dict):
        maps = maps.values()
    by_dim = {m.feature_dim: m for m in maps}
    missing = [DIM_NAMES[d] for d in FEATURE_DIMS if d not in by_dim]
    if missing:
        raise ConfigError(f"missing linear map for {missing}")
    return by_dim


class FeatureCalibrator(TransformerMixin, BaseEstimator):
    """Transformer from raw latents ``(n, 2)`` to calibrated ``(ice, angle)`` features.

    ``fit(X_raw, Z)`` fits one map per column. With ``method="two_point"``
    each column must contain exactly two distinct raw readings; with
    ``method="lstsq"`` any number of readings is fitted by least squares.
    """

    def __init__(self, method="two_point", bounds=None):
        self.method = method
        self.bounds = bounds

    def fit(self, X, y):
        X = check_array(X, dtype=float)
        Z = check_array(y, dtype=float)
        if X.shape[1] != 2 or Z.shape != X.shape:
            raise ValueError("expected raw latents and features of shape (n, 2)")
        maps = []
        for col, dim in enumerate(FEATURE_DIMS):
            r, f = X[:, col], Z[:, col]
            if self.method == "two_point":
                pairs = list(dict.fromkeys(zip(r.tolist(), f.tolist())))
                if len(pairs) != 2:
                    raise ValueError(f"two_point needs exactly 2 distinct readings for {DIM_NAMES[dim]}, got {len(pairs)}")
                maps.append(fit_linear_map(pairs[0], pairs[1], dim))
            elif self.method == "lstsq":
                if np.ptp(r) == 0:
                    raise DegenerateEndpointsError(f"all raw readings equal for {DIM_NAMES[dim]}")
                slope, intercept = np.polyfit(r, f, 1)
                ends = ((float(r.min()), float(slope * r.min() + intercept)), (float(r.max()), float(slope * r.max() + intercept)))
                maps.append(LinearMap(float(slope), float(intercept), ends, dim))
            else:
                raise ConfigError(f"unknown method {self.method!r}")
        self.maps_ = tuple(maps)
        return self

    @classmethod
    def from_endpoints(cls, ice, angle, bounds=None) -> "FeatureCalibrator":
        """Build from ``((raw, 0), (raw, 1))`` ice and ``((raw, 0), (raw, 30))`` angle readings."""
        cal = cls(bounds=bounds)
        cal.maps_ = (fit_linear_map(*ice, 0), fit_linear_map(*angle, 1))
        return cal

    def transform(self, X):
        check_is_fitted(self, "maps_")
        X = check_array(X, dtype=float)
        out = np.empty_like(X)
        bounds = self.bounds or DomainBounds()
        for col, m in enumerate(self.maps_):
            lo, hi = bounds.interval(m.feature_dim)
            out[:, col] = np.clip(m.slope * X[:, col] + m.intercept, lo, hi)
        return out

    def to_json(self) -> dict:
        check_is_fitted(self, "maps_")
        return {"schema": CALIBRATION_SCHEMA, "maps": [m.to_json() for m in self.maps_]}

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "FeatureCalibrator":
        doc = json.loads(Path(path).read_text())
        if doc.get("schema") != CALIBRATION_SCHEMA:
            raise SchemaVersionError(f"unsupported calibration schema {doc.get('schema')!r}")
        cal = cls()
        by_dim = _maps_by_dim([LinearMap.from_json(m) for m in doc["maps"]])
        cal.maps_ = tuple(by_dim[d] for d in FEATURE_DIMS)
        return cal
