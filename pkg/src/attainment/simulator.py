"""Seeded 1-D surrogate of a PID-driven robot climbing a ramp.

A velocity PID loop tracks a fixed fraction of the wheel speed limit. Drive
acceleration is capped by the traction limit ``mu * g * cos(angle)``; demand
above that limit feeds a slip accumulator, and crossing 1 ends the trial.
The trial succeeds when the robot covers the ramp length within the horizon.
"""

from __future__ import annotations

import csv
import itertools
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import ConfigError, DomainBounds, FeatureParameterPoint, FeatureVector, GainVector, TrialRecord

INTEGRAL_CLAMP = 10.0

REFERENCE_ICE = (0.0, 1.0)
REFERENCE_ANGLES = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
REFERENCE_KP = (0.05, 0.2, 0.5, 0.8, 1.1, 1.4, 1.7, 2.0)
REFERENCE_KI = (0.0, 1e-5, 0.05)
REFERENCE_KD = (0.0, 0.25)
# keep 5 of every 8 points of the full 672-point product -> 420 points
REFERENCE_STRIDE = (8, 5)


@dataclass(frozen=True)
class SimConfig:
    ramp_length: float = 4.0  # m
    dt: float = 0.02  # s
    horizon: float = 30.0  # s
    v_max: float = 1.0  # m/s
    setpoint_fraction: float = 0.4
    mu_metal: float = 0.9
    mu_ice: float = 0.3
    friction_noise_std: float = 0.05
    slip_gain: float = 2.0
    drive_gain: float = 20.0  # commanded m/s^2 per unit of kp * (m/s error)
    g: float = 9.81

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ConfigError(f"{name} must be finite")
        if self.dt <= 0:
            raise ConfigError("dt must be > 0")
        if self.horizon < self.dt:
            raise ConfigError("horizon must be >= dt")
        if not 0 < self.setpoint_fraction <= 1:
            raise ConfigError("setpoint_fraction must be in (0, 1]")
        if not self.mu_ice < self.mu_metal:
            raise ConfigError("mu_ice must be < mu_metal")
        if self.friction_noise_std < 0 or self.ramp_length <= 0 or self.v_max <= 0:
            raise ConfigError("friction_noise_std >= 0, ramp_length > 0 and v_max > 0 required")
        if self.slip_gain < 0 or self.drive_gain <= 0 or self.g <= 0:
            raise ConfigError("slip_gain >= 0, drive_gain > 0 and g > 0 required")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class TrialTrace:
    time: list = field(default_factory=list)
    position: list = field(default_factory=list)
    velocity: list = field(default_factory=list)
    pid_output: list = field(default_factory=list)
    traction_limit: list = field(default_factory=list)
    slip: list = field(default_factory=list)
    outcome: int = 0
    failure_reason: str = "timeout"
    friction: float = float("nan")

    def rows(self):
        return zip(self.time, self.position, self.velocity, self.pid_output, self.traction_limit, self.slip)

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["time", "position", "velocity", "pid_output", "traction_limit", "slip"])
            writer.writerows(self.rows())


def trial_rng(seed: int, z: FeatureVector, theta: GainVector) -> np.random.Generator:
    """Generator keyed on the seed and the exact bit pattern of the point."""
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    coords = (z.ice, z.angle_deg, theta.kp, theta.ki, theta.kd)
    key = struct.unpack("<10I", struct.pack("<5d", *coords))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def run_trial(
    z: FeatureVector,
    theta: GainVector,
    seed: int = 0,
    cfg: SimConfig | None = None,
    trace: bool = False,
):
    """Simulate one ramp traversal.

    Returns the TrialRecord, or ``(record, TrialTrace)`` when ``trace`` is set.
    """
    cfg = cfg or SimConfig()
    rng = trial_rng(seed, z, theta)
    base_mu = cfg.mu_ice if z.ice_present else cfg.mu_metal
    mu = base_mu + cfg.friction_noise_std * rng.standard_normal()

    angle = math.radians(z.angle_deg)
    traction = mu * cfg.g * math.cos(angle)
    gravity = cfg.g * math.sin(angle)
    v_set = cfg.setpoint_fraction * cfg.v_max

    tr = TrialTrace(friction=mu) if trace else None
    v = pos = integral = slip = 0.0
    e_prev = v_set
    outcome, reason = 0, "timeout"
    for step in range(cfg.n_steps):
        e = v_set - v
        integral = min(INTEGRAL_CLAMP, max(-INTEGRAL_CLAMP, integral + e * cfg.dt))
        a_cmd = cfg.drive_gain * theta.kp * e + theta.ki * integral + theta.kd * (e - e_prev) / cfg.dt
        e_prev = e
        a = min(a_cmd, traction) - gravity
        slip += cfg.dt * cfg.slip_gain * max(0.0, a_cmd - traction) * (1.5 - mu)
        if slip < 1.0:
            v = min(cfg.v_max, max(0.0, v + a * cfg.dt))
            pos += v * cfg.dt
        if tr is not None:
            tr.time.append((step + 1) * cfg.dt)
            tr.position.append(pos)
            tr.velocity.append(v)
            tr.pid_output.append(a_cmd)
            tr.traction_limit.append(traction)
            tr.slip.append(slip)
        if slip >= 1.0:
            reason = "slip"
            break
        if pos >= cfg.ramp_length:
            outcome, reason = 1, "none"
            break

    record = TrialRecord(FeatureParameterPoint(z, theta), outcome, seed, "simulated")
    if tr is None:
        return record
    tr.outcome, tr.failure_reason = outcome, reason
    return record, tr


def reference_plan() -> list[tuple[FeatureVector, GainVector]]:
    """The default ~420-point sampling plan.

    Full product of ice x angle x kp x ki x kd (672 points) in nested order,
    keeping indices ``i`` with ``i % 8 < 5``.
    """
    period, keep = REFERENCE_STRIDE
    full = itertools.product(REFERENCE_ICE, REFERENCE_ANGLES, REFERENCE_KP, REFERENCE_KI, REFERENCE_KD)
    return [
        (FeatureVector(ice, angle), GainVector(kp, ki, kd))
        for i, (ice, angle, kp, ki, kd) in enumerate(full)
        if i % period < keep
    ]


def grid_plan(values: dict[str, Sequence[float]]) -> list[tuple[FeatureVector, GainVector]]:
    """Full product plan from per-dimension value lists (missing dims default to 0)."""
    order = ("ice", "angle", "kp", "ki", "kd")
    unknown = set(values) - set(order)
    if unknown:
        raise ConfigError(f"unknown grid dimensions: {sorted(unknown)}")
    axes = [list(values.get(name, [0.0])) for name in order]
    return [(FeatureVector(i, a), GainVector(p, q, r)) for i, a, p, q, r in itertools.product(*axes)]


def sample_dataset(
    plan: Iterable[tuple[FeatureVector, GainVector]],
    seeds: Sequence[int] = (0,),
    cfg: SimConfig | None = None,
    bounds: DomainBounds | None = None,
) -> list[TrialRecord]:
    """One simulated trial per (point, seed) pair, in plan order then seed order."""
    cfg = cfg or SimConfig()
    bounds = bounds or DomainBounds()
    plan = list(plan)
    for z, theta in plan:
        bounds.check(FeatureParameterPoint(z, theta).as_array())
    return [run_trial(z, theta, int(s), cfg) for z, theta in plan for s in seeds]
