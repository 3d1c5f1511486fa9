import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from attainment.calibration import (
    DegenerateEndpointsError,
    FeatureCalibrator,
    LinearMap,
    apply_map,
    calibrated_predict,
    decode_binary,
    fit_linear_map,
    identity_map,
)
from attainment.core import ConfigError, DomainBounds, GainVector, SchemaVersionError, denormalize
from attainment.gp import AttainmentGP, GpHyperparams
from attainment.region import AttainmentQuery, success_probability

B = DomainBounds()

ANGLE_READINGS = ((0.095, 0.0), (-1.63, 30.0))
ICE_READINGS = ((0.35, 0.0), (1.26, 1.0))


def small_gp():
    rng = np.random.default_rng(8)
    U = rng.uniform(size=(40, 5))
    y = (U[:, 1] + 0.5 * U[:, 0] < 0.8).astype(float)
    return AttainmentGP(hyperparams=GpHyperparams((0.3, 0.3, 0.5, 2, 2), 0.5, 0.01)).fit(denormalize(U, B), y)


GP = small_gp()


def test_angle_map_coefficients():
    m = fit_linear_map(*ANGLE_READINGS, "angle")
    assert m.slope == pytest.approx(30 / -1.725, abs=1e-12)
    assert m.slope == pytest.approx(-17.39, abs=0.01)
    assert m.intercept == pytest.approx(1.6522, abs=1e-4)
    assert m.intercept == pytest.approx(1.65, abs=0.01)


def test_ice_map_coefficients():
    m = fit_linear_map(*ICE_READINGS, "ice")
    assert m.slope == pytest.approx(1.10, abs=0.01)
    assert m.intercept == pytest.approx(-0.38, abs=0.01)


def test_identity_from_unit_endpoints():
    m = fit_linear_map((0, 0), (1, 1), 0)
    assert (m.slope, m.intercept) == (1.0, 0.0)
    assert m == identity_map(0)


def test_equal_raw_endpoints_rejected():
    with pytest.raises(DegenerateEndpointsError):
        fit_linear_map((0.3, 0), (0.3, 1), "ice")


def test_gain_dims_have_no_maps():
    with pytest.raises(ConfigError):
        fit_linear_map((0, 0), (1, 1), "kp")


@pytest.mark.parametrize("raw, expected", [(0.095, 0.0), (-1.63, 30.0), (-0.7675, 15.0)])
def test_angle_map_values(raw, expected):
    value, clamped = apply_map(fit_linear_map(*ANGLE_READINGS, 1), raw)
    assert value == pytest.approx(expected, abs=1e-12)
    assert not clamped


def test_clamping_is_flagged():
    m = fit_linear_map(*ANGLE_READINGS, 1)
    assert apply_map(m, 0.5) == (0.0, True)
    assert apply_map(m, -3.0) == (30.0, True)
    with pytest.raises(ValueError):
        apply_map(m, float("nan"))


@pytest.mark.parametrize("value, label", [(1.0, "present"), (0.0, "absent"), (0.53, "present"), (0.4999, "absent"), (0.5, "present")])
def test_decode_binary(value, label):
    assert decode_binary(value) == label


finite = st.floats(-100, 100)


@given(finite, finite, finite, finite)
def test_endpoint_exactness(r1, f1, r2, f2):
    if r1 == r2:
        return
    m = fit_linear_map((r1, f1), (r2, f2), 1)
    assert abs(m(r1) - f1) <= 1e-12 * max(1.0, abs(f1), abs(m.slope * r1))
    assert abs(m(r2) - f2) <= 1e-12 * max(1.0, abs(f2), abs(m.slope * r2))


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0, 1))
def test_linearity_pre_clamp(r1, r2, alpha):
    if abs(r1 - r2) < 1e-3:
        return
    m = fit_linear_map((r1, 0.0), (r2, 30.0), 1)
    assert m(alpha * r1 + (1 - alpha) * r2) == pytest.approx(alpha * 0.0 + (1 - alpha) * 30.0, abs=1e-9)


def test_endpoint_composition():
    maps = [fit_linear_map(*ICE_READINGS, 0), fit_linear_map(*ANGLE_READINGS, 1)]
    theta = GainVector(0.8, 0.01, 0.1)
    p, ok = calibrated_predict(GP, maps, (0.35, 0.095), theta)
    expected = success_probability(AttainmentQuery(GP), [0, 0, 0.8, 0.01, 0.1])
    assert p == expected
    assert ok == (expected >= 0.8)


points = st.tuples(st.floats(0, 1), st.floats(0, 30), st.floats(0, 2), st.floats(0, 0.1), st.floats(0, 0.5))


@given(points)
def test_identity_maps_match_uncalibrated(x):
    p, ok = calibrated_predict(GP, [identity_map(0), identity_map(1)], x[:2], GainVector(*x[2:]), 0.6)
    q = AttainmentQuery(GP, 0.6)
    assert p == success_probability(q, np.array(x))
    assert ok == (p >= 0.6)


def test_calibrated_predict_needs_both_maps():
    with pytest.raises(ConfigError):
        calibrated_predict(GP, [identity_map(0)], (0, 0), GainVector(1, 0, 0))


def test_transformer_two_point():
    X = np.array([[0.35, 0.095], [1.26, -1.63]])
    Z = np.array([[0.0, 0.0], [1.0, 30.0]])
    cal = FeatureCalibrator().fit(X, Z)
    np.testing.assert_allclose(cal.transform(X), Z, atol=1e-12)
    np.testing.assert_allclose(cal.transform([[2.0, 1.0]]), [[1.0, 0.0]])
    assert cal.get_params() == {"method": "two_point", "bounds": None}
    ends = FeatureCalibrator.from_endpoints(ICE_READINGS, ANGLE_READINGS)
    assert ends.maps_ == cal.maps_


def test_transformer_lstsq_recovers_line():
    rng = np.random.default_rng(0)
    raw = rng.uniform(-1, 1, size=(50, 2))
    Z = np.c_[0.5 * raw[:, 0] + 0.5, -10 * raw[:, 1] + 15]
    cal = FeatureCalibrator(method="lstsq").fit(raw, Z)
    assert cal.maps_[0].slope == pytest.approx(0.5)
    assert cal.maps_[1].intercept == pytest.approx(15)
    with pytest.raises(ValueError):
        FeatureCalibrator().fit(raw, Z)


def test_calibration_file_roundtrip(tmp_path):
    cal = FeatureCalibrator.from_endpoints(ICE_READINGS, ANGLE_READINGS)
    cal.save(tmp_path / "c.json")
    doc = json.loads((tmp_path / "c.json").read_text())
    assert [m["feature"] for m in doc["maps"]] == ["ice", "angle"]
    assert doc["maps"][1]["endpoints"] == [[0.095, 0.0], [-1.63, 30.0]]
    assert FeatureCalibrator.load(tmp_path / "c.json").maps_ == cal.maps_

    doc["maps"][0]["slope"] = 2.0
    (tmp_path / "c.json").write_text(json.dumps(doc))
    with pytest.raises(ConfigError):
        FeatureCalibrator.load(tmp_path / "c.json")
    doc["schema"] = "other"
    (tmp_path / "c.json").write_text(json.dumps(doc))
    with pytest.raises(SchemaVersionError):
        FeatureCalibrator.load(tmp_path / "c.json")


def test_linear_map_json():
    m = fit_linear_map(*ICE_READINGS, 0)
    assert LinearMap.from_json(m.to_json()) == m
