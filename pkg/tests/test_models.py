import math

import numpy as np
import pytest

from lfmkit.models import ballistic, tf


# --- transcription-factor model ---

def test_links_at_zero():
    assert tf.tf_link("saturation", 1.0, np.array([0.0]))[0] == pytest.approx(0.5)
    assert tf.tf_link("repression", 1.0, np.array([0.0]))[0] == pytest.approx(0.5)
    assert tf.tf_link("exponential", 1.0, np.array([0.0]))[0] == pytest.approx(1.0)


def test_links_overflow_safe():
    u = np.array([-1000.0, -50.0, 0.0, 50.0, 1000.0])
    for gamma in (0.1, 1.0, 7.0):
        s = tf.tf_link("saturation", gamma, u)
        assert np.all(np.isfinite(s)) and np.all(s >= 0.0) and np.all(s <= 1.0)
        # strictly inside (0, 1) wherever the tails are representable
        mid = tf.tf_link("saturation", gamma, np.array([-30.0, 30.0]))
        assert np.all(mid > 0.0) and np.all(mid < 1.0)
        assert s[-1] == pytest.approx(1.0, abs=1e-12)
        r = tf.tf_link("repression", gamma, u)
        assert np.all(np.isfinite(r)) and np.all(r >= 0.0)
        assert r[0] == pytest.approx(1.0 / gamma, rel=1e-12)
        assert r[-1] == pytest.approx(0.0, abs=1e-12)


def test_exponential_clamp_warns():
    with pytest.warns(RuntimeWarning, match="clamped"):
        out = tf.tf_link("exponential", 1.0, np.array([100.0]))
    assert out[0] == pytest.approx(math.exp(30.0))


def test_unknown_link_rejected():
    with pytest.raises(ValueError):
        tf.tf_link("linear", 1.0, np.array([0.0]))
    with pytest.raises(ValueError):
        tf.TfParams([0.1], [1.0], [[1.0]], [0.0], link="nope")


def test_tf_drift_example():
    params = tf.TfParams(basal=[0.05], decay=[1.0], sensitivity=[[1.0]],
                         init_levels=[0.0], link="saturation", gamma=1.0)
    out = tf.tf_drift(params, np.array([[0.0]]), np.array([[0.0]]), 0.0)
    assert out[0, 0] == pytest.approx(0.55)


def test_tf_drift_equilibrium():
    params = tf.TfParams(basal=[0.05, 0.2], decay=[1.3, 0.8],
                         sensitivity=[[0.5], [0.9]], init_levels=[0.0, 0.0],
                         link="repression", gamma=0.5)
    u = np.array([[0.7]])
    g = tf.tf_link("repression", 0.5, u)
    x_eq = (params.basal + g @ params.sensitivity.T) / params.decay
    out = tf.tf_drift(params, x_eq, u, 0.0)
    np.testing.assert_allclose(out, np.zeros((1, 2)), atol=1e-14)


def test_sample_params_protocol_ranges():
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = tf.sample_params(rng, 3, "saturation", 1.0)
        assert np.all((p.basal >= 0) & (p.basal <= 0.1))
        assert np.all((p.decay >= 0) & (p.decay <= 2.0))
        assert np.all((p.init_levels >= -0.1) & (p.init_levels <= 0.1))
        assert np.all((p.sensitivity >= 0) & (p.sensitivity <= 1.0))
        assert p.n_genes == 3 and p.n_forces == 1


def test_tf_measurement_shape():
    params = tf.TfParams(basal=[0.1] * 3, decay=[1.0] * 3,
                         sensitivity=[[1.0]] * 3, init_levels=[0.0] * 3,
                         link="exponential")
    meas = tf.measurement(params, 0.1)
    X = np.zeros((4, 5))
    X[:, :3] = np.arange(12).reshape(4, 3)
    np.testing.assert_array_equal(meas.h(X), X[:, :3])
    np.testing.assert_allclose(meas.R, 0.01 * np.eye(3))


# --- ballistic model ---

def test_ballistic_drift_zero_velocity():
    p = ballistic.BallisticParams()
    u = np.array([[12.0]])
    out = ballistic.ballistic_drift(p, np.array([[65000.0, 0.0]]), u, 0.0)
    assert out[0, 0] == 0.0
    assert out[0, 1] == pytest.approx(9.8 + 12.0)


def test_ballistic_drag_value():
    p = ballistic.BallisticParams()
    want = -4.49e-4 * math.exp(-1.49e-4 * 65000.0) * 3000.0 ** 2
    got = ballistic.drag(p, 65000.0, 3000.0)
    assert got == pytest.approx(want, rel=1e-12)
    assert got == pytest.approx(-0.2514, abs=1e-4)
    out = ballistic.ballistic_drift(p, np.array([[65000.0, 3000.0]]),
                                    np.array([[0.0]]), 0.0)
    assert out[0, 0] == -3000.0
    assert out[0, 1] == pytest.approx(want + 9.8, rel=1e-12)


def test_range_measurement_values():
    p = ballistic.BallisticParams()
    assert ballistic.range_measurement(p, 30.0) == pytest.approx(30000.0)
    assert ballistic.range_measurement(p, 0.0) == pytest.approx(
        math.sqrt(30000.0 ** 2 + 30.0 ** 2))
    d = 1234.5
    up = ballistic.range_measurement(p, p.sensor_y + d)
    dn = ballistic.range_measurement(p, p.sensor_y - d)
    assert up == pytest.approx(dn, rel=1e-15)


def test_ballistic_mechanistic_wiring():
    p = ballistic.BallisticParams()
    mech = ballistic.mechanistic(p)
    assert mech.dim_x == 2 and mech.n_forces == 1
    np.testing.assert_allclose(mech.dispersion, np.diag([50.0, 10.0]))
    np.testing.assert_allclose(mech.q_diag, [1.0, 1.0])
    np.testing.assert_allclose(mech.force_dispersion, [[0.0], [1.0]])


def test_ballistic_measurement_kinds():
    p = ballistic.BallisticParams()
    rng = np.random.default_rng(0)
    X = rng.standard_normal((3, 5)) * 1000.0
    m_range = ballistic.measurement(p, "range")
    np.testing.assert_allclose(m_range.h(X)[:, 0],
                               ballistic.range_measurement(p, X[:, 0]))
    m_alt = ballistic.measurement(p, "altitude")
    np.testing.assert_array_equal(m_alt.h(X), X[:, :1])
    with pytest.raises(ValueError):
        ballistic.measurement(p, "bearing")


def test_ballistic_params_validation():
    with pytest.raises(ValueError):
        ballistic.BallisticParams(alpha=-1.0)
