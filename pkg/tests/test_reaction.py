import numpy as np
import pytest

from cardiotwin.activation import ActivationMap
from cardiotwin.errors import CalibrationError, ValidationError
from cardiotwin.geometry import VentricularCoords
from cardiotwin.reaction import (ApdCalibration, ApdParams, ReactionParams,
                                 apd_field, calibrate_ms_for_apd,
                                 measure_apd90, simulate_transmembrane)
from cardiotwin.reaction import _simulate_single_cell


def _coords(n=50, seed=0):
    rng = np.random.default_rng(seed)
    return VentricularCoords(
        tm=rng.uniform(0, 1, n),
        ab=rng.uniform(0, 1, n),
        rt=rng.uniform(0, 1, n),
        tv=np.zeros(n, dtype=np.uint8),
    )


# ---------------------------------------------------------------------------
# APD field
# ---------------------------------------------------------------------------

def test_apd_endpoints_exact():
    c = _coords(200)
    apd = apd_field(c, None, ApdParams())
    q = 0.7 * c.ab + 0.3 * c.tm
    assert apd[np.argmin(q)] == 189.4
    assert apd[np.argmax(q)] == 330.7


def test_bz_factor_exact():
    c = _coords(200)
    p = ApdParams()
    base = apd_field(c, None, p)
    labels = np.zeros(200, dtype=np.uint8)
    labels[17] = 2
    labels[104] = 2
    with_bz = apd_field(c, labels, p)
    assert with_bz[17] == base[17] * 1.3
    assert with_bz[104] == base[104] * 1.3
    untouched = labels == 0
    assert np.array_equal(with_bz[untouched], base[untouched])


def test_tm_only_gradient():
    c = _coords(300)
    apd = apd_field(c, None, ApdParams(g_ab=0.0, g_tm=1.0))
    order = np.argsort(c.tm)
    assert (np.diff(apd[order]) >= 0).all()
    # Equal tm -> equal APD.
    c.tm[:10] = 0.37
    apd = apd_field(c, None, ApdParams(g_ab=0.0, g_tm=1.0))
    assert np.unique(apd[:10]).size == 1


def test_constant_q_maps_to_midpoint_with_warning(caplog):
    c = _coords(50)
    c.ab[:] = 0.5
    c.tm[:] = 0.5
    import logging

    with caplog.at_level(logging.WARNING, logger="cardiotwin.reaction"):
        apd = apd_field(c, None, ApdParams())
    assert np.allclose(apd, 0.5 * (189.4 + 330.7))
    assert any("constant" in r.message for r in caplog.records)


def test_apd_params_validation():
    with pytest.raises(ValidationError):
        ApdParams(apd_min=300.0, apd_max=200.0)
    with pytest.raises(ValidationError):
        ApdParams(bz_apd_factor=0.9)


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

def test_calibration_monotone_in_target():
    tau_lo = calibrate_ms_for_apd(189.4)
    tau_hi = calibrate_ms_for_apd(330.7)
    assert tau_hi > tau_lo


@pytest.mark.parametrize("target", [189.4, 260.0, 330.7])
def test_calibration_closed_loop(target):
    p = ReactionParams()
    tau = calibrate_ms_for_apd(target, p)
    trace, times = _simulate_single_cell(tau, p, 3 * target + 100)
    assert abs(measure_apd90(trace, times) - target) < 2.0


def test_calibration_out_of_range_rejected():
    with pytest.raises(CalibrationError):
        calibrate_ms_for_apd(90.0)
    with pytest.raises(CalibrationError):
        calibrate_ms_for_apd(501.0)


def test_calibration_table_matches_bisection(calibration):
    for target in (200.0, 300.0):
        assert abs(float(calibration.tau_close(target))
                   - calibrate_ms_for_apd(target)) < 3.0


# ---------------------------------------------------------------------------
# Transmembrane simulation
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_sim(calibration):
    rng = np.random.default_rng(3)
    n = 120
    t_a = rng.uniform(0.0, 60.0, n)
    apd = rng.uniform(200.0, 320.0, n)
    p = ReactionParams()
    traces = simulate_transmembrane(ActivationMap(t_ms=t_a), apd, p,
                                    calibration=calibration)
    return t_a, apd, traces


def test_upstroke_within_five_ms_of_activation(small_sim):
    t_a, _, traces = small_sim
    crossed = traces.u >= 0.5
    assert crossed.any(axis=1).all()
    up_t = traces.times_ms[np.argmax(crossed, axis=1)]
    assert (up_t >= t_a).all()
    assert (up_t <= t_a + 5.0).all()


def test_resting_before_activation(small_sim):
    t_a, _, traces = small_sim
    for i in range(t_a.shape[0]):
        pre = traces.times_ms < t_a[i] - traces.sample_period_ms
        assert (traces.u[i][pre] < 0.05).all()


def test_apd90_matches_field(small_sim):
    t_a, apd, traces = small_sim
    for i in range(t_a.shape[0]):
        measured = measure_apd90(traces.u[i], traces.times_ms)
        assert abs(measured - apd[i]) < 5.0


def test_bounded_voltage_and_gate(calibration):
    t_a = np.linspace(0.0, 50.0, 64)
    apd = np.linspace(189.4, 330.7, 64)
    p = ReactionParams()
    traces = simulate_transmembrane(ActivationMap(t_ms=t_a), apd, p,
                                    calibration=calibration)
    assert traces.u.min() >= -0.05
    assert traces.u.max() <= 1.05


def test_repolarization_ordering_equal_activation(calibration):
    t_a = np.full(2, 10.0)
    apd = np.array([200.0, 320.0])
    traces = simulate_transmembrane(ActivationMap(t_ms=t_a), apd,
                                    ReactionParams(), calibration=calibration)
    # Larger APD recrosses 0.1 downward later.
    def down_cross(u, times):
        peak = int(np.argmax(u))
        below = np.where(u[peak:] < 0.1)[0]
        return times[peak + below[0]]

    t_short = down_cross(traces.u[0], traces.times_ms)
    t_long = down_cross(traces.u[1], traces.times_ms)
    assert t_long > t_short


def test_halving_dt_changes_apd90_below_1ms(calibration):
    t_a = np.array([5.0, 20.0, 40.0])
    apd = np.array([200.0, 260.0, 320.0])
    p1 = ReactionParams(dt=0.1)
    p2 = ReactionParams(dt=0.05)
    tr1 = simulate_transmembrane(ActivationMap(t_ms=t_a), apd, p1,
                                 calibration=ApdCalibration(p1))
    tr2 = simulate_transmembrane(ActivationMap(t_ms=t_a), apd, p2,
                                 calibration=ApdCalibration(p2), record_stride=20)
    for i in range(3):
        a1 = measure_apd90(tr1.u[i], tr1.times_ms)
        a2 = measure_apd90(tr2.u[i], tr2.times_ms)
        assert abs(a1 - a2) < 1.0


def test_activation_shift_translates_trace_exactly(calibration):
    # Shifting t_a by an exact multiple of dt translates the recorded trace
    # sample-for-sample (stimulus is indexed on the integration grid).
    p = ReactionParams()
    k = 30  # shift by 30 steps = 3 ms = 3 recorded samples at stride 10
    t_a = np.array([12.0, 12.0 + k * p.dt])
    apd = np.array([250.0, 250.0])
    traces = simulate_transmembrane(ActivationMap(t_ms=t_a), apd, p,
                                    calibration=calibration)
    shift = k // 10
    a = traces.u[0][:-shift]
    b = traces.u[1][shift:]
    assert np.array_equal(a, b)


def test_scenario_independence_far_from_scar(calibration):
    # Diffusion-less model: a node's trace depends only on its stimulus
    # start index and APD, so nodes whose activation time is unchanged
    # between a healthy and an infarcted run produce identical traces.
    p = ReactionParams()
    rng = np.random.default_rng(8)
    n = 60
    t_a_healthy = rng.uniform(0.0, 50.0, n)
    t_a_scar = t_a_healthy.copy()
    delayed = rng.choice(n, 20, replace=False)
    t_a_scar[delayed] += rng.uniform(5.0, 30.0, 20)
    apd = rng.uniform(200.0, 320.0, n)
    tr_h = simulate_transmembrane(ActivationMap(t_ms=t_a_healthy), apd, p,
                                  calibration=calibration)
    tr_s = simulate_transmembrane(ActivationMap(t_ms=t_a_scar), apd, p,
                                  calibration=calibration)
    unchanged = np.setdiff1d(np.arange(n), delayed)
    assert np.array_equal(tr_h.u[unchanged], tr_s.u[unchanged])
    assert not np.array_equal(tr_h.u[delayed], tr_s.u[delayed])


def test_unreached_node_rejected(calibration):
    t_a = np.array([0.0, np.inf])
    with pytest.raises(ValidationError):
        simulate_transmembrane(ActivationMap(t_ms=t_a), np.array([250.0, 250.0]),
                               ReactionParams(), calibration=calibration)


def test_reaction_params_validation():
    with pytest.raises(ValidationError):
        ReactionParams(dt=0.0)
    with pytest.raises(ValidationError):
        ReactionParams(u_gate=1.5)
