import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.optimize import brentq

from siqkd.channel import ChannelParams, DetectorParams, multi_photon_probability
from siqkd.circuits import TimebinParams
from siqkd.pipeline import (
    CSV_HEADER,
    ProtocolModel,
    Scenario,
    analytic_row,
    calibrate,
    cutoff_distance,
    monte_carlo_row,
    sweep_distance,
)
from siqkd.protocol import ProtocolConfig, QkdProtocol

COW = Scenario(
    protocol=ProtocolConfig(decoy_fraction=0.1, monitor_coherence=0.98),
    channel=ChannelParams(20, extra_loss_db=10),
)
POL = Scenario(
    protocol=ProtocolConfig(protocol=QkdProtocol.BB84_POL, clock_hz=1e9, mu=0.1),
    channel=ChannelParams(20),
    detector=DetectorParams(misalignment=0.01),
)
TB = Scenario(
    protocol=ProtocolConfig(protocol=QkdProtocol.BB84_TB, clock_hz=2e8, mu=0.1),
    channel=ChannelParams(10),
)
ALL = {"cow": COW, "pol": POL, "tb": TB}


def test_header():
    assert CSV_HEADER == (
        "distance_km", "loss_db", "click_prob", "qber", "visibility",
        "raw_rate_hz", "secret_fraction", "secret_rate_hz",
    )


@pytest.mark.parametrize("name", ALL)
def test_weights_are_probability_tables(name):
    m = ProtocolModel(ALL[name])
    assert m.probabilities.sum() == pytest.approx(1)
    assert np.all(m.weights >= 0)
    assert m.weights.shape[1:] == (m.layout.n_slots, m.layout.n_ports)


@pytest.mark.parametrize("name", ALL)
def test_monte_carlo_agrees_with_analytic(name):
    sc = ALL[name]
    n = 200_000
    exact = analytic_row(sc)
    row, stats, _ = monte_carlo_row(sc, n, seed=123)
    p = exact.click_prob
    assert abs(row.click_prob - p) < 5 * math.sqrt(p * (1 - p) / n)
    q = exact.qber
    assert abs(row.qber - q) < 5 * math.sqrt(q * (1 - q) / stats.n_sifted)


def test_cow_visibility_includes_monitor_coherence():
    row = analytic_row(replace(COW, channel=ChannelParams(0)))
    assert 0.95 < row.visibility <= 0.98


def test_zero_misalignment_pol_qber_is_state_error():
    sc = replace(
        POL,
        protocol=replace(POL.protocol, mu=1e-6),
        detector=DetectorParams(dark_rate_cps=0),
        channel=ChannelParams(0),
    )
    m = ProtocolModel(sc)
    state_err = m.weights[0][0, 1] / m.weights[0][0, :2].sum()
    assert analytic_row(sc).qber == pytest.approx(state_err, rel=1e-3)


def test_dark_counts_dominate_at_long_range():
    assert analytic_row(POL.at_distance(400)).qber == pytest.approx(0.5, abs=0.05)


@pytest.mark.parametrize("name", ALL)
def test_sweep_is_monotone(name):
    res = sweep_distance(ALL[name], np.arange(0, 160, 10))
    raw = [r.raw_rate_hz for r in res.rows]
    sec = [r.secret_rate_hz for r in res.rows]
    q = [r.qber for r in res.rows]
    assert all(a >= b for a, b in zip(raw, raw[1:]))
    assert all(a >= b for a, b in zip(sec, sec[1:]))
    assert all(a <= b + 1e-15 for a, b in zip(q, q[1:]))


def test_sweep_validates_distances():
    with pytest.raises(ValueError):
        sweep_distance(COW, [10, 0])
    with pytest.raises(ValueError):
        sweep_distance(COW, [-1, 0])


def test_bb84_cutoff_is_finite_and_before_tagging_limit():
    cut = cutoff_distance(POL)
    assert cut is not None and cut > 0
    sc = POL
    pd = ProtocolModel(sc).dark_probability
    mu, eta = sc.protocol.mu, sc.detector.efficiency

    def excess(km):
        t = 10 ** (-0.2 * km / 10)
        click = 1 - (1 - pd) ** 4 * math.exp(-mu * eta * t)
        return click - multi_photon_probability(mu)

    limit = brentq(excess, 0, 1000)
    assert cut <= limit
    assert analytic_row(POL.at_distance(cut + 0.01)).secret_rate_hz == 0
    assert analytic_row(POL.at_distance(cut - 0.01)).secret_rate_hz > 0


def test_timebin_period_must_fit_three_slots():
    bad = replace(TB, protocol=replace(TB.protocol, clock_hz=3e8))
    with pytest.raises(ValueError, match="three"):
        ProtocolModel(bad)


def test_timebin_pulse_must_fit_slot():
    with pytest.raises(ValueError):
        ProtocolModel(replace(TB, timebin=TimebinParams(pulse_fwhm=2e-9)))


@pytest.mark.parametrize("parameter, target", [("extra_loss_db", 0.02), ("mu", 0.02), ("misalignment", 0.03)])
def test_calibrate_hits_target(parameter, target):
    sc, value = calibrate(POL, target, 20.0, parameter)
    assert analytic_row(sc.at_distance(20)).qber == pytest.approx(target, abs=1e-6)
    assert value > 0


def test_calibrate_unreachable():
    with pytest.raises(ValueError, match="not reachable"):
        calibrate(POL, 0.001, 20.0, "extra_loss_db")
    with pytest.raises(ValueError):
        calibrate(POL, 0.02, 20.0, "efficiency")
