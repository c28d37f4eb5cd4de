"""Scenario evaluation: circuits + channel + detectors -> sifted statistics and key rates.

The analytic path and the Monte Carlo path share one description of each
protocol (:class:`ProtocolModel`): symbol alphabet, symbol probabilities and
per-cell detection weights. Only the way clicks are obtained differs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .channel import (
    ChannelParams,
    DetectorParams,
    chunk_rng,
    CHUNK_SYMBOLS,
    dark_click_probability,
    fibre_transmittance,
    sample_detection_events,
)
from .circuits import (
    Basis,
    Bb84State,
    CarverParams,
    CowSymbol,
    TimebinParams,
    carver_operating_point,
    check_slot_timing,
    prepare_bb84_path_state,
    timebin_encode,
    timebin_receive,
)
from .modulators import CdmParams, TopmParams
from .protocol import (
    COW_LAYOUT,
    POL_LAYOUT,
    TB_LAYOUT,
    KeyRateResult,
    Layout,
    ProtocolConfig,
    QkdProtocol,
    SecurityBound,
    SiftedStats,
    default_bound,
    secret_key_rate,
    sift_bb84,
    sift_cow,
    sift_outcome_probabilities,
)

CSV_HEADER = (
    "distance_km",
    "loss_db",
    "click_prob",
    "qber",
    "visibility",
    "raw_rate_hz",
    "secret_fraction",
    "secret_rate_hz",
)


@dataclass(frozen=True)
class Scenario:
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    channel: ChannelParams = field(default_factory=ChannelParams)
    detector: DetectorParams = field(default_factory=DetectorParams)
    topm: TopmParams = field(default_factory=TopmParams)
    cdm: CdmParams = field(default_factory=CdmParams)
    carver: CarverParams = field(default_factory=CarverParams)
    timebin: TimebinParams = field(default_factory=TimebinParams)

    def at_distance(self, km: float) -> "Scenario":
        return replace(self, channel=replace(self.channel, length_km=km))


@dataclass(frozen=True)
class ScenarioRow:
    distance_km: float
    loss_db: float
    click_prob: float
    qber: float
    visibility: float
    raw_rate_hz: float
    secret_fraction: float
    secret_rate_hz: float

    def as_tuple(self):
        return tuple(getattr(self, k) for k in CSV_HEADER)


def _misalign(weights: np.ndarray, pairs, e: float) -> np.ndarray:
    """Move a fraction ``e`` of the signal between the cells of each outcome pair."""
    out = weights.copy()
    for a, b in pairs:
        out[a] = (1 - e) * weights[a] + e * weights[b]
        out[b] = (1 - e) * weights[b] + e * weights[a]
    return out


class ProtocolModel:
    """Symbol alphabet and detection weights for one scenario.

    ``weights[k]`` is the expected number of detected photons per cell for
    symbol ``k`` at unit ``mu * transmittance * efficiency``.
    """

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        cfg = scenario.protocol
        self.protocol = cfg.protocol
        e = scenario.detector.misalignment
        if self.protocol is QkdProtocol.COW:
            self._init_cow(e)
        elif self.protocol is QkdProtocol.BB84_POL:
            self._init_pol(e)
        else:
            self._init_tb(e)
        self.probabilities = np.asarray(self.probabilities, float)
        self.weights = np.asarray(self.weights, float)

    # per-protocol set-up -----------------------------------------------------

    def _init_cow(self, e):
        sc = self.scenario
        cfg = sc.protocol
        self.layout: Layout = COW_LAYOUT
        self.slot_duration = 1 / cfg.clock_hz
        check_slot_timing(sc.carver.pulse_fwhm, self.slot_duration)
        point = carver_operating_point(sc.cdm, sc.carver)
        self.carver_point = point
        dark = point.dark / point.bright
        self.symbols = [CowSymbol.BIT0, CowSymbol.BIT1, CowSymbol.DECOY]
        f = cfg.decoy_fraction
        self.probabilities = [(1 - f) / 2, (1 - f) / 2, f]
        # complex slot amplitudes relative to a bright pulse
        self.amplitudes = {
            s: tuple(1.0 + 0j if lit else dark for lit in s.slots) for s in self.symbols
        }
        weights = []
        for s in self.symbols:
            w = np.zeros((2, 3))
            w[:, 0] = [abs(a) ** 2 * cfg.data_split for a in self.amplitudes[s]]
            weights.append(_misalign(w, [((0, 0), (1, 0))], e))
        self.weights = weights
        self.basis = ["Z", "Z", None]
        self.bit = [0, 1, None]

    def _init_pol(self, e):
        sc = self.scenario
        pz, px = sc.protocol.basis_probabilities
        self.layout = POL_LAYOUT
        self.slot_duration = 1 / sc.protocol.clock_hz
        self.symbols = Bb84State.all()
        self.probabilities = [pz / 2, pz / 2, px / 2, px / 2]
        self.prepared = [
            prepare_bb84_path_state(s, sc.topm, sc.cdm).normalized() for s in self.symbols
        ]
        z0, z1 = Bb84State(Basis.Z, 0).ideal(), Bb84State(Basis.Z, 1).ideal()
        x0, x1 = Bb84State(Basis.X, 0).ideal(), Bb84State(Basis.X, 1).ideal()
        weights = []
        for psi in self.prepared:
            proj = lambda ref: abs(ref.amp0.conjugate() * psi.amp0 + ref.amp1.conjugate() * psi.amp1) ** 2
            w = np.array([[pz * proj(z0), pz * proj(z1), px * proj(x0), px * proj(x1)]])
            weights.append(_misalign(w, [((0, 0), (0, 1)), ((0, 2), (0, 3))], e))
        self.weights = weights
        self.basis = [s.basis.value for s in self.symbols]
        self.bit = [s.bit for s in self.symbols]

    def _init_tb(self, e):
        sc = self.scenario
        pz, px = sc.protocol.basis_probabilities
        self.layout = TB_LAYOUT
        self.slot_duration = sc.timebin.bin_separation
        period = 1 / sc.protocol.symbol_rate_hz
        if period < 3 * sc.timebin.bin_separation * (1 - 1e-9):
            raise ValueError(
                f"symbol period {period:.4g} s is shorter than the three receiver slots "
                f"({3 * sc.timebin.bin_separation:.4g} s)"
            )
        check_slot_timing(sc.timebin.pulse_fwhm, sc.timebin.bin_separation)
        self.symbols = Bb84State.all()
        self.probabilities = [pz / 2, pz / 2, px / 2, px / 2]
        self.prepared = []
        weights = []
        for s in self.symbols:
            st = timebin_encode(s, sc.topm, sc.cdm, sc.timebin)
            n = math.sqrt(st.norm2)
            st = replace(st, amp_early=st.amp_early / n, amp_late=st.amp_late / n)
            self.prepared.append(st)
            w = timebin_receive(st)
            weights.append(_misalign(w, [((0, 0), (2, 0)), ((0, 1), (2, 1)), ((1, 0), (1, 1))], e))
        self.weights = weights
        self.basis = [s.basis.value for s in self.symbols]
        self.bit = [s.bit for s in self.symbols]

    # shared quantities ---------------------------------------------------------

    @cached_property
    def dark_probability(self) -> float:
        return dark_click_probability(replace(self.scenario.detector, slot_duration=self.slot_duration))

    def detection_scale(self, scenario: Scenario | None = None) -> float:
        sc = scenario or self.scenario
        return sc.protocol.mu * fibre_transmittance(sc.channel) * sc.detector.efficiency

    def click_tables(self, scale: float) -> np.ndarray:
        """Per-symbol, per-cell click probabilities (signal or dark)."""
        p_sig = -np.expm1(-scale * self.weights)
        return 1 - (1 - p_sig) * (1 - self.dark_probability)

    # analytic -------------------------------------------------------------------

    def analytic_stats(self, scale: float) -> SiftedStats:
        clicks = self.click_tables(scale)
        p_any = kept = err = 0.0
        for k, w in enumerate(self.probabilities):
            if self.basis[k] is None:
                p_any += w * (1 - math.prod(1 - clicks[k][c] for c in self.layout.key_cells))
                continue
            a, kp, er = sift_outcome_probabilities(clicks[k], self.layout, self.basis[k], self.bit[k])
            p_any += w * a
            kept += w * kp
            err += w * er
        vis = self.analytic_visibility(scale) if self.protocol is QkdProtocol.COW else float("nan")
        return SiftedStats(
            sifted_rate_hz=self.scenario.protocol.symbol_rate_hz * kept,
            qber=err / kept if kept > 0 else 0.5,
            visibility=vis,
            click_prob=p_any,
            sift_fraction=kept / p_any if p_any > 0 else float("nan"),
        )

    def _monitor_means(self, prev: complex, cur: complex, scale: float) -> tuple[float, float]:
        cfg = self.scenario.protocol
        cross = cfg.monitor_coherence * (prev.conjugate() * cur).real
        base = abs(prev) ** 2 + abs(cur) ** 2
        s = scale * (1 - cfg.data_split) / 4
        return max(0.0, s * (base + 2 * cross)), max(0.0, s * (base - 2 * cross))

    def analytic_visibility(self, scale: float) -> float:
        """Expected monitor visibility over successive bright slots."""
        pd = self.dark_probability
        plus = minus = 0.0
        pairs = []
        for k, s in enumerate(self.symbols):
            if all(s.slots):
                pairs.append((self.probabilities[k], self.amplitudes[s][0], self.amplitudes[s][1]))
            for j, t in enumerate(self.symbols):
                if s.slots[1] and t.slots[0]:
                    pairs.append(
                        (self.probabilities[k] * self.probabilities[j], self.amplitudes[s][1], self.amplitudes[t][0])
                    )
        for w, a, b in pairs:
            mp, mm = self._monitor_means(a, b, scale)
            plus += w * (1 - math.exp(-mp) * (1 - pd))
            minus += w * (1 - math.exp(-mm) * (1 - pd))
        return max(0.0, (plus - minus) / (plus + minus))

    # Monte Carlo ---------------------------------------------------------------

    def draw_symbols(self, num_symbols: int, seed: int) -> np.ndarray:
        cdf = np.cumsum(self.probabilities)
        cdf[-1] = 1.0
        out = np.empty(num_symbols, dtype=np.int64)
        for c, start in enumerate(range(0, num_symbols, CHUNK_SYMBOLS)):
            stop = min(start + CHUNK_SYMBOLS, num_symbols)
            u = chunk_rng(seed, 1, c).random(stop - start)
            out[start:stop] = np.searchsorted(cdf, u, side="right")
        return out

    def signal_probabilities(self, kinds: np.ndarray, scale: float) -> np.ndarray:
        p = -np.expm1(-scale * self.weights)[kinds]
        if self.protocol is QkdProtocol.COW:
            p = p.copy()
            mp, mm = self._cow_monitor_means(kinds, scale)
            p[:, :, 1] = -np.expm1(-mp)
            p[:, :, 2] = -np.expm1(-mm)
        return p

    def _slot_amplitudes(self, kinds: np.ndarray) -> np.ndarray:
        table = np.array([self.amplitudes[s] for s in self.symbols])
        return table[kinds].reshape(-1)

    def _cow_monitor_means(self, kinds, scale):
        amps = self._slot_amplitudes(kinds)
        prev = np.concatenate([[0j], amps[:-1]])
        cfg = self.scenario.protocol
        cross = cfg.monitor_coherence * (prev.conj() * amps).real
        base = np.abs(prev) ** 2 + np.abs(amps) ** 2
        s = scale * (1 - cfg.data_split) / 4
        shape = (len(kinds), 2)
        plus = np.clip(s * (base + 2 * cross), 0, None)
        minus = np.clip(s * (base - 2 * cross), 0, None)
        return plus.reshape(shape), minus.reshape(shape)

    def interfering_slots(self, kinds: np.ndarray) -> np.ndarray:
        """True where a COW slot and its predecessor were both sent bright."""
        lit = np.array([s.slots for s in self.symbols])[kinds].reshape(-1)
        prev = np.concatenate([[False], lit[:-1]])
        return (lit & prev).reshape(len(kinds), 2)

    def simulate(self, num_symbols: int, seed: int, scale: float | None = None):
        """Seeded Monte Carlo run: (symbol kinds, events, sifted stats)."""
        scale = self.detection_scale() if scale is None else scale
        kinds = self.draw_symbols(num_symbols, seed)
        events = sample_detection_events(
            self.signal_probabilities(kinds, scale), num_symbols, seed, self.dark_probability
        )
        rate = self.scenario.protocol.symbol_rate_hz
        sent = [self.symbols[k] for k in kinds]
        if self.protocol is QkdProtocol.COW:
            stats = sift_cow(events, sent, rate, seed, self.interfering_slots(kinds))
        else:
            stats = sift_bb84(events, sent, self.layout, rate, seed)
        return kinds, events, stats


def _row(scenario: Scenario, stats: SiftedStats, bound: SecurityBound | None) -> ScenarioRow:
    bound = bound or default_bound(scenario.protocol.protocol)
    vis = stats.visibility
    if scenario.protocol.protocol is QkdProtocol.COW and math.isnan(vis):
        fraction = 0.0
    else:
        fraction = bound(stats, scenario.protocol)
    key: KeyRateResult = secret_key_rate(stats, fraction, scenario.protocol)
    return ScenarioRow(
        distance_km=float(scenario.channel.length_km),
        loss_db=float(scenario.channel.total_loss_db),
        click_prob=float(stats.click_prob),
        qber=float(stats.qber),
        visibility=float(stats.visibility),
        raw_rate_hz=float(key.raw_rate_hz),
        secret_fraction=float(key.secret_fraction),
        secret_rate_hz=float(key.secret_rate_hz),
    )


def analytic_row(scenario: Scenario, model: ProtocolModel | None = None, bound=None) -> ScenarioRow:
    model = model or ProtocolModel(scenario)
    stats = model.analytic_stats(model.detection_scale(scenario))
    return _row(scenario, stats, bound)


def monte_carlo_row(scenario: Scenario, num_symbols: int, seed: int, model=None, bound=None):
    model = model or ProtocolModel(scenario)
    _, events, stats = model.simulate(num_symbols, seed, model.detection_scale(scenario))
    return _row(scenario, stats, bound), stats, events


@dataclass(frozen=True)
class SweepResult:
    rows: list[ScenarioRow]
    cutoff_km: float | None


def cutoff_distance(scenario: Scenario, model=None, bound=None, max_km: float = 2000.0, tol_km: float = 1e-3):
    """Shortest distance at which the secret fraction reaches 0 (None if beyond ``max_km``)."""
    model = model or ProtocolModel(scenario)

    def positive(km):
        return analytic_row(scenario.at_distance(km), model, bound).secret_fraction > 0

    if not positive(0.0):
        return 0.0
    lo, hi = 0.0, 10.0
    while positive(hi):
        lo, hi = hi, hi * 2
        if lo >= max_km:
            return None
    while hi - lo > tol_km:
        mid = (lo + hi) / 2
        lo, hi = (mid, hi) if positive(mid) else (lo, mid)
    return hi


def sweep_distance(scenario: Scenario, distances: Sequence[float], bound=None) -> SweepResult:
    distances = list(distances)
    if any(d < 0 for d in distances):
        raise ValueError("distances must be non-negative")
    if distances != sorted(distances):
        raise ValueError("distances must be sorted ascending")
    model = ProtocolModel(scenario)
    rows = [analytic_row(scenario.at_distance(d), model, bound) for d in distances]
    return SweepResult(rows, cutoff_distance(scenario, model, bound))


CALIBRATION_PARAMETERS = ("extra_loss_db", "mu", "misalignment")


def _with_parameter(scenario: Scenario, name: str, value: float) -> Scenario:
    if name == "extra_loss_db":
        return replace(scenario, channel=replace(scenario.channel, extra_loss_db=value))
    if name == "mu":
        return replace(scenario, protocol=replace(scenario.protocol, mu=value))
    if name == "misalignment":
        return replace(scenario, detector=replace(scenario.detector, misalignment=value))
    raise ValueError(f"cannot calibrate {name!r}; choose from {CALIBRATION_PARAMETERS}")


def calibrate(
    scenario: Scenario,
    target_qber: float,
    distance_km: float,
    parameter: str = "extra_loss_db",
    bracket: tuple[float, float] | None = None,
    tol: float = 1e-4,
) -> tuple[Scenario, float]:
    """Solve for one parameter so the analytic QBER at ``distance_km`` hits ``target_qber``.

    Returns the updated scenario and the fitted value. Raises if the target is
    outside what the bracket can reach.
    """
    defaults = {"extra_loss_db": (0.0, 60.0), "mu": (1e-4, 5.0), "misalignment": (0.0, 0.5)}
    if parameter not in defaults:
        raise ValueError(f"cannot calibrate {parameter!r}; choose from {CALIBRATION_PARAMETERS}")
    lo, hi = bracket or defaults[parameter]
    base = scenario.at_distance(distance_km)
    model_fixed = parameter != "misalignment"
    shared = ProtocolModel(base) if model_fixed else None

    def residual(x):
        sc = _with_parameter(base, parameter, x)
        model = shared if model_fixed else ProtocolModel(sc)
        return model.analytic_stats(model.detection_scale(sc)).qber - target_qber

    r_lo, r_hi = residual(lo), residual(hi)
    if r_lo * r_hi > 0:
        raise ValueError(
            f"target QBER {target_qber} not reachable by varying {parameter} over [{lo}, {hi}] "
            f"(QBER spans {r_lo + target_qber:.5g} .. {r_hi + target_qber:.5g})"
        )
    x = brentq(residual, lo, hi, xtol=1e-12, rtol=1e-12)
    if abs(residual(x)) > tol:
        raise ValueError(f"calibration did not converge to within {tol} of the target QBER")
    return _with_parameter(scenario, parameter, x), x
