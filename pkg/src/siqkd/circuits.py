"""Transmitter and receiver circuits built from couplers and phase modulators.

Three transmitters are modelled: the pulse carver used for COW, the
dual-rail BB84 encoder feeding a 2D grating coupler (polarisation), and the
asymmetric-MZI time-bin encoder. All BB84 encoders share one trick: slow TOPMs
park the output at |+i>, and each of four fast CDMs only ever adds pi/2 to
reach one of the four BB84 states.
"""

from __future__ import annotations

import cmath
import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .modulators import CdmModel, TopmParams, topm_voltage_for_phase
from .photonics import (
    PathState,
    TransferMatrix2,
    apply,
    attenuation_from_db,
    coupler,
    mmi_splitter,
    mzi_transfer,
)

HALF_PI = math.pi / 2
CDM_CAP = HALF_PI
CDM_CAP_TOL = 1e-6
INV_SQRT2 = 1 / math.sqrt(2)


class StateUnreachable(ValueError):
    """Requested state needs more CDM phase than the modulator can deliver."""


class Basis(enum.Enum):
    Z = "Z"
    X = "X"


@dataclass(frozen=True)
class Bb84State:
    basis: Basis
    bit: int

    def __post_init__(self):
        if self.bit not in (0, 1):
            raise ValueError(f"bit must be 0 or 1, got {self.bit}")

    @classmethod
    def all(cls) -> list["Bb84State"]:
        return [cls(b, k) for b in (Basis.Z, Basis.X) for k in (0, 1)]

    def ideal(self) -> PathState:
        if self.basis is Basis.Z:
            return PathState(1, 0) if self.bit == 0 else PathState(0, 1)
        sign = 1 if self.bit == 0 else -1
        return PathState(INV_SQRT2, sign * INV_SQRT2)

    def orthogonal(self) -> "Bb84State":
        return Bb84State(self.basis, 1 - self.bit)


PLUS_I = PathState(INV_SQRT2, 1j * INV_SQRT2)


@dataclass(frozen=True)
class TransmitterBiases:
    """DC phases per named TOPM and (rest, drive) voltages per named CDM."""

    topm_phases: Mapping[str, float]
    cdm_drive_voltages: Mapping[str, tuple[float, float]]
    # which CDM is driven to prepare each BB84 state
    drive_map: Mapping[Bb84State, str] = field(default_factory=dict)

    def check_cap(self, cdm: CdmModel) -> None:
        for name, (rest, drive) in self.cdm_drive_voltages.items():
            swing = cdm.phase(drive) - cdm.phase(rest)
            if swing > CDM_CAP + CDM_CAP_TOL:
                raise ValueError(
                    f"CDM {name!r} swings {swing:.6g} rad, above the pi/2 cap"
                )

    def topm_voltages(self, topm: TopmParams) -> dict[str, float]:
        return {k: topm_voltage_for_phase(topm, p) for k, p in self.topm_phases.items()}


def _pi2_drive(cdm: CdmModel, rest: float = 0.0) -> float:
    target = cdm.phase(rest) + HALF_PI
    try:
        return cdm.voltage_for_phase(target)
    except ValueError as exc:
        raise StateUnreachable(
            f"CDM cannot add pi/2 above its rest phase (saturates at {cdm.phi_max:.4g} rad)"
        ) from exc


def _drives(biases: TransmitterBiases, state: Bb84State | None) -> dict[str, float]:
    volts = {name: rest for name, (rest, _) in biases.cdm_drive_voltages.items()}
    if state is not None:
        name = biases.drive_map[state]
        volts[name] = biases.cdm_drive_voltages[name][1]
    return volts


def _arm(topm_phase: float, cdm: CdmModel, v: float) -> complex:
    return cmath.exp(1j * topm_phase) * attenuation_from_db(cdm.loss_db(v)) * cmath.exp(
        1j * cdm.phase(v)
    )


# --- dual-rail (polarisation) encoder ------------------------------------

POL_DRIVE_MAP = {
    Bb84State(Basis.Z, 0): "mzi_top",
    Bb84State(Basis.Z, 1): "mzi_bottom",
    Bb84State(Basis.X, 0): "out_0",
    Bb84State(Basis.X, 1): "out_1",
}


def bb84_path_biases(cdm: CdmModel, rest_voltage: float = 0.0) -> TransmitterBiases:
    """TOPM offsets that park the encoder at |+i> plus pi/2 CDM drives.

    All four CDMs rest at the same voltage, so their common loss and phase
    cancel and the TOPM offsets are the bare ones: pi/2 inside the MZI for an
    equal split, pi/2 on output rail 1 for the quarter-wave relative phase.
    """
    drive = _pi2_drive(cdm, rest_voltage)
    return TransmitterBiases(
        topm_phases={"mzi_top": HALF_PI, "mzi_bottom": 0.0, "out_0": 0.0, "out_1": HALF_PI},
        cdm_drive_voltages={n: (rest_voltage, drive) for n in POL_DRIVE_MAP.values()},
        drive_map=POL_DRIVE_MAP,
    )


def prepare_bb84_path_state(
    state: Bb84State | None,
    topm: TopmParams,
    cdm: CdmModel,
    biases: TransmitterBiases | None = None,
    mean_photon_number: float = 1.0,
) -> PathState:
    """Dual-rail output of the encoder; ``state=None`` leaves every CDM at rest."""
    biases = biases or bb84_path_biases(cdm)
    biases.check_cap(cdm)
    v = _drives(biases, state)
    tp = biases.topm_phases
    mzi = mzi_transfer(
        _arm(tp["mzi_top"], cdm, v["mzi_top"]),
        _arm(tp["mzi_bottom"], cdm, v["mzi_bottom"]),
    )
    outer = TransferMatrix2.diag(_arm(tp["out_0"], cdm, v["out_0"]), _arm(tp["out_1"], cdm, v["out_1"]))
    return apply(outer @ mzi, PathState(1, 0, mean_photon_number))


def state_fidelity(actual: PathState, ideal: PathState) -> float:
    """|<ideal|actual>|^2 with ``actual`` renormalised, so loss does not count."""
    if abs(ideal.norm2 - 1) > 1e-9:
        raise ValueError("ideal state must have unit norm")
    a = actual.normalized()
    overlap = ideal.amp0.conjugate() * a.amp0 + ideal.amp1.conjugate() * a.amp1
    return min(1.0, abs(overlap) ** 2)


def projection_probabilities(prepared: PathState, target: Bb84State) -> tuple[float, float]:
    """(P_target, P_orthogonal) for the renormalised ``prepared`` state."""
    return (
        state_fidelity(prepared, target.ideal()),
        state_fidelity(prepared, target.orthogonal().ideal()),
    )


def extinction_ratio_db(prepared: PathState, target: Bb84State) -> float:
    """Power ratio between the target outcome and its orthogonal one; inf if perfect."""
    p_ok, p_bad = projection_probabilities(prepared, target)
    if p_bad == 0:
        return math.inf
    return 10 * math.log10(p_ok / p_bad)


def path_to_polarisation(state: PathState, insertion_loss_db: float = 0.0) -> PathState:
    """2D grating coupler: rail 0 becomes H, rail 1 becomes V, with insertion loss."""
    t = attenuation_from_db(insertion_loss_db)
    return PathState(t * state.amp0, t * state.amp1, state.mean_photon_number)


def stokes(state: PathState) -> tuple[float, float, float]:
    """Normalised Stokes vector (S1, S2, S3) with H/V, D/A, R/L axes."""
    s = state.normalized()
    h, v = s.amp0, s.amp1
    s1 = abs(h) ** 2 - abs(v) ** 2
    s2 = 2 * (h.conjugate() * v).real
    s3 = 2 * (h.conjugate() * v).imag
    return s1, s2, s3


# --- time-bin encoder ------------------------------------------------------

TB_DRIVE_MAP = {
    Bb84State(Basis.Z, 0): "sel_top",
    Bb84State(Basis.Z, 1): "sel_bottom",
    Bb84State(Basis.X, 0): "amzi_short",
    Bb84State(Basis.X, 1): "amzi_long",
}


@dataclass(frozen=True)
class TimebinParams:
    bin_separation: float = 1.5e-9
    pulse_fwhm: float = 350e-12
    delay_loss_db: float = 5.0
    short_arm_loss_db: float = 0.0

    def __post_init__(self):
        if not self.bin_separation > 0:
            raise ValueError(f"bin_separation must be > 0, got {self.bin_separation}")
        if not self.pulse_fwhm > 0:
            raise ValueError(f"pulse_fwhm must be > 0, got {self.pulse_fwhm}")
        if self.delay_loss_db < 0:
            raise ValueError(f"delay_loss_db must be >= 0, got {self.delay_loss_db}")
        if self.short_arm_loss_db < 0:
            raise ValueError(f"short_arm_loss_db must be >= 0, got {self.short_arm_loss_db}")


@dataclass(frozen=True)
class TimebinState:
    amp_early: complex
    amp_late: complex
    bin_separation: float = 1.5e-9
    pulse_fwhm: float = 350e-12

    def __post_init__(self):
        if abs(self.amp_early) ** 2 + abs(self.amp_late) ** 2 > 1 + 1e-9:
            raise ValueError("time-bin state norm exceeds 1")

    @property
    def norm2(self) -> float:
        return abs(self.amp_early) ** 2 + abs(self.amp_late) ** 2

    def as_path_state(self) -> PathState:
        return PathState(self.amp_early, self.amp_late)


def loss_balance_phase(params: TimebinParams) -> float:
    """TOPM phase of the short-arm MZI attenuator that matches the delay-line loss."""
    # the attenuator passes cos^2(phase/2) of the power to its cross port
    target = 10 ** (-(params.delay_loss_db - params.short_arm_loss_db) / 10)
    if target > 1:
        raise ValueError(
            "short arm is already lossier than the delay line; loss balance needs gain"
        )
    return 2 * math.acos(math.sqrt(target))


def _timebin_arms(params: TimebinParams, balance_phase: float) -> tuple[complex, complex]:
    """Short/long arm amplitudes after the first MMI, excluding TOPM/CDM factors."""
    split = mmi_splitter()
    attenuator = mzi_transfer(cmath.exp(1j * balance_phase), 1)
    short = split.m00 * attenuation_from_db(params.short_arm_loss_db) * attenuator.m10
    long_ = split.m10 * attenuation_from_db(params.delay_loss_db)
    return short, long_


def timebin_biases(
    cdm: CdmModel, params: TimebinParams = TimebinParams(), rest_voltage: float = 0.0
) -> TransmitterBiases:
    balance = loss_balance_phase(params)
    short, long_ = _timebin_arms(params, balance)
    # long-arm TOPM sets late/early phase to pi/2 (|+i>) with every CDM at rest
    long_phase = (HALF_PI - cmath.phase(long_ / short)) % (2 * math.pi)
    drive = _pi2_drive(cdm, rest_voltage)
    return TransmitterBiases(
        topm_phases={
            "balance": balance,
            "amzi_short": 0.0,
            "amzi_long": long_phase,
            "sel_top": HALF_PI,
            "sel_bottom": 0.0,
        },
        cdm_drive_voltages={n: (rest_voltage, drive) for n in TB_DRIVE_MAP.values()},
        drive_map=TB_DRIVE_MAP,
    )


def timebin_encode(
    state: Bb84State | None,
    topm: TopmParams,
    cdm: CdmModel,
    params: TimebinParams = TimebinParams(),
    biases: TransmitterBiases | None = None,
) -> TimebinState:
    """Early/late amplitudes leaving the single output fibre of the encoder."""
    biases = biases or timebin_biases(cdm, params)
    biases.check_cap(cdm)
    v = _drives(biases, state)
    tp = biases.topm_phases
    short, long_ = _timebin_arms(params, tp["balance"])
    short *= _arm(tp["amzi_short"], cdm, v["amzi_short"])
    long_ *= _arm(tp["amzi_long"], cdm, v["amzi_long"])
    selector = mzi_transfer(
        _arm(tp["sel_top"], cdm, v["sel_top"]),
        _arm(tp["sel_bottom"], cdm, v["sel_bottom"]),
    )
    return TimebinState(
        amp_early=selector.m00 * short,
        amp_late=selector.m01 * long_,
        bin_separation=params.bin_separation,
        pulse_fwhm=params.pulse_fwhm,
    )


def timebin_receive(
    state: TimebinState, receiver_phase: float = 0.0, receiver_delay: float | None = None
) -> np.ndarray:
    """Detection probabilities behind a matched, lossless AMZI.

    Returns a (3, 2) array indexed [slot, port]. Slot 0 is early-bin/short-path,
    slot 2 late-bin/long-path, slot 1 overlaps early-long with late-short.
    Ports are numbered so port 0 is where in-phase bins add constructively at
    ``receiver_phase = 0``.
    """
    delay = state.bin_separation if receiver_delay is None else receiver_delay
    if abs(delay - state.bin_separation) > 0.01 * state.bin_separation:
        raise ValueError(
            f"receiver delay {delay:.4g} s does not match bin separation "
            f"{state.bin_separation:.4g} s"
        )
    split = mmi_splitter().as_array()
    combine = mmi_splitter().as_array()
    arm = np.array([1.0, cmath.exp(1j * receiver_phase)])
    fields = np.zeros((3, 2), dtype=complex)
    for b, amp in enumerate((state.amp_early, state.amp_late)):
        for path in (0, 1):
            fields[b + path] += combine[:, path] * arm[path] * split[path, 0] * amp
    return np.abs(fields[:, ::-1]) ** 2


def check_slot_timing(pulse_fwhm: float, slot_duration: float) -> None:
    if pulse_fwhm > slot_duration:
        raise ValueError(
            f"pulse FWHM {pulse_fwhm:.4g} s does not fit in a {slot_duration:.4g} s slot"
        )


# --- COW pulse carver and receiver -----------------------------------------


class CowSymbol(enum.Enum):
    BIT0 = "bit0"
    BIT1 = "bit1"
    DECOY = "decoy"
    VACUUM = "vacuum"

    @property
    def slots(self) -> tuple[bool, bool]:
        """(first slot bright, second slot bright)."""
        return _COW_SLOTS[self]


_COW_SLOTS = {
    CowSymbol.BIT0: (True, False),
    CowSymbol.BIT1: (False, True),
    CowSymbol.DECOY: (True, True),
    CowSymbol.VACUUM: (False, False),
}


@dataclass(frozen=True)
class CarverParams:
    """MZI pulse carver. ``split_ratio`` is the power cross-coupling of both MMIs;
    its departure from 0.5 sets the depth of the dark-slot null."""

    split_ratio: float = 0.515
    min_extinction_db: float = 25.0
    pulse_fwhm: float = 175e-12

    def __post_init__(self):
        if not 0 < self.split_ratio < 1:
            raise ValueError(f"split_ratio must lie in (0, 1), got {self.split_ratio}")
        if not self.pulse_fwhm > 0:
            raise ValueError(f"pulse_fwhm must be > 0, got {self.pulse_fwhm}")


@dataclass(frozen=True)
class CarverOperatingPoint:
    bias_phase: float
    drive_voltage: float
    drive_phase: float
    dark: complex
    bright: complex

    @property
    def extinction_db(self) -> float:
        return 10 * math.log10(abs(self.bright) ** 2 / abs(self.dark) ** 2)


def _carver_output(carver: CarverParams, cdm: CdmModel, bias: float, v: float) -> complex:
    c = coupler(carver.split_ratio)
    m = mzi_transfer(_arm(bias, cdm, v), _arm(0.0, cdm, 0.0), splitter=c, combiner=c)
    return m.m00


def carver_operating_point(
    cdm: CdmModel, carver: CarverParams = CarverParams(), n_grid: int = 400
) -> CarverOperatingPoint:
    """Bias the TOPM onto the output null, then pick the CDM drive (below pi/2)
    that maximises the bright/dark ratio."""
    def dark_power(t):
        return abs(_carver_output(carver, cdm, t, 0.0)) ** 2

    grid = np.linspace(0.0, 2 * math.pi, 721)
    t0 = grid[int(np.argmin([dark_power(t) for t in grid]))]
    step = grid[1] - grid[0]
    res = minimize_scalar(
        dark_power, bounds=(t0 - step, t0 + step), method="bounded", options={"xatol": 1e-12}
    )
    bias = float(res.x) % (2 * math.pi)
    dark = _carver_output(carver, cdm, bias, 0.0)
    cap = min(HALF_PI, cdm.phi_max)
    v_cap = cdm.voltage_for_phase(cap * (1 - 1e-9))
    best = None
    for v in np.linspace(0.0, v_cap, n_grid + 1)[1:]:
        bright = _carver_output(carver, cdm, bias, float(v))
        if best is None or abs(bright) > abs(best[1]):
            best = (float(v), bright)
    v, bright = best
    point = CarverOperatingPoint(bias, v, cdm.phase(v), dark, bright)
    if point.extinction_db < carver.min_extinction_db:
        raise ValueError(
            f"carver reaches only {point.extinction_db:.2f} dB extinction "
            f"(< {carver.min_extinction_db} dB) within the CDM drive range"
        )
    return point


@dataclass(frozen=True)
class PulseTrainSlot:
    intensity: float
    slot_duration: float
    phase: float = 0.0

    def __post_init__(self):
        if not 0 <= self.intensity <= 1 + 1e-9:
            raise ValueError(f"intensity must lie in [0, 1], got {self.intensity}")

    @property
    def amplitude(self) -> complex:
        return math.sqrt(self.intensity) * cmath.exp(1j * self.phase)


def carve_pulse_train(
    pattern: Sequence[CowSymbol],
    topm: TopmParams,
    cdm: CdmModel,
    carver: CarverParams = CarverParams(),
    slot_duration: float = 1 / 1.72e9,
    point: CarverOperatingPoint | None = None,
) -> list[PulseTrainSlot]:
    """Two slots per symbol, intensities relative to a bright slot."""
    if len(pattern) == 0:
        raise ValueError("pattern must be non-empty")
    check_slot_timing(carver.pulse_fwhm, slot_duration)
    point = point or carver_operating_point(cdm, carver)
    topm_voltage_for_phase(topm, point.bias_phase)  # bias must be reachable
    ref = cmath.phase(point.bright)
    dark = PulseTrainSlot(
        abs(point.dark / point.bright) ** 2, slot_duration, cmath.phase(point.dark) - ref
    )
    bright = PulseTrainSlot(1.0, slot_duration, 0.0)
    return [bright if lit else dark for sym in pattern for lit in CowSymbol(sym).slots]


def cow_monitor_visibility(
    train: Sequence[PulseTrainSlot],
    monitor_delay: float = 580e-12,
    coherence: float = 1.0,
    occupied_threshold: float = 0.5,
) -> float:
    """Visibility of the one-slot-delay monitor AMZI over successive occupied slots.

    Only neighbouring slots that are both occupied (intensity above
    ``occupied_threshold``) count as interference events. ``coherence`` scales
    the interference term, standing in for an imperfect monitor interferometer.
    """
    if len(train) < 2:
        raise ValueError("train too short for any interference event")
    slot = train[0].slot_duration
    if abs(monitor_delay - slot) > 0.01 * slot:
        raise ValueError(
            f"monitor delay {monitor_delay:.4g} s does not match slot period {slot:.4g} s"
        )
    plus = minus = 0.0
    events = 0
    for prev, cur in zip(train[:-1], train[1:]):
        if prev.intensity < occupied_threshold or cur.intensity < occupied_threshold:
            continue
        events += 1
        cross = coherence * (prev.amplitude.conjugate() * cur.amplitude).real
        base = prev.intensity + cur.intensity
        plus += (base + 2 * cross) / 4
        minus += (base - 2 * cross) / 4
    if events == 0:
        raise ValueError("no successive occupied slots: visibility undefined")
    return (plus - minus) / (plus + minus)


def cow_receiver_split(split_ratio: float) -> tuple[float, float]:
    """(data-line weight, monitor-line weight)."""
    if not 0 < split_ratio < 1:
        raise ValueError(f"split_ratio must lie in (0, 1), got {split_ratio}")
    return split_ratio, 1 - split_ratio
