"""Voltage-to-phase and voltage-to-loss models for the two phase shifters.

Thermo-optic (TOPM): phase grows with the square of the voltage, no loss change.
Carrier-depletion (CDM): phase saturates with reverse bias while the optical
loss falls. The CDM is an interface: anything with ``phase``,
``voltage_for_phase``, ``loss_db`` and ``phi_max`` can stand in for
:class:`CdmParams` (see :class:`TabulatedCdm` for a digitised-curve model).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .photonics import attenuation_from_db

TWO_PI = 2 * math.pi


@dataclass(frozen=True)
class TopmParams:
    v_2pi: float = 24.0
    resistance_ohms: float = 6140.0
    length_um: float = 150.0

    def __post_init__(self):
        if not self.v_2pi > 0:
            raise ValueError(f"v_2pi must be > 0, got {self.v_2pi}")


def topm_phase(params: TopmParams, v: float) -> float:
    return TWO_PI * (v / params.v_2pi) ** 2


def topm_voltage_for_phase(params: TopmParams, phase: float) -> float:
    if phase < 0:
        raise ValueError(f"phase must be >= 0, got {phase}")
    return params.v_2pi * math.sqrt(phase / TWO_PI)


class CdmModel(Protocol):
    phi_max: float

    def phase(self, v: float) -> float: ...

    def voltage_for_phase(self, phase: float) -> float: ...

    def loss_db(self, v: float) -> float: ...


def _check_reverse_bias(v: float) -> None:
    if v < 0:
        raise ValueError(f"voltage must be >= 0 (reverse bias), got {v}")


@dataclass(frozen=True)
class CdmParams:
    """Exponential-saturation CDM.

    phase(v) = phi_sat * (1 - exp(-v / v_c))
    loss(v)  = loss0_db - loss_relief_db * (1 - exp(-v / v_t))
    """

    phi_sat: float = 0.95 * math.pi
    v_c: float = 3.0
    loss0_db: float = 5.0
    loss_relief_db: float = 2.0
    v_t: float = 4.0
    length_mm: float = 1.5

    def __post_init__(self):
        if not self.phi_sat > 0:
            raise ValueError(f"phi_sat must be > 0, got {self.phi_sat}")
        if not self.v_c > 0:
            raise ValueError(f"v_c must be > 0, got {self.v_c}")
        if not self.v_t > 0:
            raise ValueError(f"v_t must be > 0, got {self.v_t}")
        if self.loss0_db < 0:
            raise ValueError(f"loss0_db must be >= 0, got {self.loss0_db}")
        if self.loss_relief_db < 0:
            raise ValueError(f"loss_relief_db must be >= 0, got {self.loss_relief_db}")
        if self.loss_relief_db > self.loss0_db:
            raise ValueError(
                "loss_relief_db exceeds loss0_db: loss would go negative at high voltage"
            )

    @property
    def phi_max(self) -> float:
        return self.phi_sat

    def phase(self, v: float) -> float:
        _check_reverse_bias(v)
        return self.phi_sat * -math.expm1(-v / self.v_c)

    def voltage_for_phase(self, phase: float) -> float:
        if phase < 0:
            raise ValueError(f"phase must be >= 0, got {phase}")
        if phase >= self.phi_sat:
            raise ValueError(
                f"unreachable phase {phase:.6g} rad: CDM saturates at {self.phi_sat:.6g} rad"
            )
        return -self.v_c * math.log1p(-phase / self.phi_sat)

    def loss_db(self, v: float) -> float:
        _check_reverse_bias(v)
        return self.loss0_db - self.loss_relief_db * -math.expm1(-v / self.v_t)


@dataclass(frozen=True)
class TabulatedCdm:
    """CDM defined by measured (voltage, phase, loss) samples, linearly interpolated.

    Phase must be strictly increasing and loss non-increasing in voltage.
    """

    voltages: tuple[float, ...]
    phases: tuple[float, ...]
    losses_db: tuple[float, ...]

    def __post_init__(self):
        v = np.asarray(self.voltages, float)
        p = np.asarray(self.phases, float)
        l = np.asarray(self.losses_db, float)
        if not (len(v) == len(p) == len(l) >= 2):
            raise ValueError("need at least two samples of equal length")
        if v[0] != 0 or np.any(np.diff(v) <= 0):
            raise ValueError("voltages must start at 0 and increase strictly")
        if np.any(np.diff(p) <= 0):
            raise ValueError("phases must increase strictly with voltage")
        if np.any(np.diff(l) > 0) or np.any(l < 0):
            raise ValueError("losses must be non-negative and non-increasing")

    @property
    def phi_max(self) -> float:
        return self.phases[-1]

    def phase(self, v: float) -> float:
        _check_reverse_bias(v)
        if v > self.voltages[-1]:
            raise ValueError(f"voltage {v} beyond tabulated range")
        return float(np.interp(v, self.voltages, self.phases))

    def voltage_for_phase(self, phase: float) -> float:
        if phase < 0:
            raise ValueError(f"phase must be >= 0, got {phase}")
        if phase > self.phi_max:
            raise ValueError(f"unreachable phase {phase:.6g} rad beyond tabulated range")
        return float(np.interp(phase, self.phases, self.voltages))

    def loss_db(self, v: float) -> float:
        _check_reverse_bias(v)
        if v > self.voltages[-1]:
            raise ValueError(f"voltage {v} beyond tabulated range")
        return float(np.interp(v, self.voltages, self.losses_db))


def cdm_phase(params: CdmModel, v: float) -> float:
    return params.phase(v)


def cdm_voltage_for_phase(params: CdmModel, phase: float) -> float:
    return params.voltage_for_phase(phase)


def cdm_transmission_db(params: CdmModel, v: float) -> float:
    """Insertion loss in dB at reverse bias ``v``."""
    return params.loss_db(v)


def cdm_arm_factor(params: CdmModel, v: float) -> complex:
    """Complex arm factor combining the CDM's loss and phase at ``v``."""
    return attenuation_from_db(params.loss_db(v)) * cmath.exp(1j * params.phase(v))


IDEAL_CDM = CdmParams(loss0_db=0.0, loss_relief_db=0.0)
