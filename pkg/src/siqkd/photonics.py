"""Two-mode linear optics: couplers, phased/lossy arms, composition and readout.

Amplitudes are plain Python ``complex`` numbers. Loss is carried as sub-unit
amplitude, never as a separate channel, so a state's squared norm is the
probability that the photon is still in the circuit.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

PASSIVE_TOL = 1e-9


@dataclass(frozen=True)
class PathState:
    """Dual-rail amplitudes plus the mean photon number of the pulse."""

    amp0: complex
    amp1: complex
    mean_photon_number: float = 1.0

    def __post_init__(self):
        if not (cmath.isfinite(self.amp0) and cmath.isfinite(self.amp1)):
            raise ValueError("amplitudes must be finite")
        if self.mean_photon_number < 0:
            raise ValueError("mean_photon_number must be >= 0")

    @property
    def norm2(self) -> float:
        return abs(self.amp0) ** 2 + abs(self.amp1) ** 2

    def normalized(self) -> "PathState":
        n = math.sqrt(self.norm2)
        if n == 0:
            raise ValueError("cannot normalize a zero-norm state")
        return PathState(self.amp0 / n, self.amp1 / n, self.mean_photon_number)

    def as_array(self) -> np.ndarray:
        return np.array([self.amp0, self.amp1], dtype=complex)


@dataclass(frozen=True)
class TransferMatrix2:
    """2x2 complex transfer matrix of a passive two-mode element.

    ``m_ij`` is the amplitude from input port ``j`` to output port ``i``.
    """

    m00: complex
    m01: complex
    m10: complex
    m11: complex

    def __post_init__(self):
        smax = np.linalg.svd(self.as_array(), compute_uv=False)[0]
        if not np.isfinite(smax):
            raise ValueError("matrix elements must be finite")
        if smax > 1 + PASSIVE_TOL:
            raise ValueError(f"element has gain (largest singular value {smax:.6g} > 1)")

    @classmethod
    def from_array(cls, a) -> "TransferMatrix2":
        a = np.asarray(a, dtype=complex)
        return cls(complex(a[0, 0]), complex(a[0, 1]), complex(a[1, 0]), complex(a[1, 1]))

    @classmethod
    def identity(cls) -> "TransferMatrix2":
        return cls(1, 0, 0, 1)

    @classmethod
    def diag(cls, top: complex, bottom: complex) -> "TransferMatrix2":
        return cls(top, 0, 0, bottom)

    def as_array(self) -> np.ndarray:
        return np.array([[self.m00, self.m01], [self.m10, self.m11]], dtype=complex)

    def __matmul__(self, other: "TransferMatrix2") -> "TransferMatrix2":
        return TransferMatrix2.from_array(self.as_array() @ other.as_array())

    def is_unitary(self, tol: float = 1e-12) -> bool:
        a = self.as_array()
        return bool(np.allclose(a.conj().T @ a, np.eye(2), rtol=0, atol=tol))

    def port_power(self, out_port: int, in_port: int) -> float:
        return abs(self.as_array()[out_port, in_port]) ** 2


def coupler(split_ratio: float = 0.5) -> TransferMatrix2:
    """Symmetric directional coupler with power ``split_ratio`` to the cross port."""
    if not 0 <= split_ratio <= 1:
        raise ValueError(f"split_ratio must lie in [0, 1], got {split_ratio}")
    t = math.sqrt(1 - split_ratio)
    k = 1j * math.sqrt(split_ratio)
    return TransferMatrix2(t, k, k, t)


def mmi_splitter() -> TransferMatrix2:
    """Ideal 50:50 MMI, ``(1/sqrt 2) [[1, i], [i, 1]]``."""
    return coupler(0.5)


def phase_arm(phase: float, amplitude_transmission: float = 1.0) -> complex:
    """Arm factor ``t * exp(i * phase)``."""
    if not 0 <= amplitude_transmission <= 1:
        raise ValueError(
            f"amplitude_transmission must lie in [0, 1], got {amplitude_transmission}"
        )
    return amplitude_transmission * cmath.exp(1j * phase)


def mzi_transfer(
    arm_top: complex,
    arm_bottom: complex,
    splitter: TransferMatrix2 | None = None,
    combiner: TransferMatrix2 | None = None,
) -> TransferMatrix2:
    """Balanced MZI: ``combiner @ diag(arm_top, arm_bottom) @ splitter``.

    Both couplers default to the ideal MMI. With equal arms the MZI is a
    full-cross device; with a pi phase difference it is in the bar state.
    """
    if abs(arm_top) > 1 + PASSIVE_TOL or abs(arm_bottom) > 1 + PASSIVE_TOL:
        raise ValueError("arm factors must have magnitude <= 1")
    splitter = splitter or mmi_splitter()
    combiner = combiner or mmi_splitter()
    return combiner @ TransferMatrix2.diag(arm_top, arm_bottom) @ splitter


def apply(matrix: TransferMatrix2, state: PathState) -> PathState:
    out = matrix.as_array() @ state.as_array()
    return PathState(complex(out[0]), complex(out[1]), state.mean_photon_number)


def attenuation_from_db(loss_db: float) -> float:
    """Amplitude factor ``10**(-loss_db/20)``; square it for power."""
    if loss_db < 0:
        raise ValueError(f"loss must be non-negative, got {loss_db} dB")
    return 10 ** (-loss_db / 20)
