"""Sifting, visibility bookkeeping and asymptotic secret-key fractions."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Protocol as _Protocol, Sequence

import numpy as np

from .channel import multi_photon_probability


class QkdProtocol(enum.Enum):
    COW = "cow"
    BB84_POL = "bb84-pol"
    BB84_TB = "bb84-tb"

    @classmethod
    def parse(cls, name: str) -> "QkdProtocol":
        try:
            return cls(str(name).lower().replace("_", "-"))
        except ValueError:
            choices = ", ".join(p.value for p in cls)
            raise ValueError(f"unknown protocol {name!r} (choose from {choices})") from None


@dataclass(frozen=True)
class ProtocolConfig:
    """Source and post-processing settings.

    ``symbols_per_clock`` defaults to 1/2 for COW (one pulse pair per two
    clock cycles) and 1 for BB84. ``basis_probabilities`` is the (Z, X) choice
    for BB84; ``data_split`` and ``monitor_coherence`` only apply to COW.
    """

    protocol: QkdProtocol = QkdProtocol.COW
    clock_hz: float = 1.72e9
    mu: float = 0.5
    decoy_fraction: float = 0.0
    basis_probabilities: tuple[float, float] = (0.5, 0.5)
    error_correction_efficiency: float = 1.0
    symbols_per_clock: float | None = None
    data_split: float = 0.9
    monitor_coherence: float = 1.0

    def __post_init__(self):
        if not isinstance(self.protocol, QkdProtocol):
            object.__setattr__(self, "protocol", QkdProtocol.parse(self.protocol))
        object.__setattr__(self, "basis_probabilities", tuple(float(p) for p in self.basis_probabilities))
        if not self.clock_hz > 0:
            raise ValueError(f"clock_hz must be > 0, got {self.clock_hz}")
        if not self.mu > 0:
            raise ValueError(f"mu must be > 0, got {self.mu}")
        if not 0 <= self.decoy_fraction < 1:
            raise ValueError(f"decoy_fraction must lie in [0, 1), got {self.decoy_fraction}")
        if self.decoy_fraction > 0 and self.protocol is not QkdProtocol.COW:
            raise ValueError("decoy_fraction must be 0 for BB84 (decoy-state BB84 is not modelled)")
        pz, px = self.basis_probabilities
        if len(self.basis_probabilities) != 2 or min(pz, px) < 0 or abs(pz + px - 1) > 1e-12:
            raise ValueError(f"basis_probabilities must be two non-negative numbers summing to 1, got {self.basis_probabilities}")
        if self.error_correction_efficiency < 1:
            raise ValueError(f"error_correction_efficiency must be >= 1, got {self.error_correction_efficiency}")
        if self.symbols_per_clock is not None and not self.symbols_per_clock > 0:
            raise ValueError(f"symbols_per_clock must be > 0, got {self.symbols_per_clock}")
        if not 0 < self.data_split < 1:
            raise ValueError(f"data_split must lie in (0, 1), got {self.data_split}")
        if not 0 <= self.monitor_coherence <= 1:
            raise ValueError(f"monitor_coherence must lie in [0, 1], got {self.monitor_coherence}")

    @property
    def symbol_rate_hz(self) -> float:
        spc = self.symbols_per_clock
        if spc is None:
            spc = 0.5 if self.protocol is QkdProtocol.COW else 1.0
        return self.clock_hz * spc


@dataclass(frozen=True)
class SiftedStats:
    sifted_rate_hz: float
    qber: float
    visibility: float
    click_prob: float
    sift_fraction: float = float("nan")
    n_sifted: int | None = None
    n_errors: int | None = None

    def __post_init__(self):
        if not 0 <= self.qber <= 0.5 + 1e-12:
            raise ValueError(f"qber must lie in [0, 0.5], got {self.qber}")
        if not (math.isnan(self.visibility) or -1e-12 <= self.visibility <= 1 + 1e-12):
            raise ValueError(f"visibility must lie in [0, 1], got {self.visibility}")


@dataclass(frozen=True)
class KeyRateResult:
    raw_rate_hz: float
    secret_fraction: float
    secret_rate_hz: float


def binary_entropy(p: float) -> float:
    if not 0 <= p <= 1:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if p in (0, 1):
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


# --- measurement layout and sifting ------------------------------------------


@dataclass(frozen=True)
class MeasurementGroup:
    """One measurement basis: the detector cells voting for bit 0 and bit 1."""

    basis: str
    bit0: tuple[tuple[int, int], ...]
    bit1: tuple[tuple[int, int], ...]

    @property
    def cells(self):
        return self.bit0 + self.bit1


@dataclass(frozen=True)
class Layout:
    """Detector grid shape and the groups that define key measurements.

    A symbol is measured in basis ``b`` when some cell of group ``b`` clicked
    and no cell of any other group did. Clicks on both bit sets give a random
    bit. Cells outside every group (e.g. COW monitor detectors) never enter
    the key.
    """

    n_slots: int
    n_ports: int
    groups: tuple[MeasurementGroup, ...]

    def group(self, basis: str) -> MeasurementGroup:
        for g in self.groups:
            if g.basis == basis:
                return g
        raise KeyError(basis)

    @property
    def key_cells(self):
        return tuple(c for g in self.groups for c in g.cells)


COW_LAYOUT = Layout(2, 3, (MeasurementGroup("Z", ((0, 0),), ((1, 0),)),))
POL_LAYOUT = Layout(
    1, 4, (MeasurementGroup("Z", ((0, 0),), ((0, 1),)), MeasurementGroup("X", ((0, 2),), ((0, 3),)))
)
TB_LAYOUT = Layout(
    3,
    2,
    (
        MeasurementGroup("Z", ((0, 0), (0, 1)), ((2, 0), (2, 1))),
        MeasurementGroup("X", ((1, 0),), ((1, 1),)),
    ),
)


def sift_outcome_probabilities(
    click: np.ndarray, layout: Layout, basis: str, bit: int
) -> tuple[float, float, float]:
    """(P[any key click], P[kept], P[kept and wrong]) for one symbol type.

    ``click`` holds independent per-cell click probabilities, shape (slots, ports).
    Random-bit double clicks count as half an error.
    """
    none = lambda cells: math.prod(1 - click[c] for c in cells)
    p_any = 1 - none(layout.key_cells)
    g = layout.group(basis)
    others = tuple(c for h in layout.groups if h.basis != basis for c in h.cells)
    quiet = none(others)
    right, wrong = (g.bit0, g.bit1) if bit == 0 else (g.bit1, g.bit0)
    n_right, n_wrong = none(right), none(wrong)
    only_right = (1 - n_right) * n_wrong * quiet
    only_wrong = (1 - n_wrong) * n_right * quiet
    both = (1 - n_right) * (1 - n_wrong) * quiet
    return p_any, only_right + only_wrong + both, only_wrong + both / 2


def _grid(events: np.ndarray, num_symbols: int, layout: Layout) -> np.ndarray:
    hits = np.zeros((num_symbols, layout.n_slots, layout.n_ports), dtype=bool)
    hits[events["symbol_index"], events["slot"], events["port"]] = True
    return hits


def _measure(hits: np.ndarray, layout: Layout, rng: np.random.Generator):
    """Per symbol: measured basis index (-1 none/ambiguous) and bit."""
    n = hits.shape[0]
    any_in = lambda cells: (
        np.any(np.stack([hits[:, s, p] for s, p in cells], axis=1), axis=1)
        if cells
        else np.zeros(n, bool)
    )
    fired = np.stack([any_in(g.cells) for g in layout.groups], axis=1)
    basis = np.where(fired.sum(axis=1) == 1, np.argmax(fired, axis=1), -1)
    bit = np.full(n, -1)
    coin = rng.random(n) < 0.5
    for gi, g in enumerate(layout.groups):
        sel = basis == gi
        b0, b1 = any_in(g.bit0), any_in(g.bit1)
        bit = np.where(sel & b0 & ~b1, 0, bit)
        bit = np.where(sel & b1 & ~b0, 1, bit)
        bit = np.where(sel & b0 & b1, coin.astype(int), bit)
    clicked = any_in(layout.key_cells)
    return basis, bit, clicked


def _sift(events, sent_basis, sent_bit, layout: Layout, symbol_rate_hz: float, seed: int, visibility=float("nan")):
    num = len(sent_basis)
    hits = _grid(events, num, layout)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
    basis, bit, clicked = _measure(hits, layout, rng)
    keep = (basis >= 0) & (basis == sent_basis)
    n_sifted = int(keep.sum())
    if n_sifted == 0:
        raise ValueError("empty sift: no detection survived sifting")
    n_err = int((bit[keep] != sent_bit[keep]).sum())
    return SiftedStats(
        sifted_rate_hz=symbol_rate_hz * n_sifted / num,
        qber=n_err / n_sifted,
        visibility=visibility,
        click_prob=float(clicked.mean()),
        sift_fraction=n_sifted / max(int(clicked.sum()), 1),
        n_sifted=n_sifted,
        n_errors=n_err,
    )


def sift_cow(
    events: np.ndarray,
    sent_pattern: Sequence,
    symbol_rate_hz: float = 1.0,
    seed: int = 0,
    monitor_slots: np.ndarray | None = None,
) -> SiftedStats:
    """Key from data-line arrival times of bit symbols; decoys never enter the key.

    Monitor clicks (ports 1 and 2) are turned into a visibility estimate over
    the slots flagged in ``monitor_slots`` (bool, shape (N, 2): the slot and
    its predecessor both carried a pulse). With no flags the visibility is NaN.
    """
    from .circuits import CowSymbol

    symbols = [CowSymbol(s) for s in sent_pattern]
    is_bit = np.array([s in (CowSymbol.BIT0, CowSymbol.BIT1) for s in symbols])
    sent_bit = np.array([1 if s is CowSymbol.BIT1 else 0 for s in symbols])
    sent_basis = np.where(is_bit, 0, -2)
    data = events[events["port"] == 0]
    vis = float("nan")
    if monitor_slots is not None:
        mon = events[(events["port"] > 0) & monitor_slots[events["symbol_index"], events["slot"]]]
        plus = int((mon["port"] == 1).sum())
        minus = int((mon["port"] == 2).sum())
        if plus + minus > 0:
            vis = max(0.0, (plus - minus) / (plus + minus))
    return _sift(data, sent_basis, sent_bit, COW_LAYOUT, symbol_rate_hz, seed, vis)


def sift_bb84(
    events: np.ndarray,
    sent_states: Sequence,
    layout: Layout = POL_LAYOUT,
    symbol_rate_hz: float = 1.0,
    seed: int = 0,
) -> SiftedStats:
    """Keep single-basis events whose (passively chosen) basis matches the sender's."""
    names = [g.basis for g in layout.groups]
    sent_basis = np.array([names.index(s.basis.value) for s in sent_states])
    sent_bit = np.array([s.bit for s in sent_states])
    return _sift(events, sent_basis, sent_bit, layout, symbol_rate_hz, seed)


# --- security bounds -------------------------------------------------------------


class SecurityBound(_Protocol):
    def __call__(self, stats: SiftedStats, config: ProtocolConfig) -> float: ...


def cow_secret_fraction(qber: float, visibility: float, config: ProtocolConfig) -> float:
    """1 - f_EC h(Q) - h((1 + V)/2), clamped to [0, 1].

    Stand-in for the collective-attack upper bound used for COW; the
    visibility term charges Eve's information from broken coherence.
    """
    if not 0 <= qber <= 0.5:
        raise ValueError(f"qber must lie in [0, 0.5], got {qber}")
    if not 0 <= visibility <= 1:
        raise ValueError(f"visibility must lie in [0, 1], got {visibility}")
    f = config.error_correction_efficiency
    r = 1 - f * binary_entropy(qber) - binary_entropy((1 + visibility) / 2)
    return min(1.0, max(0.0, r))


def bb84_secret_fraction(qber: float, mu: float, click_prob: float, config: ProtocolConfig) -> float:
    """GLLP-style tagging bound without decoys.

    Omega is the share of clicks that cannot come from multi-photon pulses:
    r = Omega (1 - h(Q / Omega)) - f_EC h(Q).
    """
    if not 0 <= qber <= 0.5:
        raise ValueError(f"qber must lie in [0, 0.5], got {qber}")
    if not click_prob > 0:
        raise ValueError(f"click_prob must be > 0, got {click_prob}")
    omega = max(0.0, (click_prob - multi_photon_probability(mu)) / click_prob)
    if omega == 0:
        return 0.0
    e1 = min(0.5, qber / omega)
    r = omega * (1 - binary_entropy(e1)) - config.error_correction_efficiency * binary_entropy(qber)
    return min(1.0, max(0.0, r))


def cow_bound(stats: SiftedStats, config: ProtocolConfig) -> float:
    return cow_secret_fraction(stats.qber, stats.visibility, config)


def bb84_bound(stats: SiftedStats, config: ProtocolConfig) -> float:
    return bb84_secret_fraction(stats.qber, config.mu, stats.click_prob, config)


def default_bound(protocol: QkdProtocol) -> SecurityBound:
    return cow_bound if protocol is QkdProtocol.COW else bb84_bound


def secret_key_rate(stats: SiftedStats, secret_fraction: float, config: ProtocolConfig | None = None) -> KeyRateResult:
    raw = stats.sifted_rate_hz
    return KeyRateResult(raw, secret_fraction, raw * max(0.0, secret_fraction))
