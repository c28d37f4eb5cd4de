"""Lossy fibre channel, SNSPD click statistics and seeded Monte Carlo sampling."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class ChannelParams:
    length_km: float = 0.0
    atten_db_per_km: float = 0.2
    extra_loss_db: float = 0.0
    emulated_by_voa: bool = False

    def __post_init__(self):
        if self.length_km < 0:
            raise ValueError(f"length_km must be >= 0, got {self.length_km}")
        if self.atten_db_per_km < 0:
            raise ValueError(f"atten_db_per_km must be >= 0, got {self.atten_db_per_km}")
        if self.extra_loss_db < 0:
            raise ValueError(f"extra_loss_db must be >= 0, got {self.extra_loss_db}")

    @property
    def total_loss_db(self) -> float:
        return self.length_km * self.atten_db_per_km + self.extra_loss_db


@dataclass(frozen=True)
class DetectorParams:
    """SNSPD model.

    ``misalignment`` is the probability that a detected signal photon lands in
    the outcome orthogonal to the one it should (timing jitter across a slot
    boundary, imperfect receiver alignment). ``slot_duration`` of ``None`` means
    "one clock period", filled in by the protocol pipeline.
    """

    efficiency: float = 0.40
    dark_rate_cps: float = 500.0
    slot_duration: float | None = None
    misalignment: float = 0.0

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise ValueError(f"efficiency must lie in [0, 1], got {self.efficiency}")
        if self.dark_rate_cps < 0:
            raise ValueError(f"dark_rate_cps must be >= 0, got {self.dark_rate_cps}")
        if self.slot_duration is not None and not self.slot_duration > 0:
            raise ValueError(f"slot_duration must be > 0, got {self.slot_duration}")
        if not 0 <= self.misalignment <= 0.5:
            raise ValueError(f"misalignment must lie in [0, 0.5], got {self.misalignment}")


def fibre_transmittance(params: ChannelParams) -> float:
    return 10 ** (-params.total_loss_db / 10)


def dark_click_probability(params: DetectorParams) -> float:
    if params.slot_duration is None or not params.slot_duration > 0:
        raise ValueError("slot_duration must be set and > 0")
    return -math.expm1(-params.dark_rate_cps * params.slot_duration)


def click_probability(mu: float, transmission: float, detector: DetectorParams) -> float:
    """Poissonian click probability including dark counts."""
    if mu < 0:
        raise ValueError(f"mu must be >= 0, got {mu}")
    p_dark = dark_click_probability(detector) if detector.slot_duration else 0.0
    return 1 - (1 - p_dark) * math.exp(-mu * transmission * detector.efficiency)


def multi_photon_probability(mu: float) -> float:
    """P(n >= 2) for a Poissonian pulse of mean ``mu``."""
    if mu < 0:
        raise ValueError(f"mu must be >= 0, got {mu}")
    return -math.expm1(-mu) - mu * math.exp(-mu)


def expected_qber(p_signal_correct: float, p_signal_wrong: float, p_dark: float) -> float:
    """Error rate with dark clicks landing on a random outcome."""
    for name, p in (("p_signal_correct", p_signal_correct), ("p_signal_wrong", p_signal_wrong), ("p_dark", p_dark)):
        if not 0 <= p <= 1:
            raise ValueError(f"{name} must lie in [0, 1], got {p}")
    total = p_signal_correct + p_signal_wrong + p_dark
    if total == 0:
        raise ValueError("no clicks: QBER undefined")
    return (p_signal_wrong + p_dark / 2) / total


# --- Monte Carlo -----------------------------------------------------------

EVENT_DTYPE = np.dtype(
    [("symbol_index", np.int64), ("slot", np.int16), ("port", np.int16), ("is_dark_origin", np.bool_)]
)
EVENT_COLUMNS = EVENT_DTYPE.names

# Fixed so that chunk boundaries, and therefore the stream each symbol draws
# from, never depend on how the work is split.
CHUNK_SYMBOLS = 1 << 16


class DetectionEvent(NamedTuple):
    symbol_index: int
    slot: int
    port: int
    is_dark_origin: bool


def chunk_rng(seed: int, stream: int, chunk: int) -> np.random.Generator:
    """Generator for one chunk, derived positionally from (seed, stream, chunk)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, chunk)))


def sample_detection_events(
    signal_probabilities,
    num_symbols: int,
    seed: int,
    dark_probability: float = 0.0,
    stream: int = 0,
) -> np.ndarray:
    """Draw detector clicks per (symbol, slot, port).

    ``signal_probabilities`` has shape (slots, ports), shared by every symbol,
    or (num_symbols, slots, ports). Signal and dark clicks are independent
    Bernoulli trials; an event is dark-origin when only the dark trial fired.
    Returns a structured array with dtype :data:`EVENT_DTYPE`, sorted by symbol,
    slot, port.
    """
    if num_symbols <= 0:
        raise ValueError(f"num_symbols must be > 0, got {num_symbols}")
    probs = np.asarray(signal_probabilities, dtype=float)
    if probs.ndim == 2:
        probs = np.broadcast_to(probs, (num_symbols,) + probs.shape)
    if probs.ndim != 3 or probs.shape[0] != num_symbols:
        raise ValueError("signal_probabilities must have shape (slots, ports) or (N, slots, ports)")
    if np.any(probs < 0) or np.any(probs > 1) or not 0 <= dark_probability <= 1:
        raise ValueError("probabilities must lie in [0, 1]")
    _, n_slots, n_ports = probs.shape
    parts = []
    for c, start in enumerate(range(0, num_symbols, CHUNK_SYMBOLS)):
        stop = min(start + CHUNK_SYMBOLS, num_symbols)
        rng = chunk_rng(seed, stream, c)
        block = probs[start:stop]
        sig = rng.random(block.shape) < block
        dark = rng.random(block.shape) < dark_probability
        hit = sig | dark
        idx, slot, port = np.nonzero(hit)
        ev = np.empty(len(idx), dtype=EVENT_DTYPE)
        ev["symbol_index"] = idx + start
        ev["slot"] = slot
        ev["port"] = port
        ev["is_dark_origin"] = ~sig[idx, slot, port]
        parts.append(ev)
    return np.concatenate(parts) if parts else np.empty(0, dtype=EVENT_DTYPE)


def iter_events(events: np.ndarray):
    for row in events:
        yield DetectionEvent(int(row[0]), int(row[1]), int(row[2]), bool(row[3]))


def write_events_csv(events: np.ndarray, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        for row in iter_events(events):
            w.writerow([row.symbol_index, row.slot, row.port, int(row.is_dark_origin)])
    return path
