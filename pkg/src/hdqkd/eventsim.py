"""Monte Carlo simulation of emission, channel and detection with ground truth.

Two samplers live here:

* :func:`simulate_session` produces time tags symbol by symbol (sparsely:
  only clicked symbols are materialized) with jitter, dead time and a
  receiver clock model. It feeds synchronization and sifting.
* :func:`sample_blocks` draws whole finite-key blocks from the exact
  multinomial law of the per-symbol process, resolved by photon number. It
  is fast enough for the 10^4-block coverage checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np
from scipy.stats import poisson

from .channel import ChannelParams, basis_transmittance, dead_time_coefficient
from .errors import Unsynchronized
from .optimizer import AttenuationSample
from .security import ObservedBlock, ProtocolParams

__all__ = [
    "BlockSample",
    "ClockModel",
    "FilterResult",
    "SiftResult",
    "SymbolSequence",
    "TagRecord",
    "TagStream",
    "TimebinGeometry",
    "apply_time_filter",
    "attenuation_samples",
    "decode_tags",
    "generate_sequence",
    "overlap_from_confusion",
    "sample_blocks",
    "sift_and_count",
    "sifted_qber",
    "simulate_session",
]

Z, X = 0, 1
NO_SOURCE = -1
_NMAX = 30


# ---------------------------------------------------------------- sequence

@dataclass(frozen=True, eq=False)
class SymbolSequence:
    """Sender's symbol pattern.

    ``basis`` is 0 for Z and 1 for X, ``state`` in ``[0, d)``, ``decoy`` True
    for the low intensity. A looped sequence repeats cyclically; otherwise
    symbol ``g`` exists only for ``0 <= g < len``.
    """

    basis: np.ndarray
    state: np.ndarray
    decoy: np.ndarray
    d: int
    looped: bool = True

    def __post_init__(self):
        n = len(self.basis)
        if n < 1 or len(self.state) != n or len(self.decoy) != n:
            raise ValueError("sequence arrays must be non-empty and of equal length")
        if np.any(self.state >= self.d):
            raise ValueError("state index out of range")

    def __len__(self) -> int:
        return len(self.basis)

    def positions(self, g: np.ndarray) -> np.ndarray:
        """Sequence position of global symbol indices (``-1`` if outside)."""
        g = np.asarray(g, dtype=np.int64)
        if self.looped:
            return np.mod(g, len(self))
        return np.where((g >= 0) & (g < len(self)), g, -1)


def generate_sequence(length: int = 1000, d: int = 4, P_Z: float = 0.9, p_mu1: float = 0.76,
                      seed=None, looped: bool = True) -> SymbolSequence:
    """Random symbol sequence with the given basis and intensity probabilities."""
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = np.random.default_rng(seed)
    basis = (rng.random(length) >= P_Z).astype(np.uint8)
    state = rng.integers(0, d, length, dtype=np.uint8)
    decoy = rng.random(length) >= p_mu1
    return SymbolSequence(basis, state, decoy, d, looped)


# ---------------------------------------------------------------- geometry

@dataclass(frozen=True)
class TimebinGeometry:
    """Temporal layout of one symbol frame and the detector routing.

    Z outcome ``v`` arrives in slot ``v``; X outcome ``v`` arrives on channel
    ``x_channels[v % nx]`` in slot ``1 + v // nx``. Slot ``j`` is centred at
    ``(j + 0.5) * bin_separation`` after the frame start.
    """

    clock_period: float = 2e-9
    bin_separation: float = 200e-12
    z_slots: int = 5
    x_slots: int = 6
    jitter_sigma: float = 28.9e-12
    filter_window: float = 100e-12
    z_channels: tuple = (0, 1)
    x_channels: tuple = (2, 3)

    def __post_init__(self):
        if not self.bin_separation > self.filter_window > 0:
            raise ValueError("need bin_separation > filter_window > 0")
        if max(self.z_slots, self.x_slots) * self.bin_separation > self.clock_period * (1 + 1e-9):
            raise ValueError("slots do not fit into the clock period")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be >= 0")
        if set(self.z_channels) & set(self.x_channels):
            raise ValueError("Z and X channels must be distinct")

    @classmethod
    def for_dimension(cls, d: int, rate: float = 500e6, **overrides) -> "TimebinGeometry":
        """Default layout: 2D uses 3 channels, higher dimensions 4."""
        period = 1.0 / rate
        if d == 2:
            base = dict(bin_separation=400e-12, z_slots=2, x_slots=3,
                        z_channels=(0,), x_channels=(1, 2))
        else:
            bin_sep = 800e-12 / d
            base = dict(bin_separation=bin_sep, z_slots=d + 1, x_slots=d + 2,
                        z_channels=(0, 1), x_channels=(2, 3),
                        filter_window=min(100e-12, bin_sep / 2))
        base["clock_period"] = period
        base.update(overrides)
        return cls(**base)

    @property
    def n_channels(self) -> int:
        return len(self.z_channels) + len(self.x_channels)

    def check_dimension(self, d: int) -> None:
        nx = len(self.x_channels)
        if d > self.z_slots or 1 + (d - 1) // nx >= self.x_slots:
            raise ValueError(f"geometry cannot host d={d}")

    def slot_of(self, basis: np.ndarray, outcome: np.ndarray) -> np.ndarray:
        nx = len(self.x_channels)
        return np.where(basis == Z, outcome, 1 + outcome // nx)

    def channel_of(self, basis: np.ndarray, outcome: np.ndarray) -> np.ndarray:
        zc = np.asarray(self.z_channels)
        xc = np.asarray(self.x_channels)
        return np.where(basis == Z, zc[outcome % len(zc)], xc[outcome % len(xc)]).astype(np.uint8)

    def template(self, d: int, nbins: int) -> np.ndarray:
        """Expected arrival-phase occupancy over one clock period (unnormalized)."""
        edges = np.linspace(0.0, self.clock_period, nbins + 1)
        centres = 0.5 * (edges[1:] + edges[:-1])
        slots = set(range(d))
        nx = len(self.x_channels)
        slots |= {1 + v // nx for v in range(d)}
        out = np.zeros(nbins)
        width = max(self.bin_separation / 4, self.clock_period / nbins)
        for j in slots:
            c = (j + 0.5) * self.bin_separation
            dist = np.abs((centres - c + self.clock_period / 2) % self.clock_period
                          - self.clock_period / 2)
            out += dist <= width
        return out


# ---------------------------------------------------------------- clock

@dataclass(frozen=True)
class ClockModel:
    """Receiver clock error ``x(t)`` added to true arrival times.

    ``x(t) = offset + fractional_offset*t + drift_rate*t**2/2 + x_rw(t)`` plus
    independent white phase noise per tag. ``x_rw`` integrates a random walk
    of fractional frequency with increment variance ``random_walk_psd * dt``.
    """

    offset: float = 0.0
    fractional_offset: float = 0.0
    drift_rate: float = 0.0
    random_walk_psd: float = 0.0
    white_pm_sigma: float = 0.0
    rw_step: float = 1e-3

    def __post_init__(self):
        if self.white_pm_sigma < 0 or self.random_walk_psd < 0 or self.rw_step <= 0:
            raise ValueError("noise intensities must be >= 0 and rw_step > 0")

    def deterministic(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.offset + self.fractional_offset * t + 0.5 * self.drift_rate * t * t

    def apply(self, t, rng: np.random.Generator) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        x = self.deterministic(t)
        if self.random_walk_psd > 0 and t.size:
            n = int(math.ceil(max(t.max(), 0.0) / self.rw_step)) + 2
            y = np.cumsum(rng.normal(0.0, math.sqrt(self.random_walk_psd * self.rw_step), n))
            grid = np.arange(n) * self.rw_step
            xr = np.concatenate([[0.0], np.cumsum(y[:-1] * self.rw_step)])
            x = x + np.interp(t, grid, xr)
        if self.white_pm_sigma > 0:
            x = x + rng.normal(0.0, self.white_pm_sigma, t.shape)
        return t + x


# ---------------------------------------------------------------- tags

class TagRecord(NamedTuple):
    arrival_time: float
    channel: int
    truth_symbol: int
    truth_photons: int
    truth_basis: int
    truth_state: int
    is_dark: bool


@dataclass(frozen=True, eq=False)
class TagStream:
    """Columnar time-tag stream sorted by receiver arrival time.

    Truth columns: ``symbol`` is the emitting symbol index (``-1`` for a
    pure dark count), ``photons`` the photon number at the source, ``basis``
    and ``state`` the prepared symbol. In a blind stream they are None.
    """

    time: np.ndarray
    channel: np.ndarray
    symbol: np.ndarray | None = None
    photons: np.ndarray | None = None
    basis: np.ndarray | None = None
    state: np.ndarray | None = None
    is_dark: np.ndarray | None = None
    n_sent: int = 0

    def __len__(self) -> int:
        return len(self.time)

    @property
    def blind(self) -> bool:
        return self.symbol is None

    def select(self, mask) -> "TagStream":
        pick = (lambda a: None if a is None else a[mask])
        return TagStream(self.time[mask], self.channel[mask], pick(self.symbol),
                         pick(self.photons), pick(self.basis), pick(self.state),
                         pick(self.is_dark), self.n_sent)

    def stripped(self) -> "TagStream":
        """Copy without truth columns (what the receiver actually sees)."""
        return TagStream(self.time, self.channel, n_sent=self.n_sent)

    def shifted(self, dt: float) -> "TagStream":
        return TagStream(self.time + dt, self.channel, self.symbol, self.photons, self.basis,
                         self.state, self.is_dark, self.n_sent)

    def records(self) -> Iterator[TagRecord]:
        if self.blind:
            raise ValueError("blind stream has no truth fields")
        for row in zip(self.time.tolist(), self.channel.tolist(), self.symbol.tolist(),
                       self.photons.tolist(), self.basis.tolist(), self.state.tolist(),
                       self.is_dark.tolist()):
            yield TagRecord(*row)

    @classmethod
    def concatenate(cls, parts: list["TagStream"]) -> "TagStream":
        if not parts:
            return _empty_stream(0)
        cat = (lambda name: np.concatenate([getattr(p, name) for p in parts]))
        out = cls(cat("time"), cat("channel"), cat("symbol"), cat("photons"), cat("basis"),
                  cat("state"), cat("is_dark"), sum(p.n_sent for p in parts))
        return out.select(np.argsort(out.time, kind="stable"))


def _empty_stream(n_sent: int) -> TagStream:
    return TagStream(np.zeros(0), np.zeros(0, np.uint8), np.zeros(0, np.int64),
                     np.zeros(0, np.uint8), np.zeros(0, np.uint8), np.zeros(0, np.uint8),
                     np.zeros(0, bool), n_sent)


def _class_positions(seq: SymbolSequence):
    """Sorted sequence positions for each (basis, decoy) class."""
    return {(b, dec): np.flatnonzero((seq.basis == b) & (seq.decoy == dec))
            for b in (Z, X) for dec in (False, True)}


def _occurrences_before(g: int, pos: np.ndarray, L: int) -> int:
    return (g // L) * len(pos) + int(np.searchsorted(pos, g % L))


def _photon_pmf(mu: float, nmax: int = _NMAX) -> np.ndarray:
    pmf = poisson.pmf(np.arange(nmax + 1), mu)
    pmf[-1] += poisson.sf(nmax, mu)
    return pmf


def _simulate_range(rng, seq, geometry, channel, params, g0, g1):
    """Clicks of symbols ``g0 <= g < g1`` before dead time, in true time."""
    d = params.d
    L = len(seq)
    T = geometry.clock_period
    b = geometry.bin_separation
    parts = []
    for (basis, dec), pos in _class_positions(seq).items():
        if len(pos) == 0:
            continue
        if seq.looped:
            start = _occurrences_before(g0, pos, L)
            n_occ = _occurrences_before(g1, pos, L) - start
        else:
            lo, hi = np.searchsorted(pos, [g0, g1])
            start, n_occ = int(lo), int(hi - lo)
        if n_occ <= 0:
            continue
        mu = float(params.mu2 if dec else params.mu1)
        eta = float(basis_transmittance(channel, d, "Z" if basis == Z else "X"))
        no_click = (1.0 - eta) ** np.arange(_NMAX + 1) * (1.0 - channel.P_DC)
        weights = _photon_pmf(mu) * (1.0 - no_click)
        q = float(weights.sum())
        if q <= 0:
            continue
        k = int(rng.binomial(n_occ, min(q, 1.0)))
        if k == 0:
            continue
        ranks = start + np.sort(rng.choice(n_occ, size=k, replace=False))
        if seq.looped:
            g = (ranks // len(pos)) * L + pos[ranks % len(pos)]
        else:
            g = pos[ranks]
        n = rng.choice(_NMAX + 1, size=k, p=weights / q)
        p_dark_only = np.where(n == 0, 1.0, (1.0 - eta) ** n * channel.P_DC / (1.0 - no_click[n]))
        dark = rng.random(k) < p_dark_only
        sent_state = seq.state[seq.positions(g)].astype(np.int64)
        flip = rng.random(k) < channel.P_err
        wrong = (sent_state + rng.integers(1, d, k)) % d if d > 1 else sent_state
        outcome = np.where(flip, wrong, sent_state)
        outcome = np.where(dark, rng.integers(0, d, k), outcome)
        basis_arr = np.full(k, basis, np.uint8)
        slot = geometry.slot_of(basis_arr, outcome)
        jitter = (rng.normal(0.0, geometry.jitter_sigma, k) if geometry.jitter_sigma > 0
                  else np.zeros(k))
        spread = np.where(dark, rng.uniform(-0.5 * b, 0.5 * b, k), jitter)
        t = g * T + (slot + 0.5) * b + spread
        parts.append(TagStream(
            time=t,
            channel=geometry.channel_of(basis_arr, outcome),
            symbol=np.where(dark, NO_SOURCE, g).astype(np.int64),
            photons=n.astype(np.uint8),
            basis=basis_arr,
            state=sent_state.astype(np.uint8),
            is_dark=dark,
        ))
    return TagStream.concatenate(parts)


def _dead_time_mask(time: np.ndarray, groups: np.ndarray | None, t_DT: float) -> np.ndarray:
    """Non-paralyzable dead time; ``time`` must be sorted."""
    keep = np.ones(len(time), dtype=bool)
    if t_DT <= 0 or len(time) < 2:
        return keep
    if groups is None:
        groups = np.zeros(len(time), dtype=np.int64)
    free_at: dict[int, float] = {}
    for i, (t, gr) in enumerate(zip(time.tolist(), groups.tolist())):
        if t < free_at.get(gr, -math.inf):
            keep[i] = False
        else:
            free_at[gr] = t + t_DT
    return keep


def simulate_session(seq: SymbolSequence, geometry: TimebinGeometry, channel: ChannelParams,
                     params: ProtocolParams, duration_s: float | None = None,
                     clock: ClockModel | None = None, seed=None, *, n_symbols: int | None = None,
                     loss_series: tuple | None = None, dead_time_scope: str = "single",
                     blind: bool = False) -> TagStream:
    """Simulate detections of a session.

    Parameters
    ----------
    seq : SymbolSequence
        Pattern emitted from global symbol index 0 (looped if ``seq.looped``).
    geometry : TimebinGeometry
        Its ``clock_period`` must equal ``1 / params.R``.
    channel, params
        Channel and protocol settings. Both parties use the same basis on every
        symbol (``P_Z`` is the joint probability).
    duration_s, n_symbols
        Session length; give exactly one.
    clock : ClockModel, optional
        Receiver clock error; ideal if omitted.
    loss_series : (times, losses), optional
        Piecewise-constant attenuation overriding ``channel.loss_db``.
    dead_time_scope : {"single", "per_channel"}
        ``single`` lets every click blind one effective detector, matching the
        analytic single-coefficient model; ``per_channel`` keeps independent
        dead time per channel.
    blind : bool
        Strip truth columns.
    """
    if (duration_s is None) == (n_symbols is None):
        raise ValueError("give exactly one of duration_s and n_symbols")
    if abs(geometry.clock_period * float(params.R) - 1.0) > 1e-6:
        raise ValueError("geometry clock period must equal 1/R")
    if dead_time_scope not in ("single", "per_channel"):
        raise ValueError("dead_time_scope must be 'single' or 'per_channel'")
    if not seq.d == params.d:
        raise ValueError("sequence dimension differs from params.d")
    geometry.check_dimension(params.d)
    T = geometry.clock_period
    M = int(n_symbols) if n_symbols is not None else int(round(duration_s / T))
    if not seq.looped and M > len(seq):
        raise ValueError("non-looped sequence shorter than the session")
    rng = np.random.default_rng(seed)

    if loss_series is None:
        segments = [(0, M, channel)]
    else:
        times, losses = (np.asarray(a, dtype=float) for a in loss_series)
        starts = np.clip(np.ceil(times / T).astype(np.int64), 0, M)
        ends = np.append(starts[1:], M)
        segments = [(int(s), int(e), channel.with_loss(float(L)))
                    for s, e, L in zip(starts, ends, losses) if e > s]
    stream = TagStream.concatenate(
        [_simulate_range(rng, seq, geometry, ch, params, g0, g1) for g0, g1, ch in segments]
    )
    groups = None if dead_time_scope == "single" else stream.channel.astype(np.int64)
    stream = stream.select(_dead_time_mask(stream.time, groups, channel.t_DT))
    if clock is not None:
        stream = TagStream(clock.apply(stream.time, rng), stream.channel, stream.symbol,
                           stream.photons, stream.basis, stream.state, stream.is_dark)
        stream = stream.select(np.argsort(stream.time, kind="stable"))
    stream = TagStream(stream.time, stream.channel, stream.symbol, stream.photons,
                       stream.basis, stream.state, stream.is_dark, M)
    return stream.stripped() if blind else stream


# ---------------------------------------------------------------- filtering

@dataclass(frozen=True, eq=False)
class FilterResult:
    tags: TagStream
    retention: float
    signal_retention: float | None


def _frame_phase(time, geometry, offset=0.0, freq=0.0):
    t = np.asarray(time, dtype=float)
    t = t - offset - freq * t
    g = np.floor(t / geometry.clock_period).astype(np.int64)
    return g, t - g * geometry.clock_period


def apply_time_filter(tags: TagStream, geometry: TimebinGeometry, offset: float = 0.0,
                      freq: float = 0.0) -> FilterResult:
    """Keep tags within ``filter_window/2`` of the nearest slot centre."""
    _, ph = _frame_phase(tags.time, geometry, offset, freq)
    b = geometry.bin_separation
    dist = ph - (np.floor(ph / b) + 0.5) * b
    keep = np.abs(dist) <= geometry.filter_window / 2
    total = len(tags)
    retention = float(keep.mean()) if total else 1.0
    sig = None
    if not tags.blind:
        signal = ~tags.is_dark
        sig = float(keep[signal].mean()) if signal.any() else 1.0
    return FilterResult(tags.select(keep), retention, sig)


# ---------------------------------------------------------------- sifting

@dataclass(frozen=True, eq=False)
class Decoded:
    g: np.ndarray
    bob_basis: np.ndarray
    outcome: np.ndarray
    valid: np.ndarray
    pos: np.ndarray


def decode_tags(time, channel, seq: SymbolSequence, geometry: TimebinGeometry,
                offset: float = 0.0, freq: float = 0.0) -> Decoded:
    """Map tags to symbol indices and measured outcomes."""
    d = seq.d
    g, ph = _frame_phase(time, geometry, offset, freq)
    slot = np.floor(ph / geometry.bin_separation).astype(np.int64)
    channel = np.asarray(channel)
    zc, xc = np.asarray(geometry.z_channels), np.asarray(geometry.x_channels)
    is_z = np.isin(channel, zc)
    is_x = np.isin(channel, xc)
    x_index = np.searchsorted(np.sort(xc), channel)
    x_index = np.argsort(xc)[np.clip(x_index, 0, len(xc) - 1)]
    x_out = (slot - 1) * len(xc) + x_index
    outcome = np.where(is_z, slot, x_out)
    valid = (is_z | is_x) & (outcome >= 0) & (outcome < d)
    pos = seq.positions(g)
    valid &= pos >= 0
    return Decoded(g, np.where(is_z, Z, X).astype(np.uint8), np.where(valid, outcome, 0),
                   valid, pos)


@dataclass(frozen=True, eq=False)
class SiftResult:
    block: ObservedBlock
    qber_estimate: float
    disclosed: np.ndarray
    n_unresolved: int


def sift_and_count(tags: TagStream, seq: SymbolSequence, geometry: TimebinGeometry,
                   offset: float = 0.0, freq: float = 0.0, disclosure_fraction: float = 0.10,
                   seed=None, n_sent: float | None = None) -> SiftResult:
    """Sift tags against the sent sequence and count per basis and intensity.

    A random ``disclosure_fraction`` of sifted Z events is revealed for the
    QBER estimate and left out of the key counts; X events are all counted.

    Raises
    ------
    Unsynchronized
        If no tag maps onto a symbol of the sequence.
    """
    if not 0 <= disclosure_fraction < 1:
        raise ValueError("disclosure_fraction must lie in [0, 1)")
    if len(tags) == 0:
        raise Unsynchronized("no tags to sift")
    dec = decode_tags(tags.time, tags.channel, seq, geometry, offset, freq)
    if not dec.valid.any():
        raise Unsynchronized("no tag resolves to a sent symbol")
    pos = np.where(dec.valid, dec.pos, 0)
    a_basis = seq.basis[pos]
    sifted = dec.valid & (a_basis == dec.bob_basis)
    err = sifted & (seq.state[pos] != dec.outcome)
    decoy = seq.decoy[pos]

    rng = np.random.default_rng(seed)
    z_idx = np.flatnonzero(sifted & (a_basis == Z))
    n_disc = int(round(disclosure_fraction * len(z_idx)))
    disclosed = np.sort(rng.choice(z_idx, size=n_disc, replace=False)) if n_disc else z_idx[:0]
    key = sifted.copy()
    key[disclosed] = False
    qber = float(err[disclosed].mean()) if n_disc else (
        float(err[z_idx].mean()) if len(z_idx) else 0.0)

    def count(mask):
        return float(np.count_nonzero(mask))

    zb, xb = key & (a_basis == Z), key & (a_basis == X)
    block = ObservedBlock(
        n_Z_mu1=count(zb & ~decoy), n_Z_mu2=count(zb & decoy),
        m_Z_mu1=count(zb & ~decoy & err), m_Z_mu2=count(zb & decoy & err),
        n_X_mu1=count(xb & ~decoy), n_X_mu2=count(xb & decoy),
        m_X_mu1=count(xb & ~decoy & err), m_X_mu2=count(xb & decoy & err),
        N_sent=float(tags.n_sent if n_sent is None else n_sent),
    )
    return SiftResult(block, qber, disclosed, int(np.count_nonzero(~dec.valid)))


def sifted_qber(tags: TagStream, seq: SymbolSequence, geometry: TimebinGeometry,
                offset: float = 0.0, freq: float = 0.0) -> tuple[float, int]:
    """Z-basis error rate over all sifted events and the number of those events."""
    dec = decode_tags(tags.time, tags.channel, seq, geometry, offset, freq)
    pos = np.where(dec.valid, dec.pos, 0)
    z = dec.valid & (seq.basis[pos] == Z) & (dec.bob_basis == Z)
    n = int(np.count_nonzero(z))
    if n == 0:
        return math.nan, 0
    return float(np.mean(seq.state[pos][z] != dec.outcome[z])), n


# ---------------------------------------------------------------- overlap

def overlap_from_confusion(matrix, d: int) -> float:
    """Overlap parameter ``c = -log2 max |<t_i|f_j>|^2`` in bits.

    ``matrix`` has rows for prepared states (``d`` Z states, optionally
    followed by ``d`` X states) and ``2d`` columns (Z outcomes then X
    outcomes). Each cross-basis row block is normalized to unit sum before
    taking the maximum, so detector losses do not bias ``c``.
    """
    m = np.asarray(matrix, dtype=float)
    if m.shape not in ((d, 2 * d), (2 * d, 2 * d)):
        raise ValueError(f"matrix must have shape ({d}, {2 * d}) or ({2 * d}, {2 * d})")
    if np.any(m < 0) or np.any(m.sum(axis=1) > 1 + 1e-9):
        raise ValueError("rows must be non-negative with sums <= 1")
    blocks = [m[:d, d:]]
    if m.shape[0] == 2 * d:
        blocks.append(m[d:, :d])
    best = 0.0
    for blk in blocks:
        sums = blk.sum(axis=1, keepdims=True)
        rows = sums[:, 0] > 0
        if rows.any():
            best = max(best, float((blk[rows] / sums[rows]).max()))
    if best == 0.0:
        raise ValueError("no cross-basis detections")
    return min(-math.log2(best), math.log2(d))


# ---------------------------------------------------------------- blocks

@dataclass(frozen=True, eq=False)
class BlockSample:
    """Batch of simulated blocks plus photon-number-resolved truth.

    ``truth`` keys: ``s_Z0``, ``s_Z1`` (Z detections from vacuum and
    single-photon emissions), ``s_X1`` and ``v_X1`` (X single-photon
    detections and errors).
    """

    block: ObservedBlock
    truth: dict = field(default_factory=dict)


def sample_blocks(params: ProtocolParams, channel: ChannelParams, n_sent: float,
                  n_blocks: int = 1, seed=None, dead_time: bool = True) -> BlockSample:
    """Draw blocks of ``n_sent`` symbols from the per-symbol process.

    Symbols split multinomially over basis and intensity, then over photon
    number; each photon survives with the basis transmittance and a dark count
    adds independently. With ``dead_time`` every click survives with the
    steady-state live fraction ``1/(1 + R q t_DT)`` of the simulated click
    probability ``q``.
    """
    rng = np.random.default_rng(seed)
    d = params.d
    classes = [("Z", 1), ("Z", 2), ("X", 1), ("X", 2)]
    mus = {1: float(params.mu1), 2: float(params.mu2)}
    ps = {1: float(params.p_mu1), 2: float(params.p_mu2)}
    bprob = {"Z": float(params.P_Z), "X": float(params.P_X)}
    probs = np.array([bprob[b] * ps[i] for b, i in classes])
    n = np.arange(_NMAX + 1)
    yields, dark_frac, pmfs = {}, {}, {}
    q_tot = 0.0
    for (b, i), pr in zip(classes, probs):
        eta = float(basis_transmittance(channel, d, b))
        miss = (1.0 - eta) ** n
        y = 1.0 - miss * (1.0 - channel.P_DC)
        yields[b, i] = y
        with np.errstate(divide="ignore", invalid="ignore"):
            dark_frac[b, i] = np.where(y > 0, miss * channel.P_DC / y, 0.0)
        pmfs[b, i] = _photon_pmf(mus[i])
        q_tot += pr * float(pmfs[b, i] @ y)
    live = 1.0
    if dead_time:
        live = float(dead_time_coefficient(params.R, q_tot, channel.t_DT))

    n_class = rng.multinomial(int(n_sent), probs, size=n_blocks)
    out, truth = {}, {}
    for k, (b, i) in enumerate(classes):
        per_n = rng.multinomial(n_class[:, k], pmfs[b, i])
        clicks = rng.binomial(per_n, yields[b, i])
        if live < 1.0:
            clicks = rng.binomial(clicks, live)
        dark = rng.binomial(clicks, dark_frac[b, i])
        errs = rng.binomial(clicks - dark, channel.P_err) + rng.binomial(dark, 1.0 - 1.0 / d)
        out[f"n_{b}_mu{i}"] = clicks.sum(axis=1).astype(float)
        out[f"m_{b}_mu{i}"] = errs.sum(axis=1).astype(float)
        truth[f"s_{b}0"] = truth.get(f"s_{b}0", 0.0) + clicks[:, 0]
        truth[f"s_{b}1"] = truth.get(f"s_{b}1", 0.0) + clicks[:, 1]
        truth[f"v_{b}1"] = truth.get(f"v_{b}1", 0.0) + errs[:, 1]
    squeeze = (lambda a: a[0] if n_blocks == 1 else a)
    block = ObservedBlock(N_sent=float(n_sent), **{k: squeeze(v) for k, v in out.items()})
    return BlockSample(block, {k: squeeze(np.asarray(v, dtype=float)) for k, v in truth.items()})


def attenuation_samples(params: ProtocolParams, channel: ChannelParams, losses,
                        interval_s: float = 0.1, seed=None, t0: float = 0.0) -> list[AttenuationSample]:
    """One :class:`AttenuationSample` per loss value, each covering ``interval_s``."""
    rng = np.random.default_rng(seed)
    n_sent = float(round(interval_s * float(params.R)))
    out = []
    for k, L in enumerate(np.asarray(losses, dtype=float)):
        bs = sample_blocks(params, channel.with_loss(float(L)), n_sent, 1,
                           seed=int(rng.integers(2**63)))
        b = bs.block
        out.append(AttenuationSample(
            timestamp=t0 + k * interval_s, loss_db=float(L), n_sent=n_sent,
            n_Z_mu1=float(b.n_Z_mu1), n_Z_mu2=float(b.n_Z_mu2),
            m_Z_mu1=float(b.m_Z_mu1), m_Z_mu2=float(b.m_Z_mu2),
            n_X_mu1=float(b.n_X_mu1), n_X_mu2=float(b.n_X_mu2),
            m_X_mu1=float(b.m_X_mu1), m_X_mu2=float(b.m_X_mu2)))
    return out
