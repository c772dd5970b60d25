"""Clock synchronization from the detected signal itself.

Coarse acquisition correlates the disclosed symbol pattern with the tags,
tracking follows the arrival-phase peak window by window with a PI loop, and
cycle slips are found by scanning whole clock periods until the sifted QBER
drops back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy import fft as sfft

from .errors import AcquisitionFailed, PeakLost, SlipUnrecovered
from .eventsim import Z, SymbolSequence, TagStream, TimebinGeometry, decode_tags

__all__ = [
    "Acquisition",
    "SyncState",
    "TrackConfig",
    "acquire",
    "coarse_acquire",
    "detect_and_recover_cycle_slip",
    "pattern_length_for_span",
    "run_tracking",
    "track",
]


@dataclass(frozen=True)
class Acquisition:
    offset: float
    cycles: int
    phase: float
    significance: float


def _estimate_phase(time: np.ndarray, geometry: TimebinGeometry, d: int, nbins: int = 256):
    """Frame phase in ``[0, T)`` from the arrival-phase histogram."""
    T = geometry.clock_period
    ph = np.mod(time, T)
    hist, _ = np.histogram(ph, bins=nbins, range=(0.0, T))
    tmpl = geometry.template(d, nbins)
    score = np.real(sfft.ifft(sfft.fft(hist) * np.conj(sfft.fft(tmpl))))
    shift = int(np.argmax(score)) * T / nbins
    # refine with the mean residual of tags near slot centres
    b = geometry.bin_separation
    rel = np.mod(ph - shift, T)
    resid = rel - (np.floor(rel / b) + 0.5) * b
    near = np.abs(resid) < b / 4
    if near.any():
        shift += float(np.mean(resid[near]))
    return float(np.mod(shift, T))


def _pattern(seq: SymbolSequence) -> np.ndarray:
    """Complex Z-basis pattern: d-th roots of unity, zero on X symbols."""
    w = np.exp(2j * np.pi * seq.state.astype(float) / seq.d)
    return np.where(seq.basis == Z, w, 0.0)


def acquire(seq: SymbolSequence, tags: TagStream, geometry: TimebinGeometry,
            search_span: float, threshold: float = 8.0) -> Acquisition:
    """Cross-correlate the disclosed pattern with the tags.

    The returned offset maps sender time onto receiver time
    (``t_rx = t_tx + offset``). For a looped pattern the offset is only
    defined modulo the pattern period; the representative closest to zero
    is returned.

    Raises
    ------
    AcquisitionFailed
        If there are no tags or the correlation peak stands less than
        ``threshold`` standard deviations above the mean.
    """
    if len(tags) == 0:
        raise AcquisitionFailed("no tags")
    T = geometry.clock_period
    d = seq.d
    phase = _estimate_phase(tags.time, geometry, d)
    dec = decode_tags(tags.time, tags.channel, _identity_seq(seq), geometry, phase)
    z = dec.valid & (dec.bob_basis == Z)
    if not z.any():
        raise AcquisitionFailed("no Z-basis tags")
    c = dec.g[z]
    w = np.exp(-2j * np.pi * dec.outcome[z] / d)
    A = np.conj(_pattern(seq))
    L = len(seq)
    # score[s] = sum_j B[j] * conj(A[j - s]); a match contributes exactly 1
    if seq.looped:
        B = np.zeros(L, complex)
        np.add.at(B, np.mod(c, L), w)
        score = np.real(sfft.ifft(sfft.fft(B) * np.conj(sfft.fft(A))))
        k_all = np.arange(L)
        k_all = np.where(k_all > L // 2, k_all - L, k_all)
        cand = np.ones(L, dtype=bool)
    else:
        c0 = int(c.min())
        nb = int(c.max()) - c0 + 1
        B = np.zeros(nb, complex)
        np.add.at(B, c - c0, w)
        n = sfft.next_fast_len(L + nb)
        score = np.real(sfft.ifft(sfft.fft(B, n) * np.conj(sfft.fft(A, n))))
        s_all = np.arange(n)
        k_all = np.where(s_all < nb, s_all, s_all - n) + c0
        cand = np.abs(k_all * T + phase) <= search_span + T
    vals = score[cand]
    if vals.size < 2:
        raise AcquisitionFailed("search span admits no candidate offsets")
    best = int(np.argmax(vals))
    spread = float(np.std(vals))
    sig = (float(vals[best]) - float(np.mean(vals))) / spread if spread > 0 else 0.0
    if not sig >= threshold:
        raise AcquisitionFailed(f"correlation peak significance {sig:.2f} below {threshold}")
    k = int(k_all[cand][best])
    return Acquisition(k * T + phase, k, phase, sig)


def pattern_length_for_span(search_span: float, clock_period: float, minimum: int = 1000) -> int:
    """Shortest power-of-two looped pattern that keeps offsets within ``search_span`` unique.

    The pattern period must exceed ``2 * (search_span + clock_period)``; a 10%
    margin is added.
    """
    need = 2.2 * (search_span + clock_period) / clock_period
    return max(minimum, 1 << int(math.ceil(math.log2(max(need, 1.0)))))


def _identity_seq(seq: SymbolSequence) -> SymbolSequence:
    """Looped stand-in so every frame index decodes while acquiring."""
    return SymbolSequence(seq.basis[:1], seq.state[:1], seq.decoy[:1], seq.d, looped=True)


def coarse_acquire(seq: SymbolSequence, tags: TagStream, geometry: TimebinGeometry,
                   search_span: float, threshold: float = 8.0) -> float:
    """Global receiver-minus-sender offset in seconds; see :func:`acquire`."""
    return acquire(seq, tags, geometry, search_span, threshold).offset


# ---------------------------------------------------------------- tracking

@dataclass(frozen=True)
class TrackConfig:
    """Loop constants of the drift tracker.

    Each window is split into ``subwindows``; their arrival phases (modulo the
    bin separation) are averaged on the circle, unwrapped and fitted with a
    line. ``kp`` scales the phase correction, ``kf`` the fitted slope and
    ``ki`` the integral path from phase error to frequency. ``significance``
    applies to ``sqrt(sum_k |S_k|^2 / N)`` with ``S_k`` the sub-window phasor
    sums; it is about 1 for pure noise.
    """

    window: float = 0.1
    subwindows: int = 16
    nbins: int = 64
    kp: float = 1.0
    kf: float = 1.0
    ki: float = 0.1
    min_tags: int = 20
    significance: float = 5.0
    max_holdover: int | None = None


@dataclass(frozen=True)
class SyncState:
    """Current estimate of ``t_rx - t_tx``; ``offset_at(t)`` extrapolates it linearly."""

    offset_estimate: float
    freq_estimate: float = 0.0
    locked: bool = True
    last_histogram: tuple | None = None
    t_ref: float = 0.0
    holdover: int = 0

    def offset_at(self, t):
        return self.offset_estimate + self.freq_estimate * (np.asarray(t, dtype=float) - self.t_ref)


def _holdover(state: SyncState, hist, config: TrackConfig) -> SyncState:
    held = replace(state, locked=False, last_histogram=hist, holdover=state.holdover + 1)
    if config.max_holdover is not None and held.holdover > config.max_holdover:
        raise PeakLost(f"no usable peak for {held.holdover} windows")
    return held


def track(state: SyncState, times: np.ndarray, t_start: float, t_stop: float,
          geometry: TimebinGeometry, config: TrackConfig = TrackConfig()) -> SyncState:
    """Update the offset and frequency estimate from one window of tags.

    A window with too few tags or an insignificant phase peak leaves the
    estimate untouched (holdover) and clears ``locked``.

    Raises
    ------
    PeakLost
        When more than ``config.max_holdover`` consecutive windows failed.
    """
    T = geometry.clock_period
    b = geometry.bin_separation
    times = np.asarray(times, dtype=float)
    pred = state.offset_at(times)
    ph = np.mod(times - pred, T)
    hist = tuple(np.histogram(ph, bins=config.nbins, range=(0.0, T))[0].tolist())
    if len(times) < config.min_tags:
        return _holdover(state, hist, config)
    # slot centres sit at (j + 0.5) b, i.e. at angle pi on the bin circle
    z = np.exp(2j * np.pi * (ph / b - 0.5))
    edges = np.linspace(t_start, t_stop, config.subwindows + 1)
    idx = np.clip(np.searchsorted(edges, times, side="right") - 1, 0, config.subwindows - 1)
    sums = np.bincount(idx, weights=z.real, minlength=config.subwindows) \
        + 1j * np.bincount(idx, weights=z.imag, minlength=config.subwindows)
    counts = np.bincount(idx, minlength=config.subwindows)
    tsum = np.bincount(idx, weights=times, minlength=config.subwindows)
    if math.sqrt(np.sum(np.abs(sums) ** 2) / len(z)) < config.significance:
        return _holdover(state, hist, config)
    use = (counts >= 3) & (np.abs(sums) > 0)
    t_mid = 0.5 * (t_start + t_stop)
    theta = np.unwrap(np.angle(sums[use]))
    r = theta * b / (2 * np.pi)
    tt = tsum[use] / counts[use] - t_mid
    w = counts[use].astype(float)
    if r.size >= 3 and np.ptp(tt) > 0:
        slope, a = np.polyfit(tt, r, 1, w=np.sqrt(w))
    else:
        slope, a = 0.0, float(np.angle(z.sum())) * b / (2 * np.pi)
    width = t_stop - t_start
    offset = float(state.offset_at(t_mid)) + config.kp * a
    freq = state.freq_estimate + config.kf * slope + config.ki * a / width
    return SyncState(offset, freq, True, hist, t_mid, 0)


def run_tracking(state: SyncState, tags: TagStream, geometry: TimebinGeometry,
                 config: TrackConfig = TrackConfig(), t_start: float | None = None,
                 t_stop: float | None = None, truth: Callable | None = None):
    """Track over consecutive windows.

    Returns the final state and telemetry rows
    ``(t_mid, offset_estimate, freq_estimate, locked, residual)``; the residual
    (estimate minus ``truth(t_mid)``) is NaN without ``truth``.
    """
    t = tags.time
    t0 = float(t[0]) if t_start is None else t_start
    t1 = float(t[-1]) if t_stop is None else t_stop
    edges = np.arange(t0, t1 + 1e-15, config.window)
    rows = []
    lo_idx = np.searchsorted(t, edges)
    for k in range(len(edges) - 1):
        a, b = edges[k], edges[k + 1]
        state = track(state, t[lo_idx[k]:lo_idx[k + 1]], a, b, geometry, config)
        mid = 0.5 * (a + b)
        est = float(state.offset_at(mid))
        res = est - float(truth(mid)) if truth is not None else math.nan
        rows.append((mid, est, state.freq_estimate, state.locked, res))
    return state, rows


# ---------------------------------------------------------------- cycle slips

def slip_threshold(d: int) -> float:
    """QBER above which a cycle slip is declared."""
    return 0.8 * (1.0 - 1.0 / d)


def detect_and_recover_cycle_slip(state: SyncState, qber_estimate: float, d: int,
                                  qber_at: Callable[[float], float], clock_period: float,
                                  max_cycles: int = 8, accept: float | None = None) -> SyncState:
    """Shift the offset by whole clock periods when the QBER signals a slip.

    Parameters
    ----------
    state : SyncState
    qber_estimate : float
        QBER measured at the current offset.
    d : int
    qber_at : callable
        Returns the sifted QBER for a trial offset (seconds).
    clock_period : float
    max_cycles : int
        Scan range: ``+1, -1, +2, -2, ...`` up to ``max_cycles``.
    accept : float, optional
        QBER below which a trial offset is accepted; half the slip threshold by default.

    Raises
    ------
    SlipUnrecovered
        If no offset in the scan range is accepted.
    """
    if not qber_estimate > slip_threshold(d):
        return state
    accept = 0.5 * slip_threshold(d) if accept is None else accept
    for k in range(1, max_cycles + 1):
        for step in (k, -k):
            trial = state.offset_estimate + step * clock_period
            q = qber_at(trial)
            if q < accept:
                return replace(state, offset_estimate=trial)
    raise SlipUnrecovered(f"no offset within +-{max_cycles} cycles brings QBER below {accept:.3f}")
