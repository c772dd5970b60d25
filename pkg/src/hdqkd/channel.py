"""Analytic channel and detector model producing expected blocks and key-rate curves."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .security import ObservedBlock, ProtocolParams, SecurityResult, secret_key_length

__all__ = [
    "BASE_RATE",
    "ChannelParams",
    "PostselectionSchedule",
    "basis_transmittance",
    "channel_dead_time",
    "db_to_transmittance",
    "dead_time_coefficient",
    "detection_prob",
    "error_prob",
    "expected_block",
    "generation_rate",
    "key_rate",
    "qber_of",
    "skr_curve",
    "total_click_prob",
    "transmittance_to_db",
]

BASE_RATE = 500e6


def _out(x):
    arr = np.asarray(x, dtype=float)
    return float(arr) if arr.ndim == 0 else arr


@dataclass(frozen=True)
class PostselectionSchedule:
    """Event loss in dB discarded by interferometric post-selection, per basis and d."""

    z_loss_db: dict = field(default_factory=lambda: {2: 0.0, 4: 3.0, 8: 3.0, 16: 3.0})
    x_loss_db: dict = field(default_factory=lambda: {2: 3.0, 4: 3.0, 8: 6.0, 16: 9.0})

    def loss_db(self, d: int, basis: str) -> float:
        table = self.z_loss_db if basis == "Z" else self.x_loss_db
        if d not in table:
            raise ValueError(f"no post-selection entry for d={d}")
        return float(table[d])


@dataclass(frozen=True)
class ChannelParams:
    """Channel attenuation and detector imperfections.

    Parameters
    ----------
    loss_db : float
        Channel attenuation in dB (transmittance includes detector efficiency).
    P_DC : float
        Dark-count probability per symbol slot, aggregated over detectors.
    P_err : float
        Intrinsic probability that a detected photon gives a wrong outcome.
    t_DT : float
        Detector dead time in seconds.
    include_postselection : bool
        Apply the per-basis post-selection loss on top of ``loss_db``.
    error_model : {"corrected", "printed"}
        ``corrected`` scales ``P_err`` by the photon click probability;
        ``printed`` adds it, as in the typeset formula.
    """

    loss_db: float
    P_DC: float = 4e-7
    P_err: float = 0.01
    t_DT: float = 5e-8
    include_postselection: bool = True
    schedule: PostselectionSchedule = field(default_factory=PostselectionSchedule)
    error_model: str = "corrected"

    def __post_init__(self):
        if not (np.all(np.asarray(self.loss_db) >= 0) and np.all(np.isfinite(self.loss_db))):
            raise ValueError("loss_db must be finite and >= 0")
        if not 0 <= self.P_DC <= 1 or not 0 <= self.P_err <= 1:
            raise ValueError("P_DC and P_err must lie in [0, 1]")
        if self.t_DT < 0:
            raise ValueError("t_DT must be >= 0")
        if self.error_model not in ("corrected", "printed"):
            raise ValueError("error_model must be 'corrected' or 'printed'")

    def with_loss(self, loss_db: float) -> "ChannelParams":
        return replace(self, loss_db=loss_db)


def db_to_transmittance(loss_db):
    """``10**(-loss_db/10)``."""
    return _out(10.0 ** (-np.asarray(loss_db, dtype=float) / 10.0))


def transmittance_to_db(eta):
    """Inverse of :func:`db_to_transmittance`."""
    eta = np.asarray(eta, dtype=float)
    if np.any(eta <= 0) or np.any(eta > 1):
        raise ValueError("transmittance must lie in (0, 1]")
    return _out(-10.0 * np.log10(eta))


def generation_rate(d: int, base_rate: float = BASE_RATE, scaling: bool = True) -> float:
    """Symbol rate for dimension ``d``: ``base_rate * 2 / d`` when scaling is on."""
    return base_rate * 2.0 / d if scaling else base_rate


def basis_transmittance(channel: ChannelParams, d: int, basis: str):
    """Channel transmittance times the post-selection survival of ``basis``."""
    loss = np.asarray(channel.loss_db, dtype=float)
    if channel.include_postselection:
        loss = loss + channel.schedule.loss_db(d, basis)
    return db_to_transmittance(loss)


def _basis_prob(params: ProtocolParams, basis: str):
    return np.asarray(params.P_Z if basis == "Z" else params.P_X, dtype=float)


def _intensity(params: ProtocolParams, which: int):
    if which == 1:
        return np.asarray(params.mu1, dtype=float), np.asarray(params.p_mu1, dtype=float)
    return np.asarray(params.mu2, dtype=float), params.p_mu2


def detection_prob(mu, p_mu, params: ProtocolParams, channel: ChannelParams,
                   c_DT=1.0, basis: str = "Z"):
    """Probability per emitted symbol of a detection in ``basis`` at intensity ``mu``."""
    eta = basis_transmittance(channel, params.d, basis)
    click = -np.expm1(-np.asarray(mu, dtype=float) * eta)
    return _out(c_DT * _basis_prob(params, basis) * p_mu * (click + channel.P_DC))


def error_prob(mu, p_mu, params: ProtocolParams, channel: ChannelParams,
               c_DT=1.0, basis: str = "Z"):
    """Probability per emitted symbol of an erroneous detection."""
    eta = basis_transmittance(channel, params.d, basis)
    click = -np.expm1(-np.asarray(mu, dtype=float) * eta)
    dark = channel.P_DC * (1.0 - 1.0 / params.d)
    if channel.error_model == "corrected":
        signal = click * channel.P_err
    else:
        signal = click + channel.P_err
    return _out(c_DT * _basis_prob(params, basis) * p_mu * (signal + dark))


def dead_time_coefficient(R, P_det_tot, t_DT):
    """Fraction of clicks surviving detector dead time, ``1/(1 + R P t)``."""
    return _out(1.0 / (1.0 + np.asarray(R, dtype=float) * np.asarray(P_det_tot, dtype=float) * t_DT))


def total_click_prob(params: ProtocolParams, channel: ChannelParams, c_DT=1.0):
    """Detection probability per symbol summed over both bases and intensities."""
    total = 0.0
    for basis in ("Z", "X"):
        for which in (1, 2):
            mu, p = _intensity(params, which)
            total = total + np.asarray(detection_prob(mu, p, params, channel, c_DT, basis))
    return _out(total)


def channel_dead_time(params: ProtocolParams, channel: ChannelParams):
    """Dead-time coefficient after one fixed-point round.

    All clicks load a single effective detector; the load is evaluated with
    ``c_DT = 1`` and the coefficient is not iterated further.
    """
    return dead_time_coefficient(params.R, total_click_prob(params, channel, 1.0), channel.t_DT)


def expected_block(params: ProtocolParams, channel: ChannelParams, n_Z) -> ObservedBlock:
    """Noise-free block whose Z-basis total equals ``n_Z``.

    ``N_sent`` is set to ``n_Z / P_Z,det,tot``.
    """
    n_Z = np.asarray(n_Z, dtype=float)
    if np.any(n_Z <= 0):
        raise ValueError("n_Z must be positive")
    c = channel_dead_time(params, channel)
    det = {}
    err = {}
    for basis in ("Z", "X"):
        for which in (1, 2):
            mu, p = _intensity(params, which)
            det[basis, which] = np.asarray(detection_prob(mu, p, params, channel, c, basis))
            err[basis, which] = np.asarray(error_prob(mu, p, params, channel, c, basis))
    pz_tot = det["Z", 1] + det["Z", 2]
    scale = n_Z / pz_tot
    if any(np.any(err[k] > det[k]) for k in err):
        warnings.warn("error probability exceeds detection probability; errors capped at detections",
                      RuntimeWarning, stacklevel=2)
    m = {k: np.minimum(err[k], det[k]) * scale for k in err}
    return ObservedBlock(
        n_Z_mu1=_out(det["Z", 1] * scale),
        n_Z_mu2=_out(det["Z", 2] * scale),
        m_Z_mu1=_out(m["Z", 1]),
        m_Z_mu2=_out(m["Z", 2]),
        n_X_mu1=_out(det["X", 1] * scale),
        n_X_mu2=_out(det["X", 2] * scale),
        m_X_mu1=_out(m["X", 1]),
        m_X_mu2=_out(m["X", 2]),
        N_sent=_out(scale),
    )


def key_rate(params: ProtocolParams, channel: ChannelParams, n_Z=1e7) -> SecurityResult:
    """Security result of the expected block at the channel's loss."""
    return secret_key_length(expected_block(params, channel, n_Z), params)


def skr_curve(params: ProtocolParams, channel: ChannelParams, loss_db_range: Iterable[float],
              n_Z=1e7) -> list[tuple[float, float]]:
    """Secret key rate at each loss in ``loss_db_range``."""
    losses = [float(x) for x in loss_db_range]
    if not losses:
        raise ValueError("empty loss range")
    return [(L, float(key_rate(params, channel.with_loss(L), n_Z).skr)) for L in losses]


def qber_of(params: ProtocolParams, channel: ChannelParams, basis: str = "Z") -> float:
    """Expected error rate of ``basis`` from the analytic model."""
    num = den = 0.0
    for which in (1, 2):
        mu, p = _intensity(params, which)
        num += error_prob(mu, p, params, channel, 1.0, basis)
        den += detection_prob(mu, p, params, channel, 1.0, basis)
    return num / den if den > 0 else 0.0

