"""Parameter search, dimension comparison, dead-time crossover and binned key extraction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .channel import ChannelParams, expected_block, generation_rate, transmittance_to_db
from .errors import NoCrossover, NoPositiveKey
from .security import ObservedBlock, ProtocolParams, secret_key_length

__all__ = [
    "AttenuationSample",
    "BinResult",
    "OptimizationSpec",
    "bin_and_key",
    "compare_dimensions",
    "crossover_attenuation",
    "default_params",
    "optimize_params",
]


@dataclass(frozen=True)
class OptimizationSpec:
    """What to optimize and where to look.

    ``template`` supplies everything that is not searched (epsilons, c, R,
    P_Z when ``P_Z_range`` is None).
    """

    template: ProtocolParams
    channel: ChannelParams
    loss_db: float
    n_Z: float = 1e7
    mu1_range: tuple = (0.05, 0.95)
    mu2_range: tuple = (0.01, 0.5)
    p_mu1_range: tuple = (0.5, 0.99)
    P_Z_range: tuple | None = None
    points: int = 16
    refinements: int = 2

    def __post_init__(self):
        for name in ("mu1_range", "mu2_range", "p_mu1_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo < hi < 1:
                raise ValueError(f"{name} must satisfy 0 < lo < hi < 1")
        if self.P_Z_range is not None and not 0 < self.P_Z_range[0] < self.P_Z_range[1] < 1:
            raise ValueError("P_Z_range must satisfy 0 < lo < hi < 1")
        if self.mu2_range[0] >= self.mu1_range[1]:
            raise ValueError("search ranges admit no point with mu2 < mu1")
        if self.points < 2 or self.refinements < 0:
            raise ValueError("need points >= 2 and refinements >= 0")
        if self.loss_db < 0 or self.n_Z <= 0:
            raise ValueError("loss_db must be >= 0 and n_Z > 0")

    @property
    def d(self) -> int:
        return self.template.d

    @classmethod
    def from_transmittance(cls, template, channel, eta, **kw) -> "OptimizationSpec":
        return cls(template, channel, float(transmittance_to_db(eta)), **kw)


def _axes(spec: OptimizationSpec):
    names = ["mu1", "mu2", "p_mu1"]
    ranges = [spec.mu1_range, spec.mu2_range, spec.p_mu1_range]
    if spec.P_Z_range is not None:
        names.append("P_Z")
        ranges.append(spec.P_Z_range)
    return names, ranges


def _evaluate(spec: OptimizationSpec, names, grids):
    """SKR on the Cartesian product of ``grids``; invalid points score -1."""
    mesh = [m.ravel() for m in np.meshgrid(*grids, indexing="ij")]
    point = dict(zip(names, mesh))
    valid = (point["mu2"] < point["mu1"]) & (point["mu1"] < 1) & (point["mu2"] > 0)
    skr = np.full(valid.shape, -1.0)
    if np.any(valid):
        sub = {k: v[valid] for k, v in point.items()}
        params = spec.template.replace(**sub)
        channel = spec.channel.with_loss(spec.loss_db)
        skr[valid] = secret_key_length(expected_block(params, channel, spec.n_Z), params).skr
    return point, skr


def optimize_params(spec: OptimizationSpec) -> tuple[ProtocolParams, float]:
    """Maximize the secret key rate over intensities and probabilities.

    A fixed grid of ``points`` values per axis is scanned, then each refinement
    round re-grids one coarse step around the incumbent. The incumbent is
    always kept, so refinement never loses.

    Raises
    ------
    NoPositiveKey
        If no evaluated point gives a positive rate.
    """
    names, ranges = _axes(spec)
    grids = [np.linspace(lo, hi, spec.points) for lo, hi in ranges]
    best_point, best_skr = None, -np.inf
    for round_ in range(spec.refinements + 1):
        point, skr = _evaluate(spec, names, grids)
        k = int(np.argmax(skr))
        if skr[k] > best_skr:
            best_skr = float(skr[k])
            best_point = {n: float(point[n][k]) for n in names}
        if round_ == spec.refinements:
            break
        new = []
        for n, g, (lo, hi) in zip(names, grids, ranges):
            step = g[1] - g[0]
            c = best_point[n]
            new.append(np.linspace(max(lo, c - step), min(hi, c + step), spec.points))
        grids = new
    if best_skr <= 0:
        raise NoPositiveKey(f"no positive key for d={spec.d} at {spec.loss_db} dB")
    return spec.template.replace(**best_point), best_skr


def _skr(params: ProtocolParams, channel: ChannelParams, loss: float, n_Z: float) -> float:
    ch = channel.with_loss(loss)
    return float(secret_key_length(expected_block(params, ch, n_Z), params).skr)


def _curve_value(d, loss, channel, n_Z, params_by_d, optimize, spec_kw):
    params = params_by_d[d]
    if not optimize:
        return _skr(params, channel, loss, n_Z)
    try:
        return optimize_params(OptimizationSpec(params, channel, loss, n_Z, **spec_kw))[1]
    except NoPositiveKey:
        return 0.0


def default_params(d: int, base_rate: float = 500e6, rate_scaling: bool = True,
                   c_overlap: float | None = None) -> ProtocolParams:
    """Starting parameters for dimension ``d`` with the ideal overlap by default."""
    return ProtocolParams(d=d, mu1=0.37, mu2=0.13, p_mu1=0.76, P_Z=0.9,
                          c_overlap=math.log2(d) if c_overlap is None else c_overlap,
                          R=generation_rate(d, base_rate, rate_scaling))


def compare_dimensions(d_list: Sequence[int], channel: ChannelParams, n_Z: float = 1e7,
                       losses: Iterable[float] = tuple(np.arange(0.0, 40.5, 1.0)),
                       params_by_d: dict | None = None, optimize: bool = True,
                       **spec_kw) -> dict[int, list[tuple[float, float]]]:
    """Key-rate curves per dimension, ordered by ``d``.

    Without ``params_by_d`` each dimension starts from :func:`default_params`
    (rate scaled as ``2/d``, ideal overlap).
    """
    d_sorted = sorted(d_list)
    if any(d not in (2, 4, 8, 16) for d in d_sorted):
        raise ValueError("dimensions must be drawn from {2, 4, 8, 16}")
    params_by_d = dict(params_by_d or {})
    for d in d_sorted:
        params_by_d.setdefault(d, default_params(d))
    losses = [float(x) for x in losses]
    return {
        d: [(L, _curve_value(d, L, channel, n_Z, params_by_d, optimize, spec_kw)) for L in losses]
        for d in d_sorted
    }


def crossover_attenuation(channel: ChannelParams, params_by_d: dict[int, ProtocolParams],
                          d_a: int = 2, d_b: int = 4, n_Z: float = 1e7,
                          optimize: bool = False, lo: float = 0.0, hi: float = 60.0,
                          scan_step: float = 0.5, tol: float = 0.05, **spec_kw) -> float:
    """Loss at which the ``d_a`` and ``d_b`` key-rate curves intersect.

    The difference ``SKR_b - SKR_a`` is scanned on a grid and the first strict
    sign change is refined by bisection to ``tol`` dB.

    Raises
    ------
    NoCrossover
        If the difference never changes sign in ``[lo, hi]``.
    """

    def diff(L):
        return (_curve_value(d_b, L, channel, n_Z, params_by_d, optimize, spec_kw)
                - _curve_value(d_a, L, channel, n_Z, params_by_d, optimize, spec_kw))

    grid = np.arange(lo, hi + 1e-9, scan_step)
    prev_L, prev = grid[0], diff(grid[0])
    leader = None if prev == 0 else (d_b if prev > 0 else d_a)
    for L in grid[1:]:
        cur = diff(L)
        if prev * cur < 0:
            a, b, fa = prev_L, L, prev
            while b - a > tol:
                m = 0.5 * (a + b)
                fm = diff(m)
                if fm == 0:
                    return float(m)
                if (fm > 0) == (fa > 0):
                    a, fa = m, fm
                else:
                    b = m
            return float(0.5 * (a + b))
        if cur != 0:
            prev_L, prev = L, cur
            if leader is None:
                leader = d_b if cur > 0 else d_a
    raise NoCrossover(f"no intersection of d={d_a} and d={d_b} curves in [{lo}, {hi}] dB", leader)


@dataclass(frozen=True)
class AttenuationSample:
    """Counts collected over one short interval at an instantaneous loss."""

    timestamp: float
    loss_db: float
    n_sent: float
    n_Z_mu1: float
    n_Z_mu2: float
    m_Z_mu1: float
    m_Z_mu2: float
    n_X_mu1: float = 0.0
    n_X_mu2: float = 0.0
    m_X_mu1: float = 0.0
    m_X_mu2: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.loss_db):
            raise ValueError("loss_db must be finite")
        counts = (self.n_sent, self.n_Z_mu1, self.n_Z_mu2, self.m_Z_mu1, self.m_Z_mu2,
                  self.n_X_mu1, self.n_X_mu2, self.m_X_mu1, self.m_X_mu2)
        if any(c < 0 for c in counts):
            raise ValueError("counts must be non-negative")

    @property
    def sifted_bits(self) -> float:
        return self.n_Z_mu1 + self.n_Z_mu2

    @property
    def errors(self) -> float:
        return self.m_Z_mu1 + self.m_Z_mu2


@dataclass(frozen=True)
class BinResult:
    loss_db: float
    skr: float | None
    occupancy: int
    blocks: int
    mean_loss: float
    block_skrs: tuple = field(default=())


_COUNT_FIELDS = ("n_Z_mu1", "n_Z_mu2", "m_Z_mu1", "m_Z_mu2",
                 "n_X_mu1", "n_X_mu2", "m_X_mu1", "m_X_mu2")


def bin_and_key(samples: Sequence[AttenuationSample], params: ProtocolParams,
                bin_width_db: float = 1.0, block_target: float = 1e7) -> list[BinResult]:
    """Sort samples into loss bins and extract finite keys per completed block.

    Within a bin, samples are accumulated in timestamp order until the Z-basis
    count reaches ``block_target``; each completed block gives one key rate.
    Leftover partial blocks give no key. Bins are labelled by their lower edge
    and returned in ascending order.
    """
    if not samples:
        raise ValueError("no samples")
    if bin_width_db <= 0 or block_target <= 0:
        raise ValueError("bin width and block target must be positive")
    bins: dict[int, list[AttenuationSample]] = {}
    for s in samples:
        bins.setdefault(int(math.floor(s.loss_db / bin_width_db + 1e-12)), []).append(s)
    out = []
    for key in sorted(bins):
        members = sorted(bins[key], key=lambda s: s.timestamp)
        rates = []
        acc = dict.fromkeys(_COUNT_FIELDS, 0.0)
        sent = 0.0
        for s in members:
            for f in _COUNT_FIELDS:
                acc[f] += getattr(s, f)
            sent += s.n_sent
            if acc["n_Z_mu1"] + acc["n_Z_mu2"] >= block_target:
                block = ObservedBlock(N_sent=sent, **acc)
                rates.append(float(secret_key_length(block, params).skr))
                acc = dict.fromkeys(_COUNT_FIELDS, 0.0)
                sent = 0.0
        out.append(BinResult(
            loss_db=key * bin_width_db,
            skr=float(np.mean(rates)) if rates else None,
            occupancy=len(members),
            blocks=len(rates),
            mean_loss=float(np.mean([s.loss_db for s in members])),
            block_skrs=tuple(rates),
        ))
    return out
