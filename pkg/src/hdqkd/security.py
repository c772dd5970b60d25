"""Finite-key secret key length for the one-decoy time-bin protocol.

Every function broadcasts over numpy arrays, so a whole grid of parameter
points (or a batch of simulated blocks) can be evaluated in a single call.
Scalar inputs give Python floats back.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from .errors import InsufficientStatistics

__all__ = [
    "ENTROPY_CLAMP",
    "ObservedBlock",
    "ProtocolParams",
    "SecurityResult",
    "delta_EC",
    "entropy_clamp_point",
    "gamma",
    "hoeffding_count_bounds",
    "phase_error_upper",
    "poisson_mixture",
    "s_Z0_lower",
    "s_Z0_upper",
    "s_Z1_lower",
    "secret_key_length",
    "shannon_entropy_d",
    "tau_n",
]

# Input above which H_d is pinned to log2(d).
ENTROPY_CLAMP = {2: 0.5, 4: 0.75, 8: 0.87, 16: 0.95}

# Finite-key constants of the one-decoy analysis: a*log2(b/eps_sec), eps/19.
DECOY_A = 6
DECOY_B = 19
EPS_SPLIT = 19

ALLOWED_DIMENSIONS = (2, 4, 8, 16)


def _out(x):
    """Return a Python float for 0-d results, the array otherwise."""
    arr = np.asarray(x, dtype=float)
    return float(arr) if arr.ndim == 0 else arr


def _log_inv(eps, base):
    """log_base(1/eps); the default base is e."""
    return np.log(1.0 / np.asarray(eps, dtype=float)) / math.log(base)


@dataclass(frozen=True)
class ProtocolParams:
    """Sender/receiver settings of one protocol run.

    Fields may hold numpy arrays of matching shape; the optimizer uses that
    to evaluate many parameter points at once.

    Parameters
    ----------
    d : int
        Encoding dimension, one of 2, 4, 8, 16.
    mu1, mu2 : float
        Signal and decoy mean photon numbers, ``0 < mu2 < mu1 < 1``.
    p_mu1 : float
        Probability of sending the signal intensity.
    P_Z : float
        Probability that both parties use the Z basis. ``1 - P_Z`` is the X share.
    c_overlap : float
        Preparation quality in bits, ``0 <= c <= log2(d)``.
    R : float
        Symbol generation rate in Hz.
    eps_sec, eps_cor : float
        Secrecy and correctness failure probabilities.
    f_e : float
        Error-correction inefficiency.
    eps2_source : {"cor", "sec"}
        Which of the two epsilons is split by 19 to give ``eps2``.
    hoeffding_log_base : float
        Base of the logarithm inside the Hoeffding and gamma square roots.
    """

    d: int
    mu1: Any
    mu2: Any
    p_mu1: Any
    P_Z: Any = 0.9
    c_overlap: Any = None
    R: Any = 500e6
    eps_sec: float = 1e-15
    eps_cor: float = 1e-9
    f_e: float = 1.08
    eps2_source: str = "cor"
    hoeffding_log_base: float = math.e

    def __post_init__(self):
        if self.d not in ALLOWED_DIMENSIONS:
            raise ValueError(f"d must be one of {ALLOWED_DIMENSIONS}, got {self.d!r}")
        if self.c_overlap is None:
            object.__setattr__(self, "c_overlap", math.log2(self.d))
        mu1 = np.asarray(self.mu1, dtype=float)
        mu2 = np.asarray(self.mu2, dtype=float)
        if np.any(~(mu2 > 0)) or np.any(~(mu2 < mu1)) or np.any(~(mu1 < 1)):
            raise ValueError("intensities must satisfy 0 < mu2 < mu1 < 1")
        for name in ("p_mu1", "P_Z"):
            v = np.asarray(getattr(self, name), dtype=float)
            if np.any(~((v > 0) & (v < 1))):
                raise ValueError(f"{name} must lie in (0, 1)")
        for name in ("eps_sec", "eps_cor"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        c = np.asarray(self.c_overlap, dtype=float)
        if np.any(c < 0) or np.any(c > math.log2(self.d) + 1e-12):
            raise ValueError("c_overlap must lie in [0, log2(d)]")
        if np.any(np.asarray(self.R, dtype=float) <= 0):
            raise ValueError("R must be positive")
        if self.f_e < 1:
            raise ValueError("f_e must be >= 1")
        if self.eps2_source not in ("cor", "sec"):
            raise ValueError("eps2_source must be 'cor' or 'sec'")
        if not self.hoeffding_log_base > 1:
            raise ValueError("hoeffding_log_base must exceed 1")

    @property
    def p_mu2(self):
        return 1.0 - np.asarray(self.p_mu1, dtype=float)

    @property
    def P_X(self):
        return 1.0 - np.asarray(self.P_Z, dtype=float)

    @property
    def eps1(self) -> float:
        return self.eps_sec / EPS_SPLIT

    @property
    def eps2(self) -> float:
        src = self.eps_cor if self.eps2_source == "cor" else self.eps_sec
        return src / EPS_SPLIT

    def replace(self, **changes) -> "ProtocolParams":
        fields = asdict(self)
        fields.update(changes)
        return ProtocolParams(**fields)


@dataclass(frozen=True)
class ObservedBlock:
    """Per-intensity detection and error counts of one finite-key block.

    Counts are floats so analytic expected blocks fit the same type. Fields may
    be arrays (a batch of blocks).
    """

    n_Z_mu1: Any
    n_Z_mu2: Any
    m_Z_mu1: Any
    m_Z_mu2: Any
    n_X_mu1: Any
    n_X_mu2: Any
    m_X_mu1: Any
    m_X_mu2: Any
    N_sent: Any = None

    def __post_init__(self):
        for basis in ("Z", "X"):
            for i in ("mu1", "mu2"):
                n = np.asarray(getattr(self, f"n_{basis}_{i}"), dtype=float)
                m = np.asarray(getattr(self, f"m_{basis}_{i}"), dtype=float)
                if np.any(n < 0) or np.any(m < 0):
                    raise ValueError("counts must be non-negative")
                if np.any(m > n * (1 + 1e-12) + 1e-9):
                    raise ValueError(f"errors exceed detections in {basis}/{i}")

    @property
    def n_Z(self):
        return np.asarray(self.n_Z_mu1, dtype=float) + np.asarray(self.n_Z_mu2, dtype=float)

    @property
    def m_Z(self):
        return np.asarray(self.m_Z_mu1, dtype=float) + np.asarray(self.m_Z_mu2, dtype=float)

    @property
    def n_X(self):
        return np.asarray(self.n_X_mu1, dtype=float) + np.asarray(self.n_X_mu2, dtype=float)

    @property
    def m_X(self):
        return np.asarray(self.m_X_mu1, dtype=float) + np.asarray(self.m_X_mu2, dtype=float)

    def basis_counts(self, basis: str):
        """Return ``(n_mu1, n_mu2, m_mu1, m_mu2)`` as float arrays for ``basis``."""
        if basis not in ("Z", "X"):
            raise ValueError("basis must be 'Z' or 'X'")
        return tuple(
            np.asarray(getattr(self, f"{k}_{basis}_{i}"), dtype=float)
            for k, i in (("n", "mu1"), ("n", "mu2"), ("m", "mu1"), ("m", "mu2"))
        )

    @classmethod
    def empty(cls, N_sent: float = 0.0) -> "ObservedBlock":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, N_sent)


@dataclass(frozen=True)
class SecurityResult:
    """Key length together with every intermediate bound."""

    tau0: Any
    tau1: Any
    s_Z0_l: Any
    s_Z0_u: Any
    s_Z1_l: Any
    s_X1_l: Any
    v_X1_u: Any
    phi_Z: Any
    qber: Any
    delta_EC: Any
    l: Any
    skr: Any
    n_Z: Any
    N_tot: Any

    def to_dict(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            arr = np.asarray(v, dtype=float)
            out[k] = float(arr) if arr.ndim == 0 else arr.tolist()
        return out


# ---------------------------------------------------------------- entropy

def entropy_clamp_point(d: int) -> float:
    """Error rate at and above which ``shannon_entropy_d`` returns log2(d)."""
    return ENTROPY_CLAMP.get(d, 1.0 - 1.0 / d)


def shannon_entropy_d(x, d: int):
    """d-ary error entropy in bits, pinned to log2(d) above the clamp point.

    Parameters
    ----------
    x : float or array
        Error rate in [0, 1].
    d : int
        Dimension, ``d >= 2``.

    Returns
    -------
    float or ndarray
        ``-x log2(x/(d-1)) - (1-x) log2(1-x)`` with ``H(0) = 0``.

    Raises
    ------
    ValueError
        If any ``x`` is outside [0, 1] or NaN.
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    x = np.asarray(x, dtype=float)
    if np.any(np.isnan(x)) or np.any(x < 0) or np.any(x > 1):
        raise ValueError("error rate must lie in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        # split log avoids x/(d-1) underflowing to zero for subnormal x
        h = -x * (np.log2(x) - math.log2(d - 1)) - (1 - x) * np.log2(1 - x)
    h = np.where(x <= 0, 0.0, h)
    h = np.where(x >= entropy_clamp_point(d), math.log2(d), h)
    return _out(h)


# ------------------------------------------------------- photon statistics

def poisson_mixture(n: int, mus, probs):
    """Probability of ``n`` photons from a source mixing Poisson intensities."""
    if n < 0:
        raise ValueError("photon number must be >= 0")
    total = 0.0
    for mu, p in zip(mus, probs):
        mu = np.asarray(mu, dtype=float)
        total = total + np.asarray(p, dtype=float) * np.exp(-mu) * mu**n / math.factorial(n)
    return _out(total)


def tau_n(params: ProtocolParams, n: int):
    """Emission probability of an ``n``-photon state averaged over intensities."""
    return poisson_mixture(n, (params.mu1, params.mu2), (params.p_mu1, params.p_mu2))


def hoeffding_count_bounds(count, total, p_i, mu_i, eps, log_base: float = math.e):
    """Lower and upper bounds on the intensity-rescaled count.

    ``(e^mu/p) * (count -/+ sqrt(total/2 * ln(1/eps)))``, lower bound clamped at 0.

    Raises
    ------
    ValueError
        If ``p_i`` is zero or ``eps`` is outside (0, 1].
    """
    p_i = np.asarray(p_i, dtype=float)
    if np.any(p_i <= 0):
        raise ValueError("intensity probability must be positive")
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    count = np.asarray(count, dtype=float)
    total = np.asarray(total, dtype=float)
    scale = np.exp(np.asarray(mu_i, dtype=float)) / p_i
    delta = np.sqrt(total / 2.0 * _log_inv(eps, log_base))
    lower = np.maximum(scale * (count - delta), 0.0)
    upper = scale * (count + delta)
    return _out(lower), _out(upper)


def _count_bounds(params, basis_counts, eps1, eps2):
    """Hoeffding bounds for detections (eps1) and errors (eps2) of one basis."""
    n1, n2, m1, m2 = basis_counts
    n_tot, m_tot = n1 + n2, m1 + m2
    base = params.hoeffding_log_base
    p1, p2 = params.p_mu1, params.p_mu2
    n1_lo, n1_hi = hoeffding_count_bounds(n1, n_tot, p1, params.mu1, eps1, base)
    n2_lo, n2_hi = hoeffding_count_bounds(n2, n_tot, p2, params.mu2, eps1, base)
    m1_lo, m1_hi = hoeffding_count_bounds(m1, m_tot, p1, params.mu1, eps2, base)
    m2_lo, m2_hi = hoeffding_count_bounds(m2, m_tot, p2, params.mu2, eps2, base)
    return dict(n1_lo=n1_lo, n1_hi=n1_hi, n2_lo=n2_lo, n2_hi=n2_hi,
                m1_lo=m1_lo, m1_hi=m1_hi, m2_lo=m2_lo, m2_hi=m2_hi)


# ------------------------------------------------------------ decoy bounds

def s_Z0_lower(block: ObservedBlock, params: ProtocolParams, eps1=None, basis: str = "Z"):
    """Lower bound on vacuum-emission detections, clamped at zero."""
    mu1 = np.asarray(params.mu1, dtype=float)
    mu2 = np.asarray(params.mu2, dtype=float)
    if np.any(mu1 == mu2):
        raise ValueError("decoy bound needs mu1 != mu2")
    eps1 = params.eps1 if eps1 is None else eps1
    b = _count_bounds(params, block.basis_counts(basis), eps1, params.eps2)
    tau0 = tau_n(params, 0)
    val = tau0 / (mu1 - mu2) * (mu1 * b["n2_lo"] - mu2 * b["n1_hi"])
    return _out(np.maximum(val, 0.0))


def s_Z0_upper(block: ObservedBlock, params: ProtocolParams, eps1=None, eps2=None,
               basis: str = "Z"):
    """Upper bound on vacuum-emission detections from decoy error counts."""
    p2 = np.asarray(params.p_mu2, dtype=float)
    if np.any(p2 <= 0):
        raise ValueError("decoy probability must be positive")
    eps1 = params.eps1 if eps1 is None else eps1
    eps2 = params.eps2 if eps2 is None else eps2
    n1, n2, m1, m2 = block.basis_counts(basis)
    base = params.hoeffding_log_base
    tau0 = tau_n(params, 0)
    slack = np.sqrt((m1 + m2) / 2.0 * _log_inv(eps2, base)) + np.sqrt(
        (n1 + n2) / 2.0 * _log_inv(eps1, base)
    )
    val = tau0 * np.exp(params.mu2) / p2 * (m2 + slack) / (1.0 - 1.0 / params.d)
    return _out(val)


def s_Z1_lower(block: ObservedBlock, params: ProtocolParams, s_Z0, eps1=None,
               basis: str = "Z"):
    """Lower bound on single-photon detections given a vacuum estimate ``s_Z0``."""
    tau0 = np.asarray(tau_n(params, 0), dtype=float)
    if np.any(tau0 <= 0):
        raise ValueError("tau0 must be positive")
    eps1 = params.eps1 if eps1 is None else eps1
    mu1 = np.asarray(params.mu1, dtype=float)
    mu2 = np.asarray(params.mu2, dtype=float)
    b = _count_bounds(params, block.basis_counts(basis), eps1, params.eps2)
    tau1 = tau_n(params, 1)
    bracket = (
        b["n2_lo"]
        - (mu2**2 / mu1**2) * b["n1_hi"]
        - (mu1**2 - mu2**2) / mu1**2 * np.asarray(s_Z0, dtype=float) / tau0
    )
    val = tau1 * mu1 / (mu2 * (mu1 - mu2)) * bracket
    return _out(np.maximum(val, 0.0))


def _s1_lower_conservative(block, params, basis, eps1=None):
    """Smaller of the two single-photon bounds fed by s0 lower/upper."""
    s0_l = s_Z0_lower(block, params, eps1, basis=basis)
    s0_u = s_Z0_upper(block, params, eps1, basis=basis)
    s1 = np.minimum(
        s_Z1_lower(block, params, s0_l, eps1, basis=basis),
        s_Z1_lower(block, params, s0_u, eps1, basis=basis),
    )
    return s0_l, s0_u, _out(s1)


def gamma(a, b, c):
    """Random-sampling correction ``sqrt((b+c)/(bc) * (1+c)/c * ln(1/a))``.

    Raises
    ------
    ValueError
        If ``b`` or ``c`` is not positive, or ``a`` is outside (0, 1].
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    if np.any(b <= 0) or np.any(c <= 0):
        raise ValueError("gamma needs b > 0 and c > 0")
    if np.any(a <= 0) or np.any(a > 1):
        raise ValueError("gamma needs a in (0, 1]")
    return _out(_gamma(a, b, c))


def _gamma(a, b, c, log_base=math.e):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sqrt((b + c) / (b * c) * (1 + c) / c * _log_inv(a, log_base))


def _phase_error_terms(block, params, s_Z1_l, eps1=None):
    """Return ``(phi_raw, v_X1_u, s_X1_l)``; phi is NaN where s_X1_l or s_Z1_l is 0."""
    eps1 = params.eps1 if eps1 is None else eps1
    mu1 = np.asarray(params.mu1, dtype=float)
    mu2 = np.asarray(params.mu2, dtype=float)
    _, _, s_X1_l = _s1_lower_conservative(block, params, "X", eps1)
    s_X1_l = np.asarray(s_X1_l, dtype=float)
    b = _count_bounds(params, block.basis_counts("X"), eps1, params.eps2)
    v_X1_u = np.maximum(tau_n(params, 1) / (mu1 - mu2) * (b["m1_hi"] - b["m2_lo"]), 0.0)
    s1 = np.asarray(s_Z1_l, dtype=float)
    ok = (s_X1_l > 0) & (s1 > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = v_X1_u / s_X1_l + _gamma(math.sqrt(eps1), s1, s_X1_l, params.hoeffding_log_base)
    phi = np.where(ok, phi, np.nan)
    return phi, v_X1_u, s_X1_l


def phase_error_upper(block: ObservedBlock, params: ProtocolParams, s_Z1_l, eps1=None):
    """Upper bound on the key-basis phase error rate, clamped to [0, clamp point].

    Raises
    ------
    InsufficientStatistics
        When the single-photon X (or Z) bound is zero, so the rate is undefined.
    """
    phi, _, _ = _phase_error_terms(block, params, s_Z1_l, eps1)
    if np.any(np.isnan(phi)):
        raise InsufficientStatistics("no single-photon support for the phase error bound")
    return _out(np.clip(phi, 0.0, entropy_clamp_point(params.d)))


def delta_EC(n_Z, error_rate, d: int, f_e: float = 1.08):
    """Error-correction leakage ``f_e * n_Z * H_d(error_rate)`` in bits."""
    return _out(f_e * np.asarray(n_Z, dtype=float) * shannon_entropy_d(error_rate, d))


def secret_key_length(block: ObservedBlock, params: ProtocolParams, qber=None) -> SecurityResult:
    """Finite-key secret key length and rate of one block.

    Parameters
    ----------
    block : ObservedBlock
        Observed counts. ``N_sent`` is the number of emitted symbols used to
        turn the key length into a rate; without it ``skr`` is 0.
    params : ProtocolParams
    qber : float, optional
        Error rate for the leakage term. Defaults to ``m_Z / n_Z``.

    Returns
    -------
    SecurityResult
        ``l`` is clamped at 0. Where the phase error bound has no support the
        phase error rate is reported at its clamp point and ``l`` is 0.
    """
    d = params.d
    n_Z = block.n_Z
    if qber is None:
        with np.errstate(divide="ignore", invalid="ignore"):
            qber = np.where(n_Z > 0, block.m_Z / n_Z, 0.0)
    qber = np.clip(np.asarray(qber, dtype=float), 0.0, 1.0)

    s0_l, s0_u, s1_l = _s1_lower_conservative(block, params, "Z")
    phi_raw, v_X1_u, s_X1_l = _phase_error_terms(block, params, s1_l)
    bound = entropy_clamp_point(d)
    supported = ~np.isnan(phi_raw)
    phi = np.where(supported, np.clip(np.nan_to_num(phi_raw, nan=bound), 0.0, bound), bound)

    leak = params.f_e * n_Z * np.asarray(shannon_entropy_d(qber, d))
    single = np.asarray(s1_l) * np.maximum(
        0.0, np.asarray(params.c_overlap, dtype=float) - np.asarray(shannon_entropy_d(phi, d))
    )
    l_raw = (
        math.log2(d) * np.asarray(s0_l)
        + single
        - leak
        - DECOY_A * math.log2(DECOY_B / params.eps_sec)
        - math.log2(2.0 / params.eps_cor)
    )
    l_val = np.where(supported & (n_Z > 0), np.maximum(l_raw, 0.0), 0.0)

    N_tot = np.asarray(block.N_sent if block.N_sent is not None else 0.0, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        skr = np.where(N_tot > 0, l_val / N_tot * np.asarray(params.R, dtype=float), 0.0)

    return SecurityResult(
        tau0=tau_n(params, 0),
        tau1=tau_n(params, 1),
        s_Z0_l=_out(s0_l),
        s_Z0_u=_out(s0_u),
        s_Z1_l=_out(s1_l),
        s_X1_l=_out(s_X1_l),
        v_X1_u=_out(v_X1_u),
        phi_Z=_out(phi),
        qber=_out(qber),
        delta_EC=_out(leak),
        l=_out(l_val),
        skr=_out(skr),
        n_Z=_out(n_Z),
        N_tot=_out(N_tot),
    )
