"""Interferometer phase lock that uses the QBER as its error signal."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import LockLost

__all__ = ["LockConfig", "PhaseState", "phase_lock_step", "qber_model", "simulate_phase_lock",
           "sinusoidal_drift"]


def qber_model(phase, d: int, e0: float, visibility: float = 1.0):
    """``e0 + V (1 - 1/d) (1 - cos phase) / 2``."""
    return e0 + visibility * (1.0 - 1.0 / d) * (1.0 - np.cos(phase)) / 2.0


@dataclass(frozen=True)
class LockConfig:
    """Dither-and-descend settings.

    The control moves by ``-gain * slope`` after each ``+dither``/``-dither``
    probe pair, where ``slope`` is the finite-difference QBER gradient per
    control unit. ``gain = 0`` disables the probes as well.
    """

    gain: float = 2.0
    dither: float = 0.1
    rad_per_unit: float = 1.0
    escape_qber: float | None = None
    dwell: int = 50

    def __post_init__(self):
        if self.gain < 0 or self.dither < 0 or self.dwell < 1:
            raise ValueError("gain and dither must be >= 0, dwell >= 1")


@dataclass(frozen=True)
class PhaseState:
    phase: float = 0.0
    visibility: float = 1.0
    control_signal: float = 0.0
    probe: int = 1
    q_plus: float | None = None
    escaped: int = 0

    def __post_init__(self):
        if not 0 < self.visibility <= 1:
            raise ValueError("visibility must lie in (0, 1]")

    def applied(self, config: LockConfig) -> float:
        """Control value currently driving the actuator, probe included."""
        if config.gain == 0:
            return self.control_signal
        return self.control_signal + self.probe * config.dither


def phase_lock_step(state: PhaseState, qber_sample: float, config: LockConfig,
                    d: int = 2) -> PhaseState:
    """Consume one QBER sample taken at ``state.applied(config)``.

    Raises
    ------
    LockLost
        When the QBER exceeded the escape threshold for ``config.dwell``
        consecutive samples.
    """
    escape = 0.5 * (1.0 - 1.0 / d) if config.escape_qber is None else config.escape_qber
    escaped = state.escaped + 1 if qber_sample > escape else 0
    if escaped >= config.dwell:
        raise LockLost(f"QBER above {escape:.3f} for {escaped} intervals")
    if config.gain == 0 or config.dither == 0:
        return replace(state, escaped=escaped)
    if state.probe > 0:
        return replace(state, probe=-1, q_plus=qber_sample, escaped=escaped)
    slope = (state.q_plus - qber_sample) / (2.0 * config.dither)
    return replace(state, control_signal=state.control_signal - config.gain * slope,
                   probe=1, q_plus=None, escaped=escaped)


def sinusoidal_drift(n_steps: int, amplitude: float = math.pi, period: float = 1000.0,
                     offset: float = 0.0) -> np.ndarray:
    """Open-loop interferometer phase per control interval."""
    k = np.arange(n_steps)
    return offset + amplitude * np.sin(2 * np.pi * k / period)


def simulate_phase_lock(drift: np.ndarray, config: LockConfig, d: int = 2, e0: float = 0.005,
                        visibility: float = 1.0, counts: int | None = 10_000, seed=None,
                        state: PhaseState | None = None) -> dict:
    """Run the lock against an open-loop drift.

    The phase error is ``drift + rad_per_unit * applied control``. With
    ``counts`` the QBER sample is binomial; otherwise it is exact.

    Returns
    -------
    dict
        Arrays ``phase``, ``qber`` (true), ``qber_measured`` and ``control``.
    """
    rng = np.random.default_rng(seed)
    state = state or PhaseState(visibility=visibility)
    n = len(drift)
    phase = np.empty(n)
    q_true = np.empty(n)
    q_meas = np.empty(n)
    control = np.empty(n)
    for k in range(n):
        phi = drift[k] + config.rad_per_unit * state.applied(config)
        q = float(qber_model(phi, d, e0, visibility))
        qm = rng.binomial(counts, min(q, 1.0)) / counts if counts else q
        phase[k], q_true[k], q_meas[k], control[k] = phi, q, qm, state.applied(config)
        state = phase_lock_step(replace(state, phase=phi), qm, config, d)
    return {"phase": phase, "qber": q_true, "qber_measured": q_meas, "control": control,
            "state": state}
