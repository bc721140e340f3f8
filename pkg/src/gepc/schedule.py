"""Discrete DDPM noise schedule, forward sampling, and level-to-timestep
mapping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Field, ShapeMismatchError

# Candidate probe indices shipped as the default for T=1000 schedules.
DEFAULT_CANDIDATE_TIMESTEPS = (5, 15, 136, 172)


@dataclass(frozen=True)
class NoiseSchedule:
    """beta/alpha_bar/sigma tables for t = 1..T (stored at index t-1)."""

    beta: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise ValueError("beta must be a non-empty 1-d array")
        if np.any(beta <= 0.0) or np.any(beta >= 1.0):
            raise ValueError("beta entries must lie in (0, 1)")
        beta = beta.copy()
        beta.flags.writeable = False
        object.__setattr__(self, "beta", beta)
        alpha_bar = np.cumprod(1.0 - beta)
        alpha_bar.flags.writeable = False
        object.__setattr__(self, "_alpha_bar", alpha_bar)

    @property
    def T(self) -> int:
        return self.beta.size

    def _check_t(self, t: int):
        if not 1 <= t <= self.T:
            raise IndexError(f"timestep {t} out of range 1..{self.T}")

    def alpha_bar(self, t: int) -> float:
        """alpha_bar at t, with the t=0 boundary convention alpha_bar=1."""
        if t == 0:
            return 1.0
        self._check_t(t)
        return float(self._alpha_bar[t - 1])

    def sigma(self, t: int) -> float:
        return float(np.sqrt(1.0 - self.alpha_bar(t)))

    def snr(self, t: int) -> float:
        self._check_t(t)
        ab = self.alpha_bar(t)
        return ab / (1.0 - ab)


def linear_schedule(T: int, beta1: float = 1e-4, betaT: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0.0 < beta1 <= betaT < 1.0:
        raise ValueError("require 0 < beta1 <= betaT < 1")
    return NoiseSchedule(np.linspace(beta1, betaT, T))


def map_levels_to_timesteps(s: NoiseSchedule, levels) -> list[int]:
    """Map target sqrt(alpha_bar) levels to the nearest discrete t.

    Ties break toward smaller t; duplicates are removed preserving first
    occurrence.
    """
    levels = list(levels)
    if not levels:
        raise ValueError("levels must be non-empty")
    sqrt_ab = np.sqrt(np.asarray(s._alpha_bar))
    out: list[int] = []
    for level in levels:
        if not 0.0 < level < 1.0:
            raise ValueError(f"level {level} not in (0, 1)")
        dist = np.abs(sqrt_ab - level)
        # argmin returns the first (smallest-t) index on ties
        t = int(np.argmin(dist)) + 1
        if t not in out:
            out.append(t)
    return out


def snr_to_level(snr: float) -> float:
    """Convert a target SNR to the equivalent sqrt(alpha_bar) level."""
    if snr <= 0.0:
        raise ValueError("snr must be positive")
    return float(np.sqrt(snr / (1.0 + snr)))


def forward_sample(s: NoiseSchedule, x0: Field, t: int, eps: Field) -> Field:
    """x_t = sqrt(alpha_bar_t) x0 + sigma_t eps."""
    if x0.shape != eps.shape:
        raise ShapeMismatchError(f"shape mismatch: {x0.shape} vs {eps.shape}")
    ab = s.alpha_bar(t)
    return Field(np.sqrt(ab) * x0.data + np.sqrt(1.0 - ab) * eps.data)
