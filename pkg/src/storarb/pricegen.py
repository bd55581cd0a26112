"""Synthetic price series with cyclic structure and seeded noise.

Stands in for real half-hourly market data: a mean level, a handful of
sinusoidal harmonics (daily and weekly cycles at half-hourly resolution are
periods 48 and 336), and optional Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["NegativePrice", "CycleSpec", "generate", "DEFAULT_PROFILE"]


class NegativePrice(ValueError):
    """Generated prices went negative while negatives are disallowed."""


@dataclass(frozen=True)
class CycleSpec:
    """Mean level plus (period, amplitude, phase) harmonics and noise."""

    mean: float = 45.0
    harmonics: tuple[tuple[float, float, float], ...] = ((48.0, 15.0, 0.0), (336.0, 5.0, 0.0))
    noise_sigma: float = 3.0
    seed: int = 0
    allow_negative: bool = False
    clip_floor: float | None = None

    def __post_init__(self):
        for period, _, _ in self.harmonics:
            if period < 2:
                raise ValueError(f"harmonic period must be >= 2 steps, got {period}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


DEFAULT_PROFILE = CycleSpec()


def generate(spec: CycleSpec, T: int) -> np.ndarray:
    """Price series p_1..p_T, deterministic per seed."""
    if T < 1:
        raise ValueError("T must be >= 1")
    t = np.arange(1, T + 1, dtype=float)
    p = np.full(T, spec.mean)
    for period, amplitude, phase in spec.harmonics:
        p += amplitude * np.sin(2.0 * np.pi * t / period + phase)
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        p += spec.noise_sigma * rng.standard_normal(T)
    if spec.clip_floor is not None:
        p = np.maximum(p, spec.clip_floor)
    elif not spec.allow_negative and float(p.min()) < 0.0:
        raise NegativePrice(
            f"price series dips to {p.min():.6g}; pass allow_negative or a clip_floor"
        )
    return p
