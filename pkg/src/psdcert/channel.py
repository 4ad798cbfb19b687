"""Poisson detection channel: forward model g(n) = int F(M^2) p(n, M^2) d(M^2)
and a seeded Monte Carlo simulator of heralded pulse records."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special, stats

from .model import (
    DEFAULT_ANGLES,
    DetectionParams,
    MarginalDistribution,
    PooledHistogram,
    PulseRecord,
)

log = logging.getLogger(__name__)


def mean_detected(m_sq: float, params: DetectionParams):
    """Mean detected photon number chi = lam * M^2."""
    m_sq = np.asarray(m_sq, dtype=float)
    if np.any(m_sq < 0):
        raise ValueError("M^2 must be non-negative")
    chi = params.lam * m_sq
    return float(chi) if chi.ndim == 0 else chi


def poisson_pmf(n, chi):
    """e^-chi chi^n / n!, evaluated in log space."""
    n = np.asarray(n)
    chi = np.asarray(chi, dtype=float)
    if np.any(n < 0) or np.any(chi < 0):
        raise ValueError("poisson_pmf needs n >= 0 and chi >= 0")
    out = np.exp(special.xlogy(n, chi) - chi - special.gammaln(n + 1.0))
    return float(out) if out.ndim == 0 else out


def default_n_max(mean_m_sq: float, lam: float, tail: float = 1e-9) -> int:
    """Smallest n covering 1 - tail of the Poisson mixture of a Gaussian pilot.

    A Gaussian axis marginal with variance v makes chi a Gamma(1/2, 2 lam v)
    variable, so the pilot photon distribution is negative binomial.
    """
    if mean_m_sq <= 0:
        return 1
    p = 1.0 / (1.0 + 2.0 * lam * mean_m_sq)
    return max(int(stats.nbinom.isf(tail, 0.5, p)), 1)


@dataclass(frozen=True)
class ChannelPrediction:
    probs: np.ndarray
    truncation_mass: float

    @property
    def n_max(self) -> int:
        return len(self.probs) - 1

    def mean(self) -> float:
        return float(np.arange(len(self.probs)) @ self.probs)

    def factorial_moment(self, k: int) -> float:
        n = np.arange(len(self.probs), dtype=float)
        ff = np.ones_like(n)
        for i in range(k):
            ff *= n - i
        return float(ff @ self.probs)


def predict_histogram(marginal: MarginalDistribution, params: DetectionParams,
                      n_max: int | None = None, truncation_threshold: float = 1e-6,
                      norm_tol: float = 0.05) -> ChannelPrediction:
    """Photon-number distribution produced by ``marginal`` through the channel.

    Probabilities are divided by the marginal's achieved normalization so
    they sum to one together with the mass beyond ``n_max``.
    """
    norm = marginal.normalization
    if abs(norm - 1.0) > norm_tol:
        log.warning("marginal normalization %.6g differs from 1 by more than %g", norm, norm_tol)
    w = marginal.weights * marginal.density / norm
    chi = params.lam * marginal.grid
    if n_max is None:
        n_max = default_n_max(float(w @ marginal.grid), params.lam)
    n = np.arange(n_max + 1)
    pmf = poisson_pmf(n[:, None], chi[None, :])
    probs = pmf @ w
    tail = float(stats.poisson.sf(n_max, chi) @ w)
    if tail > truncation_threshold:
        need = n_max
        while tail > truncation_threshold:
            need = int(need * 1.25) + 8
            tail = float(stats.poisson.sf(need, chi) @ w)
        raise ValueError(f"n_max={n_max} leaves truncated mass above {truncation_threshold:g}; "
                         f"use n_max >= {need}")
    return ChannelPrediction(probs, tail)


# ------------------------------------------------------------------ sampling

def angle_streams(seed: int, n_angles: int) -> list[np.random.Generator]:
    """Independent counter-based (Philox) substreams, one per angle index."""
    children = np.random.SeedSequence(seed).spawn(n_angles)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


def sample_pulse(m_z: float, params: DetectionParams, rng: np.random.Generator) -> int:
    """One detected photon count for magnetization ``m_z``."""
    if not np.isfinite(m_z):
        raise ValueError("magnetization must be finite")
    return int(rng.poisson(params.lam * m_z * m_z))


def sample_pulses(m_z: np.ndarray, params: DetectionParams, rng: np.random.Generator) -> np.ndarray:
    m_z = np.asarray(m_z, dtype=float)
    return rng.poisson(params.lam * m_z * m_z)


def simulate_experiment(state, angle_set: Sequence[float] = DEFAULT_ANGLES, pulses_per_angle: int = 10_000,
                        params: DetectionParams = DetectionParams(), seed: int = 0) -> list[PulseRecord]:
    """Draw M along each rotated axis from ``state`` and detect it.

    ``state`` must be sampleable (see :mod:`psdcert.synthetic`); states whose
    2D quasi-density goes negative go through :func:`simulate_from_histogram`.
    """
    if pulses_per_angle <= 0:
        raise ValueError("pulses_per_angle must be positive")
    if not state.sampleable:
        raise ValueError(f"state {state.kind!r} has a negative 2D quasi-density and no record-level "
                         "sampler; use simulate_from_histogram with its exact pooled histogram")
    records: list[PulseRecord] = []
    for beta, rng in zip(angle_set, angle_streams(seed, len(angle_set))):
        m = state.sample_axis(beta, rng, pulses_per_angle)
        n = sample_pulses(m, params, rng)
        records.extend(PulseRecord(beta, int(k)) for k in n)
    return records


def simulate_from_histogram(pooled: PooledHistogram, angle_set: Sequence[float] = DEFAULT_ANGLES,
                            pulses_per_angle: int = 10_000, seed: int = 0) -> list[PulseRecord]:
    """Multinomial pulse sampling from an exact photon-number distribution."""
    if pulses_per_angle <= 0:
        raise ValueError("pulses_per_angle must be positive")
    records: list[PulseRecord] = []
    support = np.arange(len(pooled.probs))
    for beta, rng in zip(angle_set, angle_streams(seed, len(angle_set))):
        n = rng.choice(support, size=pulses_per_angle, p=pooled.probs)
        records.extend(PulseRecord(beta, int(k)) for k in n)
    return records
