"""Recover the marginal F(M^2) from the pooled photon histogram.

Resumming the photon-number series term by term gives

    G(Mt) = sum_n g(n) exp(-lam Mt^2) n!/(2n)! (4 lam Mt^2)^n
          = int dM |M| F(M^2) exp(-lam (M - Mt)^2),

a Gaussian convolution of h(M) = |M| F(M^2), which is the symmetric axis
density itself. h follows from dividing the Fourier transform of G by the
analytic transform of the kernel exp(-lam M^2).
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import special

from .channel import ChannelPrediction, default_n_max, predict_histogram
from .model import DetectionParams, MarginalDistribution, PooledHistogram

log = logging.getLogger(__name__)

# At 6 sd, G still sits ~1e-8 below its peak at the grid edge and the
# regularization floor amplifies that periodic-wrap step; 8 sd clears it.
DEFAULT_WIDTH_SD = 8.0
MIN_WIDTH_SD = 6.0


@dataclass(frozen=True)
class GFunction:
    grid: np.ndarray
    values: np.ndarray
    lam: float

    @property
    def spacing(self) -> float:
        return float(self.grid[1] - self.grid[0])


@dataclass(frozen=True)
class DeconvolutionSettings:
    grid_half_width: float | None = None  # None: DEFAULT_WIDTH_SD pilot standard deviations
    grid_points: int = 4096
    regularization: float = 1e-6
    frequency_cutoff: float | None = None
    norm_bound: float = 0.2

    def __post_init__(self):
        if self.grid_points < 16 or self.grid_points % 2:
            raise ValueError("grid_points must be an even number >= 16")
        if not self.regularization > 0:
            raise ValueError("regularization floor must be positive")
        if self.frequency_cutoff is not None and not self.frequency_cutoff > 0:
            raise ValueError("frequency_cutoff must be positive")
        if self.grid_half_width is not None and not self.grid_half_width > 0:
            raise ValueError("grid_half_width must be positive")
        if not self.norm_bound > 0:
            raise ValueError("norm_bound must be positive")


def symmetric_grid(half_width: float, points: int) -> np.ndarray:
    """Uniform grid (j - points/2) * dM with dM = 2 * half_width / points; node points/2 is 0."""
    dm = 2.0 * half_width / points
    return (np.arange(points) - points // 2) * dm


def g_to_G(pooled: PooledHistogram, params: DetectionParams, grid: np.ndarray) -> GFunction:
    """Evaluate G on ``grid`` term by term in log space."""
    lam = params.lam
    n = np.flatnonzero(pooled.probs)
    logg = np.log(pooled.probs[n])
    with np.errstate(over="ignore", invalid="ignore"):
        x = lam * np.asarray(grid, dtype=float) ** 2
        terms = (logg[None, :] - x[:, None] + special.gammaln(n + 1.0) - special.gammaln(2.0 * n + 1.0)
                 + special.xlogy(n[None, :], 4.0 * x[:, None]))
    bad = ~np.isfinite(terms) & ~np.isneginf(terms)
    if bad.any():
        worst = int(n[np.flatnonzero(bad.any(axis=0))[0]])
        raise OverflowError(f"G-function term for photon number n={worst} is not representable")
    values = np.exp(special.logsumexp(terms, axis=1))
    return GFunction(np.asarray(grid, dtype=float), values, lam)


def kernel_transform(omega, lam: float):
    """Fourier transform int exp(-lam x^2) exp(-i omega x) dx = sqrt(pi/lam) exp(-omega^2 / 4 lam)."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    omega = np.asarray(omega, dtype=float)
    out = math.sqrt(math.pi / lam) * np.exp(-omega**2 / (4.0 * lam))
    return float(out) if out.ndim == 0 else out


def _check_grid(grid: np.ndarray) -> tuple[int, float]:
    n = len(grid)
    if n % 2 or grid[n // 2] != 0.0:
        raise ValueError("G must live on an even-length grid with node n/2 at the origin")
    dm = grid[1] - grid[0]
    if not np.allclose(np.diff(grid), dm, rtol=1e-9, atol=0):
        raise ValueError("G grid must be uniform")
    return n, float(dm)


def deconvolve(G: GFunction, settings: DeconvolutionSettings = DeconvolutionSettings()) -> MarginalDistribution:
    """Regularized Fourier deconvolution of G back to F(M^2).

    Frequencies where the kernel transform falls below ``regularization``
    times its peak are divided by that floor instead; an optional hard
    cutoff zeroes everything above ``frequency_cutoff``. The result is not
    clipped: negative excursions carry the noise through to the moments.
    """
    n, dm = _check_grid(G.grid)
    kernel_sd = 1.0 / math.sqrt(2.0 * G.lam)
    if kernel_sd < dm:
        raise ValueError(f"kernel width {kernel_sd:.3g} is below the grid spacing {dm:.3g}; "
                         "refine the grid (more points or a narrower half-width)")
    spec_g = np.fft.fft(np.fft.ifftshift(G.values)) * dm
    omega = 2.0 * math.pi * np.fft.fftfreq(n, dm)
    sf = kernel_transform(omega, G.lam)
    spec_h = spec_g / np.maximum(sf, settings.regularization * sf[0])
    if settings.frequency_cutoff is not None:
        spec_h[np.abs(omega) > settings.frequency_cutoff] = 0.0
    h = np.fft.fftshift(np.fft.ifft(spec_h)).real / dm
    mid = n // 2
    pos = h[mid:].copy()
    pos[1:] = 0.5 * (h[mid + 1:] + h[mid - 1:0:-1])
    marginal = MarginalDistribution.from_axis_density(G.grid[mid:], pos)
    norm = marginal.normalization
    if not math.isfinite(norm) or abs(norm - 1.0) > settings.norm_bound:
        raise ValueError(f"reconstructed normalization {norm:.4g} deviates from 1 by more than "
                         f"{settings.norm_bound}; enlarge the grid or weaken the regularization")
    return marginal


def forward_convolve(marginal: MarginalDistribution, lam: float, grid: np.ndarray) -> GFunction:
    """G(Mt) = int d(M^2) F(M^2) (exp(-lam (M - Mt)^2) + exp(-lam (M + Mt)^2)) / 2 by quadrature."""
    grid = np.asarray(grid, dtype=float)
    m = marginal.m
    if grid.max() < m.max():
        log.warning("G grid (to %.3g) narrower than the marginal support (to %.3g)", grid.max(), m.max())
    wf = marginal.weights * marginal.density
    d1 = np.exp(-lam * (m[None, :] - grid[:, None]) ** 2)
    d2 = np.exp(-lam * (m[None, :] + grid[:, None]) ** 2)
    return GFunction(grid, 0.5 * (d1 + d2) @ wf, lam)


def pilot_m_sq(pooled: PooledHistogram, params: DetectionParams) -> float:
    """<M^2> from the first factorial moment, E[n] / lam."""
    return float(np.arange(len(pooled.probs)) @ pooled.probs) / params.lam


def resolve_half_width(pooled: PooledHistogram, params: DetectionParams,
                       settings: DeconvolutionSettings) -> float:
    pilot_sd = math.sqrt(max(pilot_m_sq(pooled, params), 0.0))
    if settings.grid_half_width is None:
        # G is wider than h by the kernel variance 1/(2 lam)
        return DEFAULT_WIDTH_SD * math.sqrt(pilot_sd**2 + 0.5 / params.lam)
    if settings.grid_half_width < MIN_WIDTH_SD * pilot_sd:
        raise ValueError(f"grid_half_width {settings.grid_half_width:g} covers fewer than {MIN_WIDTH_SD:g} "
                         f"pilot standard deviations ({MIN_WIDTH_SD * pilot_sd:.4g} needed)")
    return settings.grid_half_width


def reconstruct_marginal(pooled: PooledHistogram, params: DetectionParams,
                         settings: DeconvolutionSettings = DeconvolutionSettings()
                         ) -> tuple[MarginalDistribution, ChannelPrediction]:
    """g(n) -> G -> F(M^2), plus the photon counts F(M^2) predicts back."""
    half = resolve_half_width(pooled, params, settings)
    grid = symmetric_grid(half, settings.grid_points)
    marginal = deconvolve(g_to_G(pooled, params, grid), settings)
    n_max = max(pooled.support_max, default_n_max(pilot_m_sq(pooled, params), params.lam))
    # the round trip is a diagnostic: report its tail instead of failing on it
    pred = predict_histogram(marginal, params, n_max, truncation_threshold=math.inf)
    if pred.truncation_mass > 1e-3:
        log.warning("round-trip prediction leaves %.3g of its mass beyond n=%d", pred.truncation_mass, n_max)
    return marginal, pred


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    size = max(len(p), len(q))
    a = np.zeros(size)
    b = np.zeros(size)
    a[: len(p)] = p
    b[: len(q)] = q
    return 0.5 * float(np.abs(a - b).sum())


# ----------------------------------------------------------------------- IO

def write_marginal(path: str | Path, marginal: MarginalDistribution, meta: dict) -> None:
    """Two-column ``M_sq,density`` text plus a ``.meta.json`` sidecar."""
    path = Path(path)
    with open(path, "x") as fh:
        fh.write("M_sq,density\n")
        for s, d in zip(marginal.grid.tolist(), marginal.density.tolist()):
            fh.write(f"{s!r},{d!r}\n")
    sidecar = dict(meta)
    sidecar["normalization"] = marginal.normalization
    sidecar["points"] = len(marginal.grid)
    with open(path.with_name(path.name + ".meta.json"), "x") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_marginal(path: str | Path) -> MarginalDistribution:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return MarginalDistribution(data[:, 0], data[:, 1])


def settings_meta(settings: DeconvolutionSettings, half_width: float, lam: float) -> dict:
    meta = asdict(settings)
    meta.update(resolved_half_width=half_width, lam=lam)
    return meta
