"""Phase-space-distribution criterion.

For a trial function (1 + sum_k C_2k M_rho^2k)^2, k = 1..N_c/2, the
coefficients minimizing its mean solve

    sum_l <M_rho^2(l+j)> C_2l = -<M_rho^2j>,   j = 1..N_c/2,

and the minimum is <F> = 1 + sum_k C_2k <M_rho^2k>. Any non-negative
joint density in (M_y, M_z) gives <F> >= 0, so a significantly negative
value rules out a classical description.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import mpmath
import numpy as np
import scipy.linalg

from .model import (
    DEFAULT_ANGLES,
    AngleHistogram,
    DetectionParams,
    PulseRecord,
    RadialMoments,
    pool_angles,
    validate_records,
)
from .moments import axis_moments_factorial, axis_moments_from_marginal, radial_from_axis
from .reconstruct import DeconvolutionSettings, reconstruct_marginal

log = logging.getLogger(__name__)

COND_THRESHOLD = 1e12
EXTENDED_DPS = 50
SPECTRAL_CUTOFF = 1e-12
RESOLUTION = 1e-14


@dataclass(frozen=True)
class TrialSolution:
    n_cutoff: int
    coefficients: np.ndarray  # C_2k, k = 1..n_cutoff/2, in mu_B^-2k
    f_mean: float
    condition: float
    scale: float  # preconditioning length s, s^2 = <M_rho^2> rounded to a power of two (mu_B)
    method: str = "float"
    residual: float = 0.0
    dropped: int = 0  # spectral directions discarded by the truncated solve


def _check_cutoff(radial: RadialMoments, n_cutoff: int) -> None:
    if n_cutoff < 2 or n_cutoff % 2:
        raise ValueError(f"cutoff order must be even and >= 2, got {n_cutoff}")
    if radial.k_max < n_cutoff:
        raise ValueError(f"N_c={n_cutoff} needs radial moments up to <M_rho^{2 * n_cutoff}>, "
                         f"only {radial.k_max} orders available")


def _scale_exponent(m1: float) -> int:
    """e with 2^e nearest <M_rho^2> on a log scale; a power of two makes rescaling exact."""
    return round(math.log2(m1)) if m1 > 0 and math.isfinite(m1) else 0


def solve_coefficients(radial: RadialMoments, n_cutoff: int, cond_threshold: float = COND_THRESHOLD,
                       dps: int = EXTENDED_DPS, cutoff: float = SPECTRAL_CUTOFF) -> TrialSolution:
    """Minimizing coefficients for cutoff order ``n_cutoff``.

    Moments are rescaled by s^2k with s^2 = <M_rho^2> rounded to a power of
    two, so the rescaling itself is exact, before the Hankel matrix is
    assembled. Well-conditioned systems use a pivoted symmetric
    (Bunch-Kaufman) solve in double precision. Beyond ``cond_threshold``,
    or when the float f_mean is not resolved above its rounding error, the
    matrix is also diagonally equilibrated and solved in ``dps``-digit
    arithmetic by an eigendecomposition truncated at ``cutoff`` relative to
    the largest eigenvalue, which yields the least-norm solution for
    rank-deficient matrices such as those of a ring.
    """
    _check_cutoff(radial, n_cutoff)
    n = n_cutoff // 2
    raw = np.asarray(radial.values[:n_cutoff], dtype=float)
    if not np.all(np.isfinite(raw)):
        raise ValueError("radial moments must be finite")
    e = _scale_exponent(raw[0])
    mu = np.ldexp(raw, -e * np.arange(1, n_cutoff + 1))
    idx = np.arange(1, n + 1)
    a = mu[(idx[:, None] + idx[None, :]) - 1]
    b = -mu[:n]
    with np.errstate(all="ignore"):
        cond = float(np.linalg.cond(a)) if np.any(a) else math.inf
    dropped = 0
    method = ""
    if math.isfinite(cond) and cond <= cond_threshold:
        x, resid = _refine(a, b, scipy.linalg.solve(a, b, assume_a="sym"))
        f = 1.0 + math.fsum(x * mu[:n])
        # a float f within its rounding error (~eps * cond) of zero cannot be signed reliably
        if abs(f) > RESOLUTION * cond:
            method = "float"
    if not method:
        x, f, cond, resid, dropped = _solve_extended(mu, n, dps, cutoff)
        method = "extended"
    if not (np.all(np.isfinite(x)) and math.isfinite(f)):
        raise ArithmeticError(f"non-finite solution at N_c={n_cutoff}")
    coeffs = np.ldexp(x, -e * idx)
    return TrialSolution(n_cutoff, coeffs, f, cond, 2.0 ** (e / 2), method, resid, dropped)


def _refine(a: np.ndarray, b: np.ndarray, x: np.ndarray, steps: int = 3):
    """Iterative refinement with residuals evaluated exactly (a, b, x are all doubles).

    Drives x to the correctly rounded solution, so that x . (Ax - b), the gap
    between the linear and the quadratic form of f, is at rounding level.
    """
    with mpmath.workdps(50):
        am = mpmath.matrix(a.tolist())
        bm = mpmath.matrix(b.tolist())
        bnorm = mpmath.norm(bm)
        for i in range(steps + 1):
            r = am * mpmath.matrix(x.tolist()) - bm
            resid = float(mpmath.norm(r) / bnorm) if bnorm > 0 else 0.0
            if i == steps or resid == 0.0:
                break
            x = x - scipy.linalg.solve(a, np.array([float(v) for v in r]), assume_a="sym")
    return x, resid


def _solve_extended(scaled: np.ndarray, n: int, dps: int, cutoff: float):
    # Moment matrices are strongly graded; equilibrating by D = diag(A_jj)^-1/2
    # turns entrywise rounding of the inputs into eigenvalue noise of order
    # n * eps, so a fixed relative cutoff separates noise from signal.
    with mpmath.workdps(dps):
        mu = [mpmath.mpf(1)] + [mpmath.mpf(float(v)) for v in scaled[: 2 * n]]
        d = [1 / mpmath.sqrt(abs(mu[2 * j])) if mu[2 * j] != 0 else mpmath.mpf(1) for j in range(1, n + 1)]
        a = mpmath.matrix(n, n)
        b = mpmath.matrix(n, 1)
        for j in range(1, n + 1):
            b[j - 1] = -mu[j] * d[j - 1]
            for l in range(1, n + 1):
                a[j - 1, l - 1] = mu[j + l] * d[j - 1] * d[l - 1]
        evals, evecs = mpmath.eigsy(a)
        mags = [abs(e) for e in evals]
        top = max(mags)
        cut = top * mpmath.mpf(cutoff)
        y = mpmath.matrix(n, 1)
        dropped = 0
        for i in range(n):
            if mags[i] > cut and mags[i] > 0:
                v = evecs[:, i]
                y += v * ((v.T * b)[0] / evals[i])
            else:
                dropped += 1
        r = a * y - b
        bnorm = mpmath.norm(b)
        resid = float(mpmath.norm(r) / bnorm) if bnorm > 0 else 0.0
        x = [y[i] * d[i] for i in range(n)]
        f = 1 + sum(x[k - 1] * mu[k] for k in range(1, n + 1))
        bottom = min(mags)
        cond = float(top / bottom) if bottom > 0 else math.inf
        xs = np.array([float(v) for v in x])
        return xs, float(f), cond, resid, dropped


def trial_value(solution: TrialSolution, m_rho):
    """(1 + sum_k C_2k m_rho^2k)^2 by Horner's scheme in m_rho^2."""
    x = np.asarray(m_rho, dtype=float) ** 2
    acc = np.zeros_like(x)
    for c in solution.coefficients[::-1]:
        acc = (acc + c) * x
    out = (1.0 + acc) ** 2
    return float(out) if out.ndim == 0 else out


def f_mean_quadratic(radial: RadialMoments, solution: TrialSolution) -> float:
    """<F> from the full expansion 1 + 2 sum C_k m_k + sum_jl C_j C_l m_(j+l).

    Independent of the stationarity shortcut used by
    :func:`solve_coefficients`. Accumulated in extended precision because
    the quadratic terms cancel heavily at high cutoff.
    """
    n = len(solution.coefficients)
    _check_cutoff(radial, 2 * n)
    with mpmath.workdps(EXTENDED_DPS):
        s2 = mpmath.mpf(solution.scale) ** 2
        mu = [mpmath.mpf(float(v)) / s2**k for k, v in enumerate(radial.values[: 2 * n], start=1)]
        c = [mpmath.mpf(float(v)) * s2**k for k, v in enumerate(solution.coefficients, start=1)]
        lin = mpmath.fsum(c[k] * mu[k] for k in range(n))
        quad = mpmath.fsum(c[j] * c[l] * mu[j + l + 1] for j in range(n) for l in range(n))
        return float(1 + 2 * lin + quad)


# -------------------------------------------------------------------- sweep

@dataclass(frozen=True)
class SweepEntry:
    n_cutoff: int
    f_mean: float
    std: float = math.nan
    condition: float = math.nan
    bootstrap_mean: float = math.nan
    method: str = ""
    flag: str = ""


@dataclass(frozen=True)
class SweepResult:
    entries: tuple
    z: float = 2.0
    route: str = ""
    seed: int | None = None
    replicates: int = 0
    failed_replicates: int = 0

    @property
    def valid(self) -> list[SweepEntry]:
        return [e for e in self.entries if math.isfinite(e.f_mean)]

    @property
    def plateau(self) -> float:
        v = self.valid
        return v[-1].f_mean if v else math.nan

    @property
    def plateau_std(self) -> float:
        v = self.valid
        return v[-1].std if v else math.nan

    @property
    def monotone(self) -> bool:
        v = self.valid
        return all(b.f_mean <= a.f_mean + 1e-8 for a, b in zip(v, v[1:]))

    @property
    def verdict(self) -> str:
        """``nonclassical`` when the plateau lies more than z std below zero.

        A missing std (exact moments) counts as zero, with a 1e-9 floor
        against rounding.
        """
        std = self.plateau_std
        std = 0.0 if not math.isfinite(std) else std
        if math.isfinite(self.plateau) and self.plateau < -max(self.z * std, 1e-9):
            return "nonclassical"
        return "classical-consistent"

    def threshold_cutoff(self) -> int | None:
        """Smallest N_c with f_mean < 0, if any."""
        for e in self.valid:
            if e.f_mean < 0:
                return e.n_cutoff
        return None


def sweep_cutoff(radial: RadialMoments, n_cutoff_max: int, z: float = 2.0,
                 cond_threshold: float = COND_THRESHOLD) -> SweepResult:
    """One :class:`TrialSolution` per even N_c = 2..n_cutoff_max; failures are kept as flagged rows."""
    if n_cutoff_max < 2:
        raise ValueError("n_cutoff_max must be >= 2")
    _check_cutoff(radial, n_cutoff_max - n_cutoff_max % 2)
    entries = []
    prev: SweepEntry | None = None
    for nc in range(2, n_cutoff_max + 1, 2):
        try:
            sol = solve_coefficients(radial, nc, cond_threshold)
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            entries.append(SweepEntry(nc, math.nan, flag=f"failed: {exc}"))
            continue
        if sol.dropped and prev is not None and sol.f_mean > prev.f_mean:
            # the order-(nc - 2) polynomial is admissible at nc; truncation only lost ground
            entries.append(SweepEntry(nc, prev.f_mean, condition=sol.condition, method=prev.method,
                                      flag=f"nested: kept N_c={prev.n_cutoff} solution"))
            prev = entries[-1]
            continue
        flag = ""
        if prev is not None and sol.f_mean > prev.f_mean + 1e-8:
            flag = "non-monotone"
        if sol.f_mean > 1.0 + 1e-12:
            flag = "indefinite moment matrix"
        entry = SweepEntry(nc, sol.f_mean, condition=sol.condition, method=sol.method, flag=flag)
        entries.append(entry)
        if prev is None or entry.f_mean < prev.f_mean:
            prev = entry
    return SweepResult(tuple(entries), z=z, route=radial.route)


# ------------------------------------------------------------ data pipeline

@dataclass(frozen=True)
class PipelineConfig:
    params: DetectionParams = field(default_factory=DetectionParams)
    angles: tuple = DEFAULT_ANGLES
    weighting: str = "counts"
    route: str = "factorial"
    n_cutoff_max: int = 16
    z: float = 2.0
    deconvolution: DeconvolutionSettings = field(default_factory=DeconvolutionSettings)
    tail_tol: float | None = None  # tail check on the deconvolution route; None skips it

    def __post_init__(self):
        if self.route not in ("factorial", "deconvolution"):
            raise ValueError(f"route must be 'factorial' or 'deconvolution', got {self.route!r}")
        if self.n_cutoff_max < 2 or self.n_cutoff_max % 2:
            raise ValueError("n_cutoff_max must be even and >= 2")


def radial_moments_for(histograms: Sequence[AngleHistogram], config: PipelineConfig,
                       route: str | None = None) -> RadialMoments:
    """Pool the angles and estimate radial moments up to order 2 * n_cutoff_max."""
    route = route or config.route
    pooled = pool_angles(histograms, config.weighting, config.angles)
    k_max = config.n_cutoff_max
    if route == "factorial":
        axis = axis_moments_factorial(pooled, config.params, k_max)
    else:
        marginal, _ = reconstruct_marginal(pooled, config.params, config.deconvolution)
        axis = axis_moments_from_marginal(marginal, k_max, tail_tol=config.tail_tol)
    return radial_from_axis(axis)


def run_pipeline(histograms: Sequence[AngleHistogram], config: PipelineConfig) -> SweepResult:
    return sweep_cutoff(radial_moments_for(histograms, config), config.n_cutoff_max, config.z)


def _group_counts(records: Sequence[PulseRecord], angles: Sequence[float]) -> list[tuple[float, np.ndarray]]:
    hists = validate_records(records, angles)
    out = []
    for h in hists:
        arr = np.repeat(np.array(list(h.counts.keys()), dtype=np.int64),
                        np.array(list(h.counts.values()), dtype=np.int64))
        out.append((h.beta, arr))
    return out


def _hist(beta: float, counts: np.ndarray) -> AngleHistogram:
    c = np.bincount(counts)
    nz = np.flatnonzero(c)
    return AngleHistogram(beta, dict(zip(nz.tolist(), c[nz].tolist())))


def _half_samples(grouped, replicates: int, seed: int):
    """Yield (index, per-angle half-sample histograms) with one Philox substream per replicate."""
    for r, child in enumerate(np.random.SeedSequence(seed).spawn(replicates)):
        rng = np.random.Generator(np.random.Philox(child))
        yield r, [_hist(b, rng.choice(c, size=len(c) // 2, replace=False)) for b, c in grouped]


def _grouped_for_resampling(records: Sequence[PulseRecord], config: PipelineConfig, replicates: int):
    if len(records) == 0:
        raise ValueError("no records to resample")
    if replicates < 2:
        raise ValueError("need at least 2 replicates")
    grouped = _group_counts(records, config.angles)
    if any(len(c) < 2 for _, c in grouped):
        raise ValueError("every angle needs at least 2 records for half-sampling")
    return grouped


def bootstrap_sweep(records: Sequence[PulseRecord], config: PipelineConfig = PipelineConfig(),
                    replicates: int = 150, seed: int = 0) -> SweepResult:
    """Half-sampling uncertainty for the sweep.

    Each replicate keeps floor(n_beta / 2) records per angle, drawn without
    replacement, and reruns pool -> moments -> sweep. The reported std is
    the plain across-replicate standard deviation (no half-sample
    correction). ``f_mean`` is the full-data value; the replicate average is
    kept as ``bootstrap_mean``. Replicates run in index order with one
    Philox substream each, so the output depends only on ``seed``.
    """
    grouped = _grouped_for_resampling(records, config, replicates)
    full = run_pipeline([_hist(b, c) for b, c in grouped], config)
    values = np.full((replicates, len(full.entries)), np.nan)
    failed = 0
    for r, half in _half_samples(grouped, replicates, seed):
        try:
            res = run_pipeline(half, config)
        except (ValueError, ArithmeticError) as exc:
            log.debug("replicate %d failed: %s", r, exc)
            failed += 1
            continue
        values[r] = [e.f_mean for e in res.entries]
    entries = []
    for j, e in enumerate(full.entries):
        col = values[:, j]
        col = col[np.isfinite(col)]
        std = float(np.std(col, ddof=1)) if len(col) >= 2 else math.nan
        mean = float(col.mean()) if len(col) else math.nan
        entries.append(SweepEntry(e.n_cutoff, e.f_mean, std, e.condition, mean, e.method, e.flag))
    return SweepResult(tuple(entries), z=config.z, route=config.route, seed=seed,
                       replicates=replicates, failed_replicates=failed)


@dataclass(frozen=True)
class MomentEstimate:
    route: str
    values: np.ndarray  # full-data axis moments <M^2k>, k = 1..k_max
    std: np.ndarray  # across half-sample replicates
    failed_replicates: int = 0


def bootstrap_axis_moments(records: Sequence[PulseRecord], config: PipelineConfig, k_max: int,
                           route: str, replicates: int = 150, seed: int = 0) -> MomentEstimate:
    """Axis moments of one route with the same half-sampling spread as :func:`bootstrap_sweep`."""
    grouped = _grouped_for_resampling(records, config, replicates)

    def axis(hists):
        pooled = pool_angles(hists, config.weighting, config.angles)
        if route == "factorial":
            return axis_moments_factorial(pooled, config.params, k_max).values
        marginal, _ = reconstruct_marginal(pooled, config.params, config.deconvolution)
        return axis_moments_from_marginal(marginal, k_max, tail_tol=config.tail_tol).values

    if route not in ("factorial", "deconvolution"):
        raise ValueError(f"route must be 'factorial' or 'deconvolution', got {route!r}")
    full = axis([_hist(b, c) for b, c in grouped])
    values = np.full((replicates, k_max), np.nan)
    failed = 0
    for r, half in _half_samples(grouped, replicates, seed):
        try:
            values[r] = axis(half)
        except (ValueError, ArithmeticError) as exc:
            log.debug("replicate %d failed: %s", r, exc)
            failed += 1
    ok = values[np.all(np.isfinite(values), axis=1)]
    std = np.std(ok, axis=0, ddof=1) if len(ok) >= 2 else np.full(k_max, np.nan)
    return MomentEstimate(route, full, std, failed)


# ----------------------------------------------------------------------- IO

def format_sweep(result: SweepResult, extra: dict | None = None) -> str:
    """Per-row ``n_cutoff,f_mean,std,condition`` plus a ``#`` summary block."""
    summary = {
        "kind": "sweep",
        "plateau": result.plateau,
        "plateau_std": result.plateau_std,
        "verdict": result.verdict,
        "z": result.z,
        "route": result.route,
        "seed": result.seed,
        "replicates": result.replicates,
        "failed_replicates": result.failed_replicates,
        "monotone": result.monotone,
        "threshold_cutoff": result.threshold_cutoff(),
    }
    summary.update(extra or {})
    lines = [f"# {k}: {json.dumps(v)}" for k, v in summary.items()]
    lines.append("n_cutoff,f_mean,std,condition,bootstrap_mean,method,flag")
    for e in result.entries:
        lines.append(f"{e.n_cutoff},{float(e.f_mean)!r},{float(e.std)!r},{float(e.condition)!r},{float(e.bootstrap_mean)!r},"
                     f"{e.method},{e.flag.replace(',', ';')}")
    return "\n".join(lines) + "\n"


def parse_sweep(text: str) -> tuple[dict, list[dict]]:
    summary = {}
    rows = []
    header = None
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            summary[key.strip()] = json.loads(val)
            continue
        if header is None:
            header = line.split(",")
            continue
        rows.append(dict(zip(header, line.split(","))))
    if summary.get("kind") != "sweep" or header is None:
        raise ValueError("not a sweep file")
    return summary, rows


def pipeline_snapshot(config: PipelineConfig) -> dict:
    d = asdict(config)
    d["params"]["lambda"] = config.params.lam
    d["angles"] = list(config.angles)
    return d


def write_sweep(path: str | Path, result: SweepResult, extra: dict | None = None) -> None:
    with open(path, "x") as fh:
        fh.write(format_sweep(result, extra))
