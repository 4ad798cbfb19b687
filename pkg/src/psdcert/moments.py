"""Even magnetization moments by two independent routes.

* from a reconstructed marginal, by quadrature of M^2k F(M^2) d(M^2);
* from the photon histogram directly: the k-th falling-factorial moment of
  a Poisson mixture is <chi^k> = lam^k <M^2k>, no deconvolution involved.

Radial moments follow from axis moments of a rotation-averaged
distribution as <M_rho^2k> = 4^k / C(2k, k) <M^2k>.
"""
from __future__ import annotations

import json
import math
from fractions import Fraction
from pathlib import Path

import numpy as np

from .model import AxisMoments, DetectionParams, MarginalDistribution, PooledHistogram, RadialMoments


def axis_moments_from_marginal(marginal: MarginalDistribution, k_max: int,
                               tail_tol: float | None = 1e-6, tail_fraction: float = 0.1) -> AxisMoments:
    """<M^2k> for k = 1..k_max, normalized by the achieved integral of F.

    The outer ``tail_fraction`` of the M range must contribute less than
    ``tail_tol`` (relative) to every moment; ``tail_tol=None`` skips the check.
    """
    norm = marginal.normalization
    if not norm > 0:
        raise ValueError(f"marginal normalization {norm:.4g} is not positive")
    m = marginal.m
    wf = marginal.weights * marginal.density
    tail = m > (1.0 - tail_fraction) * m[-1]
    out = np.empty(k_max)
    s = marginal.grid
    for k in range(1, k_max + 1):
        integrand = wf * s**k
        total = integrand.sum()
        out[k - 1] = total / norm
        if tail_tol is not None:
            rel = abs(integrand[tail].sum()) / max(abs(total), np.finfo(float).tiny)
            if rel > tail_tol:
                raise ValueError(f"grid does not cover the tail of moment order k={k} "
                                 f"(outer {tail_fraction:.0%} of the grid carries {rel:.2e} of it)")
    return AxisMoments(out, route="deconvolution")


def falling_factorial_moments(probs: np.ndarray, k_max: int) -> np.ndarray:
    """sum_n g(n) n (n-1) ... (n-k+1) for k = 1..k_max."""
    n = np.arange(len(probs), dtype=float)
    ff = np.ones_like(n)
    out = np.empty(k_max)
    for k in range(1, k_max + 1):
        ff = ff * (n - (k - 1))
        out[k - 1] = ff @ probs
    return out


def axis_moments_factorial(pooled: PooledHistogram, params: DetectionParams, k_max: int) -> AxisMoments:
    """<M^2k> = (k-th falling-factorial moment of g) / lam^k."""
    lam = params.lam
    fm = falling_factorial_moments(pooled.probs, k_max)
    return AxisMoments(fm / lam ** np.arange(1, k_max + 1), route="factorial")


def radial_factor(k: int) -> Fraction:
    """4^k / C(2k, k), exact."""
    return Fraction(4**k, math.comb(2 * k, k))


def radial_from_axis(axis: AxisMoments) -> RadialMoments:
    if not isinstance(axis, AxisMoments):
        raise TypeError("radial_from_axis expects AxisMoments")
    vals = np.array([float(radial_factor(k)) * v for k, v in enumerate(axis.values, start=1)])
    return RadialMoments(vals, route=axis.route)


# ----------------------------------------------------------------------- IO

def write_moments(path: str | Path, moments, meta: dict | None = None) -> None:
    """Ordered ``k,value`` rows plus a ``.meta.json`` sidecar carrying the route."""
    path = Path(path)
    with open(path, "x") as fh:
        fh.write("k,value\n")
        for k, v in enumerate(np.asarray(moments.values, dtype=float).tolist(), start=1):
            fh.write(f"{k},{v!r}\n")
    sidecar = {"route": moments.route, "kind": "radial" if isinstance(moments, RadialMoments) else "axis"}
    sidecar.update(meta or {})
    with open(path.with_name(path.name + ".meta.json"), "x") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_moments(path: str | Path):
    path = Path(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if not np.array_equal(data[:, 0], np.arange(1, len(data) + 1)):
        raise ValueError(f"{path}: moment orders must run 1..k_max in order")
    meta_path = path.with_name(path.name + ".meta.json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    cls = RadialMoments if meta.get("kind") == "radial" else AxisMoments
    return cls(data[:, 1], route=meta.get("route", ""))
