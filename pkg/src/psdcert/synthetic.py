"""Rotationally symmetric test states in the (M_y, M_z) plane.

Each kind has a closed-form axis marginal and closed-form even moments.
``single_excitation`` is the first-excited harmonic profile, whose 2D
quasi-density (r^2/sigma^2 - 1) exp(-r^2 / 2 sigma^2) / (2 pi sigma^2) is
negative near the origin while its axis marginal M^2/sigma^2 N(0, sigma^2)
is a genuine density. It stands in for the heralded ensemble; mixing it
with the Gaussian reference models imperfect heralding.

``sigma`` is always the ground-state (reference) axis standard deviation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.optimize import nnls

from .channel import default_n_max, predict_histogram
from .model import (
    AxisMoments,
    DetectionParams,
    MarginalDistribution,
    PooledHistogram,
    extrapolate_origin,
    m_sq_grid,
    quadrature_weights,
)

KINDS = ("gaussian_reference", "ring", "uniform_disc", "single_excitation", "mixture")
K_MAX_ORACLE = 16


@dataclass(frozen=True)
class SyntheticState:
    kind: str
    sigma: float = 0.0
    radius: float = 0.0
    weights: tuple = ()
    components: tuple = ()
    sampleable: bool = field(init=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unsupported kind {self.kind!r}; choose from {KINDS}")
        if self.kind in ("gaussian_reference", "single_excitation") and self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.kind in ("ring", "uniform_disc") and self.radius < 0:
            raise ValueError("radius must be non-negative")
        if self.kind == "mixture":
            w = np.asarray(self.weights, dtype=float)
            if len(w) != len(self.components) or len(w) == 0:
                raise ValueError("mixture needs one weight per component")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("mixture weights must be non-negative and sum to 1")
            object.__setattr__(self, "weights", tuple(float(x) for x in w))
        object.__setattr__(self, "sampleable", self._density_nonnegative())

    # convenience constructors
    @classmethod
    def gaussian(cls, sigma: float) -> "SyntheticState":
        return cls("gaussian_reference", sigma=sigma)

    @classmethod
    def ring(cls, radius: float) -> "SyntheticState":
        return cls("ring", radius=radius)

    @classmethod
    def disc(cls, radius: float) -> "SyntheticState":
        return cls("uniform_disc", radius=radius)

    @classmethod
    def single_excitation(cls, sigma: float) -> "SyntheticState":
        return cls("single_excitation", sigma=sigma)

    @classmethod
    def mixture(cls, weights: Sequence[float], components: Sequence["SyntheticState"]) -> "SyntheticState":
        return cls("mixture", weights=tuple(weights), components=tuple(components))

    @classmethod
    def heralded(cls, sigma: float, purity: float = 1.0) -> "SyntheticState":
        """``purity`` * single excitation + (1 - purity) * reference, same sigma."""
        if purity >= 1.0:
            return cls.single_excitation(sigma)
        return cls.mixture([purity, 1 - purity], [cls.single_excitation(sigma), cls.gaussian(sigma)])

    # ------------------------------------------------------------------
    def leaves(self):
        if self.kind != "mixture":
            yield 1.0, self
            return
        for w, c in zip(self.weights, self.components):
            for w2, leaf in c.leaves():
                yield w * w2, leaf

    def radial_density_2d(self, r: np.ndarray) -> np.ndarray:
        """2D (quasi-)density at radius r, excluding ring delta shells."""
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for w, s in self.leaves():
            if s.kind == "gaussian_reference" and s.sigma > 0:
                out += w * np.exp(-r**2 / (2 * s.sigma**2)) / (2 * math.pi * s.sigma**2)
            elif s.kind == "single_excitation" and s.sigma > 0:
                v = s.sigma**2
                out += w * (r**2 / v - 1) * np.exp(-r**2 / (2 * v)) / (2 * math.pi * v)
            elif s.kind == "uniform_disc" and s.radius > 0:
                out += w * np.where(r <= s.radius, 1 / (math.pi * s.radius**2), 0.0)
        return out

    def _density_nonnegative(self) -> bool:
        leaves = list(self.leaves())
        if all(s.kind != "single_excitation" for _, s in leaves):
            return True
        scale = max(max(s.sigma, s.radius) for _, s in leaves)
        if scale == 0:
            return True
        r = np.linspace(0, 12 * scale, 4001)
        return bool(np.all(self.radial_density_2d(r) >= -1e-300))

    @property
    def m_sq_mean(self) -> float:
        return float(exact_axis_moments(self, 1)[1])

    def scale(self) -> float:
        """Largest length scale among the components (mu_B)."""
        return max(max(s.sigma, s.radius) for _, s in self.leaves())

    def sample_axis(self, beta: float, rng: np.random.Generator, size: int | None = None):
        return sample_axis(self, beta, rng, size)


# ------------------------------------------------------------ exact moments

def _double_factorial_odd(k: int) -> int:
    """(2k - 1)!!"""
    return math.prod(range(1, 2 * k, 2))


def exact_axis_moments_rational(state: SyntheticState, k_max: int) -> list[Fraction]:
    """Axis moments as exact rationals in units where every length is a
    rational multiple of 1 (sigma**2 and radius**2 are converted with
    Fraction, so callers get the float inputs' exact binary value)."""
    out = [Fraction(0)] * k_max
    for w, s in state.leaves():
        wf = Fraction(w)
        for k in range(1, k_max + 1):
            if s.kind == "gaussian_reference":
                v = Fraction(s.sigma) ** 2
                m = _double_factorial_odd(k) * v**k
            elif s.kind == "single_excitation":
                v = Fraction(s.sigma) ** 2
                m = _double_factorial_odd(k + 1) * v**k
            elif s.kind == "ring":
                m = Fraction(s.radius) ** (2 * k) * Fraction(math.comb(2 * k, k), 4**k)
            else:
                m = Fraction(s.radius) ** (2 * k) * Fraction(math.comb(2 * k, k), 4**k * (k + 1))
            out[k - 1] += wf * m
    return out


def exact_axis_moments(state: SyntheticState, k_max: int) -> AxisMoments:
    """Closed-form <M^2k>, k = 1..k_max (k_max <= 16)."""
    if not 1 <= k_max <= K_MAX_ORACLE:
        raise ValueError(f"k_max must lie in 1..{K_MAX_ORACLE}")
    return AxisMoments(np.array([float(x) for x in exact_axis_moments_rational(state, k_max)]), route="exact")


# ----------------------------------------------------------- exact marginal

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def _edge_law_moments(kind: str, radius: float, a: float, b: float, orders: int) -> np.ndarray:
    """Moments of u = M^2 over a <= |M| <= b for the ring or disc axis law.

    Substituting M = R sin(t) removes the edge singularity, so Gauss-Legendre
    in t is accurate to roundoff.
    """
    ta = math.asin(min(a / radius, 1.0))
    tb = math.asin(min(b / radius, 1.0))
    if tb <= ta:
        return np.zeros(orders)
    t = 0.5 * (tb - ta) * _GL_NODES + 0.5 * (tb + ta)
    wt = 0.5 * (tb - ta) * _GL_WEIGHTS
    dens = np.full_like(t, 2 / math.pi) if kind == "ring" else (4 / math.pi) * np.cos(t) ** 2
    u = (radius * np.sin(t)) ** 2
    return np.array([np.sum(wt * dens * u**j) for j in range(orders)])


def _match_block(u: np.ndarray, mom: np.ndarray) -> np.ndarray:
    """Non-negative masses at nodes ``u`` with moments ``mom`` (exact when possible)."""
    c = u[0]
    s = u[-1] - c
    n = len(u)
    vander = np.array([((u - c) / s) ** j for j in range(n)])
    # moments about c, scaled by s, for a well-conditioned system
    target = np.array([sum(math.comb(j, i) * (-c) ** (j - i) * mom[i] for i in range(j + 1)) / s**j
                       for j in range(n)])
    sol = np.linalg.solve(vander, target)
    if np.any(sol < 0):
        sol = nnls(vander, target)[0]
    return sol


def _edge_law_masses(kind: str, radius: float, grid: np.ndarray) -> np.ndarray:
    """Node masses reproducing, block by block, the law's low u-moments.

    [0, M_3] goes to nodes 1 and 3 (orders 0..1; node 2 has a negative
    quadrature weight and node 0 none). Later blocks are node triples
    (3, 4, 5), (5, 6, 7), ... matching orders 0..2.
    """
    m = np.sqrt(grid)
    mass = np.zeros_like(grid)
    first = [1, 3]
    mass[first] = _match_block(grid[first], _edge_law_moments(kind, radius, 0.0, m[3], 2))
    start = 3
    while start < len(grid) - 1 and m[start] < radius:
        idx = np.arange(start, min(start + 3, len(grid)))
        mom = _edge_law_moments(kind, radius, m[start], m[idx[-1]], len(idx))
        if mom[0] > 0:
            mass[idx] += _match_block(grid[idx], mom)
        start = idx[-1]
    return mass


def _leaf_axis_density(s: SyntheticState, m: np.ndarray) -> np.ndarray | None:
    """Pointwise symmetric axis density h(M), or None for non-smooth kinds."""
    if s.kind == "gaussian_reference":
        return np.exp(-m**2 / (2 * s.sigma**2)) / (math.sqrt(2 * math.pi) * s.sigma)
    if s.kind == "single_excitation":
        v = s.sigma**2
        return (m**2 / v) * np.exp(-m**2 / (2 * v)) / (math.sqrt(2 * math.pi) * s.sigma)
    return None


def exact_marginal(state: SyntheticState, grid: np.ndarray) -> MarginalDistribution:
    """Axis marginal F(M^2) of ``state`` sampled on the M^2 ``grid``.

    Smooth kinds are sampled pointwise. Ring and disc marginals have
    inverse-square-root or square-root edges at M = R, so pointwise values
    are useless there; instead the nodes carry non-negative masses that
    reproduce the exact low-order moments of each three-node block. The
    node values then alternate in a Simpson-like pattern, which the
    photon-count channel smooths away but a plot will show. Moments are
    accurate to ~1e-10 when R sits on an odd node, as ``default_grid``
    arranges.
    """
    grid = np.asarray(grid, dtype=float)
    m = np.sqrt(grid)
    w = quadrature_weights(grid)
    smooth = np.zeros_like(grid)
    edge = np.zeros_like(grid)
    for wt, s in state.leaves():
        scale = max(s.sigma, s.radius)
        if scale == 0:
            edge += wt * MarginalDistribution.point_mass(grid, 0.0).density
            continue
        h = _leaf_axis_density(s, m)
        if h is not None:
            smooth[1:] += wt * h[1:] / m[1:]
            continue
        mass = _edge_law_masses(s.kind, s.radius, grid)
        d = np.zeros_like(grid)
        d[1:] = mass[1:] / w[1:]
        d[0] = d[1]
        d[2] = 0.0
        edge += wt * d
    smooth[0] = max(0.0, extrapolate_origin(m[1:4], smooth[1:4]))
    return MarginalDistribution(grid, smooth + edge)


def default_grid(state: SyntheticState, points: int = 4097, widths: float = 12.0) -> np.ndarray:
    """M^2 grid wide enough for ``state``: ``widths`` sigmas or just past the radius.

    When the state has a ring or disc, the spacing is nudged so the largest
    radius falls on an odd node, a block boundary for ``exact_marginal``.
    """
    reach = 0.0
    radius = 0.0
    for _, s in state.leaves():
        reach = max(reach, widths * s.sigma, 1.05 * s.radius)
        radius = max(radius, s.radius)
    if reach == 0:
        reach = 1.0
    if radius > 0:
        j = int(round(radius * (points - 1) / reach))
        j = max(1, j + (j % 2 == 0))
        while j > points - 1:
            j -= 2
        return (np.arange(points) * (radius / j)) ** 2
    return m_sq_grid(reach, points)


# ----------------------------------------------------------------- sampling

def sample_axis(state: SyntheticState, beta: float, rng: np.random.Generator, size: int | None = None):
    """Draw M along the axis at angle ``beta`` (irrelevant by symmetry)."""
    if not state.sampleable:
        raise ValueError(f"state {state.kind!r} has a negative 2D quasi-density and cannot be sampled "
                         "record by record; use exact_pooled_histogram and simulate_from_histogram")
    n = 1 if size is None else size
    out = _sample_leafwise(state, rng, n)
    return float(out[0]) if size is None else out


def _sample_leafwise(state: SyntheticState, rng: np.random.Generator, n: int) -> np.ndarray:
    leaves = list(state.leaves())
    if len(leaves) == 1:
        which = np.zeros(n, dtype=int)
    else:
        which = rng.choice(len(leaves), size=n, p=[w for w, _ in leaves])
    out = np.empty(n)
    for i, (_, s) in enumerate(leaves):
        idx = np.flatnonzero(which == i)
        k = len(idx)
        if k == 0:
            continue
        if s.kind == "gaussian_reference":
            out[idx] = s.sigma * rng.standard_normal(k)
        elif s.kind == "single_excitation":
            # marginal M^2/sigma^2 N(0, sigma^2): |M| / sigma is chi with 3 dof
            out[idx] = s.sigma * np.sqrt(rng.chisquare(3, k)) * rng.choice([-1.0, 1.0], k)
        elif s.kind == "ring":
            out[idx] = s.radius * np.cos(2 * math.pi * rng.random(k))
        else:
            out[idx] = s.radius * np.sqrt(rng.random(k)) * np.cos(2 * math.pi * rng.random(k))
    return out


# ------------------------------------------------------------ photon counts

def exact_pooled_histogram(state: SyntheticState, params: DetectionParams, n_max: int | None = None,
                           grid: np.ndarray | None = None, truncation_threshold: float = 1e-9) -> PooledHistogram:
    """Noiseless photon-number distribution of ``state`` through the channel."""
    if state.scale() == 0:
        return PooledHistogram(np.array([1.0]))
    if n_max is None:
        n_max = default_n_max(state.m_sq_mean, params.lam, tail=truncation_threshold)
    if grid is None:
        grid = default_grid(state)
    pred = predict_histogram(exact_marginal(state, grid), params, n_max,
                             truncation_threshold=truncation_threshold)
    p = np.clip(pred.probs, 0.0, None)
    return PooledHistogram(p / p.sum())


def state_from_spec(spec: dict) -> SyntheticState:
    """Build a state from a kind + parameter mapping (config/CLI form)."""
    kind = spec.get("kind")
    if kind == "gaussian_reference":
        return SyntheticState.gaussian(float(spec["sigma"]))
    if kind == "single_excitation":
        return SyntheticState.single_excitation(float(spec["sigma"]))
    if kind == "heralded":
        return SyntheticState.heralded(float(spec["sigma"]), float(spec.get("purity", 1.0)))
    if kind == "ring":
        return SyntheticState.ring(float(spec["radius"]))
    if kind == "uniform_disc":
        return SyntheticState.disc(float(spec["radius"]))
    if kind == "mixture":
        comps = [state_from_spec(c) for c in spec["components"]]
        return SyntheticState.mixture([float(w) for w in spec["weights"]], comps)
    raise ValueError(f"unsupported state kind {kind!r}")
