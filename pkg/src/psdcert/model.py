"""Shared data model: detection constants, pulse records, histograms,
marginal distributions and moment vectors.

Magnetization is measured in units of the Bohr magneton throughout, so
``phi`` is in rad per mu_B and ``lambda`` in mu_B^-2.
"""
from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

#: the four rotation angles used in the experiment
DEFAULT_ANGLES = (0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4)

ANGLE_TOL = 1e-9


@dataclass(frozen=True)
class DetectionParams:
    q: float = 0.3
    n_in: float = 2e4
    phi: float = 0.0012

    def __post_init__(self):
        if not (0.0 < self.q <= 1.0):
            raise ValueError(f"detection efficiency q must lie in (0, 1], got {self.q}")
        if not self.n_in > 0:
            raise ValueError(f"n_in must be positive, got {self.n_in}")
        if not self.phi > 0:
            raise ValueError(f"phi must be positive, got {self.phi}")

    @property
    def lam(self) -> float:
        """Decay constant q * n_in * phi**2 (per mu_B^2)."""
        return self.q * self.n_in * self.phi**2

    @classmethod
    def from_lambda(cls, lam: float, q: float = 0.3, phi: float = 0.0012) -> "DetectionParams":
        """Parameters with a prescribed ``lam``, adjusting ``n_in``."""
        if not lam > 0:
            raise ValueError(f"lambda must be positive, got {lam}")
        return cls(q=q, n_in=lam / (q * phi**2), phi=phi)


@dataclass(frozen=True)
class PulseRecord:
    beta: float
    n: int


def _match_angle(beta: float, angle_set: Sequence[float]) -> float | None:
    for a in angle_set:
        if abs(beta - a) <= ANGLE_TOL:
            return a
    return None


@dataclass(frozen=True)
class AngleHistogram:
    """Photon-count histogram for one rotation angle, stored as exact counts."""

    beta: float
    counts: Mapping[int, int]
    total_pulses: int = field(default=-1)

    def __post_init__(self):
        counts = {int(k): int(v) for k, v in sorted(self.counts.items()) if v != 0}
        if any(k < 0 for k in counts):
            raise ValueError("photon numbers must be non-negative")
        if any(v < 0 for v in counts.values()):
            raise ValueError("occurrence counts must be non-negative")
        total = sum(counts.values())
        if self.total_pulses == -1:
            object.__setattr__(self, "total_pulses", total)
        elif self.total_pulses != total:
            raise ValueError(f"counts sum to {total}, not total_pulses={self.total_pulses}")
        if total <= 0:
            raise ValueError("histogram holds no pulses")
        object.__setattr__(self, "counts", counts)

    def frequencies(self) -> dict[int, float]:
        return {k: v / self.total_pulses for k, v in self.counts.items()}

    def as_array(self) -> np.ndarray:
        arr = np.zeros(max(self.counts) + 1, dtype=np.int64)
        for k, v in self.counts.items():
            arr[k] = v
        return arr


@dataclass(frozen=True)
class PooledHistogram:
    """Rotation-averaged photon-number distribution g(n) as a dense array."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probs must be a non-empty 1-D array")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must be finite and non-negative")
        s = p.sum()
        if abs(s - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {s}, expected 1")
        if abs(s - 1.0) > 1e-13:  # leave exact count ratios untouched
            p = p / s
        nz = np.flatnonzero(p)
        p = p[: nz[-1] + 1]
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def support_max(self) -> int:
        return len(self.probs) - 1

    def get(self, n: int) -> float:
        return float(self.probs[n]) if 0 <= n < len(self.probs) else 0.0

    @classmethod
    def from_mapping(cls, probs: Mapping[int, float]) -> "PooledHistogram":
        arr = np.zeros(max(probs) + 1)
        for k, v in probs.items():
            arr[k] = v
        return cls(arr)


def validate_records(records: Sequence[PulseRecord], angle_set: Sequence[float] = DEFAULT_ANGLES) -> list[AngleHistogram]:
    """Bin pulse records into one histogram per angle present."""
    if len(records) == 0:
        raise ValueError("empty input: no pulse records")
    per_angle: dict[float, Counter] = {}
    for r in records:
        a = _match_angle(r.beta, angle_set)
        if a is None:
            raise ValueError(f"angle {r.beta} not in configured angle set {list(angle_set)}")
        if r.n < 0 or int(r.n) != r.n:
            raise ValueError(f"photon count must be a non-negative integer, got {r.n}")
        per_angle.setdefault(a, Counter())[int(r.n)] += 1
    return [AngleHistogram(a, dict(c)) for a, c in sorted(per_angle.items())]


def pool_angles(histograms: Sequence[AngleHistogram], weighting: str = "counts",
                angle_set: Sequence[float] | None = None) -> PooledHistogram:
    """Combine per-angle histograms into the rotation-averaged g(n).

    ``weighting="counts"`` pools raw counts (weight by total pulses);
    ``weighting="angles"`` gives each angle equal weight.
    """
    if len(histograms) == 0:
        raise ValueError("cannot pool an empty list of histograms")
    if angle_set is not None:
        for h in histograms:
            if _match_angle(h.beta, angle_set) is None:
                raise ValueError(f"histogram angle {h.beta} inconsistent with angle set {list(angle_set)}")
    size = max(max(h.counts) for h in histograms) + 1
    if weighting == "counts":
        total = np.zeros(size, dtype=np.int64)
        for h in sorted(histograms, key=lambda h: h.beta):
            a = h.as_array()
            total[: len(a)] += a
        return PooledHistogram(total / total.sum())
    if weighting == "angles":
        acc = np.zeros(size)
        for h in sorted(histograms, key=lambda h: h.beta):
            a = h.as_array()
            acc[: len(a)] += a / h.total_pulses
        return PooledHistogram(acc / len(histograms))
    raise ValueError(f"unknown weighting {weighting!r}; use 'counts' or 'angles'")


def quadrature_weights(grid: np.ndarray) -> np.ndarray:
    """Weights for integrals over d(M^2) on an M^2 grid.

    The trapezoid rule is applied in M = sqrt(M^2) to the integrand
    2 M F(M^2), so an integrable 1/M singularity of F at the origin never
    enters. The integrand's value at M = 0 is the quadratic extrapolation
    of M F(M^2) from nodes 1..3, folded into their weights.
    """
    m = np.sqrt(grid)
    dm = np.diff(m)
    w = np.zeros_like(m)
    w[:-1] += dm / 2
    w[1:] += dm / 2
    w = 2 * m * w
    x0, x1, x2 = m[1:4]
    lag = np.array([(x1 * x2) / ((x0 - x1) * (x0 - x2)),
                    (x0 * x2) / ((x1 - x0) * (x1 - x2)),
                    (x0 * x1) / ((x2 - x0) * (x2 - x1))])
    w[1:4] += dm[0] * lag * m[1:4]
    return w


@dataclass(frozen=True)
class MarginalDistribution:
    """Density of M^2 along one axis, F(M^2), on a grid starting at 0."""

    grid: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        g = np.array(self.grid, dtype=float)
        d = np.array(self.density, dtype=float)
        if g.ndim != 1 or g.shape != d.shape or g.size < 4:
            raise ValueError("grid and density must be 1-D arrays of equal length >= 4")
        if g[0] != 0.0:
            raise ValueError("M^2 grid must start at 0")
        if np.any(np.diff(g) <= 0):
            raise ValueError("M^2 grid must be strictly increasing")
        if not np.all(np.isfinite(d)):
            raise ValueError("density must be finite at every node")
        g.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "density", d)

    @property
    def weights(self) -> np.ndarray:
        return quadrature_weights(self.grid)

    @property
    def normalization(self) -> float:
        return float(self.weights @ self.density)

    def integrate(self, values: np.ndarray) -> float:
        """Integral of ``values(M^2) * F(M^2)`` over d(M^2)."""
        return float(self.weights @ (self.density * values))

    @property
    def m(self) -> np.ndarray:
        return np.sqrt(self.grid)

    def axis_density(self) -> np.ndarray:
        """|M| F(M^2), i.e. the symmetric density of M itself on M >= 0.

        The origin value is extrapolated from nodes 1..3, as in the quadrature,
        since F itself may diverge like 1/M there.
        """
        h = self.m * self.density
        if len(h) >= 4:
            h[0] = extrapolate_origin(self.m[1:4], h[1:4])
        return h

    @classmethod
    def from_axis_density(cls, m: np.ndarray, h: np.ndarray) -> "MarginalDistribution":
        """Build from a symmetric density h(M) sampled on M >= 0, m[0] = 0."""
        m = np.asarray(m, dtype=float)
        h = np.asarray(h, dtype=float)
        if m[0] != 0.0:
            raise ValueError("axis grid must start at M = 0")
        dens = np.empty_like(h)
        dens[1:] = h[1:] / m[1:]
        dens[0] = extrapolate_origin(m[1:4], dens[1:4])
        return cls(m**2, dens)

    @classmethod
    def point_mass(cls, grid: np.ndarray, m_sq: float) -> "MarginalDistribution":
        """Unit mass on the grid node nearest ``m_sq`` (excluding the origin,
        which carries zero quadrature weight)."""
        grid = np.asarray(grid, dtype=float)
        j = int(np.argmin(np.abs(grid - m_sq)))
        j = max(j, 1)
        w = quadrature_weights(grid)
        dens = np.zeros_like(grid)
        dens[j] = 1.0 / w[j]
        return cls(grid, dens)


def extrapolate_origin(x: np.ndarray, y: np.ndarray) -> float:
    """Quadratic extrapolation to x = 0 through three nodes."""
    x0, x1, x2 = x
    y0, y1, y2 = y
    l0 = (x1 * x2) / ((x0 - x1) * (x0 - x2))
    l1 = (x0 * x2) / ((x1 - x0) * (x1 - x2))
    l2 = (x0 * x1) / ((x2 - x0) * (x2 - x1))
    return float(l0 * y0 + l1 * y1 + l2 * y2)


def m_sq_grid(half_width: float, points: int) -> np.ndarray:
    """M^2 nodes (i * dM)**2, i = 0..points-1, with uniform spacing in M."""
    return (np.arange(points) * (half_width / (points - 1))) ** 2


def _moment_chain_ok(values: np.ndarray) -> bool:
    m = np.concatenate([[1.0], values])
    for k in range(1, len(m) - 1):
        if m[k] ** 2 > m[k - 1] * m[k + 1] * (1 + 1e-9):
            return False
    return True


@dataclass(frozen=True)
class _EvenMoments:
    values: np.ndarray
    route: str = ""

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def k_max(self) -> int:
        return len(self.values)

    def __getitem__(self, k: int) -> float:
        if not 1 <= k <= self.k_max:
            raise IndexError(f"moment order {k} outside 1..{self.k_max}")
        return float(self.values[k - 1])

    @property
    def chain_ok(self) -> bool:
        """Cauchy-Schwarz chain <M^2k>^2 <= <M^2(k-1)> <M^2(k+1)>; False flags noise."""
        return _moment_chain_ok(self.values)


@dataclass(frozen=True)
class AxisMoments(_EvenMoments):
    """Even moments <M^2k> along one axis, k = 1..k_max."""


@dataclass(frozen=True)
class RadialMoments(_EvenMoments):
    """Even moments <M_rho^2k> of M_rho = sqrt(M_y^2 + M_z^2)."""


# ---------------------------------------------------------------- file IO

RECORD_HEADER = ("beta_rad", "n")
HISTOGRAM_HEADER = ("beta_rad", "n", "count")


def write_records(records: Iterable[PulseRecord], path: str | Path) -> None:
    with open(path, "x", newline="") as fh:
        fh.write(records_to_text(records))


def records_to_text(records: Iterable[PulseRecord]) -> str:
    buf = io.StringIO()
    buf.write(",".join(RECORD_HEADER) + "\n")
    for r in records:
        buf.write(f"{float(r.beta)!r},{int(r.n)}\n")
    return buf.getvalue()


def read_measurements(path: str | Path, angle_set: Sequence[float] = DEFAULT_ANGLES) -> list[AngleHistogram]:
    """Read either a record file or a histogram file into per-angle histograms."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(line for line in fh if line.strip() and not line.startswith("#")))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = tuple(c.strip() for c in rows[0])
    body = rows[1:]
    if header == RECORD_HEADER:
        records = [PulseRecord(float(b), _parse_count(n)) for b, n in body]
        return validate_records(records, angle_set)
    if header == HISTOGRAM_HEADER:
        per_angle: dict[float, dict[int, int]] = {}
        for b, n, c in body:
            beta = float(b)
            a = _match_angle(beta, angle_set)
            if a is None:
                raise ValueError(f"angle {beta} not in configured angle set {list(angle_set)}")
            nn, cc = _parse_count(n), _parse_count(c)
            bucket = per_angle.setdefault(a, {})
            bucket[nn] = bucket.get(nn, 0) + cc
        if not per_angle:
            raise ValueError(f"{path}: no histogram rows")
        return [AngleHistogram(a, c) for a, c in sorted(per_angle.items())]
    raise ValueError(f"{path}: unrecognised header {','.join(header)!r}; "
                     f"expected {','.join(RECORD_HEADER)!r} or {','.join(HISTOGRAM_HEADER)!r}")


def read_records(path: str | Path) -> list[PulseRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(line for line in fh if line.strip() and not line.startswith("#")))
    if not rows or tuple(c.strip() for c in rows[0]) != RECORD_HEADER:
        raise ValueError(f"{path}: not a record file (header {','.join(RECORD_HEADER)!r} required)")
    return [PulseRecord(float(b), _parse_count(n)) for b, n in rows[1:]]


def histograms_to_text(histograms: Iterable[AngleHistogram]) -> str:
    buf = io.StringIO()
    buf.write(",".join(HISTOGRAM_HEADER) + "\n")
    for h in histograms:
        for n, c in h.counts.items():
            buf.write(f"{float(h.beta)!r},{int(n)},{int(c)}\n")
    return buf.getvalue()


def _parse_count(s: str) -> int:
    v = int(s.strip())
    if v < 0:
        raise ValueError(f"negative count {v}")
    return v
