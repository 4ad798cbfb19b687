"""Regenerate the oracle fixtures under tests/fixtures/.

Deliberately independent of the psdcert package:

* radial_moments.csv: <M_rho^2k> for k = 1..16 by brute-force 2D quadrature
  of each state's density rho(x, y) on a polar grid (Gauss-Legendre in r,
  periodic trapezoid in theta), in natural units where the ground-state
  axis variance is 1/2. The delta ring has no 2D quadrature; its row is
  R^2k by definition.
* single_excitation_sweep.csv: <F> for N_c = 2..20 from the exact radial
  moments k!(2k+1), solved by Gaussian elimination over the rationals.

Usage: python scripts/make_fixtures.py [--out tests/fixtures]
"""
from __future__ import annotations

import argparse
import math
from fractions import Fraction
from pathlib import Path

import numpy as np

K_MAX = 16


def rho_gaussian(x, y):
    # ground-state axis variance 1/2
    return np.exp(-(x**2 + y**2)) / math.pi


def rho_single_excitation(x, y):
    r2 = x**2 + y**2
    return (2.0 * r2 - 1.0) * np.exp(-r2) / math.pi


def rho_disc(x, y):
    return np.where(x**2 + y**2 <= 1.0, 1.0 / math.pi, 0.0)


def polar_moments(rho, r_max: float, n_r: int = 600, n_theta: int = 64) -> list[float]:
    """<(x^2 + y^2)^k> for k = 1..K_MAX by tensor quadrature over the disc of radius r_max."""
    u, w = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * r_max * (u + 1.0)
    wr = 0.5 * r_max * w
    theta = 2.0 * math.pi * np.arange(n_theta) / n_theta
    x = r[:, None] * np.cos(theta)[None, :]
    y = r[:, None] * np.sin(theta)[None, :]
    vals = rho(x, y)
    jac = (wr * r)[:, None] * (2.0 * math.pi / n_theta)
    out = []
    norm = float(np.sum(vals * jac))
    for k in range(1, K_MAX + 1):
        out.append(float(np.sum(vals * (x**2 + y**2) ** k * jac)) / norm)
    return out


def exact_f(mu: list[Fraction], n_cutoff: int) -> Fraction:
    """Minimized <F> at cutoff n_cutoff from exact radial moments mu[k] = <M_rho^2k>, mu[0] = 1."""
    n = n_cutoff // 2
    a = [[mu[j + l] for l in range(1, n + 1)] + [-mu[j]] for j in range(1, n + 1)]
    for col in range(n):
        piv = next(i for i in range(col, n) if a[i][col] != 0)
        a[col], a[piv] = a[piv], a[col]
        for i in range(n):
            if i != col and a[i][col] != 0:
                fac = a[i][col] / a[col][col]
                a[i] = [vi - fac * vc for vi, vc in zip(a[i], a[col])]
    x = [a[i][n] / a[i][i] for i in range(n)]
    return 1 + sum(x[k - 1] * mu[k] for k in range(1, n + 1))


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests" / "fixtures"))
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows = {
        "gaussian_reference": polar_moments(rho_gaussian, r_max=14.0),
        "single_excitation": polar_moments(rho_single_excitation, r_max=14.0),
        "uniform_disc": polar_moments(rho_disc, r_max=1.0),
        "ring": [1.0] * K_MAX,
    }
    with open(out / "radial_moments.csv", "w") as fh:
        fh.write("# radial moments <M_rho^2k> in natural units (ground-state axis variance 1/2)\n")
        fh.write("# gaussian_reference sigma^2 = 1/2; single_excitation same width; uniform_disc R = 1; ring R = 1\n")
        fh.write("# generated by scripts/make_fixtures.py: polar Gauss-Legendre (600 r nodes) x trapezoid "
                 "(64 theta nodes) on rho(x, y); ring is R^2k by definition\n")
        fh.write("state,k,radial_moment\n")
        for state, vals in rows.items():
            for k, v in enumerate(vals, start=1):
                fh.write(f"{state},{k},{v!r}\n")

    mu = [Fraction(math.factorial(k) * (2 * k + 1)) for k in range(21)]
    with open(out / "single_excitation_sweep.csv", "w") as fh:
        fh.write("# minimized <F> for the single-excitation state from exact radial moments k!(2k+1)\n")
        fh.write("# generated by scripts/make_fixtures.py: Gauss-Jordan elimination over the rationals\n")
        threshold = None
        lines = []
        for nc in range(2, 21, 2):
            f = exact_f(mu, nc)
            if threshold is None and f < 0:
                threshold = nc
            lines.append(f"{nc},{f.numerator}/{f.denominator},{float(f)!r}")
        fh.write(f"# threshold N_c (first negative value): {threshold}\n")
        fh.write("n_cutoff,f_exact,f_float\n")
        fh.write("\n".join(lines) + "\n")
    print(f"fixtures written to {out} (single-excitation threshold N_c = {threshold})")


if __name__ == "__main__":
    main()
