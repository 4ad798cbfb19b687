import csv
import math
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from psdcert.model import DetectionParams

settings.register_profile("psdcert", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("psdcert")

FIXTURES = Path(__file__).parent / "fixtures"
DEFAULT_LAMBDA = 8.64e-3


def _rows(path: Path):
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def radial_fixture() -> dict[str, np.ndarray]:
    """Brute-force 2D quadrature radial moments, natural units, k = 1..16."""
    out: dict[str, list[float]] = {}
    for row in _rows(FIXTURES / "radial_moments.csv"):
        out.setdefault(row["state"], []).append(float(row["radial_moment"]))
    return {k: np.array(v) for k, v in out.items()}


def single_excitation_fixture() -> tuple[int, dict[int, Fraction]]:
    """(threshold N_c, {N_c: exact <F>}) from the rational elimination oracle."""
    path = FIXTURES / "single_excitation_sweep.csv"
    threshold = None
    for line in path.read_text().splitlines():
        if line.startswith("# threshold"):
            threshold = int(line.rsplit(":", 1)[1])
    values = {int(r["n_cutoff"]): Fraction(r["f_exact"]) for r in _rows(path)}
    return threshold, values


def gaussian_radial(sigma: float, k_max: int) -> np.ndarray:
    return np.array([math.factorial(k) * (2 * sigma**2) ** k for k in range(1, k_max + 1)], dtype=float)


@pytest.fixture(scope="session")
def params() -> DetectionParams:
    return DetectionParams()
