"""Photon histograms and reconstructed marginals for a heralded state and the reference.

Simulates both states through the Poisson channel, reconstructs F(M^2) by
deconvolution, and writes
  counts.csv            n, observed and back-predicted g(n) for each state
  marginal_<state>.csv  M^2, reconstructed and exact F(M^2)
  p_of_m_<state>.csv    M, P(M) = |M| F(M^2) (the <M> = 0 display convention)
into --out. With --png the three panels are also rendered (needs matplotlib).

Usage: python scripts/fig2_reconstruction.py --out runs/fig2 [--pulses-per-angle 25000] [--purity 0.8] [--png]
"""
from __future__ import annotations

import argparse
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from psdcert.channel import simulate_experiment, simulate_from_histogram
from psdcert.model import DEFAULT_ANGLES, DetectionParams, pool_angles, validate_records
from psdcert.reconstruct import DeconvolutionSettings, reconstruct_marginal, total_variation
from psdcert.synthetic import SyntheticState, exact_marginal, exact_pooled_histogram


@dataclass(frozen=True)
class Fig2Config:
    pulses_per_angle: int = 25_000
    seed: int = 0
    sigma_ref: float = math.sqrt(1500.0)  # reference axis sd, mu_B
    sigma_state: float = math.sqrt(500.0)  # single-excitation width; same <M^2> as the reference
    purity: float = 1.0  # single-excitation weight of the heralded state
    regularization: float = 1e-2  # sampled data needs a stronger floor than noiseless input


def run(cfg: Fig2Config, params: DetectionParams = DetectionParams()) -> dict:
    settings = DeconvolutionSettings(regularization=cfg.regularization)
    states = {"reference": SyntheticState.gaussian(cfg.sigma_ref),
              "heralded": SyntheticState.heralded(cfg.sigma_state, cfg.purity)}
    out = {}
    for i, (name, state) in enumerate(states.items()):
        if state.sampleable:
            recs = simulate_experiment(state, DEFAULT_ANGLES, cfg.pulses_per_angle, params, seed=cfg.seed + i)
        else:
            recs = simulate_from_histogram(exact_pooled_histogram(state, params), DEFAULT_ANGLES,
                                           cfg.pulses_per_angle, seed=cfg.seed + i)
        pooled = pool_angles(validate_records(recs))
        marg, pred = reconstruct_marginal(pooled, params, settings)
        out[name] = {"observed": pooled.probs, "predicted": pred.probs, "marginal": marg,
                     "exact": exact_marginal(state, marg.grid),
                     "tv": total_variation(pred.probs, pooled.probs)}
    return out


def _column(values: np.ndarray, size: int) -> np.ndarray:
    col = np.zeros(size)
    col[: min(size, len(values))] = values[:size]
    return col


def write(result: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    size = max(len(r[k]) for r in result.values() for k in ("observed", "predicted"))
    names = list(result)
    cols = [np.arange(size)] + [_column(result[s][k], size) for s in names for k in ("observed", "predicted")]
    header = "n," + ",".join(f"{s}_{k}" for s in names for k in ("observed", "predicted"))
    np.savetxt(out / "counts.csv", np.column_stack(cols), delimiter=",", header=header, comments="")

    # each state's grid follows its own pilot scale, so marginals get separate files
    for s in names:
        m = result[s]["marginal"]
        np.savetxt(out / f"marginal_{s}.csv", np.column_stack([m.grid, m.density, result[s]["exact"].density]),
                   delimiter=",", header="M_sq,reconstructed,exact", comments="")
        np.savetxt(out / f"p_of_m_{s}.csv", np.column_stack([m.m, m.axis_density()]),
                   delimiter=",", header="M,P_M", comments="")


def plot(result: dict, out: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    colors = {"reference": "tab:blue", "heralded": "tab:red"}
    fig, axes = plt.subplots(1, 3, figsize=(13, 4))
    for s, r in result.items():
        n = np.arange(len(r["observed"]))
        axes[0].plot(n, r["observed"], "o", ms=3, color=colors[s], label=f"{s} g(n)")
        axes[0].plot(np.arange(len(r["predicted"])), r["predicted"], "-", color=colors[s], lw=1)
        m = r["marginal"]
        keep = m.grid <= np.quantile(m.grid, 0.3)
        axes[1].plot(m.grid[keep], m.density[keep], color=colors[s], label=f"{s} reconstructed")
        axes[1].plot(m.grid[keep], r["exact"].density[keep], "--", color=colors[s], lw=1, label=f"{s} exact")
        axes[2].plot(m.m[keep], m.axis_density()[keep], color=colors[s], label=f"{s} reconstructed")
        axes[2].plot(m.m[keep], r["exact"].axis_density()[keep], "--", color=colors[s], lw=1, label=f"{s} exact")
    # the reference F(M^2) has an integrable 1/M spike at the origin, so the tail needs a log axis
    top = max(float(r["exact"].density.max()) for r in result.values())
    axes[1].set_yscale("log")
    axes[1].set_ylim(1e-4 * top, 2 * top)
    axes[0].set(xlabel="n", ylabel="g(n)", xlim=(0, 60))
    axes[1].set(xlabel="M^2 (mu_B^2)", ylabel="F(M^2)")
    axes[2].set(xlabel="M (mu_B)", ylabel="P(M)")
    for ax in axes:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out / "fig2.png", dpi=150)


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, required=True)
    for name, value in asdict(Fig2Config()).items():
        parser.add_argument(f"--{name.replace('_', '-')}", type=type(value), default=value)
    parser.add_argument("--png", action="store_true")
    args = parser.parse_args(argv)
    cfg = Fig2Config(**{k: getattr(args, k) for k in asdict(Fig2Config())})
    result = run(cfg)
    write(result, args.out)
    if args.png:
        plot(result, args.out)
    for s, r in result.items():
        m = r["marginal"]
        l1 = float(m.weights @ np.abs(m.density - r["exact"].density))
        print(f"{s:9s}  round-trip TV {r['tv']:.4f}  normalization {m.normalization:.4f}  L1 vs exact {l1:.3f}")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
