"""Mean trial-function value <F> against the polynomial cutoff N_c.

For the reference Gaussian and the heralded state, sweeps N_c on exact
moments and on simulated data (half-sampling error bars), alongside the
analytic Gaussian curve 2 / (N_c + 2). Writes sweep.csv into --out and,
with --png, fig3.png (needs matplotlib).

Usage: python scripts/fig3_cutoff_sweep.py --out runs/fig3 [--pulses-per-angle 25000] [--n-cutoff-max 12] [--png]
"""
from __future__ import annotations

import argparse
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from psdcert.channel import simulate_experiment, simulate_from_histogram
from psdcert.criterion import PipelineConfig, bootstrap_sweep, sweep_cutoff
from psdcert.model import DEFAULT_ANGLES, DetectionParams
from psdcert.moments import radial_from_axis
from psdcert.synthetic import SyntheticState, exact_axis_moments, exact_pooled_histogram


@dataclass(frozen=True)
class Fig3Config:
    pulses_per_angle: int = 25_000
    seed: int = 0
    replicates: int = 150
    n_cutoff_max: int = 12  # higher orders are dominated by sampling noise at this pulse count
    exact_cutoff_max: int = 16
    sigma_ref: float = math.sqrt(1500.0)
    sigma_state: float = math.sqrt(500.0)
    purity: float = 1.0


def run(cfg: Fig3Config, params: DetectionParams = DetectionParams()) -> list[dict]:
    states = {"reference": SyntheticState.gaussian(cfg.sigma_ref),
              "heralded": SyntheticState.heralded(cfg.sigma_state, cfg.purity)}
    pipe = PipelineConfig(params=params, n_cutoff_max=cfg.n_cutoff_max)
    rows = []
    for i, (name, state) in enumerate(states.items()):
        exact = sweep_cutoff(radial_from_axis(exact_axis_moments(state, cfg.exact_cutoff_max)),
                             cfg.exact_cutoff_max)
        for e in exact.entries:
            rows.append({"state": name, "source": "exact", "N_c": e.n_cutoff, "f_mean": e.f_mean, "std": 0.0})
        if state.sampleable:
            recs = simulate_experiment(state, DEFAULT_ANGLES, cfg.pulses_per_angle, params, seed=cfg.seed + i)
        else:
            recs = simulate_from_histogram(exact_pooled_histogram(state, params), DEFAULT_ANGLES,
                                           cfg.pulses_per_angle, seed=cfg.seed + i)
        sampled = bootstrap_sweep(recs, pipe, cfg.replicates, seed=cfg.seed)
        for e in sampled.entries:
            rows.append({"state": name, "source": "sampled", "N_c": e.n_cutoff, "f_mean": e.f_mean, "std": e.std})
        print(f"{name:9s}  plateau {sampled.plateau:+.4f} +- {sampled.plateau_std:.4f}  "
              f"verdict {sampled.verdict}  first negative N_c {sampled.threshold_cutoff()}")
    for nc in range(2, cfg.exact_cutoff_max + 1, 2):
        rows.append({"state": "reference", "source": "analytic", "N_c": nc, "f_mean": 2 / (nc + 2), "std": 0.0})
    return rows


def write(rows: list[dict], out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    lines = ["state,source,N_c,f_mean,std"]
    lines += [f"{r['state']},{r['source']},{r['N_c']},{r['f_mean']!r},{r['std']!r}" for r in rows]
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")


def plot(rows: list[dict], out: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    colors = {"reference": "tab:blue", "heralded": "tab:red"}
    fig, ax = plt.subplots(figsize=(6, 4))

    def pick(state, source, key):
        return np.array([r[key] for r in rows if r["state"] == state and r["source"] == source])

    for s, c in colors.items():
        ax.plot(pick(s, "exact", "N_c"), pick(s, "exact", "f_mean"), "-", color=c, lw=1, label=f"{s} exact")
        ax.errorbar(pick(s, "sampled", "N_c"), pick(s, "sampled", "f_mean"), yerr=pick(s, "sampled", "std"),
                    fmt="o", color=c, capsize=3, label=f"{s} simulated")
    ax.plot(pick("reference", "analytic", "N_c"), pick("reference", "analytic", "f_mean"), "k:", label="2/(N_c+2)")
    ax.axhline(0.0, color="grey", lw=0.5)
    ax.set(xlabel="N_c", ylabel="<F>")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out / "fig3.png", dpi=150)


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, required=True)
    for name, value in asdict(Fig3Config()).items():
        parser.add_argument(f"--{name.replace('_', '-')}", type=type(value), default=value)
    parser.add_argument("--png", action="store_true")
    args = parser.parse_args(argv)
    cfg = Fig3Config(**{k: getattr(args, k) for k in asdict(Fig3Config())})
    rows = run(cfg)
    write(rows, args.out)
    if args.png:
        plot(rows, args.out)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
