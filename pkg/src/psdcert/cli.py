"""psdcert command line.

Every subcommand takes ``--config FILE`` (default ``$PSDCERT_CONFIG``) and a
flag for each config key in dotted form, e.g. ``--sweep.n_cutoff_max 12``;
flags win over the file. Analysis commands write a fresh report directory
holding ``config.json``, ``manifest.json`` (input and output digests) and
their outputs; existing directories are never reused.

Exit codes: 0 success or classical-consistent verdict, 10 nonclassical
verdict (``certify`` only), 2 any error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .channel import simulate_experiment, simulate_from_histogram
from .config import RunConfig, config_path, leaf_paths, load_config, parse_value
from .criterion import (
    bootstrap_sweep,
    format_sweep,
    parse_sweep,
    pipeline_snapshot,
    radial_moments_for,
    sweep_cutoff,
)
from .model import PulseRecord, pool_angles, read_measurements, records_to_text
from .moments import axis_moments_factorial, axis_moments_from_marginal, radial_from_axis
from .reconstruct import read_marginal, reconstruct_marginal, resolve_half_width, settings_meta, write_marginal
from .synthetic import exact_pooled_histogram, state_from_spec

log = logging.getLogger("psdcert")

EXIT_OK = 0
EXIT_NONCLASSICAL = 10
EXIT_ERROR = 2


class CLIError(Exception):
    """Reported as a one-line message with exit code 2."""


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# ------------------------------------------------------------------ parsing

def _override_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="JSON config file (default: $PSDCERT_CONFIG)")
    parent.add_argument("-v", "--verbose", action="store_true")
    group = parent.add_argument_group("config overrides (JSON literals or plain strings)")
    for path, default in leaf_paths().items():
        group.add_argument(f"--{path}", dest=f"set:{path}", type=parse_value, default=argparse.SUPPRESS,
                           metavar="VALUE", help=f"default: {json.dumps(default)}")
    return parent


def build_parser() -> argparse.ArgumentParser:
    parent = _override_parent()
    parser = argparse.ArgumentParser(prog="psdcert", description="Nonclassicality certification from "
                                     "photon-counting records via the phase-space-distribution criterion.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[parent], help="simulate pulse records for a synthetic state")
    p.add_argument("out", help="record file to create (never overwritten)")
    p.add_argument("--state", dest="set:simulate.state", type=parse_value, default=argparse.SUPPRESS,
                   help="state spec as JSON, e.g. '{\"kind\": \"ring\", \"radius\": 30}'")
    p.add_argument("--pulses", dest="set:simulate.pulses_per_angle", type=int, default=argparse.SUPPRESS,
                   metavar="N", help="pulses per angle")
    p.add_argument("--seed", dest="set:simulate.seed", type=int, default=argparse.SUPPRESS, metavar="N")
    p.add_argument("--via-histogram", dest="set:simulate.via_histogram", action="store_const", const=True,
                   default=argparse.SUPPRESS,
                   help="sample photon counts from the exact pooled histogram (needed for states "
                        "without a non-negative 2D density)")

    for name, text in [("reconstruct", "reconstruct the marginal and its predicted photon counts"),
                       ("moments", "axis and radial moments by both routes"),
                       ("sweep", "criterion value versus cutoff order on the full data"),
                       ("certify", "sweep with half-sample bootstrap errors and a verdict")]:
        p = sub.add_parser(name, parents=[parent], help=text)
        p.add_argument("input", help="record file or histogram file")
        p.add_argument("--report", help="report directory to create (default: under io.reports_dir)")
        if name == "certify":
            p.add_argument("--seed", dest="set:bootstrap.seed", type=int, default=argparse.SUPPRESS,
                           metavar="N", help="bootstrap seed")
            p.add_argument("--replicates", dest="set:bootstrap.replicates", type=int,
                           default=argparse.SUPPRESS, metavar="N", help="half-sample replicates")

    p = sub.add_parser("emit-plot", parents=[parent], help="plain-column plot data from a sweep or marginal")
    p.add_argument("input", help="sweep file or marginal file")
    p.add_argument("out", help="output file to create")
    p.add_argument("--p-of-m", action="store_true",
                   help="for marginals, add M and P(M) = |M| F(M^2) columns (assumes <M> = 0)")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("set:")}
    path = config_path(args.config)
    if path is not None and not path.exists():
        raise CLIError(f"config file {path} does not exist")
    return load_config(path, overrides)


# ------------------------------------------------------------------ reports

class Report:
    """Append-only output directory with a config snapshot and a digest manifest."""

    def __init__(self, root: Path, command: str, config: RunConfig, inputs: dict[str, str]):
        self.root = root
        self.manifest = {"command": command, "version": __version__, "inputs": inputs, "outputs": {}}
        root.mkdir(parents=True, exist_ok=False)
        self._dump("config.json", config.to_dict())

    @classmethod
    def create(cls, explicit: str | None, command: str, config: RunConfig, input_path: Path) -> "Report":
        inputs = {str(input_path): sha256_file(input_path)}
        if explicit:
            root = Path(explicit)
            if root.exists():
                raise CLIError(f"report directory {root} already exists; reports are never overwritten")
            return cls(root, command, config, inputs)
        key = json.dumps({"config": config.to_dict(), "inputs": inputs, "command": command}, sort_keys=True)
        base = Path(config.io.reports_dir) / f"{command}-{hashlib.sha256(key.encode()).hexdigest()[:12]}"
        root, i = base, 1
        while root.exists():
            i += 1
            root = base.with_name(f"{base.name}-{i}")
        return cls(root, command, config, inputs)

    def _dump(self, name: str, data) -> Path:
        path = self.root / name
        with open(path, "x") as fh:
            json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
        return path

    def path(self, name: str) -> Path:
        return self.root / name

    def record(self, *names: str) -> None:
        for name in names:
            self.manifest["outputs"][name] = sha256_file(self.root / name)

    def write_text(self, name: str, text: str) -> None:
        with open(self.root / name, "x") as fh:
            fh.write(text)
        self.record(name)

    def close(self, **extra) -> None:
        self.manifest.update(extra)
        self._dump("manifest.json", self.manifest)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _load_input(path: str, config: RunConfig, report: str | None = None):
    if report and Path(report).exists():
        raise CLIError(f"report directory {report} already exists; reports are never overwritten")
    p = Path(path)
    if not p.exists():
        raise CLIError(f"input file {p} does not exist")
    return p, read_measurements(p, config.angles)


def records_from_histograms(histograms) -> list[PulseRecord]:
    """Expand per-angle counts into records; order within an angle carries no information."""
    return [PulseRecord(h.beta, n) for h in histograms for n, c in sorted(h.counts.items()) for _ in range(c)]


# ----------------------------------------------------------------- commands

def cmd_simulate(args, config: RunConfig) -> int:
    sim = config.simulate
    state = state_from_spec(sim.state)
    out = Path(args.out)
    if out.exists():
        raise CLIError(f"{out} already exists; simulated records are never overwritten")
    if sim.via_histogram:
        pooled = exact_pooled_histogram(state, config.detection)
        records = simulate_from_histogram(pooled, config.angles, sim.pulses_per_angle, sim.seed)
    else:
        if not state.sampleable:
            raise CLIError(f"state kind {state.kind!r} has no non-negative 2D density and cannot be sampled "
                           "pulse by pulse; rerun with --via-histogram")
        records = simulate_experiment(state, config.angles, sim.pulses_per_angle, config.detection, sim.seed)
    with open(out, "x", newline="") as fh:
        fh.write(records_to_text(records))
    digest = sha256_file(out)
    meta = {"config": config.to_dict(), "records": len(records), "sha256": digest, "seed": sim.seed}
    with open(out.with_name(out.name + ".meta.json"), "x") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(records)} records to {out}")
    print(f"seed: {sim.seed}")
    print(f"sha256: {digest}")
    return EXIT_OK


def cmd_reconstruct(args, config: RunConfig) -> int:
    path, hists = _load_input(args.input, config, args.report)
    pooled = pool_angles(hists, config.weighting, config.angles)
    marginal, pred = reconstruct_marginal(pooled, config.detection, config.deconvolution)
    report = Report.create(args.report, "reconstruct", config, path)
    half = resolve_half_width(pooled, config.detection, config.deconvolution)
    meta = settings_meta(config.deconvolution, half, config.detection.lam)
    write_marginal(report.path("marginal.csv"), marginal, meta)
    report.record("marginal.csv", "marginal.csv.meta.json")
    size = max(len(pooled.probs), len(pred.probs))
    obs = np.zeros(size)
    obs[: len(pooled.probs)] = pooled.probs
    prd = np.zeros(size)
    prd[: len(pred.probs)] = pred.probs
    lines = ["n,observed,predicted"] + [f"{n},{o!r},{q!r}" for n, (o, q) in enumerate(zip(obs.tolist(), prd.tolist()))]
    report.write_text("roundtrip.csv", "\n".join(lines) + "\n")
    tv = 0.5 * float(np.abs(obs - prd).sum())
    report.close(normalization=marginal.normalization, roundtrip_tv=tv, truncation_mass=pred.truncation_mass)
    print(f"normalization {marginal.normalization:.6f}, round-trip total variation {tv:.3e}")
    print(f"report: {report.root}")
    return EXIT_OK


def cmd_moments(args, config: RunConfig) -> int:
    path, hists = _load_input(args.input, config, args.report)
    pooled = pool_angles(hists, config.weighting, config.angles)
    k_max = config.sweep.n_cutoff_max
    report = Report.create(args.report, "moments", config, path)
    errors = {}
    rows = {}
    rows["factorial"] = axis_moments_factorial(pooled, config.detection, k_max)
    try:
        marginal, _ = reconstruct_marginal(pooled, config.detection, config.deconvolution)
        rows["deconvolution"] = axis_moments_from_marginal(marginal, k_max, tail_tol=config.tail_tol)
    except (ValueError, ArithmeticError) as exc:
        errors["deconvolution"] = str(exc)
        print(f"deconvolution route failed: {exc}", file=sys.stderr)
    lines = ["k,route,axis,radial"]
    for route, axis in rows.items():
        radial = radial_from_axis(axis)
        lines += [f"{k},{route},{a!r},{r!r}" for k, (a, r) in enumerate(zip(axis.values.tolist(), radial.values.tolist()), 1)]
    report.write_text("moments.csv", "\n".join(lines) + "\n")
    report.close(route=config.route, errors=errors)
    print(f"report: {report.root}")
    return EXIT_ERROR if config.route in errors else EXIT_OK


def cmd_sweep(args, config: RunConfig) -> int:
    path, hists = _load_input(args.input, config, args.report)
    pipe = config.pipeline()
    result = sweep_cutoff(radial_moments_for(hists, pipe), pipe.n_cutoff_max, pipe.z)
    report = Report.create(args.report, "sweep", config, path)
    report.write_text("sweep.csv", format_sweep(result, {"pipeline": pipeline_snapshot(pipe)}))
    report.close(verdict=result.verdict)
    for e in result.entries:
        print(f"N_c={e.n_cutoff:2d}  f_mean={e.f_mean: .6f}  cond={e.condition:.2e}  {e.flag}")
    print(f"report: {report.root}")
    return EXIT_OK


def cmd_certify(args, config: RunConfig) -> int:
    path, hists = _load_input(args.input, config, args.report)
    pipe = config.pipeline()
    result = bootstrap_sweep(records_from_histograms(hists), pipe, config.bootstrap.replicates,
                             config.bootstrap.seed)
    report = Report.create(args.report, "certify", config, path)
    report.write_text("sweep.csv", format_sweep(result, {"pipeline": pipeline_snapshot(pipe)}))
    report.close(verdict=result.verdict, plateau=result.plateau, plateau_std=result.plateau_std)
    for e in result.entries:
        print(f"N_c={e.n_cutoff:2d}  f_mean={e.f_mean: .6f} +/- {e.std:.6f}  {e.flag}")
    print(f"plateau <F> = {result.plateau:.6f} +/- {result.plateau_std:.6f} (z = {result.z:g})")
    print(f"verdict: {result.verdict}")
    print(f"report: {report.root}")
    return EXIT_NONCLASSICAL if result.verdict == "nonclassical" else EXIT_OK


def cmd_emit_plot(args, config: RunConfig) -> int:
    src = Path(args.input)
    if not src.exists():
        raise CLIError(f"input file {src} does not exist")
    out = Path(args.out)
    if out.exists():
        raise CLIError(f"{out} already exists")
    text = src.read_text()
    first = next((line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#")), "")
    if first.startswith("n_cutoff,"):
        _, rows = parse_sweep(text)
        lines = ["N_c,f_mean,std"] + [f"{r['n_cutoff']},{r['f_mean']},{r['std']}" for r in rows]
    elif first == "M_sq,density":
        marginal = read_marginal(src)
        grid, density = marginal.grid.tolist(), marginal.density.tolist()
        if args.p_of_m:
            m = marginal.m.tolist()
            p_m = marginal.axis_density().tolist()
            lines = ["M_sq,density,M,P_M"] + [f"{s!r},{d!r},{x!r},{p!r}"
                                              for s, d, x, p in zip(grid, density, m, p_m)]
        else:
            lines = ["M_sq,density"] + [f"{s!r},{d!r}" for s, d in zip(grid, density)]
    else:
        raise CLIError(f"{src}: unrecognized schema (expected a sweep or a marginal file)")
    with open(out, "x") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {len(lines) - 1} rows to {out}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "moments": cmd_moments,
    "sweep": cmd_sweep,
    "certify": cmd_certify,
    "emit-plot": cmd_emit_plot,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](args, config)
    except (CLIError, ValueError, ArithmeticError, OSError, KeyError, TypeError) as exc:
        msg = str(exc) if not isinstance(exc, KeyError) else f"missing key {exc}"
        print(f"psdcert {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
