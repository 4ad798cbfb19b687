import json
import math

import numpy as np
import pytest

from psdcert.channel import simulate_from_histogram
from psdcert.cli import EXIT_ERROR, EXIT_NONCLASSICAL, EXIT_OK, main, records_from_histograms, sha256_file
from psdcert.config import CONFIG_ENV
from psdcert.model import DEFAULT_ANGLES, histograms_to_text, read_measurements, read_records, validate_records
from psdcert.reconstruct import read_marginal
from psdcert.synthetic import SyntheticState, exact_marginal, exact_pooled_histogram

GAUSS = '{"kind": "gaussian_reference", "sigma": 38.7}'


@pytest.fixture
def gauss_records(tmp_path):
    out = tmp_path / "g.csv"
    assert main(["simulate", str(out), "--state", GAUSS, "--pulses", "2500", "--seed", "1"]) == EXIT_OK
    return out


def report_dir(capsys) -> str:
    return next(line.split(": ", 1)[1] for line in capsys.readouterr().out.splitlines()
                if line.startswith("report: "))


class TestSimulate:
    def test_count_contract(self, tmp_path, capsys):
        out = tmp_path / "r.csv"
        assert main(["simulate", str(out), "--state", GAUSS, "--pulses", "100"]) == EXIT_OK
        assert len(read_records(out)) == 400
        assert "seed: 0" in capsys.readouterr().out
        meta = json.loads((tmp_path / "r.csv.meta.json").read_text())
        assert meta["records"] == 400 and meta["sha256"] == sha256_file(out)

    def test_same_config_and_seed_same_digest(self, tmp_path):
        digests = []
        for name, seed in (("a", 5), ("b", 5), ("c", 6)):
            out = tmp_path / f"{name}.csv"
            main(["simulate", str(out), "--state", GAUSS, "--pulses", "200", "--seed", str(seed)])
            digests.append(sha256_file(out))
        assert digests[0] == digests[1] != digests[2]

    def test_non_sampleable_state_needs_histogram_path(self, tmp_path, capsys):
        state = '{"kind": "single_excitation", "sigma": 22.4}'
        assert main(["simulate", str(tmp_path / "s.csv"), "--state", state, "--pulses", "10"]) == EXIT_ERROR
        assert "--via-histogram" in capsys.readouterr().err
        assert main(["simulate", str(tmp_path / "s.csv"), "--state", state, "--pulses", "10",
                     "--via-histogram"]) == EXIT_OK

    def test_never_overwrites(self, gauss_records, capsys):
        before = sha256_file(gauss_records)
        assert main(["simulate", str(gauss_records), "--state", GAUSS, "--pulses", "10"]) == EXIT_ERROR
        assert "already exists" in capsys.readouterr().err
        assert sha256_file(gauss_records) == before


class TestCertify:
    def test_gaussian_is_classical_consistent(self, gauss_records, tmp_path, capsys):
        code = main(["certify", str(gauss_records), "--sweep.n_cutoff_max", "8", "--replicates", "20",
                     "--io.reports_dir", str(tmp_path / "rep")])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert "plateau <F> =" in out and "verdict: classical-consistent" in out

    def test_single_excitation_histogram_file_is_nonclassical(self, params, tmp_path, capsys):
        pooled = exact_pooled_histogram(SyntheticState.single_excitation(math.sqrt(500.0)), params)
        hists = validate_records(simulate_from_histogram(pooled, DEFAULT_ANGLES, 25_000, seed=0))
        path = tmp_path / "h.csv"
        path.write_text(histograms_to_text(hists))
        code = main(["certify", str(path), "--sweep.n_cutoff_max", "12", "--replicates", "40",
                     "--report", str(tmp_path / "rep")])
        assert code == EXIT_NONCLASSICAL
        assert "verdict: nonclassical" in capsys.readouterr().out

    def test_report_embeds_config_and_digests(self, gauss_records, tmp_path, capsys):
        rep = tmp_path / "rep"
        main(["certify", str(gauss_records), "--sweep.n_cutoff_max", "4", "--replicates", "5", "--report", str(rep)])
        config = json.loads((rep / "config.json").read_text())
        manifest = json.loads((rep / "manifest.json").read_text())
        assert config["sweep"]["n_cutoff_max"] == 4 and config["bootstrap"]["replicates"] == 5
        assert manifest["inputs"] == {str(gauss_records): sha256_file(gauss_records)}
        assert manifest["outputs"]["sweep.csv"] == sha256_file(rep / "sweep.csv")
        assert manifest["verdict"] == "classical-consistent"
        # reports are append-only
        assert main(["certify", str(gauss_records), "--report", str(rep)]) == EXIT_ERROR

    def test_deterministic_and_fresh_default_directories(self, gauss_records, tmp_path, capsys):
        args = ["certify", str(gauss_records), "--sweep.n_cutoff_max", "4", "--replicates", "5",
                "--io.reports_dir", str(tmp_path / "rep")]
        main(args)
        first = report_dir(capsys)
        main(args)
        second = report_dir(capsys)
        assert first != second
        assert sha256_file(f"{first}/sweep.csv") == sha256_file(f"{second}/sweep.csv")

    def test_missing_file(self, tmp_path, capsys):
        assert main(["certify", str(tmp_path / "nope.csv")]) == EXIT_ERROR
        assert "does not exist" in capsys.readouterr().err

    def test_malformed_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("x,y\n1,2\n")
        assert main(["certify", str(bad)]) == EXIT_ERROR
        assert "unrecognised header" in capsys.readouterr().err


class TestConfigResolution:
    def test_env_config_and_flag_precedence(self, gauss_records, tmp_path, monkeypatch, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"sweep": {"n_cutoff_max": 6}, "io": {"reports_dir": str(tmp_path / "rep")}}))
        monkeypatch.setenv(CONFIG_ENV, str(cfg))
        assert main(["sweep", str(gauss_records)]) == EXIT_OK
        assert max(int(line[4:6]) for line in capsys.readouterr().out.splitlines() if line.startswith("N_c=")) == 6
        assert main(["sweep", str(gauss_records), "--sweep.n_cutoff_max", "4"]) == EXIT_OK
        assert max(int(line[4:6]) for line in capsys.readouterr().out.splitlines() if line.startswith("N_c=")) == 4

    def test_missing_config_file(self, gauss_records, tmp_path, capsys):
        assert main(["sweep", str(gauss_records), "--config", str(tmp_path / "none.json")]) == EXIT_ERROR
        assert "does not exist" in capsys.readouterr().err

    def test_bad_override(self, gauss_records, capsys):
        assert main(["sweep", str(gauss_records), "--route", "median"]) == EXIT_ERROR
        assert "route" in capsys.readouterr().err


class TestReconstructAndPlots:
    @pytest.fixture
    def noiseless_histogram_file(self, params, tmp_path):
        # large integer counts proportional to the exact pooled histogram, one angle each
        pooled = exact_pooled_histogram(SyntheticState.gaussian(math.sqrt(1500.0)), params)
        counts = np.rint(pooled.probs * 1e12).astype(int)
        lines = ["beta_rad,n,count"] + [f"{b!r},{n},{c}" for b in DEFAULT_ANGLES for n, c in enumerate(counts) if c]
        path = tmp_path / "exact.csv"
        path.write_text("\n".join(lines) + "\n")
        return path

    def test_reconstruct_noiseless_gaussian(self, noiseless_histogram_file, tmp_path, capsys):
        rep = tmp_path / "rec"
        assert main(["reconstruct", str(noiseless_histogram_file), "--report", str(rep)]) == EXIT_OK
        marg = read_marginal(rep / "marginal.csv")
        exact = exact_marginal(SyntheticState.gaussian(math.sqrt(1500.0)), marg.grid)
        assert float(marg.weights @ np.abs(marg.density - exact.density)) < 1e-2
        header, *rows = (rep / "roundtrip.csv").read_text().splitlines()
        assert header == "n,observed,predicted" and len(rows) > 20
        assert json.loads((rep / "manifest.json").read_text())["roundtrip_tv"] < 0.01

    def test_bad_regularization(self, noiseless_histogram_file, tmp_path, capsys):
        code = main(["reconstruct", str(noiseless_histogram_file), "--deconvolution.regularization", "0",
                     "--report", str(tmp_path / "rec")])
        assert code == EXIT_ERROR
        assert "regularization" in capsys.readouterr().err

    def test_emit_plot_from_marginal(self, noiseless_histogram_file, tmp_path, capsys):
        rep = tmp_path / "rec"
        main(["reconstruct", str(noiseless_histogram_file), "--report", str(rep)])
        out = tmp_path / "p.csv"
        assert main(["emit-plot", str(rep / "marginal.csv"), str(out), "--p-of-m"]) == EXIT_OK
        header, *rows = out.read_text().splitlines()
        assert header == "M_sq,density,M,P_M"
        m_sq, _, m, _ = map(float, rows[100].split(","))
        assert m == pytest.approx(math.sqrt(m_sq), rel=1e-15)
        plain = tmp_path / "q.csv"
        assert main(["emit-plot", str(rep / "marginal.csv"), str(plain)]) == EXIT_OK
        assert plain.read_text().splitlines()[0] == "M_sq,density"

    def test_emit_plot_from_sweep(self, gauss_records, tmp_path, capsys):
        rep = tmp_path / "sw"
        main(["sweep", str(gauss_records), "--sweep.n_cutoff_max", "6", "--report", str(rep)])
        out = tmp_path / "f3.csv"
        assert main(["emit-plot", str(rep / "sweep.csv"), str(out)]) == EXIT_OK
        header, *rows = out.read_text().splitlines()
        assert header == "N_c,f_mean,std"
        assert [int(r.split(",")[0]) for r in rows] == [2, 4, 6]

    def test_emit_plot_unknown_schema(self, gauss_records, tmp_path, capsys):
        assert main(["emit-plot", str(gauss_records), str(tmp_path / "o.csv")]) == EXIT_ERROR
        assert "unrecognized schema" in capsys.readouterr().err

    def test_moments_reports_both_routes(self, noiseless_histogram_file, tmp_path, capsys):
        rep = tmp_path / "mom"
        assert main(["moments", str(noiseless_histogram_file), "--sweep.n_cutoff_max", "4",
                     "--report", str(rep)]) == EXIT_OK
        rows = (rep / "moments.csv").read_text().splitlines()[1:]
        routes = {r.split(",")[1] for r in rows}
        assert routes == {"factorial", "deconvolution"}
        vals = {(r.split(",")[0], r.split(",")[1]): float(r.split(",")[2]) for r in rows}
        assert vals[("1", "deconvolution")] == pytest.approx(vals[("1", "factorial")], rel=1e-3)


def test_histogram_input_expands_to_equivalent_records(gauss_records):
    hists = read_measurements(gauss_records)
    again = validate_records(records_from_histograms(hists))
    assert [h.counts for h in again] == [h.counts for h in hists]
