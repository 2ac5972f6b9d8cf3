import json

import numpy as np
import pytest

from vcreg.cli import main
from vcreg.io import read_csv, write_csv
from vcreg.kernels import dhsic
from vcreg.numerics import make_rng

FAST = ["--n", "1000", "--width", "32", "--epochs", "2", "--batch", "250", "--eval-samples", "100"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestErrors:
    def test_unknown_flag(self, capsys):
        code, _, err = run(capsys, "ica", "--out", "x", "--bogus")
        assert code == 64 and "usage" in err

    def test_missing_command(self, capsys):
        assert run(capsys)[0] == 64

    def test_unreadable_csv(self, capsys, tmp_path):
        code, _, err = run(capsys, "hsic", "--data", tmp_path / "missing.csv", "--col-a", "0", "--col-b", "1")
        assert code == 66 and "cannot read" in err

    def test_malformed_csv(self, capsys, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,oops\n")
        assert run(capsys, "dhsic", "--data", bad)[0] == 66

    def test_epochs_zero(self, capsys, tmp_path):
        assert run(capsys, "ica", "--out", tmp_path, *FAST, "--epochs", "0")[0] == 64

    def test_trials_zero(self, capsys):
        assert run(capsys, "lemma-check", "--trials", "0")[0] == 64

    def test_version(self, capsys):
        code, out, _ = run(capsys, "--version")
        assert code == 0 and out.startswith("vcreg ")


class TestGenData:
    def test_files_and_reproducibility(self, capsys, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(capsys, "gen-data", "--n", "1000", "--seed", "3", "--out", a)[0] == 0
        assert run(capsys, "gen-data", "--n", "1000", "--seed", "3", "--out", b)[0] == 0
        for name in ("sources.csv", "mixtures.csv", "mixing.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        header, S = read_csv(a / "sources.csv")
        assert S.shape == (1000, 6) and len(header) == 6
        assert len((a / "sources.csv").read_text().splitlines()) == 1001

    def test_mixtures_equal_sources_times_mixing(self, capsys, tmp_path):
        run(capsys, "gen-data", "--n", "1000", "--seed", "4", "--out", tmp_path)
        _, S = read_csv(tmp_path / "sources.csv")
        _, Y = read_csv(tmp_path / "mixtures.csv")
        _, A = read_csv(tmp_path / "mixing.csv")
        Y_oracle = np.array([[sum(S[i, k] * A[k, j] for k in range(6)) for j in range(6)] for i in range(50)])
        np.testing.assert_allclose(Y[:50], Y_oracle, rtol=1e-12, atol=1e-12)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        np.testing.assert_array_equal(np.array(manifest["mixing"]["A"]), A)
        assert manifest["tags"].count("noise") == 2

    def test_pnl(self, capsys, tmp_path):
        run(capsys, "gen-data", "--kind", "pnl", "--n", "1000", "--out", tmp_path)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["mixing"]["kind"] == "pnl"


class TestIca:
    def test_single_step(self, capsys, tmp_path):
        code, out, _ = run(capsys, "ica", "--out", tmp_path, "--n", "1000", "--width", "32",
                           "--epochs", "1", "--batch", "1000", "--eval-samples", "100")
        assert code == 0
        _, H = read_csv(tmp_path / "history.csv")
        assert H.shape[0] == 1
        assert out.startswith("max_corr=") and " dhsic=" in out
        _, R = read_csv(tmp_path / "recovered.csv")
        assert R.shape == (1000, 6)

    def test_manifest_rerun_reproduces_history(self, capsys, tmp_path):
        first, second = tmp_path / "first", tmp_path / "second"
        run(capsys, "ica", "--out", first, *FAST, "--seed", "5")
        code, _, _ = run(capsys, "ica", "--out", second, "--from-manifest", first / "manifest.json")
        assert code == 0
        for name in ("history.csv", "epochs.csv", "recovered.csv"):
            assert (first / name).read_bytes() == (second / name).read_bytes()
        m1 = json.loads((first / "manifest.json").read_text())
        m2 = json.loads((second / "manifest.json").read_text())
        assert m1["metrics"] == m2["metrics"]
        assert m1["config"]["variance_weight"] == 100.0 and m1["config"]["lr"] == 100.0

    def test_pnl_mode(self, capsys, tmp_path):
        code, out, _ = run(capsys, "ica", "--mode", "pnl", "--out", tmp_path, *FAST)
        assert code == 0
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["config"]["encoder"] == "mlp"
        assert manifest["config"]["reconstruction_weight"] == 1e4 and manifest["config"]["lr"] == 10.0

    def test_csv_data_without_truth(self, capsys, tmp_path):
        run(capsys, "gen-data", "--n", "1000", "--out", tmp_path / "d")
        code, out, _ = run(capsys, "ica", "--data", tmp_path / "d" / "mixtures.csv", "--out", tmp_path / "r",
                           *FAST[2:])
        assert code == 0 and out.startswith("dhsic=")

    def test_divergence_exit_code(self, capsys, tmp_path):
        code, _, err = run(capsys, "ica", "--out", tmp_path, *FAST, "--optimizer", "sgd", "--lr", "1e300",
                           "--schedule", "constant")
        assert code == 2 and "diverged" in err
        assert (tmp_path / "manifest.json").exists()


class TestGrid:
    def test_size_and_ranking(self, capsys, tmp_path):
        code, out, _ = run(capsys, "grid", "--out", tmp_path, *FAST, "--lr-grid", "1,100", "--var-w-grid", "1,100")
        assert code == 0
        header, G = read_csv(tmp_path / "grid.csv")
        assert G.shape[0] == 4
        col = header.index("dhsic")
        assert np.all(np.diff(G[:, col]) >= 0)
        # recompute each run's selected dHSIC from its own epochs table
        for row in G:
            run_dir = tmp_path / f"run_{int(row[0]):03d}"
            manifest = json.loads((run_dir / "manifest.json").read_text())
            _, E = read_csv(run_dir / "epochs.csv")
            assert row[col] == E[manifest["metrics"]["selected_epoch"], 1]
        assert "best run_" in out

    def test_one_point_grid_matches_ica(self, capsys, tmp_path):
        run(capsys, "grid", "--out", tmp_path / "g", *FAST)
        run(capsys, "ica", "--out", tmp_path / "i", *FAST)
        assert (tmp_path / "g" / "run_000" / "history.csv").read_bytes() == (tmp_path / "i" / "history.csv").read_bytes()


class TestKernelCommands:
    @pytest.fixture
    def table(self, tmp_path):
        rng = make_rng(0)
        x = rng.standard_normal(80)
        M = np.column_stack([x, x ** 2 + 0.1 * rng.standard_normal(80), rng.standard_normal(80), np.ones(80)])
        path = tmp_path / "t.csv"
        write_csv(path, ["x", "y", "z", "c"], M)
        return path, M

    def test_hsic_constant_column(self, capsys, table):
        path, _ = table
        code, out, _ = run(capsys, "hsic", "--data", path, "--col-a", "x", "--col-b", "c", "--sigma", "1")
        assert code == 0 and float(out.strip().split("=")[1]) == 0.0
        # the median heuristic has no scale to work with on a constant column
        code, _, err = run(capsys, "hsic", "--data", path, "--col-a", "x", "--col-b", "c")
        assert code == 64 and "degenerate bandwidth" in err

    def test_dhsic_matches_library(self, capsys, table):
        path, M = table
        code, out, _ = run(capsys, "dhsic", "--data", path, "--cols", "0,1,2")
        assert float(out.strip().split("=")[1]) == dhsic(M[:, :3])

    def test_hsic_test_output(self, capsys, table):
        path, _ = table
        code, out, _ = run(capsys, "hsic-test", "--data", path, "--col-a", "x", "--col-b", "x", "--permutations", "200")
        p, reject = out.strip().split()
        assert p.startswith("p=") and reject == "reject=true"
        code, out, _ = run(capsys, "hsic-test", "--data", path, "--col-a", "x", "--col-b", "z", "--alpha", "1")
        assert out.strip().endswith("reject=true")

    def test_hsic_test_deterministic(self, capsys, table):
        path, _ = table
        first = run(capsys, "hsic-test", "--data", path, "--col-a", "x", "--col-b", "z", "--seed", "4")[1]
        assert run(capsys, "hsic-test", "--data", path, "--col-a", "x", "--col-b", "z", "--seed", "4")[1] == first


class TestLemmaCheck:
    def test_lemma1_pass(self, capsys):
        code, out, _ = run(capsys, "lemma-check", "--lemma", "1", "--trials", "20")
        assert code == 0 and out.strip().splitlines()[-1].startswith("PASS")

    def test_lemma2_exact_pass(self, capsys):
        code, out, _ = run(capsys, "lemma-check", "--lemma", "2", "--trials", "10")
        assert code == 0 and "PASS" in out

    def test_lemma2_random_trend(self, capsys):
        code, out, _ = run(capsys, "lemma-check", "--lemma", "2", "--mode", "random", "--trials", "20")
        assert code == 0 and "strictly decreasing" in out

    def test_deterministic(self, capsys):
        a = run(capsys, "lemma-check", "--lemma", "1", "--trials", "5", "--seed", "9")[1]
        assert run(capsys, "lemma-check", "--lemma", "1", "--trials", "5", "--seed", "9")[1] == a
