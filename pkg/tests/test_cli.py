import json

import numpy as np
import pytest

from cda.cli import main
from cda.dataset import load_csv, save_csv
from cda.synthetic import SyntheticSpec, generate_synthetic


def run(argv):
    return main(argv)


def gen_files(tmp_path, seed=1, extra=()):
    args = ["gen", "--relation", "linear", "--n", "80", "--k", "80",
            "--m", "7", "--l", "5", "--seed", str(seed),
            "--out-x", str(tmp_path / "x.csv"),
            "--out-y", str(tmp_path / "y.csv"),
            "--out-gt", str(tmp_path / "gt.json"), *extra]
    assert run(args) == 0
    return tmp_path / "x.csv", tmp_path / "y.csv", tmp_path / "gt.json"


class TestGen:
    def test_writes_three_files_with_shapes(self, tmp_path, capsys):
        x_path, y_path, gt_path = gen_files(tmp_path)
        assert "seed=1" in capsys.readouterr().out
        x = load_csv(x_path)
        assert x.values.shape == (80, 7)
        gt = json.loads(gt_path.read_text())
        assert np.asarray(gt["U"]).shape == (7, 5)

    def test_deterministic_files(self, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        x1, y1, g1 = gen_files(tmp_path / "a", extra=())
        x2, y2, g2 = gen_files(tmp_path / "b", extra=())
        assert x1.read_bytes() == x2.read_bytes()
        assert y1.read_bytes() == y2.read_bytes()
        assert g1.read_bytes() == g2.read_bytes()

    def test_missing_out_flag_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run(["gen", "--relation", "linear",
                 "--out-y", str(tmp_path / "y.csv"),
                 "--out-gt", str(tmp_path / "g.json")])
        assert exc.value.code == 2


@pytest.fixture
def generated(tmp_path):
    (tmp_path / "a").mkdir()
    return gen_files(tmp_path / "a")


class TestFit:
    def test_fit_writes_basis_with_capped_pairs(self, generated, tmp_path):
        x_path, y_path, _ = generated
        out = tmp_path / "basis.json"
        code = run(["fit", "--x", str(x_path), "--y", str(y_path),
                    "--out", str(out), "--method", "rcda",
                    "--divergence", "mallows", "--restarts", "1",
                    "--seed", "2", "--no-whiten"])
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["version"] == "cda-basis/1"
        assert np.asarray(doc["U"]).shape == (7, 5)  # min(m, l) pairs
        assert len(doc["betas"]) == 5

    def test_cca_requires_correspondence(self, tmp_path, capsys):
        x, y, _ = generate_synthetic(SyntheticSpec(n=60, k=60, m=5, l=4, seed=3))
        save_csv(x, tmp_path / "x.csv")
        save_csv(y.values[:50], tmp_path / "y.csv",
                 names=y.attribute_names)
        code = run(["fit", "--x", str(tmp_path / "x.csv"),
                    "--y", str(tmp_path / "y.csv"),
                    "--out", str(tmp_path / "b.json"), "--method", "cca"])
        assert code == 1
        assert "CCA requires sample correspondence" in capsys.readouterr().err

    def test_cca_basis_written(self, generated, tmp_path):
        x_path, y_path, _ = generated
        out = tmp_path / "cca.json"
        assert run(["fit", "--x", str(x_path), "--y", str(y_path),
                    "--out", str(out), "--method", "cca"]) == 0
        doc = json.loads(out.read_text())
        assert doc["formulation"] == "cca"
        assert doc["divergence"] is None

    def test_config_file_merging_and_flag_override(self, generated, tmp_path):
        x_path, y_path, _ = generated
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"method": "rcda", "divergence": "mallows",
                                        "restarts": 1, "seed": 5,
                                        "whiten": False}))
        out1 = tmp_path / "b1.json"
        out2 = tmp_path / "b2.json"
        assert run(["fit", "--x", str(x_path), "--y", str(y_path),
                    "--out", str(out1), "--config", str(cfg_path)]) == 0
        # flag overrides config seed; result must differ in diagnostics seed
        assert run(["fit", "--x", str(x_path), "--y", str(y_path),
                    "--out", str(out2), "--config", str(cfg_path),
                    "--seed", "9"]) == 0
        d1 = json.loads(out1.read_text())
        d2 = json.loads(out2.read_text())
        assert d1["diagnostics"]["seed"] == 5
        assert d2["diagnostics"]["seed"] == 9

    def test_unknown_config_key_rejected(self, generated, tmp_path, capsys):
        x_path, y_path, _ = generated
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"methods": "rcda"}))
        code = run(["fit", "--x", str(x_path), "--y", str(y_path),
                    "--out", str(tmp_path / "b.json"),
                    "--config", str(cfg_path)])
        assert code == 1
        assert "unknown config keys" in capsys.readouterr().err

    def test_fit_deterministic_output(self, generated, tmp_path):
        x_path, y_path, _ = generated
        outs = []
        for name in ("r1.json", "r2.json"):
            out = tmp_path / name
            assert run(["fit", "--x", str(x_path), "--y", str(y_path),
                        "--out", str(out), "--method", "cda",
                        "--divergence", "mallows", "--restarts", "1",
                        "--seed", "3", "--r-pairs", "2",
                        "--max-outer-iters", "40"]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


class TestProject:
    def test_round_trip_objective(self, generated, tmp_path, capsys):
        x_path, y_path, _ = generated
        basis_path = tmp_path / "basis.json"
        assert run(["fit", "--x", str(x_path), "--y", str(y_path),
                    "--out", str(basis_path), "--method", "cda",
                    "--divergence", "mallows", "--restarts", "1",
                    "--seed", "4", "--r-pairs", "2",
                    "--max-outer-iters", "40"]) == 0
        zx = tmp_path / "zx.csv"
        zy = tmp_path / "zy.csv"
        assert run(["project", "--basis", str(basis_path),
                    "--data", str(x_path), "--side", "x", "--out", str(zx)]) == 0
        assert run(["project", "--basis", str(basis_path),
                    "--data", str(y_path), "--side", "y", "--out", str(zy)]) == 0
        from cda.divergence import mallows_value
        xs = load_csv(zx)
        ys = load_csv(zy)
        assert xs.values.shape[1] == 2
        doc = json.loads(basis_path.read_text())
        val = mallows_value(xs.values[:, 0], ys.values[:, 0])
        assert abs(val - doc["objectives"][0]) <= 1e-9 * max(1, abs(val))

    def test_dimension_mismatch_exit_code(self, generated, tmp_path, capsys):
        x_path, y_path, _ = generated
        basis_path = tmp_path / "basis.json"
        run(["fit", "--x", str(x_path), "--y", str(y_path),
             "--out", str(basis_path), "--method", "cda",
             "--divergence", "mallows", "--restarts", "1", "--seed", "4",
             "--r-pairs", "1", "--max-outer-iters", "10"])
        code = run(["project", "--basis", str(basis_path),
                    "--data", str(y_path), "--side", "x",
                    "--out", str(tmp_path / "z.csv")])
        assert code == 1


class TestBench:
    def test_invalid_suite_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            run(["bench", "--suite", "tableX"])
        assert exc.value.code == 2

    def test_runtime_suite_outputs(self, tmp_path, capsys):
        prefix = tmp_path / "rep"
        code = run(["bench", "--suite", "runtime", "--trials", "1",
                    "--seed", "5", "--n", "60", "--k", "60", "--m", "5",
                    "--l", "4", "--restarts", "1", "--out", str(prefix)])
        assert code == 0
        csv_text = (tmp_path / "rep.csv").read_text()
        assert csv_text.splitlines()[0] == "suite,setting,method,trial,error,seconds"
        assert (tmp_path / "rep.txt").exists()
        out = capsys.readouterr().out
        assert "seconds" in out


class TestClusterDist:
    def test_prints_distance_and_w(self, tmp_path, capsys, rng):
        a = rng.standard_normal((30, 2))
        save_csv(a, tmp_path / "c1.csv")
        save_csv(a + 0.1 * rng.standard_normal((30, 2)), tmp_path / "c2.csv")
        modes = 3.0 * (rng.integers(0, 2, (30, 2)) * 2 - 1)
        save_csv(0.1 * a + modes, tmp_path / "c3.csv")  # bimodal: shape change
        base = ["--divergence", "mallows", "--restarts", "1", "--seed", "6",
                "--method", "cda", "--max-outer-iters", "40"]
        assert run(["cluster-dist", "--c1", str(tmp_path / "c1.csv"),
                    "--c2", str(tmp_path / "c2.csv"), *base]) == 0
        near = float(capsys.readouterr().out.split()[0].split("=")[1])
        assert run(["cluster-dist", "--c1", str(tmp_path / "c1.csv"),
                    "--c2", str(tmp_path / "c3.csv"), *base]) == 0
        out = capsys.readouterr().out
        far = float(out.split()[0].split("=")[1])
        assert "w=2" in out
        assert near < far

    def test_empty_manifest_uses_plain_score(self, tmp_path, capsys, rng):
        a = rng.standard_normal((20, 2))
        save_csv(a, tmp_path / "c1.csv")
        save_csv(a + 1.0, tmp_path / "c2.csv")
        manifest = tmp_path / "sel.json"
        manifest.write_text("[]")
        code = run(["cluster-dist", "--c1", str(tmp_path / "c1.csv"),
                    "--c2", str(tmp_path / "c2.csv"),
                    "--cover", "a,b,c,d", "--cost", "2.0",
                    "--selected", str(manifest),
                    "--divergence", "mallows", "--restarts", "1",
                    "--method", "cda", "--max-outer-iters", "20"])
        assert code == 0
        out = capsys.readouterr().out
        assert "potent=2.0" in out  # |cover| / cost = 4 / 2


def test_env_seed_default(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("CDA_SEED", "42")
    args = ["gen", "--relation", "linear", "--n", "60", "--k", "60",
            "--m", "5", "--l", "4",
            "--out-x", str(tmp_path / "x.csv"),
            "--out-y", str(tmp_path / "y.csv"),
            "--out-gt", str(tmp_path / "gt.json")]
    assert main(args) == 0
    assert "seed=42" in capsys.readouterr().out


def test_gen_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "gen.json"
    cfg.write_text(json.dumps({"relation": "mixed", "n": 60, "k": 60,
                               "m": 5, "l": 4, "seed": 4}))
    args = ["gen", "--config", str(cfg), "--seed", "9",
            "--out-x", str(tmp_path / "x.csv"),
            "--out-y", str(tmp_path / "y.csv"),
            "--out-gt", str(tmp_path / "gt.json")]
    assert main(args) == 0
    assert "seed=9" in capsys.readouterr().out  # flag overrides config
    assert load_csv(tmp_path / "x.csv").values.shape == (60, 5)


def test_gen_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "gen.json"
    cfg.write_text(json.dumps({"rows": 60}))
    args = ["gen", "--config", str(cfg),
            "--out-x", str(tmp_path / "x.csv"),
            "--out-y", str(tmp_path / "y.csv"),
            "--out-gt", str(tmp_path / "gt.json")]
    assert main(args) == 1
    assert "unknown config keys" in capsys.readouterr().err


def test_fit_verbose_prints_pair_lines(generated, tmp_path, capsys):
    x_path, y_path, _ = generated
    out = tmp_path / "b.json"
    assert main(["fit", "--x", str(x_path), "--y", str(y_path),
                 "--out", str(out), "--method", "cda",
                 "--divergence", "mallows", "--restarts", "1",
                 "--seed", "3", "--r-pairs", "2",
                 "--max-outer-iters", "30", "--verbose"]) == 0
    out_text = capsys.readouterr().out
    assert "pair 0:" in out_text and "pair 1:" in out_text
