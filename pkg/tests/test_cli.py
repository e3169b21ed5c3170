import json

from chaoslab.cli import EXIT_BUDGET, EXIT_INPUT, EXIT_MISMATCH, EXIT_OK, EXIT_SINGULAR, main
from chaoslab.families import constant_kernel
from chaoslab.stein_bounds import ChaosVector


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestBound:
    def test_qvar(self, capsys, tmp_path):
        code, out, _ = run(["bound", "--family", "qvar", "--n", "64", "--out", str(tmp_path)], capsys)
        assert code == EXIT_OK
        rep = json.loads((tmp_path / "report.json").read_text())
        tv = [b for b in rep["bounds"] if b["name"] == "tv_fourth_moment"][0]
        assert abs(tv["value"] - 0.353553) < 1e-6
        assert rep["config"]["n"] == 64 and len(rep["config_hash"]) == 16
        assert "tv_fourth_moment" in out

    def test_p1_zero(self, capsys, tmp_path):
        code, _, _ = run(["bound", "--family", "offdiag-rand", "--p", "1", "--m", "4", "--out", str(tmp_path)], capsys)
        assert code == EXIT_OK
        rep = json.loads((tmp_path / "report.json").read_text())
        assert all(b["value"] == 0.0 for b in rep["bounds"])

    def test_pair2d_contents(self, capsys, tmp_path):
        code, _, _ = run(["bound", "--family", "pair2d", "--n", "8", "--out", str(tmp_path)], capsys)
        assert code == EXIT_OK
        rep = json.loads((tmp_path / "report.json").read_text())
        names = {b["name"]: b for b in rep["bounds"]}
        assert set(names) == {"wasserstein_exchangeable", "wasserstein_fourth_moment"}
        ing = names["wasserstein_exchangeable"]["ingredients"]
        assert ing["Sigma"] == [[1.0, 0.0], [0.0, 1.0]]
        assert ing["V"] == [[0.0, 0.25], [0.25, 1.0]]

    def test_config_and_override(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"family": "qvar", "n": 4}))
        out = tmp_path / "o"
        code, _, _ = run(["bound", "--config", str(cfg), "--n", "16", "--out", str(out)], capsys)
        assert code == EXIT_OK
        assert json.loads((out / "report.json").read_text())["config"]["n"] == 16

    def test_unknown_config_field(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"colour": "red"}))
        assert run(["bound", "--config", str(cfg)], capsys)[0] == EXIT_INPUT

    def test_corrupt_kernel(self, capsys, tmp_path):
        k = tmp_path / "k.json"
        k.write_text("{not json")
        code, _, err = run(["bound", "--kernel", str(k)], capsys)
        assert code == EXIT_INPUT and "cannot read" in err

    def test_kernel_file(self, capsys, tmp_path):
        from chaoslab.families import qvar
        k = tmp_path / "k.json"
        k.write_text(json.dumps(qvar(16).to_dict()))
        code, out, _ = run(["bound", "--kernel", str(k)], capsys)
        assert code == EXIT_OK and "0.7071067812" in out

    def test_singular(self, capsys, tmp_path):
        e = constant_kernel(3)
        k = tmp_path / "v.json"
        k.write_text(json.dumps(ChaosVector([(1, e), (1, 2.0 * e)]).to_dict()))
        assert run(["bound", "--kernel", str(k)], capsys)[0] == EXIT_SINGULAR

    def test_bad_flag(self, capsys):
        assert run(["bound", "--family", "nope"], capsys)[0] == EXIT_INPUT


class TestDiagnose:
    def test_mehler(self, capsys, tmp_path):
        code, _, _ = run(["diagnose", "--family", "qvar", "--n", "8", "--pair", "mehler", "--out", str(tmp_path),
                          "--plot-data"], capsys)
        assert code == EXIT_OK
        lines = (tmp_path / "report.csv").read_text().splitlines()
        assert lines[0].startswith("construction,parameter,distance")
        assert len(lines) == 10
        assert (tmp_path / "plot_data.csv").exists()

    def test_gibbs_p1_zero(self, capsys, tmp_path):
        code, _, _ = run(["diagnose", "--family", "gaussian", "--m", "8", "--pair", "gibbs", "--n-grid", "1,2,4,8",
                          "--out", str(tmp_path)], capsys)
        assert code == EXIT_OK
        rows = json.loads((tmp_path / "report.json").read_text())["diagnostics"]["rows"]
        assert all(r["distance"] == 0.0 for r in rows if r["construction"] == "gibbs-drift")

    def test_gibbs_diagonal_free(self, capsys, tmp_path):
        code, _, _ = run(["diagnose", "--family", "offdiag-rand", "--p", "2", "--m", "6", "--pair", "gibbs",
                          "--n-grid", "6", "--out", str(tmp_path)], capsys)
        assert code == EXIT_OK
        rows = json.loads((tmp_path / "report.json").read_text())["diagnostics"]["rows"]
        assert rows[0]["distance"] == 0.0

    def test_block_mismatch(self, capsys):
        code = run(["diagnose", "--family", "qvar", "--n", "8", "--pair", "gibbs", "--n-grid", "3"], capsys)[0]
        assert code == EXIT_MISMATCH


class TestMc:
    def test_reproducible(self, capsys, tmp_path):
        args = ["mc", "--family", "qvar", "--n-grid", "4,16", "--N", "20000", "--seed", "3", "--out", str(tmp_path)]
        assert run(args, capsys)[0] == EXIT_OK
        first = {n: (tmp_path / n).read_bytes() for n in ("report.csv", "report.json")}
        assert run(args, capsys)[0] == EXIT_OK
        assert all((tmp_path / n).read_bytes() == b for n, b in first.items())

    def test_worker_invariant(self, capsys, tmp_path):
        args = ["mc", "--family", "qvar", "--n", "4", "--N", "40000", "--seed", "3"]
        assert run(args + ["--out", str(tmp_path / "a")], capsys)[0] == EXIT_OK
        assert run(args + ["--out", str(tmp_path / "b"), "--workers", "3"], capsys)[0] == EXIT_OK
        assert (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()
        ha = json.loads((tmp_path / "a" / "report.json").read_text())["config_hash"]
        hb = json.loads((tmp_path / "b" / "report.json").read_text())["config_hash"]
        assert ha == hb

    def test_domination(self, capsys, tmp_path):
        assert run(["mc", "--family", "qvar", "--n-grid", "4,16,64", "--N", "50000", "--out", str(tmp_path)],
                   capsys)[0] == EXIT_OK
        rows = json.loads((tmp_path / "report.json").read_text())["estimates"]
        tv = [r for r in rows if r["estimator"] == "tv_binned"]
        assert all(r["dominated"] for r in tv)
        assert tv[0]["value"] > tv[1]["value"] > tv[2]["value"]
        assert tv[0]["bound"] > tv[1]["bound"] > tv[2]["bound"]

    def test_null_run(self, capsys, tmp_path):
        assert run(["mc", "--family", "gaussian", "--m", "4", "--N", "1000000", "--out", str(tmp_path)],
                   capsys)[0] == EXIT_OK
        rows = {r["estimator"]: r for r in json.loads((tmp_path / "report.json").read_text())["estimates"]}
        assert rows["tv_binned"]["value"] <= 0.01 and rows["w1"]["value"] <= 0.005

    def test_vector(self, capsys, tmp_path):
        assert run(["mc", "--family", "pair2d", "--n", "8", "--N", "20000", "--out", str(tmp_path)], capsys)[0] == 0
        rows = json.loads((tmp_path / "report.json").read_text())["estimates"]
        assert all(r["dominated"] for r in rows)

    def test_budget(self, capsys):
        assert run(["mc", "--family", "qvar", "--N", "10000000000"], capsys)[0] == EXIT_BUDGET


class TestSelftest:
    def test_clean(self, capsys):
        code, out, _ = run(["selftest"], capsys)
        assert code == EXIT_OK and out.count("PASS") == 4
