import json

import pytest

from rpos.cli import main

from conftest import make_operator


TWO_STATE = {
    "points": [[0.0], [1.0]],
    "ref_weights": [1.0, 1.0],
    "kernel": [[0.5, 0.2], [0.1, 0.6]],
    "step_label": 1,
}


def write_config(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def write_operator(tmp_path, data, name="op.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def run(args):
    return main([str(a) for a in args])


class TestSpectralCommand:
    def test_two_state_report(self, tmp_path, capsys):
        op = write_operator(tmp_path, TWO_STATE)
        cfg = write_config(tmp_path, f"operator = {op.name}\n")
        out = tmp_path / "out"
        code = run(["spectral", "--config", cfg, "--out", out])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["schema"] == "rpos/1"
        assert abs(report["triple"]["theta0"] - 0.7) <= 1e-12
        assert (out / "eq1.csv").read_text().startswith("n,error,bound\n")
        assert (out / "run-metadata.json").exists()
        assert "theta0" in capsys.readouterr().out

    def test_quiet_suppresses_stdout(self, tmp_path, capsys):
        op = write_operator(tmp_path, TWO_STATE)
        cfg = write_config(tmp_path, f"operator = {op.name}\n")
        run(["spectral", "--config", cfg, "--out", tmp_path / "o", "--quiet"])
        assert capsys.readouterr().out == ""

    def test_nonconvergence_is_analysis_failure(self, tmp_path, capsys):
        cycle = dict(TWO_STATE, kernel=[[0.0, 1.0], [1.0, 0.0]], psi1=[1.0, 2.0])
        op = write_operator(tmp_path, cycle)
        cfg = write_config(tmp_path, f"operator = {op.name}\n")
        code = run(["spectral", "--config", cfg, "--out", tmp_path / "o"])
        assert code == 1
        assert "analysis failed" in capsys.readouterr().err


class TestCheckGCommand:
    def test_identity_fails_via_g1(self, tmp_path):
        identity = dict(TWO_STATE, kernel=[[1.0, 0.0], [0.0, 1.0]])
        op = write_operator(tmp_path, identity)
        cfg = write_config(tmp_path, f"operator = {op.name}\n")
        out = tmp_path / "out"
        code = run(["check-g", "--config", cfg, "--out", out])
        assert code == 1
        report = json.loads((out / "report.json").read_text())
        assert report["g_report"]["g1"]["pass"] is False
        assert report["g_report"]["overall"] is False

    def test_mixing_kernel_passes(self, tmp_path):
        op = write_operator(
            tmp_path, dict(TWO_STATE, kernel=[[0.6, 0.4], [0.3, 0.7]])
        )
        cfg = write_config(tmp_path, f"operator = {op.name}\nn1 = 1\n")
        out = tmp_path / "out"
        code = run(["check-g", "--config", cfg, "--out", out])
        assert code == 0
        rep = json.loads((out / "report.json").read_text())["g_report"]
        assert rep["g1"]["c1"] == pytest.approx(0.7, abs=1e-14)
        assert rep["g2"]["theta2"] == pytest.approx(1.0, abs=1e-14)

    def test_k_from_config_indices(self, tmp_path):
        cycle = dict(TWO_STATE, kernel=[[0.0, 1.0], [1.0, 0.0]])
        op = write_operator(tmp_path, cycle)
        cfg = write_config(tmp_path, f"operator = {op.name}\nk.indices = 0\n")
        out = tmp_path / "out"
        code = run(["check-g", "--config", cfg, "--out", out])
        assert code == 1
        rep = json.loads((out / "report.json").read_text())["g_report"]
        assert rep["g4"]["pass"] is False


class TestReciprocalCommand:
    def test_two_state_certifies(self, tmp_path):
        op = write_operator(tmp_path, TWO_STATE)
        cfg = write_config(tmp_path, f"operator = {op.name}\nn_max = 80\n")
        out = tmp_path / "out"
        code = run(["reciprocal", "--config", cfg, "--out", out])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["certificate"]["overall"] is True
        assert report["certificate"]["stage"] == "ok"
        assert (out / "eq3.csv").exists()


class TestModelRunCommand:
    CFG = (
        "model.kind = pds\n"
        "model.F = linear:0.25\n"
        "model.G = const:1\n"
        "model.p = 2\n"
        "model.a = 2\n"
        "noise.sd = 1\n"
        "grid.n = 160\n"
        "grid.L = 8\n"
        "mc.n_traj = 2000\n"
        "mc.seed = 11\n"
    )

    def test_pipeline_emits_everything(self, tmp_path):
        cfg = write_config(tmp_path, self.CFG)
        out = tmp_path / "out"
        code = run(["model-run", "--config", cfg, "--out", out])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["g_report"]["overall"] is True
        assert abs(report["mc_probe"]["z_score"]) <= 4.0
        kernel = json.loads((out / "kernel.json").read_text())
        assert list(kernel.keys()) == ["points", "ref_weights", "kernel", "step_label"]
        assert (out / "eq1.csv").exists() and (out / "eq2.csv").exists()

    def test_domain_box_reaches_the_model(self, tmp_path):
        from rpos.cli import parse_config, pds_from_config

        cfg = write_config(tmp_path, self.CFG + "model.domain = box\n")
        model = pds_from_config(parse_config(cfg))
        assert model.domain_lo is not None
        assert model.domain_lo[0] == -8.0 and model.domain_hi[0] == 8.0

    def test_diffusion_kind_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "model.kind = diffusion\n")
        code = run(["model-run", "--config", cfg, "--out", tmp_path / "o"])
        assert code == 2
        assert "skeleton" in capsys.readouterr().err


class TestSkeletonCommand:
    CFG = (
        "model.kind = diffusion\n"
        "model.b = affine:1,-1\n"
        "model.r = const:0\n"
        "grid.n = 120\n"
        "grid.L = 10\n"
        "skeleton.t0 = 1.0\n"
        "skeleton.substeps = 8\n"
    )

    def test_analysis_runs(self, tmp_path):
        cfg = write_config(tmp_path, self.CFG)
        out = tmp_path / "out"
        code = run(["skeleton", "--config", cfg, "--out", out])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["skeleton"]["pass"] is True
        assert report["skeleton"]["lambda0"] < 0.0
        assert report["girsanov"]["discrepancy"] < 0.05
        assert (out / "eq1cont.csv").exists() and (out / "eq2cont.csv").exists()


class TestUsageErrors:
    def test_missing_config_file(self, tmp_path, capsys):
        code = run(["spectral", "--config", tmp_path / "nope.cfg", "--out", tmp_path])
        assert code == 2
        assert "error" in capsys.readouterr().err

    def test_malformed_operator_names_field(self, tmp_path, capsys):
        op = write_operator(tmp_path, {"points": [[0.0]], "ref_weights": [1.0]})
        cfg = write_config(tmp_path, f"operator = {op.name}\n")
        code = run(["spectral", "--config", cfg, "--out", tmp_path / "o"])
        assert code == 2
        assert "kernel" in capsys.readouterr().err

    def test_bad_config_line(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "model.kind\n")
        code = run(["model-run", "--config", cfg, "--out", tmp_path / "o"])
        assert code == 2

    def test_missing_required_key(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "model.kind = pds\n")
        code = run(["model-run", "--config", cfg, "--out", tmp_path / "o"])
        assert code == 2
        assert "missing the required key" in capsys.readouterr().err


class TestReproducibility:
    def test_reruns_are_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, TestModelRunCommand.CFG)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run(["model-run", "--config", cfg, "--out", out1, "--quiet"]) == 0
        assert run(["model-run", "--config", cfg, "--out", out2, "--quiet"]) == 0
        for name in ("report.json", "kernel.json", "eq1.csv", "eq2.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
