"""End-to-end command line pipeline against the bundled tiny configs."""

import json
from pathlib import Path

import pytest
import yaml

import outageplan
from outageplan import _kernels
from outageplan.cli import MANIFEST_NAME, OUT_DIR_ENV, RunManifest, main
from outageplan.config import outage_model_from_config
from outageplan.errors import OutagePlanError
from outageplan.outage import SuperposedModel

DATA = Path(outageplan.__file__).parent / "data"
CAIDI = DATA / "caidi" / "psegli_caidi.csv"
TINY_TRAJECTORY = DATA / "trajectories" / "tiny.csv"


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One tiny metamodel + trained qtable + trace, shared by the module."""
    out = tmp_path_factory.mktemp("pipeline")
    argv = ["metamodel", "--config", "tiny", "--seed", "11", "--replications", "40", "--out", str(out)]
    assert main(argv) == 0
    argv = ["train", "--config", "tiny", "--seed", "0", "--episodes", "2000", "--out", str(out)]
    assert main(argv) == 0
    argv = [
        "evaluate",
        "--config",
        "tiny",
        "--qtable",
        str(out / "qtable.bin"),
        "--trajectory",
        str(TINY_TRAJECTORY),
        "--label",
        "single",
        "--out",
        str(out),
    ]
    assert main(argv) == 0
    return out


class TestFit:
    def test_prints_fit_summary(self, capsys):
        assert main(["fit", "--caidi", str(CAIDI)]) == 0
        text = capsys.readouterr().out
        assert "severe years (> 10 h): 2012" in text
        assert "regular mean duration: 1.636 h" in text
        assert "severe mean duration: 22.55 h" in text
        assert "type: superposed" in text

    def test_writes_loadable_model_snippet(self, tmp_path, capsys):
        assert main(["fit", "--caidi", str(CAIDI), "--out", str(tmp_path)]) == 0
        capsys.readouterr()
        doc = yaml.safe_load((tmp_path / "outage_model.yaml").read_text())
        model = outage_model_from_config(doc["outage_model"])
        assert isinstance(model, SuperposedModel)
        assert model.regular_duration_rate == pytest.approx(0.636, abs=1e-12)
        assert model.severe_duration_rate == pytest.approx(21.55, abs=1e-12)
        manifest = RunManifest.load(tmp_path / MANIFEST_NAME)
        assert [e.kind for e in manifest.entries] == ["outage-model"]

    def test_threshold_changes_split(self, capsys):
        assert main(["fit", "--caidi", str(CAIDI), "--threshold-hours", "1.5"]) == 0
        text = capsys.readouterr().out
        assert "severe years (> 1.5 h): 2012, 2013, 2015, 2017" in text


class TestPipeline:
    def test_artifacts_exist(self, pipeline):
        for name in ("metamodel.csv", "qtable.bin", "convergence.csv", "trace-single.json", MANIFEST_NAME):
            assert (pipeline / name).is_file()

    def test_manifest_covers_every_artifact(self, pipeline):
        manifest = RunManifest.load(pipeline / MANIFEST_NAME)
        kinds = {e.kind for e in manifest.entries}
        assert kinds == {"metamodel", "qtable", "convergence", "trace-single"}
        assert manifest.tool_version == outageplan.__version__
        manifest.validate()

    def test_seed_lines(self, tmp_path, capsys):
        assert main(["metamodel", "--config", "tiny", "--replications", "5", "--out", str(tmp_path)]) == 0
        assert "seed: 0 (default)" in capsys.readouterr().out
        assert (
            main(["metamodel", "--config", "tiny", "--seed", "7", "--replications", "5", "--out", str(tmp_path)])
            == 0
        )
        assert "seed: 7 (explicit)" in capsys.readouterr().out

    def test_metamodel_stdout(self, pipeline, tmp_path, capsys):
        argv = ["metamodel", "--config", "tiny", "--seed", "11", "--replications", "40", "--out", str(tmp_path)]
        assert main(argv) == 0
        text = capsys.readouterr().out
        assert "portfolios: 35  replications: 40" in text
        assert f"wrote {tmp_path / 'metamodel.csv'}" in text
        # same config and seed in a fresh directory: byte-identical table
        assert (tmp_path / "metamodel.csv").read_bytes() == (pipeline / "metamodel.csv").read_bytes()

    def test_train_rerun_is_byte_identical(self, pipeline, tmp_path, capsys):
        argv = [
            "train",
            "--config",
            "tiny",
            "--seed",
            "0",
            "--episodes",
            "2000",
            "--metamodel",
            str(pipeline / "metamodel.csv"),
            "--out",
            str(tmp_path),
        ]
        assert main(argv) == 0
        text = capsys.readouterr().out
        assert f"episodes: 2000  backend: {_kernels.ACTIVE_BACKEND}" in text
        assert "final epoch: max |dQ| = " in text
        assert (tmp_path / "qtable.bin").read_bytes() == (pipeline / "qtable.bin").read_bytes()
        assert (tmp_path / "convergence.csv").read_bytes() == (pipeline / "convergence.csv").read_bytes()

    def test_evaluate_stdout_and_trace(self, pipeline, tmp_path, capsys):
        argv = [
            "evaluate",
            "--config",
            "tiny",
            "--qtable",
            str(pipeline / "qtable.bin"),
            "--trajectory",
            str(TINY_TRAJECTORY),
            "--metamodel",
            str(pipeline / "metamodel.csv"),
            "--out",
            str(tmp_path),
        ]
        assert main(argv) == 0
        text = capsys.readouterr().out
        assert "period 1: (0,400,150,0,0) -> " in text
        assert "total installed: " in text
        assert "exact expected return of the greedy policy: " in text
        doc = json.loads((tmp_path / "trace.json").read_text())
        assert doc["exact_expected_return"] is not None

    def test_evaluate_without_metamodel_skips_exact_return(self, pipeline, tmp_path, capsys):
        argv = [
            "evaluate",
            "--config",
            "tiny",
            "--qtable",
            str(pipeline / "qtable.bin"),
            "--trajectory",
            str(TINY_TRAJECTORY),
            "--out",
            str(tmp_path),
        ]
        assert main(argv) == 0
        text = capsys.readouterr().out
        assert "exact expected return" not in text
        assert json.loads((tmp_path / "trace.json").read_text())["exact_expected_return"] is None

    def test_compare_trace_with_itself(self, pipeline, tmp_path, capsys):
        trace = str(pipeline / "trace-single.json")
        assert main(["compare", "--trace-a", trace, "--trace-b", trace, "--out", str(tmp_path)]) == 0
        text = capsys.readouterr().out
        assert "delta total kWh (model-a - model-b): 0" in text
        doc = json.loads((tmp_path / "comparison.json").read_text())
        assert doc["deltas"]["total_kwh"] == 0.0

    def test_compare_label_collision(self, pipeline, capsys):
        trace = str(pipeline / "trace-single.json")
        rc = main(["compare", "--trace-a", trace, "--trace-b", trace, "--label-a", "x", "--label-b", "x"])
        assert rc == 1
        assert "outageplan-error: ValueError: comparison labels must differ" in capsys.readouterr().err


class TestErrorPaths:
    def test_train_without_metamodel(self, tmp_path, capsys):
        rc = main(["train", "--config", "tiny", "--episodes", "10", "--out", str(tmp_path)])
        assert rc == 1
        assert "outageplan-error: no metamodel available" in capsys.readouterr().err

    def test_config_hash_guard_on_train(self, pipeline, tmp_path, capsys):
        argv = [
            "train",
            "--config",
            "tiny-superposed",
            "--episodes",
            "10",
            "--metamodel",
            str(pipeline / "metamodel.csv"),
            "--out",
            str(tmp_path),
        ]
        assert main(argv) == 1
        assert "outageplan-error:" in capsys.readouterr().err

    def test_config_hash_guard_on_evaluate(self, pipeline, tmp_path, capsys):
        argv = [
            "evaluate",
            "--config",
            "tiny-superposed",
            "--qtable",
            str(pipeline / "qtable.bin"),
            "--trajectory",
            str(TINY_TRAJECTORY),
            "--out",
            str(tmp_path),
        ]
        assert main(argv) == 1
        assert "outageplan-error:" in capsys.readouterr().err

    def test_unknown_config_name(self, capsys):
        rc = main(["metamodel", "--config", "nonesuch"])
        assert rc == 1
        assert "unknown bundled config" in capsys.readouterr().err

    def test_missing_required_argument_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["metamodel"])
        assert exc.value.code == 2
        capsys.readouterr()

    def test_unknown_command_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2
        capsys.readouterr()

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert f"outageplan {outageplan.__version__}" in capsys.readouterr().out


class TestPlotData:
    def test_superposed_config_defaults_to_mean_matched(self, tmp_path, capsys):
        assert main(["plotdata", "--config", "tiny-superposed", "--out", str(tmp_path)]) == 0
        text = capsys.readouterr().out
        assert "rows: 40 (durations 1 .. 40 h)" in text
        lines = (tmp_path / "duration_pmf.csv").read_text().splitlines()
        assert lines[0] == "duration_hours,pmf_single,pmf_superposed"
        assert len(lines) == 41

    def test_explicit_pair(self, tmp_path, capsys):
        argv = ["plotdata", "--config", "tiny", "--config-b", "tiny-superposed", "--out", str(tmp_path)]
        assert main(argv) == 0
        capsys.readouterr()
        assert (tmp_path / "duration_pmf.csv").is_file()

    def test_single_config_needs_partner(self, tmp_path, capsys):
        rc = main(["plotdata", "--config", "tiny", "--out", str(tmp_path)])
        assert rc == 1
        assert "pass --config-b" in capsys.readouterr().err

    def test_two_single_models_rejected(self, tmp_path, capsys):
        rc = main(["plotdata", "--config", "tiny", "--config-b", "tiny", "--out", str(tmp_path)])
        assert rc == 1
        assert "outageplan-error:" in capsys.readouterr().err

    def test_out_dir_env_var(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path / "from-env"))
        assert main(["plotdata", "--config", "tiny-superposed"]) == 0
        capsys.readouterr()
        assert (tmp_path / "from-env" / "duration_pmf.csv").is_file()


class TestManifest:
    def test_record_replaces_same_kind_and_path(self, tmp_path):
        manifest = RunManifest()
        target = tmp_path / "a.bin"
        target.write_bytes(b"x")
        manifest.record("qtable", target, "h1", 1)
        manifest.record("qtable", target, "h2", 2)
        assert len(manifest.entries) == 1
        assert manifest.entries[0].config_hash == "h2"

    def test_validate_flags_missing_artifact(self, tmp_path):
        manifest = RunManifest()
        manifest.record("qtable", tmp_path / "gone.bin", None, None)
        with pytest.raises(OutagePlanError, match="missing artifact"):
            manifest.validate()

    def test_save_load_round_trip(self, tmp_path):
        manifest = RunManifest()
        target = tmp_path / "a.bin"
        target.write_bytes(b"x")
        manifest.record("qtable", target, "h", 3)
        path = tmp_path / MANIFEST_NAME
        manifest.save(path)
        loaded = RunManifest.load(path)
        assert loaded.entries[0].kind == "qtable"
        assert loaded.entries[0].seed == 3
        assert loaded.tool_version == outageplan.__version__

    def test_load_rejects_foreign_json(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"format": "other"}))
        with pytest.raises(OutagePlanError, match="not a run manifest"):
            RunManifest.load(path)
