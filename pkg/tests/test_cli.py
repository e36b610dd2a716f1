"""
Tests for the command-line interface.
"""

import json

import pytest

from gold_ocl.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, build_parser, main
from gold_ocl.scenegen import read_dataset

from tests.conftest import TINY_CONFIG


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Tiny configuration, generated data and a trained checkpoint shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "config.json"
    config.write_text(json.dumps(TINY_CONFIG), encoding="utf-8")
    data, run = root / "data", root / "run"
    assert main(["gen-data", "--config", str(config), "--out", str(data)]) == EXIT_OK
    assert main(["train", "--config", str(config), "--data", str(data), "--out", str(run)]) == EXIT_OK
    return {"root": root, "config": str(config), "data": str(data), "run": str(run)}


def _common(workspace, out):
    return ["--config", workspace["config"], "--out", str(out)]


@pytest.mark.unit
class TestParser:
    """Test cases for argument parsing and exit codes."""

    def test_version(self, capsys):
        assert main(["--version"]) == EXIT_OK
        assert "0.1.0" in capsys.readouterr().out

    def test_missing_command(self):
        assert main([]) == EXIT_USAGE

    def test_unknown_command(self):
        assert main(["fly", "--out", "x"]) == EXIT_USAGE

    def test_missing_out(self):
        assert main(["gen-data"]) == EXIT_USAGE

    def test_repeatable_overrides(self):
        args = build_parser().parse_args(["gen-data", "--out", "x", "--set", "a=1", "--set", "b=2"])
        assert args.overrides == ["a=1", "b=2"]

    def test_missing_required_flag(self, tmp_path, capsys):
        assert main(["train", "--out", str(tmp_path)]) == EXIT_USAGE
        assert "--data" in capsys.readouterr().err

    def test_bad_override(self, tmp_path):
        assert main(["gen-data", "--out", str(tmp_path), "--set", "nothing=1"]) == EXIT_FAILURE

    def test_missing_config_file(self, tmp_path):
        assert main(["gen-data", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == EXIT_FAILURE


@pytest.mark.integration
class TestCommands:
    """Test cases running every command on a tiny workspace."""

    def test_gen_data(self, workspace):
        train = read_dataset(workspace["data"] + "/train")
        test = read_dataset(workspace["data"] + "/test")
        assert len(train) == TINY_CONFIG["scene"]["train_size"]
        assert len(test) == TINY_CONFIG["scene"]["test_size"]
        provenance = json.loads((workspace["root"] / "data" / "provenance.json").read_text(encoding="utf-8"))
        assert provenance["command"] == "gen-data"
        assert provenance["version"] == "0.1.0"

    def test_gen_data_is_byte_identical(self, workspace, tmp_path):
        def snapshot(root):
            return {
                path.relative_to(root).as_posix(): path.read_bytes()
                for path in sorted(root.rglob("*")) if path.is_file()
            }

        first, second = tmp_path / "first", tmp_path / "second"
        assert main(["gen-data", *_common(workspace, first)]) == EXIT_OK
        before = snapshot(first)
        assert main(["gen-data", *_common(workspace, first)]) == EXIT_OK
        assert snapshot(first) == before

        assert main(["gen-data", *_common(workspace, second)]) == EXIT_OK
        other = snapshot(second)
        assert other.keys() == before.keys()
        # provenance records the output directory
        assert {k: v for k, v in other.items() if k != "provenance.json"} == {
            k: v for k, v in before.items() if k != "provenance.json"
        }

    def test_gen_data_with_override(self, workspace, tmp_path):
        args = ["gen-data", *_common(workspace, tmp_path), "--set", "scene.test_size=1"]
        assert main(args) == EXIT_OK
        assert len(read_dataset(tmp_path / "test")) == 1

    def test_train_outputs(self, workspace):
        run = workspace["root"] / "run"
        for name in ("model.pt", "manifest.json", "metrics.csv", "config.json", "provenance.json"):
            assert (run / name).exists()

    def test_eval_and_report(self, workspace, tmp_path, capsys):
        evaluation = tmp_path / "eval"
        args = ["eval", *_common(workspace, evaluation), "--checkpoint", workspace["run"],
                "--data", workspace["data"], "--dataset-name", "sprites"]
        assert main(args) == EXIT_OK
        assert "sprites" in capsys.readouterr().out
        runs = (evaluation / "runs.csv").read_text(encoding="utf-8").strip().splitlines()
        assert len(runs) == 1 + TINY_CONFIG["eval"]["runs"]

        summary = tmp_path / "summary"
        assert main(["report", "--out", str(summary), "--inputs", str(evaluation)]) == EXIT_OK
        assert (summary / "report.csv").read_text(encoding="utf-8") == (
            evaluation / "report.csv"
        ).read_text(encoding="utf-8")

    def test_report_needs_inputs(self, tmp_path):
        assert main(["report", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_eval_missing_checkpoint(self, workspace, tmp_path):
        args = ["eval", *_common(workspace, tmp_path), "--checkpoint", str(tmp_path / "none"),
                "--data", workspace["data"]]
        assert main(args) == EXIT_FAILURE

    def test_prototypes(self, workspace, tmp_path):
        args = ["prototypes", *_common(workspace, tmp_path), "--checkpoint", workspace["run"]]
        assert main(args) == EXIT_OK
        for c in range(1, TINY_CONFIG["dsa"]["num_prototypes"] + 1):
            assert (tmp_path / f"prototype_{c:02d}.png").exists()

    def test_compose(self, workspace, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"objects": [{"prototype": 1}, {"prototype": 2, "reference_slot": 1}]}))
        args = ["compose", *_common(workspace, tmp_path / "out"), "--checkpoint", workspace["run"],
                "--spec", str(spec), "--data", workspace["data"], "--reference-index", "0"]
        assert main(args) == EXIT_OK
        assert (tmp_path / "out" / "compose.png").exists()

    def test_compose_bad_spec(self, workspace, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps([{"prototype": 0}]))
        args = ["compose", *_common(workspace, tmp_path / "out"), "--checkpoint", workspace["run"],
                "--spec", str(spec)]
        assert main(args) == EXIT_FAILURE

    def test_decompose(self, workspace, tmp_path):
        args = ["decompose", *_common(workspace, tmp_path), "--checkpoint", workspace["run"],
                "--data", workspace["data"], "--scene-index", "1"]
        assert main(args) == EXIT_OK
        names = ["background.png", "overlay.png", "panels.png", "reconstruction.png", "segmentation.png"]
        names += [f"slot_{k:02d}.png" for k in range(1, TINY_CONFIG["dsa"]["num_slots"] + 1)]
        for name in names:
            assert (tmp_path / name).exists()

    def test_scene_index_out_of_range(self, workspace, tmp_path):
        args = ["decompose", *_common(workspace, tmp_path), "--checkpoint", workspace["run"],
                "--data", workspace["data"], "--scene-index", "99"]
        assert main(args) == EXIT_USAGE

    def test_swap(self, workspace, tmp_path):
        args = ["swap", *_common(workspace, tmp_path), "--checkpoint", workspace["run"],
                "--data", workspace["data"], "--slot-i", "1", "--slot-j", "2"]
        code = main(args)
        # an untrained decomposition may leave either slot unpaired
        assert code in (EXIT_OK, EXIT_FAILURE)
        if code == EXIT_OK:
            assert (tmp_path / "before.png").exists()
            assert (tmp_path / "after.png").exists()

    def test_swap_needs_slots(self, workspace, tmp_path):
        args = ["swap", *_common(workspace, tmp_path), "--checkpoint", workspace["run"],
                "--data", workspace["data"]]
        assert main(args) == EXIT_USAGE
