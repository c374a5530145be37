import json

import numpy as np
import pytest

from maskrecon.cli import ERROR_PREFIX, build_parser, config_from_args, main
from maskrecon.errors import UsageError
from maskrecon.parsers.pfm import read_pfm, write_pfm


def _config(*argv):
    return config_from_args(build_parser().parse_args(list(argv)))


def test_config_defaults():
    config = _config("masks", "--preset", "identity")
    assert config.rounds == 3 and config.cap == 80 and config.median_scale
    assert (config.weights.alpha, config.weights.beta, config.weights.gamma) == (0.15, 0.03, 0.85)


def test_config_dn_and_overrides():
    assert _config("loss", "--preset", "identity", "--dn").weights.beta == 0.2
    config = _config("loss", "--preset", "identity", "--dn", "--beta", "0.1", "--scales", "2")
    assert config.weights.beta == 0.1 and config.weights.num_scales == 2


def test_synth_writes_a_loadable_frame_dir(tmp_path):
    assert main(["synth", "--preset", "occluder_fig3", "--out", str(tmp_path)]) == 0
    names = {p.name for p in tmp_path.iterdir()}
    assert {"x_tm1.png", "x_t.png", "d_tm1.pfm", "d_t.pfm", "intrinsics.json", "pose.json",
            "labels_t.png", "labels_tm1.png", "scene.json"} <= names
    assert read_pfm(tmp_path / "d_t.pfm").shape == (64, 128)

    out = tmp_path / "warp"
    assert main(["warp", "--input", str(tmp_path), "--out", str(out)]) == 0
    assert json.loads((out / "warp.json").read_text())["t"]["valid"] == 64 * 128


def test_masks_outputs(tmp_path):
    assert main(["masks", "--preset", "occluder_fig3", "--out", str(tmp_path)]) == 0
    for key in ("t", "tm1"):
        for kind in ("edge", "overlap", "blank"):
            assert (tmp_path / f"mask_{key}_{kind}.png").exists()
    assert (tmp_path / "recon_t.png").exists() and (tmp_path / "recon_tm1.png").exists()
    summary = json.loads((tmp_path / "masks.json").read_text())
    assert summary["rounds_run"] >= 1
    assert summary["oracle"]["t"]["occluded_recall"] >= 0.95


def test_identity_loss_has_zero_reconstruction(tmp_path):
    assert main(["loss", "--preset", "identity", "--out", str(tmp_path)]) == 0
    payload = json.loads((tmp_path / "loss.json").read_text())
    assert payload["rec"] == [0.0, 0.0, 0.0, 0.0]
    assert payload["weights"]["beta"] == 0.03


def test_eval_depth_self_comparison(tmp_path, capsys):
    depth = np.linspace(1.0, 40.0, 12).reshape(3, 4)
    path = write_pfm(depth, tmp_path / "d.pfm")
    assert main(["eval-depth", "--pred", str(path), "--gt", str(path)]) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["abs_rel"] == 0.0 and metrics["delta1"] == 1.0


def test_eval_ate_writes_json(tmp_path, capsys):
    traj = tmp_path / "traj.txt"
    traj.write_text("".join(f"1 0 0 {k * 0.5} 0 1 0 0 0 0 1 0\n" for k in range(4)))
    out = tmp_path / "out"
    assert main(["eval-ate", "--pred", str(traj), "--gt", str(traj), "--out", str(out)]) == 0
    stats = json.loads((out / "ate.json").read_text())
    assert stats == {"mean": 0.0, "std": 0.0, "windows": 2}
    assert json.loads(capsys.readouterr().out) == stats


def test_failure_prints_one_error_line(tmp_path, capsys):
    assert main(["masks", "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert err[-1].startswith(f"{ERROR_PREFIX}: ValidationError:")


def test_missing_input_file_is_reported(tmp_path, capsys):
    assert main(["eval-depth", "--pred", str(tmp_path / "a.pfm"), "--gt", str(tmp_path / "b.pfm")]) == 1
    assert capsys.readouterr().err.startswith(f"{ERROR_PREFIX}: FileNotFoundError:")


def test_unknown_preset_is_rejected_by_the_parser():
    with pytest.raises(UsageError):
        build_parser().parse_args(["masks", "--preset", "nope"])


@pytest.mark.parametrize("argv", [
    ["masks", "--preset", "nope"],
    ["eval-depth", "--pred", "a.pfm", "--gt", "b.pfm", "--cap", "60"],
    ["no-such-command"],
])
def test_usage_errors_exit_2_with_one_prefixed_line(argv, capsys):
    assert main(argv) == 2
    captured = capsys.readouterr()
    err = captured.err.strip().splitlines()
    assert len(err) == 1
    assert err[0].startswith(f"{ERROR_PREFIX}: UsageError:")
    assert captured.out == ""


def test_outputs_are_byte_identical_across_runs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["masks", "--preset", "reverse_fig5", "--out", str(out)]) == 0
        assert main(["loss", "--preset", "reverse_fig5", "--out", str(out)]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_three_frame_loss(tmp_path):
    assert main(["loss", "--preset", "identity", "--three-frame", "--out", str(tmp_path)]) == 0
    payload = json.loads((tmp_path / "loss.json").read_text())
    assert payload["rec"] == [0.0, 0.0, 0.0, 0.0]
    assert set(payload["valid_counts"]) == {"t-1|t", "t|t-1", "t|t+1", "t+1|t"}


def test_three_frame_loss_needs_a_preset(tmp_path, capsys):
    assert main(["loss", "--input", str(tmp_path), "--three-frame"]) == 1
    assert capsys.readouterr().err.startswith(f"{ERROR_PREFIX}: ValidationError:")


def test_masks_json_reports_coverage_per_mask(tmp_path):
    assert main(["masks", "--preset", "thin_object_fig7", "--out", str(tmp_path)]) == 0
    coverage = json.loads((tmp_path / "masks.json").read_text())["coverage"]
    for key in ("t", "t-1"):
        assert coverage[key]["occluded"] == 96
        assert coverage[key]["union_recall"] >= max(coverage[key]["overlap_recall"],
                                                    coverage[key]["blank_recall"])
