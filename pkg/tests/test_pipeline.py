import json
import warnings

import numpy as np
import pytest

from profile_rpca import synth
from profile_rpca.geometry import PointCloud, save_point_cloud
from profile_rpca.pipeline import (
    ABLATION_GRID,
    ConfigError,
    PipelineConfig,
    StageError,
    detect,
    detect_cloud,
    load_config,
)


@pytest.fixture(scope="module")
def small_hole():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return synth.generate_sample("part1", "hole", 1, num_points=20_000, midrange=True)


# configuration

def test_defaults_follow_published_parameters():
    cfg = PipelineConfig()
    assert (cfg.m_prime, cfg.l_norm, cfg.c) == (100, 0.8, 2)
    assert cfg.p_override is None and cfg.threshold is None
    assert cfg.enable_cs and cfg.enable_opr


def test_toml_file(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("c = 4\nfuzziness = 2.5\nlambda_mode = \"paper_formula\"\nenable_opr = false\n")
    cfg = load_config(str(path), environ={})
    assert (cfg.c, cfg.fuzziness, cfg.lambda_mode, cfg.enable_opr) == (4, 2.5, "paper_formula", False)


def test_missing_required_key_named(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("fuzziness = 2.0\n")
    with pytest.raises(ConfigError, match="'c'"):
        load_config(str(path), environ={})


def test_precedence_file_env_override(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("c = 3\nseed = 1\nm_prime = 50\n")
    env = {"PROFILE_RPCA_SEED": "7", "PROFILE_RPCA_M_PRIME": "60"}
    cfg = load_config(str(path), {"m_prime": 80}, environ=env)
    assert (cfg.c, cfg.seed, cfg.m_prime) == (3, 7, 80)


def test_env_alone_and_optional_values():
    cfg = load_config(environ={"PROFILE_RPCA_THRESHOLD": "0.01", "PROFILE_RPCA_ENABLE_CS": "no",
                               "PROFILE_RPCA_P_OVERRIDE": "none"})
    assert cfg.threshold == 0.01 and cfg.enable_cs is False and cfg.p_override is None


@pytest.mark.parametrize("overrides", [{"colour": "red"}, {"c": "two"}, {"fuzziness": "0.5"},
                                       {"center": "sideways"}, {"lambda_mode": "fixed"}])
def test_bad_values_are_config_errors(overrides):
    with pytest.raises(ConfigError):
        load_config(overrides=overrides, environ={})


def test_nested_table_rejected(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("c = 2\n[rpca]\ntol = 1e-7\n")
    with pytest.raises(ConfigError, match="flat"):
        load_config(str(path), environ={})


def test_broken_toml(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("c = = 2\n")
    with pytest.raises(ConfigError):
        load_config(str(path), environ={})


# detection

def test_detect_cloud_report(small_hole):
    res = detect_cloud(small_hole, PipelineConfig())
    rep = res.report
    for key in ("config", "profiles", "components", "boundaries", "fcm", "rpca", "coverage", "timings",
                "metrics"):
        assert key in rep
    n, p = res.matrix.values.shape
    assert n <= 100 and p == 125
    assert len(res.scores) == len(small_hole)
    assert rep["coverage"] == pytest.approx(np.mean(~np.isnan(res.scores)))
    assert all(d["converged"] for d in rep["rpca"])
    evaluated = ~np.isnan(res.scores)
    assert np.all(res.scores[evaluated] >= 0)
    assert res.metrics["dice"] > 0.5
    # points of dropped slabs carry no score
    assert np.all(np.isnan(res.scores[res.matrix.point_row < 0]))
    json.dumps(rep, default=float)


def test_scores_come_back_in_input_units(small_hole):
    res = detect_cloud(small_hole)
    np.testing.assert_array_equal(res.cloud.points, small_hole.points)
    assert res.normalized.bbox.extent.max() == pytest.approx(1.0)


def test_disabling_cs_gives_one_component(small_hole):
    res = detect_cloud(small_hole, PipelineConfig(enable_cs=False))
    assert len(res.components.components) == 1 and res.report["fcm"] is None


def test_disabling_opr_removes_nothing(small_hole):
    res = detect_cloud(small_hole, PipelineConfig(enable_opr=False))
    assert len(res.components.removed) == 0


def test_fixed_threshold(small_hole):
    res = detect_cloud(small_hole, PipelineConfig(threshold=1e9))
    assert res.metrics["threshold"] == 1e9 and res.metrics["tp"] == 0


def test_unlabelled_cloud_has_no_metrics(small_hole):
    res = detect_cloud(PointCloud(small_hole.points))
    assert res.metrics is None and "metrics" not in res.report


def test_stage_error_names_stage(small_hole):
    with pytest.raises(StageError) as err:
        detect_cloud(small_hole, PipelineConfig(c=100))
    assert err.value.stage == "clustering"


def test_degenerate_cloud_fails_in_normalize():
    with pytest.raises(StageError) as err:
        detect_cloud(PointCloud(np.ones((10, 3))))
    assert err.value.stage == "normalize"


def test_detect_writes_outputs(tmp_path, small_hole):
    src = tmp_path / "in.ply"
    save_point_cloud(small_hole, str(src))
    res = detect(str(src), PipelineConfig(), str(tmp_path / "out"))
    assert (tmp_path / "out" / "in.scores.ply").exists()
    report = json.loads((tmp_path / "out" / "in.report.json").read_text())
    assert report["scores"].endswith("in.scores.ply")
    assert report["metrics"]["dice"] == pytest.approx(res.metrics["dice"])


def test_detect_failure_flushes_report(tmp_path, small_hole):
    src = tmp_path / "in.xyz"
    save_point_cloud(small_hole, str(src))
    with pytest.raises(StageError):
        detect(str(src), PipelineConfig(c=100), str(tmp_path))
    report = json.loads((tmp_path / "in.report.json").read_text())
    assert report["failed_stage"] == "clustering"
    assert not (tmp_path / "in.scores.xyz").exists()


def test_ablation_grid_rows():
    assert [name for name, _, _ in ABLATION_GRID] == ["none", "opr_only", "cs_only", "full"]


# ablation ordering on the Part2 hole fixture

def test_full_beats_every_reduced_row(part2_ablation):
    d = part2_ablation
    assert d["full"] >= d["opr_only"] >= d["none"]
    assert d["full"] >= d["cs_only"]


@pytest.mark.xfail(strict=True, reason="segmentation without cleaning exposes boundary error points; "
                                       "the clean synthetic global matrix is already low rank")
def test_cs_only_at_least_none(part2_ablation):
    assert part2_ablation["cs_only"] >= part2_ablation["none"]
