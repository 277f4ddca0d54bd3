import json
import logging
from dataclasses import replace

import numpy as np
import pytest

from manta import synth
from manta.bundle import load_bundle, write_bundle
from manta.config import ConfigError, PipelineConfig, from_dict, load_config, override
from manta.formats import FormatError
from manta.pipeline import StageTimings, diff_reports, run_pipeline, write_outputs


@pytest.fixture(scope="module")
def clean_bundle():
    return synth.generate_synthetic(synth.clean_scenario(0))


@pytest.fixture(scope="module")
def occlusion_bundle():
    return synth.generate_synthetic(synth.occlusion_scenario(3))


# --- synthetic generator ----------------------------------------------------------------


def _plain(**kw):
    return synth.SynthConfig(n_frames=60, **kw)


def test_zero_noise_detections_equal_gt():
    b = synth.generate_synthetic(_plain(), render=False)
    assert len(b.detections) == 60
    for d in b.detections:
        assert d.bbox.as_tuple() == tuple(b.gt[d.frame - 1])


def test_occlusion_window_has_no_target():
    cfg = _plain(occlusions=((50, 57),))
    b = synth.generate_synthetic(cfg, render=False)
    frames = {d.frame for d in b.detections}
    assert frames == set(range(1, 61)) - set(range(50, 58))


def test_synth_deterministic(tmp_path):
    cfg = synth.example_scenario()
    a = write_bundle(synth.generate_synthetic(cfg), tmp_path / "a")
    b = write_bundle(synth.generate_synthetic(cfg), tmp_path / "b")
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_synth_config_validation():
    with pytest.raises(ValueError):
        synth.SynthConfig(n_frames=10, occlusions=((5, 12),))
    with pytest.raises(ValueError):
        synth.NoiseSpec(miss_prob=-0.1)


def test_occlusion_suite_gaps_exceed_max_age():
    for s in range(20):
        cfg = synth.occlusion_scenario(s)
        (a, b), = cfg.occlusions
        assert b - a + 1 > 30 and cfg.n_frames >= 100


def test_bundle_round_trip(tmp_path, clean_bundle):
    path = write_bundle(clean_bundle, tmp_path / "b")
    back = load_bundle(path)
    assert back.sequence_id == clean_bundle.sequence_id
    assert np.array_equal(back.gt, clean_bundle.gt)
    assert back.detections == clean_bundle.detections
    assert len(back.frames) == len(clean_bundle.frames)
    assert np.max(np.abs(back.frames[3] - clean_bundle.frames[3])) <= 0.5 / 255 + 1e-12


def test_bundle_validation(tmp_path, clean_bundle):
    path = write_bundle(clean_bundle, tmp_path / "b")
    (path / "groundtruth.txt").write_text("1,2,3,4\n")
    with pytest.raises(FormatError, match="frames but"):
        load_bundle(path)


# --- pipeline ---------------------------------------------------------------------------


def test_clean_sequence_high_miou(clean_bundle):
    r = run_pipeline(clean_bundle)
    assert r.report.miou > 0.9
    assert len(r.predictions) == clean_bundle.n_frames


def test_secondary_beats_primary_only(occlusion_bundle):
    on = run_pipeline(occlusion_bundle)
    off = run_pipeline(occlusion_bundle, PipelineConfig(secondary=False))
    assert on.report.success_auc > off.report.success_auc


def test_empty_detections_repeat_anchor(caplog, clean_bundle):
    b = replace(clean_bundle, detections=[])
    with caplog.at_level(logging.WARNING):
        r = run_pipeline(b)
    assert all(p == b.anchor for p in r.predictions)
    assert r.report is not None
    assert "no detections" in caplog.text


def test_stage_timings_percentages(clean_bundle):
    r = run_pipeline(clean_bundle)
    assert set(r.timings.seconds) == {"ingestion", "primary", "secondary", "metrics"}
    assert sum(r.timings.percentages().values()) == pytest.approx(100.0, abs=0.1)
    assert StageTimings().percentages() == {s: 25.0 for s in StageTimings().seconds}


def test_secondary_cheaper_than_primary_plus_metrics():
    # best of three per stage, summed over several clean sequences
    bundles = [synth.generate_synthetic(synth.clean_scenario(s)) for s in range(5)]
    secondary = rest = 0.0
    for b in bundles:
        runs = [run_pipeline(b) for _ in range(3)]
        steps = runs[0].association.steps()
        assert steps.count("local_search") < 0.1 * len(steps)
        secondary += min(r.timings.seconds["secondary"] for r in runs)
        rest += min(r.timings.seconds["primary"] + r.timings.seconds["metrics"] for r in runs)
    assert secondary < rest


def test_pipeline_reproducible(occlusion_bundle):
    a = run_pipeline(occlusion_bundle)
    b = run_pipeline(occlusion_bundle)
    assert a.predictions == b.predictions
    assert a.report.to_dict() == b.report.to_dict()


def test_pre_labelled_tracks_used_verbatim():
    b = synth.generate_synthetic(_plain())
    dets = [replace(d, track_id=5) for d in b.detections]
    r = run_pipeline(replace(b, detections=dets))
    assert {d.track_id for ds in r.primary_tracks.values() for d in ds} == {5}
    assert r.predictions[1:] == [d.bbox for d in dets[1:]]


def test_write_outputs_file_names(tmp_path, clean_bundle):
    r = run_pipeline(clean_bundle)
    out = write_outputs(r, tmp_path / "o", PipelineConfig())
    names = {p.name for p in out.iterdir()}
    assert {"predictions.txt", "report.json", "success_curve.csv", "precision_curve.csv", "audit.csv",
            "timings.json", "config.echo"} <= names
    assert json.loads((out / "config.echo").read_text()) == PipelineConfig().to_dict()


# --- report diff ------------------------------------------------------------------------


def test_diff_reports():
    exp = {"miou": 0.5, "c": {"values": [1.0, 0.5]}, "n": 3}
    assert diff_reports(exp, json.loads(json.dumps(exp))) == []
    assert diff_reports(exp, {"miou": 0.5 + 1e-12, "c": {"values": [1.0, 0.5]}, "n": 3}) == []
    bad = {"miou": 0.6, "c": {"values": [1.0, 0.4]}, "extra": 1}
    d = diff_reports(exp, bad)
    assert any(line.startswith("miou:") for line in d)
    assert any(line.startswith("c.values[1]:") for line in d)
    assert any(line.startswith("n: missing") for line in d)
    assert any(line.startswith("extra: unexpected") for line in d)


# --- configuration ----------------------------------------------------------------------


def test_config_defaults_round_trip():
    cfg = PipelineConfig()
    assert from_dict(cfg.to_dict()) == cfg


def test_config_unknown_keys(tmp_path):
    with pytest.raises(ConfigError, match="bogus"):
        from_dict({"bogus": 1})
    with pytest.raises(ConfigError, match="max_aeg"):
        from_dict({"motion": {"max_aeg": 3}})
    f = tmp_path / "c.json"
    f.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(f)


def test_config_invalid_value():
    with pytest.raises(ConfigError):
        from_dict({"motion": {"iou_threshold": 2.0}})


def test_config_file_and_override(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"association": {"theta_cos": 0.8}, "motion": {"max_age": 12}}))
    cfg = load_config(f)
    assert cfg.association.theta_cos == 0.8 and cfg.motion.max_age == 12
    cfg = override(cfg, "association", theta_cos=0.7, reacquire_floor=None)
    assert cfg.association.theta_cos == 0.7 and cfg.association.reacquire_floor == 0.5


def test_seed_env(monkeypatch):
    monkeypatch.setenv("MANTA_SEED", "42")
    assert load_config(None).seed == 42
    monkeypatch.setenv("MANTA_SEED", "x")
    with pytest.raises(ConfigError):
        load_config(None)
