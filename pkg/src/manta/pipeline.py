"""End-to-end run: detections -> primary tracks -> single-target trajectory -> metrics."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from manta.association import Appearance, AssociationResult, associate_sequence, primary_only_trajectory
from manta.bundle import SequenceBundle, load_bundle
from manta.config import PipelineConfig
from manta.embedder import Embedder, EmbeddingStore, load_projection
from manta.formats import Detection, format_boxes, format_detections
from manta.metrics import MetricReport, report, write_curve_csv
from manta.motion import run_tracker

log = logging.getLogger(__name__)

STAGES = ("ingestion", "primary", "secondary", "metrics")


@dataclass
class StageTimings:
    seconds: dict[str, float] = field(default_factory=lambda: {s: 0.0 for s in STAGES})

    @property
    def total(self) -> float:
        return sum(self.seconds.values())

    def percentages(self) -> dict[str, float]:
        tot = self.total
        if tot <= 0:
            return {s: 100.0 / len(self.seconds) for s in self.seconds}
        return {s: 100.0 * v / tot for s, v in self.seconds.items()}

    def to_dict(self) -> dict:
        return {"seconds": dict(self.seconds), "percent": self.percentages(), "total": self.total}


class _Timer:
    def __init__(self, timings: StageTimings, stage: str):
        self.timings, self.stage = timings, stage

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.timings.seconds[self.stage] += time.perf_counter() - self.t0


@dataclass
class PipelineResult:
    sequence_id: str
    predictions: list
    report: MetricReport | None
    timings: StageTimings
    association: AssociationResult
    primary_tracks: dict[int, list[Detection]]


def make_embedder(cfg: PipelineConfig) -> Embedder:
    proj = load_projection(cfg.projection) if cfg.projection else None
    return Embedder(cfg.embedder, proj)


def primary_tracks(bundle: SequenceBundle, cfg: PipelineConfig) -> dict[int, list[Detection]]:
    """Track detections with the motion tracker unless they already carry ids."""
    by_frame = bundle.detections_by_frame()
    if bundle.detections and all(d.track_id >= 0 for d in bundle.detections):
        return by_frame
    return run_tracker(by_frame, bundle.n_frames, cfg.motion)


def run_pipeline(
    bundle: SequenceBundle | str | Path,
    cfg: PipelineConfig = PipelineConfig(),
    embeddings: EmbeddingStore | None = None,
    evaluate: bool = True,
) -> PipelineResult:
    timings = StageTimings()
    with _Timer(timings, "ingestion"):
        if not isinstance(bundle, SequenceBundle):
            bundle = load_bundle(bundle, cfg.physics.depth_scale)
        bundle.validate()
        embedder = make_embedder(cfg)
    if not bundle.detections:
        log.warning("%s: no detections; the trajectory will repeat the anchor", bundle.sequence_id)
    with _Timer(timings, "primary"):
        tracks = primary_tracks(bundle, cfg)
    with _Timer(timings, "secondary"):
        if cfg.secondary:
            appearance = Appearance(embedder, bundle.frames, embeddings, bundle.sequence_id)
            assoc = associate_sequence(tracks, bundle.anchor, bundle.n_frames, cfg.association, appearance)
        else:
            assoc = primary_only_trajectory(tracks, bundle.anchor, bundle.n_frames, cfg.association.weights)
    rep = None
    if evaluate:
        with _Timer(timings, "metrics"):
            pred = np.array([b.as_tuple() for b in assoc.trajectory])
            rep = report(pred, bundle.gt, cfg.metrics)
    return PipelineResult(bundle.sequence_id, assoc.trajectory, rep, timings, assoc, tracks)


def format_audit(assoc: AssociationResult) -> str:
    def num(v: float) -> str:
        return "" if v != v else repr(float(v))

    lines = ["frame,step_fired,score,cos"]
    lines += [f"{a.frame},{a.step},{num(a.score)},{num(a.cos)}" for a in assoc.audit]
    return "\n".join(lines) + "\n"


def report_json(rep: MetricReport) -> str:
    return json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n"


def diff_reports(expected, actual, tol: float = 1e-9, path: str = "") -> list[str]:
    """Field-level differences between two report documents.

    Numbers match when ``|a - e| <= tol * max(1, |e|)``; every other value must
    be equal. Returns one line per mismatching field, empty when they agree.
    """
    where = path or "<root>"
    if isinstance(expected, dict) and isinstance(actual, dict):
        out = []
        for k in sorted(set(expected) | set(actual)):
            sub = f"{path}.{k}" if path else str(k)
            if k not in actual:
                out.append(f"{sub}: missing (expected {expected[k]!r})")
            elif k not in expected:
                out.append(f"{sub}: unexpected field")
            else:
                out += diff_reports(expected[k], actual[k], tol, sub)
        return out
    if isinstance(expected, list) and isinstance(actual, list):
        if len(expected) != len(actual):
            return [f"{where}: length {len(actual)} != expected {len(expected)}"]
        out = []
        for i, (e, a) in enumerate(zip(expected, actual)):
            out += diff_reports(e, a, tol, f"{path}[{i}]")
        return out
    numeric = (int, float)
    if isinstance(expected, numeric) and isinstance(actual, numeric) and not isinstance(expected, bool):
        if abs(actual - expected) <= tol * max(1.0, abs(expected)):
            return []
        return [f"{where}: {actual!r} != expected {expected!r} (diff {actual - expected:.3g})"]
    return [] if expected == actual else [f"{where}: {actual!r} != expected {expected!r}"]


def check_expected(rep: MetricReport, expected_path: str | Path, tol: float = 1e-9) -> list[str]:
    expected = json.loads(Path(expected_path).read_text(encoding="utf-8"))
    return diff_reports(expected, json.loads(report_json(rep)), tol)


def write_outputs(result: PipelineResult, out_dir: str | Path, cfg: PipelineConfig,
                  timings: bool = True) -> Path:
    """Write the fixed-name run outputs into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "predictions.txt").write_text(format_boxes(result.predictions), encoding="utf-8")
    (out / "audit.csv").write_text(format_audit(result.association), encoding="utf-8")
    (out / "config.echo").write_text(cfg.dumps(), encoding="utf-8")
    tracks = [d for t in sorted(result.primary_tracks) for d in result.primary_tracks[t]]
    (out / "tracks.csv").write_text(format_detections(tracks), encoding="utf-8")
    if result.report is not None:
        (out / "report.json").write_text(report_json(result.report), encoding="utf-8")
        write_curve_csv(out / "success_curve.csv", result.report.success)
        write_curve_csv(out / "precision_curve.csv", result.report.precision)
    if timings:
        (out / "timings.json").write_text(json.dumps(result.timings.to_dict(), indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
    return out
