"""Recovering a target after a long detector blackout.

Run: python demos/occlusion_recovery.py

The target is undetected for longer than the motion tracker's max_age, so
it comes back under a new track id. Following the first id alone loses it;
the secondary cascade picks up the new id.
"""

from manta import synth
from manta.config import PipelineConfig
from manta.geometry import BBox, iou
from manta.pipeline import run_pipeline


def main() -> None:
    cfg = synth.split_track_scenario()
    (g0, g1), = cfg.occlusions
    bundle = synth.generate_synthetic(cfg)
    gt = [BBox.from_seq(g) for g in bundle.gt]
    print(f"{cfg.n_frames} frames, target undetected over frames {g0}-{g1} ({g1 - g0 + 1} frames)")

    full = run_pipeline(bundle)
    base = run_pipeline(bundle, PipelineConfig(secondary=False))

    def target_ids(frames):
        return sorted({d.track_id for t in frames for d in full.primary_tracks[t] if iou(d.bbox, gt[t - 1]) > 0.5})

    print(f"primary track ids on the target: {target_ids(range(2, g0))} before, "
          f"{target_ids(range(g1 + 1, cfg.n_frames + 1))} after")

    print("\nframe  step            IoU(cascade)  IoU(primary only)")
    audit = full.association.audit
    for t in list(range(g0 - 2, g0 + 3)) + list(range(g1 - 1, g1 + 6)):
        a = audit[t - 1]
        print(f"{t:5d}  {a.step:14s}  {iou(full.predictions[t - 1], gt[t - 1]):12.2f}  "
              f"{iou(base.predictions[t - 1], gt[t - 1]):17.2f}")

    print("\nDuring the blackout local search follows the target's appearance until it drifts off;")
    print("once the tracker confirms the new id, re-acquisition snaps back onto the target.")
    print(f"\nSuccess AUC: primary only {base.report.success_auc:.3f}, with cascade {full.report.success_auc:.3f}")


if __name__ == "__main__":
    main()
