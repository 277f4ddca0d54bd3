"""``manta`` command-line interface.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 internal
invariant violation (including a failed gradient check).
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from manta.config import ConfigError, PipelineConfig, default_seed, load_config, override

log = logging.getLogger("manta")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _rgb(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected r,g,b")
    return tuple(parts)  # type: ignore[return-value]


def _config(args) -> PipelineConfig:
    cfg = load_config(getattr(args, "config", None))
    seed = getattr(args, "seed", None)
    if seed is not None:
        cfg = replace(cfg, seed=seed, embedder=replace(cfg.embedder, seed=seed))
    if getattr(args, "no_secondary", False):
        cfg = replace(cfg, secondary=False)
    if getattr(args, "projection", None):
        cfg = replace(cfg, projection=args.projection)
    cfg = override(
        cfg,
        "association",
        theta_cos=getattr(args, "theta_cos", None),
        reacquire_floor=getattr(args, "reacquire_floor", None),
        reacquire_ref=getattr(args, "reacquire_ref", None),
    )
    cfg = override(cfg, "motion", max_age=getattr(args, "max_age", None))
    return cfg


# --- subcommands -----------------------------------------------------------------------


def cmd_augment(args) -> int:
    from manta.imageio import read_depth, read_image, write_image
    from manta.physics import AttenuationParams, beer_lambert

    cfg = _config(args)
    image = read_image(args.image)
    depth = read_depth(args.depth, args.depth_scale if args.depth_scale is not None else cfg.physics.depth_scale)
    params = AttenuationParams(args.beta, tuple(args.background) if args.background else cfg.physics.background)
    write_image(args.out, beer_lambert(image, depth, params))
    return EXIT_OK


def cmd_embed(args) -> int:
    from manta.bundle import DirFrames, bundle_sequence_id
    from manta.embedder import EmbeddingStore, save_embeddings, sequence_hash
    from manta.formats import read_detections
    from manta.imageio import list_frames
    from manta.physics import EmptyCropError, crop
    from manta.pipeline import make_embedder

    cfg = _config(args)
    embedder = make_embedder(cfg)
    frames = DirFrames(list_frames(args.frames))
    dets = read_detections(args.boxes)
    seq = sequence_hash(args.sequence_id or bundle_sequence_id(Path(args.frames).resolve().parent))
    store = EmbeddingStore()
    per_frame: dict[int, int] = {}
    for d in dets:
        idx = per_frame.get(d.frame, 0)
        per_frame[d.frame] = idx + 1
        if d.frame > len(frames):
            raise ValueError(f"box for frame {d.frame} but only {len(frames)} frames")
        try:
            store.put(seq, d.frame, idx, embedder.embed(crop(frames[d.frame - 1], d.bbox)))
        except EmptyCropError:
            log.warning("frame %d box %d lies outside the image; skipped", d.frame, idx)
    save_embeddings(args.out, store)
    print(f"wrote {len(store)} embeddings to {args.out}")
    return EXIT_OK


def cmd_track(args) -> int:
    from manta.association import Appearance, associate_sequence, primary_only_trajectory
    from manta.bundle import DirFrames, bundle_sequence_id
    from manta.embedder import load_embeddings
    from manta.formats import format_detections, parse_bbox_arg, read_detections, write_boxes
    from manta.imageio import list_frames
    from manta.motion import run_tracker
    from manta.pipeline import format_audit, make_embedder

    cfg = _config(args)
    anchor = parse_bbox_arg(args.anchor)
    dets = read_detections(args.dets)
    frames = DirFrames(list_frames(args.frames)) if args.frames else None
    if args.n_frames:
        n_frames = args.n_frames
    elif frames is not None:
        n_frames = len(frames)
    else:
        n_frames = max((d.frame for d in dets), default=1)
    by_frame: dict[int, list] = {t: [] for t in range(1, n_frames + 1)}
    for d in dets:
        by_frame.setdefault(d.frame, []).append(d)
    if not dets or any(d.track_id < 0 for d in dets):
        by_frame = run_tracker(by_frame, n_frames, cfg.motion)
    if args.tracks_out:
        rows = [d for t in sorted(by_frame) for d in by_frame[t]]
        Path(args.tracks_out).write_text(format_detections(rows), encoding="utf-8")
    if cfg.secondary:
        store = load_embeddings(args.embeddings) if args.embeddings else None
        seq_id = args.sequence_id or (bundle_sequence_id(Path(args.frames).resolve().parent) if args.frames else "")
        appearance = Appearance(make_embedder(cfg), frames, store, seq_id)
        result = associate_sequence(by_frame, anchor, n_frames, cfg.association, appearance)
    else:
        result = primary_only_trajectory(by_frame, anchor, n_frames, cfg.association.weights)
    write_boxes(args.out, result.trajectory)
    if args.audit:
        Path(args.audit).write_text(format_audit(result), encoding="utf-8")
    return EXIT_OK


def cmd_eval(args) -> int:
    from manta.formats import read_boxes
    from manta.metrics import report, write_curve_csv
    from manta.pipeline import report_json

    cfg = _config(args)
    rep = report(read_boxes(args.pred), read_boxes(args.gt), cfg.metrics)
    Path(args.out).write_text(report_json(rep), encoding="utf-8")
    if args.curves:
        d = Path(args.curves)
        d.mkdir(parents=True, exist_ok=True)
        write_curve_csv(d / "success_curve.csv", rep.success)
        write_curve_csv(d / "precision_curve.csv", rep.precision)
    return _finish(rep, args.expect)


def _finish(rep, expect) -> int:
    from manta.pipeline import check_expected

    for k, v in rep.scalars().items():
        print(f"{k:>18s}  {v:.4f}")
    if expect:
        diffs = check_expected(rep, expect)
        if diffs:
            print(f"manta: report differs from {expect}:", file=sys.stderr)
            for line in diffs:
                print(f"  {line}", file=sys.stderr)
            return EXIT_DATA
        print(f"report matches {expect}")
    return EXIT_OK


def _run_one(job):
    bundle_dir, cfg, embeddings = job
    from manta.embedder import load_embeddings
    from manta.pipeline import run_pipeline

    store = load_embeddings(embeddings) if embeddings else None
    return run_pipeline(bundle_dir, cfg, store)


def _unique_names(names: list[str]) -> list[str]:
    seen: dict[str, int] = {}
    out = []
    for n in names:
        k = seen.get(n, 0)
        seen[n] = k + 1
        out.append(n if k == 0 else f"{n}-{k}")
    return out


def cmd_run(args) -> int:
    from manta.metrics import aggregate, write_curve_csv
    from manta.pipeline import report_json, write_outputs

    cfg = _config(args)
    out = Path(args.out_dir)
    jobs = [(b, cfg, args.embeddings) for b in args.bundle]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    if len(results) == 1:
        write_outputs(results[0], out, cfg, timings=not args.no_timings)
        rep = results[0].report
    else:
        # bundle directory names are unique even when sequence ids repeat
        names = _unique_names([Path(b).name for b in args.bundle])
        for name, r in zip(names, results):
            write_outputs(r, out / name, cfg, timings=not args.no_timings)
        rep = aggregate({name: r.report for name, r in zip(names, results)})
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report_json(rep), encoding="utf-8")
        write_curve_csv(out / "success_curve.csv", rep.success)
        write_curve_csv(out / "precision_curve.csv", rep.precision)
        (out / "config.echo").write_text(cfg.dumps(), encoding="utf-8")
    return _finish(rep, args.expect)


def cmd_synth(args) -> int:
    from manta import synth
    from manta.bundle import write_bundle
    from manta.physics import linear_depth

    seed = args.seed if args.seed is not None else default_seed()
    out = Path(args.out)
    if args.scenario == "corpus":
        cfgs = synth.corpus_configs(args.count or 16, args.frames or 12, seed)
    elif args.scenario == "example":
        cfgs = [synth.example_scenario()]
    else:
        make = synth.occlusion_scenario if args.scenario == "occlusion" else synth.clean_scenario
        kw = {"n_frames": args.frames} if args.frames else {}
        cfgs = [make(seed + i, **kw) for i in range(args.count or 1)]
    multi = len(cfgs) > 1 or args.scenario == "corpus"
    for c in cfgs:
        bundle = synth.generate_synthetic(c)
        if args.with_depth:
            bundle.depths = [linear_depth(c.height, c.width, 0.5, 3.0)] * c.n_frames
        write_bundle(bundle, out / c.sequence_id if multi else out)
    print(f"wrote {len(cfgs)} bundle(s) under {out}")
    return EXIT_OK


def cmd_train_encoder(args) -> int:
    from manta.bundle import crop_sequence, load_bundle
    from manta.contrastive import PairSpec, train
    from manta.embedder import save_projection

    corpus_dir = Path(args.corpus)
    if not corpus_dir.is_dir():
        raise FileNotFoundError(f"corpus directory {corpus_dir} does not exist")
    seqs = [crop_sequence(load_bundle(p)) for p in sorted(corpus_dir.iterdir()) if p.is_dir()]
    seed = args.seed if args.seed is not None else default_seed()
    cfg = _config(args)
    emb_cfg = replace(cfg.embedder, kind="trainable")
    result = train(seqs, PairSpec(seed=seed, positives_as_negatives=args.positives_as_negatives),
                   epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, tau=args.tau,
                   config=emb_cfg, denominator=args.denominator)
    with open(args.out, "wb") as fh:
        save_projection(fh, result.projection)
    # loss on the fixed evaluation batches after each epoch
    lines = ["epoch,loss"] + [f"{i},{v!r}" for i, v in enumerate(result.history, 1)]
    text = "\n".join(lines) + "\n"
    if args.loss_csv:
        Path(args.loss_csv).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    log.info("separation %.4f -> %.4f", result.separation_before, result.separation_after)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from manta.contrastive import gradcheck

    seed = args.seed if args.seed is not None else default_seed()
    rep = gradcheck(seed=seed, repeats=args.repeats)
    print(f"batches={rep.n_batches} max_rel_error={rep.max_rel_error:.3e} "
          f"param_max_rel_error={rep.param_max_rel_error:.3e}")
    return EXIT_OK if rep.overall < args.tolerance else EXIT_INTERNAL


# --- parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="manta", description="Underwater single-object tracking toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--config", help="JSON run configuration")
        if seed:
            sp.add_argument("--seed", type=int, default=None, help="seed (default: $MANTA_SEED or 0)")

    def assoc_flags(sp):
        sp.add_argument("--no-secondary", action="store_true", help="primary tracker only")
        sp.add_argument("--theta-cos", type=float, help="appearance cosine threshold")
        sp.add_argument("--reacquire-floor", type=float, help="minimum composite score for re-acquisition")
        sp.add_argument("--reacquire-ref", choices=("previous", "anchor"), help="reference box for re-acquisition")
        sp.add_argument("--max-age", type=int, help="primary tracker max_age")
        sp.add_argument("--projection", help="trained projection head (.npz)")
        sp.add_argument("--embeddings", help="precomputed embedding file")

    sp = sub.add_parser("augment", help="Beer-Lambert augmentation of one image")
    sp.add_argument("--image", required=True)
    sp.add_argument("--depth", required=True, help="16-bit PNG or PFM depth map")
    sp.add_argument("--beta", type=float, required=True)
    sp.add_argument("--background", type=_rgb, help="r,g,b in [0, 1]")
    sp.add_argument("--depth-scale", type=float, help="16-bit PNG depth scale (default 10.0)")
    sp.add_argument("--out", required=True)
    common(sp, seed=False)
    sp.set_defaults(func=cmd_augment)

    sp = sub.add_parser("embed", help="embed boxes of a frames directory")
    sp.add_argument("--frames", required=True)
    sp.add_argument("--boxes", required=True, help="detections CSV")
    sp.add_argument("--out", required=True)
    sp.add_argument("--sequence-id", help="sequence id hashed into records (default: the bundle's meta.json, else its dir name)")
    sp.add_argument("--projection", help="trained projection head (.npz)")
    common(sp, seed=False)
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("track", help="secondary association over primary tracks")
    sp.add_argument("--dets", required=True, help="tracks or raw detections CSV")
    sp.add_argument("--frames", help="frames directory (enables appearance checks)")
    sp.add_argument("--anchor", required=True, help="x,y,w,h of the target in frame 1")
    sp.add_argument("--out", required=True, help="predictions file")
    sp.add_argument("--audit", help="per-frame cascade log")
    sp.add_argument("--tracks-out", help="write primary tracks CSV")
    sp.add_argument("--sequence-id")
    sp.add_argument("--n-frames", type=int, help="sequence length when no frames directory is given")
    common(sp)
    assoc_flags(sp)
    sp.set_defaults(func=cmd_track)

    sp = sub.add_parser("eval", help="metrics for a predictions file")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--out", required=True, help="report JSON")
    sp.add_argument("--curves", help="directory for curve CSVs")
    sp.add_argument("--expect", help="expected report JSON; mismatching fields are listed and exit 2")
    common(sp, seed=False)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("run", help="track + eval on bundle directories")
    sp.add_argument("--bundle", required=True, nargs="+")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--jobs", type=int, default=1, help="worker processes across bundles")
    sp.add_argument("--no-timings", action="store_true", help="skip timings.json")
    sp.add_argument("--expect", help="expected report JSON; mismatching fields are listed and exit 2")
    common(sp)
    assoc_flags(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("synth", help="generate synthetic bundles")
    sp.add_argument("--out", required=True)
    sp.add_argument("--scenario", choices=("occlusion", "clean", "example", "corpus"), default="occlusion")
    sp.add_argument("--count", type=int, help="number of sequences")
    sp.add_argument("--frames", type=int, help="frames per sequence")
    sp.add_argument("--with-depth", action="store_true", help="also write linear-ramp depth maps")
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train-encoder", help="contrastive training of the projection head")
    sp.add_argument("--corpus", required=True, help="directory of bundle directories")
    sp.add_argument("--epochs", type=int, default=50)
    sp.add_argument("--lr", type=float, default=1e-2)
    sp.add_argument("--batch-size", type=int, default=8)
    sp.add_argument("--tau", type=float, default=0.1)
    sp.add_argument("--denominator", choices=("negatives", "include-positives"), default="negatives")
    sp.add_argument("--positives-as-negatives", action="store_true",
                    help="also use other sequences' positives as negatives")
    sp.add_argument("--loss-csv", help="write epoch,loss here instead of stdout")
    sp.add_argument("--out", required=True, help="projection parameters (.npz)")
    common(sp)
    sp.set_defaults(func=cmd_train_encoder)

    sp = sub.add_parser("gradcheck", help="analytic vs finite-difference loss gradients")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--repeats", type=int, default=9, help="batches per (tau, K) combination")
    sp.add_argument("--tolerance", type=float, default=1e-4)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    from manta.embedder import EmbeddingError
    from manta.formats import FormatError
    from manta.imageio import ImageFormatError
    from manta.metrics import EmptySequenceError, LengthMismatchError
    from manta.physics import DimensionMismatchError, EmptyCropError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"manta: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ImageFormatError, EmbeddingError, FileNotFoundError, IsADirectoryError,
            LengthMismatchError, EmptySequenceError, DimensionMismatchError, EmptyCropError, ValueError,
            OSError) as exc:
        print(f"manta: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"manta: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
