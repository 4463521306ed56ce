"""Command-line entry point: ``a2net <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from a2net.config import ConfigError, ExperimentConfig, apply_overrides, load_config, schema
from a2net.data import DataError, SynthSpec, generate_synthetic, load_dataset, make_windows, save_dataset
from a2net.evaluation import PRESETS, full_report, pr_curve
from a2net.inference import read_jsonl, write_jsonl
from a2net.network import load_params
from a2net.pipeline import RawDetections, detect_videos, fuse, ground_truth
from a2net.training import BRANCH_HEADS, NumericalFailure, checkpoint_branch, train

logger = logging.getLogger("a2net")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

CONFIG_FILE = "config.txt"
CHECKPOINT = "last.ckpt"


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ helpers


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    return apply_overrides(cfg, getattr(args, "set", None) or [])


def _run_config(run_dir: Path) -> ExperimentConfig:
    path = Path(run_dir) / CONFIG_FILE
    if not path.exists():
        raise UsageError(f"{run_dir} is not a run directory (no {CONFIG_FILE})")
    return load_config(path)


def content_hash(paths: Sequence[Path], text: str = "") -> str:
    """sha256 over a config text and the bytes of every input file, in order."""
    h = hashlib.sha256(text.encode())
    for p in paths:
        h.update(str(Path(p).name).encode())
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def _manifest_inputs(manifest: Path) -> List[Path]:
    doc = json.loads(Path(manifest).read_text())
    return [Path(manifest)] + [Path(manifest).parent / v["features"] for v in doc.get("videos", [])]


def _load_checkpoint(path: Path, cfg: ExperimentConfig):
    try:
        params, extra = load_params(path, cfg.model_config())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot use checkpoint {path}: {exc}") from exc
    return params, checkpoint_branch(extra) or cfg.branch


def _checkpoint_and_config(run: Path):
    run = Path(run)
    if run.is_dir():
        return run / CHECKPOINT, _run_config(run)
    return run, _run_config(run.parent)


# --------------------------------------------------------------- subcommands


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    if not (args.data or cfg.train_manifest):
        raise UsageError("train needs a dataset manifest (--data or train_manifest)")
    manifest = Path(args.data or cfg.train_manifest)
    cfg = cfg.replace(train_manifest=str(manifest))
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    records = load_dataset(manifest)
    windows = [
        w for r in records
        for w in make_windows(r, cfg.window_frames, cfg.train_stride_frames, True, cfg.min_fraction)
    ]
    if not windows:
        raise DataError(f"{manifest}: no training windows contain an annotated action")

    resume = run_dir / CHECKPOINT if args.resume else None
    if resume is not None and not resume.exists():
        raise UsageError(f"--resume given but {resume} does not exist")
    (run_dir / CONFIG_FILE).write_text(cfg.to_text())
    (run_dir / "seed").write_text(f"{cfg.seed}\n")
    (run_dir / "inputs.sha256").write_text(content_hash(_manifest_inputs(manifest), cfg.to_text()) + "\n")

    log_mode = "a" if resume is not None else "w"
    with open(run_dir / "train_log.jsonl", log_mode) as log_fh:
        if resume is None:
            log_fh.write(json.dumps({"event": "start", "overrides": cfg.overrides(), "windows": len(windows)}) + "\n")

        def log(rec: dict) -> None:
            log_fh.write(json.dumps(rec) + "\n")

        try:
            trainer = train(cfg, windows, run_dir=run_dir, resume=resume, log=log)
        except NumericalFailure as exc:
            log_fh.write(json.dumps({"event": "abort", "reason": str(exc)}) + "\n")
            print(f"error: {exc}; last good checkpoint kept in {run_dir / CHECKPOINT}", file=sys.stderr)
            return EXIT_NUMERIC
    _write_loss_csv(run_dir / "train_log.jsonl", run_dir / "loss_curve.csv")
    last = trainer.history[-1].mean_total if trainer.history else float("nan")
    print(f"trained {trainer.epoch} epochs, final mean loss {last:.4f}; run directory {run_dir}")
    return EXIT_OK


def _write_loss_csv(log_path: Path, csv_path: Path) -> None:
    """Per-epoch mean of every loss term, one row per epoch."""
    terms = ("total", "af_cls", "af_reg", "ab_cls", "ab_overlap", "ab_reg")
    sums, counts = {}, {}
    for line in log_path.read_text().splitlines():
        rec = json.loads(line)
        if "epoch" not in rec:
            continue
        e = rec["epoch"]
        acc = sums.setdefault(e, dict.fromkeys(terms, 0.0))
        for t in terms:
            acc[t] += rec[t]
        counts[e] = counts.get(e, 0) + 1
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("epoch",) + terms)
        for e in sorted(sums):
            w.writerow([e] + [sums[e][t] / counts[e] for t in terms])


def cmd_infer(args) -> int:
    ckpt, cfg = _checkpoint_and_config(args.checkpoint)
    cfg = apply_overrides(cfg, args.set or [])
    if args.lam is not None:
        cfg = cfg.replace(lam=args.lam)
    if args.nms is not None:
        cfg = cfg.replace(nms_threshold=args.nms)
    params, branch = _load_checkpoint(ckpt, cfg)
    records = load_dataset(args.data)
    dets = detect_videos(
        records, params, cfg.model_config(), cfg.inference_config(), cfg.mode,
        cfg.window_frames, cfg.eval_stride_frames, BRANCH_HEADS[branch],
    )
    write_jsonl(args.out, dets)
    print(f"{len(dets)} detections from {len(records)} videos written to {args.out}")
    return EXIT_OK


def cmd_fuse(args) -> int:
    models = []
    for path, want in ((args.af, "af_only"), (args.ab, "ab_only")):
        ckpt, cfg = _checkpoint_and_config(path)
        params, branch = _load_checkpoint(ckpt, cfg)
        if branch != want:
            raise DataError(f"{path}: fuse expects an {want} model, checkpoint was trained as {branch}")
        models.append((params, cfg))
    records = load_dataset(args.data)
    inf = models[0][1].inference_config()
    raws = [
        RawDetections(records, p, c.model_config(), inf, c.mode, c.window_frames, c.eval_stride_frames, BRANCH_HEADS[b])
        for (p, c), b in zip(models, ("af_only", "ab_only"))
    ]
    dets = fuse(raws[0], raws[1], inf)
    write_jsonl(args.out, dets)
    print(f"{len(dets)} fused detections written to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        dets = read_jsonl(args.detections)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    records = load_dataset(args.data)
    gts = ground_truth(records)
    unknown = sorted({d.video_id for d in dets if d.video_id not in gts}, key=str)
    if unknown:
        print(f"error: detections reference unknown video ids: {', '.join(map(str, unknown))}", file=sys.stderr)
        dets = [d for d in dets if d.video_id in gts]
    report = full_report(dets, gts, args.preset, args.interpolation)
    report.settings.update({"preset": args.preset, "interpolation": args.interpolation, "detections": str(args.detections)})
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "report.txt").write_text(report.to_table())
    (out / "report.csv").write_text(report.to_csv())
    if args.pr_curves:
        _write_pr_curves(dets, gts, report.thresholds, out / "pr_curves.csv")
    print(report.to_table(), end="")
    return EXIT_DATA if unknown else EXIT_OK


def _write_pr_curves(dets, gts, thresholds, path: Path) -> None:
    labels = sorted({g.label for segs in gts.values() for g in segs})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("label", "tiou", "rank", "precision", "recall"))
        for label in labels:
            for t in thresholds:
                prec, rec = pr_curve(dets, gts, label, t)
                for i, (p, r) in enumerate(zip(prec, rec)):
                    w.writerow((label, t, i + 1, p, r))


def cmd_synth(args) -> int:
    mixture = tuple(float(x) for x in args.mixture.split(","))
    spec = SynthSpec(
        num_videos=args.num_videos,
        num_classes=args.num_classes,
        feature_dim=args.feature_dim,
        mixture=mixture,
        video_seconds=args.video_seconds,
        snr=args.snr,
        actions_per_minute=args.actions_per_minute,
        seed=args.seed,
        template_seed=args.template_seed,
    )
    records = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = save_dataset(records, out / "manifest.json")
    n = sum(len(r.annotations) for r in records)
    print(f"{len(records)} videos, {n} actions written to {manifest}")
    return EXIT_OK


def cmd_report(args) -> int:
    from a2net.experiments import acceptance_setup, run_seed, summarize

    corpus, cfg = acceptance_setup()
    cfg = apply_overrides(cfg, args.set or [])
    seeds = [int(s) for s in args.seeds.split(",")]
    results = []
    for s in seeds:
        results.append(run_seed(cfg, corpus, s))
        print(f"seed {s} done in {results[-1].seconds:.0f} s", file=sys.stderr)
    summary = summarize(results)
    text = summary.to_table() + "".join(f"{k}: {'yes' if v else 'no'}\n" for k, v in summary.claims().items())
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "complementarity.txt").write_text(text)
        (out / "complementarity.json").write_text(
            json.dumps({"config": cfg.overrides(), "seeds": [r.to_dict() for r in results]}, indent=2)
        )
    return EXIT_OK


def cmd_schema(args) -> int:
    print(schema(), end="")
    return EXIT_OK


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="a2net", description="Dual-head temporal action localization on feature sequences.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add_set(sp):
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    sp = sub.add_parser("train", help="train a model into a run directory")
    sp.add_argument("--config", help="key = value config file")
    sp.add_argument("--data", help="training manifest (overrides train_manifest)")
    sp.add_argument("--run-dir", required=True)
    sp.add_argument("--resume", action="store_true", help="continue from the run directory's checkpoint")
    add_set(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", help="detect actions with a trained model")
    sp.add_argument("--checkpoint", required=True, help="run directory or checkpoint file inside one")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True, help="detections JSONL")
    sp.add_argument("--lam", type=float)
    sp.add_argument("--nms", type=float)
    add_set(sp)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("fuse", help="pool an AF-only and an AB-only model, then suppress")
    sp.add_argument("--af", required=True, help="AF-only run directory or checkpoint")
    sp.add_argument("--ab", required=True, help="AB-only run directory or checkpoint")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_fuse)

    sp = sub.add_parser("eval", help="score detections against a manifest's annotations")
    sp.add_argument("--detections", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--preset", choices=sorted(PRESETS), default="thumos")
    sp.add_argument("--interpolation", choices=("envelope", "11point"), default="envelope")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--pr-curves", action="store_true", help="also write per-class PR curves as CSV")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("synth", help="generate a synthetic corpus")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--num-videos", type=int, default=20)
    sp.add_argument("--num-classes", type=int, default=5)
    sp.add_argument("--feature-dim", type=int, default=32)
    sp.add_argument("--mixture", default="0.3,0,0.2,0.2,0.3", help="ES,S,M,L,EL weights")
    sp.add_argument("--video-seconds", type=float, default=60.0)
    sp.add_argument("--snr", type=float, default=4.0)
    sp.add_argument("--actions-per-minute", type=float, default=10.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--template-seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("report", help="branch-ablation, fuse and lambda-sweep tables on synthetic data")
    sp.add_argument("--seeds", default="0,1,2")
    sp.add_argument("--out", help="directory for text and JSON output")
    add_set(sp)
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("schema", help="list config keys, types and defaults")
    sp.set_defaults(func=cmd_schema)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
