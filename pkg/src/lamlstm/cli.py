"""Command-line entry point: one subcommand per pipeline stage.

    lamlstm gen      --config C --out DIR
    lamlstm train    --config C --data MANIFEST --out CKPT
    lamlstm predict  --ckpt CKPT --data MANIFEST [--flip] --out LOGITS.csv
    lamlstm fuse     --orig A.csv --flip B.csv --out SCORES.csv
    lamlstm ensemble --in S1.csv S2.csv ... --out SCORES.csv
    lamlstm smooth   --in SCORES.csv --window W --out SCORES.csv
    lamlstm eval     --scores SCORES.csv --data MANIFEST --out METRICS.json
    lamlstm pipeline --config C --out DIR
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import data, inference, metrics, training
from .config import load_config

log = logging.getLogger("lamlstm")


def _history_path(ckpt) -> Path:
    ckpt = Path(ckpt)
    return ckpt.with_name(ckpt.name + ".history.json")


def cmd_gen(args):
    cfg = load_config(args.config, args.seed)
    tracks = data.generate_synthetic(cfg.data, cfg.seed)
    manifest = data.write_dataset(tracks, args.out)
    log.info("wrote %d tracks, manifest %s", len(tracks) // 2, manifest)


def _train(cfg, manifest, out, workers, epochs=None):
    entries = data.read_manifest(manifest)
    tcfg = cfg.train_config(workers=workers, **({"epochs": epochs} if epochs else {}))
    tracks = data.load_tracks(entries)
    if tcfg.use_flip_augmentation:
        tracks += data.load_tracks(entries, flipped=True, split="train")
    if not tracks:
        raise ValueError("manifest lists no tracks")
    model_cfg = cfg.model_config(tracks[0].dim)
    params, history = training.train(tcfg, model_cfg, tracks)
    training.save_checkpoint(params, out)
    training.write_history(history, _history_path(out))
    return params


def cmd_train(args):
    cfg = load_config(args.config, args.seed)
    _train(cfg, args.data, args.out, args.workers, args.epochs)


def _split_arg(split):
    return None if split == "all" else split


def cmd_predict(args):
    params, _ = training.load_checkpoint(args.ckpt)
    tracks = data.load_tracks(args.data, flipped=args.flip, split=_split_arg(args.split))
    series = inference.predict_tracks(params, tracks, args.workers)
    inference.write_logits_csv(series, args.out)


def _by_id(series):
    return {s.track_id: s for s in series}


def cmd_fuse(args):
    orig = _by_id(inference.read_logits_csv(args.orig))
    flip = _by_id(inference.read_logits_csv(args.flip))
    if set(orig) != set(flip):
        diff = sorted(set(orig) ^ set(flip))
        raise ValueError(f"original and flipped logits cover different tracks: {diff[:5]}")
    inference.write_scores_csv([inference.tta_fuse(orig[k], flip[k]) for k in orig], args.out)


def _ensemble_files(paths):
    members = [_by_id(inference.read_scores_csv(p)) for p in paths]
    ids = set(members[0])
    for p, m in zip(paths[1:], members[1:]):
        if set(m) != ids:
            diff = sorted(ids ^ set(m))
            raise ValueError(f"{p}: track set differs from {paths[0]} ({diff[:5]})")
    return [inference.ensemble_mean([m[k] for m in members]) for k in sorted(ids)]


def cmd_ensemble(args):
    inference.write_scores_csv(_ensemble_files(args.inputs), args.out)


def cmd_smooth(args):
    series = inference.read_scores_csv(args.input)
    inference.write_scores_csv([inference.median_smooth(s, args.window) for s in series], args.out)


def cmd_eval(args):
    series = inference.read_scores_csv(args.scores)
    truth = data.load_tracks(args.data)
    m = metrics.evaluate(series, truth)
    m.write(args.out)
    print(m.to_json(), end="")


def cmd_pipeline(args):
    cfg = load_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inf = cfg.inference

    tracks = data.generate_synthetic(cfg.data, cfg.seed)
    manifest = data.write_dataset(tracks, out / "data")
    params = _train(cfg, manifest, out / "model.lamc", args.workers, args.epochs)

    entries = data.read_manifest(manifest)
    split = _split_arg(inf.split)
    test = data.load_tracks(entries, split=split)
    logits = inference.predict_tracks(params, test, args.workers)
    inference.write_logits_csv(logits, out / "logits.csv")
    if inf.tta:
        test_flip = data.load_tracks(entries, flipped=True, split=split)
        logits_flip = inference.predict_tracks(params, test_flip, args.workers)
        inference.write_logits_csv(logits_flip, out / "logits_flip.csv")
        flip_by_id = {s.track_id: s for s in logits_flip}
        scores = [inference.tta_fuse(r, flip_by_id[r.track_id]) for r in logits]
    else:
        scores = [r.scores() for r in logits]
    inference.write_scores_csv(scores, out / "scores.csv")

    def smooth(series):
        return [inference.median_smooth(s, inf.smooth_window) for s in series]

    members = [out / "scores.csv", *[Path(p) for p in inf.ensemble]]
    if inf.smooth_before_ensemble:
        smoothed_members = []
        for k, p in enumerate(members):
            sp = out / f"member{k}_smoothed.csv"
            inference.write_scores_csv(smooth(inference.read_scores_csv(p)), sp)
            smoothed_members.append(sp)
        final = _ensemble_files(smoothed_members)
    else:
        ensembled = _ensemble_files(members)
        inference.write_scores_csv(ensembled, out / "scores_ensemble.csv")
        final = smooth(ensembled)
    inference.write_scores_csv(final, out / "scores_final.csv")

    truth = data.load_tracks(entries, split=split)
    metrics.evaluate(_ensemble_files(members), truth).write(out / "metrics_unsmoothed.json")
    m = metrics.evaluate(final, truth)
    m.write(out / "metrics.json")
    print(m.to_json(), end="")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lamlstm", description="Looking-at-me Bi-LSTM pipeline")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        sp = sub.add_parser(name, help=help)
        sp.set_defaults(func=fn)
        return sp

    def seed_flags(sp):
        sp.add_argument("--seed", type=int, default=None, help="override config and LAM_SEED")

    sp = add("gen", cmd_gen, "generate a synthetic dataset")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    seed_flags(sp)

    sp = add("train", cmd_train, "train a model")
    sp.add_argument("--config", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--workers", type=int, default=1)
    seed_flags(sp)

    sp = add("predict", cmd_predict, "per-frame logits for manifest tracks")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--flip", action="store_true", help="use the flipped streams")
    sp.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    sp.add_argument("--out", required=True)
    sp.add_argument("--workers", type=int, default=1)

    sp = add("fuse", cmd_fuse, "flip TTA: average original and flipped probabilities")
    sp.add_argument("--orig", required=True)
    sp.add_argument("--flip", required=True)
    sp.add_argument("--out", required=True)

    sp = add("ensemble", cmd_ensemble, "per-frame mean of score files")
    sp.add_argument("--in", dest="inputs", nargs="+", required=True)
    sp.add_argument("--out", required=True)

    sp = add("smooth", cmd_smooth, "median-filter score series")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--window", type=int, required=True)
    sp.add_argument("--out", required=True)

    sp = add("eval", cmd_eval, "mAP and accuracy against manifest labels")
    sp.add_argument("--scores", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)

    sp = add("pipeline", cmd_pipeline, "run every stage on synthetic data")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--workers", type=int, default=1)
    seed_flags(sp)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
