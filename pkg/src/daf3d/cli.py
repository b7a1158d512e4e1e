"""Command line entry point.

Value precedence: built-in defaults < ``--config`` file < command-line flags.
Every command writes the fully resolved configuration to
``<out>/config.resolved.ini``.

Exit codes: 0 success, 1 runtime failure, 2 argument or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import metrics, stats
from .checkpoint import load_checkpoint
from .config import ConfigError, ExperimentConfig, load_config, save_config
from .trainer import TrainingDivergedError, crossval, derive_seed, model_from_checkpoint, \
    predict_volume, train
from .volume_data import (DatasetManifest, ManifestEntry, PhantomSpecError, VolumeFormatError,
                          load_case, load_volume, make_folds, read_manifest, save_mask, save_volume,
                          synth_phantom, Volume, write_manifest, write_raw)

log = logging.getLogger("daf3d")


class UsageError(Exception):
    """Bad arguments or configuration (exit code 2)."""


def _common(p):
    p.add_argument("--config", help="experiment config file (INI)")
    p.add_argument("--seed", type=int, help="global seed (overrides train.seed)")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="daf3d", description="3D attention-guided FPN segmentation: data, training, evaluation.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="generate synthetic phantom volumes and a manifest")
    _common(p)
    p.add_argument("--count", type=int, required=True, help="number of phantom cases")
    p.add_argument("--format", choices=("nii.gz", "nii", "raw"), default="nii.gz")

    p = sub.add_parser("train", help="train on every case of a manifest")
    _common(p)
    p.add_argument("--manifest", help="training manifest CSV (overrides data.manifest)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)

    p = sub.add_parser("crossval", help="k-fold cross-validation")
    _common(p)
    p.add_argument("--manifest", help="manifest CSV (overrides data.manifest)")
    p.add_argument("--folds", type=int, help="fold count when the manifest carries none")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("predict", help="segment volumes with a trained checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", nargs="+", help="volume file(s)")
    src.add_argument("--manifest", help="manifest CSV whose volumes are segmented")
    p.add_argument("--threshold", type=float)
    p.add_argument("--dump-attention", metavar="DIR",
                   help="write the four attention maps (channel mean) as raw volumes")

    p = sub.add_parser("evaluate", help="score predicted masks against ground truth")
    _common(p)
    p.add_argument("--manifest", required=True, help="ground-truth manifest CSV")
    p.add_argument("--pred", required=True,
                   help="prediction manifest CSV (mask_path column holds predicted masks)")

    p = sub.add_parser("stats", help="rank-sum tests and ANOVA across evaluation CSVs")
    _common(p)
    p.add_argument("csv", nargs="+", help="evaluation CSVs; the first is the reference method")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    train_over = {}
    if args.seed is not None:
        train_over["seed"] = args.seed
    for key in ("epochs", "lr"):
        if getattr(args, key, None) is not None:
            train_over[key] = getattr(args, key)
    if train_over:
        cfg.train = dataclasses.replace(cfg.train, **train_over)
    if getattr(args, "manifest", None) and args.command in ("train", "crossval"):
        cfg.data = dataclasses.replace(cfg.data, manifest=args.manifest)
    if getattr(args, "folds", None) is not None:
        cfg.data = dataclasses.replace(cfg.data, folds=args.folds)
    if getattr(args, "threshold", None) is not None:
        cfg.eval = dataclasses.replace(cfg.eval, threshold=args.threshold)
    if getattr(args, "dump_attention", None):
        cfg.eval = dataclasses.replace(cfg.eval, dump_attention=args.dump_attention)
    if args.out:
        cfg.output = dataclasses.replace(cfg.output, dir=args.out)
    return cfg


def _out_dir(cfg, create=True):
    out = Path(cfg.output.dir)
    if create:
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise UsageError(f"cannot create output directory {out}: {exc}") from exc
    return out


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_synth(args, cfg):
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    out = _out_dir(cfg)
    try:
        cfg.data.phantom.validate()
    except PhantomSpecError as exc:
        raise UsageError(f"invalid [data.phantom] config: {exc}") from exc
    ext = "." + args.format
    entries = []
    try:
        (out / "cases").mkdir(exist_ok=True)
        for i in range(args.count):
            spec = dataclasses.replace(cfg.data.phantom, seed=derive_seed(cfg.seed, "phantom", i))
            v, m = synth_phantom(spec)
            cid = f"case{i:03d}"
            vp, mp = out / "cases" / f"{cid}_img{ext}", out / "cases" / f"{cid}_seg{ext}"
            save_volume(vp, v)
            save_mask(mp, m)
            entries.append(ManifestEntry(cid, str(vp), str(mp)))
        manifest = DatasetManifest(entries)
        if len(entries) >= max(cfg.data.folds, 2):
            manifest = make_folds(manifest, cfg.data.folds, derive_seed(cfg.seed, "folds"))
        write_manifest(out / "manifest.csv", manifest)
        save_config(out / "config.resolved.ini", cfg)
    except OSError as exc:
        raise UsageError(f"cannot write to {out}: {exc}") from exc
    print(f"wrote {len(entries)} cases to {out / 'manifest.csv'}")
    return 0


def _manifest(cfg):
    if not cfg.data.manifest:
        raise UsageError("no manifest given (use --manifest or [data] manifest)")
    try:
        return read_manifest(cfg.data.manifest)
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"manifest not found: {cfg.data.manifest}") from exc


def _rotations(cfg):
    return tuple(cfg.data.augment_rotations) if cfg.data.augment_rotations else (0,)


def cmd_train(args, cfg):
    out = _out_dir(cfg)
    manifest = _manifest(cfg)
    tcfg = dataclasses.replace(cfg.train_config(), checkpoint_dir=str(out / "checkpoints"))
    save_config(out / "config.resolved.ini", cfg)
    res = train(tcfg, manifest, _rotations(cfg), flips=cfg.data.augment_flips)
    print(f"trained {tcfg.epochs} epochs on {len(manifest)} cases; "
          f"final mean loss {res.epoch_losses[-1]:.4f}")
    print(f"checkpoint: {res.checkpoint_path}")
    print(f"learning curve: {out / 'checkpoints' / 'curve.csv'}")
    return 0


def cmd_crossval(args, cfg):
    out = _out_dir(cfg)
    manifest = _manifest(cfg)
    if manifest.folds is None:
        manifest = make_folds(manifest, cfg.data.folds, derive_seed(cfg.seed, "folds"))
    tcfg = dataclasses.replace(cfg.train_config(), checkpoint_dir=str(out / "checkpoints"),
                               threshold=cfg.eval.threshold)
    save_config(out / "config.resolved.ini", cfg)
    res = crossval(tcfg, manifest, _rotations(cfg), flips=cfg.data.augment_flips)
    metrics.write_reports_csv(out / "crossval.csv", res.pooled)
    for fold, reps in res.fold_reports.items():
        metrics.write_reports_csv(out / f"crossval_fold{fold}.csv", reps)
    (out / "crossval_table.txt").write_text(res.table + "\n", encoding="utf-8")
    print(res.table)
    return 0


def cmd_predict(args, cfg):
    out = _out_dir(cfg)
    save_config(out / "config.resolved.ini", cfg)
    model = model_from_checkpoint(load_checkpoint(args.checkpoint))
    if args.manifest:
        items = [(e.case_id, e.volume_path) for e in read_manifest(args.manifest).entries]
    else:
        items = [(Path(p).name.split(".")[0], p) for p in args.input]
    entries = []
    dump = Path(cfg.eval.dump_attention) if cfg.eval.dump_attention else None
    for cid, path in items:
        v = load_volume(path)
        pred = predict_volume(model, v, cfg.eval.threshold, return_attention=dump is not None)
        prob_path = out / f"{cid}_prob.nii.gz"
        mask_path = out / f"{cid}_pred.nii.gz"
        save_volume(prob_path, Volume(pred.probabilities, v.spacing, cid))
        save_mask(mask_path, pred.mask)
        entries.append(ManifestEntry(cid, str(prob_path), str(mask_path)))
        print(f"{cid}: shape {v.shape} inference {pred.seconds:.3f} s "
              f"foreground {int(pred.mask.data.sum())} voxels")
        if dump is not None:
            for k, a in enumerate(pred.attention_maps, start=1):
                write_raw(dump / f"{cid}_attention_layer{k}.raw", a.mean(axis=0).astype(np.float32),
                          v.spacing)
    write_manifest(out / "predictions.csv", DatasetManifest(entries))
    return 0


def cmd_evaluate(args, cfg):
    out = _out_dir(cfg)
    save_config(out / "config.resolved.ini", cfg)
    gt = read_manifest(args.manifest)
    pred = {e.case_id: e for e in read_manifest(args.pred).entries}
    missing = [c for c in gt.case_ids if c not in pred]
    if missing:
        raise FileNotFoundError(f"no prediction for case(s) {missing}")
    reports = []
    for e in gt.entries:
        _, g = load_case(e)
        s = load_case(pred[e.case_id])[1]
        reports.append(metrics.evaluate_case(s, g, e.case_id))
    metrics.write_reports_csv(out / "evaluation.csv", reports)
    table = metrics.format_table({"method": metrics.aggregate(reports)})
    (out / "evaluation_table.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    print(f"per-case metrics: {out / 'evaluation.csv'}")
    return 0


def stats_report(paths):
    """Text report: rank-sum p-values of the first CSV vs each other, and ANOVA F."""
    sets = [metrics.read_reports_csv(p) for p in paths]
    names = [Path(p).stem for p in paths]
    lines = []
    if len(sets) >= 2:
        header = ["Metric"] + [f"{names[0]} vs {n}" for n in names[1:]]
        lines.append("Wilcoxon rank-sum p-values")
        lines.append("\t".join(header))
        for m in metrics.METRIC_NAMES:
            row = [m]
            ref = [getattr(r, m) for r in sets[0] if getattr(r, m) is not None]
            for other in sets[1:]:
                vals = [getattr(r, m) for r in other if getattr(r, m) is not None]
                try:
                    row.append(f"{stats.rank_sum_test(ref, vals).pvalue:.6g}")
                except ValueError:
                    row.append("n/a")
            lines.append("\t".join(row))
        lines.append("")
        lines.append("One-way ANOVA F")
        for m in metrics.METRIC_NAMES:
            groups = [[getattr(r, m) for r in s if getattr(r, m) is not None] for s in sets]
            try:
                res = stats.anova(groups)
                lines.append(f"{m}\tF={res.F:.6g}\tdf=({res.df_between},{res.df_within})\tp={res.pvalue:.6g}")
            except ValueError as exc:
                lines.append(f"{m}\tF=n/a\t({exc})")
    return "\n".join(lines)


def cmd_stats(args, cfg):
    if len(args.csv) < 2:
        raise UsageError("stats needs at least two evaluation CSVs")
    for p in args.csv:
        if not Path(p).exists():
            raise FileNotFoundError(f"no such CSV: {p}")
    text = stats_report(args.csv)
    print(text)
    if args.out:
        out = _out_dir(cfg)
        save_config(out / "config.resolved.ini", cfg)
        (out / "stats.txt").write_text(text + "\n", encoding="utf-8")
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "crossval": cmd_crossval,
            "predict": cmd_predict, "evaluate": cmd_evaluate, "stats": cmd_stats}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError, PhantomSpecError) as exc:
        print(f"daf3d {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDivergedError, OSError, VolumeFormatError, ValueError, RuntimeError) as exc:
        print(f"daf3d {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
