"""Training loop, k-fold cross-validation and inference."""

from __future__ import annotations

import csv
import logging
import math
import queue
import threading
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import metrics
from .checkpoint import Checkpoint, save_checkpoint
from .config import TrainConfig, from_dict, to_dict
from .head import DAFNet, NetworkConfig
from .loss import total_loss
from .volume_data import (DatasetManifest, Mask, Volume, apply_augment, load_case, normalize,
                          sample_augment)

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("iteration", "epoch", "total_loss", "dice_loss_final", "bce_loss_final")

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


class TrainingDivergedError(RuntimeError):
    pass


def build_model(net_cfg: NetworkConfig, seed=0, dtype="float32") -> DAFNet:
    """Construct a network whose initial weights depend only on ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = DAFNet(net_cfg)
    return model.to(_DTYPES[dtype])


def model_from_checkpoint(ckpt: Checkpoint, dtype="float32") -> DAFNet:
    cfg = from_dict(TrainConfig, ckpt.config) if ckpt.config else TrainConfig()
    model = DAFNet(cfg.network).to(_DTYPES[dtype])
    ckpt.load_into(model)
    model.eval()
    return model


def derive_seed(*parts) -> int:
    """Stable 32-bit seed from ints and strings."""
    words = [zlib.crc32(p.encode("utf-8")) if isinstance(p, str) else int(p) & 0xFFFFFFFF for p in parts]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


@dataclass
class Case:
    case_id: str
    image: np.ndarray   # normalized float32
    mask: np.ndarray    # uint8


def prepare_cases(train_set) -> list:
    """Load and normalize cases from a manifest or an iterable of (Volume, Mask)."""
    cases = []
    if isinstance(train_set, DatasetManifest):
        train_set.check_files()
        pairs = (load_case(e) for e in train_set.entries)
    else:
        pairs = iter(train_set)
    for i, (v, m) in enumerate(pairs):
        if v.shape != m.shape:
            raise ValueError(f"case {v.id or i}: volume/mask shape mismatch")
        cases.append(Case(v.id or m.id or f"case{i}", normalize(v).data, m.data.astype(np.uint8)))
    if not cases:
        raise ValueError("training set is empty")
    return cases


def _batch_plan(cfg: TrainConfig, cases, epoch):
    order = np.random.default_rng(derive_seed(cfg.seed, "order", epoch)).permutation(len(cases))
    for start in range(0, len(order), cfg.batch_size):
        yield [int(i) for i in order[start:start + cfg.batch_size]]


def _make_batch(cfg: TrainConfig, cases, idxs, epoch, rotations, flips=True):
    imgs, msks = [], []
    for i in idxs:
        c = cases[i]
        img, msk = c.image, c.mask
        if cfg.augment:
            p = sample_augment(derive_seed(cfg.seed, c.case_id, epoch), flips, rotations)
            img, msk = apply_augment(img, p), apply_augment(msk, p)
        imgs.append(img)
        msks.append(msk)
    shapes = {a.shape for a in imgs}
    if len(shapes) != 1:
        raise ValueError(f"cannot batch volumes of different shapes {sorted(shapes)}")
    x = torch.from_numpy(np.stack(imgs)[:, None].astype(np.float32))
    g = torch.from_numpy(np.stack(msks)[:, None].astype(np.float32))
    return x, g


def _prefetch(cfg, cases, epoch, rotations, flips=True):
    """Yield batches built by a worker thread through a bounded queue.

    Augmentation seeds depend only on (seed, case id, epoch), so prefetching
    does not change results.
    """
    plan = list(_batch_plan(cfg, cases, epoch))
    if cfg.prefetch_depth <= 0:
        for idxs in plan:
            yield _make_batch(cfg, cases, idxs, epoch, rotations, flips)
        return
    q = queue.Queue(maxsize=cfg.prefetch_depth)
    stop = threading.Event()
    sentinel = object()

    def worker():
        try:
            for idxs in plan:
                if stop.is_set():
                    return
                q.put(_make_batch(cfg, cases, idxs, epoch, rotations, flips))
        except BaseException as exc:  # re-raised in the consumer
            q.put(exc)
            return
        q.put(sentinel)

    t = threading.Thread(target=worker, daemon=True)
    t.start()
    try:
        while True:
            item = q.get()
            if item is sentinel:
                break
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()
        while t.is_alive():
            try:
                q.get_nowait()
            except queue.Empty:
                t.join(timeout=0.01)


@dataclass
class TrainResult:
    model: DAFNet
    checkpoint: Checkpoint
    checkpoint_path: Path | None
    curve: list = field(default_factory=list)
    epoch_losses: list = field(default_factory=list)


def _rotations_for(cfg: TrainConfig, cases, rotations):
    if cfg.batch_size > 1 and any(c.image.shape[0] != c.image.shape[1] for c in cases):
        # odd quarter turns swap W and H; keep batch shapes uniform
        return tuple(r for r in rotations if r % 2 == 0) or (0,)
    return tuple(rotations)


def train(cfg: TrainConfig, train_set, rotations=(0, 1, 2, 3), callback=None, flips=True) -> TrainResult:
    """Minimize the deeply supervised loss with Adam over shuffled cases.

    ``callback(iteration, epoch, model, record)`` is invoked after every step.
    """
    cases = prepare_cases(train_set)
    dtype = _DTYPES[cfg.dtype]
    model = build_model(cfg.network, cfg.seed, cfg.dtype)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=tuple(cfg.betas))
    rotations = _rotations_for(cfg, cases, rotations)
    steps_per_epoch = math.ceil(len(cases) / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    curve_fh = writer = None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        curve_fh = open(ckpt_dir / "curve.csv", "w", newline="", encoding="utf-8")
        writer = csv.writer(curve_fh)
        writer.writerow(CURVE_COLUMNS)

    curve, epoch_losses = [], []
    ckpt, ckpt_path = None, None
    it = 0
    snapshot = to_dict(cfg)
    try:
        for epoch in range(cfg.epochs):
            losses = []
            for x, g in _prefetch(cfg, cases, epoch, rotations, flips):
                if cfg.lr_schedule == "cosine":
                    for group in opt.param_groups:
                        group["lr"] = cfg.lr * 0.5 * (1 + math.cos(math.pi * it / total_steps))
                x, g = x.to(dtype), g.to(dtype)
                opt.zero_grad(set_to_none=True)
                bundle = model(x)
                loss, parts = total_loss(bundle, g, cfg.loss, cfg.bce_reduction, return_parts=True)
                value = float(loss.detach())
                if not math.isfinite(value):
                    raise TrainingDivergedError(
                        f"non-finite loss {value} at iteration {it} (epoch {epoch}); "
                        f"per-signal losses: {parts}")
                loss.backward()
                opt.step()
                rec = {"iteration": it, "epoch": epoch, "total_loss": value,
                       "dice_loss_final": parts["dice_final"], "bce_loss_final": parts["bce_final"]}
                curve.append(rec)
                losses.append(value)
                if writer is not None:
                    writer.writerow([rec[k] for k in CURVE_COLUMNS])
                if callback is not None:
                    callback(it, epoch, model, rec)
                it += 1
            epoch_losses.append(float(np.mean(losses)))
            log.info("epoch %d/%d mean loss %.4f", epoch + 1, cfg.epochs, epoch_losses[-1])
            last = epoch == cfg.epochs - 1
            if ckpt_dir is not None and (last or (cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0)):
                ckpt = Checkpoint.capture(model, opt, epoch + 1, snapshot)
                ckpt_path = save_checkpoint(ckpt_dir / f"epoch_{epoch + 1:03d}.ckpt", ckpt)
                if curve_fh is not None:
                    curve_fh.flush()
    finally:
        if curve_fh is not None:
            curve_fh.close()
    if ckpt is None:
        ckpt = Checkpoint.capture(model, opt, cfg.epochs, snapshot)
    model.eval()
    return TrainResult(model, ckpt, ckpt_path, curve, epoch_losses)


@dataclass
class Prediction:
    mask: Mask
    probabilities: np.ndarray
    seconds: float
    attention_maps: list | None = None


def predict_volume(model, v: Volume, threshold=0.5, return_attention=False) -> Prediction:
    """Normalize, run the network and binarize ``final_pred`` with ``p >= threshold``.

    ``model`` may be a :class:`DAFNet` or a :class:`Checkpoint`.
    """
    if isinstance(model, Checkpoint):
        model = model_from_checkpoint(model)
    model.eval()
    dtype = next(model.parameters()).dtype
    t0 = time.perf_counter()
    x = torch.from_numpy(normalize(v).data[None, None]).to(dtype)
    with torch.no_grad():
        bundle = model(x, return_attention=return_attention)
    prob = bundle.final_pred[0, 0].cpu().numpy()
    seconds = time.perf_counter() - t0
    mask = Mask((prob >= threshold).astype(np.uint8), v.spacing, v.id)
    maps = None
    if return_attention:
        maps = [a[0].cpu().numpy() for a in bundle.attention_maps]
    return Prediction(mask, prob, seconds, maps)


@dataclass
class CrossvalResult:
    fold_reports: dict            # fold -> list of MetricsReport
    pooled: list                  # all held-out reports, one per case
    table: str
    train_results: dict = field(default_factory=dict)


def crossval(cfg: TrainConfig, manifest: DatasetManifest, rotations=(0, 1, 2, 3),
             keep_models=False, flips=True) -> CrossvalResult:
    """Train on k-1 folds, evaluate the held-out fold, for every fold."""
    if manifest.folds is None:
        raise ValueError("crossval needs a manifest with a fold assignment")
    fold_ids = sorted(set(manifest.folds.values()))
    fold_reports, pooled, results = {}, [], {}
    for fold in fold_ids:
        train_set, test_set = manifest.split(fold)
        if len(train_set) == 0 or len(test_set) == 0:
            raise ValueError(f"fold {fold} has an empty train or test partition")
        overlap = set(train_set.case_ids) & set(test_set.case_ids)
        assert not overlap, overlap
        fcfg = TrainConfig(**{**{k: getattr(cfg, k) for k in cfg.__dataclass_fields__},
                              "seed": derive_seed(cfg.seed, "fold", fold),
                              "checkpoint_dir": (str(Path(cfg.checkpoint_dir) / f"fold{fold}")
                                                 if cfg.checkpoint_dir else "")})
        log.info("fold %d: %d train / %d test cases", fold, len(train_set), len(test_set))
        res = train(fcfg, train_set, rotations, flips=flips)
        reports = []
        for entry in test_set.entries:
            v, m = load_case(entry)
            pred = predict_volume(res.model, v, cfg.threshold)
            reports.append(metrics.evaluate_case(pred.mask, m, entry.case_id))
        fold_reports[fold] = reports
        pooled.extend(reports)
        if keep_models:
            results[fold] = res
    columns = {f"fold{f}": metrics.aggregate(r) for f, r in fold_reports.items()}
    columns["pooled"] = metrics.aggregate(pooled)
    return CrossvalResult(fold_reports, pooled, metrics.format_table(columns), results)
