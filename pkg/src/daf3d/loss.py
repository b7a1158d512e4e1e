"""Hybrid Dice + binary cross-entropy loss over the deeply supervised outputs."""

from __future__ import annotations

from dataclasses import dataclass

import torch

DICE_EPS = 1e-7
PROB_CLAMP = 1e-7


@dataclass
class LossWeights:
    """Per-signal weights; index 0 is the shallowest pyramid level."""

    w_slf: tuple = (0.4, 0.5, 0.7, 0.8)
    w_att: tuple = (0.4, 0.5, 0.7, 0.8)
    w_final: float = 1.0

    def __post_init__(self):
        self.w_slf = tuple(float(w) for w in self.w_slf)
        self.w_att = tuple(float(w) for w in self.w_att)
        self.w_final = float(self.w_final)
        if len(self.w_slf) != 4 or len(self.w_att) != 4:
            raise ValueError("need four SLF weights and four attentive weights")
        if min(self.w_slf + self.w_att + (self.w_final,)) <= 0:
            raise ValueError("loss weights must be positive")

    def as_tuple(self):
        return (*self.w_slf, *self.w_att, self.w_final)

    def scaled(self, factor):
        return LossWeights(tuple(w * factor for w in self.w_slf),
                           tuple(w * factor for w in self.w_att), self.w_final * factor)


def _check(p, g):
    if p.shape != g.shape:
        raise ValueError(f"prediction shape {tuple(p.shape)} != ground truth shape {tuple(g.shape)}")
    return g.to(p.dtype)


def dice_loss(p, g, eps=DICE_EPS):
    g = _check(p, g)
    inter = (p * g).sum()
    return 1.0 - 2.0 * inter / ((p * p).sum() + (g * g).sum() + eps)


def bce_loss(p, g, reduction="mean"):
    """Negated cross-entropy; ``reduction='sum'`` gives the unnormalized sum over voxels."""
    g = _check(p, g)
    p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    ll = g * torch.log(p) + (1.0 - g) * torch.log1p(-p)
    if reduction == "mean":
        return -ll.mean()
    if reduction == "sum":
        return -ll.sum()
    raise ValueError(f"unknown reduction {reduction!r}")


def signal_loss(p, g, bce_reduction="mean"):
    return dice_loss(p, g) + bce_loss(p, g, bce_reduction)


def total_loss(bundle, g, w: LossWeights | None = None, bce_reduction="mean", return_parts=False):
    """Weighted sum of the nine signal losses.

    With ``return_parts=True`` also returns a dict of the individual terms
    (detached floats) for logging and diagnostics.
    """
    w = w or LossWeights()
    preds = bundle.all()
    total = 0.0
    parts = {}
    names = [f"slf{i + 1}" for i in range(4)] + [f"att{i + 1}" for i in range(4)] + ["final"]
    for name, weight, p in zip(names, w.as_tuple(), preds):
        d = dice_loss(p, g)
        b = bce_loss(p, g, bce_reduction)
        total = total + weight * (d + b)
        if return_parts:
            parts[f"dice_{name}"] = float(d.detach())
            parts[f"bce_{name}"] = float(b.detach())
    if return_parts:
        return total, parts
    return total

