"""Attentive-feature fusion, 3D ASPP, deeply supervised heads and the full network."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .attention import AttendAll
from .backbone import Backbone, BackboneConfig, check_input_shape
from .layers import ConvGNPReLU, resize
from .pyramid import FPN, MLFFusion, SLFBuilder


@dataclass
class NetworkConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    pyramid_channels: int = 128
    fused_channels: int = 64
    aspp_rates: tuple = (6, 12, 18)
    attention_broadcast: bool = False
    gn_groups: int = 32

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            self.backbone = BackboneConfig(**self.backbone)
        self.aspp_rates = tuple(int(r) for r in self.aspp_rates)


def tiny_config(**overrides) -> NetworkConfig:
    """Desk-scale widths used by tests and quick experiments."""
    bb = dict(stem_channels=8, channels=(8, 16, 16, 32), blocks=(1, 1, 1, 1), cardinality=4)
    bb.update(overrides.pop("backbone", {}))
    kw = dict(pyramid_channels=16, fused_channels=16)
    kw.update(overrides)
    return NetworkConfig(backbone=BackboneConfig(**bb), **kw)


@dataclass
class PredictionBundle:
    """Nine probability volumes at the input's spatial size."""

    slf_preds: list
    att_preds: list
    final_pred: torch.Tensor
    attention_maps: list | None = None

    def all(self):
        return [*self.slf_preds, *self.att_preds, self.final_pred]


class FuseAttentive(nn.Module):
    def __init__(self, channels=64, levels=4, max_gn_groups=32):
        super().__init__()
        self.fuse = ConvGNPReLU(channels * levels, channels, 3, max_gn_groups=max_gn_groups)

    def forward(self, feats):
        return self.fuse(torch.cat(list(feats), dim=1))


class ASPP(nn.Module):
    """1x1x1 branch plus dilated 3x3x3 branches, each conv -> GN -> PReLU, then projected."""

    def __init__(self, channels=64, rates=(6, 12, 18), max_gn_groups=32):
        super().__init__()
        self.branches = nn.ModuleList(
            [ConvGNPReLU(channels, channels, 1, max_gn_groups=max_gn_groups)]
            + [ConvGNPReLU(channels, channels, 3, dilation=r, max_gn_groups=max_gn_groups)
               for r in rates])
        self.project = ConvGNPReLU(channels * (len(rates) + 1), channels, 1,
                                   max_gn_groups=max_gn_groups)

    def forward(self, x):
        return self.project(torch.cat([b(x) for b in self.branches], dim=1))


class PredictHead(nn.Module):
    """1x1x1 conv to one logit channel, resized to the output grid, then sigmoid."""

    def __init__(self, channels):
        super().__init__()
        self.conv = nn.Conv3d(channels, 1, 1)

    def logits(self, f, out_shape):
        return resize(self.conv(f), out_shape)

    def forward(self, f, out_shape):
        return torch.sigmoid(self.logits(f, out_shape))

    def zero_init(self):
        nn.init.zeros_(self.conv.weight)
        nn.init.zeros_(self.conv.bias)


class DAFNet(nn.Module):
    """Backbone -> FPN -> SLF/MLF -> attention -> fusion -> ASPP, with nine heads."""

    def __init__(self, cfg: NetworkConfig | None = None):
        super().__init__()
        cfg = cfg or NetworkConfig()
        self.cfg = cfg
        g = cfg.gn_groups
        c = cfg.fused_channels
        self.backbone = Backbone(cfg.backbone)
        self.fpn = FPN(cfg.backbone.channels, cfg.pyramid_channels)
        self.slf = SLFBuilder(cfg.pyramid_channels, c, max_gn_groups=g)
        self.mlf = MLFFusion(c, c, max_gn_groups=g)
        self.attention = AttendAll(slf_channels=c, mlf_channels=c, out_channels=c,
                                   broadcast=cfg.attention_broadcast, max_gn_groups=g)
        self.fuse = FuseAttentive(c, max_gn_groups=g)
        self.aspp = ASPP(c, cfg.aspp_rates, max_gn_groups=g)
        self.slf_heads = nn.ModuleList(PredictHead(c) for _ in range(4))
        self.att_heads = nn.ModuleList(PredictHead(c) for _ in range(4))
        self.final_head = PredictHead(c)

    def heads(self):
        return [*self.slf_heads, *self.att_heads, self.final_head]

    def zero_init_heads(self):
        for h in self.heads():
            h.zero_init()

    def features(self, x):
        """Intermediate tensors of one forward pass, keyed by stage name."""
        check_input_shape(x.shape[2:])
        c = self.backbone(x)
        p = self.fpn(c)
        s = self.slf(p)
        mlf = self.mlf(s)
        att, maps = self.attention(s, mlf)
        fused = self.fuse(att)
        final = self.aspp(fused)
        return dict(c=c, p=p, slf=s, mlf=mlf, att=att, attention_maps=maps, fused=fused, aspp=final)

    def forward(self, x, return_attention=False):
        out_shape = x.shape[2:]
        f = self.features(x)
        return PredictionBundle(
            slf_preds=[h(s, out_shape) for h, s in zip(self.slf_heads, f["slf"])],
            att_preds=[h(a, out_shape) for h, a in zip(self.att_heads, f["att"])],
            final_pred=self.final_head(f["aspp"], out_shape),
            attention_maps=f["attention_maps"] if return_attention else None,
        )
