"""3D ResNeXt feature extractor with anisotropic strides and dilated deep stages."""

from __future__ import annotations

from dataclasses import dataclass

import torch.nn as nn

from .layers import ConvGNPReLU, cardinality_for, gn_groups

MIN_INPUT = 8


class ShapeError(ValueError):
    pass


@dataclass
class BackboneConfig:
    stem_channels: int = 32
    channels: tuple = (64, 128, 256, 512)
    blocks: tuple = (2, 2, 2, 2)
    cardinality: int = 8
    stem_stride: tuple = (2, 2, 2)
    strides: tuple = ((2, 2, 1), (2, 2, 1), (1, 1, 1), (1, 1, 1))
    dilations: tuple = (1, 1, 2, 2)
    gn_groups: int = 32
    zero_init_residual: bool = False

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.blocks = tuple(int(b) for b in self.blocks)
        self.stem_stride = tuple(int(s) for s in self.stem_stride)
        self.strides = tuple(tuple(int(s) for s in st) for st in self.strides)
        self.dilations = tuple(int(d) for d in self.dilations)
        if not (len(self.channels) == len(self.blocks) == len(self.strides) == len(self.dilations) == 4):
            raise ValueError("backbone needs exactly four stages of channels/blocks/strides/dilations")
        if min(self.blocks) < 1 or min(self.channels) < 1 or self.stem_channels < 1:
            raise ValueError("block counts and channel widths must be positive")

    def scales(self):
        """Cumulative downsampling factor of c1..c4."""
        out, cur = [], self.stem_stride
        for st in self.strides:
            cur = tuple(a * b for a, b in zip(cur, st))
            out.append(cur)
        return out


class ResNeXtBlock(nn.Module):
    """Bottleneck with a grouped 3x3x3 convolution and a (projected) shortcut."""

    def __init__(self, cin, cout, stride=(1, 1, 1), dilation=1, cardinality=8, max_gn_groups=32):
        super().__init__()
        width = max(cout // 2, 1)
        groups = cardinality_for(width, cardinality)
        self.reduce = ConvGNPReLU(cin, width, kernel=1, max_gn_groups=max_gn_groups)
        self.grouped = ConvGNPReLU(width, width, kernel=3, stride=stride, dilation=dilation,
                                   groups=groups, max_gn_groups=max_gn_groups)
        self.expand = nn.Conv3d(width, cout, 1, bias=False)
        self.expand_norm = nn.GroupNorm(gn_groups(cout, max_gn_groups), cout)
        if tuple(stride) != (1, 1, 1) or cin != cout:
            self.shortcut = nn.Sequential(
                nn.Conv3d(cin, cout, 1, stride=stride, bias=False),
                nn.GroupNorm(gn_groups(cout, max_gn_groups), cout),
            )
        else:
            self.shortcut = nn.Identity()
        self.act = nn.PReLU(cout)

    def forward(self, x):
        y = self.expand_norm(self.expand(self.grouped(self.reduce(x))))
        return self.act(y + self.shortcut(x))


class Backbone(nn.Module):
    def __init__(self, cfg: BackboneConfig | None = None):
        super().__init__()
        cfg = cfg or BackboneConfig()
        self.cfg = cfg
        self.stem = ConvGNPReLU(1, cfg.stem_channels, kernel=3, stride=cfg.stem_stride,
                                max_gn_groups=cfg.gn_groups)
        stages = []
        cin = cfg.stem_channels
        for cout, nblocks, stride, dil in zip(cfg.channels, cfg.blocks, cfg.strides, cfg.dilations):
            blocks = [ResNeXtBlock(cin, cout, stride, dil, cfg.cardinality, cfg.gn_groups)]
            blocks += [ResNeXtBlock(cout, cout, (1, 1, 1), dil, cfg.cardinality, cfg.gn_groups)
                       for _ in range(nblocks - 1)]
            stages.append(nn.Sequential(*blocks))
            cin = cout
        self.stages = nn.ModuleList(stages)
        if cfg.zero_init_residual:
            for m in self.modules():
                if isinstance(m, ResNeXtBlock):
                    nn.init.zeros_(m.expand.weight)

    def forward(self, x):
        check_input_shape(x.shape[2:])
        x = self.stem(x)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return tuple(feats)


def check_input_shape(spatial):
    spatial = tuple(int(s) for s in spatial)
    if len(spatial) != 3 or min(spatial) < MIN_INPUT:
        raise ShapeError(
            f"input spatial shape {spatial} too small: every dimension must be >= {MIN_INPUT} "
            "(W and H divisible by 8, L divisible by 2 give exact scales; other sizes use ceil-mode)")


def feature_shape(spatial, scale):
    """Ceil-mode spatial shape of a feature map at ``scale``."""
    return tuple(-(-int(n) // int(s)) for n, s in zip(spatial, scale))

