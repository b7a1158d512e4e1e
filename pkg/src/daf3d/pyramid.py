"""Top-down feature pyramid, single-layer features (SLF) and their fusion (MLF)."""

import torch
import torch.nn as nn

from .layers import ConvGNPReLU, resize


class FPN(nn.Module):
    """Lateral 1x1x1 projections merged top-down by element-wise addition."""

    def __init__(self, in_channels, pyramid_channels=128):
        super().__init__()
        self.laterals = nn.ModuleList(nn.Conv3d(c, pyramid_channels, 1) for c in in_channels)

    def forward(self, feats):
        if len(feats) != len(self.laterals):
            raise ValueError(f"expected {len(self.laterals)} feature maps, got {len(feats)}")
        out = [None] * len(feats)
        top = self.laterals[-1](feats[-1])
        out[-1] = top
        for k in range(len(feats) - 2, -1, -1):
            lat = self.laterals[k](feats[k])
            out[k] = lat + resize(out[k + 1], lat.shape[2:])
        return out


class SLFBuilder(nn.Module):
    """Per-level smoothing conv, then trilinear enlargement to level 1's exact size."""

    def __init__(self, pyramid_channels=128, slf_channels=64, levels=4, max_gn_groups=32):
        super().__init__()
        self.smooth = nn.ModuleList(
            ConvGNPReLU(pyramid_channels, slf_channels, 3, max_gn_groups=max_gn_groups)
            for _ in range(levels))

    def forward(self, pyramid):
        target = pyramid[0].shape[2:]
        return [resize(conv(p), target) for conv, p in zip(self.smooth, pyramid)]


class MLFFusion(nn.Module):
    def __init__(self, slf_channels=64, fused_channels=64, levels=4, max_gn_groups=32):
        super().__init__()
        self.fuse = ConvGNPReLU(slf_channels * levels, fused_channels, 3, max_gn_groups=max_gn_groups)

    def forward(self, slfs):
        shapes = {tuple(s.shape[2:]) for s in slfs}
        if len(shapes) != 1:
            raise ValueError(f"SLFs must share one spatial shape, got {sorted(shapes)}")
        return self.fuse(torch.cat(list(slfs), dim=1))
