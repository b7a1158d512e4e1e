"""Layer-wise attention: refine each SLF using the MLF as a feature pool."""

import torch
import torch.nn as nn

from .layers import ConvGNPReLU


class AttentionModule(nn.Module):
    """One attention module for one pyramid level.

    ``weights(slf, mlf)`` gives the sigmoid attention map, ``refine`` gates the
    MLF with it and merges the result back into the SLF.  With
    ``broadcast=True`` the map has a single channel shared by all MLF channels.
    """

    def __init__(self, slf_channels=64, mlf_channels=64, out_channels=64, broadcast=False,
                 max_gn_groups=32):
        super().__init__()
        cin = slf_channels + mlf_channels
        self.attend = nn.Sequential(
            ConvGNPReLU(cin, out_channels, 3, max_gn_groups=max_gn_groups),
            ConvGNPReLU(out_channels, out_channels, 3, max_gn_groups=max_gn_groups),
            nn.Conv3d(out_channels, 1 if broadcast else mlf_channels, 1),
        )
        self.merge = nn.Sequential(
            ConvGNPReLU(mlf_channels + slf_channels, out_channels, 3, max_gn_groups=max_gn_groups),
            ConvGNPReLU(out_channels, out_channels, 3, max_gn_groups=max_gn_groups),
            nn.Conv3d(out_channels, out_channels, 1),
        )

    def logits(self, slf, mlf):
        if slf.shape[2:] != mlf.shape[2:]:
            raise ValueError(f"SLF {tuple(slf.shape[2:])} and MLF {tuple(mlf.shape[2:])} differ in shape")
        return self.attend(torch.cat([slf, mlf], dim=1))

    def weights(self, slf, mlf):
        return torch.sigmoid(self.logits(slf, mlf))

    def gate(self, mlf, a):
        return a * mlf

    def refine(self, slf, mlf, a):
        if not (slf.shape[2:] == mlf.shape[2:] == a.shape[2:]):
            raise ValueError("SLF, MLF and attention map must share one spatial shape")
        return self.merge(torch.cat([self.gate(mlf, a), slf], dim=1))

    def forward(self, slf, mlf):
        a = self.weights(slf, mlf)
        return self.refine(slf, mlf, a), a

    def zero_init_logits(self):
        nn.init.zeros_(self.attend[-1].weight)
        nn.init.zeros_(self.attend[-1].bias)


class AttendAll(nn.Module):
    """Independent attention modules, one per level."""

    def __init__(self, levels=4, **kwargs):
        super().__init__()
        self.levels = nn.ModuleList(AttentionModule(**kwargs) for _ in range(levels))

    def forward(self, slfs, mlf):
        outs, maps = [], []
        for am, s in zip(self.levels, slfs):
            o, a = am(s, mlf)
            outs.append(o)
            maps.append(a)
        return outs, maps
