"""Small building blocks shared by the network modules."""

import math

import torch.nn as nn
import torch.nn.functional as F


def gn_groups(channels, max_groups=32):
    """Largest group count <= max_groups that divides ``channels``."""
    for g in range(min(max_groups, channels), 0, -1):
        if channels % g == 0:
            return g
    return 1


class ConvGNPReLU(nn.Sequential):
    """conv -> GroupNorm -> PReLU with 'same'-style padding (ceil-mode under stride)."""

    def __init__(self, cin, cout, kernel=3, stride=1, dilation=1, groups=1, max_gn_groups=32):
        pad = dilation * (kernel - 1) // 2
        super().__init__(
            nn.Conv3d(cin, cout, kernel, stride=stride, padding=pad, dilation=dilation,
                      groups=groups, bias=False),
            nn.GroupNorm(gn_groups(cout, max_gn_groups), cout),
            nn.PReLU(cout),
        )


def resize(x, size):
    """Trilinear resize to an exact spatial ``size``; identity if already there."""
    size = tuple(int(s) for s in size)
    if tuple(x.shape[2:]) == size:
        return x
    return F.interpolate(x, size=size, mode="trilinear", align_corners=False)


def cardinality_for(width, cardinality):
    return math.gcd(width, cardinality)
