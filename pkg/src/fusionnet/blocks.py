"""Neck building blocks: CBS, channel/spatial attention, AFM, CBAM and C3CBAM.

All modules use the PyTorch (N, C, H, W) layout.
"""
from __future__ import annotations

from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

__all__ = (
    "ConfigError",
    "CBS",
    "ChannelAttention",
    "SpatialAttention",
    "AFM",
    "CBAM",
    "CBAMBottleneck",
    "C3CBAM",
    "C3",
    "SPPF",
)


class ConfigError(ValueError):
    """Raised when a block or network is built with an invalid configuration."""


class CBS(nn.Module):
    """Conv2d (same padding, no bias) -> BatchNorm -> SiLU."""

    def __init__(self, c1: int, c2: int, k: int = 1, s: int = 1, act: bool = True):
        super().__init__()
        if k % 2 != 1:
            raise ConfigError(f"CBS kernel must be odd, got {k}")
        if s not in (1, 2):
            raise ConfigError(f"CBS stride must be 1 or 2, got {s}")
        self.conv = nn.Conv2d(c1, c2, k, s, padding=k // 2, bias=False)
        self.bn = nn.BatchNorm2d(c2, eps=1e-3, momentum=0.03)
        self.act = nn.SiLU() if act else nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act(self.bn(self.conv(x)))


class ChannelAttention(nn.Module):
    """Shared two-layer MLP over global average- and max-pooled descriptors.

    Returns the sigmoid attention map of shape (N, C, 1, 1); the hidden width is
    ``max(1, channels // reduction)``.
    """

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        if channels < 1:
            raise ConfigError(f"channel attention needs at least one channel, got {channels}")
        hidden = max(1, channels // max(1, reduction))
        self.channels = channels
        self.fc1 = nn.Conv2d(channels, hidden, 1, bias=True)
        self.fc2 = nn.Conv2d(hidden, channels, 1, bias=True)

    def mlp(self, d: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.relu(self.fc1(d)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        avg = x.mean(dim=(2, 3), keepdim=True)
        mx = x.amax(dim=(2, 3), keepdim=True)
        return torch.sigmoid(self.mlp(avg) + self.mlp(mx))


class SpatialAttention(nn.Module):
    """Channel-wise mean and max, concatenated, 7x7 conv, sigmoid -> (N, 1, H, W)."""

    def __init__(self, kernel_size: int = 7):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ConfigError("spatial attention kernel must be odd")
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        d = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(d))


class AFM(nn.Module):
    """Attention fusion module: concatenate inputs, then re-weight channels.

    ``AFM(a, b, ...) = M_C(F_C) * F_C`` with ``F_C = concat(a, b, ...)``.
    Inputs must already share their spatial size; nothing is resized here.
    """

    def __init__(self, in_channels: Sequence[int], reduction: int = 16):
        super().__init__()
        self.in_channels = tuple(int(c) for c in in_channels)
        if not self.in_channels:
            raise ConfigError("AFM needs at least one input")
        self.out_channels = sum(self.in_channels)
        self.attention = ChannelAttention(self.out_channels, reduction)

    def forward(self, *xs: torch.Tensor) -> torch.Tensor:
        if len(xs) != len(self.in_channels):
            raise ValueError(f"AFM expects {len(self.in_channels)} inputs, got {len(xs)}")
        hw = xs[0].shape[-2:]
        for x, c in zip(xs, self.in_channels):
            if x.shape[-2:] != hw:
                raise ValueError(f"AFM spatial mismatch: {tuple(x.shape[-2:])} vs {tuple(hw)}")
            if x.shape[1] != c:
                raise ValueError(f"AFM channel mismatch: got {x.shape[1]}, declared {c}")
        fc = torch.cat(xs, dim=1) if len(xs) > 1 else xs[0]
        return self.attention(fc) * fc


class CBAM(nn.Module):
    """Sequential channel-then-spatial attention: ``M_S(F') * F'`` with ``F' = M_C(F) * F``."""

    def __init__(self, channels: int, reduction: int = 16, kernel_size: int = 7):
        super().__init__()
        self.channel = ChannelAttention(channels, reduction)
        self.spatial = SpatialAttention(kernel_size)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.channel(x) * x
        return self.spatial(x) * x


class CBAMBottleneck(nn.Module):
    """Residual bottleneck whose branch ends in CBAM (as in CBAM-augmented ResNets)."""

    def __init__(self, c: int, shortcut: bool = True, e: float = 1.0, reduction: int = 16):
        super().__init__()
        c_ = max(1, int(c * e))
        self.cv1 = CBS(c, c_, 1, 1)
        self.cv2 = CBS(c_, c, 3, 1)
        self.cbam = CBAM(c, reduction)
        self.add = shortcut

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.cbam(self.cv2(self.cv1(x)))
        return x + y if self.add else y


class _Bottleneck(nn.Module):
    def __init__(self, c: int, shortcut: bool = True):
        super().__init__()
        self.cv1 = CBS(c, c, 1, 1)
        self.cv2 = CBS(c, c, 3, 1)
        self.add = shortcut

    def forward(self, x):
        y = self.cv2(self.cv1(x))
        return x + y if self.add else y


class C3(nn.Module):
    """CSP block with three CBS layers and a plain bottleneck stack (encoder use)."""

    def __init__(self, c1: int, c2: int, n: int = 1, shortcut: bool = True, e: float = 0.5):
        super().__init__()
        c_ = max(1, int(c2 * e))
        self.cv1 = CBS(c1, c_, 1, 1)
        self.cv2 = CBS(c1, c_, 1, 1)
        self.cv3 = CBS(2 * c_, c2, 1, 1)
        self.m = nn.Sequential(*(_Bottleneck(c_, shortcut) for _ in range(n)))

    def forward(self, x):
        return self.cv3(torch.cat([self.m(self.cv1(x)), self.cv2(x)], dim=1))


class C3CBAM(nn.Module):
    """C3 block whose bottlenecks embed CBAM.

    Split path: ``cv1 -> bottleneck stack`` and ``cv2`` (pass-through), concatenated and
    merged by the 1x1 ``cv3``. Spatial size is preserved.
    """

    def __init__(
        self,
        c1: int,
        c2: int,
        n: int = 1,
        shortcut: bool = True,
        e: float = 0.5,
        reduction: int = 16,
    ):
        super().__init__()
        if n < 1:
            raise ConfigError(f"C3CBAM needs n_bottlenecks >= 1, got {n}")
        c_ = max(1, int(c2 * e))
        self.cv1 = CBS(c1, c_, 1, 1)
        self.cv2 = CBS(c1, c_, 1, 1)
        self.cv3 = CBS(2 * c_, c2, 1, 1)
        self.m = nn.Sequential(*(CBAMBottleneck(c_, shortcut, 1.0, reduction) for _ in range(n)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.cv3(torch.cat([self.m(self.cv1(x)), self.cv2(x)], dim=1))


class SPPF(nn.Module):
    """Spatial pyramid pooling (fast) with three chained 5x5 max-pools."""

    def __init__(self, c1: int, c2: int, k: int = 5):
        super().__init__()
        c_ = c1 // 2
        self.cv1 = CBS(c1, c_, 1, 1)
        self.cv2 = CBS(c_ * 4, c2, 1, 1)
        self.m = nn.MaxPool2d(k, 1, k // 2)

    def forward(self, x):
        x = self.cv1(x)
        y1 = self.m(x)
        y2 = self.m(y1)
        return self.cv2(torch.cat([x, y1, y2, self.m(y2)], dim=1))
