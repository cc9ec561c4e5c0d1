"""Dual-branch detector: multi-scale encoder, camouflage-feature provider, AFM neck, anchor-free head."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F
import torchvision

from .blocks import AFM, C3, C3CBAM, CBS, SPPF, ConfigError
from .boxes import Detection
from .ode import OdePropagation

CHECKPOINT_VERSION = 1

# Stride (relative to the input) of every camouflage-branch feature id.
FEDER_STRIDES = {
    "O_S": 1,
    "FD1": 4, "FD2": 8, "FD3": 16, "FD4": 32,
    "FS1": 4, "FS2": 8, "FS3": 16, "FS4": 32, "FS5": 64,
}
# Output-level maps may be average-pooled down to a coarser site; hierarchical ones may not.
POOLABLE_FEATURES = frozenset({"O_S", "FS1"})
# Stride at which each of the four fusion sites operates.
SITE_STRIDES = (8, 8, 16, 32)


def canonical_feature_id(name: str) -> str:
    """Map spellings like ``F^D_2``, ``F_D2``, ``fd2``, ``OS`` to ``FD2`` / ``O_S``."""
    s = name.strip().replace("^", "").replace("_", "").upper()
    if s in ("OS", "O"):
        return "O_S"
    if s in FEDER_STRIDES:
        return s
    raise ConfigError(f"unknown camouflage feature id {name!r}")


# --------------------------------------------------------------------------- presets


@dataclass(frozen=True)
class BackbonePreset:
    name: str
    depth_multiple: float = 1.0
    width_multiple: float = 1.0
    base_channels: int = 16
    param_budget_m: float | None = None

    @property
    def out_channels(self) -> tuple[int, int, int]:
        """Channels of (stride 8, stride 16, stride 32) outputs."""
        w = self.width_multiple
        return (max(8, round(256 * w)), max(8, round(512 * w)), max(8, round(1024 * w)))

    def depth(self, n: int) -> int:
        return max(1, round(n * self.depth_multiple))

    def to_dict(self) -> dict:
        return asdict(self)


# Capacity presets standing in for the YOLO encoders; all emit 256/512/1024 channels.
PRESETS: dict[str, BackbonePreset] = {
    "v5l": BackbonePreset("v5l", 1.00, 1.0, 16, 26.6),
    "v8m": BackbonePreset("v8m", 0.67, 1.0, 12, 11.8),
    "v8l": BackbonePreset("v8l", 1.00, 1.0, 16, 19.8),
    "v9c": BackbonePreset("v9c", 0.67, 1.0, 12, 9.0),
    "v9e": BackbonePreset("v9e", 1.33, 1.0, 16, 30.2),
    "v11l": BackbonePreset("v11l", 1.00, 1.0, 16, 12.7),
    "v11x": BackbonePreset("v11x", 1.33, 1.0, 20, 28.7),
}


def toy_preset(width: float = 0.25, depth: float = 0.33) -> BackbonePreset:
    return BackbonePreset("toy", depth, width, 8, None)


def get_preset(name: str, width: float | None = None) -> BackbonePreset:
    if name == "toy":
        return toy_preset(0.25 if width is None else width)
    if name not in PRESETS:
        raise ConfigError(f"unknown backbone preset {name!r}; choose from {sorted(PRESETS) + ['toy']}")
    return PRESETS[name]


# --------------------------------------------------------------------------- fusion configs


@dataclass(frozen=True)
class FusionConfig:
    """Camouflage features fed into each of the four AFM sites (empty tuple = unused)."""

    sites: tuple[tuple[str, ...], tuple[str, ...], tuple[str, ...], tuple[str, ...]]
    name: str = "custom"

    def __post_init__(self):
        if len(self.sites) != 4:
            raise ConfigError(f"a fusion config assigns exactly four sites, got {len(self.sites)}")
        sites = tuple(tuple(canonical_feature_id(f) for f in site) for site in self.sites)
        for site in sites:
            if len(site) > 3:
                raise ConfigError("at most three camouflage features per site")
        object.__setattr__(self, "sites", sites)

    @property
    def uses_feder(self) -> bool:
        return any(self.sites)

    @classmethod
    def parse(cls, text: str) -> "FusionConfig":
        """Parse ``"1".."6"``, ``"none"`` or a custom ``"O_S | FD2 | FD3+O_S | -"`` row."""
        text = text.strip()
        if text.isdigit():
            return FUSION_CONFIGS[int(text)]
        if text.lower() in ("none", "baseline"):
            return BASELINE_FUSION
        parts = [p.strip() for p in text.split("|")]
        if len(parts) != 4:
            raise ConfigError(f"custom fusion row needs four '|'-separated sites, got {text!r}")
        sites = tuple(
            () if p in ("", "-", "none") else tuple(q.strip() for q in p.split("+")) for p in parts
        )
        return cls(sites, "custom")

    def to_dict(self) -> dict:
        return {"name": self.name, "sites": [list(s) for s in self.sites]}

    @classmethod
    def from_dict(cls, d: dict) -> "FusionConfig":
        return cls(tuple(tuple(s) for s in d["sites"]), d.get("name", "custom"))


FUSION_CONFIGS: dict[int, FusionConfig] = {
    1: FusionConfig((("O_S",), ("O_S",), ("O_S",), ("O_S",)), "config1"),
    2: FusionConfig((("FS1",), ("FS1",), ("FS1",), ("FS1",)), "config2"),
    3: FusionConfig(((), ("FS2",), ("FS3",), ("FS4",)), "config3"),
    4: FusionConfig(((), ("FD2",), ("FD3",), ("FD4",)), "config4"),
    5: FusionConfig(((), ("FS2", "FD2"), ("FS3", "FD3"), ("FS4", "FD4")), "config5"),
    6: FusionConfig((("O_S",), ("O_S", "FD2"), ("O_S", "FD3"), ("O_S", "FD4")), "config6"),
}
BASELINE_FUSION = FusionConfig(((), (), (), ()), "baseline")


def check_site_compatibility(fusion: FusionConfig, site_strides: Sequence[int] = SITE_STRIDES) -> None:
    """Raise :class:`ConfigError` if a feature cannot reach its site without resizing."""
    for k, (site, stride) in enumerate(zip(fusion.sites, site_strides), start=1):
        for fid in site:
            fs = FEDER_STRIDES[fid]
            if fs == stride:
                continue
            if fid in POOLABLE_FEATURES and stride % fs == 0:
                continue
            raise ConfigError(
                f"{fid} (stride {fs}) is spatially incompatible with AFM {k} (stride {stride})"
            )


# --------------------------------------------------------------------------- encoder


class CSPEncoder(nn.Module):
    """Small CSP-style conv stack emitting stride 8/16/32 maps with the preset's widths.

    Returns ``(F1, F2, F3)`` ordered coarse to fine: stride 32, 16, 8.
    """

    def __init__(self, preset: BackbonePreset):
        super().__init__()
        b = preset.base_channels
        c3, c4, c5 = preset.out_channels
        d = preset.depth
        self.stem = nn.Sequential(CBS(3, b, 3, 2), CBS(b, 2 * b, 3, 2), C3(2 * b, 2 * b, d(3)))
        self.stage3 = nn.Sequential(CBS(2 * b, 4 * b, 3, 2), C3(4 * b, 4 * b, d(6)))
        self.stage4 = nn.Sequential(CBS(4 * b, 8 * b, 3, 2), C3(8 * b, 8 * b, d(9)))
        self.stage5 = nn.Sequential(CBS(8 * b, 16 * b, 3, 2), C3(16 * b, 16 * b, d(3)), SPPF(16 * b, 16 * b))
        self.out3 = CBS(4 * b, c3, 1, 1)
        self.out4 = CBS(8 * b, c4, 1, 1)
        self.out5 = CBS(16 * b, c5, 1, 1)

    def forward(self, x):
        x = self.stem(x)
        p3 = self.stage3(x)
        p4 = self.stage4(p3)
        p5 = self.stage5(p4)
        return self.out5(p5), self.out4(p4), self.out3(p3)


def toy_backbone(image: torch.Tensor, preset: BackbonePreset, seed: int = 0):
    """Build a seeded encoder for ``preset`` and run it once in eval mode."""
    side = image.shape[-1]
    if image.shape[-2] != side or side % 32:
        raise ValueError(f"input must be square with side divisible by 32, got {tuple(image.shape[-2:])}")
    torch.manual_seed(seed)
    enc = CSPEncoder(preset).to(image.dtype).eval()
    with torch.no_grad():
        return enc(image)


# --------------------------------------------------------------------------- camouflage branch


@dataclass
class FederFeatureSet:
    o_s_logits: torch.Tensor
    fd: dict[int, torch.Tensor]
    fs: dict[int, torch.Tensor]

    @property
    def o_s(self) -> torch.Tensor:
        return torch.sigmoid(self.o_s_logits)

    def binary_mask(self, threshold: float = 0.5) -> torch.Tensor:
        return (self.o_s > threshold).to(self.o_s_logits.dtype)

    def get(self, fid: str) -> torch.Tensor:
        fid = canonical_feature_id(fid)
        if fid == "O_S":
            return self.o_s
        return (self.fd if fid.startswith("FD") else self.fs)[int(fid[2:])]


def _feature_size(side: int, stride: int) -> int:
    return max(1, side // stride)


class _WaveletSplit(nn.Module):
    """Low-pass (2x average pool, re-expanded) and high-pass residual, merged by a 1x1 CBS."""

    def __init__(self, c1: int, c2: int):
        super().__init__()
        self.merge = CBS(2 * c1, c2, 1, 1)

    def forward(self, x):
        if min(x.shape[-2:]) >= 2:
            low = F.interpolate(F.avg_pool2d(x, 2, ceil_mode=True), size=x.shape[-2:], mode="nearest")
        else:
            low = x
        return self.merge(torch.cat([low, x - low], dim=1))


class ToyFeder(nn.Module):
    """Trainable miniature of the camouflage detector's feature topology.

    Encoder levels at strides 4..32 -> wavelet-like split -> ``FD1..FD4``; a top-down
    decoder yields ``FS5..FS1`` with ODE-style propagation on the finest level, and a
    1x1 head upsampled to full resolution yields the segmentation logits.
    """

    def __init__(self, channels: int = 64):
        super().__init__()
        c = channels
        h = max(4, c // 2)
        self.enc1 = nn.Sequential(CBS(3, h, 3, 2), CBS(h, h, 3, 2))
        self.enc2 = CBS(h, h, 3, 2)
        self.enc3 = CBS(h, c, 3, 2)
        self.enc4 = CBS(c, c, 3, 2)
        self.dwd = nn.ModuleList([_WaveletSplit(h, c), _WaveletSplit(h, c), _WaveletSplit(c, c), _WaveletSplit(c, c)])
        self.dec4 = CBS(c, c, 3, 1)
        self.dec3 = CBS(c, c, 3, 1)
        self.dec2 = CBS(c, c, 3, 1)
        self.oer = OdePropagation(c, c, steps=2, scheme="rk2")
        self.seg = nn.Conv2d(c, 1, 1)

    def forward(self, x):
        side = x.shape[-1]
        e1 = self.enc1(x)
        e2 = self.enc2(e1)
        e3 = self.enc3(e2)
        e4 = self.enc4(e3)
        fd = {i + 1: m(e) for i, (m, e) in enumerate(zip(self.dwd, (e1, e2, e3, e4)))}
        s5 = _feature_size(side, 64)
        fs5 = F.adaptive_avg_pool2d(fd[4], s5)
        fs4 = self.dec4(fd[4] + F.interpolate(fs5, size=fd[4].shape[-2:], mode="nearest"))
        fs3 = self.dec3(fd[3] + F.interpolate(fs4, size=fd[3].shape[-2:], mode="nearest"))
        fs2 = self.dec2(fd[2] + F.interpolate(fs3, size=fd[2].shape[-2:], mode="nearest"))
        fs1 = self.oer(fd[1] + F.interpolate(fs2, size=fd[1].shape[-2:], mode="nearest"))
        logits = F.interpolate(self.seg(fs1), size=x.shape[-2:], mode="bilinear", align_corners=False)
        return FederFeatureSet(logits, fd, {1: fs1, 2: fs2, 3: fs3, 4: fs4, 5: fs5})


class StubFeder(nn.Module):
    """Parameter-free deterministic pseudo-features (seeded random projections)."""

    def __init__(self, channels: int = 64, seed: int = 0):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        for fid in FEDER_STRIDES:
            c = 1 if fid == "O_S" else channels
            self.register_buffer(f"w_{fid}", torch.randn(c, 3, generator=g) / math.sqrt(3))
            self.register_buffer(f"b_{fid}", 0.1 * torch.randn(c, generator=g))

    def _project(self, x, fid):
        side = x.shape[-1]
        stride = FEDER_STRIDES[fid]
        p = x if stride == 1 else F.adaptive_avg_pool2d(x, _feature_size(side, stride))
        w = getattr(self, f"w_{fid}").to(x.dtype)
        b = getattr(self, f"b_{fid}").to(x.dtype)
        y = torch.einsum("oc,nchw->nohw", w, p) + b.view(1, -1, 1, 1)
        return 4.0 * y if fid == "O_S" else torch.tanh(y)

    def forward(self, x):
        fd = {i: self._project(x, f"FD{i}") for i in range(1, 5)}
        fs = {j: self._project(x, f"FS{j}") for j in range(1, 6)}
        return FederFeatureSet(self._project(x, "O_S"), fd, fs)


class FederProvider(nn.Module):
    """Camouflage-branch wrapper; ``frozen`` keeps its parameters and BN statistics fixed."""

    def __init__(self, mode: str = "toy_trainable", channels: int = 64, frozen: bool = True, seed: int = 0):
        super().__init__()
        if mode == "toy_trainable":
            self.net = ToyFeder(channels)
        elif mode == "frozen_stub":
            self.net = StubFeder(channels, seed)
            frozen = True
        else:
            raise ConfigError(f"unknown camouflage-branch mode {mode!r}")
        self.mode = mode
        self.channels = channels
        self.frozen = frozen
        if frozen:
            for p in self.net.parameters():
                p.requires_grad_(False)

    def train(self, mode: bool = True):
        super().train(mode)
        if self.frozen:
            self.net.eval()
        return self

    def feature_channels(self, fid: str) -> int:
        return 1 if canonical_feature_id(fid) == "O_S" else self.channels

    def forward(self, image: torch.Tensor) -> FederFeatureSet:
        return self.net(image)


def feder_provider(image: torch.Tensor, mode: str = "frozen_stub", channels: int = 64, seed: int = 0):
    if image.shape[-1] != image.shape[-2]:
        raise ValueError("camouflage branch expects a square input")
    torch.manual_seed(seed)
    prov = FederProvider(mode, channels, frozen=True, seed=seed).to(image.dtype).eval()
    with torch.no_grad():
        return prov(image)


# --------------------------------------------------------------------------- head


@dataclass
class HeadOutput:
    """Raw per-scale predictions, finest first (strides 8, 16, 32)."""

    box: list[torch.Tensor]  # (N, 4 * (reg_max + 1), H, W)
    cls: list[torch.Tensor]  # (N, n_classes, H, W)
    strides: tuple[int, ...] = (8, 16, 32)
    reg_max: int = 16

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [tuple(b.shape[-2:]) for b in self.box]

    def flatten(self):
        """Concatenate scales -> (N, A, 4(R+1)), (N, A, nc), anchor points (A, 2), strides (A, 1)."""
        boxes, scores, anchors, strides = [], [], [], []
        for b, c, s in zip(self.box, self.cls, self.strides):
            n, _, h, w = b.shape
            boxes.append(b.flatten(2).transpose(1, 2))
            scores.append(c.flatten(2).transpose(1, 2))
            ys = torch.arange(h, dtype=b.dtype, device=b.device) + 0.5
            xs = torch.arange(w, dtype=b.dtype, device=b.device) + 0.5
            yy, xx = torch.meshgrid(ys, xs, indexing="ij")
            anchors.append(torch.stack([xx, yy], -1).view(-1, 2))
            strides.append(torch.full((h * w, 1), float(s), dtype=b.dtype, device=b.device))
        return torch.cat(boxes, 1), torch.cat(scores, 1), torch.cat(anchors, 0), torch.cat(strides, 0)


class Detect(nn.Module):
    """Anchor-free decoupled head with DFL box distributions at three scales."""

    def __init__(self, nc: int, ch: Sequence[int], reg_max: int = 16, strides=(8, 16, 32), imgsz: int = 640):
        super().__init__()
        self.nc = nc
        self.reg_max = reg_max
        self.strides = tuple(strides)
        c2 = max(16, ch[0] // 4, 4 * reg_max)
        c3 = max(32, min(ch[0], 128))
        self.box = nn.ModuleList(
            nn.Sequential(CBS(c, c2, 3), CBS(c2, c2, 3), nn.Conv2d(c2, 4 * (reg_max + 1), 1)) for c in ch
        )
        self.cls = nn.ModuleList(nn.Sequential(CBS(c, c3, 3), CBS(c3, c3, 3), nn.Conv2d(c3, nc, 1)) for c in ch)
        for b, c, s in zip(self.box, self.cls, self.strides):
            nn.init.constant_(b[-1].bias, 1.0)
            nn.init.constant_(c[-1].bias, math.log(5 / nc / (imgsz / s) ** 2))

    def forward(self, feats: Sequence[torch.Tensor]) -> HeadOutput:
        return HeadOutput(
            [m(x) for m, x in zip(self.box, feats)],
            [m(x) for m, x in zip(self.cls, feats)],
            self.strides,
            self.reg_max,
        )


# --------------------------------------------------------------------------- network


class FusionNet(nn.Module):
    """Encoder + camouflage branch + four-site AFM neck + three-scale head.

    Neck wiring (strides in brackets)::

        x10 = CBS1x1(F1)                          [32]
        x13 = C3CBAM(concat(up(x10), F2))         [16]
        x14 = CBS1x1(x13)                         [16]
        x17 = C3CBAM(AFM1(up(x14), F3, fe1...))   [8]   upsample path
        P3  = CBS1x1(AFM2(x17, fe2...))           [8]   head input, fine
        P4  = C3CBAM(AFM3(down(P3), x14, fe3...)) [16]
        P5  = C3CBAM(AFM4(down(P4), x10, fe4...)) [32]

    A site without camouflage features falls back to plain concatenation (sites 1, 3, 4)
    or identity (site 2).
    """

    def __init__(
        self,
        fusion: FusionConfig,
        preset: BackbonePreset,
        nc: int = 1,
        reg_max: int = 16,
        imgsz: int = 640,
        feder_mode: str = "toy_trainable",
        feder_frozen: bool = True,
        feder_channels: int | None = None,
        seed: int = 0,
    ):
        super().__init__()
        check_site_compatibility(fusion)
        self.fusion = fusion
        self.preset = preset
        self.nc = nc
        self.reg_max = reg_max
        self.imgsz = imgsz
        self.feder_mode = feder_mode
        self.feder_frozen = feder_frozen
        if feder_channels is None:
            feder_channels = max(4, round(64 * min(1.0, preset.width_multiple * 2)))
        self.feder_channels = feder_channels

        self.backbone = CSPEncoder(preset)
        self.feder = FederProvider(feder_mode, feder_channels, feder_frozen, seed) if fusion.uses_feder else None
        c3, c4, c5 = preset.out_channels
        n = preset.depth(3)
        fe = [sum(self._feder_ch(f) for f in site) for site in fusion.sites]

        self.cv_p5 = CBS(c5, c4, 1, 1)
        self.c3_p4 = C3CBAM(2 * c4, c4, n, shortcut=False)
        self.cv_p4 = CBS(c4, c3, 1, 1)
        self.afm1 = self._make_site([c3, c3], fusion.sites[0])
        self.c3_p3 = C3CBAM(2 * c3 + fe[0], c3, n, shortcut=False)
        self.afm2 = self._make_site([c3], fusion.sites[1]) if fusion.sites[1] else None
        self.proj2 = CBS(c3 + fe[1], c3, 1, 1) if fusion.sites[1] else nn.Identity()
        self.down1 = CBS(c3, c3, 3, 2)
        self.afm3 = self._make_site([c3, c3], fusion.sites[2])
        self.c3_n4 = C3CBAM(2 * c3 + fe[2], c4, n, shortcut=False)
        self.down2 = CBS(c4, c4, 3, 2)
        self.afm4 = self._make_site([c4, c4], fusion.sites[3])
        self.c3_n5 = C3CBAM(2 * c4 + fe[3], c5, n, shortcut=False)
        self.site_channels = {
            1: 2 * c3 + fe[0],
            2: c3 + fe[1],
            3: 2 * c3 + fe[2],
            4: 2 * c4 + fe[3],
        }
        self.head = Detect(nc, (c3, c4, c5), reg_max, imgsz=imgsz)

    def _feder_ch(self, fid: str) -> int:
        return 1 if fid == "O_S" else self.feder_channels

    def _make_site(self, neck_channels: list[int], site: tuple[str, ...]):
        if not site:
            return None
        return AFM(neck_channels + [self._feder_ch(f) for f in site])

    def _site_features(self, feats: FederFeatureSet | None, site, size) -> list[torch.Tensor]:
        out = []
        for fid in site:
            f = feats.get(fid)
            if tuple(f.shape[-2:]) != tuple(size):
                if fid not in POOLABLE_FEATURES:
                    raise ValueError(f"{fid} has spatial size {tuple(f.shape[-2:])}, site needs {tuple(size)}")
                f = F.adaptive_avg_pool2d(f, size)
            out.append(f)
        return out

    @staticmethod
    def _fuse(afm, tensors):
        return afm(*tensors) if afm is not None else torch.cat(tensors, 1)

    def forward(self, image: torch.Tensor) -> HeadOutput:
        side = image.shape[-1]
        if image.shape[-2] != side or side % 32:
            raise ValueError(f"input must be square with side divisible by 32, got {tuple(image.shape[-2:])}")
        f1, f2, f3 = self.backbone(image)
        fe = self.feder(image) if self.feder is not None else None
        s = self.fusion.sites

        x10 = self.cv_p5(f1)
        x13 = self.c3_p4(torch.cat([F.interpolate(x10, scale_factor=2.0, mode="nearest"), f2], 1))
        x14 = self.cv_p4(x13)
        u2 = F.interpolate(x14, scale_factor=2.0, mode="nearest")
        x17 = self.c3_p3(self._fuse(self.afm1, [u2, f3] + self._site_features(fe, s[0], f3.shape[-2:])))
        if self.afm2 is not None:
            p3 = self.proj2(self.afm2(x17, *self._site_features(fe, s[1], x17.shape[-2:])))
        else:
            p3 = x17
        d1 = self.down1(p3)
        p4 = self.c3_n4(self._fuse(self.afm3, [d1, x14] + self._site_features(fe, s[2], d1.shape[-2:])))
        d2 = self.down2(p4)
        p5 = self.c3_n5(self._fuse(self.afm4, [d2, x10] + self._site_features(fe, s[3], d2.shape[-2:])))
        return self.head([p3, p4, p5])

    def describe(self) -> dict:
        return {
            "fusion": self.fusion.to_dict(),
            "preset": self.preset.to_dict(),
            "nc": self.nc,
            "reg_max": self.reg_max,
            "imgsz": self.imgsz,
            "feder_mode": self.feder_mode,
            "feder_frozen": self.feder_frozen,
            "feder_channels": self.feder_channels,
        }


def build_network(
    fusion: FusionConfig | int | str,
    preset: BackbonePreset | str,
    *,
    seed: int | None = 0,
    **kwargs,
) -> FusionNet:
    """Construct a :class:`FusionNet`; incompatible site assignments raise :class:`ConfigError`."""
    if isinstance(fusion, int):
        fusion = FUSION_CONFIGS[fusion]
    elif isinstance(fusion, str):
        fusion = FusionConfig.parse(fusion)
    if isinstance(preset, str):
        preset = get_preset(preset)
    if seed is not None:
        torch.manual_seed(seed)
    return FusionNet(fusion, preset, seed=seed or 0, **kwargs)


# --------------------------------------------------------------------------- decode


def dfl_expectation(box_logits: torch.Tensor, reg_max: int) -> torch.Tensor:
    """Expected bin index per side: ``sum_k softmax(logits)_k * k`` over ``reg_max + 1`` bins."""
    shape = box_logits.shape[:-1]
    p = box_logits.view(*shape, 4, reg_max + 1).softmax(-1)
    bins = torch.arange(reg_max + 1, dtype=p.dtype, device=p.device)
    return (p * bins).sum(-1)


def decode_boxes(out: HeadOutput):
    """Return per-anchor pixel boxes (N, A, 4) xyxy and class probabilities (N, A, nc)."""
    box, cls, anchors, strides = out.flatten()
    ltrb = dfl_expectation(box, out.reg_max)
    xy1 = anchors - ltrb[..., :2]
    xy2 = anchors + ltrb[..., 2:]
    return torch.cat([xy1, xy2], -1) * strides, cls.sigmoid()


def decode_and_nms(
    out: HeadOutput,
    conf_thr: float = 0.25,
    iou_thr: float = 0.45,
    max_det: int = 300,
    image_ids: Sequence[str] | None = None,
) -> list[list[Detection]]:
    """Decode DFL distributions, keep scores above ``conf_thr`` and run greedy NMS per image."""
    if not (0.0 <= conf_thr <= 1.0 and 0.0 <= iou_thr <= 1.0):
        raise ValueError("thresholds must lie in [0, 1]")
    with torch.no_grad():
        boxes, scores = decode_boxes(out)
    results = []
    for i in range(boxes.shape[0]):
        image_id = image_ids[i] if image_ids is not None else str(i)
        conf, _ = scores[i].max(-1)
        keep = conf > conf_thr
        b, c = boxes[i][keep], conf[keep]
        if b.numel():
            idx = torchvision.ops.nms(b.float(), c.float(), iou_thr)[:max_det]
            b, c = b[idx], c[idx]
        results.append(
            [Detection(image_id, tuple(float(v) for v in bb), float(cc)) for bb, cc in zip(b.tolist(), c.tolist())]
        )
    return results


# --------------------------------------------------------------------------- checkpoints


def save_checkpoint(path: str | Path, net: FusionNet, **extra) -> None:
    payload = {"version": CHECKPOINT_VERSION, "network": net.describe(), "state_dict": net.state_dict()}
    payload.update(extra)
    torch.save(payload, path)


def load_checkpoint(path: str | Path, map_location="cpu") -> tuple[FusionNet, dict]:
    payload = torch.load(path, map_location=map_location, weights_only=False)
    if "version" not in payload:
        raise ValueError(f"{path}: checkpoint has no version field")
    if payload["version"] > CHECKPOINT_VERSION:
        raise ValueError(f"{path}: checkpoint version {payload['version']} is newer than supported")
    meta = payload["network"]
    net = FusionNet(
        FusionConfig.from_dict(meta["fusion"]),
        BackbonePreset(**meta["preset"]),
        nc=meta["nc"],
        reg_max=meta["reg_max"],
        imgsz=meta["imgsz"],
        feder_mode=meta["feder_mode"],
        feder_frozen=meta["feder_frozen"],
        feder_channels=meta["feder_channels"],
    )
    net.load_state_dict(payload["state_dict"])
    return net, payload
