"""Dataset manifest, two-stage cropping, augmentation and the synthetic toy set.

Images are ``uint8`` arrays in (H, W, 3) RGB order; boxes are ``float64`` arrays of
shape (N, 4) holding pixel ``x1, y1, x2, y2``. Normalized ``cx cy w h`` only appears
in label files and in the manifest.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from PIL import Image

from .boxes import cxcywh_norm_to_xyxy, xyxy_to_cxcywh_norm

SPLITS = ("train", "val", "test")
DEFAULT_SPLIT_FRACTIONS = {"train": 0.7, "val": 0.2, "test": 0.1}
BACKGROUND_FRACTION = 0.075
MIN_VISIBLE = 0.25  # boxes keeping less than this share of their area are dropped

# Images skipped by coarse_crop because the anchor box exceeds the crop side.
skip_counter: Counter = Counter()


class ManifestError(ValueError):
    """Malformed or empty dataset manifest."""


# --------------------------------------------------------------------------- manifest


@dataclass
class ManifestEntry:
    image_path: str
    width: int
    height: int
    boxes: list[tuple[float, float, float, float]] = field(default_factory=list)  # normalized cx, cy, w, h
    classes: list[int] = field(default_factory=list)
    split: str = "train"
    is_background: bool = False

    def __post_init__(self):
        self.boxes = [tuple(float(v) for v in b) for b in self.boxes]
        if not self.classes:
            self.classes = [0] * len(self.boxes)

    def validate(self):
        if self.split not in SPLITS:
            raise ManifestError(f"{self.image_path}: unknown split {self.split!r}")
        if self.width < 1 or self.height < 1:
            raise ManifestError(f"{self.image_path}: bad resolution {self.width}x{self.height}")
        if self.is_background and self.boxes:
            raise ManifestError(f"{self.image_path}: background image with boxes")
        if len(self.classes) != len(self.boxes):
            raise ManifestError(f"{self.image_path}: class/box count mismatch")
        for b in self.boxes:
            if not all(0.0 <= v <= 1.0 for v in b) or b[2] <= 0 or b[3] <= 0:
                raise ManifestError(f"{self.image_path}: box {b} outside [0, 1] or empty")

    def pixel_boxes(self) -> np.ndarray:
        return cxcywh_norm_to_xyxy(np.asarray(self.boxes).reshape(-1, 4), self.width, self.height)


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    root: Path = Path(".")
    split_fractions: dict = field(default_factory=lambda: dict(DEFAULT_SPLIT_FRACTIONS))

    def __len__(self):
        return len(self.entries)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def validate(self):
        for e in self.entries:
            e.validate()

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.image_path)
        return p if p.is_absolute() else self.root / p

    def load_image(self, entry: ManifestEntry) -> np.ndarray:
        with Image.open(self.resolve(entry)) as im:
            return np.array(im.convert("RGB"))

    def save(self, path) -> Path:
        """Write line-delimited records plus one ``class cx cy w h`` label file per image."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [json.dumps({"split_fractions": self.split_fractions}, sort_keys=True)]
        for e in self.entries:
            rec = {"image": e.image_path, "width": e.width, "height": e.height,
                   "split": e.split, "background": e.is_background}
            lines.append(json.dumps(rec, sort_keys=True))
            label = label_path(path.parent / e.image_path)
            label.parent.mkdir(parents=True, exist_ok=True)
            label.write_text("".join(f"{c} {b[0]:.6f} {b[1]:.6f} {b[2]:.6f} {b[3]:.6f}\n"
                                     for c, b in zip(e.classes, e.boxes)))
        path.write_text("\n".join(lines) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if not path.is_file():
            raise ManifestError(f"manifest not found: {path}")
        fractions = dict(DEFAULT_SPLIT_FRACTIONS)
        entries = []
        for n, line in enumerate(path.read_text().splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as err:
                raise ManifestError(f"{path}:{n}: not JSON ({err})") from None
            if "split_fractions" in rec:
                fractions = rec["split_fractions"]
                continue
            try:
                e = ManifestEntry(rec["image"], int(rec["width"]), int(rec["height"]),
                                  split=rec.get("split", "train"), is_background=bool(rec.get("background", False)))
            except KeyError as err:
                raise ManifestError(f"{path}:{n}: missing field {err}") from None
            lp = label_path(path.parent / e.image_path)
            if lp.is_file():
                for row in lp.read_text().split("\n"):
                    if row.strip():
                        c, *b = row.split()
                        e.classes.append(int(c))
                        e.boxes.append(tuple(float(v) for v in b))
            entries.append(e)
        if not entries:
            raise ManifestError(f"{path}: manifest has no images")
        m = cls(entries, path.parent, fractions)
        m.validate()
        return m


def label_path(image_path: Path) -> Path:
    return Path(image_path).with_suffix(".txt")


def assign_splits(n: int, rng: np.random.Generator, fractions=DEFAULT_SPLIT_FRACTIONS) -> list[str]:
    n_train = int(round(fractions["train"] * n))
    n_val = int(round(fractions["val"] * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    labels = ["train"] * n_train + ["val"] * n_val + ["test"] * (n - n_train - n_val)
    return [labels[i] for i in rng.permutation(n)]


# --------------------------------------------------------------------------- box helpers


def clip_boxes(boxes: np.ndarray, window, min_visible: float = MIN_VISIBLE):
    """Shift boxes into ``window = (x0, y0, x1, y1)`` coordinates, clip, drop mostly-hidden ones.

    Returns (boxes, kept_indices).
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    x0, y0, x1, y1 = window
    clipped = np.stack([
        np.clip(boxes[:, 0], x0, x1), np.clip(boxes[:, 1], y0, y1),
        np.clip(boxes[:, 2], x0, x1), np.clip(boxes[:, 3], y0, y1),
    ], axis=1)
    area = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    vis = (clipped[:, 2] - clipped[:, 0]) * (clipped[:, 3] - clipped[:, 1])
    keep = np.flatnonzero((vis > 0) & (vis >= min_visible * area))
    out = clipped[keep] - np.array([x0, y0, x0, y0], dtype=np.float64)
    return out, keep


# --------------------------------------------------------------------------- cropping


@dataclass(frozen=True)
class CropSpec:
    mode: str = "fixed_640"
    seed: int = 0

    MODES = ("fixed_640", "fixed_1080", "dynamic")

    def __post_init__(self):
        if self.mode not in self.MODES:
            raise ValueError(f"unknown crop mode {self.mode!r}; expected one of {self.MODES}")

    def side(self, width: int, height: int) -> int:
        if self.mode == "dynamic":
            return min(width, height)
        return 640 if self.mode == "fixed_640" else 1080

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "CropSpec":
        aliases = {"640": "fixed_640", "1080": "fixed_1080", "dyn": "dynamic"}
        return cls(aliases.get(str(text), str(text)), seed)


@dataclass
class CropResult:
    image: np.ndarray
    boxes: np.ndarray
    window: tuple[int, int, int, int]  # x0, y0, x1, y1 in the source image
    anchor: int | None = None  # index into ``boxes`` of the anchor drone, if any
    kept: np.ndarray | None = None  # source indices of ``boxes``


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def coarse_crop(image: np.ndarray, boxes: np.ndarray, crop_side: int, seed=0) -> CropResult | None:
    """First stage: the largest region in which every ``crop_side`` window contains the anchor box.

    One anchor box is drawn uniformly; the region spans ``[x2 - s, x1 + s]`` (and likewise in y)
    intersected with the image, so any square of side ``s`` inside it contains the anchor.
    Background images get a uniformly placed region of side ``min(2 s, W)`` x ``min(2 s, H)``.
    Returns None (and counts the skip) when the anchor box is larger than ``crop_side``.
    """
    h, w = image.shape[:2]
    s = int(crop_side)
    if s > min(w, h):
        raise ValueError(f"crop side {s} exceeds image size {w}x{h}")
    rng = _rng(seed)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if len(boxes) == 0:
        rw, rh = min(2 * s, w), min(2 * s, h)
        x0 = int(rng.integers(0, w - rw + 1))
        y0 = int(rng.integers(0, h - rh + 1))
        window = (x0, y0, x0 + rw, y0 + rh)
        return CropResult(image[y0:y0 + rh, x0:x0 + rw].copy(), boxes[:0], window, None, np.zeros(0, int))
    a = int(rng.integers(len(boxes)))
    bx1, by1, bx2, by2 = boxes[a]
    if bx2 - bx1 > s or by2 - by1 > s:
        skip_counter["anchor_larger_than_crop"] += 1
        return None
    x0 = max(math.ceil(bx2) - s, 0)
    y0 = max(math.ceil(by2) - s, 0)
    x1 = min(math.floor(bx1) + s, w)
    y1 = min(math.floor(by1) + s, h)
    window = (x0, y0, x1, y1)
    out, kept = clip_boxes(boxes, window)
    anchor = int(np.flatnonzero(kept == a)[0])
    return CropResult(image[y0:y1, x0:x1].copy(), out, window, anchor, kept)


def random_crop(image: np.ndarray, boxes: np.ndarray, spec: CropSpec, seed=None, side: int | None = None) -> CropResult:
    """Second stage: a uniformly placed square window of side ``spec.side``."""
    h, w = image.shape[:2]
    s = int(side if side is not None else spec.side(w, h))
    if s > min(w, h):
        raise ValueError(f"crop side {s} exceeds region size {w}x{h}")
    rng = _rng(spec.seed if seed is None else seed)
    x0 = int(rng.integers(0, w - s + 1))
    y0 = int(rng.integers(0, h - s + 1))
    window = (x0, y0, x0 + s, y0 + s)
    out, kept = clip_boxes(boxes, window)
    return CropResult(image[y0:y0 + s, x0:x0 + s].copy(), out, window, None, kept)


def two_stage_crop(image: np.ndarray, boxes: np.ndarray, spec: CropSpec, seed=None) -> CropResult | None:
    """Coarse anchor-aware region, then random square crop; window is in source coordinates."""
    h, w = image.shape[:2]
    s = spec.side(w, h)
    rng = _rng(spec.seed if seed is None else seed)
    first = coarse_crop(image, boxes, s, rng)
    if first is None:
        return None
    second = random_crop(first.image, first.boxes, spec, rng, side=s)
    ox, oy = first.window[:2]
    window = (second.window[0] + ox, second.window[1] + oy, second.window[2] + ox, second.window[3] + oy)
    kept = first.kept[second.kept]
    anchor = None
    if first.anchor is not None:
        hit = np.flatnonzero(second.kept == first.anchor)
        anchor = int(hit[0]) if len(hit) else None
    return CropResult(second.image, second.boxes, window, anchor, kept)


# --------------------------------------------------------------------------- augmentation


def hsv_jitter(image: np.ndarray, h_gain: float = 0.015, s_gain: float = 0.7, v_gain: float = 0.4, seed=0) -> np.ndarray:
    """Random hue shift and saturation/value scaling, one draw per image."""
    if min(h_gain, s_gain, v_gain) < 0:
        raise ValueError("HSV gains must be non-negative")
    if h_gain == s_gain == v_gain == 0:
        return image.copy()
    r = _rng(seed).uniform(-1, 1, 3) * (h_gain, s_gain, v_gain)
    hsv = rgb_to_hsv(image.astype(np.float64) / 255.0)
    hsv[..., 0] = (hsv[..., 0] + r[0]) % 1.0
    hsv[..., 1] = np.clip(hsv[..., 1] * (1 + r[1]), 0, 1)
    hsv[..., 2] = np.clip(hsv[..., 2] * (1 + r[2]), 0, 1)
    return np.clip(np.rint(hsv_to_rgb(hsv) * 255.0), 0, 255).astype(np.uint8)


def hflip(image: np.ndarray, boxes: np.ndarray, p: float = 0.5, seed=0):
    """Mirror horizontally with probability ``p``; returns (image, boxes, flipped)."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"flip probability must be in [0, 1], got {p}")
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if p == 0 or _rng(seed).random() >= p:
        return image, boxes, False
    w = image.shape[1]
    flipped = np.stack([w - boxes[:, 2], boxes[:, 1], w - boxes[:, 0], boxes[:, 3]], axis=1)
    return image[:, ::-1].copy(), flipped, True


def hflip_normalized(labels: np.ndarray) -> np.ndarray:
    """``cx -> 1 - cx`` on normalized (cx, cy, w, h) labels."""
    labels = np.array(labels, dtype=np.float64).reshape(-1, 4)
    labels[:, 0] = 1.0 - labels[:, 0]
    return labels


def mosaic(images4: Sequence[np.ndarray], boxes4: Sequence[np.ndarray], out_side: int, seed=0, center=None):
    """2x2 composition around a random centre, without letterbox padding.

    Each tile is cropped to exactly fill its quadrant: the top-left tile contributes its
    bottom-right corner, and so on. The centre is drawn only where every tile is large
    enough; if no such centre exists a ValueError is raised instead of padding.
    Returns (image, boxes).
    """
    if len(images4) != 4 or len(boxes4) != 4:
        raise ValueError("mosaic needs exactly four images and four box arrays")
    s = int(out_side)
    hs = [im.shape[0] for im in images4]
    ws = [im.shape[1] for im in images4]
    # left quadrants are xc wide, right ones s - xc
    x_lo, x_hi = s - min(ws[1], ws[3]), min(ws[0], ws[2], s)
    y_lo, y_hi = s - min(hs[2], hs[3]), min(hs[0], hs[1], s)
    x_lo, y_lo = max(x_lo, 0), max(y_lo, 0)
    if center is None:
        if x_lo > x_hi or y_lo > y_hi:
            raise ValueError(f"tiles too small to fill a {s}x{s} mosaic without padding")
        rng = _rng(seed)
        xc = int(rng.integers(max(x_lo, s // 4), min(x_hi, 3 * s // 4) + 1)) if max(x_lo, s // 4) <= min(x_hi, 3 * s // 4) \
            else int(rng.integers(x_lo, x_hi + 1))
        yc = int(rng.integers(max(y_lo, s // 4), min(y_hi, 3 * s // 4) + 1)) if max(y_lo, s // 4) <= min(y_hi, 3 * s // 4) \
            else int(rng.integers(y_lo, y_hi + 1))
    else:
        xc, yc = (int(v) for v in center)
        if not (x_lo <= xc <= x_hi and y_lo <= yc <= y_hi):
            raise ValueError(f"centre {center} needs tiles larger than supplied")
    out = np.empty((s, s, images4[0].shape[2]), dtype=images4[0].dtype)
    all_boxes = []
    quads = [(0, 0, xc, yc), (xc, 0, s, yc), (0, yc, xc, s), (xc, yc, s, s)]
    for i, (qx0, qy0, qx1, qy1) in enumerate(quads):
        qw, qh = qx1 - qx0, qy1 - qy0
        if qw == 0 or qh == 0:
            continue
        h, w = hs[i], ws[i]
        # source window adjacent to the mosaic centre
        sx0 = w - qw if i in (0, 2) else 0
        sy0 = h - qh if i in (0, 1) else 0
        out[qy0:qy1, qx0:qx1] = images4[i][sy0:sy0 + qh, sx0:sx0 + qw]
        b, _ = clip_boxes(boxes4[i], (sx0, sy0, sx0 + qw, sy0 + qh))
        all_boxes.append(b + np.array([qx0, qy0, qx0, qy0], dtype=np.float64))
    boxes = np.concatenate(all_boxes) if all_boxes else np.zeros((0, 4))
    return out, boxes


# --------------------------------------------------------------------------- toy data


def _texture(side: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth bright background: upsampled low-resolution noise plus fine grain."""
    coarse = rng.uniform(0.55, 0.9, (4, 4, 3))
    im = np.asarray(Image.fromarray((coarse * 255).astype(np.uint8)).resize((side, side), Image.BICUBIC), dtype=np.float64)
    im += rng.normal(0, 6, (side, side, 3))
    return im


def _draw_drone(img: np.ndarray, cx: float, cy: float, size: float, rng: np.random.Generator):
    """Dark body with four rotor lobes; returns the exact integer pixel box of the painted mask."""
    side = img.shape[0]
    yy, xx = np.mgrid[0:side, 0:side]
    body_r = size * 0.22
    arm = size * 0.3
    lobe_r = size * 0.18
    mask = ((xx - cx) ** 2 / (body_r * 1.3) ** 2 + (yy - cy) ** 2 / body_r**2) <= 1
    for dx, dy in ((-1, -1), (1, -1), (-1, 1), (1, 1)):
        mask |= (xx - (cx + dx * arm)) ** 2 + (yy - (cy + dy * arm * 0.8)) ** 2 <= lobe_r**2
    if not mask.any():
        return None
    shade = rng.uniform(10, 50)
    img[mask] = shade + rng.normal(0, 4, (int(mask.sum()), 3))
    ys, xs = np.nonzero(mask)
    return (float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))


def make_toy_image(side: int, rng: np.random.Generator, n_drones: int, size_range=(0.12, 0.25)):
    img = _texture(side, rng)
    boxes = []
    for _ in range(n_drones):
        size = rng.uniform(*size_range) * side
        m = size * 0.6
        b = _draw_drone(img, rng.uniform(m, side - m), rng.uniform(m, side - m), size, rng)
        if b is not None:
            boxes.append(b)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), np.asarray(boxes, dtype=np.float64).reshape(-1, 4)


def make_toy_dataset(n_images: int, image_side: int, seed: int, root=None) -> DatasetManifest:
    """Deterministic blobs-on-texture set with ``round(7.5 %)`` background images.

    When ``root`` is given, images (PNG), label files and ``manifest.jsonl`` are written there.
    """
    if n_images < 1:
        raise ValueError("toy dataset needs at least one image")
    rng = np.random.default_rng(seed)
    n_bg = int(round(BACKGROUND_FRACTION * n_images))
    background = set(rng.choice(n_images, size=n_bg, replace=False).tolist()) if n_bg else set()
    splits = assign_splits(n_images, rng)
    entries = []
    root = Path(root) if root is not None else None
    for i in range(n_images):
        bg = i in background
        n_drones = 0 if bg else 1 + int(rng.random() < 0.25)
        img, boxes = make_toy_image(image_side, rng, n_drones)
        rel = f"images/toy_{i:04d}.png"
        norm = xyxy_to_cxcywh_norm(boxes, image_side, image_side) if len(boxes) else np.zeros((0, 4))
        entries.append(ManifestEntry(rel, image_side, image_side, [tuple(b) for b in norm.round(6)],
                                     split=splits[i], is_background=bg))
        if root is not None:
            (root / "images").mkdir(parents=True, exist_ok=True)
            Image.fromarray(img).save(root / rel)
    m = DatasetManifest(entries, root or Path("."))
    m.validate()
    if root is not None:
        m.save(root / "manifest.jsonl")
    return m


# --------------------------------------------------------------------------- torch dataset


@dataclass
class AugmentConfig:
    hsv: bool = True
    flip: bool = True
    mosaic: bool = False
    h_gain: float = 0.015
    s_gain: float = 0.7
    v_gain: float = 0.4
    flip_p: float = 0.5


class DetectionDataset(torch.utils.data.Dataset):
    """Images resized to ``imgsz`` squares; targets are (M, 5) ``[cls, x1, y1, x2, y2]`` pixels.

    Sample ``i`` in epoch ``e`` is a pure function of ``(manifest, seed, e, i)``.
    """

    def __init__(self, manifest: DatasetManifest, split: str, imgsz: int, augment: AugmentConfig | None = None, seed: int = 0):
        self.manifest = manifest
        self.entries = manifest.split(split)
        self.imgsz = imgsz
        self.augment = augment
        self.seed = seed
        self.epoch = 0
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def __len__(self):
        return len(self.entries)

    def set_epoch(self, epoch: int):
        self.epoch = epoch

    def load(self, i: int):
        """Resized image and pixel boxes at ``imgsz`` (cached, unaugmented)."""
        if i not in self._cache:
            e = self.entries[i]
            img = self.manifest.load_image(e)
            boxes = e.pixel_boxes()
            h, w = img.shape[:2]
            if (w, h) != (self.imgsz, self.imgsz):
                img = np.array(Image.fromarray(img).resize((self.imgsz, self.imgsz), Image.BILINEAR))
                boxes = boxes * np.array([self.imgsz / w, self.imgsz / h] * 2)
            self._cache[i] = (img, boxes)
        return self._cache[i]

    def __getitem__(self, i):
        img, boxes = self.load(i)
        cls = np.asarray(self.entries[i].classes, dtype=np.float64)
        if self.augment is not None:
            rng = np.random.default_rng([self.seed, self.epoch, i])
            a = self.augment
            if a.mosaic:
                idx = [i] + rng.integers(0, len(self), 3).tolist()
                parts = [self.load(j) for j in idx]
                img, boxes = mosaic([p[0] for p in parts], [p[1] for p in parts], self.imgsz, rng)
                cls = np.zeros(len(boxes))
            if a.hsv:
                img = hsv_jitter(img, a.h_gain, a.s_gain, a.v_gain, rng)
            if a.flip:
                img, boxes, _ = hflip(img, boxes, a.flip_p, rng)
        x = torch.from_numpy(np.ascontiguousarray(img)).permute(2, 0, 1).float() / 255.0
        t = torch.from_numpy(np.concatenate([cls.reshape(-1, 1), boxes.reshape(-1, 4)], 1)).float()
        return x, t, i


def collate(batch):
    xs, ts, idx = zip(*batch)
    return torch.stack(xs), list(ts), list(idx)


# --------------------------------------------------------------------------- prepared versions


def materialize_version(manifest: DatasetManifest, spec: CropSpec, out_dir, seed: int = 0) -> DatasetManifest:
    """Two-stage crop every training image into ``out_dir``; val/test images are copied unchanged.

    Images whose anchor box exceeds the crop side, or that are smaller than the crop, are
    skipped and counted in :data:`skip_counter`.
    """
    if len(manifest) == 0:
        raise ManifestError("manifest has no images")
    out_dir = Path(out_dir)
    entries = []
    for i, e in enumerate(manifest.entries):
        img = manifest.load_image(e)
        rel = Path("images") / f"{i:06d}_{Path(e.image_path).stem}.png"
        (out_dir / rel).parent.mkdir(parents=True, exist_ok=True)
        if e.split != "train":
            Image.fromarray(img).save(out_dir / rel)
            entries.append(ManifestEntry(str(rel), e.width, e.height, list(e.boxes), list(e.classes), e.split, e.is_background))
            continue
        h, w = img.shape[:2]
        if spec.side(w, h) > min(w, h):
            skip_counter["image_smaller_than_crop"] += 1
            continue
        res = two_stage_crop(img, e.pixel_boxes(), spec, np.random.default_rng([seed, i]))
        if res is None:
            continue
        s = res.image.shape[0]
        Image.fromarray(res.image).save(out_dir / rel)
        norm = xyxy_to_cxcywh_norm(res.boxes, s, s) if len(res.boxes) else np.zeros((0, 4))
        classes = [e.classes[k] for k in res.kept]
        entries.append(ManifestEntry(str(rel), s, s, [tuple(b) for b in norm.round(6)], classes, "train",
                                     e.is_background or len(res.boxes) == 0))
    m = DatasetManifest(entries, out_dir, dict(manifest.split_fractions))
    m.validate()
    m.save(out_dir / "manifest.jsonl")
    return m
