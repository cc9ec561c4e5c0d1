"""SGD training loop with weight EMA, resumable checkpoints and prediction helpers."""
from __future__ import annotations

import copy
import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .architecture import (
    FusionNet,
    build_network,
    decode_and_nms,
    get_preset,
    load_checkpoint,
    save_checkpoint,
    toy_preset,
)
from .boxes import Detection, GroundTruth
from .config import ExperimentConfig
from .data import AugmentConfig, DatasetManifest, DetectionDataset, collate
from .evaluation import MetricReport, evaluate, get_fitness_weights
from .loss import DetectionLoss, LossWeights

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Loss became NaN or infinite; a diagnostic dump has been written."""


def seed_everything(seed: int):
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


def network_from_config(cfg: ExperimentConfig) -> FusionNet:
    m = cfg.model
    preset = toy_preset(m.width, m.depth) if m.backbone == "toy" else get_preset(m.backbone)
    return build_network(m.fusion, preset, seed=cfg.train.seed, nc=m.nc, imgsz=cfg.train.imgsz, feder_mode=m.feder_mode)


class ModelEMA:
    """Exponential moving average of weights with a ramped decay ``d (1 - exp(-updates / tau))``."""

    def __init__(self, model: nn.Module, decay: float = 0.9999, tau: float = 2000.0, updates: int = 0):
        self.ema = copy.deepcopy(model).eval()
        for p in self.ema.parameters():
            p.requires_grad_(False)
        self.decay = decay
        self.tau = tau
        self.updates = updates

    @torch.no_grad()
    def update(self, model: nn.Module):
        self.updates += 1
        d = self.decay * (1 - math.exp(-self.updates / self.tau))
        msd = model.state_dict()
        for k, v in self.ema.state_dict().items():
            if v.dtype.is_floating_point:
                v.mul_(d).add_(msd[k].detach(), alpha=1 - d)
            else:
                v.copy_(msd[k])


def build_optimizer(model: nn.Module, lr: float, momentum: float, weight_decay: float, nesterov: bool = True):
    """SGD with weight decay on conv/linear weights only (not on norms or biases)."""
    decay, no_decay = [], []
    for module in model.modules():
        for name, p in module.named_parameters(recurse=False):
            if not p.requires_grad:
                continue
            if name == "weight" and not isinstance(module, (nn.BatchNorm2d, nn.GroupNorm, nn.LayerNorm)):
                decay.append(p)
            else:
                no_decay.append(p)
    return torch.optim.SGD(
        [{"params": decay, "weight_decay": weight_decay}, {"params": no_decay, "weight_decay": 0.0}],
        lr=lr, momentum=momentum, nesterov=nesterov,
    )


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)  # one LossBreakdown (as floats) per epoch
    checkpoint: Path | None = None
    model: FusionNet | None = None


def train(cfg: ExperimentConfig, out_dir, manifest: DatasetManifest | None = None, resume=None) -> TrainResult:
    """Train on the manifest's ``train`` split; writes ``last.pt`` and ``loss_curve.csv`` into ``out_dir``.

    The logged losses are the per-batch composite loss averaged over each epoch; the
    backward pass uses the loss scaled by the batch size.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t = cfg.train
    seed_everything(t.seed)
    if manifest is None:
        manifest = DatasetManifest.load(cfg.data.manifest)
    d = cfg.data
    aug = AugmentConfig(d.hsv, d.flip, d.mosaic, d.h_gain, d.s_gain, d.v_gain, d.flip_p)
    ds = DetectionDataset(manifest, "train", t.imgsz, aug, t.seed)
    if len(ds) == 0:
        raise ValueError("training split is empty")

    model = network_from_config(cfg)
    criterion = DetectionLoss(LossWeights(cfg.loss.box, cfg.loss.cls, cfg.loss.dfl), nc=cfg.model.nc, reg_max=model.reg_max)
    opt = build_optimizer(model, t.lr0, t.momentum, t.weight_decay, t.nesterov)
    ema = ModelEMA(model) if t.ema else None
    history: list[dict] = []
    start_epoch = 0

    if resume is not None:
        payload = torch.load(resume, map_location="cpu", weights_only=False)
        model.load_state_dict(payload["model_state"])
        opt.load_state_dict(payload["optimizer"])
        if ema is not None and "state_dict" in payload:
            ema.ema.load_state_dict(payload["state_dict"])
            ema.updates = payload.get("ema_updates", 0)
        history = list(payload.get("history", []))
        start_epoch = payload["epoch"] + 1
        log.info("resuming from %s at epoch %d", resume, start_epoch)

    nb = math.ceil(len(ds) / t.batch)
    total_iters = t.epochs * nb
    warmup_iters = int(round(t.warmup_epochs * nb))
    ckpt = out_dir / "last.pt"

    for epoch in range(start_epoch, t.epochs):
        model.train()
        ds.set_epoch(epoch)
        gen = torch.Generator().manual_seed(t.seed * 100003 + epoch)
        loader = torch.utils.data.DataLoader(ds, batch_size=t.batch, shuffle=True, generator=gen, collate_fn=collate)
        sums = {"box": 0.0, "cls": 0.0, "dfl": 0.0, "total": 0.0}
        for bi, (x, targets, idx) in enumerate(loader):
            it = epoch * nb + bi
            lr = t.lr0 * (1 - (1 - t.lrf) * it / max(1, total_iters))
            if it < warmup_iters:
                lr *= (it + 1) / warmup_iters
            for g in opt.param_groups:
                g["lr"] = lr
            out = model(x)
            lb = criterion(out, targets)
            if not torch.isfinite(lb.total):
                dump = out_dir / "nan_dump.json"
                dump.write_text(json.dumps({
                    "epoch": epoch, "batch": bi, "sample_indices": list(idx),
                    "loss": lb.as_floats(),
                    "lr": lr, "history": history,
                }, indent=2))
                torch.save({"model_state": model.state_dict()}, out_dir / "nan_model.pt")
                raise TrainingDiverged(f"non-finite loss at epoch {epoch} batch {bi}; see {dump}")
            opt.zero_grad(set_to_none=True)
            (lb.total * x.shape[0]).backward()
            if t.clip_grad > 0:
                nn.utils.clip_grad_norm_(model.parameters(), t.clip_grad)
            opt.step()
            if ema is not None:
                ema.update(model)
            for k, v in lb.as_floats().items():
                sums[k] += v
        n = bi + 1
        row = {"epoch": epoch, **{k: v / n for k, v in sums.items()}}
        history.append(row)
        log.info("epoch %d  total %.4f  box %.4f  cls %.4f  dfl %.4f", epoch, row["total"], row["box"], row["cls"], row["dfl"])
        final = ema.ema if ema is not None else model
        save_checkpoint(
            ckpt, final,
            model_state=model.state_dict(), optimizer=opt.state_dict(), epoch=epoch,
            ema_updates=ema.updates if ema is not None else 0,
            history=history, config=cfg.to_text(),
        )
        _write_curve(out_dir / "loss_curve.csv", history)

    final = ema.ema if ema is not None else model
    return TrainResult(history, ckpt, final)


def _write_curve(path: Path, history: list[dict]):
    lines = ["epoch,box,cls,dfl,total"]
    lines += [f"{h['epoch']},{h['box']:.6f},{h['cls']:.6f},{h['dfl']:.6f},{h['total']:.6f}" for h in history]
    path.write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------- inference


@torch.no_grad()
def predict(
    model: FusionNet,
    manifest: DatasetManifest,
    split: str,
    imgsz: int,
    conf_thr: float = 0.001,
    nms_iou: float = 0.45,
    batch: int = 8,
) -> tuple[list[Detection], list[GroundTruth]]:
    """Detections and ground truth for one split, in original-image pixels."""
    model.eval()
    ds = DetectionDataset(manifest, split, imgsz, None)
    dets: list[Detection] = []
    gts: list[GroundTruth] = []
    for start in range(0, len(ds), batch):
        items = [ds[i] for i in range(start, min(start + batch, len(ds)))]
        x = torch.stack([it[0] for it in items])
        entries = [ds.entries[it[2]] for it in items]
        ids = [e.image_path for e in entries]
        per_image = decode_and_nms(model(x), conf_thr, nms_iou, image_ids=ids)
        for e, found in zip(entries, per_image):
            sx, sy = e.width / imgsz, e.height / imgsz
            for d in found:
                b = d.box
                box = (b[0] * sx, b[1] * sy, b[2] * sx, b[3] * sy)
                if box[2] > box[0] and box[3] > box[1]:
                    dets.append(Detection(e.image_path, box, d.confidence))
            gts.extend(GroundTruth(e.image_path, tuple(float(v) for v in b), int(c))
                       for b, c in zip(e.pixel_boxes(), e.classes))
    return dets, gts


def evaluate_model(model: FusionNet, manifest: DatasetManifest, split: str, cfg: ExperimentConfig) -> tuple[MetricReport, list[Detection], list[GroundTruth]]:
    ev = cfg.eval
    dets, gts = predict(model, manifest, split, cfg.train.imgsz, 0.001, ev.nms_iou)
    report = evaluate(dets, gts, get_fitness_weights(ev.fitness_preset), ev.iou, ev.conf,
                      ev.size_filter if ev.size_filter > 0 else None)
    return report, dets, gts


def load_model(path) -> tuple[FusionNet, dict]:
    return load_checkpoint(path)
