"""Composite detection loss: ``w_box * CIoU + w_cls * BCE + w_dfl * DFL``."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .architecture import HeadOutput, dfl_expectation

# Box-loss weights swept in the weight ablation, largest first.
BOX_WEIGHT_GRID = (7.5, 6.0, 4.5, 3.0, 1.5, 1.25, 1.0, 0.75, 0.5, 0.25, 0.2, 0.15, 0.1, 0.05)

# Number of DFL targets clamped into [0, reg_max) so far, keyed by reason.
clamp_counter: Counter = Counter()


@dataclass(frozen=True)
class LossWeights:
    box: float = 0.1
    cls: float = 0.5
    dfl: float = 1.5

    def __post_init__(self):
        if min(self.box, self.cls, self.dfl) < 0:
            raise ValueError(f"loss weights must be non-negative, got {self}")

    def scaled(self, factor: float) -> "LossWeights":
        return LossWeights(self.box * factor, self.cls * factor, self.dfl * factor)


@dataclass
class LossBreakdown:
    box: torch.Tensor
    cls: torch.Tensor
    dfl: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("box", "cls", "dfl", "total")}


# --------------------------------------------------------------------------- CIoU


def ciou(pred: torch.Tensor, gt: torch.Tensor, eps: float = 1e-9) -> torch.Tensor:
    """Complete IoU of xyxy boxes (broadcasting over leading dims)."""
    px1, py1, px2, py2 = pred.unbind(-1)
    gx1, gy1, gx2, gy2 = gt.unbind(-1)
    pw, ph = px2 - px1, py2 - py1 + eps
    gw, gh = gx2 - gx1, gy2 - gy1 + eps
    inter = (torch.minimum(px2, gx2) - torch.maximum(px1, gx1)).clamp(min=0) * (
        torch.minimum(py2, gy2) - torch.maximum(py1, gy1)
    ).clamp(min=0)
    union = pw * ph + gw * gh - inter + eps
    iou = inter / union
    cw = torch.maximum(px2, gx2) - torch.minimum(px1, gx1)
    ch = torch.maximum(py2, gy2) - torch.minimum(py1, gy1)
    c2 = cw**2 + ch**2 + eps
    rho2 = ((gx1 + gx2 - px1 - px2) ** 2 + (gy1 + gy2 - py1 - py2) ** 2) / 4
    v = (4 / math.pi**2) * (torch.atan(gw / gh) - torch.atan(pw / ph)) ** 2
    # alpha = v / ((1 - IoU) + v); defined as 0 when both vanish (identical boxes)
    denom = v - iou + (1 + eps)
    alpha = v / torch.where(denom > 0, denom, torch.ones_like(denom))
    return iou - (rho2 / c2 + v * alpha)


def ciou_loss(pred, gt) -> torch.Tensor:
    """``1 - IoU + rho^2 / c^2 + alpha * v`` for one pair of xyxy boxes; raises on zero area."""
    pred = torch.as_tensor(pred, dtype=torch.float64) if not torch.is_tensor(pred) else pred
    gt = torch.as_tensor(gt, dtype=torch.float64) if not torch.is_tensor(gt) else gt
    for name, b in (("pred", pred), ("gt", gt)):
        if not bool((b[..., 2] > b[..., 0]).all() and (b[..., 3] > b[..., 1]).all()):
            raise ValueError(f"{name} box has non-positive width or height: {b.tolist()}")
    return 1.0 - ciou(pred, gt, eps=0.0)


# --------------------------------------------------------------------------- DFL


def dfl_loss(dist_logits: torch.Tensor, target: torch.Tensor, reg_max: int = 16) -> torch.Tensor:
    """Two-bin cross-entropy on the integer neighbours of each continuous target.

    ``dist_logits`` has shape (..., 4 * (reg_max + 1)), ``target`` (..., 4) in bin units.
    Returns the mean over the four sides, shape (...). Targets outside
    ``[0, reg_max - 0.01]`` are clamped and counted in :data:`clamp_counter`.
    """
    target = torch.as_tensor(target, dtype=dist_logits.dtype)
    hi = reg_max - 0.01
    out_of_range = (target < 0) | (target > hi)
    if bool(out_of_range.any()):
        clamp_counter["dfl_target"] += int(out_of_range.sum())
        target = target.clamp(0, hi)
    logits = dist_logits.reshape(*dist_logits.shape[:-1], 4, reg_max + 1)
    tl = target.floor().long()
    tr = tl + 1
    wl = tr.to(target.dtype) - target
    wr = 1 - wl
    logp = logits.log_softmax(-1)
    nll_l = -logp.gather(-1, tl.unsqueeze(-1)).squeeze(-1)
    nll_r = -logp.gather(-1, tr.unsqueeze(-1)).squeeze(-1)
    return (nll_l * wl + nll_r * wr).mean(-1)


# --------------------------------------------------------------------------- assignment


class TaskAlignedAssigner(nn.Module):
    """Top-k anchors per ground truth by ``score^alpha * IoU^beta``, restricted to anchors inside the box."""

    def __init__(self, topk: int = 10, num_classes: int = 1, alpha: float = 0.5, beta: float = 6.0, eps: float = 1e-9):
        super().__init__()
        self.topk = topk
        self.num_classes = num_classes
        self.alpha = alpha
        self.beta = beta
        self.eps = eps

    @torch.no_grad()
    def forward(self, pd_scores, pd_bboxes, anc_points, gt_labels, gt_bboxes, mask_gt):
        """Shapes: scores (b, A, nc), boxes (b, A, 4), anchors (A, 2), labels (b, M, 1),
        gt boxes (b, M, 4), mask (b, M, 1). Returns target boxes, target scores, fg mask."""
        bs, n_anchors, _ = pd_scores.shape
        n_max = gt_bboxes.shape[1]
        if n_max == 0:
            return (
                torch.zeros_like(pd_bboxes),
                torch.zeros_like(pd_scores),
                torch.zeros(bs, n_anchors, dtype=torch.bool, device=pd_scores.device),
            )
        # anchors whose centre lies inside the gt box: (b, M, A)
        lt = anc_points.view(1, 1, -1, 2) - gt_bboxes[..., None, :2]
        rb = gt_bboxes[..., None, 2:] - anc_points.view(1, 1, -1, 2)
        mask_in = torch.cat([lt, rb], -1).amin(-1) > self.eps
        mask = mask_in & mask_gt.bool()

        labels = gt_labels.long().squeeze(-1).clamp(min=0)  # (b, M)
        scores = pd_scores.gather(2, labels.unsqueeze(1).expand(-1, n_anchors, -1)).transpose(1, 2)  # (b, M, A)
        overlaps = ciou(gt_bboxes.unsqueeze(2), pd_bboxes.unsqueeze(1)).clamp(min=0)  # (b, M, A)
        overlaps = overlaps * mask
        align = scores.pow(self.alpha) * overlaps.pow(self.beta) * mask

        k = min(self.topk, n_anchors)
        top_idx = align.topk(k, dim=-1).indices
        mask_topk = torch.zeros_like(mask).scatter_(-1, top_idx, True)
        mask_pos = mask_topk & mask
        # one gt per anchor: keep the highest-overlap gt
        multi = mask_pos.sum(1, keepdim=True) > 1
        if bool(multi.any()):
            best = overlaps.argmax(1, keepdim=True)
            best_mask = torch.zeros_like(mask_pos).scatter_(1, best, True)
            mask_pos = torch.where(multi.expand_as(mask_pos), best_mask & mask, mask_pos)
        fg = mask_pos.any(1)  # (b, A)
        gt_idx = mask_pos.float().argmax(1)  # (b, A)

        batch = torch.arange(bs, device=gt_idx.device).unsqueeze(-1)
        target_bboxes = gt_bboxes[batch, gt_idx]  # (b, A, 4)
        target_labels = labels[batch, gt_idx]
        target_scores = F.one_hot(target_labels, self.num_classes).to(pd_scores.dtype)
        target_scores = target_scores * fg.unsqueeze(-1)

        align = align * mask_pos
        pos_align_max = align.amax(-1, keepdim=True)
        pos_overlap_max = (overlaps * mask_pos).amax(-1, keepdim=True)
        norm = (align * pos_overlap_max / (pos_align_max + self.eps)).amax(1).unsqueeze(-1)  # (b, A, 1)
        return target_bboxes, target_scores * norm, fg


# --------------------------------------------------------------------------- total


def targets_to_padded(targets: Sequence[torch.Tensor], dtype=torch.float32):
    """List of (M_i, 5) ``[cls, x1, y1, x2, y2]`` tensors -> labels (b, M, 1), boxes (b, M, 4), mask (b, M, 1)."""
    bs = len(targets)
    m = max((len(t) for t in targets), default=0)
    labels = torch.zeros(bs, m, 1, dtype=dtype)
    boxes = torch.zeros(bs, m, 4, dtype=dtype)
    mask = torch.zeros(bs, m, 1, dtype=torch.bool)
    for i, t in enumerate(targets):
        t = torch.as_tensor(t, dtype=dtype).reshape(-1, 5)
        n = len(t)
        if n:
            labels[i, :n, 0] = t[:, 0]
            boxes[i, :n] = t[:, 1:]
            mask[i, :n] = True
    return labels, boxes, mask


class DetectionLoss:
    """Callable returning a :class:`LossBreakdown` for a head output and pixel targets."""

    def __init__(self, weights: LossWeights = LossWeights(), nc: int = 1, reg_max: int = 16, topk: int = 10):
        self.weights = weights
        self.nc = nc
        self.reg_max = reg_max
        self.assigner = TaskAlignedAssigner(topk=topk, num_classes=nc)

    def __call__(self, out: HeadOutput, targets: Sequence[torch.Tensor]) -> LossBreakdown:
        box_logits, cls_logits, anchors, strides = out.flatten()
        dtype = box_logits.dtype
        labels, gt_boxes, mask_gt = targets_to_padded(targets, dtype)
        ltrb = dfl_expectation(box_logits, self.reg_max)
        pred_grid = torch.cat([anchors - ltrb[..., :2], anchors + ltrb[..., 2:]], -1)  # stride units
        pred_px = pred_grid * strides

        target_px, target_scores, fg = self.assigner(
            cls_logits.detach().sigmoid(), pred_px.detach(), anchors * strides, labels, gt_boxes, mask_gt
        )
        tss = target_scores.sum().clamp(min=1.0)
        cls = F.binary_cross_entropy_with_logits(cls_logits, target_scores, reduction="sum") / tss

        if bool(fg.any()):
            weight = target_scores.sum(-1)[fg]
            target_grid = target_px / strides
            box = ((1.0 - ciou(pred_grid[fg], target_grid[fg])) * weight).sum() / tss
            a = anchors.unsqueeze(0).expand_as(pred_grid[..., :2])[fg]
            t = target_grid[fg]
            t_ltrb = torch.cat([a - t[:, :2], t[:, 2:] - a], -1)
            dfl = (dfl_loss(box_logits[fg], t_ltrb, self.reg_max) * weight).sum() / tss
        else:
            box = box_logits.sum() * 0.0
            dfl = box_logits.sum() * 0.0
        w = self.weights
        total = w.box * box + w.cls * cls + w.dfl * dfl
        return LossBreakdown(box, cls, dfl, total)


def total_loss(pred: HeadOutput, targets: Sequence[torch.Tensor], weights: LossWeights = LossWeights()) -> LossBreakdown:
    nc = pred.cls[0].shape[1]
    return DetectionLoss(weights, nc=nc, reg_max=pred.reg_max)(pred, targets)
