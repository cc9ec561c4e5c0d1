"""Independent reference implementations in plain Python (no torch, no package imports).

They are deliberately naive: explicit loops over scalars, written from the textbook
definitions so they share no code path with the library under test.
"""
from __future__ import annotations

import itertools
import math


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def relu(v):
    return v if v > 0 else 0.0


# --------------------------------------------------------------------------- attention


def channel_attention(x, w1, b1, w2, b2):
    """x: [C][H][W]; w1: [hid][C]; w2: [C][hid]. Returns C sigmoid weights."""
    C, H, W = len(x), len(x[0]), len(x[0][0])
    avg = [sum(x[c][i][j] for i in range(H) for j in range(W)) / (H * W) for c in range(C)]
    mx = [max(x[c][i][j] for i in range(H) for j in range(W)) for c in range(C)]

    def mlp(d):
        hidden = [relu(sum(w1[h][c] * d[c] for c in range(C)) + b1[h]) for h in range(len(w1))]
        return [sum(w2[c][h] * hidden[h] for h in range(len(hidden))) + b2[c] for c in range(C)]

    a, m = mlp(avg), mlp(mx)
    return [sigmoid(a[c] + m[c]) for c in range(C)]


def spatial_attention(x, k):
    """x: [C][H][W]; k: [2][K][K] conv kernel (mean channel, max channel), zero padding."""
    C, H, W = len(x), len(x[0]), len(x[0][0])
    K = len(k[0])
    r = K // 2
    desc = [
        [[sum(x[c][i][j] for c in range(C)) / C for j in range(W)] for i in range(H)],
        [[max(x[c][i][j] for c in range(C)) for j in range(W)] for i in range(H)],
    ]
    out = [[0.0] * W for _ in range(H)]
    for i in range(H):
        for j in range(W):
            s = 0.0
            for ch in range(2):
                for u in range(K):
                    for v in range(K):
                        ii, jj = i + u - r, j + v - r
                        if 0 <= ii < H and 0 <= jj < W:
                            s += k[ch][u][v] * desc[ch][ii][jj]
            out[i][j] = sigmoid(s)
    return out


def afm(inputs, w1, b1, w2, b2):
    """Concatenate [C_i][H][W] inputs along channels and scale each channel by its attention."""
    cat = [ch for x in inputs for ch in x]
    att = channel_attention(cat, w1, b1, w2, b2)
    return [[[att[c] * v for v in row] for row in cat[c]] for c in range(len(cat))]


def cbam(x, w1, b1, w2, b2, k):
    att = channel_attention(x, w1, b1, w2, b2)
    xc = [[[att[c] * v for v in row] for row in x[c]] for c in range(len(x))]
    sa = spatial_attention(xc, k)
    return [[[sa[i][j] * xc[c][i][j] for j in range(len(sa[0]))] for i in range(len(sa))] for c in range(len(xc))]


# --------------------------------------------------------------------------- losses


def ciou_terms(p, g):
    """Returns (iou, centre penalty, aspect penalty) for xyxy boxes."""
    pw, ph = p[2] - p[0], p[3] - p[1]
    gw, gh = g[2] - g[0], g[3] - g[1]
    iw = max(0.0, min(p[2], g[2]) - max(p[0], g[0]))
    ih = max(0.0, min(p[3], g[3]) - max(p[1], g[1]))
    inter = iw * ih
    iou = inter / (pw * ph + gw * gh - inter)
    cw = max(p[2], g[2]) - min(p[0], g[0])
    ch = max(p[3], g[3]) - min(p[1], g[1])
    pcx, pcy = (p[0] + p[2]) / 2, (p[1] + p[3]) / 2
    gcx, gcy = (g[0] + g[2]) / 2, (g[1] + g[3]) / 2
    centre = ((pcx - gcx) ** 2 + (pcy - gcy) ** 2) / (cw**2 + ch**2)
    v = 4 / math.pi**2 * (math.atan(gw / gh) - math.atan(pw / ph)) ** 2
    alpha = 0.0 if v == 0 else v / ((1 - iou) + v)
    return iou, centre, alpha * v


def ciou_loss(p, g):
    iou, centre, aspect = ciou_terms(p, g)
    return 1 - iou + centre + aspect


def dfl_loss(logits, targets):
    """logits: [4][R+1]; targets: 4 floats. Mean two-bin cross-entropy."""
    total = 0.0
    for side in range(4):
        row = logits[side]
        m = max(row)
        lse = m + math.log(sum(math.exp(v - m) for v in row))
        t = targets[side]
        lo = int(math.floor(t))
        wl = lo + 1 - t
        total += wl * (lse - row[lo]) + (1 - wl) * (lse - row[lo + 1])
    return total / 4


# --------------------------------------------------------------------------- metrics


def iou(a, b):
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    return inter / ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)


def greedy_counts_bruteforce(dets, gts, iou_thr):
    """Exhaustive search for the confidence-priority matching of one image.

    ``dets``: list of (box, confidence); ``gts``: list of boxes. Enumerates every partial
    injective assignment det -> gt with IoU >= thr and keeps the one whose per-detection
    key sequence (in descending-confidence order, stable) is lexicographically largest,
    where a matched detection scores (1, IoU, -gt_index) and an unmatched one (0,).
    That ordering is exactly "each detection in turn takes its best remaining GT".
    Returns (tp, fp, fn, assignment).
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i][1])
    options = []
    for i in order:
        opts = [None] + [j for j in range(len(gts)) if iou(dets[i][0], gts[j]) >= iou_thr]
        options.append(opts)
    best_key, best = None, None
    for combo in itertools.product(*options):
        used = [j for j in combo if j is not None]
        if len(used) != len(set(used)):
            continue
        key = tuple((1, iou(dets[i][0], gts[j]), -j) if j is not None else (0,) for i, j in zip(order, combo))
        if best_key is None or key > best_key:
            best_key, best = key, combo
    tp = sum(j is not None for j in best)
    return tp, len(dets) - tp, len(gts) - tp, dict(zip(order, best))


def ap_step_integration(scored_hits, n_gt):
    """AP as the mean, over ground truths, of the best precision reachable at or beyond
    the rank where each true positive is found. ``scored_hits``: list of is_tp in rank order."""
    if n_gt == 0:
        return None
    precisions = []
    tp = 0
    for k, hit in enumerate(scored_hits, 1):
        tp += hit
        precisions.append(tp / k)
    total = 0.0
    for k, hit in enumerate(scored_hits):
        if hit:
            total += max(precisions[k:])
    return total / n_gt


# --------------------------------------------------------------------------- gradients


def central_difference(f, values, h=1e-6):
    """Gradient of scalar f(list) by central differences."""
    grad = []
    for i in range(len(values)):
        up = list(values)
        dn = list(values)
        up[i] += h
        dn[i] -= h
        grad.append((f(up) - f(dn)) / (2 * h))
    return grad
