import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from fusionnet.boxes import Detection, GroundTruth
from fusionnet.evaluation import (
    FITNESS_PRESETS,
    FitnessWeights,
    MatchRecord,
    MetricReport,
    average_precision,
    average_precision_detail,
    evaluate,
    fitness,
    fitness_sensitivity,
    fp_analysis,
    get_fitness_weights,
    improvement_ledger,
    iou,
    match_and_count,
    read_predictions,
    size_filter,
    write_predictions,
)


def random_scene(rng: random.Random, max_boxes=4, image_id="im", grid=20):
    def box():
        x, y = rng.randint(0, grid - 2), rng.randint(0, grid - 2)
        return (float(x), float(y), float(x + rng.randint(1, 8)), float(y + rng.randint(1, 8)))

    gts = [GroundTruth(image_id, box()) for _ in range(rng.randint(0, max_boxes))]
    dets = []
    for _ in range(rng.randint(0, max_boxes)):
        if gts and rng.random() < 0.6:
            g = rng.choice(gts).box
            b = tuple(float(v + rng.randint(-1, 1)) for v in g)
            if not (b[2] > b[0] and b[3] > b[1]):
                b = g
        else:
            b = box()
        dets.append(Detection(image_id, b, rng.choice([0.1, 0.3, 0.5, 0.5, 0.9, rng.random()])))
    return dets, gts


def test_iou_closed_forms():
    assert iou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0
    assert iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0
    assert iou((0, 0, 1, 1), (0.5, 0, 1.5, 1)) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        iou((0, 0, 0, 1), (0, 0, 1, 1))


def test_perfect_detections():
    gts = [GroundTruth("a", (0, 0, 10, 10)), GroundTruth("a", (20, 20, 30, 30))]
    dets = [Detection("a", g.box, 0.9) for g in gts]
    m = match_and_count(dets, gts)
    assert (m.tp, m.fp, m.fn, m.fnr, m.fdr) == (2, 0, 0, 0.0, 0.0)
    assert average_precision(dets, gts) == 1.0


def test_no_detections_flags_undefined_fdr():
    gts = [GroundTruth("a", (i, 0, i + 5, 5)) for i in range(0, 100, 10)]
    m = match_and_count([], gts)
    assert m.fnr == 1.0 and m.fdr == 0.0
    assert "fdr_undefined_no_predictions" in m.flags()


def test_hand_scene_matches_bruteforce():
    gts = [GroundTruth("a", (0.0, 0.0, 10.0, 10.0)), GroundTruth("a", (6.0, 0.0, 16.0, 10.0))]
    dets = [Detection("a", (3.0, 0.0, 13.0, 10.0), 0.9), Detection("a", (0.0, 0.0, 10.0, 10.0), 0.8),
            Detection("a", (6.0, 0.0, 16.0, 10.0), 0.7)]
    m = match_and_count(dets, gts, iou_thr=0.5, conf_thr=0.0)
    tp, fp, fn, _ = oracles.greedy_counts_bruteforce([(d.box, d.confidence) for d in dets], [g.box for g in gts], 0.5)
    assert (m.tp, m.fp, m.fn) == (tp, fp, fn)


def test_matching_respects_conf_threshold_inclusively():
    g = [GroundTruth("a", (0, 0, 10, 10))]
    assert match_and_count([Detection("a", (0, 0, 10, 10), 0.25)], g).tp == 1
    assert match_and_count([Detection("a", (0, 0, 10, 10), 0.2499)], g).fn == 1


def test_ap_hand_cases():
    g = [GroundTruth("a", (0, 0, 10, 10))]
    assert average_precision([Detection("a", (0, 0, 10, 10), 0.9)], g) == 1.0
    tp, fp = (0, 0, 10, 10), (50, 50, 60, 60)
    assert average_precision([Detection("a", tp, 0.9), Detection("a", fp, 0.4)], g) == 1.0
    assert average_precision([Detection("a", tp, 0.4), Detection("a", fp, 0.9)], g) == 0.5


def test_ap_degenerate_cases():
    assert average_precision_detail([], [], 0.5).ap == 1.0
    assert average_precision([Detection("a", (0, 0, 1, 1), 0.5)], []) == 0.0
    r = average_precision_detail([], [GroundTruth("a", (0, 0, 1, 1))], 0.5)
    assert r.ap == 0.0 and r.flags


def _oracle_ap(dets, gts, thr):
    by_img = {}
    for d in dets:
        by_img.setdefault(d.image_id, []).append(d)
    hits = []
    for img, ds in by_img.items():
        g = [x.box for x in gts if x.image_id == img]
        _, _, _, assign = oracles.greedy_counts_bruteforce([(d.box, d.confidence) for d in ds], g, thr)
        hits += [(ds[i].confidence, assign[i] is not None) for i in range(len(ds))]
    hits.sort(key=lambda h: -h[0])
    return oracles.ap_step_integration([h[1] for h in hits], len(gts))


def test_ap_100_sample_scene_matches_step_integration():
    rng = random.Random(7)
    dets, gts = [], []
    for k in range(25):
        d, g = random_scene(rng, image_id=f"im{k}")
        dets += [Detection(x.image_id, x.box, rng.random()) for x in d]  # distinct confidences
        gts += g
    assert len(dets) + len(gts) > 50
    for thr in (0.25, 0.5):
        assert average_precision(dets, gts, thr) == pytest.approx(_oracle_ap(dets, gts, thr), abs=1e-9)


def test_fitness_published_examples():
    assert fitness(0.879, 0.852, 0.197, 0.045) == pytest.approx(0.869, abs=0.0015)
    assert fitness(0.853, 0.835, 0.220, 0.094) == pytest.approx(0.837, abs=0.0015)
    assert fitness(1, 1, 0, 0) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        fitness(1.2, 0.5, 0.1, 0.1)


def test_fitness_weights_validation_and_presets():
    with pytest.raises(ValueError):
        FitnessWeights(0.5, 0.5, 0.1, 0.1)
    w = get_fitness_weights("supp10-row3")
    assert (w.a_map25, w.a_map50, w.a_fnr, w.a_fdr) == (0.10, 0.10, 0.45, 0.35)
    with pytest.raises(ValueError):
        get_fitness_weights("row9")


unit = st.floats(0.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(m25=unit, m50=unit, fnr=unit, fdr=unit, d=st.floats(0.0, 1.0), which=st.integers(0, 3))
def test_fitness_monotone(m25, m50, fnr, fdr, d, which):
    base = fitness(m25, m50, fnr, fdr)
    q = [m25, m50, fnr, fdr]
    if which < 2:
        q[which] = min(1.0, q[which] + d)
        assert fitness(*q) >= base - 1e-15
    else:
        q[which] = min(1.0, q[which] + d)
        assert fitness(*q) <= base + 1e-15


def test_sensitivity_single_preset_trivially_stable():
    rep = fitness_sensitivity({"a": [(0.9, 0.8, 0.1, 0.1)], "b": [(0.5, 0.5, 0.5, 0.5)]}, {"default": FitnessWeights()})
    assert rep.stable and rep.argmax["default"] == "a"


def test_size_filter_rule():
    assert size_filter([GroundTruth("a", (0, 0, 15, 40))]) == []
    kept = size_filter([GroundTruth("a", (0, 0, 16, 16))])
    assert len(kept) == 1
    assert size_filter([]) == []
    # scale converts working-resolution boxes to original pixels
    assert len(size_filter([GroundTruth("a", (0, 0, 8, 8))], 16, scale=2.0)) == 1


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 40), st.integers(1, 40)), max_size=20))
def test_size_filter_idempotent(dims):
    items = [GroundTruth("a", (0.0, 0.0, float(w), float(h))) for w, h in dims]
    once = size_filter(items)
    assert size_filter(once) == once


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_ap25_at_least_ap50(seed):
    rng = random.Random(seed)
    dets, gts = [], []
    for k in range(3):
        d, g = random_scene(rng, image_id=f"{k}")
        dets += d
        gts += g
    assert average_precision(dets, gts, 0.25) >= average_precision(dets, gts, 0.5) - 1e-12


def test_fp_heatmap_single_center_and_mass():
    rec = [MatchRecord("cam1/a.png", "FP", (60.0, 60.0, 68.0, 68.0), 0.9)]
    fa = fp_analysis(rec, lambda i: i.split("/")[0], (128, 128), cell=16)
    grid = fa.heatmaps["cam1"]
    assert int(grid.sum()) == 1 and int((grid > 0).sum()) == 1 and grid[4, 4] == 1
    rng = np.random.default_rng(0)
    many = [MatchRecord(f"cam{k % 2}/x", "FP", (float(x), float(y), float(x + 4), float(y + 4)), 0.5)
            for k, (x, y) in enumerate(rng.integers(0, 120, (50, 2)))]
    fa = fp_analysis(many, lambda i: i.split("/")[0], (128, 128))
    assert sum(int(g.sum()) for g in fa.heatmaps.values()) == 50


def test_dimension_stats_reproduce_fixture_means():
    fp = [MatchRecord("a", "FP", (0.0, 0.0, w, h), 0.5) for w, h in ((21.2, 10.97), (21.2, 10.97))]
    tp = [MatchRecord("a", "TP", (0.0, 0.0, w, h), 0.9) for w, h in ((40.0, 20.0), (48.56, 23.02))]
    fa = fp_analysis(fp + tp, {"a": "cam"}, (640, 640))
    assert (fa.stats["FP"].mean_w, fa.stats["FP"].mean_h) == pytest.approx((21.2, 10.97), abs=1e-12)
    assert (fa.stats["TP"].mean_w, fa.stats["TP"].mean_h) == pytest.approx((44.28, 21.51), abs=1e-12)
    assert fa.stats["FN"].n == 0


def test_ledger_telescopes_published_example():
    base = (0.685, 0.270, 0.473, 0.029)
    s1 = (0.946, 0.762, 0.146, 0.018)
    s2 = (0.944, 0.904, 0.121, 0.026)
    s3 = (0.967, 0.898, 0.082, 0.019)
    led = improvement_ledger(base, [s1, s2, s3])
    assert [s[1] for s in led.step_floats()] == [0.492, 0.142, -0.006]
    assert led.total_floats()[1] == 0.628 and led.total_floats()[2] == -0.391
    for k in range(4):
        assert sum(s[k] for s in led.steps) == led.total[k]
    assert isinstance(led.total[0], Fraction)


def test_ledger_zero_change():
    q = (0.5, 0.4, 0.3, 0.2)
    led = improvement_ledger(q, [q, q])
    assert all(v == 0 for s in led.steps for v in s) and all(v == 0 for v in led.total)
    with pytest.raises(ValueError):
        improvement_ledger(q, [])


def test_evaluate_report_and_roundtrip(tmp_path):
    gts = [GroundTruth("a", (0, 0, 20, 20)), GroundTruth("b", (5, 5, 30, 30))]
    dets = [Detection("a", (0, 0, 20, 20), 0.9), Detection("b", (100, 100, 110, 110), 0.6)]
    rep = evaluate(dets, gts, FITNESS_PRESETS["supp10-row3"])
    assert (rep.tp, rep.fp, rep.fn) == (1, 1, 1)
    assert rep.fitness == pytest.approx(rep.recompute_fitness())
    rep.save(tmp_path / "r.json")
    write_predictions(tmp_path / "p.txt", dets)
    back = read_predictions(tmp_path / "p.txt")
    assert [d.box for d in back] == [d.box for d in dets]
    empty = evaluate([], [])
    assert empty.flags and math.isfinite(empty.fitness)


def test_metric_report_from_metrics():
    r = MetricReport.from_metrics(0.879, 0.852, 0.197, 0.045)
    assert r.quad() == (0.879, 0.852, 0.197, 0.045)
    assert r.to_dict()["interpolation"] == "all-point"
