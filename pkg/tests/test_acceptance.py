"""Acceptance suite: each test covers one release criterion and prints a
single pass line on success (test failure output marks the criterion failed).

Criteria 9-11 share one seeded end-to-end scenario: a 3-class synthetic
dataset (10 videos per class, 32x32, T=8), a least-squares toy oracle, and
untargeted attacks on the first 20 videos, run twice with identical seeds.
"""

import filecmp
import json
import os
import time

import numpy as np
import pytest

from restyleadv.blackbox import NesParams, PgdParams, nes_gradient, pgd_step
from restyleadv.cli import RUN_CONFIG_DEFAULTS, run_batch_attack
from restyleadv.core import AttackConfig, Video
from restyleadv.saliency import (area_significance, grad_significance,
                                 rank_regions, score_regions, select_top_r)
from restyleadv.styletransfer import (IdentityExtractor, StylePair,
                                      build_matting_laplacian,
                                      content_loss_and_grad, gram_matrix,
                                      realistic_loss, realistic_loss_and_grad,
                                      style_loss, style_loss_and_grad,
                                      temporal_loss, temporal_loss_and_grad,
                                      tv_loss, tv_loss_and_grad)
from restyleadv.testbed import SyntheticDatasetSpec, gen_synthetic_dataset

from conftest import strip_regions
from test_saliency import brute_force_select


def passline(capfd, number, message):
    with capfd.disabled():
        print(f"\n[PASS] criterion {number:2d}: {message}")


# ---------------------------------------------------------------------------
# shared end-to-end scenario (criteria 9-11)
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def e2e(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e")
    data = str(root / "data")
    spec = SyntheticDatasetSpec(num_classes=3, videos_per_class=10, height=32,
                                width=32, num_frames=8, motion="translate",
                                seed=0)
    gen_synthetic_dataset(spec, data)
    run = dict(RUN_CONFIG_DEFAULTS)
    run.update(dataset=data, num_videos=20)
    cfg = AttackConfig(style_iterations=80, nes_population=20,
                       query_budget=10_000, rng_seed=1)

    start = time.perf_counter()
    report_a, outcomes_a = run_batch_attack(run, cfg, str(root / "run_a"))
    elapsed = time.perf_counter() - start
    report_b, _ = run_batch_attack(run, cfg, str(root / "run_b"))

    with open(root / "run_a" / "metrics.json") as fh:
        metrics_a = json.load(fh)
    return {
        "root": root, "report_a": report_a, "report_b": report_b,
        "outcomes_a": outcomes_a, "metrics_a": metrics_a, "elapsed": elapsed,
        "budget": cfg.query_budget,
    }


def test_criterion_01_selection_matches_brute_force(capfd):
    rng = np.random.default_rng(11)
    start = time.perf_counter()
    for _ in range(1000):
        n = int(rng.integers(1, 11))
        areas = rng.integers(1, 40, size=n).tolist()
        regions = strip_regions(areas)
        l_total = np.round(rng.uniform(size=n), 1)  # frequent ties
        mu = float(rng.uniform())
        got = select_top_r(regions, l_total, mu).region_ids
        want = brute_force_select(regions, l_total, mu)
        assert got == want, (areas, list(l_total), mu)
        assert len(got) >= 1
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    passline(capfd, 1, f"top-r selection matches brute-force enumeration on "
                       f"1000 random instances in {elapsed:.2f}s")


def test_criterion_02_normalization_contract(capfd):
    rng = np.random.default_rng(12)
    checked = 0
    while checked < 1000:
        n = int(rng.integers(2, 11))
        areas = rng.integers(1, 40, size=n).tolist()
        if len(set(areas)) < 2:
            continue  # need non-constant raw areas
        regions = strip_regions(areas)
        heat = rng.uniform(size=(1, int(sum(areas))))
        l_grad = grad_significance(regions, heat)
        l_area = area_significance(regions)
        for scores in (l_grad, l_area):
            assert scores.min() == 0.0
            assert scores.max() == 1.0
        base = score_regions(regions, heat, 0.5)
        ref_sel = select_top_r(regions, base.l_total, 0.4).region_ids
        ref_order = rank_regions(regions, base.l_total)
        for c in (0.1, 7.3):
            scaled = score_regions(regions, c * heat, 0.5)
            assert select_top_r(regions, scaled.l_total, 0.4).region_ids == ref_sel
            assert rank_regions(regions, scaled.l_total) == ref_order
        checked += 1
    passline(capfd, 2, "min-max normalization attains 0 and 1 exactly; "
                       "selection invariant to heatmap scaling (1000 instances)")


def test_criterion_03_ablation_endpoints(capfd):
    rng = np.random.default_rng(13)
    for _ in range(100):
        n = int(rng.integers(2, 9))
        regions = strip_regions(rng.integers(1, 30, size=n).tolist())
        heat = rng.uniform(size=(1, int(regions.areas().sum())))
        scores0 = score_regions(regions, heat, 0.0)
        scores1 = score_regions(regions, heat, 1.0)
        assert np.array_equal(scores0.l_total, scores0.l_grad)
        assert np.array_equal(scores1.l_total, scores1.l_area)
        assert rank_regions(regions, scores0.l_total) == \
            rank_regions(regions, scores0.l_grad)
        assert rank_regions(regions, scores1.l_total) == \
            rank_regions(regions, scores1.l_area)
        for mu in (0.0, 0.4, 1.0):
            assert select_top_r(regions, scores0.l_total, mu).region_ids == \
                select_top_r(regions, scores0.l_grad, mu).region_ids
            assert select_top_r(regions, scores1.l_total, mu).region_ids == \
                select_top_r(regions, scores1.l_area, mu).region_ids
    passline(capfd, 3, "alpha endpoints reduce selection to the single-score "
                       "rankings (100 seeded instances)")


def test_criterion_04_loss_identities(capfd):
    rng = np.random.default_rng(14)
    ext = IdentityExtractor()
    ones = np.ones((8, 8), dtype=bool)
    x = rng.uniform(size=(8, 8, 3))
    s = rng.uniform(size=(8, 8, 3))

    masked = style_loss(x, s, [StylePair(ones, ones)], ext)
    gx = gram_matrix(ext.extract(x)[0]["pixels"])
    gs = gram_matrix(ext.extract(s)[0]["pixels"])
    assert abs(masked - float(np.sum((gx - gs) ** 2)) / 9.0) < 1e-10

    assert style_loss(s, s, [StylePair(ones, ones)], ext) == 0.0

    const = np.full((8, 8, 3), 0.4)
    assert tv_loss(const) == 0.0
    lap = build_matting_laplacian(rng.uniform(size=(8, 8, 3)))
    assert abs(realistic_loss(const, lap)) < 1e-10

    f = rng.uniform(size=(8, 8, 3))
    assert temporal_loss(f, f, np.zeros((8, 8, 2)), np.ones((8, 8))) == 0.0
    passline(capfd, 4, "style/tv/realistic/temporal loss identities hold")


def test_criterion_05_gradient_checks(capfd):
    rng = np.random.default_rng(15)
    ext = IdentityExtractor()
    ref = rng.uniform(size=(8, 8, 3))
    style = rng.uniform(size=(8, 8, 3))
    region = np.zeros((8, 8), dtype=bool)
    region[2:6, 1:7] = True
    lap = build_matting_laplacian(rng.uniform(size=(8, 8, 3)))
    prev = rng.uniform(size=(8, 8, 3))
    flow = rng.uniform(-1, 1, size=(8, 8, 2))
    vis = (rng.uniform(size=(8, 8)) > 0.3).astype(np.float64)

    cases = {
        "content": lambda z: content_loss_and_grad(z, ref, ext),
        "style": lambda z: style_loss_and_grad(
            z, style, [StylePair(region, np.ones((8, 8), dtype=bool))], ext),
        "tv": tv_loss_and_grad,
        "realistic": lambda z: realistic_loss_and_grad(z, lap),
        "temporal": lambda z: temporal_loss_and_grad(z, prev, flow, vis),
    }
    start = time.perf_counter()
    h = 1e-3
    for name, fn in cases.items():
        x = rng.uniform(size=(8, 8, 3))
        _, grad = fn(x)
        for _ in range(5):
            d = rng.standard_normal(x.shape)
            d /= np.linalg.norm(d)
            fd = (fn(x + h * d)[0] - fn(x - h * d)[0]) / (2 * h)
            analytic = float(np.vdot(grad, d))
            denom = max(abs(fd), abs(analytic), 1e-8)
            assert abs(fd - analytic) / denom < 1e-4, name
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    passline(capfd, 5, f"analytic gradients match central differences "
                       f"(rel < 1e-4) in {elapsed:.2f}s")


def test_criterion_06_matting_laplacian_properties(capfd):
    rng = np.random.default_rng(16)
    frame = rng.uniform(size=(10, 10, 3))
    lap = build_matting_laplacian(frame)
    L = lap.matrix.toarray()
    assert np.max(np.abs(L - L.T)) < 1e-10
    assert np.max(np.abs(L.sum(axis=1))) < 1e-10
    for _ in range(100):
        x = rng.standard_normal(L.shape[0])
        assert float(x @ L @ x) > -1e-10
    v = rng.uniform(size=(10, 10, 3))
    assert abs(realistic_loss(v + 0.21, lap) - realistic_loss(v, lap)) < 1e-8
    passline(capfd, 6, "matting Laplacian symmetric, zero row sums, PSD on "
                       "100 probes, shift-invariant realism loss")


def test_criterion_07_nes_estimator(capfd):
    # constant objective: exactly zero estimate
    zero = nes_gradient(lambda v: 0.3, Video(np.full((1, 4, 4, 3), 0.5)),
                        NesParams(40, 1e-2), np.random.default_rng(0))
    assert np.all(zero == 0.0)
    # 48-dimensional linear objective, n=200, fixed seeds
    c = np.random.default_rng(123).standard_normal((1, 4, 4, 3))
    g = nes_gradient(lambda v: float(np.vdot(c, v.frames)),
                     Video(np.full((1, 4, 4, 3), 0.5)),
                     NesParams(200, 1e-3), np.random.default_rng(154))
    cos = float(np.vdot(g, c) / (np.linalg.norm(g) * np.linalg.norm(c)))
    assert cos > 0.9
    passline(capfd, 7, f"zeroth-order estimate: zero on constants, cosine "
                       f"{cos:.3f} > 0.9 on the 48-d linear objective")


def test_criterion_08_pgd_feasibility(capfd):
    rng = np.random.default_rng(17)
    for _ in range(1000):
        anchor = rng.uniform(size=(1, 3, 3, 3))
        eps = float(rng.uniform(0.01, 0.3))
        step = min(float(rng.uniform(1e-6, 1.0)) * eps, eps)
        x = Video(np.clip(anchor + rng.uniform(-eps, eps, anchor.shape),
                          0.0, 1.0))
        grad = rng.standard_normal(anchor.shape)
        out = pgd_step(x, grad, PgdParams(step=step, eps=eps,
                                          anchor=anchor)).frames
        assert np.all(out >= 0.0)
        assert np.all(out <= 1.0)
        assert np.all(out <= anchor + eps)
        assert np.all(out >= np.minimum(anchor - eps, out))
        assert np.all(np.abs(out - anchor) <= eps + 1e-15)
    passline(capfd, 8, "1000 projected steps stay inside the eps-ball and "
                       "the valid pixel range")


def test_criterion_09_query_accounting(capfd, e2e):
    rows = e2e["metrics_a"]["rows"]
    assert len(rows) == 20
    for row in rows:
        assert row["queries_used"] == row["oracle_counter_delta"], row
    for _, result, delta in e2e["outcomes_a"]:
        assert result.queries_used == delta
        assert result.selection_queries >= 1
        assert result.queries_used >= result.selection_queries + 1
    passline(capfd, 9, "every report's query count equals its oracle counter "
                       "delta, selection queries included")


def test_criterion_10_toy_end_to_end(capfd, e2e):
    metrics = e2e["metrics_a"]
    assert metrics["oracle_train_accuracy"] >= 0.9
    report = e2e["report_a"]
    assert report.num_results == 20
    assert report.num_success >= 18          # >= 90% of 20 videos
    for _, result, _ in e2e["outcomes_a"]:
        assert result.queries_used <= e2e["budget"]
        assert result.error is None
        # stylization monotonicity on every run
        assert result.style_loss_final <= result.style_loss_initial
    one_q = sum(1 for _, r, _ in e2e["outcomes_a"] if r.one_query_success)
    assert one_q >= 1
    assert e2e["elapsed"] < 600.0
    passline(capfd, 10, f"untargeted ASR {report.asr:.0f}% on 20 videos "
                        f"({one_q} one-query) in {e2e['elapsed']:.0f}s, "
                        f"stylization monotone on every run")


def test_criterion_11_determinism(capfd, e2e):
    root = e2e["root"]
    compared = 0
    for name in sorted(os.listdir(root / "run_a" / "result")):
        pa = root / "run_a" / "result" / name / "report.json"
        pb = root / "run_b" / "result" / name / "report.json"
        assert pb.is_file()
        assert filecmp.cmp(pa, pb, shallow=False), name
        compared += 1
    assert compared == 20
    passline(capfd, 11, "both same-seed runs produced byte-identical "
                        "report.json files for all 20 videos")
