"""End-to-end attack orchestration and metric aggregation.

One attack: pick a style source by oracle confidence, segment content and
style first frames, rank regions by the saliency/area criterion on both
sides, track the selected content regions through the clip, stylize, then
fine-tune under the query budget. All oracle traffic flows through the
counting wrapper so reported query totals are exact.
"""

from __future__ import annotations

import csv
import json
import os
import traceback
from dataclasses import dataclass, field

import numpy as np

from . import saliency, segmentation, styletransfer
from .blackbox import AttackResult, finetune
from .core import (AttackConfig, AttackGoal, ClassifierOracle, ConfigError,
                   Video, export_frames)
from .saliency import gradcam_heatmap, score_regions, select_top_r
from .segmentation import MaskSequence, RegionSet, save_mask_sequence, segment_first_frame, track_regions
from .styletransfer import LossWeights, stylize_video


@dataclass
class StyleSource:
    video: Video
    style_image: np.ndarray
    selection_queries: int
    candidate_index: int


@dataclass
class AttackAdapters:
    """Pluggable components one attack needs."""

    oracle: ClassifierOracle
    segmenter: object
    tracker: object
    extractor: object
    whitebox_model: object
    style_candidates: list
    flow_provider: object = None


@dataclass
class MetricsReport:
    asr: float
    one_q_asr: float
    min_q: int | None
    max_q: int | None
    avg_q: float | None
    num_results: int
    num_success: int
    rows: list = field(default_factory=list)


def select_style_video(candidates, oracle: ClassifierOracle, goal: AttackGoal,
                       rng) -> StyleSource:
    """Pick the style-source video through oracle queries.

    Targeted: query every candidate, keep the highest-scoring one classified
    as the target. Untargeted: scan in seeded random order and stop at the
    first candidate classified off the original label.
    """
    if not candidates:
        raise ConfigError("no style candidates")
    queries = 0
    if goal.mode == "targeted":
        best = None
        for i, cand in enumerate(candidates):
            pred = oracle.query(cand)
            queries += 1
            if pred.label == goal.target_label:
                if best is None or pred.score > best[0]:
                    best = (pred.score, i)
        if best is None:
            raise ConfigError("no usable style source: no candidate classified "
                              "as the target class")
        idx = best[1]
    else:
        order = rng.permutation(len(candidates))
        idx = None
        for i in order:
            pred = oracle.query(candidates[i])
            queries += 1
            if pred.label != goal.original_label:
                idx = int(i)
                break
        if idx is None:
            raise ConfigError("no usable style source: every candidate matches "
                              "the original class")
    video = candidates[idx]
    return StyleSource(video, video.frames[0], queries, idx)


def _select_regions(frame, segmenter, whitebox_model, alpha_select, mu):
    regions = segment_first_frame(frame, segmenter)
    class_id = whitebox_model.top1(frame)
    heatmap = gradcam_heatmap(whitebox_model, frame, class_id)
    scores = score_regions(regions, heatmap, alpha_select)
    selected = select_top_r(regions, scores.l_total, mu)
    return regions, scores, selected


def run_attack(video: Video, goal: AttackGoal, config: AttackConfig,
               adapters: AttackAdapters, out_dir=None) -> AttackResult:
    """Full attack on one video; component failures yield a failed result
    with diagnostics instead of propagating."""
    oracle = adapters.oracle
    q_start = oracle.query_count
    try:
        rng = np.random.default_rng(config.rng_seed)
        style = select_style_video(adapters.style_candidates, oracle, goal, rng)

        content_regions, content_scores, content_sel = _select_regions(
            video.frames[0], adapters.segmenter, adapters.whitebox_model,
            config.alpha_select, config.mu)
        style_regions, style_scores, style_sel = _select_regions(
            style.style_image, adapters.segmenter, adapters.whitebox_model,
            config.alpha_select, config.mu)

        content_masks = RegionSet(
            [content_regions.mask_for(rid) for rid in content_sel.region_ids],
            list(content_sel.region_ids))
        mask_seq = track_regions(video, content_masks, adapters.tracker)
        # rank-p content region pairs with rank-p style region, cyclically
        style_masks = [style_regions.mask_for(rid)
                       for rid in style_sel.region_ids[:content_sel.r]]

        styled = stylize_video(
            video, style.style_image, mask_seq, style_masks,
            LossWeights.from_config(config), adapters.extractor,
            adapters.flow_provider, iterations=config.style_iterations)

        remaining = config.query_budget - (oracle.query_count - q_start)
        if remaining < 1:
            result = AttackResult(False, styled.video,
                                  oracle.query_count - q_start, False, None)
        else:
            result = finetune(oracle, styled.video, goal, config, budget=remaining)
        result.selection_queries = style.selection_queries
        result.queries_used = oracle.query_count - q_start
        result.region_ids = list(content_sel.region_ids)
        result.style_loss_initial = styled.initial_loss
        result.style_loss_final = styled.final_loss
        result.significance = {
            "content": _scores_dict(content_regions, content_scores),
            "style": _scores_dict(style_regions, style_scores),
            "style_region_ids": list(style_sel.region_ids[:content_sel.r]),
        }
        if out_dir is not None:
            _write_audit_bundle(out_dir, video, goal, config, result,
                                mask_seq, styled)
        return result
    except Exception as exc:  # batch runs must never crash on one video
        return AttackResult(False, video, oracle.query_count - q_start, False,
                            None, error=f"{type(exc).__name__}: {exc}\n"
                                        f"{traceback.format_exc(limit=3)}")


def _scores_dict(regions: RegionSet, scores):
    return {
        "region_ids": list(regions.region_ids),
        "l_grad": [float(v) for v in scores.l_grad],
        "l_area": [float(v) for v in scores.l_area],
        "l_total": [float(v) for v in scores.l_total],
    }


def _write_audit_bundle(out_dir, video, goal, config, result: AttackResult,
                        mask_seq: MaskSequence, styled):
    os.makedirs(out_dir, exist_ok=True)
    save_mask_sequence(mask_seq, os.path.join(out_dir, "masks"))
    export_frames(styled.video, os.path.join(out_dir, "stylized"))
    export_frames(result.adversarial_video, os.path.join(out_dir, "adversarial"))
    with open(os.path.join(out_dir, "trace.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "objective"])
        for i, v in enumerate(result.trace):
            writer.writerow([i, repr(float(v))])
    report = result_report(goal, config, result)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def result_report(goal: AttackGoal, config: AttackConfig, result: AttackResult) -> dict:
    return {
        "goal": {"mode": goal.mode, "original_label": goal.original_label,
                 "target_label": goal.target_label},
        "success": result.success,
        "one_query_success": result.one_query_success,
        "queries_used": result.queries_used,
        "selection_queries": result.selection_queries,
        "r": len(result.region_ids) if result.region_ids is not None else None,
        "region_ids": result.region_ids,
        "significance": result.significance,
        "style_loss_initial": result.style_loss_initial,
        "style_loss_final": result.style_loss_final,
        "final_prediction": (None if result.final_prediction is None else
                             {"label": int(result.final_prediction.label),
                              "score": float(result.final_prediction.score)}),
        "error": result.error,
        "config": {k: v for k, v in vars(config).items()},
        "seed": config.rng_seed,
    }


def compute_metrics(results) -> MetricsReport:
    """Aggregate success rate and query statistics over attack results."""
    if not results:
        raise ConfigError("no results to aggregate")
    n = len(results)
    succ = [r for r in results if r.success]
    one_q = sum(1 for r in results if r.one_query_success)
    rows = [{"success": r.success, "one_query_success": r.one_query_success,
             "queries_used": r.queries_used,
             "selection_queries": r.selection_queries} for r in results]
    if succ:
        qs = [r.queries_used for r in succ]
        min_q, max_q, avg_q = int(min(qs)), int(max(qs)), float(np.mean(qs))
    else:
        min_q = max_q = avg_q = None
    return MetricsReport(
        asr=100.0 * len(succ) / n,
        one_q_asr=100.0 * one_q / n,
        min_q=min_q, max_q=max_q, avg_q=avg_q,
        num_results=n, num_success=len(succ), rows=rows)
