"""Command-line entry point.

Subcommands:
  gen-data       write a deterministic synthetic dataset
  attack         run batch attacks from a flat JSON config
  metrics        aggregate report.json files from a results directory
  export-frames  dump a frame directory re-quantized to 8-bit PNGs
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import json
import os
import sys

import numpy as np

from . import pipeline, segmentation, styletransfer, testbed
from .core import AttackConfig, AttackGoal, ClassifierOracle, ConfigError, load_video, export_frames
from .pipeline import AttackAdapters, MetricsReport, compute_metrics, result_report, run_attack
from .testbed import (ExternalProcessOracle, SyntheticDatasetSpec,
                      classifier_accuracy, fit_linear_oracle, fit_whitebox_model,
                      gen_synthetic_dataset, load_dataset)

ATTACK_CONFIG_FIELDS = {f.name for f in dataclasses.fields(AttackConfig)}

RUN_CONFIG_DEFAULTS = {
    "dataset": None,            # required
    "oracle": "toy",            # "toy" or an external command string
    "goal_mode": "untargeted",
    "target_label": None,
    "num_videos": None,          # default: attack every dataset video
    "segmenter": "components",   # "components" | "grid"
    "grid_rows": 4,
    "grid_cols": 4,
    "tracker": "translate",      # "static" | "translate"
    "extractor": "conv",         # "identity" | "conv"
}


def parse_run_config(raw: dict) -> tuple[dict, AttackConfig]:
    known = set(RUN_CONFIG_DEFAULTS) | ATTACK_CONFIG_FIELDS
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    run = dict(RUN_CONFIG_DEFAULTS)
    run.update({k: v for k, v in raw.items() if k in RUN_CONFIG_DEFAULTS})
    if not run["dataset"]:
        raise ConfigError("config must name a dataset directory")
    attack_cfg = AttackConfig(**{k: v for k, v in raw.items()
                                 if k in ATTACK_CONFIG_FIELDS})
    return run, attack_cfg


def _build_segmenter(run):
    if run["segmenter"] == "grid":
        return segmentation.GridSegmenter(run["grid_rows"], run["grid_cols"])
    if run["segmenter"] == "components":
        return segmentation.ConnectedComponentsSegmenter()
    raise ConfigError(f"unknown segmenter {run['segmenter']!r}")


def _build_tracker(run):
    if run["tracker"] == "static":
        return segmentation.StaticTracker()
    if run["tracker"] == "translate":
        return segmentation.TranslationTracker()
    raise ConfigError(f"unknown tracker {run['tracker']!r}")


def _build_extractor(run, seed):
    if run["extractor"] == "identity":
        return styletransfer.IdentityExtractor()
    if run["extractor"] == "conv":
        return styletransfer.RandomConvExtractor(seed=seed)
    raise ConfigError(f"unknown extractor {run['extractor']!r}")


def run_batch_attack(run: dict, attack_cfg: AttackConfig, out_dir,
                     workers: int = 1):
    """Attack the first ``num_videos`` dataset clips; one oracle per video."""
    manifest, videos, labels = load_dataset(run["dataset"])
    if run["oracle"] == "toy":
        model = fit_linear_oracle(videos, labels)
        acc = classifier_accuracy(model, videos, labels)
        predict_fn = model.predict
    else:
        adapter = ExternalProcessOracle(run["oracle"].split()
                                        if isinstance(run["oracle"], str)
                                        else run["oracle"])
        acc = None
        predict_fn = adapter.predict
    whitebox = fit_whitebox_model(videos, labels)
    extractor = _build_extractor(run, attack_cfg.rng_seed)
    segmenter = _build_segmenter(run)
    tracker = _build_tracker(run)

    n = run["num_videos"] or len(videos)
    n = min(n, len(videos))

    def attack_one(i):
        video = videos[i]
        row = manifest["videos"][i]
        if run["goal_mode"] == "targeted":
            goal = AttackGoal("targeted", original_label=labels[i],
                              target_label=int(run["target_label"]))
        else:
            goal = AttackGoal("untargeted", original_label=labels[i])
        cfg = attack_cfg.with_overrides(rng_seed=attack_cfg.rng_seed + i)
        oracle = ClassifierOracle(predict_fn)
        candidates = [videos[j] for j in range(len(videos)) if j != i]
        adapters = AttackAdapters(
            oracle=oracle, segmenter=segmenter, tracker=tracker,
            extractor=extractor, whitebox_model=whitebox,
            style_candidates=candidates)
        vdir = os.path.join(out_dir, "result", row["video_id"])
        result = run_attack(video, goal, cfg, adapters, out_dir=vdir)
        counter_delta = oracle.query_count
        return row["video_id"], result, counter_delta

    os.makedirs(out_dir, exist_ok=True)
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(attack_one, range(n)))
    else:
        outcomes = [attack_one(i) for i in range(n)]

    results = [r for _, r, _ in outcomes]
    report = compute_metrics(results)
    for (vid, r, delta), row in zip(outcomes, report.rows):
        row["video_id"] = vid
        row["oracle_counter_delta"] = delta
        row["error"] = r.error
    summary = metrics_to_dict(report)
    if acc is not None:
        summary["oracle_train_accuracy"] = acc
    write_report(summary, os.path.join(out_dir, "metrics.json"))
    return report, outcomes


def metrics_to_dict(report: MetricsReport) -> dict:
    # absent query stats serialize as explicit nulls
    return {
        "asr": report.asr,
        "one_q_asr": report.one_q_asr,
        "min_q": report.min_q,
        "max_q": report.max_q,
        "avg_q": report.avg_q,
        "num_results": report.num_results,
        "num_success": report.num_success,
        "rows": report.rows,
    }


def write_report(report: dict, path):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args):
    with open(args.spec) as fh:
        raw = json.load(fh)
    spec = SyntheticDatasetSpec(**raw)
    manifest = gen_synthetic_dataset(spec, args.out)
    print(f"wrote {len(manifest['videos'])} videos to {args.out}")
    return 0


def cmd_attack(args):
    with open(args.config) as fh:
        raw = json.load(fh)
    run, attack_cfg = parse_run_config(raw)
    report, outcomes = run_batch_attack(run, attack_cfg, args.out,
                                        workers=args.workers)
    failures = [vid for vid, r, _ in outcomes if r.error]
    print(f"ASR {report.asr:.2f}%  1Q-ASR {report.one_q_asr:.2f}%  "
          f"minQ {report.min_q}  maxQ {report.max_q}  AQ {report.avg_q}")
    for vid in failures:
        print(f"  error in {vid}; see its report.json")
    return 0


def cmd_metrics(args):
    rows = []
    result_root = args.results
    for name in sorted(os.listdir(result_root)):
        rp = os.path.join(result_root, name, "report.json")
        if os.path.isfile(rp):
            rows.append(read_report(rp))
    if not rows:
        raise ConfigError(f"no report.json files under {result_root}")
    from .blackbox import AttackResult
    results = [
        AttackResult(r["success"], None, r["queries_used"],
                     r["one_query_success"], None,
                     selection_queries=r["selection_queries"])
        for r in rows
    ]
    report = compute_metrics(results)
    print(f"ASR {report.asr:.2f}%  1Q-ASR {report.one_q_asr:.2f}%  "
          f"minQ {report.min_q}  maxQ {report.max_q}  AQ {report.avg_q}")
    if args.out:
        write_report(metrics_to_dict(report), args.out)
    return 0


def cmd_export_frames(args):
    video = load_video(args.video)
    export_frames(video, args.out)
    print(f"wrote {video.num_frames} frames to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="restyleadv",
                                     description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="JSON dataset spec")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("attack", help="run batch attacks")
    p.add_argument("--config", required=True, help="flat JSON run config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("metrics", help="aggregate attack reports")
    p.add_argument("--results", required=True, help="directory of result dirs")
    p.add_argument("--out", default=None, help="optional metrics JSON path")
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("export-frames", help="re-export a video's frames")
    p.add_argument("--video", required=True, help="frame directory")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_frames)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
