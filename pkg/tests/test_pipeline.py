import json
import os

import numpy as np
import pytest

from restyleadv.blackbox import AttackResult
from restyleadv.core import (AttackConfig, AttackGoal, ClassifierOracle,
                             ConfigError, Prediction, Video)
from restyleadv.pipeline import (AttackAdapters, compute_metrics,
                                 result_report, run_attack, select_style_video)
from restyleadv.saliency import rank_regions, score_regions
from restyleadv.segmentation import GridSegmenter, StaticTracker, segment_first_frame
from restyleadv.styletransfer import IdentityExtractor
from restyleadv.testbed import (SyntheticDatasetSpec, fit_linear_oracle,
                                fit_whitebox_model, synthesize_video)

from conftest import make_video


def scripted_oracle(predictions):
    seq = list(predictions)
    return ClassifierOracle(lambda v: seq.pop(0))


class TestSelectStyleVideo:
    def test_targeted_argmax(self):
        candidates = [make_video(seed=s) for s in range(3)]
        oracle = scripted_oracle([Prediction(1, 0.2), Prediction(1, 0.7),
                                  Prediction(0, 0.9)])
        goal = AttackGoal("targeted", original_label=0, target_label=1)
        src = select_style_video(candidates, oracle, goal,
                                 np.random.default_rng(0))
        assert src.candidate_index == 1
        assert src.selection_queries == 3
        assert np.array_equal(src.style_image, candidates[1].frames[0])

    def test_targeted_single_qualifying(self):
        candidates = [make_video()]
        oracle = scripted_oracle([Prediction(1, 0.4)])
        goal = AttackGoal("targeted", original_label=0, target_label=1)
        src = select_style_video(candidates, oracle, goal,
                                 np.random.default_rng(0))
        assert src.selection_queries == 1

    def test_targeted_no_candidate_errors(self):
        oracle = scripted_oracle([Prediction(0, 0.9), Prediction(2, 0.9)])
        goal = AttackGoal("targeted", original_label=0, target_label=1)
        with pytest.raises(ConfigError, match="no usable style source"):
            select_style_video([make_video(), make_video()], oracle, goal,
                               np.random.default_rng(0))

    def test_untargeted_first_hit(self):
        candidates = [make_video(seed=s) for s in range(4)]
        oracle = ClassifierOracle(lambda v: Prediction(1, 0.5))
        goal = AttackGoal("untargeted", original_label=0)
        src = select_style_video(candidates, oracle, goal,
                                 np.random.default_rng(0))
        assert src.selection_queries == 1

    def test_untargeted_exhausted_errors(self):
        candidates = [make_video(seed=s) for s in range(3)]
        oracle = ClassifierOracle(lambda v: Prediction(0, 0.5))
        goal = AttackGoal("untargeted", original_label=0)
        with pytest.raises(ConfigError, match="no usable style source"):
            select_style_video(candidates, oracle, goal,
                               np.random.default_rng(0))

    def test_no_candidates_errors(self):
        with pytest.raises(ConfigError, match="no style candidates"):
            select_style_video([], ClassifierOracle(lambda v: Prediction(0, 1)),
                               AttackGoal("untargeted", original_label=0),
                               np.random.default_rng(0))


class TestComputeMetrics:
    def _result(self, success, q, one_q=False):
        return AttackResult(success, make_video(t=1, h=2, w=2), q, one_q, None)

    def test_all_successful(self):
        rep = compute_metrics([self._result(True, q) for q in (10, 20, 30)])
        assert rep.asr == 100.0
        assert (rep.min_q, rep.max_q, rep.avg_q) == (10, 30, 20.0)

    def test_one_query_rate(self):
        rep = compute_metrics([self._result(True, 1, one_q=True),
                               self._result(True, 5),
                               self._result(False, 9)])
        assert rep.one_q_asr == pytest.approx(100.0 / 3.0)

    def test_zero_successes_stats_absent(self):
        rep = compute_metrics([self._result(False, 10)])
        assert rep.asr == 0.0
        assert rep.min_q is None and rep.max_q is None and rep.avg_q is None

    def test_empty_errors(self):
        with pytest.raises(ConfigError):
            compute_metrics([])


def toy_scenario(seed=0, n_per_class=4):
    """Small 2-class scenario over 16x16 T=2 clips with the toy linear oracle."""
    spec = SyntheticDatasetSpec(num_classes=2, videos_per_class=n_per_class,
                                height=16, width=16, num_frames=2, seed=seed)
    videos, labels = [], []
    for c in range(2):
        for i in range(n_per_class):
            videos.append(synthesize_video(spec, c, i))
            labels.append(c)
    model = fit_linear_oracle(videos, labels)
    whitebox = fit_whitebox_model(videos, labels)
    return videos, labels, model, whitebox


def toy_adapters(videos, labels, model, whitebox, target_index):
    return AttackAdapters(
        oracle=ClassifierOracle(model.predict),
        segmenter=GridSegmenter(2, 2),
        tracker=StaticTracker(),
        extractor=IdentityExtractor(),
        whitebox_model=whitebox,
        style_candidates=[v for j, v in enumerate(videos) if j != target_index])


@pytest.fixture(scope="module")
def scenario():
    return toy_scenario()


class TestRunAttack:
    def _run(self, scenario, out_dir=None, **cfg_kw):
        videos, labels, model, whitebox = scenario
        adapters = toy_adapters(videos, labels, model, whitebox, 0)
        kw = dict(style_iterations=10, query_budget=500, nes_population=10)
        kw.update(cfg_kw)
        cfg = AttackConfig(**kw)
        goal = AttackGoal("untargeted", original_label=labels[0])
        result = run_attack(videos[0], goal, cfg, adapters, out_dir=out_dir)
        return result, adapters, goal, cfg

    def test_queries_match_oracle_delta(self, scenario):
        result, adapters, _, _ = self._run(scenario)
        assert result.error is None
        assert result.queries_used == adapters.oracle.query_count

    def test_style_losses_recorded_and_monotone(self, scenario):
        result, _, _, _ = self._run(scenario)
        assert result.style_loss_initial is not None
        assert result.style_loss_final <= result.style_loss_initial

    def test_deterministic_reports(self, scenario):
        ra, _, goal, cfg = self._run(scenario, rng_seed=3)
        rb, _, _, _ = self._run(scenario, rng_seed=3)
        assert result_report(goal, cfg, ra) == result_report(goal, cfg, rb)
        assert np.array_equal(ra.adversarial_video.frames,
                              rb.adversarial_video.frames)

    def test_audit_bundle_layout(self, scenario, tmp_path):
        result, _, goal, cfg = self._run(scenario, out_dir=tmp_path)
        assert (tmp_path / "report.json").is_file()
        assert (tmp_path / "trace.csv").is_file()
        assert (tmp_path / "masks").is_dir()
        assert (tmp_path / "stylized").is_dir()
        assert (tmp_path / "adversarial").is_dir()
        with open(tmp_path / "report.json") as fh:
            report = json.load(fh)
        for key in ("goal", "success", "one_query_success", "queries_used",
                    "selection_queries", "r", "region_ids", "significance",
                    "style_loss_initial", "style_loss_final", "config",
                    "seed"):
            assert key in report
        assert report["queries_used"] == result.queries_used

    def test_component_error_yields_failed_result(self, scenario):
        videos, labels, model, whitebox = scenario

        class Broken:
            def segment(self, frame):
                raise RuntimeError("segmenter exploded")

        adapters = toy_adapters(videos, labels, model, whitebox, 0)
        adapters.segmenter = Broken()
        result = run_attack(videos[0],
                            AttackGoal("untargeted", original_label=labels[0]),
                            AttackConfig(style_iterations=1), adapters)
        assert not result.success
        assert "segmenter exploded" in result.error

    def test_selection_only_budget(self, scenario):
        # budget too small for fine-tuning: success only via the 1Q path
        result, adapters, _, _ = self._run(scenario, query_budget=2)
        assert result.queries_used <= 2
        if not result.one_query_success:
            assert not result.success

    def test_ablation_endpoints_match_single_criterion(self, scenario):
        videos, labels, model, whitebox = scenario
        frame = videos[0].frames[0]
        regions = segment_first_frame(frame, GridSegmenter(2, 2))
        from restyleadv.saliency import gradcam_heatmap
        heat = gradcam_heatmap(whitebox, frame, whitebox.top1(frame))
        for alpha, attr in ((0.0, "l_grad"), (1.0, "l_area")):
            scores = score_regions(regions, heat, alpha)
            combined = rank_regions(regions, scores.l_total)
            single = rank_regions(regions, getattr(scores, attr))
            assert combined == single


def test_result_report_serializable(tmp_path):
    goal = AttackGoal("untargeted", original_label=0)
    cfg = AttackConfig()
    res = AttackResult(True, make_video(t=1, h=2, w=2), 3, True,
                       Prediction(1, 0.8))
    report = result_report(goal, cfg, res)
    text = json.dumps(report, sort_keys=True)
    assert json.loads(text) == report
