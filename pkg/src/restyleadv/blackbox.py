"""Query-limited adversarial fine-tuning around the stylized anchor.

Zeroth-order gradients come from antithetic Gaussian smoothing where each
sample costs exactly one oracle query; iterates follow sign-ascent steps
projected into the L-inf ball around the stylized video and into [0,1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import AttackConfig, AttackGoal, ClassifierOracle, ConfigError, Prediction, Video


class QueryBudgetExceeded(RuntimeError):
    """Raised when an oracle evaluation would exceed the attack budget."""

    def __init__(self, queries_spent: int):
        super().__init__(f"query budget exhausted after {queries_spent} queries")
        self.queries_spent = queries_spent


@dataclass(frozen=True)
class Objective:
    """Signed-score objective over the label-and-score oracle output.

    Continuous at label flips: targeted attacks maximize the target score and
    are penalized by any other label's score; untargeted attacks penalize the
    original label's score and reward any other label's.
    """

    goal: AttackGoal

    def evaluate(self, pred: Prediction) -> float:
        if self.goal.mode == "targeted":
            return pred.score if pred.label == self.goal.target_label else -pred.score
        return -pred.score if pred.label == self.goal.original_label else pred.score


@dataclass(frozen=True)
class NesParams:
    population: int = 48
    sigma: float = 1e-3

    def __post_init__(self):
        if self.population < 2 or self.population % 2:
            raise ConfigError("population must be even and >= 2")
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")


@dataclass
class PgdParams:
    step: float
    eps: float
    anchor: np.ndarray  # (T, H, W, 3) stylized video

    def __post_init__(self):
        if not 0 < self.step <= self.eps:
            raise ConfigError("need 0 < step <= eps")


@dataclass
class AttackResult:
    success: bool
    adversarial_video: Video
    queries_used: int
    one_query_success: bool
    final_prediction: Prediction | None
    trace: list = field(default_factory=list)
    selection_queries: int = 0
    region_ids: list | None = None
    significance: dict | None = None
    style_loss_initial: float | None = None
    style_loss_final: float | None = None
    error: str | None = None


def nes_gradient(objective_fn, video: Video, params: NesParams, rng) -> np.ndarray:
    """Antithetic smoothed gradient estimate.

    Sums (f(x + sigma*u) - f(x - sigma*u)) * u over population/2 Gaussian
    directions and divides by population * sigma; consumes exactly
    ``population`` objective evaluations. An evaluation raising
    :class:`QueryBudgetExceeded` aborts the call with the spend so far.
    """
    x = video.frames
    grad = np.zeros_like(x)
    spent = 0
    try:
        for _ in range(params.population // 2):
            u = rng.standard_normal(x.shape)
            f_plus = objective_fn(Video(x + params.sigma * u, video.frame_rate))
            spent += 1
            f_minus = objective_fn(Video(x - params.sigma * u, video.frame_rate))
            spent += 1
            grad += (f_plus - f_minus) * u
    except QueryBudgetExceeded:
        raise QueryBudgetExceeded(spent) from None
    return grad / (params.population * params.sigma)


def pgd_step(video: Video, grad, params: PgdParams) -> Video:
    """Sign-ascent step projected into the eps-ball around the anchor and the
    valid pixel range."""
    if grad.shape != video.frames.shape:
        raise ConfigError("gradient shape mismatch")
    stepped = video.frames + params.step * np.sign(grad)
    projected = np.clip(stepped, params.anchor - params.eps, params.anchor + params.eps)
    return Video(np.clip(projected, 0.0, 1.0), video.frame_rate)


def finetune(oracle: ClassifierOracle, stylized: Video, goal: AttackGoal,
             config: AttackConfig, budget: int | None = None) -> AttackResult:
    """NES+PGD loop starting from the stylized video.

    The first query is the stylized video itself; immediate success is the
    one-query path. On budget exhaustion the best iterate by objective value
    is returned.
    """
    if budget is None:
        budget = config.query_budget
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    rng = np.random.default_rng(config.rng_seed)
    objective = Objective(goal)
    nes_params = NesParams(config.nes_population, config.nes_sigma)
    pgd_params = PgdParams(config.pgd_step, config.pgd_eps, stylized.frames.copy())

    spent = 0

    def query_value(video):
        nonlocal spent
        if spent >= budget:
            raise QueryBudgetExceeded(0)
        pred = oracle.query(video)
        spent += 1
        return pred

    def feasible(video):
        # every video reaching the oracle stays in the eps-ball and in [0,1]
        f = np.clip(video.frames, pgd_params.anchor - pgd_params.eps,
                    pgd_params.anchor + pgd_params.eps)
        return Video(np.clip(f, 0.0, 1.0), video.frame_rate)

    pred = query_value(stylized)
    value = objective.evaluate(pred)
    trace = [value]
    if goal.is_success(pred):
        return AttackResult(True, stylized, spent, True, pred, trace)

    x = stylized
    best_value, best_video, best_pred = value, stylized, pred
    while spent < budget:
        try:
            grad = nes_gradient(lambda v: objective.evaluate(query_value(feasible(v))),
                                x, nes_params, rng)
        except QueryBudgetExceeded:
            break
        x = pgd_step(x, grad, pgd_params)
        try:
            pred = query_value(x)
        except QueryBudgetExceeded:
            break
        value = objective.evaluate(pred)
        trace.append(value)
        if value > best_value:
            best_value, best_video, best_pred = value, x, pred
        if goal.is_success(pred):
            return AttackResult(True, x, spent, False, pred, trace)
    return AttackResult(False, best_video, spent, False, best_pred, trace)
