"""Automated early-stopping rules over learning curves.

Two rules, both judged on the study's first metric:

* median: stop a pending trial whose best objective so far is strictly
  worse than the median running-average performance of completed trials,
  each read at its largest step not beyond the pending trial's last step.
* decay curve: pool all curves on a normalized step axis, fit a 1D GP,
  extrapolate the pending trial to its final step, and stop when the
  probability of beating the incumbent best falls under a threshold.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .algorithms.gp import gp_fit
from .errors import NoMeasurements
from .model import AutomatedStopping, Goal, Trial
from .policies import (EarlyStopDecision, EarlyStopRequest, Policy,
                       PolicySupporter, guard_early_stop)

DEFAULT_STOP_THRESHOLD = 0.05
STOPPING_NAMESPACE = "stopping"
THRESHOLD_KEY = "threshold"

# probabilities are kept strictly inside (0, 1): a regression never earns
# literal certainty, and it keeps threshold 0 / threshold 1 exact toggles
_P_FLOOR = 1e-300
_P_CEIL = 1.0 - 1e-16

# denser noise grid than the suggestion GP: cross-trial curve spread is real
# observation noise here and must not be crushed into the latent fit
_CURVE_NOISE_GRID = (1e-6, 1e-4, 1e-2, 3e-2, 1e-1, 3e-1, 1.0)


@dataclass
class PerformanceCurve:
    """(step, running average of the objective so far) per measurement."""

    points: list[tuple[int, float]]

    @classmethod
    def from_trial(cls, trial: Trial, metric_name: str) -> "PerformanceCurve":
        points = []
        total = 0.0
        count = 0
        for m in trial.intermediate_measurements:
            if metric_name not in m.metrics:
                continue
            total += float(m.metrics[metric_name])
            count += 1
            points.append((m.step, total / count))
        return cls(points)

    def value_at_or_before(self, step: int) -> float | None:
        value = None
        for s, v in self.points:
            if s <= step:
                value = v
            else:
                break
        return value


def _objective_values(trial: Trial, metric_name: str) -> list[float]:
    return [float(m.metrics[metric_name]) for m in trial.intermediate_measurements
            if metric_name in m.metrics]


def median_should_stop(pending: Trial, completed: Sequence[Trial],
                       goal: Goal, metric_name: str) -> tuple[bool, str]:
    """True iff the pending trial's best objective is strictly worse than
    the median comparator performance; completed trials without any
    measurement at or before the pending trial's last step are skipped."""
    if not pending.intermediate_measurements:
        raise NoMeasurements(f"trial {pending.id} has no intermediate measurements")
    values = _objective_values(pending, metric_name)
    if not values:
        return False, f"trial {pending.id} reported no values for {metric_name!r}"
    last_step = pending.intermediate_measurements[-1].step
    comparators = []
    for t in completed:
        perf = PerformanceCurve.from_trial(t, metric_name).value_at_or_before(last_step)
        if perf is not None:
            comparators.append(perf)
    if not comparators:
        return False, "no completed trials have measurements at a comparable step"
    med = statistics.median(comparators)
    goal = Goal(goal)
    best = max(values) if goal is Goal.MAXIMIZE else min(values)
    worse = best < med if goal is Goal.MAXIMIZE else best > med
    verdict = "strictly worse than" if worse else "not strictly worse than"
    return worse, (f"best {best:.6g} is {verdict} median performance {med:.6g} "
                   f"of {len(comparators)} completed trials at step <= {last_step}")


def _pooled_gain_points(completed: Sequence[Trial], metric_name: str
                        ) -> tuple[list[tuple[float, float]], list[float], int]:
    """Pooled (normalized step fraction, remaining gain to final) pairs from
    completed curves, plus their final values and the largest final step.

    Regressing the remaining improvement rather than the raw value lets the
    posterior for the pending trial ride on its own observed level: a curve
    matching the incumbent's prefix predicts the incumbent's final, while a
    flat hopeless curve predicts staying hopeless.
    """
    points: list[tuple[float, float]] = []
    finals: list[float] = []
    max_final_step = 0
    for t in completed:
        if t.infeasible or t.final_measurement is None:
            continue
        if metric_name not in t.final_measurement.metrics:
            continue
        curve = [(m.step, float(m.metrics[metric_name]))
                 for m in t.intermediate_measurements if metric_name in m.metrics]
        if not curve:
            continue
        final = float(t.final_measurement.metrics[metric_name])
        final_step = curve[-1][0]
        max_final_step = max(max_final_step, final_step)
        for step, value in curve:
            frac = step / final_step if final_step > 0 else 1.0
            points.append((frac, final - value))
        points.append((1.0, 0.0))  # by definition no gain remains at the end
        finals.append(final)
    return points, finals, max_final_step


def decay_curve_should_stop(pending: Trial, completed: Sequence[Trial],
                            goal: Goal, metric_name: str,
                            threshold: float = DEFAULT_STOP_THRESHOLD
                            ) -> tuple[bool, str]:
    """GP extrapolation of the pending curve to its final step; stop when
    P(final beats the incumbent best) < threshold. History too thin to fit
    (fewer than 3 completed curves, or fewer than 2 pending measurements)
    means continue rather than fail."""
    if not pending.intermediate_measurements:
        raise NoMeasurements(f"trial {pending.id} has no intermediate measurements")
    pending_curve = [(m.step, float(m.metrics[metric_name]))
                     for m in pending.intermediate_measurements
                     if metric_name in m.metrics]
    if len(pending_curve) < 2:
        return False, "insufficient history: pending trial has fewer than 2 measurements"
    points, finals, max_final_step = _pooled_gain_points(completed, metric_name)
    if len(finals) < 3:
        return False, (f"insufficient history: {len(finals)} completed trials "
                       "with curves, need 3")
    horizon = max(max_final_step, 1)
    last_step, last_value = pending_curve[-1]
    progress = min(last_step / horizon, 1.0)

    x = np.array([[t] for t, _ in points])
    y = np.array([g for _, g in points])
    model = gp_fit(x, y, noise_grid=_CURVE_NOISE_GRID)
    gain_mean, gain_std = model.predict_observation(np.array([[progress]]),
                                                    raw_units=True)
    mu = last_value + float(gain_mean[0])
    sigma = max(float(gain_std[0]), 1e-12)

    goal = Goal(goal)
    incumbent = max(finals) if goal is Goal.MAXIMIZE else min(finals)
    if goal is Goal.MAXIMIZE:
        z = (incumbent - mu) / (sigma * math.sqrt(2.0))
    else:
        z = (mu - incumbent) / (sigma * math.sqrt(2.0))
    p_exceed = 0.5 * math.erfc(z)
    p_exceed = min(max(p_exceed, _P_FLOOR), _P_CEIL)
    stop = p_exceed < threshold
    return stop, (f"P(final beats incumbent {incumbent:.6g}) = {p_exceed:.3g} "
                  f"(predicted {mu:.6g} +- {sigma:.3g}, threshold {threshold:g})")


class NeverStopPolicy(Policy):
    def early_stop(self, request: EarlyStopRequest) -> EarlyStopDecision:
        return EarlyStopDecision(False, "automated stopping is off")


class MedianStoppingPolicy(Policy):
    def early_stop(self, request: EarlyStopRequest) -> EarlyStopDecision:
        metric = request.study_config.objective_metric()

        def decide(trial):
            completed = self.supporter.get_trials(request.study_name,
                                                  states={"COMPLETED"})
            stop, reason = median_should_stop(trial, completed, metric.goal,
                                              metric.name)
            return EarlyStopDecision(stop, reason)

        return guard_early_stop(self.supporter, request, decide)


class DecayCurveStoppingPolicy(Policy):
    def early_stop(self, request: EarlyStopRequest) -> EarlyStopDecision:
        spec = request.study_config
        metric = spec.objective_metric()
        raw = spec.metadata.get(STOPPING_NAMESPACE, THRESHOLD_KEY)
        try:
            threshold = float(raw) if raw is not None else DEFAULT_STOP_THRESHOLD
        except ValueError:
            threshold = DEFAULT_STOP_THRESHOLD

        def decide(trial):
            completed = self.supporter.get_trials(request.study_name,
                                                  states={"COMPLETED"})
            stop, reason = decay_curve_should_stop(trial, completed, metric.goal,
                                                   metric.name, threshold)
            return EarlyStopDecision(stop, reason)

        return guard_early_stop(self.supporter, request, decide)


def stopping_policy_for(mode: AutomatedStopping,
                        supporter: PolicySupporter) -> Policy:
    mode = AutomatedStopping(mode)
    if mode is AutomatedStopping.MEDIAN:
        return MedianStoppingPolicy(supporter)
    if mode is AutomatedStopping.DECAY_CURVE:
        return DecayCurveStoppingPolicy(supporter)
    return NeverStopPolicy(supporter)
