"""Pareto-frontier extraction over completed trials."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..model import Goal, MetricSpec, Trial, TrialState


def pareto_frontier(trials: Sequence[Trial],
                    metric_specs: Sequence[MetricSpec]) -> list[int]:
    """Ids (ascending) of trials not weakly-dominated: a trial stays unless
    some other trial is at least as good on every metric (per its goal) and
    strictly better on one. Duplicated points keep each other.

    Callers must pass feasible COMPLETED trials.
    """
    for t in trials:
        if t.state is not TrialState.COMPLETED or t.infeasible or t.final_measurement is None:
            raise ValueError(f"trial {t.id} is not a feasible completed trial")
    if not trials:
        return []
    signs = np.array([1.0 if m.goal is Goal.MAXIMIZE else -1.0 for m in metric_specs])
    values = np.array([[t.final_measurement.metrics[m.name] for m in metric_specs]
                       for t in trials]) * signs
    n = values.shape[0]
    keep = []
    for i in range(n):
        ge_all = (values >= values[i]).all(axis=1)
        gt_any = (values > values[i]).any(axis=1)
        if not np.any(ge_all & gt_any):
            keep.append(trials[i].id)
    return sorted(keep)
