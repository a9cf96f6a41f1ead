"""Independent brute-force oracles shared by the unit and acceptance suites.

These deliberately avoid the library's own code paths: plain loops, no
numpy, written as literal transcriptions of the rules they check.
"""

import statistics

from tuner.model import Goal


def oracle_median_stop(pending, completed, goal, metric="objective"):
    """Stop iff the pending trial's best objective is strictly worse than
    the median running-average performance of completed trials, read up to
    the pending trial's last measurement step."""
    pending_values = [m.metrics[metric] for m in pending.intermediate_measurements
                      if metric in m.metrics]
    if not pending_values:
        return False
    last_step = pending.intermediate_measurements[-1].step
    performances = []
    for trial in completed:
        values_so_far = []
        for m in trial.intermediate_measurements:
            if metric not in m.metrics:
                continue
            if m.step <= last_step:
                values_so_far.append(m.metrics[metric])
        if values_so_far:
            performances.append(sum(values_so_far) / len(values_so_far))
    if not performances:
        return False
    med = statistics.median(performances)
    if goal is Goal.MAXIMIZE:
        return max(pending_values) < med
    return min(pending_values) > med


def brute_force_frontier(trials, metric_specs):
    """Pairwise weak-dominance loops; a trial survives unless another is at
    least as good everywhere (per goal) and strictly better somewhere."""
    signs = {m.name: (1.0 if m.goal is Goal.MAXIMIZE else -1.0)
             for m in metric_specs}

    def vals(t):
        return [signs[m.name] * t.final_measurement.metrics[m.name]
                for m in metric_specs]

    out = []
    for t in trials:
        dominated = False
        for other in trials:
            if other is t:
                continue
            ge = all(a >= b for a, b in zip(vals(other), vals(t)))
            gt = any(a > b for a, b in zip(vals(other), vals(t)))
            if ge and gt:
                dominated = True
                break
        if not dominated:
            out.append(t.id)
    return sorted(out)
