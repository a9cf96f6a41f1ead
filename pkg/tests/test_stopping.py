"""Early-stopping rules. The median rule is checked exactly against an
independent transcription of its definition over fuzzed curve sets."""

import random

import pytest
from oracles import oracle_median_stop

from tuner.errors import NoMeasurements
from tuner.model import Goal, Measurement, Trial, TrialState
from tuner.stopping import (PerformanceCurve, decay_curve_should_stop,
                            median_should_stop)

METRIC = "objective"


def curve_trial(tid, values, final=None, steps=None, state=TrialState.COMPLETED):
    t = Trial(id=tid, state=state)
    steps = steps or list(range(1, len(values) + 1))
    for s, v in zip(steps, values):
        t.intermediate_measurements.append(Measurement(step=s, metrics={METRIC: v}))
    if final is not None:
        t.final_measurement = Measurement(step=steps[-1], metrics={METRIC: final})
    return t


def pending_trial(values, steps=None):
    return curve_trial(99, values, steps=steps, state=TrialState.ACTIVE)


class TestPerformanceCurve:
    def test_running_average(self):
        t = curve_trial(1, [1.0, 3.0, 5.0])
        assert PerformanceCurve.from_trial(t, METRIC).points == [
            (1, 1.0), (2, 2.0), (3, 3.0)]

    def test_value_at_or_before(self):
        curve = PerformanceCurve([(1, 0.1), (3, 0.2), (7, 0.3)])
        assert curve.value_at_or_before(0) is None
        assert curve.value_at_or_before(3) == 0.2
        assert curve.value_at_or_before(99) == 0.3


class TestMedianRule:
    def comparators(self):
        # running averages at step 3: 0.5, 0.7, 0.9 -> median 0.7
        return [curve_trial(1, [0.5, 0.5, 0.5], final=0.5),
                curve_trial(2, [0.7, 0.7, 0.7], final=0.7),
                curve_trial(3, [0.9, 0.9, 0.9], final=0.9)]

    def test_below_median_stops(self):
        stop, reason = median_should_stop(pending_trial([0.4, 0.5, 0.6]),
                                          self.comparators(), Goal.MAXIMIZE, METRIC)
        assert stop
        assert "0.7" in reason

    def test_equal_to_median_continues(self):
        stop, _ = median_should_stop(pending_trial([0.4, 0.5, 0.7]),
                                     self.comparators(), Goal.MAXIMIZE, METRIC)
        assert not stop  # "strictly below" spares exact ties

    def test_no_completed_trials_continues(self):
        stop, _ = median_should_stop(pending_trial([0.1]), [], Goal.MAXIMIZE, METRIC)
        assert not stop

    def test_no_measurements_raises(self):
        bare = Trial(id=1, state=TrialState.ACTIVE)
        with pytest.raises(NoMeasurements):
            median_should_stop(bare, self.comparators(), Goal.MAXIMIZE, METRIC)

    def test_minimize_mirror(self):
        comparators = [curve_trial(1, [0.5] * 3), curve_trial(2, [0.7] * 3),
                       curve_trial(3, [0.9] * 3)]
        stop, _ = median_should_stop(pending_trial([0.9, 0.8]), comparators,
                                     Goal.MINIMIZE, METRIC)
        assert stop  # best 0.8 strictly above median 0.7
        stop, _ = median_should_stop(pending_trial([0.9, 0.6]), comparators,
                                     Goal.MINIMIZE, METRIC)
        assert not stop

    def test_comparators_beyond_pending_step_skipped(self):
        late = curve_trial(1, [0.9, 0.9], steps=[10, 11])
        early = curve_trial(2, [0.1, 0.1], steps=[1, 2])
        stop, _ = median_should_stop(pending_trial([0.5], steps=[2]),
                                     [late, early], Goal.MAXIMIZE, METRIC)
        assert not stop  # only the early trial (performance 0.1) qualifies

    def test_even_comparator_count_uses_central_mean(self):
        comparators = [curve_trial(1, [0.2] * 2), curve_trial(2, [0.4] * 2),
                       curve_trial(3, [0.6] * 2), curve_trial(4, [0.8] * 2)]
        # median = (0.4 + 0.6) / 2 = 0.5
        stop, _ = median_should_stop(pending_trial([0.49]), comparators,
                                     Goal.MAXIMIZE, METRIC)
        assert stop
        stop, _ = median_should_stop(pending_trial([0.51]), comparators,
                                     Goal.MAXIMIZE, METRIC)
        assert not stop

    def fuzz_case(self, rng):
        completed = []
        for tid in range(rng.randint(0, 6)):
            n = rng.randint(1, 8)
            steps = sorted(rng.sample(range(1, 20), n))
            values = [round(rng.uniform(0, 1), 3) for _ in range(n)]
            completed.append(curve_trial(tid + 1, values, steps=steps))
        n = rng.randint(1, 8)
        steps = sorted(rng.sample(range(1, 20), n))
        values = [round(rng.uniform(0, 1), 3) for _ in range(n)]
        return pending_trial(values, steps=steps), completed

    def test_matches_oracle_on_fuzzed_curves(self):
        rng = random.Random(1234)
        for case in range(1000):
            pending, completed = self.fuzz_case(rng)
            for goal in (Goal.MAXIMIZE, Goal.MINIMIZE):
                got, _ = median_should_stop(pending, completed, goal, METRIC)
                assert got == oracle_median_stop(pending, completed, goal), \
                    f"case {case} goal {goal}"

    def test_improving_best_never_flips_continue_to_stop(self):
        rng = random.Random(7)
        for _ in range(200):
            pending, completed = self.fuzz_case(rng)
            stop, _ = median_should_stop(pending, completed, Goal.MAXIMIZE, METRIC)
            boosted = pending_trial(
                [m.metrics[METRIC] for m in pending.intermediate_measurements[:-1]]
                + [pending.intermediate_measurements[-1].metrics[METRIC] + 0.5],
                steps=[m.step for m in pending.intermediate_measurements])
            boosted_stop, _ = median_should_stop(boosted, completed,
                                                 Goal.MAXIMIZE, METRIC)
            if not stop:
                assert not boosted_stop


def rising_history():
    return [curve_trial(1, [0.2, 0.5, 0.7, 0.85, 0.9], final=0.9),
            curve_trial(2, [0.25, 0.55, 0.75, 0.9, 1.0], final=1.0),
            curve_trial(3, [0.3, 0.6, 0.8, 0.95, 1.1], final=1.1)]


class TestDecayCurveRule:
    def test_matching_best_prefix_continues(self):
        pending = pending_trial([0.3, 0.6, 0.8])
        stop, reason = decay_curve_should_stop(pending, rising_history(),
                                               Goal.MAXIMIZE, METRIC)
        assert not stop, reason

    def test_flat_hopeless_curve_stops(self):
        # derived: fitted model predicts ~0.25 while the incumbent 1.1 sits
        # more than 5 predictive stds above; tail probability < 0.05
        pending = pending_trial([0.0, 0.0, 0.0])
        stop, reason = decay_curve_should_stop(pending, rising_history(),
                                               Goal.MAXIMIZE, METRIC)
        assert stop, reason

    def test_too_few_completed_trials_continues(self):
        pending = pending_trial([0.0, 0.0])
        stop, reason = decay_curve_should_stop(pending, rising_history()[:2],
                                               Goal.MAXIMIZE, METRIC)
        assert not stop
        assert "insufficient history" in reason

    def test_single_pending_measurement_continues(self):
        stop, reason = decay_curve_should_stop(pending_trial([0.0]),
                                               rising_history(),
                                               Goal.MAXIMIZE, METRIC)
        assert not stop
        assert "insufficient" in reason

    def test_no_measurements_raises(self):
        with pytest.raises(NoMeasurements):
            decay_curve_should_stop(Trial(id=1, state=TrialState.ACTIVE),
                                    rising_history(), Goal.MAXIMIZE, METRIC)

    def test_threshold_zero_never_stops(self):
        pending = pending_trial([0.0, 0.0, 0.0])
        stop, _ = decay_curve_should_stop(pending, rising_history(),
                                          Goal.MAXIMIZE, METRIC, threshold=0.0)
        assert not stop

    def test_threshold_one_always_stops(self):
        pending = pending_trial([0.3, 0.6, 0.8])
        stop, _ = decay_curve_should_stop(pending, rising_history(),
                                          Goal.MAXIMIZE, METRIC, threshold=1.0)
        assert stop

    def test_probability_within_unit_interval(self):
        rng = random.Random(3)
        for _ in range(20):
            history = [curve_trial(i + 1,
                                   [rng.uniform(0, 1) for _ in range(4)],
                                   final=rng.uniform(0, 1))
                       for i in range(4)]
            pending = pending_trial([rng.uniform(0, 1) for _ in range(3)])
            _, reason = decay_curve_should_stop(pending, history,
                                                Goal.MAXIMIZE, METRIC)
            p = float(reason.split("= ")[1].split(" ")[0])
            assert 0.0 < p < 1.0

    def test_minimize_mirror(self):
        history = [curve_trial(1, [1.0, 0.6, 0.4, 0.3, 0.25], final=0.25),
                   curve_trial(2, [1.1, 0.7, 0.45, 0.32, 0.28], final=0.28),
                   curve_trial(3, [0.9, 0.55, 0.35, 0.27, 0.22], final=0.22)]
        hopeless = pending_trial([3.0, 3.0, 3.0])
        stop, _ = decay_curve_should_stop(hopeless, history, Goal.MINIMIZE, METRIC)
        assert stop
        promising = pending_trial([0.9, 0.55, 0.35])
        stop, _ = decay_curve_should_stop(promising, history, Goal.MINIMIZE, METRIC)
        assert not stop
