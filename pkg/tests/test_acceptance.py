"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line
(run with ``pytest tests/test_acceptance.py -s`` to see them live).

Tolerances and counts are pinned here and nowhere else.
"""

import random
import threading
import time
from contextlib import contextmanager

import numpy as np
from oracles import brute_force_frontier, oracle_median_stop

from tuner.algorithms.evolution import RegEvoDesigner
from tuner.algorithms.gp import gp_fit, robust_cholesky
from tuner.algorithms.pareto import pareto_frontier
from tuner.bench import BenchConfig, bench_run
from tuner.client import (ClientSession, InProcessTransport, RetryPolicy,
                          ServerHandle)
from tuner.datastore import Datastore, PersistentDatastore
from tuner.model import (Goal, Measurement, MetricSpec, ObservationNoise,
                         StudySpec, Trial, TrialState)
from tuner.policies import (PolicySupporter, SerializableDesignerPolicy,
                            SuggestRequest, policy_for)
from tuner.search_space import (ChildSpec, ParameterAssignment, ParameterSpec,
                                lehmer_decode, subset_decode,
                                validate_assignment)
from tuner.service import ServerConfig, Service
from tuner.stopping import median_should_stop


@contextmanager
def criterion(number, title):
    try:
        yield
    except BaseException:
        print(f"[acceptance] criterion {number:>2} FAIL - {title}", flush=True)
        raise
    print(f"[acceptance] criterion {number:>2} PASS - {title}", flush=True)


def code_block_spec(algorithm="RANDOM_SEARCH"):
    return StudySpec(
        search_space=[
            ParameterSpec.double("learning_rate", 1e-4, 1e-2, scale="LOG"),
            ParameterSpec.integer("num_layers", 1, 5)],
        metrics=[MetricSpec("accuracy", Goal.MAXIMIZE, 0.0, 1.0)],
        algorithm=algorithm)


def test_01_end_to_end_tuning_loop():
    with criterion(1, "end-to-end 20-trial random-search loop in < 5 s"):
        start = time.time()
        spec = code_block_spec()
        service = Service(Datastore(), ServerConfig(workers=2,
                                                    poll_hint_secs=0.001)).start()
        session = ClientSession.load_or_create_study(
            InProcessTransport(service), "cifar10", spec, client_id="worker-0")
        for _ in range(20):
            for trial in session.get_suggestions(count=1):
                assert validate_assignment(spec.search_space, trial.parameters) == []
                lr = trial.parameters.values["learning_rate"]
                layers = trial.parameters.values["num_layers"]
                accuracy = min(1.0, max(0.0, 0.5 + lr * 10 + layers * 0.02))
                session.complete_trial(trial.id, metrics={"accuracy": accuracy})
        study = session.get_study()
        service.stop()
        elapsed = time.time() - start
        assert len(study.trials) == 20
        assert all(t.state is TrialState.COMPLETED for t in study.trials)
        assert [t.id for t in study.trials] == list(range(1, 21))
        assert elapsed < 5.0, f"took {elapsed:.2f}s"


def run_with_chaos(tmp_path, run_id, kills=10, trials=10):
    """One 10-trial run with the server killed and restored at random
    points; returns the final study trials."""
    root = tmp_path / f"run{run_id}"
    config = ServerConfig(workers=2, poll_hint_secs=0.001)
    handle = ServerHandle(Service(PersistentDatastore(root), config).start())
    transport = InProcessTransport(handle)
    rng = random.Random(run_id)
    stop_chaos = threading.Event()

    def chaos():
        for _ in range(kills):
            if stop_chaos.wait(rng.uniform(0.001, 0.05)):
                return
            handle.service.kill()
            restored = PersistentDatastore.restore_from_disk(root)
            handle.replace(Service(restored, config).start())

    killer = threading.Thread(target=chaos)
    killer.start()
    session = ClientSession.load_or_create_study(
        transport, "fault", code_block_spec(), "worker-0",
        retry=RetryPolicy(max_attempts=400, base_delay=0.001, max_delay=0.02))
    for _ in range(trials):
        trial = session.get_suggestions(count=1)[0]
        session.complete_trial(trial.id, metrics={"accuracy": 0.5})
    stop_chaos.set()
    killer.join()
    study = session.get_study()
    handle.service.stop()
    return study.trials


def test_02_server_fault_tolerance(tmp_path):
    with criterion(2, "50 crash-injected runs finish identically to crash-free"):
        for run_id in range(50):
            trials = run_with_chaos(tmp_path, run_id)
            assert [t.id for t in trials] == list(range(1, 11)), f"run {run_id}"
            assert all(t.state is TrialState.COMPLETED for t in trials), f"run {run_id}"


def test_03_client_fault_tolerance():
    with criterion(3, "rejoining client_id receives the identical trial, 20/20"):
        service = Service(Datastore(), ServerConfig(workers=2,
                                                    poll_hint_secs=0.001)).start()
        transport = InProcessTransport(service)
        spec = code_block_spec()
        ClientSession.load_or_create_study(transport, "s", spec, "seed-client")
        for rep in range(20):
            client_id = f"worker-{rep}"
            first = ClientSession.load_or_create_study(transport, "s", spec, client_id)
            original = first.get_suggestions(count=1)[0]
            # the client process dies here; a fresh one uses the same id
            second = ClientSession.load_or_create_study(transport, "s", spec, client_id)
            rejoined = second.get_suggestions(count=1)[0]
            assert rejoined.id == original.id, f"rep {rep}"
            assert rejoined.parameters == original.parameters, f"rep {rep}"
            second.complete_trial(original.id, metrics={"accuracy": 0.5})
        service.stop()


def fuzz_curve_case(rng):
    def curve(tid, state):
        n = rng.randint(1, 8)
        steps = sorted(rng.sample(range(1, 20), n))
        t = Trial(id=tid, state=state)
        for s in steps:
            t.intermediate_measurements.append(
                Measurement(step=s, metrics={"objective": round(rng.uniform(0, 1), 3)}))
        return t

    completed = [curve(i + 1, TrialState.COMPLETED)
                 for i in range(rng.randint(0, 6))]
    return curve(99, TrialState.ACTIVE), completed


def test_04_median_stopping_matches_oracle():
    with criterion(4, "median rule == brute-force oracle on 1000 fuzzed sets x 2 goals"):
        rng = random.Random(20240817)
        mismatches = 0
        for _ in range(1000):
            pending, completed = fuzz_curve_case(rng)
            for goal in (Goal.MAXIMIZE, Goal.MINIMIZE):
                got, _ = median_should_stop(pending, completed, goal, "objective")
                if got != oracle_median_stop(pending, completed, goal):
                    mismatches += 1
        assert mismatches == 0


def test_05_lehmer_and_subset_bijectivity():
    with criterion(5, "5040 Lehmer codes distinct at n=7; (5,2) covers all 10 subsets x2"):
        import itertools
        codes = itertools.product(*(range(7 - i) for i in range(7)))
        perms = {tuple(lehmer_decode(list(c))) for c in codes}
        assert len(perms) == 5040
        counts = {}
        for code in itertools.product(range(5), range(4)):
            s = frozenset(subset_decode(list(code), 5))
            counts[s] = counts.get(s, 0) + 1
        assert len(counts) == 10
        assert all(c == 2 for c in counts.values())


def test_06_robust_cholesky_near_singular():
    with criterion(6, "100 rank-deficient 20x20 Grams: jitter <= 1e-4, recon <= 1e-8"):
        rng = np.random.default_rng(20240806)
        for case in range(100):
            rank = int(rng.integers(1, 16))
            x = rng.normal(size=(20, rank))
            gram = x @ x.T
            chol, jitter = robust_cholesky(gram)
            assert jitter <= 1e-4, f"case {case}: jitter {jitter}"
            target = gram + jitter * np.eye(20)
            err = (np.linalg.norm(chol @ chol.T - target, "fro")
                   / np.linalg.norm(target, "fro"))
            assert err < 1e-8, f"case {case}: err {err}"


def test_07_gp_correctness():
    with criterion(7, "noiseless GP interpolates 20 3D points; variance >= -1e-10"):
        rng = np.random.default_rng(7)
        x = rng.random((20, 3))
        y = rng.normal(size=20)
        model = gp_fit(x, y, noise_grid=(1e-6,))
        mean, _ = model.predict(x)
        assert np.abs(mean - model.targets).max() < 1e-4
        queries = rng.random((10_000, 3))
        _, raw_var = model.predict_f(queries)
        assert raw_var.min() >= -1e-10


def test_08_gp_ucb_beats_random_on_sphere():
    with criterion(8, "sphere d=4 budget 60: GP-UCB median <= random, 7/10 within 0.05"):
        start = time.time()
        gp = bench_run(BenchConfig(objective="sphere", algorithm="GP_UCB",
                                   budget=60, dim=4, seeds=10))
        rnd = bench_run(BenchConfig(objective="sphere", algorithm="RANDOM_SEARCH",
                                    budget=60, dim=4, seeds=10))
        elapsed = time.time() - start
        gp_median = gp["summary"]["median_final_best"]
        rnd_median = rnd["summary"]["median_final_best"]
        assert gp_median <= rnd_median, (gp_median, rnd_median)
        near_optimal = sum(1 for r in gp["runs"] if r["final_best"] <= 0.05)
        assert near_optimal >= 7, f"only {near_optimal}/10 within 0.05"
        assert elapsed < 120.0, f"took {elapsed:.1f}s"


def test_09_pareto_frontier_matches_oracle():
    with criterion(9, "pareto frontier == O(n^2) oracle on 200 random instances"):
        rng = random.Random(99)
        mismatches = 0
        for _ in range(200):
            n = rng.randint(1, 200)
            k = rng.randint(1, 3)
            metrics = [MetricSpec(f"m{j}", Goal.MAXIMIZE if rng.random() < 0.5
                                  else Goal.MINIMIZE) for j in range(k)]
            trials = []
            for i in range(n):
                values = {m.name: rng.choice([0.0, 0.5, 1.0, round(rng.random(), 2)])
                          for m in metrics}
                trials.append(Trial(
                    id=i + 1, state=TrialState.COMPLETED,
                    parameters=ParameterAssignment({"x": 0.5}),
                    final_measurement=Measurement(step=0, metrics=values)))
            if pareto_frontier(trials, metrics) != brute_force_frontier(trials, metrics):
                mismatches += 1
        assert mismatches == 0


def evo_objective(values):
    return values["x"] * (1.0 if values["c"] == "p" else 0.5)


def evo_spec():
    spec = StudySpec(
        search_space=[ParameterSpec.double("x", 0.0, 1.0),
                      ParameterSpec.categorical("c", ["p", "q", "r"])],
        metrics=[MetricSpec("objective", Goal.MAXIMIZE)],
        algorithm="REG_EVO", observation_noise=ObservationNoise.LOW)
    spec.metadata.put("policy", "seed", "1234")
    return spec


def test_10_designer_statelessness():
    with criterion(10, "REG_EVO: 100 suggestions identical in-memory vs dump/recover"):
        # arm A: one long-lived designer driven directly
        spec = evo_spec()
        live = RegEvoDesigner.fresh(spec, seed=1234)
        live_seq = []
        pending_update = []
        for i in range(100):
            live.update(pending_update)
            suggestion = live.suggest(1)[0]
            live_seq.append(suggestion.values)
            trial = Trial(id=i + 1, state=TrialState.COMPLETED,
                          parameters=suggestion,
                          final_measurement=Measurement(
                              step=0, metrics={"objective": evo_objective(suggestion.values)}))
            pending_update = [trial]

        # arm B: per-operation policy instances, state through metadata
        store = Datastore()
        store.create_study(evo_spec(), "evo")
        supporter = PolicySupporter(store)
        policy_seq = []
        for i in range(100):
            study_spec = store.get_study("evo").spec
            policy = SerializableDesignerPolicy(supporter, "REG_EVO", RegEvoDesigner)
            decisions = policy.suggest(SuggestRequest(
                study_name="evo", study_config=study_spec, count=1, client_id="w"))
            suggestion = decisions.suggestions[0]
            policy_seq.append(suggestion.values)

            def commit(txn, a=suggestion, d=decisions):
                trial = txn.create_trial("evo", a, client_id="w")
                txn.put_study_metadata("evo", d.study_metadata)
                return trial
            trial = store.transact(commit)
            store.complete_trial("evo", trial.id, final_measurement=Measurement(
                step=0, metrics={"objective": evo_objective(suggestion.values)}))
        assert policy_seq == live_seq


def conditional_toy_space():
    lr = ParameterSpec.double("linear_lr", 1e-4, 1e-1, scale="LOG")
    layers = ParameterSpec.integer("num_layers", 1, 5)
    dropout = ParameterSpec.double("dropout", 0.0, 0.5)
    return [ParameterSpec.categorical(
        "model", ["linear", "dnn"],
        children=[ChildSpec(["linear"], lr), ChildSpec(["dnn"], layers),
                  ChildSpec(["dnn"], dropout)])]


def suggestions_from_policy(algorithm, total=1000, batch=50,
                            grid_resolution=None):
    """Streams `total` suggestions out of a policy, materializing each batch
    as trials the way the service worker does."""
    space = conditional_toy_space()
    spec = StudySpec(search_space=space,
                     metrics=[MetricSpec("objective", Goal.MINIMIZE)],
                     algorithm=algorithm, observation_noise=ObservationNoise.LOW)
    spec.metadata.put("policy", "seed", "7")
    if grid_resolution:
        spec.metadata.put("grid", "resolution", str(grid_resolution))
    store = Datastore()
    store.create_study(spec, "cond")
    supporter = PolicySupporter(store)
    # seed history so model-based policies have something to fit
    rng = np.random.default_rng(0)
    from tuner.search_space import sample_random
    for _ in range(20):
        p = sample_random(space, rng)
        trial = store.create_trial("cond", p, client_id="seed")
        store.complete_trial("cond", trial.id, final_measurement=Measurement(
            step=0, metrics={"objective": float(rng.random())}))

    collected = []
    while len(collected) < total:
        study_spec = store.get_study("cond").spec
        policy = policy_for(algorithm, supporter, "cond", study_spec)
        decisions = policy.suggest(SuggestRequest(
            study_name="cond", study_config=study_spec,
            count=min(batch, total - len(collected)), client_id="w"))

        def commit(txn, d=decisions):
            for a in d.suggestions:
                txn.create_trial("cond", a, client_id="w")
            txn.put_study_metadata("cond", d.study_metadata)
        store.transact(commit)
        collected.extend(decisions.suggestions)
    return space, collected


def test_11_conditional_soundness_and_dedupe():
    with criterion(11, "1000 suggestions/policy: zero inactive params; LOW-noise no dups"):
        for algorithm, kw in (("RANDOM_SEARCH", {}), ("GP_UCB", {}),
                              ("REG_EVO", {}),
                              ("GRID_SEARCH", {"grid_resolution": 170})):
            space, suggestions = suggestions_from_policy(algorithm, **kw)
            assert len(suggestions) == 1000, algorithm
            for s in suggestions:
                violations = validate_assignment(space, s)
                assert violations == [], (algorithm, s.values, violations)

        # small categorical space, LOW noise: first 6 suggestions from every
        # policy enumerate all 6 combos with zero repeats
        small = [ParameterSpec.categorical("a", ["x", "y"]),
                 ParameterSpec.categorical("b", ["1", "2", "3"])]
        for algorithm in ("RANDOM_SEARCH", "GP_UCB", "REG_EVO", "GRID_SEARCH"):
            spec = StudySpec(search_space=small,
                             metrics=[MetricSpec("objective", Goal.MAXIMIZE)],
                             algorithm=algorithm,
                             observation_noise=ObservationNoise.LOW)
            spec.metadata.put("policy", "seed", "3")
            store = Datastore()
            store.create_study(spec, "small")
            supporter = PolicySupporter(store)
            seen = []
            for _ in range(6):
                study_spec = store.get_study("small").spec
                policy = policy_for(algorithm, supporter, "small", study_spec)
                decisions = policy.suggest(SuggestRequest(
                    study_name="small", study_config=study_spec, count=1,
                    client_id="w"))
                suggestion = decisions.suggestions[0]
                seen.append(tuple(sorted(suggestion.values.items())))

                def commit(txn, a=suggestion, d=decisions):
                    return txn.create_trial("small", a, client_id="w").id
                tid = store.transact(lambda txn: commit(txn))
                store.transact(lambda txn: txn.put_study_metadata(
                    "small", decisions.study_metadata))
                store.complete_trial("small", tid, final_measurement=Measurement(
                    step=0, metrics={"objective": float(len(seen))}))
            assert len(set(seen)) == 6, (algorithm, seen)
