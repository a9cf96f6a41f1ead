"""Random search, the duplicate filter driven by the observation-noise
hint, and grid search with a resumable cursor."""

from __future__ import annotations

import itertools
import logging
from typing import Iterable, Sequence

import numpy as np

from ..datastore import canonical_json
from ..errors import GridExhausted
from ..model import ObservationNoise, StudySpec
from ..policies import (Policy, SuggestDecisions, SuggestRequest, study_seed)
from ..search_space import (ParameterAssignment, ParameterSpec,
                            grid_assignments, sample_random)

log = logging.getLogger(__name__)

DEDUPE_MAX_ATTEMPTS = 100

GRID_NAMESPACE = "grid"
GRID_CURSOR_KEY = "cursor"
GRID_RESOLUTION_KEY = "resolution"


def assignment_key(assignment: ParameterAssignment) -> str:
    return canonical_json(assignment.to_json())


def dedupe_filter(space: Sequence[ParameterSpec],
                  candidates: Sequence[ParameterAssignment],
                  history: Iterable[ParameterAssignment],
                  noise: ObservationNoise,
                  rng: np.random.Generator,
                  max_attempts: int = DEDUPE_MAX_ATTEMPTS) -> list[ParameterAssignment]:
    """With the LOW noise hint, candidates that exactly repeat a historical
    or batch-mate assignment are replaced by fresh random draws (up to
    ``max_attempts``, then passed through with a warning). HIGH noise means
    repeats are worthwhile, so candidates pass unchanged."""
    return dedupe_filter_keys(space, candidates,
                              {assignment_key(a) for a in history},
                              noise, rng, max_attempts)


def dedupe_filter_keys(space: Sequence[ParameterSpec],
                       candidates: Sequence[ParameterAssignment],
                       seen_keys: set[str],
                       noise: ObservationNoise,
                       rng: np.random.Generator,
                       max_attempts: int = DEDUPE_MAX_ATTEMPTS) -> list[ParameterAssignment]:
    if ObservationNoise(noise) is ObservationNoise.HIGH:
        return list(candidates)
    seen = set(seen_keys)
    out: list[ParameterAssignment] = []
    for cand in candidates:
        accepted = cand
        if assignment_key(cand) in seen:
            for _ in range(max_attempts):
                resampled = sample_random(space, rng)
                if assignment_key(resampled) not in seen:
                    accepted = resampled
                    break
            else:
                log.warning("dedupe gave up after %d resamples; repeating %s",
                            max_attempts, cand.values)
                accepted = cand
        out.append(accepted)
        seen.add(assignment_key(accepted))
    return out


def random_search_suggest(study_spec: StudySpec, count: int, seed,
                          history: Iterable[ParameterAssignment] = ()
                          ) -> list[ParameterAssignment]:
    """Uniform draws in scaled space; deduplicated against history per the
    study's observation-noise hint."""
    rng = np.random.default_rng(seed)
    candidates = [sample_random(study_spec.search_space, rng) for _ in range(count)]
    return dedupe_filter(study_spec.search_space, candidates, history,
                         study_spec.observation_noise, rng)


def grid_search_suggest(study_spec: StudySpec, count: int, cursor: int,
                        resolution: int = 10
                        ) -> tuple[list[ParameterAssignment], int]:
    """Next ``count`` lattice points in row-major declaration order starting
    at ``cursor``; returns the batch and the advanced cursor. Raises
    GridExhausted once the lattice is used up."""
    lattice = grid_assignments(study_spec.search_space, resolution)
    batch = list(itertools.islice(lattice, cursor, cursor + count))
    if not batch:
        raise GridExhausted(f"grid exhausted at cursor {cursor}")
    return batch, cursor + len(batch)


class RandomSearchPolicy(Policy):
    """Stateless random sampling; the per-operation RNG is derived from the
    study seed and the number of existing trials so a re-run of the same
    operation reproduces its suggestions."""

    def __init__(self, supporter, study_name: str, study_spec: StudySpec):
        super().__init__(supporter)
        self.study_name = study_name

    def suggest(self, request: SuggestRequest) -> SuggestDecisions:
        spec = request.study_config
        existing = self.supporter.get_trials(request.study_name)
        seed = [study_seed(spec, request.study_name), len(existing)]
        suggestions = random_search_suggest(
            spec, request.count, seed, history=[t.parameters for t in existing])
        return SuggestDecisions(suggestions=suggestions)


class GridSearchPolicy(Policy):
    """Resumes the lattice from the cursor persisted in study metadata; the
    advanced cursor rides back with the decisions so it commits atomically
    with the new trials."""

    def __init__(self, supporter, study_name: str, study_spec: StudySpec):
        super().__init__(supporter)
        self.study_name = study_name

    def suggest(self, request: SuggestRequest) -> SuggestDecisions:
        spec = request.study_config
        cursor = int(spec.metadata.get(GRID_NAMESPACE, GRID_CURSOR_KEY, "0"))
        resolution = int(spec.metadata.get(GRID_NAMESPACE, GRID_RESOLUTION_KEY, "10"))
        batch, new_cursor = grid_search_suggest(spec, request.count, cursor,
                                                resolution)
        return SuggestDecisions(
            suggestions=batch,
            study_metadata=[(GRID_NAMESPACE, GRID_CURSOR_KEY, str(new_cursor))])
