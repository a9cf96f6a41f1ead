"""Built-in suggestion policies and their registry wiring."""

from __future__ import annotations

from ..policies import (Policy, PolicySupporter, SerializableDesignerPolicy,
                        SuggestDecisions, SuggestRequest, register_policy)
from .evolution import (EvolutionState, PopulationMember, RegEvoDesigner,
                        pareto_ranks, regevo_update_and_suggest)
from .gp import (GpModel, embed_assignment, embedding_layout, gp_fit,
                 gp_ucb_suggest, robust_cholesky)
from .pareto import pareto_frontier
from .random_grid import (GridSearchPolicy, RandomSearchPolicy, dedupe_filter,
                          grid_search_suggest, random_search_suggest)

RANDOM_SEARCH = "RANDOM_SEARCH"
GRID_SEARCH = "GRID_SEARCH"
REG_EVO = "REG_EVO"
GP_UCB = "GP_UCB"


class GpUcbPolicy(Policy):
    def __init__(self, supporter: PolicySupporter, study_name: str, study_spec):
        super().__init__(supporter)
        self.study_name = study_name

    def suggest(self, request: SuggestRequest) -> SuggestDecisions:
        from ..policies import study_seed
        from ..model import TrialState

        spec = request.study_config
        existing = self.supporter.get_trials(request.study_name)
        completed = [t for t in existing if t.state is TrialState.COMPLETED]
        seed = [study_seed(spec, request.study_name), len(existing)]
        suggestions = gp_ucb_suggest(
            spec, completed, request.count, seed,
            history=[t.parameters for t in existing])
        return SuggestDecisions(suggestions=suggestions)


def _regevo_factory(supporter, study_name, study_spec):
    return SerializableDesignerPolicy(supporter, REG_EVO, RegEvoDesigner)


register_policy(RANDOM_SEARCH, RandomSearchPolicy)
register_policy(GRID_SEARCH, GridSearchPolicy)
register_policy(REG_EVO, _regevo_factory)
register_policy(GP_UCB, GpUcbPolicy)

__all__ = [
    "EvolutionState", "GpModel", "GpUcbPolicy", "GridSearchPolicy",
    "PopulationMember", "RandomSearchPolicy", "RegEvoDesigner",
    "dedupe_filter", "embed_assignment", "embedding_layout", "gp_fit",
    "gp_ucb_suggest", "grid_search_suggest", "pareto_frontier", "pareto_ranks",
    "random_search_suggest", "regevo_update_and_suggest", "robust_cholesky",
    "RANDOM_SEARCH", "GRID_SEARCH", "REG_EVO", "GP_UCB",
]
