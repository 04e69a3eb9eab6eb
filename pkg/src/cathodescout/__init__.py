"""LLM-guided lithium cathode screening engine.

Parses stoichiometric formulas, scores them with cheap surrogate metrics,
explores candidate compositions through prompt/feedback rounds against an LLM
backend (scripted or live), and funnels the pool through dedup plus a
three-stage ranking cascade. Sessions are event-sourced and replayable.
"""

__version__ = "0.1.0"

from .formulas import (
    Formula,
    PeriodicTable,
    PERIODIC_TABLE,
    parse_formula,
    render_formula,
    molecular_weight,
    coefficient,
    species_count,
)
from .metrics import (
    GroupWeights,
    ValenceTable,
    decide,
    formula_distance,
    preparation_complexity,
    range_match,
    theoretical_capacity,
    total_charge,
)
from .store import (
    CompoundRecord,
    MockRegistryClient,
    Snapshot,
    exists_exact,
    exists_range,
    load_snapshot,
    retrieve_similar,
)
from .gateway import (
    ChatRequest,
    ComparatorCache,
    Exchange,
    LiveBackend,
    ScriptedBackend,
    compare_voltage,
    parse_candidate_bullets,
    parse_comparison_winner,
    render_prompt,
)
from .pipeline import (
    CandidateRecord,
    RankOutcome,
    Session,
    SessionConfig,
    SessionState,
    dedup_candidates,
    merge_sort_by_comparator,
    rank_candidates,
    run_dedup,
    run_exploration,
    run_rank,
    run_round,
    start_session,
)

__all__ = [name for name in dir() if not name.startswith("_")]
