"""Exploration rounds and the exploitation funnel, with event-sourced sessions.

Phase 1 runs N independent exploration trees of C cycles; within a cycle,
rounds repeat against one parent formula until k valid candidates accumulate
(valid = strictly higher theoretical capacity than the parent, and not already
known). Flagged candidates feed back into the next round's prompt, existing
ones as a plain list and invalid ones together with a retrieved similar-but-
valid compound. Phase 2 deduplicates the pooled output with the range match
and runs the three-stage ranking funnel: absolute total charge, preparation
complexity, then LLM-compared voltage via merge sort.

Every state mutation goes through ``Session.record``: the engine decides what
happens, emits an event, and ``SessionState.apply`` folds it in, so replaying
the log reconstructs the exact session.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

from .events import Event
from .formulas import Formula, coefficient, parse_formula, render_formula
from .gateway import (
    ChatRequest,
    ComparatorCache,
    ComparatorFailure,
    LLMBackend,
    NoCandidatesFound,
    compare_voltage,
    extract_bullet_candidates,
    render_prompt,
)
from .metrics import (
    UnknownValence,
    ValenceTable,
    decide,
    preparation_complexity,
    range_match,
    theoretical_capacity,
    total_charge,
)
from .store import RegistryClient, Snapshot, exists_exact, exists_range, retrieve_similar

__all__ = [
    "PROMPT_GROUPS",
    "PipelineError",
    "InvalidSeed",
    "PhaseError",
    "RoundBudgetExhausted",
    "SessionConfig",
    "CandidateRecord",
    "RankOutcome",
    "RoundReport",
    "SessionState",
    "Session",
    "start_session",
    "run_round",
    "run_exploration",
    "run_dedup",
    "run_rank",
    "dedup_candidates",
    "rank_candidates",
    "merge_sort_by_comparator",
    "allowed_groups_sentence_list",
]

# Element groups the generation prompt may offer for substitution. Used only
# for prompt-level exclusion in later cycles; candidates that stray outside
# them are never post-filtered.
PROMPT_GROUPS: tuple[tuple[str, frozenset[str]], ...] = (
    ("carbon group", frozenset({"C", "Si", "Ge", "Sn", "Pb"})),
    ("alkaline earth metals group", frozenset({"Be", "Mg", "Ca", "Sr", "Ba"})),
    (
        "transition elements",
        frozenset({
            "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
            "Y", "Zr", "Nb", "Mo", "Ru", "Rh", "Pd", "Ag", "Cd",
            "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg",
        }),
    ),
)

VALID = "valid"
INVALID_CAPACITY = "invalid_capacity"
EXISTING = "existing"
DUPLICATE = "duplicate"
SELECTED = "selected"


class PipelineError(RuntimeError):
    pass


class InvalidSeed(PipelineError):
    """The seed formula contains no lithium."""


class PhaseError(PipelineError):
    """The operation does not apply to the session's current phase."""


class RoundBudgetExhausted(PipelineError):
    def __init__(self, cycle: int, parent: str, budget: int):
        self.cycle = cycle
        self.parent = parent
        super().__init__(
            f"cycle {cycle}: parent {parent} used its budget of {budget} rounds"
        )


@dataclass(frozen=True)
class SessionConfig:
    """Knobs for one optimization session.

    ``k`` valid candidates per parent, ``cycles`` re-seeding depths, ``trees``
    independent repetitions: a full run yields trees * k**cycles candidates.
    """

    k: int = 5
    cycles: int = 2
    trees: int = 4
    tau: float = 0.1
    charge_top_n: int = 29
    complexity_max: int = 7
    complexity_top_n: int = 20
    voltage_top_m: int = 3
    max_rounds_per_cycle: int = 10
    temperature: float = 1.0
    frequency_penalty: float = 0.2
    generation_model: str = "gpt-3.5-turbo"
    ranking_model: str = "gpt-4o"

    def __post_init__(self):
        for name in ("k", "cycles", "trees", "charge_top_n", "complexity_max",
                     "complexity_top_n", "voltage_top_m", "max_rounds_per_cycle"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must be in (0, 1)")
        if not self.voltage_top_m <= self.complexity_top_n <= self.charge_top_n:
            raise ValueError("require voltage_top_m <= complexity_top_n <= charge_top_n")

    def to_dict(self) -> dict:
        return {
            "k": self.k, "cycles": self.cycles, "trees": self.trees, "tau": self.tau,
            "charge_top_n": self.charge_top_n, "complexity_max": self.complexity_max,
            "complexity_top_n": self.complexity_top_n, "voltage_top_m": self.voltage_top_m,
            "max_rounds_per_cycle": self.max_rounds_per_cycle,
            "temperature": self.temperature, "frequency_penalty": self.frequency_penalty,
            "generation_model": self.generation_model, "ranking_model": self.ranking_model,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SessionConfig":
        known = {f: data[f] for f in cls.__dataclass_fields__ if f in data}
        return cls(**known)


@dataclass
class CandidateRecord:
    """One generated formula with its verdict and provenance."""

    formula: Formula
    status: str
    parent: Formula
    tree: int
    cycle: int
    round: int
    capacity: float
    retrieved_hint: Formula | None = None
    reasoning_text: str = ""

    def to_dict(self) -> dict:
        return {
            "formula": render_formula(self.formula),
            "status": self.status,
            "parent": render_formula(self.parent),
            "tree": self.tree,
            "cycle": self.cycle,
            "round": self.round,
            "capacity": self.capacity,
            "retrieved_hint": render_formula(self.retrieved_hint) if self.retrieved_hint else None,
            "reasoning_text": self.reasoning_text,
        }


@dataclass(frozen=True)
class RankOutcome:
    """The three-stage funnel result; each stage is contained in the previous.

    ``charge_values`` and ``complexity_values`` carry the per-candidate numbers
    for every stage-A survivor, so downstream consumers (console, reports)
    never recompute domain math.
    """

    charge_ranked: tuple[Formula, ...]
    complexity_filtered: tuple[Formula, ...]
    voltage_ordered: tuple[Formula, ...]
    comparison_log: tuple[dict, ...]
    charge_values: tuple[tuple[str, float], ...] = ()
    complexity_values: tuple[tuple[str, int], ...] = ()
    excluded_unknown_valence: tuple[Formula, ...] = ()
    complexity_excluded: tuple[Formula, ...] = ()

    def to_dict(self) -> dict:
        return {
            "charge_ranked": [render_formula(f) for f in self.charge_ranked],
            "complexity_filtered": [render_formula(f) for f in self.complexity_filtered],
            "voltage_ordered": [render_formula(f) for f in self.voltage_ordered],
            "comparison_log": list(self.comparison_log),
            "charge_values": {name: value for name, value in self.charge_values},
            "complexity_values": {name: value for name, value in self.complexity_values},
            "excluded_unknown_valence": [render_formula(f) for f in self.excluded_unknown_valence],
            "complexity_excluded": [render_formula(f) for f in self.complexity_excluded],
        }


@dataclass
class RoundReport:
    tree: int
    cycle: int
    round: int
    parent: Formula
    template_id: str
    prompt: str
    response: str
    evaluated: list[CandidateRecord]
    valid_total: int
    complete: bool


def allowed_groups_sentence_list(parent: Formula, seed: Formula) -> str:
    """Render the group list offered in later cycles.

    Groups already drawn from (an element of the parent that was not in the
    seed) are dropped: same-group substitutes bond too similarly to help. If
    every group were excluded, the full list is kept so the prompt stays
    well-formed.
    """
    new_elements = set(parent.composition) - set(seed.composition)
    excluded = {
        name for name, members in PROMPT_GROUPS if new_elements & members
    }
    names = [name for name, _ in PROMPT_GROUPS if name not in excluded]
    if not names:
        names = [name for name, _ in PROMPT_GROUPS]
    if len(names) == 1:
        return names[0]
    return ", ".join(names[:-1]) + ", and " + names[-1]


# ---------------------------------------------------------------------------
# Session state (event fold)
# ---------------------------------------------------------------------------

class SessionState:
    """Mutable session view; ``apply`` is the only mutator.

    Replaying the event log through a fresh instance reconstructs the state,
    which is what crash recovery does.
    """

    def __init__(self):
        self.config: SessionConfig | None = None
        self.seed: Formula | None = None
        self.phase: str = "new"
        # exploration cursor (0-based internally; event payloads are 1-based)
        self.tree = 0
        self.cycle = 0
        self.parent_index = 0
        self.rounds_used = 0
        self.parent_queue: list[Formula] = []
        self.acc_valid: list[Formula] = []
        self.acc_existing: list[str] = []
        self.acc_invalid: list[tuple[str, str | None]] = []
        self.cycle_outputs: list[Formula] = []
        self.exploration_output: list[Formula] = []
        self.candidates: list[CandidateRecord] = []
        self.dedup_unique: list[Formula] | None = None
        self.dedup_removed: list[Formula] | None = None
        self.comparison_log: list[dict] = []
        self.rank: dict | None = None
        self.failed_comparison: tuple[str, str] | None = None
        self.pending_override: dict | None = None
        self.override_count = 0
        self.flags: dict[int, str | None] = {}
        self.applied = 0

    # -- queries -----------------------------------------------------------

    def current_parent(self) -> Formula:
        return self.parent_queue[self.parent_index]

    def exploring(self) -> bool:
        return self.phase == "exploration"

    def funnel_counts(self) -> dict:
        rank = self.rank or {}
        return {
            "generated": len(self.candidates),
            "valid": len(self.exploration_output) if self.phase != "exploration"
            else sum(1 for c in self.candidates if c.status == VALID),
            "unique": len(self.dedup_unique) if self.dedup_unique is not None else None,
            "charge_ranked": len(rank.get("charge_ranked", [])) or None,
            "complexity_filtered": len(rank.get("complexity_filtered", [])) or None,
            "top": len(rank.get("voltage_ordered", [])) or None,
        }

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict() if self.config else None,
            "seed": render_formula(self.seed) if self.seed else None,
            "phase": self.phase,
            "cursor": {
                "tree": self.tree,
                "cycle": self.cycle,
                "parent_index": self.parent_index,
                "rounds_used": self.rounds_used,
            },
            "parent_queue": [render_formula(f) for f in self.parent_queue],
            "acc_valid": [render_formula(f) for f in self.acc_valid],
            "acc_existing": list(self.acc_existing),
            "acc_invalid": [list(pair) for pair in self.acc_invalid],
            "cycle_outputs": [render_formula(f) for f in self.cycle_outputs],
            "exploration_output": [render_formula(f) for f in self.exploration_output],
            "candidates": [c.to_dict() for c in self.candidates],
            "dedup_unique": [render_formula(f) for f in self.dedup_unique] if self.dedup_unique is not None else None,
            "dedup_removed": [render_formula(f) for f in self.dedup_removed] if self.dedup_removed is not None else None,
            "comparison_log": list(self.comparison_log),
            "rank": self.rank,
            "failed_comparison": list(self.failed_comparison) if self.failed_comparison else None,
            "pending_override": self.pending_override,
            "override_count": self.override_count,
            "flags": {str(k): v for k, v in self.flags.items()},
            "applied_events": self.applied,
        }

    @classmethod
    def replay(cls, events: Sequence[Event]) -> "SessionState":
        state = cls()
        for event in events:
            state.apply(event)
        return state

    # -- fold --------------------------------------------------------------

    def apply(self, event: Event) -> None:
        handler = getattr(self, f"_on_{event.type}", None)
        if handler is not None:
            handler(event.payload)
        self.applied += 1

    def _on_session_created(self, p: dict) -> None:
        self.config = SessionConfig.from_dict(p["config"])
        self.seed = parse_formula(p["seed"])
        self.phase = "exploration"
        self.parent_queue = [self.seed]

    def _on_round_started(self, p: dict) -> None:
        self.rounds_used += 1
        if p.get("override_id") is not None:
            self.pending_override = None

    def _on_round_failed(self, p: dict) -> None:
        pass

    def _on_round_budget_exhausted(self, p: dict) -> None:
        pass

    def _on_candidate_evaluated(self, p: dict) -> None:
        formula = parse_formula(p["formula"])
        hint = parse_formula(p["retrieved_hint"]) if p.get("retrieved_hint") else None
        record = CandidateRecord(
            formula=formula,
            status=p["status"],
            parent=parse_formula(p["parent"]),
            tree=p["tree"],
            cycle=p["cycle"],
            round=p["round"],
            capacity=p["capacity"],
            retrieved_hint=hint,
            reasoning_text=p.get("reasoning_text", ""),
        )
        self.candidates.append(record)
        if record.status == VALID:
            self.acc_valid.append(formula)
        elif record.status == EXISTING:
            self.acc_existing.append(p["formula"])
        elif record.status == INVALID_CAPACITY:
            self.acc_invalid.append((p["formula"], p.get("retrieved_hint")))

    def _on_round_completed(self, p: dict) -> None:
        if not p["complete"]:
            return
        assert self.config is not None
        self.cycle_outputs.extend(self.acc_valid)
        self.acc_valid = []
        self.acc_existing = []
        self.acc_invalid = []
        self.rounds_used = 0
        self.parent_index += 1
        if self.parent_index < len(self.parent_queue):
            return
        # cycle finished
        if self.cycle + 1 < self.config.cycles:
            self.cycle += 1
            self.parent_queue = list(self.cycle_outputs)
            self.cycle_outputs = []
            self.parent_index = 0
            return
        # tree finished
        self.exploration_output.extend(self.cycle_outputs)
        self.cycle_outputs = []
        self.tree += 1
        if self.tree < self.config.trees:
            self.cycle = 0
            self.parent_queue = [self.seed]
            self.parent_index = 0
        else:
            self.phase = "explored"

    def _on_cycle_completed(self, p: dict) -> None:
        pass

    def _on_exploration_completed(self, p: dict) -> None:
        pass

    def _on_dedup_completed(self, p: dict) -> None:
        self.dedup_unique = [parse_formula(f) for f in p["unique"]]
        self.dedup_removed = [parse_formula(f) for f in p["removed"]]
        removed_positions = set(p["removed_indices"])
        position = 0
        assert self.config is not None
        for record in self.candidates:
            if record.cycle == self.config.cycles and record.status in (VALID, DUPLICATE):
                if position in removed_positions:
                    record.status = DUPLICATE
                position += 1
        self.phase = "deduped"

    def _on_comparison_recorded(self, p: dict) -> None:
        self.comparison_log.append(p)

    def _on_comparator_failed(self, p: dict) -> None:
        self.failed_comparison = (p["a"], p["b"])

    def _on_rank_completed(self, p: dict) -> None:
        self.rank = p
        selected = {parse_formula(f).key for f in p["voltage_ordered"]}
        for record in self.candidates:
            if record.status == VALID and record.formula.key in selected:
                record.status = SELECTED
        self.phase = "ranked"

    def _on_prompt_override_set(self, p: dict) -> None:
        self.pending_override = p
        self.override_count += 1

    def _on_candidate_flagged(self, p: dict) -> None:
        self.flags[p["index"]] = p.get("flag")


class Session:
    """State plus its append-only event list and optional persistence sink.

    ``clock`` maps the next sequence number to a timestamp. The default is the
    logical clock (ts == seq), which makes scripted runs bytewise reproducible;
    pass ``time.time`` style callables for wall-clock stamps on live sessions.
    """

    def __init__(self, sink: Callable[[Event], None] | None = None,
                 clock: Callable[[int], float] | None = None):
        self.state = SessionState()
        self.events: list[Event] = []
        self._sink = sink
        self._clock = clock or (lambda seq: float(seq))

    def record(self, event_type: str, payload: dict) -> Event:
        event = Event(seq=len(self.events) + 1, ts=self._clock(len(self.events) + 1),
                      type=event_type, payload=payload)
        self.state.apply(event)
        self.events.append(event)
        if self._sink is not None:
            self._sink(event)
        return event

    @classmethod
    def from_events(cls, events: Sequence[Event],
                    sink: Callable[[Event], None] | None = None,
                    clock: Callable[[int], float] | None = None) -> "Session":
        session = cls(sink=sink, clock=clock)
        for event in events:
            session.state.apply(event)
            session.events.append(event)
        return session


# ---------------------------------------------------------------------------
# Phase 1: exploration
# ---------------------------------------------------------------------------

def start_session(config: SessionConfig, seed: Formula,
                  sink: Callable[[Event], None] | None = None,
                  clock: Callable[[int], float] | None = None) -> Session:
    """Open a session in phase 1, cycle 1, round 1. The seed must contain Li."""
    if coefficient(seed, "Li") <= 0:
        raise InvalidSeed(f"seed {render_formula(seed)} contains no lithium")
    session = Session(sink=sink, clock=clock)
    session.record("session_created", {"config": config.to_dict(), "seed": render_formula(seed)})
    return session


def _round_prompt(state: SessionState) -> tuple[str, dict, int | None]:
    """Template id, bindings, and the consumed override id for the next round."""
    parent = state.current_parent()
    if state.rounds_used == 0 and state.cycle == 0:
        template_id = "initial_round_initial_cycle"
        bindings: dict = {"material": render_formula(parent)}
    elif state.rounds_used == 0:
        template_id = "initial_round_subsequent_cycle"
        bindings = {
            "material": render_formula(parent),
            "allowed_groups": allowed_groups_sentence_list(parent, state.seed),
        }
    else:
        template_id = "subsequent_round"
        bindings = {
            "existing": list(state.acc_existing),
            "invalid": [list(pair) for pair in state.acc_invalid],
        }
    override_id = None
    if state.pending_override is not None:
        override_id = state.pending_override["override_id"]
    return template_id, bindings, override_id


def run_round(session: Session, backend: LLMBackend, snapshot: Snapshot,
              registry: RegistryClient) -> RoundReport:
    """Advance the session by one generation round (one backend call).

    Stage flow: render the case-appropriate prompt, generate, mark existing
    candidates (exact registry match or snapshot range match), mark capacity
    failures with a retrieved hint, and accumulate valid candidates until the
    parent has k of them.
    """
    state = session.state
    config = state.config
    if not state.exploring():
        raise PhaseError(f"cannot run a round in phase {state.phase!r}")
    assert config is not None

    round_no = state.rounds_used + 1
    parent = state.current_parent()
    if round_no > config.max_rounds_per_cycle:
        session.record("round_budget_exhausted", {
            "tree": state.tree + 1, "cycle": state.cycle + 1,
            "parent": render_formula(parent), "budget": config.max_rounds_per_cycle,
        })
        raise RoundBudgetExhausted(state.cycle + 1, render_formula(parent),
                                   config.max_rounds_per_cycle)

    template_id, bindings, override_id = _round_prompt(state)
    body = state.pending_override["body"] if override_id is not None else None
    prompt = render_prompt(template_id, bindings, body=body)
    session.record("round_started", {
        "tree": state.tree + 1, "cycle": state.cycle + 1, "round": round_no,
        "parent": render_formula(parent), "template_id": template_id,
        "override_id": override_id, "prompt": prompt,
    })

    response = backend.send(ChatRequest(
        template_id=template_id,
        bindings=bindings,
        temperature=config.temperature,
        frequency_penalty=config.frequency_penalty,
        model_tag=config.generation_model,
    ))
    session.record("response_received", {"text": response})

    found, skipped = extract_bullet_candidates(response)
    if not found:
        session.record("round_failed", {"reason": "no_candidates", "skipped": skipped})
        raise NoCandidatesFound("response contained no parseable candidate bullets")

    evaluated: list[CandidateRecord] = []
    needed = config.k - len(state.acc_valid)
    taken = 0
    for bullet in found:
        if taken >= needed:
            break
        formula = bullet.formula
        capacity = theoretical_capacity(formula)
        hint_render = None
        if exists_exact(formula, registry) or exists_range(formula, snapshot, config.tau):
            status = EXISTING
        elif decide(parent, formula):
            status = VALID
            taken += 1
        else:
            status = INVALID_CAPACITY
            hint = retrieve_similar(formula, parent, snapshot)
            hint_render = render_formula(hint.formula) if hint else None
        session.record("candidate_evaluated", {
            "formula": render_formula(formula),
            "status": status,
            "capacity": capacity,
            "parent": render_formula(parent),
            "tree": state.tree + 1, "cycle": state.cycle + 1, "round": round_no,
            "retrieved_hint": hint_render,
            "reasoning_text": bullet.line,
        })
        evaluated.append(state.candidates[-1])

    complete = len(state.acc_valid) >= config.k
    valid_total = len(state.acc_valid)
    cycle_done = complete and state.parent_index + 1 == len(state.parent_queue)
    tree_done = cycle_done and state.cycle + 1 == config.cycles
    all_done = tree_done and state.tree + 1 == config.trees
    report = RoundReport(
        tree=state.tree + 1, cycle=state.cycle + 1, round=round_no,
        parent=parent, template_id=template_id, prompt=prompt, response=response,
        evaluated=evaluated, valid_total=valid_total, complete=complete,
    )
    session.record("round_completed", {
        "tree": state.tree + 1, "cycle": state.cycle + 1, "round": round_no,
        "parent": render_formula(parent), "valid_count": valid_total,
        "complete": complete,
    })
    if cycle_done:
        session.record("cycle_completed", {"tree": report.tree, "cycle": report.cycle})
    if all_done:
        session.record("exploration_completed", {"total": len(state.exploration_output)})
    return report


def run_exploration(session: Session, backend: LLMBackend, snapshot: Snapshot,
                    registry: RegistryClient) -> list[CandidateRecord]:
    """Run rounds until every tree's last cycle is complete.

    Returns the final-cycle valid candidates: trees * k**cycles records when
    every round completes within budget.
    """
    state = session.state
    if not state.exploring():
        raise PhaseError(f"cannot explore in phase {state.phase!r}")
    while state.exploring():
        run_round(session, backend, snapshot, registry)
    assert state.config is not None
    final_cycle = state.config.cycles
    return [
        record for record in state.candidates
        if record.cycle == final_cycle and record.status == VALID
    ]


# ---------------------------------------------------------------------------
# Phase 2: dedup and ranking
# ---------------------------------------------------------------------------

def _dedup_removed_indices(candidates: Sequence[Formula], tau: float) -> set[int]:
    removed_at: set[int] = set()
    for j in range(len(candidates)):
        for i in range(j):
            if range_match(candidates[i], candidates[j], tau):
                removed_at.add(j)
                break
    return removed_at


def dedup_candidates(candidates: Sequence[Formula], tau: float) -> tuple[list[Formula], list[Formula]]:
    """First-kept scan: x_j is removed when any earlier x_i range-matches it.

    Returns (survivors, removed), both preserving input order. Results are
    input-order sensitive by construction.
    """
    removed_at = _dedup_removed_indices(candidates, tau)
    unique = [f for idx, f in enumerate(candidates) if idx not in removed_at]
    removed = [f for idx, f in enumerate(candidates) if idx in removed_at]
    return unique, removed


def run_dedup(session: Session, tau: float | None = None) -> tuple[list[Formula], list[Formula]]:
    state = session.state
    if state.phase not in ("explored", "deduped"):
        raise PhaseError(f"dedup requires a completed exploration, not phase {state.phase!r}")
    assert state.config is not None
    tau = state.config.tau if tau is None else tau
    removed_indices = sorted(_dedup_removed_indices(state.exploration_output, tau))
    removed_set = set(removed_indices)
    unique = [f for idx, f in enumerate(state.exploration_output) if idx not in removed_set]
    removed = [f for idx, f in enumerate(state.exploration_output) if idx in removed_set]
    session.record("dedup_completed", {
        "tau": tau,
        "unique": [render_formula(f) for f in unique],
        "removed": [render_formula(f) for f in removed],
        "removed_indices": removed_indices,
    })
    return unique, removed


def merge_sort_by_comparator(items: Sequence, prefer: Callable) -> list:
    """Stable merge sort ordered entirely by the pairwise oracle.

    ``prefer(a, b)`` must return True when ``a`` ranks ahead of ``b``; with a
    cache-backed oracle the total number of distinct queries is at most
    n*ceil(log2 n).
    """
    items = list(items)
    if len(items) <= 1:
        return items
    mid = len(items) // 2
    left = merge_sort_by_comparator(items[:mid], prefer)
    right = merge_sort_by_comparator(items[mid:], prefer)
    merged = []
    i = j = 0
    while i < len(left) and j < len(right):
        if prefer(left[i], right[j]):
            merged.append(left[i])
            i += 1
        else:
            merged.append(right[j])
            j += 1
    merged.extend(left[i:])
    merged.extend(right[j:])
    return merged


def rank_candidates(
    unique: Sequence[Formula],
    backend: LLMBackend,
    cache: ComparatorCache,
    valences: ValenceTable | None = None,
    config: SessionConfig | None = None,
    on_comparison: Callable[[dict], None] | None = None,
) -> RankOutcome:
    """The three-stage funnel over deduplicated candidates.

    Stage A ranks by |total charge| ascending (ties: capacity descending, then
    rendered formula) and keeps the top ``charge_top_n``; candidates with an
    element outside the valence table are excluded, never guessed. Stage B
    drops everything above ``complexity_max`` distinct elements and keeps the
    top ``complexity_top_n`` in stage-A order. Stage C merge-sorts the rest by
    compared voltage and returns the top ``voltage_top_m``.

    On a comparator failure the partial outcome is attached to the raised
    :class:`ComparatorFailure` as ``partial``.
    """
    vt = valences or ValenceTable.default()
    cfg = config or SessionConfig()

    chargeable: list[tuple[Formula, float]] = []
    excluded_valence: list[Formula] = []
    for formula in unique:
        try:
            chargeable.append((formula, total_charge(formula, vt)))
        except UnknownValence:
            excluded_valence.append(formula)

    ranked = sorted(
        chargeable,
        key=lambda pair: (abs(pair[1]), -theoretical_capacity(pair[0]), render_formula(pair[0])),
    )
    charge_ranked = tuple(f for f, _ in ranked[: cfg.charge_top_n])
    charge_values = tuple(
        (render_formula(f), charge) for f, charge in ranked[: cfg.charge_top_n]
    )
    complexity_values = tuple(
        (render_formula(f), preparation_complexity(f)) for f, _ in ranked[: cfg.charge_top_n]
    )

    complexity_filtered: list[Formula] = []
    complexity_excluded: list[Formula] = []
    for formula in charge_ranked:
        if preparation_complexity(formula) > cfg.complexity_max:
            complexity_excluded.append(formula)
        elif len(complexity_filtered) < cfg.complexity_top_n:
            complexity_filtered.append(formula)

    comparison_log: list[dict] = []

    def prefer(a: Formula, b: Formula) -> bool:
        outcome = compare_voltage(
            a, b, backend, cache,
            model_tag=cfg.ranking_model,
            temperature=cfg.temperature,
            frequency_penalty=cfg.frequency_penalty,
        )
        entry = {
            "a": render_formula(a),
            "b": render_formula(b),
            "winner": render_formula(outcome.winner),
            "response": outcome.response,
            "cached": outcome.cached,
        }
        comparison_log.append(entry)
        if on_comparison is not None:
            on_comparison(entry)
        return outcome.winner == a

    try:
        ordered = merge_sort_by_comparator(list(complexity_filtered), prefer)
    except ComparatorFailure as failure:
        failure.partial = RankOutcome(
            charge_ranked=charge_ranked,
            complexity_filtered=tuple(complexity_filtered),
            voltage_ordered=(),
            comparison_log=tuple(comparison_log),
            charge_values=charge_values,
            complexity_values=complexity_values,
            excluded_unknown_valence=tuple(excluded_valence),
            complexity_excluded=tuple(complexity_excluded),
        )
        raise

    return RankOutcome(
        charge_ranked=charge_ranked,
        complexity_filtered=tuple(complexity_filtered),
        voltage_ordered=tuple(ordered[: cfg.voltage_top_m]),
        comparison_log=tuple(comparison_log),
        charge_values=charge_values,
        complexity_values=complexity_values,
        excluded_unknown_valence=tuple(excluded_valence),
        complexity_excluded=tuple(complexity_excluded),
    )


def run_rank(session: Session, backend: LLMBackend,
             cache: ComparatorCache | None = None,
             valences: ValenceTable | None = None) -> RankOutcome:
    state = session.state
    if state.phase not in ("deduped", "ranked"):
        raise PhaseError(f"ranking requires dedup first, not phase {state.phase!r}")
    assert state.config is not None and state.dedup_unique is not None
    cache = cache or ComparatorCache()

    def emit(entry: dict) -> None:
        session.record("comparison_recorded", entry)

    try:
        outcome = rank_candidates(
            state.dedup_unique, backend, cache,
            valences=valences, config=state.config, on_comparison=emit,
        )
    except ComparatorFailure as failure:
        a, b = failure.pair
        session.record("comparator_failed", {
            "a": render_formula(a), "b": render_formula(b),
            "last_response": failure.last_response,
        })
        raise
    payload = outcome.to_dict()
    payload.pop("comparison_log")  # already event-logged one by one
    session.record("rank_completed", payload)
    return outcome
