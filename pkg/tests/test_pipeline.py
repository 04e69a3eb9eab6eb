from __future__ import annotations

import pytest

import helpers
from cathodescout.formulas import parse_formula, render_formula
from cathodescout.gateway import (
    ComparatorCache,
    ComparatorFailure,
    Exchange,
    NoCandidatesFound,
    ScriptedBackend,
    comparison_response,
    generation_response,
)
from cathodescout.metrics import theoretical_capacity
from cathodescout.pipeline import (
    InvalidSeed,
    PhaseError,
    RoundBudgetExhausted,
    SessionConfig,
    allowed_groups_sentence_list,
    dedup_candidates,
    merge_sort_by_comparator,
    rank_candidates,
    run_dedup,
    run_exploration,
    run_rank,
    run_round,
    start_session,
)
from cathodescout.store import MockRegistryClient, Snapshot

NMC811 = parse_formula("LiNi0.8Mn0.1Co0.1O2")
EMPTY_SNAPSHOT = Snapshot(records=())
NO_REGISTRY = MockRegistryClient()


def fresh_session(**overrides):
    config = SessionConfig(**overrides)
    return start_session(config, NMC811)


class TestStartSession:
    def test_defaults(self):
        session = fresh_session()
        state = session.state
        assert state.config.k == 5
        assert state.config.cycles == 2
        assert state.config.trees == 4
        assert state.phase == "exploration"
        assert state.current_parent() == NMC811
        assert session.events[0].type == "session_created"

    def test_seed_without_lithium(self):
        with pytest.raises(InvalidSeed):
            start_session(SessionConfig(), parse_formula("CoO2"))

    def test_expected_total_from_arithmetic(self):
        config = SessionConfig(k=2, cycles=1, trees=1)
        assert config.trees * config.k ** config.cycles == 2

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SessionConfig(k=0)
        with pytest.raises(ValueError):
            SessionConfig(tau=1.5)
        with pytest.raises(ValueError):
            SessionConfig(voltage_top_m=30, complexity_top_n=20, charge_top_n=29)


class TestGroupExclusion:
    def test_carbon_group_parent(self):
        parent = parse_formula("LiNi0.3Mn0.1Co0.1Si0.5O2")
        assert allowed_groups_sentence_list(parent, NMC811) == (
            "alkaline earth metals group, and transition elements"
        )

    def test_alkaline_earth_parent(self):
        parent = parse_formula("LiNi0.5Mn0.1Co0.1Mg0.2O2")
        assert allowed_groups_sentence_list(parent, NMC811) == (
            "carbon group, and transition elements"
        )

    def test_transition_parent(self):
        parent = parse_formula("LiNi0.6Mn0.1Co0.1Zr0.1O2")
        assert allowed_groups_sentence_list(parent, NMC811) == (
            "carbon group, and alkaline earth metals group"
        )

    def test_unmapped_new_element_excludes_nothing(self):
        parent = parse_formula("LiNi0.5Mn0.1Co0.1Al0.1O2")  # boron group, not offered
        assert allowed_groups_sentence_list(parent, NMC811) == (
            "carbon group, alkaline earth metals group, and transition elements"
        )

    def test_seed_elements_never_exclude(self):
        # Ni/Mn/Co are transition metals but were already in the seed
        assert allowed_groups_sentence_list(NMC811, NMC811) == (
            "carbon group, alkaline earth metals group, and transition elements"
        )


class TestRunRound:
    def test_all_valid_round_completes(self):
        session = fresh_session(k=5, cycles=1, trees=1)
        formulas = [f"LiNi{0.8 - 0.01 * i:.2f}Mn0.1Co0.1Mg{0.01 * i:.2f}O2" for i in range(1, 6)]
        backend = ScriptedBackend([Exchange(response=generation_response(formulas))])
        report = run_round(session, backend, EMPTY_SNAPSHOT, NO_REGISTRY)
        assert report.complete
        assert report.valid_total == 5
        assert session.state.phase == "explored"
        assert all(r.status == "valid" for r in report.evaluated)

    def test_existing_candidate_feeds_next_prompt(self):
        session = fresh_session(k=5, cycles=1, trees=1)
        known = "LiNi0.5Mn0.2Co0.2Ti0.1O2"
        registry = MockRegistryClient.of([known])
        fresh = [f"LiNi{0.8 - 0.01 * i:.2f}Mn0.1Co0.1Mg{0.01 * i:.2f}O2" for i in range(1, 6)]
        backend = ScriptedBackend([
            Exchange(response=generation_response([known] + fresh[:4])),
            Exchange(response=generation_response([fresh[4]])),
        ])
        first = run_round(session, backend, EMPTY_SNAPSHOT, registry)
        assert not first.complete
        assert [r.status for r in first.evaluated] == ["existing"] + ["valid"] * 4

        second = run_round(session, backend, EMPTY_SNAPSHOT, registry)
        assert second.complete
        assert second.template_id == "subsequent_round"
        assert "These batteries have been discovered before:" in second.prompt
        assert f"* {known}" in second.prompt

    def test_range_match_against_snapshot_also_flags_existing(self):
        session = fresh_session(k=1, cycles=1, trees=1)
        snapshot = Snapshot.from_formulas(["LiNi0.73Mn0.1Co0.1Mg0.05O2"])
        backend = ScriptedBackend([
            Exchange(response=generation_response(
                ["LiNi0.75Mn0.1Co0.1Mg0.05O2", "LiNi0.5Mn0.1Co0.1Mg0.3O2"]
            )),
        ])
        report = run_round(session, backend, snapshot, NO_REGISTRY)
        assert [r.status for r in report.evaluated] == ["existing", "valid"]

    def test_invalid_candidate_gets_retrieval_hint(self):
        session = fresh_session(k=1, cycles=1, trees=1)
        snapshot = Snapshot.from_formulas(["Li2MnO3"])
        low_capacity = "LiNi0.9Co0.1O2"
        assert theoretical_capacity(parse_formula(low_capacity)) < theoretical_capacity(NMC811)
        backend = ScriptedBackend([
            Exchange(response=generation_response([low_capacity])),
            Exchange(response=generation_response(["LiNi0.7Mn0.1Co0.1Mg0.1O2"])),
        ])
        first = run_round(session, backend, snapshot, NO_REGISTRY)
        assert [r.status for r in first.evaluated] == ["invalid_capacity"]
        assert str(first.evaluated[0].retrieved_hint) == "Li2MnO3"

        second = run_round(session, backend, snapshot, NO_REGISTRY)
        assert second.complete
        assert f"* {low_capacity} (a retrieved similar and correct battery is Li2MnO3)" in second.prompt

    def test_round_budget_exhausted_surfaces(self):
        session = fresh_session(k=1, cycles=1, trees=1, max_rounds_per_cycle=2)
        bad = Exchange(response=generation_response(["LiCoO2"]))  # below seed capacity
        backend = ScriptedBackend([bad, bad, bad])
        run_round(session, backend, EMPTY_SNAPSHOT, NO_REGISTRY)
        run_round(session, backend, EMPTY_SNAPSHOT, NO_REGISTRY)
        with pytest.raises(RoundBudgetExhausted):
            run_round(session, backend, EMPTY_SNAPSHOT, NO_REGISTRY)
        assert session.events[-1].type == "round_budget_exhausted"

    def test_unparseable_response_raises_after_logging(self):
        session = fresh_session(k=1, cycles=1, trees=1)
        backend = ScriptedBackend([Exchange(response="I have no suggestions today.")])
        with pytest.raises(NoCandidatesFound):
            run_round(session, backend, EMPTY_SNAPSHOT, NO_REGISTRY)
        assert session.events[-1].type == "round_failed"

    def test_surplus_valid_candidates_ignored(self):
        session = fresh_session(k=2, cycles=1, trees=1)
        formulas = [f"LiNi{0.8 - 0.01 * i:.2f}Mn0.1Co0.1Mg{0.01 * i:.2f}O2" for i in range(1, 6)]
        backend = ScriptedBackend([Exchange(response=generation_response(formulas))])
        report = run_round(session, backend, EMPTY_SNAPSHOT, NO_REGISTRY)
        assert report.complete
        assert len(report.evaluated) == 2


class TestExploration:
    def test_small_tree_arithmetic(self):
        session = fresh_session(k=2, cycles=2, trees=3)
        backend = ScriptedBackend(helpers.synthetic_transcript(k=2, cycles=2, trees=3))
        records = run_exploration(session, backend, EMPTY_SNAPSHOT, NO_REGISTRY)
        assert len(records) == 12
        assert session.state.phase == "explored"
        assert backend.remaining == 0

    def test_single_candidate_config(self):
        session = fresh_session(k=1, cycles=1, trees=1)
        backend = ScriptedBackend(helpers.synthetic_transcript(k=1, cycles=1, trees=1))
        records = run_exploration(session, backend, EMPTY_SNAPSHOT, NO_REGISTRY)
        assert len(records) == 1

    def test_reference_replay_yields_100(self):
        session = fresh_session()
        backend = ScriptedBackend(helpers.replay_transcript())
        records = run_exploration(session, backend, EMPTY_SNAPSHOT, NO_REGISTRY)
        assert len(records) == 100
        rendered = [render_formula(r.formula) for r in records]
        assert rendered == [render_formula(f) for f in helpers.reference_children()]
        # every record strictly beats its parent (the decision contract)
        for record in records:
            assert record.capacity > theoretical_capacity(record.parent)

    def test_second_cycle_prompts_use_group_exclusion(self):
        session = fresh_session(k=1, cycles=2, trees=1)
        child = "LiNi0.7Mn0.1Co0.1Si0.05O2"
        grandchild = "LiNi0.6Mn0.1Co0.1Si0.05Mg0.1O2"
        backend = ScriptedBackend([
            Exchange(response=generation_response([child])),
            Exchange(response=generation_response([grandchild])),
        ])
        run_exploration(session, backend, EMPTY_SNAPSHOT, NO_REGISTRY)
        prompts = [e.payload for e in session.events if e.type == "round_started"]
        assert prompts[0]["template_id"] == "initial_round_initial_cycle"
        assert prompts[1]["template_id"] == "initial_round_subsequent_cycle"
        # silicon came from the carbon group, so only the other two are offered
        assert "following groups: alkaline earth metals group, and transition elements" in prompts[1]["prompt"]

    def test_phase_guard(self):
        session = fresh_session(k=1, cycles=1, trees=1)
        backend = ScriptedBackend(helpers.synthetic_transcript(k=1, cycles=1, trees=1))
        run_exploration(session, backend, EMPTY_SNAPSHOT, NO_REGISTRY)
        with pytest.raises(PhaseError):
            run_round(session, backend, EMPTY_SNAPSHOT, NO_REGISTRY)


class TestDedup:
    def test_no_matches_is_identity(self):
        formulas = [parse_formula(f) for f in ("LiCoO2", "LiFePO4", "Li2MnO3")]
        unique, removed = dedup_candidates(formulas, 0.1)
        assert unique == formulas
        assert removed == []

    def test_exact_duplicate_pair(self):
        x = parse_formula("LiNi0.8Mn0.1Co0.1O2")
        unique, removed = dedup_candidates([x, x], 0.1)
        assert unique == [x]
        assert removed == [x]

    def test_first_occurrence_kept(self):
        first = parse_formula("LiNi0.8Mn0.1Co0.1O2")
        close = parse_formula("LiNi0.78Mn0.1Co0.1O2")
        unique, removed = dedup_candidates([first, close], 0.1)
        assert unique == [first]
        assert removed == [close]

    def test_reference_run_removes_the_eleven(self, reference_children, golden_removed):
        unique, removed = dedup_candidates(reference_children, 0.1)
        assert len(unique) == 89
        assert sorted(f.key for f in removed) == sorted(f.key for f in golden_removed)

    def test_idempotent(self, reference_children):
        unique, _ = dedup_candidates(reference_children, 0.1)
        again, removed = dedup_candidates(unique, 0.1)
        assert again == unique
        assert removed == []


class TestMergeSort:
    def test_already_ordered_unchanged(self):
        items = list(range(8))
        assert merge_sort_by_comparator(items, lambda a, b: a < b) == items

    def test_reverse_order_within_bound(self):
        calls = []

        def prefer(a, b):
            calls.append((a, b))
            return a < b

        result = merge_sort_by_comparator(list(range(8, 0, -1)), prefer)
        assert result == list(range(1, 9))
        assert len(calls) <= 24  # 8 * log2(8)

    def test_order_consistent_with_every_verdict(self):
        import random

        rng = random.Random(7)
        items = list(range(20))
        rng.shuffle(items)
        log = []

        def prefer(a, b):
            log.append((a, b, a < b))
            return a < b

        result = merge_sort_by_comparator(items, prefer)
        assert result == sorted(items)
        position = {v: i for i, v in enumerate(result)}
        for a, b, a_won in log:
            assert (position[a] < position[b]) == a_won


@pytest.fixture(scope="module")
def survivors(reference_children):
    unique, _ = dedup_candidates(reference_children, 0.1)
    return unique


class TestRank:
    def test_stage_a_matches_reference(self, survivors, golden_top29):
        outcome = rank_candidates(survivors, helpers.RuleBackend(helpers.top3_priority()),
                                  ComparatorCache())
        expected = {parse_formula(row["formula"]).key for row in golden_top29}
        assert {f.key for f in outcome.charge_ranked} == expected

    def test_stage_b_matches_reference(self, survivors, golden_top20):
        outcome = rank_candidates(survivors, helpers.RuleBackend(helpers.top3_priority()),
                                  ComparatorCache())
        expected = {parse_formula(row["formula"]).key for row in golden_top20}
        assert {f.key for f in outcome.complexity_filtered} == expected
        assert len(outcome.complexity_excluded) == 9

    def test_per_candidate_values_travel_with_the_outcome(self, survivors, golden_top20):
        outcome = rank_candidates(survivors, helpers.RuleBackend(helpers.top3_priority()),
                                  ComparatorCache())
        payload = outcome.to_dict()
        assert len(payload["charge_values"]) == 29
        # keys are the survivors' renderings; compare by canonical composition
        by_key = {parse_formula(name).key: value
                  for name, value in payload["complexity_values"].items()}
        for row in golden_top20:
            assert by_key[parse_formula(row["formula"]).key] == row["complexity"]

    def test_stage_c_scripted_top3(self, survivors, golden_top3):
        transcript = helpers.voltage_transcript(survivors)
        backend = ScriptedBackend(transcript)
        outcome = rank_candidates(survivors, backend, ComparatorCache())
        assert list(outcome.voltage_ordered) == golden_top3
        assert backend.remaining == 0

    def test_funnel_containment(self, survivors):
        outcome = rank_candidates(survivors, helpers.RuleBackend(helpers.top3_priority()),
                                  ComparatorCache())
        charge = {f.key for f in outcome.charge_ranked}
        complexity = {f.key for f in outcome.complexity_filtered}
        top = {f.key for f in outcome.voltage_ordered}
        assert top <= complexity <= charge <= {f.key for f in survivors}

    def test_unknown_valence_excluded_not_guessed(self):
        formulas = [parse_formula("LiCoO2"), parse_formula("LiLa0.5Co0.5O2")]
        outcome = rank_candidates(formulas, helpers.RuleBackend(helpers.top3_priority()),
                                  ComparatorCache(), config=SessionConfig(
                                      charge_top_n=2, complexity_top_n=1, voltage_top_m=1))
        assert [str(f) for f in outcome.excluded_unknown_valence] == ["LiLa0.5Co0.5O2"]
        assert [str(f) for f in outcome.charge_ranked] == ["LiCoO2"]

    def test_comparator_failure_preserves_partial_outcome(self, survivors):
        backend = ScriptedBackend([Exchange(response="junk"), Exchange(response="junk")])
        with pytest.raises(ComparatorFailure) as err:
            rank_candidates(survivors, backend, ComparatorCache())
        partial = err.value.partial
        assert len(partial.charge_ranked) == 29
        assert len(partial.complexity_filtered) == 20
        assert partial.voltage_ordered == ()


class TestSessionPhases:
    def build_completed_session(self):
        session = fresh_session()
        backend = ScriptedBackend(helpers.replay_transcript())
        run_exploration(session, backend, EMPTY_SNAPSHOT, NO_REGISTRY)
        return session

    def test_full_funnel_through_session(self, golden_top3):
        session = self.build_completed_session()
        unique, removed = run_dedup(session)
        assert (len(unique), len(removed)) == (89, 11)
        assert session.state.phase == "deduped"

        transcript = helpers.voltage_transcript(unique)
        outcome = run_rank(session, ScriptedBackend(transcript))
        assert list(outcome.voltage_ordered) == golden_top3
        assert session.state.phase == "ranked"
        assert session.state.rank["voltage_ordered"] == [str(f) for f in golden_top3]

        statuses = {r.status for r in session.state.candidates}
        assert "duplicate" in statuses and "selected" in statuses
        selected = [r for r in session.state.candidates if r.status == "selected"]
        assert {str(r.formula) for r in selected} == {str(f) for f in golden_top3}

    def test_dedup_requires_completed_exploration(self):
        session = fresh_session()
        with pytest.raises(PhaseError):
            run_dedup(session)

    def test_rank_requires_dedup(self):
        session = self.build_completed_session()
        with pytest.raises(PhaseError):
            run_rank(session, ScriptedBackend([]))
