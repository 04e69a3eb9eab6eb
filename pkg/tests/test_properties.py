"""Randomized property suites over the metric and parsing layers.

Seeded RNG keeps every run identical; the sample counts follow the
verification plan (1,000 formulas or pairs per suite).
"""

from __future__ import annotations

import math
import random

import pytest

from helpers import random_formula
from cathodescout.formulas import parse_formula, render_formula
from cathodescout.metrics import (
    decide,
    formula_distance,
    range_match,
    theoretical_capacity,
    total_charge,
)
from cathodescout.pipeline import dedup_candidates, merge_sort_by_comparator


def test_parser_round_trip_1000():
    rng = random.Random(101)
    for _ in range(1000):
        f = random_formula(rng)
        again = parse_formula(render_formula(f))
        assert again == f
        assert parse_formula(render_formula(again)) == again


def test_distance_pseudometric_1000():
    rng = random.Random(202)
    for _ in range(1000):
        a, b, c = (random_formula(rng) for _ in range(3))
        assert formula_distance(a, a) == 0.0
        assert formula_distance(a, b) >= 0.0
        assert formula_distance(a, b) == pytest.approx(formula_distance(b, a), abs=1e-9)
        assert formula_distance(a, c) <= (
            formula_distance(a, b) + formula_distance(b, c) + 1e-9
        )


def test_range_match_reflexive_symmetric_monotone_1000():
    rng = random.Random(303)
    for _ in range(1000):
        a, b = random_formula(rng), random_formula(rng)
        tau_low = rng.uniform(0.01, 0.5)
        tau_high = rng.uniform(tau_low, 0.99)
        assert range_match(a, a, tau_low)
        assert range_match(a, b, tau_low) == range_match(b, a, tau_low)
        if range_match(a, b, tau_low):
            assert range_match(a, b, tau_high)


def test_capacity_scale_invariance_and_decide_antisymmetry():
    rng = random.Random(404)
    for _ in range(500):
        f = random_formula(rng)
        scale = rng.uniform(0.5, 3.0)
        scaled = parse_formula("".join(
            f"{s}{c * scale!r}" for s, c in f.composition.items()
        ))
        assert theoretical_capacity(scaled) == pytest.approx(
            theoretical_capacity(f), rel=1e-9
        )
        g = random_formula(rng)
        assert not (decide(f, g) and decide(g, f))


def test_total_charge_additive_under_term_sum():
    rng = random.Random(505)
    pool = ["Li", "Ni", "Mn", "Co", "O", "Si", "Mg", "Ca", "Al", "Ti"]
    for _ in range(500):
        counts_a = {e: round(rng.uniform(0.1, 2), 3) for e in rng.sample(pool, 3)}
        counts_b = {e: round(rng.uniform(0.1, 2), 3) for e in rng.sample(pool, 3)}
        union = dict(counts_a)
        for e, c in counts_b.items():
            union[e] = round(union.get(e, 0) + c, 6)
        make = lambda cc: parse_formula("".join(f"{e}{c}" for e, c in cc.items()))
        assert total_charge(make(union)) == pytest.approx(
            total_charge(make(counts_a)) + total_charge(make(counts_b)), abs=1e-6
        )


def test_dedup_idempotent_and_survivors_pairwise_distinct():
    rng = random.Random(606)
    for _ in range(50):
        base = [random_formula(rng) for _ in range(rng.randint(2, 15))]
        # sprinkle near-duplicates to make removal likely
        candidates = []
        for f in base:
            candidates.append(f)
            if rng.random() < 0.4:
                candidates.append(f)
        rng.shuffle(candidates)
        unique, removed = dedup_candidates(candidates, 0.1)
        assert len(unique) + len(removed) == len(candidates)
        again, removed_again = dedup_candidates(unique, 0.1)
        assert again == unique
        assert removed_again == []
        for i in range(len(unique)):
            for j in range(i + 1, len(unique)):
                assert not range_match(unique[i], unique[j], 0.1)


@pytest.mark.parametrize("n", list(range(2, 33)))
def test_merge_sort_call_bound(n):
    rng = random.Random(1000 + n)
    items = list(range(n))
    rng.shuffle(items)
    calls = 0

    def prefer(a, b):
        nonlocal calls
        calls += 1
        return a < b

    assert merge_sort_by_comparator(items, prefer) == sorted(items)
    assert calls <= n * math.ceil(math.log2(n))
