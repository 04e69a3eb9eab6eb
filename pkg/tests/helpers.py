"""Shared builders for scripted transcripts and the reference-run fixture."""

from __future__ import annotations

import json
import pathlib
import random

from cathodescout.formulas import Formula, parse_formula, render_formula
from cathodescout.gateway import (
    ChatRequest,
    ComparatorCache,
    Exchange,
    comparison_response,
    generation_response,
)
from cathodescout.metrics import ValenceTable
from cathodescout.pipeline import SessionConfig, rank_candidates

DATA = pathlib.Path(__file__).parent / "data"
SEED_TEXT = "LiNi0.8Mn0.1Co0.1O2"


def load_json(name: str):
    with open(DATA / name, "r", encoding="utf-8") as fh:
        return json.load(fh)


def reference_blocks() -> tuple[Formula, list[tuple[Formula, list[Formula]]]]:
    """The recorded optimization run: seed plus 20 (parent, five children) blocks."""
    raw = load_json("reference_run.json")
    seed = parse_formula(raw["seed"])
    blocks = [
        (parse_formula(b["parent"]), [parse_formula(c) for c in b["children"]])
        for b in raw["blocks"]
    ]
    return seed, blocks


def reference_children() -> list[Formula]:
    _, blocks = reference_blocks()
    return [child for _, children in blocks for child in children]


def replay_transcript() -> list[Exchange]:
    """Transcript that replays the reference run: 4 trees of 1 + 5 exchanges."""
    seed, blocks = reference_blocks()
    k = 5
    exchanges: list[Exchange] = []
    for tree_start in range(0, len(blocks), k):
        tree_blocks = blocks[tree_start : tree_start + k]
        parents = [parent for parent, _ in tree_blocks]
        exchanges.append(Exchange(
            response=generation_response(parents),
            template_id="initial_round_initial_cycle",
            bindings={"material": render_formula(seed)},
        ))
        for parent, children in tree_blocks:
            exchanges.append(Exchange(
                response=generation_response(children),
                template_id="initial_round_subsequent_cycle",
                bindings={"material": render_formula(parent)},
            ))
    return exchanges


def synthetic_transcript(k: int, cycles: int, trees: int, seed_text: str = SEED_TEXT) -> list[Exchange]:
    """All-valid transcript for arbitrary (k, cycles, trees).

    Candidates swap nickel for magnesium in growing amounts, so capacity
    increases strictly with the generation counter and every decide check
    passes.
    """
    counter = 0

    def next_formula() -> str:
        nonlocal counter
        counter += 1
        return f"LiNi{0.8 - 0.01 * counter:.2f}Mn0.1Co0.1Mg{0.01 * counter:.2f}O2"

    exchanges: list[Exchange] = []

    def expand(parent: str, cycle: int) -> None:
        template = "initial_round_initial_cycle" if cycle == 1 else "initial_round_subsequent_cycle"
        children = [next_formula() for _ in range(k)]
        exchanges.append(Exchange(
            response=generation_response(children),
            template_id=template,
            bindings={"material": render_formula(parse_formula(parent))},
        ))
        if cycle < cycles:
            for child in children:
                expand(child, cycle + 1)

    for _ in range(trees):
        expand(seed_text, 1)
    return exchanges


class RuleBackend:
    """Deterministic comparison backend answering from a priority key."""

    def __init__(self, priority):
        self.priority = priority
        self.calls = 0

    def send(self, request: ChatRequest) -> str:
        self.calls += 1
        a = parse_formula(request.bindings["material_a"])
        b = parse_formula(request.bindings["material_b"])
        winner = a if self.priority(a) < self.priority(b) else b
        return comparison_response(winner)


def top3_priority():
    """Priority key putting the three reference winners first, then lexicographic."""
    top3 = [parse_formula(f) for f in load_json("voltage_top3.json")]
    ranks = {f.key: i for i, f in enumerate(top3)}

    def key(f: Formula):
        return (ranks.get(f.key, len(top3)), render_formula(f))

    return key


def voltage_transcript(unique, config: SessionConfig | None = None,
                       valences: ValenceTable | None = None) -> list[Exchange]:
    """Scripted comparator transcript consistent with the reference top-3 order.

    Built by running the funnel once against the rule backend and recording
    every non-cached comparison in call order.
    """
    outcome = rank_candidates(
        unique, RuleBackend(top3_priority()), ComparatorCache(),
        valences=valences, config=config,
    )
    return [
        Exchange(response=entry["response"], template_id="voltage_compare")
        for entry in outcome.comparison_log
        if not entry["cached"]
    ]


def random_formula(rng: random.Random, max_elements: int = 6) -> Formula:
    pool = ["Li", "Ni", "Mn", "Co", "O", "Si", "Mg", "Ca", "Al", "Ti", "Fe", "Zr",
            "B", "Sn", "Sr", "Zn", "Cu", "V", "Cr", "Na", "K", "P", "F", "S", "Ba"]
    count = rng.randint(1, max_elements)
    elements = rng.sample(pool, count)
    parts = []
    for element in elements:
        style = rng.random()
        if style < 0.3:
            parts.append(element)  # implicit 1
        elif style < 0.6:
            parts.append(f"{element}{rng.randint(1, 4)}")
        else:
            parts.append(f"{element}{round(rng.uniform(0.01, 2.5), 2)}")
    return parse_formula("".join(parts))
