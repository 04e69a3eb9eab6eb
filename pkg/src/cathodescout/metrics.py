"""Surrogate metrics for cathode screening.

Theoretical capacity, oxidation-state total charge, preparation complexity,
the weighted composition distance, the fuzzy range match, and the validity
decision. All of them are cheap stand-ins for simulation: total charge is an
oxidation-state heuristic, not a DFT formal charge, and voltage is delegated
to the LLM comparator elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .formulas import PERIODIC_TABLE, Formula, PeriodicTable, coefficient, molecular_weight, species_count

__all__ = [
    "FARADAY_C_PER_MOL",
    "DEFAULT_VALENCES",
    "UnknownValence",
    "ValenceTable",
    "GroupWeights",
    "theoretical_capacity",
    "total_charge",
    "preparation_complexity",
    "formula_distance",
    "range_match",
    "decide",
]

# Faraday constant as used throughout the capacity figures (not CODATA).
FARADAY_C_PER_MOL = 96500.0

# Oxidation-state heuristic: Li/Mn/Co/Ni/O pinned to their values in the
# baseline layered oxide; everything else at its highest common oxidation
# state outside acid-salt chemistry. 30 entries.
DEFAULT_VALENCES: dict[str, int] = {
    "C": 4, "Si": 4, "Ge": 4, "Sn": 4, "Pb": 4,
    "Be": 2, "Mg": 2, "Ca": 2, "Sr": 2, "Ba": 2,
    "Sc": 3, "Ti": 4, "V": 3, "Cr": 3, "Mn": 3,
    "Fe": 3, "Co": 3, "Ni": 3, "Cu": 2, "Zn": 2,
    "Mo": 6, "Zr": 4, "Y": 3, "Li": 1, "O": -2,
    "Na": 1, "K": 1, "B": 3, "Al": 3, "Ga": 3,
}


class UnknownValence(ValueError):
    """An element has no valence entry; the candidate is outside the heuristic's domain.

    Callers must exclude the candidate rather than guess a value.
    """

    def __init__(self, element: str):
        self.element = element
        super().__init__(f"no valence assigned for element {element!r}")


@dataclass(frozen=True)
class ValenceTable:
    """Element -> signed valence (elementary-charge units)."""

    entries: Mapping[str, int]

    @classmethod
    def default(cls) -> "ValenceTable":
        return cls(entries=dict(DEFAULT_VALENCES))

    def extended(self, overrides: Mapping[str, int]) -> "ValenceTable":
        merged = dict(self.entries)
        merged.update(overrides)
        return ValenceTable(entries=merged)

    def valence_of(self, element: str) -> int:
        try:
            return self.entries[element]
        except KeyError:
            raise UnknownValence(element) from None


_DEFAULT_GROUPS: tuple[frozenset[str], ...] = (
    frozenset({"Li"}),
    frozenset({"Mn", "Co", "Ni"}),
    frozenset({"Fe", "Cu", "Zn", "V", "Cr", "Ti", "Mo"}),
    frozenset({"O", "P", "F", "S", "Cl", "Br", "I"}),
    frozenset({"Mg", "Al", "Si", "B", "Zr", "C", "Be", "Ca", "Na", "K", "Sn", "Sr"}),
)

_DEFAULT_WEIGHTS: tuple[float, ...] = (3.0, 7.0, 5.0, 10.0, 5.0, 1.0, 10.0)


@dataclass(frozen=True)
class GroupWeights:
    """The seven-level feature map behind the composition distance.

    Levels 1-5 sum the coefficients of fixed element sets, level 6 covers every
    element not named by levels 1-5, and level 7 is the distinct-species count.
    """

    weights: tuple[float, ...] = _DEFAULT_WEIGHTS
    groups: tuple[frozenset[str], ...] = _DEFAULT_GROUPS

    def __post_init__(self):
        if len(self.weights) != 7:
            raise ValueError("exactly seven level weights are required")
        if any(w < 0 for w in self.weights):
            raise ValueError("level weights must be nonnegative")
        if len(self.groups) != 5:
            raise ValueError("exactly five member groups are required")

    @classmethod
    def default(cls) -> "GroupWeights":
        return cls()

    def levels(self, formula: Formula) -> tuple[float, ...]:
        """Level values 1-7 for one formula (fractional sums, then species count)."""
        composition = formula.composition
        named = set().union(*self.groups)
        values = [
            sum(c for s, c in composition.items() if s in group) for group in self.groups
        ]
        values.append(sum(c for s, c in composition.items() if s not in named))
        values.append(float(species_count(formula)))
        return tuple(values)


def theoretical_capacity(formula: Formula, table: PeriodicTable = PERIODIC_TABLE) -> float:
    """Capacity in mAh/g assuming every Li participates: n*F / (3.6*M).

    Returns 0 for lithium-free compositions.
    """
    mass = molecular_weight(formula, table)
    n = coefficient(formula, "Li")
    if n == 0.0:
        return 0.0
    return n * FARADAY_C_PER_MOL / (3.6 * mass)


def total_charge(formula: Formula, valences: ValenceTable | None = None) -> float:
    """Net heuristic charge: sum of coefficient * valence over all elements.

    Raises :class:`UnknownValence` when any element lacks an entry.
    """
    vt = valences or ValenceTable.default()
    return sum(c * vt.valence_of(s) for s, c in formula.composition.items())


def preparation_complexity(formula: Formula) -> int:
    """Distinct element count, a proxy for how involved the synthesis route is."""
    return species_count(formula)


def formula_distance(a: Formula, b: Formula, weights: GroupWeights | None = None) -> float:
    """Weighted L1 distance over the seven-level feature map. Smaller is more similar."""
    gw = weights or GroupWeights.default()
    la, lb = gw.levels(a), gw.levels(b)
    return sum(w * abs(x - y) for w, x, y in zip(gw.weights, la, lb))


def range_match(a: Formula, b: Formula, tau: float) -> bool:
    """Per-element relative-difference match with threshold ``tau``.

    True iff |C_a - C_b| / max(C_a, C_b) <= tau for every element in the union
    of both compositions. An element present on one side only gives ratio 1,
    so differing supports never match.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    for element in set(a.composition) | set(b.composition):
        ca = a.composition.get(element, 0.0)
        cb = b.composition.get(element, 0.0)
        if abs(ca - cb) / max(ca, cb) > tau:
            return False
    return True


def decide(input_formula: Formula, output_formula: Formula, table: PeriodicTable = PERIODIC_TABLE) -> bool:
    """Validity test: the output must strictly exceed the input's theoretical capacity."""
    return theoretical_capacity(output_formula, table) > theoretical_capacity(input_formula, table)


def level_counts(formula: Formula, weights: GroupWeights | None = None) -> Sequence[float]:
    """Convenience accessor for the raw level values (mainly for diagnostics)."""
    return (weights or GroupWeights.default()).levels(formula)
