"""Stoichiometric chemical formulas: parsing, rendering, and composition math.

The formula grammar is deliberately flat: a sequence of element symbols, each
with an optional decimal coefficient (``LiNi0.8Mn0.1Co0.1O2``). No parentheses,
hydrates, charges, or isotopes. Coefficients are fractional site occupancies,
so everything downstream works on floats, never rounded atom counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

__all__ = [
    "ATOMIC_MASS",
    "PERIODIC_TABLE",
    "COEFFICIENT_DECIMALS",
    "FormulaError",
    "EmptyFormula",
    "UnknownElement",
    "MalformedCoefficient",
    "PeriodicTable",
    "Formula",
    "parse_formula",
    "render_formula",
    "molecular_weight",
    "coefficient",
    "species_count",
]

# Conventional atomic weights, abridged to the usual 4-5 significant figures.
# Elements without a stable isotope carry the mass number of the longest-lived
# isotope. 118 entries.
ATOMIC_MASS: dict[str, float] = {
    "H": 1.008, "He": 4.0026, "Li": 6.94, "Be": 9.0122, "B": 10.81,
    "C": 12.011, "N": 14.007, "O": 15.999, "F": 18.998, "Ne": 20.180,
    "Na": 22.990, "Mg": 24.305, "Al": 26.982, "Si": 28.085, "P": 30.974,
    "S": 32.06, "Cl": 35.45, "Ar": 39.95, "K": 39.098, "Ca": 40.078,
    "Sc": 44.956, "Ti": 47.867, "V": 50.942, "Cr": 51.996, "Mn": 54.938,
    "Fe": 55.845, "Co": 58.933, "Ni": 58.693, "Cu": 63.546, "Zn": 65.38,
    "Ga": 69.723, "Ge": 72.630, "As": 74.922, "Se": 78.971, "Br": 79.904,
    "Kr": 83.798, "Rb": 85.468, "Sr": 87.62, "Y": 88.906, "Zr": 91.224,
    "Nb": 92.906, "Mo": 95.95, "Tc": 97.0, "Ru": 101.07, "Rh": 102.91,
    "Pd": 106.42, "Ag": 107.87, "Cd": 112.41, "In": 114.82, "Sn": 118.71,
    "Sb": 121.76, "Te": 127.60, "I": 126.90, "Xe": 131.29, "Cs": 132.91,
    "Ba": 137.33, "La": 138.91, "Ce": 140.12, "Pr": 140.91, "Nd": 144.24,
    "Pm": 145.0, "Sm": 150.36, "Eu": 151.96, "Gd": 157.25, "Tb": 158.93,
    "Dy": 162.50, "Ho": 164.93, "Er": 167.26, "Tm": 168.93, "Yb": 173.05,
    "Lu": 174.97, "Hf": 178.49, "Ta": 180.95, "W": 183.84, "Re": 186.21,
    "Os": 190.23, "Ir": 192.22, "Pt": 195.08, "Au": 196.97, "Hg": 200.59,
    "Tl": 204.38, "Pb": 207.2, "Bi": 208.98, "Po": 209.0, "At": 210.0,
    "Rn": 222.0, "Fr": 223.0, "Ra": 226.0, "Ac": 227.0, "Th": 232.04,
    "Pa": 231.04, "U": 238.03, "Np": 237.0, "Pu": 244.0, "Am": 243.0,
    "Cm": 247.0, "Bk": 247.0, "Cf": 251.0, "Es": 252.0, "Fm": 257.0,
    "Md": 258.0, "No": 259.0, "Lr": 262.0, "Rf": 267.0, "Db": 268.0,
    "Sg": 269.0, "Bh": 270.0, "Hs": 269.0, "Mt": 278.0, "Ds": 281.0,
    "Rg": 282.0, "Cn": 285.0, "Nh": 286.0, "Fl": 289.0, "Mc": 290.0,
    "Lv": 293.0, "Ts": 294.0, "Og": 294.0,
}

# Coefficients are compared after rounding to this many decimals; it is the
# concrete realization of the 1e-9 equality tolerance and keeps Formula
# hashable for caches and dedup keys.
COEFFICIENT_DECIMALS = 9

_ALLOWED_CHARS = frozenset("ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789.")


class FormulaError(ValueError):
    """Base class for formula parsing and lookup failures."""


class EmptyFormula(FormulaError):
    """Raised when the input contains no terms with a positive coefficient."""


class UnknownElement(FormulaError):
    def __init__(self, symbol: str):
        self.symbol = symbol
        super().__init__(f"unknown element symbol: {symbol!r}")


class MalformedCoefficient(FormulaError):
    def __init__(self, position: int, text: str):
        self.position = position
        super().__init__(f"malformed coefficient at position {position} in {text!r}")


@dataclass(frozen=True)
class PeriodicTable:
    """Immutable element -> atomic mass (g/mol) lookup."""

    entries: Mapping[str, float]

    def __post_init__(self):
        for symbol, mass in self.entries.items():
            if mass <= 0:
                raise ValueError(f"atomic mass for {symbol} must be positive")

    def __contains__(self, symbol: str) -> bool:
        return symbol in self.entries

    def mass_of(self, symbol: str) -> float:
        try:
            return self.entries[symbol]
        except KeyError:
            raise UnknownElement(symbol) from None


PERIODIC_TABLE = PeriodicTable(entries=ATOMIC_MASS)


@dataclass(frozen=True)
class Formula:
    """An ordered sequence of (element, coefficient) terms.

    Terms preserve input order (rendering round-trips), while ``composition``
    exposes the canonical merged element -> coefficient map used for equality,
    hashing, and every metric. Zero-coefficient terms are dropped on
    construction; duplicated elements are merged in the map view and flagged
    via ``merged_duplicates``.
    """

    terms: tuple[tuple[str, float], ...]
    source_text: str = ""
    merged_duplicates: bool = field(default=False, compare=False)

    @cached_property
    def composition(self) -> dict[str, float]:
        merged: dict[str, float] = {}
        for symbol, coeff in self.terms:
            merged[symbol] = merged.get(symbol, 0.0) + coeff
        return merged

    @cached_property
    def key(self) -> tuple[tuple[str, float], ...]:
        return tuple(
            sorted((s, round(c, COEFFICIENT_DECIMALS)) for s, c in self.composition.items())
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Formula):
            return NotImplemented
        return self.key == other.key

    def __hash__(self) -> int:
        return hash(self.key)

    def __str__(self) -> str:
        return render_formula(self)

    def __repr__(self) -> str:
        return f"Formula({render_formula(self)!r})"


def _make_formula(terms: Iterable[tuple[str, float]], source_text: str) -> Formula:
    kept = tuple((s, c) for s, c in terms if c != 0.0)
    if not kept:
        raise EmptyFormula(f"no positive-coefficient terms in {source_text!r}")
    seen = set()
    duplicates = False
    for symbol, _ in kept:
        if symbol in seen:
            duplicates = True
            break
        seen.add(symbol)
    return Formula(terms=kept, source_text=source_text, merged_duplicates=duplicates)


def parse_formula(text: str, table: PeriodicTable = PERIODIC_TABLE) -> Formula:
    """Parse ``text`` into a :class:`Formula`.

    Element recognition is maximal-munch: an uppercase letter followed by a
    lowercase letter is always read as a two-letter symbol, so ``Sn`` is tin
    and never sulfur+nitrogen. A missing coefficient means 1.

    Raises :class:`EmptyFormula`, :class:`UnknownElement`, or
    :class:`MalformedCoefficient`.
    """
    stripped = text.strip()
    if not stripped:
        raise EmptyFormula("empty formula text")
    for ch in stripped:
        if ch not in _ALLOWED_CHARS:
            raise UnknownElement(ch)

    terms: list[tuple[str, float]] = []
    i = 0
    n = len(stripped)
    while i < n:
        ch = stripped[i]
        if ch.isdigit() or ch == ".":
            raise MalformedCoefficient(i, stripped)
        if not ch.isupper():
            # a lowercase letter cannot start an element symbol
            j = i
            while j < n and stripped[j].islower():
                j += 1
            raise UnknownElement(stripped[i:j])
        if i + 1 < n and stripped[i + 1].islower():
            symbol = stripped[i : i + 2]
            i += 2
        else:
            symbol = ch
            i += 1
        if symbol not in table:
            raise UnknownElement(symbol)
        start = i
        while i < n and (stripped[i].isdigit() or stripped[i] == "."):
            i += 1
        digits = stripped[start:i]
        if not digits:
            coeff = 1.0
        else:
            if digits.count(".") > 1 or digits.startswith(".") or digits.endswith("."):
                raise MalformedCoefficient(start, stripped)
            coeff = float(digits)
        terms.append((symbol, coeff))
    return _make_formula(terms, stripped)


def _format_coefficient(value: float) -> str:
    if value == int(value):
        return str(int(value))
    return repr(value)


def render_formula(formula: Formula) -> str:
    """Render in stored term order; coefficient 1 is omitted, trailing zeros trimmed."""
    parts = []
    for symbol, coeff in formula.terms:
        if coeff == 1.0:
            parts.append(symbol)
        else:
            parts.append(symbol + _format_coefficient(coeff))
    return "".join(parts)


def molecular_weight(formula: Formula, table: PeriodicTable = PERIODIC_TABLE) -> float:
    """Sum of coefficient * atomic mass over the composition, in g/mol."""
    return sum(c * table.mass_of(s) for s, c in formula.composition.items())


def coefficient(formula: Formula, symbol: str) -> float:
    """Stored coefficient of ``symbol``, or 0 when absent."""
    return formula.composition.get(symbol, 0.0)


def species_count(formula: Formula) -> int:
    """Number of distinct elements with a positive coefficient."""
    return len(formula.composition)
