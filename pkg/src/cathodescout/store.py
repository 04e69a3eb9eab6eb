"""Known-compound storage: the local snapshot file and the external registry.

The snapshot is a user-supplied CSV of lithium compounds (one ``formula,id``
per line) standing in for a licensed crystal-structure database export; the
registry client answers exact-existence queries and is mockable for offline
runs. Both back the existence checks during exploration and the retrieval of
similar-but-valid compounds used as prompt feedback.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Iterable, Protocol

from .formulas import Formula, FormulaError, molecular_weight, parse_formula, render_formula
from .metrics import GroupWeights, formula_distance, range_match, theoretical_capacity

log = logging.getLogger(__name__)

__all__ = [
    "CompoundRecord",
    "Snapshot",
    "SnapshotLoadReport",
    "FileUnreadable",
    "AllRecordsMalformed",
    "RegistryUnavailable",
    "RegistryClient",
    "MockRegistryClient",
    "LiveRegistryClient",
    "load_snapshot",
    "exists_exact",
    "exists_range",
    "retrieve_similar",
]


class FileUnreadable(OSError):
    """The snapshot file does not exist or cannot be read as UTF-8."""


class AllRecordsMalformed(ValueError):
    """Every line of the snapshot failed to parse (or the file was empty)."""


class RegistryUnavailable(ConnectionError):
    """The live registry could not be reached after bounded retries."""


@dataclass(frozen=True)
class CompoundRecord:
    formula: Formula
    source_id: str
    capacity: float  # theoretical capacity cached at load time


@dataclass(frozen=True)
class SnapshotLoadReport:
    total_lines: int
    loaded: int
    malformed: tuple[tuple[int, str, str], ...]  # (line number, line, error)


@dataclass(frozen=True)
class Snapshot:
    """Immutable, ordered collection of known compounds."""

    records: tuple[CompoundRecord, ...]
    origin: str = "<memory>"
    loaded_at: float = 0.0
    report: SnapshotLoadReport | None = None

    def __len__(self) -> int:
        return len(self.records)

    @classmethod
    def from_formulas(cls, formulas: Iterable[Formula | str], origin: str = "<memory>") -> "Snapshot":
        records = []
        for i, item in enumerate(formulas):
            f = parse_formula(item) if isinstance(item, str) else item
            records.append(CompoundRecord(formula=f, source_id=f"mem-{i:04d}", capacity=theoretical_capacity(f)))
        return cls(records=tuple(records), origin=origin, loaded_at=time.time())


def _is_header(line: str) -> bool:
    first = line.split(",", 1)[0].strip().lower()
    return first in {"formula", "composition"}


def load_snapshot(path: str) -> Snapshot:
    """Load a ``formula,source_id`` CSV snapshot.

    Malformed lines are collected into the load report rather than aborting;
    only a file with zero usable records raises :class:`AllRecordsMalformed`.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise FileUnreadable(f"cannot read snapshot {path!r}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise FileUnreadable(f"snapshot {path!r} is not UTF-8: {exc}") from exc

    records: list[CompoundRecord] = []
    malformed: list[tuple[int, str, str]] = []
    seen: set[tuple] = set()
    total = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if lineno == 1 and _is_header(line):
            continue
        total += 1
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != 2 or not fields[0] or not fields[1]:
            malformed.append((lineno, raw, "expected exactly two fields: formula,source_id"))
            continue
        try:
            formula = parse_formula(fields[0])
        except FormulaError as exc:
            malformed.append((lineno, raw, str(exc)))
            continue
        dedup_key = (formula.key, fields[1])
        if dedup_key in seen:
            malformed.append((lineno, raw, "duplicate formula/source_id pair"))
            continue
        seen.add(dedup_key)
        records.append(
            CompoundRecord(formula=formula, source_id=fields[1], capacity=theoretical_capacity(formula))
        )

    if not records:
        raise AllRecordsMalformed(f"no usable records in snapshot {path!r}")
    if malformed:
        log.warning("snapshot %s: %d of %d lines malformed", path, len(malformed), total)
    return Snapshot(
        records=tuple(records),
        origin=path,
        loaded_at=time.time(),
        report=SnapshotLoadReport(total_lines=total, loaded=len(records), malformed=tuple(malformed)),
    )


class RegistryClient(Protocol):
    def lookup(self, formula: Formula) -> bool:
        """True iff a canonically equal compound is already registered."""
        ...


@dataclass(frozen=True)
class MockRegistryClient:
    """Fixed-membership registry used in tests and offline runs. Never fails."""

    known: frozenset = frozenset()

    @classmethod
    def of(cls, formulas: Iterable[Formula | str]) -> "MockRegistryClient":
        keys = frozenset(
            (parse_formula(f) if isinstance(f, str) else f).key for f in formulas
        )
        return cls(known=keys)

    def lookup(self, formula: Formula) -> bool:
        return formula.key in self.known


class LiveRegistryClient:
    """HTTP adapter for a real registry; requests are serialized and retried.

    The API key is read from the named environment variable on each call and
    never stored in configuration files.
    """

    def __init__(self, base_url: str, api_key_env: str = "REGISTRY_API_KEY", retries: int = 2, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.retries = retries
        self.timeout = timeout
        self._lock = threading.Lock()

    def lookup(self, formula: Formula) -> bool:
        import requests

        headers = {}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["X-API-KEY"] = key
        last_error: Exception | None = None
        with self._lock:
            for _ in range(self.retries + 1):
                try:
                    resp = requests.get(
                        f"{self.base_url}/formula/{render_formula(formula)}",
                        headers=headers,
                        timeout=self.timeout,
                    )
                    if resp.status_code == 404:
                        return False
                    resp.raise_for_status()
                    body = resp.json()
                    return bool(body.get("exists", bool(body.get("data"))))
                except Exception as exc:  # noqa: BLE001 - retried, then surfaced
                    last_error = exc
        raise RegistryUnavailable(f"registry lookup failed: {last_error}")


def exists_exact(formula: Formula, client: RegistryClient) -> bool:
    """Canonical-equality existence check against the external registry."""
    return client.lookup(formula)


def exists_range(formula: Formula, snapshot: Snapshot, tau: float) -> CompoundRecord | None:
    """First snapshot record (in snapshot order) that range-matches, else None."""
    for record in snapshot.records:
        if range_match(formula, record.formula, tau):
            return record
    return None


def retrieve_similar(
    invalid: Formula,
    input_formula: Formula,
    snapshot: Snapshot,
    weights: GroupWeights | None = None,
) -> CompoundRecord | None:
    """Closest known compound to ``invalid`` that still beats ``input_formula``.

    Candidates are filtered by the capacity decision against the input, then
    the distance to the invalid composition is minimized. Ties break by lower
    molecular weight, then lexicographic rendering, so the result does not
    depend on snapshot order.
    """
    input_capacity = theoretical_capacity(input_formula)
    best: CompoundRecord | None = None
    best_key: tuple | None = None
    for record in snapshot.records:
        if not record.capacity > input_capacity:
            continue
        key = (
            formula_distance(invalid, record.formula, weights),
            molecular_weight(record.formula),
            render_formula(record.formula),
        )
        if best_key is None or key < best_key:
            best, best_key = record, key
    return best
