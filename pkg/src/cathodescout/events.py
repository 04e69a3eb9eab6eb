"""Append-only session event log: records and JSON-lines file handling.

One event per line, serialized with sorted keys so that identical runs produce
bytewise-identical logs. Reading tolerates a torn final line (a crash during
append): the tail is dropped with a warning and optionally truncated on disk.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from typing import Iterable

log = logging.getLogger(__name__)

__all__ = ["Event", "UnrecoverableLog", "EventLogWriter", "read_event_log"]


class UnrecoverableLog(ValueError):
    """A session log is corrupt beyond the torn-tail case."""


@dataclass(frozen=True)
class Event:
    seq: int
    ts: float
    type: str
    payload: dict

    def to_line(self) -> str:
        return json.dumps(
            {"seq": self.seq, "ts": self.ts, "type": self.type, "payload": self.payload},
            sort_keys=True,
        )

    @classmethod
    def from_line(cls, line: str) -> "Event":
        obj = json.loads(line)
        return cls(seq=obj["seq"], ts=obj["ts"], type=obj["type"], payload=obj["payload"])


class EventLogWriter:
    """Flushes each appended event before acknowledging (write-ahead discipline)."""

    def __init__(self, path: str):
        self.path = path
        self._fh = open(path, "a", encoding="utf-8")

    def append(self, event: Event) -> None:
        self._fh.write(event.to_line() + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()


def read_event_log(path: str, truncate_torn_tail: bool = True) -> tuple[list[Event], bool]:
    """Read all events from a log file.

    A malformed final line is treated as a torn write: it is dropped (and the
    file truncated back to the last good newline when ``truncate_torn_tail``)
    and the second return value is True. A malformed line anywhere else raises
    :class:`UnrecoverableLog`.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    text = raw.decode("utf-8", errors="replace")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()

    events: list[Event] = []
    torn = False
    good_bytes = 0
    for i, line in enumerate(lines):
        try:
            event = Event.from_line(line)
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            if i == len(lines) - 1:
                torn = True
                log.warning("dropping torn final line of %s: %s", path, exc)
                break
            raise UnrecoverableLog(f"{path}: malformed event at line {i + 1}: {exc}") from exc
        if event.seq != len(events) + 1:
            raise UnrecoverableLog(
                f"{path}: event sequence gap at line {i + 1} (seq {event.seq})"
            )
        events.append(event)
        good_bytes += len((line + "\n").encode("utf-8"))

    if torn and truncate_torn_tail:
        with open(path, "rb+") as fh:
            fh.truncate(good_bytes)
    return events, torn


def write_event_log(path: str, events: Iterable[Event]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(event.to_line() + "\n")
