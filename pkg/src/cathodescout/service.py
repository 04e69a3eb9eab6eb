"""Operator-facing HTTP/JSON service with file-backed session persistence.

Single process, desk-scale: every session appends to its own JSON-lines event
log before acknowledging (write-ahead), and a full state snapshot is written
atomically after each mutating call. On startup every log in the data
directory replays back into a live session; a torn trailing line is dropped
with a warning.

Endpoints (all responses carry ``api_version``):

    GET  /healthz
    POST /sessions                      {seed, config?, backend?}
    GET  /sessions
    GET  /sessions/{id}
    POST /sessions/{id}/rounds          advance one round
    POST /sessions/{id}/explore         run phase 1 to completion
    POST /sessions/{id}/dedup
    POST /sessions/{id}/rank
    GET  /sessions/{id}/candidates
    POST /sessions/{id}/candidates/{idx}/flag   {flag}
    PUT  /sessions/{id}/prompt-override {template_id, body}
    GET  /sessions/{id}/events?after=n&wait=seconds
"""

from __future__ import annotations

import glob
import json
import logging
import os
import re
import threading
import time
import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .config import ConfigInvalid, EngineConfig
from .events import EventLogWriter, UnrecoverableLog, read_event_log
from .formulas import FormulaError, parse_formula
from .gateway import (
    TEMPLATE_IDS,
    ComparatorCache,
    ComparatorFailure,
    LLMBackend,
    NoCandidatesFound,
    ScriptedBackend,
    template_body,
)
from .pipeline import (
    PhaseError,
    PipelineError,
    Session,
    SessionConfig,
    run_dedup,
    run_exploration,
    run_rank,
    run_round,
    start_session,
)

log = logging.getLogger(__name__)

API_VERSION = "1"
_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")


class BindFailure(OSError):
    """The listen address is unavailable."""


@dataclass
class ManagedSession:
    id: str
    session: Session
    backend: LLMBackend
    cache: ComparatorCache = field(default_factory=ComparatorCache)
    lock: threading.Lock = field(default_factory=threading.Lock)
    writer: EventLogWriter | None = None


class SessionService:
    """Owns every live session; one writer lock per session serializes commands."""

    def __init__(self, config: EngineConfig):
        self.config = config
        os.makedirs(config.data_dir, exist_ok=True)
        self.snapshot = config.build_snapshot()
        self.registry = config.build_registry()
        self.valences = config.valence_table()
        self.sessions: dict[str, ManagedSession] = {}
        self.recover()

    # -- persistence ---------------------------------------------------------

    def _log_path(self, session_id: str) -> str:
        return os.path.join(self.config.data_dir, f"{session_id}.events.jsonl")

    def _state_path(self, session_id: str) -> str:
        return os.path.join(self.config.data_dir, f"{session_id}.state.json")

    def _write_state_snapshot(self, managed: ManagedSession) -> None:
        path = self._state_path(managed.id)
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(managed.session.state.to_dict(), fh, sort_keys=True)
        os.replace(tmp, path)

    def recover(self) -> list[str]:
        """Replay every session log in the data directory into a live session.

        Raises :class:`UnrecoverableLog` on corruption other than a torn tail.
        """
        recovered = []
        for path in sorted(glob.glob(os.path.join(self.config.data_dir, "*.events.jsonl"))):
            session_id = os.path.basename(path)[: -len(".events.jsonl")]
            events, torn = read_event_log(path, truncate_torn_tail=True)
            if torn:
                log.warning("session %s: dropped torn trailing event", session_id)
            writer = EventLogWriter(path)
            session = Session.from_events(events, sink=writer.append, clock=self.config.clock_fn())
            backend = self._build_backend(None)
            consumed = sum(1 for e in events if e.type == "response_received")
            if isinstance(backend, ScriptedBackend):
                backend.skip(consumed)
            self.sessions[session_id] = ManagedSession(
                id=session_id, session=session, backend=backend, writer=writer
            )
            recovered.append(session_id)
        return recovered

    def _build_backend(self, override: dict | None) -> LLMBackend:
        try:
            return self.config.build_backend(override)
        except ConfigInvalid:
            # sessions without any configured backend can still be inspected
            return ScriptedBackend([])

    # -- session commands ------------------------------------------------------

    def create_session(self, seed_text: str, config_overrides: dict | None = None,
                       backend_override: dict | None = None) -> ManagedSession:
        seed = parse_formula(seed_text)
        merged = dict(self.config.session_defaults.to_dict())
        merged.update(config_overrides or {})
        session_config = SessionConfig.from_dict(merged)
        session_id = uuid.uuid4().hex[:12]
        writer = EventLogWriter(self._log_path(session_id))
        session = start_session(session_config, seed, sink=writer.append,
                                clock=self.config.clock_fn())
        managed = ManagedSession(
            id=session_id, session=session,
            backend=self._build_backend(backend_override), writer=writer,
        )
        self.sessions[session_id] = managed
        self._write_state_snapshot(managed)
        return managed

    def get(self, session_id: str) -> ManagedSession:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise KeyError(session_id) from None

    def advance_round(self, session_id: str) -> dict:
        managed = self.get(session_id)
        with managed.lock:
            report = run_round(managed.session, managed.backend, self.snapshot, self.registry)
            self._write_state_snapshot(managed)
        return {
            "tree": report.tree, "cycle": report.cycle, "round": report.round,
            "template_id": report.template_id, "complete": report.complete,
            "valid_total": report.valid_total,
            "evaluated": [r.to_dict() for r in report.evaluated],
        }

    def explore(self, session_id: str) -> dict:
        managed = self.get(session_id)
        with managed.lock:
            records = run_exploration(managed.session, managed.backend, self.snapshot, self.registry)
            self._write_state_snapshot(managed)
        return {"candidates": [r.to_dict() for r in records]}

    def dedup(self, session_id: str) -> dict:
        managed = self.get(session_id)
        with managed.lock:
            unique, removed = run_dedup(managed.session)
            self._write_state_snapshot(managed)
        return {"unique": [str(f) for f in unique], "removed": [str(f) for f in removed]}

    def rank(self, session_id: str) -> dict:
        managed = self.get(session_id)
        with managed.lock:
            try:
                outcome = run_rank(managed.session, managed.backend,
                                   cache=managed.cache, valences=self.valences)
            finally:
                self._write_state_snapshot(managed)
        return {"rank": outcome.to_dict()}

    def flag_candidate(self, session_id: str, index: int, flag: str | None) -> dict:
        managed = self.get(session_id)
        with managed.lock:
            if not 0 <= index < len(managed.session.state.candidates):
                raise IndexError(index)
            managed.session.record("candidate_flagged", {"index": index, "flag": flag})
            self._write_state_snapshot(managed)
        return {"index": index, "flag": flag}

    def set_prompt_override(self, session_id: str, template_id: str, body: str) -> dict:
        """Store an operator-edited template body for the next round.

        Validated only for placeholder completeness: every placeholder in the
        body must be one the stock template can bind. Content is never judged.
        """
        if template_id not in TEMPLATE_IDS:
            raise ValueError(f"unknown template: {template_id}")
        allowed = set(_PLACEHOLDER.findall(template_body(template_id)))
        used = set(_PLACEHOLDER.findall(body))
        unknown = used - allowed
        if unknown:
            raise ValueError(f"unknown placeholders for {template_id}: {sorted(unknown)}")
        managed = self.get(session_id)
        with managed.lock:
            override_id = managed.session.state.override_count + 1
            managed.session.record("prompt_override_set", {
                "override_id": override_id, "template_id": template_id, "body": body,
            })
            self._write_state_snapshot(managed)
        return {"override_id": override_id, "template_id": template_id}

    def events_after(self, session_id: str, after: int, wait: float = 0.0) -> list[dict]:
        managed = self.get(session_id)
        deadline = time.monotonic() + min(wait, 30.0)
        while True:
            events = managed.session.events
            if len(events) > after or time.monotonic() >= deadline:
                return [
                    {"seq": e.seq, "ts": e.ts, "type": e.type, "payload": e.payload}
                    for e in events[after:]
                ]
            time.sleep(0.05)

    def session_payload(self, session_id: str) -> dict:
        managed = self.get(session_id)
        state = managed.session.state
        return {
            "id": managed.id,
            "phase": state.phase,
            "funnel": state.funnel_counts(),
            "event_count": len(managed.session.events),
            "state": state.to_dict(),
        }


# ---------------------------------------------------------------------------
# HTTP layer
# ---------------------------------------------------------------------------

class CreateSessionBody(BaseModel):
    seed: str
    config: dict | None = None
    backend: dict | None = None


class FlagBody(BaseModel):
    flag: str | None = None


class OverrideBody(BaseModel):
    template_id: str
    body: str


def _versioned(payload: dict) -> dict:
    return {"api_version": API_VERSION, **payload}


def create_app(config: EngineConfig) -> FastAPI:
    service = SessionService(config)
    app = FastAPI(title="cathodescout", version=API_VERSION)
    app.state.service = service

    def _get(session_id: str) -> None:
        if session_id not in service.sessions:
            raise HTTPException(status_code=404, detail=f"no session {session_id}")

    @app.get("/healthz")
    def healthz():
        return _versioned({"status": "ok", "sessions": len(service.sessions)})

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        try:
            managed = service.create_session(body.seed, body.config, body.backend)
        except (FormulaError, PipelineError, ConfigInvalid, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return _versioned(service.session_payload(managed.id))

    @app.get("/sessions")
    def list_sessions():
        items = [
            {
                "id": managed.id,
                "phase": managed.session.state.phase,
                "funnel": managed.session.state.funnel_counts(),
                "event_count": len(managed.session.events),
            }
            for managed in service.sessions.values()
        ]
        return _versioned({"sessions": sorted(items, key=lambda s: s["id"])})

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        _get(session_id)
        return _versioned(service.session_payload(session_id))

    @app.post("/sessions/{session_id}/rounds")
    def advance_round(session_id: str):
        _get(session_id)
        try:
            report = service.advance_round(session_id)
        except (PhaseError, NoCandidatesFound, PipelineError) as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return _versioned(report)

    @app.post("/sessions/{session_id}/explore")
    def explore(session_id: str):
        _get(session_id)
        try:
            result = service.explore(session_id)
        except (PhaseError, NoCandidatesFound, PipelineError) as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return _versioned(result)

    @app.post("/sessions/{session_id}/dedup")
    def dedup(session_id: str):
        _get(session_id)
        try:
            result = service.dedup(session_id)
        except PhaseError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return _versioned(result)

    @app.post("/sessions/{session_id}/rank")
    def rank(session_id: str):
        _get(session_id)
        try:
            result = service.rank(session_id)
        except PhaseError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except ComparatorFailure as exc:
            a, b = exc.pair
            raise HTTPException(status_code=409, detail={
                "error": "comparator_failure", "pair": [str(a), str(b)],
            })
        return _versioned(result)

    @app.get("/sessions/{session_id}/candidates")
    def candidates(session_id: str):
        _get(session_id)
        managed = service.get(session_id)
        state = managed.session.state
        rows = []
        for index, record in enumerate(state.candidates):
            row = record.to_dict()
            row["index"] = index
            row["flag"] = state.flags.get(index)
            rows.append(row)
        return _versioned({"candidates": rows})

    @app.post("/sessions/{session_id}/candidates/{index}/flag")
    def flag_candidate(session_id: str, index: int, body: FlagBody):
        _get(session_id)
        try:
            result = service.flag_candidate(session_id, index, body.flag)
        except IndexError:
            raise HTTPException(status_code=404, detail=f"no candidate {index}")
        return _versioned(result)

    @app.put("/sessions/{session_id}/prompt-override")
    def prompt_override(session_id: str, body: OverrideBody):
        _get(session_id)
        try:
            result = service.set_prompt_override(session_id, body.template_id, body.body)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return _versioned(result)

    @app.get("/sessions/{session_id}/events")
    def events(session_id: str, after: int = 0, wait: float = 0.0):
        _get(session_id)
        items = service.events_after(session_id, after, wait)
        cursor = items[-1]["seq"] if items else after
        return _versioned({"events": items, "cursor": cursor})

    return app


def serve(config: EngineConfig) -> None:
    """Run the service until interrupted. Raises :class:`BindFailure` if the port is taken."""
    import socket

    import uvicorn

    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((config.host, config.port))
    except OSError as exc:
        raise BindFailure(f"cannot bind {config.host}:{config.port}: {exc}") from exc
    finally:
        probe.close()

    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
