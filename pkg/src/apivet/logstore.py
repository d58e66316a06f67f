"""Log ingestion, instance projection, session sequences, and windowing.

A log corpus is JSON Lines with two record kinds: API call events and
per-session environment snapshots. Events get sequential ids in file order;
those ids are the ordering tiebreaker everywhere downstream.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable

from .errors import IngestError
from .schema import EntityType
from .values import coerce_scalar, get_path

logger = logging.getLogger(__name__)


@dataclass(slots=True)
class LogEvent:
    id: int
    api: str
    arguments: dict
    response: dict
    time: int
    sessionId: str


@dataclass(slots=True)
class EnvRecord:
    sessionId: str
    fields: dict


@dataclass
class LogCorpus:
    events: list[LogEvent]
    env_records: list[EnvRecord]
    skipped: int = 0


@dataclass(slots=True)
class LabelRecord:
    log_id: int
    label: str
    trace: str | None = None


@dataclass
class InstanceTable:
    """Projected rows of one API entity: (log id, attribute path -> scalar)."""

    entity: EntityType
    rows: list[tuple[int, dict]] = field(default_factory=list)
    mismatches: int = 0


@dataclass
class Window:
    log_ids: list[int]
    label: str = "normal"
    trace: str | None = None


def _check_api_line(record: dict) -> str | None:
    if not isinstance(record.get("api"), str) or not record["api"]:
        return "api name must be a non-empty string"
    if not isinstance(record.get("arguments"), dict):
        return "arguments must be a document"
    if not isinstance(record.get("response"), dict):
        return "response must be a document"
    time = record.get("time")
    if isinstance(time, bool) or not isinstance(time, int) or time < 0:
        return "time must be a non-negative integer"
    sid = record.get("sessionId")
    if not isinstance(sid, str) or not sid:
        return "sessionId must be a non-empty string"
    return None


def ingest_logs(lines: Iterable[str], mode: str = "lenient") -> LogCorpus:
    """Parse a log stream; strict mode raises on the first malformed line."""
    if mode not in ("strict", "lenient"):
        raise ValueError(f"unknown ingest mode {mode!r}")
    events: list[LogEvent] = []
    env_records: list[EnvRecord] = []
    skipped = 0
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        problem = None
        record = None
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            problem = f"invalid JSON ({exc.msg})"
        if record is not None:
            kind = record.get("kind") if isinstance(record, dict) else None
            if kind == "api":
                problem = _check_api_line(record)
                if problem is None:
                    events.append(
                        LogEvent(
                            id=len(events),
                            api=record["api"],
                            arguments=record["arguments"],
                            response=record["response"],
                            time=record["time"],
                            sessionId=record["sessionId"],
                        )
                    )
                    continue
            elif kind == "env":
                sid = record.get("sessionId")
                fields = record.get("fields")
                if isinstance(sid, str) and sid and isinstance(fields, dict):
                    env_records.append(EnvRecord(sessionId=sid, fields=fields))
                    continue
                problem = "env record requires sessionId and fields"
            else:
                problem = f"unknown record kind {kind!r}"
        if mode == "strict":
            raise IngestError(problem or "malformed record", line_no)
        skipped += 1
        logger.debug("skipping log line %d: %s", line_no, problem)
    if skipped:
        logger.warning("skipped %d malformed log line(s)", skipped)
    return LogCorpus(events=events, env_records=env_records, skipped=skipped)


def read_log_file(path: str, mode: str = "lenient") -> LogCorpus:
    with open(path, encoding="utf-8") as fh:
        return ingest_logs(fh, mode=mode)


def env_by_session(records: Iterable[EnvRecord]) -> dict[str, EnvRecord]:
    """Latest environment record per session, by file order."""
    out: dict[str, EnvRecord] = {}
    for record in records:
        out[record.sessionId] = record
    return out


def project_instances(events: Iterable[LogEvent], entity: EntityType) -> InstanceTable:
    """Project matching events onto the entity's attributes.

    Missing leaves become null; coercion mismatches become null and bump
    the table's mismatch counter.
    """
    table = InstanceTable(entity=entity)
    specs = [
        (attr.path, attr.segments, attr.type.tag)
        for attr in entity.attributes
        if attr.path not in ("time", "sessionId")
    ]
    for event in events:
        if event.api != entity.name:
            continue
        row: dict = {}
        for path, segments, tag in specs:
            root = segments[0]
            if root == "arguments":
                found, raw = get_path(event.arguments, segments[1:])
            elif root == "response":
                found, raw = get_path(event.response, segments[1:])
            else:
                found, raw = False, None
            if not found:
                row[path] = None
                continue
            value, mismatch = coerce_scalar(raw, tag)
            row[path] = value
            if mismatch:
                table.mismatches += 1
        row["time"] = event.time
        row["sessionId"] = event.sessionId
        table.rows.append((event.id, row))
    return table


def session_sequences(events: Iterable[LogEvent]) -> dict[str, list[str]]:
    """API name sequences per session, ordered by (time, id)."""
    buckets: dict[str, list[tuple[int, int, str]]] = {}
    for event in events:
        buckets.setdefault(event.sessionId, []).append(
            (event.time, event.id, event.api)
        )
    out: dict[str, list[str]] = {}
    for sid, items in buckets.items():
        items.sort()
        out[sid] = [api for _, _, api in items]
    return out


def split_windows(events: list[LogEvent], window_size: int) -> list[Window]:
    """Chunk events into fixed-size windows in ingest order (last may be short)."""
    if window_size < 1:
        raise ValueError("window_size must be >= 1")
    ids = [event.id for event in events]
    return [
        Window(log_ids=ids[i : i + window_size])
        for i in range(0, len(ids), window_size)
    ]


def parse_labels(lines: Iterable[str], mode: str = "lenient") -> list[LabelRecord]:
    """Parse the label sidecar (one record per log id)."""
    out: list[LabelRecord] = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            if mode == "strict":
                raise IngestError(f"invalid JSON ({exc.msg})", line_no)
            continue
        log_id = record.get("log_id")
        label = record.get("label")
        if (
            isinstance(log_id, int)
            and not isinstance(log_id, bool)
            and label in ("normal", "attack")
        ):
            out.append(LabelRecord(log_id=log_id, label=label, trace=record.get("trace")))
        elif mode == "strict":
            raise IngestError("malformed label record", line_no)
    return out


def read_label_file(path: str, mode: str = "lenient") -> list[LabelRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_labels(fh, mode=mode)
