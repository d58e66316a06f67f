"""Temporal replay of row-change events into per-key version chains.

Every table row is kept as a chain of (timestamp, ordinal, image) versions,
where a None image is a tombstone. Point-in-time state uses strictly-before
semantics: an event at exactly t is not visible at t, so a call's own
database effect never leaks into its own evaluation.
"""

from __future__ import annotations

import json
import logging
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Any, Iterable

from .errors import IngestError, ReplayError, StoreLookupError
from .schema import TABLE, EntityType, SchemaBundle

logger = logging.getLogger(__name__)

OPS = ("insert", "update", "delete")


@dataclass(slots=True)
class RowEvent:
    table: str
    op: str
    ts: int
    before: dict | None
    after: dict | None
    ordinal: int = 0


def parse_row_events(lines: Iterable[str], mode: str = "lenient") -> list[RowEvent]:
    """Parse binary-log JSON Lines into RowEvents (ordinal = file position)."""
    if mode not in ("strict", "lenient"):
        raise ValueError(f"unknown ingest mode {mode!r}")
    events: list[RowEvent] = []
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
        if isinstance(record, dict):
            problem = _check_row_event(record)
            if problem is None:
                events.append(
                    RowEvent(
                        table=record["table"],
                        op=record["op"],
                        ts=record["ts"],
                        before=record.get("before"),
                        after=record.get("after"),
                        ordinal=len(events),
                    )
                )
                continue
        elif problem is None:
            problem = "row event must be a document"
        if mode == "strict":
            raise IngestError(problem, line_no)
        skipped += 1
    if skipped:
        logger.warning("skipped %d malformed binlog line(s)", skipped)
    return events


def _check_row_event(record: dict) -> str | None:
    if not isinstance(record.get("table"), str) or not record["table"]:
        return "table must be a non-empty string"
    op = record.get("op")
    if op not in OPS:
        return f"unknown op {op!r}"
    ts = record.get("ts")
    if isinstance(ts, bool) or not isinstance(ts, int) or ts < 0:
        return "ts must be a non-negative integer"
    before = record.get("before")
    after = record.get("after")
    if op == "insert" and not (isinstance(after, dict) and before is None):
        return "insert carries only an after image"
    if op == "delete" and not (isinstance(before, dict) and after is None):
        return "delete carries only a before image"
    if op == "update" and not (isinstance(before, dict) and isinstance(after, dict)):
        return "update carries both images"
    return None


def read_binlog_file(path: str, mode: str = "lenient") -> list[RowEvent]:
    with open(path, encoding="utf-8") as fh:
        return parse_row_events(fh, mode=mode)


# Version = (ts, ordinal, row image or None for a tombstone)
Version = tuple[int, int, "dict | None"]


@dataclass
class TemporalTable:
    entity: EntityType
    chains: dict[tuple, list[Version]] = field(default_factory=dict)
    _ts_index: dict[tuple, list[int]] = field(
        init=False, repr=False, compare=False, default_factory=dict
    )

    def append(self, key: tuple, ts: int, ordinal: int, row: dict | None) -> None:
        chain = self.chains.setdefault(key, [])
        if chain and (ts, ordinal) <= (chain[-1][0], chain[-1][1]):
            raise ReplayError(
                f"out-of-order version for key {key!r} in {self.entity.name!r}"
            )
        chain.append((ts, ordinal, row))
        self._ts_index.setdefault(key, []).append(ts)

    def is_live(self, key: tuple) -> bool:
        chain = self.chains.get(key)
        return bool(chain) and chain[-1][2] is not None

    def version_before(self, key: tuple, t: int) -> dict | None:
        """Latest row image with ts strictly before t, or None."""
        ts_list = self._ts_index.get(key)
        if not ts_list:
            return None
        idx = bisect_left(ts_list, t)
        if idx == 0:
            return None
        return self.chains[key][idx - 1][2]


def _key_of(entity: EntityType, image: dict, ts: int) -> tuple:
    key = []
    for col in entity.primary_key or ():
        if col not in image:
            raise ReplayError(
                f"row image for {entity.name!r} at ts {ts} lacks key column {col!r}"
            )
        key.append(image[col])
    return tuple(key)


def ingest_binlog(
    events: Iterable[RowEvent],
    bundle: SchemaBundle,
    mode: str = "lenient",
) -> dict[str, TemporalTable]:
    """Build one TemporalTable per table from a row-event stream.

    Strict mode raises on inconsistent streams; lenient mode repairs them:
    insert-on-live overwrites, update-on-absent inserts, delete-on-absent
    and out-of-order events are skipped, all with a warning.
    """
    if mode not in ("strict", "lenient"):
        raise ValueError(f"unknown replay mode {mode!r}")
    tables: dict[str, TemporalTable] = {}
    for entity in bundle.of_kind(TABLE):
        tables[entity.name] = TemporalTable(entity=entity)
    repairs = 0

    def complain(message: str) -> None:
        nonlocal repairs
        if mode == "strict":
            raise ReplayError(message)
        repairs += 1
        logger.debug(message)

    for event in events:
        table = tables.get(event.table)
        if table is None:
            complain(f"row event for unknown table {event.table!r}")
            continue
        entity = table.entity
        if not entity.primary_key:
            complain(f"table {event.table!r} has no primary key")
            continue
        try:
            if event.op == "insert":
                key = _key_of(entity, event.after or {}, event.ts)
                if table.is_live(key):
                    complain(
                        f"insert on live key {key!r} in {event.table!r} at ts {event.ts}"
                    )
                table.append(key, event.ts, event.ordinal, dict(event.after or {}))
            elif event.op == "update":
                old_key = _key_of(entity, event.before or {}, event.ts)
                new_key = _key_of(entity, event.after or {}, event.ts)
                if old_key != new_key:
                    complain(
                        f"update changes key {old_key!r} -> {new_key!r} in {event.table!r}"
                    )
                    if table.is_live(old_key):
                        table.append(old_key, event.ts, event.ordinal, None)
                elif not table.is_live(old_key):
                    complain(
                        f"update on absent key {old_key!r} in {event.table!r} "
                        f"at ts {event.ts}"
                    )
                table.append(new_key, event.ts, event.ordinal, dict(event.after or {}))
            else:
                key = _key_of(entity, event.before or {}, event.ts)
                if not table.is_live(key):
                    complain(
                        f"delete on absent key {key!r} in {event.table!r} "
                        f"at ts {event.ts}"
                    )
                    continue
                table.append(key, event.ts, event.ordinal, None)
        except ReplayError:
            if mode == "strict":
                raise
            repairs += 1
    if repairs:
        logger.warning("repaired or skipped %d inconsistent row event(s)", repairs)
    return tables


def state_as_of(tables: dict[str, TemporalTable], table: str, t: int) -> list[dict]:
    """All rows live strictly before t, in first-insertion order."""
    store = tables.get(table)
    if store is None:
        raise StoreLookupError(f"unknown table {table!r}")
    rows = []
    for key in store.chains:
        row = store.version_before(key, t)
        if row is not None:
            rows.append(row)
    return rows


def value_universe(
    tables: dict[str, TemporalTable], table: str, column: str
) -> set[Any]:
    """Every non-null value the column ever held, across all versions."""
    store = tables.get(table)
    if store is None:
        raise StoreLookupError(f"unknown table {table!r}")
    if not store.entity.has_attribute(column):
        raise StoreLookupError(f"unknown column {column!r} on {table!r}")
    values: set[Any] = set()
    for chain in store.chains.values():
        for _, _, row in chain:
            if row is not None:
                value = row.get(column)
                if value is not None:
                    values.add(value)
    return values


def oracle_replay(
    events: Iterable[RowEvent],
    entity: EntityType,
    t: int,
    mode: str = "lenient",
) -> list[dict]:
    """Reference replay: naively apply matching events with ts < t in order.

    Kept deliberately simple so it can serve as an independent check of
    chain-based state_as_of; both must agree on every valid stream.
    """
    if not entity.primary_key:
        raise ReplayError(f"table {entity.name!r} has no primary key")
    state: dict[tuple, dict] = {}
    last_seen: dict[tuple, tuple[int, int]] = {}
    for event in events:
        if event.table != entity.name or event.ts >= t:
            continue
        if event.op == "insert":
            key = _key_of(entity, event.after or {}, event.ts)
        elif event.op == "update":
            key = _key_of(entity, event.before or {}, event.ts)
            new_key = _key_of(entity, event.after or {}, event.ts)
        else:
            key = _key_of(entity, event.before or {}, event.ts)
        stamp = (event.ts, event.ordinal)
        if key in last_seen and stamp <= last_seen[key]:
            if mode == "strict":
                raise ReplayError(f"out-of-order version for key {key!r}")
            continue
        if event.op == "insert":
            if key in state and mode == "strict":
                raise ReplayError(f"insert on live key {key!r}")
            state[key] = dict(event.after or {})
            last_seen[key] = stamp
        elif event.op == "update":
            if key != new_key:
                if mode == "strict":
                    raise ReplayError(f"update changes key {key!r}")
                state.pop(key, None)
                last_seen[key] = stamp
                state[new_key] = dict(event.after or {})
                last_seen[new_key] = stamp
                continue
            if key not in state and mode == "strict":
                raise ReplayError(f"update on absent key {key!r}")
            state[key] = dict(event.after or {})
            last_seen[key] = stamp
        else:
            if key not in state:
                if mode == "strict":
                    raise ReplayError(f"delete on absent key {key!r}")
                continue
            del state[key]
            last_seen[key] = stamp
    return list(state.values())
