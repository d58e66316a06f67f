"""Benchmark generator: a seeded ticket-shop workload with known attacks.

Sessions follow one flow: login, create an order, pay it, query it, and
half the time refund it. Every table change lands in the row-change log,
the user row strictly before its login. Attack injectors append tampered
or replayed calls with per-trace labels; generation is byte-identical for
a given seed.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace

from .errors import ConfigError
from .fileio import write_text
from .schema import (
    SchemaBundle,
    flatten_api_signature,
    load_env_descriptor,
    merge_bundle,
    parse_create_table,
)

DEFAULT_BASE_TIME = 1_700_000_000_000

MIN_STEP_MS = 10
MAX_STEP_MS = 1000

_DDL = """
CREATE TABLE users (
  id VARCHAR(32) PRIMARY KEY,
  name VARCHAR(64)
);

CREATE TABLE orders (
  id VARCHAR(32) PRIMARY KEY,
  userId VARCHAR(32),
  status ENUM('unpaid', 'paid', 'cancelled'),
  price DECIMAL(10, 2)
);
"""

_SIGNATURES = {
    "login": ({"loginId": "string"}, {"userId": "string", "userName": "string"}),
    "createOrder": (
        {"loginId": "string", "price": "float"},
        {"orderId": "string", "status": "string"},
    ),
    "payOrder": ({"orderId": "string", "loginId": "string"}, {"status": "string"}),
    "queryOrder": ({"loginId": "string"}, {"orderId": "string", "status": "string"}),
    "refundOrder": (
        {"orderId": "string", "loginId": "string"},
        {"status": "string", "refundAmount": "float"},
    ),
}

_ENV_DESCRIPTOR = {
    "sessionId": "string",
    "userId": "string",
    "userName": "string",
    "userRoles": "document",
}

TAMPER_KINDS = (
    "negative_price",
    "malformed_id",
    "enum_injection",
    "dangling_reference",
)


def scenario_bundle() -> SchemaBundle:
    entities = list(parse_create_table(_DDL))
    for name, (args, resp) in _SIGNATURES.items():
        entities.append(flatten_api_signature(name, args, resp))
    entities.append(load_env_descriptor(_ENV_DESCRIPTOR))
    return merge_bundle(entities)


@dataclass
class SessionInfo:
    index: int
    session_id: str
    user_id: str
    user_name: str
    order_id: str
    price: float
    refunded: bool


@dataclass
class Bench:
    api_events: list[dict] = field(default_factory=list)
    env_events: list[dict] = field(default_factory=list)
    row_events: list[dict] = field(default_factory=list)
    sessions: list[SessionInfo] = field(default_factory=list)
    next_seq: int = 0

    def clone(self) -> "Bench":
        return Bench(
            api_events=[dict(e) for e in self.api_events],
            env_events=[dict(e) for e in self.env_events],
            row_events=[dict(e) for e in self.row_events],
            sessions=[replace(s) for s in self.sessions],
            next_seq=self.next_seq,
        )

    def max_time(self) -> int:
        times = [e["time"] for e in self.api_events]
        times += [e["time"] for e in self.env_events]
        times += [e["ts"] for e in self.row_events]
        return max(times) if times else 0


def _api(bench, api, args, resp, t, sid, label="normal", trace=None) -> dict:
    event = {
        "seq": bench.next_seq,
        "api": api,
        "arguments": args,
        "response": resp,
        "time": t,
        "sessionId": sid,
        "label": label,
        "trace": trace,
    }
    bench.next_seq += 1
    bench.api_events.append(event)
    return event


def _env(bench, t, sid, fields) -> None:
    bench.env_events.append(
        {"seq": bench.next_seq, "time": t, "sessionId": sid, "fields": fields}
    )
    bench.next_seq += 1


def _row(bench, table, op, ts, before, after) -> None:
    bench.row_events.append(
        {
            "seq": bench.next_seq,
            "table": table,
            "op": op,
            "ts": ts,
            "before": before,
            "after": after,
        }
    )
    bench.next_seq += 1


def generate_normal(
    n_sessions: int,
    seed: int,
    base_time: int = DEFAULT_BASE_TIME,
    first_index: int = 0,
    session_gap_ms: int = 400,
) -> Bench:
    """Seeded normal workload; sessions overlap on the shared timeline."""
    rng = random.Random(seed)
    bench = Bench()
    for k in range(first_index, first_index + n_sessions):
        info = _one_session(bench, rng, k, base_time, session_gap_ms, first_index)
        bench.sessions.append(info)
    return bench


def _one_session(
    bench, rng, k, base_time, session_gap_ms, first_index
) -> SessionInfo:
    step = lambda: rng.randint(MIN_STEP_MS, MAX_STEP_MS)
    sid = f"s{k:05d}"
    uid = f"u{k:05d}"
    uname = f"user {k}"
    oid = f"o{k:05d}"
    price = round(rng.uniform(5.0, 500.0), 2)
    start = base_time + (k - first_index) * session_gap_ms + rng.randint(0, 200)

    _row(bench, "users", "insert", start - step(), None, {"id": uid, "name": uname})
    _env(
        bench,
        start - 1,
        sid,
        {"sessionId": sid, "userId": uid, "userName": uname, "userRoles": ["customer"]},
    )

    t = start
    _api(bench, "login", {"loginId": uid}, {"userId": uid, "userName": uname}, t, sid)

    t += step()
    _api(
        bench,
        "createOrder",
        {"loginId": uid, "price": price},
        {"orderId": oid, "status": "unpaid"},
        t,
        sid,
    )
    row = {"id": oid, "userId": uid, "status": "unpaid", "price": price}
    _row(bench, "orders", "insert", t, None, dict(row))

    t += step()
    _api(
        bench,
        "payOrder",
        {"orderId": oid, "loginId": uid},
        {"status": "paid"},
        t,
        sid,
    )
    paid = dict(row, status="paid")
    _row(bench, "orders", "update", t, dict(row), dict(paid))

    t += step()
    _api(
        bench,
        "queryOrder",
        {"loginId": uid},
        {"orderId": oid, "status": "paid"},
        t,
        sid,
    )

    refunded = rng.random() < 0.5
    if refunded:
        t += step()
        _api(
            bench,
            "refundOrder",
            {"orderId": oid, "loginId": uid},
            {"status": "cancelled", "refundAmount": price},
            t,
            sid,
        )
        cancelled = dict(paid, status="cancelled")
        _row(bench, "orders", "update", t, dict(paid), dict(cancelled))

    return SessionInfo(
        index=k,
        session_id=sid,
        user_id=uid,
        user_name=uname,
        order_id=oid,
        price=price,
        refunded=refunded,
    )


# --- attack injectors --------------------------------------------------------


def _session_event(bench, session_id, api_name) -> dict:
    for event in bench.api_events:
        if (
            event["sessionId"] == session_id
            and event["api"] == api_name
            and event["label"] == "normal"
        ):
            return event
    raise ConfigError(f"session {session_id!r} has no {api_name!r} call")


def inject_double_refund(bench: Bench, n_traces: int, seed: int) -> Bench:
    """Replay each chosen session's refund a moment later, with no row change."""
    rng = random.Random(seed)
    out = bench.clone()
    pool = [s for s in out.sessions if s.refunded]
    if len(pool) < n_traces:
        raise ConfigError(f"need {n_traces} refunded sessions, have {len(pool)}")
    for i, victim in enumerate(rng.sample(pool, n_traces)):
        original = _session_event(out, victim.session_id, "refundOrder")
        _api(
            out,
            "refundOrder",
            dict(original["arguments"]),
            dict(original["response"]),
            original["time"] + rng.randint(MIN_STEP_MS, MAX_STEP_MS),
            victim.session_id,
            label="attack",
            trace=f"double_refund_{i}",
        )
    return out


def inject_cross_user(bench: Bench, n_traces: int, seed: int) -> Bench:
    """Refund another user's paid order from a fresh attacker session."""
    rng = random.Random(seed)
    out = bench.clone()
    pool = [s for s in out.sessions if not s.refunded]
    if len(pool) < n_traces:
        raise ConfigError(f"need {n_traces} unrefunded sessions, have {len(pool)}")
    victims = rng.sample(pool, n_traces)
    t = out.max_time()
    for i, victim in enumerate(victims):
        t += rng.randint(MIN_STEP_MS, MAX_STEP_MS) + 1000
        attacker_sid = f"satk{i:04d}"
        attacker_uid = f"atk{i:04d}"
        _row(
            out,
            "users",
            "insert",
            t - 500,
            None,
            {"id": attacker_uid, "name": f"attacker {i}"},
        )
        _env(
            out,
            t - 1,
            attacker_sid,
            {
                "sessionId": attacker_sid,
                "userId": attacker_uid,
                "userName": f"attacker {i}",
                "userRoles": ["customer"],
            },
        )
        _api(
            out,
            "refundOrder",
            {"orderId": victim.order_id, "loginId": victim.user_id},
            {"status": "cancelled", "refundAmount": victim.price},
            t,
            attacker_sid,
            label="attack",
            trace=f"cross_user_{i}",
        )
        paid = {
            "id": victim.order_id,
            "userId": victim.user_id,
            "status": "paid",
            "price": victim.price,
        }
        _row(out, "orders", "update", t, paid, dict(paid, status="cancelled"))
    return out


def inject_field_tamper(
    bench: Bench, kinds=TAMPER_KINDS, per_kind: int = 1, seed: int = 0
) -> Bench:
    """Duplicate a call 1ms later with one field tampered; no row changes."""
    rng = random.Random(seed)
    out = bench.clone()
    for kind in kinds:
        if kind not in TAMPER_KINDS:
            raise ConfigError(f"unknown tamper kind {kind!r}")
    needed = per_kind * len(kinds)
    if len(out.sessions) < needed:
        raise ConfigError(f"need {needed} sessions, have {len(out.sessions)}")
    chosen = rng.sample(out.sessions, needed)
    slot = 0
    for kind in kinds:
        for j in range(per_kind):
            session = chosen[slot]
            slot += 1
            trace = f"{kind}_{j}"
            if kind == "negative_price":
                original = _session_event(out, session.session_id, "createOrder")
                args = dict(original["arguments"])
                args["price"] = -abs(args["price"])
                resp = dict(original["response"])
            elif kind == "malformed_id":
                original = _session_event(out, session.session_id, "payOrder")
                args = dict(original["arguments"])
                args["orderId"] = args["orderId"] + " "
                resp = dict(original["response"])
            elif kind == "enum_injection":
                original = _session_event(out, session.session_id, "queryOrder")
                args = dict(original["arguments"])
                resp = dict(original["response"])
                resp["status"] = "refunded"
            else:  # dangling_reference
                original = _session_event(out, session.session_id, "payOrder")
                args = dict(original["arguments"])
                args["orderId"] = f"ghost_{j}"
                resp = dict(original["response"])
            _api(
                out,
                original["api"],
                args,
                resp,
                original["time"] + 1,
                session.session_id,
                label="attack",
                trace=trace,
            )
    return out


# --- serialization -----------------------------------------------------------


def corpus_lines(bench: Bench) -> tuple[list[str], list[str]]:
    """Log lines merged by time, plus labels aligned to api line order."""
    stream = [("env", e) for e in bench.env_events]
    stream += [("api", e) for e in bench.api_events]
    stream.sort(key=lambda item: (item[1]["time"], item[1]["seq"]))
    log_lines = []
    label_lines = []
    log_id = 0
    for kind, event in stream:
        if kind == "env":
            log_lines.append(
                json.dumps(
                    {
                        "kind": "env",
                        "sessionId": event["sessionId"],
                        "fields": event["fields"],
                    }
                )
            )
            continue
        log_lines.append(
            json.dumps(
                {
                    "kind": "api",
                    "api": event["api"],
                    "arguments": event["arguments"],
                    "response": event["response"],
                    "time": event["time"],
                    "sessionId": event["sessionId"],
                }
            )
        )
        label = {"log_id": log_id, "label": event["label"]}
        if event["trace"]:
            label["trace"] = event["trace"]
        label_lines.append(json.dumps(label))
        log_id += 1
    return log_lines, label_lines


def binlog_lines(bench: Bench) -> list[str]:
    ordered = sorted(bench.row_events, key=lambda e: (e["ts"], e["seq"]))
    return [
        json.dumps(
            {
                "table": e["table"],
                "op": e["op"],
                "ts": e["ts"],
                "before": e["before"],
                "after": e["after"],
            }
        )
        for e in ordered
    ]


def write_bench(bench: Bench, out_dir: str) -> dict:
    import os

    os.makedirs(out_dir, exist_ok=True)
    log_lines, label_lines = corpus_lines(bench)
    row_lines = binlog_lines(bench)
    paths = {
        "logs": os.path.join(out_dir, "logs.jsonl"),
        "labels": os.path.join(out_dir, "labels.jsonl"),
        "binlog": os.path.join(out_dir, "binlog.jsonl"),
        "bundle": os.path.join(out_dir, "bundle.json"),
    }
    write_text("\n".join(log_lines) + "\n", paths["logs"])
    write_text("\n".join(label_lines) + "\n", paths["labels"])
    write_text("\n".join(row_lines) + "\n", paths["binlog"])
    from .schema import save_bundle

    save_bundle(scenario_bundle(), paths["bundle"])
    return paths
