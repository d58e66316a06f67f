"""Relationship inference: propose by name affinity, keep what the data supports.

Candidates come from a proposer; each survives only if the observed traffic
backs it up. Table links need value overlap, call-to-call links need the
sequence model to rate the ordering as plausible, and environment links need
the session join to actually resolve.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .errors import InferenceError
from .logstore import InstanceTable, LogCorpus
from .schema import API, ENV, TABLE, SchemaBundle
from .seqmodel import pair_score
from .values import value_key

logger = logging.getLogger(__name__)

API_DB = "API_DB"
API_API = "API_API"
API_ENV = "API_ENV"

REL_KINDS = (API_DB, API_API, API_ENV)


@dataclass(frozen=True)
class Relationship:
    kind: str
    focal_entity: str
    focal_attr: str | None
    target_entity: str
    target_attr: str | None
    delta_ms: int | None = None
    score: float | None = None
    provenance: str = "proposed"

    def __post_init__(self):
        if self.kind not in REL_KINDS:
            raise ValueError(f"unknown relationship kind: {self.kind!r}")


@dataclass
class InferenceReport:
    relationships: list[Relationship]
    proposed: int = 0
    rejected: list[tuple[Relationship, str]] = field(default_factory=list)


def candidate_pairs(bundle: SchemaBundle):
    """Every (focal API, target) pair worth asking the proposer about."""
    apis = bundle.of_kind(API)
    targets = bundle.of_kind(TABLE) + bundle.of_kind(API) + bundle.of_kind(ENV)
    for focal in apis:
        for target in targets:
            if target.kind == API and target.name == focal.name:
                continue
            yield focal, target


# --- filters -----------------------------------------------------------------


def value_overlap(
    focal_table: InstanceTable,
    focal_attr: str,
    universe: set,
    min_overlap: float,
) -> tuple[bool, float]:
    """Fraction of non-null focal values present in the target universe."""
    total = 0
    hits = 0
    keyed = {value_key(v) for v in universe if v is not None}
    for _, row in focal_table.rows:
        value = row.get(focal_attr)
        if value is None:
            continue
        total += 1
        if value_key(value) in keyed:
            hits += 1
    if total == 0:
        return False, 0.0
    ratio = hits / total
    return ratio >= min_overlap, ratio


def sequence_plausibility(
    model, target_api: str, focal_api: str, min_score: float
) -> tuple[bool, float]:
    """The target call must plausibly precede the focal call."""
    score = pair_score(model, target_api, focal_api)
    return score >= min_score, score


def env_coverage(
    focal_table: InstanceTable, env_by_session: dict, min_coverage: float
) -> tuple[bool, float]:
    """Fraction of focal calls whose session resolves to an environment record."""
    total = 0
    hits = 0
    for _, row in focal_table.rows:
        total += 1
        if row.get("sessionId") in env_by_session:
            hits += 1
    if total == 0:
        return False, 0.0
    ratio = hits / total
    return ratio >= min_coverage, ratio


# --- inference ---------------------------------------------------------------


def infer_relationships(
    bundle: SchemaBundle,
    corpus: LogCorpus,
    proposer,
    seq_model,
    value_universes: dict[str, dict[str, set]],
    min_overlap: float = 0.9,
    min_sequence_score: float = 0.05,
    min_env_coverage: float = 0.99,
    delta_ms: int = 60000,
    mode: str = "lenient",
) -> InferenceReport:
    """Propose relationships for every candidate pair and filter each.

    value_universes maps table name to {column: set of values ever seen}.
    """
    bundle.require_inference_ready()
    from .logstore import env_by_session, project_instances

    env_map = env_by_session(corpus.env_records)
    instance_cache: dict[str, InstanceTable] = {}

    def instances(name: str) -> InstanceTable:
        if name not in instance_cache:
            instance_cache[name] = project_instances(
                corpus.events, bundle.entity(name)
            )
        return instance_cache[name]

    report = InferenceReport(relationships=[])
    seen: set[tuple] = set()

    def reject(rel: Relationship, reason: str) -> None:
        if mode == "strict":
            raise InferenceError(
                f"{rel.kind} {rel.focal_entity}.{rel.focal_attr} -> "
                f"{rel.target_entity}.{rel.target_attr}: {reason}"
            )
        logger.info("rejected %s: %s", rel, reason)
        report.rejected.append((rel, reason))

    for focal, target in candidate_pairs(bundle):
        candidates = proposer.propose_relationships(focal, target)
        report.proposed += len(candidates)
        for cand in candidates:
            if not focal.has_attribute(cand.from_attr):
                rel = Relationship(
                    kind=_kind_for(target.kind),
                    focal_entity=focal.name,
                    focal_attr=cand.from_attr,
                    target_entity=target.name,
                    target_attr=cand.to_attr,
                )
                reject(rel, f"focal attribute {cand.from_attr!r} does not exist")
                continue
            if target.kind == TABLE:
                rel = _filter_table(
                    focal, target, cand, instances, value_universes,
                    min_overlap, reject,
                )
            elif target.kind == API:
                rel = _filter_api(
                    focal, target, cand, seq_model, min_sequence_score,
                    delta_ms, reject,
                )
            else:
                rel = _filter_env(
                    focal, target, cand, instances, env_map,
                    min_env_coverage, reject,
                )
            if rel is not None:
                key = (
                    rel.kind, rel.focal_entity, rel.focal_attr,
                    rel.target_entity, rel.target_attr,
                )
                if key not in seen:
                    seen.add(key)
                    report.relationships.append(rel)

    report.relationships.sort(
        key=lambda r: (
            r.focal_entity,
            REL_KINDS.index(r.kind),
            r.target_entity,
            r.focal_attr or "",
            r.target_attr or "",
        )
    )
    return report


def _kind_for(target_kind: str) -> str:
    return {TABLE: API_DB, API: API_API, ENV: API_ENV}[target_kind]


def _filter_table(
    focal, target, cand, instances, value_universes, min_overlap, reject
):
    rel = Relationship(
        kind=API_DB,
        focal_entity=focal.name,
        focal_attr=cand.from_attr,
        target_entity=target.name,
        target_attr=cand.to_attr,
    )
    if cand.to_attr is None or not target.has_attribute(cand.to_attr):
        reject(rel, f"target column {cand.to_attr!r} does not exist")
        return None
    universe = value_universes.get(target.name, {}).get(cand.to_attr, set())
    ok, ratio = value_overlap(
        instances(focal.name), cand.from_attr, universe, min_overlap
    )
    if not ok:
        reject(rel, f"value overlap {ratio:.3f} below threshold")
        return None
    return Relationship(
        kind=API_DB,
        focal_entity=focal.name,
        focal_attr=cand.from_attr,
        target_entity=target.name,
        target_attr=cand.to_attr,
        score=ratio,
        provenance="value_overlap",
    )


def _filter_api(
    focal, target, cand, seq_model, min_score, delta_ms, reject
):
    rel = Relationship(
        kind=API_API,
        focal_entity=focal.name,
        focal_attr=cand.from_attr,
        target_entity=target.name,
        target_attr=cand.to_attr,
        delta_ms=delta_ms,
    )
    if cand.to_attr is not None and not target.has_attribute(cand.to_attr):
        reject(rel, f"target attribute {cand.to_attr!r} does not exist")
        return None
    ok, score = sequence_plausibility(seq_model, target.name, focal.name, min_score)
    if not ok:
        reject(rel, f"sequence score {score:.4f} below threshold")
        return None
    return Relationship(
        kind=API_API,
        focal_entity=focal.name,
        focal_attr=cand.from_attr,
        target_entity=target.name,
        target_attr=cand.to_attr,
        delta_ms=delta_ms,
        score=score,
        provenance="sequence_model",
    )


def _filter_env(
    focal, target, cand, instances, env_map, min_coverage, reject
):
    rel = Relationship(
        kind=API_ENV,
        focal_entity=focal.name,
        focal_attr=cand.from_attr,
        target_entity=target.name,
        target_attr=cand.to_attr,
    )
    if cand.to_attr is not None and not target.has_attribute(cand.to_attr):
        reject(rel, f"environment attribute {cand.to_attr!r} does not exist")
        return None
    ok, ratio = env_coverage(instances(focal.name), env_map, min_coverage)
    if not ok:
        reject(rel, f"environment coverage {ratio:.3f} below threshold")
        return None
    return Relationship(
        kind=API_ENV,
        focal_entity=focal.name,
        focal_attr=cand.from_attr,
        target_entity=target.name,
        target_attr=cand.to_attr,
        score=ratio,
        provenance="env_coverage",
    )


# --- serialization -----------------------------------------------------------


def relationship_to_dict(rel: Relationship) -> dict:
    out = {
        "kind": rel.kind,
        "focal_entity": rel.focal_entity,
        "focal_attr": rel.focal_attr,
        "target_entity": rel.target_entity,
        "target_attr": rel.target_attr,
        "provenance": rel.provenance,
    }
    if rel.delta_ms is not None:
        out["delta_ms"] = rel.delta_ms
    if rel.score is not None:
        out["score"] = rel.score
    return out


def relationship_from_dict(data: dict) -> Relationship:
    return Relationship(
        kind=data["kind"],
        focal_entity=data["focal_entity"],
        focal_attr=data.get("focal_attr"),
        target_entity=data["target_entity"],
        target_attr=data.get("target_attr"),
        delta_ms=data.get("delta_ms"),
        score=data.get("score"),
        provenance=data.get("provenance", "proposed"),
    )


def diagram_to_dict(bundle: SchemaBundle, relationships: list[Relationship]) -> dict:
    return {
        "entities": [entity.name for entity in bundle.entities],
        "relationships": [relationship_to_dict(rel) for rel in relationships],
    }


def save_relationships(relationships: list[Relationship], path) -> None:
    from .fileio import write_json

    write_json([relationship_to_dict(rel) for rel in relationships], path)


def load_relationships(path) -> list[Relationship]:
    import json

    with open(path, "r", encoding="utf-8") as handle:
        data = json.load(handle)
    return [relationship_from_dict(item) for item in data]
