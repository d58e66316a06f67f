"""Relationship inference: proposals filtered by data-driven evidence."""

import pytest

from apivet.errors import InferenceError
from apivet.logstore import env_by_session, ingest_logs, project_instances
from apivet.proposer import RelationshipCandidate, StubProposer
from apivet.relations import (
    API_API,
    API_DB,
    API_ENV,
    Relationship,
    candidate_pairs,
    diagram_to_dict,
    env_coverage,
    infer_relationships,
    load_relationships,
    relationship_from_dict,
    relationship_to_dict,
    save_relationships,
    sequence_plausibility,
    value_overlap,
)
from apivet.schema import (
    flatten_api_signature,
    load_env_descriptor,
    merge_bundle,
    parse_create_table,
)
from apivet.seqmodel import train_markov

from conftest import api_line, env_line
from oracles import value_overlap_oracle


def small_bundle():
    login = flatten_api_signature(
        "login", {"loginId": "string"}, {"userId": "string"}
    )
    pay = flatten_api_signature(
        "payOrder", {"orderId": "string", "loginId": "string"}, {"status": "string"}
    )
    tables = parse_create_table(
        "CREATE TABLE orders (id VARCHAR(64) PRIMARY KEY, userId VARCHAR(64), "
        "status ENUM('unpaid','paid','cancelled'));"
    )
    env = load_env_descriptor({"sessionId": "string", "userId": "string"})
    return merge_bundle([login, pay] + tables + [env])


def small_corpus(n=6, with_env=True):
    lines = []
    t = 1000
    for i in range(n):
        sid = f"s{i}"
        if with_env:
            lines.append(env_line(sid, {"sessionId": sid, "userId": f"u{i}"}))
        lines.append(api_line("login", t, sid, {"loginId": f"u{i}"}, {"userId": f"u{i}"}))
        lines.append(
            api_line(
                "payOrder",
                t + 50,
                sid,
                {"orderId": f"o{i}", "loginId": f"u{i}"},
                {"status": "paid"},
            )
        )
        t += 1000
    return ingest_logs(lines)


def universes(n=6):
    return {
        "orders": {
            "id": {f"o{i}" for i in range(n)},
            "userId": {f"u{i}" for i in range(n)},
            "status": {"unpaid", "paid"},
        }
    }


class TestCandidatePairs:
    def test_every_api_meets_every_target_once(self):
        bundle = small_bundle()
        pairs = [(f.name, t.name) for f, t in candidate_pairs(bundle)]
        assert ("login", "orders") in pairs
        assert ("login", "payOrder") in pairs
        assert ("payOrder", "login") in pairs
        assert ("login", "Env") in pairs
        assert ("login", "login") not in pairs  # no self pairs


class TestFilters:
    def test_value_overlap_against_oracle(self):
        bundle = small_bundle()
        corpus = small_corpus()
        table = project_instances(corpus.events, bundle.entity("payOrder"))
        universe = universes()["orders"]["id"]
        ok, ratio = value_overlap(table, "arguments.orderId", universe, 0.9)
        expected = value_overlap_oracle(
            [row.get("arguments.orderId") for _, row in table.rows], universe
        )
        assert ok and ratio == expected == 1.0

        # shrink the universe below the threshold
        ok, ratio = value_overlap(table, "arguments.orderId", {"o0"}, 0.9)
        assert not ok
        assert ratio == pytest.approx(1 / 6)

    def test_value_overlap_ignores_null_focal_values(self):
        bundle = small_bundle()
        corpus = ingest_logs(
            [api_line("payOrder", 1, "s0", {"loginId": "u0"}, {"status": "paid"})]
        )
        table = project_instances(corpus.events, bundle.entity("payOrder"))
        ok, ratio = value_overlap(table, "arguments.orderId", {"o0"}, 0.9)
        assert not ok and ratio == 0.0  # no evidence means no pass

    def test_sequence_plausibility_uses_pair_score(self):
        # payOrder always moves on to queryOrder, so its smoothed mass
        # for login is 0.1 / (5 + 0.1 * 4) and falls under the threshold.
        model = train_markov([["login", "payOrder", "queryOrder"]] * 5, alpha=0.1)
        ok, score = sequence_plausibility(model, "login", "payOrder", 0.05)
        assert ok and score == pytest.approx(5.1 / 5.4)
        ok, score = sequence_plausibility(model, "payOrder", "login", 0.05)
        assert not ok and score == pytest.approx(0.1 / 5.4)

    def test_env_coverage_counts_resolvable_sessions(self):
        bundle = small_bundle()
        corpus = small_corpus(n=4, with_env=True)
        table = project_instances(corpus.events, bundle.entity("login"))
        env_map = env_by_session(corpus.env_records)
        ok, ratio = env_coverage(table, env_map, 0.99)
        assert ok and ratio == 1.0
        # drop one session's env record: 3/4 coverage fails at 0.99
        env_map.pop("s0")
        ok, ratio = env_coverage(table, env_map, 0.99)
        assert not ok and ratio == pytest.approx(0.75)


class TestInference:
    def test_end_to_end_acceptance_and_rejection(self):
        bundle = small_bundle()
        corpus = small_corpus()
        model = train_markov([["login", "payOrder"]] * 5, alpha=0.1)
        report = infer_relationships(
            bundle, corpus, StubProposer(), model, universes()
        )
        keys = {
            (r.kind, r.focal_entity, r.focal_attr, r.target_entity, r.target_attr)
            for r in report.relationships
        }
        assert (API_DB, "payOrder", "arguments.orderId", "orders", "id") in keys
        assert (API_API, "payOrder", "arguments.loginId", "login", "response.userId") in keys
        assert (API_ENV, "payOrder", "arguments.loginId", "Env", "userId") in keys
        assert (API_ENV, "login", "arguments.loginId", "Env", "userId") in keys
        # a clean corpus with matching universes rejects nothing
        assert report.rejected == []
        assert report.proposed == len(report.relationships)
        # deterministic presentation order
        assert report.relationships == sorted(
            report.relationships,
            key=lambda r: (
                r.focal_entity,
                [API_DB, API_API, API_ENV].index(r.kind),
                r.target_entity,
                r.focal_attr or "",
                r.target_attr or "",
            ),
        )

    def test_api_api_carries_the_window(self):
        bundle = small_bundle()
        corpus = small_corpus()
        model = train_markov([["login", "payOrder"]] * 5, alpha=0.1)
        report = infer_relationships(
            bundle, corpus, StubProposer(), model, universes(), delta_ms=1234
        )
        api_rels = [r for r in report.relationships if r.kind == API_API]
        assert api_rels and all(r.delta_ms == 1234 for r in api_rels)

    def test_low_overlap_is_rejected_with_ratio(self):
        bundle = small_bundle()
        corpus = small_corpus()
        model = train_markov([["login", "payOrder"]] * 5, alpha=0.1)
        poor = universes()
        poor["orders"]["id"] = {"o0"}  # only one sixth of the orderIds resolve
        report = infer_relationships(
            bundle, corpus, StubProposer(), model, poor
        )
        keys = {
            (r.kind, r.focal_entity, r.focal_attr) for r in report.relationships
        }
        assert (API_DB, "payOrder", "arguments.orderId") not in keys
        assert any("value overlap 0.167 below threshold" == reason
                   for _, reason in report.rejected)

    def test_reverse_api_direction_is_rejected(self):
        bundle = small_bundle()
        corpus = small_corpus()
        model = train_markov([["login", "payOrder", "queryOrder"]] * 5, alpha=0.1)

        class Backwards:
            def propose_relationships(self, focal, target):
                if focal.name == "login" and target.name == "payOrder":
                    return [RelationshipCandidate("arguments.loginId", None)]
                return []

        report = infer_relationships(bundle, corpus, Backwards(), model, universes())
        assert report.relationships == []
        assert len(report.rejected) == 1
        _, reason = report.rejected[0]
        assert "sequence score" in reason and "below threshold" in reason

    def test_strict_mode_raises_on_rejection(self):
        bundle = small_bundle()
        corpus = small_corpus()
        model = train_markov([["login", "payOrder"]] * 5, alpha=0.1)
        poor = universes()
        poor["orders"]["id"] = {"o0"}
        with pytest.raises(InferenceError):
            infer_relationships(
                bundle, corpus, StubProposer(), model, poor, mode="strict"
            )

    def test_bogus_candidate_attributes_are_rejected(self):
        bundle = small_bundle()
        corpus = small_corpus()
        model = train_markov([["login", "payOrder"]] * 5, alpha=0.1)

        class Liar:
            def propose_relationships(self, focal, target):
                if target.kind == "TABLE" and focal.name == "payOrder":
                    return [
                        RelationshipCandidate("arguments.ghost", "id"),
                        RelationshipCandidate("arguments.orderId", "ghost"),
                    ]
                return []

        report = infer_relationships(bundle, corpus, Liar(), model, universes())
        assert report.relationships == []
        reasons = {reason for _, reason in report.rejected}
        assert any("does not exist" in r for r in reasons)
        assert len(report.rejected) == 2


class TestSerialization:
    def test_dict_roundtrip(self):
        rel = Relationship(
            kind=API_DB,
            focal_entity="payOrder",
            focal_attr="arguments.orderId",
            target_entity="orders",
            target_attr="id",
            score=0.98,
            provenance="value_overlap",
        )
        assert relationship_from_dict(relationship_to_dict(rel)) == rel

    def test_file_roundtrip(self, tmp_path):
        rels = [
            Relationship(API_DB, "payOrder", "arguments.orderId", "orders", "id"),
            Relationship(API_API, "payOrder", None, "login", None, delta_ms=60000),
            Relationship(API_ENV, "payOrder", "arguments.loginId", "Env", "userId"),
        ]
        path = tmp_path / "relations.json"
        save_relationships(rels, path)
        assert load_relationships(path) == rels

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            Relationship("API_FTP", "a", None, "b", None)

    def test_diagram_lists_entities_and_edges(self):
        bundle = small_bundle()
        rels = [Relationship(API_DB, "payOrder", "arguments.orderId", "orders", "id")]
        diagram = diagram_to_dict(bundle, rels)
        assert {"login", "payOrder", "orders", "Env"} <= set(diagram["entities"])
        assert len(diagram["relationships"]) == 1
