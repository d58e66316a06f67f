"""Candidate refinement: keep an invariant only once training traffic is clean.

Each candidate is evaluated against every joined group. Violations are fed
back to the proposer on a forked conversation; after the round budget is
spent, a still-violated candidate is discarded. Accepted invariants
therefore pass the whole training corpus by construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .dsl import (
    DslScopeError,
    DslSyntaxError,
    Invariant,
    evaluate,
    explain,
    failing_conjuncts,
    parse_invariant,
    print_invariant,
)
from .errors import EvaluationError, ExtractionError, ProposalError
from .proposer import Conversation, RefineRequest, ViolationSample

logger = logging.getLogger(__name__)

MAX_ROUNDS = 3
SAMPLE_LIMIT = 5


@dataclass
class CandidateOutcome:
    text: str
    status: str  # accepted | discarded
    attempts: int
    invariant: Invariant | None = None
    reason: str | None = None


@dataclass
class RefinementReport:
    accepted: list[Invariant] = field(default_factory=list)
    outcomes: list[CandidateOutcome] = field(default_factory=list)
    refine_calls: int = 0


def _violations(inv: Invariant, groups) -> list[tuple]:
    out = []
    for group in groups:
        verdict = evaluate(inv, group)
        if not verdict.passed:
            out.append((group, verdict))
    return out


def _build_request(inv: Invariant, violations, sample_limit: int) -> RefineRequest:
    samples = []
    for group, verdict in violations[:sample_limit]:
        samples.append(
            ViolationSample(
                log_id=group.log_id,
                explanation=explain(verdict),
                failing_clauses=failing_conjuncts(inv, group),
            )
        )
    return RefineRequest(invariant_text=print_invariant(inv), samples=samples)


def refine_candidates(
    texts: list[str],
    conversation: Conversation,
    groups,
    focal_name: str,
    proposer,
    max_rounds: int = MAX_ROUNDS,
    sample_limit: int = SAMPLE_LIMIT,
) -> RefinementReport:
    """Run the accept-or-refine loop for one focal entity's candidates."""
    report = RefinementReport()
    seen_bodies: set[str] = set()
    used_ids: set[str] = set()

    for original in texts:
        fork = conversation.fork()
        text = original
        attempts = 0
        while True:
            try:
                inv = parse_invariant(text)
            except (DslSyntaxError, DslScopeError) as exc:
                report.outcomes.append(
                    CandidateOutcome(
                        text=original,
                        status="discarded",
                        attempts=attempts,
                        reason=f"unparseable: {exc}",
                    )
                )
                break
            if inv.focal != focal_name:
                report.outcomes.append(
                    CandidateOutcome(
                        text=original,
                        status="discarded",
                        attempts=attempts,
                        reason=f"wrong focal entity {inv.focal!r}",
                    )
                )
                break
            try:
                violations = _violations(inv, groups)
            except EvaluationError as exc:
                report.outcomes.append(
                    CandidateOutcome(
                        text=original,
                        status="discarded",
                        attempts=attempts,
                        reason=f"unknown binding: {exc}",
                    )
                )
                break
            if not violations:
                canonical = print_invariant(inv)
                if canonical in seen_bodies:
                    report.outcomes.append(
                        CandidateOutcome(
                            text=original,
                            status="discarded",
                            attempts=attempts,
                            reason="duplicate of an accepted invariant",
                        )
                    )
                    break
                seen_bodies.add(canonical)
                inv = _unique_id(inv, used_ids)
                used_ids.add(inv.id)
                report.accepted.append(inv)
                report.outcomes.append(
                    CandidateOutcome(
                        text=original,
                        status="accepted",
                        attempts=attempts,
                        invariant=inv,
                    )
                )
                break
            if attempts >= max_rounds:
                report.outcomes.append(
                    CandidateOutcome(
                        text=original,
                        status="discarded",
                        attempts=attempts,
                        reason=f"{len(violations)} training violation(s) after "
                        f"{attempts} refinement(s)",
                    )
                )
                break
            request = _build_request(inv, violations, sample_limit)
            attempts += 1
            report.refine_calls += 1
            try:
                text = proposer.refine_invariant(fork, request)
            except (ProposalError, ExtractionError) as exc:
                report.outcomes.append(
                    CandidateOutcome(
                        text=original,
                        status="discarded",
                        attempts=attempts,
                        reason=f"refinement failed: {exc}",
                    )
                )
                break
            if not text.strip():
                report.outcomes.append(
                    CandidateOutcome(
                        text=original,
                        status="discarded",
                        attempts=attempts,
                        reason="proposer withdrew the candidate",
                    )
                )
                break
    return report


def _unique_id(inv: Invariant, used: set[str]) -> Invariant:
    if inv.id not in used:
        return inv
    n = 2
    while f"{inv.id}_{n}" in used:
        n += 1
    from dataclasses import replace

    return replace(inv, id=f"{inv.id}_{n}")
