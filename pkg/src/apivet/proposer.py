"""Proposer bridge: prompt rendering, fenced-block extraction, providers.

Two providers implement the same contract. The stub is fully deterministic
and runs offline from name-affinity rules and schema-driven templates; the
remote provider speaks a generic chat-completion JSON dialect over HTTP.
Pipelines depend only on the contract, so either can back a run.
"""

from __future__ import annotations

import json
import logging
import os
import re
import urllib.error
import urllib.request
from dataclasses import dataclass, field, replace

from .dsl import (
    And,
    BoolConst,
    Cmp,
    FieldRef,
    InSet,
    Invariant,
    Lit,
    Match,
    NullCheck,
    Quant,
    parse_invariant,
    print_expr,
    print_invariant,
)
from .errors import ExtractionError, ProposalError
from .schema import API, ENV, TABLE, EntityType

logger = logging.getLogger(__name__)

DEFAULT_SYNONYMS: tuple[tuple[str, str], ...] = (("loginId", "userId"),)

ID_VALUE_PATTERN = "[A-Za-z0-9_-]+"

_AMOUNT_WORDS = ("price", "amount", "quantity")


@dataclass
class Message:
    role: str
    text: str


@dataclass
class Conversation:
    messages: list[Message] = field(default_factory=list)

    def append(self, role: str, text: str) -> None:
        self.messages.append(Message(role=role, text=text))

    def fork(self) -> "Conversation":
        return Conversation(messages=list(self.messages))


@dataclass(frozen=True)
class RelationshipCandidate:
    from_attr: str
    to_attr: str | None


@dataclass
class InvariantProposal:
    texts: list[str]
    conversation: Conversation


@dataclass
class ViolationSample:
    log_id: int
    explanation: str
    failing_clauses: list[str]


@dataclass
class RefineRequest:
    invariant_text: str
    samples: list[ViolationSample]


class ProposerContract:
    """What a proposer must answer; see StubProposer for the offline default."""

    def propose_relationships(
        self, focal: EntityType, target: EntityType
    ) -> list[RelationshipCandidate]:
        raise NotImplementedError

    def propose_invariants(self, joined_schema) -> InvariantProposal:
        raise NotImplementedError

    def refine_invariant(self, conversation: Conversation, request: RefineRequest) -> str:
        raise NotImplementedError


# --- prompt rendering ------------------------------------------------------


def _render_entity(entity: EntityType) -> str:
    attrs = ", ".join(
        f'"{attr.path}": <{attr.type.tag}>' for attr in entity.attributes
    )
    return f"{entity.name} {{ {attrs} }}"


def render_relationship_prompt(focal: EntityType, target: EntityType) -> str:
    """Deterministic prompt asking for join relationships between two entities."""
    return (
        "You are a software engineer who knows the business logic of web\n"
        "applications inside out. Given two entity types from one application,\n"
        "decide whether any attribute of the focal entity refers to the same\n"
        "objects as an attribute of the target entity.\n"
        "\n"
        "A relationship is a pair of attributes whose values are drawn from a\n"
        "shared identifier space (for example, a call argument holding a row's\n"
        "key). List every such pair; use an empty list when there is none.\n"
        "\n"
        "Reply with one fenced block tagged json of the form:\n"
        "```json\n"
        '{"relationships": [{"from_column": "<focal attribute>", '
        '"to_column": "<target attribute>"}]}\n'
        "```\n"
        "\n"
        "Example:\n"
        '- Focal Entity Type: cancelOrder { "userId": <string>, "orderId": <string> }\n'
        '- Target Entity Type: users { "id": <string>, "name": <string> }\n'
        "Answer:\n"
        "```json\n"
        '{"relationships": [{"from_column": "userId", "to_column": "id"}]}\n'
        "```\n"
        "\n"
        "Now the input:\n"
        f"- Focal Entity Type: {_render_entity(focal)}\n"
        f"- Target Entity Type: {_render_entity(target)}\n"
    )


_CATEGORY_NOTES = {
    "common_sense": "values that are implausible on their face (a price at or below zero)",
    "format": "well-formedness of a single field (identifier charset, non-null)",
    "database": "agreement between the call and the joined table rows",
    "environment": "agreement between call arguments and the session environment",
    "related_api": "data flowing from an earlier call's response into this call",
}


def render_invariant_prompt(joined_schema, categories=None) -> str:
    """Deterministic prompt describing the joined schema and asking for invariants."""
    from .dsl import CATEGORIES

    cats = list(categories) if categories is not None else list(CATEGORIES)
    lines = [
        "You are a software engineer writing runtime checks for a web",
        "application. Propose invariants that every legitimate call must",
        "satisfy, one per fenced block tagged invariant, in this grammar:",
        "",
        "```",
        "INVARIANT <name> ON <focal entity> CATEGORY <category>",
        "WHERE <boolean expression over entity.attribute references>",
        "```",
        "",
        "Expressions support AND, OR, NOT, EXISTS(binding: ...),",
        "FORALL(binding: ...), comparisons, IN [..], MATCHES \"regex\",",
        "and IS [NOT] NULL. Reference a joined entity only inside a",
        "quantifier that binds it.",
        "",
        "Categories:",
    ]
    for cat in cats:
        note = _CATEGORY_NOTES.get(cat, "")
        lines.append(f"- {cat}: {note}")
    lines.append("")
    lines.append(f"Focal entity: {_render_entity(joined_schema.focal)}")
    if joined_schema.bindings:
        lines.append("Joined entities (quantifier bindings):")
        for binding in joined_schema.bindings:
            lines.append(
                f"- {binding.name} ({binding.relationship.kind}): "
                f"{_render_entity(binding.entity)}"
            )
    else:
        lines.append("Joined entities: none")
    lines.append("")
    lines.append("Example:")
    lines.append("```invariant")
    lines.append(
        "INVARIANT refund_paid ON refundOrder CATEGORY database "
        'WHERE EXISTS(orders: orders.status == "paid")'
    )
    lines.append("```")
    return "\n".join(lines) + "\n"


def render_refine_message(request: RefineRequest) -> str:
    lines = [
        "The invariant below is violated by legitimate traffic. Repair it so",
        "every sample passes, or reply with an empty invariant block to drop it.",
        "",
        request.invariant_text,
        "",
        "Violating samples:",
    ]
    for sample in request.samples:
        lines.append(f"- log {sample.log_id}: {sample.explanation}")
        if sample.failing_clauses:
            lines.append(f"  failing clauses: {'; '.join(sample.failing_clauses)}")
    return "\n".join(lines) + "\n"


# --- fenced block extraction -------------------------------------------------

_THOUGHT_RE = re.compile(r"<thought>.*?</thought>", re.DOTALL)


def extract_fenced_blocks(text: str, tag: str) -> list[str]:
    """Contents of every ```<tag> fence, ignoring any <thought> spans."""
    cleaned = _THOUGHT_RE.sub("", text)
    pattern = re.compile(
        rf"```{re.escape(tag)}[ \t]*\n(.*?)```", re.DOTALL
    )
    blocks = [match.group(1).strip("\n") for match in pattern.finditer(cleaned)]
    if not blocks:
        raise ExtractionError(f"no fenced block tagged {tag!r} in response")
    return blocks


# --- name affinity ---------------------------------------------------------

_CAMEL_SPLIT_RE = re.compile(r"(?<=[a-z0-9])(?=[A-Z])|(?<=[A-Z])(?=[A-Z][a-z])")


def _fold_plural(word: str) -> str:
    if len(word) > 3 and word.endswith("s") and not word.endswith(("ss", "us", "is")):
        return word[:-1]
    return word


def name_words(name: str) -> tuple[str, ...]:
    """Split a camelCase or snake_case name into folded lowercase words."""
    pieces: list[str] = []
    for chunk in name.split("_"):
        if chunk:
            pieces.extend(_CAMEL_SPLIT_RE.split(chunk))
    return tuple(_fold_plural(piece.lower()) for piece in pieces if piece)


def _synonym_map(
    synonyms: tuple[tuple[str, str], ...]
) -> dict[tuple[str, ...], set[tuple[str, ...]]]:
    table: dict[tuple[str, ...], set[tuple[str, ...]]] = {}
    for left, right in synonyms:
        a, b = name_words(left), name_words(right)
        table.setdefault(a, set()).add(b)
        table.setdefault(b, set()).add(a)
    return table


def _expand(
    key: tuple[str, ...], synonyms: dict[tuple[str, ...], set[tuple[str, ...]]]
) -> set[tuple[str, ...]]:
    return {key} | synonyms.get(key, set())


# --- deterministic stub ------------------------------------------------------


class StubProposer(ProposerContract):
    """Offline proposer driven by name affinity and schema templates."""

    def __init__(self, synonyms: tuple[tuple[str, str], ...] = DEFAULT_SYNONYMS):
        self._synonyms = _synonym_map(tuple(synonyms))

    # relationship proposals

    def propose_relationships(
        self, focal: EntityType, target: EntityType
    ) -> list[RelationshipCandidate]:
        if focal.kind != API:
            return []
        if target.kind == TABLE:
            return self._table_candidates(focal, target)
        if target.kind == API:
            return self._api_candidates(focal, target)
        if target.kind == ENV:
            return self._env_candidates(focal, target)
        return []

    def _payload_attrs(self, entity: EntityType, roots: tuple[str, ...]):
        for attr in entity.attributes:
            if attr.segments[0] in roots:
                yield attr

    def _names_of(self, name: str) -> set[tuple[str, ...]]:
        return _expand(name_words(name), self._synonyms)

    def _table_candidates(
        self, focal: EntityType, target: EntityType
    ) -> list[RelationshipCandidate]:
        out: list[RelationshipCandidate] = []
        seen: set[tuple[str, str]] = set()
        table_words = name_words(target.name)
        for attr in self._payload_attrs(focal, ("arguments", "response")):
            focal_names = self._names_of(attr.last_segment)
            for column in target.attributes:
                col_names = self._names_of(column.path)
                if focal_names & col_names:
                    key = (attr.path, column.path)
                    if key not in seen:
                        seen.add(key)
                        out.append(RelationshipCandidate(attr.path, column.path))
            # `<entity>Id` points at the primary id column of a like-named table.
            for fname in focal_names:
                if len(fname) >= 2 and fname[-1] == "id" and fname[:-1] == table_words:
                    for column in target.attributes:
                        if name_words(column.path) == ("id",):
                            key = (attr.path, column.path)
                            if key not in seen:
                                seen.add(key)
                                out.append(
                                    RelationshipCandidate(attr.path, column.path)
                                )
        return out

    def _api_candidates(
        self, focal: EntityType, target: EntityType
    ) -> list[RelationshipCandidate]:
        for arg in self._payload_attrs(focal, ("arguments",)):
            arg_names = self._names_of(arg.last_segment)
            for resp in self._payload_attrs(target, ("response",)):
                if arg_names & self._names_of(resp.last_segment):
                    return [RelationshipCandidate(arg.path, resp.path)]
        return []

    def _env_candidates(
        self, focal: EntityType, target: EntityType
    ) -> list[RelationshipCandidate]:
        out = []
        seen: set[str] = set()
        for arg in self._payload_attrs(focal, ("arguments",)):
            arg_names = self._names_of(arg.last_segment)
            for env_attr in target.attributes:
                if env_attr.path == "sessionId":
                    continue
                if arg_names & self._names_of(env_attr.path):
                    if env_attr.path not in seen:
                        seen.add(env_attr.path)
                        out.append(RelationshipCandidate(arg.path, env_attr.path))
        return out

    # invariant proposals

    def propose_invariants(self, joined_schema) -> InvariantProposal:
        texts = [print_invariant(inv) for inv in self._templates(joined_schema)]
        conversation = Conversation()
        conversation.append("user", render_invariant_prompt(joined_schema))
        conversation.append(
            "assistant",
            "\n".join(f"```invariant\n{text}\n```" for text in texts) or "none",
        )
        return InvariantProposal(texts=texts, conversation=conversation)

    def _templates(self, joined_schema) -> list[Invariant]:
        focal = joined_schema.focal
        fname = focal.name
        out: list[Invariant] = []

        def add(suffix: str, category: str, body) -> None:
            ident = re.sub(r"[^A-Za-z0-9_]", "_", f"{fname}__{suffix}")
            out.append(Invariant(id=ident, focal=fname, category=category, body=body))

        for binding in joined_schema.bindings:
            rel = binding.relationship
            if rel.kind == "API_DB":
                add(
                    f"{binding.name}__exists",
                    "database",
                    Quant(exists=True, name=binding.name, body=BoolConst(True)),
                )
                for column in binding.entity.attributes:
                    if column.type.tag != "enum":
                        continue
                    for value in column.type.enum_domain or ():
                        add(
                            f"{binding.name}__{column.path}__{value}",
                            "database",
                            Quant(
                                exists=True,
                                name=binding.name,
                                body=Cmp(
                                    "==",
                                    FieldRef(binding.name, column.path),
                                    Lit(value),
                                ),
                            ),
                        )
            elif rel.kind == "API_ENV":
                env_attr = rel.target_attr
                if env_attr is None:
                    continue
                for arg in self._payload_attrs(focal, ("arguments",)):
                    if self._names_of(arg.last_segment) & self._names_of(env_attr):
                        add(
                            f"{binding.name}__{env_attr}__match",
                            "environment",
                            Quant(
                                exists=True,
                                name=binding.name,
                                body=Cmp(
                                    "==",
                                    FieldRef(fname, arg.path),
                                    FieldRef(binding.name, env_attr),
                                ),
                            ),
                        )
            elif rel.kind == "API_API":
                for arg in self._payload_attrs(focal, ("arguments",)):
                    arg_names = self._names_of(arg.last_segment)
                    for resp in self._payload_attrs(binding.entity, ("response",)):
                        if arg_names & self._names_of(resp.last_segment):
                            add(
                                f"{binding.name}__{resp.last_segment}__flow",
                                "related_api",
                                Quant(
                                    exists=True,
                                    name=binding.name,
                                    body=Cmp(
                                        "==",
                                        FieldRef(fname, arg.path),
                                        FieldRef(binding.name, resp.path),
                                    ),
                                ),
                            )

        # Field-shape templates need no bindings.
        enum_domains: dict[tuple[str, ...], tuple[str, ...]] = {}
        for binding in joined_schema.bindings:
            if binding.relationship.kind != "API_DB":
                continue
            for column in binding.entity.attributes:
                if column.type.tag == "enum" and column.type.enum_domain:
                    enum_domains.setdefault(
                        name_words(column.path), column.type.enum_domain
                    )
        for attr in self._payload_attrs(focal, ("arguments", "response")):
            words = name_words(attr.last_segment)
            if attr.type.tag == "string" and words and words[-1] == "id":
                ref = FieldRef(fname, attr.path)
                add(
                    f"{attr.path}__format",
                    "format",
                    And(
                        (
                            NullCheck(ref, negated=True),
                            Match(ref, ID_VALUE_PATTERN),
                        )
                    ),
                )
            if attr.type.tag == "string":
                domain = None
                for key in _expand(words, self._synonyms):
                    if key in enum_domains:
                        domain = enum_domains[key]
                        break
                if domain:
                    add(
                        f"{attr.path}__domain",
                        "format",
                        InSet(
                            FieldRef(fname, attr.path),
                            tuple(Lit(v) for v in domain),
                        ),
                    )
            if attr.type.tag in ("integer", "float") and any(
                word in _AMOUNT_WORDS for word in words
            ):
                add(
                    f"{attr.path}__positive",
                    "common_sense",
                    Cmp(">", FieldRef(fname, attr.path), Lit(0)),
                )
        # sessionId is a string id field too
        add(
            "sessionId__format",
            "format",
            And(
                (
                    NullCheck(FieldRef(fname, "sessionId"), negated=True),
                    Match(FieldRef(fname, "sessionId"), ID_VALUE_PATTERN),
                )
            ),
        )
        return out

    # refinement

    def refine_invariant(self, conversation: Conversation, request: RefineRequest) -> str:
        conversation.append("user", render_refine_message(request))
        inv = parse_invariant(request.invariant_text)
        if not isinstance(inv.body, And):
            conversation.append("assistant", "```invariant\n```")
            return ""
        failing: set[str] = set()
        for sample in request.samples:
            failing.update(sample.failing_clauses)
        kept = [part for part in inv.body.parts if print_expr(part) not in failing]
        if not kept or len(kept) == len(inv.body.parts):
            conversation.append("assistant", "```invariant\n```")
            return ""
        body = kept[0] if len(kept) == 1 else And(tuple(kept))
        text = print_invariant(replace(inv, body=body))
        conversation.append("assistant", f"```invariant\n{text}\n```")
        return text


# --- remote provider ---------------------------------------------------------


@dataclass
class ProviderConfig:
    endpoint_url: str
    model_name: str
    api_key_env_var: str | None = None
    max_in_flight: int = 1
    timeout_ms: int = 30000
    retries: int = 2


def _http_transport(url: str, headers: dict, payload: dict, timeout_s: float) -> dict:
    body = json.dumps(payload).encode("utf-8")
    request = urllib.request.Request(url, data=body, headers=headers, method="POST")
    with urllib.request.urlopen(request, timeout=timeout_s) as response:
        return json.loads(response.read().decode("utf-8"))


class RemoteProposer(ProposerContract):
    """Chat-completion provider with bounded retries and fenced extraction."""

    def __init__(self, config: ProviderConfig, transport=None):
        self.config = config
        self.transport = transport or _http_transport
        self.max_in_flight = max(1, config.max_in_flight)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        var = self.config.api_key_env_var
        if var:
            key = os.environ.get(var)
            if not key:
                raise ProposalError(f"credential variable {var!r} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _chat(self, conversation: Conversation) -> str:
        payload = {
            "model": self.config.model_name,
            "messages": [
                {"role": m.role, "content": m.text} for m in conversation.messages
            ],
        }
        timeout_s = self.config.timeout_ms / 1000.0
        last_error: Exception | None = None
        for _ in range(self.config.retries + 1):
            try:
                data = self.transport(
                    self.config.endpoint_url, self._headers(), payload, timeout_s
                )
                text = data["choices"][0]["message"]["content"]
                if not isinstance(text, str):
                    raise KeyError("content")
                conversation.append("assistant", text)
                return text
            except (KeyError, IndexError, TypeError) as exc:
                raise ProposalError(f"malformed provider response: {exc!r}")
            except ProposalError:
                raise
            except Exception as exc:  # transport failures are retried
                last_error = exc
                logger.warning("provider call failed, retrying: %s", exc)
        raise ProposalError(f"provider unreachable after retries: {last_error!r}")

    def propose_relationships(
        self, focal: EntityType, target: EntityType
    ) -> list[RelationshipCandidate]:
        conversation = Conversation()
        conversation.append("user", render_relationship_prompt(focal, target))
        text = self._chat(conversation)
        try:
            blocks = extract_fenced_blocks(text, "json")
        except ExtractionError:
            conversation.append(
                "user", "Reply again with exactly one fenced block tagged json."
            )
            blocks = extract_fenced_blocks(self._chat(conversation), "json")
        try:
            data = json.loads(blocks[-1])
            raw = data["relationships"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ProposalError(f"unparseable relationship proposal: {exc!r}")
        out = []
        for item in raw if isinstance(raw, list) else [raw]:
            if not isinstance(item, dict) or "from_column" not in item:
                raise ProposalError(f"unparseable relationship item: {item!r}")
            out.append(
                RelationshipCandidate(
                    from_attr=str(item["from_column"]),
                    to_attr=(
                        str(item["to_column"])
                        if item.get("to_column") is not None
                        else None
                    ),
                )
            )
        return out

    def propose_invariants(self, joined_schema) -> InvariantProposal:
        conversation = Conversation()
        conversation.append("user", render_invariant_prompt(joined_schema))
        text = self._chat(conversation)
        try:
            blocks = extract_fenced_blocks(text, "invariant")
        except ExtractionError:
            conversation.append(
                "user",
                "Reply again with each invariant in a fenced block tagged invariant.",
            )
            blocks = extract_fenced_blocks(self._chat(conversation), "invariant")
        texts = [block for block in blocks if block.strip()]
        return InvariantProposal(texts=texts, conversation=conversation)

    def refine_invariant(self, conversation: Conversation, request: RefineRequest) -> str:
        conversation.append("user", render_refine_message(request))
        text = self._chat(conversation)
        try:
            blocks = extract_fenced_blocks(text, "invariant")
        except ExtractionError:
            return ""
        block = blocks[-1].strip()
        return block
