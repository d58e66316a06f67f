"""Schema model: entity types, signature flattening, DDL parsing, bundles.

Three kinds of entity share one attribute vocabulary: API endpoints flattened
from nested call signatures, database tables parsed from CREATE TABLE
statements, and the per-session environment descriptor.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .errors import DdlParseError, SchemaError

TYPE_TAGS = (
    "string",
    "integer",
    "float",
    "boolean",
    "timestamp-millis",
    "enum",
    "document",
)

API = "API"
TABLE = "TABLE"
ENV = "ENV"
ENTITY_KINDS = (API, TABLE, ENV)

_SEGMENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")

# Accepted spellings for leaf type annotations in signature documents.
_TYPE_ALIASES = {
    "string": "string",
    "str": "string",
    "int": "integer",
    "integer": "integer",
    "long": "integer",
    "float": "float",
    "double": "float",
    "number": "float",
    "bool": "boolean",
    "boolean": "boolean",
    "timestamp": "timestamp-millis",
    "timestamp-millis": "timestamp-millis",
    "datetime": "timestamp-millis",
    "document": "document",
}


@dataclass(frozen=True)
class SemanticType:
    tag: str
    enum_domain: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.tag not in TYPE_TAGS:
            raise SchemaError(f"unknown type tag {self.tag!r}")
        if self.tag == "enum":
            if not self.enum_domain:
                raise SchemaError("enum type requires a non-empty domain")
            if len(set(self.enum_domain)) != len(self.enum_domain):
                raise SchemaError("enum domain values must be unique")
        elif self.enum_domain is not None:
            raise SchemaError(f"type {self.tag!r} cannot carry an enum domain")


STRING = SemanticType("string")
INTEGER = SemanticType("integer")
FLOAT = SemanticType("float")
BOOLEAN = SemanticType("boolean")
TIMESTAMP = SemanticType("timestamp-millis")
DOCUMENT = SemanticType("document")


@dataclass(frozen=True)
class Attribute:
    path: str
    type: SemanticType
    nullable: bool = True

    def __post_init__(self):
        for seg in self.path.split("."):
            if not _SEGMENT_RE.match(seg):
                raise SchemaError(f"invalid path segment {seg!r} in {self.path!r}")

    @property
    def segments(self) -> tuple[str, ...]:
        return tuple(self.path.split("."))

    @property
    def last_segment(self) -> str:
        return self.path.rsplit(".", 1)[-1]


@dataclass
class EntityType:
    name: str
    kind: str
    attributes: list[Attribute]
    primary_key: tuple[str, ...] | None = None
    _by_path: dict[str, Attribute] = field(
        init=False, repr=False, compare=False, default_factory=dict
    )

    def __post_init__(self):
        if not _SEGMENT_RE.match(self.name):
            raise SchemaError(f"invalid entity name {self.name!r}")
        if self.kind not in ENTITY_KINDS:
            raise SchemaError(f"unknown entity kind {self.kind!r}")
        for attr in self.attributes:
            if attr.path in self._by_path:
                raise SchemaError(
                    f"duplicate attribute path {attr.path!r} on {self.name!r}"
                )
            self._by_path[attr.path] = attr
        if self.kind == API:
            self._require("time", "timestamp-millis")
            self._require("sessionId", "string")
        if self.kind == ENV:
            self._require("sessionId", "string")
        if self.primary_key is not None:
            if self.kind != TABLE:
                raise SchemaError("only TABLE entities carry a primary key")
            if not self.primary_key:
                raise SchemaError(f"empty primary key on {self.name!r}")
            for path in self.primary_key:
                if path not in self._by_path:
                    raise SchemaError(
                        f"primary key column {path!r} not defined on {self.name!r}"
                    )

    def _require(self, path: str, tag: str) -> None:
        attr = self._by_path.get(path)
        if attr is None or attr.type.tag != tag:
            raise SchemaError(
                f"{self.kind} entity {self.name!r} requires attribute "
                f"{path!r} of type {tag}"
            )

    def attribute(self, path: str) -> Attribute | None:
        return self._by_path.get(path)

    def has_attribute(self, path: str) -> bool:
        return path in self._by_path


def _resolve_type_name(raw: object, path: str) -> SemanticType:
    if isinstance(raw, str):
        tag = _TYPE_ALIASES.get(raw.strip().lower())
        if tag is not None:
            return SemanticType(tag)
    raise SchemaError(f"invalid type annotation {raw!r} at {path!r}")


def flatten_api_signature(
    name: str,
    arguments: dict,
    response: dict,
    depth_limit: int = 3,
) -> EntityType:
    """Flatten a nested call signature into one API entity.

    Leaves within depth_limit become typed attributes named by their dot
    path; subtrees at the limit collapse to a single document attribute, as
    do arrays. The ambient time and sessionId attributes are appended last.
    """
    if depth_limit < 1:
        raise SchemaError("depth_limit must be >= 1")
    attrs: list[Attribute] = []

    def walk(node: object, path: str, depth: int) -> None:
        if isinstance(node, dict):
            if depth >= depth_limit and node:
                attrs.append(Attribute(path, DOCUMENT))
                return
            if not node:
                attrs.append(Attribute(path, DOCUMENT))
                return
            for key, child in node.items():
                walk(child, f"{path}.{key}", depth + 1)
        elif isinstance(node, list):
            attrs.append(Attribute(path, DOCUMENT))
        else:
            attrs.append(Attribute(path, _resolve_type_name(node, path)))

    for root, doc in (("arguments", arguments), ("response", response)):
        if not isinstance(doc, dict):
            raise SchemaError(f"{root} of {name!r} must be a document")
        for key, child in doc.items():
            walk(child, f"{root}.{key}", 1)

    attrs.append(Attribute("time", TIMESTAMP))
    attrs.append(Attribute("sessionId", STRING))
    return EntityType(name=name, kind=API, attributes=attrs)


def load_env_descriptor(descriptor: dict, name: str = "Env") -> EntityType:
    """Build the ENV entity from a flat {field: type name} descriptor."""
    if not isinstance(descriptor, dict) or not descriptor:
        raise SchemaError("environment descriptor must be a non-empty document")
    attrs = [
        Attribute(path, _resolve_type_name(raw, path))
        for path, raw in descriptor.items()
    ]
    if not any(a.path == "sessionId" for a in attrs):
        raise SchemaError("environment descriptor requires a sessionId field")
    return EntityType(name=name, kind=ENV, attributes=attrs)


# --- DDL subset ------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>--[^\n]*)
  | (?P<string>'(?:[^'\\]|\\.)*')
  | (?P<word>[A-Za-z_][A-Za-z0-9_]*|`[^`]+`)
  | (?P<number>[0-9]+)
  | (?P<punct>[(),;])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int
    column: int


def _tokenize_ddl(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    line = 1
    line_start = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise DdlParseError(
                f"unexpected character {text[pos]!r}", line, pos - line_start + 1
            )
        kind = match.lastgroup or ""
        raw = match.group(0)
        if kind not in ("ws", "comment"):
            tokens.append(_Token(kind, raw, line, pos - line_start + 1))
        newlines = raw.count("\n")
        if newlines:
            line += newlines
            line_start = pos + raw.rfind("\n") + 1
        pos = match.end()
    return tokens


class _DdlParser:
    def __init__(self, text: str):
        self.tokens = _tokenize_ddl(text)
        self.pos = 0

    def _error(self, message: str) -> DdlParseError:
        if self.pos < len(self.tokens):
            tok = self.tokens[self.pos]
            return DdlParseError(message, tok.line, tok.column)
        last = self.tokens[-1] if self.tokens else _Token("", "", 1, 1)
        return DdlParseError(message, last.line, last.column + len(last.text))

    def peek(self) -> _Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self) -> _Token:
        tok = self.peek()
        if tok is None:
            raise self._error("unexpected end of input")
        self.pos += 1
        return tok

    def expect_word(self, *words: str) -> _Token:
        tok = self.next()
        if tok.kind != "word" or tok.text.upper() not in words:
            raise DdlParseError(
                f"expected {' or '.join(words)}, got {tok.text!r}",
                tok.line,
                tok.column,
            )
        return tok

    def expect_punct(self, punct: str) -> _Token:
        tok = self.next()
        if tok.kind != "punct" or tok.text != punct:
            raise DdlParseError(
                f"expected {punct!r}, got {tok.text!r}", tok.line, tok.column
            )
        return tok

    def identifier(self) -> str:
        tok = self.next()
        if tok.kind != "word":
            raise DdlParseError(
                f"expected identifier, got {tok.text!r}", tok.line, tok.column
            )
        return tok.text.strip("`")

    def at_word(self, word: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind == "word" and tok.text.upper() == word

    def parse_statements(self) -> list[EntityType]:
        entities = []
        while self.peek() is not None:
            entities.append(self.parse_create_table())
        return entities

    def parse_create_table(self) -> EntityType:
        self.expect_word("CREATE")
        self.expect_word("TABLE")
        name = self.identifier()
        self.expect_punct("(")
        columns: list[Attribute] = []
        seen: set[str] = set()
        pk: list[str] | None = None
        while True:
            if self.at_word("PRIMARY"):
                self.next()
                self.expect_word("KEY")
                self.expect_punct("(")
                cols = [self.identifier()]
                while self._try_punct(","):
                    cols.append(self.identifier())
                self.expect_punct(")")
                if pk is not None:
                    raise self._error("duplicate PRIMARY KEY clause")
                pk = cols
            else:
                col, col_pk = self.parse_column()
                if col.path in seen:
                    raise SchemaError(f"duplicate column {col.path!r} in {name!r}")
                seen.add(col.path)
                columns.append(col)
                if col_pk:
                    if pk is not None:
                        raise self._error("duplicate PRIMARY KEY clause")
                    pk = [col.path]
            tok = self.next()
            if tok.kind == "punct" and tok.text == ",":
                continue
            if tok.kind == "punct" and tok.text == ")":
                break
            raise DdlParseError(
                f"expected ',' or ')', got {tok.text!r}", tok.line, tok.column
            )
        self.expect_punct(";")
        attrs = columns
        if pk is not None:
            attrs = [
                Attribute(a.path, a.type, nullable=a.path not in pk) for a in columns
            ]
        return EntityType(
            name=name,
            kind=TABLE,
            attributes=attrs,
            primary_key=tuple(pk) if pk else None,
        )

    def _try_punct(self, punct: str) -> bool:
        tok = self.peek()
        if tok is not None and tok.kind == "punct" and tok.text == punct:
            self.pos += 1
            return True
        return False

    def parse_column(self) -> tuple[Attribute, bool]:
        name = self.identifier()
        type_tok = self.next()
        if type_tok.kind != "word":
            raise DdlParseError(
                f"expected column type, got {type_tok.text!r}",
                type_tok.line,
                type_tok.column,
            )
        sem = self.parse_type(type_tok)
        is_pk = False
        if self.at_word("PRIMARY"):
            self.next()
            self.expect_word("KEY")
            is_pk = True
        return Attribute(name, sem), is_pk

    def parse_type(self, tok: _Token) -> SemanticType:
        upper = tok.text.upper()
        args = self.parse_type_args()
        if upper in ("VARCHAR", "TEXT"):
            return STRING
        if upper in ("INT", "BIGINT"):
            return INTEGER
        if upper in ("DECIMAL", "DOUBLE", "FLOAT"):
            return FLOAT
        if upper in ("DATETIME", "TIMESTAMP"):
            return TIMESTAMP
        if upper == "BOOLEAN":
            return BOOLEAN
        if upper == "TINYINT":
            if args == ["1"]:
                return BOOLEAN
            raise DdlParseError(
                "only TINYINT(1) is supported", tok.line, tok.column
            )
        if upper == "ENUM":
            if not args:
                raise DdlParseError("ENUM requires values", tok.line, tok.column)
            return SemanticType("enum", tuple(args))
        raise DdlParseError(f"unsupported column type {tok.text!r}", tok.line, tok.column)

    def parse_type_args(self) -> list[str]:
        args: list[str] = []
        if not self._try_punct("("):
            return args
        while True:
            tok = self.next()
            if tok.kind == "string":
                args.append(tok.text[1:-1].replace("\\'", "'"))
            elif tok.kind == "number":
                args.append(tok.text)
            else:
                raise DdlParseError(
                    f"unexpected type argument {tok.text!r}", tok.line, tok.column
                )
            tok = self.next()
            if tok.kind == "punct" and tok.text == ")":
                return args
            if not (tok.kind == "punct" and tok.text == ","):
                raise DdlParseError(
                    f"expected ',' or ')', got {tok.text!r}", tok.line, tok.column
                )


def parse_create_table(ddl_text: str) -> list[EntityType]:
    """Parse a fixed CREATE TABLE subset into TABLE entities."""
    return _DdlParser(ddl_text).parse_statements()


# --- bundles ---------------------------------------------------------------


@dataclass
class SchemaBundle:
    entities: list[EntityType]
    _by_name: dict[str, EntityType] = field(
        init=False, repr=False, compare=False, default_factory=dict
    )

    def __post_init__(self):
        for entity in self.entities:
            if entity.name in self._by_name:
                raise SchemaError(f"duplicate entity name {entity.name!r}")
            self._by_name[entity.name] = entity

    def entity(self, name: str) -> EntityType:
        ent = self._by_name.get(name)
        if ent is None:
            raise SchemaError(f"unknown entity {name!r}")
        return ent

    def has_entity(self, name: str) -> bool:
        return name in self._by_name

    def of_kind(self, kind: str) -> list[EntityType]:
        return [e for e in self.entities if e.kind == kind]

    def require_inference_ready(self) -> None:
        if not self.of_kind(API) or not self.of_kind(TABLE):
            raise SchemaError(
                "inference requires at least one API entity and one TABLE entity"
            )


def merge_bundle(entities: list[EntityType]) -> SchemaBundle:
    return SchemaBundle(list(entities))


def bundle_to_dict(bundle: SchemaBundle) -> dict:
    entities = []
    for ent in bundle.entities:
        attrs = []
        for attr in ent.attributes:
            item: dict = {"path": attr.path, "type": attr.type.tag}
            if attr.type.enum_domain is not None:
                item["enum_domain"] = list(attr.type.enum_domain)
            item["nullable"] = attr.nullable
            attrs.append(item)
        record: dict = {"name": ent.name, "kind": ent.kind, "attributes": attrs}
        if ent.primary_key is not None:
            record["primary_key"] = list(ent.primary_key)
        entities.append(record)
    return {"entities": entities}


def bundle_from_dict(data: dict) -> SchemaBundle:
    if not isinstance(data, dict) or "entities" not in data:
        raise SchemaError("bundle descriptor requires an 'entities' list")
    entities = []
    for record in data["entities"]:
        attrs = []
        for item in record.get("attributes", []):
            domain = item.get("enum_domain")
            sem = SemanticType(item["type"], tuple(domain) if domain else None)
            attrs.append(
                Attribute(item["path"], sem, nullable=item.get("nullable", True))
            )
        pk = record.get("primary_key")
        entities.append(
            EntityType(
                name=record["name"],
                kind=record["kind"],
                attributes=attrs,
                primary_key=tuple(pk) if pk else None,
            )
        )
    return SchemaBundle(entities)


def save_bundle(bundle: SchemaBundle, path: str) -> None:
    from .fileio import write_json

    write_json(bundle_to_dict(bundle), path)


def load_bundle(path: str) -> SchemaBundle:
    with open(path, encoding="utf-8") as fh:
        return bundle_from_dict(json.load(fh))
