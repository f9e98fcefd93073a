"""Coding-structure hierarchy (codes, sub-themes, themes) and its JSON form.

The canonical JSON shape mirrors the agents' output contract: top-level keys
are "Code N" / "Sub-Theme N" / "Theme N" labels, plus two side channels that
never enter the hierarchy itself: a "metadata" object (the coding agent's
explanation and self-reflection memo) and a "modification_summary" string
(a debriefing agent's prose account of its edits).
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, replace
from enum import Enum

from .errors import ContractError, SchemaError, StructureParseError


class Level(str, Enum):
    """Abstraction level of a coding structure."""

    CODE = "code"
    SUBTHEME = "subtheme"
    THEME = "theme"

    @property
    def label_prefix(self) -> str:
        return _LABEL_PREFIX[self]


class Perspective(str, Enum):
    """Analytical stance of a debriefing pass.

    SELF_REFINE (refinement with no perspective framing) and NONE (the
    unrefined initial result) are evaluation conditions; neither is ever
    rendered into perspective-specific prompt text.
    """

    THEORY = "theory"
    DATA = "data"
    APPLIED = "applied"
    SELF_REFINE = "selfrefine"
    NONE = "initial"


#: The three stances a debriefing agent can take, in canonical order.
DEBRIEF_PERSPECTIVES = (Perspective.THEORY, Perspective.DATA, Perspective.APPLIED)

_LABEL_PREFIX = {Level.CODE: "Code", Level.SUBTHEME: "Sub-Theme", Level.THEME: "Theme"}
_LABEL_RE = re.compile(r"^(Code|Sub-Theme|Theme) (\d+)$")

MAX_DEFINITION_CHARS = 800  # prompt contract: definition <=200 chars + examples <=600


def label_sort_key(label: str):
    """Sort "Code 2" before "Code 10"; unknown labels sort after, lexically."""
    m = _LABEL_RE.match(label)
    if m:
        return (0, m.group(1), int(m.group(2)), label)
    return (1, label, 0, label)


def next_label(level: Level, taken: set[str]) -> str:
    """Next unused "<Prefix> <n>" label at this level."""
    n = 1
    while f"{level.label_prefix} {n}" in taken:
        n += 1
    return f"{level.label_prefix} {n}"


@dataclass(frozen=True)
class Chunk:
    """A verbatim transcript segment assigned to a code."""

    text: str
    source_interview: str = ""


@dataclass(frozen=True)
class Code:
    id: str
    name: str
    chunks: tuple[Chunk, ...]

    def chunk_texts(self) -> tuple[str, ...]:
        return tuple(c.text for c in self.chunks)


@dataclass(frozen=True)
class SubTheme:
    id: str
    name: str
    definition: str
    codes: dict[str, Code]


@dataclass(frozen=True)
class Theme:
    id: str
    name: str
    definition: str
    subthemes: dict[str, SubTheme]


@dataclass(frozen=True)
class StageMetadata:
    """The coding agent's explanation plus self-reflection memo for one stage.

    Fields may be empty strings only when parser repair filled them in (the
    repair is tagged on the agent result).
    """

    main_actions: str
    examples: str
    confident_results: str
    uncertain_results: str
    recommended_review: str

    def explanation_text(self) -> str:
        """The "what the agent did" half, as a prompt binding."""
        return json.dumps(
            {"main_actions": self.main_actions, "examples": self.examples},
            ensure_ascii=False,
        )

    def reflection_text(self) -> str:
        """The self-reflection half, as a prompt binding."""
        return json.dumps(
            {
                "confident_results": self.confident_results,
                "uncertain_results": self.uncertain_results,
                "recommended_review": self.recommended_review,
            },
            ensure_ascii=False,
        )


@dataclass(frozen=True)
class CodingStructure:
    """A complete coding result at one level, plus optional stage metadata."""

    level: Level
    roots: dict[str, Code | SubTheme | Theme]
    metadata: StageMetadata | None = None

    def root_ids(self) -> list[str]:
        return sorted(self.roots, key=label_sort_key)

    def iter_codes(self):
        """Yield (path, parent_id, code) bottom-up over every code."""
        for rid in self.root_ids():
            root = self.roots[rid]
            if self.level is Level.CODE:
                yield rid, None, root
            elif self.level is Level.SUBTHEME:
                for cid in sorted(root.codes, key=label_sort_key):
                    yield f"{rid}/{cid}", rid, root.codes[cid]
            else:
                for sid in sorted(root.subthemes, key=label_sort_key):
                    sub = root.subthemes[sid]
                    for cid in sorted(sub.codes, key=label_sort_key):
                        yield f"{rid}/{sid}/{cid}", sid, sub.codes[cid]

    def iter_subthemes(self):
        """Yield (path, parent_id, subtheme) for sub-theme and theme levels."""
        if self.level is Level.SUBTHEME:
            for rid in self.root_ids():
                yield rid, None, self.roots[rid]
        elif self.level is Level.THEME:
            for rid in self.root_ids():
                theme = self.roots[rid]
                for sid in sorted(theme.subthemes, key=label_sort_key):
                    yield f"{rid}/{sid}", rid, theme.subthemes[sid]


def chunk_multiset(s: CodingStructure) -> Counter:
    """Every chunk text, once per occurrence, gathered bottom-up."""
    counts: Counter = Counter()
    for _, _, code in s.iter_codes():
        counts.update(code.chunk_texts())
    return counts


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def messages(self) -> list[str]:
        return [str(v) for v in self.violations]


def _check_code(path: str, code: Code, out: list[Violation]) -> None:
    if not code.name:
        out.append(Violation(path, "empty name"))
    if not code.chunks:
        out.append(Violation(path, "empty chunks"))
    for i, chunk in enumerate(code.chunks):
        if not chunk.text:
            out.append(Violation(path, f"empty chunk text at index {i}"))


def _check_definition(path: str, definition: str, out: list[Violation]) -> None:
    if len(definition) > MAX_DEFINITION_CHARS:
        out.append(
            Violation(path, f"definition exceeds {MAX_DEFINITION_CHARS} characters")
        )


def validate(s: CodingStructure) -> ValidationReport:
    """Report every invariant violation with its path; ok iff none."""
    out: list[Violation] = []
    if not s.roots:
        out.append(Violation("", "empty structure (no entries)"))
    seen: dict[str, str] = {}

    def check_unique(label: str, path: str) -> None:
        if label in seen:
            out.append(Violation(path, f"duplicate id (also at {seen[label]})"))
        else:
            seen[label] = path

    for rid in s.root_ids():
        root = s.roots[rid]
        if rid != root.id:
            out.append(Violation(rid, f"key does not match entity id {root.id!r}"))
        expected = {Level.CODE: Code, Level.SUBTHEME: SubTheme, Level.THEME: Theme}[s.level]
        if not isinstance(root, expected):
            out.append(Violation(rid, f"level {s.level.value} root is {type(root).__name__}"))
            continue
        check_unique(rid, rid)
        if s.level is Level.CODE:
            _check_code(rid, root, out)
        elif s.level is Level.SUBTHEME:
            _validate_subtheme(rid, root, out, check_unique)
        else:
            if not root.name:
                out.append(Violation(rid, "empty name"))
            _check_definition(rid, root.definition, out)
            if not root.subthemes:
                out.append(Violation(rid, "empty subthemes"))
            for sid in sorted(root.subthemes, key=label_sort_key):
                spath = f"{rid}/{sid}"
                check_unique(sid, spath)
                _validate_subtheme(spath, root.subthemes[sid], out, check_unique)
    return ValidationReport(tuple(out))


def _validate_subtheme(path: str, sub: SubTheme, out: list[Violation], check_unique) -> None:
    if not sub.name:
        out.append(Violation(path, "empty name"))
    _check_definition(path, sub.definition, out)
    if not sub.codes:
        out.append(Violation(path, "empty codes"))
    for cid in sorted(sub.codes, key=label_sort_key):
        cpath = f"{path}/{cid}"
        check_unique(cid, cpath)
        _check_code(cpath, sub.codes[cid], out)


def verify_verbatim(s: CodingStructure, transcript: str) -> list[Violation]:
    """Flag chunks that are not contiguous segments of the transcript."""
    out = []
    for path, _, code in s.iter_codes():
        for chunk in code.chunks:
            if chunk.text and chunk.text not in transcript:
                out.append(Violation(path, f"chunk not verbatim: {chunk.text[:40]!r}"))
    return out


# --- canonical JSON -------------------------------------------------------

def _code_to_json(code: Code) -> dict:
    return {"name": code.name, "chunks": list(code.chunk_texts())}


def _subtheme_to_json(sub: SubTheme, include_definition: bool) -> dict:
    obj: dict = {"name": sub.name}
    if include_definition or sub.definition:
        obj["definition"] = sub.definition
    obj["codes"] = {
        cid: _code_to_json(sub.codes[cid])
        for cid in sorted(sub.codes, key=label_sort_key)
    }
    return obj


def structure_to_json(s: CodingStructure, include_metadata: bool = True) -> dict:
    """Canonical dict form: label keys in natural order, stable field order."""
    obj: dict = {}
    for rid in s.root_ids():
        root = s.roots[rid]
        if s.level is Level.CODE:
            obj[rid] = _code_to_json(root)
        elif s.level is Level.SUBTHEME:
            obj[rid] = _subtheme_to_json(root, include_definition=True)
        else:
            obj[rid] = {
                "name": root.name,
                "definition": root.definition,
                "subthemes": {
                    sid: _subtheme_to_json(root.subthemes[sid], include_definition=False)
                    for sid in sorted(root.subthemes, key=label_sort_key)
                },
            }
    if include_metadata and s.metadata is not None:
        obj["metadata"] = {
            "what_llm_did": {
                "main_actions": s.metadata.main_actions,
                "examples": s.metadata.examples,
            },
            "self_reflection": {
                "confident_results": s.metadata.confident_results,
                "uncertain_results": s.metadata.uncertain_results,
                "recommended_review": s.metadata.recommended_review,
            },
        }
    return obj


def serialize(
    s: CodingStructure,
    include_metadata: bool = True,
    modification_summary: str | None = None,
) -> str:
    """Canonical JSON text; parse(serialize(s)) is identity on valid s."""
    obj = structure_to_json(s, include_metadata=include_metadata)
    if modification_summary is not None:
        obj["modification_summary"] = modification_summary
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def structure_digest(s: CodingStructure) -> str:
    return hashlib.sha256(serialize(s).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ParsedReply:
    """Parse output: the hierarchy plus side channels."""

    structure: CodingStructure
    modification_summary: str | None = None


_METADATA_FIELDS = {
    "what_llm_did": ("main_actions", "examples"),
    "self_reflection": ("confident_results", "uncertain_results", "recommended_review"),
}


def _require_str(obj: dict, key: str, path: str, missing: list[str]) -> str:
    value = obj.get(key)
    if not isinstance(value, str):
        missing.append(f"{path}.{key}")
        return ""
    return value


def _parse_code(cid: str, obj, source_interview: str, missing: list[str]) -> Code:
    if not isinstance(obj, dict):
        missing.append(cid)
        return Code(id=cid, name="", chunks=())
    name = _require_str(obj, "name", cid, missing)
    chunks_raw = obj.get("chunks")
    if not isinstance(chunks_raw, list) or not all(isinstance(c, str) for c in chunks_raw):
        missing.append(f"{cid}.chunks")
        chunks_raw = []
    chunks = tuple(Chunk(text=c, source_interview=source_interview) for c in chunks_raw)
    return Code(id=cid, name=name, chunks=chunks)


def _parse_subtheme(sid: str, obj, source_interview: str, missing: list[str]) -> SubTheme:
    if not isinstance(obj, dict):
        missing.append(sid)
        return SubTheme(id=sid, name="", definition="", codes={})
    name = _require_str(obj, "name", sid, missing)
    definition = obj.get("definition", "")
    if not isinstance(definition, str):
        missing.append(f"{sid}.definition")
        definition = ""
    codes_raw = obj.get("codes")
    if not isinstance(codes_raw, dict):
        missing.append(f"{sid}.codes")
        codes_raw = {}
    codes = {}
    for cid, cobj in codes_raw.items():
        if not _label_matches(cid, Level.CODE):
            missing.append(f"{sid}.codes.{cid} (not a Code label)")
            continue
        codes[cid] = _parse_code(cid, cobj, source_interview, missing)
    return SubTheme(id=sid, name=name, definition=definition, codes=codes)


def _label_matches(label: str, level: Level) -> bool:
    m = _LABEL_RE.match(label)
    return bool(m) and m.group(1) == level.label_prefix


def _parse_metadata(obj, missing: list[str]) -> StageMetadata:
    values = {}
    if not isinstance(obj, dict):
        missing.append("metadata")
        obj = {}
    for group, fields in _METADATA_FIELDS.items():
        sub = obj.get(group)
        if not isinstance(sub, dict):
            missing.extend(f"metadata.{group}.{f}" for f in fields)
            sub = {}
        for f in fields:
            value = sub.get(f)
            if not isinstance(value, str):
                missing.append(f"metadata.{group}.{f}")
                value = ""
            values[f] = value
    return StageMetadata(**values)


def parse(
    text: str,
    source_interview: str = "",
    fill_missing_metadata: bool = False,
) -> ParsedReply:
    """Parse agent-shaped JSON into a validated-shape structure.

    "metadata" and "modification_summary" are extracted into side channels.
    With fill_missing_metadata, absent metadata fields become empty strings
    instead of schema errors (callers must tag the repair).
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise StructureParseError(f"malformed JSON: {e.msg}", offset=e.pos) from e
    if not isinstance(raw, dict):
        raise SchemaError("top level is not a JSON object")

    missing: list[str] = []
    metadata_raw = raw.get("metadata")
    modification_summary = raw.get("modification_summary")
    if modification_summary is not None and not isinstance(modification_summary, str):
        raise SchemaError("modification_summary is not a string")

    entries = {k: v for k, v in raw.items() if k not in ("metadata", "modification_summary")}
    levels = {
        m.group(1) for m in (_LABEL_RE.match(k) for k in entries) if m is not None
    }
    unknown = [k for k in entries if not _LABEL_RE.match(k)]
    if unknown:
        raise SchemaError(f"unrecognized top-level keys: {sorted(unknown)}")
    if not levels:
        raise SchemaError("no structure entries (expected Code/Sub-Theme/Theme keys)")
    if len(levels) > 1:
        raise SchemaError(f"mixed levels at top level: {sorted(levels)}")
    prefix = levels.pop()
    level = {v.label_prefix: v for v in Level}[prefix]

    roots: dict[str, Code | SubTheme | Theme] = {}
    for key in sorted(entries, key=label_sort_key):
        obj = entries[key]
        if level is Level.CODE:
            roots[key] = _parse_code(key, obj, source_interview, missing)
        elif level is Level.SUBTHEME:
            roots[key] = _parse_subtheme(key, obj, source_interview, missing)
        else:
            if not isinstance(obj, dict):
                missing.append(key)
                continue
            name = _require_str(obj, "name", key, missing)
            definition = obj.get("definition", "")
            if not isinstance(definition, str):
                missing.append(f"{key}.definition")
                definition = ""
            subs_raw = obj.get("subthemes")
            if not isinstance(subs_raw, dict):
                missing.append(f"{key}.subthemes")
                subs_raw = {}
            subthemes = {}
            for sid, sobj in subs_raw.items():
                if not _label_matches(sid, Level.SUBTHEME):
                    missing.append(f"{key}.subthemes.{sid} (not a Sub-Theme label)")
                    continue
                subthemes[sid] = _parse_subtheme(sid, sobj, source_interview, missing)
            roots[key] = Theme(id=key, name=name, definition=definition, subthemes=subthemes)

    metadata = None
    if metadata_raw is not None:
        meta_missing: list[str] = []
        metadata = _parse_metadata(metadata_raw, meta_missing)
        if meta_missing and not fill_missing_metadata:
            missing.extend(meta_missing)

    if missing:
        raise SchemaError(f"missing or mistyped fields: {missing}", missing=missing)

    return ParsedReply(
        structure=CodingStructure(level=level, roots=roots, metadata=metadata),
        modification_summary=modification_summary,
    )


def require_valid(s: CodingStructure) -> CodingStructure:
    """Raise ContractError unless the structure validates."""
    report = validate(s)
    if not report.ok:
        raise ContractError("invalid structure: " + "; ".join(report.messages()))
    return s


# --- canonical-order normalization ---------------------------------------

def canonical(s: CodingStructure) -> CodingStructure:
    """Equivalent structure with chunks sorted within each code.

    Sibling order never affects equality (dict equality ignores insertion
    order) but chunk lists are ordered; operations that move chunks append,
    so replayed results are compared in this canonical form.
    """

    def canon_code(code: Code) -> Code:
        return replace(code, chunks=tuple(sorted(code.chunks, key=lambda c: c.text)))

    def canon_sub(sub: SubTheme) -> SubTheme:
        return replace(sub, codes={cid: canon_code(c) for cid, c in sub.codes.items()})

    roots: dict[str, Code | SubTheme | Theme] = {}
    for rid, root in s.roots.items():
        if s.level is Level.CODE:
            roots[rid] = canon_code(root)
        elif s.level is Level.SUBTHEME:
            roots[rid] = canon_sub(root)
        else:
            roots[rid] = replace(
                root, subthemes={sid: canon_sub(sub) for sid, sub in root.subthemes.items()}
            )
    return replace(s, roots=roots)


def structures_match(a: CodingStructure, b: CodingStructure) -> bool:
    """Equality up to chunk order within codes (and sibling order)."""
    return canonical(a) == canonical(b)
