"""The five-operation algebra over coding structures.

check_refinement decides whether a refined structure is a legal product of
keep/rename/reassign/merge/split edits; diff infers an operation log from a
legal (before, after) pair; replay applies a log deterministically.

Level-specific preservation rules:
  code level      the chunk multiset is conserved and no chunk text changes
  sub-theme level every code is preserved exactly (id, name, chunk multiset)
  theme level     every sub-theme is preserved exactly (id, name, code set),
                  and every code inside them

diff matches entities by content fingerprint first and name second, detects
merges and splits as exact covers, and explains any remaining movement
between surviving entities as standalone reassigns.  Movement implied by a
merge or split is never additionally counted as a reassign.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

from .errors import ContractError, ReplayError
from .model import (
    Chunk,
    Code,
    CodingStructure,
    Level,
    SubTheme,
    Theme,
    Violation,
    chunk_multiset,
    label_sort_key,
    structures_match,
)


class OpKind(str, Enum):
    KEEP = "keep"
    RENAME = "rename"
    REASSIGN = "reassign"
    MERGE = "merge"
    SPLIT = "split"


#: Kinds reported in the per-interview operation matrix (Keep excluded).
COUNTED_KINDS = (OpKind.RENAME, OpKind.MERGE, OpKind.SPLIT, OpKind.REASSIGN)


@dataclass(frozen=True)
class SplitPart:
    """One part of a split: its id, display fields, and member keys.

    Member keys are chunk texts at code level (one entry per occurrence) and
    child ids at higher levels.
    """

    new_id: str
    name: str
    members: tuple[str, ...]
    definition: str = ""


@dataclass(frozen=True)
class StructOp:
    """A single structural edit.

    subjects holds entity ids for keep/rename/merge/split; for reassign it
    holds the one moved element key (a chunk text or a child id).  new_id
    relabels a surviving entity (keep/rename only).
    """

    kind: OpKind
    level: Level
    subjects: tuple[str, ...]
    new_name: str | None = None
    new_id: str | None = None
    new_definition: str | None = None
    result_id: str | None = None
    source_parent: str | None = None
    target_parent: str | None = None
    partition: tuple[SplitPart, ...] = ()

    def __post_init__(self):
        k = self.kind
        if k is OpKind.RENAME and (len(self.subjects) != 1 or self.new_name is None):
            raise ContractError("rename takes one subject and a new name")
        if k is OpKind.MERGE and (len(self.subjects) < 2 or self.result_id is None):
            raise ContractError("merge takes >=2 subjects and a result id")
        if k is OpKind.SPLIT:
            if len(self.subjects) != 1 or len(self.partition) < 2:
                raise ContractError("split takes one subject and >=2 parts")
            if any(not part.members for part in self.partition):
                raise ContractError("split parts must be non-empty")
        if k is OpKind.REASSIGN:
            if len(self.subjects) != 1 or not self.source_parent or not self.target_parent:
                raise ContractError("reassign takes one subject, a source, and a target")
            if self.source_parent == self.target_parent:
                raise ContractError("reassign target equals source")


@dataclass(frozen=True)
class OperationLog:
    ops: tuple[StructOp, ...]

    @property
    def counts(self) -> dict[OpKind, int]:
        tally = Counter(op.kind for op in self.ops)
        return {kind: tally.get(kind, 0) for kind in OpKind}

    def to_json(self) -> dict:
        return {
            "operations": [_op_to_json(op) for op in self.ops],
            "counts": {kind.value: n for kind, n in self.counts.items()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "OperationLog":
        return cls(ops=tuple(_op_from_json(o) for o in obj.get("operations", [])))


def _op_to_json(op: StructOp) -> dict:
    out: dict = {"kind": op.kind.value, "level": op.level.value, "subjects": list(op.subjects)}
    for key in ("new_name", "new_id", "new_definition", "result_id", "source_parent", "target_parent"):
        value = getattr(op, key)
        if value is not None:
            out[key] = value
    if op.partition:
        out["partition"] = [
            {"id": p.new_id, "name": p.name, "members": list(p.members), "definition": p.definition}
            for p in op.partition
        ]
    return out


def _op_from_json(obj: dict) -> StructOp:
    return StructOp(
        kind=OpKind(obj["kind"]),
        level=Level(obj["level"]),
        subjects=tuple(obj["subjects"]),
        new_name=obj.get("new_name"),
        new_id=obj.get("new_id"),
        new_definition=obj.get("new_definition"),
        result_id=obj.get("result_id"),
        source_parent=obj.get("source_parent"),
        target_parent=obj.get("target_parent"),
        partition=tuple(
            SplitPart(
                new_id=p["id"],
                name=p["name"],
                members=tuple(p["members"]),
                definition=p.get("definition", ""),
            )
            for p in obj.get("partition", ())
        ),
    )


# --- legality --------------------------------------------------------------


@dataclass(frozen=True)
class RefinementReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def messages(self) -> list[str]:
        return [str(v) for v in self.violations]


def _clip(text: str, n: int = 48) -> str:
    return text if len(text) <= n else text[: n - 1] + "…"


def _compare_code_pair(path: str, before: Code, after: Code, out: list[Violation]) -> None:
    if before.name != after.name:
        out.append(Violation(path, f"code name modified: {before.name!r} -> {after.name!r}"))
    b, a = Counter(before.chunk_texts()), Counter(after.chunk_texts())
    for text in sorted(b - a):
        out.append(Violation(path, f"chunk deleted: {_clip(text)!r}"))
    for text in sorted(a - b):
        out.append(Violation(path, f"chunk added: {_clip(text)!r}"))


def _compare_code_maps(before: CodingStructure, after: CodingStructure, out: list[Violation]) -> None:
    b_codes = {code.id: (path, code) for path, _, code in before.iter_codes()}
    a_codes = {code.id: (path, code) for path, _, code in after.iter_codes()}
    for cid in sorted(b_codes.keys() - a_codes.keys(), key=label_sort_key):
        out.append(Violation(b_codes[cid][0], "code deleted"))
    for cid in sorted(a_codes.keys() - b_codes.keys(), key=label_sort_key):
        out.append(Violation(a_codes[cid][0], "code added"))
    for cid in sorted(b_codes.keys() & a_codes.keys(), key=label_sort_key):
        _compare_code_pair(a_codes[cid][0], b_codes[cid][1], a_codes[cid][1], out)


def check_refinement(before: CodingStructure, after: CodingStructure) -> RefinementReport:
    """Legality of `after` as a five-operation refinement of `before`."""
    if before.level is not after.level:
        raise ContractError(
            f"level mismatch: before is {before.level.value}, after is {after.level.value}"
        )
    out: list[Violation] = []
    if before.level is Level.CODE:
        b, a = chunk_multiset(before), chunk_multiset(after)
        b_paths: dict[str, str] = {}
        for path, _, code in before.iter_codes():
            for text in code.chunk_texts():
                b_paths.setdefault(text, path)
        a_paths: dict[str, str] = {}
        for path, _, code in after.iter_codes():
            for text in code.chunk_texts():
                a_paths.setdefault(text, path)
        for text, n in sorted((b - a).items()):
            suffix = f" (x{n})" if n > 1 else ""
            out.append(Violation(b_paths[text], f"chunk deleted: {_clip(text)!r}{suffix}"))
        for text, n in sorted((a - b).items()):
            suffix = f" (x{n})" if n > 1 else ""
            out.append(Violation(a_paths[text], f"chunk added: {_clip(text)!r}{suffix}"))
    else:
        _compare_code_maps(before, after, out)
        if before.level is Level.THEME:
            b_subs = {sub.id: (path, sub) for path, _, sub in before.iter_subthemes()}
            a_subs = {sub.id: (path, sub) for path, _, sub in after.iter_subthemes()}
            for sid in sorted(b_subs.keys() - a_subs.keys(), key=label_sort_key):
                out.append(Violation(b_subs[sid][0], "sub-theme deleted"))
            for sid in sorted(a_subs.keys() - b_subs.keys(), key=label_sort_key):
                out.append(Violation(a_subs[sid][0], "sub-theme added"))
            for sid in sorted(b_subs.keys() & a_subs.keys(), key=label_sort_key):
                _, bsub = b_subs[sid]
                apath, asub = a_subs[sid]
                if bsub.name != asub.name:
                    out.append(
                        Violation(apath, f"sub-theme name modified: {bsub.name!r} -> {asub.name!r}")
                    )
                if set(bsub.codes) != set(asub.codes):
                    moved = sorted(set(bsub.codes) ^ set(asub.codes), key=label_sort_key)
                    out.append(Violation(apath, f"sub-theme code set modified: {moved}"))
    return RefinementReport(tuple(out))


def require_legal(before: CodingStructure, after: CodingStructure) -> None:
    report = check_refinement(before, after)
    if not report.ok:
        raise ContractError("refinement is not legal: " + "; ".join(report.messages()[:5]))


# --- replay -----------------------------------------------------------------


@dataclass
class _Ent:
    name: str
    definition: str
    chunks: list[Chunk] = field(default_factory=list)
    children: dict = field(default_factory=dict)

    def size(self) -> int:
        return len(self.chunks) if self.chunks else len(self.children)


class _Working:
    """Mutable view of a structure for applying operations."""

    def __init__(self, s: CodingStructure):
        self.level = s.level
        self.ents: dict[str, _Ent] = {}
        for rid in s.root_ids():
            root = s.roots[rid]
            if s.level is Level.CODE:
                self.ents[rid] = _Ent(name=root.name, definition="", chunks=list(root.chunks))
            elif s.level is Level.SUBTHEME:
                self.ents[rid] = _Ent(
                    name=root.name, definition=root.definition, children=dict(root.codes)
                )
            else:
                self.ents[rid] = _Ent(
                    name=root.name, definition=root.definition, children=dict(root.subthemes)
                )

    def _get(self, label: str, index: int) -> _Ent:
        try:
            return self.ents[label]
        except KeyError:
            raise ReplayError(f"op {index}: no entity {label!r}", op_index=index) from None

    def apply(self, op: StructOp, index: int) -> None:
        if op.level is not self.level:
            raise ReplayError(f"op {index}: level {op.level.value} does not match structure", index)
        if op.kind in (OpKind.KEEP, OpKind.RENAME):
            ent = self._get(op.subjects[0], index)
            if op.new_name is not None:
                ent.name = op.new_name
            if op.new_definition is not None:
                ent.definition = op.new_definition
            if op.new_id is not None and op.new_id != op.subjects[0]:
                if op.new_id in self.ents:
                    raise ReplayError(f"op {index}: relabel target {op.new_id!r} in use", index)
                self.ents[op.new_id] = self.ents.pop(op.subjects[0])
        elif op.kind is OpKind.REASSIGN:
            src = self._get(op.source_parent, index)
            dst = self._get(op.target_parent, index)
            key = op.subjects[0]
            if self.level is Level.CODE:
                for i, chunk in enumerate(src.chunks):
                    if chunk.text == key:
                        dst.chunks.append(src.chunks.pop(i))
                        break
                else:
                    raise ReplayError(f"op {index}: no chunk {key!r} in {op.source_parent}", index)
            else:
                if key not in src.children:
                    raise ReplayError(f"op {index}: no child {key!r} in {op.source_parent}", index)
                dst.children[key] = src.children.pop(key)
        elif op.kind is OpKind.MERGE:
            parts = [self._get(s, index) for s in op.subjects]
            merged = _Ent(
                name=op.new_name if op.new_name is not None else parts[0].name,
                definition=op.new_definition
                if op.new_definition is not None
                else parts[0].definition,
            )
            for part in parts:
                merged.chunks.extend(part.chunks)
                merged.children.update(part.children)
            for s in op.subjects:
                del self.ents[s]
            if op.result_id in self.ents:
                raise ReplayError(f"op {index}: merge result id {op.result_id!r} in use", index)
            self.ents[op.result_id] = merged
        elif op.kind is OpKind.SPLIT:
            ent = self._get(op.subjects[0], index)
            if self.level is Level.CODE:
                pool = Counter(c.text for c in ent.chunks)
                need: Counter = Counter()
                for part in op.partition:
                    need.update(part.members)
                if need != pool:
                    raise ReplayError(f"op {index}: partition does not cover the subject", index)
                by_text: dict[str, list[Chunk]] = {}
                for chunk in ent.chunks:
                    by_text.setdefault(chunk.text, []).append(chunk)
                del self.ents[op.subjects[0]]
                for part in op.partition:
                    if part.new_id in self.ents:
                        raise ReplayError(f"op {index}: split part id {part.new_id!r} in use", index)
                    chunks = [by_text[m].pop(0) for m in part.members]
                    self.ents[part.new_id] = _Ent(
                        name=part.name, definition=part.definition, chunks=chunks
                    )
            else:
                need_ids = [m for part in op.partition for m in part.members]
                if sorted(need_ids) != sorted(ent.children) or len(set(need_ids)) != len(need_ids):
                    raise ReplayError(f"op {index}: partition does not cover the subject", index)
                children = dict(ent.children)
                del self.ents[op.subjects[0]]
                for part in op.partition:
                    if part.new_id in self.ents:
                        raise ReplayError(f"op {index}: split part id {part.new_id!r} in use", index)
                    self.ents[part.new_id] = _Ent(
                        name=part.name,
                        definition=part.definition,
                        children={m: children[m] for m in part.members},
                    )

    def to_structure(self) -> CodingStructure:
        roots: dict[str, Code | SubTheme | Theme] = {}
        for label in sorted(self.ents, key=label_sort_key):
            ent = self.ents[label]
            if self.level is Level.CODE:
                roots[label] = Code(id=label, name=ent.name, chunks=tuple(ent.chunks))
            elif self.level is Level.SUBTHEME:
                roots[label] = SubTheme(
                    id=label, name=ent.name, definition=ent.definition, codes=dict(ent.children)
                )
            else:
                roots[label] = Theme(
                    id=label, name=ent.name, definition=ent.definition, subthemes=dict(ent.children)
                )
        return CodingStructure(level=self.level, roots=roots, metadata=None)


def replay(before: CodingStructure, log: OperationLog) -> CodingStructure:
    """Apply log ops in order; an empty log returns the structure unchanged."""
    working = _Working(before)
    for i, op in enumerate(log.ops):
        working.apply(op, i)
    return working.to_structure()


# --- diff -------------------------------------------------------------------


def _payloads(s: CodingStructure) -> dict[str, Counter]:
    out: dict[str, Counter] = {}
    for rid in s.root_ids():
        root = s.roots[rid]
        if s.level is Level.CODE:
            out[rid] = Counter(root.chunk_texts())
        elif s.level is Level.SUBTHEME:
            out[rid] = Counter(root.codes.keys())
        else:
            out[rid] = Counter(root.subthemes.keys())
    return out


def _contains(big: Counter, small: Counter) -> bool:
    return all(big.get(k, 0) >= n for k, n in small.items())


def _exact_cover(target: Counter, candidates: list[str], payloads: dict[str, Counter]):
    """First exact cover of target by >=2 candidates, preferring earlier ones."""
    result: list[str] | None = None

    def dfs(i: int, remaining: Counter, chosen: list[str]) -> bool:
        nonlocal result
        if not remaining:
            if len(chosen) >= 2:
                result = list(chosen)
                return True
            return False
        if i == len(candidates):
            return False
        cid = candidates[i]
        if _contains(remaining, payloads[cid]):
            chosen.append(cid)
            if dfs(i + 1, remaining - payloads[cid], chosen):
                return True
            chosen.pop()
        return dfs(i + 1, remaining, chosen)

    dfs(0, Counter(target), [])
    return result


def _member_list(counter: Counter) -> list[str]:
    out: list[str] = []
    for key in sorted(counter):
        out.extend([key] * counter[key])
    return out


class _Emitter:
    """Applies ops to a simulated working copy as they are emitted."""

    def __init__(self, before: CodingStructure):
        self.working = _Working(before)
        self.ops: list[StructOp] = []
        self.pending: list[tuple[str, str]] = []  # (temp label, final label)
        self.temp_n = 0

    def emit(self, op: StructOp) -> None:
        self.working.apply(op, len(self.ops))
        self.ops.append(op)

    def claim(self, wanted: str, vacating: tuple[str, ...] = ()) -> str:
        """Label for a construct that should end up at `wanted`.

        Returns `wanted` when free (or about to be freed by the same op);
        otherwise a temp label with a relabel deferred to flush().
        """
        occupant = wanted in self.working.ents and wanted not in vacating
        claimed = any(final == wanted for _, final in self.pending)
        if not occupant and not claimed:
            return wanted
        self.temp_n += 1
        temp = f"#tmp{self.temp_n}"
        self.pending.append((temp, wanted))
        return temp

    def flush(self) -> None:
        pending = list(self.pending)
        self.pending = []
        while pending:
            for i, (temp, final) in enumerate(pending):
                if final not in self.working.ents:
                    self.emit(
                        StructOp(
                            kind=OpKind.KEEP,
                            level=self.working.level,
                            subjects=(temp,),
                            new_id=final,
                        )
                    )
                    pending.pop(i)
                    break
            else:
                raise ContractError("diff internal error: relabel deadlock")


def diff(before: CodingStructure, after: CodingStructure) -> OperationLog:
    """Infer an operation log such that replay(before, log) matches after.

    Deterministic for fixed inputs and insensitive to sibling insertion
    order.  Raises ContractError when the pair is not a legal refinement.
    """
    require_legal(before, after)
    level = before.level
    b_pay, a_pay = _payloads(before), _payloads(after)
    b_name = {rid: before.roots[rid].name for rid in before.roots}
    a_name = {rid: after.roots[rid].name for rid in after.roots}
    b_def = {
        rid: ("" if level is Level.CODE else before.roots[rid].definition) for rid in before.roots
    }
    a_def = {
        rid: ("" if level is Level.CODE else after.roots[rid].definition) for rid in after.roots
    }
    order_b = sorted(b_pay, key=label_sort_key)
    order_a = sorted(a_pay, key=label_sort_key)
    used_b: set[str] = set()
    used_a: set[str] = set()
    pairs: list[tuple[str, str]] = []
    merges: list[tuple[list[str], str]] = []
    splits: list[tuple[str, list[str]]] = []

    # Exact content matches: the same entity, kept or renamed.
    for aid in order_a:
        cands = [bid for bid in order_b if bid not in used_b and b_pay[bid] == a_pay[aid]]
        if not cands:
            continue

        def rank(bid: str, aid=aid):
            name_eq = b_name[bid] == a_name[aid]
            id_eq = bid == aid
            tier = 0 if (id_eq and name_eq) else 1 if name_eq else 2 if id_eq else 3
            return (tier, label_sort_key(bid))

        bid = min(cands, key=rank)
        used_b.add(bid)
        used_a.add(aid)
        pairs.append((bid, aid))

    # Merges: an after entity exactly covered by >=2 before entities.
    for aid in order_a:
        if aid in used_a:
            continue
        cands = [
            bid for bid in order_b if bid not in used_b and _contains(a_pay[aid], b_pay[bid])
        ]
        cover = _exact_cover(a_pay[aid], cands, b_pay)
        if cover:
            used_a.add(aid)
            used_b.update(cover)
            merges.append((cover, aid))

    # Splits: a before entity exactly covered by >=2 after entities.
    for bid in order_b:
        if bid in used_b:
            continue
        cands = [
            aid for aid in order_a if aid not in used_a and _contains(b_pay[bid], a_pay[aid])
        ]
        cover = _exact_cover(b_pay[bid], cands, a_pay)
        if cover:
            used_b.add(bid)
            used_a.update(cover)
            splits.append((bid, cover))

    leftover_b = [bid for bid in order_b if bid not in used_b]
    leftover_a = [aid for aid in order_a if aid not in used_a]

    # Element flow between leftovers: occurrences of each element key paired
    # across sides in canonical holder order.
    flow: dict[tuple[str, str], Counter] = {}
    if leftover_b:
        keys: set[str] = set()
        for bid in leftover_b:
            keys.update(b_pay[bid])
        for key in sorted(keys):
            sources = [(bid, b_pay[bid][key]) for bid in leftover_b if b_pay[bid].get(key)]
            sinks = [(aid, a_pay[aid][key]) for aid in leftover_a if a_pay[aid].get(key)]
            si = 0
            room = sinks[0][1] if sinks else 0
            for bid, n in sources:
                while n > 0 and si < len(sinks):
                    take = min(n, room)
                    flow.setdefault((bid, sinks[si][0]), Counter())[key] += take
                    n -= take
                    room -= take
                    if room == 0:
                        si += 1
                        room = sinks[si][1] if si < len(sinks) else 0

    def overlap(bid: str, aid: str) -> int:
        return sum(flow.get((bid, aid), Counter()).values())

    # Survivor pairing among leftovers, greedy by shared content.
    pair_of_b: dict[str, str] = {}
    pair_of_a: dict[str, str] = {}
    for bid, aid in sorted(
        ((b, a) for b in leftover_b for a in leftover_a if overlap(b, a) > 0),
        key=lambda p: (-overlap(p[0], p[1]), label_sort_key(p[0]), label_sort_key(p[1])),
    ):
        if bid not in pair_of_b and aid not in pair_of_a:
            pair_of_b[bid] = aid
            pair_of_a[aid] = bid
    spare_b = [bid for bid in leftover_b if bid not in pair_of_b]
    spare_a = [aid for aid in leftover_a if aid not in pair_of_a]
    for bid, aid in zip(spare_b, spare_a):
        pair_of_b[bid] = aid
        pair_of_a[aid] = bid
    extra_b = [bid for bid in leftover_b if bid not in pair_of_b]
    extra_a = [aid for aid in leftover_a if aid not in pair_of_a]

    # Spare before entities are absorbed (merged) into the paired construct
    # receiving most of their content.
    absorbed_into: dict[str, list[str]] = {}
    for bid in extra_b:
        targets = [aid for aid in pair_of_a if overlap(bid, aid) > 0]
        if not targets:
            raise ContractError("diff internal error: unplaceable entity " + bid)
        target = min(targets, key=lambda aid: (-overlap(bid, aid), label_sort_key(aid)))
        absorbed_into.setdefault(target, []).append(bid)

    def sources_of(bid: str) -> list[str]:
        return [bid] + absorbed_into.get(pair_of_b[bid], [])

    def donor_flow(aid_extra: str, bid: str) -> int:
        return sum(overlap(src, aid_extra) for src in sources_of(bid))

    # Spare after entities are carved (split) out of the paired construct
    # donating most of their content; re-pair when a donor would keep nothing.
    donor_parts: dict[str, list[str]] = {}
    for _ in range(2 * len(extra_a) + 2):
        donor_parts = {}
        for aid in sorted(extra_a, key=label_sort_key):
            donors = [bid for bid in pair_of_b if donor_flow(aid, bid) > 0]
            if not donors:
                raise ContractError("diff internal error: no donor for " + aid)
            donor = min(donors, key=lambda bid: (-donor_flow(aid, bid), label_sort_key(bid)))
            donor_parts.setdefault(donor, []).append(aid)
        repaired = False
        for donor, parts in donor_parts.items():
            total = sum(sum(b_pay[src].values()) for src in sources_of(donor))
            carved = sum(donor_flow(aid, donor) for aid in parts)
            if total == carved:
                partner = pair_of_b[donor]
                newcomer = sorted(parts, key=label_sort_key)[0]
                pair_of_b[donor] = newcomer
                del pair_of_a[partner]
                pair_of_a[newcomer] = donor
                extra_a.remove(newcomer)
                extra_a.append(partner)
                repaired = True
                break
        if not repaired:
            break
    else:
        raise ContractError("diff internal error: donor assignment did not settle")

    emitter = _Emitter(before)

    for cover, aid in merges:
        emitter.emit(
            StructOp(
                kind=OpKind.MERGE,
                level=level,
                subjects=tuple(cover),
                result_id=emitter.claim(aid, vacating=tuple(cover)),
                new_name=a_name[aid],
                new_definition=a_def[aid] if level is not Level.CODE else None,
            )
        )
    for bid, cover in splits:
        parts = []
        for aid in cover:
            members = (
                tuple(after.roots[aid].chunk_texts())
                if level is Level.CODE
                else tuple(sorted(a_pay[aid], key=label_sort_key))
            )
            parts.append(
                SplitPart(
                    new_id=emitter.claim(aid, vacating=(bid,)),
                    name=a_name[aid],
                    members=members,
                    definition=a_def[aid] if level is not Level.CODE else "",
                )
            )
        emitter.emit(
            StructOp(kind=OpKind.SPLIT, level=level, subjects=(bid,), partition=tuple(parts))
        )

    # Surviving entities, in after order: keep/rename, absorb spares, carve parts.
    for bid, aid in sorted(pairs + list(pair_of_b.items()), key=lambda p: label_sort_key(p[1])):
        absorbed = sorted(absorbed_into.get(aid, []), key=label_sort_key)
        parts_for = sorted(donor_parts.get(bid, []), key=label_sort_key) if bid in pair_of_b else []
        current = bid
        if absorbed:
            result = emitter.claim(aid, vacating=tuple([bid] + absorbed)) if not parts_for else bid
            if parts_for:
                # The split below recreates the partner part; merge to a temp.
                emitter.temp_n += 1
                result = f"#tmp{emitter.temp_n}"
            emitter.emit(
                StructOp(
                    kind=OpKind.MERGE,
                    level=level,
                    subjects=tuple([bid] + absorbed),
                    result_id=result,
                    new_name=a_name[aid],
                    new_definition=a_def[aid] if level is not Level.CODE else None,
                )
            )
            current = result
        if parts_for:
            ent = emitter.working.ents[current]
            own = (
                Counter(c.text for c in ent.chunks)
                if level is Level.CODE
                else Counter(ent.children.keys())
            )
            part_specs = []
            taken: Counter = Counter()
            for part_aid in parts_for:
                members: Counter = Counter()
                for src in [bid] + absorbed:
                    members += flow.get((src, part_aid), Counter())
                taken += members
                part_specs.append((part_aid, members))
            remainder = own - taken
            if not remainder:
                raise ContractError("diff internal error: empty remainder for " + bid)
            partition = [
                SplitPart(
                    new_id=emitter.claim(aid, vacating=(current,)),
                    name=a_name[aid],
                    members=tuple(_member_list(remainder)),
                    definition=a_def[aid] if level is not Level.CODE else "",
                )
            ]
            for part_aid, members in part_specs:
                partition.append(
                    SplitPart(
                        new_id=emitter.claim(part_aid, vacating=(current,)),
                        name=a_name[part_aid],
                        members=tuple(_member_list(members)),
                        definition=a_def[part_aid] if level is not Level.CODE else "",
                    )
                )
            emitter.emit(
                StructOp(
                    kind=OpKind.SPLIT, level=level, subjects=(current,), partition=tuple(partition)
                )
            )
        elif not absorbed:
            renamed = b_name[bid] != a_name[aid]
            redefined = level is not Level.CODE and b_def[bid] != a_def[aid]
            relabel = bid != aid
            emitter.emit(
                StructOp(
                    kind=OpKind.RENAME if renamed else OpKind.KEEP,
                    level=level,
                    subjects=(bid,),
                    new_name=a_name[aid] if renamed else None,
                    new_id=emitter.claim(aid, vacating=(bid,)) if relabel else None,
                    new_definition=a_def[aid] if redefined else None,
                )
            )

    emitter.flush()

    # Standalone reassigns: leftover flow not already covered by a merge or
    # split.  All constructs now sit at their final after ids.
    moves: list[tuple[str, str, str, int]] = []
    for (bid, aid_dst), counter in flow.items():
        if bid in pair_of_b:
            home = pair_of_b[bid]
            carved = donor_parts.get(bid, [])
        else:
            # Absorbed spare: content rides along with its merge target.
            home = next(aid for aid, spares in absorbed_into.items() if bid in spares)
            carved = donor_parts.get(pair_of_a[home], [])
        if aid_dst == home or aid_dst in carved:
            continue
        for key, n in sorted(counter.items()):
            moves.append((home, aid_dst, key, n))
    for src, dst, key, n in sorted(moves):
        for _ in range(n):
            emitter.emit(
                StructOp(
                    kind=OpKind.REASSIGN,
                    level=level,
                    subjects=(key,),
                    source_parent=src,
                    target_parent=dst,
                )
            )

    log = OperationLog(ops=tuple(emitter.ops))
    result = emitter.working.to_structure()
    if not structures_match(result, CodingStructure(after.level, dict(after.roots), None)):
        raise ContractError("diff internal error: inferred log does not replay to after")
    return log


# --- aggregation --------------------------------------------------------------


def count_matrix(logs: list[OperationLog]) -> dict[OpKind, float]:
    """Arithmetic mean count per structure-changing kind across logs."""
    if not logs:
        raise ContractError("count_matrix needs at least one log")
    return {
        kind: sum(log.counts[kind] for log in logs) / len(logs) for kind in COUNTED_KINDS
    }


def count_matrix_csv(rows: dict[str, list[OperationLog]]) -> str:
    """CSV with one row per condition and one column per operation kind."""
    lines = ["condition," + ",".join(kind.value for kind in COUNTED_KINDS)]
    for label in rows:
        means = count_matrix(rows[label])
        lines.append(label + "," + ",".join(f"{means[kind]:.4f}" for kind in COUNTED_KINDS))
    return "\n".join(lines) + "\n"


def log_to_text(log: OperationLog) -> str:
    return json.dumps(log.to_json(), indent=2, ensure_ascii=False) + "\n"
