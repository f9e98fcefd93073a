"""Deterministic offline backend: a scripted stand-in for a chat model.

Given a rendered prompt it identifies the requesting agent, extracts the
input data, and produces a legal JSON reply.  Coding replies chunk the
transcript by paragraph; debriefing replies apply a fixed per-perspective
edit recipe (built as operations and replayed, so legality holds by
construction).  Useful for recording replay cassettes, offline demos, and
tests; every reply is a pure function of the prompt.
"""

from __future__ import annotations

import json
import math

from . import model as _model
from .errors import ContractError
from .gateway import ModelConfig
from .model import CodingStructure, Level, parse, serialize, structure_to_json
from .ops import OperationLog, OpKind, SplitPart, StructOp, replay


_CODING_MARKS = {
    "Please assist with organizing qualitative data": Level.CODE,
    "perform axial coding to generate sub-themes": Level.SUBTHEME,
    "developing high-level descriptive themes": Level.THEME,
}
_DEBRIEF_STAGE_MARKS = {
    "Axial Coding Results: ": Level.CODE,
    "Sub-theme Results: ": Level.SUBTHEME,
    "Theme Results: ": Level.THEME,
}
_PERSPECTIVE_MARKS = {
    "You are a theoretical perspective": "theory",
    "You are a practical perspective": "applied",
    "You are a data-driven perspective": "data",
    "You are a qualitative analysis reviewer.": "selfrefine",
}


def _extract_json(prompt: str, marker: str) -> str:
    start = prompt.index(marker) + len(marker)
    brace = prompt.index("{", start)
    _, end = json.JSONDecoder().raw_decode(prompt, brace)
    return prompt[brace:end]


def _extract_block(prompt: str, marker: str, terminator: str) -> str:
    start = prompt.index(marker) + len(marker)
    end = prompt.index(terminator, start)
    return prompt[start:end].strip()


def _words(text: str, n: int) -> str:
    body = text
    for tag in ("R: ", "P: "):
        if body.startswith(tag):
            body = body[len(tag):]
    return " ".join(body.split()[:n])


_STOPWORDS = frozenset(
    "the and that with this have from they people when what like just your "
    "know about want does where their would there never honestly really "
    "which because until comes without going every there's".split()
)


def _content_words(text: str, k: int = 3) -> list[str]:
    counts: dict[str, int] = {}
    first_seen: dict[str, int] = {}
    for position, raw in enumerate(text.lower().split()):
        word = raw.strip(".,!?\"'():;")
        if len(word) >= 5 and word not in _STOPWORDS:
            counts[word] = counts.get(word, 0) + 1
            first_seen.setdefault(word, position)
    ranked = sorted(counts, key=lambda w: (-counts[w], first_seen[w]))
    return ranked[:k]


class ScriptedQdaBackend:
    """Transport-compatible callable producing deterministic legal replies."""

    def __init__(self, codes_per_interview: int = 4):
        self.codes_per_interview = codes_per_interview

    def __call__(self, messages: list[dict], config: ModelConfig) -> str:
        prompt = messages[-1]["content"]
        for mark, stage in _CODING_MARKS.items():
            if mark in prompt:
                return self._coding_reply(prompt, stage)
        for mark, perspective in _PERSPECTIVE_MARKS.items():
            if prompt.startswith(mark):
                for stage_mark, stage in _DEBRIEF_STAGE_MARKS.items():
                    if stage_mark in prompt:
                        return self._debrief_reply(prompt, stage, stage_mark, perspective)
        raise ContractError("scripted backend cannot identify the requesting agent")

    # -- coding agent ------------------------------------------------------

    def _coding_reply(self, prompt: str, stage: Level) -> str:
        if stage is Level.CODE:
            transcript = _extract_block(prompt, "Uploaded Data: ", "\n\nResearch Questions:")
            return self._code_stage(transcript)
        if stage is Level.SUBTHEME:
            structure = parse(_extract_json(prompt, "Uploaded Data: ")).structure
            return self._subtheme_stage(structure)
        structure = parse(_extract_json(prompt, "Sub-Themes Need To Be Analysed: ")).structure
        return self._theme_stage(structure)

    def _metadata(self, kind: str, names: list[str]) -> dict:
        first = names[0] if names else "the first group"
        last = names[-1] if names else "the last group"
        return {
            "what_llm_did": {
                "main_actions": f"Grouped the material into {len(names)} {kind} by shared topic.",
                "examples": f"The group named '{first}' holds passages on one topic; "
                f"'{last}' holds a distinct one.",
            },
            "self_reflection": {
                "confident_results": f"Most confident about '{first}' because its passages share vocabulary.",
                "uncertain_results": f"Least confident about '{last}'; its passages are more varied.",
                "recommended_review": "Check boundary passages that mention several topics at once.",
            },
        }

    def _code_stage(self, transcript: str) -> str:
        paragraphs = [p.strip() for p in transcript.split("\n\n") if p.strip()]
        if not paragraphs:
            paragraphs = [transcript.strip() or "(empty transcript)"]
        n_codes = min(self.codes_per_interview, len(paragraphs))
        per = math.ceil(len(paragraphs) / n_codes)
        reply: dict = {}
        names = []
        for i in range(n_codes):
            group = paragraphs[i * per : (i + 1) * per]
            if not group:
                break
            top = _content_words(" ".join(group)) or [_words(group[0], 2).lower()]
            name = " ".join(top).capitalize()
            names.append(name)
            reply[f"Code {i + 1}"] = {"name": name, "chunks": group}
        reply["metadata"] = self._metadata("open codes", names)
        return json.dumps(reply, indent=2, ensure_ascii=False)

    def _subtheme_stage(self, codes: CodingStructure) -> str:
        ids = codes.root_ids()
        reply: dict = {}
        names = []
        per = 2
        for i in range(0, len(ids), per):
            group = ids[i : i + per]
            lead = codes.roots[group[0]].name
            name = f"Accounts around {_words(lead.removeprefix('Notes on '), 3)}"
            names.append(name)
            examples = " ".join(
                f"{k + 1}) Code [{codes.roots[cid].name}], because it shares the topic."
                for k, cid in enumerate(group)
            )
            reply[f"Sub-Theme {i // per + 1}"] = {
                "name": name,
                "definition": f"This sub-theme captures {name.lower()}. Examples: {examples}",
                "codes": {
                    cid: {"name": codes.roots[cid].name, "chunks": list(codes.roots[cid].chunk_texts())}
                    for cid in group
                },
            }
        reply["metadata"] = self._metadata("sub-themes", names)
        return json.dumps(reply, indent=2, ensure_ascii=False)

    def _theme_stage(self, subthemes: CodingStructure) -> str:
        ids = subthemes.root_ids()
        half = max(1, math.ceil(len(ids) / 2))
        groups = [ids[:half], ids[half:]]
        groups = [g for g in groups if g]
        reply: dict = {}
        names = []
        for i, group in enumerate(groups):
            lead = subthemes.roots[group[0]].name
            name = f"Overall pattern: {_words(lead.removeprefix('Accounts around '), 3)}"
            names.append(name)
            examples = " ".join(
                f"{k + 1}) Sub-Theme [{subthemes.roots[sid].name}], because it belongs to the pattern."
                for k, sid in enumerate(group)
            )
            reply[f"Theme {i + 1}"] = {
                "name": name,
                "definition": f"This theme captures {name.lower()}. Examples: {examples}",
                "subthemes": {
                    sid: {
                        "name": subthemes.roots[sid].name,
                        "codes": {
                            cid: {"name": code.name, "chunks": list(code.chunk_texts())}
                            for cid, code in subthemes.roots[sid].codes.items()
                        },
                    }
                    for sid in group
                },
            }
        reply["metadata"] = self._metadata("themes", names)
        return json.dumps(reply, indent=2, ensure_ascii=False)

    # -- debriefing agents ---------------------------------------------------

    def _debrief_reply(self, prompt: str, stage: Level, stage_mark: str, perspective: str) -> str:
        structure = parse(_extract_json(prompt, stage_mark)).structure
        ops, summary = self._edits_for(structure, perspective)
        refined = replay(structure, OperationLog(tuple(ops))) if ops else structure
        obj = structure_to_json(refined, include_metadata=False)
        obj["modification_summary"] = summary
        return json.dumps(obj, indent=2, ensure_ascii=False)

    def _elements(self, structure: CodingStructure, rid: str) -> list[str]:
        root = structure.roots[rid]
        if structure.level is Level.CODE:
            return list(root.chunk_texts())
        if structure.level is Level.SUBTHEME:
            return sorted(root.codes, key=_model.label_sort_key)
        return sorted(root.subthemes, key=_model.label_sort_key)

    def _edits_for(self, s: CodingStructure, perspective: str):
        level = s.level
        ids = s.root_ids()
        ops: list[StructOp] = []
        notes: list[str] = []

        def rename(rid: str, new_name: str) -> None:
            ops.append(
                StructOp(kind=OpKind.RENAME, level=level, subjects=(rid,), new_name=new_name)
            )
            notes.append(f"{rid} was renamed to '{new_name}'.")

        if perspective == "theory" and len(ids) >= 2:
            subjects = (ids[0], ids[1])
            merged_name = "Mechanisms behind " + _words(
                s.roots[ids[0]].name.removeprefix("Notes on "), 3
            )
            ops.append(
                StructOp(
                    kind=OpKind.MERGE,
                    level=level,
                    subjects=subjects,
                    result_id=ids[0],
                    new_name=merged_name,
                    new_definition=None
                    if level is Level.CODE
                    else f"This grouping unifies {merged_name.lower()}.",
                )
            )
            notes.append(
                f"{subjects[0]} and {subjects[1]} were merged into '{merged_name}' "
                "due to conceptual overlap."
            )
            if len(ids) >= 3:
                last = ids[-1]
                rename(last, "Conceptual framing of " + _words(s.roots[last].name, 4).lower())
        elif perspective == "applied":
            first = ids[0]
            rename(first, "Action point: " + _words(s.roots[first].name.removeprefix("Notes on "), 4))
            sources = [rid for rid in ids if len(self._elements(s, rid)) >= 2]
            if sources and len(ids) >= 2:
                src = sources[0]
                dst = min(t for t in ids if t != src)
                element = self._elements(s, src)[-1]
                ops.append(
                    StructOp(
                        kind=OpKind.REASSIGN,
                        level=level,
                        subjects=(element,),
                        source_parent=src,
                        target_parent=dst,
                    )
                )
                notes.append(
                    f"One item was reassigned from {src} to {dst} to keep groupings actionable."
                )
        elif perspective == "data":
            splittable = [rid for rid in ids if len(self._elements(s, rid)) >= 2]
            if splittable:
                rid = splittable[-1]
                elements = self._elements(s, rid)
                cut = len(elements) - 1
                other = _model.next_label(level, set(ids))
                base = s.roots[rid].name
                ops.append(
                    StructOp(
                        kind=OpKind.SPLIT,
                        level=level,
                        subjects=(rid,),
                        partition=(
                            SplitPart(
                                new_id=rid,
                                name=base,
                                members=tuple(elements[:cut]),
                                definition="" if level is Level.CODE else f"This grouping narrows {base.lower()}.",
                            ),
                            SplitPart(
                                new_id=other,
                                name=base + " (distinct voice)",
                                members=tuple(elements[cut:]),
                                definition=""
                                if level is Level.CODE
                                else f"This grouping separates a distinct voice within {base.lower()}.",
                            ),
                        ),
                    )
                )
                notes.append(
                    f"{rid} was split to separate a distinct voice found in the data."
                )
            first = ids[0]
            if level is Level.CODE:
                in_vivo = _words(s.roots[first].chunks[0].text, 5)
                rename(first, f'In their words: "{in_vivo}"')
            else:
                rename(first, "As participants put it: " + _words(s.roots[first].name, 4).lower())
        elif perspective == "selfrefine":
            first = ids[0]
            rename(first, "Clarified: " + _words(s.roots[first].name, 5))
        elif ids:
            first = ids[0]
            rename(first, s.roots[first].name + " (reviewed)")

        kept = [rid for rid in ids if all(rid not in op.subjects for op in ops)]
        if kept:
            notes.append("All other entries were kept unchanged: " + ", ".join(kept) + ".")
        notes.append("All chunks were preserved.")
        return ops, " ".join(notes)


def write_cassette(dataset_path, out_path, config: ModelConfig | None = None,
                   include_self_refine: bool = True):
    """Record a replay cassette covering the dataset's full selection tree.

    Every stage is recorded for every possible upstream selection (initial
    plus each perspective), so interactive runs replay no matter which
    variant the human picks at each stage.
    """
    from .agents import AgentTask, run_agent
    from .corpus import load as load_dataset
    from .gateway import Cassette, CassetteMode, ChatGateway
    from .pipeline import RunConfig, SelectionPolicy, coding_bindings, debrief_bindings

    config = config or ModelConfig(model="scripted-qda")
    run_config = RunConfig(
        dataset=str(dataset_path),
        model=config,
        policy=SelectionPolicy.parse("keepall"),
        include_self_refine=include_self_refine,
    )
    dataset = load_dataset(dataset_path)
    cassette = Cassette(CassetteMode.RECORD, {}, path=out_path)
    gateway = ChatGateway(config, cassette=cassette, transport=ScriptedQdaBackend())

    def run_stage(stage: Level, input_text: str, iid: str) -> list[CodingStructure]:
        initial = run_agent(
            gateway,
            AgentTask(
                stage=stage,
                perspective=None,
                bindings=coding_bindings(run_config, dataset.research_question, stage, input_text),
                backend=config.model,
            ),
            source_interview=iid,
        )
        variants = [initial.structure]
        for perspective in run_config.perspectives():
            refined = run_agent(
                gateway,
                AgentTask(
                    stage=stage,
                    perspective=perspective,
                    bindings=debrief_bindings(dataset.research_question, initial),
                    backend=config.model,
                ),
                input_structure=initial.structure,
                source_interview=iid,
            )
            variants.append(refined.structure)
        return variants

    for interview in dataset.interviews:
        code_variants = run_stage(Level.CODE, interview.text, interview.id)
        for code_pick in code_variants:
            subtheme_variants = run_stage(
                Level.SUBTHEME, serialize(code_pick, include_metadata=False), interview.id
            )
            for subtheme_pick in subtheme_variants:
                run_stage(
                    Level.THEME, serialize(subtheme_pick, include_metadata=False), interview.id
                )
    return cassette.save(out_path)
