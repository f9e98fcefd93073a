"""Prompt templates: external text files, one per (stage, variant).

Templates live under prompts/<stage>/<variant>.txt so experimenters can edit
them without touching code.  Rendering is byte-exact substitution of a fixed
placeholder vocabulary; JSON braces in the template bodies are left alone.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .errors import RenderError
from .model import Level, Perspective

#: Placeholder names recognized in template bodies.
PLACEHOLDERS = (
    "researchQuestions",
    "inputData",
    "explanation",
    "self_criticize",
    "numberOfTopicClusters",
    "clusteringStyle",
    "codingStyle",
    "conceptualizingStyle",
)

_PLACEHOLDER_RE = re.compile(r"\{(" + "|".join(PLACEHOLDERS) + r")\}")

STAGE_DIRS = {Level.CODE: "code", Level.SUBTHEME: "subtheme", Level.THEME: "theme"}

#: File stem for the agent that generates the stage result.
CODING_VARIANT = "coding"

_PERSPECTIVE_VARIANTS = {
    Perspective.THEORY: "theory",
    Perspective.DATA: "data",
    Perspective.APPLIED: "applied",
    Perspective.SELF_REFINE: "selfrefine",
}

#: The exact operation block shared by every debriefing template.
OPERATION_BLOCK = (
    "Allowed Modification Types (STRICTLY LIMITED):\n- keep\n- rename\n- reassign\n- merge\n- split"
)


def prompts_root() -> Path:
    return Path(__file__).parent / "prompts"


@dataclass(frozen=True)
class PromptTemplate:
    stage: Level
    perspective: Perspective | None  # None for the coding agent
    body: str

    def placeholders(self) -> set[str]:
        return {m.group(1) for m in _PLACEHOLDER_RE.finditer(self.body)}

    def render(self, bindings: Mapping[str, str]) -> str:
        unbound = sorted(self.placeholders() - set(bindings))
        if unbound:
            raise RenderError("unbound: " + ", ".join(unbound))

        def substitute(match: re.Match) -> str:
            return str(bindings[match.group(1)])

        text = _PLACEHOLDER_RE.sub(substitute, self.body)
        leftover = _PLACEHOLDER_RE.search(text)
        if leftover:  # a binding value smuggled a placeholder back in
            raise RenderError(f"placeholder survived rendering: {leftover.group(0)}")
        return text


def variant_name(perspective: Perspective | None) -> str:
    if perspective is None:
        return CODING_VARIANT
    if perspective is Perspective.NONE:
        raise RenderError("the initial condition has no prompt template")
    return _PERSPECTIVE_VARIANTS[perspective]


def template_path(stage: Level, perspective: Perspective | None) -> Path:
    return prompts_root() / STAGE_DIRS[stage] / f"{variant_name(perspective)}.txt"


def load_template(stage: Level, perspective: Perspective | None) -> PromptTemplate:
    path = template_path(stage, perspective)
    if not path.exists():
        raise RenderError(f"missing template file: {path}")
    return PromptTemplate(stage=stage, perspective=perspective, body=path.read_text("utf-8"))


def all_debrief_templates() -> list[PromptTemplate]:
    """The 12 debriefing templates (3 stages x 3 perspectives + self-refine)."""
    out = []
    for stage in Level:
        for perspective in _PERSPECTIVE_VARIANTS:
            out.append(load_template(stage, perspective))
    return out
