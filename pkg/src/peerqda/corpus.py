"""Dataset loading: interview transcripts plus ground-truth annotations.

A dataset is a directory holding manifest.json and transcripts/*.txt (UTF-8).
Ground truth always includes a codebook; per-interview code lists and a
sub-theme/theme hierarchy are optional, and the granularity flags derived
from what is present decide which metric suites the evaluator may run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import DatasetError

FORMAT_VERSION = 1

#: Granularity flags and the metric suites they unlock.
GRANULARITY_CODEBOOK = "codebook"
GRANULARITY_PER_INTERVIEW = "per_interview_codes"
GRANULARITY_SUBTHEMES = "subthemes"
GRANULARITY_THEMES = "themes"


@dataclass(frozen=True)
class Interview:
    id: str
    text: str


@dataclass(frozen=True)
class CodebookEntry:
    name: str
    definition: str = ""


@dataclass(frozen=True)
class GroundTruth:
    codebook: tuple[CodebookEntry, ...]
    per_interview_codes: dict[str, tuple[str, ...]] | None = None
    subthemes: dict[str, tuple[str, ...]] | None = None  # sub-theme name -> code names
    themes: dict[str, tuple[str, ...]] | None = None  # theme name -> sub-theme names

    def codebook_names(self) -> list[str]:
        return [entry.name for entry in self.codebook]


@dataclass(frozen=True)
class DatasetManifest:
    id: str
    research_question: str
    interviews: tuple[Interview, ...]
    ground_truth: GroundTruth

    def granularity(self) -> set[str]:
        flags = {GRANULARITY_CODEBOOK}
        if self.ground_truth.per_interview_codes is not None:
            flags.add(GRANULARITY_PER_INTERVIEW)
        if self.ground_truth.subthemes is not None:
            flags.add(GRANULARITY_SUBTHEMES)
        if self.ground_truth.themes is not None:
            flags.add(GRANULARITY_THEMES)
        return flags

    def interview(self, iid: str) -> Interview:
        for interview in self.interviews:
            if interview.id == iid:
                return interview
        raise DatasetError(f"no interview {iid!r} in dataset {self.id!r}")

    def human_codes_for(self, iid: str) -> list[str]:
        """Per-interview ground truth codes, falling back to the codebook."""
        per = self.ground_truth.per_interview_codes
        if per is not None and iid in per:
            return list(per[iid])
        return self.ground_truth.codebook_names()


def _check_integrity(manifest: DatasetManifest) -> None:
    gt = manifest.ground_truth
    if not gt.codebook:
        raise DatasetError("ground truth needs a non-empty codebook")
    names = set(gt.codebook_names())
    if len(names) != len(gt.codebook):
        raise DatasetError("duplicate names in codebook")
    ids = [i.id for i in manifest.interviews]
    if len(set(ids)) != len(ids):
        raise DatasetError("duplicate interview ids")
    if gt.per_interview_codes is not None:
        for iid, codes in gt.per_interview_codes.items():
            if iid not in ids:
                raise DatasetError(f"per-interview codes reference unknown interview {iid!r}")
            for code in codes:
                if code not in names:
                    raise DatasetError(
                        f"per-interview code {code!r} ({iid}) is not in the codebook"
                    )
    subtheme_names = set()
    if gt.subthemes is not None:
        subtheme_names = set(gt.subthemes)
        for sub, codes in gt.subthemes.items():
            for code in codes:
                if code not in names:
                    raise DatasetError(f"sub-theme {sub!r} references unknown code {code!r}")
    if gt.themes is not None:
        if gt.subthemes is None:
            raise DatasetError("themes require subthemes")
        for theme, subs in gt.themes.items():
            for sub in subs:
                if sub not in subtheme_names:
                    raise DatasetError(f"theme {theme!r} references unknown sub-theme {sub!r}")


def load(path: str | Path) -> DatasetManifest:
    """Load and integrity-check a dataset directory."""
    root = Path(path)
    manifest_path = root / "manifest.json" if root.is_dir() else root
    root = manifest_path.parent
    if not manifest_path.exists():
        raise DatasetError(f"no manifest.json under {root}")
    try:
        raw = json.loads(manifest_path.read_text("utf-8"))
    except (UnicodeDecodeError, ValueError) as e:
        raise DatasetError(f"manifest is not valid UTF-8 JSON: {e}") from e
    if raw.get("format") != FORMAT_VERSION:
        raise DatasetError(f"unsupported dataset format: {raw.get('format')!r}")

    interviews = []
    for entry in raw.get("interviews", []):
        iid = entry["id"]
        transcript_ref = entry["transcript"]
        transcript_path = root / transcript_ref
        if not transcript_path.exists():
            raise DatasetError(f"missing transcript file for interview {iid!r}: {transcript_ref}")
        try:
            text = transcript_path.read_text("utf-8")
        except UnicodeDecodeError as e:
            raise DatasetError(f"transcript for {iid!r} is not UTF-8: {e}") from e
        interviews.append(Interview(id=iid, text=text))

    gt_raw = raw.get("ground_truth", {})
    codebook = tuple(
        CodebookEntry(name=c["name"], definition=c.get("definition", ""))
        for c in gt_raw.get("codebook", [])
    )

    def tuple_map(key: str):
        value = gt_raw.get(key)
        if value is None:
            return None
        return {k: tuple(v) for k, v in value.items()}

    manifest = DatasetManifest(
        id=raw["id"],
        research_question=raw["research_question"],
        interviews=tuple(interviews),
        ground_truth=GroundTruth(
            codebook=codebook,
            per_interview_codes=tuple_map("per_interview_codes"),
            subthemes=tuple_map("subthemes"),
            themes=tuple_map("themes"),
        ),
    )
    _check_integrity(manifest)
    return manifest


def save(manifest: DatasetManifest, out_dir: str | Path) -> Path:
    """Write a dataset directory in the documented layout."""
    root = Path(out_dir)
    (root / "transcripts").mkdir(parents=True, exist_ok=True)
    gt = manifest.ground_truth
    body: dict = {
        "format": FORMAT_VERSION,
        "id": manifest.id,
        "research_question": manifest.research_question,
        "interviews": [],
        "ground_truth": {
            "codebook": [
                {"name": e.name, **({"definition": e.definition} if e.definition else {})}
                for e in gt.codebook
            ],
        },
    }
    for key, value in (
        ("per_interview_codes", gt.per_interview_codes),
        ("subthemes", gt.subthemes),
        ("themes", gt.themes),
    ):
        if value is not None:
            body["ground_truth"][key] = {k: list(v) for k, v in value.items()}
    for interview in manifest.interviews:
        rel = f"transcripts/{interview.id}.txt"
        (root / rel).write_text(interview.text, "utf-8")
        body["interviews"].append({"id": interview.id, "transcript": rel})
    (root / "manifest.json").write_text(
        json.dumps(body, indent=2, ensure_ascii=False) + "\n", "utf-8"
    )
    return root / "manifest.json"


def scaffold(raw_dir: str | Path, out_dir: str | Path) -> Path:
    """Manifest skeleton from a directory of .txt transcripts.

    Files are discovered recursively; ids are relative paths.  The ground
    truth stanzas are emitted empty for the researcher to fill in.
    """
    raw = Path(raw_dir)
    files = sorted(raw.rglob("*.txt"))
    if not files:
        raise DatasetError(f"no .txt transcripts under {raw}")
    root = Path(out_dir)
    (root / "transcripts").mkdir(parents=True, exist_ok=True)
    interviews = []
    for file in files:
        try:
            text = file.read_text("utf-8")
        except UnicodeDecodeError as e:
            raise DatasetError(f"transcript {file} is not UTF-8: {e}") from e
        iid = file.relative_to(raw).with_suffix("").as_posix()
        safe = iid.replace("/", "__")
        rel = f"transcripts/{safe}.txt"
        (root / rel).write_text(text, "utf-8")
        interviews.append({"id": iid, "transcript": rel})
    body = {
        "format": FORMAT_VERSION,
        "id": raw.name,
        "research_question": "FILL IN: the research question guiding the coding",
        "interviews": interviews,
        "ground_truth": {
            "codebook": [],
            "per_interview_codes": {},
        },
    }
    path = root / "manifest.json"
    path.write_text(json.dumps(body, indent=2, ensure_ascii=False) + "\n", "utf-8")
    return path
