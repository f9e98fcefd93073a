import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peerqda.errors import SchemaError, StructureParseError
from peerqda.model import (
    Chunk,
    Code,
    CodingStructure,
    Level,
    StageMetadata,
    SubTheme,
    Theme,
    chunk_multiset,
    parse,
    serialize,
    structures_match,
    validate,
    verify_verbatim,
)

from genlib import StructureGen, make_code


def two_code_structure():
    return CodingStructure(
        level=Level.CODE,
        roots={
            "Code 1": make_code("Code 1", "Planning friction", ["a text", "b text"]),
            "Code 2": make_code("Code 2", "Release habits", ["c text"]),
        },
    )


class TestChunkMultiset:
    def test_direct_collection(self):
        s = two_code_structure()
        assert chunk_multiset(s) == {"a text": 1, "b text": 1, "c text": 1}

    def test_empty_roots_rejected_by_validation(self):
        s = CodingStructure(level=Level.CODE, roots={})
        assert not validate(s).ok

    def test_theme_level_counts_nested_chunks(self):
        def sub(sid, cid):
            return SubTheme(
                id=sid,
                name="s",
                definition="",
                codes={cid: make_code(cid, "c", [f"{cid} one", f"{cid} two"])},
            )

        s = CodingStructure(
            level=Level.THEME,
            roots={
                "Theme 1": Theme("Theme 1", "t1", "d", {"Sub-Theme 1": sub("Sub-Theme 1", "Code 1")}),
                "Theme 2": Theme("Theme 2", "t2", "d", {"Sub-Theme 2": sub("Sub-Theme 2", "Code 2")}),
            },
        )
        assert sum(chunk_multiset(s).values()) == 4

    def test_invariant_under_sibling_reordering(self):
        s = two_code_structure()
        reordered = CodingStructure(
            level=Level.CODE,
            roots={rid: s.roots[rid] for rid in reversed(list(s.roots))},
        )
        assert chunk_multiset(s) == chunk_multiset(reordered)


class TestValidate:
    def test_well_formed(self):
        assert validate(two_code_structure()).ok

    def test_empty_chunk_list(self):
        s = CodingStructure(
            level=Level.CODE,
            roots={"Code 1": Code("Code 1", "Something", chunks=())},
        )
        report = validate(s)
        assert not report.ok
        assert any(v.path == "Code 1" and "empty chunks" in v.message for v in report.violations)

    def test_duplicate_id_under_two_subthemes(self):
        code = make_code("Code 1", "Same id", ["x"])
        s = CodingStructure(
            level=Level.SUBTHEME,
            roots={
                "Sub-Theme 1": SubTheme("Sub-Theme 1", "a", "", {"Code 1": code}),
                "Sub-Theme 2": SubTheme("Sub-Theme 2", "b", "", {"Code 1": code}),
            },
        )
        report = validate(s)
        dupes = [v for v in report.violations if "duplicate id" in v.message]
        assert len(dupes) == 1
        assert dupes[0].path == "Sub-Theme 2/Code 1"

    def test_definition_length_cap(self):
        s = CodingStructure(
            level=Level.SUBTHEME,
            roots={
                "Sub-Theme 1": SubTheme(
                    "Sub-Theme 1", "a", "x" * 801, {"Code 1": make_code("Code 1", "c", ["t"])}
                )
            },
        )
        assert any("definition exceeds" in v.message for v in validate(s).violations)

    def test_verbatim_helper(self):
        s = two_code_structure()
        transcript = "a text ... b text ... c text"
        assert verify_verbatim(s, transcript) == []
        assert len(verify_verbatim(s, "a text only")) == 2


CODE_STAGE_EXAMPLE = """
{
  "Code 1": {
    "name": "placeholder",
    "chunks": ["xxxx"]
  },
  "metadata": {
    "what_llm_did": {
      "main_actions": "Analyzed qualitative data and generated open codes",
      "examples": "Code[Code Name PlaceHolder] contains chunks about classroom management"
    },
    "self_reflection": {
      "confident_results": "Most confident about Code[Code Name PlaceHolder]",
      "uncertain_results": "Less confident about overlapping codes",
      "recommended_review": "Focus on boundary clarity"
    }
  }
}
"""


class TestParse:
    def test_round_trip_three_codes(self):
        s = CodingStructure(
            level=Level.CODE,
            roots={
                f"Code {i}": make_code(f"Code {i}", f"Name {i}", [f"text {i}a", f"text {i}b"])
                for i in (1, 2, 3)
            },
            metadata=StageMetadata("m", "e", "c", "u", "r"),
        )
        assert parse(serialize(s)).structure == s

    def test_code_stage_example_shape(self):
        parsed = parse(CODE_STAGE_EXAMPLE)
        s = parsed.structure
        assert s.level is Level.CODE
        assert list(s.roots) == ["Code 1"]
        assert s.roots["Code 1"].name == "placeholder"
        assert s.metadata is not None
        assert s.metadata.main_actions.startswith("Analyzed")
        assert parsed.modification_summary is None

    def test_modification_summary_side_channel(self):
        text = json.dumps(
            {
                "Code 1": {"name": "n", "chunks": ["t"]},
                "modification_summary": "Code 1 was kept unchanged.",
            }
        )
        parsed = parse(text)
        assert parsed.modification_summary == "Code 1 was kept unchanged."
        assert "modification_summary" not in parsed.structure.roots

    def test_malformed_json_reports_offset(self):
        with pytest.raises(StructureParseError) as err:
            parse('{"Code 1": {"name": "n", "chunks": ["t"]}')
        assert err.value.offset is not None

    def test_missing_fields_listed(self):
        with pytest.raises(SchemaError) as err:
            parse('{"Code 1": {"chunks": ["t"]}}')
        assert "Code 1.name" in err.value.missing

    def test_unknown_top_level_key(self):
        with pytest.raises(SchemaError):
            parse('{"Kode 1": {"name": "n", "chunks": ["t"]}}')

    def test_mixed_levels_rejected(self):
        with pytest.raises(SchemaError):
            parse(
                '{"Code 1": {"name": "n", "chunks": ["t"]},'
                ' "Theme 1": {"name": "n", "definition": "", "subthemes": {}}}'
            )

    def test_source_interview_attached(self):
        parsed = parse('{"Code 1": {"name": "n", "chunks": ["t"]}}', source_interview="i7")
        assert parsed.structure.roots["Code 1"].chunks[0].source_interview == "i7"


# -- property tests ----------------------------------------------------------

levels = st.sampled_from([Level.CODE, Level.SUBTHEME, Level.THEME])


@st.composite
def structures(draw):
    gen = StructureGen(draw(st.integers(min_value=0, max_value=2**32 - 1)))
    level = draw(levels)
    s = gen.structure(level)
    if draw(st.booleans()):
        s = CodingStructure(
            level=s.level, roots=s.roots, metadata=StageMetadata("a", "b", "c", "d", "e")
        )
    return s


@settings(max_examples=1000, deadline=None)
@given(structures())
def test_parse_serialize_identity(s):
    assert parse(serialize(s)).structure == s


@settings(max_examples=200, deadline=None)
@given(structures())
def test_generated_structures_validate(s):
    assert validate(s).ok


@settings(max_examples=200, deadline=None)
@given(structures())
def test_chunk_multiset_stable_under_reordering(s):
    reordered = CodingStructure(
        level=s.level,
        roots={rid: s.roots[rid] for rid in reversed(list(s.roots))},
        metadata=s.metadata,
    )
    assert chunk_multiset(s) == chunk_multiset(reordered)
    assert structures_match(s, reordered)


@settings(max_examples=300, deadline=None)
@given(
    structures(),
    st.integers(min_value=0, max_value=2**31),
    st.sampled_from(["empty_name", "empty_chunks", "empty_chunk_text"]),
)
def test_validate_flags_injected_invariant_violations(s, seed, which):
    """ok iff all type invariants hold: break one, validation must notice."""
    import random
    from dataclasses import replace as dc_replace

    from genlib import _replace_code

    rng = random.Random(seed)
    codes = [(path, code) for path, _, code in s.iter_codes()]
    path, code = codes[rng.randrange(len(codes))]
    if which == "empty_name":
        broken = _replace_code(s, path, dc_replace(code, name=""))
    elif which == "empty_chunks":
        broken = _replace_code(s, path, dc_replace(code, chunks=()))
    else:
        broken = _replace_code(s, path, dc_replace(code, chunks=(Chunk(""),) + code.chunks))
    report = validate(broken)
    assert not report.ok
    assert any(v.path == path for v in report.violations)


def test_fenced_reply_round_trip_needs_repair():
    # raw fenced replies are not valid JSON; the repair ladder (agents module)
    # strips fences before parse. Here parse itself must reject.
    fenced = "```json\n" + serialize(two_code_structure()) + "```\n"
    with pytest.raises(StructureParseError):
        parse(fenced)
