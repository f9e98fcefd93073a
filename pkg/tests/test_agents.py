import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peerqda.agents import AgentResult, AgentTask, render_task, repair, run_agent
from peerqda.errors import AgentError, ContractError, RepairError
from peerqda.gateway import ChatGateway, ModelConfig
from peerqda.model import Level, Perspective, serialize, validate
from peerqda.ops import check_refinement

from genlib import StructureGen, inject_chunk_deletion

CODE_REPLY = json.dumps(
    {
        "Code 1": {"name": "placeholder", "chunks": ["xxxx"]},
        "metadata": {
            "what_llm_did": {"main_actions": "a", "examples": "b"},
            "self_reflection": {
                "confident_results": "c",
                "uncertain_results": "d",
                "recommended_review": "e",
            },
        },
    }
)


def scripted_gateway(*replies: str) -> ChatGateway:
    queue = list(replies)

    def transport(messages, config):
        return queue.pop(0)

    return ChatGateway(ModelConfig(max_retries=0), transport=transport)


def coding_task(**kw) -> AgentTask:
    bindings = {
        "researchQuestions": "q",
        "inputData": "text",
        "numberOfTopicClusters": "5 and 15",
        "clusteringStyle": "plain",
    }
    bindings.update(kw.pop("bindings", {}))
    return AgentTask(stage=Level.CODE, perspective=None, bindings=bindings, **kw)


class TestRepair:
    def test_clean_json_untouched(self):
        text, tags = repair(CODE_REPLY)
        assert text == CODE_REPLY
        assert tags == []

    def test_fenced_json(self):
        text, tags = repair("```json\n" + CODE_REPLY + "\n```")
        assert json.loads(text) == json.loads(CODE_REPLY)
        assert tags == ["strip_fences"]

    def test_leading_prose_trimmed(self):
        text, tags = repair("Here is the result:\n" + CODE_REPLY + "\nHope this helps!")
        assert json.loads(text) == json.loads(CODE_REPLY)
        assert tags == ["trim_preamble"]

    def test_smart_quotes_normalized(self):
        crooked = '{“Code 1”: {“name”: “n”, “chunks”: [“t”]}}'
        text, tags = repair(crooked)
        assert json.loads(text)["Code 1"]["name"] == "n"
        assert "normalize_quotes" in tags

    def test_empty_reply_rejected(self):
        with pytest.raises(RepairError):
            repair("   ")

    def test_no_object_rejected(self):
        with pytest.raises(RepairError):
            repair("I could not produce a result, sorry.")


class TestRunAgent:
    def test_clean_reply_zero_repairs(self):
        result = run_agent(scripted_gateway(CODE_REPLY), coding_task())
        assert len(result.structure.roots) == 1
        assert result.metadata is not None
        assert result.repairs == ()
        assert result.attempts == 1

    def test_fenced_reply_tagged(self):
        result = run_agent(scripted_gateway("```json\n" + CODE_REPLY + "\n```"), coding_task())
        assert result.repairs == ("strip_fences",)

    def test_metadata_backfill_tagged(self):
        partial = json.loads(CODE_REPLY)
        del partial["metadata"]["self_reflection"]["recommended_review"]
        result = run_agent(scripted_gateway(json.dumps(partial)), coding_task())
        assert "fill_metadata" in result.repairs
        assert result.metadata.recommended_review == ""

    def test_illegal_refinement_reprompted_then_succeeds(self):
        gen = StructureGen(13)
        before = gen.structure(Level.CODE)
        bad_after, _, _ = inject_chunk_deletion(before, random.Random(0))
        legal_reply = serialize(before, include_metadata=False, modification_summary="kept all")
        bad_reply = serialize(bad_after, include_metadata=False, modification_summary="oops")
        prompts = []

        def transport(messages, config):
            prompts.append(messages[0]["content"])
            return bad_reply if len(prompts) == 1 else legal_reply

        gw = ChatGateway(ModelConfig(max_retries=0), transport=transport)
        task = AgentTask(
            stage=Level.CODE,
            perspective=Perspective.THEORY,
            bindings={
                "inputData": serialize(before, include_metadata=False),
                "explanation": "e",
                "self_criticize": "s",
                "researchQuestions": "q",
            },
        )
        result = run_agent(gw, task, input_structure=before)
        assert result.attempts == 2
        assert result.modification_summary == "kept all"
        assert "VIOLATIONS:" in prompts[1]
        assert "chunk deleted" in prompts[1]

    def test_budget_exhaustion_carries_raw_replies(self):
        gw = scripted_gateway("garbage", "more garbage", "still garbage")
        with pytest.raises(AgentError) as err:
            run_agent(gw, coding_task(attempt_budget=3))
        assert err.value.raw_replies == ["garbage", "more garbage", "still garbage"]

    def test_debrief_requires_input_structure(self):
        task = AgentTask(
            stage=Level.CODE,
            perspective=Perspective.DATA,
            bindings={"inputData": "{}", "explanation": "", "self_criticize": "", "researchQuestions": ""},
        )
        with pytest.raises(ContractError):
            run_agent(scripted_gateway("{}"), task)

    def test_wrong_level_reply_rejected(self):
        subtheme_reply = json.dumps(
            {
                "Sub-Theme 1": {
                    "name": "n",
                    "definition": "d",
                    "codes": {"Code 1": {"name": "c", "chunks": ["t"]}},
                }
            }
        )
        with pytest.raises(AgentError):
            run_agent(scripted_gateway(subtheme_reply), coding_task(attempt_budget=1))

    def test_rendered_prompt_carries_bindings(self):
        task = coding_task(bindings={"researchQuestions": "How does X affect Y?"})
        assert "How does X affect Y?" in render_task(task)


adversarial_replies = st.sampled_from(
    [
        "",
        "not json at all",
        "```json\n{}\n```",
        '{"Code 1": {"name": "", "chunks": []}}',
        '{"Code 1": {"name": "n", "chunks": ["x"]}, "Code 1 ": {}}',
        '{"Theme 1": {"name": "n", "definition": "", "subthemes": {}}}',
        '[1, 2, 3]',
        '{"Code 1": {"name": "n", "chunks": ["x", 7]}}',
        CODE_REPLY,
    ]
)


@settings(max_examples=60, deadline=None)
@given(st.lists(adversarial_replies, min_size=1, max_size=3))
def test_run_agent_never_returns_invalid(replies):
    """Postcondition: whatever the backend says, a returned structure validates."""
    gw = scripted_gateway(*replies, CODE_REPLY)  # final fallback keeps queue non-empty
    try:
        result = run_agent(gw, coding_task(attempt_budget=len(replies)))
    except AgentError:
        return
    assert validate(result.structure).ok
    assert result.metadata is not None


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2**31))
def test_debrief_postcondition_legality(seed):
    gen = StructureGen(seed)
    before = gen.structure(Level.CODE)
    _, after = gen.legal_sequence(before, max_ops=3)
    reply = serialize(after, include_metadata=False, modification_summary="edits applied")
    task = AgentTask(
        stage=Level.CODE,
        perspective=Perspective.APPLIED,
        bindings={
            "inputData": serialize(before, include_metadata=False),
            "explanation": "e",
            "self_criticize": "s",
            "researchQuestions": "q",
        },
    )
    result = run_agent(scripted_gateway(reply), task, input_structure=before)
    assert check_refinement(before, result.structure).ok
