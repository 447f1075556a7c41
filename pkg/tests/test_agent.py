"""Step grammar parsing and the tool loop guard rails."""

import json
import random

import pytest
from hypothesis import given, strategies as st

from transittalk.agent import (
    AgentStep,
    FinalAnswer,
    OutcomeKind,
    ParseFailed,
    ToolCall,
    ToolError,
    ToolSpec,
    parse_step,
    run_agent,
    truncate_at_observation,
)
from transittalk.gateway import ScriptedGateway


def echo_tool(name="echo"):
    return ToolSpec(name, "Echoes its input.", "any text", lambda text: f"echo:{text}")


def failing_tool():
    def boom(text):
        raise ToolError("nope")

    return ToolSpec("broken", "Always fails.", "any text", boom)


class TestParseStep:
    def test_canonical_tool_step(self):
        step = parse_step("Thought: need trip info\nAction: find_trip_info\nAction Input: LE-101")
        assert step.thought == "need trip info"
        assert step.action == ToolCall("find_trip_info", "LE-101")

    def test_final_answer(self):
        step = parse_step("Final Answer: Trip LE-101 is on hold.")
        assert step.action == FinalAnswer("Trip LE-101 is on hold.")
        assert step.thought == ""

    def test_missing_action_input(self):
        with pytest.raises(ParseFailed, match="missing Action Input"):
            parse_step("Thought: hmm\nAction: find_trip_info")

    def test_case_insensitive_labels(self):
        step = parse_step("THOUGHT: t\naction: tool_x\nACTION INPUT: in")
        assert step.action == ToolCall("tool_x", "in")

    def test_multiline_action_input(self):
        step = parse_step("Action: t\nAction Input: line one\nline two\nline three")
        assert isinstance(step.action, ToolCall)
        assert step.action.input_text == "line one\nline two\nline three"

    def test_multiline_thought(self):
        step = parse_step("Thought: first\nsecond line\nFinal Answer: done")
        assert step.thought == "first\nsecond line"

    def test_hallucinated_observation_discarded(self):
        step = parse_step(
            "Action: echo\nAction Input: hi\nObservation: fake result\nFinal Answer: cheated"
        )
        assert step.action == ToolCall("echo", "hi")

    def test_observation_only_fails(self):
        with pytest.raises(ParseFailed):
            parse_step("Observation: everything is fine")

    def test_garbage(self):
        with pytest.raises(ParseFailed):
            parse_step("the model rambles with no labels at all")

    def test_final_answer_spanning_lines(self):
        step = parse_step("Final Answer: line one\nline two")
        assert step.action == FinalAnswer("line one\nline two")

    def test_truncate_helper(self):
        assert truncate_at_observation("keep\nObservation: drop\nmore") == "keep\n"

    @given(st.text(max_size=400))
    def test_totality_fuzz(self, raw):
        try:
            step = parse_step(raw)
            assert isinstance(step, AgentStep)
        except ParseFailed:
            pass


class TestRunAgent:
    def test_answered_flow(self):
        gw = ScriptedGateway(
            ["Thought: t\nAction: echo\nAction Input: LE-101", "Final Answer: done"]
        )
        trace = run_agent("task", "sys", [echo_tool()], gw)
        assert trace.outcome.kind is OutcomeKind.ANSWERED
        assert trace.outcome.text == "done"
        assert trace.step_count == 2
        assert trace.steps[0].observation == "echo:LE-101"

    def test_loop_detected_on_third_occurrence(self):
        entry = "Action: echo\nAction Input: same"
        gw = ScriptedGateway([entry, entry, entry, "Final Answer: unreachable"])
        trace = run_agent("task", "sys", [echo_tool()], gw)
        assert trace.outcome.kind is OutcomeKind.LOOP_DETECTED
        assert trace.step_count == 3
        assert trace.steps[2].observation is None  # third repeat not executed

    def test_two_repeats_not_a_loop(self):
        entry = "Action: echo\nAction Input: same"
        gw = ScriptedGateway([entry, entry, "Final Answer: ok"])
        trace = run_agent("task", "sys", [echo_tool()], gw)
        assert trace.outcome.kind is OutcomeKind.ANSWERED

    def test_budget_exhausted(self):
        gw = ScriptedGateway(["Action: echo\nAction Input: x"])
        trace = run_agent("task", "sys", [echo_tool()], gw, budget=1)
        assert trace.outcome.kind is OutcomeKind.STEP_BUDGET_EXCEEDED
        assert trace.step_count == 1

    def test_unknown_tool_feeds_back_and_continues(self):
        gw = ScriptedGateway(
            ["Action: bogus\nAction Input: x", "Final Answer: recovered"]
        )
        trace = run_agent("task", "sys", [echo_tool()], gw)
        assert trace.outcome.kind is OutcomeKind.ANSWERED
        assert "unknown tool bogus" in trace.steps[0].observation
        assert "echo" in trace.steps[0].observation  # lists available tools

    def test_tool_error_becomes_observation(self):
        gw = ScriptedGateway(["Action: broken\nAction Input: x", "Final Answer: ok"])
        trace = run_agent("task", "sys", [failing_tool()], gw)
        assert trace.steps[0].observation == "tool error: nope"
        assert trace.outcome.kind is OutcomeKind.ANSWERED

    def test_parse_failure_is_terminal(self):
        gw = ScriptedGateway(["no labels here"])
        trace = run_agent("task", "sys", [echo_tool()], gw)
        assert trace.outcome.kind is OutcomeKind.PARSE_FAILED
        assert trace.outcome.text == "no labels here"

    def test_gateway_failure_recorded(self):
        gw = ScriptedGateway([])  # immediately exhausted
        trace = run_agent("task", "sys", [echo_tool()], gw)
        assert trace.outcome.kind is OutcomeKind.GATEWAY_FAILED

    def test_hallucinated_observation_replaced_by_real_one(self):
        gw = ScriptedGateway(
            [
                "Action: echo\nAction Input: hi\nObservation: FAKE NEWS",
                "Final Answer: done",
            ]
        )
        trace = run_agent("task", "sys", [echo_tool()], gw)
        assert trace.steps[0].observation == "echo:hi"

    def test_transcript_integrity(self):
        gw = ScriptedGateway(
            [
                "Action: echo\nAction Input: one",
                "Action: echo\nAction Input: two",
                "Final Answer: ok",
            ]
        )
        trace = run_agent("task", "sys", [echo_tool()], gw)
        assert [s.observation for s in trace.steps[:2]] == ["echo:one", "echo:two"]
        assert [s.tool_input for s in trace.steps[:2]] == ["one", "two"]

    def test_duplicate_tool_names_rejected(self):
        with pytest.raises(ValueError):
            run_agent("t", "s", [echo_tool(), echo_tool()], ScriptedGateway([]))

    def test_log_lines_round_trip_json(self):
        gw = ScriptedGateway(["Final Answer: done"])
        trace = run_agent("task", "sys", [echo_tool()], gw)
        lines = trace.to_log_lines()
        assert len(lines) == 2
        parsed = [json.loads(line) for line in lines]
        assert parsed[-1]["outcome"] == "answered"


class TestToolSpec:
    def test_name_validation(self):
        with pytest.raises(ValueError):
            ToolSpec("Bad-Name", "desc", "hint", lambda s: s)
        with pytest.raises(ValueError):
            ToolSpec("ok_name", "   ", "hint", lambda s: s)


def test_fuzzed_inputs_never_crash_parser():
    rng = random.Random(1234)
    fragments = [
        "Thought:", "Action:", "Action Input:", "Final Answer:", "Observation:",
        "find_trip_info", "LE-101", "\n", " ", "::", "🙂", "answer", "input",
        "aCtIoN:", "final ANSWER:", "\t", "", "x" * 50,
    ]
    for _ in range(2000):
        raw = "".join(rng.choices(fragments, k=rng.randint(0, 12)))
        try:
            parse_step(raw)
        except ParseFailed:
            pass
