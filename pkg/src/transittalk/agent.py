"""Tool-calling agent loop over the chat gateway.

The model is prompted to emit Thought / Action / Action Input steps; the
loop executes the named tool, feeds the result back as an Observation
line, and stops on a Final Answer, the step budget, or loop detection.
Unknown tools and tool failures become Observations rather than aborting,
giving the model one path to self-correct.

Step grammar (labels case-insensitive, at line starts):

    [Thought: <text...>]
    Action: <tool name>
    Action Input: <text to end of message>
  or
    [Thought: <text...>]
    Final Answer: <text to end of message>

Anything from an "Observation:" label onward is discarded before parsing:
the model must not write observations itself.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, Union

from .gateway import ChatGateway, ChatMessage, CompletionParams, GatewayError
from .prompts import render_prompt

logger = logging.getLogger(__name__)

DEFAULT_STEP_BUDGET = 8

_TOOL_NAME_RE = re.compile(r"^[a-z_][a-z0-9_]*$")
_OBSERVATION_RE = re.compile(r"(?mi)^\s*observation\s*:")
_LABEL_RE = re.compile(r"^\s*(thought|action input|action|final answer)\s*:\s?(.*)$", re.IGNORECASE)


class ToolError(Exception):
    """Raised by tool executors for expected failures; becomes an Observation."""


class ParseFailed(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    input_hint: str
    executor: Callable[[str], str]

    def __post_init__(self):
        if not _TOOL_NAME_RE.match(self.name):
            raise ValueError(f"invalid tool name {self.name!r}")
        if not self.description.strip():
            raise ValueError(f"tool {self.name!r} needs a description")


@dataclass(frozen=True)
class ToolCall:
    name: str
    input_text: str


@dataclass(frozen=True)
class FinalAnswer:
    text: str


@dataclass(frozen=True)
class AgentStep:
    thought: str
    action: Union[ToolCall, FinalAnswer]


class OutcomeKind(enum.Enum):
    ANSWERED = "answered"
    STEP_BUDGET_EXCEEDED = "step_budget_exceeded"
    LOOP_DETECTED = "loop_detected"
    PARSE_FAILED = "parse_failed"
    GATEWAY_FAILED = "gateway_failed"


@dataclass(frozen=True)
class AgentOutcome:
    kind: OutcomeKind
    text: str = ""


@dataclass(frozen=True)
class StepRecord:
    thought: str
    tool_name: str | None
    tool_input: str | None
    final_text: str | None
    observation: str | None
    raw_text: str


@dataclass
class AgentTrace:
    steps: list[StepRecord] = field(default_factory=list)
    outcome: AgentOutcome = AgentOutcome(OutcomeKind.PARSE_FAILED, "")

    @property
    def step_count(self) -> int:
        return len(self.steps)

    @property
    def answered(self) -> bool:
        return self.outcome.kind is OutcomeKind.ANSWERED

    def to_log_lines(self) -> list[str]:
        """Line-oriented serialization: one JSON record per step plus outcome."""
        lines = []
        for i, step in enumerate(self.steps, start=1):
            lines.append(
                json.dumps(
                    {
                        "step": i,
                        "thought": step.thought,
                        "tool": step.tool_name,
                        "input": step.tool_input,
                        "final": step.final_text,
                        "observation": step.observation,
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
            )
        lines.append(
            json.dumps(
                {"outcome": self.outcome.kind.value, "text": self.outcome.text},
                ensure_ascii=False,
                sort_keys=True,
            )
        )
        return lines


def truncate_at_observation(raw: str) -> str:
    """Drop everything from the first Observation: label onward."""
    m = _OBSERVATION_RE.search(raw)
    return raw[: m.start()] if m else raw


def parse_step(raw: str) -> AgentStep:
    """Parse one model response into a step; total over arbitrary input."""
    text = truncate_at_observation(raw)
    lines = text.split("\n")

    thought_parts: list[str] = []
    collecting_thought = False
    i = 0
    while i < len(lines):
        m = _LABEL_RE.match(lines[i])
        label = m.group(1).lower() if m else None
        if label == "thought":
            collecting_thought = True
            if m.group(2):
                thought_parts.append(m.group(2))
        elif label == "final answer":
            rest = [m.group(2)] + lines[i + 1 :]
            return AgentStep("\n".join(thought_parts).strip(), FinalAnswer("\n".join(rest).strip()))
        elif label == "action":
            name = m.group(2).strip()
            if not name:
                raise ParseFailed("empty Action")
            return AgentStep(
                "\n".join(thought_parts).strip(),
                ToolCall(name, _parse_action_input(lines[i + 1 :])),
            )
        elif label == "action input":
            raise ParseFailed("Action Input before Action")
        elif collecting_thought:
            thought_parts.append(lines[i])
        i += 1
    raise ParseFailed("no Final Answer or Action found")


def _parse_action_input(lines: list[str]) -> str:
    for i, line in enumerate(lines):
        m = _LABEL_RE.match(line)
        if m and m.group(1).lower() == "action input":
            rest = [m.group(2)] + lines[i + 1 :]
            return "\n".join(rest).strip()
    raise ParseFailed("missing Action Input")


def render_tool_block(tools: Sequence[ToolSpec]) -> str:
    return "\n".join(
        f"- {tool.name}: {tool.description} Input: {tool.input_hint}" for tool in tools
    )


def run_agent(
    task: str,
    system_prompt: str,
    tools: Iterable[ToolSpec],
    gateway: ChatGateway,
    budget: int = DEFAULT_STEP_BUDGET,
    params: CompletionParams | None = None,
) -> AgentTrace:
    """Run the tool loop until a final answer or a guard rail fires.

    Terminates within `budget` completions for every gateway behavior.
    A loop is detected when the identical (tool, input) pair appears a
    third consecutive time; the repeated step is recorded unexecuted.
    """
    if budget < 1:
        raise ValueError("budget must be positive")
    tool_list = list(tools)
    registry: dict[str, ToolSpec] = {}
    for tool in tool_list:
        if tool.name in registry:
            raise ValueError(f"duplicate tool name {tool.name!r}")
        registry[tool.name] = tool

    system = system_prompt + "\n\n" + render_prompt(
        "react_loop",
        tool_block=render_tool_block(tool_list),
        tool_names=", ".join(registry) or "(none)",
    )
    if params is None:
        params = CompletionParams(stop_sequences=("Observation:",))
    messages = [ChatMessage.system(system), ChatMessage.user(task)]

    trace = AgentTrace()
    recent_pairs: list[tuple[str, str]] = []
    for _ in range(budget):
        try:
            result = gateway.complete(messages, params)
        except GatewayError as exc:
            trace.outcome = AgentOutcome(OutcomeKind.GATEWAY_FAILED, str(exc))
            return trace

        clean = truncate_at_observation(result.text).strip()
        try:
            step = parse_step(clean)
        except ParseFailed:
            trace.outcome = AgentOutcome(OutcomeKind.PARSE_FAILED, result.text)
            return trace

        messages.append(ChatMessage.assistant(clean))

        if isinstance(step.action, FinalAnswer):
            trace.steps.append(
                StepRecord(step.thought, None, None, step.action.text, None, clean)
            )
            trace.outcome = AgentOutcome(OutcomeKind.ANSWERED, step.action.text)
            return trace

        pair = (step.action.name, step.action.input_text)
        if len(recent_pairs) >= 2 and recent_pairs[-1] == pair and recent_pairs[-2] == pair:
            trace.steps.append(
                StepRecord(step.thought, pair[0], pair[1], None, None, clean)
            )
            trace.outcome = AgentOutcome(OutcomeKind.LOOP_DETECTED, f"{pair[0]}({pair[1]})")
            return trace
        recent_pairs.append(pair)

        observation = _execute(registry, step.action)
        trace.steps.append(
            StepRecord(step.thought, pair[0], pair[1], None, observation, clean)
        )
        messages.append(ChatMessage.user(f"Observation: {observation}"))

    trace.outcome = AgentOutcome(OutcomeKind.STEP_BUDGET_EXCEEDED, "")
    return trace


def _execute(registry: dict[str, ToolSpec], call: ToolCall) -> str:
    spec = registry.get(call.name)
    if spec is None:
        available = ", ".join(sorted(registry)) or "(none)"
        return f"unknown tool {call.name}; available: {available}"
    try:
        return spec.executor(call.input_text)
    except ToolError as exc:
        return f"tool error: {exc}"
    except Exception as exc:  # surfaced for self-correction, not crashed
        logger.warning("tool %s raised %s", call.name, type(exc).__name__)
        return f"tool error: {exc}"
