"""The four LLM-backed agents and the strict parsers for their outputs.

Planner, actor, critic, and reflector share one calling convention: render a
template, request one completion, parse it. A reply that fails its grammar
earns exactly one reprompt with a format reminder; a second failure raises an
agent-format error. All agents are stateless between calls, so one instance
serves any number of claims concurrently.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Callable, Sequence

from .backend import ChatMessage, ChatRequest, ChatProvider, Embedder
from .core import (
    Action,
    AdvantageReport,
    Claim,
    Label,
    StateView,
    Tool,
    TOOL_BY_NAME,
    Trajectory,
    VerificationStrategy,
    advantage_value,
    count_tool_calls,
    strategy_id,
)
from .errors import AgentFormatError, ReactParseError, SchemaError
from .memory import ReflectionRecord, ValueSample, record_id
from .prompts import (
    PromptTemplate,
    format_claim_block,
    format_history,
    format_precedents,
    format_reflections,
    format_state,
    format_strategy,
    format_value_examples,
)

__all__ = [
    "Decoding",
    "ValueEstimate",
    "PreemptiveScore",
    "parse_react",
    "parse_react_sequence",
    "parse_strategy_text",
    "Planner",
    "Actor",
    "Critic",
    "Reflector",
    "advantage",
    "claim_key_text",
]


@dataclass(frozen=True)
class Decoding:
    """Sampling settings for one family of agent calls."""

    temperature: float
    top_p: float = 1.0
    max_tokens: int = 1024


@dataclass(frozen=True)
class ValueEstimate:
    """The critic's estimate of a state's expected outcome, clamped to [-1, 1]."""

    state_ref: str
    value: float


@dataclass(frozen=True)
class PreemptiveScore:
    """Pre-execution assessment of a strategy against the correction threshold."""

    strategy_ref: str
    score: float
    threshold: float
    approved: bool

    def __post_init__(self) -> None:
        if self.approved != (self.score >= self.threshold):
            raise SchemaError("approved must equal (score >= threshold)")

    @classmethod
    def of(cls, strategy_ref: str, score: float, threshold: float) -> "PreemptiveScore":
        return cls(
            strategy_ref=strategy_ref,
            score=score,
            threshold=threshold,
            approved=score >= threshold,
        )


def claim_key_text(claim: Claim) -> str:
    """The text a claim is embedded under: its query and response together."""
    return f"{claim.query}\n{claim.response}"


# --- ReAct surface grammar ----------------------------------------------------

_ACTION_LINE_RE = re.compile(r"^Action:\s*([a-z_]+)\((.*)\)\s*$")
_INT_RE = re.compile(r"-?\d+")


def parse_react(text: str) -> tuple[str, Action]:
    """Parse one (thought, action) turn.

    The first line starting with "Thought:" opens the thought; lines up to
    the action line continue it. Exactly one "Action:" line is allowed, with
    double-quoted string and bare integer arguments. Lines after the action
    are ignored.
    """
    lines = text.split("\n")
    action_indices = [i for i, line in enumerate(lines) if line.startswith("Action:")]
    if not action_indices:
        raise ReactParseError("missing Action line")
    if len(action_indices) > 1:
        raise ReactParseError("multiple Action lines; exactly one action per turn")
    action_index = action_indices[0]

    thought_index = None
    for i in range(action_index):
        if lines[i].startswith("Thought:"):
            thought_index = i
            break
    if thought_index is None:
        raise ReactParseError("missing Thought line")

    first = re.match(r"^Thought:\s*(.*)$", lines[thought_index]).group(1)
    thought = "\n".join([first, *lines[thought_index + 1 : action_index]])

    match = _ACTION_LINE_RE.match(lines[action_index])
    if match is None:
        raise ReactParseError(f"malformed Action line: {lines[action_index]!r}")
    tool_name, args_text = match.group(1), match.group(2)
    if tool_name not in TOOL_BY_NAME:
        raise ReactParseError(f"unknown tool: {tool_name!r}")
    return thought, Action(tool=TOOL_BY_NAME[tool_name], args=_parse_args(args_text))


def _parse_args(text: str) -> tuple[str | int, ...]:
    args: list[str | int] = []
    i, n = 0, len(text)
    while i < n and text[i].isspace():
        i += 1
    if i == n:
        return ()
    while True:
        if i < n and text[i] == '"':
            end = _closing_quote(text, i)
            if end is None:
                raise ReactParseError("unterminated string argument")
            token = text[i : end + 1]
            try:
                args.append(json.loads(token))
            except json.JSONDecodeError as exc:
                raise ReactParseError(f"malformed string argument {token!r}") from exc
            i = end + 1
        else:
            match = _INT_RE.match(text, i)
            if match is None:
                raise ReactParseError(f"malformed argument near {text[i:i + 20]!r}")
            i = match.end()
            if i < n and text[i] == ".":
                raise ReactParseError("arguments must be quoted strings or bare integers")
            args.append(int(match.group(0)))
        while i < n and text[i].isspace():
            i += 1
        if i == n:
            return tuple(args)
        if text[i] != ",":
            raise ReactParseError(f"expected ',' between arguments, found {text[i]!r}")
        i += 1
        while i < n and text[i].isspace():
            i += 1
        if i == n:
            raise ReactParseError("trailing comma in arguments")


def _closing_quote(text: str, start: int) -> int | None:
    i = start + 1
    while i < len(text):
        if text[i] == "\\":
            i += 2
            continue
        if text[i] == '"':
            return i
        i += 1
    return None


def parse_react_sequence(text: str) -> list[tuple[str, Action]]:
    """Parse a full linearized trace into its ordered (thought, action) pairs."""
    lines = text.split("\n")
    starts = [i for i, line in enumerate(lines) if line.startswith("Thought:")]
    if not starts:
        raise ReactParseError("missing Thought line")
    for i in range(starts[0]):
        if lines[i].startswith("Action:"):
            raise ReactParseError("missing Thought line")
    pairs = []
    boundaries = [*starts, len(lines)]
    for a, b in zip(boundaries, boundaries[1:]):
        pairs.append(parse_react("\n".join(lines[a:b])))
    return pairs


# --- structured output grammars -------------------------------------------------


def parse_strategy_text(text: str, revision_of: str | None = None) -> VerificationStrategy:
    """Parse TYPE / STRATEGY / PLAN sections with numbered plan steps."""
    lines = text.split("\n")
    type_idx = _find_section(lines, "TYPE:")
    strat_idx = _find_section(lines, "STRATEGY:")
    plan_idx = _find_section(lines, "PLAN:")
    if type_idx is None:
        raise ReactParseError("missing TYPE section")
    if strat_idx is None or strat_idx < type_idx:
        raise ReactParseError("missing STRATEGY section")
    if plan_idx is None or plan_idx < strat_idx:
        raise ReactParseError("missing PLAN section")

    problem_type = lines[type_idx][len("TYPE:") :].strip()
    strategy_lines = [lines[strat_idx][len("STRATEGY:") :].strip()]
    strategy_lines.extend(l.strip() for l in lines[strat_idx + 1 : plan_idx])
    high_level = "\n".join(strategy_lines).strip()

    plan = _numbered_items(lines[plan_idx + 1 :])
    if not plan:
        raise ReactParseError("PLAN section has no numbered steps")
    if not problem_type:
        raise ReactParseError("TYPE section is empty")
    return VerificationStrategy(
        problem_type=problem_type,
        high_level_strategy=high_level,
        plan=tuple(plan),
        revision_of=revision_of,
    )


def parse_reflection_text(text: str) -> tuple[str, tuple[str, ...], VerificationStrategy]:
    """Parse DIAGNOSIS / PRINCIPLES / REVISED_STRATEGY sections."""
    lines = text.split("\n")
    diag_idx = _find_section(lines, "DIAGNOSIS:")
    prin_idx = _find_section(lines, "PRINCIPLES:")
    revised_idx = _find_section(lines, "REVISED_STRATEGY:")
    if diag_idx is None:
        raise ReactParseError("missing DIAGNOSIS section")
    if prin_idx is None or prin_idx < diag_idx:
        raise ReactParseError("missing PRINCIPLES section")
    if revised_idx is None or revised_idx < prin_idx:
        raise ReactParseError("missing REVISED_STRATEGY section")

    diagnosis_lines = [lines[diag_idx][len("DIAGNOSIS:") :].strip()]
    diagnosis_lines.extend(l.strip() for l in lines[diag_idx + 1 : prin_idx])
    diagnosis = "\n".join(diagnosis_lines).strip()
    if not diagnosis:
        raise ReactParseError("DIAGNOSIS section is empty")

    principles = _numbered_items(lines[prin_idx + 1 : revised_idx])
    if not principles:
        raise ReactParseError("PRINCIPLES section has no numbered items")

    strategy = parse_strategy_text("\n".join(lines[revised_idx + 1 :]))
    return diagnosis, tuple(principles), strategy


def _find_section(lines: list[str], marker: str) -> int | None:
    for i, line in enumerate(lines):
        if line.startswith(marker):
            return i
    return None


_NUMBERED_RE = re.compile(r"^\s*\d+[.)]\s*(.*\S)\s*$")


def _numbered_items(lines: list[str]) -> list[str]:
    items = []
    for line in lines:
        match = _NUMBERED_RE.match(line)
        if match:
            items.append(match.group(1))
        elif line.strip():
            break
    return items


def _parse_value_text(text: str) -> float:
    try:
        value = float(text.strip())
    except ValueError as exc:
        raise ReactParseError(f"expected a single number, got {text.strip()!r}") from exc
    if not math.isfinite(value):
        raise ReactParseError(f"expected a finite number, got {text.strip()!r}")
    return value


# --- agent plumbing --------------------------------------------------------------


def _complete_parsed(
    chat: ChatProvider,
    prompt: str,
    parse: Callable[[str], object],
    agent: str,
    reminder: str,
    decoding: Decoding,
):
    """One completion, one optional reprompt, then an agent-format error."""
    messages: list[ChatMessage] = [ChatMessage("user", prompt)]
    request = ChatRequest(
        system_prompt="",
        messages=tuple(messages),
        temperature=decoding.temperature,
        top_p=decoding.top_p,
        max_tokens=decoding.max_tokens,
    )
    reply = chat.complete(request)
    try:
        return parse(reply)
    except ReactParseError:
        pass
    messages.extend([ChatMessage("assistant", reply), ChatMessage("user", reminder)])
    retry = ChatRequest(
        system_prompt="",
        messages=tuple(messages),
        temperature=decoding.temperature,
        top_p=decoding.top_p,
        max_tokens=decoding.max_tokens,
    )
    reply = chat.complete(retry)
    try:
        return parse(reply)
    except ReactParseError as exc:
        raise AgentFormatError(agent, str(exc)) from exc


_PLANNER_REMINDER = (
    "Your previous reply did not follow the required format. Answer again using "
    "exactly the TYPE / STRATEGY / PLAN sections with numbered plan steps."
)
_ACTOR_REMINDER = (
    "Your previous reply did not follow the required format. Answer again with "
    'exactly one "Thought:" line followed by exactly one "Action:" line.'
)
_CRITIC_REMINDER = (
    "Your previous reply was not a number. Reply with a single number between "
    "-1.0 and 1.0 and nothing else."
)
_REFLECTOR_REMINDER = (
    "Your previous reply did not follow the required format. Answer again using "
    "exactly the DIAGNOSIS / PRINCIPLES / REVISED_STRATEGY sections."
)


class Planner:
    """Designs a verification strategy for a claim, informed by reflections."""

    def __init__(self, chat: ChatProvider, template: PromptTemplate):
        self.chat = chat
        self.template = template

    def plan(
        self,
        claim: Claim,
        reflections: Sequence[ReflectionRecord],
        decoding: Decoding,
        revision_of: str | None = None,
    ) -> VerificationStrategy:
        prompt = self.template.render(
            claim=format_claim_block(claim), reflections=format_reflections(reflections)
        )
        return _complete_parsed(
            self.chat,
            prompt,
            lambda text: parse_strategy_text(text, revision_of=revision_of),
            "planner",
            _PLANNER_REMINDER,
            decoding,
        )


class Actor:
    """Chooses the next (thought, action) pair while executing a strategy."""

    def __init__(
        self,
        chat: ChatProvider,
        template: PromptTemplate,
        forced_verdict: Label = Label.HALLUCINATION,
    ):
        self.chat = chat
        self.template = template
        # Conservative default: an episode that runs out of budget flags the
        # claim rather than quietly clearing it.
        self.forced_verdict = forced_verdict

    def act(
        self,
        state: StateView,
        strategy: VerificationStrategy,
        precedents_pos: Sequence,
        precedents_neg: Sequence,
        max_steps: int,
        decoding: Decoding,
    ) -> tuple[str, Action]:
        if len(state.steps) >= max_steps:
            raise ValueError(f"state already has {len(state.steps)} steps, max_steps={max_steps}")
        if len(state.steps) == max_steps - 1:
            return (
                "Step limit reached; recording a terminal verdict.",
                Action(tool=Tool.GET_ANSWER, args=(self.forced_verdict.value, "MAX_STEPS")),
            )
        prompt = self.template.render(
            claim=format_claim_block(state.claim),
            strategy=format_strategy(strategy),
            history=format_history(state.steps),
            precedents_pos=format_precedents(precedents_pos),
            precedents_neg=format_precedents(precedents_neg),
        )
        return _complete_parsed(
            self.chat, prompt, parse_react, "actor", _ACTOR_REMINDER, decoding
        )


class Critic:
    """Estimates state values and pre-scores strategies against a threshold."""

    def __init__(self, chat: ChatProvider, template: PromptTemplate):
        self.chat = chat
        self.template = template

    def estimate_value(
        self, state: StateView, value_samples: Sequence[ValueSample], decoding: Decoding
    ) -> ValueEstimate:
        summary = format_state(state.claim, state.steps)
        prompt = self.template.render(
            state=summary, examples=format_value_examples(value_samples)
        )
        raw = _complete_parsed(
            self.chat, prompt, _parse_value_text, "critic", _CRITIC_REMINDER, decoding
        )
        value = min(1.0, max(-1.0, raw))
        return ValueEstimate(state_ref=record_id("state", summary), value=value)

    def preemptive_score(
        self,
        claim: Claim,
        strategy: VerificationStrategy,
        value_samples: Sequence[ValueSample],
        threshold: float,
        decoding: Decoding,
    ) -> PreemptiveScore:
        state_text = (
            f"{format_claim_block(claim)}\n\n"
            f"Proposed strategy (not yet executed):\n{format_strategy(strategy)}"
        )
        prompt = self.template.render(
            state=state_text, examples=format_value_examples(value_samples)
        )
        raw = _complete_parsed(
            self.chat, prompt, _parse_value_text, "critic", _CRITIC_REMINDER, decoding
        )
        return PreemptiveScore.of(strategy_id(strategy), raw, threshold)


class Reflector:
    """Turns failures into reflection records that feed back into planning."""

    def __init__(self, chat: ChatProvider, template: PromptTemplate, embedder: Embedder):
        self.chat = chat
        self.template = template
        self.embedder = embedder

    def reflect_failure(
        self, claim: Claim, trajectory: Trajectory, decoding: Decoding
    ) -> ReflectionRecord:
        """Learning mode: analyze a completed trajectory with negative advantage."""
        failure_lines = [
            "Strategy that was executed:",
            format_strategy(trajectory.strategy),
            "",
            "Trajectory:",
            format_history(trajectory.steps),
        ]
        if trajectory.verdict is not None:
            failure_lines.append(f"Verdict reached: {trajectory.verdict.label.value}")
        if trajectory.advantage is not None:
            failure_lines.append(f"Advantage assessed: {trajectory.advantage.advantage:+.4f}")
        return self._reflect(claim, "\n".join(failure_lines), decoding)

    def reflect_strategy(
        self, claim: Claim, strategy: VerificationStrategy, score: PreemptiveScore, decoding: Decoding
    ) -> ReflectionRecord:
        """Correction mode: analyze a strategy the critic rejected before execution."""
        failure = (
            f"Proposed strategy was rejected before execution "
            f"(predicted advantage {score.score:+.4f}, threshold {score.threshold:+.4f}):\n"
            f"{format_strategy(strategy)}"
        )
        return self._reflect(claim, failure, decoding)

    def _reflect(self, claim: Claim, failure: str, decoding: Decoding) -> ReflectionRecord:
        prompt = self.template.render(claim=format_claim_block(claim), failure=failure)
        diagnosis, principles, revised = _complete_parsed(
            self.chat, prompt, parse_reflection_text, "reflector", _REFLECTOR_REMINDER, decoding
        )
        key_text = claim_key_text(claim)
        return ReflectionRecord(
            id=record_id("reflection", key_text, diagnosis, list(principles), revised.to_dict()),
            key_text=key_text,
            diagnosis=diagnosis,
            principles=principles,
            revised_strategy=revised,
            embedding=self.embedder.embed(key_text),
        )


def advantage(
    trajectory: Trajectory,
    r_terminal: float,
    gamma: float,
    lam: float,
    v_curr: float,
    v_next: float,
) -> AdvantageReport:
    """Assemble the advantage report for a completed trajectory."""
    n_tools = count_tool_calls(trajectory)
    return AdvantageReport(
        r_terminal=r_terminal,
        gamma=gamma,
        v_next=v_next,
        v_curr=v_curr,
        lam=lam,
        n_tools=n_tools,
        advantage=advantage_value(r_terminal, gamma, v_next, v_curr, lam, n_tools),
    )
