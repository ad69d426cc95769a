"""Orchestration: the learning loop, detection with proactive correction,
trajectory curation, and SFT export.

A learning episode runs retrieve-plan-execute-evaluate and then applies the
memory updates in that order: the precedent and the per-state value samples
always land, a reflection lands only when the advantage is strictly negative.
Detection pre-scores the planned strategy and allows exactly one
reflection-driven revision before execution. Claims are independent units of
work; the memory stores are the only shared mutable state.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

from .agents import (
    Actor,
    Critic,
    Decoding,
    Planner,
    PreemptiveScore,
    Reflector,
    advantage,
    claim_key_text,
)
from .backend import ChatProvider, Embedder
from .core import (
    Claim,
    Label,
    StateView,
    Step,
    Tool,
    Trajectory,
    Verdict,
    canonical_json,
    linearize_target,
    parse_verdict_label,
    serialize,
    strategy_id,
    write_record_lines,
)
from .errors import CurationError, LeapError, SchemaError
from .memory import Memories, PrecedentRecord, ReflectionRecord, ValueSample, record_id
from .prompts import format_claim_block, format_state
from .tools import Toolbox

logger = logging.getLogger(__name__)

__all__ = [
    "LearningConfig",
    "ExpertRecord",
    "ExpertDataset",
    "RunReport",
    "DetectionResult",
    "Runtime",
    "terminal_reward",
    "curate",
    "export_sft",
]


@dataclass(frozen=True)
class LearningConfig:
    """Knobs of the learning loop; the seed fixes all stochastic choices."""

    gamma: float = 1.0
    lam: float = 0.1
    k_reflections: int = 3
    k_precedents_pos: int = 2
    k_precedents_neg: int = 2
    max_steps: int = 10
    memory_cap: int | None = 1400
    seed: int = 0
    concurrency: int = 4

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise SchemaError(f"gamma {self.gamma} outside [0, 1]")
        if self.lam < 0.0:
            raise SchemaError("lambda must be non-negative")
        for name in ("k_reflections", "k_precedents_pos", "k_precedents_neg"):
            if getattr(self, name) < 1:
                raise SchemaError(f"{name} must be at least 1")
        if self.max_steps < 1:
            raise SchemaError("max_steps must be at least 1")
        if self.memory_cap is not None and self.memory_cap < 1:
            raise SchemaError("memory_cap must be positive or None")
        if self.concurrency < 1:
            raise SchemaError("concurrency must be at least 1")


def terminal_reward(verdict: Label, gold: Label | None) -> float:
    """+1 when the verdict matches the gold label, -1 otherwise."""
    if gold is None:
        raise SchemaError("terminal reward requires a gold label")
    return 1.0 if verdict is gold else -1.0


@dataclass(frozen=True)
class ExpertRecord:
    """One curated training example: a claim and its linearized trace."""

    claim: Claim
    target: str
    advantage: float
    verdict: Label
    gold: Label


@dataclass(frozen=True)
class ExpertDataset:
    """Curated records; every member is correct and has positive advantage."""

    records: tuple[ExpertRecord, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        for record in self.records:
            if record.advantage <= 0:
                raise SchemaError(
                    f"expert record for claim {record.claim.id} has advantage {record.advantage}"
                )
            if record.verdict is not record.gold:
                raise SchemaError(
                    f"expert record for claim {record.claim.id} has a wrong verdict"
                )

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class RunReport:
    completed: int
    failed: int
    reflected: int
    mean_advantage: float | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "completed": self.completed,
            "failed": self.failed,
            "reflected": self.reflected,
            "mean_advantage": self.mean_advantage,
        }


@dataclass(frozen=True)
class DetectionResult:
    """Verdict plus everything worth auditing about how it was reached."""

    claim_id: str
    verdict: Verdict
    trajectory: Trajectory
    scores: tuple[PreemptiveScore, ...]
    correction: ReflectionRecord | None

    @property
    def corrected(self) -> bool:
        return self.correction is not None

    def to_dict(self) -> dict[str, Any]:
        return {
            "claim_id": self.claim_id,
            "verdict": self.verdict.to_dict(),
            "corrected": self.corrected,
            "scores": [
                {
                    "strategy_ref": s.strategy_ref,
                    "score": s.score,
                    "threshold": s.threshold,
                    "approved": s.approved,
                }
                for s in self.scores
            ],
            "trajectory_id": self.trajectory.id,
            "n_steps": len(self.trajectory.steps),
        }


class Runtime:
    """Wires the agents, toolbox, and memories into the two loops."""

    def __init__(
        self,
        chat: ChatProvider,
        embedder: Embedder,
        toolbox: Toolbox,
        templates: dict,
        config: LearningConfig,
        theta_corr: float = 0.0,
        decoding_learn: Decoding = Decoding(temperature=1.0, top_p=1.0),
        decoding_eval: Decoding = Decoding(temperature=0.0, top_p=1.0),
    ):
        self.embedder = embedder
        self.toolbox = toolbox
        self.config = config
        self.theta_corr = theta_corr
        self.decoding_learn = decoding_learn
        self.decoding_eval = decoding_eval
        self.planner = Planner(chat, templates["planner"])
        self.actor = Actor(chat, templates["actor"])
        self.critic = Critic(chat, templates["critic"])
        self.reflector = Reflector(chat, templates["reflector"], embedder)

    # --- shared execution loop -------------------------------------------

    def _execute(
        self, claim: Claim, strategy, memories: Memories, decoding: Decoding
    ) -> tuple[list[Step], Verdict]:
        claim_emb = self.embedder.embed(claim_key_text(claim))
        pos = memories.precedents.retrieve_top_k(
            claim_emb, self.config.k_precedents_pos, lambda r: r.advantage > 0
        )
        neg = memories.precedents.retrieve_top_k(
            claim_emb, self.config.k_precedents_neg, lambda r: r.advantage <= 0
        )
        steps: list[Step] = []
        while True:
            state = StateView(claim=claim, steps=tuple(steps))
            thought, action = self.actor.act(
                state, strategy, pos, neg, self.config.max_steps, decoding
            )
            result = self.toolbox.dispatch(action)
            steps.append(Step(thought=thought, action=action, observation=result.observation_text))
            if action.tool is Tool.GET_ANSWER and result.success:
                label = parse_verdict_label(str(action.args[0]))
                evidence = str(action.args[1]) if len(action.args) > 1 else None
                return steps, Verdict(label=label, evidence=evidence)

    # --- learning ----------------------------------------------------------

    def run_learning_episode(self, claim: Claim, memories: Memories) -> Trajectory:
        """One pass of the learning loop for one claim.

        Plan from retrieved reflections, execute to a verdict, have the
        critic value every state, attach the advantage, then update the
        stores. Reflection happens only for strictly negative advantage.
        """
        if claim.gold_label is None:
            raise SchemaError(f"claim {claim.id} has no gold label; learning requires one")
        decoding = self.decoding_learn
        claim_emb = self.embedder.embed(claim_key_text(claim))
        reflections = memories.reflections.retrieve_top_k(claim_emb, self.config.k_reflections)
        strategy = self.planner.plan(claim, reflections, decoding)
        steps, verdict = self._execute(claim, strategy, memories, decoding)

        # Value every state s_0 .. s_N; the advantage reads V(s_0) and V(s_1).
        estimates = []
        for n in range(len(steps) + 1):
            summary = format_state(claim, steps[:n])
            emb = self.embedder.embed(summary)
            samples = memories.values.retrieve_top_k(emb, self.config.k_reflections)
            estimate = self.critic.estimate_value(
                StateView(claim=claim, steps=tuple(steps[:n])), samples, decoding
            )
            estimates.append((summary, emb, estimate))

        r_t = terminal_reward(verdict.label, claim.gold_label)
        partial = Trajectory.build(claim.id, strategy, steps, verdict)
        report = advantage(
            partial,
            r_terminal=r_t,
            gamma=self.config.gamma,
            lam=self.config.lam,
            v_curr=estimates[0][2].value,
            v_next=estimates[1][2].value,
        )
        trajectory = Trajectory.build(claim.id, strategy, steps, verdict, report)

        key_text = claim_key_text(claim)
        memories.precedents.insert(
            PrecedentRecord(
                id=record_id("precedent", key_text, strategy.to_dict(), report.advantage),
                claim_text=key_text,
                strategy=strategy,
                advantage=report.advantage,
                embedding=claim_emb,
            )
        )
        for summary, emb, estimate in estimates:
            memories.values.insert(
                ValueSample(
                    id=record_id("value", summary, estimate.value),
                    state_summary=summary,
                    value=estimate.value,
                    embedding=emb,
                )
            )
        if report.advantage < 0:
            reflection = self.reflector.reflect_failure(claim, trajectory, decoding)
            memories.reflections.insert(reflection)
        return trajectory

    def run_learning(
        self,
        claims: Sequence[Claim],
        memories: Memories,
        out_dir: str | Path,
        strict: bool = False,
        config_hash: str = "",
    ) -> RunReport:
        """Run the learning loop over a dataset and write its artifacts.

        Writes trajectories.jsonl (dataset order), failures.jsonl, and a
        manifest. A failed episode is recorded and skipped unless strict.
        """
        if not claims:
            raise SchemaError("empty dataset")
        out_dir = Path(out_dir)
        started = time.perf_counter()
        results: list[Trajectory | None] = [None] * len(claims)
        failures: list[tuple[int, str, str]] = []

        def work(index: int) -> None:
            claim = claims[index]
            try:
                results[index] = self.run_learning_episode(claim, memories)
            except LeapError as exc:
                if strict:
                    raise
                logger.warning("episode failed for claim %s: %s", claim.id, exc)
                failures.append((index, claim.id, str(exc)))

        interrupted = False
        try:
            if self.config.concurrency == 1:
                for i in range(len(claims)):
                    work(i)
            else:
                with ThreadPoolExecutor(max_workers=self.config.concurrency) as pool:
                    for future in [pool.submit(work, i) for i in range(len(claims))]:
                        future.result()
        except KeyboardInterrupt:
            # drain: keep what finished and write a partial manifest below
            interrupted = True

        completed = [t for t in results if t is not None]
        write_record_lines(out_dir / "trajectories.jsonl", (serialize(t) for t in completed))
        failures.sort()
        write_record_lines(
            out_dir / "failures.jsonl",
            (canonical_json({"claim_id": cid, "error": msg}) for _, cid, msg in failures),
        )
        advantages = [t.advantage.advantage for t in completed if t.advantage is not None]
        report = RunReport(
            completed=len(completed),
            failed=len(failures),
            reflected=sum(1 for a in advantages if a < 0),
            mean_advantage=sum(advantages) / len(advantages) if advantages else None,
        )
        manifest = {
            "config_hash": config_hash,
            "counts": report.to_dict(),
            "interrupted": interrupted,
            "duration_ms": (time.perf_counter() - started) * 1000.0,
        }
        write_record_lines(out_dir / "manifest.json", [canonical_json(manifest)])
        if interrupted:
            raise KeyboardInterrupt
        return report

    # --- detection -----------------------------------------------------------

    def detect(
        self, claim: Claim, memories: Memories, online_memory: bool = False
    ) -> DetectionResult:
        """Detect with proactive correction: plan, pre-score, revise at most once.

        Memories are read-only here unless online_memory is set, in which
        case correction reflections are kept for later claims.
        """
        decoding = self.decoding_eval
        claim_emb = self.embedder.embed(claim_key_text(claim))
        reflections = memories.reflections.retrieve_top_k(claim_emb, self.config.k_reflections)
        strategy = self.planner.plan(claim, reflections, decoding)
        samples = memories.values.retrieve_top_k(claim_emb, self.config.k_reflections)

        first = self.critic.preemptive_score(claim, strategy, samples, self.theta_corr, decoding)
        scores = [first]
        correction = None
        final = strategy
        if not first.approved:
            correction = self.reflector.reflect_strategy(claim, strategy, first, decoding)
            if online_memory:
                memories.reflections.insert(correction)
            final = self.planner.plan(
                claim, [correction], decoding, revision_of=strategy_id(strategy)
            )
            # The revision is executed regardless of its re-score; the
            # re-score is still recorded for the audit trail.
            scores.append(
                self.critic.preemptive_score(claim, final, samples, self.theta_corr, decoding)
            )

        steps, verdict = self._execute(claim, final, memories, decoding)
        trajectory = Trajectory.build(claim.id, final, steps, verdict)
        return DetectionResult(
            claim_id=claim.id,
            verdict=verdict,
            trajectory=trajectory,
            scores=tuple(scores),
            correction=correction,
        )

    def run_detection(
        self,
        claims: Sequence[Claim],
        memories: Memories,
        out_path: str | Path | None = None,
        online_memory: bool = False,
    ) -> tuple[list[DetectionResult], list[tuple[str, str]]]:
        """Detect over a batch; failures are recorded and the batch continues."""
        if not claims:
            raise SchemaError("empty dataset")
        results: list[DetectionResult | None] = [None] * len(claims)
        failures: list[tuple[str, str]] = []

        def work(index: int) -> None:
            claim = claims[index]
            try:
                results[index] = self.detect(claim, memories, online_memory=online_memory)
            except LeapError as exc:
                logger.warning("detection failed for claim %s: %s", claim.id, exc)
                failures.append((claim.id, str(exc)))

        if self.config.concurrency == 1:
            for i in range(len(claims)):
                work(i)
        else:
            with ThreadPoolExecutor(max_workers=self.config.concurrency) as pool:
                for future in [pool.submit(work, i) for i in range(len(claims))]:
                    future.result()

        completed = [r for r in results if r is not None]
        if out_path is not None:
            write_record_lines(out_path, (canonical_json(r.to_dict()) for r in completed))
        return completed, failures


def curate(trajectories: Iterable[Trajectory], claims: dict[str, Claim]) -> ExpertDataset:
    """Filter finished trajectories down to the expert training set.

    Keeps those with strictly positive advantage whose verdict matches the
    gold label; duplicates (same content-addressed id) collapse to the first.
    """
    kept: list[ExpertRecord] = []
    seen: set[str] = set()
    for trajectory in trajectories:
        if trajectory.id in seen:
            continue
        seen.add(trajectory.id)
        if trajectory.advantage is None:
            raise CurationError(f"trajectory {trajectory.id} has no advantage report")
        if trajectory.verdict is None:
            raise CurationError(f"trajectory {trajectory.id} has no verdict")
        claim = claims.get(trajectory.claim_id)
        if claim is None:
            raise CurationError(
                f"trajectory {trajectory.id} references unknown claim {trajectory.claim_id}"
            )
        if claim.gold_label is None:
            raise CurationError(f"claim {claim.id} has no gold label")
        if trajectory.advantage.advantage > 0 and trajectory.verdict.label is claim.gold_label:
            kept.append(
                ExpertRecord(
                    claim=claim,
                    target=linearize_target(trajectory),
                    advantage=trajectory.advantage.advantage,
                    verdict=trajectory.verdict.label,
                    gold=claim.gold_label,
                )
            )
    if not kept:
        logger.warning("curation kept no trajectories")
    return ExpertDataset(records=tuple(kept))


def export_sft(dataset: ExpertDataset, path: str | Path) -> int:
    """Write prompt/completion training records; returns the record count.

    The prompt is the claim rendered exactly as the actor sees it, so
    training inputs match inference inputs.
    """
    lines = []
    for record in dataset.records:
        if not record.target:
            raise SchemaError(f"record for claim {record.claim.id} has an empty target")
        lines.append(
            canonical_json(
                {
                    "prompt": format_claim_block(record.claim),
                    "completion": record.target,
                    "meta": {"advantage": record.advantage, "claim_id": record.claim.id},
                }
            )
        )
    return write_record_lines(path, lines)
