"""Dataset adapters, deterministic sampling, metrics, and report rendering.

The positive class is Hallucination throughout: detecting one is the task,
and it matches the convention of the benchmarks this runs against. Every
report says so in its header. Sampling uses an explicitly specified generator
rather than the platform default so a seeded split is reproducible anywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from .core import Claim, Label, canonical_json, load_claims
from .errors import DatasetFormatError, SchemaError, StorageError

__all__ = [
    "DATASET_FORMATS",
    "load_dataset",
    "sample_split",
    "Confusion",
    "Metrics",
    "PerClaim",
    "EvalReport",
    "compute_metrics",
    "build_report",
    "render_report",
    "render_summary",
    "parse_report",
]

DATASET_FORMATS = ("native", "halueval_qa", "generic_pairs")

_LABEL_ALIASES = {
    "hallucinated": Label.HALLUCINATION,
    "faithful": Label.NOT_HALLUCINATION,
}


def _parse_gold_label(value: Any, record_no: int) -> Label:
    if value == Label.HALLUCINATION.value:
        return Label.HALLUCINATION
    if value == Label.NOT_HALLUCINATION.value:
        return Label.NOT_HALLUCINATION
    if isinstance(value, str) and value.strip().lower() in _LABEL_ALIASES:
        return _LABEL_ALIASES[value.strip().lower()]
    raise DatasetFormatError(
        f"record {record_no}: label must be 'Hallucination', 'NotHallucination', "
        f"or an alias ('hallucinated'/'faithful'); got {value!r}"
    )


def load_dataset(path: str | Path, format: str = "native") -> list[Claim]:
    """Load claims from a file, normalizing external schemas.

    native: this package's claim records. generic_pairs: {"query",
    "response", "label"} with an optional "id". halueval_qa: QA records
    with a question plus a right and/or hallucinated answer, each becoming
    one labeled claim.
    """
    if format not in DATASET_FORMATS:
        raise DatasetFormatError(f"unknown dataset format: {format!r}")
    if format == "native":
        try:
            return load_claims(path)
        except (SchemaError, StorageError) as exc:
            raise DatasetFormatError(str(exc)) from exc

    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DatasetFormatError(f"cannot read {path}: {exc}") from exc

    claims: list[Claim] = []
    record_no = 0
    for raw in lines:
        if not raw.strip():
            continue
        record_no += 1
        try:
            record = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"record {record_no}: invalid JSON ({exc.msg})") from exc
        if not isinstance(record, dict):
            raise DatasetFormatError(f"record {record_no}: expected an object")
        if format == "generic_pairs":
            claims.append(_from_generic(record, record_no))
        else:
            claims.extend(_from_halueval(record, record_no))
    _check_unique_ids(claims)
    return claims


def _from_generic(record: dict, record_no: int) -> Claim:
    allowed = {"id", "query", "response", "label"}
    unknown = set(record) - allowed
    if unknown or not {"query", "response", "label"} <= set(record):
        raise DatasetFormatError(
            f"record {record_no}: generic_pairs needs query/response/label, got {sorted(record)}"
        )
    try:
        return Claim(
            id=record.get("id") or f"pair-{record_no:06d}",
            query=record["query"],
            response=record["response"],
            gold_label=_parse_gold_label(record["label"], record_no),
        )
    except SchemaError as exc:
        raise DatasetFormatError(f"record {record_no}: {exc}") from exc


def _from_halueval(record: dict, record_no: int) -> list[Claim]:
    # External schema: tolerate extra fields like "knowledge", require the
    # question and at least one answer variant.
    question = record.get("question")
    right = record.get("right_answer")
    hallucinated = record.get("hallucinated_answer")
    if not isinstance(question, str) or (right is None and hallucinated is None):
        raise DatasetFormatError(
            f"record {record_no}: halueval_qa needs a question and a "
            f"right_answer and/or hallucinated_answer, got {sorted(record)}"
        )
    claims = []
    try:
        if right is not None:
            claims.append(
                Claim(
                    id=f"halu-{record_no:06d}-right",
                    query=question,
                    response=right,
                    gold_label=Label.NOT_HALLUCINATION,
                )
            )
        if hallucinated is not None:
            claims.append(
                Claim(
                    id=f"halu-{record_no:06d}-hallucinated",
                    query=question,
                    response=hallucinated,
                    gold_label=Label.HALLUCINATION,
                )
            )
    except SchemaError as exc:
        raise DatasetFormatError(f"record {record_no}: {exc}") from exc
    return claims


def _check_unique_ids(claims: Sequence[Claim]) -> None:
    seen: set[str] = set()
    for claim in claims:
        if claim.id in seen:
            raise DatasetFormatError(f"duplicate claim id: {claim.id!r}")
        seen.add(claim.id)


class Lcg64:
    """64-bit linear congruential generator (Knuth's MMIX constants).

    Bounded draws use the top 32 bits of each step with rejection sampling,
    avoiding the short periods of an LCG's low bits. Identical sequences on
    every platform for a given seed.
    """

    MULTIPLIER = 6364136223846793005
    INCREMENT = 1442695040888963407
    MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self.state = seed & self.MASK

    def next_u64(self) -> int:
        self.state = (self.state * self.MULTIPLIER + self.INCREMENT) & self.MASK
        return self.state

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        if n > (1 << 32):
            raise ValueError("bounded draws support n up to 2**32")
        span = 1 << 32
        limit = (span // n) * n
        while True:
            word = self.next_u64() >> 32
            if word < limit:
                return word % n


def sample_split(claims: Sequence[Claim], n: int, seed: int) -> list[Claim]:
    """Uniform sample of n claims without replacement, deterministic by seed.

    Partial Fisher-Yates driven by the documented LCG; the same seed yields
    the same id sequence in any process on any platform.
    """
    if n < 1:
        raise SchemaError("sample size must be positive")
    if n > len(claims):
        raise SchemaError(f"sample size {n} exceeds population {len(claims)}")
    pool = list(claims)
    rng = Lcg64(seed)
    for i in range(n):
        j = i + rng.randbelow(len(pool) - i)
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:n]


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    def to_dict(self) -> dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


@dataclass(frozen=True)
class Metrics:
    n: int
    accuracy: float
    f1: float
    precision: float
    recall: float
    confusion: Confusion


def compute_metrics(pairs: Sequence[tuple[Label, Label]]) -> Metrics:
    """Accuracy and F1 over (gold, predicted) pairs, positive = Hallucination.

    Any zero denominator makes the affected quantity 0 rather than an error.
    """
    if not pairs:
        raise SchemaError("compute_metrics needs at least one pair")
    tp = fp = tn = fn = 0
    for gold, predicted in pairs:
        if predicted is Label.HALLUCINATION:
            if gold is Label.HALLUCINATION:
                tp += 1
            else:
                fp += 1
        else:
            if gold is Label.HALLUCINATION:
                fn += 1
            else:
                tn += 1
    n = len(pairs)
    precision = tp / (tp + fp) if (tp + fp) else 0.0
    recall = tp / (tp + fn) if (tp + fn) else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
    accuracy = (tp + tn) / n
    return Metrics(
        n=n,
        accuracy=accuracy,
        f1=f1,
        precision=precision,
        recall=recall,
        confusion=Confusion(tp=tp, fp=fp, tn=tn, fn=fn),
    )


@dataclass(frozen=True)
class PerClaim:
    id: str
    gold: Label
    predicted: Label
    n_steps: int
    corrected: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "gold": self.gold.value,
            "predicted": self.predicted.value,
            "n_steps": self.n_steps,
            "corrected": self.corrected,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PerClaim":
        return cls(
            id=obj["id"],
            gold=Label(obj["gold"]),
            predicted=Label(obj["predicted"]),
            n_steps=obj["n_steps"],
            corrected=obj["corrected"],
        )


@dataclass(frozen=True)
class EvalReport:
    dataset: str
    n: int
    accuracy: float
    f1: float
    confusion: Confusion
    per_claim: tuple[PerClaim, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "per_claim", tuple(self.per_claim))
        total = self.confusion.tp + self.confusion.fp + self.confusion.tn + self.confusion.fn
        if total != self.n:
            raise SchemaError(f"confusion cells sum to {total}, n is {self.n}")
        if self.n and self.accuracy != (self.confusion.tp + self.confusion.tn) / self.n:
            raise SchemaError("accuracy does not match the confusion matrix")


def build_report(dataset: str, per_claim: Sequence[PerClaim]) -> EvalReport:
    metrics = compute_metrics([(p.gold, p.predicted) for p in per_claim])
    return EvalReport(
        dataset=dataset,
        n=metrics.n,
        accuracy=metrics.accuracy,
        f1=metrics.f1,
        confusion=metrics.confusion,
        per_claim=tuple(per_claim),
    )


def render_report(report: EvalReport, format: str = "text_table") -> str:
    """Render a report: an aligned text table or one machine-readable line."""
    if format == "machine":
        return canonical_json(
            {
                "dataset": report.dataset,
                "n": report.n,
                "accuracy": report.accuracy,
                "f1": report.f1,
                "confusion": report.confusion.to_dict(),
                "positive_class": Label.HALLUCINATION.value,
                "per_claim": [p.to_dict() for p in report.per_claim],
            }
        )
    if format != "text_table":
        raise SchemaError(f"unknown report format: {format!r}")
    cell = f"{report.accuracy * 100:.2f} / {report.f1 * 100:.2f}"
    name_width = max(len("dataset"), len(report.dataset))
    c = report.confusion
    lines = [
        f"positive class: {Label.HALLUCINATION.value}",
        f"{'dataset'.ljust(name_width)}  {'n':>6}  Acc / F1",
        f"{report.dataset.ljust(name_width)}  {report.n:>6}  {cell}",
        f"confusion: tp={c.tp} fp={c.fp} tn={c.tn} fn={c.fn}",
    ]
    return "\n".join(lines) + "\n"


def render_summary(reports: Sequence[EvalReport]) -> str:
    """Multi-dataset table with an Avg row: the simple mean of per-dataset scores."""
    if not reports:
        raise SchemaError("render_summary needs at least one report")
    name_width = max(len("dataset"), *(len(r.dataset) for r in reports), len("Avg."))
    lines = [
        f"positive class: {Label.HALLUCINATION.value}",
        f"{'dataset'.ljust(name_width)}  {'n':>6}  Acc / F1",
    ]
    for report in reports:
        cell = f"{report.accuracy * 100:.2f} / {report.f1 * 100:.2f}"
        lines.append(f"{report.dataset.ljust(name_width)}  {report.n:>6}  {cell}")
    mean_acc = sum(r.accuracy for r in reports) / len(reports)
    mean_f1 = sum(r.f1 for r in reports) / len(reports)
    total = sum(r.n for r in reports)
    lines.append(f"{'Avg.'.ljust(name_width)}  {total:>6}  {mean_acc * 100:.2f} / {mean_f1 * 100:.2f}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> EvalReport:
    """Parse a machine-format report line back into an EvalReport."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid report JSON: {exc.msg}") from exc
    confusion = Confusion(**obj["confusion"])
    return EvalReport(
        dataset=obj["dataset"],
        n=obj["n"],
        accuracy=obj["accuracy"],
        f1=obj["f1"],
        confusion=confusion,
        per_claim=tuple(PerClaim.from_dict(p) for p in obj["per_claim"]),
    )
