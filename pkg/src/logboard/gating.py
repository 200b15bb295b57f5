"""Learned continue/stop policy over log-derived features.

Features: image presence, confidence of the latest summary, accepted
entries this round, and the change in pending needs between the last two
summaries. A small logistic classifier over those four values decides
whether the next retrieval round is worth its cost. Training data is mined
from recorded run traces: a round is a positive example when evidence
appended after it ends up cited in the final answer.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .log import EVIDENCE_TYPES, EntryType, LogEntry, SharedLog, load_trace, parse_answer
from .sources import SourceBundle
from .textutil import count_gap_phrases, numeral_values

logger = logging.getLogger(__name__)

FEATURE_NAMES = ("image_present", "summary_confidence", "new_entries", "pending_needs_delta")


@dataclass(frozen=True)
class GateFeatures:
    image_present: int
    summary_confidence: float
    new_entries: int
    pending_needs_delta: int

    def as_vector(self) -> np.ndarray:
        return np.array(
            [
                float(self.image_present),
                self.summary_confidence,
                float(self.new_entries),
                float(self.pending_needs_delta),
            ]
        )


@dataclass
class LogisticGate:
    weights: np.ndarray = field(default_factory=lambda: np.zeros(4))
    bias: float = 0.0
    threshold: float = 0.5

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (4,):
            raise ValueError("gate expects exactly 4 feature weights")
        if not (np.all(np.isfinite(self.weights)) and np.isfinite(self.bias)):
            raise ValueError("gate parameters must be finite")

    def to_dict(self) -> dict:
        return {
            "weights": [float(w) for w in self.weights],
            "bias": float(self.bias),
            "threshold": float(self.threshold),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LogisticGate":
        return cls(
            weights=np.asarray(data["weights"], dtype=float),
            bias=float(data["bias"]),
            threshold=float(data.get("threshold", 0.5)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LogisticGate":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class GateSample:
    features: GateFeatures
    label: int  # 1 = continuing past this round was necessary for the answer

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")


def _entries_of(log_or_entries) -> list[LogEntry]:
    if isinstance(log_or_entries, SharedLog):
        return log_or_entries.entries
    return list(log_or_entries)


def _latest_summaries(entries: Sequence[LogEntry]) -> list[LogEntry]:
    return [
        e for e in entries if e.entry_type in (EntryType.SUMMARY, EntryType.ANSWER)
    ]


def extract_features(log, state, sources: SourceBundle | None = None) -> GateFeatures:
    """Features of the live run at the end of a round.

    state only needs a new_entries_this_round attribute (accepted appends
    in the round just finished).
    """
    entries = _entries_of(log)
    image_present = 0
    if sources is not None and sources.images:
        image_present = 1
    elif any("image" in e.content.lower() or "figure" in e.content.lower() for e in entries):
        image_present = 1
    summaries = _latest_summaries(entries)
    if not summaries:
        confidence = 0.5
    elif summaries[-1].entry_type is EntryType.ANSWER:
        confidence = 1.0
    elif count_gap_phrases(summaries[-1].content) > 0:
        confidence = 0.0
    else:
        confidence = 0.5
    gaps_latest = count_gap_phrases(summaries[-1].content) if summaries else 0
    gaps_previous = count_gap_phrases(summaries[-2].content) if len(summaries) > 1 else 0
    delta = gaps_latest - gaps_previous if summaries else 0
    return GateFeatures(
        image_present=image_present,
        summary_confidence=confidence,
        new_entries=int(getattr(state, "new_entries_this_round", 0)),
        pending_needs_delta=delta,
    )


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    ez = np.exp(z)
    return float(ez / (1.0 + ez))


def predict_continue(gate: LogisticGate, features: GateFeatures) -> float:
    """Probability that another retrieval round is worthwhile."""
    return float(sigmoid(float(gate.weights @ features.as_vector()) + gate.bias))


def train(
    samples: Sequence[GateSample],
    epochs: int = 500,
    learning_rate: float = 0.1,
    l2: float = 1e-3,
) -> tuple[LogisticGate, float]:
    """Full-batch gradient descent on L2-regularized log-loss.

    Zero initialization, deterministic. Returns the fitted gate and the
    final training loss. Single-class data is an error: fit nothing and
    gate on a fixed threshold instead.
    """
    labels = {s.label for s in samples}
    if labels != {0, 1}:
        raise ValueError(
            "training needs both labels present; use threshold-only gating "
            "for single-class data"
        )
    X = np.stack([s.features.as_vector() for s in samples])
    y = np.array([float(s.label) for s in samples])
    n = len(samples)
    w = np.zeros(X.shape[1])
    b = 0.0
    for _ in range(epochs):
        z = X @ w + b
        p = 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
        grad_w = X.T @ (p - y) / n + l2 * w
        grad_b = float(np.mean(p - y))
        w -= learning_rate * grad_w
        b -= learning_rate * grad_b
    gate = LogisticGate(weights=w, bias=b)
    return gate, training_loss(samples, gate, l2=l2)


def training_loss(samples: Sequence[GateSample], gate: LogisticGate, l2: float = 1e-3) -> float:
    X = np.stack([s.features.as_vector() for s in samples])
    y = np.array([float(s.label) for s in samples])
    z = X @ gate.weights + gate.bias
    p = np.clip(1.0 / (1.0 + np.exp(-np.clip(z, -500, 500))), 1e-12, 1.0 - 1e-12)
    return float(
        -np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
        + 0.5 * l2 * float(gate.weights @ gate.weights)
    )


# --- mining samples from traces ----------------------------------------------

@dataclass
class _Round:
    entries: list[LogEntry] = field(default_factory=list)


def split_rounds(entries: Sequence[LogEntry]) -> list[_Round]:
    """Group trace entries into rounds.

    The JSONL trace carries no explicit round marker, so rounds are
    delimited by Summarizing entries (each optionally followed by a
    verification verdict). The seeding Query entry belongs to no round.
    """
    rounds: list[_Round] = []
    current = _Round()
    closed = False
    for entry in entries:
        if entry.entry_type is EntryType.QUERY and not rounds and not current.entries:
            continue
        if closed and entry.entry_type in (EntryType.FLAG, EntryType.OK):
            rounds[-1].entries.append(entry)
            continue
        closed = False
        current.entries.append(entry)
        if entry.entry_type in (EntryType.SUMMARY, EntryType.ANSWER):
            rounds.append(current)
            current = _Round()
            closed = True
    if current.entries:
        rounds.append(current)
    return rounds


def _cited_in_answer(entry: LogEntry, answer_text: str) -> bool:
    answer_values = set(numeral_values(answer_text))
    if answer_values & set(numeral_values(entry.content)):
        return True
    lowered = answer_text.lower()
    for anchor in entry.provenance:
        for attr in ("table_id", "doc_id", "image_id"):
            ident = getattr(anchor, attr, None)
            if ident and ident.lower() in lowered:
                return True
    return False


def mine_samples(traces: Iterable[Sequence[LogEntry]]) -> list[GateSample]:
    """One sample per non-final round of each trace.

    Label 1 when any evidence entry appended after the round is cited in
    the final Answer (numeral overlap or provenance id mention); else 0.
    Traces without Summarizing entries or without a final Answer carry no
    round markers or no target and are skipped with a warning.
    """
    samples: list[GateSample] = []
    for trace_idx, entries in enumerate(traces):
        entries = list(entries)
        answers = [e for e in entries if e.entry_type is EntryType.ANSWER]
        rounds = split_rounds(entries)
        if not answers or not rounds:
            logger.warning(
                "trace %d lacks round markers or a final answer; skipped", trace_idx
            )
            continue
        answer_text = parse_answer(answers[-1].content) or answers[-1].content
        prefix: list[LogEntry] = [e for e in entries if e.entry_type is EntryType.QUERY][:1]
        for idx, round_ in enumerate(rounds[:-1]):
            prefix = prefix + round_.entries
            later_evidence = [
                e
                for later in rounds[idx + 1 :]
                for e in later.entries
                if e.entry_type in EVIDENCE_TYPES
            ]
            label = int(any(_cited_in_answer(e, answer_text) for e in later_evidence))
            state = type("MinedState", (), {"new_entries_this_round": len(round_.entries)})()
            samples.append(GateSample(extract_features(prefix, state), label))
    return samples


def mine_samples_from_dir(path: str | Path) -> list[GateSample]:
    """Mine samples from every *.jsonl trace under a directory."""
    traces = []
    for file in sorted(Path(path).glob("**/*.jsonl")):
        traces.append(load_trace(file.read_text(encoding="utf-8")))
    return mine_samples(traces)
