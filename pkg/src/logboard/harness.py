"""Evaluation harness: fault injection, metrics, and the benchmark runner.

Faults reproduce the observed error taxonomy (missing rows, off-by-one row
references, arithmetic corruption, OCR misreads, cross-evidence
contradictions) as seeded, labeled mutations of sources or log entries.
Metrics cover exact match, ROUGE, log-groundedness, catch/repair rates,
efficiency accounting, and percentile-bootstrap confidence intervals.
"""

from __future__ import annotations

import json
import logging
import math
import random
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import scheduler as sched
from .agents import build_agents, flagged_steps
from .backends import TextBackend
from .gating import LogisticGate
from .log import (
    EVIDENCE_TYPES,
    CONTEXT_AGENT,
    DocSpan,
    EntryType,
    LogEntry,
    SharedLog,
    TableAnchor,
    dump_trace,
)
from .sources import SourceBundle, bundle_from_dict, bundle_to_dict
from .textutil import (
    NumericMention,
    canonical_numeral_token,
    capitalized_spans,
    is_year_like,
    numeral_values,
    parse_numerals,
    qa_normalize,
)
from .verify import assess_answer_numerals

logger = logging.getLogger(__name__)


class FaultType(Enum):
    MISSING_ROW = "MissingRow"
    ROW_OFF_BY_ONE = "RowOffByOne"
    ARITHMETIC_CORRUPTION = "ArithmeticCorruption"
    OCR_MISREAD = "OcrMisread"
    CONTRADICTION_INJECTION = "ContradictionInjection"


@dataclass(frozen=True)
class FaultSpec:
    fault_type: FaultType
    rate: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.rate <= 1.0:
            raise ValueError("rate must be in (0, 1]")


@dataclass
class FaultLabel:
    target: int | str  # entry step or source id
    fault_type: FaultType
    original: str
    corrupted: str
    record_index: int = -1

    def __post_init__(self) -> None:
        if self.original == self.corrupted:
            raise ValueError("a fault must change its target")

    def to_dict(self) -> dict:
        return {
            "record": self.record_index,
            "target": self.target,
            "fault_type": self.fault_type.value,
            "original": self.original,
            "corrupted": self.corrupted,
        }


def _corruptible_numerals(text: str) -> list[NumericMention]:
    return [m for m in parse_numerals(text) if not is_year_like(m)]


def perturb_numeral(text: str, rng: random.Random) -> tuple[str, str, str] | None:
    """Shift one numeral by one leading unit; returns (new_text, old, new)."""
    eligible = _corruptible_numerals(text)
    if not eligible:
        return None
    mention = eligible[rng.randrange(len(eligible))]
    delta = rng.choice((-1.0, 1.0))
    if mention.raw + delta == 0 or (mention.raw >= 0 and mention.raw + delta < 0):
        delta = 1.0
    new_raw = abs(mention.raw) + (delta if mention.raw >= 0 else -delta)
    body_match = re.search(r"[\d,]+(?:\.\d+)?", mention.text)
    assert body_match is not None
    body = body_match.group()
    decimals = len(body.split(".")[1]) if "." in body else 0
    if decimals:
        new_body = f"{new_raw:.{decimals}f}"
    elif "," in body:
        new_body = f"{int(new_raw):,}"
    else:
        new_body = str(int(new_raw))
    new_mention = mention.text.replace(body, new_body, 1)
    new_text = text[: mention.start] + text[mention.start : mention.end].replace(
        body, new_body, 1
    ) + text[mention.end :]
    return new_text, mention.text, new_mention


def _swap_two_numerals(text: str, rng: random.Random) -> str | None:
    mentions = parse_numerals(text)
    distinct = [
        (a, b)
        for i, a in enumerate(mentions)
        for b in mentions[i + 1 :]
        if a.text != b.text
    ]
    if not distinct:
        return None
    a, b = distinct[rng.randrange(len(distinct))]
    return text[: a.start] + b.text + text[a.end : b.start] + a.text + text[b.end :]


def _select(count_from: int, spec: FaultSpec) -> list[int]:
    count = math.ceil(spec.rate * count_from)
    rng = random.Random(spec.seed)
    return sorted(rng.sample(range(count_from), count))


def inject_faults(
    target: SourceBundle | Sequence[LogEntry], spec: FaultSpec
) -> tuple[SourceBundle | list[LogEntry], list[FaultLabel]]:
    """Apply ceil(rate * |eligible|) seeded mutations; label every one.

    SourceBundle targets support MissingRow, RowOffByOne, OcrMisread, and
    ArithmeticCorruption (on table cells); entry lists support
    ArithmeticCorruption, RowOffByOne (anchor shift), OcrMisread (visual
    text), and ContradictionInjection (a conflicting Quote is appended).
    """
    if isinstance(target, SourceBundle):
        return _inject_sources(target, spec)
    return _inject_entries(list(target), spec)


def _inject_sources(bundle: SourceBundle, spec: FaultSpec) -> tuple[SourceBundle, list[FaultLabel]]:
    out = bundle_from_dict(bundle_to_dict(bundle))  # deep copy
    labels: list[FaultLabel] = []
    rng = random.Random(spec.seed)
    ft = spec.fault_type

    if ft is FaultType.MISSING_ROW:
        targets = [
            (t_idx, r_idx)
            for t_idx, table in enumerate(out.tables)
            for r_idx in range(len(table.rows))
        ]
        _require_targets(targets, "tables with rows")
        chosen = _select(len(targets), spec)
        for t_idx, r_idx in sorted((targets[i] for i in chosen), reverse=True):
            table = out.tables[t_idx]
            row = table.rows.pop(r_idx)
            labels.append(
                FaultLabel(table.id, ft, " | ".join(row), f"<row {r_idx} deleted>")
            )
    elif ft is FaultType.ROW_OFF_BY_ONE:
        targets = [i for i, t in enumerate(out.tables) if len(t.rows) >= 2]
        _require_targets(targets, "tables with >=2 rows")
        for i in _select(len(targets), spec):
            table = out.tables[targets[i]]
            original = " | ".join(table.rows[0])
            table.rows[:] = table.rows[1:] + table.rows[:1]
            labels.append(FaultLabel(table.id, ft, original, " | ".join(table.rows[0])))
    elif ft is FaultType.ARITHMETIC_CORRUPTION:
        targets = [
            (t_idx, r, c)
            for t_idx, table in enumerate(out.tables)
            for r, row in enumerate(table.rows)
            for c, cell in enumerate(row)
            if _corruptible_numerals(cell)
        ]
        _require_targets(targets, "numeric table cells")
        for i in _select(len(targets), spec):
            t_idx, r, c = targets[i]
            table = out.tables[t_idx]
            mutated = perturb_numeral(table.rows[r][c], rng)
            assert mutated is not None
            new_cell, _, _ = mutated
            labels.append(FaultLabel(table.id, ft, table.rows[r][c], new_cell))
            table.rows[r][c] = new_cell
    elif ft is FaultType.OCR_MISREAD:
        targets = [
            i for i, img in enumerate(out.images) if _swappable(img.ocr_text)
        ]
        _require_targets(targets, "images with two distinct OCR numerals")
        for i in _select(len(targets), spec):
            image = out.images[targets[i]]
            swapped = _swap_two_numerals(image.ocr_text, rng)
            assert swapped is not None
            labels.append(FaultLabel(image.id, ft, image.ocr_text, swapped))
            image.ocr_text = swapped
    else:
        raise ValueError(f"{ft.value} requires log entries, not sources")
    return out, labels


def _swappable(text: str) -> bool:
    mentions = parse_numerals(text)
    return len({m.text for m in mentions}) >= 2


def _require_targets(targets, description: str) -> None:
    if not targets:
        raise ValueError(f"fault rate selects zero targets: no {description}")


def _copy_entry(entry: LogEntry) -> LogEntry:
    return replace(entry, provenance=list(entry.provenance))


def _inject_entries(entries: list[LogEntry], spec: FaultSpec) -> tuple[list[LogEntry], list[FaultLabel]]:
    out = [_copy_entry(e) for e in entries]
    labels: list[FaultLabel] = []
    rng = random.Random(spec.seed)
    ft = spec.fault_type

    def eligible_steps(predicate: Callable[[LogEntry], bool]) -> list[int]:
        return [i for i, e in enumerate(out) if predicate(e)]

    if ft is FaultType.ARITHMETIC_CORRUPTION:
        idxs = eligible_steps(
            lambda e: e.entry_type in EVIDENCE_TYPES and bool(_corruptible_numerals(e.content))
        )
        _require_targets(idxs, "retrieval entries with numerals")
        for i in _select(len(idxs), spec):
            entry = out[idxs[i]]
            mutated = perturb_numeral(entry.content, rng)
            assert mutated is not None
            new_content, _, _ = mutated
            labels.append(FaultLabel(entry.step, ft, entry.content, new_content))
            entry.content = new_content
    elif ft is FaultType.ROW_OFF_BY_ONE:
        idxs = eligible_steps(
            lambda e: any(isinstance(p, TableAnchor) for p in e.provenance)
        )
        _require_targets(idxs, "entries with table anchors")
        for i in _select(len(idxs), spec):
            entry = out[idxs[i]]
            pos = next(
                k for k, p in enumerate(entry.provenance) if isinstance(p, TableAnchor)
            )
            anchor = entry.provenance[pos]
            shifted = TableAnchor(anchor.table_id, anchor.row + 1, anchor.col)
            entry.provenance[pos] = shifted
            labels.append(FaultLabel(entry.step, ft, anchor.cite(), shifted.cite()))
    elif ft is FaultType.OCR_MISREAD:
        idxs = eligible_steps(
            lambda e: e.entry_type is EntryType.VISUAL and _swappable(e.content)
        )
        _require_targets(idxs, "visual entries with two distinct numerals")
        for i in _select(len(idxs), spec):
            entry = out[idxs[i]]
            swapped = _swap_two_numerals(entry.content, rng)
            assert swapped is not None
            labels.append(FaultLabel(entry.step, ft, entry.content, swapped))
            entry.content = swapped
    elif ft is FaultType.CONTRADICTION_INJECTION:
        idxs = eligible_steps(
            lambda e: e.entry_type is EntryType.LOOKUP and bool(_corruptible_numerals(e.content))
        )
        _require_targets(idxs, "lookup entries with numerals")
        next_step = max((e.step for e in out), default=-1) + 1
        last_ts = max((e.ts_ms for e in out), default=0)
        for i in _select(len(idxs), spec):
            entry = out[idxs[i]]
            mutated = perturb_numeral(entry.content, rng)
            assert mutated is not None
            _, old_text, new_text = mutated
            content = f"However, a note in the report states the figure was {new_text}."
            quote = LogEntry(
                CONTEXT_AGENT,
                EntryType.QUOTE,
                content,
                step=next_step,
                ts_ms=last_ts,
                provenance=[DocSpan("injected-note", 0, len(content))],
            )
            labels.append(FaultLabel(next_step, ft, entry.content, content))
            out.append(quote)
            next_step += 1
    else:
        raise ValueError(f"{ft.value} requires table sources, not log entries")
    return out, labels


# --- metrics ------------------------------------------------------------------

def exact_match(pred: str, golds: Sequence[str]) -> bool:
    """Normalized equality against any gold answer."""
    norm_pred = qa_normalize(pred)
    return any(norm_pred == qa_normalize(g) for g in golds)


def _lcs_len(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[-1]))
        prev = cur
    return prev[-1]


def _f1(overlap: int, pred_n: int, gold_n: int) -> float:
    if pred_n == 0 and gold_n == 0:
        return 1.0
    if overlap == 0:
        return 0.0
    precision = overlap / pred_n
    recall = overlap / gold_n
    return 2 * precision * recall / (precision + recall)


def rouge(pred: str, gold: str) -> dict[str, float]:
    """Unigram/bigram overlap F1 and LCS F1 over normalized tokens."""
    pred_tokens = qa_normalize(pred, strip_articles=False).split()
    gold_tokens = qa_normalize(gold, strip_articles=False).split()
    scores = {}
    for n, name in ((1, "rouge1"), (2, "rouge2")):
        pred_ngrams = [tuple(pred_tokens[i : i + n]) for i in range(len(pred_tokens) - n + 1)]
        gold_ngrams = [tuple(gold_tokens[i : i + n]) for i in range(len(gold_tokens) - n + 1)]
        if not pred_ngrams and not gold_ngrams:
            # Texts too short for this order: identical texts score 1, else 0.
            scores[name] = 1.0 if pred_tokens == gold_tokens else 0.0
            continue
        overlap = 0
        remaining = {}
        for g in gold_ngrams:
            remaining[g] = remaining.get(g, 0) + 1
        for p in pred_ngrams:
            if remaining.get(p, 0) > 0:
                remaining[p] -= 1
                overlap += 1
        scores[name] = _f1(overlap, len(pred_ngrams), len(gold_ngrams))
    scores["rougeL"] = _f1(
        _lcs_len(pred_tokens, gold_tokens), len(pred_tokens), len(gold_tokens)
    )
    return scores


def log_groundedness(answer: str, log: SharedLog) -> float:
    """Fraction of checkable answer units supported by evidence entries.

    Units are unique canonicalized numerals (supported when present in
    evidence or derivable from Lookup arithmetic the answer invokes) plus
    maximal capitalized spans (supported by case-insensitive containment).
    Zero checkable units scores 1.0 by convention.
    """
    if not answer or not answer.strip():
        raise ValueError("answer must be non-empty")
    supported = 0
    total = 0
    numeral_ok: dict[str, bool] = {}
    assessments = assess_answer_numerals(answer, log)
    for assessment in assessments:
        key = canonical_numeral_token(assessment.mention)
        numeral_ok[key] = numeral_ok.get(key, False) or assessment.supported
    total += len(numeral_ok)
    supported += sum(1 for ok in numeral_ok.values() if ok)
    # Blank numeral spans so unit suffixes ("M" in "$55M") are not spans.
    chars = list(answer)
    for assessment in assessments:
        for i in range(assessment.mention.start, assessment.mention.end):
            chars[i] = " "
    evidence_texts = [e.content.lower() for e in log.evidence_entries()]
    for span in sorted({s.lower() for s in capitalized_spans("".join(chars))}):
        total += 1
        if any(span in text for text in evidence_texts):
            supported += 1
    if total == 0:
        return 1.0
    return supported / total


@dataclass
class CatchRepair:
    catch_rate: float
    repair_rate: float
    caught: int
    repaired: int
    total: int
    caught_targets: list[int | str] = field(default_factory=list)
    repaired_targets: list[int | str] = field(default_factory=list)


def catch_and_repair(
    labels: Sequence[FaultLabel], final_log: SharedLog, final_answer_ok: bool
) -> CatchRepair:
    """Catch: a Flag implicates the fault's step or names its source id.
    Repair: a caught fault whose original value reappears in a later entry
    of a run that ends verified."""
    if not labels:
        raise ValueError("catch_and_repair needs labels from inject_faults")
    flags = [e for e in final_log.entries if e.entry_type is EntryType.FLAG]
    implicated: set[int] = set()
    flag_texts = []
    first_flag_step = None
    for flag in flags:
        implicated.update(flagged_steps(flag.content))
        flag_texts.append(flag.content.lower())
        if first_flag_step is None:
            first_flag_step = flag.step
    caught_targets: list[int | str] = []
    repaired_targets: list[int | str] = []
    for label in labels:
        if isinstance(label.target, int):
            caught = label.target in implicated
        else:
            caught = any(str(label.target).lower() in text for text in flag_texts)
        if not caught:
            continue
        caught_targets.append(label.target)
        if not final_answer_ok or first_flag_step is None:
            continue
        restored = set(numeral_values(label.original)) - set(numeral_values(label.corrupted))
        for entry in final_log.entries:
            if entry.step <= first_flag_step or entry.entry_type not in EVIDENCE_TYPES:
                continue
            entry_values = set(numeral_values(entry.content))
            if restored and restored <= entry_values:
                repaired_targets.append(label.target)
                break
            if not restored and label.original.lower() in entry.content.lower():
                repaired_targets.append(label.target)
                break
    total = len(labels)
    return CatchRepair(
        catch_rate=len(caught_targets) / total,
        repair_rate=len(repaired_targets) / total,
        caught=len(caught_targets),
        repaired=len(repaired_targets),
        total=total,
        caught_targets=caught_targets,
        repaired_targets=repaired_targets,
    )


def bootstrap_ci(
    values: Sequence[float],
    resamples: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Seeded percentile bootstrap of the mean."""
    if len(values) == 0:
        raise ValueError("bootstrap_ci needs at least one value")
    arr = np.asarray(values, dtype=float)
    if arr.min() == arr.max():
        # Degenerate distribution: the interval is the point itself, without
        # float-summation noise from resampled means.
        return float(arr[0]), float(arr[0])
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(arr), size=(resamples, len(arr)))
    means = arr[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    low, high = np.percentile(means, [100 * alpha, 100 * (1 - alpha)])
    return float(low), float(high)


# --- benchmark runner ---------------------------------------------------------

@dataclass
class BenchmarkRecord:
    question: str
    sources: SourceBundle
    gold_answers: list[str]

    def __post_init__(self) -> None:
        if not self.gold_answers:
            raise ValueError("a benchmark record needs at least one gold answer")


def load_benchmark(path: str | Path) -> list[BenchmarkRecord]:
    """Read records from JSONL: {"question","gold_answers","sources"}."""
    records = []
    base = Path(path).parent
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        data = json.loads(line)
        if "sources_path" in data:
            from .sources import load_sources

            bundle = load_sources(base / data["sources_path"])
        else:
            bundle = bundle_from_dict(data.get("sources", {}))
        records.append(
            BenchmarkRecord(
                question=data["question"],
                sources=bundle,
                gold_answers=list(data["gold_answers"]),
            )
        )
    return records


@dataclass
class Metrics:
    em: float
    rouge1: float
    rouge2: float
    rougeL: float
    log_groundedness: float
    catch_rate: float
    repair_rate: float
    ci_low: float
    ci_high: float
    backend_calls_mean: float
    token_mean: float
    latency_ms_p50: float
    latency_ms_p95: float
    em_by_log_bucket: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "em": self.em,
            "rouge1": self.rouge1,
            "rouge2": self.rouge2,
            "rougeL": self.rougeL,
            "log_groundedness": self.log_groundedness,
            "catch_rate": self.catch_rate,
            "repair_rate": self.repair_rate,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "backend_calls_mean": self.backend_calls_mean,
            "token_mean": self.token_mean,
            "latency_ms_p50": self.latency_ms_p50,
            "latency_ms_p95": self.latency_ms_p95,
            "em_by_log_bucket": self.em_by_log_bucket,
        }
        return out


_ENTRY_FAULTS = frozenset(
    {FaultType.ARITHMETIC_CORRUPTION, FaultType.ROW_OFF_BY_ONE, FaultType.OCR_MISREAD}
)


class _InFlightInjector:
    """Mutates selected retrieval appends of one record during a live run."""

    def __init__(self, spec: FaultSpec, record_index: int, chosen: set[int]) -> None:
        self.spec = spec
        self.record_index = record_index
        self.chosen = chosen
        self.occurrence = 0
        self.mutated: list[tuple[LogEntry, str, str]] = []

    def __call__(self, entry: LogEntry) -> LogEntry:
        if not _entry_eligible(entry, self.spec.fault_type):
            return entry
        occ = self.occurrence
        self.occurrence += 1
        if occ not in self.chosen:
            return entry
        rng = random.Random(f"{self.spec.seed}:{self.record_index}:{occ}")
        original = entry.content
        ft = self.spec.fault_type
        if ft is FaultType.ARITHMETIC_CORRUPTION:
            mutated = perturb_numeral(entry.content, rng)
            if mutated is None:
                return entry
            entry.content = mutated[0]
            self.mutated.append((entry, original, entry.content))
        elif ft is FaultType.OCR_MISREAD:
            swapped = _swap_two_numerals(entry.content, rng)
            if swapped is None:
                return entry
            entry.content = swapped
            self.mutated.append((entry, original, entry.content))
        elif ft is FaultType.ROW_OFF_BY_ONE:
            pos = next(
                (k for k, p in enumerate(entry.provenance) if isinstance(p, TableAnchor)),
                None,
            )
            if pos is None:
                return entry
            anchor = entry.provenance[pos]
            shifted = TableAnchor(anchor.table_id, anchor.row + 1, anchor.col)
            entry.provenance[pos] = shifted
            self.mutated.append((entry, anchor.cite(), shifted.cite()))
        return entry

    def labels(self) -> list[FaultLabel]:
        out = []
        for entry, original, corrupted in self.mutated:
            out.append(
                FaultLabel(
                    target=entry.step,
                    fault_type=self.spec.fault_type,
                    original=original,
                    corrupted=corrupted,
                    record_index=self.record_index,
                )
            )
        return out


def _entry_eligible(entry: LogEntry, fault_type: FaultType) -> bool:
    if entry.entry_type not in EVIDENCE_TYPES:
        return False
    if fault_type is FaultType.ARITHMETIC_CORRUPTION:
        return bool(_corruptible_numerals(entry.content))
    if fault_type is FaultType.OCR_MISREAD:
        return entry.entry_type is EntryType.VISUAL and _swappable(entry.content)
    if fault_type is FaultType.ROW_OFF_BY_ONE:
        return any(isinstance(p, TableAnchor) for p in entry.provenance)
    return False


class _EligibilityCounter:
    """Dry-pass mutator: counts eligible retrieval appends, mutates nothing."""

    def __init__(self, fault_type: FaultType) -> None:
        self.fault_type = fault_type
        self.count = 0

    def __call__(self, entry: LogEntry) -> LogEntry:
        if _entry_eligible(entry, self.fault_type):
            self.count += 1
        return entry


def _run_record(
    record: BenchmarkRecord,
    config: sched.SchedulerConfig,
    backend_factory: Callable[[], TextBackend],
    gate: LogisticGate | None,
    mutator,
) -> sched.RunResult:
    backend = backend_factory()
    agents = build_agents(per_query_action_cap=config.per_agent_cap)
    return sched.run(
        record.question,
        record.sources,
        backend,
        config=config,
        agents=agents,
        gate=gate,
        entry_mutator=mutator,
    )


def run_benchmark(
    records: Sequence[BenchmarkRecord],
    config: sched.SchedulerConfig | None = None,
    backend_factory: Callable[[], TextBackend] | None = None,
    fault_spec: FaultSpec | None = None,
    gate: LogisticGate | None = None,
    out_dir: str | Path | None = None,
    seed: int = 0,
) -> tuple[Metrics, list[dict]]:
    """Run every record, aggregate Metrics, and optionally write reports.

    With a fault spec, a dry pass first enumerates eligible retrieval
    appends across the whole benchmark so that exactly ceil(rate * N)
    targets are selected by seed; the live pass then corrupts those appends
    in flight, letting verification, re-engagement, and repair react.
    Individual run failures score EM 0 with an error note; the benchmark
    always completes.
    """
    if not records:
        raise ValueError("run_benchmark needs at least one record")
    if backend_factory is None:
        raise ValueError("run_benchmark needs a backend factory")
    config = config or sched.SchedulerConfig()

    chosen_by_record: dict[int, set[int]] = {}
    if fault_spec is not None:
        if fault_spec.fault_type not in _ENTRY_FAULTS:
            raise ValueError(
                f"in-run injection supports {sorted(t.value for t in _ENTRY_FAULTS)}; "
                "apply source-level faults to records before the benchmark"
            )
        eligible: list[tuple[int, int]] = []
        for i, record in enumerate(records):
            counter = _EligibilityCounter(fault_spec.fault_type)
            try:
                _run_record(record, config, backend_factory, gate, counter)
            except Exception:
                logger.exception("dry pass failed for record %d", i)
            eligible.extend((i, occ) for occ in range(counter.count))
        _require_targets(eligible, "eligible retrieval entries in the benchmark")
        for pos in _select(len(eligible), fault_spec):
            rec, occ = eligible[pos]
            chosen_by_record.setdefault(rec, set()).add(occ)

    reports: list[dict] = []
    traces: list[list[LogEntry]] = []
    all_labels: list[FaultLabel] = []
    em_values: list[float] = []
    rouge_sums = {"rouge1": 0.0, "rouge2": 0.0, "rougeL": 0.0}
    groundedness_values: list[float] = []
    calls: list[int] = []
    tokens: list[int] = []
    wall: list[int] = []
    caught = repaired = label_total = 0
    fault_rows: list[dict] = []

    for i, record in enumerate(records):
        injector = None
        if fault_spec is not None:
            injector = _InFlightInjector(fault_spec, i, chosen_by_record.get(i, set()))
        error = None
        try:
            result = _run_record(record, config, backend_factory, gate, injector)
        except Exception as exc:  # a failed run scores zero; the bench goes on
            logger.exception("run failed for record %d", i)
            error = f"{type(exc).__name__}: {exc}"
            result = None

        answer = result.final_answer if result else None
        em = bool(answer) and exact_match(answer, record.gold_answers)
        em_values.append(1.0 if em else 0.0)
        best_rouge = {"rouge1": 0.0, "rouge2": 0.0, "rougeL": 0.0}
        if answer:
            for gold in record.gold_answers:
                scores = rouge(answer, gold)
                if scores["rougeL"] >= best_rouge["rougeL"]:
                    best_rouge = scores
        for key in rouge_sums:
            rouge_sums[key] += best_rouge[key]

        report = {
            "question": record.question,
            "answer": answer,
            "em": em,
            "termination": result.termination.value if result else "Error",
            "rounds": result.metrics.rounds if result else 0,
            "backend_calls": result.metrics.backend_calls if result else 0,
            "token_usage": result.metrics.token_usage if result else 0,
            "wall_ms": result.metrics.wall_ms if result else 0,
            "log_entries": len(result.log.entries) if result else 0,
        }
        if error:
            report["error"] = error
        if result is not None:
            traces.append(result.log.entries)
            calls.append(result.metrics.backend_calls)
            tokens.append(result.metrics.token_usage)
            wall.append(result.metrics.wall_ms)
            if answer:
                groundedness_values.append(log_groundedness(answer, result.log))
            if injector is not None:
                labels = injector.labels()
                all_labels.extend(labels)
                if labels:
                    outcome = catch_and_repair(
                        labels,
                        result.log,
                        result.termination is sched.Termination.ANSWER_VERIFIED,
                    )
                    caught += outcome.caught
                    repaired += outcome.repaired
                    label_total += outcome.total
                    for label in labels:
                        fault_rows.append(
                            {
                                **label.to_dict(),
                                "caught": label.target in outcome.caught_targets,
                                "repaired": label.target in outcome.repaired_targets,
                            }
                        )
        else:
            traces.append([])
        reports.append(report)

    ci_low, ci_high = bootstrap_ci(em_values, seed=seed)
    buckets: dict[str, list[float]] = {}
    for report, em in zip(reports, em_values):
        n = report["log_entries"]
        bucket = "1-6" if n <= 6 else ("7-8" if n <= 8 else "9+")
        buckets.setdefault(bucket, []).append(em)
    metrics = Metrics(
        em=float(np.mean(em_values)),
        rouge1=rouge_sums["rouge1"] / len(records),
        rouge2=rouge_sums["rouge2"] / len(records),
        rougeL=rouge_sums["rougeL"] / len(records),
        log_groundedness=(
            float(np.mean(groundedness_values)) if groundedness_values else 0.0
        ),
        catch_rate=caught / label_total if label_total else 0.0,
        repair_rate=repaired / label_total if label_total else 0.0,
        ci_low=ci_low,
        ci_high=ci_high,
        backend_calls_mean=float(np.mean(calls)) if calls else 0.0,
        token_mean=float(np.mean(tokens)) if tokens else 0.0,
        latency_ms_p50=float(np.percentile(wall, 50)) if wall else 0.0,
        latency_ms_p95=float(np.percentile(wall, 95)) if wall else 0.0,
        em_by_log_bucket={k: float(np.mean(v)) for k, v in sorted(buckets.items())},
    )

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(
            json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        with open(out / "report.jsonl", "w", encoding="utf-8") as fh:
            for report in reports:
                fh.write(json.dumps(report, ensure_ascii=False) + "\n")
        for i, entries in enumerate(traces):
            (out / f"trace_{i:03d}.jsonl").write_text(
                dump_trace(entries), encoding="utf-8"
            )
        if fault_spec is not None:
            (out / "faults.json").write_text(
                json.dumps(fault_rows, indent=2, ensure_ascii=False) + "\n",
                encoding="utf-8",
            )
    return metrics, reports
