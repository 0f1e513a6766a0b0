"""
Equal error rate from the ROC convex hull, and per-attack EER reports.

The hull is obtained with pool-adjacent-violators isotonic regression of the
trial labels against the sorted scores, the way the BOSARIS toolkit does it.
"""

import csv
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

from spoofbox.errors import InsufficientDataError, ProtocolError
from spoofbox.features import FeatureConfig

logger = logging.getLogger("spoofbox")

ATTACKS: tuple[str, ...] = ("S1", "S2", "S3", "S4", "S5")
NO_ATTACK = "-"


class Label(Enum):
    GENUINE = "genuine"
    SPOOF = "spoof"


@dataclass(frozen=True)
class ScoreEntry:
    utterance_id: str
    score: float
    label: Label
    attack: str | None = None


@dataclass
class ScoreSet:
    entries: list[ScoreEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, utterance_id: str, score: float, label: Label, attack: str | None = None) -> None:
        self.entries.append(ScoreEntry(utterance_id, float(score), label, attack))

    def genuine_scores(self) -> NDArray[np.float64]:
        return np.array([e.score for e in self.entries if e.label is Label.GENUINE], dtype=np.float64)

    def spoof_scores(self, attack: str | None = None) -> NDArray[np.float64]:
        return np.array(
            [e.score for e in self.entries if e.label is Label.SPOOF and (attack is None or e.attack == attack)],
            dtype=np.float64,
        )

    def attacks(self) -> list[str]:
        return sorted({e.attack for e in self.entries if e.label is Label.SPOOF and e.attack})


@dataclass(frozen=True)
class RocchCurve:
    """Hull vertices from (Pmiss, Pfa) = (0, 1) to (1, 0)"""
    p_miss: NDArray[np.float64]
    p_fa: NDArray[np.float64]
    n_miss: NDArray[np.int64]
    n_fa: NDArray[np.int64]

    @property
    def vertices(self) -> list[tuple[float, float]]:
        return list(zip(self.p_miss.tolist(), self.p_fa.tolist()))


def _pool_adjacent_violators(successes: NDArray[np.int64], sizes: NDArray[np.int64]) -> NDArray[np.int64]:
    """Isotonic (non-decreasing) fit of success rates; returns how many input blocks each pooled block spans.

    Rates are compared as exact integer cross-products. Adjacent blocks with
    equal rates are pooled too, so consecutive pooled blocks have strictly
    increasing rates.
    """
    hits: list[int] = []
    totals: list[int] = []
    spans: list[int] = []
    for hit, total in zip(successes.tolist(), sizes.tolist()):
        hits.append(hit)
        totals.append(total)
        spans.append(1)
        # merge while the previous block's rate is not strictly below the last one's
        while len(hits) > 1 and hits[-2] * totals[-1] >= hits[-1] * totals[-2]:
            h, t, s = hits.pop(), totals.pop(), spans.pop()
            hits[-1] += h
            totals[-1] += t
            spans[-1] += s
    return np.array(spans, dtype=np.int64)


def rocch(target_scores: ArrayLike, nontarget_scores: ArrayLike) -> RocchCurve:
    """ROC convex hull of target (genuine) versus non-target (spoof) scores.

    Equal scores are pooled into one block before isotonic regression, so ties
    never produce an optimistic staircase.
    """
    tar = np.asarray(target_scores, dtype=np.float64).ravel()
    non = np.asarray(nontarget_scores, dtype=np.float64).ravel()
    if tar.size == 0 or non.size == 0:
        raise InsufficientDataError(
            f"ROCCH needs both classes, got {tar.size} genuine and {non.size} spoof trials"
        )
    scores = np.concatenate([tar, non])
    is_target = np.concatenate([np.ones(tar.size, dtype=np.int64), np.zeros(non.size, dtype=np.int64)])

    unique_scores, inverse = np.unique(scores, return_inverse=True)
    tie_targets = np.bincount(inverse, weights=is_target, minlength=len(unique_scores)).astype(np.int64)
    tie_sizes = np.bincount(inverse, minlength=len(unique_scores)).astype(np.int64)

    pooled = _pool_adjacent_violators(tie_targets, tie_sizes)
    ends = np.cumsum(pooled)
    targets_below = np.concatenate([[0], np.cumsum(tie_targets)[ends - 1]])
    trials_below = np.concatenate([[0], np.cumsum(tie_sizes)[ends - 1]])
    nontargets_above = non.size - (trials_below - targets_below)

    n_miss = targets_below.astype(np.int64)
    n_fa = nontargets_above.astype(np.int64)
    return RocchCurve(p_miss=n_miss / tar.size, p_fa=n_fa / non.size, n_miss=n_miss, n_fa=n_fa)


def eer_from_rocch(curve: RocchCurve) -> float:
    """Where the hull crosses Pmiss = Pfa, in percent"""
    gap = curve.p_miss - curve.p_fa
    on_diagonal = np.flatnonzero(gap == 0.0)
    if len(on_diagonal):
        return 100.0 * float(curve.p_miss[on_diagonal[0]])
    i = int(np.flatnonzero((gap[:-1] < 0.0) & (gap[1:] > 0.0))[0])
    t = -gap[i] / (gap[i + 1] - gap[i])
    return 100.0 * float(curve.p_miss[i] + t * (curve.p_miss[i + 1] - curve.p_miss[i]))


def eer_from_scores(target_scores: ArrayLike, nontarget_scores: ArrayLike) -> float:
    return eer_from_rocch(rocch(target_scores, nontarget_scores))


def eer_of(scores: ScoreSet, attack: str | None = None) -> float:
    return eer_from_scores(scores.genuine_scores(), scores.spoof_scores(attack))


def average_eer(cells: Iterable[float | None]) -> float | None:
    present = [c for c in cells if c is not None]
    if not present:
        return None
    return sum(present) / len(present)


@dataclass(frozen=True)
class EvalReport:
    family: str
    dynamics: str
    cells: dict[str, float | None]

    @property
    def average(self) -> float | None:
        return average_eer(self.cells.get(a) for a in ATTACKS)


def per_attack_report(scores: ScoreSet, config: FeatureConfig) -> EvalReport:
    """EER of all genuine trials against the spoof trials of each attack"""
    genuine = scores.genuine_scores()
    if genuine.size == 0:
        raise InsufficientDataError(f"no genuine trials to evaluate {config.name}")
    cells: dict[str, float | None] = {}
    for attack in ATTACKS:
        spoof = scores.spoof_scores(attack)
        if spoof.size == 0:
            logger.warning(f"{config.name}: no {attack} trials, cell left empty")
            cells[attack] = None
            continue
        cells[attack] = eer_from_scores(genuine, spoof)
    report = EvalReport(family=config.family.name, dynamics=config.dynamics.label, cells=cells)
    avg = report.average
    logger.info(f"{config.name}: average EER {'-' if avg is None else f'{avg:.3f}'}%")
    return report


def write_scores(scores: ScoreSet, path: Path) -> None:
    """TSV of utt_id, score, label, attack; rows sorted by utterance id"""
    path.parent.mkdir(parents=True, exist_ok=True)
    partial_path = path.parent / (path.name + ".partial")
    with open(partial_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        for entry in sorted(scores.entries, key=lambda e: e.utterance_id):
            writer.writerow([entry.utterance_id, repr(entry.score), entry.label.value, entry.attack or NO_ATTACK])
    _ = partial_path.replace(path)


def read_scores(path: Path) -> ScoreSet:
    scores = ScoreSet()
    with open(path, "r", newline="", encoding="utf-8") as f:
        for line_number, row in enumerate(csv.reader(f, delimiter="\t"), start=1):
            if not row:
                continue
            if len(row) != 4:
                raise ProtocolError(f"{path}: expected 4 columns, got {len(row)}", line_number)
            utt_id, score, label, attack = row
            try:
                scores.add(utt_id, float(score), Label(label), None if attack == NO_ATTACK else attack)
            except ValueError as e:
                raise ProtocolError(f"{path}: {e}", line_number) from e
    return scores


def _format_cell(value: float | None) -> str:
    return "-" if value is None else f"{value:.3f}"


def report_rows(reports: Sequence[EvalReport]) -> list[list[str]]:
    header = ["Feature", "Type", *ATTACKS, "Avg"]
    rows = [header]
    for report in reports:
        rows.append([
            report.family,
            report.dynamics,
            *(_format_cell(report.cells.get(a)) for a in ATTACKS),
            _format_cell(report.average),
        ])
    return rows


def write_report(reports: Sequence[EvalReport], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    partial_path = path.parent / (path.name + ".partial")
    with open(partial_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        writer.writerows(report_rows(reports))
    _ = partial_path.replace(path)


def render_report(reports: Sequence[EvalReport]) -> str:
    """Aligned plain-text table of EER (%) per attack"""
    rows = report_rows(reports)
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines: list[str] = []
    for index, row in enumerate(rows):
        cells = [row[0].ljust(widths[0]), row[1].ljust(widths[1])]
        cells.extend(cell.rjust(width) for cell, width in zip(row[2:], widths[2:]))
        lines.append("  ".join(cells).rstrip())
        if index == 0:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines)
