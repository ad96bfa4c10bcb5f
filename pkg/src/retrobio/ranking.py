"""
Candidate scoring, deterministic ranking and coverage evaluation.

Three scorers rank precursor candidates for a target: the Tanimoto
baseline (similarity of the target to the OR-combined precursor block),
the one-step neural ranker on the 1024-bit pair feature, and the two-step
neural ranker on the 1536-bit chain feature. Ranks are 1-based and
contiguous; ties break on the canonical precursor key so shuffling the
input never changes an assigned rank.

Evaluation follows the rank-among-negatives protocol: each positive is
mixed with the negatives of its group, every candidate is scored, and the
positive's rank feeds the coverage curve (fraction of positives ranked
within top-k) and the rank histograms.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

from .dataset import DatasetRow
from .fingerprint import (
    Fingerprint,
    Fingerprinter,
    combine_fingerprints,
    reaction_feature,
    tanimoto,
)
from .neural import MlpModel, forward

__all__ = [
    "RankedCandidate",
    "CoverageCurve",
    "EvaluationReport",
    "GroupWithoutPositive",
    "score_baseline",
    "score_nn1",
    "score_nn2",
    "rank_candidates",
    "group_rows",
    "evaluate_ranking",
    "row_scorer",
    "write_report_tsv",
    "write_report_json",
    "DEFAULT_COVERAGE_KS",
]

DEFAULT_COVERAGE_KS = (1, 5, 10, 50, 100, 1000)


class GroupWithoutPositive(ValueError):
    pass


def score_baseline(
    target: Fingerprint, precursors: list[Fingerprint]
) -> float:
    """Tanimoto similarity between target and the combined precursor block."""
    return tanimoto(target, combine_fingerprints(precursors))


def score_nn1(
    model: MlpModel, target: Fingerprint, precursors: list[Fingerprint]
) -> float:
    """One-step neural score on the [target || precursors] feature."""
    feature = reaction_feature(target, [combine_fingerprints(precursors)])
    return forward(model, feature.to_array())


def score_nn2(
    model: MlpModel,
    target: Fingerprint,
    step1: Fingerprint,
    step2: Fingerprint,
) -> float:
    """Two-step neural score on the [target || step1 || step2] feature."""
    feature = reaction_feature(target, [step1, step2])
    return forward(model, feature.to_array())


def _tie_key(candidate) -> tuple:
    """Deterministic tie-break key: the canonical precursor identity."""
    if isinstance(candidate, str):
        return (candidate,)
    if isinstance(candidate, DatasetRow):
        return tuple(".".join(step) for step in candidate.steps)
    for attr in ("precursor_keys", "reactant_keys", "key"):
        value = getattr(candidate, attr, None)
        if value is not None:
            return (value,) if isinstance(value, str) else tuple(value)
    return (repr(candidate),)


@dataclass(frozen=True)
class RankedCandidate:
    candidate: object
    score: float
    rank: int  # 1-based, contiguous
    rank_percent: float  # 100 * rank / total


def rank_candidates(scored: list[tuple[object, float]]) -> list[RankedCandidate]:
    """Sort by score descending, ties by canonical key ascending."""
    if not scored:
        raise ValueError("cannot rank an empty candidate list")
    ordered = sorted(scored, key=lambda cs: (-cs[1], _tie_key(cs[0])))
    total = len(ordered)
    return [
        RankedCandidate(cand, score, i + 1, 100.0 * (i + 1) / total)
        for i, (cand, score) in enumerate(ordered)
    ]


@dataclass(frozen=True)
class CoverageCurve:
    points: tuple[tuple[int, float], ...]  # (k, fraction of positives <= k)

    def at(self, k: int) -> float:
        for kk, fraction in self.points:
            if kk == k:
                return fraction
        raise KeyError(k)


@dataclass
class EvaluationReport:
    scorer_name: str
    rows: list[dict] = field(default_factory=list)  # per evaluation unit
    coverage: CoverageCurve | None = None
    rank_histogram: dict[int, int] = field(default_factory=dict)
    percent_histogram: dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scorer": self.scorer_name,
            "units": len(self.rows),
            "coverage": [list(p) for p in self.coverage.points],
            "rank_histogram": {
                str(k): v for k, v in sorted(self.rank_histogram.items())
            },
            "percent_histogram": {
                str(k): v for k, v in sorted(self.percent_histogram.items())
            },
        }


def group_rows(rows: list[DatasetRow]) -> list[tuple[DatasetRow, list[DatasetRow]]]:
    """Evaluation units: one per positive, sharing its group's negatives.

    Raises GroupWithoutPositive when a group key has no positive row.
    """
    by_group: dict[str, list[DatasetRow]] = {}
    for row in rows:
        by_group.setdefault(row.group_key, []).append(row)
    units = []
    for key in sorted(by_group):
        members = by_group[key]
        positives = [r for r in members if r.is_positive]
        negatives = [r for r in members if not r.is_positive]
        if not positives:
            raise GroupWithoutPositive(f"group {key!r} has no positive row")
        for pos in positives:
            units.append((pos, negatives))
    return units


def row_scorer(kind: str, fingerprinter: Fingerprinter, model: MlpModel | None = None):
    """Scorer over DatasetRow for 'baseline', 'nn1pr' or 'nn2pr'.

    On two-step rows the baseline compares the target with both step blocks
    combined, and the one-step model scores the most recent step (the
    [step1 || step2] pair), using no information about the target.
    """
    fp = fingerprinter

    def blocks(row: DatasetRow) -> list[Fingerprint]:
        return [fp.of_keys(step) for step in row.steps]

    if kind == "baseline":
        def score(row: DatasetRow) -> float:
            return tanimoto(fp.of_key(row.target_key),
                            combine_fingerprints(blocks(row)))
        return score
    if kind == "nn1pr":
        if model is None:
            raise ValueError("nn1pr scorer needs a model")

        def score(row: DatasetRow) -> float:
            b = blocks(row)
            if len(b) == 1:
                return score_nn1(model, fp.of_key(row.target_key), [b[0]])
            return forward(model, reaction_feature(b[0], [b[1]]).to_array())
        return score
    if kind == "nn2pr":
        if model is None:
            raise ValueError("nn2pr scorer needs a model")

        def score(row: DatasetRow) -> float:
            b = blocks(row)
            if len(b) != 2:
                raise ValueError("nn2pr scores two-step rows only")
            return score_nn2(model, fp.of_key(row.target_key), b[0], b[1])
        return score
    raise ValueError(f"unknown scorer kind {kind!r}")


def evaluate_ranking(
    scorer,
    units: list[tuple[DatasetRow, list[DatasetRow]]],
    ks: tuple[int, ...] = DEFAULT_COVERAGE_KS,
    scorer_name: str = "scorer",
) -> EvaluationReport:
    """Rank each positive among its negatives and summarize coverage."""
    report = EvaluationReport(scorer_name=scorer_name)
    ranks = []
    for positive, negatives in units:
        scored = [(positive, scorer(positive))] + [
            (neg, scorer(neg)) for neg in negatives
        ]
        ranked = rank_candidates(scored)
        entry = next(rc for rc in ranked if rc.candidate is positive)
        ranks.append(entry.rank)
        report.rows.append(
            {
                "group_key": positive.group_key,
                "rank": entry.rank,
                "total": len(ranked),
                "rank_percent": entry.rank_percent,
                "score": entry.score,
            }
        )
    rank_counter = Counter(ranks)
    percent_counter = Counter(
        int(row["rank_percent"]) if row["rank_percent"] < 100 else 100
        for row in report.rows
    )
    n = len(ranks)
    report.coverage = CoverageCurve(
        tuple((k, sum(1 for r in ranks if r <= k) / n) for k in ks)
    )
    report.rank_histogram = dict(rank_counter)
    report.percent_histogram = dict(percent_counter)
    return report


def write_report_tsv(path, report: EvaluationReport) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# group_key\trank\ttotal\trank_percent\tscore\n")
        for row in report.rows:
            fh.write(
                f"{row['group_key']}\t{row['rank']}\t{row['total']}\t"
                f"{row['rank_percent']:.4f}\t{row['score']:.6f}\n"
            )


def write_report_json(path, reports: list[EvaluationReport], extra: dict | None = None) -> None:
    payload = {
        "schema_version": 1,
        "reports": [r.to_dict() for r in reports],
    }
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
