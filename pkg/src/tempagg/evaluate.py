"""EPIC-style metrics, subset breakdowns and late fusion of per-modality scores."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataio import LEVELS, AnnotationTable, SubsetLists
from .errors import DimensionError

ROW_SUM_TOL = 1e-5


@dataclass
class PredictionMatrix:
    segment_ids: list[str]
    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2 or self.scores.shape[0] != len(self.segment_ids):
            raise DimensionError(
                f"{len(self.segment_ids)} segment ids for a score matrix of shape {self.scores.shape}")
        if len(set(self.segment_ids)) != len(self.segment_ids):
            raise ValueError("duplicate segment ids in prediction matrix")
        if np.any(self.scores < 0) or np.any(np.abs(self.scores.sum(axis=1) - 1.0) > ROW_SUM_TOL):
            raise ValueError("prediction rows must be probability distributions")

    @property
    def num_classes(self) -> int:
        return self.scores.shape[1]


def _ranking(preds: np.ndarray) -> np.ndarray:
    # stable sort of negated scores ranks lower class indices first among ties
    return np.argsort(-preds, axis=1, kind="stable")


def topk_hits(preds: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > preds.shape[1]:
        raise ValueError(f"k={k} exceeds the number of classes {preds.shape[1]}")
    if preds.shape[0] != labels.shape[0]:
        raise DimensionError(f"{preds.shape[0]} prediction rows for {labels.shape[0]} labels")
    return (_ranking(preds)[:, :k] == labels[:, None]).any(axis=1)


def topk_accuracy(preds, labels, k: int) -> float:
    """Percentage of rows whose label is among the k highest scores."""
    hits = topk_hits(preds, labels, k)
    return 100.0 * int(hits.sum()) / hits.size


def class_mean_topk_recall(preds, labels, k: int, class_subset: Sequence[int] | None = None) -> float:
    """Mean over classes (restricted to ``class_subset`` and present in ``labels``) of top-k recall."""
    labels = np.asarray(labels)
    hits = topk_hits(preds, labels, k)
    present = np.unique(labels)
    classes = present if class_subset is None else np.intersect1d(present, np.asarray(list(class_subset)))
    if classes.size == 0:
        raise ValueError("no class of the subset occurs in the labels")
    per_class = [100.0 * int(hits[labels == c].sum()) / int((labels == c).sum()) for c in classes]
    return sum(per_class) / len(per_class)


def late_fuse(matrices: Sequence[PredictionMatrix]) -> PredictionMatrix:
    """Average voting over modalities.

    Scores are sorted along the modality axis and summed in extended
    precision, so the result does not depend on input order and fusing
    identical matrices returns them unchanged.
    """
    if not matrices:
        raise ValueError("nothing to fuse")
    ref = matrices[0]
    for m in matrices[1:]:
        if m.segment_ids != ref.segment_ids:
            raise ValueError("prediction matrices cover different segment ids")
        if m.scores.shape != ref.scores.shape:
            raise DimensionError(f"cannot fuse scores of shape {ref.scores.shape} and {m.scores.shape}")
    stacked = np.sort(np.stack([m.scores for m in matrices]), axis=0).astype(np.longdouble)
    fused = (stacked.sum(axis=0) / len(matrices)).astype(np.float64)
    return PredictionMatrix(list(ref.segment_ids), fused)


def marginalize_action_to_verb_noun(action_probs: np.ndarray, action_map: dict[int, tuple[int, int]],
                                    num_verbs: int | None = None,
                                    num_nouns: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    action_probs = np.asarray(action_probs)
    n_actions = action_probs.shape[1]
    missing = [a for a in range(n_actions) if a not in action_map]
    if missing:
        raise KeyError(f"action classes without a (verb, noun) mapping: {missing[:10]}")
    verbs = np.array([action_map[a][0] for a in range(n_actions)])
    nouns = np.array([action_map[a][1] for a in range(n_actions)])
    num_verbs = num_verbs or int(verbs.max()) + 1
    num_nouns = num_nouns or int(nouns.max()) + 1
    verb_probs = np.zeros((action_probs.shape[0], num_verbs), dtype=action_probs.dtype)
    noun_probs = np.zeros((action_probs.shape[0], num_nouns), dtype=action_probs.dtype)
    np.add.at(verb_probs.T, verbs, action_probs.T)
    np.add.at(noun_probs.T, nouns, action_probs.T)
    return verb_probs, noun_probs


@dataclass
class MetricReport:
    """Cells keyed by (split, level, metric) with values in percent."""

    cells: dict[tuple[str, str, str], float] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def __getitem__(self, key: tuple[str, str, str]) -> float:
        return self.cells[key]

    def to_text(self) -> str:
        lines = [f"{s}.{lv}.{m} = {v:.2f}" for (s, lv, m), v in self.cells.items()]
        lines += [f"# {f}" for f in self.flags]
        return "\n".join(lines) + "\n"

    def to_rows(self) -> list[tuple[str, str, str, float]]:
        return [(s, lv, m, v) for (s, lv, m), v in self.cells.items()]

    def write(self, path) -> None:
        """``path`` gets a CSV table; a sibling ``.txt`` holds the key-value form."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("split", "level", "metric", "value"))
            for row in self.to_rows():
                w.writerow(row[:3] + (repr(row[3]),))
        path.with_suffix(".txt").write_text(self.to_text())

    def to_json(self) -> str:
        return json.dumps({"cells": {".".join(k): v for k, v in self.cells.items()},
                           "flags": self.flags}, indent=2)


def _level_cells(report: MetricReport, split: str, level: str, scores: np.ndarray,
                 labels: np.ndarray, recall_classes=None) -> None:
    c = scores.shape[1]
    k5 = min(5, c)
    msg = f"{level}: only {c} classes, top-5 computed as top-{k5}"
    if k5 < 5 and msg not in report.flags:
        report.flags.append(msg)
    report.cells[(split, level, "top1")] = topk_accuracy(scores, labels, 1)
    report.cells[(split, level, "top5")] = topk_accuracy(scores, labels, k5)
    report.cells[(split, level, "recall5")] = class_mean_topk_recall(scores, labels, k5, recall_classes)


def evaluate_split(preds: PredictionMatrix, annotations: AnnotationTable,
                   subsets: SubsetLists | None, action_map: dict[int, tuple[int, int]]) -> MetricReport:
    """Top-1/top-5 accuracy and class-mean top-5 recall for verb/noun/action over
    the overall, unseen-participant and tail-class splits."""
    by_id = annotations.by_id()
    unknown = [s for s in preds.segment_ids if s not in by_id]
    if unknown or len(preds.segment_ids) != len(by_id):
        raise ValueError(f"prediction ids do not match annotations (unknown: {unknown[:5]}, "
                         f"{len(preds.segment_ids)} predictions for {len(by_id)} segments)")
    rows = [by_id[s] for s in preds.segment_ids]
    verb_p, noun_p = marginalize_action_to_verb_noun(preds.scores, action_map)
    scores = {"verb": verb_p, "noun": noun_p, "action": preds.scores}
    labels = {lv: np.array([r.label(lv) for r in rows]) for lv in LEVELS}
    report = MetricReport()
    for lv in LEVELS:
        _level_cells(report, "overall", lv, scores[lv], labels[lv])

    if subsets is None:
        msg = "no subset definitions given; overall split only"
        warnings.warn(msg)
        report.flags.append(msg)
        return report

    unseen = np.array([r.participant in subsets.unseen_participants for r in rows])
    if unseen.any():
        for lv in LEVELS:
            _level_cells(report, "unseen", lv, scores[lv][unseen], labels[lv][unseen])
    else:
        report.flags.append("unseen split empty; unseen cells omitted")

    for lv in LEVELS:
        tail = subsets.tail_classes.get(lv, frozenset())
        mask = np.isin(labels[lv], list(tail))
        if not mask.any():
            report.flags.append(f"no {lv} tail-class instances; tail {lv} cells omitted")
            continue
        k5 = min(5, scores[lv].shape[1])
        report.cells[("tail", lv, "top1")] = topk_accuracy(scores[lv][mask], labels[lv][mask], 1)
        report.cells[("tail", lv, "top5")] = topk_accuracy(scores[lv][mask], labels[lv][mask], k5)
        report.cells[("tail", lv, "recall5")] = class_mean_topk_recall(
            scores[lv], labels[lv], k5, sorted(tail))
    return report


# --- prediction files -----------------------------------------------------

def write_predictions(preds: PredictionMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["segment_id"] + [f"p{c}" for c in range(preds.num_classes)])
        for sid, row in zip(preds.segment_ids, preds.scores):
            w.writerow([sid] + [repr(float(x)) for x in row])


def read_predictions(path) -> PredictionMatrix:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "segment_id" or len(header) < 2:
            raise ValueError(f"{path}: expected header 'segment_id,p0,...'")
        ids, rows = [], []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            ids.append(rec[0])
            try:
                rows.append([float(x) for x in rec[1:]])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return PredictionMatrix(ids, np.array(rows, dtype=np.float64).reshape(len(ids), len(header) - 1))
