"""Evaluation metrics: classification accuracy, region F1, IoU, keypoint accuracy,
and the normalized average geodesic error."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .fmap import PointMap
from .geodesic import geodesic_distances_multi
from .mesh import Mesh
from .regions import SemanticMapping
from .segment3d import FaceLabels, VertexLabels
from .textnorm import normalize_label


@dataclass
class SynonymTable:
    """Accepted synonyms per canonical term; the canonical term accepts itself."""

    table: dict[str, set[str]] = field(default_factory=dict)

    def __post_init__(self):
        normalized = {}
        for canonical, synonyms in self.table.items():
            c = normalize_label(canonical)
            accepted = {normalize_label(s) for s in synonyms}
            accepted.add(c)
            normalized[c] = accepted
        self.table = normalized

    def matches(self, prediction: str, canonical: str) -> bool:
        p = normalize_label(prediction)
        c = normalize_label(canonical)
        return p in self.table.get(c, {c})

    def __contains__(self, canonical: str) -> bool:
        return normalize_label(canonical) in self.table

    @staticmethod
    def load(path=None) -> "SynonymTable":
        """Load a table from JSON; defaults to the bundled asset."""
        if path is None:
            data = json.loads(resources.files("shapecorr").joinpath("assets/synonyms.json").read_text())
        else:
            data = json.loads(_read_text(path))
        return SynonymTable(table={k: set(v) for k, v in data.items()})


def _read_text(path) -> str:
    with open(path, "r") as fh:
        return fh.read()


def exact_table() -> SynonymTable:
    """Empty table: every term matches only itself."""
    return SynonymTable(table={})


def zs_class_acc(predictions, gts, synonyms: SynonymTable) -> float:
    """Binary classification accuracy where any listed synonym counts as correct."""
    if len(predictions) != len(gts):
        raise ValueError("predictions and ground truths must have equal length")
    if not gts:
        raise ValueError("no ground-truth labels")
    correct = 0
    for pred, gt in zip(predictions, gts):
        label = pred.label if hasattr(pred, "label") else str(pred)
        if gt not in synonyms:
            raise KeyError(f"ground-truth class {gt!r} missing from the synonym table")
        correct += int(synonyms.matches(label, gt))
    return correct / len(gts)


def _match_counts(predicted: list, gt: list, match) -> tuple[int, int, int]:
    """(TP, FP, FN) via maximum bipartite matching under the match predicate."""
    if not gt:
        raise ValueError("ground-truth set must be non-empty")
    rows, cols = [], []
    for i, g in enumerate(gt):
        for j, p in enumerate(predicted):
            if match(p, g):
                rows.append(i)
                cols.append(j)
    if rows:
        graph = csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(len(gt), len(predicted)))
        assignment = maximum_bipartite_matching(graph, perm_type="column")
        tp = int((assignment != -1).sum())
    else:
        tp = 0
    return tp, len(predicted) - tp, len(gt) - tp


def srgen_f1(predicted, gt, synonyms: SynonymTable) -> float:
    """F1 of generated region sets or mappings against ground truth.

    Items are region names, or (source, target) pairs for mappings; each
    ground-truth item absorbs at most one prediction, matched under the
    synonym table (pairs must match on both ends). TP/FP/FN follow from a
    maximum bipartite matching so the score is independent of item order.
    """
    pred_items = _as_items(predicted)
    gt_items = _as_items(gt)

    def match(p, g):
        if isinstance(g, tuple) != isinstance(p, tuple):
            return False
        if isinstance(g, tuple):
            return synonyms.matches(p[0], g[0]) and synonyms.matches(p[1], g[1])
        return synonyms.matches(p, g)

    tp, fp, fn = _match_counts(pred_items, gt_items, match)
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def _as_items(obj) -> list:
    if isinstance(obj, SemanticMapping):
        return [tuple(p) for p in obj.pairs]
    if hasattr(obj, "regions"):
        return list(obj.regions)
    items = list(obj)
    return [tuple(i) if isinstance(i, (list, tuple)) else i for i in items]


def _region_iou(pred_names: list, gt_names: list, regions) -> float | None:
    """Mean face-count IoU over the region list; None when nothing is evaluable."""
    pred = np.asarray([p if p is not None else "" for p in pred_names], dtype=object)
    gt = np.asarray(gt_names, dtype=object)
    ious = []
    for r in regions:
        p = pred == r
        g = gt == r
        union = int((p | g).sum())
        if union == 0:
            continue  # empty GT and empty prediction: excluded
        ious.append(int((p & g).sum()) / union)
    if not ious:
        return None
    return float(np.mean(ious))


def sriou(fl1: FaceLabels, fl2: FaceLabels, annotation) -> tuple[float, float, float]:
    """Per-shape mean region IoU (I1, I2) and their average I12.

    IoU counts faces (not areas). Regions empty in both prediction and ground
    truth are excluded from the mean; an empty-GT region with predictions
    counts as 0.
    """
    if len(fl1.labels) != len(annotation.gt_face_labels1):
        raise ValueError("shape-1 label array does not match the annotation")
    if len(fl2.labels) != len(annotation.gt_face_labels2):
        raise ValueError("shape-2 label array does not match the annotation")
    i1 = _region_iou(fl1.names(), annotation.gt_face_labels1, annotation.gt_regions1.regions)
    i2 = _region_iou(fl2.names(), annotation.gt_face_labels2, annotation.gt_regions2.regions)
    i1 = 0.0 if i1 is None else i1
    i2 = 0.0 if i2 is None else i2
    return i1, i2, (i1 + i2) / 2.0


def kp_label_acc(
    vl1: VertexLabels,
    vl2: VertexLabels,
    annotation,
    mapping: SemanticMapping,
    synonyms: SynonymTable | None = None,
) -> float:
    """Fraction of keypoints where both shapes carry the annotated label.

    Keypoint j counts as correct when the shape-1 label matches the annotated
    keypoint label, the shape-2 label is one of that label's images under the
    mapping, and the (label1, label2) pair itself belongs to the mapping.
    An UNLABELED vertex on either side is incorrect.
    """
    syn = synonyms or exact_table()
    names1 = vl1.names()
    names2 = vl2.names()
    kp1 = annotation.keypoints1
    kp2 = annotation.keypoints2
    gt_labels = annotation.gt_keypoint_labels
    correct = 0
    for j in range(len(gt_labels)):
        n1 = names1[kp1[j]]
        n2 = names2[kp2[j]]
        if n1 is None or n2 is None:
            continue
        gt = normalize_label(gt_labels[j])
        if not syn.matches(n1, gt):
            continue
        images = [t for s, t in mapping.pairs if normalize_label(s) == gt]
        if not any(syn.matches(n2, t) for t in images):
            continue
        in_mapping = any(syn.matches(n1, s) and syn.matches(n2, t) for s, t in mapping.pairs)
        if in_mapping:
            correct += 1
    return correct / len(gt_labels)


def avg_geodesic_error(
    pm: PointMap,
    annotation,
    mesh1: Mesh,
    distances: np.ndarray | None = None,
) -> float:
    """Mean geodesic distance between mapped and annotated keypoints on shape 1,
    normalized by the square root of shape 1's surface area.

    ``distances`` may pass precomputed rows from ``geodesic_distances_multi``
    over ``annotation.keypoints1``. Unreachable targets are capped at the
    largest finite distance from that source (with a warning).
    """
    kp1 = np.asarray(annotation.keypoints1, dtype=np.int64)
    kp2 = np.asarray(annotation.keypoints2, dtype=np.int64)
    if distances is None:
        distances = geodesic_distances_multi(mesh1, kp1)
    mapped = pm.target_to_source[kp2]
    norm = np.sqrt(mesh1.surface_area)
    errors = []
    for j in range(len(kp1)):
        d = distances[j, mapped[j]]
        if not np.isfinite(d):
            finite = distances[j][np.isfinite(distances[j])]
            cap = float(finite.max()) if finite.size else 0.0
            warnings.warn(f"keypoint {j}: unreachable target capped at {cap:.4g}", stacklevel=2)
            d = cap
        errors.append(d / norm)
    return float(np.mean(errors))


def metrics_table(rows: list[dict], columns: list[str]) -> str:
    """Aligned plain-text table for metric reports."""
    header = ["pair"] + columns
    table = [header]
    for row in rows:
        table.append([str(row.get("pair", ""))] + [_fmt(row.get(c)) for c in columns])
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    lines = []
    for i, r in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)
