"""Annotated shape-pair manifests: schema, loader, and synthetic-truth adapter."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import Mesh, load_mesh
from .oracle import ShapeTruth, SyntheticTruth
from .regions import RegionSet, SemanticMapping, validate_mapping
from .textnorm import normalize_label

KEYPOINT_COUNT = 34


class DatasetError(ValueError):
    """Manifest schema or annotation invariant violation."""


@dataclass
class PairAnnotation:
    """Ground-truth annotation for one shape pair."""

    pair_id: str
    shape1_path: str
    shape2_path: str
    gt_class1: str
    gt_class2: str
    keypoints1: np.ndarray  # (34,) vertex indices into shape 1
    keypoints2: np.ndarray  # (34,) vertex indices into shape 2, aligned by position
    gt_keypoint_labels: list[str]
    gt_face_labels1: list[str]
    gt_face_labels2: list[str]
    gt_regions1: RegionSet
    gt_regions2: RegionSet
    gt_mapping: SemanticMapping

    def load_meshes(self) -> tuple[Mesh, Mesh]:
        return load_mesh(self.shape1_path), load_mesh(self.shape2_path)


def _require(cond: bool, pair_id: str, message: str):
    if not cond:
        raise DatasetError(f"pair {pair_id!r}: {message}")


def _parse_shape(pair_id: str, which: int, rec: dict, base: Path):
    for key in ("mesh", "class", "keypoints", "face_labels", "regions"):
        _require(key in rec, pair_id, f"shape{which} record missing field {key!r}")
    mesh_path = base / rec["mesh"]
    _require(mesh_path.exists(), pair_id, f"shape{which} mesh file not found: {mesh_path}")
    keypoints = np.asarray(rec["keypoints"], dtype=np.int64)
    _require(
        keypoints.shape == (KEYPOINT_COUNT,),
        pair_id,
        f"shape{which} field 'keypoints' must have length {KEYPOINT_COUNT}, got {keypoints.shape[0] if keypoints.ndim == 1 else keypoints.shape}",
    )
    regions = RegionSet(
        class_name=normalize_label(rec["class"]),
        regions=tuple(normalize_label(r) for r in rec["regions"]),
    )
    face_labels = [normalize_label(l) for l in rec["face_labels"]]
    return mesh_path, keypoints, regions, face_labels


def load_pair(pair_id: str, rec: dict, base: Path) -> PairAnnotation:
    for key in ("shape1", "shape2", "keypoint_labels", "mapping"):
        _require(key in rec, pair_id, f"record missing field {key!r}")
    path1, kp1, regions1, labels1 = _parse_shape(pair_id, 1, rec["shape1"], base)
    path2, kp2, regions2, labels2 = _parse_shape(pair_id, 2, rec["shape2"], base)

    mesh1 = load_mesh(path1)
    mesh2 = load_mesh(path2)
    _require(kp1.max() < mesh1.n_vertices and kp1.min() >= 0, pair_id, f"shape1 keypoint index out of range for |V|={mesh1.n_vertices}")
    _require(kp2.max() < mesh2.n_vertices and kp2.min() >= 0, pair_id, f"shape2 keypoint index out of range for |V|={mesh2.n_vertices}")
    _require(len(labels1) == mesh1.n_faces, pair_id, f"shape1 face_labels length {len(labels1)} != |F|={mesh1.n_faces}")
    _require(len(labels2) == mesh2.n_faces, pair_id, f"shape2 face_labels length {len(labels2)} != |F|={mesh2.n_faces}")
    for which, labels, regions in ((1, labels1, regions1), (2, labels2, regions2)):
        missing = {l for l in labels if l and l not in regions.regions}
        _require(not missing, pair_id, f"shape{which} face labels {sorted(missing)} not in the region set")

    kp_labels = [normalize_label(l) for l in rec["keypoint_labels"]]
    _require(len(kp_labels) == KEYPOINT_COUNT, pair_id, f"field 'keypoint_labels' must have length {KEYPOINT_COUNT}")
    _require(all(l in regions1.regions for l in kp_labels), pair_id, "keypoint labels must come from shape1's region set")

    mapping = SemanticMapping(pairs=tuple((normalize_label(a), normalize_label(b)) for a, b in rec["mapping"]))
    try:
        validate_mapping(mapping, regions1, regions2)
    except ValueError as err:
        raise DatasetError(f"pair {pair_id!r}: {err}") from err

    return PairAnnotation(
        pair_id=pair_id,
        shape1_path=str(path1),
        shape2_path=str(path2),
        gt_class1=regions1.class_name,
        gt_class2=regions2.class_name,
        keypoints1=kp1,
        keypoints2=kp2,
        gt_keypoint_labels=kp_labels,
        gt_face_labels1=labels1,
        gt_face_labels2=labels2,
        gt_regions1=regions1,
        gt_regions2=regions2,
        gt_mapping=mapping,
    )


def load_dataset(manifest_path) -> list[PairAnnotation]:
    """Load and validate every pair in a manifest; fails fast naming the pair."""
    path = Path(manifest_path)
    if not path.exists():
        raise DatasetError(f"manifest not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise DatasetError(f"manifest {path}:{err.lineno}: {err.msg}") from err
    if not isinstance(data, dict) or not isinstance(data.get("pairs"), list):
        raise DatasetError(f"manifest {path} must be an object with a 'pairs' list")
    annotations = []
    for i, rec in enumerate(data["pairs"]):
        pair_id = str(rec.get("id", f"pair_{i:03d}"))
        annotations.append(load_pair(pair_id, rec, path.parent))
    return annotations


def synthetic_truth(annotation: PairAnnotation, mesh1: Mesh | None = None, mesh2: Mesh | None = None) -> SyntheticTruth:
    """Ground truth for the synthetic oracle, keyed by the meshes' ids."""
    if mesh1 is None or mesh2 is None:
        mesh1, mesh2 = annotation.load_meshes()

    def face_label_indices(labels: list[str], regions: RegionSet) -> np.ndarray:
        index = {r: i for i, r in enumerate(regions.regions)}
        return np.asarray([index.get(l, -1) for l in labels], dtype=np.int64)

    shapes = {
        mesh1.id: ShapeTruth(
            class_label=annotation.gt_class1,
            regions=annotation.gt_regions1.regions,
            face_labels=face_label_indices(annotation.gt_face_labels1, annotation.gt_regions1),
        ),
        mesh2.id: ShapeTruth(
            class_label=annotation.gt_class2,
            regions=annotation.gt_regions2.regions,
            face_labels=face_label_indices(annotation.gt_face_labels2, annotation.gt_regions2),
        ),
    }
    mappings = {
        (annotation.gt_class1, annotation.gt_class2): tuple(annotation.gt_mapping.pairs),
    }
    return SyntheticTruth(shapes=shapes, mappings=mappings)
