"""Multi-view lifting of 2D detections/masks into per-face 3D segmentations.

Scores accumulate per (face, region) across rendered views; faces take the
argmax region, vertices take the majority of their incident faces, and the
semantic mapping turns two labeled shapes into a coarse region-level
correspondence.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh
from .oracle import DEFAULT_BOX_THRESHOLD, Detection, MaskImage, OracleBackend, OracleError
from .regions import RegionSet, SemanticMapping
from .render import BACKGROUND, RenderedView, render, segmentation_viewpoints

UNLABELED = -1

# deterministic palette for colored-mesh exports; label -> RGB
PALETTE = np.array(
    [
        (230, 60, 60), (60, 140, 230), (70, 190, 90), (235, 180, 50),
        (160, 90, 220), (240, 130, 40), (70, 200, 200), (220, 95, 170),
        (130, 180, 60), (110, 110, 240), (200, 150, 100), (90, 210, 150),
        (240, 90, 110), (80, 160, 180), (180, 120, 200), (150, 200, 60),
        (210, 170, 220), (100, 130, 90), (230, 140, 140), (140, 150, 210),
    ],
    dtype=np.uint8,
)


@dataclass
class FaceScoreMatrix:
    """Nonnegative per-face, per-region score accumulator."""

    scores: np.ndarray  # (F, R) float64
    region_order: tuple[str, ...]

    @staticmethod
    def zeros(n_faces: int, regions: RegionSet) -> "FaceScoreMatrix":
        return FaceScoreMatrix(
            scores=np.zeros((n_faces, len(regions.regions))),
            region_order=tuple(regions.regions),
        )

    def validate(self) -> "FaceScoreMatrix":
        if not np.isfinite(self.scores).all():
            raise ValueError("face score matrix contains non-finite entries")
        if (self.scores < 0).any():
            raise ValueError("face score matrix contains negative entries")
        return self


@dataclass
class FaceLabels:
    labels: np.ndarray  # (F,) int64; UNLABELED where no region scored
    region_order: tuple[str, ...]

    def names(self) -> list[str | None]:
        return [self.region_order[l] if l >= 0 else None for l in self.labels]


@dataclass
class VertexLabels:
    labels: np.ndarray  # (V,) int64; UNLABELED where no incident face is labeled
    region_order: tuple[str, ...]

    def names(self) -> list[str | None]:
        return [self.region_order[l] if l >= 0 else None for l in self.labels]


@dataclass
class MatchedRegionPair:
    source_region: int
    target_region: int
    source_faces: np.ndarray
    target_faces: np.ndarray


@dataclass
class CoarseCorrespondence:
    """Region-level face-set matching induced by the semantic mapping."""

    pairs: list[MatchedRegionPair]
    unmatched_source: np.ndarray
    unmatched_target: np.ndarray
    regions1: tuple[str, ...] = field(default_factory=tuple)
    regions2: tuple[str, ...] = field(default_factory=tuple)


def accumulate_view(
    x: FaceScoreMatrix,
    view: RenderedView,
    detections: list[Detection],
    masks: list[MaskImage],
) -> FaceScoreMatrix:
    """Fold one view's masks into the score matrix (pure; returns a new matrix).

    Every on-pixel whose face-index is not background adds the detection score
    to its face's entry in the detection's region column.
    """
    return FaceScoreMatrix(
        scores=x.scores + _view_partial(x, view, detections, masks),
        region_order=x.region_order,
    ).validate()


def _view_partial(x: FaceScoreMatrix, view, detections, masks) -> np.ndarray:
    region_index = {name: i for i, name in enumerate(x.region_order)}
    partial = np.zeros_like(x.scores)
    n_faces = x.scores.shape[0]
    fidx = view.face_index
    for det, mask in zip(detections, masks):
        if mask.pixels.shape != fidx.shape:
            raise ValueError(f"mask shape {mask.pixels.shape} does not match view {fidx.shape}")
        if det.label not in region_index:
            raise ValueError(f"detection label {det.label!r} not in region order {list(x.region_order)}")
        on = (mask.pixels != 0) & (fidx != BACKGROUND)
        if not on.any():
            continue
        faces = fidx[on]
        counts = np.bincount(faces, minlength=n_faces).astype(np.float64)
        partial[:, region_index[det.label]] += det.score * counts
    return partial


def assign_face_labels(x: FaceScoreMatrix) -> FaceLabels:
    """Row-wise argmax; all-zero rows are UNLABELED and ties go to the lowest index."""
    x.validate()
    labels = np.argmax(x.scores, axis=1).astype(np.int64)
    labels[x.scores.max(axis=1) <= 0.0] = UNLABELED
    return FaceLabels(labels=labels, region_order=x.region_order)


def faces_to_vertices(fl: FaceLabels, mesh: Mesh) -> VertexLabels:
    """Majority label among each vertex's labeled incident faces (ties: lowest index)."""
    if len(fl.labels) != mesh.n_faces:
        raise ValueError(f"face labels sized {len(fl.labels)} for mesh with {mesh.n_faces} faces")
    n_regions = len(fl.region_order)
    votes = np.zeros((mesh.n_vertices, n_regions), dtype=np.int64)
    labeled = fl.labels >= 0
    for corner in range(3):
        verts = mesh.faces[labeled, corner]
        np.add.at(votes, (verts, fl.labels[labeled]), 1)
    labels = np.argmax(votes, axis=1).astype(np.int64)
    labels[votes.max(axis=1) == 0] = UNLABELED
    return VertexLabels(labels=labels, region_order=fl.region_order)


def segment(
    mesh: Mesh,
    regions: RegionSet,
    oracle: OracleBackend,
    views: int = 180,
    image_size: int = 512,
    radii=(2.0, 1.75, 1.5),
    box_threshold: float = DEFAULT_BOX_THRESHOLD,
    view_order: list[int] | None = None,
) -> tuple[FaceLabels, VertexLabels, FaceScoreMatrix]:
    """Run detect+segment over the view sphere and lift the votes onto faces.

    Per-view partial score matrices are summed in ascending view index, so the
    result is bit-identical no matter what order views are processed in
    (``view_order`` exists to let tests exercise exactly that).
    """
    cameras = segmentation_viewpoints(views, radii=radii, image_size=image_size)
    x = FaceScoreMatrix.zeros(mesh.n_faces, regions)
    labels = list(regions.regions)

    def one(view_idx: int) -> tuple[int, np.ndarray]:
        cam = cameras[view_idx]
        view = render(mesh, cam)
        view.view_index = view_idx
        try:
            detections = oracle.detect(view, labels, box_threshold)
            masks = oracle.segment(view, detections)
        except OracleError as err:
            raise type(err)(f"view {view_idx}: {err}") from err
        return view_idx, _view_partial(x, view, detections, masks)

    order = list(range(len(cameras))) if view_order is None else list(view_order)
    if sorted(order) != list(range(len(cameras))):
        raise ValueError("view_order must be a permutation of all view indices")

    workers = oracle.max_in_flight or 1
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = dict(pool.map(one, order))
    else:
        partials = dict(one(i) for i in order)

    for view_idx in sorted(partials):
        x.scores += partials[view_idx]
    x.validate()
    fl = assign_face_labels(x)
    vl = faces_to_vertices(fl, mesh)
    return fl, vl, x


def coarse_correspondence(
    fl1: FaceLabels,
    fl2: FaceLabels,
    mapping: SemanticMapping,
    regions1: RegionSet,
    regions2: RegionSet,
) -> CoarseCorrespondence:
    """Collect matched face sets per mapping pair; unmapped regions go unmatched.

    Matched and unmatched face sets together partition the labeled faces of
    each shape.
    """
    pairs = []
    for src_name, tgt_name in mapping.pairs:
        si = regions1.index(src_name)
        ti = regions2.index(tgt_name)
        pairs.append(
            MatchedRegionPair(
                source_region=si,
                target_region=ti,
                source_faces=np.flatnonzero(fl1.labels == si),
                target_faces=np.flatnonzero(fl2.labels == ti),
            )
        )
    mapped_src = {regions1.index(s) for s in mapping.sources()}
    mapped_tgt = {regions2.index(t) for t in mapping.targets()}
    unmatched_source = np.flatnonzero(
        (fl1.labels >= 0) & ~np.isin(fl1.labels, sorted(mapped_src))
    )
    unmatched_target = np.flatnonzero(
        (fl2.labels >= 0) & ~np.isin(fl2.labels, sorted(mapped_tgt))
    )
    return CoarseCorrespondence(
        pairs=pairs,
        unmatched_source=unmatched_source,
        unmatched_target=unmatched_target,
        regions1=tuple(regions1.regions),
        regions2=tuple(regions2.regions),
    )


def region_color(label: int) -> np.ndarray:
    if label < 0:
        return np.zeros(3, dtype=np.uint8)
    return PALETTE[label % len(PALETTE)]


def vertex_label_colors(vl: VertexLabels) -> np.ndarray:
    """Per-vertex RGB for colored-mesh export; UNLABELED renders black."""
    colors = np.zeros((len(vl.labels), 3), dtype=np.uint8)
    ok = vl.labels >= 0
    colors[ok] = PALETTE[vl.labels[ok] % len(PALETTE)]
    return colors


def coarse_vertex_colors(
    corr: CoarseCorrespondence, vl1: VertexLabels, vl2: VertexLabels
) -> tuple[np.ndarray, np.ndarray]:
    """Matching colors for mutual regions on both shapes; unmatched stays black."""
    c1 = np.zeros((len(vl1.labels), 3), dtype=np.uint8)
    c2 = np.zeros((len(vl2.labels), 3), dtype=np.uint8)
    for pair_idx, pair in enumerate(corr.pairs):
        color = PALETTE[pair_idx % len(PALETTE)]
        c1[(vl1.labels == pair.source_region) & (c1 == 0).all(axis=1)] = color
        c2[(vl2.labels == pair.target_region) & (c2 == 0).all(axis=1)] = color
    return c1, c2


def segmentation_to_json(fl: FaceLabels, vl: VertexLabels) -> dict:
    return {
        "regionOrder": list(fl.region_order),
        "faceLabels": fl.labels.tolist(),
        "vertexLabels": vl.labels.tolist(),
    }


def segmentation_from_json(data: dict) -> tuple[FaceLabels, VertexLabels]:
    order = tuple(data["regionOrder"])
    fl = FaceLabels(labels=np.asarray(data["faceLabels"], dtype=np.int64), region_order=order)
    vl = VertexLabels(labels=np.asarray(data["vertexLabels"], dtype=np.int64), region_order=order)
    return fl, vl
