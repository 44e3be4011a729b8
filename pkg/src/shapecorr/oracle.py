"""Gateway to the caption/chat/detect/segment oracles.

Three interchangeable backends implement the same interface: a live HTTP
sidecar, a record/replay fixture store, and a synthetic oracle driven by
ground-truth labels. Every backend validates Detection/MaskImage invariants
before returning, so downstream code never sees malformed responses.
"""
from __future__ import annotations

import base64
import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .render import RenderedView, decode_png
from .textnorm import normalize_label

MASK_BOX_DILATION_PX = 2

DEFAULT_BOX_THRESHOLD = 3.7
DEFAULT_TIMEOUT_S = 120.0
DEFAULT_RETRIES = 3


class OracleError(Exception):
    """Base class for gateway failures."""


class BackendUnavailableError(OracleError):
    """The backend cannot be reached (connection refused, timeout, 5xx)."""


class FixtureMissError(OracleError):
    """Replay store has no record for the request."""


class ProtocolError(OracleError):
    """A response violated the wire schema or a domain invariant."""


@dataclass(frozen=True)
class Detection:
    """A labeled box in normalized image coordinates."""

    label: str
    box: tuple[float, float, float, float]  # (x0, y0, x1, y1) in [0, 1]
    score: float

    def pixel_box(self, size: int, dilate: int = 0) -> tuple[int, int, int, int]:
        x0, y0, x1, y1 = self.box
        c0 = max(0, int(np.floor(x0 * size)) - dilate)
        r0 = max(0, int(np.floor(y0 * size)) - dilate)
        c1 = min(size, int(np.ceil(x1 * size)) + dilate)
        r1 = min(size, int(np.ceil(y1 * size)) + dilate)
        return r0, c0, r1, c1


@dataclass
class MaskImage:
    """Binary mask over the full query image, tied to the detection that produced it."""

    pixels: np.ndarray  # (H, W) uint8 in {0, 1}
    detection: Detection


@dataclass
class ChatExchange:
    messages: list[dict]
    response: str


def validate_detection(det: Detection) -> Detection:
    x0, y0, x1, y1 = det.box
    if not all(0.0 <= c <= 1.0 for c in det.box):
        raise ProtocolError(f"detection box out of [0,1]: {det.box}")
    if not (x0 < x1 and y0 < y1):
        raise ProtocolError(f"detection box not positively oriented: {det.box}")
    if det.score < 0:
        raise ProtocolError(f"negative detection score: {det.score}")
    if not det.label:
        raise ProtocolError("detection with empty label")
    return det


def validate_mask(mask: MaskImage, image_size: int) -> MaskImage:
    if mask.pixels.shape != (image_size, image_size):
        raise ProtocolError(
            f"mask dimensions {mask.pixels.shape} do not match image size {image_size}"
        )
    r0, c0, r1, c1 = mask.detection.pixel_box(image_size, dilate=MASK_BOX_DILATION_PX)
    outside = mask.pixels.copy()
    outside[r0:r1, c0:c1] = 0
    if outside.any():
        raise ProtocolError("mask has pixels outside the dilated detection box")
    return mask


def validate_messages(messages) -> list[dict]:
    if not messages:
        raise ProtocolError("chat called with no messages")
    out = []
    for m in messages:
        role, content = m["role"], m["content"]
        if role not in ("system", "user", "assistant"):
            raise ProtocolError(f"invalid chat role {role!r}")
        out.append({"role": role, "content": content})
    return out


# ---------------------------------------------------------------------------
# Request canonicalization (fixture keys)
# ---------------------------------------------------------------------------


def image_content_hash(png_bytes: bytes) -> str:
    return hashlib.sha256(png_bytes).hexdigest()


def canonical_request(endpoint: str, payload: dict) -> tuple[str, dict]:
    """Canonical JSON (sorted keys, images replaced by content hash) and its sha256."""
    canon = {"endpoint": endpoint, **payload}
    text = json.dumps(canon, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest(), canon


def _caption_payload(view: RenderedView, prompt: str) -> dict:
    return {"image": image_content_hash(view.png_bytes()), "prompt": prompt}


def _chat_payload(messages: list[dict]) -> dict:
    return {"messages": [[m["role"], m["content"]] for m in messages]}


def _detect_payload(view: RenderedView, labels, box_threshold: float) -> dict:
    return {
        "image": image_content_hash(view.png_bytes()),
        "labels": list(labels),
        "box_threshold": box_threshold,
    }


def _segment_payload(view: RenderedView, detections: list[Detection]) -> dict:
    return {
        "image": image_content_hash(view.png_bytes()),
        "boxes": [[d.label, *d.box, d.score] for d in detections],
    }


# ---------------------------------------------------------------------------
# Backend interface
# ---------------------------------------------------------------------------


class OracleBackend:
    """Interface shared by all backends. Instances are safe for concurrent calls."""

    name = "abstract"
    max_in_flight: int | None = None  # None = unbounded

    def caption(self, view: RenderedView, prompt: str) -> str:
        raise NotImplementedError

    def chat(self, messages: list[dict]) -> str:
        raise NotImplementedError

    def detect(self, view: RenderedView, labels, box_threshold: float = DEFAULT_BOX_THRESHOLD) -> list[Detection]:
        raise NotImplementedError

    def segment(self, view: RenderedView, detections: list[Detection]) -> list[MaskImage]:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Response parsing shared by the HTTP and replay backends
# ---------------------------------------------------------------------------


def _parse_text_response(data: dict, origin: str) -> str:
    if not isinstance(data, dict) or not isinstance(data.get("text"), str):
        raise ProtocolError(f"{origin}: response lacks a string 'text' field")
    if not data["text"]:
        raise ProtocolError(f"{origin}: empty response text")
    return data["text"]


def _parse_detections_response(data: dict, origin: str) -> list[Detection]:
    if not isinstance(data, dict) or not isinstance(data.get("detections"), list):
        raise ProtocolError(f"{origin}: response lacks a 'detections' list")
    out = []
    for i, d in enumerate(data["detections"]):
        try:
            det = Detection(label=str(d["label"]), box=tuple(float(c) for c in d["box"]), score=float(d["score"]))
        except (KeyError, TypeError, ValueError) as err:
            raise ProtocolError(f"{origin}: malformed detection #{i}: {err}") from err
        out.append(validate_detection(det))
    return out


def _parse_masks_response(data: dict, detections: list[Detection], image_size: int, origin: str) -> list[MaskImage]:
    if not isinstance(data, dict) or not isinstance(data.get("masks"), list):
        raise ProtocolError(f"{origin}: response lacks a 'masks' list")
    raw = data["masks"]
    if len(raw) != len(detections):
        raise ProtocolError(f"{origin}: {len(raw)} masks for {len(detections)} detections")
    masks = []
    for det, b64 in zip(detections, raw):
        try:
            arr = decode_png(base64.b64decode(b64))
        except Exception as err:
            raise ProtocolError(f"{origin}: undecodable mask PNG: {err}") from err
        pixels = (arr[..., 0] > 127).astype(np.uint8)
        masks.append(validate_mask(MaskImage(pixels=pixels, detection=det), image_size))
    return masks


def encode_mask_png(pixels: np.ndarray) -> bytes:
    from .render import encode_png

    gray = (pixels.astype(np.uint8) * 255)
    rgb = np.stack([gray, gray, gray], axis=-1)
    return encode_png(rgb)


# ---------------------------------------------------------------------------
# HTTP sidecar backend
# ---------------------------------------------------------------------------


class HttpOracle(OracleBackend):
    """Client for the model sidecar's HTTP JSON API."""

    name = "http"
    max_in_flight = 8

    def __init__(self, base_url: str, timeout: float = DEFAULT_TIMEOUT_S, retries: int = DEFAULT_RETRIES):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.retries = retries
        self._client = httpx.Client(timeout=timeout)
        self._semaphore = threading.Semaphore(self.max_in_flight)

    def close(self):
        self._client.close()

    def health(self) -> dict:
        import httpx

        try:
            resp = self._client.get(f"{self.base_url}/v1/health")
        except httpx.HTTPError as err:
            raise BackendUnavailableError(f"sidecar health check failed: {err}") from err
        if resp.status_code != 200:
            raise BackendUnavailableError(f"sidecar health check returned {resp.status_code}: {resp.text}")
        return resp.json()

    def _post(self, endpoint: str, body: dict, request_id: str) -> dict:
        import httpx

        url = f"{self.base_url}/v1/{endpoint}"
        body = {**body, "request_id": request_id}
        last = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(0.5 * 2 ** (attempt - 1))
            try:
                with self._semaphore:
                    resp = self._client.post(url, json=body)
            except httpx.HTTPError as err:
                last = f"{type(err).__name__}: {err}"
                continue
            if resp.status_code in (502, 503, 504):
                last = f"HTTP {resp.status_code}: {resp.text[:200]}"
                continue
            if resp.status_code != 200:
                raise ProtocolError(f"{endpoint}: HTTP {resp.status_code}: {resp.text[:500]}")
            try:
                data = resp.json()
            except ValueError as err:
                raise ProtocolError(f"{endpoint}: non-JSON response body") from err
            echoed = data.get("request_id")
            if echoed is not None and echoed != request_id:
                raise ProtocolError(f"{endpoint}: response echoes request id {echoed!r}, sent {request_id!r}")
            return data
        raise BackendUnavailableError(f"{endpoint}: backend unavailable after {self.retries + 1} attempts ({last})")

    def caption(self, view, prompt):
        request_id, _ = canonical_request("caption", _caption_payload(view, prompt))
        body = {"image": base64.b64encode(view.png_bytes()).decode(), "prompt": prompt}
        return _parse_text_response(self._post("caption", body, request_id[:16]), "caption")

    def chat(self, messages):
        messages = validate_messages(messages)
        request_id, _ = canonical_request("chat", _chat_payload(messages))
        body = {"messages": messages}
        return _parse_text_response(self._post("chat", body, request_id[:16]), "chat")

    def detect(self, view, labels, box_threshold=DEFAULT_BOX_THRESHOLD):
        if not labels:
            raise ValueError("detect requires at least one label")
        request_id, _ = canonical_request("detect", _detect_payload(view, labels, box_threshold))
        body = {
            "image": base64.b64encode(view.png_bytes()).decode(),
            "labels": list(labels),
            "box_threshold": box_threshold,
        }
        return _parse_detections_response(self._post("detect", body, request_id[:16]), "detect")

    def segment(self, view, detections):
        if not detections:
            return []
        request_id, _ = canonical_request("segment", _segment_payload(view, detections))
        body = {
            "image": base64.b64encode(view.png_bytes()).decode(),
            "boxes": [{"label": d.label, "box": list(d.box), "score": d.score} for d in detections],
        }
        return _parse_masks_response(
            self._post("segment", body, request_id[:16]), detections, view.image_size, "segment"
        )


# ---------------------------------------------------------------------------
# Record / replay fixture store
# ---------------------------------------------------------------------------


class ReplayOracle(OracleBackend):
    """Pure function of (endpoint, canonicalized request) over a fixture directory."""

    name = "replay"

    def __init__(self, store_dir):
        self.store_dir = Path(store_dir)
        if not self.store_dir.is_dir():
            raise FixtureMissError(f"fixture store {self.store_dir} does not exist")

    def _lookup(self, endpoint: str, payload: dict) -> dict:
        request_hash, _ = canonical_request(endpoint, payload)
        path = self.store_dir / f"{request_hash}.json"
        if not path.exists():
            raise FixtureMissError(f"no fixture for {endpoint} request {request_hash} in {self.store_dir}")
        try:
            record = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise ProtocolError(f"malformed fixture {path}:{err.lineno}: {err.msg}") from err
        for key in ("request_hash", "endpoint", "request", "response"):
            if key not in record:
                raise ProtocolError(f"fixture {path} missing field {key!r}")
        if record["endpoint"] != endpoint:
            raise ProtocolError(f"fixture {path} is for endpoint {record['endpoint']!r}, expected {endpoint!r}")
        return record["response"]

    def caption(self, view, prompt):
        return _parse_text_response(self._lookup("caption", _caption_payload(view, prompt)), "caption fixture")

    def chat(self, messages):
        messages = validate_messages(messages)
        return _parse_text_response(self._lookup("chat", _chat_payload(messages)), "chat fixture")

    def detect(self, view, labels, box_threshold=DEFAULT_BOX_THRESHOLD):
        if not labels:
            raise ValueError("detect requires at least one label")
        data = self._lookup("detect", _detect_payload(view, labels, box_threshold))
        return _parse_detections_response(data, "detect fixture")

    def segment(self, view, detections):
        if not detections:
            return []
        data = self._lookup("segment", _segment_payload(view, detections))
        return _parse_masks_response(data, detections, view.image_size, "segment fixture")


class RecordingOracle(OracleBackend):
    """Delegates to an inner backend and persists every exchange as a fixture."""

    name = "record"

    def __init__(self, inner: OracleBackend, store_dir):
        self.inner = inner
        self.max_in_flight = inner.max_in_flight
        self.store_dir = Path(store_dir)
        self.store_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _save(self, endpoint: str, payload: dict, response: dict, image_png: bytes | None = None):
        request_hash, canon = canonical_request(endpoint, payload)
        request = dict(payload)
        if image_png is not None:
            request["image_png_b64"] = base64.b64encode(image_png).decode()
        record = {
            "request_hash": request_hash,
            "endpoint": endpoint,
            "request": request,
            "response": response,
        }
        text = json.dumps(record, sort_keys=True, indent=1)
        with self._lock:
            (self.store_dir / f"{request_hash}.json").write_text(text)

    def caption(self, view, prompt):
        text = self.inner.caption(view, prompt)
        self._save("caption", _caption_payload(view, prompt), {"text": text}, view.png_bytes())
        return text

    def chat(self, messages):
        messages = validate_messages(messages)
        text = self.inner.chat(messages)
        self._save("chat", _chat_payload(messages), {"text": text})
        return text

    def detect(self, view, labels, box_threshold=DEFAULT_BOX_THRESHOLD):
        dets = self.inner.detect(view, labels, box_threshold)
        response = {"detections": [{"label": d.label, "box": list(d.box), "score": d.score} for d in dets]}
        self._save("detect", _detect_payload(view, labels, box_threshold), response, view.png_bytes())
        return dets

    def segment(self, view, detections):
        masks = self.inner.segment(view, detections)
        response = {"masks": [base64.b64encode(encode_mask_png(m.pixels)).decode() for m in masks]}
        if detections:
            self._save("segment", _segment_payload(view, detections), response, view.png_bytes())
        return masks


# ---------------------------------------------------------------------------
# Synthetic ground-truth oracle
# ---------------------------------------------------------------------------


@dataclass
class ShapeTruth:
    """Ground truth the synthetic oracle answers from, for one shape."""

    class_label: str
    regions: tuple[str, ...]
    face_labels: np.ndarray  # per-face index into regions, -1 unlabeled


@dataclass
class SyntheticTruth:
    shapes: dict[str, ShapeTruth] = field(default_factory=dict)
    # mapping pairs keyed by (class1, class2), normalized lowercase
    mappings: dict[tuple[str, str], tuple[tuple[str, str], ...]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "shapes": {
                sid: {
                    "class": t.class_label,
                    "regions": list(t.regions),
                    "face_labels": t.face_labels.tolist(),
                }
                for sid, t in self.shapes.items()
            },
            "mappings": {f"{a}|{b}": [list(p) for p in pairs] for (a, b), pairs in self.mappings.items()},
        }

    @staticmethod
    def from_json(data: dict) -> "SyntheticTruth":
        shapes = {
            sid: ShapeTruth(
                class_label=rec["class"],
                regions=tuple(rec["regions"]),
                face_labels=np.asarray(rec["face_labels"], dtype=np.int64),
            )
            for sid, rec in data.get("shapes", {}).items()
        }
        mappings = {}
        for key, pairs in data.get("mappings", {}).items():
            a, _, b = key.partition("|")
            mappings[(a, b)] = tuple((p[0], p[1]) for p in pairs)
        return SyntheticTruth(shapes=shapes, mappings=mappings)


@dataclass
class SyntheticNoise:
    """Optional corruption knobs for robustness sweeps; all off by default."""

    box_jitter: float = 0.0    # stddev of corner jitter in normalized units
    mask_dropout: float = 0.0  # per-pixel drop probability
    score_floor: float = 1.0   # scores drawn uniformly from [score_floor, 1]

    @property
    def active(self) -> bool:
        return self.box_jitter > 0 or self.mask_dropout > 0 or self.score_floor < 1.0


class SyntheticOracle(OracleBackend):
    """Answers every capability from ground-truth labels attached to shape ids."""

    name = "synthetic"

    def __init__(self, truth: SyntheticTruth, noise: SyntheticNoise | None = None, seed: int = 0):
        self.truth = truth
        self.noise = noise or SyntheticNoise()
        self.seed = seed

    def _shape_truth(self, view: RenderedView) -> ShapeTruth:
        if view.shape_id not in self.truth.shapes:
            raise OracleError(f"synthetic oracle has no truth for shape id {view.shape_id!r}")
        if view.face_index is None:
            raise OracleError("synthetic oracle requires the face-index buffer on the view")
        return self.truth.shapes[view.shape_id]

    def _rng(self, endpoint: str, payload: dict) -> np.random.Generator:
        request_hash, _ = canonical_request(endpoint, payload)
        return np.random.default_rng([self.seed, int(request_hash[:16], 16)])

    def caption(self, view, prompt):
        return self._shape_truth(view).class_label

    def chat(self, messages):
        messages = validate_messages(messages)
        content = messages[-1]["content"]
        answers = re.findall(r"^- (.+)$", content, flags=re.MULTILINE)
        if answers:
            counts: dict[str, int] = {}
            for a in answers:
                n = normalize_label(a)
                counts[n] = counts.get(n, 0) + 1
            top = max(counts.values())
            # ties break to the lexicographically smallest label
            return min(label for label, c in counts.items() if c == top)
        m1 = re.search(r"^Shape 1: (.+)$", content, flags=re.MULTILINE)
        m2 = re.search(r"^Shape 2: (.+)$", content, flags=re.MULTILINE)
        if m1 and m2:
            return self._regions_reply(normalize_label(m1.group(1)), normalize_label(m2.group(1)))
        raise OracleError("synthetic chat cannot answer this prompt (no answers list or shape labels found)")

    def _regions_for_class(self, label: str) -> list[str]:
        for t in self.truth.shapes.values():
            if normalize_label(t.class_label) == label:
                return list(t.regions)
        raise OracleError(f"synthetic oracle has no region truth for class {label!r}")

    def _regions_reply(self, label1: str, label2: str) -> str:
        r1 = self._regions_for_class(label1)
        r2 = self._regions_for_class(label2)
        pairs = self.truth.mappings.get((label1, label2))
        if pairs is None and label1 == label2:
            pairs = tuple((r, r) for r in r1)
        if pairs is None:
            raise OracleError(f"synthetic oracle has no mapping truth for ({label1!r}, {label2!r})")
        return json.dumps({"regions_1": r1, "regions_2": r2, "mapping": [list(p) for p in pairs]})

    def _region_pixel_mask(self, view: RenderedView, truth: ShapeTruth, region_idx: int) -> np.ndarray:
        fidx = view.face_index
        fg = fidx >= 0
        mask = np.zeros(fidx.shape, dtype=bool)
        mask[fg] = truth.face_labels[fidx[fg]] == region_idx
        return mask

    def detect(self, view, labels, box_threshold=DEFAULT_BOX_THRESHOLD):
        if not labels:
            raise ValueError("detect requires at least one label")
        truth = self._shape_truth(view)
        region_by_name = {normalize_label(r): i for i, r in enumerate(truth.regions)}
        size = view.image_size
        rng = None
        if self.noise.active:
            rng = self._rng("detect", _detect_payload(view, labels, box_threshold))
        out = []
        for label in labels:
            idx = region_by_name.get(normalize_label(label))
            if idx is None:
                continue
            mask = self._region_pixel_mask(view, truth, idx)
            if not mask.any():
                continue
            rows = np.flatnonzero(mask.any(axis=1))
            cols = np.flatnonzero(mask.any(axis=0))
            box = [cols[0] / size, rows[0] / size, (cols[-1] + 1) / size, (rows[-1] + 1) / size]
            score = 1.0
            if rng is not None:
                if self.noise.box_jitter > 0:
                    box = list(np.clip(np.array(box) + rng.normal(0, self.noise.box_jitter, 4), 0.0, 1.0))
                    box[0], box[2] = min(box[0], box[2]), max(box[0], box[2])
                    box[1], box[3] = min(box[1], box[3]), max(box[1], box[3])
                    if box[2] - box[0] < 1 / size:
                        box[2] = min(1.0, box[0] + 1 / size)
                    if box[3] - box[1] < 1 / size:
                        box[3] = min(1.0, box[1] + 1 / size)
                if self.noise.score_floor < 1.0:
                    score = float(rng.uniform(self.noise.score_floor, 1.0))
            out.append(validate_detection(Detection(label=label, box=tuple(box), score=score)))
        return out

    def segment(self, view, detections):
        if not detections:
            return []
        truth = self._shape_truth(view)
        region_by_name = {normalize_label(r): i for i, r in enumerate(truth.regions)}
        size = view.image_size
        rng = None
        if self.noise.active:
            rng = self._rng("segment", _segment_payload(view, detections))
        masks = []
        for det in detections:
            idx = region_by_name.get(normalize_label(det.label))
            if idx is None:
                raise OracleError(f"segment called with unknown region label {det.label!r}")
            mask = self._region_pixel_mask(view, truth, idx)
            r0, c0, r1, c1 = det.pixel_box(size)
            clipped = np.zeros_like(mask)
            clipped[r0:r1, c0:c1] = mask[r0:r1, c0:c1]
            pixels = clipped.astype(np.uint8)
            if rng is not None and self.noise.mask_dropout > 0:
                keep = rng.random(pixels.shape) >= self.noise.mask_dropout
                pixels = (pixels & keep).astype(np.uint8)
            masks.append(validate_mask(MaskImage(pixels=pixels, detection=det), size))
        return masks
