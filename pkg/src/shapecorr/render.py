"""Deterministic software rasterizer and the classification/segmentation view sets."""
from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .mesh import Mesh

BACKGROUND = -1

# The headlight shading floor keeps every lit pixel strictly non-black, so the
# rgb and face-index buffers agree on what is background.
_AMBIENT = 0.25
_DIFFUSE = 0.75
_ALBEDO = 190

_NEAR_PLANE = 0.05

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


@dataclass(frozen=True)
class Camera:
    """Orbit camera looking at the origin, up +Y."""

    elevation_deg: float
    azimuth_deg: float
    radius: float
    fov_deg: float = 50.0
    image_size: int = 512

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("camera radius must be positive")
        if self.image_size < 16:
            raise ValueError("image_size must be >= 16")
        if not -90.0 < self.elevation_deg < 90.0:
            raise ValueError("elevation must lie strictly between -90 and 90 degrees")

    @property
    def position(self) -> np.ndarray:
        return camera_position(self.elevation_deg, self.azimuth_deg, self.radius)


@dataclass
class RenderedView:
    """RGB raster plus the per-pixel face-index buffer from the same z-pass."""

    rgb: np.ndarray            # (H, W, 3) uint8
    face_index: np.ndarray     # (H, W) int32, BACKGROUND where no face covers the pixel
    camera: Camera
    shape_id: str = ""
    view_index: int = field(default=-1, compare=False)

    @property
    def image_size(self) -> int:
        return self.rgb.shape[0]

    def png_bytes(self) -> bytes:
        return encode_png(self.rgb)


def camera_position(elevation_deg: float, azimuth_deg: float, radius: float) -> np.ndarray:
    """Position on the orbit sphere: r * (cos e sin a, sin e, cos e cos a)."""
    e = np.deg2rad(elevation_deg)
    a = np.deg2rad(azimuth_deg)
    return radius * np.array([np.cos(e) * np.sin(a), np.sin(e), np.cos(e) * np.cos(a)])


def classification_viewpoints(k: int = 12, image_size: int = 512) -> list[Camera]:
    """The elevation {-45, 0, 45} x azimuth {0, 90, 180, 270} grid at radius 2.

    Ordered elevation-major then azimuth. ``k=24`` doubles the grid by
    emitting every direction at radii {2, 1.75}; other counts are rejected.
    """
    elevations = (-45.0, 0.0, 45.0)
    azimuths = (0.0, 90.0, 180.0, 270.0)
    if k == 12:
        radii = (2.0,)
    elif k == 24:
        radii = (2.0, 1.75)
    else:
        raise ValueError(f"classification view count must be 12 or 24, got {k}")
    return [
        Camera(e, a, r, image_size=image_size)
        for e in elevations
        for a in azimuths
        for r in radii
    ]


def fibonacci_directions(n: int) -> np.ndarray:
    """n near-uniform unit directions from the Fibonacci sphere lattice."""
    i = np.arange(n)
    y = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - y * y))
    theta = GOLDEN_ANGLE * i
    return np.stack([np.cos(theta) * r, y, np.sin(theta) * r], axis=1)


def segmentation_viewpoints(
    total_views: int = 180,
    radii=(2.0, 1.75, 1.5),
    image_size: int = 512,
) -> list[Camera]:
    """Uniformly covering view set: Fibonacci directions, each at every radius.

    ``total_views`` must be divisible by the radius count; ordering is
    (direction index, radius descending) so score accumulation is reproducible.
    """
    radii = tuple(radii)
    if total_views % len(radii) != 0:
        raise ValueError(f"total views {total_views} not divisible by {len(radii)} radii")
    directions = fibonacci_directions(total_views // len(radii))
    cams = []
    for d in directions:
        elevation = np.rad2deg(np.arcsin(np.clip(d[1], -1.0, 1.0)))
        elevation = float(np.clip(elevation, -89.9, 89.9))
        azimuth = float(np.rad2deg(np.arctan2(d[0], d[2])))
        for r in sorted(radii, reverse=True):
            cams.append(Camera(elevation, azimuth, r, image_size=image_size))
    return cams


def _look_at_rotation(eye: np.ndarray) -> np.ndarray:
    """Rows are the camera frame (right, up, -forward); camera looks down -Z."""
    forward = -eye / np.linalg.norm(eye)
    up = np.array([0.0, 1.0, 0.0])
    if abs(float(forward @ up)) > 0.999999:
        up = np.array([0.0, 0.0, 1.0])  # gaze parallel to +Y: roll to +Z up
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    true_up = np.cross(right, forward)
    return np.stack([right, true_up, -forward])


def render(
    mesh: Mesh,
    camera: Camera,
    face_colors: np.ndarray | None = None,
    shaded: bool = True,
) -> RenderedView:
    """Perspective z-buffered rasterization returning rgb + face-index buffers.

    Flat diffuse headlight shading on a black background by default; passing
    ``face_colors`` ((F, 3) uint8) with ``shaded=False`` reproduces exact flat
    colors (used by the color-id cross-check). Deterministic: identical inputs
    give byte-identical rasters.
    """
    size = camera.image_size
    eye = camera.position
    bounding = float(np.linalg.norm(mesh.vertices, axis=1).max())
    if camera.radius < bounding:
        warnings.warn(
            f"camera radius {camera.radius} is inside the mesh bounding sphere ({bounding:.3f})",
            stacklevel=2,
        )

    rot = _look_at_rotation(eye)
    view = (mesh.vertices - eye) @ rot.T
    depth = -view[:, 2]  # positive in front of the camera
    focal = 1.0 / np.tan(np.deg2rad(camera.fov_deg) / 2.0)

    safe_depth = np.maximum(depth, _NEAR_PLANE)
    px = (focal * view[:, 0] / safe_depth + 1.0) * 0.5 * size - 0.5
    py = (1.0 - (focal * view[:, 1] / safe_depth + 1.0) * 0.5) * size - 0.5
    inv_depth = 1.0 / safe_depth

    zbuf = np.zeros((size, size), dtype=np.float64)  # stores 1/depth; larger wins
    fbuf = np.full((size, size), BACKGROUND, dtype=np.int32)

    faces = mesh.faces
    vertex_ok = depth > _NEAR_PLANE
    face_ok = vertex_ok[faces].all(axis=1)

    tx = px[faces]
    ty = py[faces]
    xmin = np.clip(np.floor(tx.min(axis=1)).astype(np.int64), 0, size - 1)
    xmax = np.clip(np.ceil(tx.max(axis=1)).astype(np.int64), 0, size - 1)
    ymin = np.clip(np.floor(ty.min(axis=1)).astype(np.int64), 0, size - 1)
    ymax = np.clip(np.ceil(ty.max(axis=1)).astype(np.int64), 0, size - 1)
    onscreen = (tx.max(axis=1) >= 0) & (tx.min(axis=1) <= size - 1) & (ty.max(axis=1) >= 0) & (ty.min(axis=1) <= size - 1)
    candidates = np.flatnonzero(face_ok & onscreen)

    for fi in candidates:
        x0, x1 = xmin[fi], xmax[fi]
        y0, y1 = ymin[fi], ymax[fi]
        ax, ay = tx[fi, 0], ty[fi, 0]
        bx, by = tx[fi, 1], ty[fi, 1]
        cx, cy = tx[fi, 2], ty[fi, 2]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area == 0.0:
            continue
        xs = np.arange(x0, x1 + 1, dtype=np.float64)
        ys = np.arange(y0, y1 + 1, dtype=np.float64)
        gx = xs[None, :]
        gy = ys[:, None]
        w0 = (cx - bx) * (gy - by) - (cy - by) * (gx - bx)
        w1 = (ax - cx) * (gy - cy) - (ay - cy) * (gx - cx)
        w2 = area - w0 - w1
        if area > 0:
            inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        else:
            inside = (w0 <= 0) & (w1 <= 0) & (w2 <= 0)
        if not inside.any():
            continue
        b0 = w0 / area
        b1 = w1 / area
        b2 = w2 / area
        iv = faces[fi]
        # 1/depth is affine in screen space, so this interpolation is exact
        frag_inv = b0 * inv_depth[iv[0]] + b1 * inv_depth[iv[1]] + b2 * inv_depth[iv[2]]
        tile_z = zbuf[y0 : y1 + 1, x0 : x1 + 1]
        tile_f = fbuf[y0 : y1 + 1, x0 : x1 + 1]
        win = inside & (frag_inv > tile_z)
        if not win.any():
            continue
        tile_z[win] = frag_inv[win]
        tile_f[win] = fi

    if face_colors is not None:
        palette = np.asarray(face_colors, dtype=np.uint8)
        if palette.shape != (mesh.n_faces, 3):
            raise ValueError(f"face_colors must be ({mesh.n_faces}, 3)")
        if shaded:
            shade = _headlight_intensity(mesh, eye)
            palette = np.clip(palette.astype(np.float64) * shade[:, None], 0, 255).astype(np.uint8)
    else:
        shade = _headlight_intensity(mesh, eye)
        palette = np.clip(np.round(_ALBEDO * shade), 1, 255).astype(np.uint8)[:, None].repeat(3, axis=1)

    rgb = np.zeros((size, size, 3), dtype=np.uint8)
    fg = fbuf >= 0
    rgb[fg] = palette[fbuf[fg]]
    return RenderedView(rgb=rgb, face_index=fbuf, camera=camera, shape_id=mesh.id)


def _headlight_intensity(mesh: Mesh, eye: np.ndarray) -> np.ndarray:
    """Per-face flat intensity with an ambient floor; back faces lit the same."""
    to_eye = eye - mesh.face_centroids
    norms = np.linalg.norm(to_eye, axis=1)
    norms = np.maximum(norms, np.finfo(float).tiny)
    lambert = np.abs((mesh.face_normals * (to_eye / norms[:, None])).sum(axis=1))
    return _AMBIENT + _DIFFUSE * lambert


def face_id_colors(n_faces: int) -> np.ndarray:
    """Unique 24-bit color per face id; ids are offset by 1 so face 0 is not black."""
    ids = np.arange(1, n_faces + 1, dtype=np.uint32)
    return np.stack([ids & 0xFF, (ids >> 8) & 0xFF, (ids >> 16) & 0xFF], axis=1).astype(np.uint8)


def decode_face_id_colors(rgb: np.ndarray) -> np.ndarray:
    """Inverse of :func:`face_id_colors` applied to a raster; black decodes to BACKGROUND."""
    ids = (
        rgb[..., 0].astype(np.int64)
        + (rgb[..., 1].astype(np.int64) << 8)
        + (rgb[..., 2].astype(np.int64) << 16)
    ) - 1
    ids[(rgb == 0).all(axis=-1)] = BACKGROUND
    return ids


def encode_png(rgb: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(rgb).save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    return np.asarray(Image.open(io.BytesIO(data)).convert("RGB"))


def save_png(path, rgb: np.ndarray) -> None:
    Image.fromarray(rgb).save(path, format="PNG")


def save_face_index_raw(path, face_index: np.ndarray) -> None:
    """Raw 32-bit little-endian dump of the face-index buffer (fixture format)."""
    with open(path, "wb") as fh:
        fh.write(face_index.astype("<i4").tobytes())


def load_face_index_raw(path, image_size: int) -> np.ndarray:
    data = np.fromfile(path, dtype="<i4")
    return data.reshape(image_size, image_size)
