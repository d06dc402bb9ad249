"""Capsule hand mesh and a deterministic z-buffer software rasterizer.

Geometry is transformed with explicit elementwise arithmetic rather than
BLAS calls so results do not depend on the linear-algebra backend.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit
from PIL import Image as PILImage

from .kinematics import HandPose, JointSpace
from .sampling import AppearanceParams, TextureKind

SEGMENTS = 16  # around the capsule axis
RINGS = 8  # body subdivisions along the axis
CAP_BANDS = 4  # latitude bands per hemispherical cap
AMBIENT = 0.15
NEAR = 1e-3

BODY_TRIANGLES = 2 * SEGMENTS * RINGS
CAP_TRIANGLES = SEGMENTS * (2 * CAP_BANDS - 1)


@dataclass(frozen=True)
class CameraConfig:
    position: tuple[float, float, float] = (0.09, -0.20, -0.36)
    look_at: tuple[float, float, float] = (0.085, 0.0, 0.01)
    up: tuple[float, float, float] = (1.0, 0.0, 0.0)
    vertical_fov: float = 0.68
    width: int = 224
    height: int = 224

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if not 0 < self.vertical_fov < math.pi:
            raise ValueError("vertical_fov must lie in (0, pi)")
        forward = np.subtract(self.look_at, self.position)
        if np.linalg.norm(forward) == 0:
            raise ValueError("camera position and look_at coincide")
        if abs(np.linalg.norm(self.up) - 1.0) > 1e-9:
            raise ValueError("up must be a unit vector")
        if np.linalg.norm(np.cross(forward, self.up)) < 1e-9 * np.linalg.norm(forward):
            raise ValueError("up is parallel to the view direction")

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        f = np.subtract(self.look_at, self.position).astype(np.float64)
        f /= math.sqrt(f @ f)
        r = np.cross(f, self.up)
        r /= math.sqrt(r @ r)
        u = np.cross(r, f)
        return r, u, f

    def to_dict(self) -> dict:
        return {
            "position": list(self.position), "look_at": list(self.look_at), "up": list(self.up),
            "vertical_fov": self.vertical_fov, "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> CameraConfig:
        return cls(
            position=tuple(d["position"]), look_at=tuple(d["look_at"]), up=tuple(d["up"]),
            vertical_fov=float(d["vertical_fov"]), width=int(d["width"]), height=int(d["height"]),
        )


@dataclass(frozen=True)
class LightConfig:
    position: tuple[float, float, float] = (0.09, 0.0, -0.5)
    intensity: float = 1.0

    def __post_init__(self):
        if not 0 < self.intensity <= 10:
            raise ValueError("light intensity must lie in (0, 10]")

    def to_dict(self) -> dict:
        return {"position": list(self.position), "intensity": self.intensity}

    @classmethod
    def from_dict(cls, d: dict) -> LightConfig:
        return cls(position=tuple(d["position"]), intensity=float(d["intensity"]))


@dataclass(frozen=True)
class Image:
    """RGB8 image; ``pixels`` has shape (height, width, 3), row-major."""

    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.dtype != np.uint8 or self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError("pixels must be a (height, width, 3) uint8 array")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def buffer(self) -> bytes:
        return np.ascontiguousarray(self.pixels).tobytes()

    @classmethod
    def blank(cls, width: int, height: int) -> Image:
        return cls(np.full((height, width, 3), 255, dtype=np.uint8))


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray  # (V, 3) world coordinates
    normals: np.ndarray  # (V, 3) unit
    colors: np.ndarray  # (V, 3) in [0, 1]
    triangles: np.ndarray  # (T, 3) int64 vertex indices

    @classmethod
    def empty(cls) -> Mesh:
        z = np.zeros((0, 3))
        return cls(z, z.copy(), z.copy(), np.zeros((0, 3), dtype=np.int64))

    @staticmethod
    def concatenate(meshes: list[Mesh]) -> Mesh:
        if not meshes:
            return Mesh.empty()
        offsets = np.cumsum([0] + [len(m.vertices) for m in meshes[:-1]])
        return Mesh(
            np.concatenate([m.vertices for m in meshes]),
            np.concatenate([m.normals for m in meshes]),
            np.concatenate([m.colors for m in meshes]),
            np.concatenate([m.triangles + o for m, o in zip(meshes, offsets)]),
        )


_PHI = np.array([2.0 * math.pi * s / SEGMENTS for s in range(SEGMENTS)])
_COS_PHI = np.array([math.cos(p) for p in _PHI])
_SIN_PHI = np.array([math.sin(p) for p in _PHI])
_THETA = [0.5 * math.pi * c / CAP_BANDS for c in range(CAP_BANDS)]


def _ring_strip(first: int, rings: int) -> list[tuple[int, int, int]]:
    """Two triangles per quad between consecutive rings of SEGMENTS vertices."""
    tris = []
    for k in range(rings - 1):
        a0 = first + k * SEGMENTS
        b0 = a0 + SEGMENTS
        for s in range(SEGMENTS):
            s1 = (s + 1) % SEGMENTS
            tris.append((a0 + s, a0 + s1, b0 + s1))
            tris.append((a0 + s, b0 + s1, b0 + s))
    return tris


def _cap(direction: float, base: float, radius: float, first: int):
    """Hemisphere centered at x=base, bulging toward sign(direction)."""
    verts, norms = [], []
    for theta in _THETA:
        ct, st = math.cos(theta), math.sin(theta)
        for cp, sp in zip(_COS_PHI, _SIN_PHI):
            n = (direction * st, ct * cp, ct * sp)
            norms.append(n)
            verts.append((base + radius * n[0], radius * n[1], radius * n[2]))
    norms.append((direction, 0.0, 0.0))
    verts.append((base + direction * radius, 0.0, 0.0))
    tris = _ring_strip(first, CAP_BANDS)
    pole = first + CAP_BANDS * SEGMENTS
    last = first + (CAP_BANDS - 1) * SEGMENTS
    for s in range(SEGMENTS):
        tris.append((last + s, last + (s + 1) % SEGMENTS, pole))
    return verts, norms, tris


def capsule_local(length: float, radius: float):
    """Capsule along local +x from 0 to ``length``; a sphere when length is 0.

    Returns (vertices, normals, triangles, axial) with ``axial`` the
    surface-point coordinate along the link, used for texturing.
    """
    verts: list = []
    norms: list = []
    tris: list = []
    if length > 0:
        for k in range(RINGS + 1):
            x = length * k / RINGS
            for cp, sp in zip(_COS_PHI, _SIN_PHI):
                verts.append((x, radius * cp, radius * sp))
                norms.append((0.0, cp, sp))
        tris += _ring_strip(0, RINGS + 1)
    for direction, base in ((-1.0, 0.0), (1.0, length)):
        v, n, t = _cap(direction, base, radius, len(verts))
        verts += v
        norms += n
        tris += t
    verts = np.array(verts)
    norms = np.array(norms)
    norms /= np.sqrt((norms * norms).sum(axis=1))[:, None]
    return verts, norms, np.array(tris, dtype=np.int64), verts[:, 0].copy()


def _hash_unit(keys: np.ndarray) -> np.ndarray:
    """Integer hash of uint64 keys mapped to [0, 1)."""
    z = keys.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def texture_factor(appearance: AppearanceParams, link: int, axial: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """Brightness multiplier per vertex in [0.7, 1]."""
    period = 0.008 * appearance.texture_scale
    band = np.floor(axial / period).astype(np.int64)
    if appearance.texture_kind == TextureKind.SOLID:
        return np.ones(len(axial))
    if appearance.texture_kind == TextureKind.STRIPES:
        return np.where(band % 2 == 0, 1.0, 0.7)
    sector = np.floor((np.arctan2(normals[:, 2], normals[:, 1]) + math.pi) / (math.pi / 4)).astype(np.int64)
    keys = (np.int64(link) << 40) + ((band + 1024) << 8) + sector
    return 0.7 + 0.3 * _hash_unit(keys)


def _to_world(local: np.ndarray, R: np.ndarray, t: np.ndarray | None) -> np.ndarray:
    out = local[:, 0:1] * R[:, 0] + local[:, 1:2] * R[:, 1] + local[:, 2:3] * R[:, 2]
    return out if t is None else out + t


def build_hand_mesh(space: JointSpace, pose: HandPose, appearance: AppearanceParams) -> Mesh:
    if len(pose.rotations) != len(space):
        raise ValueError(f"pose has {len(pose.rotations)} links, joint space has {len(space)}")
    base = np.asarray(appearance.base_color, dtype=np.float64)
    parts = []
    for j, spec in enumerate(space.joints):
        verts, norms, tris, axial = capsule_local(spec.link_length, spec.radius)
        R, t = pose.rotations[j], pose.translations[j]
        factor = texture_factor(appearance, j, axial, norms)
        parts.append(Mesh(
            _to_world(verts, R, t),
            _to_world(norms, R, None),
            factor[:, None] * base[None, :],
            tris,
        ))
    return Mesh.concatenate(parts)


def shade_vertices(mesh: Mesh, light: LightConfig) -> np.ndarray:
    """Lambert term per vertex with an ambient floor, applied to vertex color."""
    to_light = np.asarray(light.position, dtype=np.float64) - mesh.vertices
    dist = np.sqrt((to_light * to_light).sum(axis=1))
    dist[dist == 0] = 1.0
    n_dot_l = (mesh.normals * to_light).sum(axis=1) / dist
    lambert = np.maximum(n_dot_l, 0.0) * light.intensity
    shade = np.minimum(AMBIENT + (1.0 - AMBIENT) * lambert, 1.0)
    return mesh.colors * shade[:, None]


def project(vertices: np.ndarray, camera: CameraConfig):
    """Pinhole projection to pixel coordinates; returns (px, py, depth)."""
    r, u, f = camera.basis()
    rel = vertices - np.asarray(camera.position, dtype=np.float64)
    xc = rel[:, 0] * r[0] + rel[:, 1] * r[1] + rel[:, 2] * r[2]
    yc = rel[:, 0] * u[0] + rel[:, 1] * u[1] + rel[:, 2] * u[2]
    zc = rel[:, 0] * f[0] + rel[:, 1] * f[1] + rel[:, 2] * f[2]
    focal = 0.5 * camera.height / math.tan(0.5 * camera.vertical_fov)
    safe = np.where(zc > NEAR, zc, 1.0)
    px = 0.5 * camera.width + focal * xc / safe
    py = 0.5 * camera.height - focal * yc / safe
    return px, py, zc


@njit(cache=True)
def _rasterize(px, py, pz, cols, tris, out, zbuf):
    height, width = zbuf.shape
    for t in range(tris.shape[0]):
        a, b, c = tris[t, 0], tris[t, 1], tris[t, 2]
        if pz[a] <= NEAR or pz[b] <= NEAR or pz[c] <= NEAR:
            continue
        xa, ya, xb, yb, xc, yc = px[a], py[a], px[b], py[b], px[c], py[c]
        area = (xb - xa) * (yc - ya) - (yb - ya) * (xc - xa)
        if area == 0.0:
            continue
        j0 = max(int(math.ceil(min(xa, xb, xc) - 0.5)), 0)
        j1 = min(int(math.floor(max(xa, xb, xc) - 0.5)), width - 1)
        i0 = max(int(math.ceil(min(ya, yb, yc) - 0.5)), 0)
        i1 = min(int(math.floor(max(ya, yb, yc) - 0.5)), height - 1)
        for i in range(i0, i1 + 1):
            cy = i + 0.5
            for j in range(j0, j1 + 1):
                cx = j + 0.5
                wa = ((xc - xb) * (cy - yb) - (yc - yb) * (cx - xb)) / area
                wb = ((xa - xc) * (cy - yc) - (ya - yc) * (cx - xc)) / area
                wc = ((xb - xa) * (cy - ya) - (yb - ya) * (cx - xa)) / area
                if wa < 0.0 or wb < 0.0 or wc < 0.0:
                    continue
                ia, ib, ic = wa / pz[a], wb / pz[b], wc / pz[c]
                iz = ia + ib + ic
                if iz <= zbuf[i, j]:
                    continue
                zbuf[i, j] = iz
                for ch in range(3):
                    v = (ia * cols[a, ch] + ib * cols[b, ch] + ic * cols[c, ch]) / iz
                    v = math.floor(v * 255.0 + 0.5)
                    out[i, j, ch] = np.uint8(min(max(v, 0.0), 255.0))


def render(mesh: Mesh, camera: CameraConfig = CameraConfig(), light: LightConfig = LightConfig()) -> Image:
    """Rasterize a mesh; uncovered pixels stay exactly white."""
    out = np.full((camera.height, camera.width, 3), 255, dtype=np.uint8)
    if len(mesh.triangles) == 0:
        return Image(out)
    cols = shade_vertices(mesh, light)
    px, py, pz = project(mesh.vertices, camera)
    zbuf = np.zeros((camera.height, camera.width))
    _rasterize(px, py, pz, np.ascontiguousarray(cols), np.ascontiguousarray(mesh.triangles, dtype=np.int64), out, zbuf)
    return Image(out)


def png_bytes(image: Image) -> bytes:
    buf = io.BytesIO()
    PILImage.fromarray(np.ascontiguousarray(image.pixels), "RGB").save(buf, format="PNG", compress_level=6)
    return buf.getvalue()


def encode_png(image: Image, out: str | Path) -> None:
    Path(out).write_bytes(png_bytes(image))


def decode_png(source: str | Path | bytes) -> Image:
    """Decode an 8-bit RGB PNG. Raises ValueError on anything else."""
    data = source if isinstance(source, bytes) else Path(source).read_bytes()
    try:
        with PILImage.open(io.BytesIO(data)) as im:
            if im.format != "PNG" or im.mode != "RGB":
                raise ValueError(f"expected an 8-bit RGB PNG, got {im.format} {im.mode}")
            im.load()
            return Image(np.array(im, dtype=np.uint8))
    except (OSError, SyntaxError) as exc:
        raise ValueError(f"cannot decode PNG: {exc}") from exc
