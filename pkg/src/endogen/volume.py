"""Scalar CT-like volumes: the on-disk format, trilinear sampling and test phantoms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

AIR = -1000.0
TISSUE = 40.0
BACKGROUND = -1024.0


class VolumeError(ValueError):
    """Raised for malformed volume files or invalid phantom parameters."""


@dataclass(frozen=True)
class CtVolume:
    """A scalar grid indexed ``values[x, y, z]`` with world placement.

    World position of voxel ``(i, j, k)`` is ``origin + (i, j, k) * spacing``.
    """

    values: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    background: float = BACKGROUND
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.values.ndim != 3:
            raise VolumeError(f"volume must be 3D, got shape {self.values.shape}")
        if min(self.values.shape) < 2:
            raise VolumeError(f"every dimension must be >= 2, got {self.values.shape}")
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise VolumeError(f"spacing must be three positive values, got {self.spacing}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.values.shape)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """World-space box spanned by the voxel centers."""
        lo = np.asarray(self.origin, dtype=np.float64)
        hi = lo + (np.asarray(self.dims) - 1) * np.asarray(self.spacing)
        return lo, hi

    def contains(self, points: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds
        points = np.asarray(points, dtype=np.float64)
        return np.all((points >= lo) & (points <= hi), axis=-1)

    def to_index(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.origin)) / np.asarray(self.spacing)

    def sample(self, points: np.ndarray) -> np.ndarray:
        """Trilinear sample at world points; points outside the box read as background."""
        return trilinear(self.values, self.to_index(points), self.background)


def trilinear(grid: np.ndarray, idx: np.ndarray, outside: float) -> np.ndarray:
    """Trilinear interpolation of ``grid`` (shape (nx, ny, nz) or (nx, ny, nz, c))
    at fractional voxel indices ``idx[..., 3]``."""
    idx = np.asarray(idx, dtype=np.float64)
    shape = np.asarray(grid.shape[:3])
    flat = idx.reshape(-1, 3)
    inside = np.all((flat >= 0) & (flat <= shape - 1), axis=1)
    tail = grid.shape[3:]
    out = np.full((flat.shape[0],) + tail, outside, dtype=np.float64)
    p = flat[inside]
    if len(p):
        base = np.minimum(np.floor(p).astype(np.intp), shape - 2)
        f = p - base
        x0, y0, z0 = base[:, 0], base[:, 1], base[:, 2]
        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
        if tail:
            fx, fy, fz = fx[:, None], fy[:, None], fz[:, None]
        c00 = grid[x0, y0, z0] * (1 - fx) + grid[x0 + 1, y0, z0] * fx
        c10 = grid[x0, y0 + 1, z0] * (1 - fx) + grid[x0 + 1, y0 + 1, z0] * fx
        c01 = grid[x0, y0, z0 + 1] * (1 - fx) + grid[x0 + 1, y0, z0 + 1] * fx
        c11 = grid[x0, y0 + 1, z0 + 1] * (1 - fx) + grid[x0 + 1, y0 + 1, z0 + 1] * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        out[inside] = c0 * (1 - fz) + c1 * fz
    return out.reshape(idx.shape[:-1] + tail)


# --- file format -----------------------------------------------------------

_HEADER_KEYS = ("dims", "spacing", "origin", "dtype", "data")


def _parse_header(text: str, path: Path) -> dict[str, str]:
    fields = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise VolumeError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        fields[key.strip()] = value.strip()
    missing = [k for k in _HEADER_KEYS if k not in fields]
    if missing:
        raise VolumeError(f"{path}: header missing {', '.join(missing)}")
    return fields


def _triple(value: str, kind, name: str, path: Path):
    parts = value.split()
    try:
        out = tuple(kind(p) for p in parts)
    except ValueError:
        raise VolumeError(f"{path}: cannot parse {name} = {value!r}") from None
    if len(out) != 3:
        raise VolumeError(f"{path}: {name} needs 3 values, got {len(out)}")
    return out


def load_volume(path: str | Path) -> CtVolume:
    """Read a header file plus its raw little-endian int16 payload."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise VolumeError(f"{path}: cannot read header ({exc})") from exc
    fields = _parse_header(text, path)
    dims = _triple(fields["dims"], int, "dims", path)
    spacing = _triple(fields["spacing"], float, "spacing", path)
    origin = _triple(fields["origin"], float, "origin", path)
    if fields["dtype"] != "int16":
        raise VolumeError(f"{path}: unsupported dtype {fields['dtype']!r} (only int16)")
    if min(dims) < 2:
        raise VolumeError(f"{path}: dims must all be >= 2, got {dims}")
    raw_path = path.parent / fields["data"]
    try:
        payload = raw_path.read_bytes()
    except OSError as exc:
        raise VolumeError(f"{path}: cannot read data file {raw_path} ({exc})") from exc
    expected = 2 * dims[0] * dims[1] * dims[2]
    if len(payload) != expected:
        raise VolumeError(
            f"{path}: size mismatch, dims {dims} need {expected} bytes but {raw_path.name} has {len(payload)}"
        )
    # x fastest on disk == Fortran order for a [x, y, z] array
    values = np.frombuffer(payload, dtype="<i2").reshape(dims, order="F")
    return CtVolume(values=values.astype(np.int16), spacing=spacing, origin=origin)


def _fmt(values) -> str:
    return " ".join(repr(float(v)) if isinstance(v, float) else str(v) for v in values)


def write_volume(volume: CtVolume, path: str | Path) -> Path:
    """Write ``path`` (header) and ``<stem>.raw`` next to it. Values are rounded to int16."""
    path = Path(path)
    raw_name = path.with_suffix(".raw").name
    if raw_name == path.name:
        raw_name = path.name + ".raw"
    data = np.clip(np.rint(volume.values), -32768, 32767).astype("<i2")
    header = (
        f"dims = {_fmt(volume.dims)}\n"
        f"spacing = {_fmt(float(s) for s in volume.spacing)}\n"
        f"origin = {_fmt(float(o) for o in volume.origin)}\n"
        "dtype = int16\n"
        f"data = {raw_name}\n"
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(header, encoding="utf-8")
    (path.parent / raw_name).write_bytes(data.tobytes(order="F"))
    return path


# --- phantoms ----------------------------------------------------------------


def _coverage(signed_distance: np.ndarray) -> np.ndarray:
    """Fraction of tissue in a voxel given the signed distance (in voxels) to the air boundary.

    Negative distance is inside the air region. A one-voxel linear ramp keeps
    the iso-surface sub-voxel accurate under trilinear sampling.
    """
    return np.clip(0.5 + signed_distance, 0.0, 1.0)


def make_phantom(kind: str, dims=(32, 32, 32), **params) -> CtVolume:
    """Rasterize an analytic two-material shape.

    Kinds and their parameters (lengths in voxels, centered in the grid unless given):

    * ``sphere``: ``radius``, ``center``, ``hollow`` (default True). Hollow means an
      air cavity inside tissue; ``hollow=False`` is a tissue ball floating in air.
    * ``tube``: air lumen along z inside tissue. ``radius``, ``center`` (x, y),
      ``fold_amplitude`` and ``fold_period`` modulate the radius along z to mimic folds.
    * ``torus``: air ring in the z = center plane. ``major_radius``, ``minor_radius``.

    Spacing is 1 mm and the origin is 0, so voxel indices equal world millimeters.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 8:
        raise VolumeError(f"phantom dims must be >= 8 per axis, got {dims}")
    x, y, z = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in dims), indexing="ij")
    mid = [(n - 1) / 2 for n in dims]
    meta = {"kind": kind, "dims": dims}

    if kind == "sphere":
        radius = float(params.pop("radius", min(dims) / 3))
        center = tuple(float(c) for c in params.pop("center", mid))
        hollow = bool(params.pop("hollow", True))
        if radius <= 0:
            raise VolumeError(f"sphere radius must be > 0, got {radius}")
        sd = np.sqrt((x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2) - radius
        if not hollow:
            sd = -sd
        meta.update(radius=radius, center=center, hollow=hollow)
    elif kind == "tube":
        radius = float(params.pop("radius", min(dims[:2]) / 4))
        center = tuple(float(c) for c in params.pop("center", mid[:2]))
        amp = float(params.pop("fold_amplitude", 0.0))
        period = float(params.pop("fold_period", 16.0))
        if radius <= 0 or period <= 0 or amp < 0 or amp >= radius:
            raise VolumeError(
                f"tube needs radius > 0, period > 0, 0 <= fold_amplitude < radius; got {radius}, {period}, {amp}"
            )
        local = radius - amp * (0.5 - 0.5 * np.cos(2 * math.pi * z / period))
        sd = np.sqrt((x - center[0]) ** 2 + (y - center[1]) ** 2) - local
        meta.update(radius=radius, center=center, fold_amplitude=amp, fold_period=period)
    elif kind == "torus":
        major = float(params.pop("major_radius", min(dims[:2]) / 3))
        minor = float(params.pop("minor_radius", min(dims) / 8))
        center = tuple(float(c) for c in params.pop("center", mid))
        if minor <= 0 or major <= minor:
            raise VolumeError(f"torus needs major_radius > minor_radius > 0, got {major}, {minor}")
        ring = np.sqrt((x - center[0]) ** 2 + (y - center[1]) ** 2) - major
        sd = np.sqrt(ring**2 + (z - center[2]) ** 2) - minor
        meta.update(major_radius=major, minor_radius=minor, center=center)
    else:
        raise VolumeError(f"unknown phantom kind {kind!r}")
    if params:
        raise VolumeError(f"unexpected {kind} parameters: {sorted(params)}")

    values = AIR + (TISSUE - AIR) * _coverage(sd)
    return CtVolume(values=np.rint(values).astype(np.int16), metadata=meta)
