"""Perspective volume ray casting for virtual endoscopic frames.

Front-to-back compositing over a piecewise-linear transfer function, shaded
with a Phong headlight placed at the camera (the endoscope light).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .images import ManifestEntry, MANIFEST_NAME, save_image, write_manifest
from .volume import CtVolume, trilinear

TISSUE_RGB = (0.85, 0.60, 0.55)


class PathError(ValueError):
    pass


@dataclass(frozen=True)
class TransferFunction:
    """Maps scalar values to RGBA by linear interpolation between control points.

    Values below the first or above the last point take that endpoint's RGBA.
    """

    control_points: tuple[tuple[float, tuple[float, float, float, float]], ...]

    def __post_init__(self):
        pts = tuple((float(s), tuple(float(c) for c in rgba)) for s, rgba in self.control_points)
        if not pts:
            raise ValueError("transfer function needs at least one control point")
        for _, rgba in pts:
            if len(rgba) != 4 or min(rgba) < 0 or max(rgba) > 1:
                raise ValueError(f"rgba must be 4 values in [0, 1], got {rgba}")
        scalars = [s for s, _ in pts]
        if any(b <= a for a, b in zip(scalars, scalars[1:])):
            raise ValueError(f"control point scalars must be strictly increasing, got {scalars}")
        object.__setattr__(self, "control_points", pts)

    @classmethod
    def colon_default(cls) -> "TransferFunction":
        r, g, b = TISSUE_RGB
        return cls(((-500.0, (r, g, b, 0.0)), (0.0, (r, g, b, 1.0))))

    def opaque_range(self) -> tuple[float, float]:
        """Scalar interval outside which opacity is zero (may be unbounded)."""
        pts = self.control_points
        alphas = [c[3] for _, c in pts]
        if not any(alphas):
            return (math.inf, -math.inf)
        first = next(i for i, a in enumerate(alphas) if a > 0)
        last = max(i for i, a in enumerate(alphas) if a > 0)
        lo = -math.inf if first == 0 else pts[first - 1][0]
        hi = math.inf if last == len(pts) - 1 else pts[last + 1][0]
        return lo, hi

    def __call__(self, values: np.ndarray) -> np.ndarray:
        scalars = np.array([s for s, _ in self.control_points])
        rgba = np.array([c for _, c in self.control_points])
        values = np.asarray(values, dtype=np.float64)
        return np.stack([np.interp(values, scalars, rgba[:, ch]) for ch in range(4)], axis=-1)


@dataclass(frozen=True)
class Camera:
    position: tuple[float, float, float]
    forward: tuple[float, float, float] = (0.0, 0.0, 1.0)
    up: tuple[float, float, float] = (0.0, 1.0, 0.0)
    vertical_fov: float = 70.0
    image_size: tuple[int, int] = (256, 256)

    def __post_init__(self):
        f = np.asarray(self.forward, dtype=np.float64)
        u = np.asarray(self.up, dtype=np.float64)
        if np.linalg.norm(f) == 0:
            raise ValueError("camera forward vector is zero")
        f = f / np.linalg.norm(f)
        u = u - np.dot(u, f) * f
        if np.linalg.norm(u) < 1e-9:
            raise ValueError("camera up vector is parallel to forward")
        u = u / np.linalg.norm(u)
        if not 0 < self.vertical_fov < 180:
            raise ValueError(f"vertical_fov must be in (0, 180), got {self.vertical_fov}")
        object.__setattr__(self, "position", tuple(float(p) for p in self.position))
        object.__setattr__(self, "forward", tuple(f.tolist()))
        object.__setattr__(self, "up", tuple(u.tolist()))
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))

    @classmethod
    def look_at(cls, position, target, up_hint=(0.0, 1.0, 0.0), **kwargs) -> "Camera":
        forward = np.asarray(target, dtype=np.float64) - np.asarray(position, dtype=np.float64)
        hint = np.asarray(up_hint, dtype=np.float64)
        n = np.linalg.norm(forward)
        if n == 0:
            raise ValueError("camera target coincides with its position")
        if np.linalg.norm(np.cross(forward / n, hint)) < 1e-3:
            hint = np.array([1.0, 0.0, 0.0]) if abs(forward[0] / n) < 0.9 else np.array([0.0, 0.0, 1.0])
        return cls(position=tuple(position), forward=tuple(forward), up=tuple(hint), **kwargs)

    def ray_directions(self) -> np.ndarray:
        """Unit ray directions, shape (H, W, 3); row 0 is the top of the image."""
        h, w = self.image_size
        f, u = np.asarray(self.forward), np.asarray(self.up)
        right = np.cross(f, u)
        half = math.tan(math.radians(self.vertical_fov) / 2)
        xs = ((np.arange(w) + 0.5) / w * 2 - 1) * half * (w / h)
        ys = (1 - (np.arange(h) + 0.5) / h * 2) * half
        d = f + xs[None, :, None] * right + ys[:, None, None] * u
        return d / np.linalg.norm(d, axis=-1, keepdims=True)


@dataclass(frozen=True)
class RenderParams:
    """Sampling, compositing and headlight shading constants.

    ``reference_step`` is the path length (mm) over which transfer-function
    opacities are defined. Between consecutive samples the scalar is taken as
    linear and the transfer function is integrated with ``substeps`` sub-samples
    (gradients are interpolated the same way), so sharp transfer-function ramps
    alias less with the step size. The first sample of a ray is composited alone. ``attenuation_distance`` sets the headlight falloff
    ``1 / (1 + (d / attenuation_distance)**2)``; ``None`` disables it.
    """

    step_size: float = 0.5
    reference_step: float = 1.0
    termination: float = 0.99
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    ambient: float = 0.1
    diffuse: float = 0.7
    specular: float = 0.2
    shininess: float = 20.0
    attenuation_distance: float | None = 40.0
    substeps: int = 8

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        if self.reference_step <= 0:
            raise ValueError(f"reference_step must be > 0, got {self.reference_step}")
        if not 0 < self.termination <= 1:
            raise ValueError(f"termination must be in (0, 1], got {self.termination}")
        if self.substeps < 1:
            raise ValueError(f"substeps must be >= 1, got {self.substeps}")


def gradient_field(volume: CtVolume) -> np.ndarray:
    """Central-difference gradient in world units, shape (nx, ny, nz, 3)."""
    g = np.gradient(volume.values.astype(np.float64), *volume.spacing)
    return np.stack(g, axis=-1)


def shade(rgb: np.ndarray, gradient: np.ndarray, ray_dir: np.ndarray, distance: np.ndarray, rp: RenderParams) -> np.ndarray:
    """Phong shading with the light and eye both at the camera.

    The surface normal faces down the gradient (towards lower values, i.e. the
    air side). Where the gradient vanishes the sample is treated as facing the light.
    """
    gnorm = np.linalg.norm(gradient, axis=-1)
    flat = gnorm < 1e-9
    # light direction is -ray_dir, normal is -gradient/|gradient|
    ndl = np.einsum("...i,...i->...", gradient, ray_dir) / np.where(flat, 1.0, gnorm)
    ndl = np.where(flat, 1.0, np.maximum(ndl, 0.0))
    if rp.attenuation_distance is None:
        att = np.ones_like(ndl)
    else:
        att = 1.0 / (1.0 + (np.asarray(distance) / rp.attenuation_distance) ** 2)
    lit = rp.ambient + att * rp.diffuse * ndl
    spec = att * rp.specular * ndl**rp.shininess
    return np.clip(rgb * lit[..., None] + spec[..., None], 0.0, 1.0)


def _ray_box(origin: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origin) * inv
        t1 = (hi - origin) * inv
    tmin = np.nanmax(np.minimum(t0, t1), axis=-1)
    tmax = np.nanmin(np.maximum(t0, t1), axis=-1)
    return np.maximum(tmin, 0.0), tmax


def render_view(
    volume: CtVolume,
    camera: Camera,
    tf: TransferFunction | None = None,
    rp: RenderParams | None = None,
    grad: np.ndarray | None = None,
) -> np.ndarray:
    """Render one (H, W, 3) float image in [0, 1].

    Samples sit at ``t_enter + k * step_size`` along each ray, where ``t_enter``
    is where the ray enters the volume box (0 for cameras inside it).
    ``grad`` may pass a precomputed :func:`gradient_field` to save work across frames.
    """
    tf = tf or TransferFunction.colon_default()
    rp = rp or RenderParams()
    if grad is None:
        grad = gradient_field(volume)
    h, w = camera.image_size
    dirs = camera.ray_directions().reshape(-1, 3)
    origin = np.asarray(camera.position, dtype=np.float64)
    lo, hi = volume.bounds
    t_near, t_far = _ray_box(origin, dirs, lo, hi)

    n = dirs.shape[0]
    color = np.zeros((n, 3))
    alpha = np.zeros(n)
    prev_value = np.zeros(n)
    active = np.flatnonzero(t_near <= t_far)
    op_lo, op_hi = tf.opaque_range()
    m = rp.substeps
    fractions = np.arange(1, m + 1) / m

    def composite(ids, rgba, g, d, t, exponent):
        c = shade(rgba[:, :3], g, d, t, rp)
        a_corr = 1.0 - (1.0 - rgba[:, 3]) ** exponent
        weight = (1.0 - alpha[ids]) * a_corr
        color[ids] += weight[:, None] * c
        alpha[ids] += weight

    k = 0
    while active.size:
        t = t_near[active] + k * rp.step_size
        inside = t <= t_far[active]
        active, t = active[inside], t[inside]
        if not active.size:
            break
        d = dirs[active]
        idx = volume.to_index(origin + d * t[:, None])
        value = trilinear(volume.values, idx, volume.background)
        if k == 0:
            rgba = tf(value)
            hit = rgba[:, 3] > 0
            if hit.any():
                g = trilinear(grad, idx[hit], 0.0)
                composite(active[hit], rgba[hit], g, d[hit], t[hit], rp.step_size / rp.reference_step)
        else:
            before = prev_value[active]
            lo, hi = np.minimum(before, value), np.maximum(before, value)
            seg = np.flatnonzero((hi >= op_lo) & (lo <= op_hi))
            if seg.size:
                ids, ds, ts = active[seg], d[seg], t[seg]
                g1 = trilinear(grad, idx[seg], 0.0)
                g0 = trilinear(grad, volume.to_index(origin + ds * (ts - rp.step_size)[:, None]), 0.0)
                exponent = rp.step_size / m / rp.reference_step
                for f in fractions:
                    rgba = tf(before[seg] + f * (value[seg] - before[seg]))
                    hit = (rgba[:, 3] > 0) & (alpha[ids] < rp.termination)
                    if hit.any():
                        g = g0[hit] + f * (g1[hit] - g0[hit])
                        composite(ids[hit], rgba[hit], g, ds[hit], ts[hit] - (1 - f) * rp.step_size, exponent)
        prev_value[active] = value
        done = alpha[active] >= rp.termination
        active = active[~done]
        k += 1
    color += (1.0 - alpha)[:, None] * np.asarray(rp.background, dtype=np.float64)
    return np.clip(color, 0.0, 1.0).reshape(h, w, 3)


@dataclass(frozen=True)
class FlyThroughPath:
    """Camera keyframes ``(position, look_target)``.

    Positions follow a natural cubic spline through the keyframes and look
    targets are linearly interpolated. ``(len(keyframes) - 1) * samples_per_segment``
    frames are sampled uniformly over the whole path, both ends included.
    """

    keyframes: tuple
    samples_per_segment: int = 10
    up_hint: tuple[float, float, float] = (0.0, 1.0, 0.0)

    def __post_init__(self):
        kf = tuple((tuple(map(float, p)), tuple(map(float, t))) for p, t in self.keyframes)
        if len(kf) < 2:
            raise PathError("a fly-through needs at least 2 keyframes")
        for i, (a, b) in enumerate(zip(kf, kf[1:])):
            if a[0] == b[0]:
                raise PathError(f"keyframes {i} and {i + 1} share the same position")
        if self.samples_per_segment < 1:
            raise PathError(f"samples_per_segment must be >= 1, got {self.samples_per_segment}")
        object.__setattr__(self, "keyframes", kf)

    def reversed(self) -> "FlyThroughPath":
        return FlyThroughPath(self.keyframes[::-1], self.samples_per_segment, self.up_hint)

    def samples(self) -> tuple[np.ndarray, np.ndarray]:
        """Interpolated (positions, look_targets), each of shape (N, 3)."""
        k = len(self.keyframes)
        n = (k - 1) * self.samples_per_segment
        knots = np.arange(k, dtype=np.float64)
        u = np.linspace(0.0, k - 1, n) if n > 1 else np.zeros(1)
        pos = np.array([p for p, _ in self.keyframes])
        tgt = np.array([t for _, t in self.keyframes])
        positions = CubicSpline(knots, pos, axis=0, bc_type="natural")(u)
        targets = np.stack([np.interp(u, knots, tgt[:, i]) for i in range(3)], axis=-1)
        return positions, targets

    def cameras(self, **camera_kwargs) -> list[Camera]:
        positions, targets = self.samples()
        return [
            Camera.look_at(p, t, up_hint=self.up_hint, **camera_kwargs) for p, t in zip(positions, targets)
        ]


def fly_through(
    volume: CtVolume,
    path: FlyThroughPath,
    tf: TransferFunction | None = None,
    rp: RenderParams | None = None,
    **camera_kwargs,
) -> list[np.ndarray]:
    """Render every path sample in order. Raises PathError if a sample leaves the volume box."""
    positions, _ = path.samples()
    outside = np.flatnonzero(~volume.contains(positions))
    if outside.size:
        i = int(outside[0])
        raise PathError(f"path sample {i} at {positions[i].round(3).tolist()} is outside the volume")
    grad = gradient_field(volume)
    return [render_view(volume, cam, tf, rp, grad=grad) for cam in path.cameras(**camera_kwargs)]


def export_dataset(
    frames: Sequence[np.ndarray],
    out_dir: str | Path,
    source: str | Sequence[str] = "",
    domain: str = "virtual",
    prefix: str = "frame",
) -> Path:
    """Write frames as 8-bit PNGs plus a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sources = [source] * len(frames) if isinstance(source, str) else list(source)
    if len(sources) != len(frames):
        raise ValueError(f"{len(frames)} frames but {len(sources)} source entries")
    entries = []
    for i, (frame, src) in enumerate(zip(frames, sources)):
        name = f"{prefix}_{i:05d}.png"
        save_image(frame, out_dir / name)
        entries.append(ManifestEntry(name, domain, src or f"frame={i}"))
    return write_manifest(entries, out_dir / MANIFEST_NAME)
