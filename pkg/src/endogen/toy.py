"""Synthetic two-domain toy set used by the tests and the CLI.

Domain V: tube-phantom frames from the ray caster. Domain R: a disjoint set of
tube-phantom frames restyled to look "real": hue shifted towards orange-red,
more saturated, multiplicative mucosa-like noise and dark vignetted corners.
Generation is deterministic in ``seed`` and cached on disk.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy.ndimage import gaussian_filter

from .images import MANIFEST_NAME
from .render import Camera, FlyThroughPath, RenderParams, TransferFunction, export_dataset, gradient_field, render_view
from .volume import make_phantom

TOY_VOLUME = dict(kind="tube", dims=(48, 48, 128), radius=14.0, fold_amplitude=4.0, fold_period=20.0)


def toy_volume():
    params = dict(TOY_VOLUME)
    return make_phantom(params.pop("kind"), params.pop("dims"), **params)


def axis_path(volume, samples_per_segment: int = 10, n_keyframes: int = 3) -> FlyThroughPath:
    """Fly-through along the z axis through the center of the x-y extent.

    Suits the tube phantom; the camera stays between 10% and 75% of the z range
    and looks a fifth of the range ahead.
    """
    lo, hi = volume.bounds
    cx, cy = (lo[:2] + hi[:2]) / 2
    length = hi[2] - lo[2]
    zs = np.linspace(lo[2] + 0.10 * length, lo[2] + 0.75 * length, n_keyframes)
    keyframes = [((cx, cy, z), (cx, cy, z + 0.2 * length)) for z in zs]
    return FlyThroughPath(tuple(keyframes), samples_per_segment)


def random_cameras(n: int, size: int, rng: np.random.Generator) -> list[Camera]:
    cams = []
    for _ in range(n):
        pos = np.array([23.5 + rng.uniform(-4, 4), 23.5 + rng.uniform(-4, 4), rng.uniform(8, 100)])
        look = np.array([rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), 1.0])
        roll = rng.uniform(0, 2 * np.pi)
        up = (np.cos(roll), np.sin(roll), 0.0)
        cams.append(Camera.look_at(pos, pos + 20 * look, up_hint=up, image_size=(size, size)))
    return cams


def realistic_style(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Restyle a rendered frame into the toy "real" domain."""
    h, w, _ = img.shape
    hsv = rgb_to_hsv(np.clip(img, 0, 1))
    hsv[..., 0] = (hsv[..., 0] + 0.03 + rng.normal(0, 0.005)) % 1.0
    hsv[..., 1] = np.clip(hsv[..., 1] * 1.8 + 0.1, 0, 1)
    out = hsv_to_rgb(hsv)
    texture = gaussian_filter(rng.standard_normal((h, w)), sigma=1.2)
    texture /= texture.std() + 1e-12
    out = out * (1.0 + 0.12 * texture)[..., None]
    yy, xx = np.mgrid[0:h, 0:w]
    r2 = ((yy - (h - 1) / 2) ** 2 + (xx - (w - 1) / 2) ** 2) / ((h / 2) ** 2)
    out = out * np.clip(1.6 - 0.8 * r2, 0, 1)[..., None]
    return np.clip(out ** 0.9, 0, 1)


def render_toy_frames(n: int, size: int, seed: int, styled: bool) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    volume = toy_volume()
    grad = gradient_field(volume)
    tf, rp = TransferFunction.colon_default(), RenderParams(step_size=0.5)
    frames = []
    for cam in random_cameras(n, size, rng):
        frame = render_view(volume, cam, tf, rp, grad=grad)
        frames.append(realistic_style(frame, rng) if styled else frame)
    return frames


def toy_dataset(root: str | Path, n_per_domain: int = 240, size: int = 64, seed: int = 0) -> tuple[Path, Path]:
    """Build (or reuse) the toy set under ``root``; returns the virtual and real manifests."""
    root = Path(root)
    stamp = root / "toy.json"
    params = {"n_per_domain": n_per_domain, "size": size, "seed": seed, "volume": TOY_VOLUME, "version": 2}
    manifests = root / "virtual" / MANIFEST_NAME, root / "real" / MANIFEST_NAME
    if stamp.exists() and json.loads(stamp.read_text()) == json.loads(json.dumps(params)) and all(m.exists() for m in manifests):
        return manifests
    virtual = render_toy_frames(n_per_domain, size, seed * 2, styled=False)
    real = render_toy_frames(n_per_domain, size, seed * 2 + 1, styled=True)
    export_dataset(virtual, root / "virtual", source="toy:tube", domain="virtual", prefix="v")
    export_dataset(real, root / "real", source="toy:tube-styled", domain="real", prefix="r")
    stamp.write_text(json.dumps(params, sort_keys=True))
    return manifests
