"""8-bit image files and the tab-separated manifest shared by all pipeline stages.

Images in memory are float arrays of shape (H, W, 3) with values in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

MANIFEST_NAME = "manifest.tsv"
DOMAINS = ("virtual", "real")


class ImageIOError(OSError):
    pass


def quantize(img: np.ndarray) -> np.ndarray:
    """Float [0, 1] -> uint8 with round-half-up."""
    return np.floor(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_image(img: np.ndarray, path: str | Path) -> Path:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        Image.fromarray(quantize(img)).save(path, format="PNG")
    except OSError as exc:
        raise ImageIOError(f"cannot write {path}: {exc}") from exc
    return path


def resize_center_crop(pil: Image.Image, size: int) -> Image.Image:
    """Scale the short side to ``size`` then crop the central ``size`` x ``size`` square."""
    w, h = pil.size
    scale = size / min(w, h)
    nw, nh = max(size, round(w * scale)), max(size, round(h * scale))
    if (nw, nh) != (w, h):
        pil = pil.resize((nw, nh), Image.BILINEAR)
    left, top = (nw - size) // 2, (nh - size) // 2
    return pil.crop((left, top, left + size, top + size))


def load_image(path: str | Path, size: int | None = None) -> np.ndarray:
    """Read an image as float32 (H, W, 3) in [0, 1]; grayscale is replicated to 3 channels."""
    path = Path(path)
    try:
        with Image.open(path) as pil:
            pil = pil.convert("RGB")
    except (OSError, ValueError) as exc:
        raise ImageIOError(f"cannot read image {path}: {exc}") from exc
    if size is not None:
        pil = resize_center_crop(pil, size)
    return np.asarray(pil, dtype=np.float32) / 255.0


@dataclass(frozen=True)
class ManifestEntry:
    filename: str
    domain: str
    source: str


def write_manifest(entries, path: str | Path) -> Path:
    path = Path(path)
    lines = []
    for e in entries:
        for part in (e.filename, e.domain, e.source):
            if "\t" in part or "\n" in part:
                raise ValueError(f"manifest fields cannot contain tabs or newlines: {part!r}")
        lines.append(f"{e.filename}\t{e.domain}\t{e.source}\n")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(lines), encoding="utf-8")
    return path


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        if parts[1] not in DOMAINS:
            raise ValueError(f"{path}:{lineno}: unknown domain {parts[1]!r}")
        entries.append(ManifestEntry(*parts))
    return entries
