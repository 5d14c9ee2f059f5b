"""Inference with trained translators, quantitative proxies and timing.

Quality here is measured by proxies only: a color-histogram distance between
image sets and a temporal-smoothness ratio over frame sequences.
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import CheckpointError, load_checkpoint, read_metadata
from .cleansing import DatasetError
from .images import save_image
from .nets import ArchitectureSpec, Network, ShapeError, build_translator, init_parameters
from .training import from_network_range, to_network_range


def load_translator(checkpoint: str | Path, direction: str = "G", expected_variant: str | None = None) -> Network:
    """Load generator ``G`` (virtual -> real) or ``F`` from a checkpoint."""
    meta = read_metadata(checkpoint)
    if expected_variant is not None and meta["variant"] != expected_variant:
        raise CheckpointError(
            f"variant mismatch: checkpoint has {meta['variant']}, configuration expects {expected_variant}"
        )
    if direction not in ("G", "F"):
        raise ValueError(f"direction must be 'G' or 'F', got {direction!r}")
    model, _, _ = load_checkpoint(checkpoint)
    return getattr(model, direction)


def translate(net: Network, images, batch_size: int = 16) -> np.ndarray:
    """Translate NHWC images in [0, 1]; returns NHWC images in [0, 1], same order."""
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[None]
    h, w, c = net.description.input_size
    if images.shape[1:] != (h, w, c):
        raise ShapeError(f"images are {images.shape[1:]}, translator expects {(h, w, c)}")
    out = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            x = to_network_range(images[start : start + batch_size]).to(next(net.parameters()).dtype)
            out.append(from_network_range(net(x)))
    return np.concatenate(out).astype(np.float32) if out else np.zeros((0, h, w, c), np.float32)


def _mad(a, b) -> float:
    return float(np.mean(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))


def temporal_smoothness(input_seq, output_seq) -> float:
    """Mean over consecutive frame pairs of MAD(out_t, out_t+1) / max(MAD(in_t, in_t+1), 1e-6).

    1.0 means the translation neither damps nor amplifies frame-to-frame change.
    """
    if len(input_seq) != len(output_seq):
        raise ShapeError(f"sequence lengths differ: {len(input_seq)} inputs, {len(output_seq)} outputs")
    if len(input_seq) < 2:
        raise ShapeError("temporal smoothness needs at least 2 frames")
    ratios = [
        _mad(output_seq[t], output_seq[t + 1]) / max(_mad(input_seq[t], input_seq[t + 1]), 1e-6)
        for t in range(len(input_seq) - 1)
    ]
    return float(np.mean(ratios))


def mean_histogram(images, bins: int = 32) -> np.ndarray:
    """Per-channel histograms over [0, 1], each normalized to sum 1, averaged over images."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    if len(images) == 0:
        raise DatasetError("histogram of an empty image set")
    hists = np.zeros((images.shape[-1], bins))
    for img in images:
        for ch in range(img.shape[-1]):
            h, _ = np.histogram(np.clip(img[..., ch], 0, 1), bins=bins, range=(0.0, 1.0))
            hists[ch] += h / h.sum()
    return hists / len(images)


def color_histogram_distance(set_a, set_b, bins: int = 32) -> float:
    """L1 distance between mean normalized channel histograms, averaged over channels.

    Range [0, 2]: 0 for identical distributions, 2 for disjoint support in every channel.
    """
    if bins < 8:
        raise ValueError(f"bins must be >= 8, got {bins}")
    if len(set_a) == 0 or len(set_b) == 0:
        raise DatasetError("color histogram distance needs two non-empty image sets")
    ha, hb = mean_histogram(set_a, bins), mean_histogram(set_b, bins)
    return float(np.abs(ha - hb).sum(axis=1).mean())


@dataclass(frozen=True)
class BenchmarkResult:
    seconds_per_image: float
    samples: tuple[float, ...]
    warmup: int
    label: str = ""


def benchmark_inference(net: Network, image, runs: int = 20, warmup: int = 3, label: str = "") -> BenchmarkResult:
    """Median wall-clock time of a single-image forward pass after ``warmup`` untimed runs."""
    if runs < 20:
        raise ValueError(f"runs must be >= 20, got {runs}")
    if warmup < 3:
        raise ValueError(f"warmup must be >= 3, got {warmup}")
    x = to_network_range(np.asarray(image, dtype=np.float32)[None]).to(next(net.parameters()).dtype)
    samples = []
    with torch.no_grad():
        for _ in range(warmup):
            net(x)
        for _ in range(runs):
            t0 = time.perf_counter()
            net(x)
            samples.append(time.perf_counter() - t0)
    return BenchmarkResult(statistics.median(samples), tuple(samples), warmup, label)


def benchmark_variants(variants, image_size: int = 256, base_channels: int = 64, runs: int = 20,
                       warmup: int = 3, seed: int = 0) -> dict[str, BenchmarkResult]:
    """Time each variant in turn on the same random image (runs are serialized)."""
    image = np.random.default_rng(seed).random((image_size, image_size, 3), dtype=np.float32)
    results = {}
    for variant in variants:
        spec = ArchitectureSpec(variant, base_channels, (image_size, image_size, 3))
        net = init_parameters(Network(build_translator(spec)), seed).eval()
        results[variant] = benchmark_inference(net, image, runs, warmup, variant)
    return results


def ordering_holds(results: dict[str, BenchmarkResult], order, tolerance: float = 0.10) -> bool:
    """True if each variant is no slower than ``1 + tolerance`` times the next one in ``order``."""
    times = [results[v].seconds_per_image for v in order]
    return all(a <= b * (1 + tolerance) for a, b in zip(times, times[1:]))


def export_grid(rows, path: str | Path, separator: int = 2, fill: float = 1.0) -> np.ndarray:
    """Tile equally sized images row-major with ``separator``-pixel gaps; writes an 8-bit PNG.

    An R x C grid of h x w tiles is ``R*h + (R-1)*separator`` by ``C*w + (C-1)*separator``.
    """
    rows = [list(r) for r in rows]
    if not rows or not rows[0]:
        raise ShapeError("grid needs at least one image")
    cols = len(rows[0])
    if any(len(r) != cols for r in rows):
        raise ShapeError(f"ragged grid: row lengths {[len(r) for r in rows]}")
    tiles = [[np.asarray(t, dtype=np.float64) for t in r] for r in rows]
    h, w = tiles[0][0].shape[:2]
    if any(t.shape != (h, w, 3) for r in tiles for t in r):
        raise ShapeError(f"all tiles must be ({h}, {w}, 3)")
    grid = np.full((len(rows) * h + (len(rows) - 1) * separator, cols * w + (cols - 1) * separator, 3), fill)
    for i, r in enumerate(tiles):
        for j, t in enumerate(r):
            y, x = i * (h + separator), j * (w + separator)
            grid[y : y + h, x : x + w] = t
    save_image(grid, path)
    return grid


@dataclass
class EvalReport:
    """Quantitative proxy metrics for translation quality."""

    variant: str
    temporal_smoothness: float | None = None
    color_histogram_distance: float | None = None
    baseline_histogram_distance: float | None = None
    seconds_per_image: float | None = None
    images: list[tuple[str, str]] = field(default_factory=list)

    def write(self, out_dir: str | Path, include_timing: bool = True) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        lines = [
            "metrics = proxy (color histogram distance, temporal smoothness ratio)",
            f"variant = {self.variant}",
        ]
        for key in ("temporal_smoothness", "color_histogram_distance", "baseline_histogram_distance"):
            value = getattr(self, key)
            if value is not None:
                lines.append(f"{key} = {value!r}")
        if include_timing and self.seconds_per_image is not None:
            lines.append(f"seconds_per_image = {self.seconds_per_image!r}")
        path = out_dir / "report.txt"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with (out_dir / "images.csv").open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("input", "output"))
            writer.writerows(self.images)
        return path
