"""Unpaired image sets, the exclusion ("cleansing") step and batch sampling."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, NamedTuple

import numpy as np
from matplotlib.colors import rgb_to_hsv

from .images import DOMAINS, load_image, read_manifest

EXCLUSION_LABELS = (
    "endoscope_part",
    "surgical_tool",
    "feces",
    "fluid",
    "narrow_band",
    "magnification",
    "none",
)
NONE = frozenset({"none"})


class CleansingError(ValueError):
    pass


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class ImageRecord:
    id: str
    path: str
    domain: str
    exclusion_labels: frozenset = NONE
    source_flags: frozenset = frozenset()

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}, got {self.domain!r}")
        labels = frozenset(self.exclusion_labels) or NONE
        unknown = labels - set(EXCLUSION_LABELS)
        if unknown:
            raise ValueError(f"unknown exclusion labels {sorted(unknown)}")
        if "none" in labels and len(labels) > 1:
            labels = labels - NONE
        object.__setattr__(self, "exclusion_labels", labels)
        object.__setattr__(self, "source_flags", frozenset(self.source_flags))

    @property
    def excluded(self) -> bool:
        return self.exclusion_labels != NONE


@dataclass(frozen=True)
class DomainDataset:
    """Cleansed images of one domain. ``count`` is I (virtual) or J (real).

    Pixels come from ``arrays`` when preloaded, else from ``loader(record)``,
    else from the record's file (resized to ``image_size`` when set).
    """

    domain: str
    records: tuple[ImageRecord, ...]
    image_size: int | None = None
    loader: Callable[[ImageRecord], np.ndarray] | None = field(default=None, compare=False)
    arrays: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        for r in self.records:
            if r.domain != self.domain:
                raise DatasetError(f"record {r.id} has domain {r.domain}, dataset is {self.domain}")
            if r.excluded:
                raise DatasetError(f"record {r.id} carries exclusion labels {sorted(r.exclusion_labels)}")

    @property
    def count(self) -> int:
        return len(self.records)

    def __len__(self) -> int:
        return len(self.records)

    @classmethod
    def from_manifest(cls, path: str | Path, image_size: int | None = None) -> "DomainDataset":
        path = Path(path)
        entries = read_manifest(path)
        domains = {e.domain for e in entries}
        if len(domains) > 1:
            raise DatasetError(f"{path}: mixed domains {sorted(domains)}")
        records = [ImageRecord(e.filename, str(path.parent / e.filename), e.domain) for e in entries]
        return cls(domains.pop() if domains else "virtual", records, image_size)

    def load(self, record: ImageRecord) -> np.ndarray:
        if self.loader is not None:
            return np.asarray(self.loader(record), dtype=np.float32)
        return load_image(record.path, self.image_size)

    def get(self, indices) -> np.ndarray:
        """Images at ``indices`` as an (N, H, W, 3) float32 array in [0, 1]."""
        indices = np.asarray(indices, dtype=np.intp)
        if self.arrays is not None:
            return self.arrays[indices]
        return np.stack([self.load(self.records[i]) for i in indices])

    def preload(self) -> "DomainDataset":
        if self.arrays is not None or not self.records:
            return self
        return replace(self, arrays=self.get(np.arange(len(self))))


# --- heuristics -----------------------------------------------------------------


@dataclass(frozen=True)
class HeuristicRules:
    """Color pre-screening thresholds. Hues in degrees, areas as pixel fractions."""

    narrow_band: bool = True
    narrow_band_hue: tuple[float, float] = (80.0, 170.0)
    narrow_band_saturation: float = 0.25
    narrow_band_area: float = 0.60
    surgical_tool: bool = True
    tool_hue: tuple[float, float] = (200.0, 260.0)
    tool_saturation: float = 0.5
    tool_area: float = 0.10


def _area(hue, sat, hue_range, min_sat) -> float:
    lo, hi = hue_range
    return float(np.mean((hue >= lo) & (hue <= hi) & (sat >= min_sat)))


def heuristic_flag(image: np.ndarray, rules: HeuristicRules = HeuristicRules()) -> frozenset:
    """Advisory color screening for narrow-band frames and blue surgical tools."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {image.shape}")
    hsv = rgb_to_hsv(np.clip(image, 0.0, 1.0))
    hue, sat = hsv[..., 0] * 360.0, hsv[..., 1]
    labels = set()
    if rules.narrow_band and _area(hue, sat, rules.narrow_band_hue, rules.narrow_band_saturation) >= rules.narrow_band_area:
        labels.add("narrow_band")
    if rules.surgical_tool and _area(hue, sat, rules.tool_hue, rules.tool_saturation) >= rules.tool_area:
        labels.add("surgical_tool")
    return frozenset(labels) or NONE


# --- cleansing ------------------------------------------------------------------


class CleansingResult(NamedTuple):
    kept: DomainDataset
    removed: list[ImageRecord]
    report: dict[str, int]


def read_exclusions(path: str | Path) -> dict[str, set[str]]:
    """Parse ``<id>\\t<label>`` lines; an id may appear on several lines."""
    path = Path(path)
    out: dict[str, set[str]] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise CleansingError(f"{path}:{lineno}: expected '<id>\\t<label>'")
        rid, label = parts[0], parts[1].strip()
        if label not in EXCLUSION_LABELS:
            raise CleansingError(f"{path}:{lineno}: unknown label {label!r}")
        out.setdefault(rid, set()).add(label)
    return out


def write_report(report: Mapping[str, int], path: str | Path) -> Path:
    path = Path(path)
    path.write_text("".join(f"{k} = {v}\n" for k, v in report.items()), encoding="utf-8")
    return path


def apply_cleansing(
    records: Iterable[ImageRecord],
    manifest_exclusions: Mapping[str, Iterable[str]] | None = None,
    heuristic_rules: HeuristicRules | None = None,
    image_loader: Callable[[ImageRecord], np.ndarray] | None = None,
    image_size: int | None = None,
) -> CleansingResult:
    """Split records into kept and removed.

    A record is removed when it carries any exclusion label from the manifest or
    (if ``heuristic_rules`` is given) from :func:`heuristic_flag`. Manifest labels
    are ground truth; heuristics can only add labels, never clear them.
    """
    records = list(records)
    manifest_exclusions = manifest_exclusions or {}
    ids = {r.id for r in records}
    unknown = sorted(set(manifest_exclusions) - ids)
    if unknown:
        shown = ", ".join(unknown[:20]) + (f" (+{len(unknown) - 20} more)" if len(unknown) > 20 else "")
        raise CleansingError(f"exclusion manifest names {len(unknown)} unknown record ids: {shown}")
    domains = {r.domain for r in records}
    if len(domains) > 1:
        raise CleansingError(f"records span several domains: {sorted(domains)}")
    domain = domains.pop() if domains else "real"
    load = image_loader or (lambda rec: load_image(rec.path, image_size))

    kept, removed = [], []
    counts: Counter = Counter()
    for rec in records:
        labels = set(rec.exclusion_labels) - NONE
        flags = set(rec.source_flags)
        if rec.id in manifest_exclusions:
            manual = set(manifest_exclusions[rec.id]) - NONE
            if manual:
                labels |= manual
                flags.add("manifest")
        if heuristic_rules is not None:
            found = heuristic_flag(load(rec), heuristic_rules) - NONE
            if found:
                labels |= found
                flags.add("heuristic")
        rec = replace(rec, exclusion_labels=frozenset(labels) or NONE, source_flags=frozenset(flags))
        if rec.excluded:
            removed.append(rec)
            counts.update(rec.exclusion_labels)
        else:
            kept.append(rec)

    report = {"total": len(records), "kept": len(kept), "removed": len(removed)}
    report.update({label: counts[label] for label in EXCLUSION_LABELS if label != "none"})
    dataset = DomainDataset(domain, kept, image_size, loader=image_loader)
    return CleansingResult(dataset, removed, report)


# --- unpaired sampling ----------------------------------------------------------


def draw_indices(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` indices from fresh permutations of range(n), wrapping around as needed."""
    if n < 1:
        raise DatasetError("cannot sample from an empty dataset")
    perms = [rng.permutation(n) for _ in range(max(1, math.ceil(count / n)))]
    return np.concatenate(perms)[:count]


class UnpairedSampler:
    """Independent shuffles of the two domains; nothing ties v[i] to r[i].

    Each epoch covers ``ceil(max(I, J) / batch_size)`` steps. At the start of an
    epoch both domains get fresh permutations, and the smaller domain wraps
    around to new permutations until it fills the epoch.
    """

    def __init__(self, V: DomainDataset, R: DomainDataset, batch_size: int, rng: np.random.Generator):
        if len(V) == 0 or len(R) == 0:
            raise DatasetError(f"both domains need images (virtual: {len(V)}, real: {len(R)})")
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        self.V, self.R, self.batch_size, self.rng = V, R, batch_size, rng

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(max(len(self.V), len(self.R)) / self.batch_size)

    def epoch_ids(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        b, total = self.batch_size, self.steps_per_epoch * self.batch_size
        v_seq = draw_indices(len(self.V), total, self.rng)
        r_seq = draw_indices(len(self.R), total, self.rng)
        for s in range(self.steps_per_epoch):
            yield v_seq[s * b : (s + 1) * b], r_seq[s * b : (s + 1) * b]

    def epoch(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        for v_ids, r_ids in self.epoch_ids():
            yield self.V.get(v_ids), self.R.get(r_ids)


def sample_unpaired_batch(V: DomainDataset, R: DomainDataset, batch_size: int, rng: np.random.Generator):
    """One (v_batch, r_batch) pair of (batch_size, H, W, 3) arrays."""
    if len(V) == 0 or len(R) == 0:
        raise DatasetError(f"both domains need images (virtual: {len(V)}, real: {len(R)})")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    return V.get(draw_indices(len(V), batch_size, rng)), R.get(draw_indices(len(R), batch_size, rng))
