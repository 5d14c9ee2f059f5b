"""``endogen`` command line: render, cleanse, train, translate, eval, bench.

Each command reads the INI run configuration, writes its artifacts and an echo
of the effective configuration into the output directory, and exits 0. Any
failure prints one line ``endogen-error command=<cmd> type=<Exception> message=<text>``
to stderr and exits 1 (2 for configuration errors).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .cleansing import DatasetError, DomainDataset, ImageRecord, apply_cleansing, read_exclusions, write_report
from .config import ConfigError, RunConfig, load_config
from .evaluation import (
    EvalReport,
    benchmark_inference,
    benchmark_variants,
    color_histogram_distance,
    export_grid,
    load_translator,
    ordering_holds,
    temporal_smoothness,
    translate,
)
from .images import MANIFEST_NAME, ManifestEntry, read_manifest, save_image, write_manifest
from .nets import CycleGanModel
from .render import Camera, FlyThroughPath, TransferFunction, export_dataset, fly_through
from .toy import axis_path, toy_dataset, toy_volume
from .training import train
from .volume import load_volume

COMMANDS = ("render", "cleanse", "train", "translate", "eval", "bench")
# the toy set is fixed data, independent of the run seed
TOY_SEED = 0


def _require(value: str, key: str) -> Path:
    if not value:
        raise ConfigError(f"{key} must be set")
    path = Path(value)
    if not path.exists():
        raise FileNotFoundError(f"{key} = {value} does not exist")
    return path


def _manifests(cfg: RunConfig) -> tuple[Path, Path]:
    d = cfg["data"]
    if d["virtual_manifest"] and d["real_manifest"]:
        return _require(d["virtual_manifest"], "data.virtual_manifest"), _require(d["real_manifest"], "data.real_manifest")
    if d["virtual_manifest"] or d["real_manifest"]:
        raise ConfigError("set both data.virtual_manifest and data.real_manifest, or neither for the toy set")
    root = Path(d["toy_root"]) if d["toy_root"] else cfg.out / "toy"
    return toy_dataset(root, d["toy_images_per_domain"], d["toy_size"], TOY_SEED)


def _datasets(cfg: RunConfig) -> tuple[DomainDataset, DomainDataset]:
    size = cfg["model"]["input_size"]
    v_path, r_path = _manifests(cfg)
    V, R = DomainDataset.from_manifest(v_path, size), DomainDataset.from_manifest(r_path, size)
    if V.domain != "virtual" or R.domain != "real":
        raise DatasetError(f"expected virtual and real manifests, got {V.domain} and {R.domain}")
    return V, R


def _volume(cfg: RunConfig):
    path = cfg["render"]["volume"]
    return load_volume(_require(path, "render.volume")) if path else toy_volume()


def _parse_keyframes(text: str):
    keyframes = []
    for chunk in text.split(";"):
        if not chunk.strip():
            continue
        pos, sep, target = chunk.partition(">")
        if not sep:
            raise ConfigError(f"render.keyframes entry {chunk.strip()!r} lacks '>'")
        try:
            p, t = tuple(map(float, pos.split(","))), tuple(map(float, target.split(",")))
        except ValueError:
            raise ConfigError(f"render.keyframes entry {chunk.strip()!r} is not numeric") from None
        if len(p) != 3 or len(t) != 3:
            raise ConfigError(f"render.keyframes entry {chunk.strip()!r} needs 3 + 3 coordinates")
        keyframes.append((p, t))
    return keyframes


def _path(cfg: RunConfig, volume, samples_per_segment: int | None = None) -> FlyThroughPath:
    r = cfg["render"]
    n = samples_per_segment or r["samples_per_segment"]
    keyframes = _parse_keyframes(r["keyframes"])
    if not keyframes:
        return axis_path(volume, n)
    return FlyThroughPath(tuple(keyframes), n, tuple(r["up_hint"]))


def _camera_kwargs(cfg: RunConfig, size: int | None = None) -> dict:
    size = size or cfg["render"]["image_size"]
    return {"vertical_fov": cfg["render"]["vertical_fov"], "image_size": (size, size)}


def cmd_render(cfg: RunConfig, out: Path) -> None:
    volume = _volume(cfg)
    path = _path(cfg, volume)
    frames = fly_through(volume, path, TransferFunction.colon_default(), cfg.render_params(), **_camera_kwargs(cfg))
    r = cfg["render"]
    positions, _ = path.samples()
    sources = [f"path_sample={i} position={','.join(f'{c:.3f}' for c in p)}" for i, p in enumerate(positions)]
    manifest = export_dataset(frames, out / "frames", sources, r["domain"], r["prefix"])
    print(f"rendered {len(frames)} frames -> {manifest}")


def cmd_cleanse(cfg: RunConfig, out: Path) -> None:
    c = cfg["cleanse"]
    manifest = _require(c["records"], "cleanse.records")
    entries = read_manifest(manifest)
    records = [ImageRecord(e.filename, str(manifest.parent / e.filename), e.domain) for e in entries]
    exclusions = read_exclusions(_require(c["exclusions"], "cleanse.exclusions")) if c["exclusions"] else {}
    rules = cfg.heuristic_rules() if c["heuristics"] else None
    result = apply_cleansing(records, exclusions, rules)
    sources = {e.filename: e.source for e in entries}
    kept = [
        ManifestEntry(os.path.relpath(r.path, out), r.domain, sources[r.id]) for r in result.kept.records
    ]
    write_manifest(kept, out / MANIFEST_NAME)
    with (out / "removed.tsv").open("w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        for r in result.removed:
            writer.writerow((r.id, ",".join(sorted(r.exclusion_labels)), ",".join(sorted(r.source_flags))))
    write_report(result.report, out / "report.txt")
    print(f"kept {result.report['kept']} of {result.report['total']} records")


def cmd_train(cfg: RunConfig, out: Path) -> None:
    V, R = _datasets(cfg)
    spec, tcfg, w = cfg.architecture(), cfg.training(), cfg.loss_weights()
    resume = None
    if cfg["train"]["resume"]:
        resume, _, _ = load_checkpoint(_require(cfg["train"]["resume"], "train.resume"))
    elif cfg["model"]["disc_downsamplings"]:
        resume = CycleGanModel.create(spec, cfg.seed, tcfg.disc_base_channels, cfg["model"]["disc_downsamplings"])
    result = train(V, R, spec, tcfg, w, out, resume=resume)
    last = result.records[-1] if result.records else None
    summary = f" last L_cyc={last.L_cyc:.4f}" if last else ""
    print(f"trained to step {result.model.step}{summary} -> {result.checkpoint}")


def _translator(cfg: RunConfig, section: str, direction: str = "G"):
    checkpoint = _require(cfg[section]["checkpoint"], f"{section}.checkpoint")
    return load_translator(checkpoint, direction, expected_variant=cfg["model"]["variant"])


def cmd_translate(cfg: RunConfig, out: Path) -> None:
    t = cfg["translate"]
    if t["direction"] not in ("G", "F"):
        raise ConfigError(f"translate.direction must be G or F, got {t['direction']!r}")
    net = _translator(cfg, "translate", t["direction"])
    size = net.description.input_size[0]
    if t["input_manifest"]:
        source = DomainDataset.from_manifest(_require(t["input_manifest"], "translate.input_manifest"), size)
    else:
        source = _datasets(cfg)[0 if t["direction"] == "G" else 1]
    images = source.get(np.arange(len(source)))
    translated = translate(net, images, t["batch_size"])
    domain = "real" if t["direction"] == "G" else "virtual"
    entries = []
    for rec, img in zip(source.records, translated):
        name = f"{Path(rec.id).stem}_{t['direction']}.png"
        save_image(img, out / "translated" / name)
        entries.append(ManifestEntry(name, domain, f"translated_from={rec.id}"))
    manifest = write_manifest(entries, out / "translated" / MANIFEST_NAME)
    print(f"translated {len(entries)} images -> {manifest}")


def cmd_eval(cfg: RunConfig, out: Path) -> None:
    e = cfg["eval"]
    net = _translator(cfg, "eval")
    size = net.description.input_size[0]
    V, R = _datasets(cfg)
    v_images, r_images = V.get(np.arange(len(V))), R.get(np.arange(len(R)))
    translated = translate(net, v_images)
    report = EvalReport(cfg["model"]["variant"])
    report.baseline_histogram_distance = color_histogram_distance(v_images, r_images, e["histogram_bins"])
    report.color_histogram_distance = color_histogram_distance(translated, r_images, e["histogram_bins"])

    volume = _volume(cfg)
    n_frames = e["sequence_frames"]
    path = _path(cfg, volume, samples_per_segment=max(1, -(-n_frames // 2)))
    frames = fly_through(volume, path, TransferFunction.colon_default(), cfg.render_params(), **_camera_kwargs(cfg, size))
    frames = np.stack(frames[:n_frames]).astype(np.float32)
    report.temporal_smoothness = temporal_smoothness(frames, translate(net, frames))

    rows = min(e["grid_rows"], len(V))
    export_grid([[v_images[i], translated[i]] for i in range(rows)], out / "grid.png")
    report.images = [(rec.id, f"grid.png#row={i}") for i, rec in enumerate(V.records[:rows])]
    if e["timing"]:
        report.seconds_per_image = benchmark_inference(net, v_images[0]).seconds_per_image
    path = report.write(out)
    print(f"histogram distance {report.baseline_histogram_distance:.4f} -> {report.color_histogram_distance:.4f}, "
          f"temporal smoothness {report.temporal_smoothness:.4f} -> {path}")


def cmd_bench(cfg: RunConfig, out: Path) -> None:
    b = cfg["bench"]
    results = benchmark_variants(b["variants"], b["image_size"], b["base_channels"], b["runs"], b["warmup"], cfg.seed)
    with (out / "bench.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("variant", "median_seconds", "runs", "warmup"))
        for variant, res in results.items():
            writer.writerow((variant, repr(res.seconds_per_image), len(res.samples), res.warmup))
    holds = ordering_holds(results, b["variants"], b["tolerance"])
    (out / "ordering.txt").write_text(
        f"order = {' <= '.join(b['variants'])}\ntolerance = {b['tolerance']!r}\nholds = {holds}\n", encoding="utf-8"
    )
    for variant, res in results.items():
        print(f"{variant}: {res.seconds_per_image * 1e3:.2f} ms/image")
    print(f"ordering {'holds' if holds else 'violated'} within {b['tolerance']:.0%}")


HANDLERS = {
    "render": cmd_render,
    "cleanse": cmd_cleanse,
    "train": cmd_train,
    "translate": cmd_translate,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="endogen", description="Virtual-to-real endoscopic image translation.")
    parser.add_argument("--config", help="INI run configuration")
    parser.add_argument("--seed", type=int, help="override run.seed")
    parser.add_argument("--out", help="override run.out")
    parser.add_argument("command", choices=COMMANDS)
    return parser


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"run": {}}
    if args.seed is not None:
        overrides["run"]["seed"] = str(args.seed)
    if args.out is not None:
        overrides["run"]["out"] = args.out
    try:
        cfg = load_config(args.config, overrides)
        out = cfg.out
        out.mkdir(parents=True, exist_ok=True)
        cfg.echo(out)
        HANDLERS[args.command](cfg, out)
    except Exception as exc:
        print(f"endogen-error command={args.command} type={type(exc).__name__} message={_one_line(exc)}",
              file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
