"""INI run configuration shared by all CLI commands.

Every key has a default in :data:`SCHEMA`; a config file only overrides what it
names. Unknown sections or keys and unparsable values are reported together.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .cleansing import HeuristicRules
from .losses import LossWeights
from .nets import ArchitectureSpec
from .render import RenderParams
from .training import TrainingConfig

ECHO_NAME = "config.ini"
VARIANT_ORDER = ("shallow_unet", "unet", "deep_unet", "residual_unet")


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none") else float(text)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p.strip())


def _names(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


# section -> key -> (default text, parser, description)
SCHEMA: dict[str, dict[str, tuple[str, object, str]]] = {
    "run": {
        "seed": ("0", int, "seed for every random draw; --seed overrides"),
        "out": ("out", str, "output directory; --out overrides"),
    },
    "data": {
        "virtual_manifest": ("", str, "manifest of domain V images; empty uses the toy set"),
        "real_manifest": ("", str, "manifest of domain R images; empty uses the toy set"),
        "toy_root": ("", str, "where the toy set is generated; empty means <out>/toy"),
        "toy_images_per_domain": ("240", int, "toy images per domain"),
        "toy_size": ("64", int, "toy image edge in pixels"),
    },
    "model": {
        "variant": ("unet", str, "shallow_unet | unet | deep_unet | residual_unet"),
        "base_channels": ("64", int, "channels of the first encoder stage"),
        "input_size": ("256", int, "square image edge; images are resized and center-cropped to it"),
        "disc_base_channels": ("64", int, "channels of the first discriminator conv"),
        "disc_downsamplings": ("0", int, "stride-2 discriminator convs; 0 picks from input_size"),
    },
    "loss": {
        "lambda_cyc": ("10.0", float, "cycle-consistency weight"),
        "epsilon_log": ("1e-7", float, "clamp for log arguments"),
        "gan_form": ("log_nonsaturating", str, "log_nonsaturating | log_saturating"),
    },
    "train": {
        "epochs": ("100", int, "training epochs"),
        "batch_size": ("20", int, "images per domain per step"),
        "learning_rate": ("2e-4", float, "Adam step size"),
        "beta1": ("0.5", float, "Adam beta1"),
        "beta2": ("0.999", float, "Adam beta2"),
        "fake_buffer_size": ("50", int, "history pool of generated images; 0 disables"),
        "checkpoint_every": ("1", int, "epochs between checkpoints"),
        "resume": ("", str, "checkpoint to continue from"),
    },
    "render": {
        "volume": ("", str, "volume header file; empty uses the toy tube phantom"),
        "keyframes": ("", str, "'x,y,z>tx,ty,tz' pairs separated by ';'; empty follows the tube axis"),
        "samples_per_segment": ("10", int, "frames per keyframe segment"),
        "image_size": ("256", int, "rendered frame edge in pixels"),
        "vertical_fov": ("70.0", float, "camera field of view in degrees"),
        "up_hint": ("0,1,0", _floats, "camera up direction hint"),
        "step_size": ("0.5", float, "ray sample spacing in mm"),
        "reference_step": ("1.0", float, "path length the transfer-function opacities refer to"),
        "termination": ("0.99", float, "early ray termination opacity"),
        "ambient": ("0.1", float, "Phong ambient weight"),
        "diffuse": ("0.7", float, "Phong diffuse weight"),
        "specular": ("0.2", float, "Phong specular weight"),
        "shininess": ("20.0", float, "Phong exponent"),
        "attenuation_distance": ("40.0", _optional_float, "headlight falloff distance in mm; none disables"),
        "domain": ("virtual", str, "manifest domain of the rendered frames"),
        "prefix": ("frame", str, "file name prefix"),
    },
    "cleanse": {
        "records": ("", str, "manifest of real images to cleanse"),
        "exclusions": ("", str, "'<id>\\t<label>' exclusion file; empty means none"),
        "heuristics": ("true", _bool, "run the color pre-screen"),
        "narrow_band_hue": ("80,170", _floats, "hue band in degrees"),
        "narrow_band_saturation": ("0.25", float, "minimum saturation"),
        "narrow_band_area": ("0.60", float, "minimum pixel fraction"),
        "tool_hue": ("200,260", _floats, "hue band in degrees"),
        "tool_saturation": ("0.5", float, "minimum saturation"),
        "tool_area": ("0.10", float, "minimum pixel fraction"),
    },
    "translate": {
        "checkpoint": ("", str, "checkpoint holding the translators"),
        "direction": ("G", str, "G (virtual to real) or F (real to virtual)"),
        "input_manifest": ("", str, "images to translate; empty uses data.virtual_manifest"),
        "batch_size": ("16", int, "images per forward pass"),
    },
    "eval": {
        "checkpoint": ("", str, "checkpoint holding the translators"),
        "sequence_frames": ("10", int, "fly-through frames for temporal smoothness"),
        "histogram_bins": ("32", int, "bins per channel"),
        "grid_rows": ("4", int, "example rows in grid.png"),
        "timing": ("true", _bool, "time single-image inference"),
    },
    "bench": {
        "variants": (",".join(VARIANT_ORDER), _names, "variants to time, in expected order"),
        "image_size": ("256", int, "square input edge"),
        "base_channels": ("64", int, "generator base channels"),
        "runs": ("20", int, "timed runs per variant"),
        "warmup": ("3", int, "untimed runs per variant"),
        "tolerance": ("0.10", float, "relative noise band for the ordering check"),
    },
}


@dataclass(frozen=True)
class RunConfig:
    values: dict[str, dict[str, object]]
    raw: dict[str, dict[str, str]]

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def out(self) -> Path:
        return Path(self.values["run"]["out"])

    def architecture(self) -> ArchitectureSpec:
        m = self.values["model"]
        size = m["input_size"]
        return ArchitectureSpec(m["variant"], m["base_channels"], (size, size, 3))

    def loss_weights(self) -> LossWeights:
        l = self.values["loss"]
        return LossWeights(l["lambda_cyc"], l["epsilon_log"], l["gan_form"])

    def training(self) -> TrainingConfig:
        t = self.values["train"]
        return TrainingConfig(
            epochs=t["epochs"], batch_size=t["batch_size"], learning_rate=t["learning_rate"],
            beta1=t["beta1"], beta2=t["beta2"], fake_buffer_size=t["fake_buffer_size"],
            checkpoint_every=t["checkpoint_every"], seed=self.seed,
            disc_base_channels=self.values["model"]["disc_base_channels"],
        )

    def render_params(self) -> RenderParams:
        r = self.values["render"]
        keys = ("step_size", "reference_step", "termination", "ambient", "diffuse", "specular",
                "shininess", "attenuation_distance")
        return RenderParams(**{k: r[k] for k in keys})

    def heuristic_rules(self) -> HeuristicRules:
        c = self.values["cleanse"]
        return HeuristicRules(
            narrow_band_hue=tuple(c["narrow_band_hue"]), narrow_band_saturation=c["narrow_band_saturation"],
            narrow_band_area=c["narrow_band_area"], tool_hue=tuple(c["tool_hue"]),
            tool_saturation=c["tool_saturation"], tool_area=c["tool_area"],
        )

    def to_ini(self) -> str:
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for key, (_, _, doc) in keys.items():
                lines.append(f"# {doc}")
                lines.append(f"{key} = {self.raw[section][key]}")
            lines.append("")
        return "\n".join(lines)

    def echo(self, out_dir: str | Path) -> Path:
        """Write the effective configuration next to a command's outputs."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / ECHO_NAME
        path.write_text(self.to_ini(), encoding="utf-8")
        return path


def _parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str
    return parser


def load_config(path: str | Path | None = None, overrides: dict[str, dict[str, str]] | None = None) -> RunConfig:
    """Merge SCHEMA defaults, the INI file at ``path`` and ``overrides`` (highest priority)."""
    raw = {section: {k: spec[0] for k, spec in keys.items()} for section, keys in SCHEMA.items()}
    problems = []
    sources = []
    if path is not None:
        path = Path(path)
        parser = _parser()
        try:
            with path.open(encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {' '.join(str(exc).split())}") from exc
        sources.append({s: dict(parser[s]) for s in parser.sections()})
    if overrides:
        sources.append(overrides)
    for source in sources:
        for section, keys in source.items():
            if section not in SCHEMA:
                problems.append(f"unknown section [{section}]")
                continue
            for key, value in keys.items():
                if key not in SCHEMA[section]:
                    problems.append(f"unknown key {section}.{key}")
                else:
                    raw[section][key] = str(value).strip()

    values: dict[str, dict[str, object]] = {}
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (_, parse, _) in keys.items():
            try:
                values[section][key] = parse(raw[section][key])
            except ValueError:
                problems.append(f"bad value {section}.{key}={raw[section][key]!r}")
    if problems:
        raise ConfigError("invalid config: " + "; ".join(problems))
    cfg = RunConfig(values, raw)
    try:
        cfg.architecture(), cfg.loss_weights(), cfg.training(), cfg.render_params(), cfg.heuristic_rules()
    except ValueError as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    return cfg
