"""Single-file checkpoints for a :class:`~endogen.nets.CycleGanModel`.

The archive is an uncompressed zip holding ``metadata.txt`` (``key = value``
lines) and one ``.npy`` array (little-endian float32) per named tensor:

* ``{G|F|D_R|D_V}/<layer_path>/<weight|bias|scale|offset>.npy``
* optional training state: ``optim/...`` Adam moments and ``pool/{R|V}.npy``
  fake-image history, needed for an exact resume.

Entries carry a fixed timestamp so identical models give identical bytes.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .losses import LossWeights
from .nets import ArchitectureSpec, CycleGanModel, Network, build_discriminator, build_translator

FORMAT = "endogen-checkpoint-1"
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def rng_state_json(rng: np.random.Generator) -> str:
    return json.dumps(rng.bit_generator.state, sort_keys=True, separators=(",", ":"))


def rng_digest(rng: np.random.Generator) -> str:
    return hashlib.sha256(rng_state_json(rng).encode()).hexdigest()[:16]


def _npy_bytes(array) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(array, dtype="<f4"), allow_pickle=False)
    return buf.getvalue()


def _read_npy(data: bytes) -> np.ndarray:
    return np.lib.format.read_array(io.BytesIO(data), allow_pickle=False)


def _tensors(model: CycleGanModel) -> dict[str, np.ndarray]:
    out = {}
    for net_name, net in model.networks().items():
        for name, p in net.params.items():
            out[f"{net_name}/{name}"] = p.detach().cpu().numpy()
    state = model.train_state
    if state is not None:
        for opt_name, opt, nets in (("gen", state.opt_G, ("G", "F")), ("disc", state.opt_D, ("D_R", "D_V"))):
            for net_name in nets:
                for name, p in model.networks()[net_name].params.items():
                    s = opt.state.get(p)
                    if s:
                        out[f"optim/{net_name}/{name}/exp_avg"] = s["exp_avg"].cpu().numpy()
                        out[f"optim/{net_name}/{name}/exp_avg_sq"] = s["exp_avg_sq"].cpu().numpy()
        for domain, pool in (("R", state.pool_R), ("V", state.pool_V)):
            if pool.images:
                out[f"pool/{domain}"] = torch.stack(pool.images).cpu().numpy()
    return out


def _adam_step(opt) -> int:
    for s in opt.state.values():
        return int(s["step"])
    return 0


def save_checkpoint(model: CycleGanModel, path: str | Path, weights: LossWeights | None = None, extra: dict | None = None) -> Path:
    weights = weights or LossWeights()
    meta = {
        "format": FORMAT,
        "variant": model.spec.variant,
        "base_channels": model.spec.base_channels,
        "input_size": " ".join(map(str, model.spec.input_size)),
        "disc_base_channels": model.disc_base_channels,
        "disc_downsamplings": model.disc_downsamplings,
        "epoch": model.epoch,
        "step": model.step,
        "lambda_cyc": repr(float(weights.lambda_cyc)),
        "epsilon_log": repr(float(weights.epsilon_log)),
        "gan_form": weights.gan_form,
        "rng_state_digest": rng_digest(model.rng),
        "rng_state": rng_state_json(model.rng),
    }
    if model.train_state is not None:
        meta["adam_step_gen"] = _adam_step(model.train_state.opt_G)
        meta["adam_step_disc"] = _adam_step(model.train_state.opt_D)
        meta["fake_buffer_size"] = model.train_state.pool_R.size
    meta.update(extra or {})
    text = "".join(f"{k} = {v}\n" for k, v in meta.items())

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with zipfile.ZipFile(tmp, "w", zipfile.ZIP_STORED) as zf:
            zf.writestr(zipfile.ZipInfo("metadata.txt", _EPOCH), text.encode("utf-8"))
            for name, array in _tensors(model).items():
                zf.writestr(zipfile.ZipInfo(f"{name}.npy", _EPOCH), _npy_bytes(array))
        tmp.replace(path)
    except OSError as exc:
        tmp.unlink(missing_ok=True)
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def read_metadata(path: str | Path) -> dict[str, str]:
    try:
        with zipfile.ZipFile(path) as zf:
            text = zf.read("metadata.txt").decode("utf-8")
    except (OSError, KeyError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    meta = {}
    for line in text.splitlines():
        key, sep, value = line.partition(" = ")
        if sep:
            meta[key] = value
    if meta.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not an {FORMAT} archive")
    return meta


def load_checkpoint(path: str | Path, dtype=torch.float32):
    """Rebuild the model described by the checkpoint; returns ``(model, weights, metadata)``.

    Every expected parameter must be present with its expected shape. Training
    state is restored when the archive carries it.
    """
    path = Path(path)
    meta = read_metadata(path)
    spec = ArchitectureSpec(
        meta["variant"], int(meta["base_channels"]), tuple(int(v) for v in meta["input_size"].split())
    )
    weights = LossWeights(float(meta["lambda_cyc"]), float(meta["epsilon_log"]), meta["gan_form"])
    gen = build_translator(spec)
    disc = build_discriminator(spec.input_size[:2], int(meta["disc_base_channels"]), int(meta["disc_downsamplings"]))
    nets = {name: Network(d, dtype) for name, d in (("G", gen), ("F", gen), ("D_R", disc), ("D_V", disc))}

    with zipfile.ZipFile(path) as zf:
        stored = {n[: -len(".npy")]: n for n in zf.namelist() if n.endswith(".npy")}
        problems = []
        for net_name, net in nets.items():
            for name, shape in net.description.parameter_shapes().items():
                key = f"{net_name}/{name}"
                if key not in stored:
                    problems.append(f"missing {key}")
                    continue
                array = _read_npy(zf.read(stored[key]))
                if tuple(array.shape) != tuple(shape):
                    problems.append(f"{key} has shape {tuple(array.shape)}, expected {tuple(shape)}")
                    continue
                with torch.no_grad():
                    net.params[name].copy_(torch.from_numpy(array))
        if problems:
            raise CheckpointError(f"{path}: " + "; ".join(problems))
        arrays = {k: _read_npy(zf.read(v)) for k, v in stored.items() if k.startswith(("optim/", "pool/"))}

    rng = np.random.default_rng()
    rng.bit_generator.state = json.loads(meta["rng_state"])
    model = CycleGanModel(
        nets["G"], nets["F"], nets["D_R"], nets["D_V"], spec,
        disc_base_channels=int(meta["disc_base_channels"]),
        disc_downsamplings=int(meta["disc_downsamplings"]),
        epoch=int(meta["epoch"]), step=int(meta["step"]), rng=rng,
    )
    if "adam_step_gen" in meta:
        from .training import restore_train_state

        restore_train_state(model, meta, arrays)
    return model, weights, meta
