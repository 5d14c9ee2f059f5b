"""Declarative U-Net-family translators and patch discriminators.

A network is first described as an ordered layer graph (:class:`NetworkDescription`)
and then executed by :class:`Network`, a small torch interpreter over that graph.
Parameters are named ``<layer_path>/<weight|bias|scale|offset>``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

VARIANTS = ("shallow_unet", "unet", "deep_unet", "residual_unet")
DEPTH = {"shallow_unet": 3, "unet": 4, "deep_unet": 5, "residual_unet": 4}
NODE_KINDS = (
    "conv",
    "transposed_conv",
    "instance_norm",
    "relu",
    "leaky_relu",
    "tanh",
    "sigmoid",
    "skip_concat",
    "residual_add",
    "downsample",
    "upsample",
)
NORM_EPS = 1e-5
INIT_STD = 0.02


class SpecError(ValueError):
    pass


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ArchitectureSpec:
    variant: str = "unet"
    base_channels: int = 64
    input_size: tuple[int, int, int] = (256, 256, 3)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise SpecError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.base_channels < 1:
            raise SpecError(f"base_channels must be positive, got {self.base_channels}")
        h, w, c = self.input_size
        if c != 3:
            raise SpecError(f"translators take 3-channel images, got {c} channels")
        step = 2**self.depth
        if h % step or w % step or h < step or w < step:
            raise SpecError(f"{self.variant} needs H and W divisible by {step}, got {h}x{w}")

    @property
    def depth(self) -> int:
        return DEPTH[self.variant]


@dataclass(frozen=True)
class Node:
    name: str
    kind: str
    inputs: tuple[str, ...]
    in_channels: int
    out_channels: int
    out_size: tuple[int, int]
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    bias: bool = False
    negative_slope: float = 0.0

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        k = self.kernel
        if self.kind == "conv":
            shapes = {"weight": (self.out_channels, self.in_channels, k, k)}
        elif self.kind == "transposed_conv":
            shapes = {"weight": (self.in_channels, self.out_channels, k, k)}
        elif self.kind == "instance_norm":
            return {"scale": (self.out_channels,), "offset": (self.out_channels,)}
        else:
            return {}
        if self.bias:
            shapes["bias"] = (self.out_channels,)
        return shapes


@dataclass(frozen=True)
class NetworkDescription:
    role: str  # "generator" or "discriminator"
    label: str
    input_size: tuple[int, int, int]
    nodes: tuple[Node, ...]

    @property
    def output_node(self) -> Node:
        return self.nodes[-1]

    @property
    def output_shape(self) -> tuple[int, int, int]:
        n = self.output_node
        return (*n.out_size, n.out_channels)

    def parameter_shapes(self) -> dict[str, tuple[int, ...]]:
        return {f"{n.name}/{p}": s for n in self.nodes for p, s in n.param_shapes().items()}

    @property
    def parameter_count(self) -> int:
        return sum(int(np.prod(s)) for s in self.parameter_shapes().values())

    def count(self, kind: str) -> int:
        return sum(n.kind == kind for n in self.nodes)

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)


class _GraphBuilder:
    def __init__(self, input_size):
        h, w, c = input_size
        self.shapes = {"input": (c, (h, w))}
        self.nodes: list[Node] = []

    def add(self, kind, name, inputs, out_channels=None, kernel=0, stride=1, padding=0, bias=False, slope=0.0):
        if isinstance(inputs, str):
            inputs = (inputs,)
        cin, (h, w) = self.shapes[inputs[0]]
        if kind == "conv":
            h, w = (h + 2 * padding - kernel) // stride + 1, (w + 2 * padding - kernel) // stride + 1
        elif kind == "transposed_conv":
            h, w = (h - 1) * stride - 2 * padding + kernel, (w - 1) * stride - 2 * padding + kernel
        elif kind == "downsample":
            h, w = h // 2, w // 2
        elif kind == "upsample":
            h, w = h * 2, w * 2
        elif kind == "skip_concat":
            sizes = {self.shapes[i][1] for i in inputs}
            if len(sizes) != 1:
                raise SpecError(f"{name}: skip_concat of mismatched spatial sizes {sizes}")
            out_channels = sum(self.shapes[i][0] for i in inputs)
        elif kind == "residual_add":
            if len({self.shapes[i] for i in inputs}) != 1:
                raise SpecError(f"{name}: residual_add of mismatched shapes")
        if h < 1 or w < 1:
            raise SpecError(f"{name}: spatial size collapsed to {h}x{w}")
        cout = cin if out_channels is None else out_channels
        node = Node(name, kind, tuple(inputs), cin, cout, (h, w), kernel, stride, padding, bias, slope)
        self.nodes.append(node)
        self.shapes[name] = (cout, (h, w))
        return name

    def conv_norm_relu(self, prefix, x, cout, kernel=3, stride=1, padding=1, transposed=False, suffix=""):
        kind = "transposed_conv" if transposed else "conv"
        conv = "tconv" if transposed else "conv"
        x = self.add(kind, f"{prefix}/{conv}{suffix}", x, cout, kernel, stride, padding)
        x = self.add("instance_norm", f"{prefix}/norm{suffix}", x)
        return self.add("relu", f"{prefix}/relu{suffix}", x)

    def residual_unit(self, prefix, x, cout):
        """conv-norm-relu-conv-norm, add shortcut, relu; 1x1 projection when channels change."""
        cin = self.shapes[x][0]
        y = self.conv_norm_relu(prefix, x, cout, suffix="1")
        y = self.add("conv", f"{prefix}/conv2", y, cout, 3, 1, 1)
        y = self.add("instance_norm", f"{prefix}/norm2", y)
        shortcut = x if cin == cout else self.add("conv", f"{prefix}/proj", x, cout, 1, 1, 0, bias=True)
        y = self.add("residual_add", f"{prefix}/add", (y, shortcut))
        return self.add("relu", f"{prefix}/relu", y)


def _channels(spec: ArchitectureSpec, level: int) -> int:
    return min(spec.base_channels * 2**level, 8 * spec.base_channels)


def build_translator(spec: ArchitectureSpec) -> NetworkDescription:
    """Encoder/decoder with one skip connection per resolution stage.

    Encoder stage k: conv block at channels min(base * 2**k, 8 * base), then a
    stride-2 4x4 conv into stage k+1. The decoder mirrors it with stride-2 4x4
    transposed convs, concatenating the matching encoder output before each block.
    Variants differ only in depth and in the block type (plain conv or residual unit).
    """
    b = _GraphBuilder(spec.input_size)
    residual = spec.variant == "residual_unet"

    def block(prefix, x, cout):
        return b.residual_unit(prefix, x, cout) if residual else b.conv_norm_relu(prefix, x, cout)

    x, skips = "input", []
    for k in range(spec.depth):
        x = block(f"enc{k}", x, _channels(spec, k))
        skips.append(x)
        x = b.conv_norm_relu(f"down{k}", x, _channels(spec, k + 1), kernel=4, stride=2, padding=1)
    x = b.conv_norm_relu("bottleneck", x, _channels(spec, spec.depth))
    for k in reversed(range(spec.depth)):
        x = b.conv_norm_relu(f"up{k}", x, _channels(spec, k), kernel=4, stride=2, padding=1, transposed=True)
        x = b.add("skip_concat", f"skip{k}", (x, skips[k]))
        x = block(f"dec{k}", x, _channels(spec, k))
    x = b.add("conv", "final/conv", x, 3, 3, 1, 1, bias=True)
    b.add("tanh", "final/tanh", x)
    desc = NetworkDescription("generator", spec.variant, tuple(spec.input_size), tuple(b.nodes))
    if desc.output_shape != tuple(spec.input_size):
        raise SpecError(f"generator output {desc.output_shape} != input {spec.input_size}")
    return desc


def discriminator_downsamplings(image_size: int) -> int:
    """Default number of stride-2 stages: 4, or fewer for images smaller than 64."""
    return max(1, min(4, int(np.log2(image_size)) - 2))


def build_discriminator(image_size, base_channels: int = 64, n_downsample: int = 4) -> NetworkDescription:
    """Patch discriminator: ``n_downsample`` stride-2 4x4 convs with leaky ReLU(0.2),
    instance norm after all but the first, then a stride-1 4x4 conv to one channel and
    a sigmoid. Needs at least ``2 ** (n_downsample + 2)`` pixels per side (64 by default).
    """
    h, w = (image_size, image_size) if isinstance(image_size, int) else tuple(image_size[:2])
    need = 2 ** (n_downsample + 2)
    if n_downsample < 1 or min(h, w) < need:
        raise SpecError(f"discriminator with {n_downsample} downsamplings needs images >= {need}, got {h}x{w}")
    b = _GraphBuilder((h, w, 3))
    x = b.add("conv", "layer0/conv", "input", base_channels, 4, 2, 1, bias=True)
    x = b.add("leaky_relu", "layer0/act", x, slope=0.2)
    for i in range(1, n_downsample):
        c = min(base_channels * 2**i, 8 * base_channels)
        x = b.add("conv", f"layer{i}/conv", x, c, 4, 2, 1)
        x = b.add("instance_norm", f"layer{i}/norm", x)
        x = b.add("leaky_relu", f"layer{i}/act", x, slope=0.2)
    x = b.add("conv", "head/conv", x, 1, 4, 1, 1, bias=True)
    b.add("sigmoid", "head/sigmoid", x)
    return NetworkDescription("discriminator", "patch", (h, w, 3), tuple(b.nodes))


# --- execution -----------------------------------------------------------------


def instance_norm(x: torch.Tensor, scale: torch.Tensor, offset: torch.Tensor, eps: float = NORM_EPS) -> torch.Tensor:
    """Per-image, per-channel standardization over H and W, then scale and offset.

    A 1x1 map normalizes to 0, so the output is just ``offset``.
    """
    mean = x.mean(dim=(2, 3), keepdim=True)
    var = (x - mean).pow(2).mean(dim=(2, 3), keepdim=True)
    return (x - mean) / torch.sqrt(var + eps) * scale[None, :, None, None] + offset[None, :, None, None]


class Network(nn.Module):
    """Executes a :class:`NetworkDescription` on NCHW tensors."""

    def __init__(self, description: NetworkDescription, dtype=torch.float32):
        super().__init__()
        self.description = description
        self.params = nn.ParameterDict(
            {n: nn.Parameter(torch.zeros(s, dtype=dtype)) for n, s in description.parameter_shapes().items()}
        )

    def named_arrays(self) -> dict[str, torch.Tensor]:
        return dict(self.params.items())

    def check_input(self, x: torch.Tensor):
        h, w, c = self.description.input_size
        if x.ndim != 4:
            raise ShapeError(f"expected a 4D batch (N, C, H, W), got {x.ndim}D")
        for dim, got, want in (("channels", x.shape[1], c), ("height", x.shape[2], h), ("width", x.shape[3], w)):
            if got != want:
                raise ShapeError(f"{dim}: expected {want}, got {got}")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        p = self.params
        env = {"input": x}
        for n in self.description.nodes:
            a = env[n.inputs[0]]
            if n.kind == "conv":
                y = F.conv2d(a, p[f"{n.name}/weight"], p.get(f"{n.name}/bias"), n.stride, n.padding)
            elif n.kind == "transposed_conv":
                y = F.conv_transpose2d(a, p[f"{n.name}/weight"], p.get(f"{n.name}/bias"), n.stride, n.padding)
            elif n.kind == "instance_norm":
                y = instance_norm(a, p[f"{n.name}/scale"], p[f"{n.name}/offset"])
            elif n.kind == "relu":
                y = F.relu(a)
            elif n.kind == "leaky_relu":
                y = F.leaky_relu(a, n.negative_slope)
            elif n.kind == "tanh":
                y = torch.tanh(a)
            elif n.kind == "sigmoid":
                y = torch.sigmoid(a)
            elif n.kind == "skip_concat":
                y = torch.cat([env[i] for i in n.inputs], dim=1)
            elif n.kind == "residual_add":
                y = env[n.inputs[0]] + env[n.inputs[1]]
            elif n.kind == "downsample":
                y = F.avg_pool2d(a, 2)
            elif n.kind == "upsample":
                y = F.interpolate(a, scale_factor=2, mode="nearest")
            else:
                raise SpecError(f"unknown node kind {n.kind!r}")
            env[n.name] = y
        return env[self.description.output_node.name]


def init_parameters(net: Network, seed: int) -> Network:
    """Conv weights ~ N(0, 0.02), biases 0, norm scale 1 and offset 0. Deterministic in ``seed``."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, param in net.params.items():
            kind = name.rsplit("/", 1)[1]
            if kind == "weight":
                w = torch.randn(param.shape, generator=gen, dtype=torch.float64) * INIT_STD
                param.copy_(w.to(param.dtype))
            elif kind == "scale":
                param.fill_(1.0)
            else:
                param.zero_()
    return net


def forward(net: Network, batch) -> np.ndarray:
    """Run ``net`` on an NHWC batch (numpy or tensor) and return an NHWC numpy array."""
    x = torch.as_tensor(np.asarray(batch), dtype=next(net.parameters()).dtype)
    if x.ndim == 3:
        raise ShapeError("expected a batch (N, H, W, C), got a single image")
    h, w, c = net.description.input_size
    if x.ndim != 4:
        raise ShapeError(f"expected a 4D batch (N, H, W, C), got {x.ndim}D")
    for dim, got, want in (("height", x.shape[1], h), ("width", x.shape[2], w), ("channels", x.shape[3], c)):
        if got != want:
            raise ShapeError(f"{dim}: expected {want}, got {got}")
    with torch.no_grad():
        y = net(x.permute(0, 3, 1, 2))
    return y.permute(0, 2, 3, 1).cpu().numpy()


@dataclass
class CycleGanModel:
    """Generators G (virtual -> real) and F (real -> virtual) with their discriminators.

    D_R judges real-domain images, D_V virtual-domain ones.
    """

    G: Network
    F: Network
    D_R: Network
    D_V: Network
    spec: ArchitectureSpec
    disc_base_channels: int = 64
    disc_downsamplings: int = 4
    epoch: int = 0
    step: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    # optimizer moments and fake-image history, owned by the training loop
    train_state: object = None

    @classmethod
    def create(cls, spec: ArchitectureSpec, seed: int = 0, disc_base_channels: int = 64,
               n_downsample: int | None = None, dtype=torch.float32) -> "CycleGanModel":
        size = spec.input_size[0]
        n_down = discriminator_downsamplings(size) if n_downsample is None else n_downsample
        gen = build_translator(spec)
        disc = build_discriminator(spec.input_size[:2], disc_base_channels, n_down)
        # distinct seeds keep the four parameter sets disjoint draws
        nets = [init_parameters(Network(d, dtype), seed * 4 + i) for i, d in enumerate((gen, gen, disc, disc))]
        return cls(*nets, spec=spec, disc_base_channels=disc_base_channels, disc_downsamplings=n_down,
                   rng=np.random.default_rng(seed))

    def networks(self) -> dict[str, Network]:
        return {"G": self.G, "F": self.F, "D_R": self.D_R, "D_V": self.D_V}
