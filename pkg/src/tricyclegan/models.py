"""Generators, patch discriminators, the model bundle and its checkpoint format.

Generators are pix2pix-style U-Nets: strided 4x4 convolutions down, 4x4
transposed convolutions up, skip connections by concatenation, instance
normalization and decoder dropout (the stochastic input of the GAN). Every
generator output lies in [0, 1]: ``sigmoid`` heads are used directly and
``tanh`` heads are mapped through ``(t + 1) / 2``.

Checkpoint archive (``torch.save`` of a plain dict)::

    format          "tricyclegan-bundle"
    version         1
    epoch           int
    config_hash     str or None
    extras          dict (e.g. intensity normalization statistics)
    networks        {role: {"kind", "spec", "state", "frozen"}}
    optimizers      {role: optimizer state_dict}

Roles are ``s2e``, ``pf``, ``e2m``, ``m2s``, ``d_s2e`` and ``d_e2m``.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError, ParameterError

GENERATOR_ROLES = ("s2e", "pf", "e2m", "m2s")
DISCRIMINATOR_ROLES = ("d_s2e", "d_e2m")
ACTIVATIONS = ("tanh", "sigmoid")
CHECKPOINT_FORMAT = "tricyclegan-bundle"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    in_channels: int
    out_channels: int
    image_size: int = 64
    base_width: int = 32
    depth: int = 4
    output_activation: str = "sigmoid"
    dropout: float = 0.5

    def validate(self, min_bottleneck=2):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigurationError("channel counts must be positive")
        if self.depth < 2:
            raise ConfigurationError(f"depth must be >= 2, got {self.depth}")
        if self.base_width < 8:
            raise ConfigurationError(f"base_width must be >= 8, got {self.base_width}")
        size = self.image_size
        if size < 32 or size & (size - 1):
            raise ConfigurationError(f"image_size must be a power of two >= 32, got {size}")
        if size % (2**self.depth) or size // 2**self.depth < min_bottleneck:
            raise ConfigurationError(
                f"image_size {size} is too small for depth {self.depth}"
            )
        if self.output_activation not in ACTIVATIONS:
            raise ConfigurationError(
                f"output_activation must be one of {ACTIVATIONS}, got {self.output_activation!r}"
            )
        return self

    def widths(self):
        return [self.base_width * min(2**i, 8) for i in range(self.depth)]


class UNetGenerator(nn.Module):
    def __init__(self, spec: NetworkSpec, role: str):
        super().__init__()
        if role not in GENERATOR_ROLES:
            raise ConfigurationError(f"unknown generator role {role!r}")
        spec.validate()
        self.spec = spec
        self.role = role
        self.frozen = False
        w = spec.widths()
        d = spec.depth

        self.down = nn.ModuleList()
        for i in range(d):
            c_in = spec.in_channels if i == 0 else w[i - 1]
            layers = [nn.Conv2d(c_in, w[i], 4, stride=2, padding=1)]
            if i > 0:
                layers.append(nn.InstanceNorm2d(w[i], affine=True))
            layers.append(nn.LeakyReLU(0.2))
            self.down.append(nn.Sequential(*layers))

        dropout_levels = min(3, d - 2)
        self.up = nn.ModuleList()
        for i in range(d - 1, 0, -1):
            c_in = w[i] if i == d - 1 else 2 * w[i]
            layers = [
                nn.ConvTranspose2d(c_in, w[i - 1], 4, stride=2, padding=1),
                nn.InstanceNorm2d(w[i - 1], affine=True),
                nn.ReLU(),
            ]
            if d - 1 - i < dropout_levels and spec.dropout > 0:
                layers.append(nn.Dropout(spec.dropout))
            self.up.append(nn.Sequential(*layers))
        self.head = nn.ConvTranspose2d(2 * w[0], spec.out_channels, 4, stride=2, padding=1)

    def forward(self, x):
        skips = []
        for block in self.down:
            x = block(x)
            skips.append(x)
        x = skips.pop()
        for block in self.up:
            x = torch.cat([block(x), skips.pop()], dim=1)
        x = self.head(x)
        if self.spec.output_activation == "tanh":
            return (torch.tanh(x) + 1.0) / 2.0
        return torch.sigmoid(x)


class PatchDiscriminator(nn.Module):
    """Conditional patch discriminator scoring ``cat(source, candidate)``.

    ``depth`` stride-2 convolutions are followed by two stride-1 ones (all
    4x4, padding 1), so an ``L x L`` input yields a ``(L/2^depth - 2)``-sided
    grid of raw scores.
    """

    def __init__(self, spec: NetworkSpec, role: str):
        super().__init__()
        if role not in DISCRIMINATOR_ROLES:
            raise ConfigurationError(f"unknown discriminator role {role!r}")
        spec.validate(min_bottleneck=4)
        self.spec = spec
        self.role = role
        self.frozen = False
        w = spec.widths()
        layers = [nn.Conv2d(spec.in_channels, w[0], 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
        for i in range(1, spec.depth):
            layers += [
                nn.Conv2d(w[i - 1], w[i], 4, stride=2, padding=1),
                nn.InstanceNorm2d(w[i], affine=True),
                nn.LeakyReLU(0.2),
            ]
        top = spec.base_width * min(2**spec.depth, 8)
        layers += [
            nn.Conv2d(w[-1], top, 4, stride=1, padding=1),
            nn.InstanceNorm2d(top, affine=True),
            nn.LeakyReLU(0.2),
            nn.Conv2d(top, 1, 4, stride=1, padding=1),
        ]
        self.model = nn.Sequential(*layers)

    def forward(self, source, candidate):
        x = torch.cat([source, candidate], dim=1)
        if x.shape[1] != self.spec.in_channels:
            raise ParameterError(
                f"{self.role} expects {self.spec.in_channels} stacked channels, got {x.shape[1]}"
            )
        return self.model(x)


def patch_grid_size(image_size: int, depth: int) -> int:
    return image_size // 2**depth - 2


def patch_receptive_field(depth: int) -> int:
    # walk back from one output score: k=4 everywhere, strides 2^depth then 1, 1
    rf = 1
    for stride in [1, 1] + [2] * depth:
        rf = (rf - 1) * stride + 4
    return rf


def build_generator(spec: NetworkSpec, role: str) -> UNetGenerator:
    return UNetGenerator(spec, role)


def build_discriminator(spec: NetworkSpec, role: str) -> PatchDiscriminator:
    return PatchDiscriminator(spec, role)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def parameter_checksum(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in module.state_dict().items():
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def set_frozen(gen: nn.Module, frozen: bool = True) -> None:
    """Freeze or release a network. Frozen networks stay in eval mode."""
    gen.frozen = bool(frozen)
    gen.requires_grad_(not frozen)
    if frozen:
        gen.eval()


def _to_batch(x):
    if isinstance(x, torch.Tensor):
        return x, None
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim == 2:
        return torch.from_numpy(arr)[None, None], "hw"
    if arr.ndim == 3:
        return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))[None], "hwc"
    raise ParameterError(f"expected HxW or HxWxC array, got shape {arr.shape}")


def _from_batch(t, layout):
    if layout is None:
        return t
    arr = t[0].numpy()
    # single-channel outputs come back as H x W whatever the input layout
    return arr[0] if arr.shape[0] == 1 else arr.transpose(1, 2, 0)


def translate(gen: UNetGenerator, image):
    """Deterministic eval-mode forward pass.

    Accepts an ``N x C x H x W`` tensor (returned as a tensor) or a single
    ``H x W`` / ``H x W x C`` array (returned in the same layout).
    """
    batch, layout = _to_batch(image)
    if batch.dim() != 4 or batch.shape[1] != gen.spec.in_channels:
        raise ParameterError(
            f"{gen.role} expects {gen.spec.in_channels} input channels, got shape {tuple(batch.shape)}"
        )
    was_training = gen.training
    gen.eval()
    try:
        with torch.no_grad():
            out = gen(batch.to(next(gen.parameters()).dtype))
    finally:
        gen.train(was_training and not gen.frozen)
    return _from_batch(out, layout)


@dataclass
class ModelBundle:
    g_s2e: UNetGenerator
    g_pf: UNetGenerator
    g_e2m: UNetGenerator
    g_m2s: UNetGenerator
    d_s2e: PatchDiscriminator
    d_e2m: PatchDiscriminator
    optimizers: dict = field(default_factory=dict)
    epoch: int = 0
    config_hash: str | None = None
    extras: dict = field(default_factory=dict)

    def networks(self):
        return {
            "s2e": self.g_s2e,
            "pf": self.g_pf,
            "e2m": self.g_e2m,
            "m2s": self.g_m2s,
            "d_s2e": self.d_s2e,
            "d_e2m": self.d_e2m,
        }

    @property
    def domain_channels(self):
        return self.g_e2m.spec.out_channels

    def make_optimizers(self, lr=2e-4, betas=(0.9, 0.999)):
        self.optimizers = {
            role: torch.optim.Adam(net.parameters(), lr=lr, betas=betas)
            for role, net in self.networks().items()
        }
        return self.optimizers

    def state(self):
        return {
            "networks": {
                role: {k: v.clone() for k, v in net.state_dict().items()}
                for role, net in self.networks().items()
            },
            "optimizers": {
                role: _clone_state(opt.state_dict()) for role, opt in self.optimizers.items()
            },
            "epoch": self.epoch,
        }

    def load_state(self, state):
        for role, net in self.networks().items():
            net.load_state_dict(state["networks"][role])
        for role, opt_state in state.get("optimizers", {}).items():
            if role in self.optimizers:
                self.optimizers[role].load_state_dict(opt_state)
        self.epoch = state.get("epoch", self.epoch)


def _clone_state(obj):
    if isinstance(obj, torch.Tensor):
        return obj.clone()
    if isinstance(obj, dict):
        return {k: _clone_state(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clone_state(v) for v in obj]
    return obj


def build_bundle(
    image_size=64,
    domain_channels=1,
    base_width=32,
    depth=4,
    disc_depth=3,
    disc_width=None,
    lr=2e-4,
    betas=(0.9, 0.999),
    conditioning_channels=0,
) -> ModelBundle:
    """Construct all six networks with channel-compatible specs.

    ``conditioning_channels`` extra input channels (e.g. a style channel) are
    appended to the input of ``m2s``.
    """
    c = domain_channels
    extra = conditioning_channels

    def gen(role, c_in, c_out, act):
        return build_generator(
            NetworkSpec(c_in, c_out, image_size, base_width, depth, act), role
        )

    def disc(role, c_in):
        return build_discriminator(
            NetworkSpec(c_in, 1, image_size, disc_width or base_width, disc_depth), role
        )

    bundle = ModelBundle(
        g_s2e=gen("s2e", 1, 1, "sigmoid"),
        g_pf=gen("pf", 1, 1, "sigmoid"),
        g_e2m=gen("e2m", 1, c, "tanh"),
        g_m2s=gen("m2s", c + extra, 1, "sigmoid"),
        d_s2e=disc("d_s2e", 2),
        d_e2m=disc("d_e2m", 1 + c),
    )
    bundle.make_optimizers(lr, betas)
    return bundle


def save_bundle(bundle: ModelBundle, path) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "epoch": bundle.epoch,
        "config_hash": bundle.config_hash,
        "extras": bundle.extras,
        "networks": {
            role: {
                "kind": "generator" if role in GENERATOR_ROLES else "discriminator",
                "spec": asdict(net.spec),
                "state": net.state_dict(),
                "frozen": bool(net.frozen),
            }
            for role, net in bundle.networks().items()
        },
        "optimizers": {role: opt.state_dict() for role, opt in bundle.optimizers.items()},
    }
    torch.save(payload, path)


def load_bundle(path, lr=2e-4, betas=(0.9, 0.999)) -> ModelBundle:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{path} is not a model bundle checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(
            f"unsupported checkpoint version {payload.get('version')} in {path}"
        )
    nets = {}
    for role, entry in payload["networks"].items():
        spec = NetworkSpec(**entry["spec"])
        if entry["kind"] == "generator":
            net = build_generator(spec, role)
        else:
            net = build_discriminator(spec, role)
        net.load_state_dict(entry["state"])
        if entry["frozen"]:
            set_frozen(net, True)
        nets[role] = net
    bundle = ModelBundle(
        g_s2e=nets["s2e"],
        g_pf=nets["pf"],
        g_e2m=nets["e2m"],
        g_m2s=nets["m2s"],
        d_s2e=nets["d_s2e"],
        d_e2m=nets["d_e2m"],
        epoch=payload["epoch"],
        config_hash=payload["config_hash"],
        extras=payload.get("extras", {}),
    )
    bundle.make_optimizers(lr, betas)
    for role, state in payload.get("optimizers", {}).items():
        bundle.optimizers[role].load_state_dict(state)
    return bundle
