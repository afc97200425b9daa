"""Network builders: residual-bottleneck generator, patch discriminator, U-net DAE.

The generator is an encoder-decoder whose bottleneck is a stack of
residual blocks with no encoder-to-decoder skip connections; with the
default 2 downsamples / 9 residual blocks / 2 upsamples it counts 13
layers. The discriminator is a patch classifier (spatial map of
real/synthetic scores). The DAE baseline is a U-net-style autoencoder
with optional skip connections. All three come in 2D and 3D variants.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

__all__ = [
    "GeneratorConfig",
    "DiscriminatorConfig",
    "DAEConfig",
    "Generator",
    "PatchDiscriminator",
    "DenoisingAutoencoder",
    "build_generator",
    "build_discriminator",
    "build_dae",
    "count_parameters",
    "save_checkpoint",
    "load_checkpoint",
]


def _ops(spatial_rank: str):
    if spatial_rank == "2D":
        return nn.Conv2d, nn.ConvTranspose2d, nn.InstanceNorm2d
    if spatial_rank == "3D":
        return nn.Conv3d, nn.ConvTranspose3d, nn.InstanceNorm3d
    raise ValueError(f"spatial_rank must be '2D' or '3D', got {spatial_rank!r}")


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 1
    base_channels: int = 32
    num_downsamples: int = 2
    num_residual_blocks: int = 9
    spatial_rank: str = "3D"

    def __post_init__(self):
        if self.num_residual_blocks < 0:
            raise ValueError("num_residual_blocks must be >= 0")
        if self.num_downsamples < 1:
            raise ValueError("num_downsamples must be >= 1")
        _ops(self.spatial_rank)

    @property
    def layer_count(self) -> int:
        # down convs + residual trunk + up convs
        return 2 * self.num_downsamples + self.num_residual_blocks


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 1
    base_channels: int = 32
    num_layers: int = 4
    spatial_rank: str = "3D"

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        _ops(self.spatial_rank)


@dataclass(frozen=True)
class DAEConfig:
    in_channels: int = 1
    base_channels: int = 32
    depth: int = 3
    skip_connections: bool = True
    spatial_rank: str = "3D"

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        _ops(self.spatial_rank)


def _init_weights(module: nn.Module) -> None:
    # Zero-mean Gaussian, std 0.02, conventional for this architecture family.
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Conv3d, nn.ConvTranspose2d, nn.ConvTranspose3d)):
            nn.init.normal_(m.weight, 0.0, 0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class _Bounded01(nn.Module):
    """Tanh rescaled to [0, 1] so outputs match the normalized intensity range."""

    def forward(self, x):
        return 0.5 * (torch.tanh(x) + 1.0)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, spatial_rank: str):
        super().__init__()
        conv, _, norm = _ops(spatial_rank)
        self.body = nn.Sequential(
            conv(channels, channels, 3, padding=1),
            norm(channels),
            nn.ReLU(inplace=True),
            conv(channels, channels, 3, padding=1),
            norm(channels),
        )

    def forward(self, x):
        return x + self.body(x)


def _check_divisible(x: torch.Tensor, factor: int, name: str) -> None:
    spatial = x.shape[2:]
    if any(s % factor != 0 for s in spatial):
        raise ValueError(
            f"{name}: spatial dims {tuple(spatial)} must be divisible by {factor} "
            "(downsampling factor)"
        )


class Generator(nn.Module):
    """Encoder, residual bottleneck, decoder; no skip connections across the bottleneck."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        conv, deconv, norm = _ops(cfg.spatial_rank)

        down = []
        ch = cfg.in_channels
        for i in range(cfg.num_downsamples):
            out_ch = cfg.base_channels * 2**i
            down.append(
                nn.Sequential(conv(ch, out_ch, 3, stride=2, padding=1), norm(out_ch), nn.ReLU(inplace=True))
            )
            ch = out_ch
        self.down = nn.ModuleList(down)

        self.trunk = nn.ModuleList(
            ResidualBlock(ch, cfg.spatial_rank) for _ in range(cfg.num_residual_blocks)
        )

        up = []
        for i in reversed(range(cfg.num_downsamples)):
            if i == 0:
                up.append(
                    nn.Sequential(deconv(ch, cfg.in_channels, 4, stride=2, padding=1), _Bounded01())
                )
            else:
                out_ch = cfg.base_channels * 2 ** (i - 1)
                up.append(
                    nn.Sequential(deconv(ch, out_ch, 4, stride=2, padding=1), norm(out_ch), nn.ReLU(inplace=True))
                )
                ch = out_ch
        self.up = nn.ModuleList(up)
        _init_weights(self)

    @property
    def layer_count(self) -> int:
        return len(self.down) + len(self.trunk) + len(self.up)

    @property
    def num_residual_blocks(self) -> int:
        return len(self.trunk)

    def forward(self, x):
        _check_divisible(x, 2 ** len(self.down), "generator")
        for block in self.down:
            x = block(x)
        for block in self.trunk:
            x = block(x)
        for block in self.up:
            x = block(x)
        return x


class PatchDiscriminator(nn.Module):
    """Strided-conv classifier producing a spatial map of real/synthetic scores."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        conv, _, norm = _ops(cfg.spatial_rank)
        layers = []
        ch = cfg.in_channels
        for i in range(cfg.num_layers):
            out_ch = cfg.base_channels * 2**i
            layers.append(conv(ch, out_ch, 4, stride=2, padding=1))
            if i > 0:
                layers.append(norm(out_ch))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            ch = out_ch
        layers.append(conv(ch, 1, 3, padding=1))  # score map, no activation
        self.body = nn.Sequential(*layers)
        _init_weights(self)

    def forward(self, x):
        spatial = x.shape[2:]
        if any(s < 2**self.cfg.num_layers for s in spatial):
            raise ValueError(
                f"discriminator: input spatial dims {tuple(spatial)} too small for "
                f"{self.cfg.num_layers} stride-2 layers (need >= {2 ** self.cfg.num_layers})"
            )
        return self.body(x)


class DenoisingAutoencoder(nn.Module):
    """U-net-style encoder-decoder; skip connections concatenate encoder features."""

    def __init__(self, cfg: DAEConfig):
        super().__init__()
        self.cfg = cfg
        conv, deconv, norm = _ops(cfg.spatial_rank)

        def block(in_ch, out_ch):
            return nn.Sequential(
                conv(in_ch, out_ch, 3, padding=1), norm(out_ch), nn.ReLU(inplace=True)
            )

        self.encoders = nn.ModuleList()
        self.pools = nn.ModuleList()
        ch = cfg.in_channels
        for i in range(cfg.depth):
            out_ch = cfg.base_channels * 2**i
            self.encoders.append(block(ch, out_ch))
            self.pools.append(conv(out_ch, out_ch, 3, stride=2, padding=1))
            ch = out_ch

        self.bottleneck = block(ch, ch * 2)
        ch = ch * 2

        self.upsamples = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for i in reversed(range(cfg.depth)):
            out_ch = cfg.base_channels * 2**i
            self.upsamples.append(deconv(ch, out_ch, 4, stride=2, padding=1))
            dec_in = out_ch * 2 if cfg.skip_connections else out_ch
            self.decoders.append(block(dec_in, out_ch))
            ch = out_ch

        self.head = nn.Sequential(conv(ch, cfg.in_channels, 3, padding=1), _Bounded01())
        _init_weights(self)

    def forward(self, x):
        _check_divisible(x, 2**self.cfg.depth, "dae")
        skips = []
        for enc, pool in zip(self.encoders, self.pools):
            x = enc(x)
            skips.append(x)
            x = pool(x)
        x = self.bottleneck(x)
        for up, dec, skip in zip(self.upsamples, self.decoders, reversed(skips)):
            x = up(x)
            if self.cfg.skip_connections:
                x = torch.cat([x, skip], dim=1)
            x = dec(x)
        return self.head(x)


def _maybe_seed(seed):
    if seed is not None:
        torch.manual_seed(seed)


def build_generator(cfg: GeneratorConfig, seed: int | None = None) -> Generator:
    _maybe_seed(seed)
    return Generator(cfg)


def build_discriminator(cfg: DiscriminatorConfig, seed: int | None = None) -> PatchDiscriminator:
    _maybe_seed(seed)
    return PatchDiscriminator(cfg)


def build_dae(cfg: DAEConfig, seed: int | None = None) -> DenoisingAutoencoder:
    _maybe_seed(seed)
    return DenoisingAutoencoder(cfg)


def count_parameters(m: nn.Module) -> int:
    return sum(p.numel() for p in m.parameters())


_KINDS = {
    "generator": (GeneratorConfig, Generator),
    "discriminator": (DiscriminatorConfig, PatchDiscriminator),
    "dae": (DAEConfig, DenoisingAutoencoder),
}


def save_checkpoint(model: nn.Module, path) -> None:
    """Serialize a model with its originating config; round-trips exactly."""
    for kind, (_, cls) in _KINDS.items():
        if isinstance(model, cls):
            break
    else:
        raise TypeError(f"unknown model type {type(model).__name__}")
    torch.save({"kind": kind, "config": asdict(model.cfg), "state_dict": model.state_dict()}, path)


def load_checkpoint(path) -> nn.Module:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    cfg_cls, model_cls = _KINDS[blob["kind"]]
    model = model_cls(cfg_cls(**blob["config"]))
    model.load_state_dict(blob["state_dict"])
    return model
