"""Generator and discriminator architectures.

The generator is an encoder-decoder with skip connections whose head splits
three ways to emit the per-pixel residual-distribution parameters (mean,
scale alpha, shape beta). Head activations are chosen so the output satisfies
the GGDPrediction invariants for any weights:

    mean  = tanh(raw)                        -> [-1, 1] image codomain
    alpha = alpha_floor + softplus(raw)      -> strictly positive
    beta  = beta_min + (beta_max - beta_min) * sigmoid(raw)

The discriminator is a patch classifier: stacked strided convolutions ending
in a 1-channel score map with no squashing (least-squares GAN convention).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .ggd import GGDPrediction


@dataclass
class GeneratorConfig:
    in_channels: int = 1
    base_width: int = 32
    depth: int = 4
    beta_min: float = 0.2
    beta_max: float = 5.0
    alpha_floor: float = 1e-3

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("generator depth must be >= 1")
        if self.in_channels < 1 or self.base_width < 1:
            raise ValueError("channel counts must be positive")
        if not (0 < self.beta_min < self.beta_max):
            raise ValueError("need 0 < beta_min < beta_max")
        if self.alpha_floor <= 0:
            raise ValueError("alpha_floor must be positive")


@dataclass
class DiscriminatorConfig:
    in_channels: int = 1
    layers: int = 3
    base_width: int = 32

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("discriminator needs at least one layer")
        if self.in_channels < 1 or self.base_width < 1:
            raise ValueError("channel counts must be positive")


def init_weights(module: nn.Module, std: float = 0.02) -> None:
    """DCGAN-style init: conv weights ~ N(0, std), norm weights ~ N(1, std)."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.InstanceNorm2d) and m.affine:
            nn.init.normal_(m.weight, 1.0, std)
            nn.init.zeros_(m.bias)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def _down(cin, cout, norm=True):
    layers = [nn.Conv2d(cin, cout, 4, stride=2, padding=1)]
    if norm:
        layers.append(nn.InstanceNorm2d(cout, affine=True))
    layers.append(nn.LeakyReLU(0.2, inplace=True))
    return nn.Sequential(*layers)


def _up(cin, cout):
    return nn.Sequential(
        nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1),
        nn.InstanceNorm2d(cout, affine=True),
        nn.ReLU(inplace=True),
    )


class UncertaintyGenerator(nn.Module):
    """Encoder-decoder with skip connections and a three-way parameter head."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        w = config.base_width
        widths = [min(w * 2 ** i, w * 8) for i in range(config.depth)]

        downs = []
        cin = config.in_channels
        for i, cout in enumerate(widths):
            downs.append(_down(cin, cout, norm=(i > 0)))
            cin = cout
        self.downs = nn.ModuleList(downs)

        ups = []
        cin = widths[-1]
        for i in reversed(range(config.depth - 1)):
            ups.append(_up(cin, widths[i]))
            cin = widths[i] * 2  # skip concat doubles channels
        self.ups = nn.ModuleList(ups)
        self.up_final = _up(cin, w)

        self.trunk = nn.Sequential(nn.Conv2d(w, w, 3, padding=1), nn.LeakyReLU(0.2, inplace=True))
        self.head_mean = nn.Conv2d(w, 1, 3, padding=1)
        self.head_alpha = nn.Conv2d(w, 1, 3, padding=1)
        self.head_beta = nn.Conv2d(w, 1, 3, padding=1)
        init_weights(self)

    def _check_input(self, x: torch.Tensor) -> None:
        if x.ndim != 4:
            raise ValueError(f"expected (B, C, H, W) input, got shape {tuple(x.shape)}")
        if x.shape[1] != self.config.in_channels:
            raise ValueError(
                f"expected {self.config.in_channels} input channels, got {x.shape[1]}"
            )
        div = 2 ** self.config.depth
        if x.shape[2] % div or x.shape[3] % div:
            raise ValueError(
                f"spatial size {tuple(x.shape[2:])} not divisible by 2**depth = {div}"
            )

    def forward(self, x: torch.Tensor) -> GGDPrediction:
        self._check_input(x)
        skips = []
        for down in self.downs:
            x = down(x)
            skips.append(x)
        x = skips[-1]
        for up, skip in zip(self.ups, reversed(skips[:-1])):
            x = up(x)
            x = torch.cat([x, skip], dim=1)
        x = self.up_final(x)
        x = self.trunk(x)
        cfg = self.config
        mean = torch.tanh(self.head_mean(x))
        alpha = cfg.alpha_floor + F.softplus(self.head_alpha(x))
        beta = cfg.beta_min + (cfg.beta_max - cfg.beta_min) * torch.sigmoid(self.head_beta(x))
        return GGDPrediction(mean, alpha, beta)


class PatchDiscriminator(nn.Module):
    """Patch discriminator: ``layers`` strided conv blocks, two stride-1
    blocks, and a final 1-channel projection. No output squashing.

    The score map for an H x W input is (H / 2**layers - 2) square and each
    cell sees a receptive field of (9 * 2**layers - 2) input pixels; cells
    move in strides of 2**layers pixels.
    """

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        w = config.base_width
        widths = [min(w * 2 ** i, w * 8) for i in range(config.layers)]
        blocks = [_down(config.in_channels, widths[0], norm=False)]
        for cin, cout in zip(widths[:-1], widths[1:]):
            blocks.append(_down(cin, cout))
        tail = min(widths[-1] * 2, w * 8)
        blocks.append(
            nn.Sequential(
                nn.Conv2d(widths[-1], tail, 4, stride=1, padding=1),
                nn.InstanceNorm2d(tail, affine=True),
                nn.LeakyReLU(0.2, inplace=True),
            )
        )
        blocks.append(nn.Conv2d(tail, 1, 4, stride=1, padding=1))
        self.net = nn.Sequential(*blocks)
        init_weights(self)

    def stride(self) -> int:
        return 2 ** self.config.layers

    def receptive_field(self) -> int:
        return 9 * 2 ** self.config.layers - 2

    def score_map_size(self, h: int, w: int) -> tuple[int, int]:
        f = 2 ** self.config.layers
        if h % f or w % f:
            raise ValueError(f"input size {h}x{w} not divisible by stride {f}")
        out_h, out_w = h // f - 2, w // f - 2
        if out_h < 1 or out_w < 1:
            raise ValueError(f"input {h}x{w} too small for {self.config.layers} layers")
        return out_h, out_w

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4:
            raise ValueError(f"expected (B, C, H, W) input, got shape {tuple(x.shape)}")
        if x.shape[1] != self.config.in_channels:
            raise ValueError(
                f"expected {self.config.in_channels} input channels, got {x.shape[1]}"
            )
        self.score_map_size(x.shape[2], x.shape[3])
        return self.net(x)
