"""Uncertainty-guided composition of a generator cascade.

Phase 0 translates the source image directly. Every later phase consumes the
source again, concatenated with an attention feature built from the previous
phase: the predicted image weighted by its normalized per-pixel standard
deviation,

    f = mean * sigma / sum_pixels(sigma)

so the refinement stage is pointed at the regions the previous stage was
least certain about. With guidance disabled (ablation) the weighting is a
uniform 1/K map, which coincides with the guided feature exactly when sigma
is constant over the image.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .ggd import GGDPrediction, ggd_sigma
from .networks import UncertaintyGenerator

SIGMA_SUM_FLOOR = 1e-12


class DegenerateUncertaintyError(ValueError):
    """Raised when an image's sigma map sums below the representable floor."""


@dataclass
class PhaseOutput:
    """One cascade stage: prediction, sigma map, attention weights, and the
    feature handed to the next stage (None for the last phase)."""

    prediction: GGDPrediction
    sigma: torch.Tensor
    attention: torch.Tensor
    feature: torch.Tensor | None = None


@dataclass
class CascadeState:
    phases: list[PhaseOutput]
    source: torch.Tensor

    def __post_init__(self):
        if len(self.phases) < 1:
            raise ValueError("cascade needs at least one phase")


def _pixel_sum(x: torch.Tensor) -> torch.Tensor:
    # per-image sum over all non-batch dims
    if x.ndim <= 2:
        return x.sum()
    return x.sum(dim=tuple(range(1, x.ndim)), keepdim=True)


def attention_map(sigma: torch.Tensor, guided: bool = True) -> torch.Tensor:
    """Normalize sigma into per-image weights summing to 1 over pixels."""
    if guided:
        total = _pixel_sum(sigma)
        if bool(torch.any(total < SIGMA_SUM_FLOOR)):
            raise DegenerateUncertaintyError(
                f"sigma map sums below {SIGMA_SUM_FLOOR:g}; uncertainty is degenerate"
            )
        return sigma / torch.clamp(total, min=SIGMA_SUM_FLOOR)
    k = sigma[0].numel() if sigma.ndim > 2 else sigma.numel()
    return torch.full_like(sigma, 1.0 / k)


def attention_feature(prev: GGDPrediction, guided: bool = True) -> torch.Tensor:
    """Previous phase's image weighted by its normalized uncertainty."""
    prev.validate()
    sigma = ggd_sigma(prev.alpha, prev.beta)
    return prev.mean * attention_map(sigma, guided=guided)


def cascade_input(feature: torch.Tensor, source: torch.Tensor) -> torch.Tensor:
    """Stack (feature, source) along the channel axis, in that order."""
    if feature.shape != source.shape:
        raise ValueError(
            f"feature shape {tuple(feature.shape)} != source shape {tuple(source.shape)}"
        )
    if feature.ndim == 2:
        return torch.stack([feature, source], dim=0)
    return torch.cat([feature, source], dim=-3)


def check_cascade_configs(generators: list[UncertaintyGenerator], source_channels: int = 1) -> None:
    if len(generators) < 1:
        raise ValueError("cascade needs at least one generator")
    first = generators[0].config
    if first.in_channels != source_channels:
        raise ValueError(
            f"phase 0 expects {first.in_channels} input channels, source has {source_channels}"
        )
    for m, gen in enumerate(generators[1:], start=1):
        cfg = gen.config
        if cfg.in_channels != source_channels + 1:
            raise ValueError(
                f"phase {m} expects {cfg.in_channels} input channels, "
                f"needs {source_channels + 1} (feature + source)"
            )
        if (cfg.beta_min, cfg.beta_max) != (first.beta_min, first.beta_max):
            raise ValueError(f"phase {m} beta clamp differs from phase 0")


def upgan_forward(
    source: torch.Tensor,
    generators: list[UncertaintyGenerator],
    guided: bool = True,
) -> CascadeState:
    """Run the full cascade; intermediate phases are retained for reporting.

    ``source`` is a (B, 1, H, W) stack. Phase 0 consumes it alone; phase m > 0
    consumes the attention feature of phase m-1 concatenated with the source.
    """
    if source.ndim != 4:
        raise ValueError(f"expected (B, C, H, W) source, got shape {tuple(source.shape)}")
    check_cascade_configs(generators, source_channels=source.shape[1])

    phases: list[PhaseOutput] = []
    feature: torch.Tensor | None = None
    last = len(generators) - 1
    for m, gen in enumerate(generators):
        inp = source if m == 0 else cascade_input(feature, source)
        pred = gen(inp)
        sigma = ggd_sigma(pred.alpha, pred.beta)
        attn = attention_map(sigma, guided=guided)
        feature = pred.mean * attn
        phases.append(
            PhaseOutput(pred, sigma, attn, feature=feature if m < last else None)
        )
    return CascadeState(phases=phases, source=source)
