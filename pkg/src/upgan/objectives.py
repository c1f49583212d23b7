"""Training objectives: least-squares adversarial terms plus the adaptive
fidelity loss, combined as total = lambda_fidelity * nll + lambda_adv * adv.

Patch scores are averaged (not summed) over the score map so loss magnitudes
do not depend on image resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .ggd import GGDPrediction, ggd_nll


@dataclass
class LossWeights:
    lambda_fidelity: float = 1.0
    lambda_adversarial: float = 0.001

    def __post_init__(self):
        if self.lambda_fidelity < 0 or self.lambda_adversarial < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.lambda_fidelity == 0 and self.lambda_adversarial == 0:
            raise ValueError("at least one loss weight must be nonzero")


def _check_scores(scores: torch.Tensor, name: str) -> None:
    if scores.numel() == 0:
        raise ValueError(f"{name} is empty")
    if not bool(torch.all(torch.isfinite(scores))):
        raise ValueError(f"{name} contains non-finite values")


def gen_adv_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    """Least-squares generator term: mean squared deviation of scores from 1."""
    _check_scores(fake_scores, "fake_scores")
    return torch.mean((fake_scores - 1.0) ** 2)


def disc_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """Least-squares discriminator term: mean((real-1)^2) + mean(fake^2)."""
    _check_scores(real_scores, "real_scores")
    _check_scores(fake_scores, "fake_scores")
    return torch.mean((real_scores - 1.0) ** 2) + torch.mean(fake_scores ** 2)


def gen_total_loss(
    pred: GGDPrediction,
    target: torch.Tensor,
    fake_scores: torch.Tensor,
    weights: LossWeights,
    alpha_floor: float = 1e-3,
    residual_eps: float = 0.0,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted generator loss with a per-component breakdown for logging."""
    fidelity = ggd_nll(pred, target, alpha_floor=alpha_floor, residual_eps=residual_eps)
    adversarial = gen_adv_loss(fake_scores)
    total = weights.lambda_fidelity * fidelity + weights.lambda_adversarial * adversarial
    return total, {
        "fidelity": float(fidelity.detach()),
        "adversarial": float(adversarial.detach()),
    }
