"""Zero-mean generalized Gaussian distribution (GGD) mathematics.

The residual between a predicted image and its target is modelled per pixel
as a zero-mean GGD with scale ``alpha`` and shape ``beta``:

    pdf(e; alpha, beta) = beta / (2 * alpha * Gamma(1/beta)) * exp(-(|e|/alpha)**beta)

``beta = 2`` recovers a Gaussian, ``beta = 1`` a Laplacian. The adaptive
fidelity loss used to train the generators is the per-pixel negative
log-likelihood of this density with the constant ``ln 2`` dropped:

    nll = (|e|/alpha)**beta - log(beta/alpha) + log Gamma(1/beta)

averaged over pixels (and over the batch). The per-pixel standard deviation,
used downstream as an attention signal, is

    sigma = alpha * sqrt(Gamma(3/beta) / Gamma(1/beta))

Everything here is differentiable through torch autograd; ``ggd_sample`` is
a numpy-based sampling oracle for validating the density and sigma formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

LOG_2PI_HALF = 0.5 * math.log(2.0 * math.pi)
LOG_PI = math.log(math.pi)

# Lanczos approximation, g = 7, 9 coefficients (Godfrey's tabulation).
# Relative error of Gamma below 1e-13 over the positive real axis, which keeps
# |log_gamma(x) - ln Gamma(x)| under 1e-10 on [0.05, 100].
_LANCZOS_G = 7.0
_LANCZOS_COEFFS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)


def _lanczos(x: torch.Tensor) -> torch.Tensor:
    # valid for x >= 0.5
    z = x - 1.0
    series = torch.full_like(z, _LANCZOS_COEFFS[0])
    for i, c in enumerate(_LANCZOS_COEFFS[1:], start=1):
        series = series + c / (z + i)
    t = z + _LANCZOS_G + 0.5
    return LOG_2PI_HALF + (z + 0.5) * torch.log(t) - t + torch.log(series)


def _log_gamma_tensor(x: torch.Tensor) -> torch.Tensor:
    if torch.any(x <= 0):
        raise ValueError("log_gamma requires strictly positive arguments")
    small = x < 0.5
    # Evaluate both branches on safe stand-in values so neither produces
    # NaN/Inf; torch.where would otherwise poison gradients.
    x_direct = torch.where(small, torch.ones_like(x) * 1.5, x)
    x_small = torch.where(small, x, torch.ones_like(x) * 0.25)
    direct = _lanczos(x_direct)
    reflected = LOG_PI - torch.log(torch.sin(math.pi * x_small)) - _lanczos(1.0 - x_small)
    return torch.where(small, reflected, direct)


def log_gamma(x):
    """ln Gamma(x) for x > 0 via the Lanczos series (reflection below 0.5).

    Accepts a torch tensor (differentiable), numpy array, or python float and
    returns the matching type. Float/numpy inputs are evaluated in float64.
    """
    if isinstance(x, torch.Tensor):
        return _log_gamma_tensor(x)
    arr = np.asarray(x, dtype=np.float64)
    flat = np.ascontiguousarray(arr.reshape(-1))
    out = _log_gamma_tensor(torch.from_numpy(flat)).numpy().reshape(arr.shape)
    if arr.ndim == 0:
        return float(out)
    return out


@dataclass
class GGDPrediction:
    """Per-pixel GGD parameter maps emitted by a generator head.

    ``mean`` is the predicted image, ``alpha`` the scale map (strictly
    positive) and ``beta`` the shape map (inside the configured clamp). All
    three share one shape; batched maps use (..., H, W) layout.
    """

    mean: torch.Tensor
    alpha: torch.Tensor
    beta: torch.Tensor

    def validate(self, beta_min: float | None = None, beta_max: float | None = None) -> None:
        if not (self.mean.shape == self.alpha.shape == self.beta.shape):
            raise ValueError(
                f"GGDPrediction maps disagree in shape: mean {tuple(self.mean.shape)}, "
                f"alpha {tuple(self.alpha.shape)}, beta {tuple(self.beta.shape)}"
            )
        if not bool(torch.all(self.alpha > 0)):
            raise ValueError("GGDPrediction.alpha must be strictly positive")
        if not bool(torch.all(torch.isfinite(self.beta))):
            raise ValueError("GGDPrediction.beta contains non-finite values")
        if beta_min is not None and not bool(torch.all(self.beta >= beta_min)):
            raise ValueError(f"GGDPrediction.beta below clamp minimum {beta_min}")
        if beta_max is not None and not bool(torch.all(self.beta <= beta_max)):
            raise ValueError(f"GGDPrediction.beta above clamp maximum {beta_max}")

    @property
    def shape(self):
        return self.mean.shape

    def detach(self) -> "GGDPrediction":
        return GGDPrediction(self.mean.detach(), self.alpha.detach(), self.beta.detach())


def ggd_nll(
    pred: GGDPrediction,
    target: torch.Tensor,
    alpha_floor: float = 1e-3,
    residual_eps: float = 0.0,
) -> torch.Tensor:
    """Mean per-pixel adaptive fidelity loss.

    Equals the exact GGD negative log-likelihood minus ln 2, averaged over
    all pixels (and over the batch when maps are batched). ``alpha_floor``
    guards the denominator against early-training blow-up; ``residual_eps``
    (off by default) smooths |residual|**beta near zero residual, where the
    gradient is unbounded for beta < 1.
    """
    if pred.mean.shape != target.shape:
        raise ValueError(
            f"prediction shape {tuple(pred.mean.shape)} != target shape {tuple(target.shape)}"
        )
    pred.validate()
    if not bool(torch.all(torch.isfinite(pred.mean))) or not bool(torch.all(torch.isfinite(target))):
        raise ValueError("ggd_nll received non-finite inputs")
    if not bool(torch.all(torch.isfinite(pred.alpha))):
        raise ValueError("ggd_nll received non-finite alpha")

    alpha = torch.clamp(pred.alpha, min=alpha_floor)
    beta = pred.beta
    resid = torch.abs(pred.mean - target) + residual_eps
    power = torch.pow(resid / alpha, beta)
    loss = power - torch.log(beta) + torch.log(alpha) + log_gamma(1.0 / beta)
    return loss.mean()


def ggd_sigma(alpha, beta):
    """Per-pixel standard deviation sigma = alpha * sqrt(Gamma(3/beta)/Gamma(1/beta)).

    Accepts torch tensors (differentiable) or numpy/float inputs; returns the
    matching type. Inputs must be strictly positive.
    """
    if not (isinstance(alpha, torch.Tensor) or isinstance(beta, torch.Tensor)):
        a = np.asarray(alpha, dtype=np.float64)
        b = np.asarray(beta, dtype=np.float64)
        a_bc, b_bc = np.broadcast_arrays(a, b)
        out = ggd_sigma(torch.from_numpy(a_bc.copy()), torch.from_numpy(b_bc.copy())).numpy()
        if a.ndim == 0 and b.ndim == 0:
            return float(out)
        return out
    alpha = torch.as_tensor(alpha)
    beta = torch.as_tensor(beta)
    if torch.any(alpha <= 0):
        raise ValueError("ggd_sigma requires alpha > 0")
    if torch.any(beta <= 0):
        raise ValueError("ggd_sigma requires beta > 0")
    return alpha * torch.exp(0.5 * (log_gamma(3.0 / beta) - log_gamma(1.0 / beta)))


def ggd_sample(alpha, beta, seed: int, size=None) -> np.ndarray:
    """Draw one GGD residual per pixel; deterministic for a fixed seed.

    Uses |e| = alpha * G**(1/beta) with G ~ Gamma(shape=1/beta, scale=1) and
    an independent random sign. Serves as a Monte-Carlo oracle for the
    density and for ``ggd_sigma``.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if np.any(alpha <= 0):
        raise ValueError("ggd_sample requires alpha > 0")
    if np.any(beta <= 0):
        raise ValueError("ggd_sample requires beta > 0")
    if size is None:
        size = np.broadcast_shapes(alpha.shape, beta.shape)
    rng = np.random.default_rng(seed)
    g = rng.gamma(shape=np.broadcast_to(1.0 / beta, size), scale=1.0, size=size)
    magnitude = alpha * np.power(g, np.broadcast_to(1.0 / beta, size))
    sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    return magnitude * sign
