"""Image quality metrics, uncertainty diagnostics, and paired significance
testing, plus the EvalReport container they feed.

PSNR and MAE are computed on whatever intensity scale the caller declares
(evaluation maps predictions back to raw units via the stored normalization
constants before calling in here). SSIM follows the standard windowed
definition: 11x11 Gaussian window (sigma 1.5), k1=0.01, k2=0.03 on the
declared dynamic range.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage, stats

from .tensorio import write_json

SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5  # radius int(3.5 * 1.5 + 0.5) = 5 -> 11x11 window
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def psnr(x: np.ndarray, y: np.ndarray, max_i: float) -> float:
    """20 log10(max_i / sqrt(MSE)); +inf when the images are identical."""
    x, y = _check_pair(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 20.0 * math.log10(max_i / math.sqrt(mse))


def mae(x: np.ndarray, y: np.ndarray) -> float:
    x, y = _check_pair(x, y)
    return float(np.mean(np.abs(x - y)))


def ssim(x: np.ndarray, y: np.ndarray, data_range: float) -> float:
    """Mean structural similarity over the window-valid interior."""
    x, y = _check_pair(x, y)
    if x.ndim != 2:
        raise ValueError("ssim expects 2-D grayscale images")
    radius = int(SSIM_TRUNCATE * SSIM_SIGMA + 0.5)
    win = 2 * radius + 1
    if min(x.shape) < win:
        raise ValueError(f"image {x.shape} smaller than {win}x{win} ssim window")

    def filt(img):
        return ndimage.gaussian_filter(img, sigma=SSIM_SIGMA, truncate=SSIM_TRUNCATE)

    ux, uy = filt(x), filt(y)
    uxx, uyy, uxy = filt(x * x), filt(y * y), filt(x * y)
    vx = uxx - ux * ux
    vy = uyy - uy * uy
    vxy = uxy - ux * uy
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux ** 2 + uy ** 2 + c1) * (vx + vy + c2))
    return float(s[radius:-radius, radius:-radius].mean())


def uncertainty_error_correlation(sigma: np.ndarray, residual: np.ndarray) -> float:
    """Spearman rank correlation between per-pixel sigma and residual.

    Returns NaN when either input is constant (correlation undefined).
    """
    sigma, residual = _check_pair(sigma, residual)
    s = sigma.ravel()
    r = residual.ravel()
    if np.ptp(s) == 0 or np.ptp(r) == 0:
        return float("nan")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rho = stats.spearmanr(s, r).statistic
    return float(rho)


def paired_significance(scores_a, scores_b) -> float:
    """Two-sided Wilcoxon signed-rank p-value for paired score lists.

    Identical lists give p = 1.0. Requires at least 5 pairs.
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired scores must be 1-D lists of equal length")
    if len(a) < 5:
        raise ValueError(f"need at least 5 paired scores, got {len(a)}")
    diffs = a - b
    if np.all(diffs == 0):
        return 1.0
    res = stats.wilcoxon(a, b, zero_method="wilcox", alternative="two-sided", method="auto")
    return float(res.pvalue)


@dataclass
class EvalReport:
    """Per-image metric rows plus aggregates and per-phase diagnostics.

    Aggregates are always recomputable from the rows; ``self_consistent``
    records the result of that check at assembly time.
    """

    rows: list[dict] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    per_phase: dict = field(default_factory=dict)
    p_values: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    self_consistent: bool = False

    METRICS = ("psnr", "ssim", "mae")

    def compute_aggregates(self) -> dict:
        agg = {}
        for metric in self.METRICS:
            vals = np.array([r[metric] for r in self.rows if metric in r], dtype=np.float64)
            if len(vals) == 0:
                continue
            finite = vals[np.isfinite(vals)]
            agg[metric] = {
                "mean": float(finite.mean()) if len(finite) else float("nan"),
                "std": float(finite.std()) if len(finite) else float("nan"),
                "n": int(len(vals)),
            }
        return agg

    def finalize(self) -> "EvalReport":
        self.aggregates = self.compute_aggregates()
        self.self_consistent = True
        return self

    def verify(self, atol: float = 1e-12) -> bool:
        """Recompute aggregates from rows and compare with the stored ones."""
        fresh = self.compute_aggregates()
        if fresh.keys() != self.aggregates.keys():
            return False
        for metric, ref in fresh.items():
            got = self.aggregates[metric]
            for key in ("mean", "std"):
                r, g = ref[key], got[key]
                if math.isnan(r) != math.isnan(g):
                    return False
                if not math.isnan(r) and abs(r - g) > atol:
                    return False
            if ref["n"] != got["n"]:
                return False
        return True

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, float) and math.isinf(v):
                return "inf" if v > 0 else "-inf"
            if isinstance(v, float) and math.isnan(v):
                return "nan"
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, list):
                return [clean(x) for x in v]
            return v

        return clean(
            {
                "rows": self.rows,
                "aggregates": self.aggregates,
                "per_phase": self.per_phase,
                "p_values": self.p_values,
                "meta": self.meta,
                "self_consistent": self.self_consistent,
            }
        )

    @staticmethod
    def _revive(v):
        if v == "inf":
            return math.inf
        if v == "-inf":
            return -math.inf
        if v == "nan":
            return float("nan")
        if isinstance(v, dict):
            return {k: EvalReport._revive(x) for k, x in v.items()}
        if isinstance(v, list):
            return [EvalReport._revive(x) for x in v]
        return v

    @classmethod
    def from_dict(cls, payload: dict) -> "EvalReport":
        payload = cls._revive(payload)
        return cls(
            rows=payload.get("rows", []),
            aggregates=payload.get("aggregates", {}),
            per_phase=payload.get("per_phase", {}),
            p_values=payload.get("p_values", {}),
            meta=payload.get("meta", {}),
            self_consistent=payload.get("self_consistent", False),
        )

    def save(self, path: str | Path) -> Path:
        return write_json(path, self.to_dict())

    def save_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if not self.rows:
            path.write_text("")
            return path
        fields = sorted({k for row in self.rows for k in row})
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=fields)
            writer.writeheader()
            writer.writerows(self.rows)
        return path
