"""Cascade evaluation: per-image metrics in raw intensity units, per-phase
residual/uncertainty statistics, and figure emission.

Predictions are mapped back to raw intensities with the normalization
constants stored in the manifest before PSNR/SSIM/MAE are computed; the
metric dynamic range is the target slice's raw range, so numbers are
comparable across runs of the same dataset.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .cascade import upgan_forward
from .dataset import DatasetManifest, denormalize_map
from .metrics import EvalReport, mae, psnr, ssim, uncertainty_error_correlation


def evaluate_cascade(
    generators,
    manifest: DatasetManifest,
    split: str = "test",
    guided: bool = True,
    batch_size: int = 8,
    figures_dir: str | Path | None = None,
    max_figures: int = 4,
    meta: dict | None = None,
) -> EvalReport:
    """Run the cascade over a split and assemble an EvalReport.

    Row metrics refer to the final phase; ``per_phase`` carries mean absolute
    residual, mean sigma (raw units), and mean sigma/|residual| Spearman
    correlation for every phase.
    """
    samples = manifest.samples_for(split)
    if not samples:
        raise ValueError(f"manifest has no samples in split {split!r}")
    for g in generators:
        g.eval()
    device = next(generators[0].parameters()).device
    n_phases = len(generators)

    rows = []
    phase_resid = np.zeros(n_phases)
    phase_sigma = np.zeros(n_phases)
    phase_rho = [[] for _ in range(n_phases)]
    figures_made = 0

    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        a_np = np.stack([s.load(manifest.root)[0] for s in chunk])
        b_np = np.stack([s.load(manifest.root)[1] for s in chunk])
        a = torch.from_numpy(a_np[:, None, :, :]).to(device)
        with torch.no_grad():
            out = upgan_forward(a, generators, guided=guided)

        for i, sample in enumerate(chunk):
            lo, hi = sample.b_norm
            scale = (hi - lo) / 2.0
            target_raw = denormalize_map(b_np[i], lo, hi)
            row = {
                "image": f"{sample.subject_id}_{sample.slice_index:03d}",
                "subject": sample.subject_id,
            }
            for m, phase in enumerate(out.phases):
                pred = phase.prediction.mean[i, 0].cpu().numpy()
                sigma = phase.sigma[i, 0].cpu().numpy()
                pred_raw = denormalize_map(pred, lo, hi)
                resid_raw = np.abs(pred_raw - target_raw)
                phase_resid[m] += float(resid_raw.mean())
                phase_sigma[m] += float(sigma.mean() * scale)
                rho = uncertainty_error_correlation(sigma, resid_raw)
                if np.isfinite(rho):
                    phase_rho[m].append(rho)
                row[f"mae_phase{m}"] = float(resid_raw.mean())
                if m == n_phases - 1:
                    row["psnr"] = psnr(pred_raw, target_raw, max_i=hi - lo)
                    row["ssim"] = ssim(pred_raw, target_raw, data_range=hi - lo)
                    row["mae"] = float(resid_raw.mean())
                    row["sigma_residual_spearman"] = rho
            rows.append(row)

            if figures_dir is not None and figures_made < max_figures:
                fig_path = Path(figures_dir) / f"phases_{row['image']}.png"
                phase_panel(out, i, b_np[i], fig_path)
                figures_made += 1

    n = len(rows)
    report = EvalReport(
        rows=rows,
        per_phase={
            "mean_residual": (phase_resid / n).tolist(),
            "mean_sigma": (phase_sigma / n).tolist(),
            "sigma_residual_spearman": [
                float(np.mean(r)) if r else float("nan") for r in phase_rho
            ],
        },
        meta={"split": split, "n_images": n, "guided": guided, **(meta or {})},
    )
    return report.finalize()


def phase_panel(cascade_out, index: int, target: np.ndarray, path: str | Path) -> Path:
    """Per-image panel: input and target on top, then one row per phase with
    prediction, residual, alpha, beta, and sigma maps."""
    phases = cascade_out.phases
    n_phases = len(phases)
    fig, axes = plt.subplots(n_phases + 1, 5, figsize=(14, 2.8 * (n_phases + 1)))
    axes = np.atleast_2d(axes)

    def show(ax, img, title, cmap="gray"):
        im = ax.imshow(img, cmap=cmap)
        ax.set_title(title, fontsize=9)
        ax.axis("off")
        fig.colorbar(im, ax=ax, fraction=0.045)

    source = cascade_out.source[index, 0].cpu().numpy()
    show(axes[0, 0], source, "input")
    show(axes[0, 1], target, "target")
    for j in range(2, 5):
        axes[0, j].axis("off")

    for m, phase in enumerate(phases):
        pred = phase.prediction.mean[index, 0].cpu().numpy()
        show(axes[m + 1, 0], pred, f"phase {m} prediction")
        show(axes[m + 1, 1], np.abs(pred - target), f"phase {m} |residual|", cmap="magma")
        show(axes[m + 1, 2], phase.prediction.alpha[index, 0].cpu().numpy(), f"phase {m} alpha", cmap="viridis")
        show(axes[m + 1, 3], phase.prediction.beta[index, 0].cpu().numpy(), f"phase {m} beta", cmap="viridis")
        show(axes[m + 1, 4], phase.sigma[index, 0].cpu().numpy(), f"phase {m} sigma", cmap="magma")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def supervision_curves(level_results: list[dict], path: str | Path) -> Path:
    """Metric-vs-supervision curves with a non-strict monotone-trend note.

    ``level_results`` rows: {"level": int, "mae": float, "psnr": float,
    "ssim": float} (already aggregated per level, e.g. medians over seeds).
    """
    ok = [r for r in level_results if all(k in r for k in ("level", "mae"))]
    ok.sort(key=lambda r: r["level"])
    levels = [r["level"] for r in ok]
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.6))
    for ax, metric in zip(axes, ("mae", "psnr", "ssim")):
        vals = [r.get(metric, float("nan")) for r in ok]
        ax.plot(levels, vals, marker="o")
        ax.set_xlabel("training subjects")
        ax.set_ylabel(metric.upper())
        ax.grid(alpha=0.3)
        if metric == "mae":
            diffs = np.diff(vals)
            trend = "non-increasing" if np.all(diffs <= 0) else "not monotone"
            ax.set_title(f"MAE vs supervision ({trend})", fontsize=10)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
