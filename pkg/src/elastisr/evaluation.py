"""Reconstruction quality metrics, structured reports, and contour panels.

Every method (bicubic interpolation and each trained model) reconstructs the
HR grid from the LR input; errors are relative L2 norms against the HR
reference per channel. The HR fields are read here and only here; training
never touches them. Reports serialize to JSON plus a plain-text table and tie
themselves to a dataset via the manifest hash.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .errors import EvaluationError
from .fem import CHANNELS, FieldGrid
from .residuals import LossWeights, total_loss
from .training import Checkpoint

REPORT_JSON = "report.json"
REPORT_TEXT = "report.txt"
REPORT_VERSION = 1


def bicubic_upsample(grid: FieldGrid, scale: int) -> FieldGrid:
    """Bicubic interpolation onto a grid ``scale`` times finer per axis.

    ``align_corners=False`` reproduces the cell-center node convention: output
    node j sits at input coordinate (j + 1/2)/scale - 1/2.
    """
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    t = torch.as_tensor(grid.values, dtype=torch.float64).unsqueeze(0)
    out = F.interpolate(t, scale_factor=scale, mode="bicubic", align_corners=False)
    hx, hy = grid.spacing
    return FieldGrid(out[0].numpy(), (hx / scale, hy / scale), q=grid.q)


def relative_l2(pred: np.ndarray, ref: np.ndarray) -> float:
    """||pred - ref||_2 / ||ref||_2 over all grid nodes."""
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {ref.shape}")
    denom = float(np.linalg.norm(ref.ravel()))
    if denom == 0.0:
        raise EvaluationError("reference field has zero norm; relative error undefined")
    return float(np.linalg.norm((pred - ref).ravel()) / denom)


def model_reconstruction(checkpoint: Checkpoint, lr: FieldGrid) -> FieldGrid:
    """Run one LR grid through a trained model; returns raw (denormalized) fields."""
    model = checkpoint.model
    dtype = next(model.parameters()).dtype
    x = torch.as_tensor(lr.values, dtype=dtype).unsqueeze(0)
    model.eval()
    with torch.no_grad():
        out = checkpoint.normalizer.denormalize(
            model(checkpoint.normalizer.normalize(x))
        )
    values = out[0].to(torch.float64).numpy()
    sy = out.shape[2] // lr.values.shape[1]
    sx = out.shape[3] // lr.values.shape[2]
    hx, hy = lr.spacing
    return FieldGrid(values, (hx / sx, hy / sy), q=lr.q)


@dataclass
class EvalReport:
    """Per-sample and aggregate reconstruction errors plus physics losses."""

    metadata: dict = field(default_factory=dict)
    samples: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)

    @property
    def methods(self) -> list[str]:
        return list(self.aggregates)

    def sample_entry(self, index: int) -> dict:
        for entry in self.samples:
            if entry["index"] == index:
                return entry
        raise EvaluationError(f"sample {index} not present in report")

    def to_dict(self) -> dict:
        return {
            "format_version": REPORT_VERSION,
            "metadata": self.metadata,
            "samples": self.samples,
            "aggregates": self.aggregates,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        version = d.get("format_version")
        if version != REPORT_VERSION:
            raise EvaluationError(f"report format_version {version} unsupported")
        return cls(
            metadata=d.get("metadata", {}),
            samples=d.get("samples", []),
            aggregates=d.get("aggregates", {}),
        )

    def to_text(self) -> str:
        lines = ["reconstruction error report", "=" * 64]
        for key in sorted(self.metadata):
            lines.append(f"{key}: {self.metadata[key]}")
        lines.append(f"samples evaluated: {len(self.samples)}")
        lines.append("")
        header = ["method".ljust(10)] + [c.rjust(10) for c in CHANNELS] + ["mean".rjust(10)]
        lines.append("mean relative L2 error by channel")
        lines.append("".join(header))
        for method, agg in self.aggregates.items():
            row = [method.ljust(10)]
            row += [f"{agg['mean'][c]:.4g}".rjust(10) for c in CHANNELS]
            row += [f"{agg['mean']['mean']:.4g}".rjust(10)]
            lines.append("".join(row))
        lines.append("")
        lines.append("mean physics loss of reconstructions")
        for method, agg in self.aggregates.items():
            lines.append(f"{method.ljust(10)}{agg['physics_total_mean']:.6g}")
        return "\n".join(lines) + "\n"

    def save(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / REPORT_JSON).write_text(json.dumps(self.to_dict(), indent=2))
        (out_dir / REPORT_TEXT).write_text(self.to_text())
        return out_dir

    @classmethod
    def load(cls, path) -> "EvalReport":
        path = Path(path)
        if path.is_dir():
            path = path / REPORT_JSON
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise EvaluationError(f"unreadable report {path}: {exc}") from exc


def _infer_scale(lr: FieldGrid, hr: FieldGrid) -> int:
    lr_nx, lr_ny = lr.resolution
    hr_nx, hr_ny = hr.resolution
    if hr_nx % lr_nx or hr_ny % lr_ny or hr_nx // lr_nx != hr_ny // lr_ny:
        raise EvaluationError(
            f"HR resolution {hr.resolution} is not an integer multiple of LR {lr.resolution}"
        )
    return hr_nx // lr_nx


def evaluate(
    dataset,
    checkpoints: dict[str, Checkpoint],
    indices=None,
    *,
    include_bicubic: bool = True,
    weights: LossWeights | None = None,
    metadata: dict | None = None,
) -> EvalReport:
    """Score reconstructions of every requested sample against HR references.

    Raises :class:`EvaluationError` if any HR reference contains non-finite
    values; a poisoned dataset must fail here, loudly, not skew metrics.
    """
    if indices is None:
        indices = dataset.test_indices or list(range(len(dataset)))
    indices = list(indices)
    if not indices:
        raise EvaluationError("no samples to evaluate")
    if weights is None:
        weights = LossWeights.from_problem(dataset.material, dataset.domain, dataset.u_ref)

    methods = (["bicubic"] if include_bicubic else []) + list(checkpoints)
    sample_rows = []
    for i in indices:
        s = dataset.samples[i]
        if not np.all(np.isfinite(s.hr.values)):
            raise EvaluationError(
                f"sample {i} (q={s.q}): HR reference contains non-finite values"
            )
        scale = _infer_scale(s.lr, s.hr)
        recons: dict[str, FieldGrid] = {}
        if include_bicubic:
            recons["bicubic"] = bicubic_upsample(s.lr, scale)
        for name, ck in checkpoints.items():
            recons[name] = model_reconstruction(ck, s.lr)
        row = {"index": i, "q": s.q, "errors": {}, "physics": {}}
        for name, grid in recons.items():
            errs = {
                c: relative_l2(grid.channel(c), s.hr.channel(c)) for c in CHANNELS
            }
            errs["mean"] = sum(errs[c] for c in CHANNELS) / len(CHANNELS)
            row["errors"][name] = errs
            breakdown = total_loss(
                torch.as_tensor(grid.values, dtype=torch.float64),
                grid.spacing,
                weights,
                dataset.material,
                dataset.domain,
                dataset.load_case(i),
            )
            row["physics"][name] = breakdown.floats()
        sample_rows.append(row)

    aggregates = {}
    for name in methods:
        agg = {"mean": {}, "median": {}}
        for c in list(CHANNELS) + ["mean"]:
            vals = [r["errors"][name][c] for r in sample_rows]
            agg["mean"][c] = sum(vals) / len(vals)
            agg["median"][c] = statistics.median(vals)
        agg["physics_total_mean"] = sum(
            r["physics"][name]["total"] for r in sample_rows
        ) / len(sample_rows)
        aggregates[name] = agg

    meta = {
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "channels": list(CHANNELS),
        "indices": indices,
        "loss_weights": vars(weights).copy(),
    }
    if metadata:
        meta.update(metadata)
    return EvalReport(metadata=meta, samples=sample_rows, aggregates=aggregates)


def render_contours(
    dataset,
    checkpoints: dict[str, Checkpoint],
    report: EvalReport,
    sample_index: int,
    out_dir,
    *,
    include_bicubic: bool = True,
) -> Path:
    """Draw the LR input, HR reference, and every reconstruction of one sample.

    One row per field channel, one column per source; each reconstruction
    panel is annotated with its relative L2 error from the report, so the
    figure and the report always agree.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    entry = report.sample_entry(sample_index)
    s = dataset.samples[sample_index]
    scale = _infer_scale(s.lr, s.hr)
    columns: list[tuple[str, FieldGrid]] = [("LR input", s.lr), ("HR reference", s.hr)]
    if include_bicubic:
        columns.append(("bicubic", bicubic_upsample(s.lr, scale)))
    for name, ck in checkpoints.items():
        columns.append((name, model_reconstruction(ck, s.lr)))

    ncols = len(columns)
    nrows = len(CHANNELS)
    fig, axes = plt.subplots(
        nrows, ncols, figsize=(3.0 * ncols, 2.6 * nrows), squeeze=False
    )
    w = dataset.domain.width
    h = dataset.domain.height
    for r, channel in enumerate(CHANNELS):
        fields = [grid.channel(channel) for _, grid in columns]
        vmin = min(float(f.min()) for f in fields)
        vmax = max(float(f.max()) for f in fields)
        if vmax - vmin < 1e-12:
            vmin, vmax = vmin - 1e-12, vmax + 1e-12
        levels = np.linspace(vmin, vmax, 21)
        for c, (name, grid) in enumerate(columns):
            ax = axes[r][c]
            X, Y = grid.node_coords()
            im = ax.contourf(X, Y, grid.channel(channel), levels=levels, cmap="jet")
            ax.set_xlim(0, w)
            ax.set_ylim(0, h)
            ax.set_aspect("equal")
            ax.set_xticks([])
            ax.set_yticks([])
            if r == 0:
                ax.set_title(name, fontsize=10)
            if c == 0:
                ax.set_ylabel(channel, fontsize=10)
            if name in entry["errors"]:
                err = entry["errors"][name][channel]
                ax.text(
                    0.03,
                    0.03,
                    f"e={err:.4g}",
                    transform=ax.transAxes,
                    fontsize=8,
                    color="white",
                    bbox=dict(facecolor="black", alpha=0.55, pad=1.5),
                )
        fig.colorbar(im, ax=[axes[r][c] for c in range(ncols)], shrink=0.9)

    fig.suptitle(f"sample {sample_index}, q={s.q:.4g}", fontsize=11)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"contours_sample_{sample_index:04d}.png"
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path
