"""Label-free training loop and checkpointing.

The model never sees HR reference fields: every gradient comes from physics
residuals of its own output. Adam with a plateau scheduler runs first; an
optional L-BFGS stage then polishes the best Adam state with full-batch
strong-Wolfe steps. Both stages track the best-seen loss, so the final
parameters are never worse than where each stage started.
"""

from __future__ import annotations

import copy
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from .data import Dataset, split_indices
from .elasticity import DomainSpec, LoadCase, MaterialParams
from .errors import CheckpointError, TrainingError
from .models import ModelConfig, Normalizer, build_model
from .residuals import LossBreakdown, LossWeights, total_loss

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    learning_rate: float = 1e-4
    batch_size: int = 8
    seed: int = 0
    plateau_patience: int = 30
    plateau_factor: float = 0.5
    min_lr: float = 1e-6
    lbfgs_max_iters: int = 500
    lbfgs_tolerance: float = 1e-8
    lbfgs_window: int = 5
    dtype: str = "float32"
    eval_every: int = 0  # 0 disables periodic test-split evaluation

    def torch_dtype(self) -> torch.dtype:
        try:
            return {"float32": torch.float32, "float64": torch.float64}[self.dtype]
        except KeyError:
            raise TrainingError(f"unsupported training dtype {self.dtype!r}") from None


@dataclass
class TrainData:
    """LR inputs and load parameters for one split. Never holds HR fields."""

    inputs: torch.Tensor  # (N, 5, ny, nx), raw field values
    loads: list[LoadCase]
    spacing: tuple[float, float]
    mat: MaterialParams
    domain: DomainSpec
    u_ref: float
    indices: list[int] = field(default_factory=list)

    @classmethod
    def from_dataset(cls, dataset: Dataset, indices, dtype=torch.float32) -> "TrainData":
        indices = list(indices)
        stack = np.stack([dataset.samples[i].lr.values for i in indices])
        return cls(
            inputs=torch.as_tensor(stack, dtype=dtype),
            loads=[dataset.load_case(i) for i in indices],
            spacing=dataset.samples[indices[0]].lr.spacing,
            mat=dataset.material,
            domain=dataset.domain,
            u_ref=dataset.u_ref,
            indices=indices,
        )

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass
class TrainHistory:
    epochs: list[dict] = field(default_factory=list)
    test: list[dict] = field(default_factory=list)
    lbfgs: dict | None = None
    best_epoch: int = 0
    best_loss: float = math.inf

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "test": self.test,
            "lbfgs": self.lbfgs,
            "best_epoch": self.best_epoch,
            "best_loss": self.best_loss,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainHistory":
        return cls(
            epochs=list(d.get("epochs", [])),
            test=list(d.get("test", [])),
            lbfgs=d.get("lbfgs"),
            best_epoch=int(d.get("best_epoch", 0)),
            best_loss=float(d.get("best_loss", math.inf)),
        )


def split_dataset(dataset: Dataset, ratio: float = 0.8, seed: int = 0):
    """Deterministic (train_indices, test_indices) split of a dataset."""
    return split_indices(len(dataset), ratio, seed)


def _output_spacing(out: torch.Tensor, domain: DomainSpec) -> tuple[float, float]:
    return domain.width / out.shape[-1], domain.height / out.shape[-2]


def _batch_loss(
    model, normalizer: Normalizer, data: TrainData, idx, weights: LossWeights
) -> LossBreakdown:
    dtype = next(model.parameters()).dtype
    x = normalizer.normalize(data.inputs[idx].to(dtype))
    out = normalizer.denormalize(model(x))
    loads = [data.loads[i] for i in idx]
    return total_loss(
        out, _output_spacing(out, data.domain), weights, data.mat, data.domain, loads
    )


def evaluate_physics_loss(
    model, normalizer: Normalizer, data: TrainData, weights: LossWeights, chunk: int = 8
) -> float:
    """Mean physics loss of model reconstructions over a split, without grads."""
    model.eval()
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(data), chunk):
            idx = list(range(start, min(start + chunk, len(data))))
            part = _batch_loss(model, normalizer, data, idx, weights)
            total += float(part.total) * len(idx)
    model.train()
    return total / len(data)


def train(
    model,
    normalizer: Normalizer,
    data: TrainData,
    config: TrainConfig,
    *,
    weights: LossWeights | None = None,
    eval_data: TrainData | None = None,
    log_fn=None,
) -> TrainHistory:
    """Adam physics-loss training; leaves the model at its best-loss state."""
    if len(data) == 0:
        raise TrainingError("empty training split")
    if weights is None:
        weights = LossWeights.from_problem(data.mat, data.domain, data.u_ref)
    torch.manual_seed(config.seed)
    dtype = config.torch_dtype()
    model.to(dtype)
    data.inputs = data.inputs.to(dtype)

    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer,
        mode="min",
        factor=config.plateau_factor,
        patience=config.plateau_patience,
        min_lr=config.min_lr,
    )
    rng = np.random.default_rng(config.seed)
    history = TrainHistory()
    best_state = None
    n = len(data)
    keys = ("total", "pde", "constitutive", "dirichlet", "neumann")

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        perm = rng.permutation(n)
        sums = dict.fromkeys(keys, 0.0)
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size].tolist()
            optimizer.zero_grad()
            breakdown = _batch_loss(model, normalizer, data, idx, weights)
            loss = breakdown.total
            if not torch.isfinite(loss):
                qs = [data.loads[i].q for i in idx]
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}, "
                    f"q values {qs}"
                )
            loss.backward()
            optimizer.step()
            vals = breakdown.floats()
            for k in keys:
                sums[k] += vals[k] * len(idx)
        record = {k: sums[k] / n for k in keys}
        record["epoch"] = epoch
        record["learning_rate"] = optimizer.param_groups[0]["lr"]
        record["seconds"] = time.perf_counter() - t0
        history.epochs.append(record)
        scheduler.step(record["total"])
        if record["total"] < history.best_loss:
            history.best_loss = record["total"]
            history.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
        if eval_data is not None and config.eval_every and epoch % config.eval_every == 0:
            history.test.append(
                {
                    "epoch": epoch,
                    "total": evaluate_physics_loss(model, normalizer, eval_data, weights),
                }
            )
        if log_fn is not None:
            log_fn(record)

    if best_state is not None:
        model.load_state_dict(best_state)
    return history


def minimize_lbfgs(
    params,
    closure_fn,
    *,
    max_iters: int = 500,
    tolerance: float = 1e-8,
    window: int = 5,
) -> dict:
    """Strong-Wolfe L-BFGS with best-state tracking and a plateau stop rule.

    ``closure_fn`` must compute the objective, backpropagate into ``params``
    (gradients are zeroed beforehand), and return the loss value. Stops after
    ``window`` consecutive iterations whose relative loss change is below
    ``tolerance``, or at ``max_iters``. Parameters end at the best value seen,
    so the exit loss never exceeds the entry loss.
    """
    params = list(params)
    optimizer = torch.optim.LBFGS(
        params,
        lr=1.0,
        max_iter=1,
        history_size=50,
        line_search_fn="strong_wolfe",
        tolerance_grad=0.0,
        tolerance_change=0.0,
    )

    def closure():
        optimizer.zero_grad()
        return float(closure_fn())

    def snapshot():
        return [p.detach().clone() for p in params]

    def restore(saved):
        with torch.no_grad():
            for p, s in zip(params, saved):
                p.copy_(s)

    losses: list[float] = []
    best_loss = math.inf
    best_params = snapshot()
    warning = None
    iterations = 0
    streak = 0
    prev = None
    for _ in range(max_iters):
        entry = optimizer.step(closure)  # loss before this iteration's update
        entry = float(entry)
        if not math.isfinite(entry):
            warning = "non-finite loss during line search; restored best state"
            break
        losses.append(entry)
        if entry < best_loss:
            best_loss = entry
            best_params = snapshot()
        iterations += 1
        if prev is not None:
            rel = abs(entry - prev) / max(abs(prev), 1e-30)
            streak = streak + 1 if rel < tolerance else 0
            if streak >= window:
                break
        prev = entry

    final = float(closure())
    if math.isfinite(final):
        losses.append(final)
        if final < best_loss:
            best_loss = final
            best_params = snapshot()
    if final != best_loss or not math.isfinite(final):
        restore(best_params)
        restored = True
    else:
        restored = False
    return {
        "losses": losses,
        "iterations": iterations,
        "entry_loss": losses[0] if losses else math.nan,
        "exit_loss": best_loss,
        "restored": restored,
        "warning": warning,
    }


def lbfgs_finetune(
    model,
    normalizer: Normalizer,
    data: TrainData,
    config: TrainConfig,
    *,
    weights: LossWeights | None = None,
    chunk: int = 8,
) -> dict:
    """Full-batch L-BFGS polish of a trained model on the physics loss.

    The objective is the mean loss over the whole split, accumulated in
    chunks so each closure evaluation stays within memory. Runs in double
    precision regardless of the training dtype: strong-Wolfe line searches
    stall at the single-precision noise floor. The model is left in double.
    """
    if weights is None:
        weights = LossWeights.from_problem(data.mat, data.domain, data.u_ref)
    model.to(torch.float64)
    data = replace(data, inputs=data.inputs.to(torch.float64))
    n = len(data)
    chunks = [list(range(s, min(s + chunk, n))) for s in range(0, n, chunk)]

    def closure_fn():
        total = 0.0
        for idx in chunks:
            part = _batch_loss(model, normalizer, data, idx, weights)
            scaled = part.total * (len(idx) / n)
            scaled.backward()
            total += float(scaled.detach())
        return total

    model.train()
    return minimize_lbfgs(
        model.parameters(),
        closure_fn,
        max_iters=config.lbfgs_max_iters,
        tolerance=config.lbfgs_tolerance,
        window=config.lbfgs_window,
    )


def save_checkpoint(
    path,
    model,
    model_config: ModelConfig,
    normalizer: Normalizer,
    train_config: TrainConfig,
    history: TrainHistory,
    extra: dict | None = None,
):
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": model_config.to_dict(),
        "state_dict": model.state_dict(),
        "normalizer": normalizer.to_dict(),
        "train_config": asdict(train_config),
        "history": history.to_dict(),
        "extra": extra or {},
    }
    torch.save(payload, path)


@dataclass
class Checkpoint:
    model: torch.nn.Module
    model_config: ModelConfig
    normalizer: Normalizer
    train_config: TrainConfig
    history: TrainHistory
    extra: dict


def load_checkpoint(path) -> Checkpoint:
    """Rebuild a model bundle from disk; any malformed content raises CheckpointError."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"{path} is not a checkpoint produced by this package")
    version = payload["format_version"]
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint format_version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )
    try:
        model_config = ModelConfig.from_dict(payload["model_config"])
        model = build_model(model_config)
        dtypes = {p.dtype for p in payload["state_dict"].values()}
        if dtypes:
            model.to(next(iter(dtypes)))  # before load: load_state_dict casts silently
        model.load_state_dict(payload["state_dict"])
        normalizer = Normalizer.from_dict(payload["normalizer"])
        train_config = TrainConfig(**payload["train_config"])
        history = TrainHistory.from_dict(payload["history"])
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
    model.eval()
    return Checkpoint(
        model=model,
        model_config=model_config,
        normalizer=normalizer,
        train_config=train_config,
        history=history,
        extra=payload.get("extra", {}),
    )
