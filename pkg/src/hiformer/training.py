"""Optimization loop, metrics, and the experiment protocol.

Training minimizes MSE (optionally MAE) on Z-scored values with Adam,
shuffling windows each epoch under a fixed seed, tracking validation loss
and returning the best-on-validation parameters.  Metrics stay in
normalized units throughout.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import NormStats, WindowedDataset, WindowSplit, compute_stats  # noqa: F401  (re-exported surface)
from .errors import ConfigError, NanLossError, NumericsError, ShapeError
from .ioutil import atomic_path
from .model import HiformerParams, ModelConfig, forward_batch
from .tensor import Tensor
from .vmd import VmdConfig, decompose_windows

_LOSS_KINDS = ("mse", "mae")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    seed: int = 0
    grad_clip: float | None = None
    early_stop_patience: int | None = None
    loss: str = "mse"

    def validate(self) -> None:
        if self.lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.loss not in _LOSS_KINDS:
            raise ConfigError(f"loss must be one of {_LOSS_KINDS}, got {self.loss!r}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be positive when set, got {self.grad_clip}")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr, "batch_size": self.batch_size, "epochs": self.epochs,
            "seed": self.seed, "grad_clip": self.grad_clip,
            "early_stop_patience": self.early_stop_patience, "loss": self.loss,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


class Adam:
    """Adam with bias correction; moments start at zero."""

    def __init__(self, tensors: list[Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.tensors = list(tensors)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(t.data) for t in self.tensors]
        self.v = [np.zeros_like(t.data) for t in self.tensors]

    def zero_grad(self) -> None:
        for t in self.tensors:
            t.zero_grad()

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        for i, t in enumerate(self.tensors):
            if t.grad is None:
                continue
            if t.grad.shape != t.data.shape:
                raise ShapeError(f"gradient shape {t.grad.shape} != parameter shape {t.data.shape}")
            g = t.grad
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            m_hat = self.m[i] / (1.0 - b1**self.step_count)
            v_hat = self.v[i] / (1.0 - b2**self.step_count)
            t.data = t.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_gradients(tensors: list[Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    total = 0.0
    for t in tensors:
        if t.grad is not None:
            total += float((t.grad * t.grad).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for t in tensors:
            if t.grad is not None:
                t.grad *= scale
    return norm


@dataclass
class PreparedSplit:
    """Model-ready arrays for one split: windowed inputs plus per-window modes."""

    x: np.ndarray       # (n, P, N)
    w: np.ndarray       # (n, P, N, C)
    y: np.ndarray       # (n, Q, N)
    imf: np.ndarray     # (n, P, N, M)
    starts: np.ndarray  # (n,)

    @property
    def n_windows(self) -> int:
        return self.x.shape[0]


@dataclass
class PreparedDataset:
    train: PreparedSplit
    val: PreparedSplit
    test: PreparedSplit
    e_node: np.ndarray
    stats: NormStats
    history_len: int
    horizon: int
    timestamps: np.ndarray
    turbine_ids: list[str] = field(default_factory=list)

    def split(self, name: str) -> PreparedSplit:
        try:
            return {"train": self.train, "val": self.val, "test": self.test}[name]
        except KeyError:
            raise ConfigError(f"unknown split {name!r}; expected train/val/test") from None


def prepare_inputs(windowed: WindowedDataset, e_node: np.ndarray, vmd_cfg: VmdConfig) -> PreparedDataset:
    """Decompose every history window per turbine and bundle model inputs.

    Decomposition runs per window on normalized power, so no sample ever
    incorporates information from beyond its own history.
    """
    splits = {}
    for name in ("train", "val", "test"):
        ws: WindowSplit = windowed.split(name)
        if ws.n_windows == 0:
            imf = np.zeros(ws.x.shape + (vmd_cfg.num_modes,))
        else:
            imf = decompose_windows(ws.x, vmd_cfg)
        splits[name] = PreparedSplit(x=ws.x, w=ws.w, y=ws.y, imf=imf, starts=ws.starts)
    return PreparedDataset(
        train=splits["train"], val=splits["val"], test=splits["test"],
        e_node=np.asarray(e_node), stats=windowed.stats,
        history_len=windowed.history_len, horizon=windowed.horizon,
        timestamps=windowed.timestamps, turbine_ids=list(windowed.turbine_ids),
    )


def _loss_tensor(pred: Tensor, target: np.ndarray, kind: str) -> Tensor:
    diff = T.sub(pred, Tensor(target))
    if kind == "mae":
        return T.tmean(T.absval(diff))
    return T.tmean(T.mul(diff, diff))


def predict_split(params: HiformerParams, split: PreparedSplit, e_node, cfg: ModelConfig,
                  batch_size: int = 256) -> np.ndarray:
    """Eval-mode forecasts for every window of a split: (n, Q, N), normalized."""
    outs = []
    for lo in range(0, split.n_windows, batch_size):
        hi = min(lo + batch_size, split.n_windows)
        out = forward_batch(split.x[lo:hi], split.w[lo:hi], split.imf[lo:hi], e_node, params, cfg)
        outs.append(out.data)
    return np.concatenate(outs, axis=0)


def eval_loss(params: HiformerParams, split: PreparedSplit, e_node, cfg: ModelConfig,
              kind: str = "mse", batch_size: int = 256) -> float:
    pred = predict_split(params, split, e_node, cfg, batch_size)
    err = pred - split.y
    return float(np.mean(np.abs(err)) if kind == "mae" else np.mean(err * err))


@dataclass
class MetricsReport:
    """MAE/MSE in normalized units, per horizon step, per turbine, aggregated."""

    mae: float
    mse: float
    mae_per_horizon: np.ndarray
    mse_per_horizon: np.ndarray
    mae_per_turbine: np.ndarray
    mse_per_turbine: np.ndarray
    n_windows: int

    def __post_init__(self):
        if self.mae < 0 or self.mse < 0:
            raise NumericsError("negative error metric")
        if self.mae > np.sqrt(self.mse) + 1e-12:
            raise NumericsError(f"mae {self.mae} exceeds sqrt(mse) {np.sqrt(self.mse)}")

    @classmethod
    def from_errors(cls, err: np.ndarray) -> "MetricsReport":
        if err.size == 0:
            raise ConfigError("cannot evaluate an empty split")
        ae, se = np.abs(err), err * err
        return cls(
            mae=float(ae.mean()), mse=float(se.mean()),
            mae_per_horizon=ae.mean(axis=(0, 2)), mse_per_horizon=se.mean(axis=(0, 2)),
            mae_per_turbine=ae.mean(axis=(0, 1)), mse_per_turbine=se.mean(axis=(0, 1)),
            n_windows=err.shape[0],
        )

    def to_dict(self) -> dict:
        return {
            "mae": self.mae, "mse": self.mse,
            "mae_per_horizon": [float(x) for x in self.mae_per_horizon],
            "mse_per_horizon": [float(x) for x in self.mse_per_horizon],
            "mae_per_turbine": [float(x) for x in self.mae_per_turbine],
            "mse_per_turbine": [float(x) for x in self.mse_per_turbine],
            "n_windows": self.n_windows,
        }


def evaluate(params: HiformerParams, split: PreparedSplit, e_node, cfg: ModelConfig,
             batch_size: int = 256) -> MetricsReport:
    """Forecast a held-out split and report normalized-space metrics."""
    pred = predict_split(params, split, e_node, cfg, batch_size)
    return MetricsReport.from_errors(pred - split.y)


def persistence_baseline(split: PreparedSplit) -> MetricsReport:
    """Repeat each window's last observed power across the horizon."""
    if split.n_windows == 0:
        raise ConfigError("cannot evaluate an empty split")
    pred = np.repeat(split.x[:, -1:, :], split.y.shape[1], axis=1)
    return MetricsReport.from_errors(pred - split.y)


@dataclass
class TrainResult:
    history: list[dict]
    best_epoch: int
    best_val_loss: float


def train(params: HiformerParams, prepared: PreparedDataset, train_cfg: TrainConfig,
          model_cfg: ModelConfig) -> TrainResult:
    """Seeded minibatch training; leaves ``params`` at the best validation epoch."""
    train_cfg.validate()
    model_cfg.validate()
    for name in ("train", "val"):
        if prepared.split(name).n_windows == 0:
            raise ConfigError(f"split {name!r} is too short for one "
                              f"{prepared.history_len}+{prepared.horizon} window")
    rng = np.random.default_rng(train_cfg.seed)
    optimizer = Adam(params.tensors(), lr=train_cfg.lr)
    split = prepared.train
    e_node = prepared.e_node

    history: list[dict] = []
    best_val = np.inf
    best_epoch = -1
    best_state = params.state_arrays()
    since_best = 0

    for epoch in range(train_cfg.epochs):
        order = rng.permutation(split.n_windows)
        total, seen = 0.0, 0
        for lo in range(0, split.n_windows, train_cfg.batch_size):
            idx = order[lo : lo + train_cfg.batch_size]
            try:
                with T.Tape() as tape:
                    out = forward_batch(
                        split.x[idx], split.w[idx], split.imf[idx], e_node,
                        params, model_cfg, training=True, rng=rng,
                    )
                    loss = _loss_tensor(out, split.y[idx], train_cfg.loss)
                    loss_val = loss.item()
                    if not np.isfinite(loss_val):
                        raise NanLossError(_nan_diagnostics(epoch, lo // train_cfg.batch_size, params))
                    optimizer.zero_grad()
                    tape.backward(loss)
            except NumericsError as exc:
                if isinstance(exc, NanLossError):
                    raise
                raise NanLossError(_nan_diagnostics(epoch, lo // train_cfg.batch_size, params)) from exc
            if train_cfg.grad_clip is not None:
                clip_gradients(params.tensors(), train_cfg.grad_clip)
            optimizer.step()
            total += loss_val * idx.size
            seen += idx.size
        train_loss = total / max(seen, 1)
        val_loss = eval_loss(params, prepared.val, e_node, model_cfg, train_cfg.loss)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": train_cfg.lr})
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = params.state_arrays()
            since_best = 0
        else:
            since_best += 1
            if train_cfg.early_stop_patience is not None and since_best >= train_cfg.early_stop_patience:
                break

    params.load_state_arrays(best_state)
    return TrainResult(history=history, best_epoch=best_epoch, best_val_loss=float(best_val))


def _nan_diagnostics(epoch: int, batch: int, params: HiformerParams) -> str:
    norms = sorted(
        ((float(np.max(np.abs(t.data))) if t.size else 0.0, name) for name, t in params.named()),
        reverse=True,
    )
    worst = ", ".join(f"{name}={mag:.3e}" for mag, name in norms[:3])
    return f"non-finite loss at epoch {epoch}, batch {batch}; largest parameter magnitudes: {worst}"


def write_history_csv(history: list[dict], path) -> None:
    """Write per-epoch (epoch, train_loss, val_loss, lr) rows; full float precision."""
    with atomic_path(path) as tmp:
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for row in history:
                writer.writerow([
                    row["epoch"], repr(float(row["train_loss"])),
                    repr(float(row["val_loss"])), repr(float(row["lr"])),
                ])


def read_history_csv(path) -> list[dict]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append({
                "epoch": int(row["epoch"]), "train_loss": float(row["train_loss"]),
                "val_loss": float(row["val_loss"]), "lr": float(row["lr"]),
            })
    return out
