"""Loss, pose metrics, sequence training loop, evaluation, K-fold report.

The loss is the sum of the Euclidean norms of the translation error (meters)
and of the rotation-vector error converted to degrees:

    loss = ||t_pred - t_gt||_2 + ||(r_pred - r_gt) * 180/pi||_2

averaged over the frames of a batch. Position error is the plain Euclidean
norm; rotation error is the quaternion geodesic 2*arccos(|q_pred . q_gt|)
in degrees.

Training consumes aligned chunks of `seq_len` consecutive frames: spiking
state is reset per chunk, all frames of the chunk contribute to one
optimizer step, the schedule is applied per epoch.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import SEQ_LEN, AugmentConfig, FoldPlan
from .geometry import quat_angle_deg, rotvec_to_quat
from .nn import functional as F
from .nn.optim import Adam, LrSchedule, lr_at
from .nn.tensor import Tensor
from .pose_net import PoseNet, PoseNetConfig, build, fuse_bn

RAD2DEG = 180.0 / math.pi


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    net: PoseNetConfig
    batch_size: int = 100  # frames per optimizer step (batch_size/seq_len chunks)
    epochs: int = 100
    base_lr: float = 1e-3
    seq_len: int = SEQ_LEN
    seed: int = 0
    augment: AugmentConfig | None = None
    eval_every: int = 1  # epochs between test-metric evaluations in the log

    def __post_init__(self):
        if self.batch_size < self.seq_len or self.batch_size % self.seq_len:
            raise ValueError("batch_size must be a positive multiple of seq_len")
        if self.epochs < 1 or self.base_lr <= 0:
            raise ValueError("epochs must be >= 1 and base_lr > 0")

    def schedule(self) -> LrSchedule:
        if self.net.scheduler == "step":
            return LrSchedule("step", base_lr=self.base_lr, step_size=10, gamma=0.5)
        return LrSchedule("cosine", base_lr=self.base_lr, t_max=self.epochs,
                          eta_min=1e-6)


@dataclass
class Metrics:
    position_errors: np.ndarray
    rotation_errors: np.ndarray

    @property
    def mean_position_error_m(self) -> float:
        return float(self.position_errors.mean())

    @property
    def mean_rotation_error_deg(self) -> float:
        return float(self.rotation_errors.mean())


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    test_et: float  # nan when not evaluated this epoch
    test_er: float

    def csv_row(self) -> str:
        return f"{self.epoch},{self.lr!r},{self.train_loss!r},{self.test_et!r},{self.test_er!r}"


# ------------------------------------------------------------------ metrics

def position_error(pred, gt) -> np.ndarray:
    """E_t: Euclidean norm of the translation difference, per sample."""
    pred = np.asarray(pred, np.float64).reshape(-1, 3)
    gt = np.asarray(gt, np.float64).reshape(-1, 3)
    return np.linalg.norm(pred - gt, axis=-1)


def rotation_error(pred, gt) -> np.ndarray:
    """E_r: geodesic angle between the two rotations, in degrees, per sample."""
    pred = np.asarray(pred, np.float64).reshape(-1, 3)
    gt = np.asarray(gt, np.float64).reshape(-1, 3)
    return quat_angle_deg(rotvec_to_quat(pred), rotvec_to_quat(gt))


def rotation_error_literal(pred, gt) -> np.ndarray:
    """Diagnostic only: 2*arccos(||r_pred - r_gt||) — evaluates to 180 deg for
    identical rotations, so it is never used for reporting."""
    pred = np.asarray(pred, np.float64).reshape(-1, 3)
    gt = np.asarray(gt, np.float64).reshape(-1, 3)
    d = np.linalg.norm(pred - gt, axis=-1)
    return np.degrees(2.0 * np.arccos(np.clip(d, -1.0, 1.0)))


def pose_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Differentiable batch loss over (N,6) predictions vs (N,6) targets."""
    target = np.asarray(target, pred.data.dtype).reshape(-1, 6)
    if not np.isfinite(target).all():
        raise ValueError("non-finite target pose")
    if not np.isfinite(pred.data).all():
        raise ValueError("non-finite prediction")
    diff = F.sub(pred, Tensor(target, dtype=pred.data.dtype))
    trans = F.euclid_norm(F.mul(diff, Tensor(_trans_mask(pred.data.dtype))), axis=1)
    rot = F.euclid_norm(F.mul(diff, Tensor(_rot_mask(pred.data.dtype))), axis=1)
    return F.mean(F.add(trans, rot))


def _trans_mask(dtype):
    return np.array([[1, 1, 1, 0, 0, 0]], dtype)


def _rot_mask(dtype):
    return np.array([[0, 0, 0, RAD2DEG, RAD2DEG, RAD2DEG]], dtype)


def pose_loss_value(pred: np.ndarray, gt: np.ndarray) -> float:
    """Same loss on plain arrays (no graph)."""
    pred = np.asarray(pred, np.float64).reshape(-1, 6)
    gt = np.asarray(gt, np.float64).reshape(-1, 6)
    t = np.linalg.norm(pred[:, :3] - gt[:, :3], axis=1)
    r = np.linalg.norm((pred[:, 3:] - gt[:, 3:]) * RAD2DEG, axis=1)
    return float(np.mean(t + r))


# --------------------------------------------------------------- evaluation

def predict(model: PoseNet, frames: np.ndarray, indices: np.ndarray | None = None,
            seq_len: int = SEQ_LEN, chunk_batch: int = 16) -> np.ndarray:
    """(N,6) predictions; spiking state resets per seq_len chunk.

    Full chunks run batched; a trailing partial chunk runs on its own.
    """
    if indices is None:
        indices = np.arange(len(frames))
    indices = np.asarray(indices)
    was_training = model.training
    model.eval()
    preds = np.empty((len(indices), 6), np.float64)
    full = (len(indices) // seq_len) * seq_len
    chunk_idx = indices[:full].reshape(-1, seq_len)
    for start in range(0, len(chunk_idx), chunk_batch):
        group = chunk_idx[start:start + chunk_batch]  # (B, T)
        seqs = frames[group.reshape(-1)].reshape(len(group), seq_len,
                                                 *frames.shape[1:])
        seqs = np.moveaxis(seqs, 0, 1).astype(np.float32)  # (T, B, 2, H, W)
        out = model.forward_sequence(seqs)  # (T, B, 6)
        preds[start * seq_len:(start + len(group)) * seq_len] = \
            np.moveaxis(out, 0, 1).reshape(-1, 6)
    if full < len(indices):
        tail = indices[full:]
        out = model.forward_sequence(frames[tail].astype(np.float32))
        preds[full:] = out.reshape(len(tail), 6)
    if was_training:
        model.train()
    return preds


def evaluate(model: PoseNet, frames: np.ndarray, labels: np.ndarray,
             indices: np.ndarray | None = None, seq_len: int = SEQ_LEN) -> Metrics:
    """Mean E_t/E_r over the given frames; spiking state resets per chunk."""
    if indices is None:
        indices = np.arange(len(frames))
    indices = np.asarray(indices)
    preds = predict(model, frames, indices, seq_len)
    gt = labels[indices]
    return Metrics(position_error(preds[:, :3], gt[:, :3]),
                   rotation_error(preds[:, 3:], gt[:, 3:]))


def metrics_from_predictions(preds: np.ndarray, gt: np.ndarray) -> Metrics:
    preds = np.asarray(preds, np.float64).reshape(-1, 6)
    gt = np.asarray(gt, np.float64).reshape(-1, 6)
    return Metrics(position_error(preds[:, :3], gt[:, :3]),
                   rotation_error(preds[:, 3:], gt[:, 3:]))


# ----------------------------------------------------------------- training

def train_run(frames: np.ndarray, labels: np.ndarray, train_idx: np.ndarray,
              test_idx: np.ndarray, cfg: TrainConfig,
              log_sink=None) -> tuple[PoseNet, Metrics, list[EpochLog]]:
    """One full training run; returns (model, test metrics, epoch logs).

    frames: (N,2,H,W) binary uint8; labels: (N,6) float64. Index sets must
    be unions of aligned seq_len chunks (the dataset module guarantees it).
    """
    train_idx = np.asarray(train_idx)
    test_idx = np.asarray(test_idx)
    model = build(cfg.net, seed=cfg.seed)
    schedule = cfg.schedule()
    optimizer = Adam(list(model.named_parameters()))
    rng = np.random.default_rng(cfg.seed)

    chunks = train_idx.reshape(-1, cfg.seq_len)
    chunks_per_batch = cfg.batch_size // cfg.seq_len
    logs: list[EpochLog] = []

    for epoch in range(cfg.epochs):
        lr = lr_at(schedule, epoch)
        order = rng.permutation(len(chunks))
        epoch_loss = 0.0
        frames_seen = 0
        model.train()
        for batch_no, start in enumerate(range(0, len(order), chunks_per_batch)):
            batch_chunks = chunks[order[start:start + chunks_per_batch]]
            seqs = frames[batch_chunks.reshape(-1)].reshape(
                len(batch_chunks), cfg.seq_len, *frames.shape[1:])
            if cfg.augment is not None:
                seqs = np.stack([
                    _augmented(seqs[i], cfg.augment, rng)
                    for i in range(len(seqs))])
            targets = labels[batch_chunks.reshape(-1)].reshape(
                len(batch_chunks), cfg.seq_len, 6)

            model.reset_state()
            model.zero_grad()
            total: Tensor | None = None
            for t in range(cfg.seq_len):
                x = Tensor(seqs[:, t].astype(np.float32))
                pred = model.forward_frame(x)
                try:
                    frame_loss = pose_loss(pred, targets[:, t])
                except ValueError:
                    raise TrainingDiverged(epoch, batch_no) from None
                total = frame_loss if total is None else F.add(total, frame_loss)
            total = F.scale(total, 1.0 / cfg.seq_len)  # mean over frames in batch
            loss_val = float(total.data)
            if not math.isfinite(loss_val):
                raise TrainingDiverged(epoch, batch_no)
            total.backward()
            optimizer.step(lr)
            epoch_loss += loss_val * len(batch_chunks) * cfg.seq_len
            frames_seen += len(batch_chunks) * cfg.seq_len

        train_loss = epoch_loss / max(frames_seen, 1)
        if cfg.eval_every and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs - 1) \
                and len(test_idx):
            m = evaluate(model, frames, labels, test_idx, cfg.seq_len)
            et, er = m.mean_position_error_m, m.mean_rotation_error_deg
        else:
            et = er = float("nan")
        entry = EpochLog(epoch, lr, train_loss, et, er)
        logs.append(entry)
        if log_sink is not None:
            log_sink(entry)

    final = evaluate(model, frames, labels, test_idx, cfg.seq_len) if len(test_idx) \
        else evaluate(model, frames, labels, train_idx, cfg.seq_len)
    return model, final, logs


def _augmented(seq: np.ndarray, aug: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    from .data import augment
    return augment(seq, aug, int(rng.integers(0, 2 ** 31)))


# -------------------------------------------------------------- K-fold runs

@dataclass
class RunReport:
    variant: str
    fold_metrics: list[Metrics]
    failed_folds: list[int] = field(default_factory=list)
    fused_eval: bool = False
    wall_time_s: float = 0.0
    config_snapshot: str = ""

    def aggregate(self) -> dict[str, float]:
        et = [m.mean_position_error_m for m in self.fold_metrics]
        er = [m.mean_rotation_error_deg for m in self.fold_metrics]
        return aggregate_metric_values(et, er)

    def csv_rows(self) -> list[str]:
        agg = self.aggregate()
        header = "model,Et_mean,Et_min,Et_max,Er_mean,Er_min,Er_max"
        row = (f"{self.variant},{agg['Et_mean']:.6g},{agg['Et_min']:.6g},"
               f"{agg['Et_max']:.6g},{agg['Er_mean']:.6g},{agg['Er_min']:.6g},"
               f"{agg['Er_max']:.6g}")
        return [header, row]

    def table(self) -> str:
        agg = self.aggregate()
        lines = [
            "Model            | Mean Position Error (m) | Mean Rotation Error (deg)",
            "-" * 76,
            (f"{self.variant:<16s} | {agg['Et_mean']:.2f} "
             f"[{agg['Et_min']:.2f};{agg['Et_max']:.2f}]"
             f"{'':10s}| {agg['Er_mean']:.1f} [{agg['Er_min']:.1f};{agg['Er_max']:.1f}]"),
        ]
        if self.failed_folds:
            lines.append(f"WARNING: folds {self.failed_folds} failed; aggregate covers "
                         f"{len(self.fold_metrics)} completed folds")
        return "\n".join(lines)


def aggregate_metric_values(et: list[float], er: list[float]) -> dict[str, float]:
    if not et:
        raise ValueError("no completed folds to aggregate")
    return {
        "Et_mean": float(np.mean(et)), "Et_min": float(np.min(et)),
        "Et_max": float(np.max(et)),
        "Er_mean": float(np.mean(er)), "Er_min": float(np.min(er)),
        "Er_max": float(np.max(er)),
    }


def kfold_report(frames: np.ndarray, labels: np.ndarray, plans: list[FoldPlan],
                 cfg: TrainConfig, fused_eval: bool = False) -> RunReport:
    """Train one run per fold plan and aggregate mean/min/max per metric."""
    if not plans:
        raise ValueError("at least one fold plan is required")
    from .pose_net import config_to_kv
    t0 = time.monotonic()
    fold_metrics: list[Metrics] = []
    failed: list[int] = []
    for i, plan in enumerate(plans):
        seed = cfg.seed + 1000 * i
        run_cfg = TrainConfig(net=cfg.net, batch_size=cfg.batch_size,
                              epochs=cfg.epochs, base_lr=cfg.base_lr,
                              seq_len=cfg.seq_len, seed=seed, augment=cfg.augment,
                              eval_every=0)
        try:
            model, metrics, _ = train_run(frames, labels, plan.train_frames,
                                          plan.test_frames, run_cfg)
            if fused_eval:
                model.eval()
                metrics = evaluate(fuse_bn(model), frames, labels,
                                   plan.test_frames, cfg.seq_len)
            fold_metrics.append(metrics)
        except TrainingDiverged:
            failed.append(i)
    return RunReport(
        variant=cfg.net.variant_name(),
        fold_metrics=fold_metrics,
        failed_folds=failed,
        fused_eval=fused_eval,
        wall_time_s=time.monotonic() - t0,
        config_snapshot=config_to_kv(cfg.net, {
            "batch_size": cfg.batch_size, "epochs": cfg.epochs,
            "base_lr": cfg.base_lr, "fused_eval": int(fused_eval),
        }),
    )
