"""Sequence-aware dataset protocol: splits, K-fold plans, augmentation.

Frames are consumed in aligned chunks of `seq_len` consecutive frames (the
training unit), so all assignment happens at chunk granularity and no chunk
ever straddles a train/test boundary. Trailing frames that do not fill a
chunk are dropped.

Fold plan CSV: rows ``fold,repeat,role,frame_index`` with role in
{train, test}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SEQ_LEN = 10


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class FoldPlan:
    fold: int
    repeat: int
    train_frames: np.ndarray
    test_frames: np.ndarray
    seed: int

    def check_partition(self, n_frames: int, seq_len: int = SEQ_LEN):
        """Disjointness, coverage of all chunked frames, chunk alignment."""
        train = set(self.train_frames.tolist())
        test = set(self.test_frames.tolist())
        if train & test:
            raise DatasetError("train/test overlap")
        usable = (n_frames // seq_len) * seq_len
        if train | test != set(range(usable)):
            raise DatasetError("plan does not cover the chunked frames")
        for idx_set in (self.train_frames, self.test_frames):
            chunks = np.unique(idx_set // seq_len)
            expanded = (chunks[:, None] * seq_len + np.arange(seq_len)).reshape(-1)
            if not np.array_equal(np.sort(idx_set), np.sort(expanded)):
                raise DatasetError("index set is not a union of aligned chunks")


def _chunk_frames(chunks: np.ndarray, seq_len: int) -> np.ndarray:
    return np.sort((chunks[:, None] * seq_len + np.arange(seq_len)).reshape(-1))


def split_sequences(n_frames: int, train_frac: float, seq_len: int = SEQ_LEN,
                    seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Shuffle aligned chunks and split them to approximate train_frac."""
    if seq_len < 1:
        raise DatasetError("seq_len must be >= 1")
    if not 0.0 < train_frac < 1.0:
        raise DatasetError("train_frac must be in (0, 1)")
    n_chunks = n_frames // seq_len
    if n_chunks < 1:
        raise DatasetError(f"{n_frames} frames cannot fill one chunk of {seq_len}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_chunks)
    n_train = int(round(n_chunks * train_frac))
    n_train = min(max(n_train, 1), n_chunks - 1) if n_chunks > 1 else n_train
    train_chunks = np.sort(order[:n_train])
    test_chunks = np.sort(order[n_train:])
    return _chunk_frames(train_chunks, seq_len), _chunk_frames(test_chunks, seq_len)


def kfold_plans(n_frames: int, k: int = 5, repeats: int = 3, base_seed: int = 0,
                seq_len: int = SEQ_LEN) -> list[FoldPlan]:
    """Per repeat, partition chunks into k folds; each fold serves once as test.

    Fold sizes differ by at most one chunk; the remainder lands on the last
    folds. Deterministic in base_seed.
    """
    if k < 2:
        raise DatasetError("k must be >= 2")
    if repeats < 1:
        raise DatasetError("repeats must be >= 1")
    n_chunks = n_frames // seq_len
    if n_chunks < k:
        raise DatasetError(f"{n_chunks} chunks cannot fill {k} folds")
    plans = []
    for rep in range(repeats):
        seed = base_seed + rep
        rng = np.random.default_rng(seed)
        order = rng.permutation(n_chunks)
        base, rem = divmod(n_chunks, k)
        sizes = [base + (1 if i >= k - rem else 0) for i in range(k)]
        offsets = np.cumsum([0] + sizes)
        for fold in range(k):
            test_chunks = np.sort(order[offsets[fold]:offsets[fold + 1]])
            train_chunks = np.sort(np.concatenate(
                [order[:offsets[fold]], order[offsets[fold + 1]:]]))
            plans.append(FoldPlan(fold, rep,
                                  _chunk_frames(train_chunks, seq_len),
                                  _chunk_frames(test_chunks, seq_len), seed))
    return plans


def write_fold_plans(plans: list[FoldPlan]) -> str:
    lines = ["fold,repeat,role,frame_index"]
    for plan in plans:
        for idx in plan.train_frames:
            lines.append(f"{plan.fold},{plan.repeat},train,{idx}")
        for idx in plan.test_frames:
            lines.append(f"{plan.fold},{plan.repeat},test,{idx}")
    return "\n".join(lines) + "\n"


def read_fold_plans(text: str) -> list[FoldPlan]:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "fold,repeat,role,frame_index":
        raise DatasetError("missing fold plan header")
    buckets: dict[tuple[int, int], dict[str, list[int]]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 4 or parts[2] not in ("train", "test"):
            raise DatasetError(f"line {lineno}: malformed plan row")
        key = (int(parts[0]), int(parts[1]))
        buckets.setdefault(key, {"train": [], "test": []})[parts[2]].append(int(parts[3]))
    plans = []
    for (fold, rep), roles in sorted(buckets.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        plans.append(FoldPlan(fold, rep,
                              np.array(sorted(roles["train"]), np.int64),
                              np.array(sorted(roles["test"]), np.int64), seed=-1))
    return plans


@dataclass(frozen=True)
class AugmentConfig:
    """Sequence-level gates for event noise and one dead pixel."""

    noise_seq_prob: float = 0.10
    noise_pixel_rate: float = 0.001
    dead_pixel_prob: float = 0.10

    def __post_init__(self):
        for name in ("noise_seq_prob", "noise_pixel_rate", "dead_pixel_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DatasetError(f"{name}={v} outside [0, 1]")


def augment(sequence: np.ndarray, config: AugmentConfig, seed: int) -> np.ndarray:
    """Seeded augmentation of one (T,2,H,W) binary sequence.

    With probability noise_seq_prob, every cell of every frame is
    independently switched on at noise_pixel_rate (cells where both
    polarity channels end up on are cleared, keeping channel exclusivity).
    With probability dead_pixel_prob one uniformly chosen pixel goes dark
    in both channels across the whole sequence.
    """
    seq = np.asarray(sequence)
    if seq.ndim != 4 or seq.shape[1] != 2:
        raise DatasetError(f"expected (T,2,H,W) sequence, got {seq.shape}")
    if not np.isin(seq, (0, 1)).all():
        raise DatasetError("augment requires a binary sequence")
    out = seq.astype(np.uint8).copy()
    rng = np.random.default_rng(seed)

    if rng.random() < config.noise_seq_prob:
        noise = rng.random(out.shape) < config.noise_pixel_rate
        out |= noise.astype(np.uint8)
        both = out[:, 0] & out[:, 1]
        out[:, 0] &= 1 - both
        out[:, 1] &= 1 - both

    if rng.random() < config.dead_pixel_prob:
        h, w = out.shape[2], out.shape[3]
        y = int(rng.integers(0, h))
        x = int(rng.integers(0, w))
        out[:, :, y, x] = 0

    return out
