"""Training loop: cosine-annealed Adam, early stopping, checkpoints.

The learning rate follows cosine annealing with warm restarts,

    lr(t) = eta_min + 0.5 * (eta0 - eta_min) * (1 + cos(pi * (t mod T) / T)),

with T in optimizer steps. Validation mean recall drives early stopping
(strict improvement, minimum patience 1) and the returned model always
carries the best-mR epoch's weights, never the last ones.

Checkpoints are little-endian binary: magic ``MHCV``, version u32, then one
record per tensor (name length u32 + UTF-8 name, rank u32, dims u64 each,
float64 values) until end of file. Round-trips are bit exact.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import AdamState, Tape, Tensor, adam_step
from .evaluation import evaluate

__all__ = [
    "LrSchedule", "lr_at", "EpochStats", "FitResult",
    "train_epoch", "fit",
    "save_checkpoint", "load_checkpoint",
    "write_train_log", "write_lr_curve",
]

CHECKPOINT_MAGIC = b"MHCV"
CHECKPOINT_VERSION = 1


@dataclass
class LrSchedule:
    """Cosine annealing with warm restarts; period is in optimizer steps."""

    eta0: float
    eta_min: float
    period: int

    def __post_init__(self):
        if self.period < 1:
            raise ValueError(f"period must be >= 1, got {self.period}")
        if self.eta0 < 0.0 or self.eta_min < 0.0 or self.eta_min > self.eta0:
            raise ValueError(f"need 0 <= eta_min <= eta0, got "
                             f"eta_min={self.eta_min}, eta0={self.eta0}")


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Learning rate at optimizer step t (t = 0 is the first step)."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    phase = (step % schedule.period) / schedule.period
    return schedule.eta_min + 0.5 * (schedule.eta0 - schedule.eta_min) * (
        1.0 + math.cos(math.pi * phase))


@dataclass
class EpochStats:
    """Per-epoch averages of the loss terms and effective weights."""

    epoch: int
    l_instance: float
    l_consensus: float
    l_fusion: float
    l_kl: float
    lambdas: tuple[float, float, float, float]
    total: float
    lr: float
    val_mr: float = float("nan")


@dataclass
class FitResult:
    history: list[EpochStats]
    best_epoch: int
    best_mr: float


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        if len(chunk) >= 2:  # the ranking losses need negatives
            yield chunk


def train_epoch(model, pairs, adam: AdamState, schedule: LrSchedule,
                rng: np.random.Generator, epoch: int) -> EpochStats:
    """One seeded-shuffle pass over the training pairs."""
    cfg = model.config
    params = model.named_parameters()
    order = rng.permutation(len(pairs))
    sums = np.zeros(5)
    lam_sums = np.zeros(4)
    n_batches = 0
    lr = lr_at(schedule, adam.step)
    for batch_idx in _batches(order, cfg.batch_size):
        batch = [pairs[i] for i in batch_idx]
        with Tape() as tape:
            terms = model.loss_terms(batch)
        total = terms.total.item()
        if not math.isfinite(total):
            raise RuntimeError(
                f"non-finite loss at epoch {epoch}, batch {n_batches}; "
                f"pair indices {batch_idx.tolist()}")
        grads = tape.backward(terms.total)
        lr = lr_at(schedule, adam.step)
        adam_step(params, grads, adam, lr)
        sums += np.array([*terms.values(), total])
        lam_sums += np.array(terms.effective_weights)
        n_batches += 1
    if n_batches == 0:
        raise ValueError("training set yields no batch of size >= 2")
    sums /= n_batches
    lam_sums /= n_batches
    return EpochStats(epoch, float(sums[0]), float(sums[1]), float(sums[2]),
                      float(sums[3]), tuple(float(l) for l in lam_sums),
                      float(sums[4]), lr)


def fit(model, train_dataset, val_dataset, eval_fn=None) -> FitResult:
    """Train with early stopping on validation mR.

    ``eval_fn(model) -> float`` defaults to mean recall on the validation
    split at the configured retrieval level. The model ends up holding the
    weights of the best validation epoch.
    """
    cfg = model.config
    if cfg.patience < 1:
        raise ValueError(f"patience must be >= 1, got {cfg.patience}")
    pairs = train_dataset.pairs
    if len(pairs) < 2:
        raise ValueError("training split has fewer than 2 pairs")
    if eval_fn is None:
        if val_dataset is None or not val_dataset.pairs:
            raise ValueError("validation split is empty")
        def eval_fn(m):
            return evaluate(m, val_dataset).mr

    steps_per_epoch = max(1, len(pairs) // cfg.batch_size)
    schedule = LrSchedule(cfg.eta0, cfg.eta_min,
                          steps_per_epoch * cfg.period_epochs)
    adam = AdamState()
    rng = np.random.default_rng(cfg.seed)
    params = model.named_parameters()

    history: list[EpochStats] = []
    best_mr = -math.inf
    best_epoch = -1
    best_state: dict[str, np.ndarray] = {}
    since_improved = 0
    for epoch in range(1, cfg.epochs + 1):
        stats = train_epoch(model, pairs, adam, schedule, rng, epoch)
        stats.val_mr = float(eval_fn(model))
        history.append(stats)
        if stats.val_mr > best_mr:
            best_mr = stats.val_mr
            best_epoch = epoch
            best_state = {name: p.data.copy() for name, p in params.items()}
            since_improved = 0
        else:
            since_improved += 1
            if since_improved >= cfg.patience:
                break
    for name, p in params.items():
        p.data[...] = best_state[name]
    return FitResult(history, best_epoch, best_mr)


# ---------------------------------------------------------------------------
# checkpoint format

def save_checkpoint(path, tensors: dict[str, Tensor]) -> None:
    """Named float64 tensors in the MHCV binary layout."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        for name, tensor in tensors.items():
            # asarray, not ascontiguousarray: the latter upgrades rank-0 to
            # rank-1 and would corrupt scalar parameters
            arr = np.asarray(tensor.data if isinstance(tensor, Tensor) else tensor,
                             dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read the MHCV layout back; values are bit-exact float64 arrays."""
    def take(fh, n, what):
        buf = fh.read(n)
        if len(buf) != n:
            raise ValueError(f"checkpoint {path}: truncated while reading {what}")
        return buf

    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if take(fh, 4, "magic") != CHECKPOINT_MAGIC:
            raise ValueError(f"checkpoint {path}: bad magic")
        (version,) = struct.unpack("<I", take(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint {path}: unsupported version {version}")
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise ValueError(f"checkpoint {path}: truncated record header")
            (name_len,) = struct.unpack("<I", head)
            name = take(fh, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", take(fh, 4, f"rank of '{name}'"))
            shape = tuple(struct.unpack("<Q", take(fh, 8, f"dim of '{name}'"))[0]
                          for _ in range(rank))
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            raw = take(fh, 8 * count, f"values of '{name}'")
            out[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return out


# ---------------------------------------------------------------------------
# CSV artifacts

def write_train_log(path, history: list[EpochStats]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "l_instance", "l_consensus", "l_fusion", "l_kl",
                         "lam1", "lam2", "lam3", "lam4", "total", "lr", "val_mr"])
        for s in history:
            writer.writerow([s.epoch, repr(s.l_instance), repr(s.l_consensus),
                             repr(s.l_fusion), repr(s.l_kl),
                             *(repr(l) for l in s.lambdas),
                             repr(s.total), repr(s.lr), repr(s.val_mr)])


def write_lr_curve(path, schedule: LrSchedule, steps: int) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "lr"])
        for t in range(steps):
            writer.writerow([t, repr(lr_at(schedule, t))])
