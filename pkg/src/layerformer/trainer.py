"""Mini-batch Adam training of the surrogate on a labeled dataset."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .datagen import DatasetArrays, load_arrays
from .errors import ConfigError, ManifestMismatch, NonFiniteLoss
from .serialization import Vocabulary, manifest_bytes
from .surrogate import ModelConfig, forward_tensors, init_params, loss_mse

log = logging.getLogger(__name__)

EVAL_BATCH_SIZE = 1024


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 3e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    grad_clip_norm: float | None = 1.0
    seed: int = 0
    eval_every: int = 500
    checkpoint_dir: str = "checkpoints"
    max_steps: int | None = None
    # cosine decay to lr * final_lr_ratio over the run; None keeps lr constant
    final_lr_ratio: float | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.epochs < 0 or self.eval_every < 1:
            raise ConfigError("epochs must be >= 0 and eval_every >= 1")


@dataclass
class TrainResult:
    final_checkpoint: Path
    best_checkpoint: Path
    metrics_path: Path
    history: list[tuple[int, str, float]] = field(repr=False)
    params: dict = field(repr=False)

    def last(self, split: str) -> float:
        return [m for _, s, m in self.history if s == split][-1]


def predict_arrays(params, cfg: ModelConfig, ids: np.ndarray, lengths: np.ndarray,
                   batch_size: int = EVAL_BATCH_SIZE) -> np.ndarray:
    """Raw (unclamped) predictions for padded id arrays, in fixed-size batches."""
    out = []
    with torch.no_grad():
        for lo in range(0, len(lengths), batch_size):
            pred, _ = forward_tensors(
                params, cfg, torch.from_numpy(ids[lo : lo + batch_size]), torch.from_numpy(lengths[lo : lo + batch_size])
            )
            out.append(pred.to(torch.float64).numpy())
    return np.concatenate(out) if out else np.empty((0, cfg.output_dim))


def record_mse(predictions: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-record MSE of predictions clamped to the physical range [0, 1]."""
    return np.mean((np.clip(predictions, 0.0, 1.0) - targets) ** 2, axis=1)


def mean_record_mse(predictions: np.ndarray, targets: np.ndarray) -> float:
    # fsum makes the mean independent of record order
    per = record_mse(predictions, targets)
    return math.fsum(per.tolist()) / len(per) if len(per) else float("nan")


def evaluate_arrays(params, cfg: ModelConfig, data: DatasetArrays) -> float:
    return mean_record_mse(predict_arrays(params, cfg, data.ids, data.lengths), data.targets)


def check_compatible(cfg: ModelConfig, *datasets: DatasetArrays) -> Vocabulary:
    manifests = [d.manifest for d in datasets]
    first = manifests[0]
    for m in manifests[1:]:
        if manifest_bytes(m["vocab_manifest"]) != manifest_bytes(first["vocab_manifest"]):
            raise ManifestMismatch("datasets were built with different vocabularies")
        if m["grid"] != first["grid"] or m["ambient"] != first["ambient"]:
            raise ManifestMismatch("datasets were labeled on different grids or ambients")
    vocab = Vocabulary.from_manifest(first["vocab_manifest"])
    if vocab.total_size != cfg.vocab_size:
        raise ManifestMismatch(f"vocabulary has {vocab.total_size} ids, model expects {cfg.vocab_size}")
    if vocab.max_seq_len > cfg.max_seq_len:
        raise ManifestMismatch(f"sequences up to {vocab.max_seq_len} tokens, model allows {cfg.max_seq_len}")
    width = datasets[0].targets.shape[1]
    if width != cfg.output_dim:
        raise ManifestMismatch(f"targets have {width} values, model outputs {cfg.output_dim}")
    return vocab


def mean_predictor_mse(train: DatasetArrays, val: DatasetArrays) -> float:
    """Validation MSE of always predicting the mean training spectrum."""
    mean = train.targets.mean(axis=0)
    return mean_record_mse(np.broadcast_to(mean, val.targets.shape), val.targets)


def train(dataset_path, val_path, model_cfg: ModelConfig, train_cfg: TrainConfig,
          init: dict | None = None) -> TrainResult:
    """Train from seed-initialized (or ``init``) parameters.

    Writes ``final.ckpt``, ``best.ckpt`` and ``metrics.csv`` (``step,split,mse``)
    under ``train_cfg.checkpoint_dir``.  Validation runs every ``eval_every``
    steps and once more after the last step.
    """
    train_data = dataset_path if isinstance(dataset_path, DatasetArrays) else load_arrays(dataset_path)
    val_data = val_path if isinstance(val_path, DatasetArrays) else load_arrays(val_path)
    check_compatible(model_cfg, train_data, val_data)
    if len(train_data) == 0:
        raise ConfigError("empty training set")
    vocab_manifest = train_data.manifest["vocab_manifest"]

    out_dir = Path(train_cfg.checkpoint_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.csv"
    best_path, final_path = out_dir / "best.ckpt", out_dir / "final.ckpt"

    source = init if init is not None else init_params(model_cfg)
    params = {k: v.detach().clone().to(model_cfg.torch_dtype).requires_grad_(True) for k, v in source.items()}
    leaves = list(params.values())
    opt = torch.optim.Adam(leaves, lr=train_cfg.learning_rate, betas=train_cfg.betas, eps=train_cfg.eps)

    steps_per_epoch = math.ceil(len(train_data) / train_cfg.batch_size)
    total_steps = steps_per_epoch * train_cfg.epochs
    if train_cfg.max_steps is not None:
        total_steps = min(total_steps, train_cfg.max_steps)
    sched = None
    if train_cfg.final_lr_ratio is not None and total_steps > 0:
        floor = train_cfg.final_lr_ratio

        def factor(step):
            return floor + (1 - floor) * 0.5 * (1 + math.cos(math.pi * min(step, total_steps) / total_steps))

        sched = torch.optim.lr_scheduler.LambdaLR(opt, factor)

    rng = np.random.default_rng(train_cfg.seed)
    dropout_gen = torch.Generator().manual_seed(train_cfg.seed) if model_cfg.dropout > 0 else None
    targets_all = torch.from_numpy(train_data.targets).to(model_cfg.torch_dtype)
    ids_all = torch.from_numpy(train_data.ids)
    lengths_all = torch.from_numpy(train_data.lengths)

    history: list[tuple[int, str, float]] = []
    best = math.inf
    step = 0

    def validate():
        nonlocal best
        with torch.no_grad():
            mse = evaluate_arrays(params, model_cfg, val_data)
        history.append((step, "val", mse))
        writer.writerow([step, "val", repr(mse)])
        if mse < best:
            best = mse
            save_checkpoint(params, model_cfg, vocab_manifest, best_path)
        log.info("step %d  val mse %.6g", step, mse)
        return mse

    with open(metrics_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "split", "mse"])
        while step < total_steps:
            order = rng.permutation(len(train_data))
            for lo in range(0, len(order), train_cfg.batch_size):
                if step >= total_steps:
                    break
                idx = torch.from_numpy(order[lo : lo + train_cfg.batch_size])
                pred, _ = forward_tensors(params, model_cfg, ids_all[idx], lengths_all[idx],
                                          dropout_generator=dropout_gen)
                loss = loss_mse(pred, targets_all[idx])
                opt.zero_grad(set_to_none=True)
                loss.backward()
                if train_cfg.grad_clip_norm is not None:
                    grad_norm = torch.nn.utils.clip_grad_norm_(leaves, train_cfg.grad_clip_norm)
                else:
                    grad_norm = torch.sqrt(sum((p.grad**2).sum() for p in leaves))
                value = float(loss.detach())
                if not math.isfinite(value):
                    raise NonFiniteLoss(
                        f"step {step}: loss {value}, grad norm {float(grad_norm)}, lr {opt.param_groups[0]['lr']}"
                    )
                opt.step()
                if sched is not None:
                    sched.step()
                step += 1
                history.append((step, "train", value))
                writer.writerow([step, "train", repr(value)])
                if step % train_cfg.eval_every == 0:
                    validate()
        if not history or history[-1][1] != "val":
            validate()

    final = {k: v.detach() for k, v in params.items()}
    save_checkpoint(final, model_cfg, vocab_manifest, final_path)
    if not best_path.exists():
        save_checkpoint(final, model_cfg, vocab_manifest, best_path)
    return TrainResult(final_path, best_path, metrics_path, history, final)
