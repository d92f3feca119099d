"""Encoder-only transformer mapping token sequences to flattened R/T spectra.

Parameters live in a flat ``dict[str, torch.Tensor]`` so the forward pass is a
plain function of ``(params, config, tokens)``.  Linear maps are stored as
``(in, out)`` matrices and applied as ``x @ W + b``.

Layout: token embedding + learned positional embedding, ``num_blocks`` pre-norm
blocks (``x += MHSA(LN(x)); x += FFN(LN(x))``), a final layer norm, then the
BoS (position 0) vector goes through the affine-GELU-affine head.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import BadTokenId, ConfigError, SeqTooLong, ShapeMismatch
from .serialization import pad_batch

LN_EPS = 1e-5
_DTYPES = {"float64": torch.float64, "float32": torch.float32}


@dataclass(frozen=True)
class ModelConfig:
    num_blocks: int
    num_heads: int
    hidden_dim: int
    head_dims: tuple[int, ...]
    max_seq_len: int
    vocab_size: int
    output_dim: int
    ffn_dim: int | None = None  # None -> 4 * hidden_dim
    seed: int = 0
    dtype: str = "float64"
    dropout: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "head_dims", tuple(int(d) for d in self.head_dims))
        if self.ffn_dim is None:
            object.__setattr__(self, "ffn_dim", 4 * self.hidden_dim)
        if min(self.num_blocks, self.num_heads, self.hidden_dim, self.max_seq_len, self.vocab_size) < 1:
            raise ConfigError("sizes must be positive")
        if self.hidden_dim % self.num_heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")
        if len(self.head_dims) < 2 or self.head_dims[0] != self.hidden_dim:
            raise ConfigError("head_dims must start at hidden_dim and list at least one output width")
        if self.head_dims[-1] != self.output_dim:
            raise ConfigError("last head dim must equal output_dim")
        if self.dtype not in _DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(_DTYPES)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    @property
    def head_width(self) -> int:
        return self.hidden_dim // self.num_heads

    @property
    def torch_dtype(self) -> torch.dtype:
        return _DTYPES[self.dtype]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["head_dims"] = list(self.head_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{**d, "head_dims": tuple(d["head_dims"])})

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig.from_dict({**self.to_dict(), **changes})


def production_config(vocab_size: int = 902, output_dim: int = 142, seed: int = 0) -> ModelConfig:
    """12 blocks, 16 heads, width 1024, head 1024-1024-142 (about 65M weights).

    The feed-forward width is 512: with the usual 4x width the stack would
    hold about 153M parameters.
    """
    return ModelConfig(
        num_blocks=12,
        num_heads=16,
        hidden_dim=1024,
        head_dims=(1024, 1024, output_dim),
        max_seq_len=22,
        vocab_size=vocab_size,
        output_dim=output_dim,
        ffn_dim=512,
        seed=seed,
        dtype="float32",
    )


def tiny_config(vocab_size: int, output_dim: int = 142, max_seq_len: int = 6, seed: int = 0,
                dtype: str = "float64") -> ModelConfig:
    """Desk-scale preset: 2 blocks, 4 heads, width 64, head 64-64-output."""
    return ModelConfig(
        num_blocks=2,
        num_heads=4,
        hidden_dim=64,
        head_dims=(64, 64, output_dim),
        max_seq_len=max_seq_len,
        vocab_size=vocab_size,
        output_dim=output_dim,
        seed=seed,
        dtype=dtype,
    )


PRESETS = {"tiny": tiny_config, "production": production_config}


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    H, Fd = cfg.hidden_dim, cfg.ffn_dim
    shapes = {
        "token_embedding": (cfg.vocab_size, H),
        "positional_embedding": (cfg.max_seq_len, H),
    }
    for b in range(cfg.num_blocks):
        p = f"blocks.{b}."
        shapes[p + "ln1.gain"] = (H,)
        shapes[p + "ln1.bias"] = (H,)
        for proj in "qkvo":
            shapes[p + f"attn.{proj}.weight"] = (H, H)
            shapes[p + f"attn.{proj}.bias"] = (H,)
        shapes[p + "ln2.gain"] = (H,)
        shapes[p + "ln2.bias"] = (H,)
        shapes[p + "ffn.in.weight"] = (H, Fd)
        shapes[p + "ffn.in.bias"] = (Fd,)
        shapes[p + "ffn.out.weight"] = (Fd, H)
        shapes[p + "ffn.out.bias"] = (H,)
    shapes["final_ln.gain"] = (H,)
    shapes["final_ln.bias"] = (H,)
    for i, (d_in, d_out) in enumerate(zip(cfg.head_dims, cfg.head_dims[1:])):
        shapes[f"head.{i}.weight"] = (d_in, d_out)
        shapes[f"head.{i}.bias"] = (d_out,)
    return shapes


def param_count(cfg: ModelConfig) -> int:
    """Total trainable scalars, from shapes alone."""
    return sum(math.prod(s) for s in param_shapes(cfg).values())


def init_params(cfg: ModelConfig) -> dict[str, torch.Tensor]:
    """Seeded init: weights ~ N(0, 1/fan_in), embeddings ~ N(0, 1/hidden_dim),
    layer-norm gains 1, all biases 0."""
    gen = torch.Generator().manual_seed(cfg.seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".gain"):
            t = torch.ones(shape, dtype=torch.float64)
        elif name.endswith(".bias"):
            t = torch.zeros(shape, dtype=torch.float64)
        else:
            fan_in = cfg.hidden_dim if name.endswith("embedding") else shape[0]
            t = torch.randn(shape, generator=gen, dtype=torch.float64) / math.sqrt(fan_in)
        params[name] = t.to(cfg.torch_dtype)
    return params


@dataclass(frozen=True)
class AttentionRecord:
    """Softmax weights of one head for one sequence, shape ``(L, L)`` over the
    padded width; columns past the sequence length are exactly zero."""

    sequence: int
    block: int
    head: int
    weights: np.ndarray
    length: int = field(default=0)


def _layer_norm(x, params, prefix, H):
    return F.layer_norm(x, (H,), params[prefix + ".gain"], params[prefix + ".bias"], LN_EPS)


def forward_tensors(
    params: dict[str, torch.Tensor],
    cfg: ModelConfig,
    ids: torch.Tensor,
    lengths: torch.Tensor,
    capture_attention: bool = False,
    dropout_generator: torch.Generator | None = None,
):
    """Batched forward on padded ids ``(B, L)``.

    Returns ``(predictions (B, output_dim), attention)`` where attention is a
    list with one ``(B, heads, L, L)`` tensor per block, or None.
    """
    B, L = ids.shape
    H, A, hw = cfg.hidden_dim, cfg.num_heads, cfg.head_width
    p_drop = cfg.dropout if dropout_generator is not None else 0.0

    def drop(t):
        if p_drop == 0.0:
            return t
        keep = torch.rand(t.shape, generator=dropout_generator, dtype=t.dtype) >= p_drop
        return t * keep / (1.0 - p_drop)

    positions = torch.arange(L)
    x = params["token_embedding"][ids] + params["positional_embedding"][positions]
    pad = positions[None, :] >= lengths[:, None]  # (B, L)
    bias = torch.zeros((B, 1, 1, L), dtype=x.dtype).masked_fill(pad[:, None, None, :], float("-inf"))
    scale = 1.0 / math.sqrt(hw)
    maps = [] if capture_attention else None

    for b in range(cfg.num_blocks):
        p = f"blocks.{b}."
        h = _layer_norm(x, params, p + "ln1", H)
        q, k, v = (
            (h @ params[p + f"attn.{n}.weight"] + params[p + f"attn.{n}.bias"]).view(B, L, A, hw).transpose(1, 2)
            for n in "qkv"
        )
        weights = torch.softmax(q @ k.transpose(-1, -2) * scale + bias, dim=-1)
        if maps is not None:
            maps.append(weights.detach())
        ctx = (weights @ v).transpose(1, 2).reshape(B, L, H)
        x = x + drop(ctx @ params[p + "attn.o.weight"] + params[p + "attn.o.bias"])
        h = _layer_norm(x, params, p + "ln2", H)
        h = F.gelu(h @ params[p + "ffn.in.weight"] + params[p + "ffn.in.bias"])
        x = x + drop(h @ params[p + "ffn.out.weight"] + params[p + "ffn.out.bias"])

    y = _layer_norm(x[:, 0], params, "final_ln", H)
    n_head = len(cfg.head_dims) - 1
    for i in range(n_head):
        y = y @ params[f"head.{i}.weight"] + params[f"head.{i}.bias"]
        if i < n_head - 1:
            y = F.gelu(y)
    return y, maps


def encode_batch(cfg: ModelConfig, batch: Sequence[Sequence[int]], pad_to: int | None = None):
    """Validate and pad token sequences into ``(ids, lengths)`` tensors."""
    for i, seq in enumerate(batch):
        if len(seq) > cfg.max_seq_len:
            raise SeqTooLong(f"sequence {i} has length {len(seq)} > {cfg.max_seq_len}")
        if len(seq) == 0:
            raise SeqTooLong(f"sequence {i} is empty")
        if any(not 0 <= t < cfg.vocab_size for t in seq):
            raise BadTokenId(f"sequence {i} has ids outside [0, {cfg.vocab_size})")
    if pad_to is not None and pad_to > cfg.max_seq_len:
        raise SeqTooLong(f"pad length {pad_to} > {cfg.max_seq_len}")
    ids, lengths = pad_batch(batch, pad_to)
    return torch.from_numpy(ids), torch.from_numpy(lengths)


def forward(
    params: dict[str, torch.Tensor],
    cfg: ModelConfig,
    batch: Sequence[Sequence[int]],
    capture_attention: bool = False,
    pad_to: int | None = None,
):
    """Predict spectra for a list of token sequences.

    Returns ``(predictions, attention)``: a ``(len(batch), output_dim)`` array and,
    when requested, a list of :class:`AttentionRecord`.
    """
    ids, lengths = encode_batch(cfg, batch, pad_to)
    with torch.no_grad():
        pred, maps = forward_tensors(params, cfg, ids, lengths, capture_attention)
    records = None
    if maps is not None:
        records = [
            AttentionRecord(s, blk, hd, maps[blk][s, hd].cpu().numpy(), int(lengths[s]))
            for s in range(len(batch))
            for blk in range(cfg.num_blocks)
            for hd in range(cfg.num_heads)
        ]
    return pred.cpu().numpy(), records


def loss_mse(predictions, targets):
    """Mean squared error over batch and output dimensions."""
    if tuple(predictions.shape) != tuple(targets.shape):
        raise ShapeMismatch(f"{tuple(predictions.shape)} vs {tuple(targets.shape)}")
    return ((predictions - targets) ** 2).mean()


def backward(
    params: dict[str, torch.Tensor],
    cfg: ModelConfig,
    batch: Sequence[Sequence[int]],
    targets,
) -> tuple[float, dict[str, torch.Tensor]]:
    """Loss and its gradient with respect to every parameter tensor."""
    ids, lengths = encode_batch(cfg, batch)
    leaves = {k: v.detach().clone().requires_grad_(True) for k, v in params.items()}
    pred, _ = forward_tensors(leaves, cfg, ids, lengths)
    targets = torch.as_tensor(np.asarray(targets), dtype=pred.dtype)
    loss = loss_mse(pred, targets)
    names = list(leaves)
    grads = torch.autograd.grad(loss, [leaves[n] for n in names], allow_unused=True)
    out = {
        n: (g if g is not None else torch.zeros_like(leaves[n])).detach()
        for n, g in zip(names, grads)
    }
    return float(loss.detach()), out
