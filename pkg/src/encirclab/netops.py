"""Masked network building blocks, optimizer, and checkpoint container.

Thin, well-specified layers over torch: masked softmax/attention/pooling with
exact-zero semantics for padded slots, an elementwise Huber, a hand-rolled
Adam over a named parameter store, and a versioned little-endian binary
checkpoint format with bit-exact round-trips. Gradients come from autograd
and are validated against central finite differences in the test suite.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict

import numpy as np
import torch
from torch import nn

CHECKPOINT_MAGIC = b"ECLB"
CHECKPOINT_VERSION = 1


def dense(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """Affine map y = x @ weight + bias."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"inner extents disagree: {x.shape[-1]} vs {weight.shape[0]}")
    return x @ weight + bias


def masked_softmax(logits: torch.Tensor, mask: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Softmax over valid entries only.

    Masked entries get weight exactly 0; valid weights sum to 1 per row.
    Rows with no valid entry come back all-zero rather than erroring, so
    fully padded categories flow through attention as a zero context.
    """
    valid = mask.to(dtype=torch.bool)
    neg_inf = torch.tensor(float("-inf"), dtype=logits.dtype, device=logits.device)
    row_max = torch.where(valid, logits, neg_inf).amax(dim=dim, keepdim=True)
    row_max = torch.where(torch.isinf(row_max), torch.zeros_like(row_max), row_max)
    shifted = torch.where(valid, logits - row_max, neg_inf)
    weights = torch.exp(shifted)  # exp(-inf) == 0 exactly
    denom = weights.sum(dim=dim, keepdim=True)
    denom = torch.where(denom == 0.0, torch.ones_like(denom), denom)
    return weights / denom


def masked_max_pool(values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Per-feature max over valid rows; values (..., rows, feat), mask (..., rows)."""
    if not bool(mask.any(dim=-1).all()):
        raise ValueError("masked_max_pool requires at least one valid row")
    valid = mask.to(dtype=torch.bool).unsqueeze(-1)
    neg_inf = torch.tensor(float("-inf"), dtype=values.dtype, device=values.device)
    return torch.where(valid, values, neg_inf).amax(dim=-2)


def masked_mean_pool(values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Per-feature mean over valid rows; an empty category pools to zero."""
    m = mask.to(dtype=values.dtype).unsqueeze(-1)
    count = m.sum(dim=-2)
    count = torch.where(count == 0.0, torch.ones_like(count), count)
    return (values * m).sum(dim=-2) / count


def huber(u: torch.Tensor, kappa: float) -> torch.Tensor:
    """Elementwise Huber: u^2/2 inside |u| <= kappa, linear outside."""
    if kappa <= 0.0:
        raise ValueError(f"kappa must be > 0, got {kappa}")
    abs_u = u.abs()
    return torch.where(abs_u <= kappa, 0.5 * u * u, kappa * (abs_u - 0.5 * kappa))


class MaskedMultiheadAttention(nn.Module):
    """Scaled dot-product attention with a key validity mask.

    Queries and keys/values may come from different inputs of the same
    feature size. Heads split the feature dimension, attend with scale
    1/sqrt(d_k), and their contexts are concatenated and projected back.
    Masked keys receive exactly zero weight; a query facing zero valid keys
    yields the output projection of a zero context.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"feature dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, length, _ = x.shape
        return x.view(b, length, self.heads, self.head_dim).transpose(1, 2)

    def forward(
        self, query_in: torch.Tensor, kv_in: torch.Tensor, key_mask: torch.Tensor
    ) -> torch.Tensor:
        q = self._split(self.q_proj(query_in))
        k = self._split(self.k_proj(kv_in))
        v = self._split(self.v_proj(kv_in))
        scores = q @ k.transpose(-2, -1) / (self.head_dim**0.5)
        weights = masked_softmax(scores, key_mask[:, None, None, :])
        context = weights @ v
        b, _, lq, _ = context.shape
        merged = context.transpose(1, 2).reshape(b, lq, self.dim)
        return self.out_proj(merged)


class ParamStore:
    """Ordered name -> parameter map with Adam moment slots.

    Wraps the named parameters of a module (or any (name, tensor) pairs with
    requires_grad); the training loop is the only writer during an update.
    """

    def __init__(self, named_params):
        items = list(named_params)
        names = [name for name, _ in items]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.params: "OrderedDict[str, torch.Tensor]" = OrderedDict(items)
        self.m = {name: torch.zeros_like(p) for name, p in self.params.items()}
        self.v = {name: torch.zeros_like(p) for name, p in self.params.items()}
        self.step_count = 0

    @classmethod
    def from_module(cls, module: nn.Module) -> "ParamStore":
        return cls(module.named_parameters())

    def zero_grad(self):
        for p in self.params.values():
            if p.grad is not None:
                p.grad.detach_()
                p.grad.zero_()


def adam_step(
    store: ParamStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One Adam update with bias correction; parameters without gradients keep still."""
    store.step_count += 1
    t = store.step_count
    bias1 = 1.0 - beta1**t
    bias2 = 1.0 - beta2**t
    with torch.no_grad():
        for name, p in store.params.items():
            grad = p.grad
            if grad is None:
                continue
            m = store.m[name]
            v = store.v[name]
            m.mul_(beta1).add_(grad, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(grad, grad, value=1.0 - beta2)
            p.addcdiv_(m / bias1, (v / bias2).sqrt().add_(eps), value=-lr)


def save_checkpoint(path, header: dict, named_arrays) -> None:
    """Write a versioned checkpoint: JSON header + named float32 LE payloads."""
    entries = []
    for name, value in named_arrays.items() if isinstance(named_arrays, dict) else named_arrays:
        if isinstance(value, torch.Tensor):
            value = value.detach().cpu().numpy()
        array = np.asarray(value, dtype="<f4")  # asarray keeps 0-d arrays 0-d
        if not array.flags["C_CONTIGUOUS"]:
            array = np.ascontiguousarray(array)
        entries.append((name, array))
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<I", len(entries)))
        for name, array in entries:
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", array.ndim))
            for extent in array.shape:
                fh.write(struct.pack("<I", extent))
            fh.write(array.tobytes())


def load_checkpoint(path):
    """Read a checkpoint back as (header, OrderedDict[name, float32 ndarray])."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    offset = 4
    (version,) = struct.unpack_from("<I", data, offset)
    offset += 4
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    header = json.loads(data[offset : offset + header_len].decode("utf-8"))
    offset += header_len
    (n_entries,) = struct.unpack_from("<I", data, offset)
    offset += 4
    arrays = OrderedDict()
    for _ in range(n_entries):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", data, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", data, offset) if ndim else ()
        offset += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        array = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += 4 * count
        arrays[name] = array.copy()
    return header, arrays
