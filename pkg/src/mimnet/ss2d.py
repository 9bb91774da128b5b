"""2D selective scan: unfold a feature grid into four directional sequences,
run the S6 core on each, and merge back by inverse permutation and summation.

Also hosts the gated visual state-space block (expand, depthwise conv, SiLU,
2D scan, norm, gate, project) and the convolutional feed-forward network that
together make up one Mamba-style block.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import tensor as T
from .nn import Conv2d, LayerNorm, Linear, Module
from .ssm import SsmParams, s6_forward
from .tensor import ShapeError, Tensor

ROW_MAJOR = "row_major"
COL_MAJOR = "col_major"
ROW_MAJOR_REVERSED = "row_major_reversed"
COL_MAJOR_REVERSED = "col_major_reversed"

#: Fixed direction order; merge sums contributions in this order.
DIRECTIONS = (ROW_MAJOR, COL_MAJOR, ROW_MAJOR_REVERSED, COL_MAJOR_REVERSED)


@lru_cache(maxsize=None)
def direction_permutation(direction: str, h: int, w: int) -> np.ndarray:
    """Sequence position k -> flat (row-major) grid index, for one direction."""
    flat = np.arange(h * w, dtype=np.intp)
    if direction == ROW_MAJOR:
        perm = flat
    elif direction == COL_MAJOR:
        perm = flat.reshape(h, w).T.ravel()
    elif direction == ROW_MAJOR_REVERSED:
        perm = flat[::-1]
    elif direction == COL_MAJOR_REVERSED:
        perm = flat.reshape(h, w).T.ravel()[::-1]
    else:
        raise ValueError(f"unknown scan direction: {direction!r}")
    perm = np.ascontiguousarray(perm)
    perm.setflags(write=False)
    return perm


def _with_batch(z: Tensor):
    if z.ndim == 3:
        return T.reshape(z, (1,) + z.shape), True
    if z.ndim == 4:
        return z, False
    raise ShapeError(f"expected [H,W,E] or [B,H,W,E], got {z.shape}")


def scan_expand(z: Tensor, direction: str) -> Tensor:
    """[B,H,W,E] (or [H,W,E]) -> [B,H*W,E] sequence in the given direction."""
    zb, squeeze = _with_batch(z)
    b, h, w, e = zb.shape
    perm = direction_permutation(direction, h, w)
    seq = T.permute_rows(T.reshape(zb, (b, h * w, e)), perm, axis=1)
    return T.reshape(seq, (h * w, e)) if squeeze else seq


def scan_merge(seqs, directions, h: int, w: int) -> Tensor:
    """Inverse-permute each tagged sequence to grid layout and sum in order."""
    if len(seqs) != len(directions):
        raise ShapeError("one direction tag per sequence is required")
    total = None
    for seq, direction in zip(seqs, directions):
        sb, squeeze = (T.reshape(seq, (1,) + seq.shape), True) if seq.ndim == 2 else (seq, False)
        if sb.shape[1] != h * w:
            raise ShapeError(f"sequence length {sb.shape[1]} != grid area {h * w}")
        perm = direction_permutation(direction, h, w)
        grid = T.permute_rows(sb, np.argsort(perm), axis=1)
        total = grid if total is None else total + grid
    out = T.reshape(total, (total.shape[0], h, w, total.shape[-1]))
    return T.reshape(out, out.shape[1:]) if squeeze else out


def ss2d_forward(z: Tensor, params, s6_fn=None) -> Tensor:
    """Quad-directional selective scan over a grid, [.., H, W, E] -> same.

    ``params`` is a sequence of one SsmParams per direction (a single shared
    set may be passed as a length-1 sequence).  ``s6_fn(seq, dir_index)`` is
    a test seam replacing the per-direction sequence transform.
    """
    zb, squeeze = _with_batch(z)
    _, h, w, _ = zb.shape
    outs = []
    for i, direction in enumerate(DIRECTIONS):
        seq = scan_expand(zb, direction)
        if s6_fn is not None:
            seq = s6_fn(seq, i)
        else:
            seq = s6_forward(seq, params[i % len(params)])
        outs.append(seq)
    merged = scan_merge(outs, DIRECTIONS, h, w)
    return T.reshape(merged, merged.shape[1:]) if squeeze else merged


class VssBlock(Module):
    """Gated visual state-space block over a channels-last grid.

    Main branch: linear d -> E=2d, depthwise 3x3 conv, SiLU, quad-directional
    scan, layer norm.  Gate branch: linear d -> E, SiLU.  Output: product,
    linear E -> d.  Input and output channel counts are equal, so the block
    is residual-compatible.  No positional embedding anywhere.
    """

    def __init__(self, dim: int, state_dim: int = 16, share_scan_params: bool = False, *,
                 rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.dim = dim
        e = 2 * dim
        self.in_proj = Linear(dim, e, rng=rng, dtype=dtype)
        self.gate_proj = Linear(dim, e, rng=rng, dtype=dtype)
        self.conv = Conv2d(e, e, 3, padding=1, groups=e, rng=rng, dtype=dtype)
        n_sets = 1 if share_scan_params else len(DIRECTIONS)
        self.scan_params = [SsmParams(e, state_dim, rng=rng, dtype=dtype) for _ in range(n_sets)]
        self.out_norm = LayerNorm(e, dtype=dtype)
        self.out_proj = Linear(e, dim, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.dim:
            raise ShapeError(f"channel extent {x.shape[-1]} != block dim {self.dim}")
        xb, squeeze = _with_batch(x)
        main = self.in_proj(xb)
        main = T.permute(main, (0, 3, 1, 2))
        main = self.conv(main)
        main = T.permute(main, (0, 2, 3, 1))
        main = T.silu(main)
        main = ss2d_forward(main, self.scan_params)
        main = self.out_norm(main)
        gate = T.silu(self.gate_proj(xb))
        out = self.out_proj(main * gate)
        return T.reshape(out, out.shape[1:]) if squeeze else out


class ConvFFN(Module):
    """1x1 conv d -> 4d, depthwise 3x3 conv, GeLU, 1x1 conv 4d -> d."""

    def __init__(self, dim: int, expansion: int = 4, *, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.dim = dim
        hidden = expansion * dim
        self.fc1 = Conv2d(dim, hidden, 1, rng=rng, dtype=dtype)
        self.dw = Conv2d(hidden, hidden, 3, padding=1, groups=hidden, rng=rng, dtype=dtype)
        self.fc2 = Conv2d(hidden, dim, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        xb, squeeze = _with_batch(x)
        y = T.permute(xb, (0, 3, 1, 2))
        y = self.fc1(y)
        y = self.dw(y)
        y = T.gelu(y)
        y = self.fc2(y)
        y = T.permute(y, (0, 2, 3, 1))
        return T.reshape(y, y.shape[1:]) if squeeze else y
