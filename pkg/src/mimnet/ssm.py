"""Selective state space core: discretization, the sequential scan, and the
input-conditioned S6 block.

The continuous system h' = A h + B x, y = C h + D x is discretized per
timestep with the zeroth-order hold rule for A (A_bar = exp(delta*A)) and
the first-order-accurate form B_bar = delta*B.  The scan then runs the
recurrence h_k = A_bar_k * h_{k-1} + B_bar_k * x_k strictly in sequence.

B and C are shared across channels within a block (one [N] vector per
timestep); delta has one entry per channel.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .nn import Module
from .tensor import Parameter, ShapeError, Tensor


class SsmParams(Module):
    """Per-channel diagonal state matrix plus input-dependent projections.

    A is stored as A_log with A = -exp(A_log), keeping every decay rate
    strictly negative.  The projection ``x_proj`` maps a channel vector in
    R^E to (B in R^N, C in R^N, delta_raw in R^E); delta is then
    softplus(delta_raw + dt_bias) > 0.
    """

    def __init__(self, channels: int, state_dim: int = 16, *, rng: np.random.Generator,
                 dtype=np.float64, dt_min: float = 1e-3, dt_max: float = 0.1):
        super().__init__()
        self.channels = channels
        self.state_dim = state_dim
        # S4D-real initialization: A[e, n] = -(n + 1)
        a = np.tile(np.arange(1, state_dim + 1, dtype=dtype), (channels, 1))
        self.A_log = Parameter(np.log(a))
        self.D_skip = Parameter(np.ones(channels, dtype=dtype))
        bound = 1.0 / math.sqrt(channels)
        self.x_proj = Parameter(rng.uniform(
            -bound, bound, size=(2 * state_dim + channels, channels)).astype(dtype))
        # dt_bias chosen so softplus(dt_bias) lands log-uniformly in [dt_min, dt_max]
        dt = np.exp(rng.uniform(math.log(dt_min), math.log(dt_max), size=channels)).astype(dtype)
        self.dt_bias = Parameter(np.log(np.expm1(dt)))

    def neg_decay(self) -> Tensor:
        """A = -exp(A_log), elementwise negative."""
        return T.neg(T.texp(self.A_log))


def discretize(delta: Tensor, a: Tensor, b: Tensor, allow_zero: bool = False):
    """Zeroth-order-hold discretization of (A, B) with per-step delta.

    delta: [..., L, E], a: [E, N], b: [..., L, N].  Returns
    (A_bar, B_bar) each [..., L, E, N] with A_bar = exp(delta*A) and
    B_bar = delta*B.  delta must be strictly positive (zero is permitted
    only when ``allow_zero`` is set, for limit-case tests).
    """
    dmin = delta.data.min() if delta.size else 1.0
    if dmin < 0 or (dmin == 0 and not allow_zero):
        raise ShapeError("discretize requires delta > 0 elementwise")
    d_col = T.reshape(delta, delta.shape + (1,))             # [..., L, E, 1]
    a_bar = T.texp(T.mul(d_col, a))                          # broadcast over [E, N]
    b_row = T.reshape(b, b.shape[:-1] + (1, b.shape[-1]))    # [..., L, 1, N]
    b_bar = T.mul(d_col, b_row)
    return a_bar, b_bar


def selective_scan(u: Tensor, a_bar: Tensor, b_bar: Tensor, c: Tensor, d_skip: Tensor) -> Tensor:
    """Run the recurrence h_k = A_bar_k*h_{k-1} + B_bar_k*u_k, y_k = C_k.h_k + D*u_k.

    u: [B, L, E] (a leading batch axis is optional), a_bar/b_bar: [B, L, E, N],
    c: [B, L, N], d_skip: [E].  Semantics are strictly sequential over L; the
    batch axis carries independent sequences.
    """
    squeeze = u.ndim == 2
    if squeeze:
        u = T.reshape(u, (1,) + u.shape)
        a_bar = T.reshape(a_bar, (1,) + a_bar.shape)
        b_bar = T.reshape(b_bar, (1,) + b_bar.shape)
        c = T.reshape(c, (1,) + c.shape)
    bsz, length, e = u.shape
    n = a_bar.shape[-1]
    if a_bar.shape != (bsz, length, e, n) or b_bar.shape != (bsz, length, e, n):
        raise ShapeError(f"discretized pair shape mismatch: {a_bar.shape} / {b_bar.shape}")
    if c.shape != (bsz, length, n):
        raise ShapeError(f"C shape {c.shape} != {(bsz, length, n)}")
    if d_skip.shape != (e,):
        raise ShapeError(f"D shape {d_skip.shape} != ({e},)")

    ud, ad, bd, cd, dd = u.data, a_bar.data, b_bar.data, c.data, d_skip.data
    dbx = bd * ud[:, :, :, None]
    h = np.zeros((bsz, e, n), dtype=ud.dtype)
    hs = np.empty((bsz, length, e, n), dtype=ud.dtype)
    for k in range(length):
        h = ad[:, k] * h + dbx[:, k]
        hs[:, k] = h
    y = np.einsum("blen,bln->ble", hs, cd, optimize=True) + dd * ud
    T.record_flops("scan_core", 8 * bsz * length * e * n)

    def bwd(g):
        # lam_k = dL/dh_k, accumulated right-to-left through A_bar
        lams = np.empty_like(hs)
        lam = np.zeros((bsz, e, n), dtype=ud.dtype)
        for k in range(length - 1, -1, -1):
            lam = lam + g[:, k, :, None] * cd[:, k, None, :]
            lams[:, k] = lam
            lam = lam * ad[:, k]
        h_prev = np.concatenate([np.zeros((bsz, 1, e, n), dtype=ud.dtype), hs[:, :-1]], axis=1)
        ga = lams * h_prev
        gb = lams * ud[:, :, :, None]
        gu = np.einsum("blen,blen->ble", lams, bd, optimize=True) + g * dd
        gc = np.einsum("blen,ble->bln", hs, g, optimize=True)
        gd = np.einsum("ble,ble->e", g, ud, optimize=True)
        return gu, ga, gb, gc, gd

    out = T._make(y, (u, a_bar, b_bar, c, d_skip), bwd, "selective_scan")
    if squeeze:
        out = T.reshape(out, out.shape[1:])
    return out


def s6_forward(x: Tensor, params: SsmParams) -> Tensor:
    """Input-conditioned scan over x: [B, L, E] (or [L, E]) -> same shape.

    Each step's (B, C, delta) come from projecting that step's channel
    vector, so the recurrence is content-gated; output step k depends on
    inputs 1..k only.

    When an operation counter is active the whole block is charged as one
    scan-core unit of 8*L*E*N (three projection-equivalents plus the scan);
    its internal arithmetic is not double counted.
    """
    if x.ndim not in (2, 3):
        raise ShapeError(f"s6_forward expects [L,E] or [B,L,E], got {x.shape}")
    if x.shape[-2] < 1:
        raise ShapeError("s6_forward needs sequence length >= 1")
    e, n = params.channels, params.state_dim
    if x.shape[-1] != e:
        raise ShapeError(f"channel extent {x.shape[-1]} != params.channels {e}")

    with T.flops_suppressed():
        proj = T.linear(x, params.x_proj)            # [..., L, 2N+E]
        b_in, c_in, d_raw = T.split(proj, [n, n, e], axis=-1)
        delta = T.softplus(d_raw + params.dt_bias)   # > 0
        a_bar, b_bar = discretize(delta, params.neg_decay(), b_in)
        y = selective_scan(x, a_bar, b_bar, c_in, params.D_skip)
    batch = 1 if x.ndim == 2 else x.shape[0]
    T.record_flops("scan_core", 8 * batch * x.shape[-2] * e * n)
    return y
