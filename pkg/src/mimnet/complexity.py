"""Analytic operation-count formulas and a measured counter over the model.

Conventions: conv/linear/matmul are charged 2 ops per multiply-accumulate;
each selective-scan core is charged 8*L*E*N as one unit (three
projection-equivalents plus the scan recurrence, 3nEN + nEN doubled), with
its internal arithmetic suppressed to avoid double counting; normalization
and activations are charged 5 ops per element; plain elementwise arithmetic
1 op per element.  The analytic formulas quote closed forms in terms of the
sequence length n, words-per-sentence m, word dim c, and sentence dim d,
with state dim N=16 and inner width E=2d substituted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .arch import MimConfig, MimModel
from .tensor import Tensor


def ssm_flops(n: int, d: int) -> int:
    """Scan-core count for a length-n sequence at width d: 3nEN + nEN = 128nd
    once N=16 and E=2d are substituted."""
    if n < 1 or d < 1:
        raise ValueError("ssm_flops needs n, d >= 1")
    return 128 * n * d


def mim_block_flops(n: int, m: int, c: int, d: int) -> int:
    """One nested block: m*n word tokens at dim c plus n sentence tokens at
    dim d, each costing a scan core and three width-d (or c) linears."""
    if min(n, c, d) < 1 or m < 0:
        raise ValueError("mim_block_flops needs n, c, d >= 1 and m >= 0")
    return 128 * m * n * c + 128 * n * d + 3 * m * n * c * c + 3 * n * d * d


def transformer_flops(n: int, d: int) -> int:
    """Standard transformer block on n tokens of width d: 2nd(6d + n)."""
    if n < 1 or d < 1:
        raise ValueError("transformer_flops needs n, d >= 1")
    return 2 * n * d * (6 * d + n)


@dataclass
class FlopsReport:
    """Analytic formula values alongside counts measured from a real forward."""

    n: int
    m: int
    c: int
    d: int
    state_dim: int
    inner_width: int
    analytic_ssm: int
    analytic_mim_block: int
    analytic_transformer_block: int
    analytic_per_stage: list[dict] = field(default_factory=list)
    measured_total: float = 0.0
    breakdown: dict = field(default_factory=dict)

    def measured_sections(self, names) -> float:
        return sum(sum(cats.values()) for sec, cats in self.breakdown.items() if sec in set(names))

    @property
    def measured_encoder(self) -> float:
        keep = {"stem", "stage1", "stage2", "stage3", "stage4", "upsample"}
        return self.measured_sections(keep)

    def to_dict(self) -> dict:
        return {
            "schema": "mimnet-flops/1",
            "dims": {"n": self.n, "m": self.m, "c": self.c, "d": self.d,
                     "state_dim": self.state_dim, "inner_width": self.inner_width},
            "convention": "2 ops per MAC; scan core 8*L*E*N per unit; norm/act 5 per element",
            "analytic": {
                "ssm": self.analytic_ssm,
                "mim_block": self.analytic_mim_block,
                "transformer_block": self.analytic_transformer_block,
                "per_stage": self.analytic_per_stage,
            },
            "measured": {
                "total": self.measured_total,
                "encoder": self.measured_encoder,
                "breakdown": {sec: dict(sorted(cats.items()))
                              for sec, cats in sorted(self.breakdown.items())},
            },
        }


def analytic_stage_table(cfg: MimConfig) -> list[dict]:
    """Closed-form block counts per stage at the configured geometry."""
    rows = []
    for s in range(cfg.N_STAGES):
        hs, ws = cfg.sentence_hw_at(s)
        n = hs * ws
        m = cfg.words_per_sentence if cfg.inner_enabled else 0
        c = cfg.word_dim_at(s)
        d = cfg.sentence_dim_at(s)
        rows.append({
            "stage": s + 1,
            "n": n, "m": m, "c": c, "d": d,
            "blocks": cfg.blocks_per_stage[s],
            "mim_block": mim_block_flops(n, m, c, d),
            "transformer_block": transformer_flops(n, d),
            "ssm": ssm_flops(n, d),
        })
    return rows


def count_flops(model: MimModel, images=None, batch: int = 1) -> FlopsReport:
    """Run one forward pass under the operation counter and report the counts
    next to the analytic closed forms for the same geometry."""
    cfg = model.cfg
    if images is None:
        images = Tensor(np.zeros((batch, 3, cfg.input_h, cfg.input_w), dtype=cfg.dtype))
    counter = T.FlopCounter()
    with T.no_grad(), T.use_flop_counter(counter):
        model(images)
    hs, ws = cfg.sentence_hw_at(0)
    n = hs * ws
    m = cfg.words_per_sentence if cfg.inner_enabled else 0
    c, d = cfg.word_dim_at(0), cfg.sentence_dim_at(0)
    return FlopsReport(
        n=n, m=m, c=c, d=d,
        state_dim=cfg.state_dim, inner_width=2 * d,
        analytic_ssm=ssm_flops(n, d),
        analytic_mim_block=mim_block_flops(n, m, c, d),
        analytic_transformer_block=transformer_flops(n, d),
        analytic_per_stage=analytic_stage_table(cfg),
        measured_total=counter.total(),
        breakdown=counter.records,
    )


def measure_callable(fn) -> T.FlopCounter:
    """Count the ops executed by an arbitrary forward callable."""
    counter = T.FlopCounter()
    with T.no_grad(), T.use_flop_counter(counter):
        fn()
    return counter
