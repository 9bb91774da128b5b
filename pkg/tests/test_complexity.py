"""Closed-form operation counts and the measured counter's cross-checks."""

import numpy as np
import pytest

import mimnet.tensor as T
from mimnet.arch import MimConfig, MimModel
from mimnet.complexity import (analytic_stage_table, count_flops,
                               measure_callable, mim_block_flops, ssm_flops,
                               transformer_flops)
from mimnet.ssm import SsmParams, s6_forward
from mimnet.tensor import Tensor


class TestClosedForms:
    def test_ssm_unit(self):
        assert ssm_flops(1, 1) == 128

    def test_ssm_linear_in_n(self):
        assert ssm_flops(2, 1) == 256
        for n, d in [(3, 5), (17, 4), (100, 32)]:
            assert ssm_flops(2 * n, d) == 2 * ssm_flops(n, d)

    def test_ssm_identity_with_substitution(self):
        # 3nEN + nEN with E=2d, N=16 collapses to 128nd
        for n, d in [(1, 1), (7, 3), (64, 32)]:
            e, n_state = 2 * d, 16
            assert 3 * n * e * n_state + n * e * n_state == ssm_flops(n, d)

    def test_mim_block_example(self):
        assert mim_block_flops(4, 16, 2, 8) == 16384 + 4096 + 768 + 768 == 22016

    def test_mim_block_m_zero_degenerates(self):
        n, d = 5, 6
        assert mim_block_flops(n, 0, 3, d) == ssm_flops(n, d) + 3 * n * d * d

    def test_mim_block_linear_in_n(self):
        assert mim_block_flops(8, 16, 2, 8) == 2 * mim_block_flops(4, 16, 2, 8)

    def test_transformer_example(self):
        assert transformer_flops(16, 8) == 2 * 16 * 8 * (48 + 16) == 16384

    def test_transformer_superlinear(self):
        n, d = 64, 8
        ratio = transformer_flops(2 * n, d) / transformer_flops(n, d)
        assert ratio > 2.0

    def test_mim_vs_transformer_ratio_vanishes(self):
        m, c, d = 16, 4, 32
        ratios = [mim_block_flops(n, m, c, d) / transformer_flops(n, d)
                  for n in (64, 256, 1024, 4096, 16384)]
        assert all(a > b for a, b in zip(ratios, ratios[1:]))
        assert ratios[-1] < 0.05

    def test_preconditions(self):
        with pytest.raises(ValueError):
            ssm_flops(0, 4)
        with pytest.raises(ValueError):
            transformer_flops(3, 0)
        with pytest.raises(ValueError):
            mim_block_flops(1, -1, 1, 1)


class TestMeasuredCounter:
    def test_single_linear_counts_two_macs(self, rng):
        x = Tensor(rng.random((7, 5)))
        w = Tensor(rng.random((3, 5)))
        counter = measure_callable(lambda: T.linear(x, w))
        assert counter.records["model"]["linear"] == 2 * 7 * 5 * 3

    def test_bare_s6_matches_formula_within_5pct(self):
        rng = np.random.default_rng(0)
        for _ in range(12):
            n = int(rng.integers(4, 64))
            d = int(rng.integers(2, 24))
            params = SsmParams(d, state_dim=16, rng=rng)
            x = Tensor(rng.standard_normal((n, d)))
            counter = measure_callable(lambda: s6_forward(x, params))
            measured = counter.records["model"]["scan_core"]
            assert measured == pytest.approx(ssm_flops(n, d), rel=0.05)

    def test_scan_internals_not_double_counted(self, rng):
        params = SsmParams(4, state_dim=16, rng=rng)
        x = Tensor(rng.standard_normal((8, 4)))
        counter = measure_callable(lambda: s6_forward(x, params))
        cats = counter.records["model"]
        assert set(cats) == {"scan_core"}

    def test_model_report_fields_and_consistency(self):
        cfg = MimConfig(input_h=64, input_w=64, word_dim=2, sentence_dim=4,
                        blocks_per_stage=[1, 1, 1, 1]).validate()
        model = MimModel(cfg, seed=0)
        report = count_flops(model)
        d = report.to_dict()
        assert d["schema"] == "mimnet-flops/1"
        assert report.analytic_ssm == ssm_flops(report.n, report.d)
        assert report.analytic_mim_block == mim_block_flops(report.n, report.m,
                                                            report.c, report.d)
        assert report.analytic_transformer_block == transformer_flops(report.n, report.d)
        rows = analytic_stage_table(cfg)
        assert [r["stage"] for r in rows] == [1, 2, 3, 4]
        assert d["analytic"]["per_stage"] == rows
        assert report.measured_total > 0
        sections = set(report.breakdown)
        assert {"stem", "stage1", "stage4", "upsample", "decoder"} <= sections

    def test_encoder_count_scales_linearly_with_tokens(self):
        def encoder_count(h):
            cfg = MimConfig(input_h=h, input_w=h, word_dim=2, sentence_dim=4,
                            blocks_per_stage=[1, 1, 1, 1]).validate()
            return count_flops(MimModel(cfg, seed=0)).measured_encoder

        ratio = encoder_count(128) / encoder_count(64)
        assert ratio == pytest.approx(4.0, abs=0.1)

    def test_analytic_transformer_ratio_exceeds_four_on_same_schedule(self):
        cfg64 = MimConfig(input_h=64, input_w=64, word_dim=2, sentence_dim=4).validate()
        cfg128 = MimConfig(input_h=128, input_w=128, word_dim=2, sentence_dim=4).validate()
        n64 = cfg64.sentence_hw_at(0)[0] * cfg64.sentence_hw_at(0)[1]
        n128 = cfg128.sentence_hw_at(0)[0] * cfg128.sentence_hw_at(0)[1]
        assert n128 == 4 * n64
        ratio = transformer_flops(n128, cfg64.sentence_dim) / transformer_flops(n64, cfg64.sentence_dim)
        assert ratio > 4.0

    def test_counter_suppression_context(self, rng):
        x = Tensor(rng.random((3, 3)))
        counter = T.FlopCounter()
        with T.use_flop_counter(counter):
            with T.flops_suppressed():
                T.gelu(x)
            T.gelu(x)
        assert counter.records["model"]["norm_act"] == 5 * 9
