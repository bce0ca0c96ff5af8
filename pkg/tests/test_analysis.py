"""Complexity accounting and latency benchmark tests.

MAC totals are checked three ways: against values frozen from the
instrumented kernels, against the instrumented forward directly, and
against the published per-configuration table within its tolerances.
"""

import itertools
import json

import numpy as np
import pytest

from ptanet.analysis import (
    CANONICAL_ORDER,
    ComplexityReport,
    LatencyReport,
    bench_latency,
    complexity_suite,
    count_macs,
    count_params,
    emit_report,
    format_table,
    report_json,
    with_relative,
)
from ptanet.model import build_network
from ptanet.nn import count_ops
from ptanet.tensor import Tensor, no_grad

# frozen from the instrumented forward at 1x3x128x128
EXPECTED_MACS = {
    "HHH": 104_172_034,
    "LHH": 100_649_474,
    "HLH": 96_528_898,
    "HHL": 99_021_314,
    "LLL": 87_855_618,
    "BBB": 120_488_450,
}

EXPECTED_PARAMS = {
    "HHH": 2_226_434,
    "LHH": 2_172_162,
    "HLH": 2_108_162,
    "HHL": 1_906_434,
    "LLL": 1_733_890,
    "BBB": 2_718_978,
}

# published reference points (millions)
PAPER_MACS_M = {
    "HHH": 104.15,
    "LHH": 100.63,
    "HLH": 96.50,
    "HHL": 98.99,
    "LLL": 87.84,
    "BBB": 120.46,
}


@pytest.fixture(scope="module")
def net():
    return build_network(seed=0)


class TestMacCounting:
    def test_frozen_values(self, net):
        for cfg, expected in EXPECTED_MACS.items():
            assert count_macs(net, cfg) == expected, cfg

    def test_within_published_band(self, net):
        for cfg, millions in PAPER_MACS_M.items():
            got = count_macs(net, cfg)
            assert abs(got - millions * 1e6) / (millions * 1e6) < 0.03, cfg

    def test_matches_instrumented_forward_exactly(self, net):
        x = np.random.default_rng(0).random(size=(1, 3, 128, 128), dtype=np.float32)
        net.set_training(False)
        for cfg in CANONICAL_ORDER:
            net.configure(cfg)
            with count_ops() as counter, no_grad():
                net.forward(Tensor(x))
            assert count_macs(net, cfg) == counter.total, cfg

    def test_matches_instrumented_at_other_sizes(self, net):
        net.set_training(False)
        net.configure("HHH")
        for size in (32, 96):
            x = np.zeros((1, 3, size, size), dtype=np.float32)
            with count_ops() as counter, no_grad():
                net.forward(Tensor(x))
            assert count_macs(net, "HHH", (size, size)) == counter.total, size

    def test_symmetric_around_heavy(self, net):
        # adding the light branches on top of HHH costs exactly what
        # removing the heavy ones saves
        assert (
            count_macs(net, "BBB") - count_macs(net, "HHH")
            == count_macs(net, "HHH") - count_macs(net, "LLL")
        )

    def test_per_stage_savings(self, net):
        hhh = count_macs(net, "HHH")
        assert hhh - count_macs(net, "LHH") == 3_522_560
        assert hhh - count_macs(net, "HLH") == 7_643_136
        assert hhh - count_macs(net, "HHL") == 5_150_720

    def test_monotone_in_branch_weight(self, net):
        lll = count_macs(net, "LLL")
        hhh = count_macs(net, "HHH")
        for single_light in ("LHH", "HLH", "HHL"):
            mid = count_macs(net, single_light)
            assert lll <= mid <= hhh
        assert hhh <= count_macs(net, "BBB")

    def test_uses_current_config_by_default(self, net):
        net.configure("LLL")
        assert count_macs(net) == EXPECTED_MACS["LLL"]

    def test_rejects_tiny_input(self, net):
        with pytest.raises(ValueError, match="at least"):
            count_macs(net, "HHH", (16, 16))


class TestParamCounting:
    def test_frozen_values(self, net):
        for cfg, expected in EXPECTED_PARAMS.items():
            assert count_params(net, cfg) == expected, cfg

    def test_monotone(self, net):
        lll = count_params(net, "LLL")
        hhh = count_params(net, "HHH")
        for cfg in ("LHH", "HLH", "HHL"):
            assert lll <= count_params(net, cfg) <= hhh
        assert hhh <= count_params(net, "BBB")


class _RecordingNet:
    """Duck-typed stand-in that captures benchmark inputs."""

    def __init__(self):
        self.inputs = []
        self.configs = []

    def configure(self, cfg):
        self.configs.append(str(cfg))

    def set_training(self, training):
        assert training is False

    def forward(self, x):
        self.inputs.append(x.data.copy())
        return x


class TestBenchLatency:
    def test_rejects_too_few_runs(self, net):
        with pytest.raises(ValueError, match="30"):
            bench_latency(net, "HHH", runs=10)

    def test_rejects_negative_warmup(self, net):
        with pytest.raises(ValueError, match="warmup"):
            bench_latency(net, "HHH", runs=30, warmup=-1)

    def test_constant_clock_collapses_percentiles(self, net):
        # exactly representable step: every interval is bitwise 1.0
        ticks = itertools.count()
        rep = bench_latency(
            net, "HHH", runs=30, warmup=2, clock=lambda: float(next(ticks))
        )
        assert rep.p10_ms == rep.median_ms == rep.p90_ms == 1000.0
        assert rep.timed_runs == 30
        assert rep.warmup_runs == 2

    def test_identical_inputs_across_configs(self):
        # both runs must be timed on bitwise-equal input streams
        captured = []
        for cfg in ("HHH", "LLL"):
            fake = _RecordingNet()
            ticks = itertools.count()
            bench_latency(fake, cfg, runs=30, warmup=1, seed=9,
                          clock=lambda: float(next(ticks)))
            assert fake.configs == [cfg]
            captured.append(fake.inputs)
        assert len(captured[0]) == len(captured[1]) == 31
        for a, b in zip(captured[0], captured[1]):
            assert a.shape == (1, 3, 128, 128)
            assert np.array_equal(a, b)

    def test_report_validation(self):
        with pytest.raises(ValueError, match="timed_runs"):
            LatencyReport("HHH", 1, 10, 1.0, 1.0, 1.0, 1.0)
        with pytest.raises(ValueError, match="percentiles"):
            LatencyReport("HHH", 1, 30, 1.0, 2.0, 3.0, 1.0)

    def test_with_relative_ratios(self):
        base = LatencyReport("HHH", 1, 30, 10.0, 9.0, 11.0, float("nan"))
        fast = LatencyReport("LLL", 1, 30, 8.0, 7.0, 9.0, float("nan"))
        filled = with_relative([base, fast], base)
        assert filled[0].relative_to_HHH == 1.0
        assert filled[1].relative_to_HHH == 0.8
        assert filled[1].median_ms == 8.0


class TestReporting:
    def test_suite_covers_all_configs_in_order(self, net):
        rows = complexity_suite(net)
        assert [r.config for r in rows] == list(CANONICAL_ORDER)
        assert rows[0].relative_macs == 1.0
        assert rows[0].params == EXPECTED_PARAMS["HHH"]

    def test_emit_orders_canonically(self):
        rows = [
            ComplexityReport("LLL", 1, 100, 0.8),
            ComplexityReport("HHH", 2, 125, 1.0),
        ]
        doc = emit_report(rows)
        assert [r["config"] for r in doc["configs"]] == ["HHH", "LLL"]

    def test_emit_merges_latency_columns(self):
        comp = [ComplexityReport("HHH", 2, 125, 1.0)]
        lat = [LatencyReport("HHH", 1, 30, 10.0, 9.0, 11.0, 1.0)]
        doc = emit_report(comp, lat)
        row = doc["configs"][0]
        assert row["params"] == 2
        assert row["median_ms"] == 10.0

    def test_emit_rejects_empty(self):
        with pytest.raises(ValueError):
            emit_report([], [])

    def test_json_round_trip_exact(self, net):
        doc = emit_report(complexity_suite(net))
        assert json.loads(report_json(doc)) == doc

    def test_table_formatting(self, net):
        doc = emit_report(complexity_suite(net))
        text = format_table(doc)
        lines = text.splitlines()
        assert lines[0].split() == ["config", "params", "(M)", "Mops", "ms", "relative"]
        assert len(lines) == 2 + len(CANONICAL_ORDER)
        hhh = lines[2].split()
        assert hhh[0] == "HHH"
        assert hhh[1] == "2.23"
        assert hhh[2] == "104.17"
        assert hhh[3] == "-"  # no latency column data
        assert hhh[4] == "1.00"
