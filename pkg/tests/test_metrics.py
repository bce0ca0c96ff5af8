"""Metric tests: hand-evaluated confusion cases, the published table row,
undefined-metric handling, and algebraic identities."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ptanet.metrics import ConfusionCounts, MetricsReport, compute, tally


class TestTally:
    def test_perfect_predictions(self):
        c = tally(np.array([1, 0, 1]), np.array([1, 0, 1]))
        assert (c.tp, c.tn, c.fp, c.fn) == (2, 1, 0, 0)

    def test_all_wrong(self):
        c = tally(np.array([0, 1]), np.array([1, 0]))
        assert (c.tp, c.tn, c.fp, c.fn) == (0, 0, 1, 1)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            tally(np.array([1, 0]), np.array([1]))

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError):
            tally(np.array([2, 0]), np.array([1, 0]))
        with pytest.raises(ValueError):
            tally(np.array([1, 0]), np.array([1, -1]))

    def test_against_recount_oracle(self):
        rng = np.random.default_rng(0)
        preds = rng.integers(0, 2, size=1000)
        labels = rng.integers(0, 2, size=1000)
        c = tally(preds, labels)
        tp = tn = fp = fn = 0
        for p, y in zip(preds, labels):
            if y == 1 and p == 1:
                tp += 1
            elif y == 0 and p == 0:
                tn += 1
            elif y == 0 and p == 1:
                fp += 1
            else:
                fn += 1
        assert (c.tp, c.tn, c.fp, c.fn) == (tp, tn, fp, fn)
        assert c.total == 1000

    def test_order_invariant(self):
        rng = np.random.default_rng(3)
        preds = rng.integers(0, 2, size=200)
        labels = rng.integers(0, 2, size=200)
        perm = rng.permutation(200)
        assert tally(preds, labels) == tally(preds[perm], labels[perm])

    def test_accepts_lists(self):
        c = tally([1, 1, 0], [1, 0, 0])
        assert (c.tp, c.fp, c.tn) == (1, 1, 1)


class TestConfusionCounts:
    def test_total(self):
        assert ConfusionCounts(tp=1, tn=2, fp=3, fn=4).total == 10

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            ConfusionCounts(tp=-1, tn=0, fp=0, fn=0)

    def test_addition(self):
        a = ConfusionCounts(1, 2, 3, 4)
        b = ConfusionCounts(10, 20, 30, 40)
        assert a + b == ConfusionCounts(11, 22, 33, 44)


class TestCompute:
    def test_hand_evaluated_case(self):
        rep = compute(ConfusionCounts(tp=8, fn=2, tn=9, fp=1))
        assert rep.accuracy == pytest.approx(17 / 20)
        assert rep.apcer == pytest.approx(0.2)
        assert rep.bpcer == pytest.approx(0.1)
        assert rep.acer == pytest.approx(0.15)

    def test_published_row_rounding(self):
        # APCER 1.07%, BPCER 4.18% -> ACER 2.625%, printed 2.63
        counts = ConfusionCounts(tp=9893, fn=107, tn=9582, fp=418)
        rep = compute(counts)
        pct = rep.percent_strings()
        assert pct["apcer"] == "1.07"
        assert pct["bpcer"] == "4.18"
        assert rep.acer == pytest.approx(0.02625)
        assert pct["acer"] == "2.63"  # 2.625 rounds half-up at 2 decimals

    def test_zero_missed_attacks(self):
        rep = compute(ConfusionCounts(tp=10, fn=0, tn=5, fp=2))
        assert rep.apcer == 0.0

    def test_no_attack_samples_undefined(self):
        rep = compute(ConfusionCounts(tp=0, fn=0, tn=9, fp=1))
        assert rep.apcer is None
        assert rep.acer is None
        assert rep.bpcer == pytest.approx(0.1)
        assert rep.accuracy == pytest.approx(0.9)

    def test_no_bonafide_samples_undefined(self):
        rep = compute(ConfusionCounts(tp=9, fn=1, tn=0, fp=0))
        assert rep.bpcer is None
        assert rep.acer is None
        assert rep.apcer == pytest.approx(0.1)

    def test_empty_counts_all_undefined(self):
        rep = compute(ConfusionCounts(0, 0, 0, 0))
        assert rep.accuracy is None
        assert rep.apcer is None
        assert rep.bpcer is None
        assert rep.acer is None

    @given(
        st.integers(0, 500), st.integers(0, 500),
        st.integers(0, 500), st.integers(0, 500),
    )
    def test_identities(self, tp, tn, fp, fn):
        rep = compute(ConfusionCounts(tp, tn, fp, fn))
        total = tp + tn + fp + fn
        if total:
            assert rep.accuracy == pytest.approx(1 - (fn + fp) / total)
        if rep.acer is not None:
            # exact mean of the two rates, computed without float error
            expected = (Fraction(fn, tp + fn) + Fraction(fp, fp + tn)) / 2
            assert rep.acer == pytest.approx(float(expected), abs=1e-12)
        for value in (rep.accuracy, rep.apcer, rep.bpcer, rep.acer):
            if value is not None:
                assert 0.0 <= value <= 1.0

    @given(st.integers(0, 99), st.integers(0, 99), st.integers(1, 99), st.integers(1, 99))
    def test_percent_strings_are_2dp(self, tp, tn, fp, fn):
        pct = compute(ConfusionCounts(tp, tn, fp, fn)).percent_strings()
        for key, text in pct.items():
            if text is not None:
                whole, frac = text.split(".")
                assert len(frac) == 2


class TestJson:
    def test_round_trip_fields(self):
        import json

        rep = compute(ConfusionCounts(tp=8, fn=2, tn=9, fp=1))
        doc = json.loads(rep.to_json())
        assert doc["counts"] == {"tp": 8, "tn": 9, "fp": 1, "fn": 2, "total": 20}
        assert doc["accuracy"] == rep.accuracy
        assert doc["percent"]["acer"] == "15.00"

    def test_undefined_serializes_as_null(self):
        import json

        doc = json.loads(compute(ConfusionCounts(0, 5, 0, 0)).to_json())
        assert doc["apcer"] is None
        assert doc["percent"]["apcer"] is None
