import csv
import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadfault.data import Normalization
from quadfault.ensemble import BatchPrediction, from_member_probs, predict_batch
from quadfault.nn.model import Architecture, MemberModel
from quadfault.sim.flightlog import FlightLog
from quadfault.ufc import (
    DEFAULT_GRID,
    NO_THRESHOLD,
    CalibrationError,
    UfcReport,
    calibrate_threshold,
    decide,
    parse_threshold,
    report_from_predictions,
    sweep_predictions,
    trace_flight,
    write_trace,
)


def brute_force_threshold(labels, entropy, grid):
    """Exhaustive search with exact fractions; ties go to the larger threshold."""
    best = None
    for tau in grid:
        acc = [i for i, h in enumerate(entropy) if h < tau]
        alpha = Fraction(1) if not acc else Fraction(sum(labels[i] == 1 for i in acc), len(acc))
        if best is None or alpha > best[0] or (alpha == best[0] and tau > best[1]):
            best = (alpha, tau)
    return best[1]


def random_prediction(rng, n_members=4, n=60, sharp=3.0):
    z = rng.normal(scale=sharp, size=(n_members, n, 5))
    z -= z.max(axis=2, keepdims=True)
    p = np.exp(z)
    return BatchPrediction(p / p.sum(axis=2, keepdims=True))


class TestDecide:
    def test_strict_inequality(self):
        pred = from_member_probs(np.array([[0.5, 0.5, 0, 0, 0]]))
        assert not decide(pred, math.log(2)).accepted
        assert decide(pred, math.nextafter(math.log(2), 1.0)).accepted

    def test_labels(self):
        pred = from_member_probs(np.array([[0.9, 0.1, 0, 0, 0]]))
        d = decide(pred, 0.5, origin=("f", 8.0))
        assert d.accepted and d.label == 1 and d.outcome == "accept" and d.origin == ("f", 8.0)
        r = decide(pred, 0.1)
        assert not r.accepted and r.label is None and r.outcome == "reject"

    def test_accept_all_and_reject_all(self):
        uniform = from_member_probs(np.full((1, 5), 0.2))
        one_hot = from_member_probs(np.eye(5)[[2]])
        assert decide(uniform, NO_THRESHOLD).accepted
        assert not decide(one_hot, 0.0).accepted

    def test_parse_threshold(self):
        assert parse_threshold("inf") == parse_threshold("No") == parse_threshold(None) == math.inf
        assert parse_threshold("0.5") == 0.5
        with pytest.raises(ValueError):
            parse_threshold(-0.1)


class TestCalibration:
    def test_single_value_grid(self):
        pred = random_prediction(np.random.default_rng(0))
        assert calibrate_threshold(pred, [0.7]) == 0.7

    def test_grid_below_every_entropy_counts_as_perfect(self):
        pred = BatchPrediction(np.full((1, 4, 5), 0.2))  # H = ln 5 everywhere
        assert calibrate_threshold(pred, [0.1, 0.5, 1.0]) == 1.0

    def test_prefers_threshold_that_drops_wrong_predictions(self):
        # two confident correct samples, one uncertain wrong one
        mp = np.array([[[0.99, 0.01, 0, 0, 0], [0.98, 0, 0.02, 0, 0], [0.3, 0.4, 0.3, 0, 0]]])
        assert calibrate_threshold(BatchPrediction(mp), [0.2, 0.5, 1.2]) == 0.5

    def test_accepts_list_of_predictions(self):
        bp = random_prediction(np.random.default_rng(1))
        assert calibrate_threshold([bp[i] for i in range(len(bp))]) == calibrate_threshold(bp)

    def test_rejects_faulty_calibration_labels(self):
        with pytest.raises(CalibrationError, match="all-healthy"):
            calibrate_threshold(random_prediction(np.random.default_rng(2), n=5), labels=[1, 1, 3, 1, 1])

    def test_empty_grid(self):
        with pytest.raises(CalibrationError):
            calibrate_threshold(random_prediction(np.random.default_rng(2)), [])

    def test_matches_brute_force_on_randomised_fixtures(self):
        rng = np.random.default_rng(2024)
        for k in range(100):
            pred = random_prediction(rng, n_members=int(rng.integers(1, 6)), n=int(rng.integers(1, 80)), sharp=rng.uniform(0.5, 6))
            if k % 4 == 0:
                grid = sorted(rng.uniform(0.0, 0.3, size=5).round(3))  # often empty acceptance
            elif k % 4 == 1:
                grid = list(DEFAULT_GRID)
            else:
                # grid points sitting exactly on observed entropies exercise the strict "<"
                grid = sorted(set(rng.choice(pred.entropy, size=min(6, len(pred)), replace=False).tolist() + [1.7]))
            got = calibrate_threshold(pred, grid)
            assert got == brute_force_threshold(pred.labels.tolist(), pred.entropy.tolist(), grid), k

    def test_default_grid(self):
        assert DEFAULT_GRID[0] == 0.05 and DEFAULT_GRID[-1] == 1.6 and len(DEFAULT_GRID) == 32
        assert DEFAULT_GRID[-1] < math.log(5)


class TestReport:
    @staticmethod
    def report(seed, T, n=200):
        rng = np.random.default_rng(seed)
        pred = random_prediction(rng, n=n)
        return report_from_predictions(pred, rng.integers(1, 6, size=n), T), pred

    def test_accept_all_matches_unfiltered(self):
        r, _ = self.report(0, NO_THRESHOLD)
        assert r.q_t == r.q_total and r.accuracy == r.unfiltered_accuracy
        assert np.array_equal(r.confusion_accepted, r.confusion_all) and r.confusion_rejected.sum() == 0

    def test_nothing_accepted_is_perfect(self):
        r, _ = self.report(1, 0.0)
        assert r.q_t == 0 and r.accuracy == 1.0
        assert all(u == 0.0 for u in r.usage)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**16), st.floats(0.0, 1.8))
    def test_partition_identities(self, seed, T):
        r, _ = self.report(seed, T, n=80)
        assert np.array_equal(r.confusion_accepted + r.confusion_rejected, r.confusion_all)
        assert r.confusion_accepted.sum() + r.confusion_rejected.sum() == r.q_total
        assert np.array_equal(r.class_accepted + r.confusion_rejected.sum(axis=1), r.class_counts)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**16))
    def test_acceptance_count_is_monotone(self, seed):
        rng = np.random.default_rng(seed)
        pred = random_prediction(rng, n=50)
        y = rng.integers(1, 6, size=50)
        taus = sorted(set(pred.entropy.tolist() + rng.uniform(0, 1.7, 20).tolist() + [0.0, math.inf]))
        counts = [report_from_predictions(pred, y, t).q_t for t in taus]
        assert all(b >= a for a, b in zip(counts, counts[1:]))
        # brute force count with strict inequality
        assert counts == [sum(h < t for h in pred.entropy) for t in taus]

    def test_usage_and_fault_mean(self):
        y_true = np.array([1, 1, 2, 2, 3, 4, 5, 5])
        y_pred = np.array([1, 1, 2, 3, 3, 4, 5, 1])
        H = np.array([1.5, 0.1, 0.2, 0.9, 0.3, 1.2, 0.1, 0.4])
        r = UfcReport(0.5, 10, y_true, y_pred, H)
        assert r.usage == [0.5, 0.5, 1.0, 0.0, 1.0]
        assert r.mean_fault_usage == pytest.approx(0.625)
        assert (r.q_p, r.q_t) == (4, 5) and r.accuracy == 0.8

    def test_absent_class_usage(self):
        r = UfcReport(1.0, 1, np.array([1, 2]), np.array([1, 2]), np.array([0.1, 0.2]))
        assert r.usage[2:] == [None, None, None] and r.mean_fault_usage == 1.0

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            report_from_predictions(BatchPrediction(np.zeros((1, 0, 5))), [], 0.5)

    def test_save(self, tmp_path):
        r, _ = self.report(3, NO_THRESHOLD)
        jp, tp = r.save(tmp_path / "rep")
        d = json.loads(jp.read_text())
        assert d["threshold"] == "inf" and d["Q_T"] == r.q_total
        assert "none (accept all)" in tp.read_text()


class TestSweep:
    def test_cells_match_direct_reports(self):
        rng = np.random.default_rng(5)
        pred = random_prediction(rng, n_members=10, n=120)
        y = rng.integers(1, 6, size=120)
        table = sweep_predictions(pred, y, [1, 3, 10], ["inf", 1.0, 0.5])
        for i, n in enumerate([1, 3, 10]):
            for j, t in enumerate([math.inf, 1.0, 0.5]):
                r = report_from_predictions(pred.first(n), y, t)
                assert table.accuracy[i, j] == r.accuracy and table.accepted[i, j] == r.q_t
        single = report_from_predictions(BatchPrediction(pred.member_probs[:1]), y, math.inf)
        assert table.accuracy[0, 0] == single.unfiltered_accuracy
        assert np.all(np.diff(table.accepted, axis=1) <= 0)
        assert "No" in table.to_text().splitlines()[0]

    def test_pool_too_small(self):
        pred = random_prediction(np.random.default_rng(6), n_members=3)
        with pytest.raises(ValueError, match="pool"):
            sweep_predictions(pred, np.ones(60, int), [5], ["inf"])

    def test_csv(self, tmp_path):
        rng = np.random.default_rng(7)
        pred = random_prediction(rng, n_members=2, n=30)
        table = sweep_predictions(pred, rng.integers(1, 6, 30), [1, 2], ["inf", 0.0])
        table.write_csv(tmp_path / "s.csv")
        rows = list(csv.DictReader(open(tmp_path / "s.csv")))
        assert len(rows) == 4 and rows[0]["threshold"] == "inf" and rows[1]["Q_T"] == "0"


class TestTrace:
    def test_rows_and_decisions(self, tmp_path):
        rng = np.random.default_rng(8)
        n, L = 40, 15
        rows = np.column_stack([0.5 * (np.arange(n) + 1), rng.normal(size=(n, 3)), rng.uniform(3e5, 5e5, (n, 4))])
        pos = rng.normal(size=(n, 3))
        log = FlightLog(0.5, rows, 1, "target", [[0, 0, 2]], positions=pos, meta={"flight_id": "tf"})
        X = np.stack([rows[t - L : t + 1, 1:].T for t in range(L, n)])
        norm = Normalization.fit(X)
        models = [MemberModel.initial(Architecture(), k, norm) for k in range(3)]
        pred = predict_batch(models, X)
        T = float(np.median(pred.entropy))
        trace = trace_flight(models, log, L, T)
        assert len(trace) == n - L
        assert trace[0].time == rows[L, 0] == 8.0
        for k, row in enumerate(trace):
            d = decide(pred[k], T)
            assert row.decision == d.outcome and row.pred_label == pred[k].label
            assert (row.x, row.y, row.z) == tuple(pos[L + k])
        write_trace(trace, tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "time,x,y,z,pred_label,entropy,decision" and len(lines) == n - L + 1
