import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossdisp.metrics import (
    CSV_COLUMNS,
    MetricRow,
    coverage_rmse,
    format_csv,
    precision_rmse,
    read_csv,
    rmse,
    success_rate,
    write_csv,
)


def oracle_rmse(a, b):
    total = 0.0
    for p, q in zip(a, b):
        total += sum((float(x) - float(y)) ** 2 for x, y in zip(p, q))
    return math.sqrt(total / len(a))


def test_rmse_examples():
    p = np.random.default_rng(0).normal(size=(5, 3))
    assert rmse(p, p) == 0.0
    assert rmse(p + [1.0, 0, 0], p) == pytest.approx(1.0, abs=1e-12)
    assert rmse([[0, 0, 0], [0, 0, 2]], np.zeros((2, 3))) == pytest.approx(math.sqrt(2), abs=1e-15)


def test_rmse_errors():
    with pytest.raises(ValueError, match="mismatch"):
        rmse(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError, match="empty"):
        rmse(np.zeros((0, 3)), np.zeros((0, 3)))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
def test_rmse_is_a_metric(seed, n):
    rng = np.random.default_rng(seed)
    a, b, c = (rng.normal(size=(n, 3)) * rng.uniform(0.01, 10) for _ in range(3))
    assert rmse(a, b) == pytest.approx(oracle_rmse(a, b), rel=1e-12)
    assert rmse(a, b) == rmse(b, a)
    assert rmse(a, b) > 0
    assert rmse(a, c) <= rmse(a, b) + rmse(b, c) + 1e-12


def test_coverage_examples():
    gt = np.zeros((2, 3))
    near, far = gt + [1.0, 0, 0], gt + [2.0, 0, 0]
    assert coverage_rmse([gt], [[far, near]]) == pytest.approx(1.0)
    assert coverage_rmse([gt], [[far, gt]]) == 0.0


def test_coverage_matches_double_loop():
    rng = np.random.default_rng(1)
    gts = [rng.normal(size=(5, 3)) for _ in range(3)]
    preds = [[rng.normal(size=(5, 3)) for _ in range(4)] for _ in range(3)]
    expected = sum(min(oracle_rmse(p, g) for p in ps) for g, ps in zip(gts, preds)) / 3
    assert coverage_rmse(gts, preds) == pytest.approx(expected, rel=1e-12)


def test_coverage_errors():
    with pytest.raises(ValueError, match="empty prediction set"):
        coverage_rmse([np.zeros((1, 3))], [[]])
    with pytest.raises(ValueError, match="ground truths"):
        coverage_rmse([np.zeros((1, 3))], [])


def test_precision_examples():
    rng = np.random.default_rng(2)
    ref = rng.normal(size=(4, 3))
    assert precision_rmse({0: [ref]}, {0: [ref, ref]}) == 0.0
    preds = [rng.normal(size=(4, 3)) for _ in range(5)]
    assert precision_rmse([[ref]], [preds]) == pytest.approx(np.mean([rmse(p, ref) for p in preds]), rel=1e-12)


def test_precision_matches_exhaustive_oracle():
    rng = np.random.default_rng(3)
    refs = {"a": [rng.normal(size=(3, 3)) for _ in range(2)], "b": [rng.normal(size=(3, 3))]}
    preds = {"a": [rng.normal(size=(3, 3)) for _ in range(4)], "b": [rng.normal(size=(3, 3)) for _ in range(4)]}
    per = [sum(min(oracle_rmse(p, r) for r in refs[c]) for p in preds[c]) / 4 for c in ("a", "b")]
    assert precision_rmse(refs, preds) == pytest.approx(sum(per) / 2, rel=1e-12)


def test_precision_errors():
    with pytest.raises(ValueError, match="empty reference"):
        precision_rmse({0: []}, {0: [np.zeros((1, 3))]})
    with pytest.raises(ValueError, match="no cloths"):
        precision_rmse({}, {})


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_monotonicity(seed):
    rng = np.random.default_rng(seed)
    gts = [rng.normal(size=(4, 3)) for _ in range(3)]
    preds = [[rng.normal(size=(4, 3)) for _ in range(3)] for _ in range(3)]
    cov = coverage_rmse(gts, preds)
    mean_single = np.mean([np.mean([rmse(p, g) for p in ps]) for g, ps in zip(gts, preds)])
    assert cov <= mean_single + 1e-12
    more = [ps + [rng.normal(size=(4, 3))] for ps in preds]
    assert coverage_rmse(gts, more) <= cov + 1e-12
    prec = precision_rmse([gts[:2]], [preds[0]])
    assert precision_rmse([gts], [preds[0]]) <= prec + 1e-12


def test_success_rate():
    @dataclass
    class R:
        success: bool

    assert success_rate([R(True)] * 3) == 1.0
    assert success_rate([False, False]) == 0.0
    assert success_rate([R(True), R(True), R(False), R(True)]) == 0.75
    with pytest.raises(ValueError):
        success_rate([])


def test_csv_round_trip(tmp_path):
    rows = [MetricRow("train", "CD", "rmse", 0.1 + 0.2, 40, 0), MetricRow("ood", "CD-W", "success_rate", 0.75, 40, 3)]
    text = format_csv(rows)
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    write_csv(rows, tmp_path / "m.csv")
    assert read_csv(tmp_path / "m.csv") == rows


def test_csv_rejects_wrong_columns(tmp_path):
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="columns"):
        read_csv(tmp_path / "bad.csv")
