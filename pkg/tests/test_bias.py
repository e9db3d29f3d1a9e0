import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from btlner.bias import (
    LogitRecord,
    LogitRecords,
    compute_bias_report,
    epoch_ratio_series,
    write_reports_csv,
    write_reports_json,
)

HAND_LOGITS = [[1.0, 0.0], [0.0, 2.0], [3.0, 1.0], [0.5, 0.5]]
HAND_LABELS = [0, 1, 1, 0]


def _hand():
    return [LogitRecord(np.array(l), y) for l, y in zip(HAND_LOGITS, HAND_LABELS)]


def test_hand_fixture():
    r = compute_bias_report(_hand(), bins=4)
    # the tied last row counts toward class 0
    np.testing.assert_allclose(r.predicted_share, [0.75, 0.25])
    np.testing.assert_allclose(r.true_share, [0.5, 0.5])
    np.testing.assert_allclose(r.mean, [1.125, 0.875])
    np.testing.assert_allclose(r.std ** 2, [83 / 64, 35 / 64])
    assert r.max_gap() == pytest.approx(0.25)


def test_records_and_columns_agree():
    a = compute_bias_report(_hand())
    b = compute_bias_report(LogitRecords(np.array(HAND_LOGITS), np.array(HAND_LABELS)))
    assert np.array_equal(a.hist_counts, b.hist_counts)
    assert np.array_equal(a.predicted_share, b.predicted_share)


def test_all_o_degenerate():
    recs = LogitRecords(np.tile([5.0, 1.0, 1.0], (10, 1)), np.zeros(10, dtype=int))
    r = compute_bias_report(recs, bins=3, class_names=["O", "M", "N"])
    np.testing.assert_array_equal(r.predicted_share, [1, 0, 0])
    np.testing.assert_array_equal(r.true_share, [1, 0, 0])
    assert r.max_gap() == 0
    assert (r.std == 0).all()
    series = epoch_ratio_series([r])
    assert series.ratio[0, 0] == 1.0 and np.isnan(series.ratio[0, 1:]).all()
    assert series.to_dict()["ratio"][0] == [1.0, None, None]


def test_histograms():
    rng = np.random.default_rng(0)
    recs = LogitRecords(rng.normal(size=(300, 3)), rng.integers(0, 3, 300))
    r = compute_bias_report(recs)
    assert r.hist_counts.shape == (3, 60) and len(r.bin_edges) == 61
    assert (r.hist_counts.sum(axis=1) == 300).all()
    assert r.bin_edges[0] == recs.logits.min() and r.bin_edges[-1] == recs.logits.max()
    am = compute_bias_report(recs, hist_mode="argmax")
    np.testing.assert_array_equal(am.hist_counts.sum(axis=1), np.bincount(recs.predictions(), minlength=3))


@settings(max_examples=50, deadline=None)
@given(arrays(np.int64, (20, 4), elements=st.integers(-20, 20)), st.sampled_from([0.25, 0.5, 2.0, 8.0]),
       st.integers(-3, 3))
def test_shares_invariant_under_monotone_transform(xi, scale, shift):
    # exactly representable values, so no ties are created or broken by rounding
    x = xi / 4.0
    labels = np.arange(20) % 4
    a = compute_bias_report(LogitRecords(x, labels))
    b = compute_bias_report(LogitRecords(scale * x + shift, labels))
    np.testing.assert_array_equal(a.predicted_share, b.predicted_share)
    np.testing.assert_array_equal(a.true_share, b.true_share)
    assert math.isclose(a.predicted_share.sum(), 1.0)


def test_ratio_series_over_epochs():
    r1 = compute_bias_report(_hand(), epoch=1)
    r2 = compute_bias_report(LogitRecords(np.array(HAND_LOGITS)[:, ::-1], np.array(HAND_LABELS)), epoch=2)
    s = epoch_ratio_series([r1, r2])
    assert s.epochs.tolist() == [1, 2]
    np.testing.assert_allclose(s.ratio, [[1.5, 0.5], [1.0, 1.0]])


def test_errors():
    with pytest.raises(ValueError):
        compute_bias_report([])
    with pytest.raises(ValueError):
        compute_bias_report(_hand(), hist_mode="top")
    with pytest.raises(ValueError):
        epoch_ratio_series([])


def test_exports(tmp_path):
    reports = [compute_bias_report(_hand(), epoch=e, class_names=["O", "X"]) for e in (1, 2)]
    write_reports_csv(tmp_path / "b.csv", reports, extra={"seed": 7})
    rows = list(csv.DictReader((tmp_path / "b.csv").open()))
    assert len(rows) == 4
    assert rows[0] == {"seed": "7", "epoch": "1", "class": "O", "A": "0.75", "N_share": "0.5",
                       "mean": "1.125", "std": str(math.sqrt(83 / 64))}
    write_reports_json(tmp_path / "b.json", reports)
    data = json.loads((tmp_path / "b.json").read_text())
    assert data[1]["epoch"] == 2 and len(data[1]["classes"][0]["hist"]) == 60
