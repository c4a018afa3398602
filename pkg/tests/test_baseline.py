import numpy as np
import pytest

from evcam.baseline import (BaselineParams, GroundTruthLabel, MetricCounts, baseline_detect, clean_mask,
                            difference_mask, labels_csv, match_triggers, metrics_csv, read_labels)
from evcam.pipeline import TriggerEvent
from evcam.sensor import COLS, ROWS

from oracles import flood_components, open_close


def _trig(f, rule="r", tid=0):
    return TriggerEvent(f, rule, tid, 0.0, 0.0)


def test_identical_frames_give_nothing():
    f = np.random.default_rng(0).integers(0, 256, (ROWS, COLS))
    assert baseline_detect(f, f) == []


def test_moving_square_gives_union_blob():
    prev = np.zeros((ROWS, COLS), np.uint8)
    cur = prev.copy()
    prev[20:30, 30:40] = 255
    cur[20:30, 40:50] = 255
    blobs = baseline_detect(cur, prev, BaselineParams(min_pixels=20))
    assert len(blobs) == 1
    assert blobs[0].bbox == (20, 29, 30, 49)


def test_salt_noise_is_opened_away():
    rng = np.random.default_rng(1)
    prev = np.zeros((ROWS, COLS), np.uint8)
    cur = prev.copy()
    idx = rng.choice(ROWS * COLS, 200, replace=False)
    cur.ravel()[idx] = 255
    mask = difference_mask(cur, prev, 25)
    assert mask.sum() == 200
    assert baseline_detect(cur, prev, BaselineParams(min_pixels=1)) == []


def test_cleanup_matches_loop_oracle():
    rng = np.random.default_rng(7)
    for _ in range(3):
        mask = rng.random((ROWS, COLS)) < 0.45
        np.testing.assert_array_equal(clean_mask(mask), open_close(mask))


def test_border_blob_survives_closing():
    mask = np.zeros((ROWS, COLS), bool)
    mask[0:6, 0:6] = True
    np.testing.assert_array_equal(clean_mask(mask), mask)


def test_detection_matches_flood_fill_oracle():
    rng = np.random.default_rng(12)
    for _ in range(3):
        prev = rng.integers(0, 256, (ROWS, COLS))
        cur = prev.copy()
        for _ in range(6):
            r, c = rng.integers(0, ROWS - 8), rng.integers(0, COLS - 8)
            h, w = rng.integers(3, 9, 2)
            cur[r:r + h, c:c + w] = (cur[r:r + h, c:c + w] + 128) % 256
        mask = open_close(np.abs(cur.astype(int) - prev) > 25)
        got = [(b.row, b.col, b.rmin, b.rmax, b.cmin, b.cmax, b.pixel_count)
               for b in baseline_detect(cur, prev, BaselineParams(25, 5))]
        assert got == pytest.approx(flood_components(mask, 5))


def test_metric_counts_vacuous():
    m = MetricCounts()
    assert (m.precision, m.recall) == (1.0, 1.0)
    assert MetricCounts(1, 2, 3) + MetricCounts(1, 1, 1) == MetricCounts(2, 3, 4)


def test_nine_of_nine():
    labels = [GroundTruthLabel(100 * k, "gate") for k in range(9)]
    m = match_triggers([_trig(100 * k, "gate") for k in range(9)], labels)
    assert (m.td, m.fp, m.fn, m.precision, m.recall) == (9, 0, 0, 1.0, 1.0)


def test_no_triggers():
    m = match_triggers([], [GroundTruthLabel(10 * k, "r") for k in range(5)])
    assert (m.td, m.fp, m.fn, m.precision, m.recall) == (0, 0, 5, 1.0, 0.0)


def test_one_spurious():
    labels = [GroundTruthLabel(10, "r"), GroundTruthLabel(100, "r")]
    m = match_triggers([_trig(12), _trig(98), _trig(300)], labels)
    assert (m.td, m.fp, m.fn) == (2, 1, 0)
    assert m.precision == pytest.approx(2 / 3) and m.recall == 1.0


def test_matching_respects_window_and_rule():
    labels = [GroundTruthLabel(50, "a", window=15)]
    assert match_triggers([_trig(66, "a")], labels).td == 0
    assert match_triggers([_trig(65, "a")], labels).td == 1
    assert match_triggers([_trig(50, "b")], labels).td == 0


def test_nearest_trigger_wins():
    labels = [GroundTruthLabel(50, "a")]
    m = match_triggers([_trig(40, "a", 0), _trig(52, "a", 1)], labels)
    assert (m.td, m.fp) == (1, 1)


def test_label_window_must_be_positive():
    with pytest.raises(ValueError):
        GroundTruthLabel(0, "a", window=0)


def test_label_and_metric_csv(tmp_path):
    labels = [GroundTruthLabel(7, "b"), GroundTruthLabel(3, "a")]
    p = tmp_path / "labels.csv"
    p.write_text(labels_csv(labels))
    assert p.read_text() == "frame_index,rule_id\n3,a\n7,b\n"
    assert read_labels(p) == sorted(labels, key=lambda lab: lab.frame_index)
    text = metrics_csv([("s", "event", MetricCounts(2, 1, 0))])
    assert text == "scenario,domain,TD,FP,FN,precision,recall\ns,event,2,1,0,0.666667,1.000000\n"
