from __future__ import annotations

import math

import pytest

from sasgrid.es import IterationStats
from sasgrid.logs import METRIC_COLUMNS, MetricsLog, read_replay, write_replay
from sasgrid.rollout import StepRecord


def test_replay_round_trip(tmp_path):
    recs = [StepRecord(1, 0, 1.0, 0.5, False, 0, 0, float("nan"), False),
            StepRecord(2, 17, 1.0, 0.1 + 0.2, False, 100, 42, 1 / 3, False),
            StepRecord(3, 0, 0.0, float("nan"), True, 100, 0, float("nan"), True)]
    path = write_replay(tmp_path / "a.replay", recs)
    back = read_replay(path)
    assert len(back) == 3
    for a, b in zip(recs, back):
        for x, y in zip(a.__dict__.values(), b.__dict__.values()):
            assert x == y or (isinstance(x, float) and math.isnan(x) and math.isnan(y))
    write_replay(path, recs[:1])  # append-only, one header
    assert len(read_replay(path)) == 4
    assert path.read_text().count("step\t") == 1


def test_metrics_log(tmp_path):
    log = MetricsLog(tmp_path / "m.tsv")
    assert log.read() == []
    for i in range(5):
        log.append(IterationStats(i, i / 3, 0.1, 2.0 * i, 1e-300, 288.0, 0.25, 8))
    rows = log.read()
    assert [r["iteration"] for r in rows] == list(range(5))
    assert rows[1]["mean_return"] == 1 / 3 and rows[0]["grad_norm"] == 1e-300
    assert tuple(rows[0]) == METRIC_COLUMNS
    log.truncate_after(3)
    assert [r["iteration"] for r in log.read()] == [0, 1, 2]


def test_header_is_checked(tmp_path):
    p = tmp_path / "x.tsv"
    p.write_text("foo\tbar\n1\t2\n")
    with pytest.raises(ValueError):
        MetricsLog(p).read()
    with pytest.raises(ValueError):
        read_replay(p)
