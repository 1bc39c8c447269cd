"""Tab-separated, append-only logs: episode replays and training metrics.

Both files start with a header row naming the columns; every following line
is one record.  Floats are written with ``repr`` so they parse back exactly.
"""

from __future__ import annotations

from dataclasses import astuple, fields
from pathlib import Path

from .rollout import StepRecord

REPLAY_COLUMNS = tuple(f.name for f in fields(StepRecord))
METRIC_COLUMNS = ("iteration", "mean_return", "std_return", "max_return", "grad_norm",
                  "mean_steps", "wall_time", "results")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _append(path: Path, columns, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", encoding="utf-8", newline="\n") as fh:
        if new:
            fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(v) for v in row) + "\n")


def _read(path: Path, columns):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        return []
    header = tuple(lines[0].split("\t"))
    if header != tuple(columns):
        raise ValueError(f"{path}: unexpected header {header}")
    return [line.split("\t") for line in lines[1:] if line]


def write_replay(path, records) -> Path:
    path = Path(path)
    _append(path, REPLAY_COLUMNS, (astuple(r) for r in records))
    return path


def read_replay(path) -> list[StepRecord]:
    out = []
    for row in _read(path, REPLAY_COLUMNS):
        step, action, reward, risk, done, k, surv, pred, fb = row
        out.append(StepRecord(int(step), int(action), float(reward), float(risk), done == "1",
                              int(k), int(surv), float(pred), fb == "1"))
    return out


class MetricsLog:
    def __init__(self, path):
        self.path = Path(path)

    def append(self, stats) -> None:
        _append(self.path, METRIC_COLUMNS, [tuple(getattr(stats, c) for c in METRIC_COLUMNS)])

    def read(self) -> list[dict]:
        if not self.path.exists():
            return []
        out = []
        for row in _read(self.path, METRIC_COLUMNS):
            rec = dict(zip(METRIC_COLUMNS, row))
            out.append({k: (int(v) if k in ("iteration", "results") else float(v)) for k, v in rec.items()})
        return out

    def truncate_after(self, iteration: int) -> None:
        """Drop records past ``iteration`` (used when resuming from an older checkpoint)."""
        keep = [r for r in self.read() if r["iteration"] < iteration]
        self.path.unlink(missing_ok=True)
        _append(self.path, METRIC_COLUMNS, [tuple(r[c] for c in METRIC_COLUMNS) for r in keep])
