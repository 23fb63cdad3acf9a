"""Per-episode training metrics and the CSV schemas written by the CLI."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable

METRICS_COLUMNS = (
    "run_id",
    "seed",
    "phase",
    "env_step",
    "episode",
    "mean_episode_reward",
    "mean_qoe",
    "connected_fraction",
    "dropouts",
)
EVAL_COLUMNS = (
    "num_ues",
    "num_bs",
    "episodes",
    "bs_shuffle_seed",
    "mean_qoe",
    "std_qoe",
    "mean_connected_ues",
    "dropouts",
)
COMPARE_COLUMNS = ("run_id", "mode", "seed", "phase", "env_step", "aligned_step", "mean_episode_reward")
SUMMARY_COLUMNS = ("seed", "run_a", "run_b", "threshold", "steps_a", "steps_b", "delta")

FLOAT_FMT = "{:.10g}"


@dataclass
class MetricsRow:
    run_id: str
    seed: int
    phase: str  # stage name, or "baseline"
    env_step: int
    episode: int
    mean_episode_reward: float
    mean_qoe: float
    connected_fraction: float
    dropouts: int

    def validate(self) -> None:
        for name in ("mean_episode_reward", "mean_qoe", "connected_fraction"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"metrics row has non-finite {name}")
        if not 0.0 <= self.connected_fraction <= 1.0:
            raise ValueError("connected_fraction must lie in [0, 1]")
        if self.dropouts < 0 or self.env_step < 0:
            raise ValueError("dropouts and env_step must be non-negative")


assert tuple(f.name for f in fields(MetricsRow)) == METRICS_COLUMNS


def _fmt(value) -> str:
    if isinstance(value, float):
        return FLOAT_FMT.format(value)
    if value is None:
        return ""
    return str(value)


def write_csv(path: str | Path, columns: Iterable[str], rows: Iterable[dict]) -> None:
    """Write rows with fixed column order and a fixed float format so that
    identical runs produce byte-identical files."""
    columns = tuple(columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


class MetricsWriter:
    """Collects episode rows for one run, enforcing the row invariants."""

    def __init__(self, run_id: str, seed: int):
        self.run_id = run_id
        self.seed = seed
        self.rows: list[MetricsRow] = []

    def add(self, phase: str, env_step: int, reward: float, mean_qoe: float, connected_fraction: float, dropouts: int) -> MetricsRow:
        if self.rows and env_step < self.rows[-1].env_step:
            raise ValueError("env_step must be non-decreasing within a run")
        row = MetricsRow(
            self.run_id, self.seed, phase, int(env_step), len(self.rows), float(reward),
            float(mean_qoe), float(connected_fraction), int(dropouts),
        )
        row.validate()
        self.rows.append(row)
        return row

    def write(self, path: str | Path) -> None:
        write_csv(path, METRICS_COLUMNS, (asdict(r) for r in self.rows))


def read_metrics(path: str | Path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRICS_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        return [
            MetricsRow(
                r["run_id"], int(r["seed"]), r["phase"], int(r["env_step"]), int(r["episode"]),
                float(r["mean_episode_reward"]), float(r["mean_qoe"]), float(r["connected_fraction"]),
                int(r["dropouts"]),
            )
            for r in reader
        ]


def steps_to_threshold(rows: list[MetricsRow], phase: str, threshold: float, window: int) -> int | None:
    """First env step at which the mean of the last ``window`` consecutive
    ``phase`` episodes reaches ``threshold``. A row from another phase breaks
    the run of consecutive episodes, mirroring how stage visits are scored."""
    recent: list[float] = []
    for r in rows:
        if r.phase != phase:
            recent = []
            continue
        recent.append(r.mean_episode_reward)
        if len(recent) >= window and sum(recent[-window:]) / window >= threshold:
            return r.env_step
    return None
