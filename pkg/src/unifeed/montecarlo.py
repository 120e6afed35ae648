"""Monte Carlo estimation of episode statistics and rate/exponent sweeps.

Sufficient statistics are exact integers (counts and sums of step counts),
so merging partial results is associative and order-independent: running
the same trial range serially, in batches, or across worker processes
produces bit-identical summaries.  Trial ``i`` of a run always uses the
seed ``trial_seed(master_seed, i)``, which makes every trial reproducible
in isolation.

Truncated episodes (step limit hit or numeric collapse) never delivered a
decision at the target confidence, so they are counted separately and
excluded from the step/error statistics; a run where nothing completed
reports NaN aggregates.
"""

from __future__ import annotations

import csv
import json
import math
import multiprocessing
import os
from dataclasses import asdict, dataclass, replace
from typing import Optional, Sequence

from .channel import UnifilarChannelSpec, channel_to_json
from .exponent import HypothesisPolicies
from .numerics import trial_seed
from .scheme import SchemeConfig, run_episode

#: two-sided 95% normal quantile (norm.ppf(0.975))
Z95 = 1.959963984540054


@dataclass(frozen=True)
class TrialStats:
    """Mergeable exact-integer summary of a set of episodes."""

    n: int = 0
    sum_steps: int = 0
    sum_steps_sq: int = 0
    errors: int = 0
    truncations: int = 0

    @property
    def completed(self) -> int:
        return self.n - self.truncations

    def __add__(self, other: "TrialStats") -> "TrialStats":
        return TrialStats(
            self.n + other.n,
            self.sum_steps + other.sum_steps,
            self.sum_steps_sq + other.sum_steps_sq,
            self.errors + other.errors,
            self.truncations + other.truncations,
        )

    def add_episode(self, result) -> "TrialStats":
        if result.truncated:
            return replace(self, n=self.n + 1, truncations=self.truncations + 1)
        return TrialStats(
            self.n + 1,
            self.sum_steps + result.steps,
            self.sum_steps_sq + result.steps * result.steps,
            self.errors + int(result.error),
            self.truncations,
        )

    @property
    def mean_steps(self) -> float:
        if self.completed == 0:
            return math.nan
        return self.sum_steps / self.completed

    @property
    def steps_variance(self) -> float:
        """Unbiased sample variance of the step count."""
        c = self.completed
        if c < 2:
            return math.nan
        num = c * self.sum_steps_sq - self.sum_steps * self.sum_steps
        return num / (c * (c - 1))

    def ci_halfwidth(self, z: float = Z95) -> float:
        c = self.completed
        if c < 2:
            return math.nan
        return z * math.sqrt(self.steps_variance / c)


@dataclass(frozen=True)
class StoppingRule:
    """Adaptive trial budget, checked only at fixed batch boundaries.

    The check points depend on nothing but the rule itself, so adaptive
    runs remain reproducible whatever the worker layout.  Convergence
    means the 95% (or ``z``-level) confidence halfwidth of the mean step
    count has fallen below ``rel_halfwidth`` times the mean.
    """

    batch_size: int = 200
    min_trials: int = 200
    max_trials: int = 5000
    rel_halfwidth: float = 0.01
    z: float = Z95

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.min_trials < 1 or self.max_trials < 1:
            raise ValueError("trial counts must be positive")
        if self.min_trials > self.max_trials:
            raise ValueError("min_trials cannot exceed max_trials")
        if not self.rel_halfwidth > 0:
            raise ValueError("rel_halfwidth must be positive")

    def satisfied(self, stats: TrialStats) -> bool:
        if stats.n < self.min_trials or stats.completed < 2:
            return False
        mean = stats.mean_steps
        if not mean > 0:
            return False
        return stats.ci_halfwidth(self.z) < self.rel_halfwidth * mean


def _run_span(args) -> TrialStats:
    spec, config, input_policy, confirm_tables, master_seed, start, stop = args
    stats = TrialStats()
    for i in range(start, stop):
        result = run_episode(
            spec,
            config,
            input_policy,
            confirm_tables,
            seed=trial_seed(master_seed, i),
        )
        stats = stats.add_episode(result)
    return stats


def run_span(
    spec: UnifilarChannelSpec,
    config: SchemeConfig,
    input_policy,
    confirm_tables: Optional[HypothesisPolicies] = None,
    *,
    master_seed: int = 0,
    start: int = 0,
    stop: int,
    jobs: int = 1,
) -> TrialStats:
    """Statistics over trials [start, stop); result independent of ``jobs``."""
    if stop < start:
        raise ValueError("empty or negative trial span")
    if jobs < 1:
        raise ValueError("jobs must be positive")
    total = stop - start
    if jobs == 1 or total <= 1:
        return _run_span(
            (spec, config, input_policy, confirm_tables, master_seed, start, stop)
        )
    jobs = min(jobs, total)
    bounds = [start + (total * j) // jobs for j in range(jobs + 1)]
    work = [
        (spec, config, input_policy, confirm_tables, master_seed, lo, hi)
        for lo, hi in zip(bounds, bounds[1:])
        if hi > lo
    ]
    with multiprocessing.Pool(processes=jobs) as pool:
        parts = pool.map(_run_span, work)
    stats = TrialStats()
    for part in parts:
        stats = stats + part
    return stats


def run_stats(
    spec: UnifilarChannelSpec,
    config: SchemeConfig,
    input_policy,
    confirm_tables: Optional[HypothesisPolicies] = None,
    *,
    master_seed: int = 0,
    rule: StoppingRule = StoppingRule(),
    jobs: int = 1,
) -> tuple[TrialStats, bool]:
    """Run batches until the stopping rule is satisfied or the budget ends."""
    stats = TrialStats()
    while stats.n < rule.max_trials:
        take = min(rule.batch_size, rule.max_trials - stats.n)
        stats = stats + run_span(
            spec,
            config,
            input_policy,
            confirm_tables,
            master_seed=master_seed,
            start=stats.n,
            stop=stats.n + take,
            jobs=jobs,
        )
        if rule.satisfied(stats):
            return stats, True
    return stats, False


# ---------------------------------------------------------------------------
# sweep rows and CSV interchange


SWEEP_COLUMNS = (
    "channel",
    "K",
    "pe_target",
    "p0",
    "variant",
    "n_trials",
    "mean_T",
    "ci_halfwidth_T",
    "rbar",
    "exponent",
    "empirical_error_rate",
    "truncation_count",
    "seed",
)


@dataclass(frozen=True)
class SweepRow:
    """One sweep operating point; field names mirror the CSV columns.

    ``rbar`` is the empirical rate ``K / mean_T`` in bits per channel use;
    ``exponent`` the guaranteed-error exponent ``-log2(pe_target) / mean_T``.
    NaN aggregates mean no episode completed at this point.
    """

    channel: str
    K: int
    pe_target: float
    p0: float
    variant: str
    n_trials: int
    mean_T: float
    ci_halfwidth_T: float
    rbar: float
    exponent: float
    empirical_error_rate: float
    truncation_count: int
    seed: int

    @property
    def key(self):
        return (self.channel, self.K, self.pe_target, self.p0, self.variant, self.seed)


def sweep_row(
    spec: UnifilarChannelSpec,
    config: SchemeConfig,
    stats: TrialStats,
    master_seed: int,
) -> SweepRow:
    c = stats.completed
    if c == 0:
        mean = ci = rbar = exponent = err = math.nan
    else:
        mean = stats.mean_steps
        ci = stats.ci_halfwidth() if c >= 2 else math.nan
        rbar = config.num_bits / mean
        exponent = -math.log2(config.error_target) / mean
        err = stats.errors / c
    return SweepRow(
        channel=spec.name,
        K=config.num_bits,
        pe_target=config.error_target,
        p0=config.confirm_threshold,
        variant=config.variant,
        n_trials=stats.n,
        mean_T=mean,
        ci_halfwidth_T=ci,
        rbar=rbar,
        exponent=exponent,
        empirical_error_rate=err,
        truncation_count=stats.truncations,
        seed=master_seed,
    )


def write_sweep_csv(path: str, rows: Sequence[SweepRow]) -> None:
    """Write rows with the fixed header, LF endings, shortest-repr floats."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([getattr(row, col) for col in SWEEP_COLUMNS])


def read_sweep_csv(path: str) -> list[SweepRow]:
    types = {
        "channel": str,
        "K": int,
        "pe_target": float,
        "p0": float,
        "variant": str,
        "n_trials": int,
        "mean_T": float,
        "ci_halfwidth_T": float,
        "rbar": float,
        "exponent": float,
        "empirical_error_rate": float,
        "truncation_count": int,
        "seed": int,
    }
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != SWEEP_COLUMNS:
            raise ValueError(f"unexpected sweep CSV header in {path!r}")
        for record in reader:
            rows.append(SweepRow(**{k: types[k](record[k]) for k in SWEEP_COLUMNS}))
    return rows


def sweep(
    spec: UnifilarChannelSpec,
    input_policy,
    confirm_tables: Optional[HypothesisPolicies],
    points: Sequence[tuple[SchemeConfig, int]],
    csv_path: str,
    meta_path: Optional[str] = None,
    *,
    rule: StoppingRule = StoppingRule(),
    jobs: int = 1,
    resume: bool = True,
    meta: Optional[dict] = None,
    progress=None,
) -> list[SweepRow]:
    """Evaluate (config, master_seed) points and keep a CSV up to date.

    The CSV is rewritten after every finished point, so an interrupted
    sweep resumes where it stopped; rerunning a finished sweep recomputes
    nothing and rewrites byte-identical output.
    """
    existing = {}
    if resume and os.path.exists(csv_path):
        for row in read_sweep_csv(csv_path):
            existing[row.key] = row
    rows: list[SweepRow] = []
    for config, master_seed in points:
        key = (
            spec.name,
            config.num_bits,
            config.error_target,
            config.confirm_threshold,
            config.variant,
            master_seed,
        )
        if key in existing:
            rows.append(existing[key])
            continue
        stats, _converged = run_stats(
            spec,
            config,
            input_policy,
            confirm_tables,
            master_seed=master_seed,
            rule=rule,
            jobs=jobs,
        )
        rows.append(sweep_row(spec, config, stats, master_seed))
        write_sweep_csv(csv_path, rows)
        if progress is not None:
            progress(rows[-1])
    write_sweep_csv(csv_path, rows)
    if meta_path is not None:
        doc = {
            "channel": channel_to_json(spec),
            "columns": list(SWEEP_COLUMNS),
            "stopping_rule": asdict(rule),
            "points": [
                {
                    "K": config.num_bits,
                    "pe_target": config.error_target,
                    "p0": config.confirm_threshold,
                    "variant": config.variant,
                    "seed": master_seed,
                    "precision_bits": config.precision_bits,
                    "arithmetic": config.arithmetic,
                    "max_steps": config.max_steps,
                }
                for config, master_seed in points
            ],
        }
        if meta is not None:
            doc["context"] = meta
        with open(meta_path, "w", encoding="utf-8", newline="") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return rows
