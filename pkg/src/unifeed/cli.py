"""Command-line entry point: solvers, simulator, sweeps, and diagnostics.

Subcommands
-----------
``capacity``
    Solve the belief-MDP average-reward problem; emit a JSON report and
    optionally the input policy table as CSV.
``bounds``
    Solve the two-state hypothesis-testing MDP for the confirmation-phase
    drift rates; emit JSON and optionally the policy pair tables as CSV.
``simulate``
    Run transmission episodes; emit a JSON summary, and for single episodes
    optionally a per-step trace CSV and a posterior-matching debug trace.
``sweep``
    Monte Carlo grid over (K, pe) operating points; emit the sweep CSV plus
    a sidecar metadata JSON.
``drift``
    Empirical drift diagnostics for the log-odds of the true message; emit
    JSON and append report rows to a CSV.
``validate``
    Structural checks on a channel description.

Conventions
-----------
The first line written to standard output is always a single-line JSON
document with the machine-readable result; human-readable summary lines
follow it.  Progress chatter goes to standard error.  Every file artifact
embeds the effective configuration (and master seed where randomness is
involved) so results can be regenerated from their own metadata.  Rates and
exponents are bits per channel use unless ``--nats`` is given; JSON payloads
carry a ``units`` key.  Non-finite numbers are serialized as the JSON
strings ``"inf"``, ``"-inf"``, ``"nan"`` so strict parsers stay happy.

Exit codes: 0 success; 2 usage error or invalid configuration; 3 reported
violations (failed channel validation, failed drift check); 4 I/O failure;
5 solver non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .capacity import InputPolicyTable, solve_capacity
from .channel import (
    BUILTIN_FAMILIES,
    UnifilarChannelSpec,
    as_fraction,
    builtin,
    channel_from_json,
    channel_to_json,
    load_channel,
    validate,
)
from .diagnostics import STAGE_FILTERS, DriftReport, drift_check
from .encoding import drpm_detail
from .exponent import solve_ctilde1
from .montecarlo import StoppingRule, run_span, sweep
from .numerics import trial_seed
from .scheme import (
    ARITHMETICS,
    VARIANTS,
    Episode,
    PairTableConfirmPolicy,
    SchemeConfig,
    StepRecord,
    run_episode,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VIOLATIONS = 3
EXIT_IO = 4
EXIT_NONCONVERGED = 5

LN2 = math.log(2.0)


class CliError(Exception):
    """Controlled failure carrying its exit category."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class RunConfig:
    """Effective run configuration: documented defaults plus overrides.

    ``K`` and ``pe`` are kept as tuples so one config covers both single
    runs and sweep grids.  Validation mirrors the preconditions of the
    modules a value is dispatched to, so bad configs fail before any
    solver starts.
    """

    channel: Optional[dict] = None
    grid_res: float = 1.0 / 200.0
    action_res: float = 1.0 / 100.0
    tol: float = 1e-6
    K: tuple = (10,)
    pe: tuple = (1e-3,)
    p0: float = 0.9
    variant: str = "two_stage_alternative"
    precision_bits: int = 256
    arithmetic: str = "mpfr"
    max_steps: Optional[int] = None
    seed: int = 0
    min_trials: int = 200
    max_trials: int = 5000
    batch_size: int = 200
    rel_halfwidth: float = 0.01

    def __post_init__(self) -> None:
        if not 0.0 < self.grid_res <= 1.0:
            raise ValueError(f"grid_res must lie in (0, 1], got {self.grid_res}")
        if not 0.0 < self.action_res <= 1.0:
            raise ValueError(f"action_res must lie in (0, 1], got {self.action_res}")
        if not self.tol > 0.0:
            raise ValueError("tol must be positive")
        if not self.K or any(int(k) < 1 for k in self.K):
            raise ValueError(f"K values must be positive integers, got {self.K}")
        if not self.pe or any(not 0.0 < float(p) < 1.0 for p in self.pe):
            raise ValueError(f"pe values must lie strictly inside (0, 1), got {self.pe}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.arithmetic not in ARITHMETICS:
            raise ValueError(f"unknown arithmetic {self.arithmetic!r}")
        if self.variant != "one_stage":
            if not 0.0 < self.p0 < 1.0:
                raise ValueError("p0 must lie strictly inside (0, 1)")
            for pe in self.pe:
                # exact decimal comparison; see SchemeConfig for why floats
                # would accept the p0 = 1 - pe boundary
                if not as_fraction(self.p0) < 1 - as_fraction(pe):
                    raise ValueError(
                        f"p0={self.p0} must be strictly below 1 - pe for pe={pe}"
                    )
        if self.precision_bits < 8:
            raise ValueError("precision_bits must be at least 8")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        # constructing the stopping rule runs its own range checks
        self.stopping_rule()

    def stopping_rule(self) -> StoppingRule:
        return StoppingRule(
            batch_size=self.batch_size,
            min_trials=self.min_trials,
            max_trials=self.max_trials,
            rel_halfwidth=self.rel_halfwidth,
        )

    def scheme_config(self, **overrides) -> SchemeConfig:
        if len(self.K) != 1 or len(self.pe) != 1:
            raise ValueError(
                f"a single K and pe is needed here, got K={list(self.K)} "
                f"pe={list(self.pe)}"
            )
        kwargs = dict(
            num_bits=int(self.K[0]),
            error_target=float(self.pe[0]),
            confirm_threshold=self.p0,
            variant=self.variant,
            precision_bits=self.precision_bits,
            arithmetic=self.arithmetic,
            max_steps=self.max_steps,
        )
        kwargs.update(overrides)
        return SchemeConfig(**kwargs)

    def to_json(self) -> dict:
        """Normalized JSON form; stable under a load/emit round trip."""
        return {
            "channel": self.channel,
            "grid_res": float(self.grid_res),
            "action_res": float(self.action_res),
            "tol": float(self.tol),
            "K": [int(k) for k in self.K],
            "pe": [float(p) for p in self.pe],
            "p0": float(self.p0),
            "variant": self.variant,
            "precision_bits": int(self.precision_bits),
            "arithmetic": self.arithmetic,
            "max_steps": None if self.max_steps is None else int(self.max_steps),
            "seed": int(self.seed),
            "min_trials": int(self.min_trials),
            "max_trials": int(self.max_trials),
            "batch_size": int(self.batch_size),
            "rel_halfwidth": float(self.rel_halfwidth),
        }


_CONFIG_FIELDS = tuple(RunConfig().to_json().keys())


def config_from_obj(obj: dict) -> RunConfig:
    """Build a RunConfig from a parsed JSON object, filling defaults."""
    if not isinstance(obj, dict):
        raise ValueError("config document must be a JSON object")
    unknown = sorted(set(obj) - set(_CONFIG_FIELDS))
    if unknown:
        raise ValueError(f"unknown config fields: {', '.join(unknown)}")
    kwargs = {}
    if obj.get("channel") is not None:
        # normalize to the explicit table form and re-validate
        kwargs["channel"] = channel_to_json(channel_from_json(obj["channel"]))
    for field in ("grid_res", "action_res", "tol", "p0", "rel_halfwidth"):
        if field in obj:
            kwargs[field] = float(obj[field])
    for field in (
        "precision_bits",
        "seed",
        "min_trials",
        "max_trials",
        "batch_size",
    ):
        if field in obj:
            kwargs[field] = int(obj[field])
    for field in ("variant", "arithmetic"):
        if field in obj:
            kwargs[field] = str(obj[field])
    if "max_steps" in obj:
        kwargs["max_steps"] = None if obj["max_steps"] is None else int(obj["max_steps"])
    if "K" in obj:
        raw = obj["K"]
        kwargs["K"] = tuple(int(k) for k in (raw if isinstance(raw, list) else [raw]))
    if "pe" in obj:
        raw = obj["pe"]
        kwargs["pe"] = tuple(
            float(p) for p in (raw if isinstance(raw, list) else [raw])
        )
    return RunConfig(**kwargs)


def load_config(path: str) -> RunConfig:
    """Read a JSON run configuration file, filling documented defaults."""
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_obj(json.load(fh))


# ---------------------------------------------------------------------------
# small helpers


def json_real(x) -> object:
    """JSON-safe scalar: finite floats pass through, the rest to strings."""
    x = float(x)
    if math.isfinite(x):
        return x
    if math.isnan(x):
        return "nan"
    return "inf" if x > 0 else "-inf"


def _emit(payload: dict, path: Optional[str]) -> None:
    """Machine-readable line on stdout, optional pretty JSON file."""
    text = json.dumps(payload, sort_keys=True)
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(text)


def _parse_int_list(text: str) -> tuple:
    try:
        items = tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {exc}")
    if not items:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return items


def _parse_float_list(text: str) -> tuple:
    try:
        items = tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {exc}")
    if not items:
        raise argparse.ArgumentTypeError("expected at least one number")
    return items


def _parse_resolution(text: str) -> float:
    """Grid steps may be given as decimals ("0.005") or ratios ("1/200")."""
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"bad resolution {text!r}: {exc}")


def _channel_options(sp: argparse.ArgumentParser) -> None:
    g = sp.add_argument_group("channel source")
    g.add_argument(
        "--family",
        choices=sorted(BUILTIN_FAMILIES),
        help="built-in binary channel family",
    )
    g.add_argument(
        "--params",
        help="comma-separated family parameters (decimals or ratios like 9/10)",
    )
    g.add_argument("--channel", metavar="PATH", help="channel description JSON file")


def _resolve_channel(args, cfg: RunConfig, check: bool = True) -> UnifilarChannelSpec:
    if getattr(args, "channel", None):
        spec = load_channel(args.channel)
    elif getattr(args, "family", None):
        params = []
        if args.params:
            params = [tok.strip() for tok in args.params.split(",") if tok.strip()]
        spec = builtin(args.family, params)
    elif cfg.channel is not None:
        spec = channel_from_json(cfg.channel)
    else:
        raise CliError(
            EXIT_USAGE,
            "no channel given: use --family [--params], --channel, or a config file",
        )
    if check:
        report = validate(spec)
        if not report.ok:
            raise CliError(EXIT_USAGE, "invalid channel: " + "; ".join(report.violations))
    return spec


def _effective_config(args, **overrides) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    filled = {k: v for k, v in overrides.items() if v is not None}
    if getattr(args, "channel", None) or getattr(args, "family", None):
        # flags replace any channel carried by the config file
        filled["channel"] = None
        cfg = replace(cfg, channel=None)
    try:
        return replace(cfg, **filled) if filled else cfg
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc))


def _jobs(args) -> int:
    if getattr(args, "jobs", None) is not None:
        jobs = args.jobs
    else:
        try:
            jobs = int(os.environ.get("UNIFEED_JOBS", "1"))
        except ValueError:
            raise CliError(EXIT_USAGE, "UNIFEED_JOBS must be an integer")
    if jobs < 1:
        raise CliError(EXIT_USAGE, "--jobs must be at least 1")
    return jobs


def _units(args) -> tuple:
    return ("nats", LN2) if getattr(args, "nats", False) else ("bits", 1.0)


def _solve_policies(spec, cfg, need_confirm: bool):
    """Capacity policy (always) plus confirmation tables for two-stage runs."""
    cap = solve_capacity(
        spec, grid_res=cfg.grid_res, action_res=cfg.action_res, tol=cfg.tol
    )
    if not cap.converged:
        raise CliError(EXIT_NONCONVERGED, "capacity solver did not converge")
    confirm = None
    exp_report = None
    if need_confirm:
        exp_report = solve_ctilde1(spec, capacity=cap.capacity)
        if not exp_report.converged:
            raise CliError(EXIT_NONCONVERGED, "drift-rate solver did not converge")
        confirm = exp_report.policies
    return cap, confirm, exp_report


# ---------------------------------------------------------------------------
# capacity


def _write_policy_csv(path: str, policy: InputPolicyTable) -> int:
    grid = policy.grid
    ns, nx = policy.table.shape[1], policy.table.shape[2]
    count = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            [f"belief_{i}" for i in range(grid.ns)] + ["state", "input", "probability"]
        )
        for idx in range(len(grid)):
            point = grid.points[idx]
            rows = policy.table[idx]
            for s in range(ns):
                for x in range(nx):
                    writer.writerow(
                        [float(c) for c in point] + [s, x, float(rows[s][x])]
                    )
                    count += 1
    return count


def cmd_capacity(args) -> int:
    cfg = _effective_config(
        args, grid_res=args.grid_res, action_res=args.action_res, tol=args.tol
    )
    spec = _resolve_channel(args, cfg)
    result = solve_capacity(
        spec,
        grid_res=cfg.grid_res,
        action_res=cfg.action_res,
        tol=cfg.tol,
        max_iter=args.max_iter,
    )
    unit, scale = _units(args)
    payload = {
        "C": json_real(result.capacity * scale),
        "grid_res": result.grid_res,
        "action_res": result.action_res,
        "residual": json_real(result.residual),
        "iterations": result.iterations,
        "converged": result.converged,
        "units": unit,
        "channel": channel_to_json(spec),
        "config": cfg.to_json(),
    }
    _emit(payload, args.json)
    if args.policy_csv:
        rows = _write_policy_csv(args.policy_csv, result.policy)
        print(f"policy table: {rows} rows -> {args.policy_csv}")
    status = "converged" if result.converged else "NOT converged"
    print(
        f"capacity {result.capacity * scale:.6f} {unit}/use "
        f"({status} after {result.iterations} iterations, "
        f"residual {result.residual:.2e})"
    )
    return EXIT_OK if result.converged else EXIT_NONCONVERGED


# ---------------------------------------------------------------------------
# bounds


def cmd_bounds(args) -> int:
    cfg = _effective_config(
        args, grid_res=args.grid_res, action_res=args.action_res, tol=args.tol
    )
    spec = _resolve_channel(args, cfg)
    capacity_val = args.capacity
    cap_converged = True
    if args.solve_capacity:
        cap = solve_capacity(
            spec, grid_res=cfg.grid_res, action_res=cfg.action_res, tol=cfg.tol
        )
        capacity_val = cap.capacity
        cap_converged = cap.converged
    report = solve_ctilde1(
        spec, tol=args.tol_exp, max_iter=args.max_iter, capacity=capacity_val
    )
    unit, scale = _units(args)
    payload = {
        "ctilde1": json_real(report.ctilde1 * scale),
        "ctilde1_star": json_real(report.ctilde1_star * scale),
        "dominance_flag": report.dominance_flag,
        "capacity": None if capacity_val is None else json_real(capacity_val * scale),
        "policies": {
            "x0": [list(row) for row in report.policies.x0],
            "x1": [list(row) for row in report.policies.x1],
        },
        "per_state_gains": [
            [json_real(v * scale) for v in row] for row in report.per_state_gains
        ],
        "iterations": report.iterations,
        "residual": json_real(report.residual),
        "converged": report.converged,
        "units": unit,
        "channel": channel_to_json(spec),
        "config": cfg.to_json(),
    }
    _emit(payload, args.json)
    if args.policies_csv:
        with open(args.policies_csv, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["s0", "s1", "x0", "x1"])
            for s0 in range(spec.ns):
                for s1 in range(spec.ns):
                    writer.writerow(
                        [s0, s1, report.policies.x0[s0][s1], report.policies.x1[s0][s1]]
                    )
        print(f"hypothesis policies -> {args.policies_csv}")
    print(
        f"ctilde1 {json_real(report.ctilde1 * scale)} {unit}/use, "
        f"ctilde1_star {json_real(report.ctilde1_star * scale)}, "
        f"dominance_flag {report.dominance_flag}"
    )
    if report.dominance_flag is False:
        print(
            "warning: ctilde1_star does not exceed capacity; the two-stage "
            "exponent line need not dominate at rates near capacity"
        )
    ok = report.converged and cap_converged
    return EXIT_OK if ok else EXIT_NONCONVERGED


# ---------------------------------------------------------------------------
# validate


def cmd_validate(args) -> int:
    cfg = _effective_config(args)
    try:
        spec = _resolve_channel(args, cfg, check=False)
    except ValueError as exc:
        payload = {"ok": False, "strictly_positive": False, "violations": [str(exc)]}
        _emit(payload, args.json)
        print("ok=false")
        print(f"violation: {exc}")
        return EXIT_VIOLATIONS
    report = validate(spec)
    payload = {
        "ok": report.ok,
        "strictly_positive": report.strictly_positive,
        "violations": list(report.violations),
        "channel": channel_to_json(spec),
    }
    _emit(payload, args.json)
    print(f"ok={'true' if report.ok else 'false'}")
    print(f"strictly_positive={'true' if report.strictly_positive else 'false'}")
    for violation in report.violations:
        print(f"violation: {violation}")
    return EXIT_OK if report.ok else EXIT_VIOLATIONS


# ---------------------------------------------------------------------------
# simulate


def _drpm_row(segs, policy_rows, v, message: int, record: StepRecord) -> tuple:
    """Exact replay of the posterior-matching map for the true message.

    ``segs`` is the pre-step run list of a fraction-arithmetic episode, so
    every quantity below is an exact rational and the replayed input must
    equal the engine's choice bit for bit.
    """
    s_w = None
    for lo, hi, _p, s in segs:
        if lo <= message < hi:
            s_w = s
            break
    if s_w is None:
        raise RuntimeError("true message lost its run")
    masses = []
    rank = None
    for lo, hi, p, s in segs:
        if s != s_w:
            continue
        for m in range(lo, hi):
            if m == message:
                rank = len(masses)
            masses.append(p)
    total = sum(masses, Fraction(0))
    pi = [m / total for m in masses]
    raw = [as_fraction(float(c)) for c in policy_rows[s_w]]
    row_total = sum(raw, Fraction(0))
    px = [c / row_total for c in raw]
    trace = drpm_detail(rank, px, pi, Fraction(float(v[s_w])))
    if trace.x != record.x:
        raise RuntimeError(
            f"posterior-matching replay chose input {trace.x} but the "
            f"episode sent {record.x} at step {record.t}"
        )
    return (
        record.t,
        message,
        float(trace.u),
        float(trace.lo),
        float(trace.hi),
        trace.x,
    )


def _run_traced_episode(spec, config, input_policy, confirm_tables, seed, message):
    """Single episode that also collects posterior-matching debug rows.

    Mirrors the draw order of ``run_episode`` exactly: message (when not
    given), then per step one shared uniform per state plus one channel
    noise uniform.
    """
    rng = np.random.default_rng(seed)
    if message is None:
        message = int(rng.integers(config.num_messages))
    confirm_policy = None
    if confirm_tables is not None:
        confirm_policy = PairTableConfirmPolicy(confirm_tables, spec.nx)
    episode = Episode(spec, config, message, input_policy, confirm_policy)
    drpm_rows = []
    truncated = False
    reason = None
    while True:
        if episode.stop_met():
            break
        if episode.t >= config.step_limit:
            truncated, reason = True, "step_limit"
            break
        v = rng.random(spec.ns)
        noise = float(rng.random())
        segs = list(episode.segments)
        belief = episode.state_belief()
        policy_rows = input_policy.row(belief)
        record = episode.step(v, noise)
        if episode.collapsed:
            truncated, reason = True, "numeric"
            break
        if record.stage == 1:
            drpm_rows.append(_drpm_row(segs, policy_rows, v, message, record))
    decoded = episode.leader
    summary = {
        "message": message,
        "decoded": decoded,
        "error": decoded != message,
        "steps": episode.t,
        "truncated": truncated,
        "truncation_reason": reason,
        "stage2_entries": episode.stage2_entries,
        "reverts": episode.reverts,
        "sync_steps": episode.sync_steps,
    }
    trace = tuple(episode.trace) if episode.trace is not None else None
    return summary, trace, drpm_rows


def _write_step_trace(path: str, trace: Sequence[StepRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(StepRecord._fields)
        for rec in trace:
            writer.writerow(
                [rec.t, rec.stage, rec.sync, rec.x, rec.y, rec.leader]
                + [float(rec.leader_mass), float(rec.llr)]
            )


def cmd_simulate(args) -> int:
    cfg = _effective_config(
        args,
        K=None if args.K is None else (args.K,),
        pe=None if args.pe is None else (args.pe,),
        p0=args.p0,
        variant=args.variant,
        precision_bits=args.precision_bits,
        arithmetic=args.arithmetic,
        max_steps=args.max_steps,
        seed=args.seed,
        grid_res=args.grid_res,
        action_res=args.action_res,
        tol=args.tol,
    )
    spec = _resolve_channel(args, cfg)
    try:
        scheme_cfg = cfg.scheme_config(track_trace=args.trace_csv is not None)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc))
    if args.trials < 1:
        raise CliError(EXIT_USAGE, "--trials must be at least 1")
    if args.trials > 1 and (args.trace_csv or args.drpm_trace or args.message is not None):
        raise CliError(
            EXIT_USAGE,
            "--trace-csv, --drpm-trace, and --message need --trials 1",
        )
    if args.drpm_trace:
        if scheme_cfg.arithmetic != "fraction":
            raise CliError(
                EXIT_USAGE,
                "--drpm-trace needs --arithmetic fraction for an exact replay",
            )
        if scheme_cfg.num_messages > 4096:
            raise CliError(EXIT_USAGE, "--drpm-trace supports K up to 12 bits")
    if args.message is not None and not 0 <= args.message < scheme_cfg.num_messages:
        raise CliError(
            EXIT_USAGE,
            f"--message must lie in [0, {scheme_cfg.num_messages})",
        )

    cap, confirm, _ = _solve_policies(spec, cfg, scheme_cfg.variant != "one_stage")
    unit, scale = _units(args)
    payload = {
        "units": unit,
        "channel": channel_to_json(spec),
        "config": cfg.to_json(),
        "seed": cfg.seed,
        "C": json_real(cap.capacity * scale),
    }

    if args.trials == 1:
        if args.drpm_trace:
            summary, trace, drpm_rows = _run_traced_episode(
                spec, scheme_cfg, cap.policy, confirm, cfg.seed, args.message
            )
            with open(args.drpm_trace, "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["t", "w", "u", "interval_lo", "interval_hi", "x"])
                writer.writerows(drpm_rows)
        else:
            result = run_episode(
                spec,
                scheme_cfg,
                cap.policy,
                confirm,
                seed=cfg.seed,
                message=args.message,
            )
            summary = {
                "message": result.message,
                "decoded": result.decoded,
                "error": result.error,
                "steps": result.steps,
                "truncated": result.truncated,
                "truncation_reason": result.truncation_reason,
                "stage2_entries": result.stage2_entries,
                "reverts": result.reverts,
                "sync_steps": result.sync_steps,
            }
            trace = result.trace
            drpm_rows = None
        payload.update(summary)
        if summary["steps"] > 0:
            payload["rate"] = json_real(scheme_cfg.num_bits * scale / summary["steps"])
        _emit(payload, args.json)
        if args.trace_csv and trace is not None:
            _write_step_trace(args.trace_csv, trace)
            print(f"step trace: {len(trace)} rows -> {args.trace_csv}")
        if args.drpm_trace:
            print(
                f"posterior-matching trace: {len(drpm_rows)} rows -> {args.drpm_trace}"
            )
        status = "error" if summary["error"] else "ok"
        if summary["truncated"]:
            status = f"truncated ({summary['truncation_reason']})"
        print(
            f"message {summary['message']} -> decoded {summary['decoded']} "
            f"in {summary['steps']} steps [{status}]"
        )
        return EXIT_OK

    stats = run_span(
        spec,
        scheme_cfg,
        cap.policy,
        confirm,
        master_seed=cfg.seed,
        start=0,
        stop=args.trials,
        jobs=_jobs(args),
    )
    completed = stats.completed
    mean_steps = stats.mean_steps
    payload.update(
        {
            "n_trials": stats.n,
            "completed": completed,
            "errors": stats.errors,
            "truncations": stats.truncations,
            "mean_steps": json_real(mean_steps),
            "ci_halfwidth": json_real(stats.ci_halfwidth()),
            "empirical_error_rate": json_real(
                stats.errors / completed if completed else math.nan
            ),
            "rate": json_real(
                scheme_cfg.num_bits * scale / mean_steps if completed else math.nan
            ),
        }
    )
    _emit(payload, args.json)
    print(
        f"{stats.n} episodes: mean steps {payload['mean_steps']}, "
        f"errors {stats.errors}, truncations {stats.truncations}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep


def cmd_sweep(args) -> int:
    cfg = _effective_config(
        args,
        K=args.K,
        pe=args.pe,
        p0=args.p0,
        variant=args.variant,
        precision_bits=args.precision_bits,
        arithmetic=args.arithmetic,
        max_steps=args.max_steps,
        seed=args.seed,
        grid_res=args.grid_res,
        action_res=args.action_res,
        tol=args.tol,
        min_trials=args.min_trials,
        max_trials=args.max_trials,
        batch_size=args.batch_size,
        rel_halfwidth=args.rel_halfwidth,
    )
    spec = _resolve_channel(args, cfg)
    cap, confirm, _ = _solve_policies(spec, cfg, cfg.variant != "one_stage")

    points = []
    for index, (num_bits, pe) in enumerate(
        (k, p) for k in cfg.K for p in cfg.pe
    ):
        scheme_cfg = SchemeConfig(
            num_bits=int(num_bits),
            error_target=float(pe),
            confirm_threshold=cfg.p0,
            variant=cfg.variant,
            precision_bits=cfg.precision_bits,
            arithmetic=cfg.arithmetic,
            max_steps=cfg.max_steps,
        )
        points.append((scheme_cfg, trial_seed(cfg.seed, index)))

    meta_path = args.meta or args.out + ".meta.json"
    rows = sweep(
        spec,
        cap.policy,
        confirm,
        points,
        args.out,
        meta_path,
        rule=cfg.stopping_rule(),
        jobs=_jobs(args),
        resume=not args.no_resume,
        meta={"command": "sweep", "config": cfg.to_json(), "seed": cfg.seed},
        progress=lambda row: print(
            f"K={row.K} pe={row.pe_target}: n={row.n_trials} "
            f"mean_T={row.mean_T:.3f} rbar={row.rbar:.4f}",
            file=sys.stderr,
        ),
    )
    payload = {
        "rows": len(rows),
        "csv": args.out,
        "meta": meta_path,
        "seed": cfg.seed,
        "units": "bits",
        "C": json_real(cap.capacity),
        "channel": channel_to_json(spec),
        "config": cfg.to_json(),
    }
    _emit(payload, args.json)
    print(f"wrote {len(rows)} rows -> {args.out}")
    print(f"metadata -> {meta_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# drift


DRIFT_COLUMNS = (
    "channel",
    "stage",
    "window",
    "episodes",
    "n_samples",
    "n_infinite",
    "mean_drift",
    "mean_reference",
    "mean_excess",
    "std_error",
    "violation_fraction_of_bound",
    "n_steps",
    "passed",
    "seed",
)


def _append_drift_rows(path: str, rows: Sequence[dict]) -> None:
    exists = os.path.exists(path) and os.path.getsize(path) > 0
    with open(path, "a", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if not exists:
            writer.writerow(DRIFT_COLUMNS)
        for row in rows:
            writer.writerow([row[col] for col in DRIFT_COLUMNS])


def _drift_report_dict(report: DriftReport, channel: str, episodes: int, seed: int) -> dict:
    return {
        "channel": channel,
        "stage": report.stage,
        "window": report.window,
        "episodes": episodes,
        "n_samples": report.n_samples,
        "n_infinite": report.n_infinite,
        "mean_drift": json_real(report.mean_drift),
        "mean_reference": json_real(report.mean_reference),
        "mean_excess": json_real(report.mean_excess),
        "std_error": json_real(report.std_error),
        "violation_fraction_of_bound": json_real(report.violation_fraction_of_bound),
        "n_steps": report.n_steps,
        "passed": report.passed,
        "seed": seed,
    }


def cmd_drift(args) -> int:
    cfg = _effective_config(
        args,
        K=None if args.K is None else (args.K,),
        pe=None if args.pe is None else (args.pe,),
        p0=args.p0,
        variant=args.variant,
        precision_bits=args.precision_bits,
        arithmetic=args.arithmetic,
        max_steps=args.max_steps,
        seed=args.seed,
        grid_res=args.grid_res,
        action_res=args.action_res,
        tol=args.tol,
    )
    spec = _resolve_channel(args, cfg)
    try:
        scheme_cfg = cfg.scheme_config()
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc))
    stages = STAGE_FILTERS if args.stage == "both" else (args.stage,)
    if "stage2_h0" in stages and scheme_cfg.variant == "one_stage":
        raise CliError(EXIT_USAGE, "stage2_h0 diagnostics need a two-stage variant")

    cap, confirm, exp_report = _solve_policies(
        spec, cfg, scheme_cfg.variant != "one_stage"
    )
    reports = []
    for stage in stages:
        rate = None
        if stage == "stage2_h0" and exp_report is not None:
            rate = exp_report.ctilde1
        report = drift_check(
            spec,
            scheme_cfg,
            cap.policy,
            confirm,
            stage=stage,
            n_episodes=args.episodes,
            seed=cfg.seed,
            window=args.window,
            burn_in=args.burn_in,
            drift_rate=rate,
        )
        reports.append(report)

    rows = [
        _drift_report_dict(rep, spec.name, args.episodes, cfg.seed) for rep in reports
    ]
    all_passed = all(rep.passed for rep in reports)
    payload = {
        "reports": rows,
        "passed": all_passed,
        "units": "bits",
        "channel": channel_to_json(spec),
        "config": cfg.to_json(),
        "seed": cfg.seed,
    }
    _emit(payload, args.json)
    if args.out:
        _append_drift_rows(args.out, rows)
        print(f"appended {len(rows)} report rows -> {args.out}")
    for rep in reports:
        verdict = "PASS" if rep.passed else "FAIL"
        print(
            f"{rep.stage}: n={rep.n_samples} (+{rep.n_infinite} infinite) "
            f"excess={rep.mean_excess:+.4f} se={rep.std_error:.4f} "
            f"bound_violations={rep.violation_fraction_of_bound:.4f} [{verdict}]"
        )
    return EXIT_OK if all_passed else EXIT_VIOLATIONS


# ---------------------------------------------------------------------------
# parser and dispatch


def _scheme_options(sp: argparse.ArgumentParser, many: bool) -> None:
    g = sp.add_argument_group("transmission scheme")
    if many:
        g.add_argument("--K", type=_parse_int_list, help="message sizes in bits, comma-separated")
        g.add_argument("--pe", type=_parse_float_list, help="target error rates, comma-separated")
    else:
        g.add_argument("--K", type=int, help="message size in bits")
        g.add_argument("--pe", type=float, help="target error rate")
    g.add_argument("--p0", type=float, help="confirmation entry threshold")
    g.add_argument("--variant", choices=VARIANTS)
    g.add_argument("--precision-bits", type=int, dest="precision_bits")
    g.add_argument("--arithmetic", choices=ARITHMETICS)
    g.add_argument("--max-steps", type=int, dest="max_steps")
    g.add_argument("--seed", type=int, help="master seed")


def _solver_options(sp: argparse.ArgumentParser) -> None:
    g = sp.add_argument_group("capacity solver")
    g.add_argument("--grid-res", type=_parse_resolution, dest="grid_res")
    g.add_argument("--action-res", type=_parse_resolution, dest="action_res")
    g.add_argument("--tol", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unifeed",
        description=(
            "Feedback communication over unifilar finite-state channels: "
            "capacity and error-exponent solvers, a variable-length "
            "transmission scheme simulator, Monte Carlo sweeps, and drift "
            "diagnostics."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("capacity", help="solve for channel capacity")
    _channel_options(sp)
    _solver_options(sp)
    sp.add_argument("--max-iter", type=int, default=20000, dest="max_iter")
    sp.add_argument("--json", metavar="PATH", help="write the JSON report here")
    sp.add_argument("--policy-csv", metavar="PATH", dest="policy_csv")
    sp.add_argument("--nats", action="store_true", help="report in nats instead of bits")
    sp.add_argument("--config", metavar="PATH", help="JSON run configuration")
    sp.set_defaults(func=cmd_capacity)

    sp = sub.add_parser("bounds", help="solve for confirmation-phase drift rates")
    _channel_options(sp)
    _solver_options(sp)
    sp.add_argument("--max-iter", type=int, default=200000, dest="max_iter")
    sp.add_argument("--exp-tol", type=float, default=1e-9, dest="tol_exp",
                    help="value-iteration span tolerance for the drift-rate solver")
    sp.add_argument("--capacity", type=float, help="known capacity for the dominance check")
    sp.add_argument(
        "--solve-capacity",
        action="store_true",
        dest="solve_capacity",
        help="solve capacity first and embed it",
    )
    sp.add_argument("--json", metavar="PATH")
    sp.add_argument("--policies-csv", metavar="PATH", dest="policies_csv")
    sp.add_argument("--nats", action="store_true")
    sp.add_argument("--config", metavar="PATH")
    sp.set_defaults(func=cmd_bounds)

    sp = sub.add_parser("simulate", help="run transmission episodes")
    _channel_options(sp)
    _scheme_options(sp, many=False)
    _solver_options(sp)
    sp.add_argument("--message", type=int, help="fixed message index (default: random)")
    sp.add_argument("--trials", type=int, default=1)
    sp.add_argument("--trace-csv", metavar="PATH", dest="trace_csv",
                    help="per-step trace (single episode only)")
    sp.add_argument(
        "--drpm-trace",
        metavar="PATH",
        dest="drpm_trace",
        help="posterior-matching debug trace; needs --arithmetic fraction",
    )
    sp.add_argument("--jobs", type=int, help="worker processes (default $UNIFEED_JOBS or 1)")
    sp.add_argument("--json", metavar="PATH")
    sp.add_argument("--nats", action="store_true")
    sp.add_argument("--config", metavar="PATH")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep", help="Monte Carlo sweep over (K, pe) points")
    _channel_options(sp)
    _scheme_options(sp, many=True)
    _solver_options(sp)
    g = sp.add_argument_group("stopping rule")
    g.add_argument("--min-trials", type=int, dest="min_trials")
    g.add_argument("--max-trials", type=int, dest="max_trials")
    g.add_argument("--batch-size", type=int, dest="batch_size")
    g.add_argument("--rel-halfwidth", type=float, dest="rel_halfwidth")
    sp.add_argument("--out", required=True, metavar="PATH", help="sweep CSV path")
    sp.add_argument("--meta", metavar="PATH", help="metadata JSON (default <out>.meta.json)")
    sp.add_argument("--no-resume", action="store_true", dest="no_resume",
                    help="recompute finished points instead of reusing them")
    sp.add_argument("--jobs", type=int, help="worker processes (default $UNIFEED_JOBS or 1)")
    sp.add_argument("--json", metavar="PATH")
    sp.add_argument("--config", metavar="PATH")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("drift", help="empirical log-odds drift diagnostics")
    _channel_options(sp)
    _scheme_options(sp, many=False)
    _solver_options(sp)
    sp.add_argument("--stage", choices=STAGE_FILTERS + ("both",), default="both")
    sp.add_argument("--episodes", type=int, default=100)
    sp.add_argument("--window", type=int, default=50)
    sp.add_argument("--burn-in", type=int, default=20, dest="burn_in")
    sp.add_argument("--out", metavar="PATH", help="append report rows to this CSV")
    sp.add_argument("--json", metavar="PATH")
    sp.add_argument("--config", metavar="PATH")
    sp.set_defaults(func=cmd_drift)

    sp = sub.add_parser("validate", help="check a channel description")
    _channel_options(sp)
    sp.add_argument("--json", metavar="PATH")
    sp.add_argument("--config", metavar="PATH")
    sp.set_defaults(func=cmd_validate)

    return parser


def dispatch(argv: Sequence[str]) -> int:
    """Parse and run one command, mapping failures to exit categories."""
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except SystemExit as exc:
        code = exc.code
        return EXIT_OK if code in (None, 0) else EXIT_USAGE
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main(argv: Optional[Sequence[str]] = None) -> int:
    return dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
