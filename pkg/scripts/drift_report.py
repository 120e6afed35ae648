#!/usr/bin/env python3
"""Empirical sanity battery for the scheme's drift assumptions.

For one channel this script solves capacity and the confirmation drift
rates, then measures on simulated episodes:

  1. stage-1 log-odds drift of the true message vs. the per-step
     information rate at the visited beliefs (excess should be >= 0),
  2. stage-2 log-likelihood-ratio drift under a wrong candidate vs. the
     solved confirmation rate (excess should be ~ 0),
  3. the occupancy distance between scheme-visited beliefs and the
     autonomous belief chain under the same input policy,
  4. the average information rate over scheme-visited beliefs vs. the
     solved capacity.

Exits 1 if either drift check fails its tolerance.
"""

from __future__ import annotations

import argparse
import sys

from unifeed import builtin, solve_capacity, solve_ctilde1
from unifeed.diagnostics import (
    bhat_vs_b_distance,
    drift_check,
    stage_one_info_average,
)
from unifeed.scheme import SchemeConfig


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--family", default="symmetric")
    ap.add_argument("--params", default="0.5,0.1")
    ap.add_argument("--K", type=int, default=10)
    ap.add_argument("--pe", type=float, default=1e-3)
    ap.add_argument("--p0", type=float, default=0.9)
    ap.add_argument("--variant", default="two_stage_alternative")
    ap.add_argument("--episodes", type=int, default=150)
    ap.add_argument("--stage2-pe", type=float, default=1e-60,
                    help="deep target so stage-2 stretches cover the window")
    ap.add_argument("--stage2-window", type=int, default=50)
    ap.add_argument("--stage2-burn-in", type=int, default=20)
    ap.add_argument("--occupancy-epsilon", type=float, default=0.05)
    ap.add_argument("--occupancy-samples", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    spec = builtin(args.family, [tok for tok in args.params.split(",") if tok])
    print(f"channel: {spec.name}", file=sys.stderr)
    cap = solve_capacity(spec)
    exp = solve_ctilde1(spec, capacity=cap.capacity)
    print(f"C = {cap.capacity:.6f} bits   ctilde1 = {exp.ctilde1:.6f} bits")

    config = SchemeConfig(
        num_bits=args.K,
        error_target=args.pe,
        confirm_threshold=args.p0,
        variant=args.variant,
    )

    s1 = drift_check(
        spec, config, cap.policy, exp.policies,
        stage="stage1", n_episodes=args.episodes, seed=args.seed,
    )
    print(
        f"stage1   n={s1.n_samples:>6} (+{s1.n_infinite} infinite) "
        f"drift={s1.mean_drift:+.4f} ref={s1.mean_reference:+.4f} "
        f"excess={s1.mean_excess:+.4f} se={s1.std_error:.4f} "
        f"[{'PASS' if s1.passed else 'FAIL'}]"
    )

    deep = SchemeConfig(
        num_bits=min(args.K, 3),
        error_target=args.stage2_pe,
        confirm_threshold=args.p0,
        variant=args.variant,
    )
    s2 = drift_check(
        spec, deep, cap.policy, exp.policies,
        stage="stage2_h0", n_episodes=max(args.episodes // 2, 20),
        seed=args.seed + 1, window=args.stage2_window,
        burn_in=args.stage2_burn_in, drift_rate=exp.ctilde1,
    )
    print(
        f"stage2   n={s2.n_samples:>6} windows of {s2.window} "
        f"drift={s2.mean_drift:+.4f} ref={s2.mean_reference:+.4f} "
        f"excess={s2.mean_excess:+.4f} se={s2.std_error:.4f} "
        f"[{'PASS' if s2.passed else 'FAIL'}]"
    )

    dist = bhat_vs_b_distance(
        spec, config, cap.policy,
        args.occupancy_epsilon, args.occupancy_samples,
        seed=args.seed + 2, confirm_tables=exp.policies,
    )
    print(f"occupancy TV distance (eps={args.occupancy_epsilon}): {dist:.4f}")

    avg_info = stage_one_info_average(
        spec, config, cap.policy,
        args.occupancy_epsilon, args.occupancy_samples,
        seed=args.seed + 3, confirm_tables=exp.policies,
    )
    print(
        f"visited-belief info rate: {avg_info:.4f} bits "
        f"(solved capacity {cap.capacity:.4f})"
    )

    return 0 if (s1.passed and s2.passed) else 1


if __name__ == "__main__":
    sys.exit(main())
