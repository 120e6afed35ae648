"""Empirical checks on the step-by-step behaviour of the transmission scheme.

The expected number of channel uses rests on three simulation-level facts:
during the communication stage the true message's posterior log-odds climb
at least as fast as the information rate of the current state belief; during
confirmation (candidate correct) they climb at the solved hypothesis-testing
drift rate; and no single step can move them by more than the worst-case
log-likelihood-ratio spread of the kernel.  This module measures all three
on simulated episodes, plus a distribution comparison between the state
beliefs the scheme actually visits and the autonomous belief chain the
capacity solver assumes.

Drift is conditioned on the past in the analysis; empirically we can only
test the aggregated (tower-property) consequence, so the reports carry
sample means and standard errors and a pass means the mean excess is above
-3 standard errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .capacity import BeliefGrid, belief_update, kernel_array, mutual_information
from .channel import UnifilarChannelSpec, c2_bound
from .exponent import HypothesisPolicies, solve_ctilde1
from .numerics import trial_seed
from .scheme import Episode, PairTableConfirmPolicy, SchemeConfig

STAGE_FILTERS = ("stage1", "stage2_h0")


def info_rate(spec: UnifilarChannelSpec, bhat, policy) -> float:
    """Information rate of a state belief under an input policy, in bits.

    This is the expected one-step gain in the true message's posterior
    log-odds when inputs are matched to the posterior: the mutual
    information between the (state, input) pair and the output, with the
    state drawn from ``bhat`` and the input from the policy's per-state
    pmfs.  ``policy`` may be anything with a ``row(belief)`` method or the
    per-state rows themselves; the 0*log(0) terms drop out.
    """
    rows = policy.row(bhat) if hasattr(policy, "row") else policy
    rows = [[float(p) for p in row] for row in rows]
    return mutual_information(spec, bhat, rows)


@dataclass(frozen=True)
class DriftReport:
    """Aggregated drift of the true message's posterior log-odds.

    ``mean_drift`` and ``mean_reference`` average the per-sample log-odds
    change and its predicted lower bound (the information rate for the
    communication stage; ``window`` times the confirmation drift rate for
    stage-two windows).  ``std_error`` is the standard error of the excess
    (drift minus reference).  Samples with infinite drift (a message
    resolved outright by a zero-probability output) satisfy any finite
    bound, so they are counted in ``n_infinite`` and left out of the
    moments.  ``violation_fraction_of_bound`` is the fraction of all
    inspected steps whose |log-odds change| exceeded the kernel's
    single-step bound.
    """

    stage: str
    n_samples: int
    n_infinite: int
    mean_drift: float
    mean_reference: float
    std_error: float
    violation_fraction_of_bound: float
    n_steps: int
    window: int

    @property
    def mean_excess(self) -> float:
        return self.mean_drift - self.mean_reference

    @property
    def passed(self) -> bool:
        """Mean excess at least -3 standard errors above zero."""
        if self.n_samples == 0:
            return self.n_infinite > 0
        slack = 0.0 if math.isnan(self.std_error) else 3.0 * self.std_error
        return self.mean_excess >= -slack


def _drive_episode(spec, config, input_policy, confirm_policy, seed, on_step):
    """Replay of the episode loop that exposes pre-step quantities.

    Draw order matches ``run_episode`` exactly: message, then one shared
    uniform per state plus one channel uniform per step.  ``on_step`` sees
    the pre-step state belief and true-message log-odds, the step record,
    the post-step log-odds and the episode (for stage/anchor inspection).
    """
    rng = np.random.default_rng(seed)
    message = int(rng.integers(config.num_messages))
    episode = Episode(spec, config, message, input_policy, confirm_policy)
    while not episode.stop_met() and episode.t < config.step_limit:
        pre_belief = episode.state_belief()
        pre_llr = episode.log_odds_of(message)
        v = rng.random(spec.ns)
        noise = float(rng.random())
        record = episode.step(v, noise)
        if record is None:
            break
        on_step(episode, message, pre_belief, pre_llr, record)
    return episode, message


def drift_check(
    spec: UnifilarChannelSpec,
    config: SchemeConfig,
    input_policy,
    confirm_tables: Optional[HypothesisPolicies] = None,
    *,
    stage: str = "stage1",
    n_episodes: int = 100,
    seed: int = 0,
    window: int = 50,
    burn_in: int = 20,
    drift_rate: Optional[float] = None,
    bound_tolerance: float = 1e-9,
) -> DriftReport:
    """Measure posterior log-odds drift over simulated episodes.

    ``stage="stage1"`` collects one sample per communication-stage step:
    the log-odds change minus the information rate of the pre-step belief
    under ``input_policy``.  ``stage="stage2_h0"`` collects ``window``-step
    log-odds changes over contiguous confirmation stretches whose candidate
    is the true message, each run's first ``burn_in`` steps skipped, against
    ``window * drift_rate`` (the solved confirmation drift rate when not
    given).  Every step of every episode is also checked against the
    kernel's single-step log-odds bound.
    """
    if stage not in STAGE_FILTERS:
        raise ValueError(f"stage must be one of {STAGE_FILTERS}, got {stage!r}")
    if n_episodes < 1:
        raise ValueError("need at least one episode")
    if stage == "stage2_h0":
        if config.variant == "one_stage":
            raise ValueError("stage2_h0 drift needs a two-stage variant")
        if window < 1 or burn_in < 0:
            raise ValueError("window must be positive and burn_in nonnegative")
        if drift_rate is None:
            drift_rate = solve_ctilde1(spec).ctilde1

    confirm_policy = None
    if confirm_tables is not None:
        confirm_policy = PairTableConfirmPolicy(confirm_tables, spec.nx)
    c2 = c2_bound(spec)

    drifts: list[float] = []
    references: list[float] = []
    n_infinite = 0
    n_steps = 0
    violations = 0

    for i in range(n_episodes):
        run_llrs: list[float] = []

        def harvest_windows():
            nonlocal n_infinite
            length = len(run_llrs) - 1  # qualifying steps in the run
            start = burn_in
            while start + window <= length:
                delta = run_llrs[start + window] - run_llrs[start]
                if math.isfinite(delta):
                    drifts.append(delta)
                    references.append(window * drift_rate)
                else:
                    n_infinite += 1
                start += window
            run_llrs.clear()

        def on_step(episode, message, pre_belief, pre_llr, record):
            nonlocal n_steps, violations, n_infinite
            post_llr = episode.log_odds_of(message)
            delta = post_llr - pre_llr
            n_steps += 1
            if math.isfinite(c2) and not (
                math.isfinite(delta) and abs(delta) <= c2 + bound_tolerance
            ):
                violations += 1
            if stage == "stage1":
                if record.stage == 1:
                    if math.isfinite(delta):
                        drifts.append(delta)
                        references.append(info_rate(spec, pre_belief, input_policy))
                    else:
                        n_infinite += 1
            else:
                qualifying = record.stage == 2 and episode.anchor == message
                if qualifying:
                    if not run_llrs:
                        run_llrs.append(pre_llr)
                    run_llrs.append(post_llr)
                else:
                    harvest_windows()

        _drive_episode(
            spec, config, input_policy, confirm_policy, trial_seed(seed, i), on_step
        )
        if stage == "stage2_h0":
            harvest_windows()

    if not drifts and n_infinite == 0:
        raise ValueError(f"no {stage} samples were produced; adjust the setup")

    n = len(drifts)
    if n == 0:
        mean_drift, mean_reference, std_error = math.inf, math.nan, math.nan
    else:
        excess = np.asarray(drifts) - np.asarray(references)
        mean_drift = float(np.mean(drifts))
        mean_reference = float(np.mean(references))
        std_error = (
            float(np.std(excess, ddof=1) / math.sqrt(n)) if n >= 2 else math.nan
        )
    return DriftReport(
        stage=stage,
        n_samples=n,
        n_infinite=n_infinite,
        mean_drift=mean_drift,
        mean_reference=mean_reference,
        std_error=std_error,
        violation_fraction_of_bound=violations / n_steps if n_steps else 0.0,
        n_steps=n_steps,
        window=window if stage == "stage2_h0" else 1,
    )


# ---------------------------------------------------------------------------
# state-belief occupancy: scheme episodes vs the autonomous belief chain


def _chain_step(spec, kern, input_policy, belief, rng) -> np.ndarray:
    """One transition of the autonomous belief chain under the policy."""
    rows = np.asarray(
        [[float(p) for p in row] for row in input_policy.row(tuple(belief))]
    )
    py = np.einsum("s,sx,xsy->y", belief, rows, kern)
    y = int(np.searchsorted(np.cumsum(py), rng.random() * py.sum()))
    return belief_update(spec, belief, rows, y)


def _pure_start(spec) -> np.ndarray:
    belief = np.zeros(spec.ns)
    belief[spec.s1] = 1.0
    return belief


def belief_chain_samples(
    spec: UnifilarChannelSpec,
    input_policy,
    n: int,
    *,
    seed: int = 0,
    burn_in: int = 100,
) -> np.ndarray:
    """Sample the autonomous state-belief chain the capacity solver assumes.

    Starting from certainty in the initial state, the belief is Bayes
    updated with outputs drawn from its own predicted output law under
    ``input_policy``; the first ``burn_in`` beliefs are discarded.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    kern = kernel_array(spec)
    rng = np.random.default_rng([seed, 0])
    belief = _pure_start(spec)
    out = np.empty((n, spec.ns))
    for t in range(burn_in + n):
        if t >= burn_in:
            out[t - burn_in] = belief
        belief = _chain_step(spec, kern, input_policy, belief, rng)
    return out


def _chain_stretch_samples(spec, input_policy, stretches, seed) -> np.ndarray:
    """Autonomous-chain beliefs over fresh runs of the given lengths."""
    kern = kernel_array(spec)
    rng = np.random.default_rng([seed, 0])
    out = np.empty((sum(stretches), spec.ns))
    i = 0
    for length in stretches:
        belief = _pure_start(spec)
        for j in range(length):
            out[i] = belief
            i += 1
            if j + 1 < length:
                belief = _chain_step(spec, kern, input_policy, belief, rng)
    return out


def scheme_belief_samples(
    spec: UnifilarChannelSpec,
    config: SchemeConfig,
    input_policy,
    epsilon: float,
    n: int,
    *,
    seed: int = 0,
    confirm_tables: Optional[HypothesisPolicies] = None,
    max_episodes: int = 1_000_000,
    return_stretches: bool = False,
):
    """State beliefs from scheme episodes while all message masses are small.

    Collects the pre-step state belief over each episode's initial stretch
    of steps whose largest posterior mass is below ``epsilon`` (an episode
    is abandoned the first time a mass reaches ``epsilon``), running fresh
    episodes (seeded per episode from ``seed``) until ``n`` samples are
    gathered.  With ``return_stretches`` the per-episode stretch lengths
    come back too, so a reference process can be restarted to match.
    """
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    if n < 1:
        raise ValueError("need at least one sample")
    confirm_policy = None
    if confirm_tables is not None:
        confirm_policy = PairTableConfirmPolicy(confirm_tables, spec.nx)
    out: list[tuple[float, ...]] = []
    stretches: list[int] = []
    for i in range(max_episodes):
        if len(out) >= n:
            break
        rng = np.random.default_rng(trial_seed(seed, i))
        message = int(rng.integers(config.num_messages))
        episode = Episode(spec, config, message, input_policy, confirm_policy)
        count = 0
        while not episode.stop_met() and episode.t < config.step_limit:
            if not float(episode.max_mass) < epsilon:
                break
            out.append(episode.state_belief())
            count += 1
            if len(out) >= n:
                break
            v = rng.random(spec.ns)
            noise = float(rng.random())
            if episode.step(v, noise) is None:
                break
        if count:
            stretches.append(count)
    if len(out) < n:
        raise ValueError(
            f"only {len(out)} of {n} qualifying steps found in {max_episodes} episodes"
        )
    samples = np.asarray(out)
    if return_stretches:
        return samples, stretches
    return samples


def stage_one_info_average(
    spec: UnifilarChannelSpec,
    config: SchemeConfig,
    input_policy,
    epsilon: float,
    n: int,
    *,
    seed: int = 0,
    confirm_tables: Optional[HypothesisPolicies] = None,
    max_episodes: int = 1_000_000,
) -> float:
    """Average information rate over scheme-visited beliefs, in bits.

    The long-run average of ``info_rate`` over steps where every message
    mass is below ``epsilon`` — the quantity whose approach to the solved
    capacity justifies reading the communication stage's duration as
    ``num_bits / capacity``.
    """
    beliefs = scheme_belief_samples(
        spec,
        config,
        input_policy,
        epsilon,
        n,
        seed=seed,
        confirm_tables=confirm_tables,
        max_episodes=max_episodes,
    )
    rates = [info_rate(spec, tuple(b), input_policy) for b in beliefs]
    return float(np.mean(rates))


def bhat_vs_b_distance(
    spec: UnifilarChannelSpec,
    config: SchemeConfig,
    input_policy,
    epsilon: float,
    n: int,
    *,
    seed: int = 0,
    resolution: float = 1.0 / 50,
    metric: str = "tv",
    confirm_tables: Optional[HypothesisPolicies] = None,
    max_episodes: int = 1_000_000,
) -> float:
    """Distance between scheme-visited and autonomous belief occupancies.

    Draws ``n`` beliefs from each process with the same input policy and
    compares the empirical distributions.  The autonomous chain is
    restarted from the initial state once per scheme episode, matching the
    qualifying stretch lengths, so both occupancy measures average the
    same run structure and the distance isolates the effect of the
    message-posterior coupling.  ``metric="tv"`` bins both onto the
    simplex lattice of the given resolution and returns total variation;
    ``metric="wasserstein1"`` (two-state channels only) returns the exact
    earth-mover distance between the two samples of the second-state
    probability.
    """
    scheme, stretches = scheme_belief_samples(
        spec,
        config,
        input_policy,
        epsilon,
        n,
        seed=seed,
        confirm_tables=confirm_tables,
        max_episodes=max_episodes,
        return_stretches=True,
    )
    chain = _chain_stretch_samples(spec, input_policy, stretches, seed)
    if metric == "tv":
        grid = BeliefGrid(spec.ns, resolution)
        counts_a = np.bincount(grid.indices_of(scheme), minlength=len(grid))
        counts_b = np.bincount(grid.indices_of(chain), minlength=len(grid))
        return 0.5 * float(np.abs(counts_a - counts_b).sum()) / n
    if metric == "wasserstein1":
        if spec.ns != 2:
            raise ValueError("wasserstein1 is defined here for two-state channels")
        a = np.sort(scheme[:, 1])
        b = np.sort(chain[:, 1])
        return float(np.abs(a - b).mean())
    raise ValueError(f"unknown metric {metric!r}")
