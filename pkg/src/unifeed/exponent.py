"""Error-exponent bounds from a two-branch hypothesis-testing MDP.

Once the decoder has a confirmed candidate message, rejecting the remaining
alternatives is a sequential binary hypothesis test.  Collapsing the
alternative's state belief to a point state turns the optimal test into a
small average-reward MDP: states are pairs (s0, s1) of channel states under
the two hypotheses, actions are input pairs (x0, x1), the reward is the
one-step divergence D( Q(.|x0,s0) || Q(.|x1,s1) ), and the pair moves
deterministically per output with the output drawn under the H0 law.

The optimal gain of this MDP, maximised over the initial pair, upper-bounds
the achievable post-confirmation drift rate of the decoder's log odds; it is
infinite when some policy can stay forever inside a set of state pairs whose
chosen rewards are all infinite (a zero somewhere in the kernel makes
certain pairs perfectly distinguishable in one step).

`evaluate_ctilde1_star` replays the solved policies under the *alternative*
hypothesis: outputs drawn under the H1 law and the reversed divergence as
reward.  Its long-run average is the drift rate governing how fast a wrong
candidate gets demoted, and comparing it against capacity (the
`dominance_flag`) checks that demotion is never the bottleneck.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from unifeed.channel import UnifilarChannelSpec, kl_reward


@dataclass(frozen=True)
class HypothesisPolicies:
    """Input tables for the confirmation phase, indexed [s0][s1]."""

    x0: tuple  # input sent by the candidate's branch at pair (s0, s1)
    x1: tuple  # input sent by the alternative's branch at pair (s0, s1)

    def as_rows(self):
        ns = len(self.x0)
        return [
            (s0, s1, int(self.x0[s0][s1]), int(self.x1[s0][s1]))
            for s0 in range(ns)
            for s1 in range(ns)
        ]


@dataclass
class ExponentReport:
    ctilde1: float  # optimal H0 drift rate, bits/step (math.inf allowed)
    ctilde1_star: float  # H1 drift rate under the solved policies
    per_state_gains: np.ndarray  # finite-restriction gains, indexed [s0, s1]
    policies: HypothesisPolicies
    iterations: int
    residual: float
    converged: bool
    capacity: Optional[float] = None
    dominance_flag: Optional[bool] = None  # ctilde1_star >= capacity


def _pair_tables(spec: UnifilarChannelSpec):
    """Reward/transition/probability tables of the pair MDP."""
    ns, nx, ny = spec.ns, spec.nx, spec.ny
    n_ss, n_aa = ns * ns, nx * nx
    rewards = np.empty((n_ss, n_aa))
    nxt = np.empty((n_ss, n_aa, ny), dtype=np.int64)
    prob = np.empty((n_ss, n_aa, ny))
    for s0 in range(ns):
        for s1 in range(ns):
            ss = s0 * ns + s1
            for x0 in range(nx):
                for x1 in range(nx):
                    aa = x0 * nx + x1
                    rewards[ss, aa] = kl_reward(spec, s0, x0, s1, x1)
                    for y in range(ny):
                        nxt[ss, aa, y] = spec.g[s0][x0][y] * ns + spec.g[s1][x1][y]
                        prob[ss, aa, y] = float(spec.q[x0][s0][y])
    return rewards, nxt, prob


def _sustained_infinite_set(rewards, nxt, prob) -> np.ndarray:
    """Pairs from which some policy keeps every future reward infinite.

    Largest set U of pairs such that each has an infinite-reward action all
    of whose positive-probability successors stay inside U.  Nonempty U
    means a policy exists whose recurrent behaviour earns +inf every step.
    """
    n_ss, n_aa = rewards.shape
    inf_mask = np.isinf(rewards)
    in_u = inf_mask.any(axis=1)
    changed = True
    while changed:
        changed = False
        for ss in range(n_ss):
            if not in_u[ss]:
                continue
            ok = False
            for aa in range(n_aa):
                if not inf_mask[ss, aa]:
                    continue
                succs = nxt[ss, aa][prob[ss, aa] > 0.0]
                if all(in_u[t] for t in succs):
                    ok = True
                    break
            if not ok:
                in_u[ss] = False
                changed = True
    return in_u


def solve_ctilde1(
    spec: UnifilarChannelSpec,
    tol: float = 1e-9,
    max_iter: int = 200_000,
    capacity: Optional[float] = None,
    damping: float = 0.5,
) -> ExponentReport:
    """Solve the pair MDP for the post-confirmation drift rate.

    Reports +inf when an all-infinite-reward recurrent behaviour exists (or
    some pair has no finite-reward action at all); the returned policies and
    per-state gains always come from the finite-reward restriction, which is
    what a simulator can actually follow.

    Value iteration is damped relative iteration on the finite restriction;
    the per-pair gains are the stabilised one-sweep increments, with a
    doubling-horizon average as fallback when increments keep oscillating
    (possible when the optimal behaviour splits into several recurrent
    classes).
    """
    rewards, nxt, prob = _pair_tables(spec)
    n_ss, n_aa = rewards.shape

    no_finite = np.isinf(rewards).all(axis=1)
    infinite = bool(_sustained_infinite_set(rewards, nxt, prob).any() or no_finite.any())

    rfin = np.where(np.isinf(rewards), -np.inf, rewards)

    v = np.zeros(n_ss)
    base = 0.0  # accumulated normalisation offset, so base + v grows linearly
    gains = np.zeros(n_ss)
    prev_d = None
    residual = math.inf
    converged = False
    it = 0
    snapshots = {}
    next_snap = 256
    for it in range(1, max_iter + 1):
        ev = prob * np.take(v, nxt)
        q = rfin + ev.sum(axis=2)
        tv = q.max(axis=1)
        d = tv - v
        v = (1.0 - damping) * v + damping * tv
        shift = v[0]
        v -= shift
        base += shift
        if prev_d is not None:
            residual = float(np.abs(d - prev_d).max())
            if residual < tol:
                gains = d
                converged = True
                break
        prev_d = d
        if it == next_snap:
            snapshots[it] = base + v.copy()
            next_snap *= 2
    else:
        # increments kept moving: average growth between doubled horizons
        gains = d
        marks = sorted(snapshots)
        if len(marks) >= 2:
            n1, n2 = marks[-2], marks[-1]
            gains = (snapshots[n2] - snapshots[n1]) / (damping * (n2 - n1))

    ev = prob * np.take(v, nxt)
    q = rfin + ev.sum(axis=2)
    best = q.argmax(axis=1)  # first maximiser: lexicographically smallest pair
    ns, nx = spec.ns, spec.nx
    x0 = tuple(
        tuple(int(best[s0 * ns + s1]) // nx for s1 in range(ns)) for s0 in range(ns)
    )
    x1 = tuple(
        tuple(int(best[s0 * ns + s1]) % nx for s1 in range(ns)) for s0 in range(ns)
    )
    policies = HypothesisPolicies(x0=x0, x1=x1)

    gains = np.where(no_finite, np.inf, gains)
    ctilde1 = math.inf if infinite else float(gains.max())
    star = evaluate_ctilde1_star(spec, policies)
    report = ExponentReport(
        ctilde1=ctilde1,
        ctilde1_star=star,
        per_state_gains=gains.reshape(ns, ns),
        policies=policies,
        iterations=it,
        residual=residual,
        converged=converged or infinite,
        capacity=capacity,
        dominance_flag=None if capacity is None else bool(star >= capacity),
    )
    return report


def evaluate_ctilde1_star(
    spec: UnifilarChannelSpec, policies: HypothesisPolicies
) -> float:
    """Long-run reversed-divergence rate when the alternative is true.

    Fixing the solved inputs turns the pair process into a Markov chain with
    outputs drawn under the H1 law Q(.|x1, s1); the reward is the reversed
    divergence D( Q(.|x1,s1) || Q(.|x0,s0) ).  Returns the best over
    recurrent classes of the stationary average, +inf if a recurrent pair
    earns an infinite reversed reward.
    """
    ns, ny = spec.ns, spec.ny
    n_ss = ns * ns
    trans = np.zeros((n_ss, n_ss))
    r = np.empty(n_ss)
    for s0 in range(ns):
        for s1 in range(ns):
            ss = s0 * ns + s1
            x0 = int(policies.x0[s0][s1])
            x1 = int(policies.x1[s0][s1])
            r[ss] = kl_reward(spec, s0, x0, s1, x1, direction="reverse")
            for y in range(ny):
                p = float(spec.q[x1][s1][y])
                if p > 0.0:
                    t = spec.g[s0][x0][y] * ns + spec.g[s1][x1][y]
                    trans[ss, t] += p

    n_comp, labels = connected_components(
        csr_matrix(trans > 0.0), directed=True, connection="strong"
    )
    best = -math.inf
    for c in range(n_comp):
        members = np.flatnonzero(labels == c)
        # a class is recurrent iff it is closed under the chain
        mass_inside = trans[np.ix_(members, members)].sum(axis=1)
        if not np.allclose(mass_inside, 1.0, atol=1e-12):
            continue
        if np.isinf(r[members]).any():
            return math.inf
        pi = _stationary(trans[np.ix_(members, members)])
        best = max(best, float(pi @ r[members]))
    return best


def _stationary(p: np.ndarray) -> np.ndarray:
    """Stationary distribution of an irreducible stochastic matrix."""
    n = len(p)
    a = np.vstack([p.T - np.eye(n), np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def bound_line(capacity: float, ctilde1: float, rbar: float) -> float:
    """Straight-line exponent bound ctilde1 * (1 - rbar / capacity).

    Defined for 0 <= rbar <= capacity; the value at rbar = capacity is 0 by
    convention even when ctilde1 is infinite.
    """
    if capacity <= 0:
        raise ValueError("capacity must be positive")
    if rbar < 0 or rbar > capacity:
        raise ValueError(f"rate {rbar} outside [0, capacity={capacity}]")
    if rbar == capacity:
        return 0.0
    if math.isinf(ctilde1):
        return math.inf
    return ctilde1 * (1.0 - rbar / capacity)
