"""Randomized posterior-matching maps from message posteriors to channel inputs.

The central primitive: lay the message posterior out on [0, 1) as consecutive
intervals in message order, pick the point u = F(w-) + v * pi(w) inside the
true message's interval using a shared random v, and transmit the input whose
target-pmf interval contains u.  Averaged over v this makes the input-given-
posterior law land exactly on the target pmf, while staying a deterministic
function of (w, pi, v) that the receiver can replay for every hypothesised w.

All functions are generic over the scalar type: exact `Fraction`, float, and
mpfr inputs all work, and sums are taken in message-index order so replays
are bit-for-bit reproducible at any precision.  Messages are 0-based.

Two stages of the transmission scheme build on this map:

  * stage one matches the capacity-achieving input law at the decoder's
    state belief (``stage1_encode``);
  * stage two splits messages into a confirmed candidate (H0) and the rest
    (H1), and matches the binary-hypothesis-test input laws
    (``stage2_encode``), either via a pluggable (state, belief) policy
    ("full" mode) or via a one-step state sync followed by state-pair table
    lookups ("alternative" mode).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Sequence


@dataclass(frozen=True)
class DrpmTrace:
    x: int  # chosen channel input
    u: object  # matched point in [0, 1)
    lo: object  # left edge of the chosen input's interval
    hi: object  # right edge of the chosen input's interval


def drpm_detail(w: int, px, pi, v) -> DrpmTrace:
    """Posterior-matched input choice with its interval, for tracing."""
    if not 0 <= w < len(pi):
        raise IndexError(f"message {w} out of range for {len(pi)} messages")
    pw = pi[w]
    if pw <= 0:
        raise ValueError(f"message {w} has zero posterior mass")
    if not 0 <= v <= 1:
        raise ValueError(f"randomisation point v={v} outside [0, 1]")
    before = 0
    for j in range(w):
        before = before + pi[j]
    u = before + v * pw

    lo = 0
    last = None  # (x, lo, hi) of the last positive-mass input
    for x in range(len(px)):
        mass = px[x]
        if mass <= 0:
            continue
        hi = lo + mass
        if u < hi:
            return DrpmTrace(x=x, u=u, lo=lo, hi=hi)
        last = (x, lo, hi)
        lo = hi
    if last is None:
        raise ValueError("input pmf has no positive mass")
    # u landed on or past the total mass (v = 1 edge, or rounding at the top)
    return DrpmTrace(x=last[0], u=u, lo=last[1], hi=last[2])


def drpm(w: int, px, pi, v) -> int:
    """Input transmitted for message w under target input pmf px.

    Args:
        w: 0-based message index with pi[w] > 0.
        px: target input pmf.
        pi: message posterior (any common scalar type).
        v: shared randomisation point in [0, 1].

    Returns:
        The input x whose pmf interval [F_px(x-), F_px(x)) contains
        u = F_pi(w-) + v * pi(w).
    """
    return drpm_detail(w, px, pi, v).x


def drpm_conditional_law(px, pi, w: int) -> list:
    """Exact law of the transmitted input given W = w, averaged over v.

    Entry x is |I_px(x) ∩ I_pi(w)| / pi(w), the overlap of the input's
    interval with the message's interval.  With Fraction inputs the result
    is exact, which is how the marginal-matching identity
    sum_w pi(w) P(x|w) = px(x) is checked.
    """
    pw = pi[w]
    if pw <= 0:
        raise ValueError(f"message {w} has zero posterior mass")
    lo_w = 0
    for j in range(w):
        lo_w = lo_w + pi[j]
    hi_w = lo_w + pw

    law = []
    lo = 0
    for mass in px:
        hi = lo + mass
        overlap = min(hi, hi_w) - max(lo, lo_w)
        law.append(overlap / pw if overlap > 0 else 0 * pw)
        lo = hi
    return law


# ---------------------------------------------------------------------------
# stage one


def stage1_quantities(pi, sv: Sequence[int], ns: int):
    """State belief and per-state conditional posteriors.

    Args:
        pi: message posterior.
        sv: hypothesised state of each message.
        ns: number of channel states.

    Returns:
        (bhat, pi_s): bhat[s] is the posterior probability that the channel
        sits in state s; pi_s[s] is the posterior over messages conditioned
        on state s, or None when bhat[s] = 0 (no encoder ever reads such a
        row, since each message conditions on its own state).
    """
    m = len(pi)
    if len(sv) != m:
        raise ValueError("pi and sv must have one entry per message")
    bhat = [0] * ns
    for i in range(m):
        bhat[sv[i]] = bhat[sv[i]] + pi[i]
    pi_s = []
    for s in range(ns):
        if bhat[s] <= 0:
            pi_s.append(None)
        else:
            pi_s.append([pi[i] / bhat[s] if sv[i] == s else 0 * pi[i] for i in range(m)])
    return bhat, pi_s


def stage1_encode(i: int, sv: Sequence[int], pi, v, policy) -> int:
    """Input hypothesised for message i during the data phase.

    The input law is the capacity policy's row at the decoder's state
    belief: ``policy.row(bhat)`` must return per-state input pmfs, indexed
    [state][input].  v holds one randomisation point per state; message i
    uses the one for its own state.
    """
    ns = len(v)
    bhat, pi_s = stage1_quantities(pi, sv, ns)
    rows = policy.row(bhat)
    s = sv[i]
    return drpm(i, rows[s], pi_s[s], v[s])


# ---------------------------------------------------------------------------
# stage two


def stage2_quantities(pi, sv: Sequence[int], w_hat: int, ns: int):
    """State belief and conditional posteriors given the candidate is wrong.

    Excludes w_hat and renormalises: bhat1[s] is the probability of state s
    given W != w_hat, pi1_s[s] the message posterior given W != w_hat and
    state s (None when that event has zero mass).

    Raises ValueError when pi puts all its mass on w_hat, in which case
    there is nothing to condition on.
    """
    m = len(pi)
    residual = 0
    for i in range(m):
        if i != w_hat:
            residual = residual + pi[i]
    if residual <= 0:
        raise ValueError("posterior is concentrated on the candidate message")
    bhat1 = [0] * ns
    for i in range(m):
        if i != w_hat:
            bhat1[sv[i]] = bhat1[sv[i]] + pi[i]
    pi1_s = []
    for s in range(ns):
        mass_s = bhat1[s]
        if mass_s <= 0:
            pi1_s.append(None)
        else:
            pi1_s.append(
                [
                    pi[i] / mass_s if (i != w_hat and sv[i] == s) else 0 * pi[i]
                    for i in range(m)
                ]
            )
    for s in range(ns):
        bhat1[s] = bhat1[s] / residual
    return bhat1, pi1_s


Hypothesis = Literal["h0", "h1"]
Stage2Mode = Literal["full", "alternative"]


def stage2_encode(
    hyp: Hypothesis,
    w_hat: int,
    i: int,
    sv: Sequence[int],
    pi,
    v,
    policies,
    mode: Stage2Mode,
    sync_pending: bool = False,
    sync=None,
) -> int:
    """Input hypothesised for message i during the confirmation phase.

    In "full" mode, `policies` is a pluggable stage-two policy exposing
    ``h0_input(s_hat, bhat1)`` and ``h1_input_pmf(s_hat, bhat1, s)``; the
    candidate transmits the H0 input for its own state, every other message
    posterior-matches the H1 input pmf for its state.

    In "alternative" mode, `policies` carries integer tables ``x0[s0][s1]``
    and ``x1[s0][s1]`` over (candidate state, alternative state); the
    alternative state must be common to every live non-candidate message.
    While ``sync_pending`` the state-blinding input ``sync.xstar`` is sent
    instead, which collapses every hypothesised state to a common value and
    makes the pair (s0, s1) meaningful from the next step on.
    """
    if (hyp == "h0") != (i == w_hat):
        raise ValueError("h0 encodes exactly the candidate message")
    s_i = sv[i]
    if mode == "alternative":
        if sync_pending:
            if sync is None:
                raise ValueError("alternative mode needs a sync input table")
            return sync.xstar[s_i]
        s0 = sv[w_hat]
        alt_states = {sv[j] for j in range(len(sv)) if j != w_hat and pi[j] > 0}
        if not alt_states:
            raise ValueError("posterior is concentrated on the candidate message")
        if len(alt_states) > 1:
            raise ValueError(
                "alternative mode needs a common hypothesised state for the "
                "non-candidate messages; send the sync input first"
            )
        s1 = alt_states.pop()
        if hyp == "h0":
            return int(policies.x0[s0][s1])
        return int(policies.x1[s0][s1])
    if mode != "full":
        raise ValueError(f"unknown stage-two mode {mode!r}")

    ns = len(v)
    bhat1, pi1_s = stage2_quantities(pi, sv, w_hat, ns)
    s_hat = sv[w_hat]
    if hyp == "h0":
        return int(policies.h0_input(s_hat, bhat1))
    px = policies.h1_input_pmf(s_hat, bhat1, s_i)
    return drpm(i, px, pi1_s[s_i], v[s_i])
