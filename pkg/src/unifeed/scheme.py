"""Two-phase variable-length transmission over state channels with feedback.

Both ends of the link observe the channel outputs (perfect feedback) and a
shared randomness stream, so transmitter and receiver can maintain the same
posterior over messages together with a per-message hypothesis about what
the transmitter state would be if that message were the true one.  An
episode runs a communication phase (posterior matching of the message set
onto the current input distribution) and, in the two-stage variants, a
confirmation phase that pits the leading message against the rest with
inputs chosen from a binary-hypothesis policy.

The posterior is stored as runs ``(lo, hi, value, state)`` of consecutive
message indices that share both the posterior value and the hypothesized
state.  Posterior matching can split a run at no more than ``num_states *
(num_inputs - 1)`` places per step, so the representation stays linear in
the episode length instead of the message count ``2**num_bits``, which
makes large message sets practical.

All probability bookkeeping runs on one of three interchangeable scalar
backends: correctly rounded ``gmpy2.mpfr`` at a configurable precision
(default), exact :class:`~fractions.Fraction` (reference/testing), or plain
floats (fast but can underflow, reported as a numeric truncation).
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Optional, Protocol, Sequence

import gmpy2
import numpy as np

from .channel import SyncInput, UnifilarChannelSpec, as_fraction, sync_input
from .exponent import HypothesisPolicies
from .numerics import precision_context

VARIANTS = ("one_stage", "two_stage_full", "two_stage_alternative")
ARITHMETICS = ("mpfr", "double", "fraction")


@dataclass(frozen=True)
class SchemeConfig:
    """Run-time options for a single transmission episode.

    ``error_target`` is the acceptable decoding error probability: the
    episode stops once some message holds posterior mass above
    ``1 - error_target``.  ``confirm_threshold`` is the mass at which the
    two-stage variants lock onto the leading message and switch to
    confirmation inputs; dropping back below it reverts to the
    communication phase.
    """

    num_bits: int
    error_target: float
    confirm_threshold: float = 0.9
    variant: str = "two_stage_alternative"
    precision_bits: int = 256
    arithmetic: str = "mpfr"
    max_steps: Optional[int] = None
    track_trace: bool = False

    def __post_init__(self) -> None:
        if self.num_bits < 1:
            raise ValueError("num_bits must be at least 1")
        if not 0.0 < self.error_target < 1.0:
            raise ValueError("error_target must lie strictly inside (0, 1)")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.arithmetic not in ARITHMETICS:
            raise ValueError(f"unknown arithmetic {self.arithmetic!r}")
        if self.variant != "one_stage":
            if not 0.0 < self.confirm_threshold < 1.0:
                raise ValueError("confirm_threshold must lie strictly inside (0, 1)")
            # exact decimal comparison: float arithmetic would pass the
            # boundary (e.g. 0.999 vs 1 - 1e-3) and lose 1 - pe entirely
            # for error targets below float resolution
            if not as_fraction(self.confirm_threshold) < 1 - as_fraction(
                self.error_target
            ):
                raise ValueError(
                    "confirm_threshold must be strictly below 1 - error_target"
                )
        if self.precision_bits < 8:
            raise ValueError("precision_bits must be at least 8")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be positive")

    @property
    def num_messages(self) -> int:
        return 1 << self.num_bits

    @property
    def step_limit(self) -> int:
        return self.max_steps if self.max_steps is not None else 2000 * self.num_bits


class ConfirmPolicy(Protocol):
    """Input choices while the receiver is locked onto a candidate message."""

    def anchor_input(self, anchor_state: int, alt_belief: Sequence[float]) -> int:
        """Input sent by the transmitter if the locked candidate is true."""

    def alt_input_pmf(
        self, anchor_state: int, alt_belief: Sequence[float], alt_state: int
    ) -> Sequence[Fraction]:
        """Input pmf shared by the other messages with this hypothesized state."""


class PairTableConfirmPolicy:
    """Confirmation inputs read from per-state-pair lookup tables.

    The tables are indexed ``[state if the candidate is true][state under
    the alternative]``; the alternative state is summarized by the most
    likely hypothesized state among the non-candidate messages (ties going
    to the smallest index).
    """

    def __init__(self, tables: HypothesisPolicies, num_inputs: int):
        self.tables = tables
        self.num_inputs = num_inputs

    @staticmethod
    def _mode(belief: Sequence[float]) -> int:
        return max(range(len(belief)), key=lambda s: (belief[s], -s))

    def anchor_input(self, anchor_state: int, alt_belief: Sequence[float]) -> int:
        return self.tables.x0[anchor_state][self._mode(alt_belief)]

    def alt_input_pmf(
        self, anchor_state: int, alt_belief: Sequence[float], alt_state: int
    ) -> Sequence[Fraction]:
        x = self.tables.x1[anchor_state][alt_state]
        return tuple(
            Fraction(1) if i == x else Fraction(0) for i in range(self.num_inputs)
        )


class StepRecord(NamedTuple):
    """Per-step trace row (posterior quantities are post-update)."""

    t: int
    stage: int
    sync: bool
    x: int
    y: int
    leader: int
    leader_mass: float
    llr: float


@dataclass(frozen=True)
class EpisodeResult:
    message: int
    decoded: int
    error: bool
    steps: int
    truncated: bool
    truncation_reason: Optional[str]
    stage2_entries: int
    reverts: int
    sync_steps: int
    trace: Optional[tuple[StepRecord, ...]]


class _Backend:
    """Scalar conversions for one arithmetic mode; operators stay native."""

    def __init__(self, kind: str, precision_bits: int):
        self.kind = kind
        self._ctx = precision_context(precision_bits) if kind == "mpfr" else None

    def context(self):
        if self._ctx is not None:
            return self._ctx
        return contextlib.nullcontext()

    def zero(self):
        if self.kind == "fraction":
            return Fraction(0)
        if self.kind == "double":
            return 0.0
        return gmpy2.mpfr(0)

    def from_fraction(self, value: Fraction):
        if self.kind == "fraction":
            return value
        if self.kind == "double":
            return value.numerator / value.denominator
        return gmpy2.mpfr(gmpy2.mpq(value.numerator, value.denominator))

    def from_float(self, value: float):
        if self.kind == "fraction":
            return Fraction(value)
        if self.kind == "double":
            return value
        return gmpy2.mpfr(value)

    def log_odds_bits(self, mass) -> float:
        """log2 of mass/(1-mass); +/-inf at the endpoints."""
        if mass <= 0:
            return -math.inf
        if mass >= 1:
            return math.inf
        if self.kind == "fraction":
            odds = gmpy2.mpq(mass.numerator, mass.denominator)
            return float(gmpy2.log2(odds / (1 - odds)))
        if self.kind == "double":
            return math.log2(mass / (1.0 - mass))
        return float(gmpy2.log2(mass / (gmpy2.mpfr(1) - mass)))


class Episode:
    """Posterior tracker and input selector for one transmitted message.

    Every quantity used here is a deterministic function of the channel
    outputs, the shared randomness and the agreed configuration, so the
    receiver mirrors the transmitter exactly; the object plays both roles.
    Drive it with :meth:`step`, checking :meth:`stop_met` between steps
    (as :func:`run_episode` does).
    """

    def __init__(
        self,
        spec: UnifilarChannelSpec,
        config: SchemeConfig,
        message: int,
        input_policy,
        confirm_policy: Optional[ConfirmPolicy] = None,
        sync: Optional[SyncInput] = None,
    ):
        if not 0 <= message < config.num_messages:
            raise ValueError("message index out of range")
        if config.variant != "one_stage" and confirm_policy is None:
            raise ValueError("two-stage variants need a confirmation policy")
        if config.variant == "two_stage_alternative" and sync is None:
            sync = sync_input(spec)
            if sync is None:
                raise ValueError(
                    "channel admits no state-independent resynchronizing input; "
                    "use the two_stage_full variant"
                )
        self.spec = spec
        self.config = config
        self.message = message
        self.input_policy = input_policy
        self.confirm_policy = confirm_policy
        self.sync = sync
        self.backend = _Backend(config.arithmetic, config.precision_bits)

        self.t = 0
        self.stage = 1
        self.anchor: Optional[int] = None
        self.stage2_entries = 0
        self.reverts = 0
        self.sync_steps = 0
        self.collapsed = False
        self.trace: Optional[list[StepRecord]] = [] if config.track_trace else None

        with self.backend.context():
            self._init_tables()
            uniform = self.backend.from_fraction(Fraction(1, config.num_messages))
            # runs of (lo, hi, per-message mass, hypothesized state)
            self.segments: list[tuple[int, int, object, int]] = [
                (0, config.num_messages, uniform, spec.s1)
            ]
            self._refresh_leader()

    # -- setup -----------------------------------------------------------

    def _init_tables(self) -> None:
        spec, be = self.spec, self.backend
        self._like = [
            [
                [be.from_fraction(spec.q[x][s][y]) for y in range(spec.ny)]
                for s in range(spec.ns)
            ]
            for x in range(spec.nx)
        ]
        self._ycum = [
            [
                tuple(
                    sum(spec.q[x][s][: y + 1], Fraction(0)) for y in range(spec.ny)
                )
                for s in range(spec.ns)
            ]
            for x in range(spec.nx)
        ]

    # -- read-out --------------------------------------------------------

    def _refresh_leader(self) -> None:
        best = None
        lead = 0
        for lo, _hi, p, _s in self.segments:
            if best is None or p > best:
                best, lead = p, lo
        self.max_mass = best
        self.leader = lead

    def posterior_of(self, w: int):
        """Posterior mass of one message (zero if it has been ruled out)."""
        for lo, hi, p, _s in self.segments:
            if lo <= w < hi:
                return p
        return self.backend.zero()

    def stop_met(self) -> bool:
        """True once the leader's posterior mass exceeds 1 - error_target.

        Evaluated as ``1 - mass < error_target`` in the episode's own
        arithmetic: the spread survives even when the target is far below
        float resolution (where ``1 - error_target`` would round to 1).
        """
        with self.backend.context():
            one = self.backend.from_fraction(Fraction(1))
            return bool(one - self.max_mass < self.config.error_target)

    def leader_log_odds(self) -> float:
        with self.backend.context():
            return self.backend.log_odds_bits(self.max_mass)

    def log_odds_of(self, w: int) -> float:
        """Log2 posterior odds of one message; -inf once it is ruled out."""
        with self.backend.context():
            return self.backend.log_odds_bits(self.posterior_of(w))

    def state_belief(self) -> tuple[float, ...]:
        """Channel-state marginal of the posterior, as floats.

        Uses the same accumulation as the stage-one input selection, so the
        returned tuple is bit-identical to the belief the next stage-one
        step would hand to the input policy.
        """
        with self.backend.context():
            bhat = [self.backend.zero() for _ in range(self.spec.ns)]
            for lo, hi, p, s in self.segments:
                bhat[s] = bhat[s] + (hi - lo) * p
            return tuple(float(b) for b in bhat)

    def expand(self):
        """Dense per-message (masses, states); states of dead messages are None.

        Only sensible for small message sets; intended for tests and
        diagnostics.
        """
        m = self.config.num_messages
        masses = [self.backend.zero()] * m
        states: list[Optional[int]] = [None] * m
        for lo, hi, p, s in self.segments:
            for i in range(lo, hi):
                masses[i] = p
                states[i] = s
        return masses, states

    # -- stage machinery ---------------------------------------------------

    def _update_stage(self) -> None:
        if self.stage == 2:
            if self.posterior_of(self.anchor) < self.config.confirm_threshold:
                self.stage = 1
                self.anchor = None
                self.reverts += 1
        if self.stage == 1 and self.max_mass > self.config.confirm_threshold:
            self.anchor = self.leader
            self.stage = 2
            self.stage2_entries += 1
            self._isolate_anchor()

    def _isolate_anchor(self) -> None:
        """Split the run containing the anchor so it sits in its own run."""
        a = self.anchor
        out = []
        for seg in self.segments:
            lo, hi, p, s = seg
            if lo <= a < hi and hi - lo > 1:
                if a > lo:
                    out.append((lo, a, p, s))
                out.append((a, a + 1, p, s))
                if a + 1 < hi:
                    out.append((a + 1, hi, p, s))
            else:
                out.append(seg)
        self.segments = out

    # -- input assignment --------------------------------------------------

    @staticmethod
    def _cum_pmf(row) -> list[Fraction]:
        """Cumulative input boundaries of a pmf row, normalized exactly."""
        vals = [as_fraction(p) for p in row]
        total = sum(vals, Fraction(0))
        if total <= 0:
            raise ValueError("input pmf has no mass")
        cum, acc = [], Fraction(0)
        for p in vals:
            acc += p
            cum.append(acc / total)
        return cum

    def _count_below(self, boundary, base, p, v, n: int, k_lo: int) -> int:
        """Messages of a run whose matching point falls below ``boundary``.

        The run holds ``n`` messages of mass ``p`` starting at cumulative
        mass ``base``; message ``j`` sits at ``base + (j + v) * p``.
        """
        t = (boundary - base) / p - v
        try:
            k = int(math.ceil(t))
        except (OverflowError, ValueError):
            k = n if t > 0 else 0
        return max(k_lo, min(n, k))

    def _cut_assign(self, segs, cum_rows, v):
        """Assign an input to every run via shared-randomness matching.

        ``cum_rows[s]`` are the cumulative input boundaries used for
        hypothesized state ``s``; each state's messages are matched onto
        its boundaries in index order, splitting runs where a boundary
        falls inside one.  Returns runs extended with the chosen input.
        """
        be, ns, nx = self.backend, self.spec.ns, self.spec.nx
        totals = [be.zero() for _ in range(ns)]
        for lo, hi, p, s in segs:
            totals[s] = totals[s] + (hi - lo) * p
        scaled = [
            [be.from_fraction(cum_rows[s][x]) * totals[s] for x in range(nx - 1)]
            for s in range(ns)
        ]
        v_e = [be.from_float(float(v[s])) for s in range(ns)]
        progress = [be.zero() for _ in range(ns)]
        out = []
        for lo, hi, p, s in segs:
            n = hi - lo
            k_prev = 0
            for x in range(nx):
                if x == nx - 1:
                    k = n
                else:
                    k = self._count_below(
                        scaled[s][x], progress[s], p, v_e[s], n, k_prev
                    )
                if k > k_prev:
                    out.append((lo + k_prev, lo + k, p, s, x))
                    k_prev = k
                if k_prev >= n:
                    break
            progress[s] = progress[s] + n * p
        return out

    def _stage1_assign(self, v):
        be, ns = self.backend, self.spec.ns
        bhat = [be.zero() for _ in range(ns)]
        for lo, hi, p, s in self.segments:
            bhat[s] = bhat[s] + (hi - lo) * p
        belief = tuple(float(b) for b in bhat)
        rows = self.input_policy.row(belief)
        cum_rows = [self._cum_pmf(rows[s]) for s in range(ns)]
        return self._cut_assign(self.segments, cum_rows, v)

    def _stage2_assign(self, v):
        a = self.anchor
        anchor_seg = None
        alts = []
        for seg in self.segments:
            if seg[0] == a and seg[1] == a + 1:
                anchor_seg = seg
            else:
                alts.append(seg)
        if anchor_seg is None:
            raise RuntimeError("anchor lost its run; stage bookkeeping is broken")
        if not alts:
            raise RuntimeError("no alternative mass left to confirm against")

        if self.config.variant == "two_stage_alternative":
            # the candidate's state may legitimately differ from the others;
            # what the pair tables need is one common state among the rest
            if len({seg[3] for seg in alts}) > 1:
                # resynchronize: every hypothesized state maps to the same
                # successor regardless of the output
                self.sync_steps += 1
                assign = [
                    (lo, hi, p, s, self.sync.xstar[s])
                    for lo, hi, p, s in self.segments
                ]
                return assign, True

        be, ns = self.backend, self.spec.ns
        alt_tot = [be.zero() for _ in range(ns)]
        for lo, hi, p, s in alts:
            alt_tot[s] = alt_tot[s] + (hi - lo) * p
        residual = sum(float(t) for t in alt_tot)
        if residual <= 0.0:
            alt_belief = tuple(float(t) for t in alt_tot)
        else:
            alt_belief = tuple(float(t) / residual for t in alt_tot)

        s0 = anchor_seg[3]
        x_anchor = self.confirm_policy.anchor_input(s0, alt_belief)
        cum_rows = [
            self._cum_pmf(self.confirm_policy.alt_input_pmf(s0, alt_belief, s))
            for s in range(ns)
        ]
        assign = self._cut_assign(alts, cum_rows, v)
        assign.append((a, a + 1, anchor_seg[2], s0, x_anchor))
        assign.sort(key=lambda run: run[0])
        return assign, False

    # -- channel and posterior update ---------------------------------------

    def _sample_y(self, x: int, s: int, noise: float) -> int:
        target = Fraction(noise)
        for y, c in enumerate(self._ycum[x][s]):
            if target < c:
                return y
        return self.spec.ny - 1

    def _bayes(self, assign, y: int) -> None:
        g = self.spec.g
        a = self.anchor
        z = self.backend.zero()
        new: list[tuple[int, int, object, int]] = []
        for lo, hi, p, s, x in assign:
            w = p * self._like[x][s][y]
            if w == 0:
                continue
            s2 = g[s][x][y]
            if new:
                plo, phi, pp, ps = new[-1]
                adjacent = phi == lo and ps == s2 and pp == w
                touches_anchor = a is not None and (plo <= a < phi or lo == a)
                if adjacent and not touches_anchor:
                    new[-1] = (plo, hi, pp, ps)
                    z = z + (hi - lo) * w
                    continue
            new.append((lo, hi, w, s2))
            z = z + (hi - lo) * w
        z_ok = z > 0 and (self.config.arithmetic != "double" or math.isfinite(z))
        if not new or not z_ok:
            self.collapsed = True
            return
        self.segments = [(lo, hi, p / z, s) for lo, hi, p, s in new]
        self._refresh_leader()

    # -- main entry ----------------------------------------------------------

    def step(self, v, noise: Optional[float] = None, force_y: Optional[int] = None):
        """Advance one channel use.

        ``v`` holds one shared uniform draw per channel state; ``noise`` is
        the channel's own uniform draw (ignored when ``force_y`` pins the
        output).  Returns the :class:`StepRecord` for the step, or ``None``
        if the posterior collapsed numerically (``collapsed`` is then set).
        """
        if self.collapsed:
            raise RuntimeError("episode already collapsed")
        with self.backend.context():
            sync_step = False
            if self.config.variant != "one_stage":
                self._update_stage()
            if self.stage == 1:
                assign = self._stage1_assign(v)
            else:
                assign, sync_step = self._stage2_assign(v)

            x_true = s_true = None
            for lo, hi, _p, s, x in assign:
                if lo <= self.message < hi:
                    x_true, s_true = x, s
                    break
            if x_true is None:
                # the true message was ruled out (possible only through
                # floating-point underflow); nothing sensible can be sent
                self.collapsed = True
                return None

            if force_y is not None:
                y = force_y
            else:
                y = self._sample_y(x_true, s_true, float(noise))

            stage_now = self.stage
            self._bayes(assign, y)
            if self.collapsed:
                return None
            self.t += 1
            record = StepRecord(
                t=self.t,
                stage=stage_now,
                sync=sync_step,
                x=x_true,
                y=y,
                leader=self.leader,
                leader_mass=float(self.max_mass),
                llr=self.backend.log_odds_bits(self.max_mass),
            )
            if self.trace is not None:
                self.trace.append(record)
            return record


def run_episode(
    spec: UnifilarChannelSpec,
    config: SchemeConfig,
    input_policy,
    confirm_tables: Optional[HypothesisPolicies] = None,
    *,
    seed: int = 0,
    message: Optional[int] = None,
    confirm_policy: Optional[ConfirmPolicy] = None,
) -> EpisodeResult:
    """Run one episode end to end with a seeded randomness stream.

    Draw order from the seeded generator: the message (when not given),
    then per step one shared uniform per channel state plus one channel
    noise uniform.  Identical seeds therefore reproduce identical episodes,
    and explicit ``message`` values do not disturb the per-step stream.
    """
    rng = np.random.default_rng(seed)
    if message is None:
        message = int(rng.integers(config.num_messages))
    if confirm_policy is None and confirm_tables is not None:
        confirm_policy = PairTableConfirmPolicy(confirm_tables, spec.nx)
    episode = Episode(spec, config, message, input_policy, confirm_policy)
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
        episode.step(v, noise)
        if episode.collapsed:
            truncated, reason = True, "numeric"
            break
    return EpisodeResult(
        message=message,
        decoded=episode.leader,
        error=episode.leader != message,
        steps=episode.t,
        truncated=truncated,
        truncation_reason=reason,
        stage2_entries=episode.stage2_entries,
        reverts=episode.reverts,
        sync_steps=episode.sync_steps,
        trace=tuple(episode.trace) if episode.trace is not None else None,
    )
