"""Finite-state channels with deterministic state evolution.

A channel here is a finite family of output laws Q(y | x, s) indexed by the
input x and a channel state s, together with a deterministic update rule
g(s, x, y) giving the next state.  The transmitter always knows the current
state (it can replay g from the agreed initial state s1); the receiver in
general does not.

Conventions used throughout the package:

  * kernel entries are stored as exact `fractions.Fraction` values.  Decimal
    parameters such as 0.9 are interpreted as the decimal they print as
    (9/10), not as the nearest binary float, so zero entries are exact and
    support/divergence questions have crisp answers.
  * all information quantities are in bits (log base 2).  `math.inf` marks
    an infinite divergence or ratio bound.
  * indices are 0-based everywhere: inputs 0..nx-1, outputs 0..ny-1,
    states 0..ns-1.

The four built-in binary families (trapdoor, chemical, symmetric,
asymmetric) all share the state update g(s, x, y) = s XOR x XOR y and differ
only in the kernel table.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Literal, Optional, Sequence, Union

ParamLike = Union[int, float, str, Fraction]

#: families accepted by :func:`builtin`, with their parameter counts
BUILTIN_FAMILIES = {"trapdoor": 0, "chemical": 1, "symmetric": 2, "asymmetric": 4}

#: absolute slack allowed when checking that kernel rows sum to one
ROW_SUM_TOL = Fraction(1, 10**12)


def as_fraction(value: ParamLike) -> Fraction:
    """Convert a parameter to an exact rational.

    Floats go through their shortest decimal repr, so ``as_fraction(0.9)``
    is exactly 9/10 rather than the binary float nearest 0.9.  Strings may
    be decimals ("0.9") or ratios ("9/10").
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        value = float(value)  # plain repr also for float subclasses (np.float64)
        if not math.isfinite(value):
            raise ValueError(f"non-finite parameter {value!r}")
        return Fraction(repr(value))
    if isinstance(value, str):
        return Fraction(value)
    raise TypeError(f"cannot interpret {value!r} as a probability")


@dataclass(frozen=True)
class UnifilarChannelSpec:
    name: str  # human-readable label, e.g. "symmetric(0.5,0.1)"
    nx: int  # number of channel inputs
    ny: int  # number of channel outputs
    ns: int  # number of channel states
    q: tuple  # q[x][s][y] -> Fraction, output law per (input, state)
    g: tuple  # g[s][x][y] -> int, deterministic next state
    s1: int = 0  # initial state, known to both terminals

    def __post_init__(self):
        object.__setattr__(self, "q", _freeze_q(self.q))
        object.__setattr__(self, "g", _freeze_g(self.g))

    @property
    def strictly_positive(self) -> bool:
        """True when every kernel entry is nonzero."""
        return all(p > 0 for x_row in self.q for s_row in x_row for p in s_row)

    def row(self, x: int, s: int) -> tuple:
        """Output pmf for input x in state s, as a tuple of Fractions."""
        return self.q[x][s]

    def next_state(self, s: int, x: int, y: int) -> int:
        return self.g[s][x][y]


def _freeze_q(q) -> tuple:
    return tuple(
        tuple(tuple(as_fraction(p) for p in s_row) for s_row in x_row) for x_row in q
    )


def _freeze_g(g) -> tuple:
    return tuple(tuple(tuple(int(v) for v in x_row) for x_row in s_row) for s_row in g)


def _xor_g(ns: int = 2, nx: int = 2, ny: int = 2) -> tuple:
    return tuple(
        tuple(tuple((s ^ x ^ y) % ns for y in range(ny)) for x in range(nx))
        for s in range(ns)
    )


def builtin(family: str, params: Sequence[ParamLike] = ()) -> UnifilarChannelSpec:
    """Construct one of the built-in binary channels.

    Args:
        family: one of "trapdoor", "chemical", "symmetric", "asymmetric".
        params: family parameters, each a probability in [0, 1].
            chemical(p0); symmetric(p0, q0); asymmetric(p0, q0, p1, q1).

    Returns:
        A validated UnifilarChannelSpec with s1 = 0.

    Raises:
        ValueError: unknown family, wrong parameter count, or a parameter
            outside [0, 1].
    """
    if family not in BUILTIN_FAMILIES:
        raise ValueError(f"unknown channel family {family!r}")
    want = BUILTIN_FAMILIES[family]
    ps = [as_fraction(p) for p in params]
    if len(ps) != want:
        raise ValueError(f"{family} takes {want} parameter(s), got {len(ps)}")
    for p in ps:
        if not 0 <= p <= 1:
            raise ValueError(f"parameter {p} outside [0, 1]")

    one, half = Fraction(1), Fraction(1, 2)
    if family == "trapdoor":
        q000, q010, q001, q011 = one, half, half, Fraction(0)
    elif family == "chemical":
        (p0,) = ps
        q000, q010, q001, q011 = one, p0, 1 - p0, Fraction(0)
    elif family == "symmetric":
        p0, q0 = ps
        q000, q010, q001, q011 = 1 - q0, p0, 1 - p0, q0
    else:  # asymmetric
        p0, q0, p1, q1 = ps
        q000, q010, q001, q011 = 1 - q0, p0, 1 - p1, q1

    # q[x][s] = (Q(0|x,s), Q(1|x,s))
    q = (
        ((q000, 1 - q000), (q001, 1 - q001)),
        ((q010, 1 - q010), (q011, 1 - q011)),
    )
    name = family if not ps else f"{family}({','.join(_fmt_param(p) for p in ps)})"
    spec = UnifilarChannelSpec(name=name, nx=2, ny=2, ns=2, q=q, g=_xor_g(), s1=0)
    report = validate(spec)
    if not report.ok:
        raise ValueError(f"invalid built-in channel: {report.violations}")
    return spec


def _fmt_param(p: Fraction) -> str:
    f = float(p)
    return repr(f) if Fraction(repr(f)) == p else f"{p.numerator}/{p.denominator}"


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    strictly_positive: bool
    violations: tuple


def validate(spec: UnifilarChannelSpec) -> ValidationReport:
    """Check a channel spec for structural problems.

    Returns a report rather than raising, so callers can surface every
    violation at once.  Checked: alphabet sizes positive, kernel shape,
    rows nonnegative and summing to 1 within 1e-12, g entries valid states,
    s1 in range.
    """
    v = []
    if spec.nx < 1 or spec.ny < 1 or spec.ns < 1:
        v.append(f"alphabet sizes must be positive, got nx={spec.nx} ny={spec.ny} ns={spec.ns}")
        return ValidationReport(False, False, tuple(v))
    if len(spec.q) != spec.nx or any(len(xr) != spec.ns for xr in spec.q):
        v.append("kernel q must be indexed [x][s][y] with shape (nx, ns, ny)")
    else:
        for x in range(spec.nx):
            for s in range(spec.ns):
                row = spec.q[x][s]
                if len(row) != spec.ny:
                    v.append(f"q[{x}][{s}] has {len(row)} entries, expected ny={spec.ny}")
                    continue
                if any(p < 0 for p in row):
                    v.append(f"q[{x}][{s}] has a negative entry")
                total = sum(row)
                if abs(total - 1) > ROW_SUM_TOL:
                    v.append(f"q[{x}][{s}] sums to {float(total)!r}, not 1")
    if len(spec.g) != spec.ns or any(
        len(sr) != spec.nx or any(len(xr) != spec.ny for xr in sr) for sr in spec.g
    ):
        v.append("state update g must be indexed [s][x][y] with shape (ns, nx, ny)")
    else:
        for s in range(spec.ns):
            for x in range(spec.nx):
                for y in range(spec.ny):
                    nxt = spec.g[s][x][y]
                    if not 0 <= nxt < spec.ns:
                        v.append(f"g[{s}][{x}][{y}]={nxt} is not a state")
    if not 0 <= spec.s1 < spec.ns:
        v.append(f"initial state s1={spec.s1} is not a state")
    ok = not v
    return ValidationReport(ok, ok and spec.strictly_positive, tuple(v))


Direction = Literal["forward", "reverse"]


def kl_reward(
    spec: UnifilarChannelSpec,
    s0: int,
    x0: int,
    s1: int,
    x1: int,
    direction: Direction = "forward",
) -> float:
    """Divergence between the two hypothesised output laws, in bits.

    forward: D( Q(.|x0,s0) || Q(.|x1,s1) ) -- the expected one-step log
    likelihood ratio when the (x0, s0) branch drives the channel.
    reverse: the same with measure and ratio swapped, i.e.
    D( Q(.|x1,s1) || Q(.|x0,s0) ).

    Returns math.inf when the driving law puts mass where the other has
    none.  Terms with zero mass contribute nothing (0 log 0 = 0).
    """
    if direction == "reverse":
        s0, x0, s1, x1 = s1, x1, s0, x0
    elif direction != "forward":
        raise ValueError(f"direction must be 'forward' or 'reverse', got {direction!r}")
    p_row = spec.q[x0][s0]
    r_row = spec.q[x1][s1]
    total = 0.0
    for p, r in zip(p_row, r_row):
        if p == 0:
            continue
        if r == 0:
            return math.inf
        total += float(p) * math.log2(p / r)
    return total


def c2_bound(spec: UnifilarChannelSpec) -> float:
    """Worst-case one-step log likelihood ratio bound, in bits.

    The largest value of log2( Q(y|x,s) / Q(y|x',s') ) over all outputs and
    pairs of (input, state).  Any zero kernel entry makes this math.inf.
    Every single-step move of the decoder's posterior log odds for the true
    message is bounded by this quantity when it is finite.
    """
    best = Fraction(1)
    for y in range(spec.ny):
        col = [spec.q[x][s][y] for x in range(spec.nx) for s in range(spec.ns)]
        if any(p == 0 for p in col):
            return math.inf
        ratio = max(col) / min(col)
        if ratio > best:
            best = ratio
    return math.log2(best)


@dataclass(frozen=True)
class SyncInput:
    xstar: tuple  # xstar[s] -> input to send in state s
    gprime: tuple  # gprime[y] -> common next state, independent of s


def sync_input(spec: UnifilarChannelSpec) -> Optional[SyncInput]:
    """Find a state-dependent input that makes the next state state-blind.

    Searches for a choice X*(s) such that g(s, X*(s), y) is the same
    function of y for every s.  One step with X* then drives every
    hypothesised state to the common value g'(y).  Returns None when no
    such choice exists.  Ambiguities resolve toward the smallest input
    indices (compared state by state).
    """
    # signature of (s, x): the map y -> next state as a tuple
    sigs = [
        {tuple(spec.g[s][x][y] for y in range(spec.ny)) for x in range(spec.nx)}
        for s in range(spec.ns)
    ]
    common = set.intersection(*sigs) if sigs else set()
    if not common:
        return None
    best = None
    for sig in common:
        xstar = tuple(
            min(
                x
                for x in range(spec.nx)
                if tuple(spec.g[s][x][y] for y in range(spec.ny)) == sig
            )
            for s in range(spec.ns)
        )
        if best is None or xstar < best[0]:
            best = (xstar, sig)
    return SyncInput(xstar=best[0], gprime=best[1])


# ---------------------------------------------------------------------------
# JSON ingestion / emission


def channel_to_json(spec: UnifilarChannelSpec) -> dict:
    """Plain-dict form of a spec (probabilities as shortest-repr floats)."""
    return {
        "name": spec.name,
        "nx": spec.nx,
        "ny": spec.ny,
        "ns": spec.ns,
        "q": [[[float(p) for p in s_row] for s_row in x_row] for x_row in spec.q],
        "g": [[list(x_row) for x_row in s_row] for s_row in spec.g],
        "s1": spec.s1,
    }


def channel_from_json(obj: dict) -> UnifilarChannelSpec:
    """Build a spec from a parsed JSON document.

    Two forms are accepted: {"family": ..., "params": [...]} for built-ins,
    or the explicit {"name", "nx", "ny", "ns", "q", "g", "s1"} table form.
    Probabilities may be numbers or strings ("0.9", "9/10").

    Raises ValueError when the document is malformed or fails validation.
    """
    if "family" in obj:
        return builtin(obj["family"], obj.get("params", ()))
    try:
        spec = UnifilarChannelSpec(
            name=str(obj.get("name", "custom")),
            nx=int(obj["nx"]),
            ny=int(obj["ny"]),
            ns=int(obj["ns"]),
            q=obj["q"],
            g=obj["g"],
            s1=int(obj.get("s1", 0)),
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise ValueError(f"malformed channel document: {exc}") from exc
    report = validate(spec)
    if not report.ok:
        raise ValueError("invalid channel: " + "; ".join(report.violations))
    return spec


def load_channel(path: str) -> UnifilarChannelSpec:
    """Read a channel spec from a JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        return channel_from_json(json.load(fh))
