"""Seed-deterministic event streams and the backward flow construction.

Every (site, rule index) pair owns an independent Poisson stream of event
times on the negative half-line, generated lazily from time 0 toward the
past.  Stream seeds are derived from the master seed with a documented
64-bit mix, so two fields with the same master seed produce identical
events regardless of the order in which streams are touched, and
extending a stream never changes events already generated.

The flow evaluates the state of a site at a time by replaying events
backward-recursively: an event applies its rule's target when the rule's
context, reconstructed just before the event, matches one of its
patterns.  Callers may pin the outcome of individual events (forced
performance bits), which is how ambiguity resolution reuses this code.

Exact ties between event times have probability zero but could occur in
floating point; all orderings use the lexicographic (time, site, rule,
rank) total order so results stay reproducible.
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from typing import Callable, Iterable, NamedTuple, Union

import numpy as np

from .errors import HorizonExceeded
from .rulesys import Frozen, Periodic, RuleSet, WindowConfig

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(z: int) -> int:
    """splitmix64 finalizer: bijective 64-bit scramble."""
    z &= _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def zigzag(x: int) -> int:
    """Map signed integers to distinct nonnegative ones (0,-1,1,-2,... -> 0,1,2,3,...)."""
    return 2 * x if x >= 0 else -2 * x - 1


def stream_seed(master_seed: int, site: int, rule_index: int) -> int:
    """Per-stream seed: mix of master seed, zig-zag site and rule index."""
    s = master_seed & _M64
    s = _mix64(s ^ ((zigzag(site) * _GOLDEN) & _M64))
    s = _mix64(s ^ (((rule_index + 1) * 0xC2B2AE3D27D4EB4F) & _M64))
    return s


def derive_seed(master_seed: int, k: int) -> int:
    """Child seed for replica k; replicas get independent stream fields."""
    return _mix64((master_seed & _M64) ^ (((k + 1) * _GOLDEN) & _M64))


class _SplitMix:
    """Tiny deterministic generator: splitmix64 counter stream."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & _M64

    def uniform(self) -> float:
        """Uniform in [0, 1) with 53 random bits."""
        self.state = (self.state + _GOLDEN) & _M64
        return (_mix64(self.state) >> 11) * 2.0**-53

    def exponential(self, rate: float) -> float:
        return -math.log1p(-self.uniform()) / rate


class EventKey(NamedTuple):
    """One stream event; tuples compare in the global (t, x, i, k) order."""

    t: float
    x: int
    i: int
    k: int  # 1-based recency rank within its stream


class _Stream:
    __slots__ = ("rate", "rng", "neg_times", "frozen")

    def __init__(self, rate: float, seed: int):
        self.rate = rate
        self.rng = _SplitMix(seed)
        # Magnitudes -t in generation order, hence ascending.
        self.neg_times: list[float] = []
        self.frozen = False

    @property
    def low(self) -> float:
        """Events in (low, 0) are all generated; low itself is an event if any."""
        if self.rate <= 0.0 or self.frozen:
            return -math.inf
        return -self.neg_times[-1] if self.neg_times else 0.0

    def extend(self, horizon: float) -> None:
        """Generate until every event in [horizon, 0) is known."""
        if self.rate <= 0.0 or self.frozen:
            return
        low = -self.neg_times[-1] if self.neg_times else 0.0
        while low > horizon:
            low -= self.rng.exponential(self.rate)
            self.neg_times.append(-low)


def _fixed_stream(times: Iterable[float]) -> _Stream:
    s = _Stream(0.0, 0)
    ts = sorted(times, reverse=True)
    if any(t >= 0 for t in ts):
        raise ValueError("injected event times must be negative")
    s.neg_times = [-t for t in ts]
    s.frozen = True
    return s


InitialData = Union[str, WindowConfig, Callable[[int], str]]


class StreamField:
    """Lazily generated backward event streams for one rule set.

    One field is one realization of all the randomness a sampling run
    needs; independent replicas should use fields built from
    ``derive_seed(master_seed, replica)``.
    """

    def __init__(self, master_seed: int, rule_set: RuleSet):
        self.master_seed = master_seed
        self.rule_set = rule_set
        self._streams: dict[tuple[int, int], _Stream] = {}

    @classmethod
    def from_events(cls, rule_set: RuleSet, events: dict[tuple[int, int], list[float]]):
        """Field with hand-picked event times (for tests and worked traces).

        Streams not listed are empty; no lazy generation ever happens.
        """
        f = cls(0, rule_set)
        for (x, i), times in events.items():
            f._streams[(x, i)] = _fixed_stream(times)
        for x, i in list(f._streams):
            if not (0 <= i < len(rule_set)):
                raise ValueError(f"rule index {i} out of range")
        f._all_frozen = True
        return f

    def _stream(self, x: int, i: int) -> _Stream:
        key = (x, i)
        s = self._streams.get(key)
        if s is None:
            if getattr(self, "_all_frozen", False):
                s = _fixed_stream([])
            else:
                s = _Stream(self.rule_set.rules[i].rate, stream_seed(self.master_seed, x, i))
            self._streams[key] = s
        return s

    # -- per-stream queries -------------------------------------------------

    def extend(self, x: int, i: int, horizon: float) -> None:
        self._stream(x, i).extend(horizon)

    def events_between(self, x: int, i: int, lo: float, hi: float) -> list[EventKey]:
        """Events of stream (x, i) with lo <= t < hi, in increasing time."""
        s = self._stream(x, i)
        s.extend(lo)
        neg = s.neg_times
        a = bisect_right(neg, -hi)  # first index with t < hi
        b = bisect_right(neg, -lo)  # first index with t < lo
        out = [EventKey(-neg[j], x, i, j + 1) for j in range(a, b)]
        out.reverse()
        return out

    def count_since(self, x: int, i: int, t: float) -> int:
        """Number of events of stream (x, i) at or after time t."""
        s = self._stream(x, i)
        s.extend(t)
        return bisect_right(s.neg_times, -t)

    # -- union queries ------------------------------------------------------

    def prev_event(
        self, x: int, indices: Iterable[int], before: float, floor: float
    ) -> EventKey | None:
        """Latest event strictly before ``before`` among streams (x, i).

        Only events at or after ``floor`` count; returns None when the
        interval [floor, before) holds no event of the given streams.
        Ties are broken by the (t, x, i, k) order.
        """
        streams = [(i, self._stream(x, i)) for i in indices]
        live = [(i, s) for i, s in streams if s.rate > 0.0 or s.neg_times]
        if not live:
            return None
        total = sum(s.rate for _, s in live)
        span = 2.0 / total if total > 0 else before - floor
        target = before - span
        while True:
            target = max(target, floor)
            best = None
            for i, s in live:
                s.extend(target)
                j = bisect_right(s.neg_times, -before)
                if j < len(s.neg_times):
                    cand = EventKey(-s.neg_times[j], x, i, j + 1)
                    if best is None or cand > best:
                        best = cand
            known_floor = max(s.low for _, s in live)
            if best is not None and best.t >= known_floor:
                return best if best.t >= floor else None
            if target <= floor:
                return best if (best is not None and best.t >= floor) else None
            target = before - 2.0 * (before - target)

    def prev_event_sites(
        self, queries: list[tuple[int, Iterable[int]]], before: float, floor: float
    ) -> EventKey | None:
        """Latest event before ``before`` across several (site, indices) queries."""
        best = None
        for x, indices in queries:
            cand = self.prev_event(x, indices, before, floor)
            if cand is not None and (best is None or cand > best):
                best = cand
        return best

    def event_at(self, x: int, t: float) -> EventKey | None:
        """The event at exactly time t at site x, if any stream holds one."""
        for i in range(len(self.rule_set)):
            s = self._stream(x, i)
            s.extend(t)
            j = bisect_left(s.neg_times, -t)
            if j < len(s.neg_times) and s.neg_times[j] == -t:
                return EventKey(t, x, i, j + 1)
        return None


def stream_extend(f: StreamField, x: int, i: int, horizon: float) -> list[EventKey]:
    """All events of stream (x, i) in [horizon, 0), oldest first.

    Extending further back later never changes the returned prefix.
    """
    if horizon >= 0:
        raise ValueError("horizon must be negative")
    return f.events_between(x, i, horizon, 0.0)


def influ(e: EventKey, rs: RuleSet) -> set[tuple[float, int]]:
    """Space-time points an event reads: its time paired with each context site."""
    rule = rs.rules[e.i]
    return {(e.t, e.x + a) for a in rule.offsets}


def preced(f: StreamField, u: float, t: float, x: int) -> tuple[float, int]:
    """Latest event time at site x strictly inside (u, t), else (u, x)."""
    if not (u < t <= 0):
        raise ValueError("need u < t <= 0")
    ev = f.prev_event(x, range(len(f.rule_set)), t, u)
    if ev is None or ev.t <= u:
        return (u, x)
    return (ev.t, x)


def influence_closure(f: StreamField, u: float, t: float, x: int) -> set[tuple[float, int]]:
    """Fixed point of the influence recursion below (t, x), down to time u.

    The query point is always included.  Points that bottom out at the
    time floor u carry no event information and are omitted.
    """
    if not (u < t <= 0):
        raise ValueError("need u < t <= 0")
    rs = f.rule_set
    result: set[tuple[float, int]] = {(t, x)}
    queue: list[tuple[float, int]] = []
    seen: set[tuple[float, int]] = set()

    def push_images(ev: EventKey):
        for pt in influ(ev, rs):
            if pt not in result:
                result.add(pt)
            if pt not in seen:
                queue.append(pt)

    ev0 = f.event_at(x, t)
    if ev0 is not None:
        push_images(ev0)
    queue.append((t, x))
    while queue:
        t1, y = queue.pop()
        if (t1, y) in seen:
            continue
        seen.add((t1, y))
        pt, _ = preced(f, u, t1, y)
        if pt <= u:
            continue
        ev = f.event_at(y, pt)
        if ev is None:  # cannot happen: preced returned an event time
            continue
        push_images(ev)
    return result


PerfOverrides = dict[EventKey, int]

_MISS = object()


class FlowEval:
    """One flow evaluation: fixed initial data at time u, shared memo.

    ``initial`` may be a single fill state, a WindowConfig (read through
    its boundary), or a callable site -> state.  ``forced`` pins the
    performance bit of specific events instead of testing their context.
    """

    def __init__(
        self,
        field: StreamField,
        initial: InitialData,
        u: float,
        forced: PerfOverrides | None = None,
        node_budget: int = 1_000_000,
    ):
        if u > 0:
            raise ValueError("start time must be <= 0")
        self.field = field
        self.rules = field.rule_set.rules
        self.u = u
        self.forced = forced or {}
        self.node_budget = node_budget
        self._nodes = 0
        self._memo: dict[tuple[float, int], str] = {}
        self._bits: dict[tuple[float, int], int] = {}
        self._sites: dict[int, tuple[list[float], dict[float, tuple[int, int]]]] = {}
        if callable(initial):
            self._initial = initial
        elif isinstance(initial, WindowConfig):
            self._initial = initial.state_at
        else:
            state = str(initial)
            self._initial = lambda _x: state

    # -- site event caches ----------------------------------------------

    def _site(self, x: int):
        cached = self._sites.get(x)
        if cached is None:
            evs: list[EventKey] = []
            for i in range(len(self.rules)):
                evs.extend(self.field.events_between(x, i, self.u, 0.0))
            evs = [e for e in evs if e.t > self.u]
            evs.sort()
            times = [e.t for e in evs]
            lookup = {e.t: (e.i, e.k) for e in evs}
            cached = (times, lookup)
            self._sites[x] = cached
        return cached

    def _prev_time(self, x: int, t: float) -> float | None:
        times, _ = self._site(x)
        j = bisect_left(times, t)
        return times[j - 1] if j > 0 else None

    def _event_here(self, x: int, t: float) -> tuple[int, int] | None:
        return self._site(x)[1].get(t)

    # -- evaluation -------------------------------------------------------

    def state_at(self, t: float, x: int) -> str:
        """State at (t, x); an event at exactly t is applied."""
        if t < self.u or t > 0:
            raise ValueError("query time outside [u, 0]")
        goal = (t, x)
        if goal in self._memo:
            return self._memo[goal]
        stack = [goal]
        while stack:
            node = stack[-1]
            if node in self._memo:
                stack.pop()
                continue
            out = self._try(node)
            if isinstance(out, list):
                stack.extend(out)
                self._nodes += len(out)
                if self._nodes > self.node_budget:
                    raise HorizonExceeded(f"flow evaluation exceeded {self.node_budget} nodes")
            else:
                self._memo[node] = out
                stack.pop()
        return self._memo[goal]

    def state_before(self, t: float, x: int) -> str:
        """State just before t at x (the event at t, if any, not applied)."""
        pt = self._prev_time(x, t)
        if pt is None:
            return self._initial(x)
        return self.state_at(pt, x)

    def perf(self, e: EventKey) -> int:
        """Performance bit of an event: forced value, or context match."""
        key = (e.t, e.x)
        bit = self._bits.get(key)
        if bit is not None:
            return bit
        if e in self.forced:
            bit = 1 if self.forced[e] else 0
        else:
            rule = self.rules[e.i]
            if not rule.offsets:
                bit = 1
            else:
                pat = tuple(self.state_before(e.t, e.x + a) for a in rule.offsets)
                bit = 1 if pat in rule.patterns else 0
        self._bits[key] = bit
        return bit

    @property
    def perf_record(self) -> dict[tuple[float, int], int]:
        """Performance bits decided so far, keyed by (time, site)."""
        return dict(self._bits)

    def _fallback(self, t, x, missing):
        """State carried over from before t at x (non-performed / no event)."""
        pt = self._prev_time(x, t)
        if pt is None:
            return self._initial(x)
        v = self._memo.get((pt, x), _MISS)
        if v is _MISS:
            missing.append((pt, x))
            return None
        return v

    def _try(self, node):
        """Compute a node value, or return the dependency nodes still missing."""
        t, x = node
        if t <= self.u:
            return self._initial(x)
        ev = self._event_here(x, t)
        missing: list[tuple[float, int]] = []
        if ev is None:
            v = self._fallback(t, x, missing)
            return missing if missing else v
        i, k = ev
        bit = self._bits.get((t, x))
        if bit is None:
            key = EventKey(t, x, i, k)
            if key in self.forced:
                bit = 1 if self.forced[key] else 0
                self._bits[(t, x)] = bit
            else:
                rule = self.rules[i]
                if not rule.offsets:
                    bit = 1
                    self._bits[(t, x)] = bit
                else:
                    pat = []
                    for a in rule.offsets:
                        y = x + a
                        pt = self._prev_time(y, t)
                        if pt is None:
                            pat.append(self._initial(y))
                        else:
                            v = self._memo.get((pt, y), _MISS)
                            if v is _MISS:
                                missing.append((pt, y))
                            else:
                                pat.append(v)
                    if missing:
                        return missing
                    bit = 1 if tuple(pat) in rule.patterns else 0
                    self._bits[(t, x)] = bit
        if bit:
            return self.rules[i].target
        v = self._fallback(t, x, missing)
        return missing if missing else v


def _check_overrides(f: StreamField, forced: PerfOverrides | None):
    if not forced:
        return
    for e in forced:
        s = f._stream(e.x, e.i)
        s.extend(e.t)
        if e.k < 1 or e.k > len(s.neg_times) or s.neg_times[e.k - 1] != -e.t:
            raise ValueError(f"forced bit refers to a nonexistent event {e}")


def flow(
    f: StreamField,
    initial: InitialData,
    u: float,
    t: float,
    x: int,
    forced: PerfOverrides | None = None,
) -> str:
    """State at (t, x) of the flow started from ``initial`` at time u."""
    if not (u <= t <= 0):
        raise ValueError("need u <= t <= 0")
    _check_overrides(f, forced)
    return FlowEval(f, initial, u, forced).state_at(t, x)


def perf(
    f: StreamField,
    initial: InitialData,
    u: float,
    e: EventKey,
    forced: PerfOverrides | None = None,
) -> int:
    """Whether event e fires for the flow started from ``initial`` at u.

    The bit depends on the start data only, never on any later query.
    """
    if not (u < e.t):
        raise ValueError("start time must precede the event")
    _check_overrides(f, forced)
    return FlowEval(f, initial, u, forced).perf(e)


def simulate_forward(
    field_or_seed: StreamField | int,
    rs: RuleSet,
    cfg: WindowConfig,
    duration: float,
) -> WindowConfig:
    """Run the window forward for ``duration`` time units, event by event.

    Events are applied in increasing (t, x, i, k) order; context reads
    resolve through the window's boundary, and sites outside the window
    never change.  Deterministic given the field / seed.
    """
    if duration < 0:
        raise ValueError("duration must be nonnegative")
    field = field_or_seed if isinstance(field_or_seed, StreamField) else StreamField(field_or_seed, rs)
    out = cfg.copy()
    if duration == 0:
        return out
    events: list[EventKey] = []
    for x in range(cfg.low, cfg.high + 1):
        for i in range(len(rs)):
            events.extend(field.events_between(x, i, -duration, 0.0))
    events.sort()
    for e in events:
        rule = rs.rules[e.i]
        if rule.offsets:
            read = tuple(out.state_at(e.x + a) for a in rule.offsets)
            if read not in rule.patterns:
                continue
        out.states[e.x] = rule.target
    return out


# -- batched forward equilibrium sampling (vectorized over replicates) -----


def equilibrium_forward_batch(
    rs: RuleSet,
    width: int,
    duration: float,
    n: int,
    seed: int,
    boundary=None,
    init_state: str | None = None,
) -> np.ndarray:
    """Final window states of n independent forward runs, as an (n, width)
    array of alphabet indices.

    Uses a uniformized tick chain: proposals arrive at the total window
    rate, pick a uniform site and a rate-proportional rule, and apply
    when the rule's context matches.  Restricted to rules whose offsets
    lie in {-1, 0, 1} so compatibility reduces to a (left, self, right)
    lookup table.  Randomness comes from numpy's generator seeded with
    ``seed``; this path is independent of the event-stream seeds.
    """
    alpha = rs.alphabet
    k = alpha.size
    if any(any(a not in (-1, 0, 1) for a in r.offsets) for r in rs.rules):
        raise ValueError("batch sampler supports offsets within {-1,0,1} only")
    if boundary is None:
        boundary = Frozen(alpha.states[0], alpha.states[0])
    periodic = isinstance(boundary, Periodic)
    init_idx = alpha.index(init_state) if init_state else 0

    live = [(i, r) for i, r in enumerate(rs.rules) if r.rate > 0.0]
    if not live:
        return np.full((n, width), init_idx, dtype=np.uint8)
    rates = np.array([r.rate for _, r in live])
    site_rate = float(rates.sum())
    targets = np.array([alpha.index(r.target) for _, r in live], dtype=np.uint8)

    # Compatibility LUT over (left, self, right) codes l*k*k + c*k + r.
    lut = np.zeros((len(live), k * k * k), dtype=bool)
    for row, (_, rule) in enumerate(live):
        for li in range(k):
            for ci in range(k):
                for ri in range(k):
                    if rule.offsets:
                        ctx = {-1: alpha.states[li], 0: alpha.states[ci], 1: alpha.states[ri]}
                        pat = tuple(ctx[a] for a in rule.offsets)
                        ok = pat in rule.patterns
                    else:
                        ok = True
                    lut[row, (li * k + ci) * k + ri] = ok

    rng = np.random.default_rng(seed)
    n_ticks = rng.poisson(width * site_rate * duration, size=n)
    total_ticks = int(n_ticks.max()) if n > 0 else 0
    states = np.full((n, width), init_idx, dtype=np.uint8)
    if periodic:
        left_bc = right_bc = 0  # unused
    else:
        left_bc = alpha.index(boundary.left)
        right_bc = alpha.index(boundary.right)

    rows = np.arange(n)
    cum = np.cumsum(rates) / site_rate
    chunk = 2048
    for start in range(0, total_ticks, chunk):
        stop = min(start + chunk, total_ticks)
        m = stop - start
        sites = rng.integers(0, width, size=(m, n))
        rule_rows = np.searchsorted(cum, rng.random((m, n)), side="right")
        rule_rows = np.minimum(rule_rows, len(live) - 1)
        for j in range(m):
            act = (start + j) < n_ticks
            if not act.any():
                continue
            x = sites[j]
            rr = rule_rows[j]
            if periodic:
                l = states[rows, (x - 1) % width]
                r = states[rows, (x + 1) % width]
            else:
                l = np.where(x > 0, states[rows, np.maximum(x - 1, 0)], left_bc)
                r = np.where(x < width - 1, states[rows, np.minimum(x + 1, width - 1)], right_bc)
            c = states[rows, x]
            code = (l.astype(np.int32) * k + c) * k + r
            ok = lut[rr, code] & act
            if ok.any():
                states[rows[ok], x[ok]] = targets[rr[ok]]
    return states
