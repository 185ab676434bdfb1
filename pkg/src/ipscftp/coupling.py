"""Coupling windows, ambiguity closure and resolution, perfect sampling.

A coupling window anchored at a space-time point is found by scanning
backward for a triple of lock events: one event at the anchor site that
overwrites it unconditionally (the center), preceded by one lock event on
each neighbor site, with no blocking events between a lock and the center
on its side.  Events of the ambiguous (perturbative) rules inside the
window may or may not fire depending on the unknown past; the set of
those events is the window's ambiguity set, and the recursive closure of
their influence points drives both termination analysis and the sampler.

Resolution pins the fire/not-fire bit of every ambiguity event in
increasing time order, each bit computed from flow states that are
provably independent of the fill configuration once all earlier bits are
pinned.  ``assertion_mode`` re-derives every such state from a second
fill and verifies the independence instead of assuming it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .errors import (
    ClosureBudgetExceeded,
    CouplingUnreachable,
    DegenerateRates,
    DualStartMismatch,
    NonDegenerateViolated,
    SubcriticalityGateFailed,
    WidthAssertionFailed,
)
from .flowsim import EventKey, FlowEval, StreamField, derive_seed
from .rulesys import PURINES, PYRIMIDINES, RuleSet, base_class
from .ypr import YpRModel, compile_rules, compiled_groups

DEFAULT_CLOSURE_BUDGET = 10_000


@dataclass(frozen=True)
class CouplingSpec:
    """Rule-index sets defining one family of coupling windows.

    ``center`` events overwrite the anchor site regardless of context;
    ``left_lock`` / ``right_lock`` events pin the relevant fused class of
    the neighbor sites; ``left_block`` / ``right_block`` events invalidate
    a candidate window when they fall between a lock and the center; and
    ``ambiguous`` rules contribute the window's unresolved bits.
    """

    center: frozenset[int]
    left_lock: frozenset[int]
    right_lock: frozenset[int]
    left_block: frozenset[int]
    right_block: frozenset[int]
    ambiguous: frozenset[int]
    width: tuple[int, int] | None = (2, 2)

    def __post_init__(self):
        bad = self.intersection_report()
        nonempty = {name: sorted(v) for name, v in bad.items() if v}
        if nonempty:
            raise ValueError(f"coupling spec sets must be disjoint: {nonempty}")
        if not (self.center and self.left_lock and self.right_lock):
            raise ValueError("center and lock sets must be nonempty")

    def intersection_report(self) -> dict[str, frozenset[int]]:
        """The six intersections that must be empty for a valid spec."""
        return {
            "right_lock&right_block": self.right_lock & self.right_block,
            "left_lock&left_block": self.left_lock & self.left_block,
            "center&ambiguous": self.center & self.ambiguous,
            "right_lock&ambiguous": self.right_lock & self.ambiguous,
            "left_lock&ambiguous": self.left_lock & self.ambiguous,
            "both_blocks&ambiguous": self.right_block & self.left_block & self.ambiguous,
        }


def _require_positive(rs: RuleSet, name_to_set: dict[str, frozenset[int]]):
    for name, idx in name_to_set.items():
        if rs.total_rate(idx) <= 0.0:
            raise NonDegenerateViolated(f"total rate of {name} set is zero")


def make_sensitive_spec(model: YpRModel) -> CouplingSpec:
    """Coupling spec whose windows exclude neighbor-flip events on the side
    sites, so the window works for any neighbor-flip rates.

    Ambiguous events: all perturbative rules.
    """
    rs = compile_rules(model)
    g = compiled_groups(model)
    uncond = frozenset(g.uncond.values())
    spec = CouplingSpec(
        center=uncond,
        left_lock=uncond | frozenset(g.cross[y] for y in PURINES),
        right_lock=uncond | frozenset(g.cross[y] for y in PYRIMIDINES),
        left_block=frozenset(g.right_trigger.values()),
        right_block=frozenset(g.left_trigger.values()),
        ambiguous=frozenset(g.pert),
    )
    _require_positive(
        rs,
        {"center": spec.center, "left_lock": spec.left_lock, "right_lock": spec.right_lock},
    )
    return spec


def make_insensitive_spec(model: YpRModel) -> CouplingSpec:
    """Coupling spec whose windows force the left neighbor to stay purine
    and the right to stay pyrimidine, blocking any event that could break
    that (including perturbative ones, split by target class).

    Ambiguous events: all perturbative rules.
    """
    rs = compile_rules(model)
    g = compiled_groups(model)

    def by_target(indices: Iterable[int], cls: str) -> frozenset[int]:
        return frozenset(i for i in indices if base_class(rs.rules[i].target) == cls)

    uncond_cross = lambda ys: frozenset(g.uncond[y] for y in ys) | frozenset(
        g.cross[y] for y in ys
    )
    pert = frozenset(g.pert)
    spec = CouplingSpec(
        center=frozenset(g.uncond.values()),
        left_lock=uncond_cross(PURINES),
        right_lock=uncond_cross(PYRIMIDINES),
        left_block=uncond_cross(PYRIMIDINES) | by_target(pert, "Y"),
        right_block=uncond_cross(PURINES) | by_target(pert, "R"),
        ambiguous=pert,
    )
    _require_positive(
        rs,
        {"center": spec.center, "left_lock": spec.left_lock, "right_lock": spec.right_lock},
    )
    return spec


@dataclass(frozen=True)
class CouplingWindow:
    """One coupling event: the lock triple, coupling time and ambiguity set."""

    anchor_t: float
    anchor_site: int
    t_minus: float  # left lock event time
    t_zero: float   # center event time
    t_plus: float   # right lock event time
    h_events: tuple[EventKey, ...]  # ambiguous events in [t_couple, anchor_t)

    @property
    def t_couple(self) -> float:
        return min(self.t_minus, self.t_plus)


class ScanStage(NamedTuple):
    """One stage of the backward scan: candidate center event, nearest side
    event below it, opposite-side candidate, and whether they close a window."""

    center: EventKey
    side: EventKey
    opposite: EventKey
    closed: bool


def iter_scan_stages(
    f: StreamField,
    spec: CouplingSpec,
    anchor: tuple[float, int] = (0.0, 0),
    lookback_limit: float | None = None,
):
    """Yield backward-scan stages below the anchor until exhaustion.

    The scan ends (StopIteration) after yielding a stage with beta=True;
    it raises CouplingUnreachable when the lookback floor is hit first.
    """
    t_anchor, y = anchor
    rs = f.rule_set
    r0 = rs.total_rate(spec.center)
    if r0 <= 0 or rs.total_rate(spec.left_lock) <= 0 or rs.total_rate(spec.right_lock) <= 0:
        raise CouplingUnreachable("a lock set has zero total rate")
    if lookback_limit is None:
        lookback_limit = 1e3 / r0
    floor = t_anchor - lookback_limit
    left_union = spec.left_lock | spec.left_block
    right_union = spec.right_lock | spec.right_block
    stage_end = t_anchor
    while True:
        center = f.prev_event(y, spec.center, stage_end, floor)
        if center is None:
            raise CouplingUnreachable(f"no center event above lookback floor {floor:g}")
        left = f.prev_event(y - 1, left_union, center.t, floor)
        right = f.prev_event(y + 1, right_union, center.t, floor)
        side = max(e for e in (left, right) if e is not None) if (left or right) else None
        if side is None:
            raise CouplingUnreachable(f"no side event above lookback floor {floor:g}")
        if side.x == y + 1 and side.i in spec.right_lock:
            opposite = left
            closed = opposite is not None and opposite.i in spec.left_lock
        elif side.x == y - 1 and side.i in spec.left_lock:
            opposite = right
            closed = opposite is not None and opposite.i in spec.right_lock
        else:
            opposite, closed = side, False
        if opposite is None:
            raise CouplingUnreachable(f"no opposite-side event above lookback floor {floor:g}")
        yield ScanStage(center, side, opposite, closed)
        if closed:
            return
        stage_end = opposite.t


def find_coupling_window(
    f: StreamField,
    spec: CouplingSpec,
    anchor: tuple[float, int] = (0.0, 0),
    lookback_limit: float | None = None,
) -> CouplingWindow:
    """Most recent coupling window strictly before the anchor.

    Implements the backward scan over lock/block events; the returned
    window maximizes min(t_minus, t_plus) among all valid lock triples.
    """
    t_anchor, y = anchor
    last = None
    for stage in iter_scan_stages(f, spec, anchor, lookback_limit):
        last = stage
    assert last is not None and last.closed
    if last.side.x == y + 1:
        t_plus, t_minus = last.side.t, last.opposite.t
    else:
        t_minus, t_plus = last.side.t, last.opposite.t
    t_couple = min(t_minus, t_plus)
    h: list[EventKey] = []
    for z in (y - 1, y, y + 1):
        for i in spec.ambiguous:
            h.extend(f.events_between(z, i, t_couple, t_anchor))
    h.sort()
    window = CouplingWindow(t_anchor, y, t_minus, last.center.t, t_plus, tuple(h))
    _check_window(f.rule_set, spec, window)
    return window


def _check_window(rs: RuleSet, spec: CouplingSpec, w: CouplingWindow):
    for e in w.h_events:
        if not (w.t_couple <= e.t < w.anchor_t):
            raise WidthAssertionFailed(f"ambiguous event {e} outside [T, anchor)")
    if spec.width is not None:
        a_minus, a_plus = spec.width
        lo, hi = w.anchor_site - a_minus, w.anchor_site + a_plus
        for e in w.h_events:
            if not (w.anchor_site - 1 <= e.x <= w.anchor_site + 1):
                raise WidthAssertionFailed(f"ambiguous event {e} off the window sites")
            for a in rs.rules[e.i].offsets:
                if not (lo <= e.x + a <= hi):
                    raise WidthAssertionFailed(
                        f"influence of {e} reaches site {e.x + a} outside [{lo}, {hi}]"
                    )


Point = tuple[float, int]


@dataclass
class AmbiguityGraph:
    """Closure of ambiguity points below one anchor, with layer structure."""

    anchor_t: float
    anchor_site: int
    windows: dict[Point, CouplingWindow]
    layers: list[list[Point]]          # nonempty layers; a point may recur
    min_layer: dict[Point, int]
    n_star: int                        # first empty layer index
    t_star: float                      # min coupling time over all windows

    @property
    def points(self) -> set[Point]:
        return set(self.windows)


def ambiguity_closure(
    f: StreamField,
    spec: CouplingSpec,
    x: int,
    anchor_t: float = 0.0,
    budget: int = DEFAULT_CLOSURE_BUDGET,
    lookback_limit: float | None = None,
) -> AmbiguityGraph:
    """Iterate coupling windows from (anchor_t, x) until no new ambiguity.

    Layer n+1 holds every influence point of layer-n windows' ambiguous
    events; the closure is reached when a layer comes out empty.  Raises
    ClosureBudgetExceeded beyond ``budget`` distinct points.
    """
    rs = f.rule_set
    root: Point = (anchor_t, x)
    windows: dict[Point, CouplingWindow] = {}
    min_layer: dict[Point, int] = {root: 0}
    layers: list[list[Point]] = [[root]]
    current: list[Point] = [root]
    while current:
        nxt: set[Point] = set()
        for p in current:
            w = windows.get(p)
            if w is None:
                w = find_coupling_window(f, spec, p, lookback_limit)
                windows[p] = w
                if len(windows) > budget:
                    raise ClosureBudgetExceeded(
                        f"ambiguity closure passed {budget} points; "
                        "the dynamics may be supercritical"
                    )
            for e in w.h_events:
                for a in rs.rules[e.i].offsets:
                    nxt.add((e.t, e.x + a))
        if not nxt:
            break
        depth = len(layers)
        for q in sorted(nxt):
            min_layer.setdefault(q, depth)
        layers.append(sorted(nxt))
        current = layers[-1]
    t_star = min(w.t_couple for w in windows.values())
    return AmbiguityGraph(anchor_t, x, windows, layers, min_layer, len(layers), t_star)


def resolve(
    f: StreamField,
    spec: CouplingSpec,
    g: AmbiguityGraph,
    assertion_mode: bool = False,
) -> str:
    """Resolve every ambiguity bit in time order and return the anchor state.

    Each bit is the context match of its event, where context states are
    flow values started just below the relevant window's coupling time
    with all earlier bits pinned; the final answer is the state just
    before the anchor under the root window's pinned bits.  With
    ``assertion_mode`` every such state is recomputed from a second fill
    configuration and any disagreement raises DualStartMismatch; the
    fused neighbor classes at each window's center event are checked the
    same way.
    """
    rs = f.rule_set
    alpha = rs.alphabet
    fill, fill_alt = alpha.states[0], alpha.states[1]
    bits: dict[EventKey, int] = {}
    state_cache: dict[Point, str] = {}

    def window_start(w: CouplingWindow) -> float:
        return math.nextafter(w.t_couple, -math.inf)

    def coupled_state_before(p: Point) -> str:
        v = state_cache.get(p)
        if v is not None:
            return v
        w = g.windows[p]
        forced = {e: bits[e] for e in w.h_events}
        u = window_start(w)
        v = FlowEval(f, fill, u, forced).state_before(p[0], p[1])
        if assertion_mode:
            v2 = FlowEval(f, fill_alt, u, forced).state_before(p[0], p[1])
            if v2 != v:
                raise DualStartMismatch(
                    f"state before {p} differs between fills: {v} vs {v2}"
                )
        state_cache[p] = v
        return v

    for e in sorted({e for w in g.windows.values() for e in w.h_events}):
        rule = rs.rules[e.i]
        if not rule.offsets:
            bits[e] = 1
            continue
        pattern = tuple(coupled_state_before((e.t, e.x + a)) for a in rule.offsets)
        bits[e] = 1 if pattern in rule.patterns else 0

    if assertion_mode:
        from .ypr import fuse_triple

        for p, w in g.windows.items():
            forced = {e: bits[e] for e in w.h_events}
            u = window_start(w)
            tri = []
            for start in (fill, fill_alt):
                ev = FlowEval(f, start, u, forced)
                y = w.anchor_site
                tri.append(
                    fuse_triple(
                        (
                            ev.state_at(w.t_zero, y - 1),
                            ev.state_at(w.t_zero, y),
                            ev.state_at(w.t_zero, y + 1),
                        )
                    )
                )
            if tri[0] != tri[1]:
                raise DualStartMismatch(
                    f"fused triple at center of window {p} differs: {tri[0]} vs {tri[1]}"
                )

    return coupled_state_before((g.anchor_t, g.anchor_site))


@dataclass
class SampleOptions:
    force: bool = False
    assertion_mode: bool = False
    closure_budget: int = DEFAULT_CLOSURE_BUDGET
    lookback_limit: float | None = None
    gate_samples: int = 2000


def subcriticality_gate(rs: RuleSet, spec: CouplingSpec, seed: int = 0, n: int = 2000) -> float:
    """Growth parameter used to gate sampling: the closed form when the
    rates allow it, otherwise a Monte Carlo estimate plus a 3-SE margin."""
    from .analytic import growth_closed_form

    try:
        return growth_closed_form(rs, spec)
    except DegenerateRates:
        m_hat, se = estimate_growth(rs, spec, n, seed)
        return m_hat + 3.0 * se


def perfect_sample(
    rs: RuleSet,
    spec: CouplingSpec,
    sites: Iterable[int],
    master_seed: int,
    opts: SampleOptions | None = None,
) -> dict[int, str]:
    """One exact draw of the stationary states on ``sites``.

    Deterministic in (master_seed, sites, spec).  Refuses to run when the
    growth parameter is not below 1, unless ``opts.force`` is set.
    """
    opts = opts or SampleOptions()
    if not opts.force:
        m = subcriticality_gate(rs, spec, seed=master_seed, n=opts.gate_samples)
        if not (m < 1.0):
            raise SubcriticalityGateFailed(
                f"growth parameter {m:g} is not < 1; pass force to override", growth=m
            )
    f = StreamField(master_seed, rs)
    out: dict[int, str] = {}
    for x in sorted(set(sites)):
        g = ambiguity_closure(
            f, spec, x, budget=opts.closure_budget, lookback_limit=opts.lookback_limit
        )
        out[x] = resolve(f, spec, g, assertion_mode=opts.assertion_mode)
    return out


def estimate_growth(
    rs: RuleSet, spec: CouplingSpec, n_samples: int, seed: int
) -> tuple[float, float]:
    """Monte Carlo growth parameter: mean number of influence points spawned
    by one window's ambiguous events, with its standard error."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    total = 0.0
    total_sq = 0.0
    for rep in range(n_samples):
        f = StreamField(derive_seed(seed, rep), rs)
        w = find_coupling_window(f, spec)
        v = float(sum(len(rs.rules[e.i].offsets) for e in w.h_events))
        total += v
        total_sq += v * v
    mean = total / n_samples
    var = max(total_sq / n_samples - mean * mean, 0.0)
    se = math.sqrt(var / n_samples)
    return mean, se


class LaplaceEstimate(NamedTuple):
    lam: float
    coupling_transform: float      # mean of exp(-lam * T)
    coupling_se: float
    influence_transform: float     # mean of sum over influence points of exp(-lam * t)
    influence_se: float


def estimate_laplace_grid(
    rs: RuleSet, spec: CouplingSpec, lams: Iterable[float], n_samples: int, seed: int
) -> list[LaplaceEstimate]:
    """Estimate both window transforms on a grid of lambda values, reusing
    one set of windows for the whole grid."""
    lams = list(lams)
    if any(l < 0 for l in lams):
        raise ValueError("lambda must be nonnegative")
    sums = [[0.0, 0.0, 0.0, 0.0] for _ in lams]
    for rep in range(n_samples):
        f = StreamField(derive_seed(seed, rep), rs)
        w = find_coupling_window(f, spec)
        infl = [(e.t, len(rs.rules[e.i].offsets)) for e in w.h_events]
        for j, lam in enumerate(lams):
            t_term = math.exp(-lam * w.t_couple)
            h_term = float(sum(na * math.exp(-lam * t) for t, na in infl))
            acc = sums[j]
            acc[0] += t_term
            acc[1] += t_term * t_term
            acc[2] += h_term
            acc[3] += h_term * h_term
    out = []
    for j, lam in enumerate(lams):
        s, s2, h, h2 = sums[j]
        mt, mh = s / n_samples, h / n_samples
        vt = max(s2 / n_samples - mt * mt, 0.0)
        vh = max(h2 / n_samples - mh * mh, 0.0)
        out.append(
            LaplaceEstimate(
                lam, mt, math.sqrt(vt / n_samples), mh, math.sqrt(vh / n_samples)
            )
        )
    return out


def estimate_laplace(
    rs: RuleSet, spec: CouplingSpec, lam: float, n_samples: int, seed: int
) -> tuple[float, float]:
    """Sample means of exp(-lam*T) and of the influence-point transform."""
    est = estimate_laplace_grid(rs, spec, [lam], n_samples, seed)[0]
    return est.coupling_transform, est.influence_transform


def exhaustive_coupling_time(
    f: StreamField,
    spec: CouplingSpec,
    anchor: tuple[float, int],
    horizon: float,
) -> float | None:
    """Best coupling time by brute-force triple enumeration over events at
    or after ``horizon``; independent check of the backward scan."""
    t_anchor, y = anchor

    def union_events(x, indices):
        out = []
        for i in indices:
            out.extend(f.events_between(x, i, horizon, t_anchor))
        return sorted(e.t for e in out)

    centers = union_events(y, spec.center)
    left_locks = union_events(y - 1, spec.left_lock)
    right_locks = union_events(y + 1, spec.right_lock)
    left_blocks = union_events(y - 1, spec.left_block)
    right_blocks = union_events(y + 1, spec.right_block)
    best = None
    for t0 in centers:
        for tm in left_locks:
            if tm >= t0 or any(tm < tb < t0 for tb in left_blocks):
                continue
            for tp in right_locks:
                if tp >= t0 or any(tp < tb < t0 for tb in right_blocks):
                    continue
                cand = min(tm, tp)
                if best is None or cand > best:
                    best = cand
    return best
