"""Verification suites: each check runs an independent oracle against the
implementation and reports one pass/fail line.

The suites are grouped by what they exercise (flow exactness, coupling
correctness, closed-form agreements, tree decompositions, stationarity).
Sample counts and tolerances default to the values the acceptance battery
uses; tests may scale them down through the keyword arguments.
"""

from __future__ import annotations

import math
import random
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .analytic import (
    close_probability,
    expected_stage_events,
    growth_closed_form,
    jc_cpg_thresholds,
    membership_of,
    pair_correlation_bound,
    rate_summary,
    tree_trace_sample,
)
from .coupling import (
    SampleOptions,
    ambiguity_closure,
    estimate_growth,
    exhaustive_coupling_time,
    find_coupling_window,
    iter_scan_stages,
    make_insensitive_spec,
    make_sensitive_spec,
    perfect_sample,
    resolve,
)
from .errors import DualStartMismatch, WidthAssertionFailed
from .flowsim import FlowEval, StreamField, derive_seed, equilibrium_forward_batch, stream_extend
from .rulesys import NUCLEOTIDES, Frozen, RuleSet, exact_stationary
from .ypr import PerturbationSpec, RNMatrix, YpRModel, YpRRates, compile_rules, jukes_cantor_cpg


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _tv(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def _jc_eps(delta: float, eps_total: float) -> YpRModel:
    """Uniform-rate model with CG decay and an even two-entry perturbation."""
    half = eps_total / 2.0
    pert = PerturbationSpec(single={("A", "C"): half, ("G", "T"): half})
    return jukes_cantor_cpg(delta, pert)


_GENERIC_RN = YpRModel(
    RNMatrix(
        {"A": 0.7, "T": 1.3, "C": 0.9, "G": 1.1},
        {"A": 1.2, "T": 0.6, "C": 1.4, "G": 0.8},
    ),
    YpRRates({}),
)


# --------------------------------------------------------------------------
# flow suite
# --------------------------------------------------------------------------


def check_flow_semigroup(rs: RuleSet | None = None, n: int = 100, seed: int = 2024) -> CheckResult:
    """Composing the flow over (u,v) then (v,t) equals flowing over (u,t),
    state-for-state, on randomized instances."""
    rs = rs or compile_rules(_jc_eps(2.0, 0.1))
    states = rs.alphabet.states
    bad = 0
    for rep in range(n):
        rnd = random.Random(seed * 7919 + rep)
        f = StreamField(derive_seed(seed, rep), rs)
        u = -rnd.uniform(1.0, 3.0)
        v = rnd.uniform(u + 0.05, -0.01)
        t = rnd.uniform(v, 0.0)
        x = rnd.randint(-2, 2)
        fill = rnd.choice(states)
        inner = FlowEval(f, fill, u)
        lhs = FlowEval(f, lambda y: inner.state_at(v, y), v).state_at(t, x)
        rhs = FlowEval(f, fill, u).state_at(t, x)
        bad += lhs != rhs
    return CheckResult("flow-semigroup", bad == 0, f"{bad}/{n} mismatches (exact equality)")


def check_perf_query_independence(
    rs: RuleSet | None = None, n: int = 100, seed: int = 515
) -> CheckResult:
    """Performance bits decided while answering two different downstream
    queries must agree on every shared event."""
    rs = rs or compile_rules(_jc_eps(2.0, 0.1))
    bad = 0
    for rep in range(n):
        rnd = random.Random(seed * 104729 + rep)
        f = StreamField(derive_seed(seed, rep), rs)
        u = -rnd.uniform(1.5, 3.0)
        fill = rnd.choice(rs.alphabet.states)
        t1 = rnd.uniform(u * 0.5, -0.01)
        t2 = rnd.uniform(t1, 0.0)
        x = rnd.randint(-1, 1)
        ev1 = FlowEval(f, fill, u)
        ev1.state_at(t1, x)
        ev2 = FlowEval(f, fill, u)
        ev2.state_at(t2, x)
        rec1, rec2 = ev1.perf_record, ev2.perf_record
        for key in set(rec1) & set(rec2):
            if rec1[key] != rec2[key]:
                bad += 1
    return CheckResult("perf-query-independence", bad == 0, f"{bad} bit disagreements over {n} instances")


def check_prefix_stability(rs: RuleSet | None = None, n: int = 50, seed: int = 88) -> CheckResult:
    """Extending a stream twice as far back never rewrites the shallow part."""
    rs = rs or compile_rules(_jc_eps(2.0, 0.1))
    bad = 0
    for rep in range(n):
        f = StreamField(derive_seed(seed, rep), rs)
        i = rep % len(rs)
        first = stream_extend(f, 0, i, -2.0)
        f.extend(0, i, -40.0)
        second = [e for e in stream_extend(f, 0, i, -40.0) if e.t >= -2.0]
        bad += first != second
    return CheckResult("stream-prefix-stability", bad == 0, f"{bad}/{n} prefixes changed")


def check_poisson_rate(n: int = 10_000, seed: int = 4) -> CheckResult:
    """Empirical mean event count of a fresh stream matches rate x horizon."""
    rs = compile_rules(jukes_cantor_cpg(2.0))
    i = 12  # CG decay rule, rate 2
    rate, horizon = rs.rules[i].rate, 3.0
    total = 0
    for rep in range(n):
        f = StreamField(derive_seed(seed, rep), rs)
        total += len(stream_extend(f, 0, i, -horizon))
    mean = total / n
    want = rate * horizon
    tol = 3.0 * math.sqrt(rate * horizon / n)
    return CheckResult(
        "stream-poisson-rate", abs(mean - want) <= tol, f"mean {mean:.4f} vs {want:g} (tol {tol:.4f})"
    )


# --------------------------------------------------------------------------
# coupling suite
# --------------------------------------------------------------------------


def check_dual_start(n: int = 1000, seed: int = 31, delta: float = 2.0, eps: float = 0.2) -> CheckResult:
    """Resolution must give identical answers from two distinct fills, and
    every window must respect the declared width."""
    model = _jc_eps(delta, eps)
    rs = compile_rules(model)
    spec = make_sensitive_spec(model)
    mismatches = 0
    for rep in range(n):
        f = StreamField(derive_seed(seed, rep), rs)
        try:
            g = ambiguity_closure(f, spec, 0)
            resolve(f, spec, g, assertion_mode=True)
        except (DualStartMismatch, WidthAssertionFailed):
            mismatches += 1
    return CheckResult(
        "dual-start-resolution", mismatches == 0, f"{mismatches}/{n} replicates mismatched"
    )


def check_scan_vs_bruteforce(n: int = 1000, seed: int = 100) -> CheckResult:
    """The backward scan's coupling time equals exhaustive triple enumeration."""
    model = _jc_eps(2.0, 0.1)
    rs = compile_rules(model)
    spec = make_sensitive_spec(model)
    bad = 0
    for rep in range(n):
        f = StreamField(derive_seed(seed, rep), rs)
        w = find_coupling_window(f, spec)
        if exhaustive_coupling_time(f, spec, (0.0, 0), w.t_couple) != w.t_couple:
            bad += 1
    return CheckResult("scan-vs-bruteforce", bad == 0, f"{bad}/{n} coupling times differ")


def check_layer_decay(
    n: int = 10_000, seed: int = 61, growth_samples: int = 50_000, depth: int = 4
) -> CheckResult:
    """Mean ambiguity-layer sizes decay at least geometrically in the
    estimated growth parameter."""
    model = _jc_eps(0.0, 0.3)
    rs = compile_rules(model)
    spec = make_sensitive_spec(model)
    m_hat, _ = estimate_growth(rs, spec, growth_samples, seed + 1)
    sums = np.zeros(depth)
    sq = np.zeros(depth)
    for rep in range(n):
        f = StreamField(derive_seed(seed, rep), rs)
        g = ambiguity_closure(f, spec, 0)
        for k in range(1, depth + 1):
            size = len(g.layers[k]) if k < len(g.layers) else 0
            sums[k - 1] += size
            sq[k - 1] += size * size
    details = []
    ok = True
    for k in range(1, depth + 1):
        mean = sums[k - 1] / n
        var = max(sq[k - 1] / n - mean * mean, 0.0)
        bound = m_hat**k + 3.0 * math.sqrt(var / n)
        ok &= mean <= bound
        details.append(f"n={k}: {mean:.4f}<={bound:.4f}")
    return CheckResult("ambiguity-layer-decay", ok, f"m_hat={m_hat:.4f}; " + ", ".join(details))


def check_pair_correlations(
    n: int = 10_000, seed: int = 903, distances: tuple[int, ...] = (5, 6, 8)
) -> CheckResult:
    """Empirical pair correlations at equilibrium sit under the analytic
    decay bound (plus sampling noise) for every state pair."""
    model = _jc_eps(0.0, 0.1)
    rs = compile_rules(model)
    spec = make_sensitive_spec(model)
    m_hat, _ = estimate_growth(rs, spec, 30_000, seed + 1)
    if m_hat > 0.2:
        return CheckResult("pair-correlation-bound", False, f"instance not subcritical enough: {m_hat:.3f}")
    states = rs.alphabet.states
    worst = -math.inf
    ok = True
    for d in distances:
        joint = Counter()
        for rep in range(n):
            draw = perfect_sample(rs, spec, [0, d], derive_seed(seed + d, rep), SampleOptions(force=True))
            joint[(draw[0], draw[d])] += 1
        bound = pair_correlation_bound(m_hat, d)
        for a in states:
            for b in states:
                p_ab = joint[(a, b)] / n
                p_a = sum(v for (x, _), v in joint.items() if x == a) / n
                p_b = sum(v for (_, y), v in joint.items() if y == b) / n
                se = math.sqrt(p_ab * (1 - p_ab) / n) + p_b * math.sqrt(
                    p_a * (1 - p_a) / n
                ) + p_a * math.sqrt(p_b * (1 - p_b) / n)
                gap = abs(p_ab - p_a * p_b)
                worst = max(worst, gap - bound - 3 * se)
                ok &= gap <= bound + 3 * se
    return CheckResult(
        "pair-correlation-bound", ok, f"m_hat={m_hat:.4f}, worst margin {worst:+.4f} (<=0 passes)"
    )


# --------------------------------------------------------------------------
# analytic suite
# --------------------------------------------------------------------------


def check_thresholds() -> CheckResult:
    from fractions import Fraction

    ok = True
    details = []
    for delta, want in ((0, Fraction(8, 15)), (2, Fraction(1, 3)), (10, Fraction(4, 45))):
        got, _ = jc_cpg_thresholds(delta)
        ok &= got == want
        details.append(f"eps_ctx({delta})={got}")
    _, eps_flat = jc_cpg_thresholds(0)
    resid = abs(3 * eps_flat * (64 + 12 * eps_flat + eps_flat**2) - 64)
    ok &= resid <= 1e-12 and eps_flat > 0.3
    details.append(f"eps_flat={eps_flat:.12f} resid={resid:.2e}")
    return CheckResult("thresholds-exact", ok, ", ".join(details))


def check_growth_formula(n: int = 50, seed: int = 5150) -> CheckResult:
    """Closed-form growth equals 3|eps|(40+10d+d^2)/64 for single-site
    perturbations of the uniform+CG model."""
    rnd = random.Random(seed)
    worst = 0.0
    for _ in range(n):
        delta = rnd.uniform(0.0, 10.0)
        pairs = rnd.sample(
            [(a, b) for a in NUCLEOTIDES.states for b in NUCLEOTIDES.states if a != b], rnd.randint(1, 5)
        )
        eps = {p: rnd.uniform(0.001, 0.2) for p in pairs}
        model = jukes_cantor_cpg(delta, PerturbationSpec(single=eps))
        rs = compile_rules(model)
        spec = make_sensitive_spec(model)
        got = growth_closed_form(rs, spec)
        want = 3.0 * sum(eps.values()) * (40 + 10 * delta + delta**2) / 64.0
        worst = max(worst, abs(got - want) / want)
    return CheckResult("growth-closed-form", worst <= 1e-12, f"worst rel err {worst:.2e}")


def check_beta1_law(
    n: int = 100_000, seed: int = 321, deltas: tuple[float, ...] = (0.0, 2.0, 10.0)
) -> CheckResult:
    """Scan-stage close frequency matches r1 r4 / (r3 r6)."""
    ok = True
    details = []
    for delta in deltas:
        model = _jc_eps(delta, 0.1)
        rs = compile_rules(model)
        spec = make_sensitive_spec(model)
        p = close_probability(rate_summary(rs, spec))
        hits = 0
        for rep in range(n):
            f = StreamField(derive_seed(seed + int(delta), rep), rs)
            hits += next(iter_scan_stages(f, spec)).closed
        freq = hits / n
        tol = 3.0 * math.sqrt(p * (1 - p) / n)
        ok &= abs(freq - p) <= tol
        details.append(f"d={delta:g}: {freq:.4f} vs {p:.4f} (tol {tol:.4f})")
    return CheckResult("stage-close-law", ok, "; ".join(details))


def check_growth_mc(n: int = 100_000, seed: int = 777) -> CheckResult:
    """Monte Carlo growth matches the closed form within 2% relative."""
    instances = [(0.0, 0.45), (0.0, 0.30), (2.0, 0.30), (2.0, 0.20), (10.0, 0.06)]
    ok = True
    details = []
    for k, (delta, eps) in enumerate(instances):
        model = _jc_eps(delta, eps)
        rs = compile_rules(model)
        spec = make_sensitive_spec(model)
        want = growth_closed_form(rs, spec)
        got, _ = estimate_growth(rs, spec, n, seed + k)
        rel = abs(got - want) / want
        ok &= rel <= 0.02
        details.append(f"(d={delta:g},e={eps:g}): rel {rel:.4f}")
    return CheckResult("growth-mc-vs-closed-form", ok, "; ".join(details))


# --------------------------------------------------------------------------
# tree suite
# --------------------------------------------------------------------------


def _direct_stage_counts(rs, spec, rule_index, n, seed):
    counts = Counter()
    for rep in range(n):
        f = StreamField(derive_seed(seed, rep), rs)
        stage = next(iter_scan_stages(f, spec))
        lam = stage.opposite.t
        c = 0
        for z in (-1, 0, 1):
            c += len(f.events_between(z, rule_index, lam, 0.0))
        counts[(stage.closed, min(c, 5))] += 1
    return counts


def check_tree_vs_direct(n: int = 100_000, seed: int = 2222) -> CheckResult:
    """The stage tree reproduces the joint law of (closed, rule events)
    observed in direct stream simulation, for a plain and a block rule."""
    cases = []
    plain_model = jukes_cantor_cpg(2.0, PerturbationSpec(single={("A", "C"): 0.05}))
    cases.append(("plain", plain_model, make_sensitive_spec(plain_model)))
    block_model = jukes_cantor_cpg(0.0, PerturbationSpec(single={("T", "A"): 0.04}))
    cases.append(("block", block_model, make_insensitive_spec(block_model)))
    ok = True
    details = []
    for label, model, spec in cases:
        rs = compile_rules(model)
        idx = next(iter(spec.ambiguous))
        mem = membership_of(spec, idx)
        s = rate_summary(rs, spec)
        rng = np.random.default_rng(seed)
        tree = Counter()
        for _ in range(n):
            tr = tree_trace_sample(s, rs.rules[idx], mem, rng)
            tree[(tr.closed, min(tr.rule_events, 5))] += 1
        direct = _direct_stage_counts(rs, spec, idx, n, seed + 17)
        keys = set(tree) | set(direct)
        tv = 0.5 * sum(abs(tree[k] / n - direct[k] / n) for k in keys)
        ok &= tv <= 0.02
        details.append(f"{label} ({mem}): TV {tv:.4f}")
    return CheckResult("tree-vs-direct-simulation", ok, "; ".join(details))


def check_stage_expectations(n: int = 40_000, seed: int = 5) -> CheckResult:
    """Tree-sampled mean event counts match the closed-form expectation for
    all three membership cases."""
    from .analytic import RateSummary

    s = RateSummary(4.0, 4.0, 2.0, 6.0, 3.0, 1.5, 4.5)
    rate = 0.3
    ok = True
    details = []
    for mem in ("plain", "right_block", "left_block"):
        rng = np.random.default_rng(seed)
        vals = np.array([tree_trace_sample(s, rate, mem, rng).rule_events for _ in range(n)], dtype=float)
        want = expected_stage_events(rate, s, mem)
        se = vals.std(ddof=1) / math.sqrt(n)
        ok &= abs(vals.mean() - want) <= 3 * se
        details.append(f"{mem}: {vals.mean():.4f} vs {want:.4f} (3se {3*se:.4f})")
    return CheckResult("stage-count-expectation", ok, "; ".join(details))


# --------------------------------------------------------------------------
# stationary suite
# --------------------------------------------------------------------------


def _cftp_marginal(model, n, seed, spec=None) -> np.ndarray:
    rs = compile_rules(model)
    spec = spec or make_sensitive_spec(model)
    counts = Counter()
    for rep in range(n):
        counts[perfect_sample(rs, spec, [0], derive_seed(seed, rep), SampleOptions(force=True))[0]] += 1
    return np.array([counts[s] / n for s in NUCLEOTIDES.states])


def check_cftp_uniform(n: int = 10_000, seed: int = 150) -> CheckResult:
    """Pure uniform-rate model: the sampled marginal is uniform."""
    emp = _cftp_marginal(jukes_cantor_cpg(0.0), n, seed)
    tv = _tv(emp, np.full(4, 0.25))
    return CheckResult("cftp-uniform-marginal", tv <= 0.02, f"TV {tv:.4f} (tol 0.02)")


def check_cftp_vs_exact(n: int = 10_000, seed: int = 151) -> CheckResult:
    """Generic single-site model: the sampled marginal matches the dense
    stationary solve."""
    rs = compile_rules(_GENERIC_RN)
    pi = exact_stationary(rs, 1, Frozen("A", "A"))
    emp = _cftp_marginal(_GENERIC_RN, n, seed)
    tv = _tv(emp, pi)
    return CheckResult("cftp-vs-exact-solve", tv <= 0.02, f"TV {tv:.4f} (tol 0.02)")


def check_forward_vs_exact(n: int = 10_000, seed: int = 152) -> CheckResult:
    """Long forward runs of a single-site model reach the dense solve."""
    rs = compile_rules(_GENERIC_RN)
    pi = exact_stationary(rs, 1, Frozen("A", "A"))
    final = equilibrium_forward_batch(rs, 5, 30.0, n, seed)
    emp = np.bincount(final[:, 2], minlength=4) / n
    tv = _tv(emp, pi)
    return CheckResult("forward-vs-exact-solve", tv <= 0.03, f"TV {tv:.4f} (tol 0.03)")


def check_equilibrium_consistency(
    n: int = 10_000, seed: int = 153, width: int = 21, duration: float = 200.0
) -> CheckResult:
    """Perfect sampling agrees with long-burn-in forward simulation on the
    central-site marginal."""
    model = _jc_eps(2.0, 0.1)
    rs = compile_rules(model)
    cftp = _cftp_marginal(model, n, seed)
    final = equilibrium_forward_batch(rs, width, duration, n, seed + 1)
    fwd = np.bincount(final[:, width // 2], minlength=4) / n
    tv = _tv(cftp, fwd)
    return CheckResult("cftp-vs-forward-burnin", tv <= 0.03, f"TV {tv:.4f} (tol 0.03)")


# --------------------------------------------------------------------------
# suite registry
# --------------------------------------------------------------------------

SUITES = {
    "flow": (
        check_flow_semigroup,
        check_perf_query_independence,
        check_prefix_stability,
        check_poisson_rate,
    ),
    "coupling": (
        check_dual_start,
        check_scan_vs_bruteforce,
        check_layer_decay,
        check_pair_correlations,
    ),
    "analytic": (
        check_thresholds,
        check_growth_formula,
        check_beta1_law,
        check_growth_mc,
    ),
    "tree": (
        check_tree_vs_direct,
        check_stage_expectations,
    ),
    "stationary": (
        check_cftp_uniform,
        check_cftp_vs_exact,
        check_forward_vs_exact,
        check_equilibrium_consistency,
    ),
}


def run_suite(name: str, **overrides) -> list[CheckResult]:
    """Run every check in a suite; unknown names raise KeyError."""
    out = []
    for fn in SUITES[name]:
        kwargs = {k: v for k, v in overrides.items() if k in fn.__code__.co_varnames[: fn.__code__.co_argcount]}
        out.append(fn(**kwargs))
    return out
