"""Plain-text model files: named sections of key = value lines.

The format is hand-writable and diff-friendly.  Example::

    [alphabet]
    states = A T C G

    [model]
    type = jc_cpg
    delta = 2
    eps A C = 0.05

    [coupling]
    spec = sensitive

    [run]
    seed = 1
    samples = 10000
    sites = 0..0

Model types: ``jc_cpg`` (uniform rates plus CG-dinucleotide decay),
``ypr`` (explicit v/w/neighbor rates) and ``rules`` (raw rule lines).
Perturbation lines use one key ``eps`` with two state tokens: single
states for a site perturbation, two-letter tokens sharing the first or
second letter for left- or right-context dinucleotide perturbations.
Parsing then serializing then parsing is a fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .coupling import CouplingSpec, make_insensitive_spec, make_sensitive_spec
from .errors import ModelFileError
from .rulesys import NUCLEOTIDES, Alphabet, Rule, RuleSet
from .ypr import PerturbationSpec, RNMatrix, YpRModel, YpRRates, compile_rules


@dataclass
class ModelFile:
    alphabet: tuple[str, ...]
    model_type: str                       # jc_cpg | ypr | rules
    delta: float = 0.0
    v: dict[str, float] = field(default_factory=dict)
    w: dict[str, float] = field(default_factory=dict)
    ypr_rates: dict[tuple[str, str], float] = field(default_factory=dict)
    eps_single: dict[tuple[str, str], float] = field(default_factory=dict)
    eps_left: dict[tuple[str, str, str], float] = field(default_factory=dict)
    eps_right: dict[tuple[str, str, str], float] = field(default_factory=dict)
    raw_rules: list[tuple] = field(default_factory=list)  # (offsets, patterns, target, rate, pert)
    coupling: str = "sensitive"           # sensitive | insensitive | none
    run: dict[str, str] = field(default_factory=dict)


@dataclass
class BuiltModel:
    """A model file turned into executable objects."""

    rule_set: RuleSet
    model: Optional[YpRModel]
    spec: Optional[CouplingSpec]
    source: ModelFile


def _num(token: str, line: int, what: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise ModelFileError(f"{what}: not a number: {token!r}", line) from None


def _parse_eps(tokens: list[str], value: float, mf: ModelFile, line: int):
    if len(tokens) != 2:
        raise ModelFileError("eps needs two state tokens", line)
    a, b = tokens
    if value < 0:
        raise ModelFileError(f"eps {a} {b}: negative rate", line)
    if len(a) == 1 and len(b) == 1:
        if a == b:
            raise ModelFileError(f"eps {a} {b}: source equals target", line)
        mf.eps_single[(a, b)] = value
    elif len(a) == 2 and len(b) == 2:
        if a[0] == b[0] and a[1] != b[1]:
            mf.eps_left[(a[0], a[1], b[1])] = value
        elif a[1] == b[1] and a[0] != b[0]:
            mf.eps_right[(a[0], b[0], a[1])] = value
        else:
            raise ModelFileError(f"eps {a} {b}: dinucleotides must share exactly one flank", line)
    else:
        raise ModelFileError(f"eps {a} {b}: tokens must both be 1 or both 2 states", line)


def _parse_rule(value: str, mf: ModelFile, line: int):
    parts = [p.strip() for p in value.split("|")]
    if len(parts) not in (4, 5):
        raise ModelFileError("rule needs offsets | patterns | target | rate [| pert]", line)
    off_s, pat_s, target, rate_s = parts[:4]
    pert = False
    if len(parts) == 5:
        if parts[4] != "pert":
            raise ModelFileError(f"unknown rule flag {parts[4]!r}", line)
        pert = True
    offsets = () if off_s == "-" else tuple(int(t) for t in off_s.split(","))
    patterns = () if pat_s == "-" else tuple(pat_s.split(";"))
    for p in patterns:
        if len(p) != len(offsets):
            raise ModelFileError(f"pattern {p!r} does not match offsets {off_s!r}", line)
    rate = _num(rate_s, line, "rule rate")
    if rate < 0:
        raise ModelFileError("rule rate: negative rate", line)
    mf.raw_rules.append((offsets, patterns, target, rate, pert))


def parse_model_file(text: str) -> ModelFile:
    mf = ModelFile(alphabet=NUCLEOTIDES.states, model_type="")
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip().lower()
            if section not in ("alphabet", "model", "coupling", "run"):
                raise ModelFileError(f"unknown section [{section}]", lineno)
            continue
        if section is None:
            raise ModelFileError("content before any [section]", lineno)
        if "=" not in stripped:
            raise ModelFileError("expected key = value", lineno)
        key_part, _, value = stripped.partition("=")
        tokens = key_part.split()
        key, args = tokens[0], tokens[1:]
        value = value.strip()

        if section == "alphabet":
            if key != "states" or args:
                raise ModelFileError(f"unknown alphabet key {key_part.strip()!r}", lineno)
            mf.alphabet = tuple(value.split())
        elif section == "model":
            if key == "type":
                if value not in ("jc_cpg", "ypr", "rules"):
                    raise ModelFileError(f"unknown model type {value!r}", lineno)
                mf.model_type = value
            elif key == "delta":
                mf.delta = _num(value, lineno, "delta")
                if mf.delta < 0:
                    raise ModelFileError("delta: negative rate", lineno)
            elif key == "eps":
                _parse_eps(args, _num(value, lineno, "eps"), mf, lineno)
            elif key in ("v", "w"):
                if len(args) != 1:
                    raise ModelFileError(f"{key} needs one state token", lineno)
                rate = _num(value, lineno, key)
                if rate < 0:
                    raise ModelFileError(f"{key} {args[0]}: negative rate", lineno)
                getattr(mf, key)[args[0]] = rate
            elif key == "ypr":
                if len(args) != 2:
                    raise ModelFileError("ypr needs source and neighbor tokens", lineno)
                rate = _num(value, lineno, "ypr")
                if rate < 0:
                    raise ModelFileError(f"ypr {args[0]} {args[1]}: negative rate", lineno)
                mf.ypr_rates[(args[0], args[1])] = rate
            elif key == "rule":
                _parse_rule(value, mf, lineno)
            else:
                raise ModelFileError(f"unknown model key {key!r}", lineno)
        elif section == "coupling":
            if key != "spec" or args:
                raise ModelFileError(f"unknown coupling key {key_part.strip()!r}", lineno)
            if value not in ("sensitive", "insensitive", "none"):
                raise ModelFileError(f"unknown coupling spec {value!r}", lineno)
            mf.coupling = value
        elif section == "run":
            if args:
                raise ModelFileError(f"run keys take no arguments: {key_part.strip()!r}", lineno)
            mf.run[key] = value
    if not mf.model_type:
        raise ModelFileError("missing [model] type")
    return mf


def _fmt(x: float) -> str:
    return format(x, ".12g")


def serialize_model_file(mf: ModelFile) -> str:
    out = ["[alphabet]", f"states = {' '.join(mf.alphabet)}", "", "[model]", f"type = {mf.model_type}"]
    if mf.model_type in ("jc_cpg", "ypr"):
        if mf.model_type == "jc_cpg":
            out.append(f"delta = {_fmt(mf.delta)}")
        else:
            for x in sorted(mf.v):
                out.append(f"v {x} = {_fmt(mf.v[x])}")
            for x in sorted(mf.w):
                out.append(f"w {x} = {_fmt(mf.w[x])}")
            for (s, nb) in sorted(mf.ypr_rates):
                out.append(f"ypr {s} {nb} = {_fmt(mf.ypr_rates[(s, nb)])}")
        for (x, y) in sorted(mf.eps_single):
            out.append(f"eps {x} {y} = {_fmt(mf.eps_single[(x, y)])}")
        for (z, x, y) in sorted(mf.eps_left):
            out.append(f"eps {z}{x} {z}{y} = {_fmt(mf.eps_left[(z, x, y)])}")
        for (x, y, z) in sorted(mf.eps_right):
            out.append(f"eps {x}{z} {y}{z} = {_fmt(mf.eps_right[(x, y, z)])}")
    else:
        for offsets, patterns, target, rate, pert in mf.raw_rules:
            off_s = ",".join(str(a) for a in offsets) if offsets else "-"
            pat_s = ";".join(patterns) if patterns else "-"
            line = f"rule = {off_s} | {pat_s} | {target} | {_fmt(rate)}"
            if pert:
                line += " | pert"
            out.append(line)
    out += ["", "[coupling]", f"spec = {mf.coupling}", "", "[run]"]
    for k, v in mf.run.items():
        out.append(f"{k} = {v}")
    out.append("")
    return "\n".join(out)


def build_model(mf: ModelFile) -> BuiltModel:
    """Turn a parsed file into a rule set plus optional coupling spec."""
    if mf.model_type == "rules":
        alpha = Alphabet(mf.alphabet)
        rules = []
        flags = []
        for offsets, patterns, target, rate, pert in mf.raw_rules:
            pats = frozenset(tuple(p) for p in patterns)
            rules.append(Rule(offsets, pats, target, rate, tag=f"file_rule_{len(rules)}"))
            flags.append(pert)
        rs = RuleSet(alpha, tuple(rules), tuple(flags))
        if mf.coupling != "none":
            raise ModelFileError("coupling specs require a jc_cpg or ypr model")
        return BuiltModel(rs, None, None, mf)

    if tuple(mf.alphabet) != NUCLEOTIDES.states:
        raise ModelFileError("structured models use the A T C G alphabet")
    pert = PerturbationSpec(dict(mf.eps_single), dict(mf.eps_left), dict(mf.eps_right))
    if mf.model_type == "jc_cpg":
        model = YpRModel(
            RNMatrix({x: 1.0 for x in mf.alphabet}, {x: 1.0 for x in mf.alphabet}),
            YpRRates({("C", "G"): mf.delta, ("G", "C"): mf.delta}),
            pert,
        )
    else:
        missing = [x for x in NUCLEOTIDES.states if x not in mf.v or x not in mf.w]
        if missing:
            raise ModelFileError(f"ypr model missing v/w rates for {missing}")
        model = YpRModel(RNMatrix(dict(mf.v), dict(mf.w)), YpRRates(dict(mf.ypr_rates)), pert)
    rs = compile_rules(model)
    spec = None
    if mf.coupling == "sensitive":
        spec = make_sensitive_spec(model)
    elif mf.coupling == "insensitive":
        spec = make_insensitive_spec(model)
    return BuiltModel(rs, model, spec, mf)


def load_model_file(path: str) -> ModelFile:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_model_file(fh.read())


def parse_sites(value: str) -> list[int]:
    """Site sets: 'a..b' ranges, comma lists, or single integers."""
    value = value.strip()
    if ".." in value:
        lo_s, _, hi_s = value.partition("..")
        lo, hi = int(lo_s), int(hi_s)
        if hi < lo:
            raise ValueError(f"bad site range {value!r}")
        return list(range(lo, hi + 1))
    if "," in value:
        return sorted({int(t) for t in value.split(",")})
    return [int(value)]


def parse_grid(value: str) -> list[float]:
    """Grids: 'start:stop:step' (inclusive within half a step) or comma list."""
    value = value.strip()
    if ":" in value:
        start_s, stop_s, step_s = value.split(":")
        start, stop, step = float(start_s), float(stop_s), float(step_s)
        if step <= 0:
            raise ValueError("grid step must be positive")
        out = []
        v = start
        while v <= stop + step * 0.5:
            out.append(round(v, 12))
            v += step
        return out
    return [float(t) for t in value.split(",")]
