"""Closed-form fork bounds, a Monte Carlo cross-check, and trace metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from statistics import quantiles

import numpy as np


class DomainError(ValueError):
    pass


def _check(x: int, n: int, p) -> None:
    if n < 0 or not 0 <= p <= 1:
        raise DomainError(f"need n >= 0 and p in [0, 1], got n={n}, p={p}")
    if isinstance(x, bool) or not isinstance(x, int) or isinstance(n, bool) or not isinstance(n, int):
        raise DomainError("x and n must be integers")


def binom_pmf(x: int, n: int, p: float) -> float:
    """C(n,x) p^x (1-p)^(n-x), evaluated in log space."""
    _check(x, n, p)
    if x < 0 or x > n:
        raise DomainError(f"x={x} outside [0, {n}]")
    if p == 0:
        return 1.0 if x == 0 else 0.0
    if p == 1:
        return 1.0 if x == n else 0.0
    logc = math.lgamma(n + 1) - math.lgamma(x + 1) - math.lgamma(n - x + 1)
    return math.exp(logc + x * math.log(p) + (n - x) * math.log1p(-p))


def binom_sf(x: int, n: int, p: float) -> float:
    """P[X >= x] for X ~ Bin(n, p); the open upper limit stops at n."""
    _check(x, n, p)
    if x <= 0:
        return 1.0
    if x > n:
        return 0.0
    return math.fsum(binom_pmf(i, n, p) for i in range(x, n + 1))


# exact rational oracles ------------------------------------------------------------

def binom_pmf_exact(x: int, n: int, p: Fraction) -> Fraction:
    p = Fraction(p)
    if x < 0 or x > n:
        raise DomainError(f"x={x} outside [0, {n}]")
    return math.comb(n, x) * p ** x * (1 - p) ** (n - x)


def binom_sf_exact(x: int, n: int, p: Fraction) -> Fraction:
    if x <= 0:
        return Fraction(1)
    if x > n:
        return Fraction(0)
    return sum((binom_pmf_exact(i, n, p) for i in range(x, n + 1)), Fraction(0))


# security parameters ----------------------------------------------------------------

@dataclass(frozen=True)
class SecurityParams:
    n: int
    f: int
    c: int
    d: int
    k: int
    f_prime: int | None = None

    def __post_init__(self) -> None:
        if 3 * self.f + 1 > self.n:
            raise DomainError("3f+1 <= n violated")
        if not 1 <= self.d <= self.c <= self.n:
            raise DomainError("need 1 <= d <= c <= n")
        if self.k < 1:
            raise DomainError("k must be >= 1")

    @property
    def fp(self) -> int:
        return self.f if self.f_prime is None else self.f_prime


def biasness(c: int, d: int) -> int:
    """Retry factor C(c,d) a beacon-grinding leader gains over committee outcomes."""
    return math.comb(c, d)


def s1(p: SecurityParams) -> float:
    """(BC(d, f, c/n) f/n)^k C(c, d)."""
    if p.f == 0:
        return 0.0
    tail = binom_sf(p.d, p.f, p.c / p.n)
    if tail == 0:
        return 0.0
    return math.exp(p.k * (math.log(tail) + math.log(p.f / p.n)) + math.log(biasness(p.c, p.d)))


def s1_exact(p: SecurityParams) -> Fraction:
    q = Fraction(p.c, p.n)
    return (binom_sf_exact(p.d, p.f, q) * Fraction(p.f, p.n)) ** p.k * biasness(p.c, p.d)


def _s2_inner(p: SecurityParams) -> float:
    q = p.c / p.n
    terms = []
    for dd in range(1, p.d + 1):
        if dd > p.fp:
            break
        half = (p.n - dd) // 2
        terms.append(binom_pmf(dd, p.fp, q) * binom_sf(p.d - dd, half, q) ** 2)
    return math.fsum(terms) * p.f / p.n


def s2(p: SecurityParams) -> float:
    """BC(ceil(c(n-f)/n), c, (n+f)/2n)^(2k) C(c,d) [sum_d' BP(d',f',c/n) BC(d-d',floor((n-d')/2),c/n)^2 f/n]^k."""
    lo = math.ceil(p.c * (p.n - p.f) / p.n)
    head = binom_sf(lo, p.c, (p.n + p.f) / (2 * p.n))
    inner = _s2_inner(p)
    if head == 0 or inner == 0:
        return 0.0
    return math.exp(2 * p.k * math.log(head) + math.log(biasness(p.c, p.d)) + p.k * math.log(inner))


def s2_exact(p: SecurityParams) -> Fraction:
    q = Fraction(p.c, p.n)
    lo = -((-p.c * (p.n - p.f)) // p.n)
    head = binom_sf_exact(lo, p.c, Fraction(p.n + p.f, 2 * p.n))
    inner = Fraction(0)
    for dd in range(1, min(p.d, p.fp) + 1):
        inner += binom_pmf_exact(dd, p.fp, q) * binom_sf_exact(p.d - dd, (p.n - dd) // 2, q) ** 2
    inner *= Fraction(p.f, p.n)
    return head ** (2 * p.k) * biasness(p.c, p.d) * inner ** p.k


# Monte Carlo oracle for s1 -------------------------------------------------------------

def wilson(successes: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if trials <= 0:
        raise DomainError("trials must be positive")
    ph = successes / trials
    den = 1 + z * z / trials
    mid = (ph + z * z / (2 * trials)) / den
    half = z * math.sqrt(ph * (1 - ph) / trials + z * z / (4 * trials * trials)) / den
    lo = 0.0 if successes == 0 else max(0.0, mid - half)
    hi = 1.0 if successes == trials else min(1.0, mid + half)
    return lo, hi


@dataclass(frozen=True)
class Estimate:
    value: float
    lo: float
    hi: float
    trials: int
    hits: int

    def brackets(self, x: float) -> bool:
        return self.lo <= x <= self.hi


def monte_carlo_fork_prob(p: SecurityParams, trials: int, seed: int) -> Estimate:
    """Sample k consecutive rounds of (adversarial leader, >= d adversarial
    committee members), scaled by the C(c,d) biasness factor."""
    if trials < 1:
        raise DomainError("trials must be positive")
    scale = biasness(p.c, p.d)
    if p.f == 0:
        return Estimate(0.0, 0.0, 0.0, trials, 0)
    rng = np.random.default_rng(seed)
    hits = 0
    chunk = 1 << 16
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        leader = rng.random((m, p.k)) < p.f / p.n
        committee = rng.binomial(p.f, p.c / p.n, size=(m, p.k)) >= p.d
        hits += int(np.count_nonzero(np.all(leader & committee, axis=1)))
        done += m
    lo, hi = wilson(hits, trials)
    return Estimate(hits / trials * scale, lo * scale, hi * scale, trials, hits)


# reference table --------------------------------------------------------------------------

TABLE1 = (
    # (params, biasness, s1, s2) as printed
    (SecurityParams(101, 33, 10, 7, 7), 120, 7.57e-12, 1.57e-7),
    (SecurityParams(101, 25, 8, 5, 5), 56, 8.14e-9, 4.12e-12),
    (SecurityParams(101, 20, 6, 4, 4), 15, 1.43e-8, 4.85e-9),
)


def table1(f_prime: int | None = None) -> list[dict]:
    rows = []
    for params, bias, ref1, ref2 in TABLE1:
        if f_prime is not None:
            params = SecurityParams(params.n, params.f, params.c, params.d, params.k, f_prime)
        v1, v2 = s1(params), s2(params)
        rows.append({
            "n": params.n, "f": params.f, "c": params.c, "d": params.d, "k": params.k,
            "f_prime": params.fp,
            "biasness": biasness(params.c, params.d), "biasness_ref": bias,
            "s1": v1, "s1_ref": ref1, "s1_ratio": v1 / ref1,
            "s2": v2, "s2_ref": ref2, "s2_ratio": v2 / ref2,
        })
    return rows


def format_table1(rows: list[dict]) -> str:
    head = f"{'params':<26}{'bias':>6}{'s1':>12}{'s1 ref':>12}{'s2':>12}{'s2 ref':>12}{'s2/ref':>8}"
    out = [head]
    for r in rows:
        label = f"c={r['c']},d={r['d']},k={r['k']},f={r['f']}"
        out.append(f"{label:<26}{r['biasness']:>6}{r['s1']:>12.3e}{r['s1_ref']:>12.3e}"
                   f"{r['s2']:>12.3e}{r['s2_ref']:>12.3e}{r['s2_ratio']:>8.2f}")
    return "\n".join(out)


def sweep_rows(n: int, fs, cs, ds, ks) -> list[dict]:
    rows = []
    for f in fs:
        for c in cs:
            for d in ds:
                for k in ks:
                    if d > c or 3 * f + 1 > n:
                        continue
                    p = SecurityParams(n, f, c, d, k)
                    rows.append({"n": n, "f": f, "c": c, "d": d, "k": k, "s1": s1(p), "s2": s2(p)})
    return rows


# trace metrics -------------------------------------------------------------------------

@dataclass
class Metrics:
    fork_rounds: int
    max_fork_depth: int
    reorgs: int
    confirm_latency: list[int]
    confirm_all_latency: list[int]
    finalization_lag: list[int]
    skipped_rounds: int
    rounds: int
    mode_false_negatives: int
    violations: int
    suspicious_blocks: int
    max_tree_fork_depth: int = 0  # deepest candidate branch against the chosen tip

    @property
    def skip_rate(self) -> float:
        return self.skipped_rounds / self.rounds if self.rounds else 0.0

    def as_dict(self) -> dict:
        def dist(xs):
            if not xs:
                return {"count": 0}
            qs = quantiles(xs, n=10) if len(xs) > 1 else [xs[0]] * 9
            return {"count": len(xs), "min": min(xs), "median": qs[4], "p90": qs[8], "max": max(xs),
                    "mean": sum(xs) / len(xs)}
        return {"fork_rounds": self.fork_rounds, "max_fork_depth": self.max_fork_depth,
                "max_tree_fork_depth": self.max_tree_fork_depth,
                "reorgs": self.reorgs, "confirm_latency": dist(self.confirm_latency),
                "confirm_all_latency": dist(self.confirm_all_latency),
                "finalization_lag": dist(self.finalization_lag), "skipped_rounds": self.skipped_rounds,
                "skip_rate": self.skip_rate, "rounds": self.rounds,
                "mode_false_negatives": self.mode_false_negatives, "violations": self.violations,
                "suspicious_blocks": self.suspicious_blocks}


def trace_metrics(trace) -> Metrics:
    """Metrics from a ``Trace`` (or its JSONL text)."""
    from .sim import Trace

    if isinstance(trace, str):
        trace = Trace.parse(trace)
    block_round: dict[str, int] = {}
    height_block: dict[int, str] = {}
    fork_rounds = max_depth = tree = reorgs = skips = rounds = false_neg = violations = 0
    suspicious: set[str] = set()
    conf, conf_all, lag = [], [], []
    fn_seen = 0
    for no, rec in enumerate(trace.records, 2):
        try:
            k = rec["k"]
            if k == "block":
                block_round[rec["h"]] = rec["round"]
                if rec.get("status") == "valid":
                    height_block.setdefault(rec["height"], rec["h"])
                    if rec.get("honest") is False:
                        suspicious.add(rec["h"])
            elif k == "round":
                rounds += 1
                if rec["fork"] > 0 or len(rec["tips"]) > 1:
                    fork_rounds += 1
                max_depth = max(max_depth, rec["fork"])
                tree = max(tree, rec.get("tree", 0))
                if rec["sit"] == "A":
                    n_h = sum(t[2] for t in rec["tips"])
                    false_neg += n_h - rec["abn"]
                fn_h = min(f[1] for f in rec["fn"])
                if fn_h > fn_seen:
                    for h in range(fn_seen + 1, fn_h + 1):
                        b = height_block.get(h)
                        if b is not None and b in block_round:
                            lag.append(rec["r"] - block_round[b])
                    fn_seen = fn_h
            elif k == "confirm":
                # counted from delivery: a round-r block reaches peers at the start of r+1
                for _height, h, proposed in rec["first"]:
                    conf.append(rec["r"] - proposed - 1)
                for _height, h in rec["all"]:
                    if h in block_round:
                        conf_all.append(rec["r"] - block_round[h] - 1)
            elif k == "skip":
                skips += 1
            elif k == "violation":
                violations += 1
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ValueError(f"line {no}: malformed {rec.get('k', '?')} record ({exc})") from None
    summ = trace.summary or {}
    return Metrics(fork_rounds, max(max_depth, summ.get("max_fork_depth", 0)), summ.get("reorgs", reorgs),
                   conf, conf_all, lag, skips, rounds, false_neg, violations,
                   max(len(suspicious), summ.get("suspicious_blocks", 0)),
                   max(tree, summ.get("max_tree_fork_depth", 0)))
