"""End-to-end acceptance checks, one test per criterion.

Each test prints a pass/fail line and records it for the summary printed at
the end of the pytest run. Criterion 3 is expected to fail: see the notes.
"""

import itertools
import json
import time
from collections import Counter

import pytest
import yaml

from cebft import analysis as an, crypto
from cebft.cli import main
from cebft.config import from_dict
from cebft.node import determine_role
from cebft.sim import run_world
from cebft.types import Role
from helpers import report

pytestmark = pytest.mark.slow

ROWS = [(101, 33, 10, 7), (101, 25, 8, 5), (101, 20, 6, 4)]
STRATEGIES = ["honest", "colliding", "fraudulent-delay", "partition-collusion"]
WINDOW = [{"start": 40, "end": 70, "split": 2}]


def cfg_of(row, **kw):
    n, f, c, d = row
    return from_dict({"n": n, "f": f, "c": c, "d": d, "delta": 1, "confirm_depth": 7, **kw})


def fn_heights(trace):
    return [(rec["r"], min(h for _, h, _ in rec["fn"])) for rec in trace.records if rec["k"] == "round"]


def worst_gap(heights, start, end):
    """Longest stretch of rounds in [start, end] without the lowest honest fn height rising."""
    last, worst, prev = start, 0, None
    for r, h in heights:
        if prev is not None and h > prev and r > start:
            worst = max(worst, r - last)
            last = r
        prev = h
        if r >= end:
            break
    return max(worst, end - last)


# -- the scenario suite shared by criteria 1, 2 and 9 -------------------------------------

@pytest.fixture(scope="module")
def suite():
    seeds = range(1, 22)
    t0 = time.time()
    out = []
    for row, strat, abnormal, seed in itertools.product(ROWS, STRATEGIES, (False, True), seeds):
        kw = {"rounds": 150, "seed": seed, "adversary": {"strategy": strat}}
        if abnormal:
            kw["situation_schedule"] = WINDOW
        w = run_world(cfg_of(row, **kw))
        kinds = Counter(v["what"] for v in w.trace.violations)
        s = w.summary()
        out.append({"row": row, "strategy": strat, "abnormal": abnormal, "kinds": kinds,
                    "cc_checks": s["cc_checks"], "cc_failures": s["cc_failures"],
                    "fn_height": s["fn_height"], "confirmed": s["confirmed_heights"]})
    return out, time.time() - t0


def test_criterion_1_safety(suite):
    runs, secs = suite
    conflicts = sum(r["kinds"]["fn-conflict"] for r in runs)
    span = ({r["strategy"] for r in runs} == set(STRATEGIES) and {r["abnormal"] for r in runs} == {False, True}
            and {r["row"] for r in runs} == set(ROWS))
    ok = len(runs) >= 500 and span and conflicts == 0 and secs < 1800
    report(1, ok, f"{len(runs)} scenarios at n=101, {conflicts} conflicting finalizations, {secs:.0f}s")
    assert ok


def test_criterion_2_probabilistic_consistency(suite):
    runs, _ = suite
    conflicts = sum(r["kinds"]["confirm-conflict"] for r in runs)
    confirmed = sum(r["confirmed"] for r in runs)
    ok = conflicts == 0 and confirmed > 0
    report(2, ok, f"{conflicts} conflicting confirmations over {confirmed} confirmed heights at depth 7")
    assert ok


def test_criterion_9_chain_compliance(suite):
    runs, _ = suite
    checks = sum(r["cc_checks"] for r in runs)
    fails = sum(r["cc_failures"] for r in runs)
    ok = checks > 0 and fails == 0
    report(9, ok, f"{checks} finalization events replayed on their own chain, {fails} not reproduced")
    assert ok


# -- criterion 3 ---------------------------------------------------------------------------

def test_criterion_3_liveness():
    gaps = {}
    for row in [(4, 1, 4, 2), (101, 33, 10, 7)]:
        w = run_world(cfg_of(row, rounds=1000, seed=1))
        gaps[row] = worst_gap(fn_heights(w.trace), 20, 1000)
    # recovery after an abnormal stretch
    w = run_world(cfg_of((4, 1, 4, 2), rounds=200, seed=1,
                         situation_schedule=[{"start": 60, "end": 80, "split": 2}]))
    rec_len = w.cfg.recovery_length
    heights = fn_heights(w.trace)
    after = [h for r, h in heights if r > 80]
    at_end = next(h for r, h in heights if r == 80)
    recovered = next((r for r, h in heights if r > 80 and h > at_end), None)
    recovery_ok = recovered is not None and recovered - 80 <= rec_len
    ok = all(g <= 5 for g in gaps.values()) and recovery_ok
    detail = ", ".join(f"(n,f,c,d)={k}: worst gap {v}" for k, v in gaps.items())
    report(3, ok, f"{detail}; fn resumes {recovered - 80 if recovered else 'never'} rounds after the "
                  f"abnormal stretch (window {rec_len}); bound is 5")
    assert after
    assert ok


# -- criterion 4 ---------------------------------------------------------------------------

def test_criterion_4_fork_free_baseline():
    w = run_world(cfg_of(ROWS[0], rounds=10_000, seed=1))
    s = w.summary()
    ok = s["fork_rounds"] == 0 and s["max_fork_depth"] == 0 and s["suspicious_blocks"] == 0
    report(4, ok, f"10^4 honest rounds: {s['fork_rounds']} fork rounds, {s['suspicious_blocks']} suspicious blocks, "
                  f"{s['blocks']} blocks")
    assert ok


# -- criterion 5 ---------------------------------------------------------------------------

K = 7
SLOTS = {r: (r - 30) % 33 for r in range(30, 30 + 2 * K)}


def test_criterion_5_attack_neutralization():
    details, ok = [], True
    for strat in ["colliding", "fraudulent-delay"]:
        s = run_world(cfg_of(ROWS[0], rounds=10_000, seed=1, adversary={"strategy": strat})).summary()
        good = s["max_fork_depth"] < K and s["max_tree_fork_depth"] < K and s["violations"] == 0
        ok &= good
        details.append(f"{strat}: depth {s['max_fork_depth']}/{s['max_tree_fork_depth']}")
    for seed in (5, 8):
        base = {"rounds": 60, "seed": seed, "adversaries": list(range(33)), "scripted_leaders": SLOTS,
                "adversary": {"strategy": "fraudulent-delay"}}
        off = run_world(cfg_of(ROWS[0], honest_filter=False, **base)).summary()
        on = run_world(cfg_of(ROWS[0], **base)).summary()
        good = off["max_tree_fork_depth"] >= K and on["max_tree_fork_depth"] < K and on["max_fork_depth"] < K
        ok &= good
        details.append(f"ablation seed {seed}: {off['max_tree_fork_depth']} without filter, "
                       f"{on['max_tree_fork_depth']} with")
    report(5, ok, "; ".join(details) + f" (k={K}, {2 * K} adversarial slots)")
    assert ok


# -- criteria 6 and 7: closed forms ----------------------------------------------------------

def test_criterion_6_table1():
    ratios, agree = [], True
    for row in an.table1():
        p = an.SecurityParams(row["n"], row["f"], row["c"], row["d"], row["k"])
        ratios.append(row["s1_ratio"])
        exact = float(an.s1_exact(p))
        agree &= abs(row["s1"] - exact) / exact <= 1e-9
    s2 = [f"{r['s2']:.3e} vs {r['s2_ref']:.2e}" for r in an.table1()]
    ok = all(0.5 <= x <= 2 for x in ratios) and agree
    report(6, ok, f"s1/ref = {', '.join(f'{x:.4f}' for x in ratios)}; log vs exact within 1e-9: {agree}; "
                  f"s2 (not gated, f'=f): {'; '.join(s2)}")
    assert ok


MC_POINTS = [(101, 33, 10, 8, 1), (101, 33, 8, 8, 1), (101, 25, 6, 5, 1),
             (101, 20, 4, 4, 1), (101, 33, 6, 3, 3), (101, 25, 8, 3, 2)]


def test_criterion_7_monte_carlo_brackets_closed_form():
    rows, ok = [], True
    for pt in MC_POINTS:
        p = an.SecurityParams(*pt)
        closed = an.s1(p)
        est = an.monte_carlo_fork_prob(p, 200_000, seed=1)
        good = closed >= 1e-4 and est.brackets(closed)
        ok &= good
        rows.append(f"{pt}: {closed:.3e} in [{est.lo:.3e}, {est.hi:.3e}]")
    report(7, ok, f"{len(MC_POINTS)} points, 2e5 trials each; " + "; ".join(rows))
    assert ok


# -- criterion 8 ---------------------------------------------------------------------------

def test_criterion_8_replay(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("CEBFT_OUT", raising=False)
    shapes = [(4, 1, 4, 2), (7, 2, 7, 3), (101, 33, 10, 7)]
    matrix = []
    for i, (shape, strat, abnormal) in enumerate(itertools.product(shapes, STRATEGIES, (False, True))):
        if len(matrix) == 20:
            break
        n, f, c, d = shape
        data = {"n": n, "f": f, "c": c, "d": d, "delta": 1, "rounds": 50, "seed": i,
                "adversary": {"strategy": strat}}
        if abnormal:
            data["situation_schedule"] = [{"start": 10, "end": 25, "split": 2}]
        matrix.append(data)
    same = 0
    for i, data in enumerate(matrix):
        (tmp_path / f"s{i}.yaml").write_text(yaml.safe_dump(data))
        assert main(["run", f"s{i}.yaml", "--trace", f"s{i}.jsonl"]) == 0
        first = (tmp_path / f"s{i}.jsonl").read_bytes()
        same += main(["replay", f"s{i}.jsonl"]) == 0
        assert (tmp_path / f"s{i}.jsonl").read_bytes() == first
        json.loads(first.splitlines()[0])
    capsys.readouterr()
    ok = len(matrix) == 20 and same == 20
    report(8, ok, f"{same}/{len(matrix)} run+replay pairs byte-identical")
    assert ok


# -- criterion 10 --------------------------------------------------------------------------

def test_criterion_10_committee_size():
    n, rounds = 101, 10_000
    reg = crypto.KeyRegistry(n, seed=1)
    beacon = crypto.GENESIS_BEACON
    cs = (6, 8, 10)
    totals = dict.fromkeys(cs, 0)
    for r in range(rounds):
        alpha = crypto.round_input(beacon, r)
        for i in range(n):
            h = crypto.hash(reg.vrf_eval(reg.keypair(i).sk, alpha).beta, crypto.DOMAIN_COMMITTEE)
            for c in cs:
                totals[c] += crypto.as_fraction_leq(h, c, n)
    means = {c: totals[c] / rounds for c in cs}
    # spot check against the node's own role rule
    roles, _ = determine_role(reg, reg.keypair(0), beacon, 0, n, 10, -1)
    h0 = crypto.hash(reg.vrf_eval(reg.keypair(0).sk, crypto.round_input(beacon, 0)).beta, crypto.DOMAIN_COMMITTEE)
    assert (Role.COMMITTEE in roles) == crypto.as_fraction_leq(h0, 10, n)
    ok = all(abs(means[c] - c) <= 0.1 * c for c in cs)
    report(10, ok, ", ".join(f"c={c}: mean {means[c]:.3f}" for c in cs) + " over 10^4 rounds, n=101")
    assert ok
