"""Deterministic discrete-event scenario runner.

Time is measured in ticks; a round lasts ``delta_multiplier * delta`` ticks and
has three phase points: the leader broadcast at the round start, the
committee's endorsement point and the collection point one delta before the
round ends. Messages are delivered in (tick, send order) order between phase
points. All randomness comes from ``draw``: a keyed hash of (seed, purpose,
tick, entity, counter), so unrelated draws never shift each other.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import logging
import random
import struct
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable

from . import __version__, crypto
from .config import AbnormalWindow, ScenarioConfig
from .finality import (ChainReplay, FinalityParams, SafetyViolation, Update,
                       compute_update)
from .ledger import BlockIndex, CandidateSet, canonical_chain
from .node import Node
from .types import Block, Mode, Role, short

log = logging.getLogger(__name__)


def draw(seed: int, purpose: bytes, tick: int, entity: int, counter: int, bound: int) -> int:
    """Counter-based uniform integer in [1, bound]."""
    if bound <= 1:
        return 1
    h = hashlib.blake2b(struct.pack(">qqqq", seed, tick, entity, counter), digest_size=16,
                        person=purpose[:16]).digest()
    return 1 + int.from_bytes(h, "big") % bound


def draw_unit(seed: int, purpose: bytes, tick: int, entity: int, counter: int) -> float:
    h = hashlib.blake2b(struct.pack(">qqqq", seed, tick, entity, counter), digest_size=8,
                        person=purpose[:16]).digest()
    return (int.from_bytes(h, "big") >> 11) / float(1 << 53)


@dataclass(frozen=True)
class Situation:
    """The network state at one tick: None groups means normal."""

    window: AbnormalWindow | None = None
    groups: dict[int, int] | None = None  # node -> group; nodes absent are bridges
    release_tick: int = 0

    @property
    def normal(self) -> bool:
        return self.window is None

    def linked(self, a: int, b: int) -> bool:
        if self.groups is None:
            return True
        ga, gb = self.groups.get(a), self.groups.get(b)
        return ga is None or gb is None or ga == gb


def abnormal_delay(window: AbnormalWindow, rnd: Callable[[int], int], unit: Callable[[], float]) -> int:
    spec = window.delay
    if spec.kind == "uniform":
        return rnd(spec.max_ticks)
    # geometric: 1 + number of failures before the first success, capped
    k = 1
    while k < spec.max_ticks and unit() > spec.p:
        k += 1
    return k


def deliver(sender: int, recipients: Iterable[int], send_tick: int, situation: Situation,
            delta: int, rnd: Callable[[int], int], unit: Callable[[], float]) -> list[tuple[int, int]]:
    """(recipient, delivery tick) pairs for one logical send.

    Normal: a single draw in [1, delta] shared by all recipients. Abnormal:
    linked recipients get the window's delay distribution; cross-partition
    copies are withheld until the partition lifts and then take <= delta.
    """
    recipients = list(recipients)
    if situation.normal:
        t = send_tick + rnd(delta)
        return [(r, t) for r in recipients]
    inside = send_tick + abnormal_delay(situation.window, rnd, unit)
    released = max(situation.release_tick, send_tick) + rnd(delta)
    return [(r, inside if situation.linked(sender, r) else released) for r in recipients]


# -- trace ---------------------------------------------------------------------

def _dumps(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


@dataclass
class Trace:
    header: dict
    records: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [_dumps({"k": "header", **self.header})]
        out.extend(_dumps(r) for r in self.records)
        out.append(_dumps({"k": "summary", **self.summary}))
        return out

    def to_jsonl(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def parse(cls, text: str) -> "Trace":
        header, summary, records = None, {}, []
        for no, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {no}: not JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or "k" not in rec:
                raise ValueError(f"line {no}: record without kind")
            kind = rec.pop("k")
            if kind == "header":
                header = rec
            elif kind == "summary":
                summary = rec
            else:
                records.append({"k": kind, **rec})
        if header is None:
            raise ValueError("line 1: missing header record")
        return cls(header, records, summary)

    @classmethod
    def read(cls, path: str) -> "Trace":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read())

    @property
    def violations(self) -> list[dict]:
        return [r for r in self.records if r["k"] == "violation"]


# -- the world -------------------------------------------------------------------

class World:
    def __init__(self, cfg: ScenarioConfig) -> None:
        from .adversary import build_coordinator

        self.cfg = cfg
        self.T = cfg.round_ticks
        self.registry = crypto.KeyRegistry(cfg.n, cfg.seed)
        self.index = BlockIndex()
        self.params = FinalityParams(cfg.f, commit_quorum=1 if cfg.fault == "commit-quorum-1" else None,
                                     finalize_tip=cfg.fault == "finalize-tip",
                                     pp_clears_pc=cfg.pp_clears_pc)
        self.validation_cache: dict = {}
        self.tick = 0
        self.round = 0
        self._events: list = []
        self._seq = 0
        self._send_counter: Counter = Counter()
        self._beacons: dict = {}
        self._leaders: dict = {}
        self._memo: dict = {}
        self._assembled: dict = {}
        self.replay = ChainReplay(self.index, self.params)
        self._compliance: dict = {}
        self.records: list[dict] = []

        if cfg.adversaries is not None:
            adv = sorted(cfg.adversaries)
        else:
            adv = sorted(random.Random(f"adversaries:{cfg.seed}").sample(range(cfg.n), cfg.f))
        self.adversaries = frozenset(adv)
        self.honest_ids = [i for i in range(cfg.n) if i not in self.adversaries]
        self.coord = build_coordinator(self, adv)
        self.nodes: list[Node] = [self.coord.make_node(i) if i in self.adversaries else Node(i, self)
                                  for i in range(cfg.n)]
        self._situations = self._build_situations()

        # monitors and metrics
        self.violations: list[dict] = []
        self.final_frontier = self.index.genesis.hash
        self.confirmed_at: dict[int, bytes] = {}
        self.confirm_first: dict[bytes, int] = {}
        self.confirm_count: Counter = Counter()
        self.confirm_all: dict[bytes, int] = {}
        self.block_seen: dict[bytes, int] = {}
        self.skips = 0
        self.committee_sizes: list[int] = []
        self.leaders: list[int] = []
        self.mode_false_neg = 0
        self.mode_false_pos = 0
        self.max_fork_depth = 0
        self.max_tree_fork_depth = 0
        self._round_tree = 0
        self.fork_rounds = 0
        self.reorgs = 0
        self.cc_checks = 0
        self.cc_failures = 0
        self.beacon_fallbacks: set[int] = set()
        self.fn_history: list[int] = []
        self._round_fv: dict = defaultdict(list)
        self._round_roles: Counter = Counter()
        self._round_leader: Counter = Counter()
        self._confirm_new: list = []
        self._confirm_done: list = []

    # -- situations ---------------------------------------------------------------
    def _build_situations(self) -> list[Situation]:
        out = []
        for i, w in enumerate(self.cfg.situation_schedule):
            if w.groups:
                groups = {x: gi for gi, g in enumerate(w.groups) for x in g}
                for x in range(self.cfg.n):  # unlisted nodes join the first group
                    groups.setdefault(x, 0)
            else:
                members = self.honest_ids if self.coord.bridges else range(self.cfg.n)
                order = sorted(members, key=lambda x: crypto.hash(
                    struct.pack(">qqq", self.cfg.seed, i, x), b"partition"))
                k = max(1, w.split)
                groups = {x: (j * k) // len(order) for j, x in enumerate(order)}
            if self.coord.bridges:  # the adversary reaches every side
                for a in self.adversaries:
                    groups.pop(a, None)
            out.append(Situation(w, groups, (w.end + 1) * self.T))
        return out

    def situation_at(self, tick: int) -> Situation:
        r = tick // self.T
        for s in self._situations:
            if s.window.start <= r <= s.window.end:
                return s
        return Situation()

    def round_of_tick(self, tick: int) -> int:
        return max(0, (tick - 1) // self.T)

    # -- schedule -------------------------------------------------------------------
    def leader_of(self, beacon: bytes, r: int) -> int:
        fixed = self.cfg.scripted_leaders.get(r)
        if fixed is not None:
            return fixed
        key = (beacon, r)
        got = self._leaders.get(key)
        if got is None:
            got = self._leaders[key] = crypto.map_to_node(crypto.round_input(beacon, r), self.cfg.n)
        return got

    def beacon(self, fn: bytes, epoch: int) -> bytes:
        key = (fn, epoch)
        got = self._beacons.get(key)
        if got is not None:
            return got
        cfg = self.cfg
        idx = self.index

        def lookup(cutoff: int):
            # latest non-genesis block on genesis..fn with round < cutoff
            lo, hi = 1, idx.height[fn]
            best = None
            while lo <= hi:
                mid = (lo + hi) // 2
                h = idx.ancestor_at(fn, mid)
                if idx.blocks[h].round < cutoff:
                    best, lo = h, mid + 1
                else:
                    hi = mid - 1
            return idx.blocks[best] if best is not None else None

        got = crypto.compute_beacon(lookup, epoch, cfg.tau0, cfg.tau1, cfg.epoch_length,
                                    on_fallback=self.beacon_fallbacks.add)
        self._beacons[key] = got
        return got

    # -- transactions ---------------------------------------------------------------
    def tx_valid(self, tx: bytes) -> bool:
        return True

    def txs_for(self, node: Node, r: int, parent: bytes) -> tuple[bytes, ...]:
        cfg = self.cfg
        recent = set()
        cur = parent
        for _ in range(16):
            b = self.index.blocks[cur]
            recent.update(b.txs)
            if b.is_genesis:
                break
            cur = b.parent
        pool = [crypto.hash(struct.pack(">qqq", cfg.seed, rr, i), b"tx")
                for rr in range(max(1, r - 8), r + 1) for i in range(cfg.tx_per_round)]
        pool = [t for t in pool if t not in recent]
        node.state.tx_pool = set(pool)
        return tuple(pool[:cfg.max_block_txs])

    # -- network ----------------------------------------------------------------------
    def _push(self, tick: int, recipients: tuple[int, ...], msg, relay_from: int | None = None) -> None:
        self._seq += 1
        heapq.heappush(self._events, (tick, self._seq, recipients, msg, relay_from))

    def _rng(self, sender: int, tick: int):
        c0 = self._send_counter[(sender, tick)]
        self._send_counter[(sender, tick)] += 1
        seed = self.cfg.seed
        state = {"i": 0}

        def rnd(bound: int) -> int:
            state["i"] += 1
            return draw(seed, b"delay", tick, sender, c0 * 1024 + state["i"], bound)

        def unit() -> float:
            state["i"] += 1
            return draw_unit(seed, b"delay-u", tick, sender, c0 * 1024 + state["i"])

        return rnd, unit

    def send(self, sender: Node, recipients: Iterable[int], msg, tick: int,
             at: int | None = None) -> None:
        """Send ``msg``; self-copies are handled immediately.

        ``at`` pins the delivery tick (adversary scheduling); honest nodes that
        did not get a copy then receive it through gossip within delta.
        """
        recipients = [r for r in recipients]
        if sender.id in recipients:
            recipients.remove(sender.id)
            sender.on_message(msg, tick)
        if not recipients:
            return
        sit = self.situation_at(tick)
        rnd, unit = self._rng(sender.id, tick)
        if at is not None:
            plan = [(r, max(at, tick + 1)) for r in recipients]
        else:
            plan = deliver(sender.id, recipients, tick, sit, self.cfg.delta, rnd, unit)
        by_tick: dict[int, list[int]] = defaultdict(list)
        for r, t in plan:
            by_tick[t].append(r)
        for t in sorted(by_tick):
            self._push(t, tuple(sorted(by_tick[t])), msg)
        if sender.id in self.adversaries:
            self._gossip(sender.id, set(recipients), plan, msg, rnd, unit)

    def _gossip(self, sender: int, got: set[int], plan, msg, rnd, unit) -> None:
        """Honest relays of an adversarial message to the honest nodes it skipped."""
        honest_first = [(t, r) for r, t in plan if r not in self.adversaries]
        if not honest_first:
            return
        t0, first = min(honest_first)
        missing = [h for h in self.honest_ids if h not in got]
        if not missing:
            return
        plan2 = deliver(first, missing, t0, self.situation_at(t0), self.cfg.delta, rnd, unit)
        by_tick: dict[int, list[int]] = defaultdict(list)
        for r, t in plan2:
            by_tick[t].append(r)
        for t in sorted(by_tick):
            self._push(t, tuple(sorted(by_tick[t])), msg)

    def broadcast(self, sender: Node, msg, tick: int, at: int | None = None) -> None:
        self.send(sender, range(self.cfg.n), msg, tick, at)

    def deliver_until(self, tick: int) -> None:
        ev = self._events
        while ev and ev[0][0] <= tick:
            t, _, recipients, msg, _ = heapq.heappop(ev)
            self.tick = t
            for r in recipients:
                self.nodes[r].on_message(msg, t)
        self.tick = tick

    def ping(self, node: Node, proof: bytes, r: int) -> tuple[int, int]:
        cfg = self.cfg
        probed = min(cfg.c, cfg.n - 1)
        sit = self.situation_at(r * self.T)
        if sit.normal and not self.coord.silent(r):
            return probed, probed
        count = 0
        for v in crypto.ping_targets(proof, cfg.n, cfg.c, node.id):
            if v in self.adversaries:
                count += sit.linked(node.id, v) and self.coord.responds(v, node.id, r)
            elif sit.linked(node.id, v):
                count += 1
        return count, probed

    def assemble(self, sm, ce) -> Block:
        """One Block object per (summary, collected endorsement), shared by all nodes."""
        key = (sm.digest, sm.sig, sm.txs, ce.encode())
        b = self._assembled.get(key)
        if b is None:
            b = self._assembled[key] = Block(sm.summary, sm.sig, ce, sm.txs)
        return b

    # -- per-round computation (memoized across identical stores) --------------------
    def compute_round(self, node: Node) -> tuple[bytes, Update]:
        st = node.state
        mode = st.mode
        boundary = st.last_abnormal_round if mode is Mode.NORMAL else None
        lock = st.finality.lock()
        vec = st.finality.vector
        key = (st.store.fingerprint, mode, boundary, vec, lock)
        hit = self._memo.get(key)
        if hit is not None:
            if node.honest:
                self._round_tree = max(self._round_tree, hit[2])
            return hit[:2]
        cands = CandidateSet(st.store, mode, vec.fn, boundary, self.cfg.honest_filter)
        chain = canonical_chain(cands, vec.fn, st.store.arrivals)
        try:
            upd = compute_update(self.index, vec, lock, cands, chain, self.params)
        except SafetyViolation as exc:
            self.violation("fn-fork", str(exc), node=node.id)
            upd = Update(vec, None, ["violation"])
        # deepest branch among the candidates that conflicts with the chosen tip
        idx = self.index
        tree = 0
        for t in cands.tips:
            if t != chain.tip:
                tree = max(tree, min(idx.height[t], idx.height[chain.tip]) - idx.height[idx.lca(t, chain.tip)])
        self._memo[key] = (chain.tip, upd, tree)
        if node.honest:
            self._round_tree = max(self._round_tree, tree)
        return chain.tip, upd

    # -- node callbacks ---------------------------------------------------------------
    def on_settled(self, node: Node, results, r: int) -> None:
        if not node.honest:
            return
        for block, rep in results:
            h = block.hash
            if h in self.block_seen:
                continue
            self.block_seen[h] = r
            rec = {"k": "block", "r": r, "h": short(h), "p": short(block.parent), "round": block.round,
                   "leader": block.leader, "height": self.index.height.get(h, -1), "status": rep.status}
            if rep.ok:
                rec["honest"] = h in node.store.honest
            self.records.append(rec)

    def on_mode_change(self, node: Node, old: Mode, r: int) -> None:
        pass

    def on_update(self, node: Node, old, upd: Update, r: int) -> None:
        new = upd.vector
        if node.honest and (new != old or upd.fired):
            self._round_fv[(old, new, tuple(upd.fired))].append(node.id)
        if not node.honest or new.fn == old.fn:
            return
        idx = self.index
        fr = self.final_frontier
        if idx.conflicts(new.fn, fr):
            self.violation("fn-conflict", f"{short(new.fn)} conflicts with {short(fr)}", node=node.id)
        elif idx.is_ancestor(fr, new.fn):
            self.final_frontier = new.fn
        key = (node.chain.tip, new.fn)
        if key not in self._compliance:
            self.cc_checks += 1
            try:
                ok = self.replay.finalizes(node.chain.tip, new.fn)
            except SafetyViolation:
                ok = False
            self._compliance[key] = ok
            if not ok:
                self.cc_failures += 1
                self.records.append({"k": "cc-fail", "r": r, "tip": short(node.chain.tip), "fn": short(new.fn)})

    def on_roles(self, node: Node, info) -> None:
        if Role.COMMITTEE in info.roles:
            self._round_roles["committee"] += 1
        if node.honest:
            self._round_leader[info.leader] += 1

    def on_confirm(self, node: Node, fresh: list[bytes], r: int) -> None:
        if not node.honest:
            return
        idx = self.index
        n_honest = len(self.honest_ids)
        for h in fresh:
            height = idx.height[h]
            prev = self.confirmed_at.get(height)
            if prev is None:
                self.confirmed_at[height] = h
            elif prev != h:
                self.violation("confirm-conflict", f"height {height}: {short(prev)} vs {short(h)}", node=node.id)
            if h not in self.confirm_first:
                self.confirm_first[h] = r
                self._confirm_new.append(h)
            self.confirm_count[h] += 1
            if self.confirm_count[h] == n_honest:
                self.confirm_all[h] = r
                self._confirm_done.append(h)

    def on_confirm_reorg(self, node: Node, old: bytes, new: bytes, r: int) -> None:
        if node.honest:
            self.records.append({"k": "confirm-reorg", "r": r, "node": node.id,
                                 "old": short(old), "new": short(new)})

    def on_skip(self, node: Node, r: int, got: int) -> None:
        self.skips += 1
        self.records.append({"k": "skip", "r": r, "leader": node.id, "got": got})

    def note(self, node: Node, what: str, r: int, **kw) -> None:
        if self.cfg.trace_level == "full":
            self.records.append({"k": what, "r": r, "node": node.id, **kw})

    def adversary_event(self, what: str, r: int, **kw) -> None:
        self.records.append({"k": "adv", "what": what, "r": r, **kw})

    def violation(self, what: str, detail: str, **kw) -> None:
        rec = {"k": "violation", "r": self.round, "what": what, "detail": detail, **kw}
        self.violations.append(rec)
        self.records.append(rec)
        if self.cfg.strict_finality:
            raise SafetyViolation(detail)

    # -- round bookkeeping --------------------------------------------------------------
    def _flush_round(self, r: int) -> None:
        idx = self.index
        honest = [self.nodes[i] for i in self.honest_ids]
        for (old, new, fired), ids in sorted(self._round_fv.items(), key=lambda kv: kv[1][0]):
            if new == old and self.cfg.trace_level != "full":
                continue
            rec = {"k": "fv", "r": r, "n": len(ids), "old": old.describe(), "new": new.describe(),
                   "rules": list(fired)}
            if len(ids) != len(honest):
                rec["nodes"] = ids
            self.records.append(rec)
        self._round_fv.clear()

        tips = Counter(n.chain.tip for n in honest)
        fns = Counter(n.vector.fn for n in honest)
        abn = sum(1 for n in honest if n.mode is Mode.ABNORMAL)
        sit = self.situation_at(r * self.T)
        if sit.normal:
            self.mode_false_pos += abn
        else:
            self.mode_false_neg += len(honest) - abn
        depth = 0
        distinct = list(tips)
        if len(distinct) > 1:
            self.fork_rounds += 1
            for i, a in enumerate(distinct):
                for b in distinct[i + 1:]:
                    base = idx.height[idx.lca(a, b)]
                    depth = max(depth, min(idx.height[a], idx.height[b]) - base)
        for n in honest:
            prev = getattr(n, "_prev_tip", None)
            if prev is not None and not idx.is_ancestor(prev, n.chain.tip):
                self.reorgs += 1
                depth = max(depth, idx.height[prev] - idx.height[idx.lca(prev, n.chain.tip)])
            n._prev_tip = n.chain.tip
        self.max_fork_depth = max(self.max_fork_depth, depth)
        tree, self._round_tree = self._round_tree, 0
        self.max_tree_fork_depth = max(self.max_tree_fork_depth, tree)
        fn_h = min(idx.height[h] for h in fns)
        self.fn_history.append(fn_h)
        committee = self._round_roles["committee"]
        self.committee_sizes.append(committee)
        leader = self._round_leader.most_common(1)[0][0] if self._round_leader else -1
        self.leaders.append(leader)
        rec = {"k": "round", "r": r, "sit": "N" if sit.normal else "A", "leader": leader,
               "committee": committee, "abn": abn, "fork": depth, "tree": tree,
               "tips": [[short(h), idx.height[h], c] for h, c in sorted(tips.items(), key=lambda kv: (-kv[1], kv[0]))],
               "fn": [[short(h), idx.height[h], c] for h, c in sorted(fns.items(), key=lambda kv: (-kv[1], kv[0]))]}
        self.records.append(rec)
        if self._confirm_new or self._confirm_done:
            self.records.append({"k": "confirm", "r": r,
                                 "first": [[idx.height[h], short(h), idx.blocks[h].round] for h in self._confirm_new],
                                 "all": [[idx.height[h], short(h)] for h in self._confirm_done]})
            self._confirm_new = []
            self._confirm_done = []
        self._round_roles.clear()
        self._round_leader.clear()

    # -- main loop ---------------------------------------------------------------------
    def run(self) -> Trace:
        cfg = self.cfg
        T = self.T
        collect_at = T - cfg.delta
        for r in range(1, cfg.rounds + 1):
            self.round = r
            t0 = r * T
            self.deliver_until(t0)
            self._memo.clear()
            for node in self.nodes:
                node.start_round(r)
            self.coord.after_start(r)
            self._flush_round(r)
            self.deliver_until(t0 + cfg.endorse_tick)
            for node in self.nodes:
                node.endorse_phase(r)
            self.coord.after_endorse(r)
            self.deliver_until(t0 + collect_at)
            for node in self.nodes:
                node.collect_phase(r)
            self.coord.after_collect(r)
        self.deliver_until((cfg.rounds + 1) * T)
        return Trace(self.header(), self.records, self.summary())

    def header(self) -> dict:
        cfg = self.cfg
        return {"version": __version__, "config": cfg.to_dict(), "config_hash": cfg.digest(),
                "keys": self.registry.header(), "adversaries": sorted(self.adversaries)}

    def summary(self) -> dict:
        idx = self.index
        honest = [self.nodes[i] for i in self.honest_ids]
        suspicious = set()
        for n in honest:
            suspicious.update(h for h in n.store.suspicion if h in n.store.valid)
        tip_heights = [idx.height[n.chain.tip] for n in honest]
        return {
            "rounds": self.cfg.rounds,
            "blocks": len(self.block_seen),
            "max_height": max(tip_heights) if tip_heights else 0,
            "fn_height": self.fn_history[-1] if self.fn_history else 0,
            "suspicious_blocks": len(suspicious),
            "skips": self.skips,
            "violations": len(self.violations),
            "max_fork_depth": self.max_fork_depth,
            "max_tree_fork_depth": self.max_tree_fork_depth,
            "fork_rounds": self.fork_rounds,
            "reorgs": self.reorgs,
            "confirmed_heights": len(self.confirmed_at),
            "cc_checks": self.cc_checks,
            "cc_failures": self.cc_failures,
            "mode_false_negatives": self.mode_false_neg,
            "mode_false_positives": self.mode_false_pos,
            "beacon_fallbacks": sorted(self.beacon_fallbacks),
            "mean_committee": (sum(self.committee_sizes) / len(self.committee_sizes)) if self.committee_sizes else 0.0,
        }


def run_scenario(cfg: ScenarioConfig) -> Trace:
    return World(cfg).run()


def run_world(cfg: ScenarioConfig) -> World:
    """Like ``run_scenario`` but hands back the world for inspection."""
    w = World(cfg)
    w.trace = w.run()
    return w
