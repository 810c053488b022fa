"""One node's round driver: roles, leader and committee procedures, mode, confirmations.

A node talks to the rest of the scenario only through the ``world`` object
handed to it (see ``cebft.sim.World``): sending, the shared block index, the
beacon/leader schedule and the per-round memo used to avoid recomputing the
same finality update for nodes whose stores are identical.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

from . import crypto
from .finality import FinalityState
from .ledger import BlockStore, Chain, ValidationContext
from .types import (NULL_HASH, BlockSummary, CollectedEndorsement,
                    Endorsement, Mode, Role, TxId, epoch_of, merkle_root)

if TYPE_CHECKING:  # pragma: no cover
    from .sim import World

log = logging.getLogger(__name__)


# -- messages -----------------------------------------------------------------

@dataclass(frozen=True)
class SummaryMsg:
    summary: BlockSummary
    sig: bytes
    txs: tuple[TxId, ...]
    kind = "summary"

    @property
    def digest(self) -> bytes:
        return self.summary.digest


@dataclass(frozen=True)
class EndorseMsg:
    digest: bytes
    endorsement: Endorsement
    kind = "endorse"


@dataclass(frozen=True)
class CollectedMsg:
    digest: bytes
    ce: CollectedEndorsement
    kind = "collected"


Message = SummaryMsg | EndorseMsg | CollectedMsg


@dataclass
class RoundInfo:
    round: int
    beacon: bytes
    leader: int
    vrf: crypto.VrfOutput
    roles: frozenset[Role]


@dataclass
class NodeState:
    id: int
    keys: crypto.KeyPair
    store: BlockStore
    finality: FinalityState
    mode: Mode = Mode.NORMAL
    cnx_history: deque = field(default_factory=deque)
    last_abnormal_round: int | None = None
    tx_pool: set = field(default_factory=set)


def mode_from_history(history, window: int) -> Mode:
    """Normal iff the last ``window`` verdicts are all normal (short history: all seen)."""
    recent = list(history)[-window:]
    return Mode.NORMAL if all(recent) else Mode.ABNORMAL


def ping_verdict(responders: int, probed: int, n: int, f: int) -> bool:
    """cnx(r) is normal iff more than probed*(n-f)/n peers answered.

    With f = 0 that bound equals ``probed``, so a full answer also counts.
    """
    return responders * n > probed * (n - f) or (probed > 0 and responders == probed)


def determine_role(registry: crypto.KeyRegistry, keys: crypto.KeyPair, beacon: bytes, round_: int,
                   n: int, c: int, leader: int) -> tuple[frozenset[Role], crypto.VrfOutput]:
    out = registry.vrf_eval(keys.sk, crypto.round_input(beacon, round_))
    roles = set()
    if leader == keys.node:
        roles.add(Role.LEADER)
    if crypto.as_fraction_leq(crypto.hash(out.beta, crypto.DOMAIN_COMMITTEE), c, n):
        roles.add(Role.COMMITTEE)
    if not roles:
        roles.add(Role.OBSERVER)
    return frozenset(roles), out


class Node:
    """Honest protocol participant. Adversaries subclass and override the phase hooks."""

    honest = True

    def __init__(self, node_id: int, world: "World") -> None:
        cfg = world.cfg
        self.world = world
        self.cfg = cfg
        self.id = node_id
        reg = world.registry
        self.state = NodeState(
            id=node_id,
            keys=reg.keypair(node_id),
            store=BlockStore(world.index, cfg.orphan_ttl, cfg.honest_filter),
            finality=FinalityState.initial(world.index.genesis.hash),
            cnx_history=deque(maxlen=cfg.mode_window),
        )
        self.ctx = ValidationContext(
            registry=reg, n=cfg.n, c=cfg.c, d=cfg.d, epoch_length=cfg.epoch_length,
            beacon_for=self.beacon_for, leader_of=world.leader_of,
            tx_valid=world.tx_valid, cache=world.validation_cache)
        self.chain = Chain(world.index, world.index.genesis.hash)
        self.round = 0
        self.info: RoundInfo | None = None
        self.summaries: dict[bytes, SummaryMsg] = {}
        self.summaries_by_round: dict[int, dict[bytes, SummaryMsg]] = {}
        self.collected: dict[bytes, CollectedEndorsement] = {}
        self.round_summaries: dict[bytes, SummaryMsg] = {}
        self.my_summary: SummaryMsg | None = None
        self.endorsements: list[Endorsement] = []
        self.confirmed_tip = world.index.genesis.hash

    # -- convenience --------------------------------------------------------
    @property
    def store(self) -> BlockStore:
        return self.state.store

    @property
    def vector(self):
        return self.state.finality.vector

    @property
    def mode(self) -> Mode:
        return self.state.mode

    def beacon_for(self, epoch: int) -> bytes:
        return self.world.beacon(self.vector.fn, epoch)

    def _vrf(self, beacon: bytes, round_: int) -> crypto.VrfOutput:
        return self.world.registry.vrf_eval(self.state.keys.sk, crypto.round_input(beacon, round_))

    # -- round start ----------------------------------------------------------
    def start_round(self, r: int) -> None:
        """Round body up to role determination, then the leader broadcast."""
        w = self.world
        cfg = self.cfg
        self.round = r
        self.round_summaries = dict(self.summaries_by_round.pop(r, {}))
        self.summaries_by_round.pop(r - 1, None)
        self.my_summary = None
        self.endorsements = []
        w.on_settled(self, self.store.retry_pending(r, self.ctx), r)

        # mode, probed with this round's proof under the beacon we currently hold
        epoch = epoch_of(r, cfg.epoch_length)
        proof = self._vrf(self.beacon_for(epoch), r).proof
        responders, probed = w.ping(self, proof, r)
        verdict = ping_verdict(responders, probed, cfg.n, cfg.f)
        st = self.state
        st.cnx_history.append(verdict)
        old_mode = st.mode
        st.mode = mode_from_history(st.cnx_history, cfg.mode_window)
        if st.mode is Mode.ABNORMAL:
            st.last_abnormal_round = r
        if st.mode is not old_mode:
            w.on_mode_change(self, old_mode, r)

        # candidates, canonical chain, finality
        old = st.finality.vector
        tip, upd = w.compute_round(self)
        self.chain = Chain(w.index, tip)
        st.finality = replace(st.finality, vector=upd.vector).end_round(r)
        w.on_update(self, old, upd, r)

        # roles
        beacon = self.beacon_for(epoch)
        leader = w.leader_of(beacon, r)
        roles, vrf = determine_role(w.registry, st.keys, beacon, r, cfg.n, cfg.c, leader)
        self.info = RoundInfo(r, beacon, leader, vrf, roles)
        w.on_roles(self, self.info)

        self.update_confirmations(r)
        if Role.LEADER in roles:
            self.lead(r)

    def update_confirmations(self, r: int) -> None:
        idx = self.world.index
        target = self.vector.fn
        if self.mode is Mode.NORMAL:
            h = idx.height[self.chain.tip] - self.cfg.confirm_depth
            if h > idx.height[target]:
                target = idx.ancestor_at(self.chain.tip, h)
        old = self.confirmed_tip
        if target == old or idx.is_ancestor(target, old):
            return
        if idx.is_ancestor(old, target):
            base = old
        else:
            self.world.on_confirm_reorg(self, old, target, r)
            base = idx.lca(old, target)
        fresh = []
        cur = target
        while cur != base:
            fresh.append(cur)
            cur = idx.blocks[cur].parent
        fresh.reverse()
        self.confirmed_tip = target
        self.world.on_confirm(self, fresh, r)

    # -- leader ---------------------------------------------------------------
    def build_summary(self, r: int, parent: bytes | None = None) -> SummaryMsg:
        cfg = self.cfg
        parent = self.chain.tip if parent is None else parent
        txs = self.world.txs_for(self, r, parent)
        summary = BlockSummary(parent, epoch_of(r, cfg.epoch_length), r, merkle_root(txs),
                               self.vector.pruned(), self.id)
        sig = self.world.registry.sign(self.state.keys.sk, summary.encode())
        return SummaryMsg(summary, sig, txs)

    def lead(self, r: int) -> None:
        msg = self.build_summary(r)
        self.state.finality = self.state.finality.record_send(r)
        self.my_summary = msg
        self.world.broadcast(self, msg, self.world.tick)

    # -- committee ------------------------------------------------------------
    def check_summary(self, msg: SummaryMsg) -> str | None:
        """Reason the summary fails the committee checks, or None when it passes."""
        s = msg.summary
        info = self.info
        if s.leader != info.leader:
            return "leader"
        if s.round != self.round or s.epoch != epoch_of(self.round, self.cfg.epoch_length):
            return "round"
        if s.parent_link != self.chain.tip:
            return "parent"
        if s.pruned_finality != self.vector.pruned():
            return "finality"
        if not self.world.registry.verify(self.world.registry.pk(s.leader), s.encode(), msg.sig):
            return "signature"
        if merkle_root(msg.txs) != s.tx_merkle_root:
            return "merkle"
        return None

    def endorse_phase(self, r: int) -> None:
        info = self.info
        if info is None or Role.COMMITTEE not in info.roles:
            return
        mine = [m for m in self.round_summaries.values() if m.summary.leader == info.leader]
        if len(mine) != 1:
            if mine:
                self.world.note(self, "refuse-endorse", r, reason="multiple summaries")
            return
        msg = mine[0]
        why = self.check_summary(msg)
        if why is not None:
            self.world.note(self, "refuse-endorse", r, reason=why)
            return
        self.send_endorsement(msg, r)

    def endorsement_for(self, msg: SummaryMsg) -> Endorsement:
        reg = self.world.registry
        return Endorsement(self.id, self.info.vrf.proof, reg.sign(self.state.keys.sk, msg.summary.encode()))

    def send_endorsement(self, msg: SummaryMsg, r: int) -> None:
        e = self.endorsement_for(msg)
        self.state.finality = self.state.finality.record_send(r)
        self.world.send(self, [msg.summary.leader], EndorseMsg(msg.digest, e), self.world.tick)

    # -- collection -------------------------------------------------------------
    def verified_endorsements(self, msg: SummaryMsg, pool: list[Endorsement]) -> list[Endorsement]:
        """First d verifying endorsements by arrival order, sorted by endorser key."""
        reg = self.world.registry
        cfg = self.cfg
        s = msg.summary
        raw = s.encode()
        beacon = self.beacon_for(s.epoch)
        seen, good = set(), []
        for e in pool:
            if e.endorser in seen or not 0 <= e.endorser < cfg.n:
                continue
            pk = reg.pk(e.endorser)
            if not reg.verify(pk, raw, e.summary_sig):
                continue
            if not crypto.committee_member(reg, pk, beacon, s.round, e.vrf_proof, cfg.c, cfg.n):
                continue
            seen.add(e.endorser)
            good.append(e)
            if len(good) == cfg.d:
                break
        good.sort(key=lambda e: reg.pk(e.endorser))
        return good

    def collect(self, msg: SummaryMsg, pool: list[Endorsement]) -> CollectedMsg | None:
        good = self.verified_endorsements(msg, pool)
        if len(good) < self.cfg.d:
            return None
        ce = CollectedEndorsement(tuple(good), b"")
        sig = self.world.registry.sign(self.state.keys.sk, ce.payload())
        return CollectedMsg(msg.digest, CollectedEndorsement(ce.entries, sig))

    def collect_phase(self, r: int) -> None:
        if self.my_summary is None:
            return
        out = self.collect(self.my_summary, self.endorsements)
        if out is None:
            self.world.on_skip(self, r, len(self.verified_endorsements(self.my_summary, self.endorsements)))
            return
        self.world.broadcast(self, out, self.world.tick)

    # -- inbox ----------------------------------------------------------------
    def on_message(self, msg, tick: int) -> None:
        if isinstance(msg, SummaryMsg):
            self.on_summary(msg, tick)
        elif isinstance(msg, EndorseMsg):
            self.on_endorse(msg)
        elif isinstance(msg, CollectedMsg):
            self.on_collected(msg, tick)

    def on_summary(self, msg: SummaryMsg, tick: int) -> None:
        s = msg.summary
        reg = self.world.registry
        if not 0 <= s.leader < self.cfg.n or not reg.verify(reg.pk(s.leader), s.encode(), msg.sig):
            return
        d = msg.digest
        if d in self.summaries:
            return
        self.summaries[d] = msg
        self.store.note_summary(s.leader, s.round, d)
        if s.round == self.round:
            self.round_summaries[d] = msg
        elif s.round > self.round:
            self.summaries_by_round.setdefault(s.round, {})[d] = msg
        if d in self.collected:
            self.assemble(d, tick)

    def on_endorse(self, msg: EndorseMsg) -> None:
        if self.my_summary is not None and msg.digest == self.my_summary.digest:
            self.endorsements.append(msg.endorsement)

    def on_collected(self, msg: CollectedMsg, tick: int) -> None:
        if msg.digest in self.collected:
            return
        self.collected[msg.digest] = msg.ce
        if msg.digest in self.summaries:
            self.assemble(msg.digest, tick)

    def assemble(self, digest: bytes, tick: int) -> None:
        block = self.world.assemble(self.summaries[digest], self.collected[digest])
        r = self.world.round_of_tick(tick)
        self.world.on_settled(self, self.store.receive(block, r, self.ctx), r)

    def describe(self) -> dict:
        v = self.vector
        return {"id": self.id, "mode": self.mode.value, "tip": self.chain.tip.hex()[:16],
                "vector": v.describe(), "null": v.pc == NULL_HASH}
