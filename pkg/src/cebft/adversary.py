"""Byzantine strategies, driven through the same message interface as honest nodes.

Each strategy is a coordinator holding the f adversarial nodes (shared keys,
shared memory: the strongest collusion the model allows) plus a Node subclass
that overrides the phase hooks. Coordinators see what their own nodes received
and nothing of honest nodes' private state; the only honest-side facts they
use are public ones (partition membership during windows they control).
"""

from __future__ import annotations

import logging
from collections import defaultdict
from typing import TYPE_CHECKING

from . import crypto
from .node import CollectedMsg, EndorseMsg, Node, SummaryMsg
from .types import BlockSummary, Role, merkle_root

if TYPE_CHECKING:  # pragma: no cover
    from .sim import World

log = logging.getLogger(__name__)


class AdversaryNode(Node):
    honest = False

    def __init__(self, node_id: int, world: "World", coord: "Coordinator") -> None:
        super().__init__(node_id, world)
        self.coord = coord


class Coordinator:
    """HonestBehavior: adversarial nodes that follow the protocol."""

    name = "honest"
    node_cls = AdversaryNode
    bridges = False  # sit outside every partition group, linked to all sides

    def __init__(self, world: "World", ids: list[int], params: dict | None = None) -> None:
        self.world = world
        self.ids = frozenset(ids)
        self.params = dict(params or {})
        self.actions: dict[int, list[dict]] = defaultdict(list)

    def make_node(self, i: int) -> Node:
        return self.node_cls(i, self.world, self)

    def node(self, i: int) -> AdversaryNode:
        return self.world.nodes[i]

    def silent(self, r: int) -> bool:
        return bool(self.params.get("silent_pings", False))

    def responds(self, v: int, u: int, r: int) -> bool:
        return not self.silent(r)

    def act(self, r: int, what: str, **kw) -> None:
        rec = {"what": what, **kw}
        self.actions[r].append(rec)
        self.world.adversary_event(what, r, **kw)

    def after_start(self, r: int) -> None:
        pass

    def after_endorse(self, r: int) -> None:
        pass

    def after_collect(self, r: int) -> None:
        pass


def adversary_step(coord: Coordinator, r: int) -> list[dict]:
    """The actions the coordinator took in round r (sends, withholdings, releases)."""
    return list(coord.actions.get(r, ()))


# -- equivocation: colliding leader and partition collusion ------------------------

class EquivocatingNode(AdversaryNode):
    """Leads with two conflicting summaries; colluders endorse both."""

    def twin(self, msg: SummaryMsg, r: int) -> SummaryMsg:
        s = msg.summary
        txs = (crypto.hash(b"twin" + s.encode(), b"tx"),)
        alt = BlockSummary(s.parent_link, s.epoch, s.round, merkle_root(txs), s.pruned_finality, s.leader)
        return SummaryMsg(alt, self.world.registry.sign(self.state.keys.sk, alt.encode()), txs)

    def sides(self, r: int) -> list[list[int]] | None:
        """Recipient lists for the two summaries, or None to lead honestly."""
        raise NotImplementedError

    def lead(self, r: int) -> None:
        sides = self.sides(r)
        if sides is None:
            return super().lead(r)
        a = self.build_summary(r)
        b = self.twin(a, r)
        self.state.finality = self.state.finality.record_send(r)
        self.my_summary = a
        self.twins = [a, b]
        self.pools = {a.digest: [], b.digest: []}
        self.twin_sides = sides
        ours = sorted(self.coord.ids)
        for msg, side in zip(self.twins, sides):
            self.world.send(self, sorted(set(side) | set(ours)), msg, self.world.tick)
        self.coord.act(r, "equivocate", leader=self.id)

    def on_endorse(self, msg: EndorseMsg) -> None:
        pools = getattr(self, "pools", None)
        if pools and msg.digest in pools and self.round == self.info.round:
            pools[msg.digest].append(msg.endorsement)
        else:
            super().on_endorse(msg)

    def endorse_phase(self, r: int) -> None:
        info = self.info
        if info is None or info.leader not in self.coord.ids or not self.coord.colluding(r):
            return super().endorse_phase(r)
        if Role.COMMITTEE not in info.roles:
            return
        for msg in list(self.round_summaries.values()):
            if msg.summary.leader == info.leader:
                e = self.endorsement_for(msg)
                self.world.send(self, [info.leader], EndorseMsg(msg.digest, e), self.world.tick)

    def collect_phase(self, r: int) -> None:
        twins = getattr(self, "twins", None)
        if not twins or twins[0].summary.round != r:
            return super().collect_phase(r)
        built = 0
        for msg, side in zip(twins, self.twin_sides):
            out = self.collect(msg, self.pools[msg.digest])
            if out is None:
                continue
            built += 1
            self.release(msg, out, side, r)
        self.coord.act(r, "twin-blocks", leader=self.id, built=built)
        self.twins = []


class CollidingNode(EquivocatingNode):
    def sides(self, r: int) -> list[list[int]]:
        honest = self.world.honest_ids
        return [honest[0::2], honest[1::2]]

    def release(self, msg: SummaryMsg, out: CollectedMsg, side: list[int], r: int) -> None:
        # both blocks go to everyone at the very end of the round
        end = (r + 1) * self.world.T
        self.world.broadcast(self, msg, self.world.tick, at=end)
        self.world.broadcast(self, out, self.world.tick, at=end)


class CollidingCoordinator(Coordinator):
    name = "colliding"
    node_cls = CollidingNode

    def colluding(self, r: int) -> bool:
        return True


class PartitionNode(EquivocatingNode):
    def sides(self, r: int) -> list[list[int]] | None:
        sit = self.world.situation_at(self.world.tick)
        if sit.normal or sit.groups is None:
            return None
        a = [x for x, g in sorted(sit.groups.items()) if g % 2 == 0]
        b = [x for x, g in sorted(sit.groups.items()) if g % 2 == 1]
        if not a or not b:
            return None
        return [a, b]

    def release(self, msg: SummaryMsg, out: CollectedMsg, side: list[int], r: int) -> None:
        self.world.send(self, side, out, self.world.tick)


class PartitionCoordinator(Coordinator):
    name = "partition-collusion"
    node_cls = PartitionNode
    bridges = True

    def colluding(self, r: int) -> bool:
        return not self.world.situation_at(r * self.world.T).normal


# -- fraudulent delay ---------------------------------------------------------------

class DelayNode(AdversaryNode):
    def collect_phase(self, r: int) -> None:
        if self.my_summary is None:
            return
        out = self.collect(self.my_summary, self.endorsements)
        if out is None:
            self.world.on_skip(self, r, len(self.verified_endorsements(self.my_summary, self.endorsements)))
            return
        self.coord.withhold(self, out, r)


class DelayCoordinator(Coordinator):
    """Adversarial leaders build honestly but hold back their collected endorsement.

    A held block is released once the next adversarial leader has published
    its own summary (so that leader extends the public tip, not the held
    block), or after ``max_hold`` rounds. Successive adversarial leaders thus
    alternate between two branches, each release arriving one round late.
    """

    name = "fraudulent-delay"
    node_cls = DelayNode

    def __init__(self, world, ids, params=None) -> None:
        super().__init__(world, ids, params)
        self.max_hold = int(self.params.get("max_hold", 1))
        self.held: list[tuple[int, AdversaryNode, CollectedMsg]] = []

    def withhold(self, node: AdversaryNode, out: CollectedMsg, r: int) -> None:
        self.held.append((r, node, out))
        self.act(r, "withhold", leader=node.id)

    def after_start(self, r: int) -> None:
        adv_leads = any(n.info and Role.LEADER in n.info.roles for n in (self.node(i) for i in self.ids))
        keep = []
        for held_r, node, out in self.held:
            if (adv_leads and held_r < r) or r - held_r >= self.max_hold:
                self.world.broadcast(node, out, self.world.tick)
                self.act(r, "release", leader=node.id, held_round=held_r)
            else:
                keep.append((held_r, node, out))
        self.held = keep


STRATEGY_CLASSES = {
    "honest": Coordinator,
    "colliding": CollidingCoordinator,
    "fraudulent-delay": DelayCoordinator,
    "partition-collusion": PartitionCoordinator,
}


def build_coordinator(world: "World", ids: list[int]) -> Coordinator:
    spec = world.cfg.adversary
    return STRATEGY_CLASSES[spec.strategy](world, ids, spec.params)
