"""Per-node block bookkeeping.

``BlockIndex`` holds structural facts about blocks (heights, ancestry jump
pointers, signer sets, vote postings). Those facts are pure functions of block
contents, so one index can back every store in a scenario. ``BlockStore`` is
the per-node part: what the node received, when, and how it classified it.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

from . import crypto
from .types import (GENESIS, NULL_HASH, Block, BlockHash, Mode, epoch_of,
                    merkle_root, short)

log = logging.getLogger(__name__)

VOTE_TYPES = ("nv", "pp", "pc", "cm")


class LedgerError(RuntimeError):
    """Unresolvable reference; indicates a bookkeeping bug."""


class BlockIndex:
    def __init__(self, genesis: Block = GENESIS) -> None:
        self.genesis = genesis
        self.blocks: dict[BlockHash, Block] = {}
        self.height: dict[BlockHash, int] = {}
        self.children: dict[BlockHash, list[BlockHash]] = {}
        self.signers: dict[BlockHash, frozenset[int]] = {}
        self._jumps: dict[BlockHash, list[BlockHash]] = {}
        # (tp, view, target) -> blocks B with nv(B)=view and tp(B)=target
        self.votes: dict[tuple[str, bytes, bytes], list[BlockHash]] = {}
        # (tp, target) -> blocks B with tp(B)=target
        self.votes_any: dict[tuple[str, bytes], list[BlockHash]] = {}
        # view -> tp -> target -> blocks
        self.by_view: dict[bytes, dict[str, dict[bytes, list[BlockHash]]]] = {}
        self._insert(genesis, 0, [])

    def __contains__(self, h: object) -> bool:
        return h in self.blocks

    def add(self, block: Block) -> bool:
        """Insert once the parent is indexed; returns False if the parent is unknown."""
        h = block.hash
        if h in self.blocks:
            return True
        parent = block.parent
        if parent not in self.blocks:
            return False
        jumps = [parent]
        k = 0
        while True:
            prev = self._jumps[jumps[k]]
            if len(prev) <= k:
                break
            jumps.append(prev[k])
            k += 1
        self._insert(block, self.height[parent] + 1, jumps)
        self.children[parent].append(h)
        return True

    def _insert(self, block: Block, height: int, jumps: list[BlockHash]) -> None:
        h = block.hash
        self.blocks[h] = block
        self.height[h] = height
        self.children[h] = []
        self._jumps[h] = jumps
        signers = block.signers()
        self.signers[h] = signers
        if block.is_genesis:
            return
        v = block.vector
        for tp, target in zip(VOTE_TYPES, v.as_tuple()):
            self.votes.setdefault((tp, v.nv, target), []).append(h)
            self.votes_any.setdefault((tp, target), []).append(h)
            self.by_view.setdefault(v.nv, {}).setdefault(tp, {}).setdefault(target, []).append(h)

    def get(self, h: BlockHash) -> Block:
        try:
            return self.blocks[h]
        except KeyError:
            raise LedgerError(f"unknown block {short(h)}") from None

    def round_of(self, h: BlockHash) -> int:
        if h == NULL_HASH:
            return -1
        return self.get(h).round

    def ancestor_at(self, h: BlockHash, height: int) -> BlockHash | None:
        cur_h = self.height[h]
        if height > cur_h or height < 0:
            return None
        diff = cur_h - height
        k = 0
        while diff:
            if diff & 1:
                h = self._jumps[h][k]
            diff >>= 1
            k += 1
        return h

    def is_ancestor(self, a: BlockHash, b: BlockHash) -> bool:
        """a is b or an ancestor of b. The null marker is nobody's ancestor."""
        if a == NULL_HASH or b == NULL_HASH:
            return False
        ha = self.height.get(a)
        hb = self.height.get(b)
        if ha is None or hb is None:
            raise LedgerError("ancestry query on unindexed block")
        if ha > hb:
            return False
        return self.ancestor_at(b, ha) == a

    def conflicts(self, a: BlockHash, b: BlockHash) -> bool:
        """a ⊥ b; b0 conflicts with nothing."""
        if a == NULL_HASH or b == NULL_HASH:
            return False
        return not (self.is_ancestor(a, b) or self.is_ancestor(b, a))

    def compatible(self, a: BlockHash, b: BlockHash) -> bool:
        """a ~ b."""
        return not self.conflicts(a, b)

    def chain(self, tip: BlockHash) -> list[BlockHash]:
        out = []
        h: BlockHash | None = tip
        while True:
            out.append(h)
            if h == self.genesis.hash:
                break
            h = self.blocks[h].parent
        out.reverse()
        return out

    def lca(self, a: BlockHash, b: BlockHash) -> BlockHash:
        ha, hb = self.height[a], self.height[b]
        if ha > hb:
            a = self.ancestor_at(a, hb)
        elif hb > ha:
            b = self.ancestor_at(b, ha)
        if a == b:
            return a
        lo, hi = 0, min(ha, hb)
        # binary search the deepest common height
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self.ancestor_at(a, mid) == self.ancestor_at(b, mid):
                lo = mid
            else:
                hi = mid - 1
        return self.ancestor_at(a, lo)


# ---------------------------------------------------------------------------
# counting


def count_messages(index: BlockIndex, scope, target: BlockHash, tp: str,
                   view: BlockHash | None = None) -> int:
    """Distinct leaders/endorsers across blocks B in scope with tp(B)=target
    (and nv(B)=view when given). ``scope`` needs only ``__contains__``."""
    if view is None:
        posted = index.votes_any.get((tp, target), ())
    else:
        posted = index.votes.get((tp, view, target), ())
    ids: set[int] = set()
    for h in posted:
        if h in scope:
            ids |= index.signers[h]
    return len(ids)


def has_message(index: BlockIndex, scope, target: BlockHash, tp: str, view: BlockHash) -> bool:
    for h in index.votes.get((tp, view, target), ()):
        if h in scope:
            return True
    return False


# ---------------------------------------------------------------------------
# chains and candidate sets


class Chain:
    """A chain identified by its tip; membership is ancestry."""

    __slots__ = ("index", "tip")

    def __init__(self, index: BlockIndex, tip: BlockHash) -> None:
        self.index = index
        self.tip = tip

    def __contains__(self, h: object) -> bool:
        return isinstance(h, bytes) and h in self.index.height and self.index.is_ancestor(h, self.tip)

    def __len__(self) -> int:
        return self.index.height[self.tip] + 1

    def __iter__(self) -> Iterator[BlockHash]:
        return iter(self.index.chain(self.tip))

    def blocks(self) -> list[Block]:
        return [self.index.blocks[h] for h in self.index.chain(self.tip)]

    @property
    def tip_block(self) -> Block:
        return self.index.blocks[self.tip]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Chain) and other.tip == self.tip

    def __hash__(self) -> int:
        return hash(self.tip)

    def __repr__(self) -> str:
        return f"Chain(len={len(self)}, tip={short(self.tip)})"


class CandidateView:
    """Common surface of candidate sets consumed by the canonical-chain and
    finality code: membership, the fn-rooted candidate subtree, and its tips."""

    index: BlockIndex
    fn: BlockHash

    def __contains__(self, h: object) -> bool:  # pragma: no cover - interface
        raise NotImplementedError

    @property
    def subtree(self) -> list[BlockHash]:
        cached = getattr(self, "_subtree", None)
        if cached is None:
            out = [self.fn]
            stack = [self.fn]
            children = self.index.children
            while stack:
                h = stack.pop()
                for ch in children.get(h, ()):
                    if ch in self:
                        out.append(ch)
                        stack.append(ch)
            self._subtree = cached = out
        return cached

    @property
    def tips(self) -> list[BlockHash]:
        cached = getattr(self, "_tips", None)
        if cached is None:
            members = set(self.subtree)
            children = self.index.children
            cached = [h for h in self.subtree
                      if not any(ch in members for ch in children.get(h, ()))]
            self._tips = cached
        return cached


class CandidateSet(CandidateView):
    """The candidate set B(u,r) as a membership predicate over one store."""

    def __init__(self, store: "BlockStore", mode: Mode, fn: BlockHash,
                 last_abnormal_round: int | None, honest_filter: bool = True) -> None:
        self.store = store
        self.index = store.index
        self.mode = mode
        self.fn = fn
        self.boundary = last_abnormal_round
        self.honest_filter = honest_filter
        self._memo: dict[BlockHash, bool] = {}

    def _rule(self, h: BlockHash) -> bool:
        s = self.store
        if h not in s.valid:
            return False
        if self.mode is Mode.ABNORMAL or not self.honest_filter:
            return True
        r0 = self.boundary
        # the first normal round r0+1 belongs to the valid term, so that
        # blocks withheld until the stretch ends are still kept
        if r0 is not None and s.valid[h] <= r0 + 1:
            return True
        return h in s.honest

    def __contains__(self, h: object) -> bool:
        memo = self._memo.get(h)  # type: ignore[arg-type]
        if memo is not None:
            return memo
        if not isinstance(h, bytes) or h not in self.index.height or h not in self.store.valid:
            return False
        idx = self.index
        if idx.is_ancestor(h, self.fn):
            ok = True  # the finalized prefix is always kept
        else:
            ok = self._rule(h) and idx.is_ancestor(self.fn, h)
        self._memo[h] = ok
        return ok

    def __iter__(self) -> Iterator[BlockHash]:
        return (h for h in list(self.store.valid) if h in self)

    def as_set(self) -> set[BlockHash]:
        return set(iter(self))

    def __len__(self) -> int:
        return sum(1 for _ in self)


class ChainCandidates(CandidateView):
    """Candidate view consisting of a single chain (used for chain-only replay)."""

    def __init__(self, index: BlockIndex, tip: BlockHash, fn: BlockHash) -> None:
        self.index = index
        self.tip = tip
        self.fn = fn

    def __contains__(self, h: object) -> bool:
        return isinstance(h, bytes) and h in self.index.height and self.index.is_ancestor(h, self.tip)

    @property
    def subtree(self) -> list[BlockHash]:
        idx = self.index
        if not idx.is_ancestor(self.fn, self.tip):
            return [self.fn]
        path = []
        h = self.tip
        while h != self.fn:
            path.append(h)
            h = idx.blocks[h].parent
        path.append(self.fn)
        path.reverse()
        return path

    @property
    def tips(self) -> list[BlockHash]:
        return [self.subtree[-1]]


def candidate_blocks(store: "BlockStore", mode: Mode, fn_block: BlockHash,
                     last_abnormal_round: int | None, honest_filter: bool = True) -> CandidateSet:
    if fn_block not in store.valid:
        raise LedgerError("fn block is not in the valid set")
    return CandidateSet(store, mode, fn_block, last_abnormal_round, honest_filter)


def canonical_chain(candidates: CandidateView, fn_block: BlockHash,
                    arrivals: dict[BlockHash, tuple[int, int]]) -> Chain:
    """Longest chain through fn; ties: newer tip round, earlier arrival, smaller hash."""
    index = candidates.index
    if candidates.fn != fn_block:
        raise LedgerError("candidate set was built for a different fn")

    def key(h: BlockHash):
        seq = arrivals.get(h, (0, 0))[1]
        return (-index.height[h], -index.blocks[h].round, seq, h)

    return Chain(index, min(candidates.tips, key=key))


# ---------------------------------------------------------------------------
# validity and honesty


@dataclass
class ValidityReport:
    status: str  # "valid" | "invalid" | "pending"
    checks: dict[str, bool] = field(default_factory=dict)
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "valid"


@dataclass
class ValidationContext:
    """What a validator needs besides the store."""

    registry: crypto.KeyRegistry
    n: int
    c: int
    d: int
    epoch_length: int
    beacon_for: Callable[[int], bytes]
    leader_of: Callable[[bytes, int], int]
    tx_valid: Callable[[bytes], bool] = lambda tx: True
    # optional replay oracle: expected pruned vector for a child of the given parent
    expected_vector: Callable[[BlockHash], object] | None = None
    cache: dict = field(default_factory=dict)


def validate_block(block: Block, store: "BlockStore", ctx: ValidationContext) -> ValidityReport:
    if block.is_genesis:
        return ValidityReport("valid", {"genesis": True})
    parent = block.parent
    if parent not in store.valid:
        if parent in store.invalid:
            return ValidityReport("invalid", {"ancestors": False}, "invalid ancestor")
        return ValidityReport("pending", {"ancestors": False}, "missing parent")
    s = block.summary
    beacon = ctx.beacon_for(s.epoch)
    key = (block.hash, beacon)
    hit = ctx.cache.get(key)
    if hit is not None:
        return hit
    reg = ctx.registry
    index = store.index
    checks: dict[str, bool] = {"ancestors": True}

    parent_round = index.round_of(parent) if parent in index else store.blocks[parent].round
    checks["round"] = s.round > parent_round and s.epoch == epoch_of(s.round, ctx.epoch_length)
    checks["leader"] = 0 <= s.leader < ctx.n and ctx.leader_of(beacon, s.round) == s.leader
    summary_bytes = s.encode()
    leader_pk = reg.pk(s.leader) if 0 <= s.leader < ctx.n else b""
    checks["summary_sig"] = reg.verify(leader_pk, summary_bytes, block.summary_sig)
    ce = block.endorsements
    checks["endorsement_sig"] = reg.verify(leader_pk, ce.payload(), ce.leader_sig)
    checks["merkle"] = merkle_root(block.txs) == s.tx_merkle_root
    checks["txs"] = len(set(block.txs)) == len(block.txs) and all(ctx.tx_valid(t) for t in block.txs)
    checks["endorsement_order"] = _check_order(block, ctx)
    checks["endorsements"] = checks["endorsement_order"] and _check_endorsements(block, ctx, beacon, summary_bytes)
    checks["finality_refs"] = all(h == NULL_HASH or h in store.valid for h in s.pruned_finality.as_tuple())
    checks["finality"] = checks["finality_refs"] and _check_vector(block, store, ctx)
    if all(checks.values()):
        rep = ValidityReport("valid", checks)
    else:
        failed = [k for k, v in checks.items() if not v]
        # Beacon-dependent failures can flip once the validator's finalized
        # prefix catches up; park those instead of condemning the block.
        # A vector pointing at a block we have not validated yet is parked too.
        status = "pending" if set(failed) <= {"leader", "endorsements", "finality_refs", "finality"} \
            and (not checks["finality_refs"] or checks["finality"]) else "invalid"
        rep = ValidityReport(status, checks, ",".join(failed))
    if rep.status != "pending":
        ctx.cache[key] = rep
    return rep


def _check_endorsements(block: Block, ctx: ValidationContext, beacon: bytes, summary_bytes: bytes) -> bool:
    reg = ctx.registry
    for e in block.endorsements.entries:
        pk = reg.pk(e.endorser)
        if not reg.verify(pk, summary_bytes, e.summary_sig):
            return False
        if not crypto.committee_member(reg, pk, beacon, block.round, e.vrf_proof, ctx.c, ctx.n):
            return False
    return True


def _check_order(block: Block, ctx: ValidationContext) -> bool:
    """Exactly d entries, ascending by endorser public key (so pairwise distinct)."""
    entries = block.endorsements.entries
    if len(entries) != ctx.d or not all(0 <= e.endorser < ctx.n for e in entries):
        return False
    pks = [ctx.registry.pk(e.endorser) for e in entries]
    return all(a < b for a, b in zip(pks, pks[1:]))


def _check_vector(block: Block, store: "BlockStore", ctx: ValidationContext) -> bool:
    index = store.index
    v = block.vector
    for h in v.as_tuple():
        if h == NULL_HASH:
            continue
        if h not in index or h not in store.valid:
            return False
        if index.blocks[h].round >= block.round:
            return False
    if v.nv != NULL_HASH and not index.is_ancestor(v.nv, block.parent):
        return False
    if ctx.expected_vector is not None:
        return ctx.expected_vector(block.parent) == v
    return True


@dataclass(frozen=True)
class Honest:
    pass


@dataclass(frozen=True)
class Suspicious:
    reason: str


def classify_honesty(block: Block, store: "BlockStore", current_round: int | None = None) -> Honest | Suspicious:
    """Judge a valid block: late arrival or a rival summary from its leader-round."""
    h = block.hash
    if h in store.suspicion:
        return Suspicious(store.suspicion[h])
    arrival = store.arrivals.get(h)
    received = arrival[0] if arrival is not None else current_round
    if received is not None and received != block.round:
        return Suspicious("late" if received > block.round else "early")
    slot = store.slot_summaries.get((block.leader, block.round), ())
    if len(slot) > 1:
        return Suspicious("equivocation")
    return Honest()


# ---------------------------------------------------------------------------
# the per-node store


class BlockStore:
    def __init__(self, index: BlockIndex | None = None, orphan_ttl: int = 1000,
                 honest_filter: bool = True) -> None:
        self.index = index if index is not None else BlockIndex()
        g = self.index.genesis
        self.blocks: dict[BlockHash, Block] = {g.hash: g}
        self.arrivals: dict[BlockHash, tuple[int, int]] = {g.hash: (0, 0)}
        self.valid: dict[BlockHash, int] = {g.hash: 0}
        self.honest: set[BlockHash] = {g.hash}
        self.invalid: dict[BlockHash, str] = {}
        self.suspicion: dict[BlockHash, str] = {}
        self.pending: dict[BlockHash, tuple[Block, int]] = {}
        self.slot_summaries: dict[tuple[int, int], set[bytes]] = {}
        self._slot_blocks: dict[tuple[int, int], set[BlockHash]] = {}
        self.orphan_ttl = orphan_ttl
        self.honest_filter = honest_filter
        self._seq = 0
        self.fingerprint = b"\x00" * 16
        self.demotions: list[tuple[BlockHash, str]] = []

    @property
    def genesis(self) -> BlockHash:
        return self.index.genesis.hash

    def _touch(self, *parts: object) -> None:
        h = hashlib.blake2b(self.fingerprint, digest_size=16)
        for p in parts:
            h.update(p if isinstance(p, bytes) else str(p).encode())
            h.update(b"|")
        self.fingerprint = h.digest()

    # -- ingestion ----------------------------------------------------------
    def note_summary(self, leader: int, round_: int, digest: bytes) -> None:
        """Record a (possibly bare) summary; a second one for the slot demotes the slot."""
        slot = self.slot_summaries.setdefault((leader, round_), set())
        if digest in slot:
            return
        slot.add(digest)
        if len(slot) > 1:
            for h in self._slot_blocks.get((leader, round_), ()):
                self._demote(h, "equivocation")

    def _demote(self, h: BlockHash, reason: str) -> None:
        if h in self.suspicion:
            return
        self.suspicion[h] = reason
        if h in self.honest:
            self.honest.discard(h)
            self.demotions.append((h, reason))
        self._touch("sus", h)

    def receive(self, block: Block, round_: int, ctx: ValidationContext) -> list[tuple[Block, ValidityReport]]:
        """Take delivery of an assembled block; returns (block, report) for
        everything whose status was settled, including released orphans."""
        h = block.hash
        if h in self.blocks or h in self.invalid or h in self.pending:
            return []
        self._seq += 1
        self.blocks[h] = block
        self.arrivals[h] = (round_, self._seq)
        self.note_summary(block.leader, block.round, block.summary.digest)
        self._slot_blocks.setdefault((block.leader, block.round), set()).add(h)
        return self._try(block, round_, ctx)

    def _try(self, block: Block, round_: int, ctx: ValidationContext) -> list[tuple[Block, ValidityReport]]:
        out = []
        queue = [block]
        while queue:
            b = queue.pop()
            h = b.hash
            self.index.add(b)
            rep = validate_block(b, self, ctx)
            if rep.status == "pending":
                self.pending.setdefault(h, (b, round_))
                continue
            self.pending.pop(h, None)
            out.append((b, rep))
            if rep.ok:
                self.valid[h] = round_
                self._touch("val", h, round_, self.arrivals[h][1])
                verdict = classify_honesty(b, self)
                if isinstance(verdict, Honest) or not self.honest_filter:
                    if isinstance(verdict, Suspicious):
                        self.suspicion.setdefault(h, verdict.reason)
                    self.honest.add(h)
                    self._touch("hon", h)
                else:
                    self.suspicion[h] = verdict.reason
                    self._touch("sus", h)
                queue.extend(ob for ob, _ in list(self.pending.values()) if ob.parent == h)
            else:
                self.invalid[h] = rep.reason
                self._touch("inv", h)
                queue.extend(ob for ob, _ in list(self.pending.values()) if ob.parent == h)
        return out

    def retry_pending(self, round_: int, ctx: ValidationContext) -> list[tuple[Block, ValidityReport]]:
        out = []
        for h, (b, first) in list(self.pending.items()):
            if h not in self.pending:
                continue
            if round_ - first > self.orphan_ttl:
                del self.pending[h]
                self._touch("drop", h)
                continue
            if b.parent in self.valid:
                out.extend(self._try(b, round_, ctx))
        return out

    # -- queries ------------------------------------------------------------
    def honest_blocks(self) -> set[BlockHash]:
        return set(self.honest)

    def dump(self) -> list[dict]:
        """Structured records for trace post-processing."""
        rows = []
        for h, b in self.blocks.items():
            if h in self.valid:
                cls = "honest" if h in self.honest else "suspicious"
            elif h in self.invalid:
                cls = "invalid"
            else:
                cls = "pending"
            rows.append({"hash": short(h), "parent": short(b.parent), "leader": b.leader,
                         "round": b.round, "class": cls, "arrival": list(self.arrivals[h])})
        rows.sort(key=lambda r: (r["round"], r["hash"]))
        return rows


def descendants(index: BlockIndex, root: BlockHash, scope: Iterable[BlockHash] | None = None) -> list[BlockHash]:
    allowed = set(scope) if scope is not None else None
    out, stack = [], [root]
    while stack:
        h = stack.pop()
        out.append(h)
        for ch in index.children.get(h, ()):
            if allowed is None or ch in allowed:
                stack.append(ch)
    return out
