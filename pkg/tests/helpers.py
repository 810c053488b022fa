"""Synthetic block trees for ledger and finality tests.

Blocks built here carry fake signatures; they are inserted into stores
directly rather than through validation.
"""

from cebft.ledger import BlockIndex, BlockStore
from cebft.types import (
    GENESIS, NULL_HASH, Block, BlockSummary, CollectedEndorsement, Endorsement, PrunedFinalityVector,
)


def mk(parent, round_, leader=0, endorsers=(), vector=None, tag=b""):
    v = vector if vector is not None else PrunedFinalityVector()
    s = BlockSummary(parent, round_ // 100, round_, tag.ljust(32, b"\0")[:32], v, leader)
    ce = CollectedEndorsement(tuple(Endorsement(e, b"p", b"s") for e in endorsers), b"sig")
    return Block(s, b"sig", ce, ())


def vec(nv=NULL_HASH, pp=NULL_HASH, pc=NULL_HASH, cm=NULL_HASH):
    return PrunedFinalityVector(nv, pp, pc, cm)


class Tree:
    """A store plus index with blocks placed by hand."""

    def __init__(self):
        self.index = BlockIndex()
        self.store = BlockStore(self.index)
        self.g = GENESIS.hash
        self._seq = 0

    def add(self, parent, round_, *, arrival=None, honest=None, leader=0, endorsers=(), vector=None, tag=b""):
        b = mk(parent, round_, leader, endorsers, vector, tag)
        arrival = round_ if arrival is None else arrival
        self.index.add(b)
        s = self.store
        self._seq += 1
        s.blocks[b.hash] = b
        s.arrivals[b.hash] = (arrival, self._seq)
        s.valid[b.hash] = arrival
        if honest is None:
            honest = arrival == round_
        if honest:
            s.honest.add(b.hash)
        else:
            s.suspicion[b.hash] = "late"
        return b.hash

    def line(self, parent, rounds, **kw):
        out = []
        for r in rounds:
            parent = self.add(parent, r, **kw)
            out.append(parent)
        return out


# acceptance results, printed by the terminal-summary hook in conftest
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def report(no: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[no] = (ok, detail)
    print(f"criterion {no}: {'PASS' if ok else 'FAIL'}  {detail}")
