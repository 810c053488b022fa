"""Domain vocabulary: digests, blocks and their parts, finality vectors, roles, modes.

Canonical byte encoding (used for every hash in the system):

* integers are 8-byte big-endian two's complement,
* byte strings are a 4-byte big-endian length followed by the bytes,
* lists are a 4-byte count followed by the encoded items,
* composite values concatenate their fields in declaration order.

The encoding is what makes traces bit-reproducible, so do not change it
without bumping ``cebft.__version__``.
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

DIGEST_SIZE = 32

# b0: the reserved "null block" marker; never a real block hash.
NULL_HASH = bytes(DIGEST_SIZE)

GENESIS_LEADER = -1

BlockHash = bytes
TxId = bytes


class EncodingError(ValueError):
    pass


class Writer:
    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def int(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">q", v))
        return self

    def bytes(self, b: bytes) -> "Writer":
        self._parts.append(struct.pack(">I", len(b)))
        self._parts.append(b)
        return self

    def count(self, k: int) -> "Writer":
        self._parts.append(struct.pack(">I", k))
        return self

    def raw(self, b: bytes) -> "Writer":
        self._parts.append(b)
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0

    def _take(self, k: int) -> bytes:
        if self._pos + k > len(self._data):
            raise EncodingError("truncated input")
        out = self._data[self._pos:self._pos + k]
        self._pos += k
        return out

    def int(self) -> int:
        return struct.unpack(">q", self._take(8))[0]

    def bytes(self) -> bytes:
        (k,) = struct.unpack(">I", self._take(4))
        return self._take(k)

    def count(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def done(self) -> None:
        if self._pos != len(self._data):
            raise EncodingError("trailing bytes")


def _digest(tag: bytes, payload: bytes) -> bytes:
    # Local copy of the oracle hash so this module has no dependency on crypto.
    return hashlib.blake2b(payload, digest_size=DIGEST_SIZE, person=tag).digest()


EMPTY_MERKLE_ROOT = _digest(b"merkle-empty", b"")


def merkle_root(txs: Sequence[TxId]) -> bytes:
    """Order-sensitive Merkle root; odd layers duplicate their last node."""
    if not txs:
        return EMPTY_MERKLE_ROOT
    layer = [_digest(b"merkle-leaf", t) for t in txs]
    while len(layer) > 1:
        if len(layer) % 2:
            layer.append(layer[-1])
        layer = [_digest(b"merkle-node", layer[i] + layer[i + 1])
                 for i in range(0, len(layer), 2)]
    return layer[0]


def short(h: bytes | None) -> str:
    """16-hex-char tag used in traces and reprs; b0 prints as '0'."""
    if h is None:
        return "-"
    if h == NULL_HASH:
        return "0"
    return h.hex()[:16]


@dataclass(frozen=True)
class PrunedFinalityVector:
    nv: BlockHash = NULL_HASH
    pp: BlockHash = NULL_HASH
    pc: BlockHash = NULL_HASH
    cm: BlockHash = NULL_HASH

    def as_tuple(self) -> tuple[bytes, bytes, bytes, bytes]:
        return (self.nv, self.pp, self.pc, self.cm)

    def encode(self) -> bytes:
        return self._encoded

    @cached_property
    def _encoded(self) -> bytes:
        w = Writer()
        for h in self.as_tuple():
            w.bytes(h)
        return w.getvalue()

    @classmethod
    def read(cls, r: Reader) -> "PrunedFinalityVector":
        return cls(r.bytes(), r.bytes(), r.bytes(), r.bytes())

    @classmethod
    def decode(cls, data: bytes) -> "PrunedFinalityVector":
        r = Reader(data)
        out = cls.read(r)
        r.done()
        return out


@dataclass(frozen=True)
class FinalityVector:
    nv: BlockHash
    pp: BlockHash
    pc: BlockHash
    cm: BlockHash
    fn: BlockHash

    @classmethod
    def initial(cls, genesis: BlockHash) -> "FinalityVector":
        return cls(NULL_HASH, NULL_HASH, NULL_HASH, NULL_HASH, genesis)

    def pruned(self) -> PrunedFinalityVector:
        return PrunedFinalityVector(self.nv, self.pp, self.pc, self.cm)

    def as_tuple(self) -> tuple[bytes, ...]:
        return (self.nv, self.pp, self.pc, self.cm, self.fn)

    def encode(self) -> bytes:
        w = Writer()
        for h in self.as_tuple():
            w.bytes(h)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "FinalityVector":
        r = Reader(data)
        out = cls(*(r.bytes() for _ in range(5)))
        r.done()
        return out

    def describe(self) -> list[str]:
        return [short(h) for h in self.as_tuple()]


@dataclass(frozen=True)
class BlockSummary:
    parent_link: BlockHash
    epoch: int
    round: int
    tx_merkle_root: bytes
    pruned_finality: PrunedFinalityVector
    leader: int

    def encode(self) -> bytes:
        return self._encoded

    @cached_property
    def _encoded(self) -> bytes:
        return (Writer().bytes(self.parent_link).int(self.epoch).int(self.round)
                .bytes(self.tx_merkle_root).raw(self.pruned_finality.encode())
                .int(self.leader).getvalue())

    @classmethod
    def read(cls, r: Reader) -> "BlockSummary":
        parent = r.bytes()
        epoch = r.int()
        rnd = r.int()
        root = r.bytes()
        pf = PrunedFinalityVector.read(r)
        return cls(parent, epoch, rnd, root, pf, r.int())

    @classmethod
    def decode(cls, data: bytes) -> "BlockSummary":
        r = Reader(data)
        out = cls.read(r)
        r.done()
        return out

    @cached_property
    def digest(self) -> bytes:
        return _digest(b"summary", self.encode())


@dataclass(frozen=True)
class Endorsement:
    endorser: int
    vrf_proof: bytes
    summary_sig: bytes

    def encode(self) -> bytes:
        return self._encoded

    @cached_property
    def _encoded(self) -> bytes:
        return Writer().int(self.endorser).bytes(self.vrf_proof).bytes(self.summary_sig).getvalue()

    @classmethod
    def read(cls, r: Reader) -> "Endorsement":
        return cls(r.int(), r.bytes(), r.bytes())

    @classmethod
    def decode(cls, data: bytes) -> "Endorsement":
        r = Reader(data)
        out = cls.read(r)
        r.done()
        return out


def encode_endorsements(entries: Iterable[Endorsement]) -> bytes:
    entries = list(entries)
    w = Writer().count(len(entries))
    for e in entries:
        w.raw(e.encode())
    return w.getvalue()


@dataclass(frozen=True)
class CollectedEndorsement:
    entries: tuple[Endorsement, ...]
    leader_sig: bytes

    def payload(self) -> bytes:
        """The concatenation the leader signs."""
        return self._payload

    @cached_property
    def _payload(self) -> bytes:
        return encode_endorsements(self.entries)

    def encode(self) -> bytes:
        return self._encoded

    @cached_property
    def _encoded(self) -> bytes:
        return Writer().raw(self.payload()).bytes(self.leader_sig).getvalue()

    @classmethod
    def read(cls, r: Reader) -> "CollectedEndorsement":
        k = r.count()
        entries = tuple(Endorsement.read(r) for _ in range(k))
        return cls(entries, r.bytes())

    @classmethod
    def decode(cls, data: bytes) -> "CollectedEndorsement":
        r = Reader(data)
        out = cls.read(r)
        r.done()
        return out


def block_hash_of(summary: BlockSummary, endorsements: CollectedEndorsement) -> BlockHash:
    """H(s(B) | Ê(B)), the link a child block stores as its parent."""
    h = _digest(b"block", summary.encode() + endorsements.encode())
    if h == NULL_HASH:  # pragma: no cover - 2^-256
        raise EncodingError("block hash collides with the null marker")
    return h


@dataclass(frozen=True)
class Block:
    summary: BlockSummary
    summary_sig: bytes
    endorsements: CollectedEndorsement
    txs: tuple[TxId, ...] = ()
    hash: BlockHash = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "hash", block_hash_of(self.summary, self.endorsements))

    @property
    def round(self) -> int:
        return self.summary.round

    @property
    def leader(self) -> int:
        return self.summary.leader

    @property
    def parent(self) -> BlockHash:
        return self.summary.parent_link

    @property
    def vector(self) -> PrunedFinalityVector:
        return self.summary.pruned_finality

    @property
    def is_genesis(self) -> bool:
        return self.summary.leader == GENESIS_LEADER

    def signers(self) -> frozenset[int]:
        """Leader plus endorsing committee members; each signs F(B)."""
        ids = {e.endorser for e in self.endorsements.entries}
        if not self.is_genesis:
            ids.add(self.leader)
        return frozenset(ids)

    def encode(self) -> bytes:
        w = Writer().raw(self.summary.encode()).bytes(self.summary_sig).raw(self.endorsements.encode())
        w.count(len(self.txs))
        for t in self.txs:
            w.bytes(t)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "Block":
        r = Reader(data)
        summary = BlockSummary.read(r)
        sig = r.bytes()
        ce = CollectedEndorsement.read(r)
        txs = tuple(r.bytes() for _ in range(r.count()))
        r.done()
        return cls(summary, sig, ce, txs)

    def __repr__(self) -> str:
        return f"Block(r={self.round}, leader={self.leader}, h={short(self.hash)})"


def make_genesis() -> Block:
    summary = BlockSummary(NULL_HASH, 0, 0, EMPTY_MERKLE_ROOT, PrunedFinalityVector(), GENESIS_LEADER)
    return Block(summary, b"", CollectedEndorsement((), b""), ())


GENESIS = make_genesis()


class Role(enum.Enum):
    LEADER = "leader"
    COMMITTEE = "committee"
    OBSERVER = "observer"


class Mode(enum.Enum):
    NORMAL = "normal"
    ABNORMAL = "abnormal"


def epoch_of(round_: int, epoch_length: int) -> int:
    return round_ // epoch_length
