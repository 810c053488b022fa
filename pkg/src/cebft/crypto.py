"""Simulated cryptography: random-oracle hash, signatures, VRF, node mapping, beacon.

Keys are derived from the scenario seed. The registry stands in for public-key
math: verification looks up the secret paired with a public key and recomputes.
Adversarial code only ever receives its own ``KeyPair`` objects.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass
from typing import Callable, Sequence

from .types import DIGEST_SIZE, Block, CollectedEndorsement

log = logging.getLogger(__name__)

DOMAIN_LEADER = b"leader"
DOMAIN_BEACON = b"beacon"
DOMAIN_COMMITTEE = b"committee"
DOMAIN_PING = b"ping"

_DIGEST_SPACE = 1 << (8 * DIGEST_SIZE)


class UnknownKeyError(KeyError):
    pass


def hash(data: bytes, domain: bytes = b"") -> bytes:  # noqa: A001 - oracle name
    """Random-oracle hash with per-use-site domain separation (tag <= 16 bytes)."""
    return hashlib.blake2b(data, digest_size=DIGEST_SIZE, person=domain).digest()


def _keyed(key: bytes, domain: bytes, data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=DIGEST_SIZE, key=key, person=domain).digest()


def as_fraction_leq(digest: bytes, num: int, den: int) -> bool:
    """True iff digest, read as a uniform fraction of digest space, is <= num/den."""
    return int.from_bytes(digest, "big") * den <= num * _DIGEST_SPACE


@dataclass(frozen=True)
class KeyPair:
    node: int
    sk: bytes
    pk: bytes

    def __repr__(self) -> str:  # keep secrets out of logs and traces
        return f"KeyPair(node={self.node}, pk={self.pk.hex()[:16]})"


@dataclass(frozen=True)
class VrfOutput:
    beta: bytes
    proof: bytes


class KeyRegistry:
    """Immutable after construction; safe to share across nodes."""

    def __init__(self, n: int, seed: int) -> None:
        if n < 1:
            raise ValueError("population must be positive")
        self.n = n
        self.seed = seed
        self._pairs: list[KeyPair] = []
        self._sk_by_pk: dict[bytes, bytes] = {}
        self._known_sk: set[bytes] = set()
        for i in range(n):
            sk = hash(struct.pack(">qq", seed, i), b"sk")
            pk = hash(struct.pack(">q", i), b"pk")
            self._pairs.append(KeyPair(i, sk, pk))
            self._sk_by_pk[pk] = sk
            self._known_sk.add(sk)
        self.public_keys: tuple[bytes, ...] = tuple(p.pk for p in self._pairs)

    def keypair(self, node: int) -> KeyPair:
        return self._pairs[node]

    def pk(self, node: int) -> bytes:
        return self.public_keys[node]

    def _sk_for(self, pk: bytes) -> bytes | None:
        return self._sk_by_pk.get(pk)

    # -- signatures -------------------------------------------------------
    def sign(self, sk: bytes, message: bytes) -> bytes:
        if sk not in self._known_sk:
            raise UnknownKeyError("signing key not registered")
        return _keyed(sk, b"sig", message)

    def verify(self, pk: bytes, message: bytes, sig: bytes) -> bool:
        sk = self._sk_for(pk)
        if sk is None:
            return False
        return _keyed(sk, b"sig", message) == sig

    # -- VRF --------------------------------------------------------------
    def vrf_eval(self, sk: bytes, alpha: bytes) -> VrfOutput:
        if sk not in self._known_sk:
            raise UnknownKeyError("VRF key not registered")
        proof = _keyed(sk, b"vrf", alpha)
        return VrfOutput(beta=hash(proof, b"vrf-beta"), proof=proof)

    def vrf_verify(self, pk: bytes, alpha: bytes, out: VrfOutput) -> bool:
        sk = self._sk_for(pk)
        if sk is None:
            return False
        proof = _keyed(sk, b"vrf", alpha)
        return proof == out.proof and out.beta == hash(proof, b"vrf-beta")

    def header(self) -> dict:
        """Key registry echo for trace headers (public parts only)."""
        return {"n": self.n, "seed": self.seed, "pk_digest": hash(b"".join(self.public_keys), b"pkset").hex()}


def vrf_eval(registry: KeyRegistry, sk: bytes, alpha: bytes) -> VrfOutput:
    return registry.vrf_eval(sk, alpha)


def vrf_verify(registry: KeyRegistry, pk: bytes, alpha: bytes, out: VrfOutput) -> bool:
    return registry.vrf_verify(pk, alpha, out)


def map_to_node(x: bytes, n: int, domain: bytes = DOMAIN_LEADER) -> int:
    """Uniform node id in [0, n) via rejection sampling on the oracle output."""
    if n <= 0:
        raise ValueError("n must be >= 1")
    if n == 1:
        return 0
    limit = (_DIGEST_SPACE // n) * n
    counter = 0
    while True:
        v = int.from_bytes(hash(x + struct.pack(">I", counter), domain), "big")
        if v < limit:
            return v % n
        counter += 1


def round_input(beacon: bytes, round_: int) -> bytes:
    """The alpha string b_e | r used for leader mapping and committee VRF."""
    return beacon + struct.pack(">q", round_)


def committee_member(registry: KeyRegistry, pk: bytes, beacon: bytes, round_: int,
                     proof: bytes, c: int, n: int) -> bool:
    """Check an endorser's revealed proof: verifies and falls under the threshold c/n."""
    out = VrfOutput(beta=hash(proof, b"vrf-beta"), proof=proof)
    if not registry.vrf_verify(pk, round_input(beacon, round_), out):
        return False
    return as_fraction_leq(hash(out.beta, DOMAIN_COMMITTEE), c, n)


GENESIS_BEACON = hash(b"genesis-beacon", DOMAIN_BEACON)


def beacon_cutoff(epoch: int, tau0: int, tau1: int, epoch_length: int) -> int:
    """Rounds strictly before this value may seed the beacon of ``epoch``."""
    last_round_prev = epoch * epoch_length - 1
    return last_round_prev - tau0 - tau1


def compute_beacon(finalized_chain: Sequence[Block] | Callable[[int], Block | None],
                   epoch: int, tau0: int, tau1: int, epoch_length: int,
                   on_fallback: Callable[[int], None] | None = None) -> bytes:
    """Beacon b_e = H(Ê) of the latest finalized block with round < cutoff.

    ``finalized_chain`` is either the finalized chain ordered genesis-first, or
    a lookup returning the latest finalized block with round < a given cutoff.
    """
    if epoch <= 0:
        return GENESIS_BEACON
    cutoff = beacon_cutoff(epoch, tau0, tau1, epoch_length)
    if callable(finalized_chain):
        chosen = finalized_chain(cutoff)
    else:
        chosen = None
        for b in finalized_chain:
            if b.round < cutoff:
                chosen = b
            else:
                break
    if chosen is None:
        if on_fallback is not None:
            on_fallback(epoch)
        log.debug("no finalized block before cutoff %d for epoch %d", cutoff, epoch)
        return GENESIS_BEACON
    return beacon_from(chosen.endorsements)


def beacon_from(ce: CollectedEndorsement) -> bytes:
    return hash(ce.encode(), DOMAIN_BEACON)


def ping_targets(proof: bytes, n: int, c: int, exclude: int) -> list[int]:
    """The c distinct peers a node probes this round, drawn from H(pi_u | i)."""
    want = min(c, n - 1)
    out: list[int] = []
    seen = {exclude}
    i = 0
    while len(out) < want:
        v = map_to_node(proof + struct.pack(">I", i), n, DOMAIN_PING)
        if v not in seen:
            seen.add(v)
            out.append(v)
        i += 1
    return out
