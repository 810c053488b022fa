"""Finality-vector update: the chained new-view / prepare / pre-commit / commit rules.

Everything here is a pure function of (previous state, candidate set, canonical
chain). Rule groups run once per round in this order: commit, finalize,
pre-commit (with the lock check), pre-commit unlock, prepare, new view,
prepare unlock.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .ledger import (BlockIndex, CandidateView, Chain, ChainCandidates,
                     count_messages, has_message)
from .types import NULL_HASH, BlockHash, FinalityVector


class SafetyViolation(RuntimeError):
    """fn was about to move onto a block conflicting with the finalized prefix."""


@dataclass(frozen=True)
class FinalityParams:
    f: int
    # test hook: overrides the 2f+1 commit quorum to inject a broken rule
    commit_quorum: int | None = None
    # test hook: skip the BFT rules and commit the canonical tip's parent outright
    finalize_tip: bool = False
    # the prepare rule resets pc to null as written; False keeps the pc set
    # earlier in the same round (opt-in variant, off by default)
    pp_clears_pc: bool = True

    @property
    def quorum(self) -> int:
        return 2 * self.f + 1

    @property
    def cm_quorum(self) -> int:
        return self.commit_quorum if self.commit_quorum is not None else self.quorum


@dataclass(frozen=True)
class PcSend:
    round: int
    view: BlockHash
    target: BlockHash


@dataclass(frozen=True)
class FinalityState:
    vector: FinalityVector
    pc_send_history: tuple[PcSend, ...] = ()
    last_nonnull_pc: tuple[int, BlockHash] | None = None

    @classmethod
    def initial(cls, genesis: BlockHash) -> "FinalityState":
        return cls(FinalityVector.initial(genesis))

    def lock(self) -> tuple[BlockHash, BlockHash | None]:
        """(B̂, B̂1): latest non-null pc, and the view of the latest pc send for it."""
        if self.last_nonnull_pc is None:
            return NULL_HASH, None
        b_hat = self.last_nonnull_pc[1]
        for rec in reversed(self.pc_send_history):
            if rec.target == b_hat:
                return b_hat, rec.view
        return b_hat, None

    def record_send(self, round_: int) -> "FinalityState":
        """The node signed a block carrying its current pruned vector."""
        v = self.vector
        if v.pc == NULL_HASH:
            return self
        return replace(self, pc_send_history=self.pc_send_history + (PcSend(round_, v.nv, v.pc),))

    def end_round(self, round_: int) -> "FinalityState":
        if self.vector.pc != NULL_HASH:
            return replace(self, last_nonnull_pc=(round_, self.vector.pc))
        return self


@dataclass
class Update:
    vector: FinalityVector
    rtpc: BlockHash | None
    fired: list[str] = field(default_factory=list)


class _Views:
    """Views (blocks with >= 2f+1 nv messages) per candidate chain."""

    def __init__(self, index: BlockIndex, cands: CandidateView, quorum: int) -> None:
        self.index = index
        self.cands = cands
        self.quorum = quorum
        self.chains = [Chain(index, t) for t in cands.tips]
        self._potential = [h for h in cands.subtree if ("nv", h) in index.votes_any]
        self._per_chain: dict[BlockHash, list[BlockHash]] = {}

    def on(self, chain: Chain) -> list[BlockHash]:
        got = self._per_chain.get(chain.tip)
        if got is None:
            got = [v for v in self._potential
                   if v in chain and count_messages(self.index, chain, v, "nv") >= self.quorum]
            self._per_chain[chain.tip] = got
        return got


def _round(index: BlockIndex, h: BlockHash | None) -> int:
    if h is None or h == NULL_HASH:
        return -1
    return index.blocks[h].round


def find_rtpc(index: BlockIndex, cands: CandidateView, params: FinalityParams,
              views: _Views | None = None) -> BlockHash | None:
    """The block that is ready to pre-commit, or None.

    Among several qualifying blocks the one with the latest qualifying view
    wins (then the newer block, then the smaller hash).
    """
    q = params.quorum
    views = views or _Views(index, cands, q)
    best_key = None
    best: BlockHash | None = None
    for chain in views.chains:
        for v1 in views.on(chain):
            posted = index.by_view.get(v1, {})
            pc_targets = posted.get("pc", {})
            for b in posted.get("pp", {}):
                if b == NULL_HASH:
                    continue
                key = (_round(index, v1), _round(index, b), b)
                if best_key is not None and key <= best_key:
                    continue
                if count_messages(index, chain, b, "pp", v1) < q:
                    continue
                if any(t != NULL_HASH and index.conflicts(t, b) and has_message(index, chain, t, "pc", v1)
                       for t in pc_targets):
                    continue
                if not _later_views_carry_pc(index, views, v1, b):
                    continue
                best_key, best = key, b
    return best


def _later_views_carry_pc(index: BlockIndex, views: _Views, v1: BlockHash, b: BlockHash) -> bool:
    r1 = _round(index, v1)
    for chain in views.chains:
        for v2 in views.on(chain):
            if _round(index, v2) > r1 and not has_message(index, chain, b, "pc", v2):
                return False
    return True


def update_finality(state: FinalityState, cands: CandidateView, chain: Chain,
                    params: FinalityParams) -> tuple[FinalityState, Update]:
    index = chain.index
    if chain.tip not in index.blocks:
        raise SafetyViolation("canonical tip is not indexed")
    upd = compute_update(index, state.vector, state.lock(), cands, chain, params)
    return replace(state, vector=upd.vector), upd


def compute_update(index: BlockIndex, vec: FinalityVector, lock: tuple[BlockHash, BlockHash | None],
                   cands: CandidateView, chain: Chain, params: FinalityParams) -> Update:
    """Pure core of the update, keyed only on hashable inputs (memoizable)."""
    q = params.quorum
    fired: list[str] = []
    tip = index.blocks[chain.tip]
    tv = tip.vector if not tip.is_genesis else None
    nv, pp, pc, cm, fn = vec.as_tuple()
    t_nv = tv.nv if tv else NULL_HASH
    t_pc = tv.pc if tv else NULL_HASH
    t_cm = tv.cm if tv else NULL_HASH

    # commit
    if params.finalize_tip and not tip.is_genesis:
        cm = tip.parent
        fired.append("fault:finalize-tip")
    elif t_pc != NULL_HASH and count_messages(index, chain, t_pc, "pc", t_nv) >= params.cm_quorum:
        cm, pc = t_pc, NULL_HASH
        fired.append("cm:pc-quorum")
    elif (t_cm != NULL_HASH and count_messages(index, cands, t_cm, "cm") >= params.f + 1
          and _round(index, t_cm) > _round(index, cm)):
        cm = t_cm
        fired.append("cm:f+1")
    if _round(index, fn) < _round(index, cm):
        if not index.is_ancestor(fn, cm):
            raise SafetyViolation(f"fn would move across a fork: {fn.hex()[:16]} -> {cm.hex()[:16]}")
        fn = cm
        fired.append("fn")

    # pre-commit
    views = _Views(index, cands, q)
    rtpc = find_rtpc(index, cands, params, views)
    b_hat, b_hat1 = lock
    if rtpc is not None:
        if b_hat == NULL_HASH or b_hat1 is None or index.compatible(b_hat, rtpc):
            pc = rtpc
            fired.append("pc:case1")
        elif _unlocking_view_exists(index, views, b_hat, b_hat1):
            pc = rtpc
            fired.append("pc:case2")
        if pc != rtpc:
            pc = NULL_HASH
            fired.append("pc:unlock")

    # prepare
    if t_nv != NULL_HASH and count_messages(index, chain, t_nv, "nv") >= q:
        clean = True
        for t in index.by_view.get(t_nv, {}).get("pc", {}):
            if t != NULL_HASH and t in cands and index.conflicts(t, t_nv) and has_message(index, chain, t, "pc", t_nv):
                clean = False
                break
        if clean:
            pp = t_nv
            if params.pp_clears_pc:
                pc = NULL_HASH
            fired.append("pp")
        view_formed = True
    else:
        view_formed = False

    # new view
    if _round(index, t_nv) > _round(index, nv):
        nv = t_nv
        fired.append("nv:adopt")
    elif index.conflicts(t_nv, nv) or nv == NULL_HASH:
        nv = chain.tip
        fired.append("nv:tip")
    if view_formed:
        nv = chain.tip
        fired.append("nv:quorum")

    if index.conflicts(pp, nv):
        pp = NULL_HASH
        fired.append("pp:unlock")

    return Update(FinalityVector(nv, pp, pc, cm, fn), rtpc, fired)


def _unlocking_view_exists(index: BlockIndex, views: _Views, b_hat: BlockHash, b_hat1: BlockHash) -> bool:
    r1 = _round(index, b_hat1)
    for chain in views.chains:
        for v2 in views.on(chain):
            if _round(index, v2) > r1 and not has_message(index, chain, b_hat, "pc", v2):
                return True
    return False


def is_final(state: FinalityState | FinalityVector, block: BlockHash, index: BlockIndex) -> bool:
    vec = state.vector if isinstance(state, FinalityState) else state
    return index.is_ancestor(block, vec.fn)


class ChainReplay:
    """Finality as seen by an observer holding only one chain.

    ``state(h)`` is the vector obtained by running the update once per block
    along genesis..h with that chain prefix as the whole candidate set. Results
    are cached per block hash; the observer never signs, so it holds no lock view.
    """

    def __init__(self, index: BlockIndex, params: FinalityParams) -> None:
        self.index = index
        self.params = params
        self._cache: dict[BlockHash, FinalityState] = {}

    def state(self, h: BlockHash) -> FinalityState:
        st = self._cache.get(h)
        if st is not None:
            return st
        todo = []
        cur = h
        while cur not in self._cache and cur != self.index.genesis.hash:
            todo.append(cur)
            cur = self.index.blocks[cur].parent
        if cur == self.index.genesis.hash and cur not in self._cache:
            self._cache[cur] = self._step(FinalityState.initial(cur), cur, 0)
        st = self._cache[cur]
        for b in reversed(todo):
            st = self._step(st, b, self.index.blocks[b].round)
            self._cache[b] = st
        return st

    def _step(self, prev: FinalityState, tip: BlockHash, round_: int) -> FinalityState:
        cands = ChainCandidates(self.index, tip, prev.vector.fn)
        chain = Chain(self.index, tip)
        nxt, _ = update_finality(prev, cands, chain, self.params)
        return nxt.end_round(round_)

    def finalizes(self, tip: BlockHash, block: BlockHash) -> bool:
        return is_final(self.state(tip), block, self.index)
