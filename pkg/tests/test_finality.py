from hypothesis import given, settings, strategies as st

from cebft.finality import (
    ChainReplay, FinalityParams, FinalityState, SafetyViolation, find_rtpc, is_final, update_finality,
)
from cebft.ledger import CandidateSet, Chain, ChainCandidates, canonical_chain, count_messages
from cebft.types import NULL_HASH, FinalityVector, Mode
from helpers import Tree, vec

F1 = FinalityParams(1)  # quorum 3


def drive(t, params, rounds, signers, skips=(), inject=None):
    """One honest signer group extending its canonical chain each round.

    Returns per-round (tip name, [nv,pp,pc,cm,fn] names, fired rules).
    """
    st_ = FinalityState.initial(t.g)
    names = {t.g: "g", NULL_HASH: "0"}
    out, k = [], 0
    for r in range(1, rounds + 1):
        if inject is not None and r == inject[0]:
            inject[1](t, names)
        cands = CandidateSet(t.store, Mode.NORMAL, st_.vector.fn, None)
        chain = canonical_chain(cands, st_.vector.fn, t.store.arrivals)
        st_, upd = update_finality(st_, cands, chain, params)
        st_ = st_.record_send(r).end_round(r)
        out.append((names[chain.tip], " ".join(names[h] for h in st_.vector.as_tuple()), upd.fired))
        if r in skips:
            continue
        s = signers[k % len(signers)]
        k += 1
        h = t.add(chain.tip, r, leader=s[0], endorsers=s[1:], vector=st_.vector.pruned(), tag=b"r%d" % r)
        names[h] = f"b{r}"
    return out, st_, names


# -- update_finality ---------------------------------------------------------------

def test_genesis_only_candidates():
    # as written, the new-view rule adopts the tip when nv(u) is null, so nv
    # moves to genesis; every other pointer stays put and the result is a fixed point
    t = Tree()
    s0 = FinalityState.initial(t.g)
    cands = CandidateSet(t.store, Mode.NORMAL, t.g, None)
    chain = Chain(t.index, t.g)
    s1, upd = update_finality(s0, cands, chain, F1)
    assert s1.vector == FinalityVector(t.g, NULL_HASH, NULL_HASH, NULL_HASH, t.g)
    assert upd.fired == ["nv:tip"] and upd.rtpc is None
    s2, upd2 = update_finality(s1, cands, chain, F1)
    assert s2.vector == s1.vector and upd2.fired == []


# Golden trace, normal flow: signer groups {0,1},{0,1},{2,3} repeat, so each
# view needs three blocks. b3 gathers its nv quorum (view b3), then pp in view
# b6, then pc in view b9, and is committed and finalized in round 13.
FIG1 = [
    "g 0 0 0 g", "g 0 0 0 g", "g 0 0 0 g",
    "b3 g 0 0 g", "b3 g 0 0 g", "b3 g 0 0 g",
    "b6 b3 0 0 g", "b6 b3 g 0 g", "b6 b3 g 0 g",
    "b9 b6 0 g g", "b9 b6 b3 g g", "b9 b6 b3 g g",
    "b12 b9 0 b3 b3", "b12 b9 b6 b3 b3", "b12 b9 b6 b3 b3",
]


def test_normal_flow_golden_trace():
    t = Tree()
    out, st_, names = drive(t, F1, 15, [(0, 1), (0, 1), (2, 3)])
    assert [v for _, v, _ in out] == FIG1
    assert "cm:pc-quorum" in out[12][2] and "fn" in out[12][2]
    b3 = next(h for h, n in names.items() if n == "b3")
    b14 = next(h for h, n in names.items() if n == "b14")
    assert is_final(st_, b3, t.index) and is_final(st_, t.g, t.index)
    assert not is_final(st_, b14, t.index)


def test_single_block_views_never_commit_as_written():
    # every block alone is a quorum: the prepare rule fires each round and
    # clears pc before any block can carry it
    t = Tree()
    out, st_, _ = drive(t, F1, 12, [(0, 1, 2)])
    assert all(v.split()[2] == "0" for _, v, _ in out)
    assert st_.vector.fn == t.g


def test_single_block_views_commit_with_pc_kept():
    t = Tree()
    out, st_, names = drive(t, FinalityParams(1, pp_clears_pc=False), 8, [(0, 1, 2)])
    assert [v for _, v, _ in out][3:6] == ["b3 b2 b1 g g", "b4 b3 b2 b1 b1", "b5 b4 b3 b2 b2"]


def _fork_from_b2(t, names):
    # a longer branch built by other signers while cut off from the group
    p = next(h for h, n in names.items() if n == "b2")
    for x in range(3, 12):
        p = t.add(p, x, leader=9, endorsers=[8], tag=b"x%d" % x)
        names[p] = f"x{x}"


# Golden trace, heavier conflicting chain: the group is locked on b3 when a
# longer branch forking below b3 appears. It keeps signing pc=b3 on that
# branch until b3 commits there (round 15); fn=b3 then discards the branch and
# the chain of b3 resumes, with pc for b3 re-sent on it (round 17).
FIG3 = [
    ("g", "g 0 0 0 g"), ("b1", "g 0 0 0 g"), ("b2", "g 0 0 0 g"), ("b3", "b3 g 0 0 g"),
    ("b4", "b3 g 0 0 g"), ("b4", "b3 g 0 0 g"), ("b6", "b3 g 0 0 g"), ("b6", "b3 g 0 0 g"),
    ("b8", "b8 b3 0 0 g"), ("b9", "b8 b3 g 0 g"), ("b10", "b8 b3 g 0 g"),
    ("x11", "b8 b3 b3 0 g"), ("b12", "b8 b3 b3 0 g"), ("b13", "b8 b3 b3 0 g"),
    ("b14", "b14 0 0 b3 b3"), ("b11", "b11 b8 0 g b3"), ("b16", "b11 b8 b3 g b3"),
    ("b17", "b17 b11 0 g b3"), ("b18", "b17 b11 b8 g b3"), ("b19", "b17 b11 b8 g b3"),
    ("b20", "b20 b17 0 b8 b8"),
]


def test_heavier_conflicting_chain_golden_trace():
    t = Tree()
    out, st_, names = drive(t, F1, 21, [(0, 1), (0, 1), (2, 3)], skips={5, 7}, inject=(12, _fork_from_b2))
    assert [(tip, v) for tip, v, _ in out] == FIG3
    b3 = next(h for h, n in names.items() if n == "b3")
    x11 = next(h for h, n in names.items() if n == "x11")
    assert is_final(st_, b3, t.index)
    assert t.index.conflicts(x11, st_.vector.fn)
    # chain compliance: the chain of b3 alone also finalizes b3
    replay = ChainReplay(t.index, F1)
    tip = next(h for h, n in names.items() if n == "b20")
    assert replay.finalizes(tip, b3)


def test_fn_never_crosses_a_fork():
    t = Tree()
    a = t.add(t.g, 1, tag=b"a")
    b = t.add(t.g, 2, tag=b"b")
    s = FinalityState(FinalityVector(NULL_HASH, NULL_HASH, NULL_HASH, NULL_HASH, a))
    # a tip on the other branch whose pc carries a 2f+1 quorum for b
    v = t.add(b, 3, leader=0, endorsers=[1, 2], vector=vec(nv=b))
    tip = t.add(v, 4, leader=0, endorsers=[1, 2], vector=vec(nv=b, pc=b))
    params = FinalityParams(1)
    cands = ChainCandidates(t.index, tip, t.g)
    try:
        update_finality(s, cands, Chain(t.index, tip), params)
    except SafetyViolation:
        pass
    else:  # pragma: no cover
        raise AssertionError("fn moved across a fork")


# -- find_rtpc ---------------------------------------------------------------------

def brute_rtpc(index, cands, q):
    """The two pre-commit conditions evaluated literally over every block."""
    chains = [Chain(index, tip) for tip in cands.tips]
    everything = [h for h in index.blocks]

    def views(c):
        return [v for v in c if count_messages(index, c, v, "nv") >= q]

    def rnd(h):
        return index.blocks[h].round

    best = None
    for b in everything:
        for c1 in chains:
            for v1 in views(c1):
                if count_messages(index, c1, b, "pp", v1) < q:
                    continue
                if any(count_messages(index, c1, x, "pc", v1) > 0 for x in everything if index.conflicts(x, b)):
                    continue
                if any(count_messages(index, c2, b, "pc", v2) == 0
                       for c2 in chains for v2 in views(c2) if rnd(v2) > rnd(v1)):
                    continue
                key = (rnd(v1), rnd(b), b)
                if best is None or key > best[0]:
                    best = (key, b)
    return None if best is None else best[1]


def _cands(t):
    return CandidateSet(t.store, Mode.NORMAL, t.g, None)


def test_rtpc_single_chain_single_view():
    t = Tree()
    b = t.add(t.g, 1)
    m1 = t.add(b, 2, leader=0, endorsers=[1, 2], vector=vec(nv=b))
    m2 = t.add(m1, 3, leader=0, endorsers=[1, 2], vector=vec(nv=b, pp=b))
    assert find_rtpc(t.index, _cands(t), F1) == b == brute_rtpc(t.index, _cands(t), 3)
    assert m2 in t.index.blocks


def test_rtpc_blocked_by_later_view_without_pc():
    t = Tree()
    b = t.add(t.g, 1)
    m1 = t.add(b, 2, leader=0, endorsers=[1, 2], vector=vec(nv=b))
    t.add(m1, 3, leader=0, endorsers=[1, 2], vector=vec(nv=b, pp=b))
    # fork: a later view c carrying no pc for b
    c = t.add(b, 4, tag=b"c")
    t.add(c, 5, leader=1, endorsers=[2, 3], vector=vec(nv=c))
    assert find_rtpc(t.index, _cands(t), F1) is None
    assert brute_rtpc(t.index, _cands(t), 3) is None


def test_rtpc_two_chains_earlier_block_wins():
    # chain 1 prepares B1 in view B1; chain 2 prepares a conflicting B2 in the
    # later view B2, whose blocks carry pc for B1: B1 is ready, B2 is not
    t = Tree()
    b1 = t.add(t.g, 1, tag=b"B1")
    m1 = t.add(b1, 2, leader=0, endorsers=[1, 2], vector=vec(nv=b1))
    t.add(m1, 3, leader=0, endorsers=[1, 2], vector=vec(nv=b1, pp=b1))
    b2 = t.add(t.g, 4, tag=b"B2")
    n1 = t.add(b2, 5, leader=1, endorsers=[2, 3], vector=vec(nv=b2))
    t.add(n1, 6, leader=1, endorsers=[2, 3], vector=vec(nv=b2, pp=b2, pc=b1))
    assert find_rtpc(t.index, _cands(t), F1) == b1
    assert brute_rtpc(t.index, _cands(t), 3) == b1


@st.composite
def voting_trees(draw):
    t = Tree()
    hs = [t.g]
    for i in range(draw(st.integers(1, 9))):
        parent = hs[draw(st.integers(0, len(hs) - 1))]
        r = t.index.blocks[parent].round + draw(st.integers(1, 2))
        earlier = [h for h in hs if t.index.blocks[h].round < r]
        anc = t.index.chain(parent)

        def pick(pool):
            return draw(st.sampled_from([NULL_HASH] + pool))

        v = vec(nv=pick(anc), pp=pick(earlier), pc=pick(earlier))
        signers = draw(st.lists(st.integers(0, 3), min_size=1, max_size=3, unique=True))
        hs.append(t.add(parent, r, leader=signers[0], endorsers=signers[1:], vector=v, tag=bytes([i])))
    return t


@given(voting_trees())
@settings(max_examples=300, deadline=None)
def test_rtpc_matches_brute_force(t):
    cands = _cands(t)
    assert find_rtpc(t.index, cands, F1) == brute_rtpc(t.index, cands, 3)


# -- is_final ----------------------------------------------------------------------

def test_is_final_basics():
    t = Tree()
    a, b = t.line(t.g, [1, 2])
    s = FinalityState.initial(t.g)
    assert is_final(s, t.g, t.index) and not is_final(s, a, t.index)
    s2 = FinalityVector(NULL_HASH, NULL_HASH, NULL_HASH, a, a)
    assert is_final(s2, a, t.index) and is_final(s2, t.g, t.index) and not is_final(s2, b, t.index)
