from collections import defaultdict

import pytest

from cebft.adversary import adversary_step
from cebft.sim import run_world
from conftest import small_config

BASE = {"n": 7, "f": 2, "c": 7, "d": 3, "adversaries": [0, 1]}


def blocks(w):
    return [(r["h"], r["round"], r["leader"], r["p"]) for r in w.trace.records if r["k"] == "block"]


def test_honest_behaviour_matches_honest_nodes():
    # which ids are labelled adversarial must not change what gets built
    a = run_world(small_config(rounds=40, **BASE))
    b = run_world(small_config(rounds=40, **{**BASE, "adversaries": [5, 6]}))
    assert blocks(a) == blocks(b)
    assert not any(adversary_step(a.coord, r) for r in range(1, 41))


@pytest.fixture(scope="module")
def colliding():
    return run_world(small_config(rounds=60, adversary={"strategy": "colliding"}, **BASE))


def test_colliding_leader_gets_two_valid_blocks_both_suspicious(colliding):
    w = colliding
    by_slot = defaultdict(set)
    for h, b in w.index.blocks.items():
        if b.leader in w.adversaries:
            by_slot[(b.leader, b.round)].add(h)
    pairs = [hs for hs in by_slot.values() if len(hs) == 2]
    assert pairs
    for node in (w.nodes[i] for i in w.honest_ids):
        chain = set(w.index.chain(node.chain.tip))
        for hs in pairs:
            for h in hs:
                assert h in node.store.valid and h not in node.store.honest
                assert node.store.suspicion[h] == "equivocation"
                assert h not in chain
    s = w.summary()
    assert s["max_fork_depth"] == 0 and s["violations"] == 0


def test_colliding_actions_are_tagged(colliding):
    acts = [a for r in range(1, 61) for a in adversary_step(colliding.coord, r)]
    assert {a["what"] for a in acts} == {"equivocate", "twin-blocks"}
    assert sum(1 for r in colliding.trace.records if r["k"] == "adv") == len(acts)


# Six consecutive adversarial leader slots: enough for a 3-deep fork.
SLOTS = {r: (r - 10) % 2 for r in range(10, 16)}


def delay_run(**kw):
    return run_world(small_config(rounds=40, adversary={"strategy": "fraudulent-delay"},
                                  scripted_leaders=SLOTS, **BASE, **kw))


def test_fraudulent_delay_forks_without_the_filter():
    w = delay_run(honest_filter=False)
    assert w.summary()["max_tree_fork_depth"] >= 3
    acts = [a["what"] for r in SLOTS for a in adversary_step(w.coord, r)]
    assert "withhold" in acts and "release" in acts


def test_fraudulent_delay_neutralised_by_the_filter():
    s = delay_run().summary()
    assert s["max_tree_fork_depth"] < 3 and s["max_fork_depth"] == 0
    assert s["suspicious_blocks"] >= len(SLOTS) - 1 and s["violations"] == 0


def test_only_partition_collusion_bridges_the_split():
    sched = {"situation_schedule": [{"start": 5, "end": 10, "split": 2}]}
    coll = run_world(small_config(rounds=25, adversary={"strategy": "partition-collusion"}, **BASE, **sched))
    plain = run_world(small_config(rounds=25, **BASE, **sched))
    sit_c = coll.situation_at(6 * coll.T)
    sit_p = plain.situation_at(6 * plain.T)
    assert all(a not in sit_c.groups for a in coll.adversaries)
    assert all(sit_c.linked(a, h) for a in coll.adversaries for h in coll.honest_ids)
    assert all(a in sit_p.groups for a in plain.adversaries)
    assert len(set(sit_p.groups.values())) == 2
