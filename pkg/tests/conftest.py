import pytest

from cebft.config import from_dict
from cebft.sim import run_world


def small_config(**kw):
    base = {"n": 4, "f": 1, "c": 4, "d": 2, "delta": 1, "rounds": 30, "seed": 7}
    base.update(kw)
    return from_dict(base)


@pytest.fixture(scope="session")
def small_world():
    """A finished all-honest run at n=4; its blocks serve as realistic fixtures."""
    return run_world(small_config())


@pytest.fixture(scope="session")
def real_block(small_world):
    idx = small_world.index
    tip = small_world.nodes[0].chain.tip
    return idx.blocks[idx.chain(tip)[5]]


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for no in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[no]
        terminalreporter.write_line(f"criterion {no:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
