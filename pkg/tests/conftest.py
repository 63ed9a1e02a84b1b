from __future__ import annotations

import pytest

from mfgcip.instances import standard_instance


@pytest.fixture(scope="session")
def small_instance():
    """Coarse standard instance with both forward solves cached."""
    inst = standard_instance(Nx=31, Nt=31)
    inst.reference, inst.truth  # noqa: B018
    return inst


@pytest.fixture(scope="session")
def mid_instance():
    inst = standard_instance(Nx=51, Nt=51)
    inst.reference, inst.truth  # noqa: B018
    return inst


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
