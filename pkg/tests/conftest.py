"""Shared builders and the acceptance summary printed after the run."""

import numpy as np
import pytest

from mrgbsde.gcore import Grid, PayoffSpec, VolBounds
from mrgbsde.skorokhod import BoundaryCurve, BoundaryPair

CRITERIA = {
    1: "Skorokhod flagship A^R = 0.5t",
    2: "Skorokhod stability and growth on 1000 random instances",
    3: "G-expectation moments and axioms",
    4: "classical limit against closed forms",
    5: "mean-reflected flagship end to end",
    6: "route agreement on 3 instances",
    7: "Picard convergence under a non-Lipschitz modulus",
    8: "comparison and sandwich",
    9: "optimization chain",
    10: "linear game on the flagship",
    11: "K process",
    12: "determinism and golden regression",
}

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n = mark.args[0]
    failed = rep.failed or (rep.when == "setup" and rep.skipped)
    if rep.when == "call" or failed:
        prev = _results.get(n, True)
        _results[n] = prev and not failed


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        if n not in _results:
            continue
        status = "PASS" if _results[n] else "FAIL"
        terminalreporter.write_line(f"{status} criterion {n:2d}: {CRITERIA[n]}")


# builders --------------------------------------------------------------------------------


@pytest.fixture(scope="session")
def vb():
    return VolBounds(0.25, 1.0)


@pytest.fixture(scope="session")
def grid(vb):
    return Grid.build(vb)


def affine_pair(l_thr, r_thr, kind="affine", gamma=0.3):
    if kind == "affine":
        return BoundaryPair(BoundaryCurve.affine(l_thr), BoundaryCurve.affine(r_thr))
    return BoundaryPair(BoundaryCurve.sin_perturbed(l_thr, gamma), BoundaryCurve.sin_perturbed(r_thr, gamma))


def flagship_losses(t, r0=0.5):
    """``L = y - 1`` and ``R = y - r0 (1 - t)``."""
    return affine_pair(np.ones_like(t), r0 * (1 - t))


XI = PayoffSpec("affine", (0.0, 1.0))
