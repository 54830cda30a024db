import pytest

CRITERIA = {
    1: "odd index theorem on the path model (k = -3..3)",
    2: "kappa independence over 8 log-spaced kappa",
    3: "switch function independence (path model and interface)",
    4: "unbounded harmonic potential, kappa in {0.5, 1, 2}",
    5: "even vortex theorem (w = -2..2)",
    6: "bulk-boundary correspondence at the interface",
    7: "mass flip identity on 100 random T",
    8: "spectral flow axioms on 200 random paths",
    9: "bounded transform invariance",
    10: "doubling invariance for mu in {0, 0.5, 1}",
    11: "commutator transfer bound on 50 random pairs",
    12: "locality of f(H) on the path model",
    13: "even product additivity",
}

_outcomes: dict[int, list[bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number exercised by the test")


def pytest_collection_finish(session):
    # session.items is the post-deselection list
    for item in session.items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _outcomes.setdefault(m.args[0], [])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _outcomes.setdefault(m.args[0], []).append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        res = _outcomes[n]
        status = "PASS" if res and all(res) else ("NOT RUN" if not res else "FAIL")
        terminalreporter.write_line(f"criterion {n:2d}: {status:7s} {CRITERIA.get(n, '')} ({sum(res)}/{len(res)})")
