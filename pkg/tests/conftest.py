"""Shared instance generators and the acceptance summary hook."""

import numpy as np
import pytest

from refutable.core import DiscretizedObservables


def random_F(rng, K=None, pr_z1=None, width=None):
    """Arbitrary valid observables; the dominance inequalities may fail."""
    K = K or int(rng.integers(2, 9))
    y = rng.uniform(-2, 2) + np.arange(K) * (width or rng.uniform(0.2, 1.5))
    p = rng.dirichlet(np.full(2 * K, 0.7)).reshape(K, 2)
    q = rng.dirichlet(np.full(2 * K, 0.7)).reshape(K, 2)
    return DiscretizedObservables.from_bin_masses(y, p, q, pr_z1 if pr_z1 is not None else rng.uniform(0.2, 0.8))


def typed_F(rng, K=None, defier_share=0.0, pr_z1=None):
    """Observables built from compliance types, so a structure exists by construction."""
    K = K or int(rng.integers(2, 9))
    y = np.arange(K, dtype=float) * rng.uniform(0.3, 1.2) + rng.uniform(-1, 1)
    shares = rng.dirichlet(np.ones(3)) * (1 - defier_share)
    at, nt, co = shares
    dens = lambda: rng.dirichlet(np.full(K, 0.8))
    at1, co1, df1 = dens(), dens(), dens()
    nt0, co0, df0 = dens(), dens(), dens()
    p = np.column_stack([nt * nt0 + defier_share * df0, at * at1 + co * co1])
    q = np.column_stack([nt * nt0 + co * co0, at * at1 + defier_share * df1])
    return DiscretizedObservables.from_bin_masses(y, p, q, pr_z1 if pr_z1 is not None else rng.uniform(0.2, 0.8),
                                                  normalize=True)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def two_bin_F():
    # p(., 1) = (0.2, 0.1), q(., 1) = (0.3, 0.05). Equal untreated arms cannot
    # normalize both; this completion has the least untreated violation, 0.05.
    p = np.array([[0.35, 0.2], [0.35, 0.1]])
    q = np.array([[0.35, 0.3], [0.30, 0.05]])
    return DiscretizedObservables(np.array([0.0, 1.0]), 1.0, p, q, 0.5)


# acceptance summary --------------------------------------------------------

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")
    config.addinivalue_line("markers", "slow: long-running")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        if report.outcome == "skipped" and isinstance(report.longrepr, tuple):
            detail = detail or report.longrepr[2]
        _ACCEPTANCE[number] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        status, title, detail = _ACCEPTANCE[number]
        line = f"criterion {number}: {status}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
