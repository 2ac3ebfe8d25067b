import sys

import numpy as np
import pytest

from polaron_tcl.bath import build_kernel_tables
from polaron_tcl.model import (
    BathSpec,
    FullyCorrelated,
    SiteNetwork,
    fmo4_fast_bath,
    fmo4_preset,
)
from polaron_tcl.polaron import build_polaron_frame


@pytest.fixture(scope="session")
def fmo():
    return fmo4_preset()


@pytest.fixture(scope="session")
def fmo_tables(fmo):
    net, bath = fmo
    return build_kernel_tables(net, bath, 0.125, 500.0)


@pytest.fixture(scope="session")
def fmo_frame(fmo, fmo_tables):
    return build_polaron_frame(*fmo, fmo_tables)


@pytest.fixture(scope="session")
def fast():
    return fmo4_fast_bath()


@pytest.fixture(scope="session")
def correlated(fmo):
    net, bath = fmo
    return net, BathSpec(bath.kT, bath.spectral_density, FullyCorrelated())


@pytest.fixture(scope="session")
def dimer():
    _, bath = fmo4_preset()
    net = SiteNetwork(np.array([100.0, 0.0]), np.array([[0.0, 40.0], [40.0, 0.0]]))
    return net, bath


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", {})
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n].line())
