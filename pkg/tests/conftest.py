import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from diffnet import harness
from diffnet.netmodel import DiscreteModel
from diffnet.polymat import PolyMatrix

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def four_node():
    return harness.load_network("four_node_network.json")


@pytest.fixture(scope="session")
def four_node_identity_noise(four_node):
    """The four-node network with ``C = I`` and no process noise."""
    m = four_node.discrete()
    return DiscreteModel(m.A, m.B, PolyMatrix.identity(4), np.zeros((4, 4)), m.Ts)


@pytest.fixture(scope="session")
def spec_k1():
    return harness.load_spec("spec_k1.json")


@pytest.fixture(scope="session")
def spec_k3():
    return harness.load_spec("spec_k3.json")


@pytest.fixture(scope="session")
def exp2_k3_report():
    """20 replications of the three-excitation experiment, shared by the acceptance checks."""
    cfg = harness.load_experiment("exp2_k3.json").replace(runs=20)
    return harness.run_experiment2(cfg)


@pytest.fixture(scope="session")
def exp2_k1_report():
    cfg = harness.load_experiment("exp2_k1.json").replace(runs=20)
    return harness.run_experiment2(cfg)


def pytest_configure(config):
    config.acceptance_lines = {}


@pytest.fixture
def acceptance(request, capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
        request.config.acceptance_lines[number] = line
        with capsys.disabled():
            print("\n" + line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
