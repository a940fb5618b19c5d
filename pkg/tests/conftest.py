import numpy as np
import pytest

from rcmlab import ConductanceLaw, LatticeSpec, sample_environment

LAWS = {
    "constant": ConductanceLaw.constant(1.0),
    "constant_half": ConductanceLaw.constant(0.5),
    "bernoulli": ConductanceLaw.bernoulli_degenerate(0.05),
    "polynomial": ConductanceLaw.polynomial_tail(1, 0.5),
    "dyadic": ConductanceLaw.dyadic_trap(4, 0.5),
    "custom": ConductanceLaw.custom({0.5: 0.3, 1.0: 0.5, 3.0: 0.2}),
}


def small_env(law="polynomial", d2=1, L=8, seed=0, mu_mode="counting", alpha=1.0, **kw):
    spec = LatticeSpec(d1=kw.pop("d1", 0), d2=d2, L=L, **kw)
    return sample_environment(LAWS[law] if isinstance(law, str) else law, spec, mu_mode,
                              seed=seed, alpha=alpha)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[1])):
        terminalreporter.write_line(line)
