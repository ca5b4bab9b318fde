import numpy as np
import pytest

from cisdc.problems import LinearScalarProblem, ReactionDiffusionGrid, ReactionDiffusionProblem, StiffnessTriple


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def stiff_linear():
    return LinearScalarProblem(StiffnessTriple(1.0, -2.0, -4.0))


@pytest.fixture(scope="session")
def pde_problem():
    return ReactionDiffusionProblem(ReactionDiffusionGrid(n_x=200, a=1.0, d=2.0, r=4.0))


def collocation_oracle(triple, M, dt=1.0, phi0=1.0):
    """Dense solve of ``Phi = phi0 + dt (q s phi0 + Qt s Phi)`` for the scalar test equation."""
    from cisdc.quadrature import build_tables

    t = build_tables(M)
    s = triple.a + triple.d + triple.r
    lhs = np.eye(M) - dt * s * np.asarray(t.Qt)
    rhs = phi0 * (np.ones(M) + dt * s * np.asarray(t.q))
    return np.linalg.solve(lhs, rhs)


class Criterion:
    """Collects the checks of one acceptance criterion for the summary line."""

    def __init__(self, number, title):
        self.number = number
        self.title = title
        self.checks = []
        self.notes = []

    def check(self, label, ok, detail=""):
        self.checks.append((label, bool(ok), detail))
        return bool(ok)

    def note(self, text):
        self.notes.append(text)

    def line(self):
        if not self.checks:
            status = "REPORT" if self.notes else "NOT RUN"
        else:
            status = "PASS" if all(ok for _, ok, _ in self.checks) else "FAIL"
        failed = [f"{label}: {detail}" for label, ok, detail in self.checks if not ok]
        passed = sum(ok for _, ok, _ in self.checks)
        text = f"criterion {self.number:>2} {status:<6} {self.title} [{passed}/{len(self.checks)} checks]"
        extra = failed + self.notes
        return text + ("".join(f"\n{'':16}{e}" for e in extra) if extra else "")


ACCEPTANCE = {}


def criterion(number, title):
    if number not in ACCEPTANCE:
        ACCEPTANCE[number] = Criterion(number, title)
    return ACCEPTANCE[number]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number].line())
