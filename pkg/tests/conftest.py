import pytest

from hermitefilter.basis import AsymptoticProfile
from hermitefilter.experiments import almost_linear_model, cubic_model
from hermitefilter.fke import StepperConfig
from hermitefilter.nlf import build_window_bank

STEPPER = StepperConfig("crank_nicolson", 1e-4)


@pytest.fixture(scope="session")
def cubic():
    model = cubic_model()
    bank = build_window_bank(
        model, AsymptoticProfile(0.25, 4.0), (-3.0, 3.0), 1e-5, 0.01,
        stepper=STEPPER, n_modes=45, betas=[0.0],
    )
    return model, bank


@pytest.fixture(scope="session")
def almost_linear():
    model = almost_linear_model()
    bank = build_window_bank(
        model, AsymptoticProfile(0.5, 2.0), (-17.0, 17.0), 1e-5, 0.01,
        stepper=STEPPER, n_modes=25, alpha=1.0,
    )
    return model, bank


_ACCEPTANCE = pytest.StashKey()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def report(number, ok, detail):
        line = f"ACCEPTANCE {number} {'PASS' if ok else 'FAIL'}  {detail}"
        lines[number] = line
        print(line)

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
