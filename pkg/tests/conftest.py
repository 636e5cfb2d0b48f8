import numpy as np
import pytest

from coopvin import tensor_core as tc
from coopvin.lattice import build_default_model


def tape_grad(build, *arrays):
    """Gradients of the scalar ``build(*vars)`` w.r.t. each array."""
    tape = tc.Tape()
    vs = [tape.variable(a) for a in arrays]
    out = build(*vs)
    grads = tape.backward(out)
    return float(tc.value(out)), [grads[v] for v in vs]


def central_diff(build, arrays, which, h=1e-4):
    base = [np.array(a, dtype=float) for a in arrays]
    x = base[which]
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        plus = [b.copy() for b in base]
        minus = [b.copy() for b in base]
        plus[which][i] += h
        minus[which][i] -= h
        g[i] = (float(tc.value(build(*plus))) - float(tc.value(build(*minus)))) / (2 * h)
    return g


def assert_grad_close(analytic, numeric, rtol=1e-4, atol=1e-7):
    err = np.abs(analytic - numeric)
    bound = atol + rtol * np.abs(numeric)
    worst = np.unravel_index(int(np.argmax(err - bound)), err.shape) if err.size else ()
    assert np.all(err <= bound), f"gradient mismatch at {worst}: {analytic[worst]} vs {numeric[worst]}"


def check_gradients(build, *arrays, h=1e-4, rtol=1e-4, atol=1e-7):
    _, grads = tape_grad(build, *arrays)
    for k in range(len(arrays)):
        assert_grad_close(grads[k], central_diff(build, arrays, k, h), rtol, atol)


@pytest.fixture(scope="session")
def model8():
    return build_default_model(8)


@pytest.fixture(scope="session")
def model4():
    return build_default_model(4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
