import cvxpy as cp
import numpy as np
import pytest

from dma_noma.conic import ConicProgram


def test_simple_socp():
    prog = ConicProgram()
    x = prog.variable("x", 2)
    prog.add(cp.norm(x) <= 1.0)
    prog.maximize(x[0] + x[1])
    res = prog.solve()
    assert res.status == "optimal"
    assert res.objective == pytest.approx(np.sqrt(2.0), rel=1e-6)
    assert np.allclose(res.values["x"], np.ones(2) / np.sqrt(2.0), atol=1e-5)


def test_infeasible_detected():
    prog = ConicProgram()
    x = prog.variable("x")
    prog.add(x >= 1.0, x <= 0.0)
    prog.minimize(x)
    assert prog.solve().status == "infeasible"


def test_parameter_resolve_reuses_problem():
    prog = ConicProgram()
    x = prog.variable("x")
    c = cp.Parameter()
    prog.add(x <= c)
    prog.maximize(x)
    for target in (1.0, 3.5, -2.0):
        c.value = target
        res = prog.solve()
        assert res.objective == pytest.approx(target, abs=1e-7)


def test_complex_variable_roundtrip():
    prog = ConicProgram()
    z = prog.variable("z", 2, complex=True)
    h = np.array([1.0 + 1.0j, 2.0 - 1.0j])
    prog.add(cp.norm(z) <= 1.0)
    prog.maximize(cp.real(cp.conj(h) @ z))
    res = prog.solve()
    assert res.status == "optimal"
    assert res.objective == pytest.approx(np.linalg.norm(h), rel=1e-6)


def test_semidefinite_trace_constraint():
    prog = ConicProgram()
    v = prog.variable("V", (2, 2), hermitian=True)
    a = np.array([[2.0, 0.3 + 0.1j], [0.3 - 0.1j, 1.0]])
    prog.add(v >> 0, cp.real(cp.trace(v)) == 1.0)
    prog.maximize(cp.real(cp.trace(a @ v)))
    res = prog.solve()
    top = np.linalg.eigvalsh(a)[-1]
    assert res.objective == pytest.approx(top, rel=1e-6)


def test_duplicate_variable_name_rejected():
    prog = ConicProgram()
    prog.variable("x")
    with pytest.raises(ValueError):
        prog.variable("x")
