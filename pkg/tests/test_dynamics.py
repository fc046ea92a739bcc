import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stochmode.dynamics import (
    DriveSpec,
    IntegrationError,
    Liouvillian,
    Pseudomode,
    PseudomodeSet,
    SystemSpec,
    default_step,
    integrate,
    lindblad_rhs,
    thermal_init,
)
from stochmode.qcore import DensityMatrix, HilbertLayout, LayoutError, annihilator, sigma_x, sigma_z

from conftest import random_matrix, random_state


def oracle_rhs(H_S, couplings, modes, rho, xi=()):
    """Dense generator written directly from the pseudo-Lindblad formula."""
    dims = [H_S.shape[0]] + [m.fock_dim for m in modes]

    def lift(op, slot):
        f = [np.eye(d) for d in dims]
        f[slot] = op
        out = np.ones((1, 1))
        for x in f:
            out = np.kron(out, x)
        return out

    H = lift(H_S, 0).astype(complex)
    S = [lift(s, 0) for s in couplings]
    for b, x in enumerate(xi):
        H = H + x * S[b]
    out = np.zeros_like(rho, dtype=complex)
    for j, m in enumerate(modes, start=1):
        a = lift(annihilator(m.fock_dim), j)
        ad = a.T  # transpose only: parameters are never conjugated
        H = H + m.coupling * (a + ad) @ S[m.bath] + m.frequency * ad @ a
        n = m.occupation
        out += m.rate * (1 + n) * (2 * a @ rho @ ad - ad @ a @ rho - rho @ ad @ a)
        out += m.rate * n * (2 * ad @ rho @ a - a @ ad @ rho - rho @ a @ ad)
    return out - 1j * (H @ rho - rho @ H)


def rand_c(rng, scale=1.0):
    return complex(*rng.normal(size=2) * scale)


def random_setup(rng, dims, n_baths=1):
    d0 = dims[0]
    H = random_matrix(rng, d0)
    H = H + H.conj().T
    couplings = [random_matrix(rng, d0) for _ in range(n_baths)]
    modes = tuple(
        Pseudomode(coupling=rand_c(rng), frequency=rand_c(rng), rate=rand_c(rng), occupation=rand_c(rng, 0.3),
                   fock_dim=d, bath=int(rng.integers(n_baths)))
        for d in dims[1:]
    )
    return SystemSpec(H, tuple(couplings)), PseudomodeSet(modes)


def test_empty_generator_is_zero():
    sys = SystemSpec(np.zeros((2, 2)), (sigma_x(),))
    rho = DensityMatrix(HilbertLayout((2,)), np.eye(2) / 2)
    assert np.all(lindblad_rhs(rho, 0.0, sys, PseudomodeSet(())).entries == 0)


@given(seed=st.integers(0, 2**31), dims=st.sampled_from([(2, 2), (2, 3), (2, 2, 3), (3, 2, 2), (2, 4)]),
       n_baths=st.integers(1, 2))
def test_generator_matches_oracle_and_is_traceless(seed, dims, n_baths):
    rng = np.random.default_rng(seed)
    sys, pm = random_setup(rng, dims, n_baths)
    D = int(np.prod(dims))
    rho = random_matrix(rng, D)
    xi = [rand_c(rng) for _ in range(n_baths)]
    drive = DriveSpec(tuple((lambda t, x=x: np.full(np.shape(t), x)) for x in xi))
    out = lindblad_rhs(DensityMatrix(HilbertLayout(dims), rho), 0.3, sys, pm, drive).entries
    ref = oracle_rhs(sys.H_S, sys.couplings, pm.modes, rho, xi)
    scale = np.max(np.abs(ref))
    assert np.max(np.abs(out - ref)) <= 1e-12 * scale
    assert abs(np.trace(out)) <= 1e-12 * scale * D


@pytest.mark.parametrize("dims", [(2, 3), (2, 4, 3), (2, 3, 3, 2)])
def test_sparse_dense_tensor_paths_agree(dims, rng):
    sys, pm = random_setup(rng, dims, 2)
    gen = Liouvillian(sys, pm)
    X = np.stack([random_matrix(rng, gen.D) for _ in range(3)])
    xi = rng.normal(size=(2, 3)) + 1j * rng.normal(size=(2, 3))
    a = gen._apply_tensor(X, xi)
    b = gen._apply_dense(X, xi)
    c = gen._apply_sparse(X, xi)
    s = np.max(np.abs(a))
    assert np.max(np.abs(a - b)) <= 1e-13 * s
    assert np.max(np.abs(a - c)) <= 1e-13 * s


def test_vacuum_decay_of_single_excitation():
    G = 0.3
    pm = PseudomodeSet((Pseudomode(0.0, 1.0, G, 0.0, fock_dim=2),))
    sys = SystemSpec(np.zeros((1, 1)), (np.zeros((1, 1)),))
    rho0 = DensityMatrix(HilbertLayout((1, 2)), np.diag([0.0, 1.0]))
    grid = np.linspace(0, 5, 11)
    tr = integrate(sys, pm, None, rho0, grid, h=1e-3)
    assert np.max(np.abs(tr.top_population[:, 0] - np.exp(-2 * G * grid))) <= 1e-10


def test_free_precession():
    sys = SystemSpec(0.5 * sigma_z(), (sigma_x(),), {"sx": sigma_x()})
    plus = DensityMatrix(HilbertLayout((2,)), np.full((2, 2), 0.5))
    grid = np.linspace(0, 10, 101)
    tr = integrate(sys, PseudomodeSet(()), None, plus, grid, h=1e-3)
    assert np.max(np.abs(tr.observables["sx"] - np.cos(grid))) <= 1e-8


def test_trace_preserved_with_complex_parameters_and_imaginary_drive(rng):
    sys, pm = random_setup(rng, (2, 4, 3), 1)
    pm = PseudomodeSet(tuple(
        Pseudomode(m.coupling * 0.3, m.frequency, complex(abs(m.rate.real) + 0.2, m.rate.imag), 0j, m.fock_dim)
        for m in pm.modes
    ))
    drive = DriveSpec((lambda t: 0.4j * np.cos(1.7 * np.asarray(t)) - 0.2j,))
    rho0 = thermal_init(pm, rho_s=random_state(rng, 2))
    tr = integrate(sys, pm, drive, rho0, np.linspace(0, 10, 51), trace_tol=1e-8)
    assert np.max(np.abs(tr.trace - 1)) <= 1e-8


def test_rk4_convergence_order():
    lam = 0.2 / math.sqrt(2 * math.pi)
    pm = PseudomodeSet((Pseudomode(math.sqrt(lam**2 / 2), 1.0, 0.05, 0.0, fock_dim=5),))
    sys = SystemSpec(0.5 * sigma_z(), (sigma_x(),), {"sz": sigma_z()})
    drive = DriveSpec((lambda t: 0.05j * np.sin(0.9 * np.asarray(t)),))
    rho0 = thermal_init(pm, rho_s=np.diag([1.0, 0.0]))
    grid = np.linspace(0, 10, 11)
    runs = [integrate(sys, pm, drive, rho0, grid, h=h).observables["sz"] for h in (0.25, 0.125, 0.0625)]
    e1 = np.max(np.abs(runs[0] - runs[1]))
    e2 = np.max(np.abs(runs[1] - runs[2]))
    assert math.log2(e1 / e2) >= 3.5


def test_physical_run_stays_hermitian_and_positive():
    pm = PseudomodeSet((Pseudomode(0.3, 1.0, 0.2, 0.1, fock_dim=5),))
    sys = SystemSpec(0.5 * sigma_z(), (sigma_x(),))
    rho0 = thermal_init(pm, rho_s=np.diag([1.0, 0.0]))
    tr = integrate(sys, pm, None, rho0, np.linspace(0, 10, 21), store_states=True)
    for s in tr.states:
        assert s.hermiticity_defect() <= 1e-12
        assert np.min(np.linalg.eigvalsh(s.hermitized().entries)) >= -1e-10


def test_imaginary_drive_gives_non_hermitian_trajectory():
    sys = SystemSpec(0.5 * sigma_z(), (sigma_x(),))
    rho0 = DensityMatrix(HilbertLayout((2,)), np.diag([1.0, 0.0]))
    drive = DriveSpec((lambda t: 0.3j * np.ones(np.shape(t)),))
    tr = integrate(sys, PseudomodeSet(()), drive, rho0, np.linspace(0, 3, 7))
    assert tr.reduced_state(6).hermiticity_defect() > 1e-3


def test_coupling_sign_is_irrelevant():
    lam = 0.2 / math.sqrt(2 * math.pi)
    pm = PseudomodeSet((Pseudomode(complex(math.sqrt(lam**2 / 2)), 1.0, 0.05, 0.0, fock_dim=5),))
    sys = SystemSpec(0.5 * sigma_z(), (sigma_x(),), {"sz": sigma_z()})
    rho0 = thermal_init(pm, rho_s=np.diag([1.0, 0.0]))
    grid = np.linspace(0, 10, 21)
    a = integrate(sys, pm, None, rho0, grid).observables["sz"]
    b = integrate(sys, pm.flip_coupling_sign(0), None, rho0, grid).observables["sz"]
    assert np.max(np.abs(a - b)) <= 1e-12


def test_thermal_init_examples():
    pm = PseudomodeSet((Pseudomode(0.1, 1.0, 0.1, 0.0, fock_dim=4),))
    assert np.array_equal(np.diag(thermal_init(pm).entries), [1, 0, 0, 0])
    beta, Om = 1.5, 0.7
    errs = []
    for d in (4, 8, 16, 32):
        pm = PseudomodeSet((Pseudomode(0.1, Om, 0.1, 0.0, fock_dim=d),))
        p = np.diag(thermal_init(pm, beta_j=[beta]).entries).real
        assert np.allclose(p[1:] / p[:-1], math.exp(-beta * Om))
        errs.append(abs(np.sum(np.arange(d) * p) - 1 / (math.exp(beta * Om) - 1)))
    assert errs == sorted(errs, reverse=True) and errs[-1] < 1e-12


def test_occupation_realised_through_log_rule():
    # beta Omega = ln((1 + n)/n) reproduces occupation n as the truncation grows
    n = 0.156
    pm = PseudomodeSet((Pseudomode(0.1, 1.0, 0.1, n, fock_dim=40),))
    p = np.diag(thermal_init(pm).entries).real
    assert np.sum(np.arange(40) * p) == pytest.approx(n, rel=1e-12)
    pm_c = PseudomodeSet((Pseudomode(0.1, 1.0, 0.1, 0.1 + 0.05j, fock_dim=40),))
    p_c = np.diag(thermal_init(pm_c).entries)
    assert np.sum(np.arange(40) * p_c) == pytest.approx(0.1 + 0.05j, rel=1e-10)


def test_integration_errors():
    sys = SystemSpec(0.5 * sigma_z(), (sigma_x(),))
    rho0 = DensityMatrix(HilbertLayout((2,)), np.diag([1.0, 0.0]))
    grid = np.linspace(0, 1, 3)
    with pytest.raises(IntegrationError):
        integrate(sys, PseudomodeSet(()), DriveSpec((lambda t: np.full(np.shape(t), np.nan),)), rho0, grid)
    pm = PseudomodeSet((Pseudomode(3.0, 1.0, 50.0, 0.0, fock_dim=4),))
    with pytest.raises(IntegrationError, match="reduce the step"):
        integrate(sys, pm, None, thermal_init(pm, rho_s=np.diag([1.0, 0.0])), np.linspace(0, 5, 6), h=0.5)
    with pytest.raises(LayoutError):
        integrate(sys, pm, None, rho0, grid)
    with pytest.raises(ValueError):
        integrate(sys, PseudomodeSet(()), None, rho0, np.array([0.0, 0.1, 0.3]))
    with pytest.raises(ValueError):
        integrate(sys, PseudomodeSet(()), None, DensityMatrix(HilbertLayout((2,)), np.eye(2)), grid)
    with pytest.raises(ValueError):
        Pseudomode(0.1, 1.0, 0.1, fock_dim=1)


def test_auto_truncation_grows_fock_space():
    pm = PseudomodeSet((Pseudomode(0.6, 1.0, 0.05, 0.0, fock_dim=2),))
    sys = SystemSpec(0.5 * sigma_z(), (sigma_x(),), {"sz": sigma_z()})
    rho0 = thermal_init(pm, rho_s=np.diag([1.0, 0.0]))
    tr = integrate(sys, pm, None, rho0, np.linspace(0, 5, 11), auto_truncate=True, top_tol=1e-4)
    assert tr.layout.dims[1] > 2
    assert np.max(np.abs(tr.top_population)) <= 1e-4 or tr.layout.dims[1] == 14


def test_default_step_rule():
    pm = PseudomodeSet((Pseudomode(0.1, 4.0, 0.5, fock_dim=2),))
    sys = SystemSpec(0.5 * sigma_z(), (sigma_x(),))
    assert default_step(sys, pm) == pytest.approx(0.02 / 4.0)
