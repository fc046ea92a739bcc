import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st
from scipy import integrate

from stochmode.bath import (
    BathError,
    BrownianCritical,
    BrownianOverdamped,
    BrownianUnderdamped,
    MatsubaraDegeneracyError,
    OhmicExp,
    RationalGeneric,
    SineTerm,
    UnsupportedVariant,
    antisymmetric_terms,
    build_decomposition,
    classify_poles,
    correlation_numeric,
    default_matsubara_cutoff,
    deterministic_comparator_params,
    matsubara_integral_quad,
    pseudomode_correlation,
    pseudomode_params_from_decomposition,
    thermal_coth,
)

LAM = 0.2 / math.sqrt(2 * math.pi)
NARROW = BrownianUnderdamped(1.0, 0.05, LAM)
FINITE_T = BrownianUnderdamped(1.0, 0.1, LAM)
OVER = BrownianOverdamped(1.0, 3.0, 0.5)


def sympy_residues(num_coeffs, roots):
    w = sp.symbols("w")
    num = sum(sp.nsimplify(c) * w**k for k, c in enumerate(num_coeffs))
    den = sp.prod([w - r for r in roots])
    return [complex(sp.N(sp.residue(num / den, w, r), 30)) for r in roots]


# --- pole classification -------------------------------------------------------


def test_underdamped_residue_and_counts():
    pd = classify_poles(NARROW)
    assert len(pd.quadruples) == 1 and len(pd.imaginary_pairs) == 0
    (w1, r1), = pd.quadruples
    O, G = NARROW.Omega, NARROW.Gamma
    assert w1 == pytest.approx(complex(O, G), abs=1e-15)
    assert abs(r1 - (-1j * LAM**2 / (4 * O))) <= 1e-12


def test_overdamped_residues_and_counts():
    pd = classify_poles(OVER)
    assert len(pd.quadruples) == 0 and len(pd.imaginary_pairs) == 2
    aO = OVER.abs_Omega
    got = {round(w.imag, 12): r for w, r in pd.imaginary_pairs}
    assert abs(got[round(OVER.Gamma - aO, 12)] - OVER.lam**2 / (4 * aO)) <= 1e-12
    assert abs(got[round(OVER.Gamma + aO, 12)] + OVER.lam**2 / (4 * aO)) <= 1e-12


def test_generic_rational_two_imaginary_pairs():
    J = RationalGeneric((0.0, 1.0), (1j, -1j, 2j, -2j))
    pd = classify_poles(J)
    assert len(pd.quadruples) == 0 and len(pd.imaginary_pairs) == 2
    oracle = sympy_residues([0, 1], [sp.I, -sp.I, 2 * sp.I, -2 * sp.I])
    assert np.allclose(pd.residues, oracle, atol=1e-15)
    # by hand: w/((w^2+1)(w^2+4)) has residue 1/6 at i and -1/6 at 2i
    got = {round(w.imag): r for w, r in pd.imaginary_pairs}
    assert got[1] == pytest.approx(1 / 6) and got[2] == pytest.approx(-1 / 6)
    for _, r in pd.imaginary_pairs:
        assert r.imag == 0.0


def test_residues_match_sympy_for_brownian():
    O, G = NARROW.Omega, NARROW.Gamma
    roots = [complex(O, G), complex(-O, G), complex(O, -G), complex(-O, -G)]
    oracle = sympy_residues([0, NARROW.gamma * LAM**2], roots)
    assert np.allclose(classify_poles(NARROW).residues, oracle, atol=1e-14)


brownian_params = st.tuples(
    st.floats(0.3, 3.0), st.floats(0.01, 0.95), st.floats(0.05, 1.0)
).map(lambda p: BrownianUnderdamped(p[0], p[1] * 2 * p[0], p[2]))


@given(J=brownian_params, seed=st.integers(0, 2**31))
def test_partial_fraction_reconstruction(J, seed):
    pd = classify_poles(J)
    w = np.random.default_rng(seed).uniform(-5 * J.omega0, 5 * J.omega0, 20)
    assert np.max(np.abs(pd.reconstruct(w) - J(w))) <= 1e-10


def test_rational_generic_validation():
    with pytest.raises(BathError, match="odd"):
        RationalGeneric((1.0, 1.0), (1j, -1j, 2j, -2j))
    with pytest.raises(BathError, match="degree"):
        RationalGeneric((0.0, 1.0, 0.0, 1.0), (1j, -1j, 2j, -2j))
    with pytest.raises(BathError, match="real-axis"):
        RationalGeneric((0.0, 1.0), (1.0, -1.0, 2j, -2j))
    with pytest.raises(BathError, match="closed"):
        RationalGeneric((0.0, 1.0), (1 + 1j, 1 - 1j, -1 + 1j, -1 - 2j))
    with pytest.raises(BathError, match="multiplicity"):
        RationalGeneric((0.0, 1.0), (1j, -1j, 1j, -1j))


def test_variant_invariants():
    with pytest.raises(BathError):
        BrownianUnderdamped(1.0, 2.5, 0.1)
    with pytest.raises(BathError):
        BrownianOverdamped(1.0, 1.0, 0.1)
    with pytest.raises(BathError):
        BrownianCritical(1.0, 1.0, 0.1)
    with pytest.raises(BathError):
        OhmicExp(0.0, 1.0)


# --- correlation quadrature -----------------------------------------------------


def test_numeric_t0_is_integral_of_J():
    ref, _ = integrate.quad(lambda w: NARROW(w), 0, np.inf, points=None, limit=500, epsabs=1e-13)
    ref2 = sum(integrate.quad(NARROW, a, b, limit=500, epsabs=1e-14)[0] for a, b in [(0, 0.9), (0.9, 1.1), (1.1, 50)])
    ref2 += integrate.quad(NARROW, 50, np.inf, epsabs=1e-14)[0]
    val = correlation_numeric(NARROW, None, np.array([0.0]))[0]
    assert abs(val.imag) == 0.0
    assert val.real == pytest.approx(ref2 / np.pi, abs=1e-9)


def test_numeric_matches_closed_form_zero_T():
    t = np.linspace(0.05, 25, 40)
    dec = build_decomposition(NARROW, None, T=25)
    assert np.max(np.abs(correlation_numeric(NARROW, None, t) - dec.C(t))) <= 1e-6


def test_numeric_matches_closed_form_finite_T():
    t = np.linspace(0.05, 25, 25)
    dec = build_decomposition(FINITE_T, 2.0, T=25)
    assert np.max(np.abs(correlation_numeric(FINITE_T, 2.0, t) - dec.C(t))) <= 1e-6


def test_ohmic_antisymmetric_part():
    J = OhmicExp(0.02, 3.0)
    t = np.linspace(0.01, 10, 30)
    _, cas = correlation_numeric(J, None, t, parts=True)
    oracle = -2j * 0.02 * 27 * t / (1 + 9 * t**2) ** 2
    assert np.max(np.abs(cas - oracle)) <= 1e-8


# --- decompositions -------------------------------------------------------------


DECOMPS = [
    ("narrow_T0", NARROW, None),
    ("finite_T_beta2", FINITE_T, 2.0),
    ("overdamped_beta1", OVER, 1.0),
    ("generic_beta3", RationalGeneric((0.0, 1.0), (1j, -1j, 2j, -2j)), 3.0),
]


@pytest.mark.parametrize("name,J,beta", DECOMPS, ids=[d[0] for d in DECOMPS])
def test_decomposition_symmetries(name, J, beta):
    dec = build_decomposition(J, beta, T=25)
    t = np.linspace(25 / 4000, 25, 200)
    assert np.max(np.abs(dec.C_s(-t) - dec.C_s(t))) <= 1e-10
    assert np.max(np.abs(dec.C_as(-t) + dec.C_as(t))) <= 1e-10
    assert np.max(np.abs(dec.C_class(-t) - dec.C_class(t))) <= 1e-10
    assert np.max(np.abs(dec.C(-t) - np.conj(dec.C(t)))) <= 1e-8
    # C = C_class + C_Q away from the distributional t = 0 modification
    tt = t[t > 5 / dec.W] if dec.W else t
    assert np.max(np.abs(dec.C_class(tt) + dec.C_Q(tt) - dec.C(tt))) <= 1e-6


@pytest.mark.parametrize("name,J,beta", DECOMPS[:3], ids=[d[0] for d in DECOMPS[:3]])
def test_decomposition_matches_quadrature(name, J, beta):
    dec = build_decomposition(J, beta, T=25)
    t = np.linspace(0.1, 25, 20)
    cs, cas = correlation_numeric(J, beta, t, parts=True)
    assert np.max(np.abs(dec.C_s(t) - cs)) <= 1e-6
    assert np.max(np.abs(dec.C_as(t) - cas)) <= 1e-6
    # the sine ansatz agrees with the exact C_as beyond the W scale
    tw = t[t > 0.1 / dec.W]
    assert np.max(np.abs(dec.C_as_ansatz(tw) - cas[t > 0.1 / dec.W])) <= 1e-6


def test_underdamped_single_sine_term_and_quantum_part():
    dec = build_decomposition(NARROW, None, T=25)
    (term,) = dec.sine_terms
    O, G = NARROW.Omega, NARROW.Gamma
    assert term.a == pytest.approx(-1j * LAM**2 / (2 * O), abs=1e-15)
    assert term.b == pytest.approx(O) and term.c == pytest.approx(G)
    t = np.linspace(-25, 25, 201)
    oracle = LAM**2 / (2 * O) * np.exp(-1j * O * t - G * np.abs(t))
    assert np.max(np.abs(dec.C_Q(t) - oracle)) <= 1e-15


def test_overdamped_antisymmetric_terms():
    dec = build_decomposition(OVER, 1.0, T=25)
    assert len(dec.sine_terms) == 2
    G, aO = OVER.Gamma, OVER.abs_Omega
    t = np.linspace(5 / dec.W, 10, 300)
    oracle = 1j * OVER.lam**2 / (4 * aO) * np.exp(-G * t) * (np.exp(-aO * t) - np.exp(aO * t))
    assert np.max(np.abs(dec.C_as_ansatz(t) - oracle)) <= 1e-6


def test_term_count_per_pole_type():
    # 3 per quadruple with a complex residue, 1 per imaginary pair
    J = RationalGeneric((0.0, 1.0, 0.0, 0.5), (1 + 1j, -1 + 1j, 1 - 1j, -1 - 1j, 2j, -2j))
    pd = classify_poles(J)
    assert len(pd.quadruples) == 1 and len(pd.imaginary_pairs) == 1
    (_, r), = pd.quadruples
    assert r.real != 0 and r.imag != 0
    assert len(antisymmetric_terms(pd)) == 4


def test_w_convergence_is_monotone():
    J = RationalGeneric((0.0, 1.0, 0.0, 0.5), (1 + 1j, -1 + 1j, 1 - 1j, -1 - 1j, 2j, -2j))
    pd = classify_poles(J)
    dec = build_decomposition(J, 2.0, T=10)
    s = pd.scale()
    t = np.linspace(0.2 / s, 10, 200)
    exact = correlation_numeric(J, 2.0, t, parts=True)[1]
    errs = []
    for f in (25, 50, 100):
        terms = antisymmetric_terms(pd, W=f * s, w_factor=25)
        approx = sum(term.sine(t) for term in terms)
        errs.append(np.max(np.abs(approx - exact)))
    assert errs[0] > errs[1] > errs[2]
    with pytest.raises(BathError, match="too small"):
        antisymmetric_terms(pd, W=10 * s)
    assert dec.W == pytest.approx(50 * s)


def test_zero_T_classical_part_is_matsubara_integral():
    dec = build_decomposition(NARROW, None, T=25)
    for t in (0.0, 0.3, 2.0, 11.0):
        assert abs(dec.C_class(np.array([t]))[0] - matsubara_integral_quad(NARROW, t)) <= 1e-10


def test_matsubara_cutoff_rule():
    for beta in (0.5, 2.0, 8.0):
        K = default_matsubara_cutoff(FINITE_T, beta, 25 / 4000)
        assert K >= math.ceil(10 * FINITE_T.scale() * beta / (2 * math.pi))
        assert K <= 2000


def test_matsubara_degeneracy_detected():
    G, aO = OVER.Gamma, OVER.abs_Omega
    beta = 2 * math.pi / (G + aO)
    with pytest.raises(MatsubaraDegeneracyError, match="perturb beta"):
        build_decomposition(OVER, beta, T=10)
    build_decomposition(OVER, beta * (1 + 1e-6), T=10)


def test_unsupported_variants():
    crit = BrownianCritical(1.0, 2.0, 0.3)
    with pytest.raises(UnsupportedVariant):
        build_decomposition(crit, 1.0, T=10)
    dec = build_decomposition(crit, 1.0, T=10, split="classical_symmetric")
    t = np.linspace(0.1, 5, 5)
    assert np.allclose(dec.C_Q(t), dec.C_as(t))


# --- pseudomode parameters ------------------------------------------------------


def test_underdamped_pseudomode():
    pm = pseudomode_params_from_decomposition(build_decomposition(NARROW, None, T=25), fock_dim=6)
    (m,) = pm.modes
    assert m.coupling == pytest.approx(math.sqrt(LAM**2 / (2 * NARROW.Omega)), abs=1e-15)
    assert m.frequency == pytest.approx(NARROW.Omega) and m.rate == pytest.approx(NARROW.Gamma)
    assert m.occupation == 0


@pytest.mark.parametrize("name,J,beta", DECOMPS, ids=[d[0] for d in DECOMPS])
def test_pseudomode_correlation_equals_quantum_part(name, J, beta):
    dec = build_decomposition(J, beta, T=25)
    pm = pseudomode_params_from_decomposition(dec, fock_dim=4)
    t = np.linspace(-25, 25, 401)
    scale = np.max(np.abs(dec.C_Q(t)))
    assert np.max(np.abs(pseudomode_correlation(pm, t) - dec.C_Q(t))) <= 1e-12 * max(scale, 1)


def test_zero_amplitude_term_dropped():
    base = build_decomposition(NARROW, None, T=25)
    terms = list(base.sine_terms) + [SineTerm(0j, 2.0, 1.0)]
    dec = build_decomposition(NARROW, None, T=25, sine_terms=terms)
    assert len(pseudomode_params_from_decomposition(dec)) == 1


def test_ohmic_fit_gives_two_complex_modes():
    dec = build_decomposition(OhmicExp(0.02, 3.0), None, T=25)
    pm = pseudomode_params_from_decomposition(dec, fock_dim=4)
    assert len(pm) == 2
    for m, term in zip(pm.modes, dec.sine_terms):
        assert m.coupling**2 == pytest.approx(1j * term.a, rel=1e-14)
        assert m.frequency == term.b and m.rate == term.c


def test_comparator_zero_T_limit():
    pm = deterministic_comparator_params(NARROW, None, T=25)
    assert len(pm) == 3  # 1 resonant + 2 Matsubara
    assert pm.modes[0].occupation == 0
    assert thermal_coth(None, 1.0, 0.1) == 1.0
    t = np.linspace(0.05, 25, 300)
    dec = build_decomposition(NARROW, None, T=25)
    err = np.max(np.abs(pseudomode_correlation(pm, t) - dec.C(t)))
    assert err <= 1e-5


def test_comparator_finite_T_five_modes():
    pm, fit = deterministic_comparator_params(FINITE_T, 2.0, T=25, return_fit=True)
    assert len(pm) == 5
    cth = thermal_coth(2.0, FINITE_T.Omega, FINITE_T.Gamma)
    assert pm.modes[0].occupation == pytest.approx((cth.real - 1) / 2)
    assert pm.modes[1].rate == pytest.approx(complex(FINITE_T.Gamma, -FINITE_T.Omega))
    assert pm.modes[2].rate == pytest.approx(complex(FINITE_T.Gamma, FINITE_T.Omega))
    t = np.linspace(0.05, 25, 300)
    dec = build_decomposition(FINITE_T, 2.0, T=25)
    from stochmode.dynamics import PseudomodeSet

    # resonant modes reproduce C minus the Matsubara part exactly
    resonant = pseudomode_correlation(PseudomodeSet(pm.modes[:3]), t)
    assert np.max(np.abs(resonant - (dec.C(t) - dec.matsubara_part(t)))) <= 1e-12
    # the Matsubara modes carry the rest to fit accuracy
    mats = pseudomode_correlation(PseudomodeSet(pm.modes[3:]), t)
    assert np.max(np.abs(mats - dec.matsubara_part(t))) <= 0.02 * abs(dec.matsubara_part(t[:1])[0])
    assert fit.residual_rms <= 1e-8


def test_comparator_rejects_other_baths():
    with pytest.raises(UnsupportedVariant):
        deterministic_comparator_params(OVER, 1.0)
