"""Spectral densities, bath correlation functions and their decompositions.

The free correlation of a Gaussian bosonic bath is

    C(t) = (1/pi) int_0^inf J(w) [coth(beta w / 2) cos(w t) - i sin(w t)] dw.

It is split into a symmetric part ``C_s`` and antisymmetric ``C_as``, and then
into a classical part ``C_class = C_s + f_s`` (reproduced by commuting
stochastic noise) and a quantum part ``C_Q = C_as - f_s`` (reproduced by
zero-temperature pseudomodes).  ``f_s`` is chosen so that every pseudomode
starts in its vacuum.

For rational J all pieces are exponential sums obtained from residues; for the
Ohmic-exponential density the antisymmetric part is fitted with decaying
sines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy import integrate, special

from .dynamics import Pseudomode, PseudomodeSet

ZERO_T = None  # ``beta=None`` stands for zero temperature throughout
OHMIC_RIDGE = 1e-7

__all__ = [
    "BrownianUnderdamped",
    "BrownianOverdamped",
    "BrownianCritical",
    "OhmicExp",
    "RationalGeneric",
    "SpectralDensity",
    "PoleData",
    "SineTerm",
    "CorrelationDecomposition",
    "BathError",
    "QuadratureError",
    "UnsupportedVariant",
    "MatsubaraDegeneracyError",
    "correlation_numeric",
    "classify_poles",
    "antisymmetric_terms",
    "build_decomposition",
    "pseudomode_params_from_decomposition",
    "deterministic_comparator_params",
    "pseudomode_correlation",
    "default_matsubara_cutoff",
    "matsubara_integral",
]


class BathError(ValueError):
    """Invalid spectral-density parameters or decomposition request."""


class QuadratureError(RuntimeError):
    def __init__(self, msg, achieved_error=None):
        super().__init__(msg)
        self.achieved_error = achieved_error


class UnsupportedVariant(BathError):
    pass


class MatsubaraDegeneracyError(BathError):
    pass


# ---------------------------------------------------------------------------
# spectral densities


@dataclass(frozen=True)
class RationalGeneric:
    """``J(w) = p(w) / prod_k (w - w_k)`` with ``p`` given by ascending coefficients."""

    numerator: tuple[float, ...]
    roots: tuple[complex, ...]
    pairing_rtol: float = 1e-9

    def __post_init__(self):
        num = tuple(float(c) for c in self.numerator)
        roots = tuple(complex(r) for r in self.roots)
        object.__setattr__(self, "numerator", num)
        object.__setattr__(self, "roots", roots)
        # trim trailing zeros to get the true degree
        deg = len(num) - 1
        while deg > 0 and num[deg] == 0.0:
            deg -= 1
        if any(num[k] != 0.0 for k in range(0, deg + 1, 2)):
            raise BathError("numerator must be odd (J antisymmetric): even coefficients must vanish")
        n = len(roots)
        if n == 0 or deg >= n - 1:
            raise BathError(
                f"numerator degree {deg} must be at most number of roots minus 2 ({n - 2}) "
                "so that J is integrable"
            )
        scale = max(abs(r) for r in roots)
        tol = self.pairing_rtol * scale
        for r in roots:
            if abs(r.imag) <= tol:
                raise BathError(f"real-axis root {r} is not allowed")
            for partner in (r.conjugate(), -r.conjugate()):
                if min(abs(partner - q) for q in roots) > tol:
                    raise BathError(f"roots not closed under conjugation / sign flip: {r} lacks {partner}")
        for i in range(n):
            for j in range(i + 1, n):
                if abs(roots[i] - roots[j]) <= tol:
                    raise BathError(f"root multiplicity detected near {roots[i]}; only simple poles are supported")

    @property
    def degree(self) -> int:
        deg = len(self.numerator) - 1
        while deg > 0 and self.numerator[deg] == 0.0:
            deg -= 1
        return deg

    def p(self, w):
        return np.polynomial.polynomial.polyval(w, np.asarray(self.numerator))

    def __call__(self, w):
        w = np.asarray(w, dtype=complex if np.iscomplexobj(w) else float)
        den = np.ones_like(w, dtype=complex)
        for r in self.roots:
            den = den * (w - r)
        val = self.p(w) / den
        return val.real if not np.iscomplexobj(w) else val

    def over_omega(self, w):
        """``J(w)/w`` (the numerator is odd, so this is regular at 0)."""
        c = np.asarray(self.numerator)[1:]
        w = np.asarray(w, dtype=float)
        den = np.ones_like(w, dtype=complex)
        for r in self.roots:
            den = den * (w - r)
        return (np.polynomial.polynomial.polyval(w, c) / den).real

    def rational(self) -> "RationalGeneric":
        return self

    def scale(self) -> float:
        return max(abs(r) for r in self.roots)

    def breakpoints(self) -> list[float]:
        pts = set()
        for r in self.roots:
            if r.real > 0:
                pts.update([max(r.real - 5 * abs(r.imag), 0.0), r.real, r.real + 5 * abs(r.imag)])
            pts.add(abs(r))
        return sorted(pts)


@dataclass(frozen=True)
class _Brownian:
    """``J(w) = gamma lam^2 w / ((w^2 - w0^2)^2 + gamma^2 w^2)``."""

    omega0: float
    gamma: float
    lam: float

    def __post_init__(self):
        if not (self.omega0 > 0 and self.gamma > 0):
            raise BathError("Brownian bath requires omega0 > 0 and gamma > 0")
        if not self.lam > 0:
            raise BathError("Brownian bath requires lam > 0")

    @property
    def Gamma(self) -> float:
        return self.gamma / 2

    @property
    def Omega2(self) -> float:
        """``Omega^2 = omega0^2 - Gamma^2`` (negative when overdamped)."""
        return self.omega0**2 - self.Gamma**2

    def __call__(self, w):
        w = np.asarray(w)
        return self.gamma * self.lam**2 * w / ((w**2 - self.omega0**2) ** 2 + self.gamma**2 * w**2)

    def over_omega(self, w):
        w = np.asarray(w, dtype=float)
        return self.gamma * self.lam**2 / ((w**2 - self.omega0**2) ** 2 + self.gamma**2 * w**2)

    def scale(self) -> float:
        return float(self.omega0)

    def breakpoints(self) -> list[float]:
        w0, g = self.omega0, self.gamma
        return sorted({max(w0 - 10 * g, 0.0), max(w0 - g, 0.0), w0, w0 + g, w0 + 10 * g})


@dataclass(frozen=True)
class BrownianUnderdamped(_Brownian):
    def __post_init__(self):
        super().__post_init__()
        if not self.gamma < 2 * self.omega0:
            raise BathError(f"underdamped Brownian bath requires gamma < 2 omega0 (got gamma={self.gamma}, omega0={self.omega0})")

    @property
    def Omega(self) -> float:
        return math.sqrt(self.Omega2)

    def rational(self) -> RationalGeneric:
        O, G = self.Omega, self.Gamma
        return RationalGeneric(
            (0.0, self.gamma * self.lam**2),
            (complex(O, G), complex(-O, G), complex(O, -G), complex(-O, -G)),
        )


@dataclass(frozen=True)
class BrownianOverdamped(_Brownian):
    def __post_init__(self):
        super().__post_init__()
        if not self.gamma > 2 * self.omega0:
            raise BathError(f"overdamped Brownian bath requires gamma > 2 omega0 (got gamma={self.gamma}, omega0={self.omega0})")

    @property
    def abs_Omega(self) -> float:
        return math.sqrt(-self.Omega2)

    def rational(self) -> RationalGeneric:
        G, aO = self.Gamma, self.abs_Omega
        return RationalGeneric(
            (0.0, self.gamma * self.lam**2),
            (1j * (G + aO), 1j * (G - aO), -1j * (G + aO), -1j * (G - aO)),
        )


@dataclass(frozen=True)
class BrownianCritical(_Brownian):
    """Critical damping: a double pole at ``i Gamma``; no residue construction."""

    def __post_init__(self):
        super().__post_init__()
        if not math.isclose(self.gamma, 2 * self.omega0, rel_tol=1e-12):
            raise BathError(f"critical Brownian bath requires gamma = 2 omega0 (got gamma={self.gamma}, omega0={self.omega0})")

    def rational(self):
        return None


@dataclass(frozen=True)
class OhmicExp:
    """``J(w) = pi alpha w exp(-w / omega_c)``."""

    alpha: float
    omega_c: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.omega_c > 0):
            raise BathError("OhmicExp requires alpha > 0 and omega_c > 0")

    def __call__(self, w):
        w = np.asarray(w)
        return np.pi * self.alpha * w * np.exp(-w / self.omega_c)

    def over_omega(self, w):
        return np.pi * self.alpha * np.exp(-np.asarray(w, dtype=float) / self.omega_c)

    def rational(self):
        return None

    def scale(self) -> float:
        return float(self.omega_c)

    def breakpoints(self) -> list[float]:
        return [self.omega_c, 10 * self.omega_c]


SpectralDensity = Union[BrownianUnderdamped, BrownianOverdamped, BrownianCritical, OhmicExp, RationalGeneric]


# ---------------------------------------------------------------------------
# direct quadrature


def _x_coth_x(x):
    """``x coth(x)`` with the removable singularity at 0 handled."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-6
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 + x * x / 3.0, safe / np.tanh(safe))


def _thermal_weight(J, beta):
    """Return ``w -> J(w) coth(beta w / 2)`` (``J(w)`` when ``beta`` is None)."""
    if beta is None:
        return lambda w: float(J(w))
    two_over_beta = 2.0 / beta
    return lambda w: float(J.over_omega(w) * two_over_beta * _x_coth_x(0.5 * beta * w))


def _fourier_half_line(f, t, kind, breaks, epsabs, epsrel, limit=400):
    """``int_0^inf f(w) cos|sin (w t) dw`` split on ``breaks`` with an oscillatory tail."""
    edges = [0.0] + [b for b in breaks if b > 0]
    edges = sorted(set(edges))
    top = 4.0 * edges[-1] if edges[-1] > 0 else 10.0
    edges.append(top)
    total, err = 0.0, 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if t == 0.0:
            if kind == "sin":
                continue
            v, e = integrate.quad(f, lo, hi, epsabs=epsabs, epsrel=epsrel, limit=limit)
        else:
            v, e = integrate.quad(f, lo, hi, weight=kind, wvar=t, epsabs=epsabs, epsrel=epsrel, limit=limit)
        total += v
        err += e
    if t == 0.0:
        if kind == "cos":
            v, e = integrate.quad(f, top, np.inf, epsabs=epsabs, epsrel=epsrel, limit=limit)
            total += v
            err += e
    else:
        v, e = integrate.quad(f, top, np.inf, weight=kind, wvar=abs(t), epsabs=epsabs, epsrel=epsrel, limlst=200)
        if kind == "sin" and t < 0:
            v = -v
        total += v
        err += e
    return total, err


def correlation_numeric(J, beta, t, epsabs: float = 1e-9, epsrel: float = 1e-8, parts: bool = False):
    """Bath correlation function by adaptive quadrature.

    Returns ``C(t)``; with ``parts=True`` returns ``(C_s(t), C_as(t))``.
    Accepts scalar or array ``t``.
    """
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    sym = np.empty(t_arr.shape)
    asym = np.empty(t_arr.shape)
    fw = _thermal_weight(J, beta)
    fj = lambda w: float(J(w))  # noqa: E731
    breaks = J.breakpoints()
    for i, ti in enumerate(t_arr):
        with np.errstate(all="ignore"):
            vs, es = _fourier_half_line(fw, ti, "cos", breaks, epsabs, epsrel)
            va, ea = _fourier_half_line(fj, ti, "sin", breaks, epsabs, epsrel)
        worst = max(es, ea)
        if not np.isfinite(vs + va) or worst > 100 * max(epsabs, epsrel * abs(vs + 1j * va)):
            raise QuadratureError(f"correlation quadrature did not converge at t={ti}: error {worst:.2e}", worst)
        sym[i] = vs / np.pi
        asym[i] = va / np.pi
    c_s = sym.astype(complex)
    c_as = -1j * asym
    if np.ndim(t) == 0:
        c_s, c_as = c_s[0], c_as[0]
    if parts:
        return c_s, c_as
    return c_s + c_as


# ---------------------------------------------------------------------------
# poles


@dataclass(frozen=True)
class PoleData:
    quadruples: tuple[tuple[complex, complex], ...]
    imaginary_pairs: tuple[tuple[complex, complex], ...]
    poles: tuple[complex, ...]
    residues: tuple[complex, ...]

    @property
    def n_poles(self) -> int:
        return len(self.poles)

    def upper(self) -> list[tuple[complex, complex]]:
        return [(w, r) for w, r in zip(self.poles, self.residues) if w.imag > 0]

    def reconstruct(self, w):
        """Partial-fraction sum ``sum_k R_k / (w - w_k)``."""
        w = np.asarray(w, dtype=complex)
        out = np.zeros_like(w)
        for wk, rk in zip(self.poles, self.residues):
            out = out + rk / (w - wk)
        return out

    def scale(self) -> float:
        return max(abs(w) for w in self.poles)


def classify_poles(J) -> PoleData:
    """Group the poles of a rational J into quadruples and imaginary pairs."""
    rat = J.rational() if not isinstance(J, RationalGeneric) else J
    if rat is None:
        raise UnsupportedVariant(f"{type(J).__name__} has no simple-pole rational form")
    roots = list(rat.roots)
    scale = rat.scale()
    tol = rat.pairing_rtol * scale
    residues = []
    for k, wk in enumerate(roots):
        den = 1.0 + 0j
        for j, wj in enumerate(roots):
            if j != k:
                den *= wk - wj
        residues.append(complex(rat.p(wk)) / den)
    quads, pairs = [], []
    # round-off in the pole products leaves ~1e-20 parts where a residue
    # component vanishes exactly; zero them so no spurious terms appear
    rtol = 1e-12
    residues = [complex(0.0 if abs(r.real) <= rtol * abs(r) else r.real,
                        0.0 if abs(r.imag) <= rtol * abs(r) else r.imag) for r in residues]
    for wk, rk in zip(roots, residues):
        if wk.imag <= 0:
            continue
        if abs(wk.real) <= tol:
            if abs(rk.imag) > 1e-8 * max(abs(rk), 1e-300):
                raise BathError(f"imaginary-pair residue {rk} at {wk} is not real")
            pairs.append((complex(0.0, wk.imag), complex(rk.real, 0.0)))
        elif wk.real > 0:
            quads.append((wk, rk))
    if 4 * len(quads) + 2 * len(pairs) != len(roots):
        raise BathError("pole classification failed: counts do not match 4 N_q + 2 N_i")
    return PoleData(tuple(quads), tuple(pairs), tuple(roots), tuple(residues))


@dataclass(frozen=True)
class SineTerm:
    """One term ``a sin(b t) exp(-c |t|)`` of the antisymmetric ansatz."""

    a: complex
    b: complex
    c: complex

    # exponents are combined before exponentiating: for the W-regularised
    # terms sin(b t) and exp(-c|t|) separately overflow
    def _pair(self, t):
        t = np.asarray(t, dtype=float)
        d = -self.c * np.abs(t)
        return np.exp(1j * self.b * t + d), np.exp(-1j * self.b * t + d)

    def sine(self, t):
        e1, e2 = self._pair(t)
        return self.a * (e1 - e2) / 2j

    def cosine(self, t):
        e1, e2 = self._pair(t)
        return self.a * (e1 + e2) / 2

    def quantum(self, t):
        t = np.asarray(t, dtype=float)
        return 1j * self.a * np.exp(-1j * self.b * t - self.c * np.abs(t))


def antisymmetric_terms(poles: PoleData, W: float | None = None, w_factor: float = 50.0,
                        system_scale: float = 1.0) -> list[SineTerm]:
    """Decaying-sine terms reproducing ``C_as`` as a distribution.

    Each quadruple gives one term with ``b = Re w`` plus two W-regularised
    terms (absent when its residue is purely imaginary); each imaginary pair
    gives one W-regularised term.  The odd ``sg(t) exp(-W |t|)`` remainder is
    dropped.
    """
    scale = max(poles.scale(), system_scale)
    if W is None:
        W = w_factor * scale
    if W < w_factor * scale:
        raise BathError(f"W={W} too small: need W >= {w_factor} x {scale}")
    terms: list[SineTerm] = []
    for w, r in poles.quadruples:
        if r.imag != 0.0:
            terms.append(SineTerm(2j * r.imag, w.real, w.imag))
        if r.real != 0.0:
            B = -0.5j * (W - w.imag)
            c = 0.5 * (W + w.imag)
            terms.append(SineTerm(2 * r.real, B + w.real, c))
            terms.append(SineTerm(2 * r.real, B - w.real, c))
    for w, r in poles.imaginary_pairs:
        terms.append(SineTerm(2 * r.real, -0.5j * (W - w.imag), 0.5 * (W + w.imag)))
    return terms


# ---------------------------------------------------------------------------
# Matsubara pieces


def matsubara_integral(poles: PoleData, t):
    """``(i/pi) int_0^inf J(ix) exp(-x|t|) dx`` in closed form.

    Uses ``J(ix) = sum_k R_k / (ix - w_k)`` and
    ``int_0^inf e^{-xt} / (x - p) dx = e^{-pt} E1(-pt)`` with ``p = -i w_k``.
    Not valid when a pole lies on the positive imaginary axis.
    """
    if poles.imaginary_pairs:
        raise UnsupportedVariant("closed-form Matsubara integral needs poles off the imaginary axis")
    t = np.abs(np.asarray(t, dtype=float))
    p = np.array([-1j * w for w in poles.poles])
    R = np.array(poles.residues)
    out = np.zeros(t.shape, dtype=complex)
    zero = t == 0.0
    if np.any(zero):
        out[zero] = -np.sum(R * np.log(-p)) / np.pi
    tp = t[~zero]
    if tp.size:
        z = -np.outer(tp, p)
        out[~zero] = (np.exp(z) * special.exp1(z)) @ R / np.pi
    return out


def matsubara_integral_quad(J, t, epsabs=1e-13, epsrel=1e-11):
    """Quadrature oracle for :func:`matsubara_integral` (any J with analytic continuation)."""
    t = float(abs(t))
    f_re = lambda x: float(np.real(1j * J(1j * x + 0j) * np.exp(-x * t)))  # noqa: E731
    f_im = lambda x: float(np.imag(1j * J(1j * x + 0j) * np.exp(-x * t)))  # noqa: E731
    vr, _ = integrate.quad(f_re, 0, np.inf, epsabs=epsabs, epsrel=epsrel, limit=500)
    vi, _ = integrate.quad(f_im, 0, np.inf, epsabs=epsabs, epsrel=epsrel, limit=500)
    return (vr + 1j * vi) / np.pi


def default_matsubara_cutoff(J, beta: float, t_min: float, floor_tol: float = 1e-8, cap: int = 2000) -> int:
    """Number of Matsubara terms: at least ``ceil(10 w_max beta / 2pi)``, then
    extended until the first neglected term is below ``floor_tol`` at ``t_min``."""
    k = max(1, math.ceil(10 * J.scale() * beta / (2 * np.pi)))
    while k < cap:
        nu = 2 * np.pi * (k + 1) / beta
        term = abs(2.0 / beta * complex(J(nu * 1j))) * math.exp(-nu * t_min)
        if term < floor_tol:
            break
        k += 1
    return min(k, cap)


# ---------------------------------------------------------------------------
# decomposition


@dataclass(frozen=True, eq=False)
class CorrelationDecomposition:
    """All correlation pieces for one bath at one temperature.

    ``split`` is ``"vacuum_modes"`` (classical/quantum split with zero-temperature
    pseudomodes) or ``"classical_symmetric"`` (``C_class = C_s``, no modes;
    valid when the quantum part cannot act, e.g. pure dephasing).
    """

    J: SpectralDensity
    beta: float | None
    T: float
    K: int
    W: float | None
    sine_terms: tuple[SineTerm, ...]
    split: str = "vacuum_modes"
    poles: PoleData | None = None
    matsubara_amps: tuple[complex, ...] = ()
    matsubara_rates: tuple[float, ...] = ()
    _cs_numeric: Callable | None = field(default=None, repr=False)

    # --- symmetric part -----------------------------------------------------
    @property
    def closed_form(self) -> bool:
        return self.poles is not None and self._cs_numeric is None

    def resonant_exponentials(self) -> list[tuple[complex, complex]]:
        """Pairs ``(A, z)`` with ``C_s ⊇ A exp(z |t|)`` from the J poles."""
        out = []
        if self.poles is None or self._cs_numeric is not None:
            return out
        for w, r in self.poles.upper():
            if self.beta is None:
                factor = np.sign(w.real)
            else:
                factor = 1.0 / np.tanh(0.5 * self.beta * w)
            out.append((1j * r * factor, 1j * w))
        return out

    def fs_exponentials(self) -> list[tuple[complex, complex]]:
        """Pairs ``(A, z)`` with ``f_s = sum A exp(z |t|)``."""
        out = []
        for term in self.sine_terms:
            amp = -0.5j * term.a
            out.append((amp, 1j * term.b - term.c))
            out.append((amp, -1j * term.b - term.c))
        return out

    def matsubara_part(self, t):
        t = np.abs(np.asarray(t, dtype=float))
        if self.beta is None:
            if self.poles is None or self._cs_numeric is not None:
                raise UnsupportedVariant("zero-temperature Matsubara integral needs a closed-form rational J")
            return matsubara_integral(self.poles, t)
        out = np.zeros(t.shape, dtype=complex)
        for amp, nu in zip(self.matsubara_amps, self.matsubara_rates):
            out = out + amp * np.exp(-nu * t)
        return out

    def C_s(self, t):
        t = np.asarray(t, dtype=float)
        if self._cs_numeric is not None:
            return self._cs_numeric(t)
        out = self.matsubara_part(t)
        at = np.abs(t)
        for A, z in self.resonant_exponentials():
            out = out + A * np.exp(z * at)
        return out

    # --- antisymmetric part -------------------------------------------------
    def C_as(self, t):
        """Exact antisymmetric part (including the sign-function piece)."""
        t = np.asarray(t, dtype=float)
        J = self.J
        if self.poles is not None:
            at = np.abs(t)
            out = np.zeros(t.shape, dtype=complex)
            for w, r in zip(self.poles.poles, self.poles.residues):
                # upper poles carry e^{i w t}, lower ones e^{-i w t} (t > 0)
                z = 1j * w if w.imag > 0 else -1j * w
                out = out + r * np.exp(z * at)
            return -0.5j * np.sign(t) * out
        if isinstance(J, OhmicExp):
            wc = J.omega_c
            return -2j * J.alpha * wc**3 * t / (1 + (wc * t) ** 2) ** 2
        if isinstance(J, BrownianCritical):
            return -0.5j * J.lam**2 * t * np.exp(-J.Gamma * np.abs(t))
        raise UnsupportedVariant(type(J).__name__)

    def C(self, t):
        return self.C_s(t) + self.C_as(t)

    # --- classical / quantum ------------------------------------------------
    def f_s(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=complex)
        for term in self.sine_terms:
            out = out - 1j * term.cosine(t)
        return out

    def C_class(self, t):
        return self.C_s(t) + self.f_s(t)

    def C_Q(self, t):
        t = np.asarray(t, dtype=float)
        if self.split == "classical_symmetric":
            return self.C_as(t)
        out = np.zeros(t.shape, dtype=complex)
        for term in self.sine_terms:
            out = out + term.quantum(t)
        return out

    def C_as_ansatz(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=complex)
        for term in self.sine_terms:
            out = out + term.sine(t)
        return out

    def class_exponentials(self) -> list[tuple[complex, complex]]:
        """``C_class`` as ``sum A exp(z|t|)`` (finite temperature, closed form only)."""
        if not self.closed_form:
            raise UnsupportedVariant("C_class has no closed exponential form for this bath")
        out = self.resonant_exponentials() + self.fs_exponentials()
        if self.beta is not None:
            out += [(a, -nu) for a, nu in zip(self.matsubara_amps, self.matsubara_rates)]
        return out


def _ohmic_cs_zero_T(J: OhmicExp):
    wc, al = J.omega_c, J.alpha

    def cs(t):
        x2 = (wc * np.asarray(t, dtype=float)) ** 2
        return (al * wc**2 * (1 - x2) / (1 + x2) ** 2).astype(complex)

    return cs


def _numeric_cs(J, beta):
    def cs(t):
        t = np.asarray(t, dtype=float)
        flat = np.abs(t).reshape(-1)
        uniq, inv = np.unique(flat, return_inverse=True)
        vals = correlation_numeric(J, beta, uniq, parts=True)[0]
        return np.asarray(vals)[inv].reshape(t.shape)

    return cs


def build_decomposition(J, beta=ZERO_T, T: float = 25.0, K: int | None = None, W: float | None = None,
                        split: str = "vacuum_modes", sine_terms: Sequence[SineTerm] | None = None,
                        n_fit_terms: int = 2, t_min: float | None = None, fit_seed: int = 0,
                        system_scale: float = 1.0) -> CorrelationDecomposition:
    """Build the classical/quantum decomposition for ``J`` at inverse temperature ``beta``.

    ``beta=None`` means zero temperature.  For OhmicExp the decaying-sine
    terms are fitted automatically unless ``sine_terms`` is given.
    """
    if beta is not None and not beta > 0:
        raise BathError("beta must be positive (or None for zero temperature)")
    if split not in ("vacuum_modes", "classical_symmetric"):
        raise BathError(f"unknown split {split!r}")
    if t_min is None:
        t_min = T / 4000.0
    rat = J.rational() if not isinstance(J, RationalGeneric) else J
    poles = classify_poles(rat) if rat is not None else None

    # symmetric part
    cs_numeric = None
    amps: tuple = ()
    rates: tuple = ()
    if poles is not None:
        if beta is None:
            if poles.imaginary_pairs:
                cs_numeric = _numeric_cs(J, None)
            K_used = 0
        else:
            K_used = default_matsubara_cutoff(J, beta, t_min) if K is None else int(K)
            if K_used < 1:
                raise BathError("finite temperature needs K >= 1 Matsubara terms")
            nus = 2 * np.pi * np.arange(1, K_used + 1) / beta
            tol = 1e-9 * max(poles.scale(), 1.0)
            for w in poles.poles:
                if abs(w.real) <= tol:
                    hit = np.min(np.abs(nus - w.imag))
                    if hit <= tol:
                        raise MatsubaraDegeneracyError(
                            f"Matsubara frequency coincides with pole {w}; perturb beta slightly"
                        )
            amps = tuple(complex(a) for a in (2j / beta) * np.asarray(J(nus * 1j), dtype=complex))
            rates = tuple(float(n) for n in nus)
    else:
        K_used = 0
        if isinstance(J, OhmicExp) and beta is None:
            cs_numeric = _ohmic_cs_zero_T(J)
        else:
            cs_numeric = _numeric_cs(J, beta)

    # antisymmetric ansatz
    W_used = None
    if split == "classical_symmetric":
        terms: tuple = ()
    elif sine_terms is not None:
        terms = tuple(sine_terms)
    elif poles is not None:
        scale = max(poles.scale(), system_scale)
        W_used = 50.0 * scale if W is None else float(W)
        terms = tuple(antisymmetric_terms(poles, W_used, system_scale=system_scale))
    elif isinstance(J, OhmicExp):
        from .fit import FitProblem, cached_fit, fit_decaying_sines, ohmic_seed

        grid = np.linspace(T / 400, T, 400)
        wc = J.omega_c
        target = -2j * J.alpha * wc**3 * grid / (1 + (wc * grid) ** 2) ** 2
        # the small ridge keeps the fit out of the flat a*b = const valley
        # (b -> 0, |a| -> inf), whose modes would need huge Fock spaces
        problem = FitProblem(target=target, grid=grid, n_terms=n_fit_terms, ansatz="sines",
                             seed=ohmic_seed(J.alpha, wc, n_fit_terms), amplitude_penalty=OHMIC_RIDGE)
        res = cached_fit(problem, lambda p: fit_decaying_sines(p, rng_seed=fit_seed), tag=f"seed{fit_seed}")
        terms = tuple(SineTerm(a, b, c) for a, b, c in res.params)
    else:
        raise UnsupportedVariant(
            f"{type(J).__name__} has no decaying-sine construction; use split='classical_symmetric'"
        )
    return CorrelationDecomposition(
        J=J, beta=beta, T=float(T), K=K_used, W=W_used, sine_terms=terms, split=split,
        poles=poles, matsubara_amps=amps, matsubara_rates=rates, _cs_numeric=cs_numeric,
    )


# ---------------------------------------------------------------------------
# pseudomode parameters


def pseudomode_correlation(pm: PseudomodeSet, t):
    """``sum_j lam_j^2 e^{-Gamma_j|t|} [(1+n_j) e^{-i Omega_j t} + n_j e^{i Omega_j t}]``."""
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape, dtype=complex)
    at = np.abs(t)
    for m in pm.modes:
        out = out + m.coupling**2 * (1 + m.occupation) * np.exp(-m.rate * at - 1j * m.frequency * t)
        if m.occupation != 0:
            out = out + m.coupling**2 * m.occupation * np.exp(-m.rate * at + 1j * m.frequency * t)
    return out


def pseudomode_params_from_decomposition(dec: CorrelationDecomposition, fock_dim: int | Sequence[int] = 6,
                                         bath: int = 0) -> PseudomodeSet:
    """One vacuum pseudomode per quantum term: ``lam^2 = i a``, ``Omega = b``, ``Gamma = c``."""
    terms = [t for t in dec.sine_terms if t.a != 0]
    dims = [fock_dim] * len(terms) if np.ndim(fock_dim) == 0 else list(fock_dim)
    if len(dims) != len(terms):
        raise BathError(f"{len(terms)} modes but {len(dims)} Fock dims given")
    modes = [
        Pseudomode(coupling=complex(np.sqrt(1j * t.a)), frequency=complex(t.b), rate=complex(t.c),
                   occupation=0j, fock_dim=int(d), bath=bath)
        for t, d in zip(terms, dims)
    ]
    return PseudomodeSet(tuple(modes))


def thermal_coth(beta, Omega, Gamma) -> complex:
    """``coth[beta (Omega + i Gamma)/2]`` (1 at zero temperature)."""
    if beta is None:
        return 1.0 + 0j
    return 1.0 / complex(np.tanh(0.5 * beta * complex(Omega, Gamma)))


def deterministic_comparator_params(J: BrownianUnderdamped, beta, T: float = 25.0, n_mats: int = 2,
                                    fock_dims: Sequence[int] | None = None, fit_seed: int = 0,
                                    return_fit: bool = False):
    """Fully quantised pseudomode set for an underdamped Brownian bath.

    Three resonant modes carry the pole contribution at temperature ``beta``
    (modes 2 and 3 vanish at zero temperature and are then dropped) and
    ``n_mats`` modes with ``Omega=0`` fit the Matsubara part.
    """
    if not isinstance(J, BrownianUnderdamped):
        raise UnsupportedVariant("comparator parameters are defined for the underdamped Brownian bath")
    from .fit import FitProblem, cached_fit, fit_matsubara_exponentials

    O, G, lam2 = J.Omega, J.Gamma, J.lam**2
    cth = thermal_coth(beta, O, G)
    RB, IB = cth.real, cth.imag
    res = [
        (np.sqrt(lam2 / (2 * O) + 0j), O, G, (RB - 1) / 2),
        # the I_B terms carry a factor i: C_s ⊇ -(lam^2/2 Omega) I_B sin(Omega|t|) e^{-Gamma|t|}
        (np.sqrt(1j * IB * lam2 / (4 * O) + 0j), 0.0, complex(G, -O), 0.0),
        (np.sqrt(-1j * IB * lam2 / (4 * O) + 0j), 0.0, complex(G, O), 0.0),
    ]
    res = [r for r in res if r[0] != 0]
    dec = build_decomposition(J, beta, T=T)
    grid = np.linspace(T / 400, T, 400)
    target = dec.matsubara_part(grid)
    problem = FitProblem(target=target, grid=grid, n_terms=n_mats, ansatz="exponentials")
    fit = cached_fit(problem, lambda p: fit_matsubara_exponentials(p, rng_seed=fit_seed), tag=f"seed{fit_seed}")
    mats = [(np.sqrt(complex(A)), 0.0, complex(g), 0.0) for A, g in fit.params]
    all_modes = res + mats
    if fock_dims is None:
        fock_dims = [6] * len(all_modes)
    if len(fock_dims) != len(all_modes):
        raise BathError(f"{len(all_modes)} comparator modes but {len(fock_dims)} Fock dims")
    modes = tuple(
        Pseudomode(coupling=complex(l), frequency=complex(o), rate=complex(g), occupation=complex(n), fock_dim=int(d))
        for (l, o, g, n), d in zip(all_modes, fock_dims)
    )
    pm = PseudomodeSet(modes)
    if return_fit:
        return pm, fit
    return pm
