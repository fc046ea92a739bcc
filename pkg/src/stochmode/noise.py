"""Stationary Gaussian classical fields from a cosine expansion.

A symmetric correlation ``C_class`` on ``[-T, T]`` is expanded as
``c_0 + 2 sum_n c_n cos(n pi t / T)``.  The field

    xi(t) = sqrt(c_0) x_0 + sum_n sqrt(2 c_n) [x_n cos(n pi t/T) + x_{-n} sin(n pi t/T)]

with i.i.d. standard normal ``x`` then has ``E[xi(t) xi(s)] = C(t - s)`` on
the window.  Complex ``c_n`` are allowed (principal square root), so the
field can be complex or purely imaginary.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

__all__ = [
    "NoiseModel",
    "NoiseRealization",
    "NoiseError",
    "L_n",
    "coeffs_quadrature",
    "coeffs_analytic",
    "sample_field",
    "stream_rng",
    "draw_matrix",
    "field_values",
    "empirical_correlation",
    "correlation_bound",
    "field_covariance",
    "product_variance",
    "cosine_only_values",
    "CorrelationReport",
    "correlation_report",
    "write_coeffs_csv",
    "write_field_csv",
]


class NoiseError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class NoiseModel:
    T: float
    N_xi: int
    coeffs: np.ndarray
    provenance: str = "quadrature"

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex).copy()
        if c.shape != (self.N_xi + 1,):
            raise ValueError(f"expected {self.N_xi + 1} coefficients, got {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def amplitudes(self) -> np.ndarray:
        """``[sqrt(c_0), sqrt(2 c_1), ..., sqrt(2 c_N)]`` (principal branch)."""
        a = np.sqrt(2.0 * self.coeffs)
        a[0] = np.sqrt(self.coeffs[0])
        return a

    def expected_correlation(self, t):
        t = np.asarray(t, dtype=float)
        n = np.arange(1, self.N_xi + 1)
        cos = np.cos(np.multiply.outer(t, n) * np.pi / self.T)
        return self.coeffs[0] + 2.0 * cos @ self.coeffs[1:]

    def is_zero(self) -> bool:
        return not np.any(self.coeffs)


def L_n(z, n, T):
    """``(e^{zT} (-1)^n - 1) zT / ((zT)^2 + (n pi)^2)``: the cosine coefficient of ``e^{z|t|}``."""
    z = np.asarray(z, dtype=complex)
    n = np.asarray(n)
    zT = z * T
    sign = np.where(n % 2 == 0, 1.0, -1.0)
    num = (np.exp(zT) * sign - 1.0) * zT
    den = zT**2 + (n * np.pi) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        out = num / den
    # z -> 0 limit: delta_{n0}
    small = np.abs(zT) < 1e-12
    if np.any(small):
        out = np.where(small, np.where(n == 0, 1.0 + 0.5 * zT, 0.0), out)
    return out


def coeffs_quadrature(C_class: Callable, T: float, N_xi: int, epsabs: float = 1e-10) -> NoiseModel:
    """``c_n = (1/2T) int_{-T}^{T} cos(n pi tau/T) C(tau) dtau`` by adaptive quadrature.

    All ``n`` are integrated together (vector-valued adaptive Gauss-Kronrod);
    the symmetric part ``(C(tau) + C(-tau))/2`` is integrated over ``[0, T]``.
    """
    n = np.arange(N_xi + 1)
    k = n * np.pi / T

    def f(tau):
        c = 0.5 * (np.asarray(C_class(np.array([tau])))[0] + np.asarray(C_class(np.array([-tau])))[0])
        v = np.cos(k * tau) * c
        return np.concatenate([v.real, v.imag])

    pts = np.linspace(0.0, T, min(2 * N_xi + 2, 4000))[1:-1]
    val, err = integrate.quad_vec(f, 0.0, T, epsabs=epsabs * T, epsrel=0.0, norm="max", points=pts, limit=20000)
    ok = bool(np.isfinite(err) and err <= 10 * epsabs * T and np.all(np.isfinite(val)))
    if not ok:
        bad = _locate_failures(C_class, T, n, epsabs)
        raise NoiseError(f"coefficient quadrature failed (error {err:.2e}); worst n: {bad[:10]}")
    c = (val[: N_xi + 1] + 1j * val[N_xi + 1:]) / T
    return NoiseModel(T=T, N_xi=N_xi, coeffs=c, provenance="quadrature")


def _locate_failures(C_class, T, n, epsabs):
    bad = []
    for nn in n:
        for part in (np.real, np.imag):
            def g(tau, part=part):
                return float(part(0.5 * (C_class(np.array([tau]))[0] + C_class(np.array([-tau]))[0])))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", integrate.IntegrationWarning)
                _, e = integrate.quad(g, 0, T, weight="cos", wvar=nn * np.pi / T, epsabs=epsabs * T, limit=500)
            if not e <= 10 * epsabs * T:  # NaN counts as a failure
                bad.append(int(nn))
                break
    return bad


def coeffs_analytic(dec, T: float | None = None, N_xi: int = 1000, epsabs: float = 1e-14) -> NoiseModel:
    """Closed-form ``c_n`` for decompositions whose ``C_class`` is an exponential sum.

    Each term ``A e^{z|t|}`` contributes ``A L_n(z)``.  At zero temperature the
    Matsubara integral ``(i/pi) int J(ix) e^{-x|t|} dx`` contributes
    ``(i/pi) int J(ix) L_n(-x) dx`` (one vector-valued quadrature over ``x``).
    """
    from .bath import UnsupportedVariant

    T = dec.T if T is None else float(T)
    if not dec.closed_form:
        raise UnsupportedVariant(f"no closed-form coefficients for {type(dec.J).__name__} at beta={dec.beta}")
    n = np.arange(N_xi + 1)
    c = np.zeros(N_xi + 1, dtype=complex)
    if dec.beta is None:
        exps = dec.resonant_exponentials() + dec.fs_exponentials()
    else:
        exps = dec.class_exponentials()
    for A, z in exps:
        c += A * L_n(z, n, T)
    if dec.beta is None:
        J = dec.J
        kT = n * np.pi

        def f(x):
            xT = x * T
            sign = np.where(n % 2 == 0, 1.0, -1.0)
            ln = (1.0 - sign * np.exp(-xT)) * xT / (xT * xT + kT * kT)
            v = (1j / np.pi) * complex(J(1j * x + 0j)) * ln
            return np.concatenate([v.real, v.imag])

        scale = dec.poles.scale()
        brk = sorted({scale, 10 * scale, np.pi / T, 10 * np.pi / T, N_xi * np.pi / T})
        edges = [0.0] + [b for b in brk if b > 0]
        tot = np.zeros(2 * (N_xi + 1))
        for lo, hi in zip(edges[:-1], edges[1:]):
            v, _ = integrate.quad_vec(f, lo, hi, epsabs=epsabs, epsrel=1e-13, norm="max", limit=20000)
            tot += v
        v, _ = integrate.quad_vec(f, edges[-1], np.inf, epsabs=epsabs, epsrel=1e-13, norm="max", limit=20000)
        tot += v
        c += tot[: N_xi + 1] + 1j * tot[N_xi + 1:]
    return NoiseModel(T=T, N_xi=N_xi, coeffs=c, provenance="analytic")


# ---------------------------------------------------------------------------
# sampling


def stream_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based Philox generator keyed by ``(seed, *stream)``."""
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class NoiseRealization:
    model: NoiseModel
    draws: np.ndarray  # [x_0, x_1..x_N (cos), x_-1..x_-N (sin)]
    seed: int
    stream: tuple[int, ...]

    def __call__(self, t):
        return field_values(self.model, self.draws[None, :], t)[0]


def sample_field(model: NoiseModel, seed: int, stream: int | Sequence[int] = 0) -> NoiseRealization:
    stream = (stream,) if np.ndim(stream) == 0 else tuple(stream)
    draws = stream_rng(seed, *stream).standard_normal(2 * model.N_xi + 1)
    draws.setflags(write=False)
    return NoiseRealization(model, draws, int(seed), tuple(int(s) for s in stream))


def draw_matrix(model: NoiseModel, seed: int, streams: Sequence[Sequence[int]]) -> np.ndarray:
    """Stack of draws for several streams; row ``i`` equals ``sample_field(model, seed, streams[i]).draws``."""
    out = np.empty((len(streams), 2 * model.N_xi + 1))
    for i, s in enumerate(streams):
        out[i] = stream_rng(seed, *s).standard_normal(2 * model.N_xi + 1)
    return out


def field_basis(model: NoiseModel, t) -> tuple[np.ndarray, np.ndarray]:
    """Real and imaginary parts of the amplitude-weighted basis, shape ``(2N+1, n_t)``."""
    t = np.asarray(t, dtype=float)
    N = model.N_xi
    amp = model.amplitudes()
    n = np.arange(1, N + 1)
    ph = np.multiply.outer(n, t) * (np.pi / model.T)
    basis = np.empty((2 * N + 1, t.size))
    basis[0] = 1.0
    basis[1:N + 1] = np.cos(ph)
    basis[N + 1:] = np.sin(ph)
    amp_full = np.concatenate([amp, amp[1:]])
    return amp_full.real[:, None] * basis, amp_full.imag[:, None] * basis


def field_values(model: NoiseModel, draws: np.ndarray, t, basis=None) -> np.ndarray:
    """Field values ``(n_draws, n_t)`` for stacked draws."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    re, im = field_basis(model, t) if basis is None else basis
    draws = np.asarray(draws, dtype=float)
    out = np.empty((draws.shape[0], t.size), dtype=complex)
    out.real = draws @ re
    out.imag = draws @ im
    return out


def empirical_correlation(realizations: Sequence[NoiseRealization], t2, t1) -> complex:
    """``(1/N) sum_j xi_j(t2) xi_j(t1)``."""
    if not realizations:
        raise ValueError("need at least one realization")
    model = realizations[0].model
    draws = np.stack([r.draws for r in realizations])
    v = field_values(model, draws, np.array([t2, t1], dtype=float))
    return complex(np.mean(v[:, 0] * v[:, 1]))


def correlation_bound(model: NoiseModel, t2, t1, N: int) -> float:
    """Variance bound ``(|C(0)|^2 + |C(t2 - t1)|^2) / N`` for the empirical correlation.

    Exact when all ``c_n`` share one phase (e.g. the zero-temperature model);
    see :func:`product_variance` for the general case.
    """
    c0 = model.expected_correlation(0.0)
    ct = model.expected_correlation(float(t2) - float(t1))
    return float((abs(c0) ** 2 + abs(ct) ** 2) / N)


def field_covariance(model: NoiseModel, t):
    """``E[xi(s + t) conj(xi(s))] = |c_0| + 2 sum |c_n| cos(n pi t / T)``."""
    t = np.asarray(t, dtype=float)
    a = np.abs(model.coeffs)
    n = np.arange(1, model.N_xi + 1)
    return a[0] + 2.0 * np.cos(np.multiply.outer(t, n) * np.pi / model.T) @ a[1:]


def product_variance(model: NoiseModel, t2, t1, N: int) -> float:
    """Variance of the N-sample mean of ``xi(t2) xi(t1)``: ``(K(0)^2 + |K(t2 - t1)|^2) / N``.

    Follows from Isserlis' theorem with ``K`` from :func:`field_covariance`.
    """
    k0 = field_covariance(model, 0.0)
    kt = field_covariance(model, float(t2) - float(t1))
    return float((k0**2 + abs(kt) ** 2) / N)


def cosine_only_values(model: NoiseModel, draws: np.ndarray, t) -> np.ndarray:
    """Field with the sine terms dropped.

    Its second moment is ``c_0 + 2 sum c_n cos(k t2) cos(k t1)``, which is not a
    function of ``t2 - t1``.  Kept only so tests can show the sine terms matter.
    """
    N = model.N_xi
    d = np.array(draws, dtype=float, copy=True)
    d[:, N + 1:] = 0.0
    return field_values(model, d, t)


@dataclass
class CorrelationReport:
    """Empirical vs expected correlation at pairs ``(t + s, s)``."""

    lags: np.ndarray
    offset: float
    empirical: np.ndarray
    expected: np.ndarray
    sigma: np.ndarray
    N: int
    mean_field: np.ndarray = field(default_factory=lambda: np.zeros(0))
    max_abs_real: float = 0.0

    @property
    def within_3sigma(self) -> np.ndarray:
        return np.abs(self.empirical - self.expected) <= 3.0 * self.sigma

    @property
    def fraction_within(self) -> float:
        return float(np.mean(self.within_3sigma))

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "offset": self.offset,
            "n_points": int(self.lags.size),
            "fraction_within_3sigma": self.fraction_within,
            "max_abs_dev": float(np.max(np.abs(self.empirical - self.expected))),
            "max_abs_real_field": self.max_abs_real,
        }


def correlation_report(
    model: NoiseModel,
    seed: int,
    N: int,
    lags,
    offset: float = 0.0,
    chunk: int = 1000,
    synthesizer: Callable = field_values,
) -> CorrelationReport:
    """Average ``xi(s + t) xi(s)`` over realizations ``(seed, j)``, ``j < N``.

    Draws are generated in chunks so memory stays ``O(chunk * N_xi)``; the
    result does not depend on ``chunk``.  ``sigma`` is the exact spread from
    :func:`product_variance`, which equals :func:`correlation_bound` for the
    zero-temperature model.
    """
    lags = np.asarray(lags, dtype=float)
    t = np.concatenate([[offset], offset + lags])
    acc = np.zeros(lags.size, dtype=complex)
    mean = np.zeros(t.size, dtype=complex)
    max_re = 0.0
    for start in range(0, N, chunk):
        idx = range(start, min(N, start + chunk))
        draws = draw_matrix(model, seed, [(j,) for j in idx])
        v = synthesizer(model, draws, t)
        acc += np.sum(v[:, 1:] * v[:, :1], axis=0)
        mean += np.sum(v, axis=0)
        max_re = max(max_re, float(np.max(np.abs(v.real))))
    emp = acc / N
    expected = model.expected_correlation(lags)
    sigma = np.sqrt([product_variance(model, offset + L, offset, N) for L in lags])
    return CorrelationReport(lags, float(offset), emp, expected, sigma, N, mean / N, max_re)


def write_coeffs_csv(model: NoiseModel, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "re", "im"])
        for n, c in enumerate(model.coeffs):
            w.writerow([n, repr(float(c.real)), repr(float(c.imag))])


def write_field_csv(realizations: Sequence[NoiseRealization], t, path) -> None:
    """One row per time, columns ``xi{j}_re, xi{j}_im`` per realization."""
    t = np.asarray(t, dtype=float)
    vals = [r(t) for r in realizations]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = ["t"]
        for j in range(len(vals)):
            head += [f"xi{j}_re", f"xi{j}_im"]
        w.writerow(head)
        for i, ti in enumerate(t):
            row = [repr(float(ti))]
            for v in vals:
                row += [repr(float(v[i].real)), repr(float(v[i].imag))]
            w.writerow(row)
