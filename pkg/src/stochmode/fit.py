"""Levenberg-Marquardt fits of correlation components.

Two ansatz families are supported:

* ``"sines"``:        sum_j a_j sin(b_j t) exp(-c_j t)
* ``"exponentials"``: sum_j A_j exp(-G_j t)

All parameters are complex.  The real part of every decay rate is kept above
``c_min`` through ``Re c = c_min + softplus(u)``, so fitted terms always decay.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "FitProblem",
    "FitResult",
    "fit_decaying_sines",
    "fit_matsubara_exponentials",
    "levenberg_marquardt",
    "ohmic_seed",
    "model_values",
    "cached_fit",
    "default_cache_dir",
]

CACHE_VERSION = 1  # bump when fitter changes alter results for an unchanged problem


@dataclass(frozen=True, eq=False)
class FitProblem:
    target: np.ndarray | Callable
    grid: np.ndarray
    n_terms: int
    ansatz: str = "sines"
    weights: np.ndarray | None = None
    seed: Sequence[tuple] | None = None  # physics-informed initial params
    c_min: float | None = None
    # ridge weight rho on the amplitudes: adds rho * sum(w) * sum_j |a_j|^2 to the cost
    amplitude_penalty: float = 0.0

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
            raise ValueError("fit grid must be strictly increasing")
        if self.n_terms < 1:
            raise ValueError("n_terms must be >= 1")
        if self.ansatz not in ("sines", "exponentials"):
            raise ValueError(f"unknown ansatz {self.ansatz!r}")
        tgt = self.target(grid) if callable(self.target) else self.target
        tgt = np.asarray(tgt, dtype=complex)
        if tgt.shape != grid.shape:
            raise ValueError("target and grid lengths differ")
        w = np.ones_like(grid) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != grid.shape or np.any(w < 0):
            raise ValueError("weights must be non-negative and match the grid")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "target", tgt)
        object.__setattr__(self, "weights", w)
        if self.c_min is None:
            object.__setattr__(self, "c_min", 1e-3 / grid[-1])

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.grid, self.target.view(float), self.weights):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(f"{self.n_terms}|{self.ansatz}|{self.c_min!r}|{self.seed!r}|{self.amplitude_penalty!r}".encode())
        return h.hexdigest()[:24]


@dataclass
class FitResult:
    params: list[tuple]
    residual_rms: float
    converged: bool
    restarts_used: int
    iterations: int = 0
    cost_history: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "params": [[[complex(p).real, complex(p).imag] for p in term] for term in self.params],
            "residual_rms": self.residual_rms,
            "converged": self.converged,
            "restarts_used": self.restarts_used,
            "iterations": self.iterations,
        }

    @classmethod
    def from_json(cls, d: dict) -> "FitResult":
        params = [tuple(complex(re, im) for re, im in term) for term in d["params"]]
        return cls(params, float(d["residual_rms"]), bool(d["converged"]), int(d["restarts_used"]),
                   int(d.get("iterations", 0)))


# ---------------------------------------------------------------------------
# parameterisation


def _softplus(u):
    return np.where(u > 30, u, np.log1p(np.exp(np.minimum(u, 30))))


def _sigmoid(u):
    return expit(u)


def _inv_softplus(y):
    y = np.maximum(y, 1e-300)
    return np.where(y > 30, y, np.log(np.expm1(np.minimum(y, 30))))


def _width(ansatz):
    return 6 if ansatz == "sines" else 4


def _pack(params, ansatz, c_min):
    out = []
    for term in params:
        term = [complex(p) for p in term]
        rate = term[-1]
        u = float(_inv_softplus(max(rate.real - c_min, 1e-12 * max(c_min, 1e-300))))
        for p in term[:-1]:
            out += [p.real, p.imag]
        out += [u, rate.imag]
    return np.array(out, dtype=float)


def _unpack(theta, ansatz, c_min):
    k = _width(ansatz)
    terms = []
    for j in range(len(theta) // k):
        v = theta[j * k:(j + 1) * k]
        rate = complex(c_min + float(_softplus(v[-2])), v[-1])
        if ansatz == "sines":
            terms.append((complex(v[0], v[1]), complex(v[2], v[3]), rate))
        else:
            terms.append((complex(v[0], v[1]), rate))
    return terms


def model_values(params, grid, ansatz="sines"):
    t = np.asarray(grid, dtype=float)
    out = np.zeros(t.shape, dtype=complex)
    for term in params:
        if ansatz == "sines":
            a, b, c = term
            out = out + a * np.sin(b * t) * np.exp(-c * t)
        else:
            A, G = term
            out = out + A * np.exp(-G * t)
    return out


def _model_and_jac(theta, t, ansatz, c_min):
    """Model values and complex Jacobian columns d model / d theta."""
    k = _width(ansatz)
    n = len(theta) // k
    m = np.zeros(t.shape, dtype=complex)
    jac = np.zeros((t.size, theta.size), dtype=complex)
    for j in range(n):
        v = theta[j * k:(j + 1) * k]
        rate = c_min + _softplus(v[-2]) + 1j * v[-1]
        drate_du = _sigmoid(v[-2])
        decay = np.exp(-rate * t)
        if ansatz == "sines":
            a = v[0] + 1j * v[1]
            b = v[2] + 1j * v[3]
            s = np.sin(b * t)
            term = a * s * decay
            d_a = s * decay
            d_b = a * t * np.cos(b * t) * decay
            d_c = -t * term
            cols = [d_a, 1j * d_a, d_b, 1j * d_b, d_c * drate_du, 1j * d_c]
        else:
            A = v[0] + 1j * v[1]
            term = A * decay
            d_A = decay
            d_G = -t * term
            cols = [d_A, 1j * d_A, d_G * drate_du, 1j * d_G]
        m += term
        jac[:, j * k:(j + 1) * k] = np.stack(cols, axis=1)
    return m, jac


def levenberg_marquardt(theta0, t, target, weights, ansatz, c_min, max_iter=400, ftol=1e-15,
                        gtol=1e-12, xtol=1e-14, amplitude_penalty=0.0):
    """Marquardt-scaled LM on real/imag stacked residuals.

    Returns ``(theta, cost_history, n_iter, converged)``; ``cost_history``
    holds the cost of each accepted iterate and is non-increasing.
    """
    sw = np.sqrt(weights)
    pen = np.sqrt(amplitude_penalty * np.sum(weights))

    def evaluate(theta):
        # trial steps can overflow; non-finite costs are rejected below
        with np.errstate(over="ignore", invalid="ignore"):
            m, jc = _model_and_jac(theta, t, ansatz, c_min)
            r = sw * (m - target)
            res = np.concatenate([r.real, r.imag])
            jw = sw[:, None] * jc
            jr = np.concatenate([jw.real, jw.imag], axis=0)
        if amplitude_penalty > 0:
            # amplitude real/imag parts sit at offsets 0, 1 of each term block
            k = _width(ansatz)
            idx = np.concatenate([np.arange(0, theta.size, k), np.arange(1, theta.size, k)])
            res = np.concatenate([res, pen * theta[idx]])
            extra = np.zeros((idx.size, theta.size))
            extra[np.arange(idx.size), idx] = pen
            jr = np.concatenate([jr, extra], axis=0)
        return res, jr

    theta = np.array(theta0, dtype=float)
    res, jr = evaluate(theta)
    cost = 0.5 * float(res @ res)
    history = [cost]
    mu = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = jr.T @ res
        if np.max(np.abs(g)) <= gtol * max(cost, 1e-300) ** 0.5 * max(1.0, np.max(np.abs(jr))) or cost == 0.0:
            converged = True
            it -= 1
            break
        A = jr.T @ jr
        d = np.maximum(np.diag(A), 1e-300)
        accepted = False
        while mu < 1e16:
            try:
                step = np.linalg.solve(A + mu * np.diag(d), -g)
            except np.linalg.LinAlgError:
                mu *= 4
                continue
            trial = theta + step
            r_new, j_new = evaluate(trial)
            with np.errstate(over="ignore", invalid="ignore"):
                c_new = 0.5 * float(r_new @ r_new)
            if np.isfinite(c_new) and c_new <= cost:
                accepted = True
                break
            mu *= 4
        if not accepted:
            converged = True  # no descent direction left at machine precision
            it -= 1
            break
        rel = (cost - c_new) / max(cost, 1e-300)
        small_step = np.max(np.abs(step)) <= xtol * (np.max(np.abs(theta)) + xtol)
        theta, res, jr, cost = trial, r_new, j_new, c_new
        history.append(cost)
        mu = max(mu / 3, 1e-12)
        if rel <= ftol or small_step:
            converged = True
            break
    return theta, history, it, converged


def _perturb(seed, rng, spread):
    out = []
    for term in seed:
        new = []
        for p in term:
            p = complex(p)
            f = np.exp(rng.uniform(-spread, spread))
            g = np.exp(rng.uniform(-spread, spread))
            new.append(complex(p.real * f, p.imag * g))
        out.append(tuple(new))
    return out


def _run(problem: FitProblem, seed_params, restarts, rng_seed, max_iter):
    t, tgt, w, c_min = problem.grid, problem.target, problem.weights, problem.c_min
    rng = np.random.default_rng(rng_seed)
    best = None
    for r in range(restarts):
        init = seed_params if r == 0 else _perturb(seed_params, rng, np.log(3.0))
        theta0 = _pack(init, problem.ansatz, c_min)
        theta, hist, it, conv = levenberg_marquardt(theta0, t, tgt, w, problem.ansatz, c_min, max_iter=max_iter,
                                                    amplitude_penalty=problem.amplitude_penalty)
        params = _unpack(theta, problem.ansatz, c_min)
        diff = model_values(params, t, problem.ansatz) - tgt
        rms = float(np.sqrt(np.sum(w * np.abs(diff) ** 2) / np.sum(w)))
        cand = (rms, r, params, conv, it, hist)
        if best is None or rms < best[0]:
            best = cand
    rms, r, params, conv, it, hist = best
    return FitResult(params=params, residual_rms=rms, converged=bool(conv), restarts_used=restarts,
                     iterations=it, cost_history=hist)


def ohmic_seed(alpha, omega_c, n_terms):
    """Short-time seed ``a ~ -2i alpha wc^2, b ~ wc, c ~ wc`` spread over terms."""
    out = []
    for j in range(n_terms):
        f = 2.0 ** (j - (n_terms - 1) / 2)
        out.append((-2j * alpha * omega_c**2 / n_terms, omega_c * f, omega_c * f))
    return out


def _default_sine_seed(problem: FitProblem):
    t, y = problem.grid, problem.target
    k = int(np.argmax(np.abs(y)))
    t_peak = max(t[k], t[0])
    scale = 1.0 / t_peak
    amp = y[k] / np.sin(1.0) * np.e
    return [(amp / problem.n_terms, scale * 2.0**j, scale * 2.0**j) for j in range(problem.n_terms)]


def _default_exp_seed(problem: FitProblem):
    t, y = problem.grid, problem.target
    rates = np.geomspace(3.0 / t[-1], 0.3 / t[0], problem.n_terms + 2)[1:-1]
    return [(y[0] / problem.n_terms, float(g)) for g in rates]


def fit_decaying_sines(problem: FitProblem, restarts: int = 16, rng_seed: int = 0, max_iter: int = 400) -> FitResult:
    """Fit ``sum a_j sin(b_j t) exp(-c_j t)`` to an antisymmetric target on ``t > 0``."""
    if problem.ansatz != "sines":
        raise ValueError("fit_decaying_sines needs ansatz='sines'")
    seed = list(problem.seed) if problem.seed is not None else _default_sine_seed(problem)
    if len(seed) != problem.n_terms:
        raise ValueError("seed length must equal n_terms")
    return _run(problem, seed, restarts, rng_seed, max_iter)


def fit_matsubara_exponentials(problem: FitProblem, restarts: int = 16, rng_seed: int = 0,
                               max_iter: int = 400) -> FitResult:
    """Fit ``sum A_j exp(-G_j t)`` with ``Re G_j > 0``."""
    if problem.ansatz != "exponentials":
        raise ValueError("fit_matsubara_exponentials needs ansatz='exponentials'")
    seed = list(problem.seed) if problem.seed is not None else _default_exp_seed(problem)
    if len(seed) != problem.n_terms:
        raise ValueError("seed length must equal n_terms")
    return _run(problem, seed, restarts, rng_seed, max_iter)


def default_cache_dir() -> Path | None:
    """``$STOCHMODE_CACHE_DIR`` if set (an empty value disables caching), else
    ``$XDG_CACHE_HOME/stochmode`` or ``~/.cache/stochmode``."""
    env = os.environ.get("STOCHMODE_CACHE_DIR")
    if env is not None:
        return Path(env) if env else None
    base = os.environ.get("XDG_CACHE_HOME") or Path.home() / ".cache"
    return Path(base) / "stochmode"


def cached_fit(problem: FitProblem, fitter: Callable[[FitProblem], FitResult],
               cache_dir: str | os.PathLike | None = None, tag: str = "") -> FitResult:
    """Run ``fitter`` or load its JSON result from ``cache_dir`` (default
    :func:`default_cache_dir`).

    The cache key is the problem digest plus ``tag``, which should name any
    fitter setting (such as the restart seed) that changes the result.  An
    unreadable entry is refitted; an unwritable cache is skipped.
    """
    cache_dir = Path(cache_dir) if cache_dir else default_cache_dir()
    if cache_dir is None:
        return fitter(problem)
    suffix = f"_{tag}" if tag else ""
    path = cache_dir / f"fit_v{CACHE_VERSION}_{problem.digest()}{suffix}.json"
    try:
        return FitResult.from_json(json.loads(path.read_text()))
    except (OSError, ValueError, KeyError, TypeError):
        pass
    res = fitter(problem)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".tmp{os.getpid()}")
        tmp.write_text(json.dumps(res.to_json(), indent=1))
        os.replace(tmp, path)
    except OSError:
        pass
    return res
