"""Built-in experiments: bath -> noise/fit -> dynamics -> ensemble -> metrics.

Every scenario is a :class:`ScenarioConfig` whose defaults are the published
parameters of the corresponding experiment, in units of the system
frequency ``omega_s = 1``.  Overrides use dotted paths such as
``ensemble.N_stoch=1000`` or ``baths.1.beta=4``; ``bath.`` is short for
``baths.0.``.
"""

from __future__ import annotations

import copy
import json
import math
import os
import warnings
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

import numpy as np
from scipy import integrate

from . import bath as bathmod
from .bath import (
    BrownianUnderdamped,
    OhmicExp,
    build_decomposition,
    deterministic_comparator_params,
    pseudomode_params_from_decomposition,
)
from .dynamics import PseudomodeSet, SystemSpec, integrate as integrate_single, thermal_init
from .ensemble import EnsembleConfig, EnsembleResult, _entropy, entropy_series, entropy_std, run_ensemble
from .noise import NoiseModel, coeffs_analytic, coeffs_quadrature
from .qcore import annihilator, sigma_x, sigma_z

__all__ = [
    "SCENARIOS",
    "ScenarioConfig",
    "BathConfig",
    "ScenarioBundle",
    "ConfigError",
    "SystemConfig",
    "NoiseConfig",
    "EnsembleSection",
    "ComparatorConfig",
    "validate",
    "validate_sections",
    "fill_section",
    "make_density",
    "build_stochastic",
    "thermal_sz",
    "default_config",
    "apply_overrides",
    "config_from_dict",
    "run_scenario",
    "write_bundle",
    "dephasing_coherence",
    "rabi_ground_sz",
    "window_entropy",
]


class ConfigError(ValueError):
    """Invalid scenario configuration or override."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class SystemConfig:
    hamiltonian: str = "sz/2"  # "sz/2" or "zero"
    coupling: str = "sx"  # "sx" or "sz"
    initial: str = "excited"  # "excited", "ground" or "plus"


@dataclass
class BathConfig:
    kind: str = "brownian"  # "brownian" (underdamped) or "ohmic"
    omega0: float = 1.0
    gamma: float = 0.05
    lam: float = 0.2 / math.sqrt(2 * math.pi)
    alpha: float = 0.02
    omega_c: float = 3.0
    beta: float | None = None  # None = zero temperature
    split: str = "vacuum_modes"
    fock_dim: int = 6
    n_fit_terms: int = 2


@dataclass
class NoiseConfig:
    enabled: bool = True
    N_xi: int = 1000
    T: float | None = None  # None = horizon
    coeffs: str = "auto"  # "auto", "analytic" or "quadrature"


@dataclass
class EnsembleSection:
    N_stoch: int = 1000
    seed: int = 20240611
    batch_size: int = 100
    workers: int = 1
    h: float | None = None
    dt_out: float = 0.1


@dataclass
class ComparatorConfig:
    enabled: bool = True
    n_mats: int = 2
    fock_dims: list[int] | None = None
    h: float | None = None


@dataclass
class ScenarioConfig:
    id: str
    horizon: float = 25.0
    system: SystemConfig = field(default_factory=SystemConfig)
    baths: list[BathConfig] = field(default_factory=lambda: [BathConfig()])
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    comparator: ComparatorConfig = field(default_factory=ComparatorConfig)
    # second ensemble size for convergence comparisons (three_baths)
    N_stoch_small: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _narrow_T0() -> ScenarioConfig:
    return ScenarioConfig(
        id="brownian_T0_narrow",
        baths=[BathConfig(omega0=1.0, gamma=0.05, lam=0.2 / math.sqrt(2 * math.pi), fock_dim=6)],
        system=SystemConfig(initial="excited"),
        noise=NoiseConfig(N_xi=1000),
        ensemble=EnsembleSection(N_stoch=100),
        comparator=ComparatorConfig(fock_dims=[6, 3, 3]),
    )


def _broad_T0() -> ScenarioConfig:
    return ScenarioConfig(
        id="brownian_T0_broad",
        baths=[BathConfig(omega0=1.0, gamma=1.0, lam=1.0 / math.sqrt(2 * math.pi), fock_dim=8)],
        system=SystemConfig(initial="ground"),
        noise=NoiseConfig(N_xi=100),
        ensemble=EnsembleSection(N_stoch=1000),
        comparator=ComparatorConfig(fock_dims=[8, 3, 3]),
    )


def _finite_T() -> ScenarioConfig:
    return ScenarioConfig(
        id="brownian_finiteT",
        baths=[BathConfig(omega0=1.0, gamma=0.1, lam=0.2 / math.sqrt(2 * math.pi), beta=2.0, fock_dim=6)],
        system=SystemConfig(initial="excited"),
        noise=NoiseConfig(N_xi=500),
        ensemble=EnsembleSection(N_stoch=500, h=0.05),
        comparator=ComparatorConfig(fock_dims=[6, 3, 3, 2, 2], h=0.05),
    )


def _ohmic_T0() -> ScenarioConfig:
    return ScenarioConfig(
        id="ohmic_T0",
        baths=[BathConfig(kind="ohmic", alpha=0.02, omega_c=3.0, fock_dim=4, n_fit_terms=2)],
        system=SystemConfig(initial="excited"),
        noise=NoiseConfig(N_xi=1000, coeffs="quadrature"),
        ensemble=EnsembleSection(N_stoch=1000, h=0.01),
        comparator=ComparatorConfig(enabled=False),
    )


def _three_baths() -> ScenarioConfig:
    # stand-in parameters: three distinct underdamped baths, hot to cold
    lam = math.sqrt(0.055)
    return ScenarioConfig(
        id="three_baths",
        baths=[
            BathConfig(omega0=1.5, gamma=2.0, lam=lam, beta=0.5, fock_dim=2),
            BathConfig(omega0=1.2, gamma=1.5, lam=lam, beta=2.0, fock_dim=2),
            BathConfig(omega0=1.0, gamma=1.0, lam=lam, beta=8.0, fock_dim=2),
        ],
        system=SystemConfig(initial="excited"),
        noise=NoiseConfig(N_xi=200),
        ensemble=EnsembleSection(N_stoch=10000, batch_size=250, h=0.1, dt_out=0.25),
        comparator=ComparatorConfig(enabled=False),
        N_stoch_small=10,
    )


def _entropy_compare() -> ScenarioConfig:
    cfg = _broad_T0()
    cfg.id = "entropy_compare"
    cfg.comparator.enabled = False
    return cfg


def _deph() -> ScenarioConfig:
    return ScenarioConfig(
        id="dephasing_ohmic",
        horizon=10.0,
        baths=[BathConfig(kind="ohmic", alpha=0.02, omega_c=3.0, split="classical_symmetric")],
        system=SystemConfig(hamiltonian="zero", coupling="sz", initial="plus"),
        noise=NoiseConfig(N_xi=1000, coeffs="quadrature"),
        ensemble=EnsembleSection(N_stoch=10000, h=0.01, dt_out=0.05),
        comparator=ComparatorConfig(enabled=False),
    )


SCENARIOS = {
    "brownian_T0_narrow": _narrow_T0,
    "brownian_T0_broad": _broad_T0,
    "brownian_finiteT": _finite_T,
    "ohmic_T0": _ohmic_T0,
    "three_baths": _three_baths,
    "entropy_compare": _entropy_compare,
    "dephasing_ohmic": _deph,
}


def default_config(scenario_id: str) -> ScenarioConfig:
    try:
        return SCENARIOS[scenario_id]()
    except KeyError:
        raise ConfigError(f"unknown scenario {scenario_id!r}; choose from {sorted(SCENARIOS)}") from None


def _parse_value(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("none", "null"):
        return None
    if low in ("true", "false"):
        return low == "true"
    try:
        return json.loads(t)
    except json.JSONDecodeError:
        return t


def _coerce(value, annotation: str, name):
    """Check ``value`` against a field annotation such as ``"float | None"``."""
    kinds = [k.strip() for k in str(annotation).split("|")]
    if value is None:
        if "None" in kinds:
            return None
        raise ConfigError(f"{name}: null is not allowed")
    base = kinds[0]
    if base == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false, got {value!r}")
        return value
    if base == "int":
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if base == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if base == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
        return value
    if base.startswith("list[int]"):
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{name}: expected a list of integers, got {value!r}")
        return list(value)
    raise ConfigError(f"{name}: cannot set a field of type {annotation}")


def _set_path(obj, path: list[str], value, full: str):
    key = path[0]
    if isinstance(obj, list):
        try:
            idx = int(key)
            target = obj[idx]
        except (ValueError, IndexError):
            raise ConfigError(f"{full}: bad list index {key!r}") from None
        if len(path) == 1:
            raise ConfigError(f"{full}: cannot replace a whole list entry")
        _set_path(target, path[1:], value, full)
        return
    types = {f.name: f.type for f in fields(obj)}
    if key not in types:
        raise ConfigError(f"{full}: unknown key {key!r}")
    cur = getattr(obj, key)
    if len(path) == 1:
        if is_dataclass(cur) or (isinstance(cur, list) and cur and is_dataclass(cur[0])):
            raise ConfigError(f"{full}: cannot replace a whole section")
        setattr(obj, key, _coerce(value, types[key], full))
        return
    _set_path(cur, path[1:], value, full)


def apply_overrides(cfg: ScenarioConfig, overrides: list[str] | dict) -> ScenarioConfig:
    """Apply ``"section.key=value"`` strings (or a ``{path: value}`` mapping)."""
    cfg = copy.deepcopy(cfg)
    items = overrides.items() if isinstance(overrides, dict) else []
    if not isinstance(overrides, dict):
        parsed = []
        for o in overrides:
            if "=" not in o:
                raise ConfigError(f"override {o!r} must look like section.key=value")
            k, v = o.split("=", 1)
            parsed.append((k.strip(), _parse_value(v)))
        items = parsed
    for k, v in items:
        parts = k.split(".")
        if parts[0] == "bath":
            parts = ["baths", "0"] + parts[1:]
        _set_path(cfg, parts, v, k)
    validate(cfg)
    return cfg


def config_from_dict(d: dict) -> ScenarioConfig:
    """Rebuild a config from its ``to_dict`` form; unknown keys are rejected."""
    if "id" not in d:
        raise ConfigError("scenario config needs an 'id'")
    cfg = default_config(d["id"])
    flat = {}

    def walk(prefix, node):
        if isinstance(node, dict):
            for k, v in node.items():
                walk(prefix + [str(k)], v)
        elif isinstance(node, list) and node and isinstance(node[0], dict):
            for i, v in enumerate(node):
                walk(prefix + [str(i)], v)
        else:
            flat[".".join(prefix)] = node

    body = {k: v for k, v in d.items() if k != "id"}
    if "baths" in body:
        n = len(body["baths"])
        if n != len(cfg.baths):
            if n < 1:
                raise ConfigError("baths must be a non-empty list")
            cfg.baths = [copy.deepcopy(cfg.baths[min(i, len(cfg.baths) - 1)]) for i in range(n)]
    walk([], body)
    return apply_overrides(cfg, flat)


def validate(cfg: ScenarioConfig):
    if cfg.id not in SCENARIOS:
        raise ConfigError(f"unknown scenario {cfg.id!r}")
    if cfg.system.hamiltonian not in ("sz/2", "zero"):
        raise ConfigError("system.hamiltonian must be 'sz/2' or 'zero'")
    if cfg.system.coupling not in ("sx", "sz"):
        raise ConfigError("system.coupling must be 'sx' or 'sz'")
    if cfg.system.initial not in ("excited", "ground", "plus"):
        raise ConfigError("system.initial must be 'excited', 'ground' or 'plus'")
    validate_sections(cfg.horizon, cfg.baths, cfg.noise, cfg.ensemble)


def validate_sections(horizon: float, baths, noise: NoiseConfig, ensemble: EnsembleSection):
    """Checks shared by scenario and custom configurations."""
    if not horizon > 0:
        raise ConfigError("horizon must be positive")
    if not baths:
        raise ConfigError("at least one bath is required")
    for i, b in enumerate(baths):
        where = f"baths.{i}"
        if b.kind not in ("brownian", "ohmic"):
            raise ConfigError(f"{where}.kind must be 'brownian' or 'ohmic'")
        if b.split not in ("vacuum_modes", "classical_symmetric"):
            raise ConfigError(f"{where}.split must be 'vacuum_modes' or 'classical_symmetric'")
        if b.beta is not None and not b.beta > 0:
            raise ConfigError(f"{where}.beta must be positive or null")
        if b.fock_dim < 2:
            raise ConfigError(f"{where}.fock_dim must be >= 2")
        if b.n_fit_terms < 1:
            raise ConfigError(f"{where}.n_fit_terms must be >= 1")
        try:
            make_density(b)
        except bathmod.BathError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    if noise.N_xi < 1:
        raise ConfigError("noise.N_xi must be >= 1")
    if noise.coeffs not in ("auto", "analytic", "quadrature"):
        raise ConfigError("noise.coeffs must be auto, analytic or quadrature")
    if noise.T is not None and noise.T < horizon:
        raise ConfigError("noise.T must be at least the horizon")
    e = ensemble
    if e.N_stoch < 1 or e.batch_size < 1 or e.workers < 0:
        raise ConfigError("ensemble sizes must be positive")
    if not e.dt_out > 0 or abs(horizon / e.dt_out - round(horizon / e.dt_out)) > 1e-9:
        raise ConfigError("ensemble.dt_out must divide the horizon")
    if e.h is not None and not e.h > 0:
        raise ConfigError("ensemble.h must be positive")


def fill_section(obj, d: dict, where: str):
    """Set dataclass fields of ``obj`` from mapping ``d``; unknown keys are rejected."""
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    for k, v in d.items():
        _set_path(obj, [str(k)], v, f"{where}.{k}")
    return obj


def make_density(b: BathConfig):
    if b.kind == "ohmic":
        return OhmicExp(b.alpha, b.omega_c)
    return BrownianUnderdamped(b.omega0, b.gamma, b.lam)


# ---------------------------------------------------------------------------
# oracles


def dephasing_coherence(alpha: float, omega_c: float, beta: float | None, t) -> np.ndarray:
    """``exp(-4 Gamma_deph(t))`` for the Ohmic-exponential bath.

    Zero temperature gives ``(1 + omega_c^2 t^2)^(-2 alpha)``; finite ``beta``
    integrates ``(1/pi) int J coth(beta w/2) (1 - cos w t)/w^2 dw``.
    """
    t = np.asarray(t, dtype=float)
    if beta is None:
        return (1.0 + (omega_c * t) ** 2) ** (-2.0 * alpha)
    J = OhmicExp(alpha, omega_c)
    out = np.empty(t.shape)
    for i, ti in np.ndenumerate(t):
        if ti == 0:
            out[i] = 1.0
            continue

        def f(w, ti=ti):
            x = 0.5 * beta * w
            cth = 1.0 / np.tanh(x) if x > 1e-8 else 1.0 / x
            return J.over_omega(w) * cth * (1 - np.cos(w * ti)) / w

        top = 60.0 * omega_c
        val, err = integrate.quad(f, 0, top, limit=2000, epsabs=1e-12, epsrel=1e-10)
        tail, err2 = integrate.quad(f, top, np.inf, limit=500)
        if not np.isfinite(val + tail) or err > 1e-6:
            raise bathmod.QuadratureError(f"dephasing integral failed at t={ti}", err)
        out[i] = math.exp(-4.0 * (val + tail) / np.pi)
    return out


def rabi_ground_sz(H_S, s, lam, Omega, dim: int = 40) -> float:
    """``<sigma_z>`` in the ground state of ``H_S + lam s (a + a^+) + Omega a^+ a``."""
    a = annihilator(dim)
    X = a + a.conj().T
    H = np.kron(H_S, np.eye(dim)) + lam * np.kron(s, X) + Omega * np.kron(np.eye(2), a.conj().T @ a)
    w, v = np.linalg.eigh(H)
    g = v[:, 0]
    return float(np.real(g.conj() @ np.kron(sigma_z(), np.eye(dim)) @ g))


def thermal_sz(beta: float | None, omega_s: float = 1.0) -> float:
    """``<sigma_z>`` of the qubit at thermal equilibrium with itself (``-tanh(beta w_s / 2)``)."""
    if beta is None:
        return -1.0
    return -math.tanh(0.5 * beta * omega_s)


def window_entropy(res: EnsembleResult, mask) -> tuple[float, float]:
    """Mean entropy over the masked times and its delete-one-batch jackknife error."""
    S = entropy_series(res)
    mean = float(np.mean(S[mask]))
    g = res.batch_reduced.shape[0]
    if g < 2:
        return mean, 0.0 if res.N_stoch == 1 else math.nan
    w = res.batch_counts.astype(float)
    total = np.einsum("g,gtij->tij", w, res.batch_reduced[:, mask])
    vals = np.empty(g)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for k in range(g):
            loo = (total - w[k] * res.batch_reduced[k][mask]) / (w.sum() - w[k])
            vals[k] = np.mean([_entropy(r) for r in loo])
    dev = vals - vals.mean()
    return mean, float(math.sqrt((g - 1) / g * np.sum(dev * dev)))


# ---------------------------------------------------------------------------
# running


@dataclass
class ScenarioBundle:
    config: ScenarioConfig
    results: dict[str, EnsembleResult]
    references: dict[str, np.ndarray]  # name -> series on the grid (or length-1 constants)
    metrics: dict[str, Any]
    grid: np.ndarray
    extras: dict[str, Any] = field(default_factory=dict)


def _system(cfg: ScenarioConfig) -> SystemSpec:
    H = 0.5 * sigma_z() if cfg.system.hamiltonian == "sz/2" else np.zeros((2, 2), dtype=complex)
    s = sigma_x() if cfg.system.coupling == "sx" else sigma_z()
    coh = np.array([[0, 0], [1, 0]], dtype=complex)  # Tr(coh rho) = rho_01
    obs = {"sz": sigma_z(), "sx": sigma_x(), "rho01": coh}
    return SystemSpec(H, tuple(s for _ in cfg.baths), obs)


def _initial(cfg: ScenarioConfig) -> np.ndarray:
    # |0> = spin up = excited for H_S = sigma_z / 2
    if cfg.system.initial == "excited":
        return np.diag([1.0, 0.0]).astype(complex)
    if cfg.system.initial == "ground":
        return np.diag([0.0, 1.0]).astype(complex)
    return 0.5 * np.ones((2, 2), dtype=complex)


def _grid(cfg: ScenarioConfig) -> np.ndarray:
    n = int(round(cfg.horizon / cfg.ensemble.dt_out))
    return np.linspace(0.0, cfg.horizon, n + 1)


def _noise_model(dec, b: BathConfig, cfg: ScenarioConfig) -> NoiseModel:
    T = cfg.horizon if cfg.noise.T is None else cfg.noise.T
    mode = cfg.noise.coeffs
    if mode == "auto":
        mode = "analytic" if dec.closed_form and dec.split == "vacuum_modes" else "quadrature"
    if mode == "analytic":
        return coeffs_analytic(dec, T, cfg.noise.N_xi)
    return coeffs_quadrature(dec.C_class, T, cfg.noise.N_xi)


def build_stochastic(cfg: ScenarioConfig):
    """Pseudomodes, per-bath noise models and decompositions for ``cfg``."""
    T = cfg.horizon if cfg.noise.T is None else cfg.noise.T
    pms, models, decs = PseudomodeSet(()), [], []
    for i, b in enumerate(cfg.baths):
        J = make_density(b)
        dec = build_decomposition(J, b.beta, T=T, split=b.split, n_fit_terms=b.n_fit_terms)
        decs.append(dec)
        if b.split == "vacuum_modes":
            pms = pms + pseudomode_params_from_decomposition(dec, fock_dim=b.fock_dim, bath=i)
        models.append(_noise_model(dec, b, cfg) if cfg.noise.enabled else None)
    if not cfg.noise.enabled:
        models = []
    return pms, models, decs


def _ensemble_cfg(cfg: ScenarioConfig, grid, N=None, reduced=True) -> EnsembleConfig:
    e = cfg.ensemble
    return EnsembleConfig(
        N_stoch=e.N_stoch if N is None else N,
        global_seed=e.seed,
        grid=tuple(grid),
        observables=("sz", "sx", "rho01"),
        store_reduced_state=reduced,
        batch_size=e.batch_size,
        workers=e.workers or (os.cpu_count() or 1),
        h=e.h,
    )


def _comparison(mean, std, ref):
    d = np.abs(mean - ref)
    return {
        "max_abs_dev": float(np.max(d)),
        "frac_within_3sigma": float(np.mean(d <= 3 * std)),
        "final_dev": float(d[-1]),
        "final_sigma": float(std[-1]),
    }


def run_scenario(cfg: ScenarioConfig | str, overrides=None) -> ScenarioBundle:
    if isinstance(cfg, str):
        cfg = default_config(cfg)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    validate(cfg)
    runner = {
        "brownian_T0_narrow": _run_brownian,
        "brownian_T0_broad": _run_brownian,
        "brownian_finiteT": _run_brownian,
        "ohmic_T0": _run_ohmic,
        "three_baths": _run_three_baths,
        "entropy_compare": _run_entropy,
        "dephasing_ohmic": _run_dephasing,
    }[cfg.id]
    return runner(cfg)


def _run_brownian(cfg: ScenarioConfig) -> ScenarioBundle:
    sysd = _system(cfg)
    grid = _grid(cfg)
    rs = _initial(cfg)
    b = cfg.baths[0]
    J = make_density(b)
    pm, models, decs = build_stochastic(cfg)
    res = run_ensemble(sysd, pm, models, thermal_init(pm, rho_s=rs), _ensemble_cfg(cfg, grid))
    results = {"stochastic": res}
    refs: dict[str, np.ndarray] = {}
    metrics: dict[str, Any] = {"hilbert_dims": list(res.metadata["hilbert_dims"])}
    # quantum modes alone (classical part dropped)
    nonoise = run_ensemble(sysd, pm, [], thermal_init(pm, rho_s=rs), _ensemble_cfg(cfg, grid, N=1))
    refs["sz_without_classical"] = nonoise.mean["sz"].real
    if cfg.comparator.enabled:
        T = cfg.horizon if cfg.noise.T is None else cfg.noise.T
        pmc, fit = deterministic_comparator_params(J, b.beta, T=T, n_mats=cfg.comparator.n_mats,
                                                   fock_dims=cfg.comparator.fock_dims, return_fit=True)
        tr = integrate_single(sysd, pmc, None, thermal_init(pmc, rho_s=rs), grid, h=cfg.comparator.h)
        ref = tr.observables["sz"].real
        refs["sz_comparator"] = ref
        metrics["comparator"] = _comparison(res.mean["sz"].real, res.std["sz"], ref)
        metrics["comparator"].update({
            "n_modes": len(pmc),
            "hilbert_dims": list(tr.layout.dims),
            "matsubara_fit_rms": fit.residual_rms,
            "max_trace_drift": float(np.max(np.abs(tr.trace - 1))),
            "max_top_population": float(np.max(np.abs(tr.top_population))),
        })
    if b.beta is None:
        m0 = pm.modes[0]
        refs["sz_rabi_ground"] = np.full(grid.size, rabi_ground_sz(sysd.H_S, sysd.s, m0.coupling.real,
                                                                   m0.frequency.real))
    else:
        refs["sz_thermal"] = np.full(grid.size, thermal_sz(b.beta))
    metrics["stochastic"] = _ensemble_metrics(res)
    return ScenarioBundle(cfg, results, refs, metrics, grid)


def _ensemble_metrics(res: EnsembleResult) -> dict:
    m = res.metadata
    return {
        "N_stoch": res.N_stoch,
        "max_trace_drift": m["max_trace_drift"],
        "max_top_population": m["max_top_population"],
        "step": m["step"],
        "final_sz": float(res.mean["sz"][-1].real),
        "final_sz_std": float(res.std["sz"][-1]),
    }


def _run_ohmic(cfg: ScenarioConfig) -> ScenarioBundle:
    sysd = _system(cfg)
    grid = _grid(cfg)
    rs = _initial(cfg)
    pm, models, decs = build_stochastic(cfg)
    dec = decs[0]
    res = run_ensemble(sysd, pm, models, thermal_init(pm, rho_s=rs), _ensemble_cfg(cfg, grid))
    nonoise = run_ensemble(sysd, pm, [], thermal_init(pm, rho_s=rs), _ensemble_cfg(cfg, grid, N=1))
    tg = np.linspace(cfg.horizon / 400, cfg.horizon, 400)
    target = dec.C_as(tg)
    fit_rms = float(np.sqrt(np.mean(np.abs(dec.C_as_ansatz(tg) - target) ** 2)))
    metrics = {
        "stochastic": _ensemble_metrics(res),
        "fit": {
            "n_terms": len(dec.sine_terms),
            "residual_rms": fit_rms,
            "relative_to_max": fit_rms / float(np.max(np.abs(target))),
            "terms": [[_c(t.a), _c(t.b), _c(t.c)] for t in dec.sine_terms],
        },
    }
    refs = {"sz_without_classical": nonoise.mean["sz"].real}
    return ScenarioBundle(cfg, {"stochastic": res}, refs, metrics, grid)


def _c(z):
    z = complex(z)
    return [z.real, z.imag]


def _run_three_baths(cfg: ScenarioConfig) -> ScenarioBundle:
    sysd = _system(cfg)
    grid = _grid(cfg)
    rs = _initial(cfg)
    pm, models, decs = build_stochastic(cfg)
    rho0 = thermal_init(pm, rho_s=rs)
    big = run_ensemble(sysd, pm, models, rho0, _ensemble_cfg(cfg, grid, reduced=False))
    results = {"stochastic": big}
    metrics: dict[str, Any] = {"stochastic": _ensemble_metrics(big)}
    betas = [b.beta for b in cfg.baths]
    levels = [thermal_sz(bb) for bb in betas]
    refs = {f"sz_thermal_bath{i}": np.full(grid.size, v) for i, v in enumerate(levels)}
    late = grid >= 0.8 * cfg.horizon
    steady = float(np.mean(big.mean["sz"][late].real))
    lo, hi = min(levels), max(levels)
    metrics["steady_sz"] = steady
    metrics["steady_sz_std"] = float(np.max(big.std["sz"][late]))
    metrics["thermal_levels"] = levels
    metrics["bracketed"] = bool(lo < steady < hi)
    if cfg.N_stoch_small:
        small_cfg = _ensemble_cfg(cfg, grid, N=cfg.N_stoch_small, reduced=False)
        small = run_ensemble(sysd, pm, models, rho0, small_cfg)
        results["stochastic_small"] = small
        pos = grid > 0
        metrics["small_N_stoch"] = cfg.N_stoch_small
        metrics["std_smaller_everywhere"] = bool(np.all(big.std["sz"][pos] < small.std["sz"][pos]))
        metrics["std_ratio_min"] = float(np.min(small.std["sz"][pos] / big.std["sz"][pos]))
    return ScenarioBundle(cfg, results, refs, metrics, grid)


def _run_entropy(cfg: ScenarioConfig) -> ScenarioBundle:
    sysd = _system(cfg)
    grid = _grid(cfg)
    rs = _initial(cfg)
    pm, models, decs = build_stochastic(cfg)
    rho0 = thermal_init(pm, rho_s=rs)
    with_noise = run_ensemble(sysd, pm, models, rho0, _ensemble_cfg(cfg, grid))
    quantum_only = run_ensemble(sysd, pm, [], rho0, _ensemble_cfg(cfg, grid, N=1))
    late = grid >= 20.0 if cfg.horizon >= 25 else grid >= 0.8 * cfg.horizon
    s_q, e_q = window_entropy(quantum_only, late)
    s_n, e_n = window_entropy(with_noise, late)
    refs = {"entropy_quantum_only": entropy_series(quantum_only)}
    metrics = {
        "stochastic": _ensemble_metrics(with_noise),
        "late_entropy_quantum_only": s_q,
        "late_entropy_quantum_only_std": e_q,
        "late_entropy_with_noise": s_n,
        "late_entropy_with_noise_std": e_n,
        "gap": s_q - s_n,
        "gap_exceeds_3sigma": bool(s_q - s_n > 3 * (e_q + e_n)),
        "noise_purely_imaginary": bool(np.all(models[0].coeffs.real <= 0) and np.all(models[0].coeffs.imag == 0)),
    }
    return ScenarioBundle(cfg, {"stochastic": with_noise, "quantum_only": quantum_only}, refs, metrics, grid,
                          extras={"entropy_with_noise_std": entropy_std(with_noise)})


def _run_dephasing(cfg: ScenarioConfig) -> ScenarioBundle:
    sysd = _system(cfg)
    grid = _grid(cfg)
    rs = _initial(cfg)
    pm, models, decs = build_stochastic(cfg)
    b = cfg.baths[0]
    res = run_ensemble(sysd, pm, models, thermal_init(pm, rho_s=rs), _ensemble_cfg(cfg, grid, reduced=True))
    c0 = abs(rs[0, 1])
    coh = np.abs(res.mean["rho01"]) / c0
    sig = res.std["rho01"] / c0
    ref = dephasing_coherence(b.alpha, b.omega_c, b.beta, grid)
    d = np.abs(coh - ref)
    pop = res.reduced_mean[:, 0, 0].real
    metrics = {
        "stochastic": _ensemble_metrics(res),
        "max_abs_dev": float(np.max(d)),
        "frac_within_3sigma": float(np.mean(d <= 3 * sig)),
        "population_drift": float(np.max(np.abs(pop - pop[0]))),
    }
    refs = {"coherence_closed_form": ref}
    return ScenarioBundle(cfg, {"stochastic": res}, refs, metrics, grid, extras={"coherence": coh, "coherence_std": sig})


# ---------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    return repr(float(v))


def write_bundle(bundle: ScenarioBundle, outdir) -> Path:
    """Write results.csv, reference.csv, config.json, metrics.json and timing.json (plus extra result files)."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    main = bundle.results["stochastic"]
    main.to_csv(out / "results.csv", entropy=main.reduced_mean is not None)
    for name, res in bundle.results.items():
        if name != "stochastic":
            res.to_csv(out / f"results_{name}.csv", entropy=res.reduced_mean is not None)
    with open(out / "reference.csv", "w") as fh:
        names = list(bundle.references)
        extras = [k for k, v in bundle.extras.items() if np.shape(v) == bundle.grid.shape]
        fh.write(",".join(["t"] + names + extras) + "\n")
        for i, t in enumerate(bundle.grid):
            row = [t] + [bundle.references[k][i] for k in names] + [bundle.extras[k][i] for k in extras]
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    with open(out / "config.json", "w") as fh:
        json.dump(bundle.config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "timing.json", "w") as fh:
        json.dump({k: r.metadata.get("runtime_s") for k, r in bundle.results.items()}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "metrics.json", "w") as fh:
        json.dump(bundle.metrics, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return out


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)
