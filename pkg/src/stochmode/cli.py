"""Command-line front end.

Subcommands::

    stochmode scenario <id> [--set key=value]... [--threads N] [--out DIR]
    stochmode run <config.json> [--threads N] [--out DIR]
    stochmode corr <config.json> [--out DIR] [--dt DT] [--quadrature]
    stochmode fit <config.json> [--out DIR] [--cache-dir DIR]
    stochmode noise-check <config.json> [--out DIR] [-N N] [--strict]

Exit status is 0 on success, 2 for an invalid configuration and 3 for a
numerical failure; diagnostics go to standard error.  Configurations are
validated completely before anything is computed or written.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import bath as bathmod
from .bath import build_decomposition, correlation_numeric, deterministic_comparator_params
from .dynamics import IntegrationError, SystemSpec, thermal_init
from .ensemble import EnsembleConfig, EnsembleError, run_ensemble
from .noise import NoiseError, correlation_report, field_covariance, write_coeffs_csv
from .scenarios import (
    SCENARIOS,
    BathConfig,
    ConfigError,
    EnsembleSection,
    NoiseConfig,
    ScenarioConfig,
    apply_overrides,
    build_stochastic,
    config_from_dict,
    default_config,
    fill_section,
    make_density,
    run_scenario,
    validate_sections,
    write_bundle,
)

__all__ = ["main", "RunConfig", "CustomSpec", "load_run_config"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

NUMERICAL_ERRORS = (
    NoiseError,
    EnsembleError,
    IntegrationError,
    bathmod.QuadratureError,
    np.linalg.LinAlgError,
    FloatingPointError,
)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class CustomSpec:
    """A user-defined system: matrices plus the usual bath/noise/ensemble sections."""

    hamiltonian: np.ndarray
    initial: np.ndarray
    couplings: list[np.ndarray]
    observables: dict[str, np.ndarray]
    baths: list[BathConfig]
    horizon: float = 25.0
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)

    def to_dict(self) -> dict:
        baths = []
        for b, s in zip(self.baths, self.couplings):
            d = asdict(b)
            d["coupling"] = _encode_matrix(s)
            baths.append(d)
        return {
            "horizon": self.horizon,
            "hamiltonian": _encode_matrix(self.hamiltonian),
            "initial": _encode_matrix(self.initial),
            "observables": {k: _encode_matrix(v) for k, v in self.observables.items()},
            "baths": baths,
            "noise": asdict(self.noise),
            "ensemble": asdict(self.ensemble),
        }


@dataclass
class RunConfig:
    mode: str  # "scenario" or "custom"
    scenario: ScenarioConfig | None = None
    custom: CustomSpec | None = None
    seed: int | None = None
    threads: int | None = None
    output_dir: str | None = None

    @property
    def name(self) -> str:
        return self.scenario.id if self.mode == "scenario" else "custom"

    @property
    def horizon(self) -> float:
        return self.body.horizon

    @property
    def body(self):
        return self.scenario if self.mode == "scenario" else self.custom

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"mode": self.mode}
        if self.mode == "scenario":
            d["scenario"] = self.scenario.to_dict()
        else:
            d["custom"] = self.custom.to_dict()
        d["seed"] = self.seed
        d["threads"] = self.threads
        d["output_dir"] = self.output_dir
        return d


RUN_KEYS = {"mode", "scenario", "custom", "seed", "threads", "output_dir"}
CUSTOM_KEYS = {"horizon", "hamiltonian", "initial", "observables", "baths", "noise", "ensemble"}


def _encode_matrix(m) -> list:
    m = np.asarray(m, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def _decode_matrix(x, where: str) -> np.ndarray:
    """Square matrix from nested lists; entries are numbers, ``"a+bj"`` strings or ``[re, im]`` pairs."""

    def entry(v):
        if isinstance(v, bool):
            raise ConfigError(f"{where}: boolean matrix entry")
        if isinstance(v, (int, float)):
            return complex(v)
        if isinstance(v, str):
            try:
                return complex(v.replace(" ", ""))
            except ValueError:
                raise ConfigError(f"{where}: cannot read {v!r} as a complex number") from None
        if isinstance(v, list) and len(v) == 2 and all(isinstance(u, (int, float)) and not isinstance(u, bool) for u in v):
            return complex(v[0], v[1])
        raise ConfigError(f"{where}: bad matrix entry {v!r}")

    if not isinstance(x, list) or not x or not all(isinstance(r, list) for r in x):
        raise ConfigError(f"{where}: expected a nested list (matrix)")
    n = len(x)
    if any(len(r) != n for r in x):
        raise ConfigError(f"{where}: matrix must be square")
    return np.array([[entry(v) for v in r] for r in x], dtype=complex)


def _custom_from_dict(d: dict) -> CustomSpec:
    if not isinstance(d, dict):
        raise ConfigError("custom must be an object")
    unknown = set(d) - CUSTOM_KEYS
    if unknown:
        raise ConfigError(f"custom: unknown keys {sorted(unknown)}")
    for k in ("hamiltonian", "initial", "baths"):
        if k not in d:
            raise ConfigError(f"custom.{k} is required")
    H = _decode_matrix(d["hamiltonian"], "custom.hamiltonian")
    rho = _decode_matrix(d["initial"], "custom.initial")
    dim = H.shape[0]
    tol = 1e-10
    if np.max(np.abs(H - H.conj().T)) > tol:
        raise ConfigError("custom.hamiltonian must be Hermitian")
    if rho.shape != H.shape:
        raise ConfigError("custom.initial must have the shape of the Hamiltonian")
    if np.max(np.abs(rho - rho.conj().T)) > tol or abs(np.trace(rho) - 1) > tol:
        raise ConfigError("custom.initial must be Hermitian with unit trace")
    if np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))) < -tol:
        raise ConfigError("custom.initial must be positive semidefinite")
    obs_in = d.get("observables", {"sz": [[1, 0], [0, -1]]} if dim == 2 else {})
    if not isinstance(obs_in, dict) or not obs_in:
        raise ConfigError("custom.observables must be a non-empty object")
    obs = {}
    for k, v in obs_in.items():
        obs[str(k)] = _decode_matrix(v, f"custom.observables.{k}")
        if obs[str(k)].shape != H.shape:
            raise ConfigError(f"custom.observables.{k} has the wrong shape")
    if not isinstance(d["baths"], list) or not d["baths"]:
        raise ConfigError("custom.baths must be a non-empty list")
    baths, couplings = [], []
    for i, bd in enumerate(d["baths"]):
        where = f"custom.baths.{i}"
        if not isinstance(bd, dict) or "coupling" not in bd:
            raise ConfigError(f"{where}.coupling is required")
        s = _decode_matrix(bd["coupling"], f"{where}.coupling")
        if s.shape != H.shape or np.max(np.abs(s - s.conj().T)) > tol:
            raise ConfigError(f"{where}.coupling must be Hermitian with the Hamiltonian's shape")
        couplings.append(s)
        baths.append(fill_section(BathConfig(), {k: v for k, v in bd.items() if k != "coupling"}, where))
    spec = CustomSpec(
        hamiltonian=H,
        initial=rho,
        couplings=couplings,
        observables=obs,
        baths=baths,
        noise=fill_section(NoiseConfig(), d.get("noise", {}), "custom.noise"),
        ensemble=fill_section(EnsembleSection(), d.get("ensemble", {}), "custom.ensemble"),
    )
    h = d.get("horizon", spec.horizon)
    if isinstance(h, bool) or not isinstance(h, (int, float)):
        raise ConfigError("custom.horizon must be a number")
    spec.horizon = float(h)
    validate_sections(spec.horizon, spec.baths, spec.noise, spec.ensemble)
    return spec


def run_config_from_dict(d: dict) -> RunConfig:
    """Accepts a full run config (with ``mode``) or a bare scenario config (with ``id``)."""
    if not isinstance(d, dict):
        raise ConfigError("configuration must be a JSON object")
    if "mode" not in d:
        if "id" in d:
            return RunConfig("scenario", scenario=config_from_dict(d))
        raise ConfigError("configuration needs 'mode' (scenario/custom) or a scenario 'id'")
    unknown = set(d) - RUN_KEYS
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}")
    mode = d["mode"]
    rc = RunConfig(mode)
    for k in ("seed", "threads"):
        v = d.get(k)
        if v is not None and (isinstance(v, bool) or not isinstance(v, int) or v < 0):
            raise ConfigError(f"{k} must be a non-negative integer or null")
        setattr(rc, k, v)
    out = d.get("output_dir")
    if out is not None and not isinstance(out, str):
        raise ConfigError("output_dir must be a string or null")
    rc.output_dir = out
    if mode == "scenario":
        if "custom" in d:
            raise ConfigError("scenario mode does not take a 'custom' section")
        sc = d.get("scenario")
        if isinstance(sc, str):
            sc = {"id": sc}
        if not isinstance(sc, dict):
            raise ConfigError("scenario mode needs 'scenario': an id or a scenario object")
        rc.scenario = config_from_dict(sc)
    elif mode == "custom":
        if "scenario" in d:
            raise ConfigError("custom mode does not take a 'scenario' section")
        rc.custom = _custom_from_dict(d.get("custom"))
    else:
        raise ConfigError(f"mode must be 'scenario' or 'custom', got {mode!r}")
    _apply_globals(rc)
    return rc


def _apply_globals(rc: RunConfig):
    e = rc.body.ensemble
    if rc.seed is not None:
        e.seed = rc.seed
    if rc.threads is not None:
        e.workers = rc.threads


def load_run_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return run_config_from_dict(d)


# ---------------------------------------------------------------------------
# commands


def _outdir(args, rc: RunConfig, sub: str | None = None) -> Path:
    if args.out:
        return Path(args.out)
    if rc.output_dir:
        return Path(rc.output_dir)
    base = Path("stochmode_out") / rc.name
    return base / sub if sub else base


def _write_json(path: Path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(type(o).__name__)


def _run_custom(spec: CustomSpec, out: Path) -> dict:
    pm, models, _ = build_stochastic(spec)
    sysd = SystemSpec(spec.hamiltonian, tuple(spec.couplings), dict(spec.observables))
    n = int(round(spec.horizon / spec.ensemble.dt_out))
    grid = np.linspace(0.0, spec.horizon, n + 1)
    e = spec.ensemble
    cfg = EnsembleConfig(
        N_stoch=e.N_stoch if models else 1,
        global_seed=e.seed,
        grid=tuple(grid),
        observables=tuple(spec.observables),
        store_reduced_state=True,
        batch_size=e.batch_size,
        workers=e.workers or (os.cpu_count() or 1),
        h=e.h,
    )
    res = run_ensemble(sysd, pm, models, thermal_init(pm, rho_s=spec.initial), cfg)
    out.mkdir(parents=True, exist_ok=True)
    res.to_csv(out / "results.csv", entropy=True)
    m = res.metadata
    metrics = {
        "N_stoch": res.N_stoch,
        "n_modes": len(pm),
        "hilbert_dims": list(m["hilbert_dims"]),
        "max_trace_drift": m["max_trace_drift"],
        "max_top_population": m["max_top_population"],
        "step": m["step"],
    }
    _write_json(out / "metrics.json", metrics)
    _write_json(out / "timing.json", {"stochastic": m.get("runtime_s")})
    return metrics


def cmd_scenario(args) -> int:
    cfg = apply_overrides(default_config(args.id), args.set or [])
    if args.threads is not None:
        cfg.ensemble.workers = args.threads
    rc = RunConfig("scenario", scenario=cfg)
    return _execute(rc, _outdir(args, rc))


def cmd_run(args) -> int:
    rc = load_run_config(args.config)
    if args.threads is not None:
        rc.threads = args.threads
        _apply_globals(rc)
    return _execute(rc, _outdir(args, rc))


def _execute(rc: RunConfig, out: Path) -> int:
    if rc.mode == "scenario":
        bundle = run_scenario(rc.scenario)
        write_bundle(bundle, out)
        _summary(bundle.metrics)
    else:
        metrics = _run_custom(rc.custom, out)
        with open(out / "config.json", "w") as fh:
            # insertion order: observables order fixes the CSV column order
            json.dump(rc.to_dict(), fh, indent=2)
            fh.write("\n")
        _summary(metrics)
    print(f"wrote {out}")
    return EXIT_OK


def _summary(metrics: dict):
    flat = {}
    for k, v in metrics.items():
        if isinstance(v, dict):
            for k2, v2 in v.items():
                if isinstance(v2, (int, float, bool)):
                    flat[f"{k}.{k2}"] = v2
        elif isinstance(v, (int, float, bool)):
            flat[k] = v
    for k in sorted(flat):
        print(f"  {k} = {flat[k]}")


CORR_PARTS = ("C_s", "C_as", "C_class", "C_Q")


def cmd_corr(args) -> int:
    rc = load_run_config(args.config)
    body = rc.body
    dt = args.dt or body.ensemble.dt_out
    if not dt > 0:
        raise ConfigError("--dt must be positive")
    n = int(round(body.horizon / dt))
    t = np.linspace(0.0, body.horizon, n + 1)
    T = body.horizon if body.noise.T is None else body.noise.T
    cols: dict[str, np.ndarray] = {}
    multi = len(body.baths) > 1
    for i, b in enumerate(body.baths):
        J = make_density(b)
        dec = build_decomposition(J, b.beta, T=T, split=b.split, n_fit_terms=b.n_fit_terms)
        pre = f"bath{i}_" if multi else ""
        for name in CORR_PARTS:
            cols[pre + name] = np.asarray(getattr(dec, name)(t), dtype=complex)
        if args.quadrature:
            cs, cas = correlation_numeric(J, b.beta, t, parts=True)
            cols[pre + "C_s_quadrature"] = np.asarray(cs, dtype=complex)
            cols[pre + "C_as_quadrature"] = np.asarray(cas, dtype=complex)
    out = _outdir(args, rc, "corr")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "corr.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        head = ["t"]
        for k in cols:
            head += [f"{k}_re", f"{k}_im"]
        w.writerow(head)
        for j, tj in enumerate(t):
            row = [repr(float(tj))]
            for v in cols.values():
                row += [repr(float(v[j].real)), repr(float(v[j].imag))]
            w.writerow(row)
    print(f"wrote {out / 'corr.csv'}")
    return EXIT_OK


def cmd_fit(args) -> int:
    rc = load_run_config(args.config)
    if args.cache_dir:
        os.environ["STOCHMODE_CACHE_DIR"] = args.cache_dir
    body = rc.body
    T = body.horizon if body.noise.T is None else body.noise.T
    report = []
    comparator = getattr(body, "comparator", None)
    for i, b in enumerate(body.baths):
        J = make_density(b)
        entry: dict[str, Any] = {"bath": i, "kind": b.kind}
        if b.kind == "ohmic":
            dec = build_decomposition(J, b.beta, T=T, split=b.split, n_fit_terms=b.n_fit_terms)
            tg = np.linspace(T / 400, T, 400)
            target = dec.C_as(tg)
            rms = float(np.sqrt(np.mean(np.abs(dec.C_as_ansatz(tg) - target) ** 2)))
            entry["antisymmetric_fit"] = {
                "ansatz": "a sin(b t) exp(-c t)",
                "terms": [[complex(s.a), complex(s.b), complex(s.c)] for s in dec.sine_terms],
                "residual_rms": rms,
                "relative_to_max": rms / float(np.max(np.abs(target))),
            }
        elif comparator is None or comparator.enabled:
            n_mats = comparator.n_mats if comparator is not None else 2
            _, fit = deterministic_comparator_params(J, b.beta, T=T, n_mats=n_mats, return_fit=True)
            entry["matsubara_fit"] = {"ansatz": "A exp(-G t)", **fit.to_json()}
        report.append(entry)
    out = _outdir(args, rc, "fit")
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "fits.json", {"fits": report, "cache_dir": os.environ.get("STOCHMODE_CACHE_DIR")})
    for e in report:
        for k in ("antisymmetric_fit", "matsubara_fit"):
            if k in e:
                print(f"  bath {e['bath']} {k}: residual_rms = {e[k]['residual_rms']:.3e}")
    print(f"wrote {out / 'fits.json'}")
    return EXIT_OK


def cmd_noise_check(args) -> int:
    rc = load_run_config(args.config)
    body = rc.body
    if args.N is not None and args.N < 1:
        raise ConfigError("-N must be positive")
    N = args.N or 10000
    body = copy.deepcopy(body)
    body.noise.enabled = True
    _, models, _ = build_stochastic(body)
    seed = body.ensemble.seed
    summary: dict[str, Any] = {"N": N, "seed": seed, "baths": []}
    out = _outdir(args, rc, "noise_check")
    rows = []
    ok = True
    for i, m in enumerate(models):
        lags = np.linspace(0.0, m.T, 100)
        rep = correlation_report(m, seed, N, lags)
        k0 = float(field_covariance(m, 0.0))
        half = np.linspace(0.0, 0.5 * m.T, 50)
        stat = [correlation_report(m, seed, N, half, offset=s) for s in (0.0, 0.25 * m.T, 0.5 * m.T)]
        spread = np.max([np.abs(r.empirical - stat[0].empirical) for r in stat[1:]], axis=0)
        bound = 3.0 * np.sqrt(2.0) * stat[0].sigma
        entry = {
            "bath": i,
            "provenance": m.provenance,
            "N_xi": m.N_xi,
            "T": m.T,
            "correlation": rep.to_dict(),
            "mean_within_3sigma": float(np.mean(np.abs(rep.mean_field) <= 3 * np.sqrt(k0 / N))),
            "stationarity_offsets": [r.offset for r in stat],
            "stationarity_fraction_within": float(np.mean(spread <= bound)),
            "field_purely_imaginary": bool(rep.max_abs_real <= 1e-12),
        }
        entry["passed"] = bool(rep.fraction_within >= 0.95 and entry["stationarity_fraction_within"] >= 0.95)
        ok = ok and entry["passed"]
        summary["baths"].append(entry)
        rows.append((i, rep, m))
    out.mkdir(parents=True, exist_ok=True)
    for i, rep, m in rows:
        write_coeffs_csv(m, out / f"coeffs_bath{i}.csv")
        with open(out / f"correlation_bath{i}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lag", "empirical_re", "empirical_im", "expected_re", "expected_im", "sigma"])
            for L, e, x, s in zip(rep.lags, rep.empirical, rep.expected, rep.sigma):
                w.writerow([repr(float(L)), repr(e.real), repr(e.imag), repr(x.real), repr(x.imag), repr(float(s))])
    summary["passed"] = ok
    _write_json(out / "noise_check.json", summary)
    for e in summary["baths"]:
        c = e["correlation"]
        print(f"  bath {e['bath']}: {c['fraction_within_3sigma']:.2%} of lags within 3 sigma, "
              f"stationarity {e['stationarity_fraction_within']:.2%}, imaginary field: {e['field_purely_imaginary']}")
    print(f"wrote {out / 'noise_check.json'}")
    if args.strict and not ok:
        print("noise check failed", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stochmode", description="Stochastic pseudomode simulations.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("scenario", help="run a built-in scenario")
    s.add_argument("id", help=f"one of {', '.join(SCENARIOS)}")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field (repeatable)")
    s.add_argument("--threads", type=int, help="ensemble worker threads (0 = one per CPU)")
    s.add_argument("--out", help="output directory")
    s.set_defaults(func=cmd_scenario)

    r = sub.add_parser("run", help="run a JSON configuration")
    r.add_argument("config")
    r.add_argument("--threads", type=int, help="ensemble worker threads (0 = one per CPU)")
    r.add_argument("--out", help="output directory")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("corr", help="write correlation decompositions to CSV")
    c.add_argument("config")
    c.add_argument("--out", help="output directory")
    c.add_argument("--dt", type=float, help="time step of the output grid")
    c.add_argument("--quadrature", action="store_true", help="add direct quadrature of C_s and C_as")
    c.set_defaults(func=cmd_corr)

    f = sub.add_parser("fit", help="run (or load cached) bath fits")
    f.add_argument("config")
    f.add_argument("--out", help="output directory")
    f.add_argument("--cache-dir", help="fit cache directory (overrides STOCHMODE_CACHE_DIR)")
    f.set_defaults(func=cmd_fit)

    n = sub.add_parser("noise-check", help="compare empirical and target noise correlations")
    n.add_argument("config")
    n.add_argument("--out", help="output directory")
    n.add_argument("-N", type=int, help="number of realizations (default 10000)")
    n.add_argument("--strict", action="store_true", help="exit 3 if the check fails")
    n.set_defaults(func=cmd_noise_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if getattr(args, "threads", None) is not None and args.threads < 0:
        print("error: --threads must be >= 0", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, bathmod.BathError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
