"""Ensembles of stochastic trajectories with a fixed-order reduction.

Trajectories are grouped into batches of ``batch_size`` consecutive indices.
Each batch gets a two-pass mean and sum of squared deviations; batches are
then merged sequentially in index order (pairwise update of mean and M2), so
the result depends only on ``(global_seed, N_stoch, batch_size)`` and not on
how many worker threads evaluated the batches.

The reported ``std`` is the standard error of the mean,
``sqrt([sum |O|^2 / N - |sum O / N|^2] / N)``, without Bessel's correction.
"""

from __future__ import annotations

import csv
import json
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import (
    IntegrationError,
    Liouvillian,
    PseudomodeSet,
    SystemSpec,
    _check_grid,
    default_step,
    half_step_times,
    integrate_batch,
)
from .noise import NoiseModel, draw_matrix, field_basis
from .qcore import DensityMatrix, HilbertLayout, von_neumann_entropy

__all__ = [
    "EnsembleConfig",
    "EnsembleResult",
    "EnsembleError",
    "run_ensemble",
    "averaged_reduced_state",
    "entropy_series",
    "entropy_std",
    "combine_moments",
]


class EnsembleError(RuntimeError):
    def __init__(self, msg, trajectory=None, seed=None):
        super().__init__(msg)
        self.trajectory = trajectory
        self.seed = seed


@dataclass(frozen=True)
class EnsembleConfig:
    N_stoch: int
    global_seed: int
    grid: tuple[float, ...]
    observables: tuple[str, ...] = ()
    store_reduced_state: bool = False
    batch_size: int = 50
    workers: int = 1
    h: float | None = None
    trace_tol: float = 1e-8

    def __post_init__(self):
        if int(self.N_stoch) < 1:
            raise ValueError("N_stoch must be >= 1")
        if int(self.batch_size) < 1:
            raise ValueError("batch_size must be >= 1")
        object.__setattr__(self, "grid", tuple(float(t) for t in self.grid))
        object.__setattr__(self, "observables", tuple(self.observables))
        _check_grid(self.grid)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = list(self.grid)
        d["observables"] = list(self.observables)
        return d


@dataclass
class EnsembleResult:
    times: np.ndarray
    mean: dict[str, np.ndarray]
    std: dict[str, np.ndarray]
    N_stoch: int
    reduced_mean: np.ndarray | None = None  # (n_t, d, d)
    batch_reduced: np.ndarray | None = None  # (n_batches, n_t, d, d) per-batch means
    batch_counts: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def to_csv(self, path, entropy: bool = False):
        names = list(self.mean)
        cols = ["t"]
        for k in names:
            cols += [f"{k}_re", f"{k}_im", f"{k}_std"]
        S = sS = None
        if entropy and self.reduced_mean is not None:
            S, sS = entropy_series(self), entropy_std(self)
            cols += ["entropy", "entropy_std"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for i, t in enumerate(self.times):
                row = [t]
                for k in names:
                    row += [self.mean[k][i].real, self.mean[k][i].imag, self.std[k][i]]
                if S is not None:
                    row += [S[i], sS[i]]
                w.writerow([_fmt(v) for v in row])

    def to_json(self, path, config: dict | None = None):
        payload = {"N_stoch": self.N_stoch, "metadata": self.metadata}
        if config is not None:
            payload["config"] = config
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)


def _fmt(v) -> str:
    return repr(float(v)) if np.isfinite(v) else str(float(v))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


# ---------------------------------------------------------------------------
# moments


def batch_moments(x: np.ndarray) -> tuple[int, np.ndarray, np.ndarray]:
    """Two-pass ``(n, mean, M2)`` over axis 0, with ``M2 = sum |x - mean|^2``."""
    n = x.shape[0]
    m = x.mean(axis=0)
    dev = x - m
    return n, m, np.sum((dev * dev.conj()).real, axis=0)


def combine_moments(a, b):
    """Merge two ``(n, mean, M2)`` triples."""
    na, ma, Ma = a
    nb, mb, Mb = b
    n = na + nb
    d = mb - ma
    m = ma + d * (nb / n)
    M = Ma + Mb + (d * np.conj(d)).real * (na * nb / n)
    return n, m, M


# ---------------------------------------------------------------------------
# runner


def _noise_drive(models, basis, seed, idx, n_baths, n_half):
    if not models:
        return None
    out = np.zeros((n_baths, len(idx), n_half), dtype=complex)
    for b, model in enumerate(models):
        if model is None or model.is_zero():
            continue
        draws = draw_matrix(model, seed, [(b, j) for j in idx])
        re, im = basis[b]
        out[b].real = draws @ re
        out[b].imag = draws @ im
    return out


def run_ensemble(sys: SystemSpec, pm: PseudomodeSet, noise_models: Sequence[NoiseModel | None],
                 rho0: DensityMatrix, cfg: EnsembleConfig) -> EnsembleResult:
    """Average ``N_stoch`` noisy trajectories.

    Trajectory ``j`` draws the field of bath ``b`` from stream ``(b, j)`` of
    ``cfg.global_seed``.  An empty ``noise_models`` runs one deterministic
    trajectory and reports it with zero spread.
    """
    t0 = time.perf_counter()
    gen = Liouvillian(sys, pm)
    if rho0.layout.dims != gen.layout.dims:
        raise ValueError(f"initial state layout {rho0.layout.dims} does not match {gen.layout.dims}")
    models = list(noise_models)
    if models and len(models) != gen.n_baths:
        raise ValueError(f"need one noise model per bath ({gen.n_baths}), got {len(models)}")
    for name in cfg.observables:
        if name not in sys.observables:
            raise KeyError(f"unknown observable {name!r}")
    grid, dt = _check_grid(cfg.grid)
    h = cfg.h if cfg.h is not None else default_step(sys, pm)
    ts = half_step_times(grid, h)
    for m in models:
        if m is not None and grid[-1] > m.T * (1 + 1e-12):
            raise ValueError(f"simulation horizon {grid[-1]} exceeds the noise window T={m.T}")
    basis = [field_basis(m, ts) if m is not None else None for m in models]

    deterministic = not models or all(m is None or m.is_zero() for m in models)
    N = int(cfg.N_stoch)
    n_run = 1 if not models else N
    bs = int(cfg.batch_size)
    batches = [list(range(s, min(s + bs, n_run))) for s in range(0, n_run, bs)]
    names = list(cfg.observables)
    obs_ops = [sys.observables[k] for k in names]
    seed = int(cfg.global_seed)

    def run_batch(idx):
        drive = _noise_drive(models, basis, seed, idx, gen.n_baths, ts.size)
        rho_b = np.broadcast_to(rho0.entries, (len(idx), gen.D, gen.D))
        try:
            bt = integrate_batch(gen, rho_b, grid, h, drive, trace_tol=cfg.trace_tol)
        except IntegrationError as exc:
            _locate_failure(gen, rho0, grid, h, models, basis, seed, idx, ts.size, cfg.trace_tol, exc)
            raise
        red = bt.reduced
        # observables from the reduced state: Tr(O rho_S)
        obs = [np.einsum("ij,btji->bt", op, red) for op in obs_ops]
        stats = [batch_moments(o) for o in obs]
        drift = float(np.max(np.abs(bt.trace - 1.0)))
        top = float(np.max(np.abs(bt.top_population))) if gen.n_modes else 0.0
        red_mean = red.mean(axis=0) if cfg.store_reduced_state else None
        return len(idx), stats, red_mean, drift, top

    workers = max(1, int(cfg.workers))
    if workers == 1 or len(batches) == 1:
        outs = [run_batch(b) for b in batches]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            outs = list(ex.map(run_batch, batches))

    # sequential merge in batch (= trajectory-index) order
    acc = None
    red_batches, counts = [], []
    drift = top = 0.0
    for n_b, stats, red_mean, d_b, t_b in outs:
        acc = stats if acc is None else [combine_moments(a, s) for a, s in zip(acc, stats)]
        counts.append(n_b)
        if red_mean is not None:
            red_batches.append(red_mean)
        drift = max(drift, d_b)
        top = max(top, t_b)

    mean, std = {}, {}
    for k, (n, m, M2) in zip(names, acc or []):
        if not models:
            mean[k], std[k] = m, np.zeros(m.shape)
        else:
            mean[k] = m
            std[k] = np.sqrt(M2 / n / n)
    reduced_mean = batch_red = None
    counts_arr = np.asarray(counts)
    if cfg.store_reduced_state:
        batch_red = np.stack(red_batches)
        reduced_mean = np.einsum("g,gtij->tij", counts_arr / counts_arr.sum(), batch_red)
    if top > 1e-6:
        warnings.warn(f"top Fock level population reached {top:.2e}; consider larger truncations",
                      RuntimeWarning, stacklevel=2)
    meta = {
        "global_seed": seed,
        "N_stoch": N,
        "trajectories_integrated": n_run,
        "batch_size": bs,
        "workers": workers,
        "N_xi": [None if m is None else m.N_xi for m in models],
        "noise_T": [None if m is None else m.T for m in models],
        "deterministic": deterministic,
        "step": float(dt / int(np.ceil(dt / h - 1e-9))),
        "hilbert_dims": list(gen.dims),
        "max_trace_drift": drift,
        "max_top_population": top,
        "runtime_s": time.perf_counter() - t0,
    }
    return EnsembleResult(grid, mean, std, N, reduced_mean, batch_red, counts_arr, meta)


def _locate_failure(gen, rho0, grid, h, models, basis, seed, idx, n_half, trace_tol, exc):
    for j in idx:
        drive = _noise_drive(models, basis, seed, [j], gen.n_baths, n_half)
        try:
            integrate_batch(gen, rho0.entries, grid, h, drive, trace_tol=trace_tol)
        except IntegrationError as e:
            raise EnsembleError(f"trajectory {j} (seed {seed}, streams (bath, {j})) failed: {e}",
                                trajectory=j, seed=seed) from e
    raise EnsembleError(f"batch {idx[0]}..{idx[-1]} failed but no single trajectory reproduces it: {exc}",
                        trajectory=idx[0], seed=seed) from exc


# ---------------------------------------------------------------------------
# reduced-state products


def averaged_reduced_state(result: EnsembleResult, t_index: int) -> DensityMatrix:
    """Ensemble-averaged reduced state; ``.hermitized()`` and ``.hermiticity_defect()`` are on the result."""
    if result.reduced_mean is None:
        raise ValueError("reduced states were not stored (set store_reduced_state=True)")
    r = result.reduced_mean[t_index]
    return DensityMatrix(HilbertLayout((r.shape[0],)), r)


def _entropy(block) -> float:
    return von_neumann_entropy(DensityMatrix(HilbertLayout((block.shape[0],)), block))


def entropy_series(result: EnsembleResult) -> np.ndarray:
    """Von Neumann entropy of the Hermitized averaged reduced state at each time."""
    if result.reduced_mean is None:
        raise ValueError("reduced states were not stored (set store_reduced_state=True)")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.array([_entropy(r) for r in result.reduced_mean])


def entropy_std(result: EnsembleResult) -> np.ndarray:
    """Delete-one-batch jackknife standard error of :func:`entropy_series`."""
    if result.batch_reduced is None:
        raise ValueError("reduced states were not stored (set store_reduced_state=True)")
    g = result.batch_reduced.shape[0]
    if g < 2:
        # a single trajectory is exact; one batch of several cannot be resampled
        fill = 0.0 if result.N_stoch == 1 else np.nan
        return np.full(result.times.size, fill)
    w = result.batch_counts.astype(float)
    total = np.einsum("g,gtij->tij", w, result.batch_reduced)
    S = np.empty((g, result.times.size))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for k in range(g):
            loo = (total - w[k] * result.batch_reduced[k]) / (w.sum() - w[k])
            S[k] = [_entropy(r) for r in loo]
    dev = S - S.mean(axis=0)
    return np.sqrt((g - 1) / g * np.sum(dev * dev, axis=0))
