"""Pseudomode Lindblad dynamics with complex parameters and a classical drive.

The generator is

    d rho/dt = -i [H_S + sum_j (lam_j X_j s_b(j) + Omega_j a_j^+ a_j) + sum_b xi_b(t) s_b, rho]
               + sum_j Gamma_j [(1+n_j)(2 a rho a^+ - {a^+ a, rho}) + n_j (2 a^+ rho a - {a a^+, rho})]

with ``X_j = a_j + a_j^+``.  No parameter is ever complex-conjugated: the
bra-side operator is obtained by transposition only.

States are integrated in batches of shape ``(B, D, D)``.  Small spaces use a
precomputed sparse superoperator.  Large ones apply the ladder operators by
slicing the tensor view ``(B, d0, m1.., d0, m1..)``, which avoids storing any
``D^2 x D^2`` object.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .qcore import DensityMatrix, HilbertLayout, LayoutError

__all__ = [
    "Pseudomode",
    "PseudomodeSet",
    "SystemSpec",
    "DriveSpec",
    "Trajectory",
    "BatchTrajectory",
    "Liouvillian",
    "IntegrationError",
    "lindblad_rhs",
    "integrate",
    "integrate_batch",
    "thermal_init",
    "vacuum_init",
    "default_step",
]


class IntegrationError(RuntimeError):
    """NaN/Inf or excessive trace drift during integration."""


@dataclass(frozen=True)
class Pseudomode:
    coupling: complex
    frequency: complex
    rate: complex
    occupation: complex = 0j
    fock_dim: int = 6
    bath: int = 0

    def __post_init__(self):
        if int(self.fock_dim) < 2:
            raise ValueError("fock_dim must be >= 2")
        for name in ("coupling", "frequency", "rate", "occupation"):
            object.__setattr__(self, name, complex(getattr(self, name)))
        object.__setattr__(self, "fock_dim", int(self.fock_dim))


@dataclass(frozen=True)
class PseudomodeSet:
    modes: tuple[Pseudomode, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))

    def __len__(self):
        return len(self.modes)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(m.fock_dim for m in self.modes)

    def with_dims(self, dims: Sequence[int]) -> "PseudomodeSet":
        return PseudomodeSet(tuple(replace(m, fock_dim=int(d)) for m, d in zip(self.modes, dims)))

    def flip_coupling_sign(self, index: int) -> "PseudomodeSet":
        modes = list(self.modes)
        modes[index] = replace(modes[index], coupling=-modes[index].coupling)
        return PseudomodeSet(tuple(modes))

    def __add__(self, other: "PseudomodeSet") -> "PseudomodeSet":
        return PseudomodeSet(self.modes + other.modes)


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """System Hamiltonian, one coupling operator per bath, and named observables."""

    H_S: np.ndarray
    couplings: tuple[np.ndarray, ...]
    observables: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        H = np.asarray(self.H_S, dtype=complex)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise LayoutError("H_S must be square")
        cs = self.couplings
        if isinstance(cs, np.ndarray) and cs.ndim == 2:
            cs = (cs,)
        cs = tuple(np.asarray(c, dtype=complex) for c in cs)
        for c in cs:
            if c.shape != H.shape:
                raise LayoutError("coupling operator shape differs from H_S")
        obs = {k: np.asarray(v, dtype=complex) for k, v in dict(self.observables).items()}
        for k, v in obs.items():
            if v.shape != H.shape:
                raise LayoutError(f"observable {k!r} has wrong shape")
        object.__setattr__(self, "H_S", H)
        object.__setattr__(self, "couplings", cs)
        object.__setattr__(self, "observables", obs)

    @property
    def dim(self) -> int:
        return self.H_S.shape[0]

    @property
    def s(self) -> np.ndarray:
        return self.couplings[0]


@dataclass(frozen=True, eq=False)
class DriveSpec:
    """Per-bath classical fields; ``None`` entries mean no drive on that bath."""

    fields: tuple[Callable | None, ...] = ()

    def values(self, times, n_baths: int) -> np.ndarray | None:
        if not self.fields or all(f is None for f in self.fields):
            return None
        out = np.zeros((n_baths, 1, len(times)), dtype=complex)
        for b, f in enumerate(self.fields):
            if f is not None:
                out[b, 0] = np.asarray(f(np.asarray(times)), dtype=complex)
        return out


# ---------------------------------------------------------------------------
# generator


class Liouvillian:
    """Precomputed structure for applying the generator to batched states."""

    def __init__(self, sys: SystemSpec, pm: PseudomodeSet):
        self.sys = sys
        self.pm = pm
        self.layout = HilbertLayout((sys.dim,) + pm.dims)
        self.dims = self.layout.dims
        self.D = self.layout.total
        self.n_modes = len(pm)
        self.n_baths = max([len(sys.couplings)] + [m.bath + 1 for m in pm.modes])
        if self.n_baths > len(sys.couplings):
            raise LayoutError(f"modes reference bath {self.n_baths - 1} but only {len(sys.couplings)} couplings given")
        nf = len(self.dims)
        self.ket_axes = [1 + i for i in range(nf)]
        self.bra_axes = [1 + nf + i for i in range(nf)]
        self.tensor_shape = self.dims + self.dims

        H = sys.H_S
        self.H_diag = bool(np.all(H == np.diag(np.diag(H))))
        sys_diag = np.diag(H) if self.H_diag else np.zeros(sys.dim, dtype=complex)

        # diagonal part of K (ket) and B (bra) over the full product basis
        kd = np.zeros(self.dims, dtype=complex)
        bd = np.zeros(self.dims, dtype=complex)
        kd += sys_diag.reshape((-1,) + (1,) * self.n_modes)
        bd += sys_diag.reshape((-1,) + (1,) * self.n_modes)
        for j, m in enumerate(pm.modes):
            d = m.fock_dim
            N = np.arange(d, dtype=float)
            # truncated a a^+ = diag(1, 2, .., d-1, 0)
            AAd = np.append(np.arange(1, d, dtype=float), 0.0)
            damp = m.rate * ((1 + m.occupation) * N + m.occupation * AAd)
            shape = [1] * (1 + self.n_modes)
            shape[1 + j] = d
            kd = kd + (m.frequency * N - 1j * damp).reshape(shape)
            bd = bd + (m.frequency * N + 1j * damp).reshape(shape)
        kd = kd.reshape(-1)
        bd = bd.reshape(-1)
        self.G = (-1j * (kd[:, None] - bd[None, :])).reshape(self.tensor_shape)

        self.sqrt_w = []
        self.jump_w = []
        for j, m in enumerate(pm.modes):
            d = m.fock_dim
            self.sqrt_w.append(np.sqrt(np.arange(1, d, dtype=float)))
            w = np.sqrt(np.arange(1, d, dtype=float))
            self.jump_w.append(np.outer(w, w))
        self.baths = []
        for b in range(self.n_baths):
            s = sys.couplings[b]
            js = [j for j, m in enumerate(pm.modes) if m.bath == b]
            self.baths.append((s, js))

        # diagonal masks for top-Fock-level populations
        self.top_masks = np.zeros((self.D, self.n_modes))
        for j, m in enumerate(pm.modes):
            idx = np.zeros(self.dims, dtype=bool)
            sl = [slice(None)] * len(self.dims)
            sl[1 + j] = m.fock_dim - 1
            idx[tuple(sl)] = True
            self.top_masks[:, j] = idx.reshape(-1)

        self.sparse = self.D <= self.SPARSE_MAX
        if self.sparse:
            self._build_dense()
            self._build_sparse()

    # up to this size a sparse superoperator (about 10-20 entries per row)
    # is fastest; beyond it its memory grows like D^2 x row count
    SPARSE_MAX = 512

    def _build_dense(self):
        from .qcore import fock_ops, embed_system

        lay = self.layout
        K = embed_system(lay, self.sys.H_S).entries.copy()
        Bm = K.copy()
        self.S_dense = [embed_system(lay, s).entries for s, _ in self.baths]
        self.jumps = []
        for j, m in enumerate(self.pm.modes):
            a, ad, n = (o.entries for o in fock_ops(lay, 1 + j))
            aad = a @ ad
            X = self.S_dense[m.bath] @ (a + ad)
            static = m.coupling * X + m.frequency * n
            damp = m.rate * ((1 + m.occupation) * n + m.occupation * aad)
            K += static - 1j * damp
            Bm += static + 1j * damp
            self.jumps.append((2 * m.rate * (1 + m.occupation), a, 2 * m.rate * m.occupation, ad))
        self.K_dense = -1j * K
        self.B_dense = 1j * Bm

    def _build_sparse(self):
        from scipy import sparse

        # row-major vec: vec(A X B) = (A kron B^T) vec(X)
        I = sparse.identity(self.D, dtype=complex, format="csr")
        csr = sparse.csr_matrix
        L = sparse.kron(csr(self.K_dense), I) + sparse.kron(I, csr(self.B_dense.T))
        for r_dn, a, r_up, ad in self.jumps:
            if r_dn != 0:
                L = L + r_dn * sparse.kron(csr(a), csr(ad.T))
            if r_up != 0:
                L = L + r_up * sparse.kron(csr(ad), csr(a.T))
        self.L_T = L.T.tocsr()
        self.Lc_T = [(-1j * (sparse.kron(csr(S), I) - sparse.kron(I, csr(S.T)))).T.tocsr() for S in self.S_dense]

    def _apply_sparse(self, X, xi):
        B = X.shape[0]
        Xf = X.reshape(B, self.D * self.D)
        out = Xf @ self.L_T
        if xi is not None:
            for b, LcT in enumerate(self.Lc_T):
                xb = xi[b]
                if np.any(xb):
                    out += xb[:, None] * (Xf @ LcT)
        return out.reshape(B, self.D, self.D)

    def _apply_dense(self, X, xi):
        out = self.K_dense @ X
        out += X @ self.B_dense
        if xi is not None:
            for b, S in enumerate(self.S_dense):
                xb = xi[b]
                if np.any(xb):
                    comm = S @ X - X @ S
                    out += (-1j * xb)[:, None, None] * comm
        for r_dn, a, r_up, ad in self.jumps:
            if r_dn != 0:
                out += r_dn * (a @ X @ ad)
            if r_up != 0:
                out += r_up * (ad @ X @ a)
        return out

    # -- elementary slicing operations ------------------------------------
    def _bshape(self, w, ax, ndim):
        shape = [1] * ndim
        shape[ax] = w.size
        return w.reshape(shape)

    def _add_X(self, out, X, ax, j, coef):
        """out += coef * (a + a^+) X along tensor axis ``ax`` (symmetric matrix)."""
        w = self._bshape(self.sqrt_w[j], ax, X.ndim)
        coef = coef[(...,) + (None,) * (X.ndim - 1)] if np.ndim(coef) else coef
        lo = [slice(None)] * X.ndim
        hi = [slice(None)] * X.ndim
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        t = X[hi] * w  # a: out[k] += sqrt(k+1) X[k+1]
        t2 = X[lo] * w  # a^+: out[k+1] += sqrt(k+1) X[k]
        if np.ndim(coef):
            t *= coef
            t2 *= coef
        else:
            t *= coef
            t2 *= coef
        out[lo] += t
        out[hi] += t2

    def _sys_apply(self, M, X, ax):
        """Contract system matrix ``M[i, j]`` with axis ``ax`` of X (index j -> i)."""
        d0 = M.shape[0]
        if d0 == 2:
            idx0 = [slice(None)] * X.ndim
            idx1 = [slice(None)] * X.ndim
            idx0[ax] = 0
            idx1[ax] = 1
            x0, x1 = X[tuple(idx0)], X[tuple(idx1)]
            out = np.empty_like(X)
            out[tuple(idx0)] = M[0, 0] * x0 + M[0, 1] * x1 if M[0, 1] != 0 else M[0, 0] * x0
            out[tuple(idx1)] = M[1, 0] * x0 + M[1, 1] * x1 if M[1, 0] != 0 else M[1, 1] * x1
            return out
        return np.moveaxis(np.tensordot(M, X, axes=([1], [ax])), 0, ax)

    # -- the generator ----------------------------------------------------
    def apply(self, X, xi=None):
        """Generator applied to a batch ``X`` of shape ``(B, D, D)``.

        ``xi`` has shape ``(n_baths, B)`` (drive values at this time) or None.
        """
        if self.sparse:
            return self._apply_sparse(X, xi)
        return self._apply_tensor(X, xi)

    def _apply_tensor(self, X, xi=None):
        B = X.shape[0]
        T = X.reshape((B,) + self.tensor_shape)
        out = self.G * T
        H = self.sys.H_S
        if not self.H_diag:
            out += -1j * (self._sys_apply(H, T, self.ket_axes[0]) - self._sys_apply(H.T, T, self.bra_axes[0]))
        for b, (s, js) in enumerate(self.baths):
            xb = None if xi is None else xi[b]
            if not js and (xb is None or not np.any(xb)):
                continue
            if xb is not None and np.any(xb):
                Y = T * xb[(...,) + (None,) * (T.ndim - 1)]
                Z = Y.copy()
            else:
                Y = np.zeros_like(T)
                Z = np.zeros_like(T)
            for j in js:
                lam = self.pm.modes[j].coupling
                if lam == 0:
                    continue
                self._add_X(Y, T, self.ket_axes[1 + j], j, lam)
                self._add_X(Z, T, self.bra_axes[1 + j], j, lam)
            out += -1j * self._sys_apply(s, Y, self.ket_axes[0])
            out += 1j * self._sys_apply(s.T, Z, self.bra_axes[0])
        for j, m in enumerate(self.pm.modes):
            ka, ba = self.ket_axes[1 + j], self.bra_axes[1 + j]
            w = self.jump_w[j]
            shape = [1] * T.ndim
            shape[ka], shape[ba] = w.shape
            w = w.reshape(shape)
            lo = [slice(None)] * T.ndim
            hi = [slice(None)] * T.ndim
            lo[ka] = lo[ba] = slice(0, -1)
            hi[ka] = hi[ba] = slice(1, None)
            lo, hi = tuple(lo), tuple(hi)
            r_dn = 2 * m.rate * (1 + m.occupation)
            if r_dn != 0:
                out[lo] += (r_dn * w) * T[hi]
            r_up = 2 * m.rate * m.occupation
            if r_up != 0:
                out[hi] += (r_up * w) * T[lo]
        return out.reshape(B, self.D, self.D)

    # -- diagnostics ------------------------------------------------------
    def reduced(self, X):
        B = X.shape[0]
        d0 = self.dims[0]
        E = self.D // d0
        return np.einsum("biaja->bij", X.reshape(B, d0, E, d0, E))

    def traces(self, X):
        return np.einsum("bii->b", X)

    def top_populations(self, X):
        return np.einsum("bii->bi", X) @ self.top_masks


def lindblad_rhs(rho: DensityMatrix, t: float, sys: SystemSpec, pm: PseudomodeSet,
                 drive: DriveSpec | None = None) -> DensityMatrix:
    """Single-state generator evaluation (see module docstring)."""
    gen = Liouvillian(sys, pm)
    if rho.layout.dims != gen.layout.dims:
        raise LayoutError(f"state layout {rho.layout.dims} does not match {gen.layout.dims}")
    xi = None
    if drive is not None:
        v = drive.values(np.array([t]), gen.n_baths)
        xi = None if v is None else v[:, :, 0]
    out = gen.apply(rho.entries[None].astype(complex), xi)[0]
    if not np.all(np.isfinite(out)):
        raise IntegrationError(f"non-finite generator value at t={t}")
    return DensityMatrix(gen.layout, out)


# ---------------------------------------------------------------------------
# initial states


def _thermal_diag(d, x):
    """Normalised weights ``exp(-x k)``, ``k < d``."""
    k = np.arange(d)
    w = np.exp(-x * k)
    z = w.sum()
    if not np.isfinite(z) or abs(z) < 1e-300:
        raise ValueError(f"non-convergent thermal weights for beta*Omega={x}")
    return w / z


def thermal_init(pm: PseudomodeSet, beta_j: Sequence | None = None, rho_s=None) -> DensityMatrix:
    """``rho_S (x) prod_j exp(-beta_j Omega_j a^+ a)/Z_j``.

    When ``beta_j`` is omitted each mode uses ``beta_j Omega_j = ln((1+n_j)/n_j)``
    (vacuum if ``n_j = 0``).
    """
    if rho_s is None:
        rho_s = np.array([[1.0]])
    rho_s = np.asarray(rho_s, dtype=complex)
    blocks = [rho_s]
    for j, m in enumerate(pm.modes):
        d = m.fock_dim
        if beta_j is not None and beta_j[j] is not None:
            x = complex(beta_j[j]) * m.frequency
            diag = _thermal_diag(d, x)
        elif m.occupation == 0:
            diag = np.zeros(d, dtype=complex)
            diag[0] = 1.0
        else:
            n = m.occupation
            diag = _thermal_diag(d, complex(np.log((1 + n) / n)))
        blocks.append(np.diag(diag.astype(complex)))
    out = blocks[0]
    for b in blocks[1:]:
        out = np.kron(out, b)
    return DensityMatrix(HilbertLayout((rho_s.shape[0],) + pm.dims), out)


def vacuum_init(pm: PseudomodeSet, rho_s) -> DensityMatrix:
    vac = PseudomodeSet(tuple(replace(m, occupation=0j) for m in pm.modes))
    return thermal_init(vac, None, rho_s)


# ---------------------------------------------------------------------------
# integration


def default_step(sys: SystemSpec, pm: PseudomodeSet, factor: float = 0.02) -> float:
    scale = max([1.0, float(np.max(np.abs(np.linalg.eigvals(sys.H_S))))] +
                [max(abs(m.frequency), abs(m.rate)) for m in pm.modes])
    return factor / scale


@dataclass
class BatchTrajectory:
    times: np.ndarray
    observables: dict[str, np.ndarray]  # name -> (B, n_t)
    reduced: np.ndarray  # (B, n_t, d0, d0)
    trace: np.ndarray  # (B, n_t)
    top_population: np.ndarray  # (B, n_t, n_modes)
    step: float
    states: np.ndarray | None = None  # (B, n_t, D, D) when requested


@dataclass
class Trajectory:
    times: np.ndarray
    observables: dict[str, np.ndarray]
    reduced: np.ndarray
    trace: np.ndarray
    top_population: np.ndarray
    step: float
    layout: HilbertLayout
    states: list[DensityMatrix] | None = None

    def reduced_state(self, i: int) -> DensityMatrix:
        return DensityMatrix(HilbertLayout((self.reduced.shape[-1],)), self.reduced[i])


def _check_grid(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("grid needs at least two times")
    if grid[0] != 0.0:
        raise ValueError("grid must start at t=0")
    d = np.diff(grid)
    if np.any(d <= 0) or not np.allclose(d, d[0], rtol=1e-9, atol=0):
        raise ValueError("grid must be uniform and strictly increasing")
    return grid, float(d[0])


def substeps_for(dt_out: float, h: float) -> int:
    return max(1, int(np.ceil(dt_out / h - 1e-9)))


def integrate_batch(gen: Liouvillian, rho0: np.ndarray, grid, h: float | None = None,
                    drive: np.ndarray | None = None, store_states: bool = False,
                    trace_tol: float = 1e-6) -> BatchTrajectory:
    """Fixed-step RK4 for a batch of states.

    ``rho0`` is ``(D, D)`` (shared) or ``(B, D, D)``.  ``drive`` has shape
    ``(n_baths, B, 2*n_steps + 1)``: field values on the half-step grid
    ``t_k = k h / 2``.  The step ``h`` divides the output spacing exactly.
    """
    grid, dt = _check_grid(grid)
    if h is None:
        h = default_step(gen.sys, gen.pm)
    sub = substeps_for(dt, h)
    h = dt / sub
    n_steps = sub * (grid.size - 1)
    rho0 = np.asarray(rho0, dtype=complex)
    if drive is not None:
        drive = np.asarray(drive)
        B = drive.shape[1]
        if drive.shape != (gen.n_baths, B, 2 * n_steps + 1):
            raise ValueError(f"drive shape {drive.shape} != {(gen.n_baths, B, 2 * n_steps + 1)}")
    else:
        B = rho0.shape[0] if rho0.ndim == 3 else 1
    X = np.broadcast_to(rho0, (B, gen.D, gen.D)).copy() if rho0.ndim == 2 else rho0.copy()
    if X.shape != (B, gen.D, gen.D):
        raise LayoutError(f"initial state shape {X.shape} does not match {(B, gen.D, gen.D)}")

    nt = grid.size
    names = list(gen.sys.observables)
    obs_ops = [gen.sys.observables[k] for k in names]
    reduced = np.empty((B, nt, gen.dims[0], gen.dims[0]), dtype=complex)
    trace = np.empty((B, nt), dtype=complex)
    top = np.empty((B, nt, gen.n_modes), dtype=complex)
    states = np.empty((B, nt, gen.D, gen.D), dtype=complex) if store_states else None
    tr0 = gen.traces(X)

    def record(i, X):
        reduced[:, i] = gen.reduced(X)
        trace[:, i] = gen.traces(X)
        top[:, i] = gen.top_populations(X)
        if states is not None:
            states[:, i] = X
        if not np.all(np.isfinite(trace[:, i])):
            raise IntegrationError(f"non-finite state at t={grid[i]}")
        drift = np.max(np.abs(trace[:, i] - tr0))
        if drift > trace_tol:
            raise IntegrationError(f"trace drift {drift:.2e} at t={grid[i]} exceeds {trace_tol:g}; reduce the step")

    record(0, X)
    f = gen.apply
    half = 0.5 * h
    for step in range(n_steps):
        if drive is None:
            x0 = xm = x1 = None
        else:
            x0, xm, x1 = drive[:, :, 2 * step], drive[:, :, 2 * step + 1], drive[:, :, 2 * step + 2]
        k1 = f(X, x0)
        k2 = f(X + half * k1, xm)
        k3 = f(X + half * k2, xm)
        k4 = f(X + h * k3, x1)
        X = X + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        if (step + 1) % sub == 0:
            record((step + 1) // sub, X)
    observables = {
        name: np.einsum("ij,btji->bt", op, reduced) for name, op in zip(names, obs_ops)
    }
    return BatchTrajectory(grid, observables, reduced, trace, top, h, states)


def half_step_times(grid, h) -> np.ndarray:
    grid, dt = _check_grid(grid)
    sub = substeps_for(dt, h)
    h = dt / sub
    n_steps = sub * (grid.size - 1)
    return np.arange(2 * n_steps + 1) * (0.5 * h)


def integrate(sys: SystemSpec, pm: PseudomodeSet, drive: DriveSpec | None, rho0: DensityMatrix, grid,
              h: float | None = None, store_states: bool = False, auto_truncate: bool = False,
              top_tol: float = 1e-6, max_dim: int = 14, trace_tol: float = 1e-6) -> Trajectory:
    """Integrate one trajectory with fixed-step RK4.

    With ``auto_truncate`` a mode whose top Fock level ever carries more than
    ``top_tol`` population gets two more levels and the run is repeated (up
    to ``max_dim``); ``rho0`` is then rebuilt as system state (x) the
    original mode diagonals padded with zeros.
    """
    if abs(rho0.trace() - 1) > 1e-10:
        raise ValueError("initial state must have unit trace")
    while True:
        gen = Liouvillian(sys, pm)
        if rho0.layout.dims != gen.layout.dims:
            raise LayoutError(f"initial state layout {rho0.layout.dims} does not match {gen.layout.dims}")
        grid_arr, dt = _check_grid(grid)
        hh = default_step(sys, pm) if h is None else h
        xi = None
        if drive is not None:
            ts = half_step_times(grid_arr, hh)
            xi = drive.values(ts, gen.n_baths)
        bt = integrate_batch(gen, rho0.entries, grid_arr, hh, xi, store_states, trace_tol)
        if not auto_truncate:
            break
        worst = np.max(np.abs(bt.top_population[0]), axis=0) if gen.n_modes else np.zeros(0)
        grow = [j for j in range(gen.n_modes) if worst[j] > top_tol and pm.modes[j].fock_dim < max_dim]
        if not grow:
            break
        new_dims = [min(d + 2, max_dim) if j in grow else d for j, d in enumerate(pm.dims)]
        rho0 = _pad_state(rho0, pm.dims, new_dims)
        pm = pm.with_dims(new_dims)
    states = None
    if store_states:
        states = [DensityMatrix(gen.layout, s) for s in bt.states[0]]
    return Trajectory(
        times=bt.times,
        observables={k: v[0] for k, v in bt.observables.items()},
        reduced=bt.reduced[0],
        trace=bt.trace[0],
        top_population=bt.top_population[0],
        step=bt.step,
        layout=gen.layout,
        states=states,
    )


def _pad_state(rho: DensityMatrix, old_dims, new_dims) -> DensityMatrix:
    d0 = rho.layout.dims[0]
    shape = (d0,) + tuple(old_dims)
    T = rho.entries.reshape(shape + shape)
    new_shape = (d0,) + tuple(new_dims)
    out = np.zeros(new_shape + new_shape, dtype=complex)
    sl = tuple(slice(0, s) for s in shape) * 2
    out[sl] = T
    n = int(np.prod(new_shape))
    return DensityMatrix(HilbertLayout(new_shape), out.reshape(n, n))
