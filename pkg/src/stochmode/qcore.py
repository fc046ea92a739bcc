"""Dense operator algebra on a system (x) pseudomode tensor-product space.

The system factor always comes first in the tensor order and every Fock
factor uses the ascending number basis ``|0>, |1>, ...``.  For two-level
systems the convention is ``|0> = up`` so that ``sigma_z |0> = +|0>``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_DIM_CAP = 4096

__all__ = [
    "HilbertLayout",
    "Operator",
    "DensityMatrix",
    "LayoutError",
    "sigma_x",
    "sigma_y",
    "sigma_z",
    "identity",
    "embed_system",
    "fock_ops",
    "partial_trace_to_system",
    "von_neumann_entropy",
    "expect",
    "kron_all",
]


class LayoutError(ValueError):
    """Raised when operators or states do not fit the tensor layout."""


@dataclass(frozen=True)
class HilbertLayout:
    """Ordered factor dimensions: ``dims[0]`` is the system, then one per mode."""

    dims: tuple[int, ...]
    cap: int = DEFAULT_DIM_CAP

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) == 0:
            raise LayoutError("layout needs at least the system factor")
        if any(d < 1 for d in dims):
            raise LayoutError(f"all dims must be >= 1, got {dims}")
        if self.total > self.cap:
            raise LayoutError(
                f"total dimension {self.total} exceeds cap {self.cap}; "
                "lower the Fock truncations or raise the cap explicitly"
            )

    @property
    def total(self) -> int:
        return int(np.prod(self.dims))

    @property
    def system_dim(self) -> int:
        return self.dims[0]

    @property
    def n_modes(self) -> int:
        return len(self.dims) - 1

    @property
    def env_dim(self) -> int:
        return self.total // self.dims[0]


@dataclass(frozen=True, eq=False)
class Operator:
    layout: HilbertLayout
    entries: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=complex)
        n = self.layout.total
        if m.shape != (n, n):
            raise LayoutError(f"operator shape {m.shape} does not match layout total {n}")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    def __matmul__(self, other: "Operator") -> "Operator":
        _check_same(self.layout, other.layout)
        return Operator(self.layout, self.entries @ other.entries)

    def __add__(self, other: "Operator") -> "Operator":
        _check_same(self.layout, other.layout)
        return Operator(self.layout, self.entries + other.entries)

    def __sub__(self, other: "Operator") -> "Operator":
        _check_same(self.layout, other.layout)
        return Operator(self.layout, self.entries - other.entries)

    def __mul__(self, scalar) -> "Operator":
        return Operator(self.layout, self.entries * scalar)

    __rmul__ = __mul__

    def dag(self) -> "Operator":
        return Operator(self.layout, self.entries.conj().T)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """A (possibly non-Hermitian) density matrix on ``layout``."""

    layout: HilbertLayout
    entries: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=complex)
        n = self.layout.total
        if m.shape != (n, n):
            raise LayoutError(f"state shape {m.shape} does not match layout total {n}")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def hermitized(self) -> "DensityMatrix":
        return DensityMatrix(self.layout, 0.5 * (self.entries + self.entries.conj().T))

    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T)))

    @classmethod
    def from_ket(cls, layout: HilbertLayout, ket) -> "DensityMatrix":
        v = np.asarray(ket, dtype=complex).reshape(-1)
        return cls(layout, np.outer(v, v.conj()))


def _check_same(a: HilbertLayout, b: HilbertLayout):
    if a.dims != b.dims:
        raise LayoutError(f"layout mismatch: {a.dims} vs {b.dims}")


def sigma_x() -> np.ndarray:
    return np.array([[0, 1], [1, 0]], dtype=complex)


def sigma_y() -> np.ndarray:
    return np.array([[0, -1j], [1j, 0]], dtype=complex)


def sigma_z() -> np.ndarray:
    return np.array([[1, 0], [0, -1]], dtype=complex)


def identity(n: int) -> np.ndarray:
    return np.eye(n, dtype=complex)


def kron_all(factors: Sequence[np.ndarray]) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for f in factors:
        out = np.kron(out, f)
    return out


def embed_system(layout: HilbertLayout, op_s) -> Operator:
    """Lift a system-space matrix to ``op_s (x) I_env``."""
    op_s = np.asarray(op_s, dtype=complex)
    if op_s.shape != (layout.system_dim, layout.system_dim):
        raise LayoutError(f"system operator shape {op_s.shape} vs system dim {layout.system_dim}")
    return Operator(layout, np.kron(op_s, identity(layout.env_dim)))


def annihilator(dim: int) -> np.ndarray:
    """Truncated ``a`` with ``a|k> = sqrt(k)|k-1>``."""
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), k=1).astype(complex)


def fock_ops(layout: HilbertLayout, mode_index: int) -> tuple[Operator, Operator, Operator]:
    """Ladder and number operators of pseudomode ``mode_index`` (1-based).

    Returns ``(a, a_dag, n)`` embedded at tensor slot ``mode_index``.
    """
    if not 1 <= mode_index <= layout.n_modes:
        raise IndexError(f"mode index {mode_index} out of range 1..{layout.n_modes}")
    factors = [identity(d) for d in layout.dims]
    factors[mode_index] = annihilator(layout.dims[mode_index])
    a = kron_all(factors)
    ad = a.conj().T
    return Operator(layout, a), Operator(layout, ad), Operator(layout, ad @ a)


def partial_trace_to_system(rho: DensityMatrix) -> DensityMatrix:
    """Trace out all pseudomode factors, keeping the system block."""
    lay = rho.layout
    ds, de = lay.system_dim, lay.env_dim
    r = rho.entries.reshape(ds, de, ds, de)
    red = np.einsum("iaja->ij", r)
    return DensityMatrix(HilbertLayout((ds,)), red)


def von_neumann_entropy(rho_s: DensityMatrix, clamp: float = 1e-10) -> float:
    """``-sum p log p`` over the eigenvalues of a Hermitian(ized) state.

    Eigenvalues in ``(-clamp, 0]`` are treated as zero.  More negative ones
    are also dropped but trigger a warning, since finite ensembles can leave
    small negative tails in the averaged state.
    """
    m = np.asarray(rho_s.entries)
    p = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
    if np.any(p < -clamp):
        warnings.warn(
            f"state has eigenvalue {p.min():.3e} below -{clamp:g}; clamped to zero",
            RuntimeWarning,
            stacklevel=2,
        )
    p = p[p > 0]
    return float(-np.sum(p * np.log(p))) + 0.0  # no -0.0 for pure states


def expect(op: Operator, rho: DensityMatrix) -> complex:
    """``Tr(op rho)``; complex for non-Hermitian single-trajectory states."""
    _check_same(op.layout, rho.layout)
    # The product keeps the diagonal exact for op = I, so expect(I, rho)
    # reproduces rho.trace() bit for bit.
    return complex(np.trace(op.entries @ rho.entries))
