"""Block-structured vectors, box constraint sets and matrix norm utilities.

Every other module works with a decision vector that is partitioned into
per-agent blocks and an output vector partitioned the same way.  This module
owns that partition (:class:`BlockLayout`), the axis-aligned feasible sets
(:class:`BoxSet`), the static output map (:class:`OutputMap`) and the small
set of norm/projection primitives shared by the simulator, the minimizer
oracle and the bound checkers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BlockLayout",
    "BoxSet",
    "OutputMap",
    "project_box",
    "spectral_norm",
    "diameter",
]

# Exact eigensolve below this size; power iteration above.
_EXACT_NORM_MAX_DIM = 64


def _as_float_vector(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class BlockLayout:
    """Partition of the input vector (n_i per agent) and output vector (m_i).

    Immutable; offsets are precomputed so block slicing is cheap inside the
    per-tick simulation loop.
    """

    input_dims: tuple[int, ...]
    output_dims: tuple[int, ...]
    input_offsets: tuple[int, ...] = field(init=False)
    output_offsets: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        in_dims = tuple(int(d) for d in self.input_dims)
        out_dims = tuple(int(d) for d in self.output_dims)
        if len(in_dims) == 0:
            raise ValueError("layout needs at least one agent")
        if len(in_dims) != len(out_dims):
            raise ValueError(
                f"input_dims and output_dims must have equal length "
                f"({len(in_dims)} != {len(out_dims)})"
            )
        if any(d <= 0 for d in in_dims) or any(d <= 0 for d in out_dims):
            raise ValueError("all block dimensions must be positive")
        object.__setattr__(self, "input_dims", in_dims)
        object.__setattr__(self, "output_dims", out_dims)
        object.__setattr__(
            self, "input_offsets", tuple(np.concatenate(([0], np.cumsum(in_dims))).tolist())
        )
        object.__setattr__(
            self, "output_offsets", tuple(np.concatenate(([0], np.cumsum(out_dims))).tolist())
        )

    @property
    def agent_count(self) -> int:
        return len(self.input_dims)

    @property
    def n(self) -> int:
        return self.input_offsets[-1]

    @property
    def m(self) -> int:
        return self.output_offsets[-1]

    def input_slice(self, i: int) -> slice:
        self._check_agent(i)
        return slice(self.input_offsets[i], self.input_offsets[i + 1])

    def output_slice(self, i: int) -> slice:
        self._check_agent(i)
        return slice(self.output_offsets[i], self.output_offsets[i + 1])

    def _check_agent(self, i: int) -> None:
        if not 0 <= i < self.agent_count:
            raise ValueError(f"agent index {i} out of range [0, {self.agent_count})")

    @staticmethod
    def uniform(agent_count: int, n_i: int, m_i: int) -> "BlockLayout":
        """Layout with identical block sizes for every agent."""
        return BlockLayout((n_i,) * agent_count, (m_i,) * agent_count)


@dataclass(frozen=True)
class BoxSet:
    """Axis-aligned box ``{v : lower <= v <= upper}``.

    Boxes are block-decomposable by construction, so restricting to an
    agent's coordinates yields that agent's feasible set.  A user-supplied
    per-block projector can replace the closed-form clamp in the engine for
    other polyhedral sets; it must satisfy the orthogonal-projection
    inequality ``(z - v)^T (z - w) <= 0`` for ``z`` the projection of ``v``
    and any feasible ``w``.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _as_float_vector(self.lower, "lower")
        hi = _as_float_vector(self.upper, "upper")
        if lo.shape != hi.shape:
            raise ValueError(f"lower/upper shape mismatch: {lo.shape} vs {hi.shape}")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            bad = int(np.argmax(lo > hi))
            raise ValueError(f"empty box: lower[{bad}]={lo[bad]} > upper[{bad}]={hi[bad]}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, v: np.ndarray, tol: float = 0.0) -> bool:
        v = np.asarray(v, dtype=float)
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))

    def block(self, layout: BlockLayout, i: int) -> "BoxSet":
        """Agent i's feasible set (the restriction to its coordinates)."""
        if layout.n != self.dim:
            raise ValueError(f"layout n={layout.n} does not match box dim {self.dim}")
        sl = layout.input_slice(i)
        return BoxSet(self.lower[sl].copy(), self.upper[sl].copy())

    @staticmethod
    def cube(dim: int, lo: float, hi: float) -> "BoxSet":
        return BoxSet(np.full(dim, float(lo)), np.full(dim, float(hi)))


def project_box(v: np.ndarray, box: BoxSet) -> np.ndarray:
    """Euclidean projection onto the box (componentwise clamp)."""
    v = np.asarray(v, dtype=float)
    if v.shape != (box.dim,):
        raise ValueError(f"vector shape {v.shape} does not match box dim {box.dim}")
    return np.clip(v, box.lower, box.upper)


def diameter(box: BoxSet) -> float:
    """Euclidean length of the corner-to-corner vector of the box."""
    return float(np.linalg.norm(box.upper - box.lower))


def spectral_norm(mat: np.ndarray, rel_tol: float = 1e-10, max_iter: int = 100_000) -> float:
    """Largest singular value of ``mat`` to relative tolerance ``rel_tol``.

    Uses an exact eigensolve of the Gram matrix for small inputs and power
    iteration with a deterministic start vector above :data:`_EXACT_NORM_MAX_DIM`.
    """
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {mat.shape}")
    if not np.isfinite(mat).all():
        raise ValueError("matrix entries must be finite")
    if mat.size == 0 or not mat.any():
        return 0.0
    if min(mat.shape) <= _EXACT_NORM_MAX_DIM:
        gram = mat.T @ mat if mat.shape[1] <= mat.shape[0] else mat @ mat.T
        ev = np.linalg.eigvalsh(gram)
        return float(np.sqrt(max(ev[-1], 0.0)))
    # Power iteration on M^T M; deterministic all-ones start.
    v = np.ones(mat.shape[1]) / np.sqrt(mat.shape[1])
    sigma_sq = 0.0
    for _ in range(max_iter):
        w = mat.T @ (mat @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v_new = w / nw
        sigma_sq_new = float(v_new @ (mat.T @ (mat @ v_new)))
        if abs(sigma_sq_new - sigma_sq) <= rel_tol * max(sigma_sq_new, 1e-300):
            return float(np.sqrt(sigma_sq_new))
        sigma_sq, v = sigma_sq_new, v_new
    return float(np.sqrt(sigma_sq))


@dataclass(frozen=True)
class OutputMap:
    """Dense output matrix C with cached block views and spectral norm.

    ``column_block(j)`` is the m x n_j slab multiplying agent j's inputs;
    ``row_block(i)`` is the m_i x n slab producing agent i's outputs.
    """

    entries: np.ndarray
    layout: BlockLayout
    norm: float = field(init=False)

    def __post_init__(self):
        mat = np.asarray(self.entries, dtype=float)
        if mat.shape != (self.layout.m, self.layout.n):
            raise ValueError(
                f"output map shape {mat.shape} does not match layout "
                f"({self.layout.m}, {self.layout.n})"
            )
        if not np.isfinite(mat).all():
            raise ValueError("output map entries must be finite")
        mat = mat.copy()
        mat.setflags(write=False)
        object.__setattr__(self, "entries", mat)
        object.__setattr__(self, "norm", spectral_norm(mat))

    def column_block(self, j: int) -> np.ndarray:
        return self.entries[:, self.layout.input_slice(j)]

    def row_block(self, i: int) -> np.ndarray:
        return self.entries[self.layout.output_slice(i), :]

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.entries @ x
