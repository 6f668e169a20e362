"""Operators and vectors on ordered tensor products of labeled spaces.

Basis convention: the composite index is big-endian in the listed space
order, i.e. for spaces (A, B) the basis state |a b> sits at row a * d_B + b.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import StructureError, ValidationError

HERMITIAN_RTOL = 1e-10
PSD_RTOL = 1e-9


@dataclass(frozen=True)
class SpaceLabel:
    """A named finite-dimensional Hilbert space."""

    name: str
    dim: int

    def __post_init__(self):
        if not isinstance(self.dim, (int, np.integer)) or self.dim < 1:
            raise StructureError(f"space {self.name!r} needs a positive integer dimension, got {self.dim!r}")
        object.__setattr__(self, "name", str(self.name))
        object.__setattr__(self, "dim", int(self.dim))

    def __repr__(self):
        return f"{self.name}({self.dim})"


def qubits(*names) -> tuple[SpaceLabel, ...]:
    """Convenience constructor for a list of two-dimensional spaces."""
    return tuple(SpaceLabel(str(n), 2) for n in names)


def _check_unique(spaces: Sequence[SpaceLabel]):
    names = [s.name for s in spaces]
    if len(set(names)) != len(names):
        raise StructureError(f"duplicate space labels in {names}")


def _dims(spaces: Sequence[SpaceLabel]) -> tuple[int, ...]:
    return tuple(s.dim for s in spaces)


def _resolve(spaces: Sequence[SpaceLabel], which: Iterable) -> list[int]:
    """Map labels (SpaceLabel or name) to positions inside ``spaces``."""
    names = [s.name for s in spaces]
    out = []
    for w in which:
        key = w.name if isinstance(w, SpaceLabel) else str(w)
        if key not in names:
            raise StructureError(f"unknown space {key!r}; available {names}")
        pos = names.index(key)
        if isinstance(w, SpaceLabel) and w.dim != spaces[pos].dim:
            raise StructureError(f"space {key!r} has dim {spaces[pos].dim}, not {w.dim}")
        out.append(pos)
    if len(set(out)) != len(out):
        raise StructureError("a space was listed twice")
    return out


class LabeledOperator:
    """Complex square matrix acting on ``spaces``; immutable after construction."""

    __slots__ = ("spaces", "matrix")

    def __init__(self, spaces: Sequence[SpaceLabel], matrix):
        spaces = tuple(spaces)
        _check_unique(spaces)
        mat = np.array(matrix, dtype=complex)
        n = int(np.prod(_dims(spaces), dtype=np.int64)) if spaces else 1
        if mat.shape != (n, n):
            raise StructureError(f"matrix shape {mat.shape} does not match spaces {spaces} (expected {n}x{n})")
        mat.setflags(write=False)
        object.__setattr__(self, "spaces", spaces)
        object.__setattr__(self, "matrix", mat)

    def __setattr__(self, key, value):
        raise AttributeError("LabeledOperator is immutable")

    @property
    def dims(self) -> tuple[int, ...]:
        return _dims(self.spaces)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.spaces)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def dagger(self) -> "LabeledOperator":
        return LabeledOperator(self.spaces, self.matrix.conj().T)

    def scaled(self, c) -> "LabeledOperator":
        return LabeledOperator(self.spaces, c * self.matrix)

    def __add__(self, other: "LabeledOperator") -> "LabeledOperator":
        other = _aligned(other, self.spaces)
        return LabeledOperator(self.spaces, self.matrix + other.matrix)

    def __sub__(self, other: "LabeledOperator") -> "LabeledOperator":
        other = _aligned(other, self.spaces)
        return LabeledOperator(self.spaces, self.matrix - other.matrix)

    def __matmul__(self, other: "LabeledOperator") -> "LabeledOperator":
        other = _aligned(other, self.spaces)
        return LabeledOperator(self.spaces, self.matrix @ other.matrix)

    def is_hermitian(self, rtol: float = HERMITIAN_RTOL) -> bool:
        return is_hermitian(self.matrix, rtol)

    def is_psd(self, rtol: float = PSD_RTOL) -> bool:
        return is_psd(self.matrix, rtol)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(_herm_part(self.matrix))[0])

    def tensor(self) -> np.ndarray:
        """Matrix reshaped to a 2k-index tensor (row indices, then column indices)."""
        return self.matrix.reshape(self.dims + self.dims)

    def __repr__(self):
        return f"LabeledOperator(spaces={list(self.spaces)})"


class LabeledVector:
    """Complex vector on ``spaces``; immutable after construction."""

    __slots__ = ("spaces", "entries")

    def __init__(self, spaces: Sequence[SpaceLabel], entries):
        spaces = tuple(spaces)
        _check_unique(spaces)
        vec = np.array(entries, dtype=complex).reshape(-1)
        n = int(np.prod(_dims(spaces), dtype=np.int64)) if spaces else 1
        if vec.shape != (n,):
            raise StructureError(f"vector length {vec.shape[0]} does not match spaces {spaces} (expected {n})")
        vec.setflags(write=False)
        object.__setattr__(self, "spaces", spaces)
        object.__setattr__(self, "entries", vec)

    def __setattr__(self, key, value):
        raise AttributeError("LabeledVector is immutable")

    @property
    def dims(self) -> tuple[int, ...]:
        return _dims(self.spaces)

    def dyad(self) -> LabeledOperator:
        return LabeledOperator(self.spaces, np.outer(self.entries, self.entries.conj()))

    def __repr__(self):
        return f"LabeledVector(spaces={list(self.spaces)})"


def _herm_part(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.conj().T)


def is_hermitian(m: np.ndarray, rtol: float = HERMITIAN_RTOL) -> bool:
    scale = max(np.abs(m).max(initial=0.0), 1.0)
    return bool(np.abs(m - m.conj().T).max(initial=0.0) <= rtol * scale)


def is_psd(m: np.ndarray, rtol: float = PSD_RTOL) -> bool:
    """Hermitian with min eigenvalue >= -rtol * max(|lambda_max|, 1)."""
    if not is_hermitian(m):
        return False
    ev = np.linalg.eigvalsh(_herm_part(m))
    scale = max(abs(ev[-1]), 1.0) if ev.size else 1.0
    return bool(ev.size == 0 or ev[0] >= -rtol * scale)


def identity(spaces: Sequence[SpaceLabel]) -> LabeledOperator:
    n = int(np.prod(_dims(spaces), dtype=np.int64)) if spaces else 1
    return LabeledOperator(spaces, np.eye(n))


def _aligned(op: LabeledOperator, spaces: Sequence[SpaceLabel]) -> LabeledOperator:
    if op.spaces == tuple(spaces):
        return op
    if set(op.spaces) != set(spaces):
        raise StructureError(f"operators live on different spaces: {op.spaces} vs {tuple(spaces)}")
    return permute_systems(op, spaces)


def tensor_product(a: LabeledOperator, b: LabeledOperator) -> LabeledOperator:
    """Kronecker product; the result lives on ``a.spaces + b.spaces``."""
    shared = set(a.names) & set(b.names)
    if shared:
        raise StructureError(f"label collision in tensor product: {sorted(shared)}")
    return LabeledOperator(a.spaces + b.spaces, np.kron(a.matrix, b.matrix))


def tensor_vectors(a: LabeledVector, b: LabeledVector) -> LabeledVector:
    shared = {s.name for s in a.spaces} & {s.name for s in b.spaces}
    if shared:
        raise StructureError(f"label collision in tensor product: {sorted(shared)}")
    return LabeledVector(a.spaces + b.spaces, np.kron(a.entries, b.entries))


def partial_trace(a: LabeledOperator, traced: Iterable) -> LabeledOperator:
    """Trace out the listed spaces; the remaining ones keep their order."""
    pos = _resolve(a.spaces, traced)
    k = len(a.spaces)
    keep = [i for i in range(k) if i not in pos]
    t = a.tensor()
    # einsum with explicit subscripts; contracted row/col pairs share a letter
    letters = [chr(ord("a") + i) for i in range(2 * k)]
    rows = letters[:k]
    cols = [letters[k + i] if i in keep else letters[i] for i in range(k)]
    out = [rows[i] for i in keep] + [cols[i] for i in keep]
    res = np.einsum("".join(rows + cols) + "->" + "".join(out), t)
    spaces = tuple(a.spaces[i] for i in keep)
    n = int(np.prod(_dims(spaces), dtype=np.int64)) if spaces else 1
    return LabeledOperator(spaces, res.reshape(n, n))


def partial_transpose(a: LabeledOperator, transposed: Iterable) -> LabeledOperator:
    pos = _resolve(a.spaces, transposed)
    k = len(a.spaces)
    axes = list(range(2 * k))
    for p in pos:
        axes[p], axes[k + p] = axes[k + p], axes[p]
    return LabeledOperator(a.spaces, a.tensor().transpose(axes).reshape(a.dim, a.dim))


def permute_systems(a: LabeledOperator, new_order: Sequence) -> LabeledOperator:
    """Reorder the tensor factors; ``new_order`` lists labels (or names) of ``a``."""
    if len(new_order) != len(a.spaces):
        raise StructureError(f"new order {list(new_order)} is not a permutation of {a.names}")
    perm = _resolve(a.spaces, new_order)
    k = len(a.spaces)
    if perm == list(range(k)):
        return a
    t = a.tensor().transpose(perm + [k + p for p in perm])
    return LabeledOperator(tuple(a.spaces[p] for p in perm), t.reshape(a.dim, a.dim))


def permute_vector(v: LabeledVector, new_order: Sequence) -> LabeledVector:
    if len(new_order) != len(v.spaces):
        raise StructureError("new order is not a permutation")
    perm = _resolve(v.spaces, new_order)
    t = v.entries.reshape(v.dims).transpose(perm)
    return LabeledVector(tuple(v.spaces[p] for p in perm), t.reshape(-1))


def embed(a: LabeledOperator, spaces: Sequence[SpaceLabel]) -> LabeledOperator:
    """Pad ``a`` with identities so that it lives on ``spaces`` (in that order)."""
    missing = [s for s in spaces if s.name not in a.names]
    full = tensor_product(a, identity(missing)) if missing else a
    return permute_systems(full, spaces)


def hermitian_eig(a: LabeledOperator, rtol: float = HERMITIAN_RTOL):
    """Eigen-decomposition of a Hermitian operator.

    Returns:
        (eigenvalues in descending order, list of LabeledVector eigenvectors).
    """
    if not a.is_hermitian(rtol):
        raise ValidationError("hermitian_eig needs a Hermitian operator")
    w, v = np.linalg.eigh(_herm_part(a.matrix))
    order = np.arange(len(w))[::-1]
    return w[order], [LabeledVector(a.spaces, v[:, i]) for i in order]
