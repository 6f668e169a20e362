"""Modeling layer and solver front-end for Hermitian semidefinite programs.

Variables are real scalars collected in one vector ``x``. Matrix variables are
affine images of ``x`` (a Hermitian ``n x n`` variable uses ``n**2`` real
parameters). Every expression is an :class:`Affine` object holding
``vec(E(x)) = const + coef @ x`` with row-major vectorisation.

Two backends are available behind :func:`solve_sdp`:

* ``"ipm"`` (default): the interior-point method in :mod:`combqfi.ipm`,
  working on Hermitian blocks directly;
* ``"clarabel"``: the Clarabel conic solver on the realified problem.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import StructureError
from .ipm import ConeProgram, solve_cone_program

DEFAULT_GAP_TOL = 1e-8
DEFAULT_FEAS_TOL = 1e-8


def _csr(m, shape=None):
    return sp.csr_matrix(m, shape=shape, dtype=complex)


class Affine:
    """Complex matrix-valued affine function of the real variable vector."""

    __array_priority__ = 100

    def __init__(self, shape, const, coef):
        self.shape = tuple(shape)
        size = self.shape[0] * self.shape[1]
        self.const = np.asarray(const, dtype=complex).reshape(size)
        self.coef = _csr(coef)
        if self.coef.shape[0] != size:
            raise StructureError("coefficient rows do not match the expression size")

    @property
    def nvars(self):
        return self.coef.shape[1]

    @classmethod
    def constant(cls, m, nvars=0):
        m = np.atleast_2d(np.asarray(m, dtype=complex))
        return cls(m.shape, m.reshape(-1), sp.csr_matrix((m.size, nvars), dtype=complex))

    def _widen(self, n):
        if self.nvars == n:
            return self.coef
        c = self.coef
        return sp.csr_matrix((c.data, c.indices, c.indptr), shape=(c.shape[0], n))

    def _lift(self, other):
        if isinstance(other, Affine):
            return other
        other = np.asarray(other, dtype=complex)
        if other.ndim == 0:
            other = other * np.ones(self.shape)
        return Affine.constant(other)

    def __add__(self, other):
        other = self._lift(other)
        if other.shape != self.shape:
            raise StructureError(f"shape mismatch {self.shape} vs {other.shape}")
        n = max(self.nvars, other.nvars)
        return Affine(self.shape, self.const + other.const, self._widen(n) + other._widen(n))

    __radd__ = __add__

    def __neg__(self):
        return Affine(self.shape, -self.const, -self.coef)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Affine):
            raise StructureError("products of two affine expressions are not affine")
        arr = np.asarray(other)
        if arr.ndim == 0:
            return Affine(self.shape, self.const * arr, self.coef * complex(arr))
        if self.shape != (1, 1):
            raise StructureError("elementwise products are not supported; use matmul")
        m = np.atleast_2d(arr.astype(complex))
        v = _csr(m.reshape(-1, 1))
        return Affine(m.shape, m.reshape(-1) * self.const[0], v @ self.coef)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / c)

    def linear_map(self, L, shape):
        """Apply a sparse linear operator on the row-major vectorisation."""
        L = _csr(L)
        return Affine(shape, L @ self.const, L @ self.coef)

    def index_map(self, src, shape, weights=None):
        """out_vec[i] = weights[i] * in_vec[src[i]] (src[i] = -1 means zero)."""
        src = np.asarray(src).reshape(-1)
        rows = np.flatnonzero(src >= 0)
        w = np.ones(rows.size) if weights is None else np.asarray(weights).reshape(-1)[rows]
        L = sp.csr_matrix((w, (rows, src[rows])), shape=(src.size, self.const.size))
        return self.linear_map(L, shape)

    @property
    def T(self):
        r, c = self.shape
        src = np.arange(r * c).reshape(r, c).T
        return self.index_map(src, (c, r))

    def conj(self):
        return Affine(self.shape, self.const.conj(), self.coef.conj())

    @property
    def H(self):
        return self.T.conj()

    def __matmul__(self, other):
        other = np.atleast_2d(np.asarray(other, dtype=complex))
        r, c = self.shape
        L = sp.kron(sp.identity(r, format="csr"), _csr(other.T))
        return self.linear_map(L, (r, other.shape[1]))

    def __rmatmul__(self, other):
        other = np.atleast_2d(np.asarray(other, dtype=complex))
        r, c = self.shape
        L = sp.kron(_csr(other), sp.identity(c, format="csr"))
        return self.linear_map(L, (other.shape[0], c))

    def trace(self):
        r, c = self.shape
        if r != c:
            raise StructureError("trace of a non-square expression")
        L = sp.csr_matrix((np.ones(r), (np.zeros(r, int), np.arange(r) * (r + 1))), shape=(1, r * r))
        return self.linear_map(L, (1, 1))

    def real(self):
        """Real part (as a complex-typed expression)."""
        return Affine(self.shape, self.const.real, _csr(self.coef.real))

    def imag(self):
        return Affine(self.shape, self.const.imag, _csr(self.coef.imag))

    def value(self, x):
        x = np.asarray(x, dtype=float)
        v = self.const + self._widen(x.size) @ x
        return v.reshape(self.shape)

    def is_hermitian(self, tol=1e-12):
        r, c = self.shape
        if r != c:
            return False
        d = self - self.H
        scale = max(1.0, np.abs(self.const).max(initial=0), abs(self.coef).max() if self.coef.nnz else 0)
        dmax = max(np.abs(d.const).max(initial=0), abs(d.coef).max() if d.coef.nnz else 0)
        return dmax <= tol * scale


def as_affine(e) -> Affine:
    return e if isinstance(e, Affine) else Affine.constant(e)


def kron(a, b) -> Affine:
    """Kronecker product where at most one factor is an :class:`Affine`."""
    if isinstance(a, Affine) and isinstance(b, Affine):
        raise StructureError("kron of two affine expressions is not affine")
    if not isinstance(a, Affine) and not isinstance(b, Affine):
        return Affine.constant(np.kron(a, b))
    if isinstance(a, Affine):
        x, C, left = a, np.atleast_2d(np.asarray(b, dtype=complex)), False
    else:
        x, C, left = b, np.atleast_2d(np.asarray(a, dtype=complex)), True
    p, q = C.shape
    m, n = x.shape
    ci, cj = np.nonzero(C)
    cv = C[ci, cj]
    k, l = np.meshgrid(np.arange(m), np.arange(n), indexing="ij")
    k, l = k.reshape(-1), l.reshape(-1)
    src = np.repeat((k * n + l)[None, :], len(ci), axis=0)
    if left:
        out = (ci[:, None] * m + k[None, :]) * (q * n) + (cj[:, None] * n + l[None, :])
    else:
        out = (k[None, :] * p + ci[:, None]) * (n * q) + (l[None, :] * q + cj[:, None])
    vals = np.repeat(cv[:, None], m * n, axis=1)
    L = sp.csr_matrix((vals.reshape(-1), (out.reshape(-1), src.reshape(-1))), shape=(p * m * q * n, m * n))
    return x.linear_map(L, (p * m, q * n))


def _tensor_index(dims):
    return np.arange(int(np.prod(dims)) ** 2).reshape(tuple(dims) * 2)


def partial_trace(x: Affine, dims: Sequence[int], traced: Sequence[int]) -> Affine:
    """Trace out the subsystems at positions ``traced`` of a square expression on ``dims``."""
    dims = tuple(dims)
    k = len(dims)
    D = int(np.prod(dims))
    if x.shape != (D, D):
        raise StructureError(f"expression shape {x.shape} does not match dims {dims}")
    traced = sorted(set(traced))
    keep = [i for i in range(k) if i not in traced]
    dk = int(np.prod([dims[i] for i in keep])) if keep else 1
    dt = int(np.prod([dims[i] for i in traced])) if traced else 1
    idx = _tensor_index(dims)
    perm = keep + traced
    idx = idx.transpose(perm + [k + i for i in perm]).reshape(dk, dt, dk, dt)
    src = np.einsum("atbt->abt", idx).reshape(dk * dk, dt)
    rows = np.repeat(np.arange(dk * dk), dt)
    L = sp.csr_matrix((np.ones(src.size), (rows, src.reshape(-1))), shape=(dk * dk, D * D))
    return x.linear_map(L, (dk, dk))


def partial_transpose(x: Affine, dims: Sequence[int], transposed: Sequence[int]) -> Affine:
    dims = tuple(dims)
    k = len(dims)
    axes = list(range(2 * k))
    for p in transposed:
        axes[p], axes[k + p] = axes[k + p], axes[p]
    src = _tensor_index(dims).transpose(axes)
    return x.index_map(src, x.shape)


def permute(x: Affine, dims: Sequence[int], perm: Sequence[int]) -> Affine:
    """Reorder subsystems: new position i holds old subsystem perm[i]."""
    dims = tuple(dims)
    k = len(dims)
    perm = list(perm)
    src = _tensor_index(dims).transpose(perm + [k + p for p in perm])
    return x.index_map(src, x.shape)


def bmat(blocks) -> Affine:
    """Assemble a block matrix from Affine / ndarray / None entries."""
    nrow = len(blocks)
    ncol = len(blocks[0])
    heights = [None] * nrow
    widths = [None] * ncol
    for i, row in enumerate(blocks):
        if len(row) != ncol:
            raise StructureError("ragged block matrix")
        for j, blk in enumerate(row):
            if blk is None:
                continue
            shp = blk.shape if isinstance(blk, Affine) else np.atleast_2d(blk).shape
            if heights[i] not in (None, shp[0]) or widths[j] not in (None, shp[1]):
                raise StructureError("inconsistent block sizes")
            heights[i], widths[j] = shp[0], shp[1]
    if None in heights or None in widths:
        raise StructureError("every block row and column needs at least one explicit block")
    R, C = sum(heights), sum(widths)
    nv = max([b.nvars for row in blocks for b in row if isinstance(b, Affine)] + [0])
    const = np.zeros(R * C, dtype=complex)
    mats = []
    r0 = 0
    for i, row in enumerate(blocks):
        c0 = 0
        for j, blk in enumerate(row):
            if blk is not None:
                e = as_affine(blk)
                h, w = e.shape
                rr, cc = np.meshgrid(np.arange(h) + r0, np.arange(w) + c0, indexing="ij")
                dest = (rr * C + cc).reshape(-1)
                const[dest] = e.const
                P = sp.csr_matrix((np.ones(h * w), (dest, np.arange(h * w))), shape=(R * C, h * w))
                mats.append(P @ e._widen(nv))
            c0 += widths[j]
        r0 += heights[i]
    coef = sum(mats[1:], mats[0]) if mats else sp.csr_matrix((R * C, nv), dtype=complex)
    return Affine((R, C), const, coef)


def hermitian_basis(n: int):
    """Real basis of n x n Hermitian matrices: diagonal units, then symmetric and antisymmetric pairs."""
    rows, cols, vals = [], [], []
    p = 0
    for i in range(n):
        rows.append(i * n + i)
        cols.append(p)
        vals.append(1.0)
        p += 1
    for i in range(n):
        for j in range(i + 1, n):
            rows += [i * n + j, j * n + i]
            cols += [p, p]
            vals += [1.0, 1.0]
            p += 1
            rows += [i * n + j, j * n + i]
            cols += [p, p]
            vals += [1j, -1j]
            p += 1
    return sp.csr_matrix((vals, (rows, cols)), shape=(n * n, n * n), dtype=complex)


def traceless_hermitian_basis(n: int):
    """Real basis of traceless n x n Hermitian matrices (n**2 - 1 elements), as dense arrays."""
    out = []
    for i in range(n - 1):
        m = np.zeros((n, n), dtype=complex)
        m[i, i] = 1.0
        m[i + 1, i + 1] = -1.0
        out.append(m)
    full = hermitian_basis(n).toarray()
    for p in range(n, n * n):
        out.append(full[:, p].reshape(n, n))
    return out


@dataclass
class _Constraint:
    kind: str  # "psd" | "eq"
    expr: Affine
    name: str


class SdpProblem:
    """A linear SDP over real variables with Hermitian PSD and affine equality constraints."""

    def __init__(self):
        self.nvars = 0
        self.var_names: list[tuple[str, int, int]] = []
        self.objective: Affine | None = None
        self.constraints: list[_Constraint] = []
        self.sense = 1.0

    def _new(self, count, name):
        start = self.nvars
        self.nvars += count
        self.var_names.append((name, start, count))
        return start

    def variables(self, count: int, name="x") -> Affine:
        """A column of ``count`` free real scalars."""
        start = self._new(count, name)
        coef = sp.csr_matrix((np.ones(count), (np.arange(count), start + np.arange(count))),
                             shape=(count, self.nvars), dtype=complex)
        return Affine((count, 1), np.zeros(count), coef)

    def scalar(self, name="t") -> Affine:
        return self.variables(1, name)

    def hermitian(self, n: int, name="X") -> Affine:
        start = self._new(n * n, name)
        B = hermitian_basis(n).tocoo()
        coef = sp.csr_matrix((B.data, (B.row, B.col + start)), shape=(n * n, self.nvars), dtype=complex)
        return Affine((n, n), np.zeros(n * n), coef)

    def span(self, basis: Sequence[np.ndarray], name="X") -> Affine:
        """Real linear combination of the given constant matrices."""
        start = self._new(len(basis), name)
        shape = np.shape(basis[0])
        cols = []
        for b in basis:
            cols.append(_csr(np.asarray(b, dtype=complex).reshape(-1, 1)))
        M = sp.hstack(cols).tocoo()
        coef = sp.csr_matrix((M.data, (M.row, M.col + start)), shape=(M.shape[0], self.nvars), dtype=complex)
        return Affine(shape, np.zeros(M.shape[0]), coef)

    def span_sparse(self, coef, shape, name="X") -> Affine:
        """Real combinations of the columns of a sparse (size x count) matrix."""
        coef = sp.coo_matrix(coef)
        count = coef.shape[1]
        start = self._new(count, name)
        c = sp.csr_matrix((coef.data.astype(complex), (coef.row, coef.col + start)),
                          shape=(coef.shape[0], self.nvars), dtype=complex)
        return Affine(shape, np.zeros(coef.shape[0]), c)

    def minimize(self, expr):
        e = as_affine(expr)
        if e.shape != (1, 1):
            raise StructureError("objective must be scalar")
        if e.coef.nnz and abs(e.coef.imag).max() > 0:
            raise StructureError("objective must be real")
        self.objective = e
        self.sense = 1.0

    def maximize(self, expr):
        self.minimize(-as_affine(expr))
        self.sense = -1.0

    def add_psd(self, expr, name=None) -> int:
        e = as_affine(expr)
        if not e.is_hermitian():
            raise StructureError("PSD constraint needs a Hermitian expression")
        self.constraints.append(_Constraint("psd", e, name or f"psd{len(self.constraints)}"))
        return len(self.constraints) - 1

    def add_nonneg(self, expr, name=None) -> int:
        e = as_affine(expr)
        if e.shape != (1, 1):
            raise StructureError("nonnegativity applies to scalar expressions")
        return self.add_psd(e.real(), name)

    def add_eq(self, expr, name=None) -> int:
        e = as_affine(expr)
        self.constraints.append(_Constraint("eq", e, name or f"eq{len(self.constraints)}"))
        return len(self.constraints) - 1

    # -- standard form -------------------------------------------------
    def standard_form(self):
        """Return (c, c0, A, b, psd_blocks, eq_info) with psd blocks as (F0, F) pairs."""
        n = self.nvars
        obj = self.objective if self.objective is not None else Affine.constant(0.0)
        c = np.real(obj._widen(n).toarray().reshape(-1))
        c0 = float(np.real(obj.const[0]))
        rows, rhs = [], []
        eq_rows = []
        for ci, con in enumerate(self.constraints):
            if con.kind != "eq":
                continue
            e = con.expr
            r, cc = e.shape
            herm = r == cc and e.is_hermitian()
            if herm:
                iu, ju = np.triu_indices(r)
                sel = iu * r + ju
                parts = [(sel, np.real), (sel[iu != ju], np.imag)]
            else:
                sel = np.arange(r * cc)
                parts = [(sel, np.real), (sel, np.imag)]
            coef = e._widen(n).tocsr()
            count = 0
            for idx, fn in parts:
                if idx.size == 0:
                    continue
                blockc = fn(coef[idx].toarray())
                blockb = -fn(e.const[idx])
                keep = (np.abs(blockc).max(axis=1) > 0) | (np.abs(blockb) > 0)
                rows.append(blockc[keep])
                rhs.append(blockb[keep])
                count += int(keep.sum())
            eq_rows.append((ci, count))
        A = np.vstack(rows) if rows else np.zeros((0, n))
        b = np.concatenate(rhs) if rhs else np.zeros(0)
        blocks = []
        for con in self.constraints:
            if con.kind == "psd":
                e = con.expr
                blocks.append((e.const.reshape(e.shape), e._widen(n).tocsc()))
        return c, c0, A, b, blocks


@dataclass
class SdpSolution:
    """Result of :func:`solve_sdp`."""

    status: str
    x: np.ndarray
    objective: float
    dual_objective: float
    gap: float
    residual: float
    iterations: int = 0
    backend: str = "ipm"
    duals: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def value(self, expr) -> np.ndarray:
        e = as_affine(expr)
        v = e.value(self.x)
        return v

    def scalar(self, expr) -> float:
        return float(np.real(self.value(expr)[0, 0]))

    def dual(self, handle: int) -> np.ndarray:
        return self.duals[handle]


def _reduce_equalities(A, b, tol=1e-10):
    """Drop linearly dependent rows; returns (A, b, consistent)."""
    import scipy.linalg as sla

    if A.shape[0] == 0:
        return A, b, True
    _, R, piv = sla.qr(A.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > tol * max(d[0], 1.0))) if d.size else 0
    if rank == A.shape[0]:
        return A, b, True
    keep = np.sort(piv[:rank])
    Ar, br = A[keep], b[keep]
    sol, *_ = np.linalg.lstsq(Ar, br, rcond=None)
    consistent = np.abs(A @ sol - b).max() <= 1e-8 * max(1.0, np.abs(b).max())
    return Ar, br, consistent


def _residual(prob_blocks, A, b, x):
    res = 0.0
    if A.shape[0]:
        res = float(np.abs(A @ x - b).max() / max(1.0, np.abs(b).max()))
    for F0, F in prob_blocks:
        m = F0.shape[0]
        S = F0 + (F @ x).reshape(m, m)
        ev = np.linalg.eigvalsh(0.5 * (S + S.conj().T))[0]
        scale = max(1.0, np.abs(F0).max(initial=0))
        res = max(res, max(0.0, -ev) / scale)
    return res


def solve_sdp(problem: SdpProblem, gap_tol: float = DEFAULT_GAP_TOL, feas_tol: float = DEFAULT_FEAS_TOL,
              backend: str = "ipm", max_iters: int = 150, log=None) -> SdpSolution:
    """Solve ``problem``.

    ``optimal`` is reported only when the relative primal-dual gap
    ``|p - d| / max(1, |p|)`` is at most ``gap_tol`` and the constraint
    residual (equalities and PSD violation, relative to the data scale) is at
    most ``feas_tol``.
    """
    c, c0, A, b, blocks = problem.standard_form()
    A, b, consistent = _reduce_equalities(A, b)
    n = problem.nvars
    if not consistent:
        return SdpSolution("infeasible", np.full(n, np.nan), np.nan, np.nan, np.inf, np.inf, 0, backend)
    if backend == "ipm":
        sol = _solve_ipm(c, A, b, blocks, gap_tol, feas_tol, max_iters, log)
    elif backend == "clarabel":
        sol = _solve_clarabel(c, A, b, blocks, gap_tol, feas_tol, max_iters)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    status, x, pobj, dobj, iters, zs = sol
    if status == "optimal":
        pobj += c0
        dobj += c0
        gap = abs(pobj - dobj)
        residual = _residual(blocks, A, b, x)
        if gap > gap_tol * max(1.0, abs(pobj)) or residual > feas_tol:
            status = "numerical-failure"
    else:
        gap = np.inf
        residual = np.inf
        pobj = dobj = np.nan
    pobj, dobj = problem.sense * pobj, problem.sense * dobj
    duals = {}
    if zs is not None:
        psd_handles = [i for i, con in enumerate(problem.constraints) if con.kind == "psd"]
        duals = dict(zip(psd_handles, zs))
    return SdpSolution(status, x, float(pobj), float(dobj), float(gap), float(residual), iters, backend, duals)


def _solve_ipm(c, A, b, blocks, gap_tol, feas_tol, max_iters, log):
    G = [(-F).tocsc() for _, F in blocks]
    h = [F0 for F0, _ in blocks]
    if not G:
        # a trivially satisfied 1x1 block keeps the embedding well defined
        G = [sp.csc_matrix((1, c.size), dtype=complex)]
        h = [np.ones((1, 1), dtype=complex)]
    prog = ConeProgram(c=c, A=A, b=b, G=G, h=h)
    tol = 0.1 * min(gap_tol, feas_tol)
    res = solve_cone_program(prog, feastol=tol, abstol=tol, reltol=tol, max_iters=max_iters, log=log,
                             pres_weight=1e-3)
    status = res.status
    if status == "numerical-failure" and np.isfinite(res.primal_objective):
        # accept the best iterate on gap and dual residual; solve_sdp then checks
        # the true primal residual (PSD violation of h - Gx), not the drifted s
        relgap = res.gap / max(1.0, abs(res.primal_objective))
        if res.pres <= 1e3 * feas_tol and res.dres <= feas_tol and relgap <= gap_tol:
            status = "optimal"
    return status, res.x, res.primal_objective, res.dual_objective, res.iterations, res.z


# -- realification --------------------------------------------------------


def realify_matrix(m: np.ndarray) -> np.ndarray:
    """H = X + iY  ->  [[X, -Y], [Y, X]]."""
    X, Y = m.real, m.imag
    return np.block([[X, -Y], [Y, X]])


def realify(expr: Affine) -> Affine:
    """Real symmetric embedding of a Hermitian affine expression."""
    if not expr.is_hermitian():
        raise StructureError("realify needs a Hermitian expression")
    n = expr.shape[0]
    idx = np.arange(n * n).reshape(n, n)
    # out[(I,J)] = sign * part(in[src])
    src = np.block([[idx, idx], [idx, idx]]).reshape(-1)
    re_w = np.block([[np.ones((n, n)), np.zeros((n, n))], [np.zeros((n, n)), np.ones((n, n))]]).reshape(-1)
    im_w = np.block([[np.zeros((n, n)), -np.ones((n, n))], [np.ones((n, n)), np.zeros((n, n))]]).reshape(-1)
    re = expr.real().index_map(src, (2 * n, 2 * n), re_w)
    im = expr.imag().index_map(src, (2 * n, 2 * n), im_w)
    return re + im


def _svec_index(n):
    """Clarabel ordering: upper triangle, column-major; off-diagonals scaled by sqrt(2)."""
    rows, cols = [], []
    for j in range(n):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
    rows, cols = np.array(rows), np.array(cols)
    scale = np.where(rows == cols, 1.0, np.sqrt(2.0))
    return rows, cols, scale


def _realified_blocks(blocks):
    out = []
    for F0, F in blocks:
        m = F0.shape[0]
        R0 = realify_matrix(F0)
        Fc = F.tocsc()
        cols = []
        # realify each column: vec(realify(Fi)) is linear in (Re Fi, Im Fi)
        Fr = Fc.real.tocsr()
        Fi = Fc.imag.tocsr()
        idx = np.arange(m * m).reshape(m, m)
        top = np.hstack([idx, idx])
        bot = np.hstack([idx, idx])
        src = np.vstack([top, bot]).reshape(-1)
        wr = np.block([[np.ones((m, m)), np.zeros((m, m))], [np.zeros((m, m)), np.ones((m, m))]]).reshape(-1)
        wi = np.block([[np.zeros((m, m)), -np.ones((m, m))], [np.ones((m, m)), np.zeros((m, m))]]).reshape(-1)
        Pr = sp.csr_matrix((wr, (np.arange(4 * m * m), src)), shape=(4 * m * m, m * m))
        Pi = sp.csr_matrix((wi, (np.arange(4 * m * m), src)), shape=(4 * m * m, m * m))
        Rcoef = (Pr @ Fr + Pi @ Fi).tocsr()
        out.append((R0, Rcoef))
        del cols
    return out


def _solve_clarabel(c, A, b, blocks, gap_tol, feas_tol, max_iters):
    import clarabel

    n = c.size
    rblocks = _realified_blocks(blocks)
    Arows = [sp.csr_matrix(A)] if A.shape[0] else []
    brows = [b] if A.shape[0] else []
    cones = [clarabel.ZeroConeT(A.shape[0])] if A.shape[0] else []
    for R0, Rcoef in rblocks:
        m2 = R0.shape[0]
        r, cc, sc = _svec_index(m2)
        sel = r * m2 + cc
        Arows.append(sp.csr_matrix(-(sp.diags(sc) @ Rcoef[sel])).real)
        brows.append(sc * R0[r, cc])
        cones.append(clarabel.PSDTriangleConeT(m2))
    if not Arows:
        Arows.append(sp.csr_matrix((1, n)))
        brows.append(np.ones(1))
        cones.append(clarabel.NonnegativeConeT(1))
    Afull = sp.vstack(Arows).tocsc()
    bfull = np.concatenate(brows)
    P = sp.csc_matrix((n, n))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iters
    # Clarabel measures gap and feasibility differently; ask for more and re-check
    settings.tol_gap_abs = 1e-2 * gap_tol
    settings.tol_gap_rel = 1e-2 * gap_tol
    settings.tol_feas = 1e-2 * feas_tol
    solver = clarabel.DefaultSolver(P, c, Afull, bfull, cones, settings)
    res = solver.solve()
    st = str(res.status)
    x = np.array(res.x)
    if st.endswith("Solved"):
        # AlmostSolved included: solve_sdp re-checks gap and residual itself
        status = "optimal"
    elif "PrimalInfeasible" in st:
        status = "infeasible"
    elif "DualInfeasible" in st:
        status = "unbounded"
    else:
        status = "numerical-failure"
    zs = []
    zvec = np.array(res.z)
    off = A.shape[0]
    for (R0, _), (F0, _) in zip(rblocks, blocks):
        m2 = R0.shape[0]
        r, cc, sc = _svec_index(m2)
        k = r.size
        Z = np.zeros((m2, m2))
        Z[r, cc] = zvec[off:off + k] / sc
        Z[cc, r] = zvec[off:off + k] / sc
        off += k
        m = m2 // 2
        # complex dual from the realified one: average the two copies
        Zc = 0.5 * ((Z[:m, :m] + Z[m:, m:]) + 1j * (Z[m:, :m] - Z[:m, m:]))
        zs.append(Zc)
    return status, x, float(res.obj_val), float(res.obj_val_dual), int(res.iterations), zs


# -- text dump -----------------------------------------------------------


def dump_problem(problem: SdpProblem, path) -> None:
    """Write the realified standard form as JSON: minimize c.x s.t. A x = b, F0 + sum x_i F_i PSD."""
    c, c0, A, b, blocks = problem.standard_form()
    rb = _realified_blocks(blocks)
    doc = {
        "format": "combqfi-sdp",
        "version": 1,
        "sense": "minimize",
        "nvars": int(c.size),
        "objective": {"c": c.tolist(), "offset": c0},
        "equalities": {"A": A.tolist(), "b": b.tolist()},
        "psd_blocks": [
            {
                "size": int(R0.shape[0]),
                "F0": R0.tolist(),
                "F": [Rcoef[:, i].toarray().real.reshape(R0.shape).tolist() for i in range(c.size)],
            }
            for R0, Rcoef in rb
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
