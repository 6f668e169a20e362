"""Quantum combs: tooth structures, validation, link product, ensembles.

A comb on teeth (I_1, O_1), ..., (I_N, O_N) is a PSD operator C on
I_1 O_1 ... I_N O_N such that a chain C^(N) = C, C^(N-1), ..., C^(0) = 1 exists
with tr_{O_k} C^(k) = C^(k-1) (x) 1_{I_k}. Inputs or outputs may be empty
(probes start with a tooth that has no input).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConstantRankError, GaugeError, NotPSDError, StructureError, ValidationError
from .tensor import (
    LabeledOperator,
    LabeledVector,
    SpaceLabel,
    identity,
    is_hermitian,
    partial_trace,
    partial_transpose,
    permute_systems,
    tensor_product,
)


@dataclass(frozen=True)
class ToothStructure:
    """Ordered teeth; each tooth is a pair (inputs, outputs) of space tuples."""

    teeth: tuple

    def __post_init__(self):
        teeth = tuple((tuple(i), tuple(o)) for i, o in self.teeth)
        names = [s.name for i, o in teeth for s in i + o]
        if len(set(names)) != len(names):
            raise StructureError(f"tooth labels must be distinct, got {names}")
        if not teeth:
            raise StructureError("a comb needs at least one tooth")
        object.__setattr__(self, "teeth", teeth)

    @classmethod
    def canonical(cls, N: int, dims=2) -> "ToothStructure":
        """Spaces "1".."2N"; ``dims`` is an int or a list of 2N dimensions."""
        if N < 1:
            raise StructureError("N must be at least 1")
        if isinstance(dims, (int, np.integer)):
            dims = [int(dims)] * (2 * N)
        if len(dims) != 2 * N:
            raise StructureError("need one dimension per space")
        sp = [SpaceLabel(str(j + 1), dims[j]) for j in range(2 * N)]
        return cls(tuple(((sp[2 * k],), (sp[2 * k + 1],)) for k in range(N)))

    @property
    def N(self) -> int:
        return len(self.teeth)

    @property
    def spaces(self) -> tuple[SpaceLabel, ...]:
        return tuple(s for i, o in self.teeth for s in i + o)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(s.dim for s in self.spaces)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    def inputs(self, k: int) -> tuple[SpaceLabel, ...]:
        return self.teeth[k][0]

    def outputs(self, k: int) -> tuple[SpaceLabel, ...]:
        return self.teeth[k][1]

    def d_in(self, k: int) -> int:
        return int(np.prod([s.dim for s in self.inputs(k)])) if self.inputs(k) else 1

    def d_out(self, k: int) -> int:
        return int(np.prod([s.dim for s in self.outputs(k)])) if self.outputs(k) else 1

    def prefix(self, k: int) -> "ToothStructure":
        """The first k teeth."""
        return ToothStructure(self.teeth[:k])

    def probe(self, aux: Optional[SpaceLabel] = None) -> "ToothStructure":
        """Complementary structure of testers: ((), I_1), (O_1, I_2), ..., (O_{N-1}, I_N [+ aux])."""
        teeth = [((), self.inputs(0))]
        for k in range(1, self.N):
            teeth.append((self.outputs(k - 1), self.inputs(k)))
        if aux is not None:
            i, o = teeth[-1]
            teeth[-1] = (i, o + (aux,))
        return ToothStructure(tuple(teeth))


@dataclass(frozen=True)
class Comb:
    op: LabeledOperator
    structure: ToothStructure


@dataclass
class ValidationReport:
    """Outcome of :func:`validate_comb`.

    ``residuals[k]`` is the spectral-norm violation of the constraint of tooth
    k+1, and ``min_eigenvalues[k]`` the smallest eigenvalue of C^(k+1).
    """

    passed: bool
    tol: float
    residuals: list
    min_eigenvalues: list
    psd: bool
    hermitian: bool
    messages: list = field(default_factory=list)

    @property
    def max_residual(self) -> float:
        return max(self.residuals) if self.residuals else 0.0

    def summary(self) -> str:
        lines = [f"comb validation: {'PASS' if self.passed else 'FAIL'} (tol {self.tol:g})"]
        for k, (r, e) in enumerate(zip(self.residuals, self.min_eigenvalues), start=1):
            lines.append(f"  tooth {k}: residual {r:.3e}  min eigenvalue of C^({k}) {e:.3e}")
        lines += [f"  {m}" for m in self.messages]
        return "\n".join(lines)


def _aligned_to(op: LabeledOperator, spaces) -> LabeledOperator:
    if set(op.names) != {s.name for s in spaces}:
        raise StructureError(f"operator spaces {op.names} do not match structure {[s.name for s in spaces]}")
    return permute_systems(op, list(spaces))


def validate_comb(c: LabeledOperator, s: ToothStructure, tol: float = 1e-8) -> ValidationReport:
    """Check the comb conditions by extracting the chain C^(N-1), ..., C^(1)."""
    c = _aligned_to(c, s.spaces)
    msgs = []
    herm = c.is_hermitian()
    if not herm:
        msgs.append("operator is not Hermitian")
    chain = [c]
    for k in range(s.N - 1, 0, -1):
        cur = chain[0]
        nxt = partial_trace(cur, s.inputs(k) + s.outputs(k)).scaled(1.0 / s.d_in(k))
        chain.insert(0, nxt)
    residuals, mins = [], []
    psd = True
    for k in range(s.N):
        ck = chain[k]
        ev = np.linalg.eigvalsh(0.5 * (ck.matrix + ck.matrix.conj().T))
        lo = float(ev[0]) if ev.size else 0.0
        mins.append(lo)
        if lo < -tol * max(1.0, abs(float(ev[-1]))):
            psd = False
            msgs.append(f"C^({k + 1}) has negative eigenvalue {lo:.3e}")
        marg = partial_trace(ck, s.outputs(k)) if s.outputs(k) else ck
        if k == 0:
            target = identity(s.inputs(0))
        else:
            target = tensor_product(chain[k - 1], identity(s.inputs(k))) if s.inputs(k) else chain[k - 1]
        target = permute_systems(target, list(marg.spaces)) if marg.spaces else target
        diff = marg.matrix - target.matrix
        residuals.append(float(np.linalg.norm(diff, 2)) if diff.size else 0.0)
    bad = [k + 1 for k, r in enumerate(residuals) if not r < tol]
    if bad:
        msgs.append(f"causality constraint violated on teeth {bad}")
    return ValidationReport(herm and psd and not bad, tol, residuals, mins, psd, herm, msgs)


def link_product(e: LabeledOperator, f: LabeledOperator) -> LabeledOperator:
    """E * F = tr_S[(E^{T_S} (x) 1)(1 (x) F)] over the shared spaces S.

    The result lives on E's unshared spaces followed by F's unshared spaces.
    """
    shared = [n for n in e.names if n in f.names]
    for n in shared:
        de = e.spaces[e.names.index(n)].dim
        df = f.spaces[f.names.index(n)].dim
        if de != df:
            raise StructureError(f"shared space {n!r} has dims {de} and {df}")
    ke, kf = len(e.spaces), len(f.spaces)
    letters = iter("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ")
    row = {n: next(letters) for n in e.names}
    col = {n: next(letters) for n in e.names}
    frow, fcol = {}, {}
    for n in f.names:
        if n in row:
            # E[m s'', m' s] F[s'' n, s n']: F's row index pairs with E's row, F's col with E's col
            frow[n], fcol[n] = row[n], col[n]
        else:
            frow[n], fcol[n] = next(letters), next(letters)
    e_sub = "".join(row[n] for n in e.names) + "".join(col[n] for n in e.names)
    f_sub = "".join(frow[n] for n in f.names) + "".join(fcol[n] for n in f.names)
    e_keep = [n for n in e.names if n not in shared]
    f_keep = [n for n in f.names if n not in shared]
    out = "".join(row[n] for n in e_keep) + "".join(frow[n] for n in f_keep)
    out += "".join(col[n] for n in e_keep) + "".join(fcol[n] for n in f_keep)
    res = np.einsum(f"{e_sub},{f_sub}->{out}", e.tensor(), f.tensor())
    spaces = tuple(s for s in e.spaces if s.name in e_keep) + tuple(s for s in f.spaces if s.name in f_keep)
    n = int(np.prod([s.dim for s in spaces])) if spaces else 1
    del ke, kf
    return LabeledOperator(spaces, res.reshape(n, n))


@dataclass(frozen=True)
class EnsembleDecomposition:
    """Vectors |C_i> with optional derivatives; rows of ``vectors`` are the |C_i>."""

    spaces: tuple
    vectors: np.ndarray
    derivatives: Optional[np.ndarray]
    rank: int

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vectors, dtype=complex))
        D = int(np.prod([s.dim for s in self.spaces]))
        if v.shape[1] != D:
            raise StructureError(f"ensemble vectors have length {v.shape[1]}, expected {D}")
        object.__setattr__(self, "vectors", v)
        if self.derivatives is not None:
            dv = np.atleast_2d(np.asarray(self.derivatives, dtype=complex))
            if dv.shape != v.shape:
                raise StructureError("derivatives must match the vectors in shape")
            object.__setattr__(self, "derivatives", dv)

    @property
    def q(self) -> int:
        return self.vectors.shape[0]

    def labeled_vectors(self) -> list[LabeledVector]:
        return [LabeledVector(self.spaces, v) for v in self.vectors]

    def labeled_derivatives(self) -> list[LabeledVector]:
        if self.derivatives is None:
            return []
        return [LabeledVector(self.spaces, v) for v in self.derivatives]

    def operator(self) -> LabeledOperator:
        return LabeledOperator(self.spaces, self.vectors.T @ self.vectors.conj())

    def derivative_operator(self) -> LabeledOperator:
        """d/dtheta of sum_i |C_i><C_i|."""
        if self.derivatives is None:
            raise StructureError("ensemble carries no derivatives")
        m = self.derivatives.T @ self.vectors.conj()
        return LabeledOperator(self.spaces, m + m.conj().T)

    def compressed(self, rank_tol: float = 1e-10) -> "EnsembleDecomposition":
        """Equivalent ensemble with q = rank vectors.

        Uses the SVD M = U S V^H of the q x D vector matrix and returns
        B = U_r^H M, dB = U_r^H dM. Under constant rank the discarded rows can
        always be cancelled by the gauge, so the optimum over r x r gauges is
        the same QFI.
        """
        M = self.vectors
        if M.shape[0] == 0:
            return self
        U, S, Vh = np.linalg.svd(M, full_matrices=False)
        if S.size == 0 or S[0] == 0:
            r = 0
        else:
            r = int(np.sum(S ** 2 > rank_tol * S[0] ** 2))
        P = U[:, :r].conj().T
        dv = None if self.derivatives is None else P @ self.derivatives
        return EnsembleDecomposition(self.spaces, P @ M, dv, r)


def ensemble_decomposition(c: Comb, rank_tol: float = 1e-10) -> EnsembleDecomposition:
    """Eigen-decomposition ensemble: vectors sqrt(lambda_k) v_k above rank_tol * lambda_max."""
    m = c.op.matrix
    if not is_hermitian(m):
        raise ValidationError("ensemble decomposition needs a Hermitian operator")
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    lmax = max(float(w[-1]), 0.0) if w.size else 0.0
    if w.size and w[0] < -rank_tol * max(lmax, 1e-300):
        raise NotPSDError(f"operator has negative eigenvalue {w[0]:.3e}")
    idx = [k for k in range(len(w) - 1, -1, -1) if w[k] > rank_tol * lmax]
    vecs = np.array([np.sqrt(w[k]) * v[:, k] for k in idx]).reshape(len(idx), m.shape[0])
    return EnsembleDecomposition(c.op.spaces, vecs, None, len(idx))


@dataclass(frozen=True)
class CombFamily:
    """theta -> ensemble of a comb.

    ``ensemble(theta)`` returns ``(vectors, derivatives)`` as q x D arrays;
    derivatives may be ``None`` for finite-difference families.
    """

    structure: ToothStructure
    ensemble: Callable
    differentiability: str = "analytic"
    domain: Optional[tuple] = None
    name: str = "family"

    def __post_init__(self):
        if self.differentiability not in ("analytic", "finite-difference"):
            raise StructureError("differentiability must be 'analytic' or 'finite-difference'")

    def evaluate(self, theta: float, rank_tol: float = 1e-10):
        vecs, ders = self.ensemble(theta)
        vecs = np.atleast_2d(np.asarray(vecs, dtype=complex))
        rank = int(np.linalg.matrix_rank(vecs, tol=None)) if vecs.size else 0
        ens = EnsembleDecomposition(self.structure.spaces, vecs, ders, rank)
        return Comb(ens.operator(), self.structure), ens

    def decomposition(self, theta: float, fd_step: float = 1e-6) -> EnsembleDecomposition:
        """Ensemble with derivatives filled in (analytically or by central differences)."""
        if self.differentiability == "finite-difference":
            return finite_difference_derivatives(self, theta, fd_step)
        _, ens = self.evaluate(theta)
        if ens.derivatives is None:
            raise StructureError(f"analytic family {self.name!r} returned no derivatives")
        return ens


def family_rank(f: CombFamily, thetas: Sequence[float], rank_tol: float = 1e-10) -> int:
    """Max rank over sample points; raises ConstantRankError when ranks disagree."""
    ranks = []
    for th in thetas:
        vecs, _ = f.ensemble(th)
        s = np.linalg.svd(np.atleast_2d(vecs), compute_uv=False)
        ranks.append(int(np.sum(s ** 2 > rank_tol * s[0] ** 2)) if s.size and s[0] > 0 else 0)
    if len(set(ranks)) > 1:
        warnings.warn(f"rank of {f.name!r} varies over the domain: {ranks}", RuntimeWarning, stacklevel=2)
        raise ConstantRankError(f"comb family {f.name!r} does not have constant rank: {ranks}")
    return max(ranks)


def finite_difference_derivatives(f: CombFamily, theta: float, step: float = 1e-6) -> EnsembleDecomposition:
    """Central differences of the ensemble vectors; refuses gauge-inconsistent families."""
    if f.differentiability != "finite-difference":
        raise StructureError(f"family {f.name!r} does not opt in to finite differences")
    v0, _ = f.ensemble(theta)
    vp, _ = f.ensemble(theta + step)
    vm, _ = f.ensemble(theta - step)
    v0, vp, vm = (np.atleast_2d(np.asarray(a, dtype=complex)) for a in (v0, vp, vm))
    if not (v0.shape == vp.shape == vm.shape):
        raise GaugeError(f"vector count changes across theta: {vm.shape[0]}, {v0.shape[0]}, {vp.shape[0]}")
    # a smooth gauge has an O(step^2) second difference
    scale = np.linalg.norm(v0, axis=1)
    second = np.linalg.norm(vp - 2 * v0 + vm, axis=1)
    allowed = max(1e-6, 1e3 * step * step) * np.maximum(scale, 1e-300)
    if np.any(second > allowed):
        raise GaugeError("ensemble vectors are not smooth in theta (inconsistent phases or ordering)")
    ders = (vp - vm) / (2 * step)
    rank = int(np.linalg.matrix_rank(v0)) if v0.size else 0
    return EnsembleDecomposition(f.structure.spaces, v0, ders, rank)


def as_gauge(h, q: int) -> np.ndarray:
    h = np.atleast_2d(np.asarray(h, dtype=complex))
    if h.shape != (q, q):
        raise StructureError(f"gauge matrix has shape {h.shape}, ensemble size is {q}")
    if not is_hermitian(h, 1e-12):
        raise ValidationError("gauge matrix must be Hermitian")
    return 0.5 * (h + h.conj().T)


@dataclass(frozen=True)
class PerformanceOperator:
    op: LabeledOperator
    gauge: np.ndarray

    def is_psd(self, rtol: float = 1e-9) -> bool:
        return self.op.is_psd(rtol)


def tilde_derivatives(d: EnsembleDecomposition, h) -> np.ndarray:
    """Rows |dC_i> - i sum_j h_ij |C_j>."""
    if d.derivatives is None:
        raise StructureError("ensemble carries no derivatives")
    h = as_gauge(h, d.q)
    return d.derivatives - 1j * (h @ d.vectors)


def performance_operator(d: EnsembleDecomposition, h, s: ToothStructure) -> PerformanceOperator:
    """Omega(h) = 4 sum_i (|dC~_i><dC~_i|)^{T_{all but the final outputs}}."""
    h = as_gauge(h, d.q)
    if tuple(d.spaces) != s.spaces:
        raise StructureError("ensemble spaces do not match the tooth structure")
    t = tilde_derivatives(d, h)
    m = 4.0 * (t.T @ t.conj())
    op = LabeledOperator(s.spaces, m)
    last = {x.name for x in s.outputs(s.N - 1)}
    transposed = [x for x in s.spaces if x.name not in last]
    if transposed:
        op = partial_transpose(op, transposed)
    return PerformanceOperator(op, h)


def state_qfi(rho: LabeledOperator, drho: LabeledOperator, tol: float = 1e-8) -> float:
    """SLD quantum Fisher information 2 sum |<j|drho|k>|^2 / (l_j + l_k)."""
    r = np.asarray(rho.matrix if isinstance(rho, LabeledOperator) else rho, dtype=complex)
    dr = np.asarray(drho.matrix if isinstance(drho, LabeledOperator) else drho, dtype=complex)
    if r.shape != dr.shape:
        raise StructureError("rho and drho differ in shape")
    if not is_hermitian(r, tol) or not is_hermitian(dr, tol):
        raise ValidationError("rho and drho must be Hermitian")
    w, v = np.linalg.eigh(0.5 * (r + r.conj().T))
    if abs(np.sum(w) - 1) > tol or w[0] < -tol:
        raise ValidationError("rho is not a density operator")
    if abs(np.trace(dr)) > tol:
        raise ValidationError("drho must be traceless")
    eps = 1e-12 * max(w[-1], 0.0)
    D = v.conj().T @ dr @ v
    den = w[:, None] + w[None, :]
    mask = den > eps
    return float(2.0 * np.sum(np.abs(D[mask]) ** 2 / den[mask]))


def cramer_rao_bound(J: float, nu: int) -> float:
    """1/(nu J); ``math.inf`` stands for an unbounded variance."""
    if not isinstance(nu, (int, np.integer)) or nu < 1:
        raise ValueError("number of repetitions must be a positive integer")
    if J < 0:
        raise ValueError("QFI must be nonnegative")
    if J == 0:
        return math.inf
    return 1.0 / (nu * J)
