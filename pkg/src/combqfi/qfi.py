"""Quantum Fisher information of comb families via semidefinite programming.

All routes work with the compressed ensemble B (r x D) of the comb and its
derivative dB at the estimation point. Writing x_i(h) = dB_i - i sum_j h_ij B_j
and splitting each vector as x_i[a, m] (a over the spaces before the final
outputs, m over the final outputs), the border vectors are
c_{i,m}(h) = conj(x_i[:, m]) and C(h) is the matrix with these columns, so that
C(h) C(h)^dag = tr_{final outputs} Omega(h) / 4.

The gauge h enters C(h) linearly, which lets every route optimize h jointly
inside one SDP through a Schur-complement block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .comb import (
    CombFamily,
    EnsembleDecomposition,
    ToothStructure,
    as_gauge,
    family_rank,
    link_product,
    state_qfi,
    tilde_derivatives,
    validate_comb,
)
from .errors import ConstantRankError, SolverError, StructureError, ValidationError
from .sdp import (
    DEFAULT_FEAS_TOL,
    DEFAULT_GAP_TOL,
    Affine,
    SdpProblem,
    bmat,
    hermitian_basis,
    kron,
    solve_sdp,
    traceless_hermitian_basis,
)
from .tensor import LabeledOperator, SpaceLabel, is_hermitian

GAP_TOL = DEFAULT_GAP_TOL
FEAS_TOL = DEFAULT_FEAS_TOL


@dataclass
class QfiResult:
    """Outcome of :func:`comb_qfi_dual`.

    ``h_opt`` is expressed in the gauge of ``ensemble`` (the compressed
    ensemble the SDP was built from). ``S_blocks`` holds the normalized dual
    chain S^(1), ..., S^(N-1); ``gap`` is the absolute duality gap in units of J.
    """

    J: float
    h_opt: np.ndarray
    S_blocks: list
    lam: float
    gap: float
    status: str
    ensemble: EnsembleDecomposition
    structure: ToothStructure
    iterations: int = 0


@dataclass(frozen=True)
class Probe:
    op: LabeledOperator
    structure: ToothStructure

    def validate(self, tol: float = 1e-8):
        return validate_comb(self.op, self.structure, tol)

    def mixed_with_uniform(self, eps: float) -> "Probe":
        """(1 - eps) T + eps T_uniform, still a probe; T_uniform = 1 / prod(tooth output dims)."""
        s = self.structure
        norm = float(np.prod([s.d_out(k) for k in range(s.N)]))
        m = (1.0 - eps) * self.op.matrix + eps * np.eye(self.op.dim) / norm
        return Probe(LabeledOperator(self.op.spaces, m), s)

    def purified(self, aux_name: str = "aux", cutoff: float = 1e-12) -> "Probe":
        """Rank-r purification |tau><tau| with an aux space attached to the final tooth."""
        m = self.op.matrix
        w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
        keep = w > cutoff * max(w[-1], 0.0)
        w, v = w[keep], v[:, keep]
        aux = SpaceLabel(aux_name, int(w.size))
        tau = (v * np.sqrt(w)).reshape(-1)  # row index a, aux index k
        s = self.structure
        last_in, last_out = s.teeth[-1]
        teeth = s.teeth[:-1] + ((last_in, last_out + (aux,)),)
        return Probe(LabeledOperator(self.op.spaces + (aux,), np.outer(tau, tau.conj())), ToothStructure(teeth))


# -- comb-valued SDP variables ---------------------------------------------

def _kron_basis_rows(n1: int, d: int) -> np.ndarray:
    """Row permutation taking kron-of-vecs order to vec-of-kron order."""
    r = np.arange(n1 * n1 * d * d)
    ab, cd = np.divmod(r, d * d)
    a, b = np.divmod(ab, n1)
    c, e = np.divmod(cd, d)
    return (a * d + c) * (n1 * d) + b * d + e


def _chain_level(prob: SdpProblem, prev: Affine, d_in: int, d_out: int, name: str) -> Affine:
    """X with tr_out X = prev (x) 1_in, as prev (x) 1 / d_out plus a free traceless-in-out part."""
    base = kron(prev, np.eye(d_in * d_out) / d_out)
    if d_out == 1:
        return base
    n1 = prev.shape[0] * d_in
    tl = traceless_hermitian_basis(d_out)
    PB = sp.csr_matrix(np.array([t.reshape(-1) for t in tl]).T)
    K = sp.kron(hermitian_basis(n1), PB).tocoo()
    rows = _kron_basis_rows(n1, d_out)[K.row]
    coef = sp.coo_matrix((K.data, (rows, K.col)), shape=K.shape)
    n = n1 * d_out
    return base + prob.span_sparse(coef, (n, n), name)


def comb_chain(prob: SdpProblem, teeth_dims, top) -> list[Affine]:
    """Affine chain X^(1), ..., X^(K) satisfying the comb equalities with X^(0) = top.

    ``teeth_dims`` lists (d_in, d_out) per tooth and ``top`` is a scalar
    (Affine or number). The equalities hold identically, so no equality
    constraints are added; positivity is left to the caller.
    """
    cur = top if isinstance(top, Affine) else Affine.constant(np.array([[top]], dtype=complex))
    out = []
    for k, (di, do) in enumerate(teeth_dims):
        cur = _chain_level(prob, cur, int(di), int(do), f"X{k + 1}")
        out.append(cur)
    return out


def _teeth_dims(s: ToothStructure):
    return [(s.d_in(k), s.d_out(k)) for k in range(s.N)]


# -- shared pieces ------------------------------------------------------------

RANK_PROBE_STEP = 1e-3


def _prepared_ensemble(f: CombFamily, theta: float, rank_tol: float, check_rank: bool) -> EnsembleDecomposition:
    """Compressed ensemble at theta; the rank must be constant on a neighbourhood of theta."""
    ens = f.decomposition(theta)
    comp = ens.compressed(rank_tol)
    if check_rank:
        ref = family_rank(f, [theta - RANK_PROBE_STEP, theta, theta + RANK_PROBE_STEP], rank_tol)
        if comp.rank != ref:
            raise ConstantRankError(f"rank {comp.rank} at theta={theta} differs from nearby rank {ref}")
    return comp


def _split(ens: EnsembleDecomposition, s: ToothStructure):
    d_out = s.d_out(s.N - 1)
    D = s.dim
    return ens.vectors.reshape(ens.q, D // d_out, d_out), ens.derivatives.reshape(ens.q, D // d_out, d_out)


def _border_matrix(B, dB, H: Optional[Affine]):
    """C(h) as an Affine (or ndarray when H is None) of shape (D_pre, r * d_out)."""
    r, Dp, do = B.shape
    C0 = dB.conj().transpose(1, 0, 2).reshape(Dp, r * do)
    if H is None:
        return C0
    P = H.conj() @ B.conj().reshape(r, Dp * do)
    a, i, m = np.meshgrid(np.arange(Dp), np.arange(r), np.arange(do), indexing="ij")
    src = (i * (Dp * do) + a * do + m).reshape(Dp, r * do)
    return Affine.constant(C0) + 1j * P.index_map(src, (Dp, r * do))


def border_matrix(ens: EnsembleDecomposition, h, s: ToothStructure) -> np.ndarray:
    """Numerical C(h) for a fixed gauge."""
    B, dB = _split(ens, s)
    x = tilde_derivatives(ens, h)
    _, dBt = _split(EnsembleDecomposition(ens.spaces, ens.vectors, x, ens.rank), s)
    return _border_matrix(B, dBt, None)


def _check_solution(sol, what):
    if not sol.optimal:
        raise SolverError(f"{what}: solver returned status {sol.status!r}", sol)


def _zero_result(ens, s):
    S = [LabeledOperator(s.prefix(k).spaces, np.eye(s.prefix(k).dim) / _out_dims(s, k))
         for k in range(1, s.N)]
    return QfiResult(0.0, np.zeros((ens.q, ens.q), dtype=complex), S, 0.0, 0.0, "optimal", ens, s)


def _out_dims(s, k):
    return int(np.prod([s.d_out(j) for j in range(k)]))


# -- linearized dual route --------------------------------------------------

def _dual_problem(B, dB, s: ToothStructure):
    r, Dp, do = B.shape
    prob = SdpProblem()
    lam = prob.scalar("lambda")
    H = prob.hermitian(r, "h")
    chain = comb_chain(prob, _teeth_dims(s.prefix(s.N - 1)), lam) if s.N > 1 else []
    top = chain[-1] if chain else lam
    low = kron(top, np.eye(s.d_in(s.N - 1)))
    C = _border_matrix(B, dB, H)
    prob.add_psd(bmat([[np.eye(r * do), C.H], [C, low]]), "schur")
    prob.minimize(lam)
    return prob, lam, H, chain


def dual_problem(f: CombFamily, theta: float, rank_tol: float = 1e-10, check_rank: bool = True) -> SdpProblem:
    """The SDP solved by :func:`comb_qfi_dual`, e.g. for export with ``sdp.dump_problem``."""
    s = f.structure
    ens = _prepared_ensemble(f, theta, rank_tol, check_rank)
    if ens.q == 0:
        raise StructureError(f"family {f.name!r} evaluates to the zero operator")
    B, dB = _split(ens, s)
    return _dual_problem(B, dB, s)[0]


def comb_qfi_dual(f: CombFamily, theta: float, *, gap_tol: float = GAP_TOL, feas_tol: float = FEAS_TOL,
                  backend: str = "ipm", rank_tol: float = 1e-10, check_rank: bool = True) -> QfiResult:
    """QFI by the linearized dual SDP.

    minimize lambda over Hermitian h and S~^(k) = lambda S^(k) subject to
    [[1, C(h)^dag], [C(h), S~^(N-1) (x) 1_{I_N}]] >= 0; J = 4 lambda.
    """
    s = f.structure
    ens = _prepared_ensemble(f, theta, rank_tol, check_rank)
    if ens.q == 0:
        raise StructureError(f"family {f.name!r} evaluates to the zero operator")
    B, dB = _split(ens, s)
    if not np.any(np.abs(B)) or not np.any(np.abs(dB)):
        return _zero_result(ens, s)
    prob, lam, H, chain = _dual_problem(B, dB, s)
    sol = solve_sdp(prob, gap_tol=gap_tol, feas_tol=feas_tol, backend=backend)
    _check_solution(sol, f"comb QFI of {f.name}")
    lam_v = sol.scalar(lam)
    h = sol.value(H)
    h = 0.5 * (h + h.conj().T)
    blocks = []
    for k, X in enumerate(chain, start=1):
        m = sol.value(X) / lam_v if lam_v > 0 else sol.value(X)
        blocks.append(LabeledOperator(s.prefix(k).spaces, 0.5 * (m + m.conj().T)))
    return QfiResult(4 * lam_v, h, blocks, lam_v, 4 * sol.gap, sol.status, ens, s, sol.iterations)


# -- min-entropy route ---------------------------------------------------------

def twirled_operator(ens: EnsembleDecomposition, h, s: ToothStructure) -> LabeledOperator:
    """W(h) = tr_{final outputs} Omega(h) (x) 1 / d_out, on the spaces of ``s``."""
    C = border_matrix(ens, h, s)
    do = s.d_out(s.N - 1)
    m = np.kron(4.0 * C @ C.conj().T, np.eye(do) / do)
    return LabeledOperator(s.spaces, m)


def conditional_min_entropy(W: LabeledOperator, s: ToothStructure, *, gap_tol: float = GAP_TOL,
                            feas_tol: float = FEAS_TOL, backend: str = "ipm") -> float:
    """H_min of the final tooth conditioned on the earlier ones.

    -log2 of min mu such that mu S (x) 1_{I_N O_N} >= W for a comb S on the
    first N-1 teeth. Returns ``inf`` when the optimal mu vanishes.
    """
    if tuple(W.spaces) != s.spaces:
        raise StructureError("W must live on the spaces of the tooth structure, in order")
    if not is_hermitian(W.matrix):
        raise ValidationError("conditional min-entropy needs a Hermitian operator")
    Wm = 0.5 * (W.matrix + W.matrix.conj().T)
    if s.N == 1:
        mu = float(np.linalg.eigvalsh(Wm)[-1])
    else:
        prob = SdpProblem()
        mu_v = prob.scalar("mu")
        X = comb_chain(prob, _teeth_dims(s.prefix(s.N - 1)), mu_v)[-1]
        prob.add_psd(X, "positivity")
        d_last = s.d_in(s.N - 1) * s.d_out(s.N - 1)
        prob.add_psd(kron(X, np.eye(d_last)) - Wm, "domination")
        prob.minimize(mu_v)
        sol = solve_sdp(prob, gap_tol=gap_tol, feas_tol=feas_tol, backend=backend)
        _check_solution(sol, "conditional min-entropy")
        mu = sol.scalar(mu_v)
    if mu <= 0:
        return math.inf
    return -math.log2(mu)


def comb_qfi_min_entropy(f: CombFamily, theta: float, *, gap_tol: float = GAP_TOL, feas_tol: float = FEAS_TOL,
                         backend: str = "ipm", rank_tol: float = 1e-10, check_rank: bool = True) -> float:
    """J = d_out * min_h 2^{-H_min(W(h))} with the twirled performance operator W(h).

    Solved as one joint SDP: minimize mu over h and S~ = mu S subject to
    S~ (x) 1_{I_N O_N} >= W(h), written as a Schur block with columns
    sqrt(4 / d_out) c_{i,m}(h) (x) e_n.
    """
    s = f.structure
    ens = _prepared_ensemble(f, theta, rank_tol, check_rank)
    if ens.q == 0:
        raise StructureError(f"family {f.name!r} evaluates to the zero operator")
    B, dB = _split(ens, s)
    if not np.any(np.abs(B)) or not np.any(np.abs(dB)):
        return 0.0
    r, Dp, do = B.shape
    prob = SdpProblem()
    mu = prob.scalar("mu")
    H = prob.hermitian(r, "h")
    chain = comb_chain(prob, _teeth_dims(s.prefix(s.N - 1)), mu) if s.N > 1 else []
    top = chain[-1] if chain else mu
    low = kron(top, np.eye(s.d_in(s.N - 1) * do))
    C = kron(_border_matrix(B, dB, H), np.eye(do)) * math.sqrt(4.0 / do)
    prob.add_psd(bmat([[np.eye(r * do * do), C.H], [C, low]]), "schur")
    prob.minimize(mu)
    sol = solve_sdp(prob, gap_tol=gap_tol, feas_tol=feas_tol, backend=backend)
    _check_solution(sol, f"min-entropy QFI of {f.name}")
    return do * sol.scalar(mu)


def min_entropy_objective(ens: EnsembleDecomposition, h, s: ToothStructure, **kw) -> float:
    """d_out * 2^{-H_min(W(h))} at a fixed gauge; its minimum over h is J."""
    W = twirled_operator(ens, h, s)
    H = conditional_min_entropy(W, s, **kw)
    return s.d_out(s.N - 1) * (0.0 if math.isinf(H) else 2.0 ** (-H))


# -- probe recovery ----------------------------------------------------------

def _probe_variable(prob: SdpProblem, s: ToothStructure) -> Affine:
    ps = s.probe()
    T = comb_chain(prob, _teeth_dims(ps), 1.0)[-1]
    prob.add_psd(T, "probe-positivity")
    return T


def _trace_against(T: Affine, M: np.ndarray) -> Affine:
    """tr(T M) as a 1x1 Affine."""
    row = sp.csr_matrix(M.T.reshape(1, -1))
    return T.linear_map(row, (1, 1))


PROBE_MIX = 1e-8


def optimal_probe(f: CombFamily, theta: float, h_opt=None, *, method: str = "maxmin", gap_tol: float = GAP_TOL,
                  feas_tol: float = FEAS_TOL, backend: str = "ipm", rank_tol: float = 1e-10,
                  result: Optional[QfiResult] = None, mix: float = PROBE_MIX):
    """Recover an optimal probe T (on spaces 1..2N-1, no aux).

    ``method="maxmin"`` maximizes s subject to f(T, h) >= s for every
    Hermitian h, where f(T, h) = tr[T tr_{final outputs} Omega(h)] is a convex
    quadratic in the gauge; the constraint is a single PSD block in T and s.
    Every maximizer is a probe whose output attains the QFI.
    ``method="fixed-gauge"`` maximizes f(T, h_opt) at the dual's gauge, which
    has the same value but may return a degenerate maximizer.

    Optimal probes can put the output on a rank-changing point, where the
    SLD formula misses a second-order term. The returned probe is therefore
    mixed with the uniform probe at weight ``mix``, which costs at most
    ``mix * J`` and keeps the output rank locally constant.

    Returns (Probe, primal_value).
    """
    s = f.structure
    if result is None:
        result = comb_qfi_dual(f, theta, gap_tol=gap_tol, feas_tol=feas_tol, backend=backend, rank_tol=rank_tol)
    ens = result.ensemble
    h_opt = result.h_opt if h_opt is None else as_gauge(h_opt, ens.q)
    B, dB = _split(ens, s)
    r, Dp, do = B.shape
    prob = SdpProblem()
    T = _probe_variable(prob, s)
    if method == "fixed-gauge":
        C = border_matrix(ens, h_opt, s)
        obj = _trace_against(T, 4.0 * C @ C.conj().T).real()
        prob.maximize(obj)
        sol = solve_sdp(prob, gap_tol=gap_tol, feas_tol=feas_tol, backend=backend)
        _check_solution(sol, "probe recovery")
        value = sol.scalar(obj)
    elif method == "maxmin":
        # c_{i,m}(x) = a_{i,m} + sum_p x_p g_{p,i,m} for gauge coordinates x
        a = dB.conj().transpose(0, 2, 1)  # (i, m, a)
        basis = hermitian_basis(r).toarray().T.reshape(r * r, r, r)
        g = 1j * np.einsum("pij,jam->pima", basis.conj(), B.conj())
        n = r * r
        # Q_pq = 4 sum Re(g_p^dag T g_q); rows of tr(T M) are vec(M^T)
        Lq = 4.0 * np.einsum("qimb,pima->pqab", g, g.conj()).reshape(n * n, Dp * Dp)
        Lb = 4.0 * np.einsum("pimb,ima->pab", g, a.conj()).reshape(n, Dp * Dp)
        Lc = 4.0 * np.einsum("imb,ima->ab", a, a.conj()).reshape(1, Dp * Dp)
        Q = T.linear_map(sp.csr_matrix(Lq), (n, n)).real()
        bvec = T.linear_map(sp.csr_matrix(Lb), (n, 1)).real()
        cval = T.linear_map(sp.csr_matrix(Lc), (1, 1)).real()
        t = prob.scalar("s")
        prob.add_psd(bmat([[Q, bvec], [bvec.T, cval - t]]), "maxmin")
        prob.maximize(t)
        sol = solve_sdp(prob, gap_tol=gap_tol, feas_tol=feas_tol, backend=backend)
        _check_solution(sol, "probe recovery")
        value = sol.scalar(t)
    else:
        raise ValueError(f"unknown probe method {method!r}")
    Tm = sol.value(T)
    probe = Probe(LabeledOperator(s.probe().spaces, 0.5 * (Tm + Tm.conj().T)), s.probe())
    if mix > 0:
        probe = probe.mixed_with_uniform(mix)
    return probe, value


def probe_output(f: CombFamily, theta: float, probe: Probe, fd_step: float = 1e-6):
    """(rho, drho) of the state C_theta * T, with T purified if it carries no aux space."""
    if set(probe.op.names) == {x.name for x in f.structure.spaces[:-len(f.structure.outputs(f.structure.N - 1))]}:
        probe = probe.purified()
    ens = f.decomposition(theta, fd_step)
    C = ens.operator()
    dC = ens.derivative_operator()
    rho = link_product(C, probe.op)
    drho = link_product(dC, probe.op)
    return rho, drho


def probe_qfi(f: CombFamily, theta: float, probe: Probe) -> float:
    """SLD QFI of the output state generated by ``probe``."""
    rho, drho = probe_output(f, theta, probe)
    return state_qfi(rho, drho)


# -- channel specialization --------------------------------------------------

def channel_qfi(f: CombFamily, theta: float, *, return_gauge: bool = False, gap_tol: float = GAP_TOL,
                feas_tol: float = FEAS_TOL, backend: str = "ipm", rank_tol: float = 1e-10):
    """Channel QFI 4 min_h || sum_i dK~_i^dag dK~_i || from the Kraus form.

    Kraus operators are read off the ensemble: K_i[o, m] = B_i[m, o]. The
    returned gauge refers to the compressed ensemble ``f.decomposition(theta).compressed()``.
    """
    s = f.structure
    if s.N != 1:
        raise StructureError(f"channel_qfi needs a one-tooth family, got N={s.N}")
    ens = _prepared_ensemble(f, theta, rank_tol, check_rank=True)
    B, dB = _split(ens, s)
    r, d_in, d_out = B.shape
    K = B.transpose(0, 2, 1)
    dK = dB.transpose(0, 2, 1)
    if not np.any(np.abs(dK)):
        val = 0.0
        h = np.zeros((r, r), dtype=complex)
        return (val, h) if return_gauge else val
    prob = SdpProblem()
    lam = prob.scalar("lambda")
    H = prob.hermitian(r, "h")
    # stacked dK~_i = dK_i - i sum_j h_ij K_j, shape (r * d_out, d_in)
    G0 = dK.reshape(r * d_out, d_in)
    P = H @ K.reshape(r, d_out * d_in)
    G = Affine.constant(G0) - 1j * P.linear_map(sp.identity(r * d_out * d_in, format="csr"), (r * d_out, d_in))
    prob.add_psd(bmat([[np.eye(r * d_out), G], [G.H, lam * np.eye(d_in) / 4.0]]), "kraus")
    prob.minimize(lam)
    sol = solve_sdp(prob, gap_tol=gap_tol, feas_tol=feas_tol, backend=backend)
    _check_solution(sol, f"channel QFI of {f.name}")
    val = sol.scalar(lam)
    h = sol.value(H)
    h = 0.5 * (h + h.conj().T)
    return (val, h) if return_gauge else val


def fujiwara_imai_objective(ens: EnsembleDecomposition, h, s: ToothStructure) -> float:
    """|| tr_2 Omega(h) ||_inf for a one-tooth comb."""
    C = border_matrix(ens, h, s)
    return float(np.linalg.eigvalsh(4.0 * C @ C.conj().T)[-1])
