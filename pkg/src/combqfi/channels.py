"""Adaptive estimation of a channel used N times.

N uses of a channel family E_theta, with arbitrary processing in between,
form the comb E_theta^{(x) N} on spaces 1..2N. The performance operator of
that comb can be assembled from four single-copy primitives, and the optimal
adaptive QFI is the comb QFI of the tensor-power family.
"""

from __future__ import annotations

import itertools

import numpy as np

from .comb import CombFamily, PerformanceOperator, ToothStructure, as_gauge, performance_operator
from .errors import StructureError, ValidationError
from .qfi import comb_qfi_dual
from .tensor import LabeledOperator, partial_trace, partial_transpose

MAX_COPIES = 4


def check_channel_family(ch: CombFamily, theta: float, tol: float = 1e-8) -> None:
    """Raise unless ``ch`` is a one-tooth family whose Choi operator is trace preserving at theta."""
    s = ch.structure
    if s.N != 1:
        raise StructureError(f"a channel family has one tooth, got N={s.N}")
    c, _ = ch.evaluate(theta)
    marg = partial_trace(c.op, s.outputs(0))
    if np.abs(marg.matrix - np.eye(marg.dim)).max() > tol:
        raise ValidationError("channel Choi operator is not trace preserving")


def _kron_rows(A, B):
    return (A[:, None, :, None] * B[None, :, None, :]).reshape(A.shape[0] * B.shape[0], -1)


def tensor_power_family(ch: CombFamily, N: int) -> CombFamily:
    """The comb E^{(x) N} with the product ensemble |E_i1> (x) ... (x) |E_iN>."""
    if ch.structure.N != 1:
        raise StructureError("tensor powers are defined for one-tooth families")
    if N < 1:
        raise StructureError("N must be at least 1")
    dims = [ch.structure.d_in(0), ch.structure.d_out(0)] * N
    structure = ToothStructure.canonical(N, dims)

    def ensemble(theta):
        v, dv = ch.ensemble(theta)
        v = np.atleast_2d(np.asarray(v, dtype=complex))
        dv = None if dv is None else np.atleast_2d(np.asarray(dv, dtype=complex))
        V, dV = v, dv
        for _ in range(N - 1):
            if dv is None:
                V = _kron_rows(V, v)
            else:
                V, dV = _kron_rows(V, v), _kron_rows(dV, v) + _kron_rows(V, dv)
        return V, dV

    return CombFamily(structure, ensemble, ch.differentiability, ch.domain, f"{ch.name}^{N}")


def _primitives(ch: CombFamily, theta: float):
    ens = ch.decomposition(theta)
    v, dv = ens.vectors, ens.derivatives
    E = v.T @ v.conj()
    P = dv.T @ dv.conj()
    X = dv.T @ v.conj()  # sum |dE_i><E_i|
    Y = v.T @ dv.conj()  # sum |E_i><dE_i|
    return E, P, X, Y


def _kron_all(mats):
    out = np.ones((1, 1), dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out


def n_copy_performance_operator(ch: CombFamily, N: int, theta: float, h=None) -> PerformanceOperator:
    """Performance operator of the N-copy comb.

    With ``h`` None (or zero) it is assembled from the primitives E, Omega,
    (dE E) and (E dE): the diagonal sum places Omega in one slot, the cross
    sum places (dE E) and (E dE) in two distinct slots, and the partial
    transpose over all spaces but the final output is applied last. A
    nonzero ``h`` must act on the product index (size q**N); the operator is
    then built from the product ensemble.
    """
    if N < 1:
        raise StructureError("N must be at least 1")
    fam = tensor_power_family(ch, N)
    s = fam.structure
    q = ch.decomposition(theta).q
    if h is not None:
        hh = np.atleast_2d(np.asarray(h, dtype=complex))
        if hh.shape != (q ** N, q ** N):
            raise StructureError(f"gauge must be {q ** N}x{q ** N} for {N} copies of a {q}-element ensemble")
        if np.any(hh):
            return performance_operator(fam.decomposition(theta), as_gauge(hh, q ** N), s)
    E, P, X, Y = _primitives(ch, theta)
    total = np.zeros((s.dim, s.dim), dtype=complex)
    for k in range(N):
        total += _kron_all([P if j == k else E for j in range(N)])
    for k, l in itertools.permutations(range(N), 2):
        total += _kron_all([X if j == k else Y if j == l else E for j in range(N)])
    op = LabeledOperator(s.spaces, 4.0 * total)
    last = s.outputs(N - 1)[0].name
    op = partial_transpose(op, [x for x in s.spaces if x.name != last])
    return PerformanceOperator(op, np.zeros((q ** N, q ** N), dtype=complex))


def adaptive_channel_qfi(ch: CombFamily, N: int, theta: float, **kw) -> float:
    """QFI of the optimal adaptive strategy with N uses of the channel."""
    if N < 1:
        raise StructureError("N must be at least 1")
    if N > MAX_COPIES:
        raise StructureError(f"N={N} copies exceeds the supported size (N <= {MAX_COPIES}; the SDP grows as 4**N)")
    if ch.structure.N != 1:
        raise StructureError("adaptive_channel_qfi needs a one-tooth channel family")
    return comb_qfi_dual(tensor_power_family(ch, N), theta, **kw).J


# -- test channels -----------------------------------------------------------

def phase_unitary_family(t: float) -> CombFamily:
    """exp(-i theta t |1><1|) as a one-tooth family (same object as the noiseless collision step)."""
    from .collision import phase_channel_family

    return phase_channel_family(t)


def random_channel_family(rng: np.random.Generator, d: int = 2, kraus: int = 2, name: str = "random") -> CombFamily:
    """Random channel K_i(theta) = A_i exp(-i theta G) with a random isometry A and Hermitian G."""
    z = rng.normal(size=(kraus * d, d)) + 1j * rng.normal(size=(kraus * d, d))
    iso, _ = np.linalg.qr(z)
    A = iso.reshape(kraus, d, d)
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    G = 0.5 * (g + g.conj().T)
    w, U = np.linalg.eigh(G)

    def ensemble(theta):
        ph = np.exp(-1j * theta * w)
        Ut = (U * ph) @ U.conj().T
        dUt = (U * (-1j * w * ph)) @ U.conj().T
        K = A @ Ut
        dK = A @ dUt
        # |E_i>[m, o] = K_i[o, m]
        return np.swapaxes(K, 1, 2).reshape(kraus, -1), np.swapaxes(dK, 1, 2).reshape(kraus, -1)

    return CombFamily(ToothStructure.canonical(1, d), ensemble, "analytic", name=name)
