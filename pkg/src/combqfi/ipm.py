"""Primal-dual interior-point method for Hermitian semidefinite programs.

Standard form (all variables real)::

    minimize    c^T x
    subject to  A x = b
                s_k = h_k - G_k x  is PSD   (k = 1..K, complex Hermitian blocks)

Dual::

    maximize    -b^T y - sum_k <h_k, z_k>
    subject to  A^T y + sum_k G_k^* z_k + c = 0,   z_k PSD

The iteration follows the homogeneous self-dual embedding with
Nesterov-Todd scaling and a Mehrotra predictor-corrector, in the style of
the conelp algorithm of CVXOPT, specialised to Hermitian cones so that no
realification is needed in the inner loop. Everything is deterministic:
no randomisation, fixed iteration schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

STEP = 0.99
_CHUNK_ELEMS = 4_000_000


@dataclass
class ConeProgram:
    c: np.ndarray
    A: np.ndarray  # (p, n) dense real
    b: np.ndarray
    G: list  # list of scipy.sparse csc (m_k^2, n) complex
    h: list  # list of (m_k, m_k) complex Hermitian
    dims: list = field(default_factory=list)

    def __post_init__(self):
        self.dims = [hk.shape[0] for hk in self.h]


@dataclass
class IpmResult:
    status: str
    x: np.ndarray
    y: np.ndarray
    s: list
    z: list
    primal_objective: float
    dual_objective: float
    iterations: int
    pres: float
    dres: float
    gap: float


def _herm(m):
    return 0.5 * (m + m.conj().T)


def _inner(a, b):
    return float(np.real(np.vdot(a, b)))


def _block_inner(u, v):
    return sum(_inner(a, b) for a, b in zip(u, v))


def _block_norm(u):
    return float(np.sqrt(sum(np.real(np.vdot(a, a)) for a in u)))


class _Ops:
    """Linear maps of a cone program, with column partitions for the Schur step."""

    def __init__(self, prog: ConeProgram):
        self.prog = prog
        self.n = prog.c.size
        self.GH = [g.conj().T.tocsr() for g in prog.G]
        self.parts = []
        for g, m in zip(prog.G, prog.dims):
            g = g.tocsc()
            g.sort_indices()
            nnz_col = np.diff(g.indptr)
            dense_cols = np.flatnonzero(nnz_col > m)
            sparse_cols = np.flatnonzero((nnz_col > 0) & (nnz_col <= m))
            self.parts.append((g, dense_cols, sparse_cols))

    def G(self, x):
        return [(g @ x).reshape(m, m) for g, m in zip(self.prog.G, self.prog.dims)]

    def GT(self, z):
        out = np.zeros(self.n)
        for gh, zk in zip(self.GH, z):
            out += np.real(gh @ zk.reshape(-1))
        return out

    def schur(self, V):
        """H_ij = sum_k Re <G_ki, V_k G_kj V_k>."""
        n = self.n
        H = np.zeros((n, n))
        for (g, dense_cols, sparse_cols), gh, Vk, m in zip(self.parts, self.GH, V, self.prog.dims):
            chunk = max(1, _CHUNK_ELEMS // (m * m))
            for start in range(0, len(sparse_cols), chunk):
                cols = sparse_cols[start:start + chunk]
                P = self._sparse_products(g, cols, Vk, m)
                H[:, cols] += np.real(gh @ P.T)
            for start in range(0, len(dense_cols), chunk):
                cols = dense_cols[start:start + chunk]
                P = np.empty((len(cols), m * m), dtype=complex)
                for t, j in enumerate(cols):
                    gj = g[:, j].toarray().reshape(m, m)
                    P[t] = (Vk @ gj @ Vk).reshape(-1)
                H[:, cols] += np.real(gh @ P.T)
        return 0.5 * (H + H.T)

    @staticmethod
    def _sparse_products(g, cols, V, m):
        # rows of the result: vec(V G_j V) for j in cols
        starts = g.indptr[cols]
        counts = g.indptr[cols + 1] - starts
        offsets = np.cumsum(counts) - counts
        pos = np.repeat(starts - offsets, counts) + np.arange(int(counts.sum()))
        rows = g.indices[pos]
        vals = g.data[pos]
        owner = np.repeat(np.arange(len(cols)), counts)
        a, bb = np.divmod(rows, m)
        out = np.zeros((len(cols), m * m), dtype=complex)
        batch = max(1, _CHUNK_ELEMS // (m * m))
        for s0 in range(0, len(rows), batch):
            sl = slice(s0, s0 + batch)
            left = V[:, a[sl]].T
            right = vals[sl, None] * V[bb[sl], :]
            outer = (left[:, :, None] * right[:, None, :]).reshape(-1, m * m)
            k = outer.shape[0]
            inc = sp.csr_matrix((np.ones(k), (owner[sl], np.arange(k))), shape=(len(cols), k))
            out += inc @ outer
        return out


class _Scaling:
    """Nesterov-Todd scaling s = R Lam R^H, z = R^-H Lam R^-1 per block."""

    def __init__(self, R, Rinv, lam):
        self.R = R
        self.Rinv = Rinv
        self.lam = lam

    @classmethod
    def from_pair(cls, s, z):
        Rs, Rinvs, lams = [], [], []
        for sk, zk in zip(s, z):
            R, Rinv, lam = _nt_pair(sk, zk)
            Rs.append(R)
            Rinvs.append(Rinv)
            lams.append(lam)
        return cls(Rs, Rinvs, lams)

    def V(self):
        return [Ri.conj().T @ Ri for Ri in self.Rinv]

    def W(self):
        return [R @ R.conj().T for R in self.R]

    def s(self):
        return [_herm((R * lam) @ R.conj().T) for R, lam in zip(self.R, self.lam)]

    def z(self):
        return [_herm(Ri.conj().T @ (lam[:, None] * Ri)) for Ri, lam in zip(self.Rinv, self.lam)]


def _chol(m):
    return sla.cholesky(_herm(m), lower=True, check_finite=False)


def _nt_pair(s, z):
    Ls = _chol(s)
    Lz = _chol(z)
    U, lam, Vh = np.linalg.svd(Lz.conj().T @ Ls)
    Vs = Vh.conj().T
    isq = 1.0 / np.sqrt(lam)
    R = (Ls @ Vs) * isq
    Lsinv = sla.solve_triangular(Ls, np.eye(Ls.shape[0]), lower=True, check_finite=False)
    Rinv = (np.sqrt(lam)[:, None] * Vs.conj().T) @ Lsinv
    return R, Rinv, lam


def _max_step(lam_list, d_list):
    """Largest alpha with diag(lam) + alpha * d PSD (inf if unbounded)."""
    amax = np.inf
    for lam, d in zip(lam_list, d_list):
        isq = 1.0 / np.sqrt(lam)
        m = _herm(isq[:, None] * d * isq[None, :])
        ev = np.linalg.eigvalsh(m)[0]
        if ev < 0:
            amax = min(amax, -1.0 / ev)
    return amax


def _jordan(a, b):
    return 0.5 * (a @ b + b @ a)


class _Kkt:
    """Solves [A^T u_y + G^* u_z; A u_x; G u_x - W u_z W] = [dx; dy; dz] in the scaled frame.

    The z-parts are passed and returned scaled: d~ = R^-1 d R^-H and
    u~ = R^H u_z R = R^-1 (G u_x - dz) R^-H. Working only with R^-1 keeps the
    direction consistent with the iterates even when W is badly conditioned.
    """

    def __init__(self, ops: _Ops, prog: ConeProgram, scaling: _Scaling):
        self.ops = ops
        self.prog = prog
        self.Rinv = scaling.Rinv
        self.V = scaling.V()
        H = ops.schur(self.V)
        A = prog.A
        K = H + A.T @ A if A.shape[0] else H
        self.L = self._factor(K)
        if A.shape[0]:
            M = A @ sla.cho_solve(self.L, A.T, check_finite=False)
            self.L2 = self._factor(M)

    @staticmethod
    def _factor(K):
        K = 0.5 * (K + K.T)
        try:
            return sla.cho_factor(K, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            pass
        reg = 1e-13 * max(1.0, float(np.max(np.abs(np.diag(K)))))
        for _ in range(8):
            try:
                return sla.cho_factor(K + reg * np.eye(K.shape[0]), lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                reg *= 100
        raise np.linalg.LinAlgError("KKT system is singular")

    def scale(self, blocks):
        return [_herm(Ri @ b @ Ri.conj().T) for Ri, b in zip(self.Rinv, blocks)]

    def unscale(self, blocks):
        return [_herm(Ri.conj().T @ b @ Ri) for Ri, b in zip(self.Rinv, blocks)]

    def _raw_solve(self, dx, dy, dzs):
        A = self.prog.A
        r = dx + self.ops.GT(self.unscale(dzs))
        if A.shape[0]:
            w = sla.cho_solve(self.L, r + A.T @ dy, check_finite=False)
            uy = sla.cho_solve(self.L2, A @ w - dy, check_finite=False)
            ux = w - sla.cho_solve(self.L, A.T @ uy, check_finite=False)
        else:
            uy = np.zeros(0)
            ux = sla.cho_solve(self.L, r, check_finite=False)
        uzs = [g - d for g, d in zip(self.scale(self.ops.G(ux)), dzs)]
        return ux, uy, uzs

    def _apply(self, ux, uy, uzs):
        A = self.prog.A
        rx = A.T @ uy + self.ops.GT(self.unscale(uzs))
        ry = A @ ux
        rz = [g - u for g, u in zip(self.scale(self.ops.G(ux)), uzs)]
        return rx, ry, rz

    def solve(self, dx, dy, dzs, max_refine=20):
        """Solve with iterative refinement; keeps the most accurate candidate."""
        ux, uy, uz = self._raw_solve(dx, dy, dzs)
        best, best_err = (ux, uy, uz), np.inf
        for _ in range(max_refine):
            rx, ry, rz = self._apply(ux, uy, uz)
            ex, ey = dx - rx, dy - ry
            ez = [d - r for d, r in zip(dzs, rz)]
            err = max(np.linalg.norm(ex), np.linalg.norm(ey) if ey.size else 0.0, _block_norm(ez))
            improved = err < 0.9 * best_err
            if err < best_err:
                best, best_err = (ux, uy, uz), err
            if err == 0.0 or not improved:
                break
            cx, cy, cz = self._raw_solve(ex, ey, ez)
            ux, uy = ux + cx, uy + cy
            uz = [u + c for u, c in zip(uz, cz)]
        return best


def solve_cone_program(prog: ConeProgram, feastol=1e-9, abstol=1e-9, reltol=1e-9, max_iters=100,
                       log=None, pres_weight=1.0) -> IpmResult:
    """Run the homogeneous self-dual interior-point iteration.

    Returns an :class:`IpmResult` whose ``status`` is one of ``optimal``,
    ``infeasible`` (primal), ``unbounded`` (primal unbounded / dual
    infeasible) or ``numerical-failure``. On a numerical failure the result
    holds the best iterate by max(pres_weight * pres, dres, gap); a caller
    that re-verifies primal feasibility itself can discount pres.
    """
    c, A, b, h = prog.c, prog.A, prog.b, prog.h
    n, p = c.size, A.shape[0]
    ops = _Ops(prog)
    dims = prog.dims
    deg = sum(dims)

    resx0 = max(1.0, np.linalg.norm(c))
    resy0 = max(1.0, np.linalg.norm(b))
    resz0 = max(1.0, _block_norm(h))

    eye = [np.eye(m, dtype=complex) for m in dims]
    unit = _Scaling([e.copy() for e in eye], [e.copy() for e in eye], [np.ones(m) for m in dims])
    kkt0 = _Kkt(ops, prog, unit)
    x, _, zz = kkt0.solve(np.zeros(n), b, h)
    s = [-zk for zk in zz]
    _, y, z = kkt0.solve(-c, np.zeros(p), [np.zeros_like(hk) for hk in h])

    def shift(blocks):
        amin = min(np.linalg.eigvalsh(_herm(bk))[0] for bk in blocks)
        if amin > 0:
            return [_herm(bk) for bk in blocks]
        return [_herm(bk) + (1.0 - amin) * e for bk, e in zip(blocks, eye)]

    s = shift(s)
    z = shift(z)
    tau, kappa = 1.0, 1.0
    # s and z are stored explicitly and updated additively; the NT scaling is
    # recomputed from them every iteration so residuals never drift
    scaling = _Scaling.from_pair(s, z)

    status = "numerical-failure"
    best = None
    stall = 0
    it = 0
    pres = dres = gap = np.inf
    for it in range(max_iters + 1):
        Gx = ops.G(x)
        hz = _block_inner(h, z)
        rx = A.T @ y + ops.GT(z) + c * tau
        ry = b * tau - A @ x
        rz = [sk + g - hk * tau for sk, g, hk in zip(s, Gx, h)]
        cx = float(c @ x)
        by = float(b @ y)
        rt = kappa + cx + by + hz
        sz = sum(float(np.sum(l * l)) for l in scaling.lam)
        mu = (sz + tau * kappa) / (deg + 1)

        pcost = cx / tau
        dcost = -(by + hz) / tau
        gap = sz / tau ** 2
        if pcost < 0:
            relgap = gap / -pcost
        elif dcost > 0:
            relgap = gap / dcost
        else:
            relgap = np.inf
        pres = max(np.linalg.norm(ry) / resy0, _block_norm(rz) / resz0) / tau
        dres = np.linalg.norm(rx) / resx0 / tau
        if log is not None:
            log(f"it {it:3d} pcost {pcost: .10e} dcost {dcost: .10e} gap {gap:.2e} pres {pres:.2e} "
                f"dres {dres:.2e} tau {tau:.2e} kappa {kappa:.2e}")

        if (hz + by) < 0:
            pinfres = np.linalg.norm(A.T @ y + ops.GT(z)) / resx0 / (-(hz + by))
        else:
            pinfres = np.inf
        if cx < 0:
            dinfres = max(np.linalg.norm(A @ x) / resy0,
                          _block_norm([sk + g for sk, g in zip(s, Gx)]) / resz0) / (-cx)
        else:
            dinfres = np.inf

        cand = (x / tau, y / tau, [sk / tau for sk in s], [zk / tau for zk in z], pcost, dcost, pres, dres, gap)
        merit = max(pres_weight * pres, dres, min(gap, relgap))
        if best is None or merit < best_merit:
            best, best_merit, stall = cand, merit, 0
        else:
            stall += 1
        if best_merit < 1e-6 and (stall >= 5 or merit > 1e4 * best_merit):
            # breakdown near the optimum: keep the best iterate seen
            break
        if pres <= feastol and dres <= feastol and (gap <= abstol or relgap <= reltol):
            status = "optimal"
            best = cand
            break
        if pinfres <= feastol:
            status = "infeasible"
            scale = -(hz + by)
            best = (x, y / scale, s, [zk / scale for zk in z], np.nan, np.nan, pres, dres, gap)
            break
        if dinfres <= feastol:
            status = "unbounded"
            scale = -cx
            best = (x / scale, y, [sk / scale for sk in s], z, np.nan, np.nan, pres, dres, gap)
            break
        if it == max_iters:
            break

        try:
            kkt = _Kkt(ops, prog, scaling)
            hs = kkt.scale(h)
            rzs = kkt.scale(rz)
            v = kkt.solve(-c, b, hs)
        except np.linalg.LinAlgError:
            break
        lam = scaling.lam
        lamsq = [np.diag(l * l).astype(complex) for l in lam]

        dsa = dza = None
        dta = dka = 0.0
        sigma = eta = 0.0
        step = 0.0
        try:
            for phase in (0, 1):
                if phase == 0:
                    rc = [-q for q in lamsq]
                    rk = -tau * kappa
                else:
                    rc = [-q - _jordan(a, bq) + sigma * mu * np.eye(len(l)) for q, a, bq, l in zip(lamsq, dsa, dza, lam)]
                    rk = -tau * kappa - dta * dka + sigma * mu
                # X = L_lam^{-1}(rc): solves lam o X = rc
                X = [2.0 * r / (l[:, None] + l[None, :]) for r, l in zip(rc, lam)]
                f = 1.0 - eta
                u = kkt.solve(-f * rx, f * ry, [-f * r - q for r, q in zip(rzs, X)])
                num = rk + tau * (f * rt + c @ u[0] + b @ u[1] + _block_inner(hs, u[2]))
                den = kappa - tau * (c @ v[0] + b @ v[1] + _block_inner(hs, v[2]))
                dtau = num / den
                dx = u[0] + dtau * v[0]
                dy = u[1] + dtau * v[1]
                dz_s = [a + dtau * bq for a, bq in zip(u[2], v[2])]
                dkap = -f * rt - c @ dx - b @ dy - _block_inner(hs, dz_s)
                ds_s = [Xk - d for Xk, d in zip(X, dz_s)]
                amax = min(_max_step(lam, ds_s), _max_step(lam, dz_s))
                if dtau < 0:
                    amax = min(amax, -tau / dtau)
                if dkap < 0:
                    amax = min(amax, -kappa / dkap)
                if phase == 0:
                    step = min(1.0, amax)
                    dsa, dza, dta, dka = ds_s, dz_s, dtau, dkap
                    # Mehrotra centering
                    mu_aff = (sum(_inner(np.diag(l) + step * a, np.diag(l) + step * bq)
                                  for l, a, bq in zip(lam, ds_s, dz_s))
                              + (tau + step * dtau) * (kappa + step * dkap)) / (deg + 1)
                    sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3
                    eta = sigma
                else:
                    step = min(1.0, STEP * amax)
        except np.linalg.LinAlgError:
            break

        ds = [R @ d @ R.conj().T for R, d in zip(scaling.R, ds_s)]
        dzu = [Ri.conj().T @ d @ Ri for Ri, d in zip(scaling.Rinv, dz_s)]
        new_scaling = None
        while step > 1e-12:
            s_new = [_herm(a + step * d) for a, d in zip(s, ds)]
            z_new = [_herm(a + step * d) for a, d in zip(z, dzu)]
            try:
                new_scaling = _Scaling.from_pair(s_new, z_new)
                break
            except np.linalg.LinAlgError:
                # rounding pushed an explicit iterate off the cone; shorten the step
                step *= 0.8
        if new_scaling is None:
            break
        x = x + step * dx
        y = y + step * dy
        tau = tau + step * dtau
        kappa = kappa + step * dkap
        s, z, scaling = s_new, z_new, new_scaling

    x_, y_, s_, z_, pc, dc, pr, dr, gp = best
    return IpmResult(status=status, x=x_, y=y_, s=s_, z=z_, primal_objective=float(pc),
                     dual_objective=float(dc), iterations=it, pres=float(pr), dres=float(dr), gap=float(gp))
