"""Variational probe: a layered two-qubit circuit interleaved with the collision dynamics.

The system S and an ancilla A start in |00>. Layer i acts on (S, A), then one
collision step acts on (E, S); after N steps a final layer is applied and
(S, A) is measured in the computational basis. Every layer is

    R_X(p1) on S, R_X(p2) on A, R_ZZ(p3), R_Z(p4) on S, R_Z(p5) on A

applied in that order, with R_s(p) = exp(-i p s / 2).
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .collision import FrequencyTask, InteractionKind, default_env_init, env_branches, step_unitary_matrix
from .comb import state_qfi
from .errors import StructureError
from .tensor import LabeledOperator, SpaceLabel

PARAMS_PER_LAYER = 5
PROB_EPS = 1e-12
WORKERS_ENV = "COMBQFI_WORKERS"

_I2 = np.eye(2, dtype=complex)
_ZZ_DIAG = np.array([1.0, -1.0, -1.0, 1.0])
_Z_DIAG = np.array([1.0, -1.0])


def n_params(N: int) -> int:
    return PARAMS_PER_LAYER * (N + 1)


def _check_params(params, N: int) -> np.ndarray:
    p = np.asarray(params, dtype=float)
    if p.shape[-1] != n_params(N):
        raise StructureError(f"expected {n_params(N)} parameters for N={N}, got {p.shape[-1]}")
    return p


def _rx(phi):
    c, s = np.cos(phi / 2), np.sin(phi / 2)
    out = np.empty(np.shape(phi) + (2, 2), dtype=complex)
    out[..., 0, 0] = c
    out[..., 1, 1] = c
    out[..., 0, 1] = -1j * s
    out[..., 1, 0] = -1j * s
    return out


def _layers(p: np.ndarray) -> np.ndarray:
    """Layer unitaries for a batch: p has shape (..., 5), result (..., 4, 4)."""
    p = np.asarray(p, dtype=float)
    a, b = _rx(p[..., 0]), _rx(p[..., 1])
    X = (a[..., :, None, :, None] * b[..., None, :, None, :]).reshape(p.shape[:-1] + (4, 4))
    # diagonal part: R_Z(p5)_A R_Z(p4)_S R_ZZ(p3)
    zs = np.kron(_Z_DIAG, np.ones(2))
    za = np.kron(np.ones(2), _Z_DIAG)
    phase = p[..., 2, None] * _ZZ_DIAG + p[..., 3, None] * zs + p[..., 4, None] * za
    D = np.exp(-0.5j * phase)
    return D[..., :, None] * X


def layer_unitary(params, assignment=("S", "A")) -> LabeledOperator:
    """One ansatz layer as a 4x4 operator.

    ``assignment`` names the qubits in tensor order; the first receives p1 and
    p4, the second p2 and p5.
    """
    p = np.asarray(params, dtype=float)
    if p.shape != (PARAMS_PER_LAYER,):
        raise StructureError("a layer takes exactly 5 parameters")
    if len(assignment) != 2 or len(set(assignment)) != 2:
        raise StructureError("assignment must name two distinct qubits")
    return LabeledOperator((SpaceLabel(assignment[0], 2), SpaceLabel(assignment[1], 2)), _layers(p))


class OutcomeDistribution(NamedTuple):
    """Probabilities over outcomes |s a> (index 2s + a) and their omega derivative."""

    p: np.ndarray
    dp: np.ndarray


def _simulate(task: FrequencyTask, kind, params: np.ndarray, want_state: bool = False):
    """Batched propagation. params has shape (B, 5(N+1)).

    Returns amplitude arrays psi, dpsi of shape (B, branches, E, S, A).
    """
    kind = InteractionKind.parse(kind)
    N = task.N
    B = params.shape[0]
    L = _layers(params.reshape(B, N + 1, PARAMS_PER_LAYER))  # (B, N+1, 4, 4)
    U, dU = step_unitary_matrix(kind, task.g, task.tau, task.omega, task.t)
    U4, dU4 = U.reshape(2, 2, 2, 2), dU.reshape(2, 2, 2, 2)
    branches = env_branches(task.env_init or default_env_init(kind))
    nb = len(branches)
    psi = np.zeros((B, nb, 2, 4), dtype=complex)
    for j, (w, e) in enumerate(branches):
        psi[:, j, :, 0] = w * e
    dpsi = np.zeros_like(psi)
    for i in range(N):
        psi = np.einsum("bij,bkej->bkei", L[:, i], psi)
        dpsi = np.einsum("bij,bkej->bkei", L[:, i], dpsi)
        p5, d5 = psi.reshape(B, nb, 2, 2, 2), dpsi.reshape(B, nb, 2, 2, 2)
        psi, dpsi = (np.einsum("xyes,bkesa->bkxya", U4, p5).reshape(B, nb, 2, 4),
                     (np.einsum("xyes,bkesa->bkxya", U4, d5)
                      + np.einsum("xyes,bkesa->bkxya", dU4, p5)).reshape(B, nb, 2, 4))
    psi = np.einsum("bij,bkej->bkei", L[:, N], psi)
    dpsi = np.einsum("bij,bkej->bkei", L[:, N], dpsi)
    return psi, dpsi


def _distributions(task, kind, params):
    psi, dpsi = _simulate(task, kind, params)
    p = np.sum(np.abs(psi) ** 2, axis=(1, 2))
    dp = 2.0 * np.sum(np.real(np.conj(psi) * dpsi), axis=(1, 2))
    return p, dp


def output_distribution(task: FrequencyTask, kind, params) -> OutcomeDistribution:
    """Exact outcome probabilities on (S, A) and their analytic omega derivative."""
    p = _check_params(params, task.N)
    if p.ndim != 1:
        raise StructureError("params must be a flat vector")
    P, dP = _distributions(task, kind, p[None, :])
    return OutcomeDistribution(P[0], dP[0])


def pre_measurement_state(task: FrequencyTask, kind, params):
    """(rho, drho) on (S, A) just before the measurement."""
    p = _check_params(params, task.N)
    psi, dpsi = _simulate(task, kind, p[None, :])
    psi, dpsi = psi[0].reshape(-1, 4), dpsi[0].reshape(-1, 4)
    rho = psi.T @ psi.conj()
    drho = dpsi.T @ psi.conj() + psi.T @ dpsi.conj()
    sp = (SpaceLabel("S", 2), SpaceLabel("A", 2))
    return LabeledOperator(sp, rho), LabeledOperator(sp, drho)


def classical_fisher(d, eps: float = PROB_EPS) -> float:
    """F = sum over p_o > eps of dp_o^2 / p_o."""
    p, dp = np.asarray(d[0], dtype=float), np.asarray(d[1], dtype=float)
    m = p > eps
    return float(np.sum(dp[m] ** 2 / p[m]))


def _fisher_batch(task, kind, params):
    p, dp = _distributions(task, kind, params)
    safe = np.where(p > PROB_EPS, p, 1.0)
    return np.sum(np.where(p > PROB_EPS, dp ** 2 / safe, 0.0), axis=1)


def fisher(task: FrequencyTask, kind, params) -> float:
    return classical_fisher(output_distribution(task, kind, params))


def pre_measurement_qfi(task: FrequencyTask, kind, params) -> float:
    rho, drho = pre_measurement_state(task, kind, params)
    return state_qfi(rho, drho)


def fd_gradient(task: FrequencyTask, kind, params, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of the Fisher information (one batched pass)."""
    p = _check_params(params, task.N)
    n = p.size
    E = np.eye(n) * step
    pts = np.concatenate([p + E, p - E])
    F = _fisher_batch(task, kind, pts)
    return (F[:n] - F[n:]) / (2 * step)


@dataclass(frozen=True)
class VariationalConfig:
    restarts: int = 20
    max_iters: int = 400
    fd_step: float = 1e-5
    seed: int = 0
    grad_tol: float = 1e-7
    armijo: float = 1e-4
    workers: Optional[int] = None


class VariationalResult(NamedTuple):
    params: np.ndarray
    fisher: float
    trace: list
    converged: bool


def _ascend(task, kind, x0, cfg: VariationalConfig):
    x = x0.copy()
    f = float(_fisher_batch(task, kind, x[None])[0])
    trace = [f]
    alpha = 1.0
    converged = False
    for _ in range(cfg.max_iters):
        g = fd_gradient(task, kind, x, cfg.fd_step)
        gg = float(g @ g)
        if np.sqrt(gg) < cfg.grad_tol:
            converged = True
            break
        accepted = False
        for _ in range(50):
            xn = x + alpha * g
            fn = float(_fisher_batch(task, kind, xn[None])[0])
            if fn >= f + cfg.armijo * alpha * gg:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            converged = True  # no ascent direction left at this resolution
            break
        x, f = xn, fn
        trace.append(f)
        alpha = min(alpha * 2.0, 64.0)
    return x, f, trace, converged


def _restart(args):
    task, kind, seed_seq, cfg = args
    rng = np.random.default_rng(seed_seq)
    x0 = rng.uniform(-np.pi, np.pi, size=n_params(task.N))
    return _ascend(task, kind, x0, cfg)


def worker_count(requested: Optional[int] = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def optimize_probe(task: FrequencyTask, kind, config: Optional[VariationalConfig] = None) -> VariationalResult:
    """Maximize the classical Fisher information over the ansatz parameters.

    Each restart draws its start point from its own child of
    SeedSequence(seed), so results do not depend on the worker count.
    """
    cfg = config or VariationalConfig()
    if cfg.restarts < 1 or cfg.max_iters < 0 or cfg.fd_step <= 0:
        raise StructureError("restarts >= 1, max_iters >= 0 and fd_step > 0 are required")
    kind = InteractionKind.parse(kind)
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)
    jobs = [(task, kind, c, cfg) for c in children]
    workers = worker_count(cfg.workers)
    if workers > 1 and cfg.restarts > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_restart, jobs))
    else:
        runs = [_restart(j) for j in jobs]
    best = max(range(len(runs)), key=lambda i: (runs[i][1], -i))
    x, f, trace, conv = runs[best]
    return VariationalResult(x, f, trace, conv)
