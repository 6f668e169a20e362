"""Collision-model comb families for frequency estimation.

A qubit system S with Hamiltonian omega |1><1| repeatedly collides with a qubit
environment E. One step is U = U_int(tau) (1_E (x) exp(-i H t)) on E (x) S,
with basis order |e s>. The estimated parameter is omega.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .comb import CombFamily, ToothStructure
from .errors import StructureError
from .tensor import LabeledOperator, SpaceLabel

_SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)
_CNOT_E = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
_CNOT_S = np.array([[1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0], [0, 1, 0, 0]], dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_XX = np.kron(_X, _X)
_HAD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)


class InteractionKind(str, enum.Enum):
    PARTIAL_SWAP = "swap"
    PARTIAL_CNOT_ENV_CONTROL = "cnot-env"
    PARTIAL_CNOT_SYS_CONTROL = "cnot-sys"
    BITFLIP_XX = "bitflip"

    @classmethod
    def parse(cls, value) -> "InteractionKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {
            "partial-swap": "swap", "partialswap": "swap",
            "cnot-e": "cnot-env", "partialcnotenvcontrol": "cnot-env",
            "cnot-s": "cnot-sys", "partialcnotsyscontrol": "cnot-sys",
            "bitflip-xx": "bitflip", "bitflipxx": "bitflip", "xx": "bitflip",
        }
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise StructureError(f"unknown interaction {value!r}; choose from {[k.value for k in cls]}") from None


class Scenario(str, enum.Enum):
    NON_MARKOV_CONTROL = "nm-control"
    NON_MARKOV_FREE = "nm-free"
    MARKOV_CONTROL = "m-control"
    MARKOV_FREE = "m-free"

    @classmethod
    def parse(cls, value) -> "Scenario":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"nonmarkovcontrol": "nm-control", "nonmarkovfree": "nm-free",
                   "markovcontrol": "m-control", "markovfree": "m-free"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise StructureError(f"unknown scenario {value!r}; choose from {[s.value for s in cls]}") from None


@dataclass(frozen=True)
class FrequencyTask:
    """Experiment descriptor; ``env_init`` is None (interaction default), "0", "+" or "mixed"."""

    omega: float
    g: float
    N: int
    t: float
    tau: float
    env_init: Optional[str] = None

    def __post_init__(self):
        if self.N < 1:
            raise StructureError("N must be a positive integer")
        if self.t < 0 or self.tau < 0:
            raise StructureError("t and tau must be nonnegative")
        if self.env_init not in (None, "0", "+", "mixed"):
            raise StructureError(f"unknown environment initialisation {self.env_init!r}")

    @classmethod
    def from_total(cls, t_tot: float, N: int, omega: float = np.pi / 10, g: float = 1.0, env_init=None):
        """Default schedule t = tau = t_tot / N."""
        return cls(omega=float(omega), g=float(g), N=int(N), t=t_tot / N, tau=t_tot / N, env_init=env_init)

    @property
    def t_tot(self) -> float:
        return self.N * self.t

    def with_omega(self, omega: float) -> "FrequencyTask":
        return replace(self, omega=float(omega))


def _interaction(kind: InteractionKind, g: float, tau: float) -> np.ndarray:
    gen = {
        InteractionKind.PARTIAL_SWAP: _SWAP,
        InteractionKind.PARTIAL_CNOT_ENV_CONTROL: _CNOT_E,
        InteractionKind.PARTIAL_CNOT_SYS_CONTROL: _CNOT_S,
        InteractionKind.BITFLIP_XX: _XX,
    }[kind]
    # every generator squares to the identity
    return np.cos(g * tau) * np.eye(4) - 1j * np.sin(g * tau) * gen


def _basis_change(kind: InteractionKind) -> Optional[np.ndarray]:
    if kind is InteractionKind.PARTIAL_CNOT_ENV_CONTROL:
        return np.kron(_HAD, np.eye(2))
    return None


def step_unitary_matrix(kind, g, tau, omega, t) -> tuple[np.ndarray, np.ndarray]:
    """(U, dU/domega) as 4x4 arrays on E (x) S."""
    kind = InteractionKind.parse(kind)
    vals = np.array([g, tau, omega, t], dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("step parameters must be finite")
    ph = np.exp(-1j * omega * t)
    free = np.kron(np.eye(2), np.diag([1.0, ph]))
    dfree = np.kron(np.eye(2), np.diag([0.0, -1j * t * ph]))
    Ui = _interaction(kind, g, tau)
    U, dU = Ui @ free, Ui @ dfree
    B = _basis_change(kind)
    if B is not None:
        U = B.conj().T @ U @ B
        dU = B.conj().T @ dU @ B
    return U, dU


def step_unitary(kind, g, tau, omega, t) -> LabeledOperator:
    U, _ = step_unitary_matrix(kind, g, tau, omega, t)
    return LabeledOperator((SpaceLabel("E", 2), SpaceLabel("S", 2)), U)


def default_env_init(kind: InteractionKind) -> str:
    return "mixed" if InteractionKind.parse(kind) is InteractionKind.BITFLIP_XX else "0"


def env_branches(init: str) -> list[tuple[float, np.ndarray]]:
    """Purification branches (weight, env state) of the initial environment."""
    if init == "0":
        return [(1.0, np.array([1.0, 0.0], dtype=complex))]
    if init == "+":
        return [(1.0, np.array([1.0, 1.0], dtype=complex) / np.sqrt(2))]
    if init == "mixed":
        s = 1.0 / np.sqrt(2)
        return [(s, np.array([1.0, 0.0], dtype=complex)), (s, np.array([0.0, 1.0], dtype=complex))]
    raise StructureError(f"unknown environment initialisation {init!r}")


def _kraus_with_derivatives(U, dU, branches):
    """Kraus operators <i|U|psi_j> (times branch weight) on S, with derivatives."""
    U4 = U.reshape(2, 2, 2, 2)
    dU4 = dU.reshape(2, 2, 2, 2)
    K, dK = [], []
    for i in range(2):
        for w, psi in branches:
            K.append(w * np.einsum("oem,e->om", U4[i], psi))
            dK.append(w * np.einsum("oem,e->om", dU4[i], psi))
    return np.array(K), np.array(dK)


def _choi_vec(K):
    """|C>[m, o] = K[o, m] for a stack of Kraus matrices."""
    return np.swapaxes(K, -1, -2).reshape(K.shape[0], -1)


def _nm_control(U, dU, N, branches):
    U4 = U.reshape(2, 2, 2, 2)
    dU4 = dU.reshape(2, 2, 2, 2)
    vecs, ders = [], []
    for w, psi in branches:
        T = w * psi.copy()  # index: current env, then (m1, o2, ...)
        dT = np.zeros_like(T)
        for _ in range(N):
            # T'[f, ..., m, o] = sum_e U[f, o, e, m] T[e, ...]
            T, dT = (np.einsum("foem,e...->f...mo", U4, T),
                     np.einsum("foem,e...->f...mo", U4, dT) + np.einsum("foem,e...->f...mo", dU4, T))
        vecs.append(T.reshape(2, -1))
        ders.append(dT.reshape(2, -1))
    return np.concatenate(vecs), np.concatenate(ders)


def _kron_rows(A, B):
    return (A[:, None, :, None] * B[None, :, None, :]).reshape(A.shape[0] * B.shape[0], -1)


def build_comb_family(scenario, kind, task: FrequencyTask) -> CombFamily:
    """Comb family in omega for one of the four scenarios."""
    scenario = Scenario.parse(scenario)
    kind = InteractionKind.parse(kind)
    init = task.env_init or default_env_init(kind)
    branches = env_branches(init)
    N = task.N

    def steps(omega):
        return step_unitary_matrix(kind, task.g, task.tau, omega, task.t)

    if scenario is Scenario.NON_MARKOV_CONTROL:
        structure = ToothStructure.canonical(N)

        def ensemble(omega):
            U, dU = steps(omega)
            return _nm_control(U, dU, N, branches)

    elif scenario is Scenario.NON_MARKOV_FREE:
        structure = ToothStructure.canonical(1)

        def ensemble(omega):
            U, dU = steps(omega)
            Ut = np.eye(4, dtype=complex)
            dUt = np.zeros((4, 4), dtype=complex)
            for _ in range(N):
                Ut, dUt = U @ Ut, dU @ Ut + U @ dUt
            K, dK = _kraus_with_derivatives(Ut, dUt, branches)
            return _choi_vec(K), _choi_vec(dK)

    elif scenario is Scenario.MARKOV_CONTROL:
        structure = ToothStructure.canonical(N)

        def ensemble(omega):
            U, dU = steps(omega)
            K, dK = _kraus_with_derivatives(U, dU, branches)
            c, dc = _choi_vec(K), _choi_vec(dK)
            V, dV = c, dc
            for _ in range(N - 1):
                V, dV = _kron_rows(V, c), _kron_rows(dV, c) + _kron_rows(V, dc)
            return V, dV

    else:
        structure = ToothStructure.canonical(1)

        def ensemble(omega):
            U, dU = steps(omega)
            K, dK = _kraus_with_derivatives(U, dU, branches)
            P = np.eye(2, dtype=complex)[None]
            dP = np.zeros_like(P)
            for _ in range(N):
                # later steps multiply from the left
                P, dP = (np.einsum("iab,jbc->jiac", K, P).reshape(-1, 2, 2),
                         (np.einsum("iab,jbc->jiac", dK, P) + np.einsum("iab,jbc->jiac", K, dP)).reshape(-1, 2, 2))
            return _choi_vec(P), _choi_vec(dP)

    name = f"{scenario.value}/{kind.value}/N={N}"
    return CombFamily(structure, ensemble, "analytic", domain=(0.0, 2 * np.pi), name=name)


def phase_channel_family(t: float) -> CombFamily:
    """Noiseless one-tooth phase channel exp(-i omega t |1><1|)."""

    def ensemble(omega):
        ph = np.exp(-1j * omega * t)
        v = np.array([[1.0, 0.0, 0.0, ph]])
        dv = np.array([[0.0, 0.0, 0.0, -1j * t * ph]])
        return v, dv

    return CombFamily(ToothStructure.canonical(1), ensemble, "analytic", name=f"phase(t={t})")
