import numpy as np
import pytest

from combqfi.collision import (
    FrequencyTask,
    InteractionKind,
    Scenario,
    build_comb_family,
    step_unitary,
    step_unitary_matrix,
)
from combqfi.comb import link_product, validate_comb
from combqfi.errors import StructureError
from combqfi.tensor import LabeledOperator, SpaceLabel, identity, permute_systems, qubits

KINDS = [k.value for k in InteractionKind]
SCENARIOS = [s.value for s in Scenario]
SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]])


def unitary_choi(U, spaces):
    """Choi of a unitary from (spaces[0], spaces[1]) to (spaces[2], spaces[3])."""
    v = U.T.reshape(-1)
    return LabeledOperator(spaces, np.outer(v, v.conj()))


def explicit_nm_comb(kind, task, env_state):
    """Contract env state, N step unitaries and the final env trace with link products."""
    E = [SpaceLabel(f"E{k}", 2) for k in range(task.N + 1)]
    S = qubits(*range(1, 2 * task.N + 1))
    acc = LabeledOperator([E[0]], env_state)
    U, _ = step_unitary_matrix(kind, task.g, task.tau, task.omega, task.t)
    for k in range(task.N):
        # U acts on |e s>; input spaces (E_k, S_in), output (E_{k+1}, S_out)
        acc = link_product(acc, unitary_choi(U, [E[k], S[2 * k], E[k + 1], S[2 * k + 1]]))
    acc = link_product(acc, identity([E[task.N]]))
    return permute_systems(acc, S)


class TestStepUnitary:
    def test_swap_free(self):
        w, t = 0.7, 1.3
        U, _ = step_unitary_matrix("swap", 0.0, 0.9, w, t)
        ph = np.exp(-1j * w * t)
        assert np.allclose(U, np.diag([1, ph, 1, ph]))

    def test_swap_quarter(self):
        U, _ = step_unitary_matrix("swap", 1.0, np.pi / 2, 0.3, 0.0)
        assert np.allclose(U, -1j * SWAP)

    @pytest.mark.parametrize("kind", KINDS)
    def test_unitary(self, kind):
        rng = np.random.default_rng(3)
        for _ in range(5):
            g, tau, w, t = rng.uniform(0, 3, size=4)
            U = step_unitary(kind, g, tau, w, t).matrix
            assert np.abs(U.conj().T @ U - np.eye(4)).max() < 1e-12

    @pytest.mark.parametrize("kind", KINDS)
    def test_derivative(self, kind):
        g, tau, w, t, h = 0.8, 1.1, 0.4, 1.7, 1e-6
        _, dU = step_unitary_matrix(kind, g, tau, w, t)
        Up, _ = step_unitary_matrix(kind, g, tau, w + h, t)
        Um, _ = step_unitary_matrix(kind, g, tau, w - h, t)
        assert np.abs(dU - (Up - Um) / (2 * h)).max() < 1e-8

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            step_unitary_matrix("swap", np.nan, 1.0, 0.3, 1.0)


class TestFamilies:
    @pytest.mark.parametrize("kind", KINDS)
    def test_n1_scenarios_coincide(self, kind):
        task = FrequencyTask.from_total(2.3, 1)
        ops = [build_comb_family(s, kind, task).evaluate(task.omega)[0].op.matrix for s in SCENARIOS]
        for m in ops[1:]:
            assert np.abs(m - ops[0]).max() < 1e-10

    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("N", [1, 2, 3])
    def test_nm_control_is_a_comb(self, kind, N):
        task = FrequencyTask(0.3, 1.0, N, 0.9, 0.6)
        c, _ = build_comb_family("nm-control", kind, task).evaluate(0.3)
        assert validate_comb(c.op, c.structure, tol=1e-8).passed

    @pytest.mark.parametrize("scenario", SCENARIOS)
    def test_every_scenario_is_a_comb(self, scenario):
        task = FrequencyTask(0.3, 1.0, 3, 0.9, 0.6)
        c, _ = build_comb_family(scenario, "bitflip", task).evaluate(0.3)
        assert validate_comb(c.op, c.structure, tol=1e-8).passed

    @pytest.mark.parametrize("kind", KINDS)
    def test_nm_control_matches_link_products(self, kind):
        task = FrequencyTask(0.5, 0.7, 2, 1.1, 0.8)
        fam = build_comb_family("nm-control", kind, task)
        c, _ = fam.evaluate(task.omega)
        if kind == "bitflip":
            env = np.eye(2) / 2
        elif kind == "cnot-env":
            env = np.diag([1.0, 0.0])  # |+> lives in the rotated frame of the step unitary
        else:
            env = np.diag([1.0, 0.0])
        ref = explicit_nm_comb(kind, task, env)
        assert np.abs(c.op.matrix - ref.matrix).max() < 1e-9

    @pytest.mark.parametrize("kind", KINDS)
    def test_m_free_is_channel_squared(self, kind):
        one = FrequencyTask(0.4, 1.0, 1, 0.7, 0.9)
        two = FrequencyTask(0.4, 1.0, 2, 0.7, 0.9)
        c1, _ = build_comb_family("m-free", kind, one).evaluate(0.4)
        a = LabeledOperator(qubits("1", "m"), c1.op.matrix)
        b = LabeledOperator(qubits("m", "2"), c1.op.matrix)
        composed = link_product(a, b)
        c2, _ = build_comb_family("m-free", kind, two).evaluate(0.4)
        assert np.abs(permute_systems(composed, qubits("1", "2")).matrix - c2.op.matrix).max() < 1e-10

    @pytest.mark.parametrize("kind", KINDS)
    def test_m_control_is_tensor_power(self, kind):
        one = FrequencyTask(0.4, 1.0, 1, 0.7, 0.9)
        c1, _ = build_comb_family("m-control", kind, one).evaluate(0.4)
        c3, _ = build_comb_family("m-control", kind, FrequencyTask(0.4, 1.0, 3, 0.7, 0.9)).evaluate(0.4)
        m = c1.op.matrix
        assert np.abs(np.kron(np.kron(m, m), m) - c3.op.matrix).max() < 1e-10

    @pytest.mark.parametrize("scenario", SCENARIOS)
    @pytest.mark.parametrize("kind", KINDS)
    def test_analytic_derivatives(self, scenario, kind):
        task = FrequencyTask(0.4, 1.0, 2, 0.7, 0.9)
        fam = build_comb_family(scenario, kind, task)
        h = 1e-6
        v0, dv = fam.ensemble(0.4)
        vp, _ = fam.ensemble(0.4 + h)
        vm, _ = fam.ensemble(0.4 - h)
        assert np.abs(dv - (vp - vm) / (2 * h)).max() < 1e-8

    def test_bitflip_branches(self):
        task = FrequencyTask(0.4, 1.0, 2, 0.7, 0.9)
        v, _ = build_comb_family("nm-control", "bitflip", task).ensemble(0.4)
        assert v.shape[0] == 4  # final env basis times the two initial branches

    def test_noiseless_comb_is_pure(self):
        task = FrequencyTask(0.4, 0.0, 3, 0.7, 0.9)
        c, ens = build_comb_family("nm-control", "swap", task).evaluate(0.4)
        assert ens.compressed().q == 1


class TestParsing:
    def test_aliases(self):
        assert InteractionKind.parse("PartialSwap") is InteractionKind.PARTIAL_SWAP
        assert InteractionKind.parse("bitflip_xx") is InteractionKind.BITFLIP_XX
        assert Scenario.parse("NonMarkovControl") is Scenario.NON_MARKOV_CONTROL

    def test_unknown(self):
        with pytest.raises(StructureError):
            InteractionKind.parse("iswap")
        with pytest.raises(StructureError):
            build_comb_family("semi-markov", "swap", FrequencyTask.from_total(1.0, 1))

    def test_task_validation(self):
        with pytest.raises(StructureError):
            FrequencyTask(0.3, 1.0, 0, 1.0, 1.0)
        with pytest.raises(StructureError):
            FrequencyTask(0.3, 1.0, 1, -1.0, 1.0)
        t = FrequencyTask.from_total(6.0, 3)
        assert t.t == t.tau == 2.0 and t.t_tot == 6.0
