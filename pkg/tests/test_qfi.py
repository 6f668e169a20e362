import math

import numpy as np
import pytest

from combqfi.collision import FrequencyTask, build_comb_family, phase_channel_family
from combqfi.comb import CombFamily, ToothStructure, performance_operator, validate_comb
from combqfi.errors import ConstantRankError, StructureError, ValidationError
from combqfi.qfi import (
    Probe,
    border_matrix,
    channel_qfi,
    comb_qfi_dual,
    comb_qfi_min_entropy,
    conditional_min_entropy,
    fujiwara_imai_objective,
    min_entropy_objective,
    optimal_probe,
    probe_output,
    probe_qfi,
)
from combqfi.tensor import LabeledOperator, partial_trace

from conftest import random_hermitian

T = 1.7
W0 = 0.3


def swap_family(N, t_tot, scenario="nm-control", omega=math.pi / 10, g=1.0, kind="swap"):
    task = FrequencyTask.from_total(t_tot, N, omega, g)
    return build_comb_family(scenario, kind, task), task


def constant_family():
    v = np.array([[1.0, 0, 0, 1.0]])
    return CombFamily(ToothStructure.canonical(1), lambda th: (v, np.zeros_like(v)), name="constant")


class TestDual:
    def test_phase_channel(self):
        r = comb_qfi_dual(phase_channel_family(T), W0)
        assert r.J == pytest.approx(T ** 2, abs=1e-7)
        assert r.status == "optimal"
        assert r.J == pytest.approx(4 * r.lam)
        assert r.h_opt[0, 0].real == pytest.approx(-T / 2, abs=1e-4)

    def test_trivial_interaction(self):
        t_tot = 3.0
        f, task = swap_family(2, t_tot, g=math.pi / (t_tot / 2))
        assert comb_qfi_dual(f, task.omega).J == pytest.approx(t_tot ** 2, rel=1e-6)

    def test_omega_independence(self):
        f1, t1 = swap_family(2, 4.0, omega=math.pi / 10)
        f2, t2 = swap_family(2, 4.0, omega=math.pi / 3)
        assert abs(comb_qfi_dual(f1, t1.omega).J - comb_qfi_dual(f2, t2.omega).J) < 1e-6

    def test_dual_chain_is_a_comb(self):
        f, task = swap_family(3, 4.0)
        r = comb_qfi_dual(f, task.omega)
        assert len(r.S_blocks) == 2
        S2 = r.S_blocks[-1]
        assert validate_comb(S2, f.structure.prefix(2), tol=1e-6).passed

    def test_zero_derivative(self):
        r = comb_qfi_dual(constant_family(), 0.1)
        assert r.J == 0.0

    def test_rank_drop_refused(self):
        def ens(th):
            v = np.array([[1.0, 0, 0, 1.0], [0, 0.1 * th, 0, 0]])
            return v, np.array([[0, 0, 0, 0], [0, 0.1, 0, 0]], dtype=complex)

        f = CombFamily(ToothStructure.canonical(1), ens)
        with pytest.raises(ConstantRankError):
            comb_qfi_dual(f, 0.0)

    def test_clarabel_agrees(self):
        f, task = swap_family(2, 4.0)
        a = comb_qfi_dual(f, task.omega).J
        b = comb_qfi_dual(f, task.omega, backend="clarabel").J
        assert abs(a - b) < 1e-6

    def test_restriction_monotone(self):
        for t_tot in (2.0, 8.0):
            free, task = swap_family(2, t_tot, "nm-free")
            ctrl, _ = swap_family(2, t_tot, "nm-control")
            assert comb_qfi_dual(free, task.omega).J <= comb_qfi_dual(ctrl, task.omega).J + 1e-6


class TestMinEntropy:
    def test_phase_channel(self):
        assert comb_qfi_min_entropy(phase_channel_family(T), W0) == pytest.approx(T ** 2, abs=1e-7)

    def test_zero_derivative(self):
        assert comb_qfi_min_entropy(constant_family(), 0.1) == 0.0

    @pytest.mark.parametrize("scenario", ["nm-control", "m-control"])
    def test_agrees_with_dual(self, scenario):
        f, task = swap_family(2, 6.0, scenario)
        assert abs(comb_qfi_min_entropy(f, task.omega) - comb_qfi_dual(f, task.omega).J) < 1e-6

    def test_stalling_instance(self):
        # the dual residual used to drift upward near the optimum at this point
        f, task = swap_family(3, 6.65, "nm-control")
        assert abs(comb_qfi_min_entropy(f, task.omega) - comb_qfi_dual(f, task.omega).J) < 1e-6

    def test_examples(self):
        s1 = ToothStructure.canonical(1)
        assert conditional_min_entropy(LabeledOperator(s1.spaces, np.eye(4)), s1) == pytest.approx(0.0, abs=1e-12)
        phi = np.array([1, 0, 0, 1]) / np.sqrt(2)
        W = LabeledOperator(s1.spaces, 2 * np.outer(phi, phi))
        assert conditional_min_entropy(W, s1) == pytest.approx(-1.0, abs=1e-12)
        s2 = ToothStructure.canonical(2)
        assert conditional_min_entropy(LabeledOperator(s2.spaces, np.eye(16)), s2) == pytest.approx(-1.0, abs=1e-7)

    def test_scaling_law(self, rng):
        s = ToothStructure.canonical(2)
        a = rng.normal(size=(16, 4)) + 1j * rng.normal(size=(16, 4))
        W = a @ a.conj().T
        h1 = conditional_min_entropy(LabeledOperator(s.spaces, W), s)
        h3 = conditional_min_entropy(LabeledOperator(s.spaces, 3 * W), s)
        assert h3 == pytest.approx(h1 - math.log2(3), abs=1e-7)

    def test_n1_reduction(self, rng):
        s = ToothStructure.canonical(1)
        for _ in range(10):
            a = rng.normal(size=(4, 3)) + 1j * rng.normal(size=(4, 3))
            W = a @ a.conj().T
            ref = -math.log2(np.linalg.eigvalsh(W)[-1])
            assert abs(conditional_min_entropy(LabeledOperator(s.spaces, W), s) - ref) < 1e-9

    def test_rejects_non_hermitian(self):
        s = ToothStructure.canonical(1)
        with pytest.raises(ValidationError):
            conditional_min_entropy(LabeledOperator(s.spaces, np.triu(np.ones((4, 4)))), s)

    def test_gauge_stationarity(self, rng):
        f, task = swap_family(2, 4.0)
        r = comb_qfi_dual(f, task.omega)
        base = min_entropy_objective(r.ensemble, r.h_opt, f.structure)
        assert base == pytest.approx(r.J, abs=1e-6)
        q = r.ensemble.q
        for _ in range(5):
            d = random_hermitian(rng, q)
            d /= np.linalg.norm(d)
            val = min_entropy_objective(r.ensemble, r.h_opt + 1e-3 * d, f.structure)
            assert val >= base - 1e-6

    def test_untwirled_operator_gives_upper_bound(self):
        f, task = swap_family(2, 4.0)
        r = comb_qfi_dual(f, task.omega)
        s = f.structure
        om = performance_operator(r.ensemble, r.h_opt, s).op
        literal = s.d_out(1) * 2.0 ** (-conditional_min_entropy(om, s))
        assert literal >= r.J - 1e-6


class TestProbe:
    def test_phase_channel(self):
        f = phase_channel_family(T)
        p, v = optimal_probe(f, W0)
        assert v == pytest.approx(T ** 2, abs=1e-6)
        assert p.validate().passed
        # any balanced superposition is optimal
        assert p.op.matrix[0, 0].real == pytest.approx(0.5, abs=1e-4)
        assert probe_qfi(f, W0, p) == pytest.approx(T ** 2, abs=1e-5)

    @pytest.mark.parametrize("t_tot", [2.0, 4.0])
    def test_swap_n2(self, t_tot):
        f, task = swap_family(2, t_tot)
        r = comb_qfi_dual(f, task.omega)
        p, v = optimal_probe(f, task.omega, result=r)
        assert abs(v - r.J) < 1e-6
        assert p.validate(tol=1e-8).passed
        rho, _ = probe_output(f, task.omega, p)
        assert abs(rho.trace() - 1) < 1e-9 and rho.min_eigenvalue() > -1e-9
        assert abs(probe_qfi(f, task.omega, p) - r.J) < 1e-5

    def test_fixed_gauge_value(self):
        f, task = swap_family(2, 4.0)
        r = comb_qfi_dual(f, task.omega)
        _, v = optimal_probe(f, task.omega, result=r, method="fixed-gauge")
        assert abs(v - r.J) < 1e-6

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            optimal_probe(phase_channel_family(T), W0, method="guess")


class TestChannel:
    def test_phase_channel(self):
        J, h = channel_qfi(phase_channel_family(T), W0, return_gauge=True)
        assert J == pytest.approx(T ** 2, abs=1e-7)
        assert h[0, 0].real == pytest.approx(-T / 2, abs=1e-4)

    def test_fujiwara_imai_at_analytic_gauge(self):
        f = phase_channel_family(T)
        ens = f.decomposition(W0)
        assert fujiwara_imai_objective(ens, -T / 2, f.structure) == pytest.approx(T ** 2, abs=1e-12)
        assert fujiwara_imai_objective(ens, 0.0, f.structure) == pytest.approx(4 * T ** 2, abs=1e-12)

    def test_constant_channel(self):
        assert channel_qfi(constant_family(), 0.1) == 0.0

    def test_bitflip_step(self):
        task = FrequencyTask(math.pi / 10, 1.0, 1, 1.3, 0.9)
        f = build_comb_family("m-control", "bitflip", task)
        assert abs(channel_qfi(f, task.omega) - comb_qfi_dual(f, task.omega).J) < 1e-7

    def test_requires_one_tooth(self):
        f, task = swap_family(2, 2.0)
        with pytest.raises(StructureError):
            channel_qfi(f, task.omega)


def test_border_matrix_identity(rng):
    f, task = swap_family(2, 3.0)
    ens = f.decomposition(task.omega).compressed()
    h = random_hermitian(rng, ens.q)
    C = border_matrix(ens, h, f.structure)
    om = performance_operator(ens, h, f.structure).op
    assert np.abs(4 * C @ C.conj().T - partial_trace(om, ["4"]).matrix).max() < 1e-12


def test_probe_validation():
    s = ToothStructure.canonical(1).probe()
    bad = Probe(LabeledOperator(s.spaces, 2 * np.eye(2)), s)
    assert not bad.validate().passed
