import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from obstrade import core
from obstrade import metrology as M
from obstrade.analytic import bound_multi_analytic, bound_ozawa_pair, frobenius_bound
from obstrade.core import BasisChoice, ValidationError, moment_data

from conftest import rng_for, seeds

GOLD = 3 - (np.sqrt(np.sqrt(2) + 1) - 1) ** 2


def pure_family(d, n, rng):
    """rho_x = U(x)|psi><psi|U(x)^dag with U = exp(-i sum x_j H_j)."""
    psi = core.random_pure(d, rng).ket()
    hs = [core.random_hermitian(d, rng) for _ in range(n)]

    def state(x):
        w, v = np.linalg.eigh(sum(c * h for c, h in zip(x, hs)))
        ket = v @ (np.exp(-1j * w) * (v.conj().T @ psi))
        return np.outer(ket, ket.conj())

    return M.ParamFamily("rand_pure", n, state, dim=d)


def mixed_family(d, n, rng):
    base = core.random_mixed(d, rng).rho
    hs = [core.random_hermitian(d, rng) for _ in range(n)]
    gens = [core.random_hermitian(d, rng) for _ in range(n)]
    gens = [g - np.trace(g) / d * np.eye(d) for g in gens]

    def state(x):
        w, v = np.linalg.eigh(sum(c * h for c, h in zip(x, hs)))
        u = v @ np.diag(np.exp(-1j * w)) @ v.conj().T
        rho = 0.8 * base + 0.2 * np.eye(d) / d + 0.05 * sum(c * g for c, g in zip(x, gens))
        return u @ rho @ u.conj().T

    return M.ParamFamily("rand_mixed", n, state, dim=d)


# ---------------------------------------------------------------- SLD / QFI

def test_sld_isotropic():
    np.testing.assert_allclose(M.sld(np.eye(2) / 2, core.PAULI[0] / 2), core.PAULI[0], atol=1e-12)


@pytest.mark.parametrize("lam,th,ph", [(0.3, 1.1, 0.4), (-0.7, 2.0, 5.0), (0.95, np.pi / 2, 0.0)])
def test_qubit_sld_and_qfi(lam, th, ph):
    fam = M.qubit_bloch()
    x = [lam, th, ph]
    ls = fam.slds(x)
    n_sigma = M._dot_sigma(M._bloch(th, ph))
    np.testing.assert_allclose(ls[0], (n_sigma - lam * np.eye(2)) / (1 - lam ** 2), atol=1e-10)
    np.testing.assert_allclose(fam.qfi(x), np.diag([1 / (1 - lam ** 2), lam ** 2, lam ** 2 * np.sin(th) ** 2]),
                               atol=1e-10)


def test_sld_rejects_bad_derivative():
    with pytest.raises(ValidationError):
        M.sld(np.diag([1.0, 0.0]), np.diag([0.0, 1.0]))  # not traceless
    with pytest.raises(ValidationError):
        M.sld(np.diag([1.0, 0.0]), np.diag([-0.5, 0.5]))  # moves weight into the kernel


@settings(max_examples=10)
@given(seeds, st.sampled_from([2, 3, 4]))
def test_pure_sld_residual(seed, d):
    fam = pure_family(d, 2, rng_for(seed))
    x = rng_for(seed + 1).uniform(-1, 1, 2)
    rho = fam.state(x).rho
    for drho, ell in zip(fam.derivatives(x), fam.slds(x)):
        np.testing.assert_allclose(0.5 * (rho @ ell + ell @ rho), drho, atol=1e-8)


def test_single_parameter_pure_qfi_is_four_variance():
    rng = np.random.default_rng(7)
    h = core.random_hermitian(3, rng)
    psi = core.random_pure(3, rng).ket()

    def state(x):
        w, v = np.linalg.eigh(h)
        ket = v @ (np.exp(-1j * w * x[0]) * (v.conj().T @ psi))
        return np.outer(ket, ket.conj())

    fam = M.ParamFamily("evolve", 1, state, dim=3)
    var = (psi.conj() @ h @ h @ psi).real - (psi.conj() @ h @ psi).real ** 2
    assert fam.qfi([0.0])[0, 0] == pytest.approx(4 * var, rel=1e-6)


def test_three_qubit_qfi_blocks():
    fam = M.three_qubit()
    x = np.full(10, np.pi / 4)
    np.testing.assert_allclose(np.diag(fam.qfi(x))[:5], [4, 2, 1, 2, 1], atol=1e-10)
    rng = np.random.default_rng(3)
    x = rng.uniform(0.2, 1.4, 10)
    f5 = M.three_qubit_five(x).qfi(x[list(M.THREE_QUBIT_FIVE)])
    t0, t1 = x[0], x[1]
    np.testing.assert_allclose(f5[:3, :3], np.diag([4, 4 * np.sin(t0) ** 2, 4 * np.sin(t0) ** 2 * np.sin(t1) ** 2]),
                               atol=1e-9)


@pytest.mark.parametrize("fam", [M.qubit_bloch(), M.three_qubit(), M.spin1_p()], ids=lambda f: f.name)
def test_analytic_derivatives_match_finite_differences(fam):
    rng = np.random.default_rng(11)
    x = {"qubit_bloch": [0.6, 1.0, 0.7], "spin1_p": [0.37]}.get(fam.name, rng.uniform(0.2, 1.3, 10))
    ana = fam.derivatives(x)
    fd = M.finite_difference(fam.state_fn, np.asarray(x, float), 1e-5)
    for a, b in zip(ana, fd):
        assert np.abs(a - b).max() <= 1e-6 * max(1.0, np.abs(a).max())
        assert abs(np.trace(a)) < 1e-8


def test_domain_errors():
    with pytest.raises(ValidationError):
        M.qubit_bloch().state([1.2, 0, 0])
    with pytest.raises(ValidationError):
        M.spin1_p().state([1.5])
    with pytest.raises(ValidationError):
        M.qubit_bloch().state([0.1, 0.2])


@settings(max_examples=10)
@given(seeds)
def test_qfi_reparameterization_congruence(seed):
    rng = rng_for(seed)
    fam = mixed_family(3, 2, rng)
    j = rng.standard_normal((2, 2)) + 2 * np.eye(2)
    x0 = rng.uniform(-0.5, 0.5, 2)
    y0 = np.linalg.solve(j, x0)
    re = M.ParamFamily("re", 2, lambda y: fam.state_fn(j @ y), dim=3)
    f_x = _fd_qfi(fam, x0)
    f_y = _fd_qfi(re, y0)
    np.testing.assert_allclose(f_y, j.T @ f_x @ j, atol=1e-7 * max(1, np.abs(f_y).max()))


def _fd_qfi(fam, x):
    rho = fam.state(x).rho
    return M.qfi_matrix(rho, [M.sld(rho, d) for d in M.finite_difference(fam.state_fn, x, 1e-5, True)])


# ---------------------------------------------------------------- CFI

def test_cfi_trivial_cases():
    fam = M.qubit_bloch()
    x = [0.5, 1.0, 0.3]
    assert np.abs(M.cfi_matrix(fam, core.Povm((np.eye(2),)), x)).max() == 0
    # one parameter: projective measurement on the SLD eigenbasis saturates
    fam1 = M.spin1_p()
    ell = fam1.slds([0.3])[0]
    povm = core.projective_povm(np.linalg.eigh(ell)[1].T)
    assert M.cfi_matrix(fam1, povm, [0.3])[0, 0] == pytest.approx(fam1.qfi([0.3])[0, 0], rel=1e-10)


def test_cfi_singular_outcome_flagged():
    fam = M.ParamFamily("flip", 1, lambda x: np.diag([1 - x[0], x[0]]).astype(complex),
                        lambda x: [np.diag([-1.0, 1.0]).astype(complex)], dim=2)
    povm = core.Povm((np.diag([1.0, 0]), np.diag([0, 1.0])))
    with pytest.raises(ValidationError):
        M.cfi_matrix(fam, povm, [0.0])


@settings(max_examples=20)
@given(seeds, st.integers(2, 6))
def test_gill_massar_random_qubit_povms(seed, k):
    rng = rng_for(seed)
    fam = M.qubit_bloch()
    x = [rng.uniform(-0.95, 0.95), rng.uniform(0.2, 2.9), rng.uniform(0, 6)]
    povm = core.random_povm(2, k, rng)
    fc = M.cfi_matrix(fam, povm, x)
    fq = fam.qfi(x)
    assert np.trace(np.linalg.solve(fq, fc)) <= 1 + 1e-6
    assert np.linalg.eigvalsh(fq - fc)[0] >= -1e-7


@settings(max_examples=12)
@given(seeds, st.sampled_from([2, 3]), st.integers(2, 5))
def test_optimal_assignment_gives_fq_minus_fc(seed, d, k):
    rng = rng_for(seed)
    fam = mixed_family(d, 2, rng)
    x = rng.uniform(-0.5, 0.5, 2)
    rho = fam.state(x).rho
    derivs = fam.derivatives(x)
    slds = [M.sld(rho, dr) for dr in derivs]
    povm = core.random_povm(d, k, rng)
    am = M.optimal_sld_values(rho, derivs, povm)
    q = core.approx_error_matrix(rho, slds, am)
    np.testing.assert_allclose(q.real, M.qfi_matrix(rho, slds) - M.cfi_from_derivatives(rho, derivs, povm),
                               atol=1e-7)


@settings(max_examples=8)
@given(seeds, st.sampled_from([2, 3]), st.integers(2, 3))
def test_bound_ordering(seed, d, n):
    rng = rng_for(seed)
    fam = mixed_family(d, n, rng)
    x = rng.uniform(-0.5, 0.5, n)
    rho = fam.state(x).rho
    slds = fam.slds(x)
    fq = M.qfi_matrix(rho, slds)
    fc = M.cfi_matrix(fam, core.random_povm(d, 4, rng), x)
    sdp = M.metrology_bound_sdp(rho, slds)
    ana, _, _ = M.metrology_analytic_for_state(rho, slds)
    assert np.trace(np.linalg.solve(fq, fc)) <= sdp + 1e-6
    assert sdp <= ana + 1e-6
    assert 0 <= sdp <= n + 1e-9 and 0 <= ana <= n + 1e-9


# ---------------------------------------------------------------- bounds

def test_qubit_metrology_values():
    fam = M.qubit_bloch()
    x = [0.8, np.pi / 2, 0.0]
    rho, slds = fam.state(x).rho, fam.slds(x)
    ana, _, _ = M.metrology_analytic_for_state(rho, slds)
    assert ana == pytest.approx(GOLD, abs=1e-9)
    assert M.metrology_bound_sdp(rho, slds) == pytest.approx(1.0, abs=1e-3)


def test_analytic_commuting_is_n():
    assert M.metrology_bound_analytic(np.diag([2.0, 3.0]), np.zeros((2, 2))) == pytest.approx(2)
    with pytest.raises(ValidationError):
        M.metrology_bound_analytic(np.diag([1.0, 0.0]), np.zeros((2, 2)))


def test_three_qubit_values():
    x = np.full(10, np.pi / 4)
    fam10 = M.three_qubit()
    rho, slds = fam10.state(x).rho, fam10.slds(x)
    ana, _, _ = M.metrology_analytic_for_state(rho, slds)
    assert ana == pytest.approx(10 - (np.sqrt(np.sqrt(10) + 1) - 1) ** 2, abs=1e-6)
    fq = M.qfi_matrix(rho, slds)
    fam5 = M.three_qubit_five()
    rho5, slds5 = fam5.state(x[list(M.THREE_QUBIT_FIVE)]).rho, fam5.slds(x[list(M.THREE_QUBIT_FIVE)])
    ana5, t5, _ = M.metrology_analytic_for_state(rho5, slds5)
    assert ana5 == pytest.approx(5 - (np.sqrt(3) - 1) ** 2, abs=1e-6)
    assert M.pairwise_comparison_value(M.qfi_matrix(rho5, slds5), _s_im(rho5, slds5)) == pytest.approx(4.5, abs=1e-9)
    assert M.pairwise_comparison_value(fq, _s_im(rho, slds)) == pytest.approx(85 / 9, abs=1e-9)


def _s_im(rho, slds):
    # pure state: S~_Im is the plain imaginary moment
    n = len(slds)
    return np.array([[(np.trace(rho @ slds[j] @ slds[k])).imag for k in range(n)] for j in range(n)])


def test_two_param_bound_dominates_ozawa():
    fam = M.qubit_bloch()
    rng = np.random.default_rng(5)
    for _ in range(10):
        x = [rng.uniform(0.1, 0.95), rng.uniform(0.3, 2.8), rng.uniform(0, 6)]
        rho, slds = fam.state(x).rho, fam.slds(x)
        l1, l2 = slds[1], slds[2]
        w1, w2 = rng.uniform(0.5, 2, 2)
        ea = M.metrology_bound_two_param(rho, l1, l2, w1, w2)
        assert ea >= M.metrology_ozawa_two_param(rho, l1, l2, w1, w2) - 1e-9
    assert M.metrology_bound_two_param(np.diag([0.3, 0.7]), np.diag([1.0, 2]), np.diag([0.0, 1])) == pytest.approx(0)


def test_two_param_pure_matches_closed_form():
    fam = pure_family(3, 2, np.random.default_rng(9))
    x = [0.2, -0.4]
    rho, slds = fam.state(x).rho, fam.slds(x)
    psi = np.linalg.eigh(rho)[1][:, -1]
    from obstrade.analytic import bound_pure_pair_closed_form
    ref = bound_pure_pair_closed_form(psi, slds[0], slds[1]).value
    assert M.metrology_bound_two_param(rho, slds[0], slds[1]) == pytest.approx(ref, abs=1e-9)


# ---------------------------------------------------------------- collective

def test_collectivize_identity_and_guard():
    fam = M.qubit_bloch()
    assert M.collectivize(fam, 1) is fam
    with pytest.raises(ValidationError):
        M.collectivize(fam, 9)
    with pytest.raises(ValidationError):
        M.collectivize(fam, 0)


@pytest.mark.parametrize("copies", [2, 3])
def test_collective_qfi_additive(copies):
    fam = M.qubit_bloch()
    x = [0.6, 1.1, 0.4]
    np.testing.assert_allclose(M.collectivize(fam, copies).qfi(x), copies * fam.qfi(x), atol=1e-9)


@pytest.mark.parametrize("lam", [0.1, 0.3, 0.5, 0.7, 0.9, -0.6])
def test_collective_two_copy_bound(lam):
    fam = M.collectivize(M.qubit_bloch(), 2)
    x = [lam, np.pi / 2, 0.3]
    rho, slds = fam.state(x).rho, fam.slds(x)
    lt = M.normalized_slds(M.qfi_matrix(rho, slds), slds)
    closed = 3 - (np.sqrt(max(np.sqrt(2) * abs(lam), np.sqrt((1 + lam ** 2) / 2)) + 1) - 1) ** 2
    # the closed form is the computational basis with its best flags
    comp = max(bound_multi_analytic(moment_data(rho, lt, BasisChoice(np.eye(4), f))).witness["norm_term"]
               for f in itertools.product([False, True], repeat=4))
    assert 3 - frobenius_bound(comp) == pytest.approx(closed, abs=1e-9)
    ana, _, _ = M.metrology_analytic_for_state(rho, slds)
    assert ana <= closed + 1e-9
    assert M.metrology_bound_sdp(rho, slds) <= ana + 1e-6
