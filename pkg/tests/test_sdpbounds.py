import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from obstrade import _kernels, core, sdpbounds
from obstrade.analytic import bound_mixed_pair_EA, bound_multi_analytic, bound_pure_pair_closed_form
from obstrade.core import BasisChoice, State, ValidationError, moment_data
from obstrade.experiment import pauli_halves, pure_setting
from obstrade.metrology import spin1_observables, spin1_state, three_qubit
from obstrade.models import mixed_gap
from obstrade.sdpbounds import (achieved_error, bound_e0, brute_force_min_error, build_e0, optimal_povm_pure,
                                optimal_povm_pure_two)
from obstrade.sdp import solve

from conftest import rng_for, seeds

cp = pytest.importorskip("cvxpy")
SX, SY, SZ = core.PAULI


def cvxpy_e0(rho, xs, w=None):
    """E_0 straight from its definition, uncompressed, solved by Clarabel (complex PSD variables)."""
    n, d = len(xs), rho.shape[0]
    w = np.eye(n) if w is None else w
    big = cp.Variable((d * (n + 1), d * (n + 1)), hermitian=True)
    cons = [big >> 0, big[:d, :d] == np.eye(d)]
    r = [big[d * (j + 1):d * (j + 2), :d] for j in range(n)]
    s = [[big[d * (j + 1):d * (j + 2), d * (k + 1):d * (k + 2)] for k in range(n)] for j in range(n)]
    for j in range(n):
        cons.append(r[j] == r[j].H)
        for k in range(j + 1, n):
            cons.append(s[j][k] == s[k][j])
    obj = 0
    for j in range(n):
        for k in range(n):
            if w[j, k]:
                term = s[j][k] - r[j] @ xs[k] - xs[j] @ r[k] + xs[j] @ xs[k]
                obj = obj + w[j, k] * cp.real(cp.trace(rho @ term))
    prob = cp.Problem(cp.Minimize(obj), cons)
    prob.solve(solver=cp.CLARABEL)
    return prob.value


# ---------------------------------------------------------------- build / bound

def test_lmi_sizes():
    pure = np.outer(pure_setting(np.pi / 4), pure_setting(np.pi / 4).conj())
    assert build_e0(pure, pauli_halves(), compress=False).lmi_size == 8
    assert build_e0(pure, pauli_halves()).lmi_size == 2 + 3
    fam = three_qubit()
    x = np.full(10, np.pi / 4)
    rho = fam.state(x).rho
    slds = fam.slds(x)
    assert build_e0(rho, slds, compress=False).lmi_size == 88
    assert build_e0(rho, slds).lmi_size == 18
    full = core.random_mixed(3, np.random.default_rng(0))
    assert build_e0(full, core.random_observables(3, 2, np.random.default_rng(1))).lmi_size == 9


def test_single_observable_zero():
    rho = core.random_mixed(3, np.random.default_rng(2))
    assert bound_e0(rho, [core.random_hermitian(3, np.random.default_rng(3))]).value == pytest.approx(0, abs=1e-7)


def test_commuting_zero():
    rho = core.random_mixed(3, np.random.default_rng(4))
    assert bound_e0(rho, [np.diag([1.0, 2, 3]), np.diag([2.0, 0, 1])]).value == pytest.approx(0, abs=1e-7)


@settings(max_examples=15)
@given(seeds, st.sampled_from([2, 3, 4]))
def test_pure_pair_closed_form(seed, d):
    rng = rng_for(seed)
    psi = core.random_pure(d, rng)
    x1, x2 = core.random_observables(d, 2, rng)
    w1, w2 = rng.uniform(0.2, 2.0, 2)
    closed = bound_pure_pair_closed_form(psi.ket(), x1, x2, w1, w2).value
    assert bound_e0(psi, [x1, x2], np.diag([w1, w2])).value == pytest.approx(closed, abs=1e-6)


def test_spin1_e0_dominates_half_pair_sum():
    xs = spin1_observables()
    for p in np.arange(0.05, 0.96, 0.05):
        rho = spin1_state(p)
        e0 = bound_e0(rho, xs).value
        half = 0.5 * sum(bound_mixed_pair_EA(rho, xs[j], xs[k]).value for j, k in ((0, 1), (1, 2), (2, 0)))
        assert e0 >= half - 1e-7


@settings(max_examples=10)
@given(seeds, st.sampled_from([2, 3]), st.integers(2, 3), st.integers(1, 3))
def test_witness_invariants(seed, d, n, rank):
    rng = rng_for(seed)
    rho = core.random_mixed(d, rng, min(rank, d))
    xs = core.random_observables(d, n, rng)
    wit = bound_e0(rho, xs)
    assert wit.check() >= -1e-7
    for j in range(n):
        np.testing.assert_allclose(wit.r_ops[j], wit.r_ops[j].conj().T, atol=1e-12)
        for k in range(n):
            np.testing.assert_allclose(wit.s_blocks[j, k], wit.s_blocks[k, j], atol=1e-12)
            np.testing.assert_allclose(wit.s_blocks[j, k], wit.s_blocks[j, k].conj().T, atol=1e-12)


@settings(max_examples=8)
@given(seeds, st.sampled_from([2, 3]), st.integers(2, 3))
def test_matches_cvxpy(seed, d, n):
    rng = rng_for(seed)
    rho = core.random_mixed(d, rng)
    xs = list(core.random_observables(d, n, rng))
    assert bound_e0(rho, xs).value == pytest.approx(cvxpy_e0(rho.rho, xs), abs=2e-6)


def test_compressed_gap_instance_matches_cvxpy():
    for p in (-0.8, 0.0, 0.8):
        prob = mixed_gap(p)
        ours = bound_e0(prob.rho, prob.observables).value
        ref = cvxpy_e0(prob.rho, list(prob.observables))
        assert ours == pytest.approx(ref, abs=1e-5)
    expected = {-0.8: 0.110037, 0.0: 0.196202, 0.8: 0.235519}
    for p, v in expected.items():
        prob = mixed_gap(p)
        assert bound_e0(prob.rho, prob.observables).value == pytest.approx(v, abs=2e-6)


def test_near_singular_state_rescaled():
    # lambda_min(rho) ~ 1e-3: the unscaled LMI stalls at relgap ~2e-7
    rng = np.random.default_rng(909)
    for _ in range(2):
        rho = core.random_mixed(3, rng)
        xs = list(core.random_observables(3, 3, rng))
    assert np.linalg.eigvalsh(rho.rho)[0] < 2e-3
    sol = solve(build_e0(rho, xs).problem)
    assert sol.status == "optimal"
    assert sol.residuals["primal"] < 1e-9
    assert sol.dual_value <= sol.objective_value <= sol.dual_value + 1e-6
    raw = solve(build_e0(rho, xs, rescale=False).problem)
    assert raw.objective_value == pytest.approx(sol.objective_value, abs=1e-6)
    wit = bound_e0(rho, xs)
    assert wit.check() > -1e-7


def test_rescale_keeps_value():
    rng = rng_for(5)
    for d, rank in ((2, 2), (3, 3), (3, 2), (4, 1)):
        rho = core.random_mixed(d, rng, rank)
        xs = list(core.random_observables(d, 3, rng))
        a = bound_e0(rho, xs)
        b = solve(build_e0(rho, xs, rescale=False).problem)
        assert a.value == pytest.approx(b.objective_value, abs=1e-6)
        assert a.check() > -1e-7


def test_stall_reports_near_optimal():
    rng = rng_for(1668)
    psi = core.random_pure(4, rng)
    xs = core.random_observables(4, 2, rng)
    g = rng.standard_normal((2, 2))
    sol = solve(build_e0(psi, xs, g @ g.T + 0.3 * np.eye(2)).problem)
    assert sol.usable
    assert sol.residuals["gap"] < 1e-6 and sol.residuals["primal"] < 1e-7


@settings(max_examples=10)
@given(seeds, st.sampled_from([2, 3]))
def test_e0_dominates_analytic_any_basis(seed, d):
    rng = rng_for(seed)
    rho = core.random_mixed(d, rng)
    xs = core.random_observables(d, 3, rng)
    flags = tuple(bool(f) for f in rng.integers(0, 2, d))
    ana = bound_multi_analytic(moment_data(rho, xs, BasisChoice(core.random_unitary(d, rng), flags))).value
    assert bound_e0(rho, xs).value >= ana - 1e-7


@settings(max_examples=8)
@given(seeds)
def test_monotone_in_weights(seed):
    rng = rng_for(seed)
    rho = core.random_mixed(3, rng)
    xs = core.random_observables(3, 2, rng)
    g = rng.standard_normal((2, 2))
    w = g @ g.T + np.eye(2)
    w_small = w - 0.5 * np.linalg.eigvalsh(w)[0] * np.eye(2)
    assert bound_e0(rho, xs, w_small).value <= bound_e0(rho, xs, w).value + 1e-7


@settings(max_examples=6)
@given(seeds)
def test_pairwise_dominance(seed):
    rng = rng_for(seed)
    rho = core.random_mixed(3, rng)
    xs = list(core.random_observables(3, 3, rng))
    pairs = sum(bound_e0(rho, [xs[j], xs[k]]).value for j, k in ((0, 1), (0, 2), (1, 2)))
    assert bound_e0(rho, xs).value >= pairs / 2 - 1e-6


# ---------------------------------------------------------------- optimal POVM

def test_povm_single_diagonal_observable():
    psi = np.array([0.6, 0.8j, 0])
    am = optimal_povm_pure(psi, [np.diag([1.0, -1.0, 2.0])])
    assert achieved_error(State.from_ket(psi).rho, [np.diag([1.0, -1.0, 2.0])], am) == pytest.approx(0, abs=1e-8)


def test_povm_qubit_pair_and_triple():
    psi = np.array([1.0, 0.0])
    xs = [SX / 2, SY / 2]
    am = optimal_povm_pure(psi, xs)
    assert achieved_error(np.diag([1.0, 0]), xs, am) == pytest.approx(0.25, abs=1e-6)
    ket = pure_setting(np.pi / 4)
    rho = np.outer(ket, ket.conj())
    wit = bound_e0(rho, pauli_halves())
    am3 = optimal_povm_pure(ket, pauli_halves(), witness=wit)
    assert achieved_error(rho, pauli_halves(), am3) == pytest.approx(wit.value, abs=1e-6)


@settings(max_examples=12)
@given(seeds, st.sampled_from([2, 3, 4]), st.integers(2, 3))
def test_povm_reproduces_r_action(seed, d, n):
    rng = rng_for(seed)
    psi = core.random_pure(d, rng)
    xs = core.random_observables(d, n, rng)
    g = rng.standard_normal((n, n))
    w = g @ g.T + 0.3 * np.eye(n)
    wit = bound_e0(psi, xs, w)
    am = optimal_povm_pure(psi.ket(), xs, w, wit)
    assert len(am.povm) <= n + 2 + (n if d < n + 1 else 0)
    assert achieved_error(psi.rho, xs, am, w) == pytest.approx(wit.value, abs=1e-6)
    if len(am.povm) <= n + 2:
        r, _ = am.operators()
        ket = psi.ket()
        for j in range(n):
            np.testing.assert_allclose(r[j] @ ket, wit.r_ops[j] @ ket, atol=1e-6)


def test_povm_rejects_mixed():
    with pytest.raises(ValidationError):
        optimal_povm_pure(np.eye(2) / 2, [SX, SY])
    with pytest.raises(ValidationError):
        optimal_povm_pure_two(np.eye(2) / 2, SX, SY)


def test_two_closed_form_examples():
    # alpha = |beta| here, so this goes through the SDP fallback
    am = optimal_povm_pure_two(np.array([1.0, 0]), SX / 2, SY / 2)
    assert achieved_error(np.diag([1.0, 0]), [SX / 2, SY / 2], am) == pytest.approx(0.25, abs=1e-7)
    am0 = optimal_povm_pure_two(np.array([1.0, 0]), SZ, np.diag([2.0, 0.0]))
    assert achieved_error(np.diag([1.0, 0]), [SZ, np.diag([2.0, 0.0])], am0) == pytest.approx(0, abs=1e-9)


@settings(max_examples=15)
@given(seeds, st.sampled_from([2, 3, 4]))
def test_two_closed_form_agrees_with_sdp_route(seed, d):
    rng = rng_for(seed)
    psi = core.random_pure(d, rng)
    x1, x2 = core.random_observables(d, 2, rng)
    a = achieved_error(psi.rho, [x1, x2], optimal_povm_pure_two(psi.ket(), x1, x2))
    b = achieved_error(psi.rho, [x1, x2], optimal_povm_pure(psi.ket(), [x1, x2]))
    assert a == pytest.approx(b, abs=1e-6)


# ---------------------------------------------------------------- oracle

def test_oracle_commuting_and_pure():
    rho = core.random_mixed(2, np.random.default_rng(5))
    res = brute_force_min_error(rho, [SZ, np.diag([1.0, 3.0])], restarts=2, seed=0)
    assert res.best_error == pytest.approx(0, abs=1e-6)
    psi = core.random_pure(2, np.random.default_rng(6))
    xs = [SX / 2, SY / 2]
    res = brute_force_min_error(psi, xs, restarts=3, seed=0)
    assert res.best_error == pytest.approx(bound_e0(psi, xs).value, abs=1e-4)


def test_oracle_deterministic_and_above_e0():
    prob = mixed_gap(0.4)
    a = brute_force_min_error(prob.rho, prob.observables, restarts=2, seed=3, maxiter=4000, passes=1)
    b = brute_force_min_error(prob.rho, prob.observables, restarts=2, seed=3, maxiter=4000, passes=1)
    assert a.best_error == b.best_error
    np.testing.assert_array_equal(a.best_povm.outcomes[0], b.best_povm.outcomes[0])
    assert a.best_error >= bound_e0(prob.rho, prob.observables).value - 1e-6
    assert len(a.best_povm) == 4


@settings(max_examples=10)
@given(seeds, st.sampled_from([2, 3]), st.integers(2, 4))
def test_kernel_matches_numpy_model(seed, d, k):
    rng = rng_for(seed)
    rho = core.random_mixed(d, rng).rho
    xs = core.random_observables(d, 2, rng).observables
    w = np.diag(rng.uniform(0.5, 2, 2))
    theta = rng.standard_normal(k * d * d)
    ms = sdpbounds._Param(k, d)(theta)
    model = sdpbounds._ErrorModel(rho, xs, w)
    direct = model(ms)
    # third route: the core error matrix with the optimal assignment
    povm = core.Povm(tuple(herm_fix(ms)))
    am = core.optimal_values_for_povm(rho, xs, povm)
    via_core = achieved_error(rho, xs, am, w)
    xrho = np.array([x @ rho for x in xs])
    args = (k, d, np.ascontiguousarray(rho), xrho, np.ascontiguousarray(w), model.const, core.ZERO_PROB)
    assert _kernels.oracle_error(theta, *args) == pytest.approx(direct, abs=1e-10)
    assert _kernels.oracle_error_py(theta, *args) == pytest.approx(direct, abs=1e-10)
    assert via_core == pytest.approx(direct, abs=1e-9)


def herm_fix(ms):
    ms = np.array(ms)
    ms[-1] += np.eye(ms.shape[1]) - ms.sum(axis=0)
    return core.herm(ms)


@pytest.mark.parametrize("budget", [150, 500, 1201, 3000])
def test_compiled_nelder_mead_matches_scipy(budget):
    prob = mixed_gap(0.4)
    rho = prob.rho
    model = sdpbounds._ErrorModel(rho, prob.observables, np.eye(2))
    xrho = np.array([x @ rho for x in prob.observables])
    args = (4, 4, np.ascontiguousarray(rho), xrho, np.eye(2), model.const, core.ZERO_PROB)
    x0 = np.random.default_rng(0).standard_normal(64)
    x_c, f_c, n_c = _kernels.nelder_mead(x0, budget, 1e-10, 1e-13, *args)
    ref = minimize(lambda t: _kernels.oracle_error(t, *args), x0, method="Nelder-Mead",
                   options={"maxfev": budget, "maxiter": 10 * budget, "xatol": 1e-10, "fatol": 1e-13,
                            "adaptive": True})
    assert n_c == ref.nfev
    assert f_c == pytest.approx(ref.fun, abs=1e-12)
    np.testing.assert_allclose(x_c, ref.x, atol=1e-12)
    if budget <= 500:
        x_p, f_p, _ = _kernels.nelder_mead_py(x0, budget, 1e-10, 1e-13, *args)
        np.testing.assert_allclose(x_p, x_c, atol=1e-12)
