"""The 13 acceptance criteria, one test each, at their stated tolerances.

Each test records a `CRITERION k: PASS|FAIL ...` line; pytest prints them in
the terminal summary.  `python3 tests/test_acceptance.py` runs the file alone.
"""

import time

import numpy as np
import pytest

from obstrade import core, experiment as ex, metrology as M
from obstrade.analytic import (bound_mixed_pair_EA, bound_multi, bound_multi_analytic, bound_ozawa_pair,
                               bound_pure_pair_closed_form, pairwise_sum_bound, qubit_optimal_basis)
from obstrade.core import BasisChoice, moment_data
from obstrade.models import build_model, mixed_gap
from obstrade.sdp import self_test
from obstrade.sdpbounds import achieved_error, bound_e0, brute_force_min_error, optimal_povm_pure

from conftest import ACCEPTANCE

GRID = np.round(np.arange(0.1, 0.95, 0.1), 10)
SPIN = M.spin1_observables()
QUBIT_TRIPLE = 0.25 * (np.sqrt(np.sqrt(2) + 1) - 1) ** 2


def record(k, ok, detail):
    line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def random_weight(n, rng):
    g = rng.standard_normal((n, n))
    return g @ g.T + 0.2 * np.eye(n)


def test_criterion_01_spin1_closed_forms():
    t0 = time.perf_counter()
    worst = 0.0
    for p in GRID:
        rho = M.spin1_state(p)
        x1, x2, x3 = SPIN
        want = {
            "EA12": p, "EA23": (4 - 3 * p - abs(4 - 5 * p)) / 4, "EA31": (4 - 3 * p - abs(4 - 5 * p)) / 4,
            "Oz12": 2 - p - 2 * np.sqrt(1 - p), "Oz23": 1 - np.sqrt(1 - p * (1 - p)),
        }
        got = {
            "EA12": bound_mixed_pair_EA(rho, x1, x2).value, "EA23": bound_mixed_pair_EA(rho, x2, x3).value,
            "EA31": bound_mixed_pair_EA(rho, x3, x1).value,
            "Oz12": bound_ozawa_pair(rho, x1, x2).value, "Oz23": bound_ozawa_pair(rho, x2, x3).value,
        }
        worst = max(worst, max(abs(got[k] - want[k]) for k in want))
    dt = time.perf_counter() - t0
    record(1, worst <= 1e-9 and dt < 1, f"max dev {worst:.2e}, {dt:.2f}s")


def test_criterion_02_fig2_ordering():
    t0 = time.perf_counter()
    slack, gap_half = np.inf, None
    x1, x2 = SPIN[:2]
    for p in GRID:
        rho = M.spin1_state(p)
        e0 = bound_e0(rho, [x1, x2]).value
        ea = bound_mixed_pair_EA(rho, x1, x2).value
        oz = bound_ozawa_pair(rho, x1, x2).value
        slack = min(slack, e0 - ea, ea - oz)
        if abs(p - 0.5) < 1e-9:
            gap_half = e0 - ea
    dt = time.perf_counter() - t0
    record(2, slack >= -1e-7 and gap_half > 0 and dt < 30,
           f"min slack {slack:.2e}, E0-EA at p=0.5 {gap_half:.4f}, {dt:.1f}s")


def test_criterion_03_pure_tightness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    worst = 0.0
    for i in range(100):
        d, n = int(rng.choice([2, 3, 4])), int(rng.choice([2, 3]))
        psi = core.random_pure(d, rng)
        xs = core.random_observables(d, n, rng)
        w = random_weight(n, rng)
        wit = bound_e0(psi, xs, w)
        am = optimal_povm_pure(psi.ket(), xs, w, wit)
        worst = max(worst, abs(achieved_error(psi.rho, xs, am, w) - wit.value))
    dt = time.perf_counter() - t0
    record(3, worst <= 1e-6 and dt < 120, f"max |achieved-E0| {worst:.2e} over 100, {dt:.1f}s")


def test_criterion_04_two_observable_closed_form():
    t0 = time.perf_counter()
    rng = np.random.default_rng(404)
    worst = 0.0
    for i in range(100):
        d = int(rng.choice([2, 3, 4]))
        psi = core.random_pure(d, rng)
        x1, x2 = core.random_observables(d, 2, rng)
        w1, w2 = rng.uniform(0.2, 3.0, 2)
        closed = bound_pure_pair_closed_form(psi.ket(), x1, x2, w1, w2).value
        worst = max(worst, abs(closed - bound_e0(psi, [x1, x2], np.diag([w1, w2])).value))
    dt = time.perf_counter() - t0
    record(4, worst <= 1e-6 and dt < 60, f"max dev {worst:.2e} over 100, {dt:.1f}s")


def test_criterion_05_qubit_pauli_triple():
    rng = np.random.default_rng(505)
    xs = [s / 2 for s in core.PAULI]
    vecs = [np.zeros(3), np.array([0, 0, 1.0]), np.array([1.0, 0, 0])]
    for _ in range(47):
        v = rng.standard_normal(3)
        vecs.append(v / np.linalg.norm(v) * rng.uniform(0, 1) ** (1 / 3))
    worst = 0.0
    for r in vecs:
        rho = 0.5 * (np.eye(2) + sum(c * s for c, s in zip(r, core.PAULI)))
        basis, _ = qubit_optimal_basis(rho, xs)
        worst = max(worst, abs(bound_multi_analytic(moment_data(rho, xs, basis)).value - QUBIT_TRIPLE))
    record(5, worst <= 1e-9, f"target {QUBIT_TRIPLE:.7f}, max dev {worst:.2e} over {len(vecs)} Bloch vectors")


def test_criterion_06_metrology_qubit():
    t0 = time.perf_counter()
    fam = M.qubit_bloch()
    target = 3 - (np.sqrt(np.sqrt(2) + 1) - 1) ** 2
    dev_a = dev_s = 0.0
    for lam in (0.3, 0.6, 0.9):
        x = [lam, np.pi / 2, 0.0]
        rho, slds = fam.state(x).rho, fam.slds(x)
        dev_a = max(dev_a, abs(M.metrology_analytic_for_state(rho, slds)[0] - target))
        dev_s = max(dev_s, abs(M.metrology_bound_sdp(rho, slds) - 1.0))
    dt = time.perf_counter() - t0
    record(6, dev_a <= 1e-9 and dev_s <= 1e-3 and dt < 10,
           f"analytic dev {dev_a:.2e}, sdp dev from 1 {dev_s:.2e}, {dt:.2f}s")


def _s_im(rho, slds):
    n = len(slds)
    return np.array([[np.trace(rho @ slds[j] @ slds[k]).imag for k in range(n)] for j in range(n)])


def test_criterion_07_three_qubit():
    x = np.full(10, np.pi / 4)
    fam10, fam5 = M.three_qubit(), M.three_qubit_five()
    x5 = x[list(M.THREE_QUBIT_FIVE)]
    rho10, l10 = fam10.state(x).rho, fam10.slds(x)
    rho5, l5 = fam5.state(x5).rho, fam5.slds(x5)
    a5 = M.metrology_analytic_for_state(rho5, l5)[0]
    a10 = M.metrology_analytic_for_state(rho10, l10)[0]
    c5 = M.pairwise_comparison_value(M.qfi_matrix(rho5, l5), _s_im(rho5, l5))
    c10 = M.pairwise_comparison_value(M.qfi_matrix(rho10, l10), _s_im(rho10, l10))
    s5 = M.metrology_bound_sdp(rho5, l5)
    t0 = time.perf_counter()
    s10 = M.metrology_bound_sdp(rho10, l10)
    dt = time.perf_counter() - t0
    ok = (abs(a5 - (5 - (np.sqrt(3) - 1) ** 2)) <= 1e-6
          and abs(a10 - (10 - (np.sqrt(np.sqrt(10) + 1) - 1) ** 2)) <= 1e-6
          and abs(c5 - 4.5) <= 1e-9 and abs(c10 - 85 / 9) <= 1e-9
          and abs(s5 - 3) <= 0.1 and abs(s10 - 5) <= 0.1 and dt < 300)
    record(7, ok, f"analytic {a5:.6f}/{a10:.6f}, comparison {c5:.9f}/{c10:.9f}, "
                  f"sdp {s5:.6f}/{s10:.6f}, 10-param SDP {dt:.2f}s")


GAP_GRID = (-0.8, -0.4, 0.0, 0.4, 0.8)


@pytest.mark.slow
def test_criterion_08_mixed_gap():
    margins = {}
    times = []
    for seed in (1, 2):
        t0 = time.perf_counter()
        for p in GAP_GRID:
            prob = mixed_gap(p)
            e0 = bound_e0(prob.rho, prob.observables).value
            res = brute_force_min_error(prob.rho, prob.observables, restarts=32, seed=seed)
            margins[(seed, p)] = res.best_error - e0
        times.append(time.perf_counter() - t0)
    stable = [p for p in GAP_GRID
              if min(margins[(1, p)], margins[(2, p)]) > 1e-4 and abs(margins[(1, p)] - margins[(2, p)]) < 1e-4]
    detail = ", ".join(f"p={p:+.1f}:{margins[(1, p)]:.4f}/{margins[(2, p)]:.4f}" for p in GAP_GRID)
    record(8, len(stable) >= len(GAP_GRID) / 2 and max(times) < 600,
           f"gap (seed1/seed2) {detail}; stable on {len(stable)}/{len(GAP_GRID)}, {max(times):.0f}s per seed")


def test_criterion_09_pairwise_dominance():
    rng = np.random.default_rng(909)
    worst = np.inf
    for _ in range(50):
        rho = core.random_mixed(3, rng)
        xs = list(core.random_observables(3, 3, rng))
        pairs = sum(bound_e0(rho, [xs[j], xs[k]]).value for j, k in ((0, 1), (0, 2), (1, 2)))
        worst = min(worst, bound_e0(rho, xs).value - pairs / 2)
    record(9, worst >= -1e-6, f"min E0(3) - pair sum/2 = {worst:.2e} over 50")


def test_criterion_10_n5_pure_comparison():
    rng = np.random.default_rng(1010)
    worst = np.inf
    for _ in range(50):
        psi = core.random_pure(4, rng)
        xs = [x - np.trace(psi.rho @ x).real * np.eye(4) for x in core.random_observables(4, 5, rng)]
        inv = core.psd_power(moment_data(psi, xs).s_re, -0.5)
        xn = [sum(inv[j, k] * xs[k] for k in range(5)) for j in range(5)]
        assert np.abs(moment_data(psi, xn).s_re - np.eye(5)).max() < 1e-9
        worst = min(worst, bound_multi(psi, xn).value - pairwise_sum_bound(psi, xn, None, "ozawa").value)
    record(10, worst >= -1e-9, f"min analytic - pairwise Ozawa = {worst:.3e} over 50")


def test_criterion_11_robertson_refinement():
    rng = np.random.default_rng(1111)
    worst = np.inf
    for _ in range(200):
        d = int(rng.choice([2, 3, 4]))
        n = int(rng.integers(2, 5))
        rho = core.random_mixed(d, rng, int(rng.integers(1, d + 1)))
        xs = core.random_observables(d, n, rng)
        flags = tuple(bool(f) for f in rng.integers(0, 2, d))
        md = moment_data(rho, xs, BasisChoice(core.random_unitary(d, rng), flags))
        worst = min(worst, np.linalg.eigvalsh(md.s_tilde)[0])
    record(11, worst >= -1e-8, f"min eigenvalue of S~ {worst:.2e} over 200")


@pytest.mark.slow
def test_criterion_12_three_state_pipeline():
    xs = ex.pauli_halves()
    settings = [("pauli_pure", v) for v in np.linspace(np.pi / 8, np.pi / 2, 4)]
    settings += [("pauli_mixed", p) for p in (0.5, 0.65, 0.8, 0.95)]
    exact_dev, zs = 0.0, []
    for i, (name, v) in enumerate(settings):
        prob = build_model(name, v)
        povm = ex.setting_povm(prob.rho, xs)
        iv = ex.estimate_errors(ex.exact_table(prob.rho, xs, povm), xs)
        exact_dev = max(exact_dev, np.abs(iv.eps - ex.direct_errors(prob.rho, xs, povm)).max())
        e0 = bound_e0(prob.rho, xs).value
        res = ex.run_protocol(prob.rho, xs, povm, ex.ProtocolConfig(shots=2000, repeats=20, seed=(2024, i)))
        zs.append((res.mean - e0) / res.stderr)
    zs = np.array(zs)
    record(12, exact_dev <= 1e-6 and np.all(np.abs(zs) <= 3),
           f"exact max dev {exact_dev:.2e}; z = {', '.join(f'{z:+.2f}' for z in zs)}")


def test_criterion_13_sdp_self_test():
    rows = self_test(50, seed=1313)
    toys = [r for r in rows if r[0].startswith("lambda")]
    rand = [r for r in rows if r[0].startswith("random")]
    toy_err = max(r[3] for r in toys)
    kkt = max(r[4] for r in rand)
    ok = toy_err <= 1e-8 and kkt < 1e-7 and all(r[5] == "optimal" for r in rows) and len(rand) == 50
    record(13, ok, f"toy max error {toy_err:.2e}, random max KKT {kkt:.2e}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
