"""The SDP bound E_0, optimal measurements on pure states, and a brute-force oracle."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct

from . import core
from .core import (ApproxMeasurement, Povm, State, ValidationError, approx_error_matrix,
                   as_observables, as_state, herm, optimal_values_for_povm, weight_matrix)
from ._kernels import nelder_mead
from .sdp import Model, SdpProblem, SdpSettings, SolverError, solve

IM_TOL = 1e-7
log = logging.getLogger(__name__)


@dataclass
class E0Problem:
    problem: SdpProblem
    r_vars: list
    s_vars: dict
    n: int
    dim: int
    support: np.ndarray | None = None  # isometry onto supp(rho) when compressed
    sqrt_rho: np.ndarray | None = None  # set when S is stored as rho^1/2 S rho^1/2

    def s_value(self, y, j: int, k: int) -> np.ndarray:
        s = herm(self.s_vars[(min(j, k), max(j, k))].value(y))
        if self.sqrt_rho is None:
            return s
        inv = np.linalg.inv(self.sqrt_rho)
        return herm(inv @ s @ inv)

    @property
    def lmi_size(self) -> int:
        return self.problem.blocks[0].size


@dataclass
class E0Witness:
    value: float
    r_ops: np.ndarray  # (n, d, d)
    s_blocks: np.ndarray  # (n, n, r, r), r = rank of the support used
    solution: object = field(repr=False, default=None)
    support: np.ndarray | None = None

    def check(self, tol: float = 1e-7) -> float:
        """Smallest eigenvalue of S - R R^dag (should be >= -tol)."""
        n, d = self.r_ops.shape[:2]
        rows = self.r_ops if self.support is None else self.support.conj().T @ self.r_ops
        r = rows.shape[1]
        big_r = rows.reshape(n * r, d)
        big_s = self.s_blocks.transpose(0, 2, 1, 3).reshape(n * r, n * r)
        return float(np.linalg.eigvalsh(herm(big_s - big_r @ big_r.conj().T))[0])


def support_basis(rho, tol: float = core.PSD_TOL):
    """Isometry onto the support of rho, or None when rho is full rank."""
    vals, vecs = np.linalg.eigh(as_state(rho).rho)
    keep = vals > tol
    return None if keep.all() else vecs[:, keep]


def build_e0(rho, xs, w=None, compress: bool | None = None, rescale: bool = True) -> E0Problem:
    """min Tr[(W (x) rho)(S - R X^dag - X R^dag + X X^dag)] over [[I, R^dag], [R, S]] >= 0.

    For singular rho the blocks of S outside the support cost nothing and the
    infimum is reached only as they diverge.  Its exact value is the minimum
    of the compressed problem: S_jk -> V^dag S_jk V (V spans the support) and
    R_j -> V^dag R_j in the off-diagonal blocks, with the kernel block of
    R_j fixed to zero.  compress=None compresses exactly when rho is singular.

    rescale=True (full-rank rho on the support) solves for S'_jk = rho^1/2 S_jk rho^1/2 (on the support) and
    applies the congruence diag(I, I (x) rho^1/2), so the LMI reads
    [[I, R^dag rho^1/2], [rho^1/2 R, S']] and the S cost is Tr(W S').  Same
    optimum; much better conditioned when rho has small eigenvalues.
    """
    rho = as_state(rho).rho
    xs = as_observables(xs)
    n, d = xs.n, xs.dim
    w = weight_matrix(w, n)
    v = support_basis(rho) if compress in (None, True) else None
    if compress and v is None:
        v = np.eye(d)
    r = d if v is None else v.shape[1]
    m = Model()
    r_vars = [m.hermitian(f"R{j + 1}", d) for j in range(n)]
    s_vars = {(j, k): m.hermitian(f"S{j + 1}{k + 1}", r) for j in range(n) for k in range(j, n)}
    blk = m.lmi(d + n * r)
    blk.add_const(0, 0, np.eye(d))
    rho_c = rho if v is None else v.conj().T @ rho @ v
    sq = None
    ev, u = np.linalg.eigh(herm(rho_c))
    if rescale and ev[0] > core.PSD_TOL:  # uncompressed singular rho: leave as is
        sq = herm((u * np.sqrt(np.clip(ev, 0.0, None))) @ u.conj().T)
    left = None if v is None else v.conj().T
    if sq is not None:
        left = sq if left is None else sq @ left
    for j, rv in enumerate(r_vars):
        if left is None:
            blk.add_var(d + j * r, 0, rv)
        else:
            blk.add_mapped(d + j * r, 0, rv, left=left)
    for (j, k), sv in s_vars.items():
        blk.add_var(d + j * r, d + k * r, sv)
    for (j, k), sv in s_vars.items():
        wt = w[j, j] if j == k else w[j, k] + w[k, j]
        if wt:
            m.add_objective(sv.trace_with(wt * (np.eye(r) if sq is not None else rho_c)))
    for k, rv in enumerate(r_vars):
        g = -sum(w[j, k] * (xs[j] @ rho + rho @ xs[j]) for j in range(n))
        m.add_objective(rv.trace_with(g))
    const = sum(w[j, k] * np.trace(rho @ xs[k] @ xs[j]).real for j in range(n) for k in range(n))
    m.add_objective({}, const)
    if v is not None and r < d:
        # kernel block of R_j enters nowhere; pin it
        ker = np.linalg.svd(v.conj().T)[2][r:].conj().T
        for rv in r_vars:
            for a in range(d - r):
                for b in range(a, d - r):
                    g = np.outer(ker[:, b], ker[:, a].conj())
                    m.add_equality(rv.trace_with(g), 0.0)
                    if a != b:
                        m.add_equality(rv.trace_with(1j * g), 0.0)
    return E0Problem(m.build(), r_vars, s_vars, n, d, v, sq)


def bound_e0(rho, xs, w=None, settings: SdpSettings | None = None,
             compress: bool | None = None) -> E0Witness:
    prob = build_e0(rho, xs, w, compress)
    sol = solve(prob.problem, settings)
    if not sol.usable:
        raise SolverError(f"E0 solve ended with status {sol.status}", sol)
    if not sol.optimal:
        log.warning("E0 solve stalled near optimum: %s", sol.residuals)
    n, d = prob.n, prob.dim
    r_ops = np.array([herm(v.value(sol.y)) for v in prob.r_vars])
    r = prob.s_vars[(0, 0)].dim
    s_blocks = np.zeros((n, n, r, r), dtype=complex)
    for j in range(n):
        for k in range(n):
            s_blocks[j, k] = prob.s_value(sol.y, j, k)
    return E0Witness(max(sol.objective_value, 0.0), r_ops, s_blocks, sol, prob.support)


# ------------------------------------------------------------ pure-state POVM


def _orthogonal_p(k: int) -> np.ndarray:
    """Orthonormal DCT-II matrix transposed so the first column is positive."""
    return dct(np.eye(k), type=2, norm="ortho", axis=0).T


def measurement_from_vectors(psi, r_cols, tol: float = IM_TOL) -> ApproxMeasurement:
    """POVM and values with sum_m f_j(m) M_m |psi> = |r_j>.

    r_cols may live in an enlarged space C^D (D >= d) whose first d
    coordinates are the system; the POVM is compressed back onto the system.
    """
    psi = np.asarray(psi, dtype=complex)
    d = len(psi)
    r_cols = np.asarray(r_cols, dtype=complex)
    big = r_cols.shape[0]
    psi_big = np.concatenate([psi, np.zeros(big - d)])
    gram = r_cols.conj().T @ r_cols
    scale = max(np.max(np.abs(gram)), 1.0)
    if np.max(np.abs(gram.imag)) > tol * scale or np.max(np.abs((psi_big.conj() @ r_cols).imag)) > tol * np.sqrt(scale):
        raise ValidationError("(R^dag R)_Im != 0: vectors admit no real Gram-Schmidt expansion")
    # Gram-Schmidt on {psi, r_1, ..., r_n}
    basis = [psi_big]
    for col in r_cols.T:
        v = col - sum((b.conj() @ col) * b for b in basis)
        nv = np.linalg.norm(v)
        if nv > 1e-9 * max(1.0, np.linalg.norm(col)):
            basis.append(v / nv)
    u = np.array(basis).T  # (D, nd)
    lam = (u.conj().T @ r_cols).real.T  # (n, nd)
    nd = u.shape[1]
    p = _orthogonal_p(nd)
    u_rot = u @ p.T  # |u'_j> = sum_k P_jk |u_k>
    amp = (u_rot.conj().T @ psi_big)  # <u'_m|psi>, real and nonzero
    f = (lam @ p.T) / amp.real[None, :]
    sys = u_rot[:d]
    ms = [np.outer(sys[:, k], sys[:, k].conj()) for k in range(nd)]
    rest = herm(np.eye(d) - sum(ms))
    wv, vv = np.linalg.eigh(rest)
    rest = (vv * np.clip(wv, 0, None)) @ vv.conj().T
    povm = Povm(tuple(ms) + (rest,), labels=tuple(range(1, nd + 1)) + (0,))
    vals = np.concatenate([f, np.zeros((f.shape[0], 1))], axis=1)
    return ApproxMeasurement(povm, vals)


def _complement_vectors(a_cols, w) -> np.ndarray:
    """B with (B^dag B)_Im = -(A^dag A)_Im and Tr[W (B^dag B)_Re] = Tr|W^1/2 (A^dag A)_Im W^1/2|."""
    g = (a_cols.conj().T @ a_cols).imag
    w_half = core.psd_power(w, 0.5)
    w_mhalf = core.psd_power(w, -0.5, floor=1e-12)
    k = w_half @ g @ w_half
    h = -1j * k  # Hermitian with imaginary part -K
    ev, vec = np.linalg.eigh(h)
    t = (vec * (np.abs(ev) + ev)) @ vec.conj().T
    c = herm(w_mhalf @ t @ w_mhalf)
    cv, cvec = np.linalg.eigh(c)
    # B^dag B = C with B = C^{1/2}
    return (cvec * np.sqrt(np.clip(cv, 0, None))) @ cvec.conj().T


def optimal_povm_pure(psi, xs, w=None, witness: E0Witness | None = None,
                      settings: SdpSettings | None = None) -> ApproxMeasurement:
    """Measurement attaining E_0 on a pure state, built from the SDP optimum."""
    state = as_state(psi) if not np.ndim(psi) == 1 else State.from_ket(psi)
    if not state.is_pure():
        raise ValidationError("optimal_povm_pure requires a pure state")
    xs = as_observables(xs)
    n = xs.n
    w = weight_matrix(w, n)
    wit = witness or bound_e0(state, xs, w, settings)
    ket = state.ket()
    a_cols = np.array([r @ ket for r in wit.r_ops]).T  # (d, n)
    # <psi|R_j|psi> is real; remove rounding
    g_im = (a_cols.conj().T @ a_cols).imag
    if np.max(np.abs(g_im)) > IM_TOL * max(1.0, np.sum(np.abs(a_cols) ** 2)):
        b = _complement_vectors(a_cols, w)
        r_cols = np.vstack([a_cols, b])
    else:
        r_cols = a_cols
    return measurement_from_vectors(ket, r_cols)


def pure_pair_vectors(psi, x1, x2, w1: float = 1.0, w2: float = 1.0):
    """|r_1>, |r_2> of the two-observable optimum (mu = mu_+), or None when alpha = |beta| > 0."""
    psi = np.asarray(psi, dtype=complex)
    m1 = (psi.conj() @ x1 @ psi).real
    m2 = (psi.conj() @ x2 @ psi).real
    v1 = np.sqrt(w1) * ((x1 - m1 * np.eye(len(psi))) @ psi)
    v2 = np.sqrt(w2) * ((x2 - m2 * np.eye(len(psi))) @ psi)
    alpha = np.vdot(v1, v1).real + np.vdot(v2, v2).real
    beta = (1j * (np.vdot(v1, v2) - np.vdot(v2, v1))).real
    disc = np.sqrt(max(alpha ** 2 - beta ** 2, 0.0))
    if abs(beta) <= 1e-14 * max(alpha, 1e-300):
        mu = 0.5
    else:
        mu = (-(alpha - beta) + disc) / (2 * beta)
    den = 4 * mu * (1 - mu)
    if den <= 1e-12:
        return None
    r1 = (v1 - 1j * (1 - 2 * mu) * v2) / den
    r2 = (1j * (1 - 2 * mu) * v1 + v2) / den
    r1 = r1 / np.sqrt(w1) + m1 * psi
    r2 = r2 / np.sqrt(w2) + m2 * psi
    return np.array([r1, r2]).T, mu


def optimal_povm_pure_two(psi, x1, x2, w1: float = 1.0, w2: float = 1.0) -> ApproxMeasurement:
    """Closed-form optimal measurement for two observables on a pure state."""
    state = State.from_ket(psi) if np.ndim(psi) == 1 else as_state(psi)
    if not state.is_pure():
        raise ValidationError("optimal_povm_pure_two requires a pure state")
    ket = state.ket()
    x1 = core.hermitian(x1, "X1")
    x2 = core.hermitian(x2, "X2")
    if w1 <= 0 or w2 <= 0:
        raise ValidationError("weights must be positive")
    got = pure_pair_vectors(ket, x1, x2, w1, w2)
    if got is None:
        return optimal_povm_pure(state, [x1, x2], np.diag([w1, w2]))
    r_cols, _ = got
    return measurement_from_vectors(ket, r_cols)


def achieved_error(rho, xs, am: ApproxMeasurement, w=None) -> float:
    q = approx_error_matrix(rho, xs, am)
    return core.weighted_error(q, weight_matrix(w, q.shape[0]))


# ------------------------------------------------------------ brute force


@dataclass
class OracleResult:
    best_error: float
    best_povm: Povm
    best_assignment: np.ndarray
    restarts_used: int
    errors: list = field(default_factory=list)

    @property
    def measurement(self) -> ApproxMeasurement:
        return ApproxMeasurement(self.best_povm, self.best_assignment)


def _n_params(d: int) -> int:
    return d * d  # real diagonal plus complex strict upper triangle


def _povm_from_params(theta, k, d):
    """K outcomes L^{-1} A_m^dag A_m L^{-dag}, A_m upper triangular, N = L L^dag."""
    return _Param(k, d)(theta)


class _Param:
    def __init__(self, k, d):
        self.k, self.d = k, d
        iu = np.triu_indices(d, 1)
        diag = np.arange(d)
        m = len(iu[0])
        # real parameters -> flat complex entries of A_m (k, d*d)
        self.re_idx = np.concatenate([diag * d + diag, iu[0] * d + iu[1]])
        self.im_idx = iu[0] * d + iu[1]
        self.split = (d, d + m)

    def __call__(self, theta):
        k, d = self.k, self.d
        t = theta.reshape(k, d * d)
        a = np.zeros((k, d * d), dtype=complex)
        a[:, self.re_idx] = t[:, :self.split[1]]
        a[:, self.im_idx] += 1j * t[:, self.split[1]:]
        a = a.reshape(k, d, d)
        b = np.conj(a.transpose(0, 2, 1)) @ a
        try:
            low = np.linalg.cholesky(b.sum(axis=0))
        except np.linalg.LinAlgError:
            return None
        linv = np.linalg.inv(low)
        return linv @ b @ np.conj(linv.T)


class _ErrorModel:
    """Tr(W Q_Re) under the optimal assignment f = c / p:
    sum W_jk Tr(rho X_j X_k) - sum_m c_m^T W c_m / p_m."""

    def __init__(self, rho, xs, w):
        d = rho.shape[0]
        self.rho_t = rho.T.reshape(-1)
        self.xr_t = np.array([(x @ rho).T.reshape(-1) for x in xs]).T  # (d^2, n)
        txx = np.array([[np.trace(rho @ xj @ xk).real for xk in xs] for xj in xs])
        self.const = float(np.sum(w * txx))
        self.w = w
        self.d = d

    def __call__(self, ms):
        flat = ms.reshape(ms.shape[0], -1)
        probs = (flat @ self.rho_t).real
        cross = (flat @ self.xr_t).real  # (K, n): Re Tr(rho M_m X_j)
        used = probs > core.ZERO_PROB
        c = cross[used]
        return self.const - float(np.sum((c @ self.w) * c, axis=1) @ (1.0 / probs[used]))


def brute_force_min_error(rho, xs, w=None, num_outcomes: int | None = None, restarts: int = 32,
                          seed: int = 0, maxiter: int | None = None, workers: int = 1,
                          passes: int = 3) -> OracleResult:
    """Multi-start adaptive Nelder-Mead over K-outcome POVMs (default K = n + 2).

    Each restart runs `passes` chained searches of at most `maxiter`
    evaluations (default 600 per parameter).  Returns an upper bound on the
    true minimum; restarts are seeded from SeedSequence(seed).
    """
    rho = as_state(rho).rho
    xs = as_observables(xs)
    n, d = xs.n, xs.dim
    w = weight_matrix(w, n)
    k = num_outcomes or n + 2
    npar = k * _n_params(d)
    maxiter = maxiter or 600 * npar
    seeds = np.random.SeedSequence(seed).spawn(restarts)
    model = _ErrorModel(rho, xs.observables, w)
    param = _Param(k, d)
    xrho = np.array([x @ rho for x in xs.observables])
    wf = np.ascontiguousarray(w, dtype=float)

    args = (k, d, np.ascontiguousarray(rho), xrho, wf, model.const, core.ZERO_PROB)

    def run(ss):
        rng = np.random.default_rng(ss)
        x = rng.standard_normal(npar)
        best_f, best_x = np.inf, x
        # chained passes rebuild the simplex around the incumbent
        for _ in range(passes):
            x, f, _ = nelder_mead(x, maxiter, 1e-10, 1e-13, *args)
            if f < best_f:
                best_f, best_x = f, x
            x = best_x
        return best_f, best_x

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(run, seeds))
    else:
        results = [run(s) for s in seeds]
    errs = [r[0] for r in results]
    i = int(np.argmin(errs))
    ms = param(results[i][1])
    ms[-1] += np.eye(d) - ms.sum(axis=0)
    povm = Povm(tuple(herm(ms)))
    am = optimal_values_for_povm(rho, xs, povm)
    err = achieved_error(rho, xs, am, w)
    return OracleResult(err, povm, am.values, restarts, errs)
