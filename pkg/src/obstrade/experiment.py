"""Shot sampling and the 3-state reconstruction of approximation errors.

For every observable X_j the same POVM is measured on three states,
rho, X rho X / N2 and (I+X) rho (I+X) / N3.  The outcome statistics pin down
Re Tr(rho M_m X) for each outcome, which in turn fixes the optimal value
assignment and the error eps_j.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg as sla
from scipy import stats

from . import core
from .core import ValidationError
from .sdp import Model, SdpSettings, SolverError, hermitian_basis, solve

SCHEMA = "obstrade.counts/1"
INDEP_THRESHOLD = 1e-10
# Ball radius floor (face-value mode); keeps a strict interior for the solver.
RADIUS_FLOOR = 1e-7
RADIUS_SLACK = 1e-6
# retried in order when the ball is too thin for the interior-point solver
SLACK_LADDER = (1e-6, 1e-5, 1e-4, 1e-3)
NORM_TOL = 1e-12


def worker_count(default: int = 1) -> int:
    try:
        return max(1, int(os.environ.get("OBSTRADE_THREADS", default)))
    except ValueError:
        return default


# ------------------------------------------------------------------ sampling

def sample_counts(state, povm, shots: int, seed=None) -> np.ndarray:
    """Multinomial counts of `shots` repetitions of `povm` on `state`."""
    if int(shots) < 1:
        raise ValidationError("shots must be >= 1")
    rho = core.as_state(state).rho
    p = _probabilities(rho, povm)
    rng = np.random.default_rng(seed)
    return rng.multinomial(int(shots), p)


def _probabilities(rho, povm) -> np.ndarray:
    ops = povm.outcomes if isinstance(povm, core.Povm) else povm
    p = np.array([np.trace(rho @ m).real for m in ops])
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def three_state_states(rho, x):
    """(rho, X rho X / N2, (I+X) rho (I+X) / N3) as States."""
    rho = core.as_state(rho).rho
    x = core.hermitian(x)
    eye = np.eye(x.shape[0])
    a = x @ rho @ x
    b = (eye + x) @ rho @ (eye + x)
    n2, n3 = np.trace(a).real, np.trace(b).real
    if n2 <= NORM_TOL or n3 <= NORM_TOL:
        raise ValidationError(
            "3-state normalization vanishes; shift the observable by a constant (X -> X + c I)")
    return core.State(rho), core.State(a / n2), core.State(b / n3)


def three_state_norms(rho, x) -> np.ndarray:
    rho = core.as_state(rho).rho
    eye = np.eye(x.shape[0])
    return np.array([1.0, np.trace(x @ rho @ x).real,
                     np.trace((eye + x) @ rho @ (eye + x)).real])


# ------------------------------------------------------------------ data types

@dataclass
class CountTable:
    """Counts for the three prepared states of every observable.

    counts has shape (n, 3, K); counts[j, l] are the outcome tallies of the
    l-th prepared state for observable j.  `states` holds the prepared
    density matrices (n, 3, d, d) and `rho` the state under study.
    """

    rho: np.ndarray
    states: np.ndarray
    counts: np.ndarray
    shots: int
    seed: Optional[int] = None
    labels: Optional[list] = None

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=complex)
        self.states = np.asarray(self.states, dtype=complex)
        self.counts = np.asarray(self.counts)
        if self.counts.ndim != 3 or self.counts.shape[1] != 3:
            raise ValidationError("counts must have shape (n, 3, K)")
        if np.any(self.counts < 0):
            raise ValidationError("counts must be nonnegative")
        if int(self.shots) < 1:
            raise ValidationError("shots must be >= 1")
        if not np.allclose(self.counts.sum(axis=2), self.shots, rtol=0, atol=1e-9 * self.shots):
            raise ValidationError("counts per state must sum to shots")

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    @property
    def num_outcomes(self) -> int:
        return self.counts.shape[2]

    def frequencies(self) -> np.ndarray:
        return self.counts / float(self.shots)

    def to_json(self) -> dict:
        def mat(m):
            return {"dim": int(m.shape[0]), "re": m.real.tolist(), "im": m.imag.tolist()}
        counts = self.counts
        if np.issubdtype(counts.dtype, np.integer):
            counts = counts.tolist()
        else:
            counts = [[[float(f"{v:.17g}") for v in row] for row in blk] for blk in counts]
        return {"schema": SCHEMA, "shots": int(self.shots), "seed": self.seed,
                "labels": self.labels, "rho": mat(self.rho),
                "states": [[mat(s) for s in blk] for blk in self.states],
                "counts": counts}

    @classmethod
    def from_json(cls, obj) -> "CountTable":
        if isinstance(obj, str):
            obj = json.loads(obj)
        if obj.get("schema", SCHEMA) != SCHEMA:
            raise ValidationError(f"unknown count schema {obj.get('schema')!r}")

        def mat(o):
            return np.array(o["re"], dtype=float) + 1j * np.array(o["im"], dtype=float)
        try:
            states = np.array([[mat(s) for s in blk] for blk in obj["states"]])
            return cls(mat(obj["rho"]), states, np.array(obj["counts"]), int(obj["shots"]),
                       obj.get("seed"), obj.get("labels"))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed count table: {exc}") from exc


@dataclass
class ErrorInterval:
    eps: np.ndarray  # point estimate, inside [eps_min, eps_max]
    eps_sq_raw: np.ndarray  # unclipped linear moment estimate of eps^2 (may be < 0)
    eps_min: np.ndarray
    eps_max: np.ndarray
    alpha_min: np.ndarray  # (n, K)
    alpha_max: np.ndarray
    p1: np.ndarray  # (n, K) empirical outcome probabilities on rho
    clipped: np.ndarray  # (n,) bool: a negative eps^2 was clipped to 0
    relaxation: np.ndarray  # (n,) least-squares inconsistency of the data
    radius: np.ndarray  # (n,) ball radius used for the min/max problems

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.eps_min + self.eps_max)

    @property
    def width(self) -> np.ndarray:
        return self.eps_max - self.eps_min

    def squared_sum(self, raw: bool = False) -> float:
        return float(np.sum(self.eps_sq_raw if raw else self.eps ** 2))


@dataclass
class RetraceResult:
    alpha_min: np.ndarray
    alpha_max: np.ndarray
    relaxation: float
    radius: float
    rows: list = field(default_factory=list)  # independent (state, outcome) constraints kept
    fitted: Optional[np.ndarray] = None  # (3, K) statistics of the least-squares POVM


# ------------------------------------------------------------------ tables

def simulate_table(rho, xs, povm, shots: int, seed=None) -> CountTable:
    """Sample the 3-state protocol; seeds are spawned per (observable, state)."""
    rho = core.as_state(rho).rho
    xs = core.as_observables(xs).observables
    ops = povm.outcomes if isinstance(povm, core.Povm) else povm
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    kids = iter(ss.spawn(3 * len(xs)))
    states, counts = [], []
    for x in xs:
        trio = three_state_states(rho, x)
        states.append([s.rho for s in trio])
        counts.append([sample_counts(s, ops, shots, next(kids)) for s in trio])
    keep_seed = int(seed) if isinstance(seed, (int, np.integer)) else None
    return CountTable(rho, np.array(states), np.array(counts), int(shots), keep_seed)


def exact_table(rho, xs, povm, shots: int = 1) -> CountTable:
    """Table whose counts are the exact expected tallies (floats)."""
    rho = core.as_state(rho).rho
    xs = core.as_observables(xs).observables
    ops = povm.outcomes if isinstance(povm, core.Povm) else povm
    states, counts = [], []
    for x in xs:
        trio = three_state_states(rho, x)
        states.append([s.rho for s in trio])
        counts.append([shots * _probabilities(s.rho, ops) for s in trio])
    return CountTable(rho, np.array(states), np.array(counts, dtype=float), int(shots))


# ------------------------------------------------------------------ SDPs

def _constraint_rows(states, k: int, d: int):
    """Linear maps M -> Tr(rho_l M_m) in the Hermitian-basis coordinates."""
    basis = hermitian_basis(d)
    mats = []
    for entries in basis:
        e = np.zeros((d, d), dtype=complex)
        for a, b, v in entries:
            e[a, b] += v
        mats.append(e)
    nb = len(mats)
    tr = np.array([[np.trace(s @ e).real for e in mats] for s in states])  # (3, nb)
    rows, keys = [], []
    for l in range(len(states)):
        for m in range(k):
            r = np.zeros(k * nb)
            r[m * nb:(m + 1) * nb] = tr[l]
            rows.append(r)
            keys.append((l, m))
    # sum_m M_m = I
    eq = np.zeros((nb, k * nb))
    eq_rhs = np.array([np.trace(e).real for e in mats])
    for m in range(k):
        eq[:, m * nb:(m + 1) * nb] = np.eye(nb)
    return np.array(rows), keys, eq, eq_rhs, mats


def independent_rows(rows: np.ndarray, base: np.ndarray, tol: float = INDEP_THRESHOLD) -> list:
    """Indices of a maximal subset of `rows` independent modulo `base`."""
    # project out the span of the base rows (the normalization constraint)
    q, _ = np.linalg.qr(base.T)
    resid = rows - (rows @ q) @ q.T
    if resid.size == 0:
        return []
    _, r, piv = sla.qr(resid.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0:
        return []
    rank = int(np.sum(diag > tol * max(1.0, diag[0])))
    return sorted(piv[:rank].tolist())


def _build(states, x, rho, probs, k, d, radius=None, objective=None, sign=1.0):
    rows, keys, eq, eq_rhs, mats = _constraint_rows(states, k, d)
    keep = independent_rows(rows, eq)
    model = Model()
    mv = [model.hermitian(f"M{m}", d) for m in range(k)]
    for m in range(k):
        model.lmi(d).add_var(0, 0, mv[m])
    nb = d * d
    for b in range(nb):
        form = {}
        for m in range(k):
            form[mv[m].start + b] = 1.0
        model.add_equality(form, eq_rhs[b])
    L = len(keep)
    t = None
    if L:
        blk = model.lmi(L + 1)
        if radius is None:
            t = model.scalar("t")
            blk.add_scalar(t, np.eye(L + 1))
        else:
            blk.add_const(0, 0, radius * np.eye(L + 1))
        vconst = np.zeros((L + 1, L + 1))
        for i, ridx in enumerate(keep):
            l, m = keys[ridx]
            form = {mv[m].start + b: float(rows[ridx][m * nb + b]) for b in range(nb)}
            blk.add_form(0, 1 + i, form)
            vconst[0, 1 + i] = vconst[1 + i, 0] = -probs[l, m]
        blk.add_const(0, 0, vconst, adjoint=False)
    if t is not None:
        model.add_objective({t: 1.0})
    if objective is not None:
        m, g = objective
        model.add_objective({i: sign * v for i, v in mv[m].trace_with(g).items()})
    return model.build(), mv, t, keep


def bound_retrace_sdp(probs, states, x, rho, m: Optional[int] = None, noise=None,
                      confidence: float = 0.99, settings: Optional[SdpSettings] = None):
    """Range of Re Tr(rho M_m X) over POVMs consistent with 3-state data.

    probs is (3, K): observed p_l(m) for the three prepared states.  The data
    are first projected onto the set of achievable statistics by a
    least-squares SDP; the reported relaxation is the residual norm.  The
    min/max problems then constrain the statistics to a ball around the data
    whose radius is the larger of (1 + slack) times that residual plus a
    tiny floor, and, when `noise` (per-probability standard deviation, scalar
    or (3, K)) is given, the `confidence` quantile of the matching chi radius.
    The slack climbs SLACK_LADDER when the solver stalls on a thin ball.

    With m given returns (min, max); otherwise a RetraceResult for all outcomes.
    """
    settings = settings or SdpSettings()
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 2 or probs.shape[0] != 3:
        raise ValidationError("probs must have shape (3, K)")
    states = [core.as_state(s).rho for s in states]
    x = core.hermitian(x)
    rho = core.as_state(rho).rho
    k = probs.shape[1]
    d = x.shape[0]
    g = 0.5 * (x @ rho + rho @ x)
    if k == 1:
        # the only POVM is the identity
        val = float(np.trace(g).real)
        res = RetraceResult(np.array([val]), np.array([val]), 0.0, 0.0, [])
        return (val, val) if m is not None else res

    problem, mv, t, keep = _build(states, x, rho, probs, k, d)
    sol = solve(problem, settings)
    if not sol.optimal:
        raise SolverError(f"least-squares consistency SDP: {sol.status}", sol)
    resid = max(float(sol.y[t]), 0.0) if t is not None else 0.0
    fit_ops = [v.value(sol.y) for v in mv]
    fitted = np.array([[np.trace(s @ op).real for op in fit_ops] for s in states])
    r_conf = 0.0
    if noise is not None and keep:
        sig = np.broadcast_to(np.asarray(noise, dtype=float), probs.shape)
        rows = _constraint_rows(states, k, d)[1]
        var = np.array([sig[rows[i]] ** 2 for i in keep])
        # radius covering the noise ball with the requested confidence
        r_conf = float(np.sqrt(var.max() * stats.chi2.ppf(confidence, len(keep))))

    outs = range(k) if m is None else [m]
    last = None
    for slack in SLACK_LADDER:
        radius = max(resid * (1.0 + slack) + RADIUS_FLOOR * (slack / RADIUS_SLACK), r_conf)
        try:
            lo, hi = _ball_extremes(states, x, rho, probs, k, d, radius, g, outs, settings)
            break
        except SolverError as exc:
            last = exc
    else:
        raise last
    lo, hi = np.minimum(lo, hi), np.maximum(lo, hi)
    if m is not None:
        return float(lo[m]), float(hi[m])
    return RetraceResult(lo, hi, resid, radius, list(keep), fitted)


def _ball_extremes(states, x, rho, probs, k, d, radius, g, outs, settings):
    lo = np.full(k, np.nan)
    hi = np.full(k, np.nan)
    for mm in outs:
        for sign in (1.0, -1.0):
            prob, _, _, _ = _build(states, x, rho, probs, k, d, radius, (mm, g), sign)
            s = solve(prob, settings)
            if not s.optimal:
                raise SolverError(f"retrace SDP for outcome {mm}: {s.status}", s)
            # dual objectives: outer bounds by weak duality, so exact data stay bracketed
            if sign > 0:
                lo[mm] = s.dual_value
            else:
                hi[mm] = -s.dual_value
    return lo, hi


# ------------------------------------------------------------------ errors

def errors_from_alpha(x2: float, alpha_lo, alpha_hi, p1):
    """eps^2 range from Tr(rho X^2) - sum_m alpha_m^2 / p1(m)."""
    alpha_lo, alpha_hi, p1 = map(np.asarray, (alpha_lo, alpha_hi, p1))
    used = p1 > core.ZERO_PROB
    a_big = np.maximum(alpha_lo ** 2, alpha_hi ** 2)
    a_small = np.where((alpha_lo <= 0) & (alpha_hi >= 0), 0.0, np.minimum(alpha_lo ** 2, alpha_hi ** 2))
    e2_lo = x2 - np.sum(a_big[used] / p1[used])
    e2_hi = x2 - np.sum(a_small[used] / p1[used])
    clipped = e2_lo < 0
    return np.sqrt(max(e2_lo, 0.0)), np.sqrt(max(e2_hi, 0.0)), bool(clipped)


def alpha_from_data(probs, norms) -> np.ndarray:
    """Re Tr(rho M_m X) = (N3 p3(m) - p1(m) - N2 p2(m)) / 2.

    Holds for any POVM because (I+X) rho (I+X) = rho + X rho X + X rho + rho X.
    """
    probs = np.asarray(probs, dtype=float)
    return 0.5 * (norms[2] * probs[2] - norms[0] * probs[0] - norms[1] * probs[1])


def estimate_errors(table: CountTable, xs, noise=None, settings: Optional[SdpSettings] = None) -> ErrorInterval:
    """Per-observable error intervals from a CountTable.

    The interval comes from the retrace SDPs.  The point estimate uses the
    exact linear identity for alpha, clipped into the SDP range, so it stays
    accurate where eps is near 0 and the square root amplifies solver error.
    eps_sq_raw skips both clips; average it over repeats, then clip the mean.
    `noise` switches on the statistical radius of bound_retrace_sdp; "shots"
    derives it from the binomial standard deviation of each frequency.
    """
    xs = core.as_observables(xs).observables
    if len(xs) != table.n:
        raise ValidationError(f"table has {table.n} observables, got {len(xs)}")
    rho = table.rho
    freqs = table.frequencies()
    out = {key: [] for key in ("eps", "eps_sq_raw", "eps_min", "eps_max", "alpha_min", "alpha_max", "p1",
                               "clipped", "relaxation", "radius")}
    for j, x in enumerate(xs):
        probs = freqs[j]
        sig = noise
        if isinstance(noise, str):
            if noise != "shots":
                raise ValidationError("noise must be None, a number or 'shots'")
            sig = np.sqrt(np.clip(probs * (1 - probs), 1.0 / table.shots, None) / table.shots)
        res = bound_retrace_sdp(probs, table.states[j], x, rho, noise=sig, settings=settings)
        x2 = float(np.trace(rho @ x @ x).real)
        e_lo, e_hi, clip = errors_from_alpha(x2, res.alpha_min, res.alpha_max, probs[0])
        a_raw = alpha_from_data(probs, three_state_norms(rho, x))
        a = np.clip(a_raw, res.alpha_min, res.alpha_max)
        e_pt = errors_from_alpha(x2, a, a, probs[0])[0]
        used = probs[0] > core.ZERO_PROB
        e2_raw = x2 - float(np.sum(a_raw[used] ** 2 / probs[0][used]))
        for key, val in (("eps", e_pt), ("eps_sq_raw", e2_raw), ("eps_min", e_lo), ("eps_max", e_hi), ("alpha_min", res.alpha_min),
                         ("alpha_max", res.alpha_max), ("p1", probs[0]), ("clipped", clip),
                         ("relaxation", res.relaxation), ("radius", res.radius)):
            out[key].append(val)
    return ErrorInterval(**{key: np.array(v) for key, v in out.items()})


def direct_errors(rho, xs, povm) -> np.ndarray:
    """eps_j under the optimal value assignment, from the POVM itself."""
    rho = core.as_state(rho).rho
    xs = core.as_observables(xs).observables
    ops = povm.outcomes if isinstance(povm, core.Povm) else povm
    p = np.array([np.trace(rho @ m).real for m in ops])
    used = p > core.ZERO_PROB
    out = []
    for x in xs:
        a = np.array([np.trace(rho @ m @ x).real for m in ops])
        e2 = np.trace(rho @ x @ x).real - np.sum(a[used] ** 2 / p[used])
        out.append(np.sqrt(max(e2, 0.0)))
    return np.array(out)


# ------------------------------------------------------------------ protocol

@dataclass
class ProtocolConfig:
    shots: int = 2000
    repeats: int = 20
    seed: object = 0  # int or sequence of ints (SeedSequence entropy)
    noise: Optional[object] = None
    workers: Optional[int] = None


@dataclass
class ProtocolResult:
    sums: np.ndarray  # (repeats,) unclipped moment estimates of sum_j eps_j^2
    sums_clipped: np.ndarray  # (repeats,) the same from the in-interval point estimates
    widths: np.ndarray  # (repeats, n)
    clipped: np.ndarray  # (repeats, n)
    truth: float  # sum of squared errors of the POVM, evaluated directly

    @property
    def mean(self) -> float:
        return max(float(np.mean(self.sums)), 0.0)

    @property
    def mean_clipped(self) -> float:
        return float(np.mean(self.sums_clipped))

    @property
    def std(self) -> float:
        return float(np.std(self.sums, ddof=1)) if len(self.sums) > 1 else 0.0

    @property
    def stderr(self) -> float:
        return self.std / np.sqrt(len(self.sums))


def run_protocol(rho, xs, povm, config: ProtocolConfig = ProtocolConfig(),
                 settings: Optional[SdpSettings] = None) -> ProtocolResult:
    """Repeat the sampled 3-state pipeline with seeds spawned from config.seed."""
    xs = core.as_observables(xs).observables
    seeds = np.random.SeedSequence(config.seed).spawn(config.repeats)

    def one(ss):
        tab = simulate_table(rho, xs, povm, config.shots, ss)
        return estimate_errors(tab, xs, config.noise, settings)

    workers = config.workers or worker_count()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            res = list(pool.map(one, seeds))
    else:
        res = [one(s) for s in seeds]
    truth = float(np.sum(direct_errors(rho, xs, povm) ** 2))
    return ProtocolResult(np.array([r.squared_sum(raw=True) for r in res]),
                          np.array([r.squared_sum() for r in res]),
                          np.array([r.width for r in res]),
                          np.array([r.clipped for r in res]), truth)


def pauli_halves() -> list:
    return [s / 2 for s in core.PAULI]


def pure_setting(theta: float) -> np.ndarray:
    """R_z(pi/2) R_y(theta)|0>."""
    ry = np.array([[np.cos(theta / 2), -np.sin(theta / 2)],
                   [np.sin(theta / 2), np.cos(theta / 2)]], dtype=complex)
    rz = np.diag([np.exp(-1j * np.pi / 4), np.exp(1j * np.pi / 4)])
    return rz @ ry @ np.array([1, 0], dtype=complex)


def mixed_setting(p: float) -> np.ndarray:
    return np.diag([p, 1 - p]).astype(complex)


def setting_povm(rho, xs, w=None, num_outcomes: Optional[int] = None, restarts: int = 8,
                 seed: int = 0, settings: Optional[SdpSettings] = None):
    """Optimal (pure input) or best-found (mixed input) POVM for the setting.

    For mixed input without `num_outcomes`, the smallest outcome count whose
    best-found error matches the n+2 outcome search is used; fewer outcomes
    mean less finite-sample bias in the plug-in error estimate.
    """
    from .sdpbounds import brute_force_min_error, optimal_povm_pure

    st = core.as_state(rho)
    if st.is_pure():
        am = optimal_povm_pure(st.ket(), xs, w, settings=settings)
        return am.povm
    if num_outcomes is not None:
        return brute_force_min_error(st.rho, xs, w, num_outcomes, restarts=restarts, seed=seed).best_povm
    n = len(core.as_observables(xs).observables)
    ref = brute_force_min_error(st.rho, xs, w, n + 2, restarts=restarts, seed=seed)
    for k in range(2, n + 2):
        res = brute_force_min_error(st.rho, xs, w, k, restarts=restarts, seed=seed)
        if res.best_error <= ref.best_error + 1e-7:
            return res.best_povm
    return ref.best_povm
