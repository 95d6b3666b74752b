"""Small dense SDP solver with a block-LMI modeling layer.

Problems are posed in LMI form over real scalar unknowns y:

    minimize    c.y + c0
    subject to  F_b0 + sum_i y_i F_bi  >= 0   for every block b (Hermitian)
                A_eq y = b_eq

Equalities are eliminated up front through a nullspace parameterisation.
The reduced problem is solved as the dual of a standard-form primal SDP by
an infeasible primal-dual path-following method with Nesterov-Todd scaling
and Mehrotra predictor-corrector steps.  Blocks stay complex Hermitian
throughout; real_embed() in core exists for the embedding equivalence.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Raised when a solve does not reach an optimal status."""

    def __init__(self, msg, solution=None):
        super().__init__(msg)
        self.solution = solution


@dataclass
class SdpSettings:
    tol_feas: float = 1e-8
    tol_gap: float = 1e-7
    max_iters: int = 200
    verbose: bool = False
    # step-length damping is 0.9 + 0.09*min(alpha_p, alpha_d)
    chunk: int = 256
    # a stalled run whose best iterate is within this factor of every
    # tolerance is reported as near-optimal instead of numerical-failure
    near_factor: float = 10.0
    stall_iters: int = 15


# ------------------------------------------------------------------ modeling


def hermitian_basis(d: int):
    """Real-coefficient basis of d x d Hermitian matrices as entry lists."""
    basis = []
    for a in range(d):
        basis.append(((a, a, 1.0),))
    for a in range(d):
        for b in range(a + 1, d):
            basis.append(((a, b, 1.0), (b, a, 1.0)))
            basis.append(((a, b, 1j), (b, a, -1j)))
    return basis


@dataclass
class HermVar:
    """A d x d Hermitian matrix variable occupying d^2 scalar slots."""

    name: str
    dim: int
    start: int
    basis: list = field(repr=False)

    @property
    def indices(self):
        return range(self.start, self.start + self.dim ** 2)

    def value(self, y) -> np.ndarray:
        h = np.zeros((self.dim, self.dim), dtype=complex)
        for i, entries in enumerate(self.basis):
            for a, b, v in entries:
                h[a, b] += v * y[self.start + i]
        return h

    def trace_with(self, g) -> dict:
        """Linear form y -> Re Tr(G H) as {index: coefficient}."""
        g = np.asarray(g, dtype=complex)
        out = {}
        for i, entries in enumerate(self.basis):
            out[self.start + i] = float(sum((v * g[b, a]).real for a, b, v in entries))
        return out

    def entry_form(self, a: int, b: int, part: str = "re") -> dict:
        """Linear form for Re or Im of entry (a, b)."""
        out = {}
        for i, entries in enumerate(self.basis):
            for p, q, v in entries:
                if p == a and q == b:
                    coef = v.real if part == "re" else v.imag
                    if isinstance(v, float):
                        coef = v if part == "re" else 0.0
                    if coef:
                        out[self.start + i] = out.get(self.start + i, 0.0) + coef
        return out


class LmiBlock:
    def __init__(self, size: int):
        self.size = size
        self.const = np.zeros((size, size), dtype=complex)
        self.rows, self.cols, self.vars, self.vals = [], [], [], []

    def add_const(self, r0: int, c0: int, m, adjoint: bool = True):
        m = np.asarray(m, dtype=complex)
        h, w = m.shape
        self.const[r0:r0 + h, c0:c0 + w] += m
        if adjoint and (r0, c0) != (c0, r0):
            self.const[c0:c0 + w, r0:r0 + h] += m.conj().T
        return self

    def add_var(self, r0: int, c0: int, var: HermVar, scale: complex = 1.0, adjoint: bool = True):
        """Place scale*H at (r0, c0) and its adjoint at (c0, r0) if off-diagonal."""
        for i, entries in enumerate(var.basis):
            for a, b, v in entries:
                self._push(r0 + a, c0 + b, var.start + i, scale * v)
                if adjoint and r0 != c0:
                    self._push(c0 + b, r0 + a, var.start + i, np.conj(scale * v))
        return self

    def add_mapped(self, r0: int, c0: int, var: HermVar, left=None, right=None):
        """Place left @ H @ right at (r0, c0) and its adjoint at (c0, r0)."""
        for i, entries in enumerate(var.basis):
            e = np.zeros((var.dim, var.dim), dtype=complex)
            for a, b, v in entries:
                e[a, b] += v
            if left is not None:
                e = left @ e
            if right is not None:
                e = e @ right
            for a, b in zip(*np.nonzero(np.abs(e) > 1e-15)):
                self._push(r0 + a, c0 + b, var.start + i, e[a, b])
                if (r0, c0) != (c0, r0):
                    self._push(c0 + b, r0 + a, var.start + i, np.conj(e[a, b]))
        return self

    def add_scalar(self, index: int, m, r0: int = 0, c0: int = 0):
        """Add y_index * m (m must make the block Hermitian overall)."""
        m = np.asarray(m, dtype=complex)
        for a, b in zip(*np.nonzero(m)):
            self._push(r0 + a, c0 + b, index, m[a, b])
        return self

    def add_form(self, r: int, c: int, form: dict):
        """Place a real linear form sum_i form[i]*y_i at (r, c) and (c, r)."""
        for i, v in form.items():
            self._push(r, c, i, v)
            if r != c:
                self._push(c, r, i, v)
        return self

    def _push(self, r, c, i, v):
        self.rows.append(r)
        self.cols.append(c)
        self.vars.append(i)
        self.vals.append(complex(v))


class Model:
    """Accumulates variables, an objective, LMI blocks and equalities."""

    def __init__(self):
        self.n = 0
        self.names = []
        self.hvars = {}
        self.blocks = []
        self.c = {}
        self.c0 = 0.0
        self.eq_rows = []
        self.eq_rhs = []

    def scalar(self, name: str) -> int:
        self.names.append(name)
        self.n += 1
        return self.n - 1

    def hermitian(self, name: str, d: int) -> HermVar:
        var = HermVar(name, d, self.n, hermitian_basis(d))
        for i in range(d * d):
            self.names.append(f"{name}[{i}]")
        self.n += d * d
        self.hvars[name] = var
        return var

    def lmi(self, size: int) -> LmiBlock:
        blk = LmiBlock(size)
        self.blocks.append(blk)
        return blk

    def add_objective(self, form: dict, const: float = 0.0):
        for i, v in form.items():
            self.c[i] = self.c.get(i, 0.0) + v
        self.c0 += const

    def add_equality(self, form: dict, rhs: float):
        self.eq_rows.append(dict(form))
        self.eq_rhs.append(float(rhs))

    def build(self) -> "SdpProblem":
        blocks = []
        for blk in self.blocks:
            coo = sp.coo_matrix(
                (np.array(blk.vals, dtype=complex),
                 (np.array(blk.vars, dtype=int), np.array(blk.rows) * blk.size + np.array(blk.cols))),
                shape=(self.n, blk.size * blk.size),
            ).tocsr()
            coo.sum_duplicates()
            blocks.append(BlockData(blk.size, blk.const.copy(), coo))
        c = np.zeros(self.n)
        for i, v in self.c.items():
            c[i] = v
        a_eq = np.zeros((len(self.eq_rows), self.n))
        for r, form in enumerate(self.eq_rows):
            for i, v in form.items():
                a_eq[r, i] += v
        return SdpProblem(c, self.c0, blocks, a_eq, np.array(self.eq_rhs), list(self.names))


@dataclass
class BlockData:
    size: int
    const: np.ndarray  # F_0
    coef: sp.csr_matrix  # (m, size^2) row i = vec(F_i), row-major

    def evaluate(self, y) -> np.ndarray:
        return self.const + (self.coef.T @ y).reshape(self.size, self.size)


@dataclass
class SdpProblem:
    c: np.ndarray
    c0: float
    blocks: list
    a_eq: np.ndarray
    b_eq: np.ndarray
    names: list = field(default_factory=list)

    @property
    def n_vars(self) -> int:
        return len(self.c)

    def check(self):
        for k, b in enumerate(self.blocks):
            if b.coef.shape != (self.n_vars, b.size ** 2):
                raise ValueError(f"block {k}: coefficient shape mismatch")
            idx = np.arange(b.size ** 2).reshape(b.size, b.size).T.ravel()
            diff = b.coef - b.coef[:, idx].conj()
            if diff.nnz and np.max(np.abs(diff.data)) > 1e-12:
                raise ValueError(f"block {k}: coefficient matrices are not Hermitian")
            if np.max(np.abs(b.const - b.const.conj().T), initial=0) > 1e-12:
                raise ValueError(f"block {k}: constant term is not Hermitian")
        if self.a_eq.shape != (len(self.b_eq), self.n_vars):
            raise ValueError("equality data shape mismatch")

    # JSON round trip ------------------------------------------------------
    def to_json(self) -> dict:
        def cmat(m):
            return {"re": np.real(m).tolist(), "im": np.imag(m).tolist()}

        blocks = []
        for b in self.blocks:
            coo = b.coef.tocoo()
            blocks.append({
                "size": b.size,
                "const": cmat(b.const),
                "entries": [[int(i), int(j // b.size), int(j % b.size), float(v.real), float(v.imag)]
                            for i, j, v in zip(coo.row, coo.col, coo.data)],
            })
        return {"variables": self.names or [f"y{i}" for i in range(self.n_vars)],
                "objective": {"c": self.c.tolist(), "c0": self.c0},
                "lmi_blocks": blocks,
                "equalities": {"A": self.a_eq.tolist(), "b": self.b_eq.tolist()}}

    @classmethod
    def from_json(cls, obj: dict) -> "SdpProblem":
        c = np.asarray(obj["objective"]["c"], dtype=float)
        m = len(c)
        blocks = []
        for b in obj["lmi_blocks"]:
            n = b["size"]
            const = np.asarray(b["const"]["re"], dtype=float) + 1j * np.asarray(b["const"]["im"], dtype=float)
            ent = np.asarray(b.get("entries", []), dtype=float).reshape(-1, 5)
            coef = sp.coo_matrix((ent[:, 3] + 1j * ent[:, 4], (ent[:, 0].astype(int), (ent[:, 1] * n + ent[:, 2]).astype(int))),
                                 shape=(m, n * n)).tocsr()
            blocks.append(BlockData(n, const.reshape(n, n), coef))
        eq = obj.get("equalities", {})
        a_eq = np.asarray(eq.get("A", []), dtype=float).reshape(-1, m)
        b_eq = np.asarray(eq.get("b", []), dtype=float)
        p = cls(c, float(obj["objective"].get("c0", 0.0)), blocks, a_eq, b_eq, list(obj.get("variables", [])))
        p.check()
        return p

    def dumps(self) -> str:
        return json.dumps(self.to_json())


@dataclass
class SdpSolution:
    status: str  # optimal | near-optimal | infeasible | unbounded | numerical-failure
    objective_value: float
    y: np.ndarray
    dual_value: float
    x_blocks: list  # dual matrices certifying the value
    eq_duals: np.ndarray
    residuals: dict
    iterations: int
    seconds: float

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    @property
    def usable(self) -> bool:
        return self.status in ("optimal", "near-optimal")


# ------------------------------------------------------------------ solver


class _Block:
    """Per-block coefficient data in the reduced variables, ready for Schur assembly."""

    def __init__(self, size, const, coef):
        self.n = size
        self.C = const
        self.A = coef.tocsr()  # (m, n^2) complex
        self.At = self.A.T.tocsr()
        lil = self.A.tolil()
        k = max((len(r) for r in lil.rows), default=0)
        self.kmax = k
        m = self.A.shape[0]
        self.dense = k > max(4, size // 2)
        if self.dense:
            self.F = self.A.toarray().reshape(m, size, size)
        else:
            p = np.zeros((m, max(k, 1)), dtype=int)
            q = np.zeros((m, max(k, 1)), dtype=int)
            v = np.zeros((m, max(k, 1)), dtype=complex)
            for i, (cols, vals) in enumerate(zip(lil.rows, lil.data)):
                cols = np.asarray(cols, dtype=int)
                p[i, :len(cols)] = cols // size
                q[i, :len(cols)] = cols % size
                v[i, :len(cols)] = vals
            self.p, self.q, self.v = p, q, v
        self.norms = np.sqrt(np.asarray(abs(self.A).power(2).sum(axis=1)).ravel())

    def op(self, x):
        """A(X)_i = Tr(F_i X)."""
        return (self.A @ x.T.ravel()).real

    def adj(self, y):
        return (self.At @ y).reshape(self.n, self.n)

    def schur(self, w, out, chunk):
        m = self.A.shape[0]
        if self.dense:
            ft = np.swapaxes(self.F, 1, 2).reshape(m, -1)
            for s in range(0, m, chunk):
                h = w @ self.F[s:s + chunk] @ w
                out[s:s + chunk] += (h.reshape(h.shape[0], -1) @ ft.T).real
            return
        for s in range(0, m, chunk):
            sl = slice(s, s + chunk)
            wp = np.swapaxes(w[:, self.p[sl]], 0, 1) * self.v[sl][:, None, :]  # (c, n, k)
            wq = w[self.q[sl], :]  # (c, k, n)
            h = wp @ wq  # W F_i W for the chunk
            acc = np.zeros((h.shape[0], m))
            for e in range(self.p.shape[1]):
                acc += (h[:, self.q[:, e], self.p[:, e]] * self.v[:, e]).real
            out[sl] += acc


def _inner(a, b):
    return float(np.sum(a.conj() * b).real)


def _chol(x):
    return np.linalg.cholesky(0.5 * (x + x.conj().T))


def _nt_scaling(x, z):
    lx = _chol(x)
    lz = _chol(z)
    u, s, vh = np.linalg.svd(lz.conj().T @ lx)
    g = lx @ vh.conj().T / np.sqrt(s)
    ginv = (u.conj().T / np.sqrt(s)[:, None]) @ lz.conj().T
    return g, ginv, s


def _max_step(lam, d):
    """Largest a with diag(lam) + a*d >= 0 (d Hermitian)."""
    r = 1.0 / np.sqrt(lam)
    ev = np.linalg.eigvalsh((r[:, None] * d) * r[None, :])
    mn = ev[0]
    return np.inf if mn >= 0 else -1.0 / mn


def _eliminate(problem: SdpProblem):
    """y = y0 + N z for the equality constraints."""
    m = problem.n_vars
    if problem.a_eq.size == 0:
        return np.zeros(m), None, np.zeros(0)
    a, b = problem.a_eq, problem.b_eq
    u, s, vh = np.linalg.svd(a)
    tol = 1e-10 * max(s[0], 1.0) if s.size else 0
    rank = int(np.sum(s > tol))
    y0 = vh[:rank].T @ ((u[:, :rank].T @ b) / s[:rank])
    resid = np.linalg.norm(a @ y0 - b)
    nsp = vh[rank:].T
    return y0, nsp, np.array([resid])


def solve(problem: SdpProblem, settings: SdpSettings | None = None) -> SdpSolution:
    st = settings or SdpSettings()
    t0 = time.perf_counter()
    problem.check()
    y0, nsp, eq_resid = _eliminate(problem)
    if eq_resid.size and eq_resid[0] > 1e-8 * (1 + np.linalg.norm(problem.b_eq)):
        return SdpSolution("infeasible", np.nan, y0, np.nan, [], np.zeros(len(problem.b_eq)),
                           {"equality": float(eq_resid[0])}, 0, time.perf_counter() - t0)
    blocks = []
    for b in problem.blocks:
        const = b.const + (b.coef.T @ y0).reshape(b.size, b.size)
        coef = b.coef if nsp is None else sp.csr_matrix(nsp.T @ b.coef.toarray()) if nsp.shape[1] else sp.csr_matrix((0, b.size ** 2), dtype=complex)
        blocks.append(_Block(b.size, 0.5 * (const + const.conj().T), coef))
    c_red = problem.c if nsp is None else nsp.T @ problem.c
    const_obj = problem.c0 + float(problem.c @ y0)
    m = len(c_red)

    if m == 0:
        ok = all(np.linalg.eigvalsh(b.C)[0] >= -st.tol_feas for b in blocks)
        return SdpSolution("optimal" if ok else "infeasible", const_obj, y0.copy(), const_obj,
                           [np.zeros((b.n, b.n)) for b in blocks], np.zeros(len(problem.b_eq)),
                           {"primal": 0.0, "dual": 0.0, "gap": 0.0}, 0, time.perf_counter() - t0)

    # standard form: A_i = -F_i, b = -c; X primal, (y, Z) dual
    bvec = -c_red
    status, y, xs, zs, it, res = _ipm(blocks, bvec, st, const_obj)
    pobj = sum(_inner(b.C, x) for b, x in zip(blocks, xs))
    dobj = float(bvec @ y)
    yfull = y0 + (y if nsp is None else nsp @ y)
    value = const_obj - dobj
    lower = const_obj - pobj

    eq_duals = np.zeros(len(problem.b_eq))
    if problem.a_eq.size:
        grad = problem.c.copy()
        for b, x in zip(problem.blocks, xs):
            grad -= (b.coef @ x.T.ravel()).real
        eq_duals = np.linalg.lstsq(problem.a_eq.T, grad, rcond=None)[0]
    res.update(value=value, lower_bound=lower)
    sol = SdpSolution(status, value, yfull, lower, xs, eq_duals, res, it, time.perf_counter() - t0)
    if st.verbose:
        log.info("sdp %s value=%.10g iters=%d %.2fs", status, value, it, sol.seconds)
    return sol


def _ipm(blocks, bvec, st: SdpSettings, offset: float = 0.0):
    """offset maps internal objectives to the caller's: value = offset - b.y."""
    m = len(bvec)
    ntot = sum(b.n for b in blocks)
    normb = np.linalg.norm(bvec)
    normc = np.sqrt(sum(np.sum(np.abs(b.C) ** 2) for b in blocks))

    xs, zs = [], []
    for b in blocks:
        an = np.max(b.norms) if m else 1.0
        xi = max(10.0, np.sqrt(b.n), np.sqrt(b.n) * np.max((1 + np.abs(bvec)) / (1 + b.norms)))
        eta = max(10.0, np.sqrt(b.n), an, np.linalg.norm(b.C))
        xs.append(xi * np.eye(b.n, dtype=complex))
        zs.append(eta * np.eye(b.n, dtype=complex))
    y = np.zeros(m)

    def op(mats):
        return sum(b.op(x) for b, x in zip(blocks, mats))

    best = None
    status = "numerical-failure"
    it = 0
    res = {}
    for it in range(1, st.max_iters + 1):
        rp = bvec + op(xs)  # A_i = -F_i, so b - A(X) = b + sum Tr(F_i X)
        rd = [b.C + b.adj(y) - z for b, z in zip(blocks, zs)]  # C - Z - sum y_i A_i
        gap = sum(_inner(x, z) for x, z in zip(xs, zs))
        pobj = sum(_inner(b.C, x) for b, x in zip(blocks, xs))
        dobj = float(bvec @ y)
        pinf = np.linalg.norm(rp) / (1 + normb)
        dinf = np.sqrt(sum(np.sum(np.abs(r) ** 2) for r in rd)) / (1 + normc)
        scale = 1 + abs(offset - pobj) + abs(offset - dobj)
        relgap = max(abs(pobj - dobj), gap) / scale
        res = {"primal": float(pinf), "dual": float(dinf), "gap": float(relgap)}
        if st.verbose:
            log.info("it %3d p %.2e d %.2e gap %.2e pobj %.10g dobj %.10g", it, pinf, dinf, relgap, pobj, dobj)
        score = max(pinf / st.tol_feas, dinf / st.tol_feas, relgap / st.tol_gap)
        if best is None or score < best[0]:
            if best is None or score < 0.9 * best[0]:
                best_it = it
            best = (score, y.copy(), [x.copy() for x in xs], [z.copy() for z in zs], dict(res))
        elif it - best_it >= st.stall_iters:
            break
        if pinf < st.tol_feas and dinf < st.tol_feas and relgap < st.tol_gap:
            status = "optimal"
            break
        if it > 5 and (dobj > 1e10 * (1 + abs(pobj)) or np.linalg.norm(y) > 1e12):
            status = "infeasible" if dobj > 0 else "numerical-failure"
            break
        if it > 5 and max(np.linalg.norm(x) for x in xs) > 1e12 and pinf < 1e-3:
            status = "unbounded"
            break
        try:
            scal = [_nt_scaling(x, z) for x, z in zip(xs, zs)]
        except np.linalg.LinAlgError:
            break
        ws = [g @ g.conj().T for g, _, _ in scal]
        mu = gap / ntot

        schur = np.zeros((m, m))
        for b, w in zip(blocks, ws):
            b.schur(w, schur, st.chunk)
        schur = 0.5 * (schur + schur.T)
        diag = np.diag(schur).copy()
        reg = 1e-14 * max(np.max(diag), 1.0)
        try:
            fac = sla.cho_factor(schur + reg * np.eye(m), lower=True, check_finite=False)
            solve_m = lambda r: sla.cho_solve(fac, r, check_finite=False)
        except (np.linalg.LinAlgError, sla.LinAlgError):
            ev, ev_vec = np.linalg.eigh(schur)
            keep = ev > 1e-14 * max(ev[-1], 1e-300)
            solve_m = lambda r: ev_vec[:, keep] @ ((ev_vec[:, keep].T @ r) / ev[keep])

        wrdw = op([w @ r @ w for w, r in zip(ws, rd)])

        def direction(rcs):
            # M dy = rp - A(Rc) + A(W Rd W), and A(.) = -op(.)
            dy = solve_m(rp + op(rcs) - wrdw)
            dzs, dxs = [], []
            for b, w, r, rc in zip(blocks, ws, rd, rcs):
                dz = r + b.adj(dy)  # Rd - sum dy_i A_i
                dz = 0.5 * (dz + dz.conj().T)
                dx = rc - w @ dz @ w
                dxs.append(0.5 * (dx + dx.conj().T))
                dzs.append(dz)
            return dy, dxs, dzs

        # predictor
        rcs = [-(g * s) @ g.conj().T for g, _, s in scal]  # G(-Lambda)G^H = -X
        dy, dxs, dzs = direction(rcs)
        ap, ad = _steps(scal, dxs, dzs)
        ap1, ad1 = min(1.0, ap), min(1.0, ad)
        gap_aff = sum(_inner(x + ap1 * dx, z + ad1 * dz) for x, z, dx, dz in zip(xs, zs, dxs, dzs))
        sigma = min(1.0, max(0.0, gap_aff / gap)) ** 3 if gap > 0 else 0.0
        if min(ap1, ad1) < 0.2:
            sigma = max(sigma, 0.1 if min(ap1, ad1) > 0.01 else 0.5)
        # corrector
        rcs = []
        for (g, ginv, s), dx, dz in zip(scal, dxs, dzs):
            dxt = ginv @ dx @ ginv.conj().T
            dzt = g.conj().T @ dz @ g
            r = sigma * mu * np.eye(len(s)) - np.diag(s ** 2) - 0.5 * (dxt @ dzt + dzt @ dxt)
            dsum = 2 * r / (s[:, None] + s[None, :])
            rcs.append(g @ dsum @ g.conj().T)
        dy, dxs, dzs = direction(rcs)
        ap, ad = _steps(scal, dxs, dzs)
        gamma = 0.9 + 0.09 * min(min(ap, 1.0), min(ad, 1.0))
        ap, ad = min(1.0, gamma * ap), min(1.0, gamma * ad)
        xs = [0.5 * ((x + ap * dx) + (x + ap * dx).conj().T) for x, dx in zip(xs, dxs)]
        zs = [0.5 * ((z + ad * dz) + (z + ad * dz).conj().T) for z, dz in zip(zs, dzs)]
        y = y + ad * dy
        if ap < 1e-10 and ad < 1e-10:
            break
    if status != "optimal" and best is not None:
        score, y, xs, zs, res = best
        if status == "numerical-failure" and score <= st.near_factor:
            status = "near-optimal"
    return status, y, xs, zs, it, res


def _steps(scal, dxs, dzs):
    ap = ad = np.inf
    for (g, ginv, s), dx, dz in zip(scal, dxs, dzs):
        dxt = ginv @ dx @ ginv.conj().T
        dzt = g.conj().T @ dz @ g
        ap = min(ap, _max_step(s, 0.5 * (dxt + dxt.conj().T)))
        ad = min(ad, _max_step(s, 0.5 * (dzt + dzt.conj().T)))
    return ap, ad


# ------------------------------------------------------------------ checking


def verify(solution: SdpSolution, problem: SdpProblem) -> dict:
    """Recompute residuals from the returned point, independent of solver state."""
    y = np.asarray(solution.y, dtype=float)
    eq = float(np.linalg.norm(problem.a_eq @ y - problem.b_eq)) if problem.a_eq.size else 0.0
    lmi_viol = 0.0
    for b in problem.blocks:
        lmi_viol = max(lmi_viol, max(0.0, -np.linalg.eigvalsh(b.evaluate(y))[0]))
    value = float(problem.c @ y + problem.c0)
    out = {"equality": eq, "lmi_violation": lmi_viol, "objective": value}
    xs = solution.x_blocks
    if xs:
        grad = problem.c.copy()
        for b, x in zip(problem.blocks, xs):
            grad -= (b.coef @ x.T.ravel()).real
        if problem.a_eq.size:
            grad -= problem.a_eq.T @ solution.eq_duals
        x_viol = max(max(0.0, -np.linalg.eigvalsh(0.5 * (x + x.conj().T))[0]) for x in xs)
        lower = problem.c0 - sum(_inner(b.const, x) for b, x in zip(problem.blocks, xs))
        if problem.a_eq.size:
            lower += float(problem.b_eq @ solution.eq_duals)
        scale = 1 + np.linalg.norm(problem.c)
        out.update(stationarity=float(np.linalg.norm(grad) / scale), dual_psd_violation=x_viol,
                   dual_objective=float(lower),
                   gap=float(abs(value - lower) / (1 + abs(value) + abs(lower))))
    return out


# ------------------------------------------------------------------ self-test


def lambda_problem(h, which: str = "max") -> SdpProblem:
    """lambda_max(H) = min t s.t. tI - H >= 0; lambda_min(H) = max t s.t. H - tI >= 0."""
    h = np.asarray(h, dtype=complex)
    d = h.shape[0]
    m = Model()
    t = m.scalar("t")
    blk = m.lmi(d)
    if which == "max":
        blk.add_const(0, 0, -h, adjoint=False)
        blk.add_scalar(t, np.eye(d))
        m.add_objective({t: 1.0})
    elif which == "min":
        blk.add_const(0, 0, h, adjoint=False)
        blk.add_scalar(t, -np.eye(d))
        m.add_objective({t: -1.0})
    else:
        raise ValueError("which must be 'max' or 'min'")
    return m.build()


def random_feasible_problem(rng, n_vars: int = 6, sizes=(3, 2), n_eq: int = 1, complex_: bool = True) -> SdpProblem:
    """Random LMI problem with a strictly feasible primal point and dual point.

    F_0 = S_0 - sum y0_i F_i with S_0 > 0 makes y0 strictly feasible; choosing
    c_i = <F_i, X_0> - (A^T mu)_i with X_0 > 0 makes the dual strictly feasible,
    so the optimum is attained.
    """
    y0 = rng.standard_normal(n_vars)
    blocks, x0s = [], []
    for n in sizes:
        fs = []
        for _ in range(n_vars):
            g = rng.standard_normal((n, n)) + (1j * rng.standard_normal((n, n)) if complex_ else 0)
            fs.append(0.5 * (g + g.conj().T))
        g = rng.standard_normal((n, n)) + (1j * rng.standard_normal((n, n)) if complex_ else 0)
        s0 = g @ g.conj().T + np.eye(n)
        const = s0 - sum(y * f for y, f in zip(y0, fs))
        coef = sp.csr_matrix(np.array([f.ravel() for f in fs]))
        blocks.append(BlockData(n, const, coef))
        g = rng.standard_normal((n, n)) + (1j * rng.standard_normal((n, n)) if complex_ else 0)
        x0s.append((g @ g.conj().T + np.eye(n), fs))
    a_eq = rng.standard_normal((n_eq, n_vars))
    b_eq = a_eq @ y0
    mu = rng.standard_normal(n_eq)
    c = np.zeros(n_vars)
    for x0, fs in x0s:
        c += np.array([_inner(f, x0) for f in fs])
    c -= a_eq.T @ mu
    return SdpProblem(c, 0.0, blocks, a_eq, b_eq)


def self_test(n_random: int = 50, seed: int = 0, settings: SdpSettings | None = None) -> list:
    """Rows (case, value, expected, error, kkt, status) for the toy and random problems.

    The eigenvalue toys run at 1e-10 tolerances so their values are exact to
    ~1e-10; the random problems use `settings` (default tolerances).
    """
    tight = SdpSettings(tol_feas=1e-10, tol_gap=1e-10)
    settings = settings or SdpSettings()
    rng = np.random.default_rng(seed)
    rows = []
    for d in (2, 4, 7):
        g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        h = 0.5 * (g + g.conj().T)
        ev = np.linalg.eigvalsh(h)
        for which, expected in (("max", ev[-1]), ("min", ev[0])):
            prob = lambda_problem(h, which)
            sol = solve(prob, tight)
            val = sol.objective_value if which == "max" else -sol.objective_value
            kkt = _kkt(sol, prob)
            rows.append((f"lambda_{which}_d{d}", val, float(expected), abs(val - expected), kkt, sol.status))
    for i in range(n_random):
        sizes = tuple(int(s) for s in rng.integers(1, 5, size=rng.integers(1, 4)))
        prob = random_feasible_problem(rng, int(rng.integers(2, 9)), sizes, int(rng.integers(0, 2)))
        sol = solve(prob, settings)
        rows.append((f"random_{i}", sol.objective_value, float("nan"), float("nan"), _kkt(sol, prob), sol.status))
    return rows


def _kkt(sol: SdpSolution, prob: SdpProblem) -> float:
    r = verify(sol, prob)
    return max(r["equality"], r["lmi_violation"], r.get("stationarity", 0.0),
               r.get("dual_psd_violation", 0.0), r.get("gap", 0.0))
