"""Closed-form error-tradeoff bounds."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import core
from .core import (BasisChoice, MomentData, ValidationError, as_observables, as_state, comm,
                   moment_data, psd_power, psd_sqrt)

EXHAUSTIVE_FLAGS = 12


@dataclass
class PairBoundTerms:
    alpha: float
    beta: float
    value: float
    witness: dict = field(default_factory=dict)


@dataclass
class BoundReport:
    method: str
    value: float
    witness: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"method": self.method, "value": float(self.value), "witness": _jsonable(self.witness)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return {"re": obj.real.tolist(), "im": obj.imag.tolist()}
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def pair_value(alpha: float, beta: float) -> float:
    """(alpha - sqrt(alpha^2 - beta^2)) / 2 with the radicand clipped at 0."""
    return 0.5 * (alpha - np.sqrt(max(alpha * alpha - beta * beta, 0.0)))


def frobenius_bound(norm_term: float) -> float:
    return (np.sqrt(norm_term + 1.0) - 1.0) ** 2


# ------------------------------------------------------------ n observables


def _normalized_components(md: MomentData):
    try:
        inv_half = psd_power(md.s_re, -0.5, floor=1e-12 * max(1.0, np.trace(md.s_re)))
    except ValidationError:
        w, v = np.linalg.eigh(md.s_re)
        dep = v[:, 0]
        names = [f"X{j + 1}" for j in np.nonzero(np.abs(dep) > 1e-6)[0]]
        raise ValidationError(f"S_Re is singular; dependent observables: {', '.join(names)}") from None
    return inv_half, np.einsum("ab,qbc,cd->qad", inv_half, md.components, inv_half)


def bound_multi_analytic(md: MomentData, w=None) -> BoundReport:
    """Frobenius-norm bound on Tr(S_Re^-1 Q_Re), converted to a bound on Tr(W Q_Re).

    value is the bound on the weighted sum of squared errors (W = I unless
    given); the normalised bound itself is witness["normalized_value"].
    """
    inv_half, _ = _normalized_components(md)
    s_im = 0.5 * (md.s_im_tilde - md.s_im_tilde.T)
    t = core.matrix_norm(inv_half @ s_im @ inv_half)
    b = frobenius_bound(t)
    w = core.weight_matrix(w, md.n)
    s_half = psd_power(md.s_re, 0.5)
    scale = float(np.linalg.eigvalsh(s_half @ w @ s_half)[0])
    return BoundReport("analytic", max(scale, 0.0) * b,
                       {"normalized_value": b, "norm_term": t, "scale": scale})


def best_flags(md: MomentData) -> tuple:
    """Transpose flags maximising the normalised Frobenius norm of S~_Im."""
    _, comps = _normalized_components(md)
    q = comps.shape[0]
    flat = comps.reshape(q, -1)
    gram = flat @ flat.T
    if q == 1:
        return (False,)
    if q <= EXHAUSTIVE_FLAGS:
        signs = np.array(list(itertools.product([1.0, -1.0], repeat=q - 1)))
        signs = np.hstack([np.ones((len(signs), 1)), signs])
        scores = np.einsum("sq,qr,sr->s", signs, gram, signs)
        best = signs[int(np.argmax(scores))]
    else:
        best = np.zeros(q)
        order = np.argsort(-np.diag(gram))
        acc = np.zeros(flat.shape[1])
        for idx in order:
            s = 1.0 if acc @ flat[idx] >= 0 else -1.0
            best[idx] = s
            acc += s * flat[idx]
    return tuple(bool(s < 0) for s in best)


def optimize_basis_flags(rho, xs, vectors) -> BasisChoice:
    basis = BasisChoice(vectors)
    return basis.with_flags(best_flags(moment_data(rho, xs, basis)))


def candidate_bases(rho, xs):
    rho = as_state(rho)
    xs = list(xs)
    d = rho.dim
    cands = [np.eye(d, dtype=complex), np.linalg.eigh(rho.rho)[1]]
    sq = psd_sqrt(rho)
    for j, k in itertools.combinations(range(len(xs)), 2):
        h = -1j * sq @ comm(xs[j], xs[k]) @ sq
        cands.append(np.linalg.eigh(core.herm(h))[1])
    return cands


def bound_multi(rho, xs, basis: BasisChoice | None = None, w=None) -> BoundReport:
    """bound_multi_analytic with a basis chosen by the shipped heuristics when none is given."""
    rho = as_state(rho)
    xs = as_observables(xs)
    if basis is not None:
        rep = bound_multi_analytic(moment_data(rho, xs, basis), w)
        rep.witness["flags"] = list(basis.flags)
        return rep
    if rho.dim == 2:
        basis, _ = qubit_optimal_basis(rho, xs)
        cands = [basis]
    else:
        cands = [optimize_basis_flags(rho, xs, v) for v in candidate_bases(rho, xs)]
    best = None
    for b in cands:
        rep = bound_multi_analytic(moment_data(rho, xs, b), w)
        if best is None or rep.value > best[0].value:
            best = (rep, b)
    rep, b = best
    rep.witness.update(basis=b.vectors, flags=list(b.flags))
    return rep


def qubit_optimal_basis(rho, xs):
    """Basis maximising ||S~_Im||_F for a qubit: max{sum |w_jk|^2, lambda_max(S^xx)}."""
    rho = as_state(rho)
    if rho.dim != 2:
        raise ValidationError("qubit_optimal_basis needs a 2-dimensional state")
    xs = list(xs)
    n = len(xs)
    sq = psd_sqrt(rho)
    wvals = np.zeros((n, n))
    xvec = np.zeros((n, n, 3))
    for j in range(n):
        for k in range(n):
            cal = sq @ comm(xs[j], xs[k]) @ sq / 2j
            wvals[j, k] = np.trace(cal).real
            xvec[j, k] = [np.trace(cal @ s).real for s in core.PAULI]
    sxx = np.einsum("jkr,jks->rs", xvec, xvec)
    ev, evec = np.linalg.eigh(sxx)
    w_branch = float(np.sum(wvals ** 2))
    if ev[-1] > w_branch:
        nvec = evec[:, -1]
        proj = 0.5 * (np.eye(2) + sum(c * s for c, s in zip(nvec, core.PAULI)))
        _, v = np.linalg.eigh(proj)
        vecs = v[:, ::-1]  # top eigenvector first: Bloch vector +n, then -n
        return BasisChoice(vecs, (False, True)), float(np.sqrt(ev[-1]))
    return BasisChoice(np.eye(2, dtype=complex), (False, False)), float(np.sqrt(w_branch))


# ------------------------------------------------------------ two observables


def _variance(phi, x):
    m = (phi.conj() @ x @ phi).real
    return (phi.conj() @ x @ x @ phi).real - m * m


def _pure_terms(phi, x1, x2, w1, w2):
    alpha = w1 * _variance(phi, x1) + w2 * _variance(phi, x2)
    beta = (1j * np.sqrt(w1 * w2) * (phi.conj() @ comm(x1, x2) @ phi)).real
    return alpha, beta


def bound_pure_pair_closed_form(psi, x1, x2, w1: float = 1.0, w2: float = 1.0) -> PairBoundTerms:
    state = core.State.from_ket(psi) if np.ndim(psi) == 1 else as_state(psi)
    if not state.is_pure():
        raise ValidationError("closed form requires a pure state")
    phi = state.ket()
    alpha, beta = _pure_terms(phi, core.hermitian(x1), core.hermitian(x2), w1, w2)
    wit = {}
    if beta != 0:
        wit["mu_plus"] = (-(alpha - beta) + np.sqrt(max(alpha ** 2 - beta ** 2, 0.0))) / (2 * beta)
    return PairBoundTerms(alpha, beta, pair_value(alpha, beta), wit)


def bound_ozawa_pair(rho, x1, x2, w1: float = 1.0, w2: float = 1.0) -> PairBoundTerms:
    rho = as_state(rho)
    if w1 <= 0 or w2 <= 0:
        raise ValidationError("weights must be positive")
    sq = psd_sqrt(rho)
    alpha = w1 * _mixed_variance(rho.rho, x1) + w2 * _mixed_variance(rho.rho, x2)
    beta = np.sqrt(w1 * w2) * core.matrix_norm(sq @ comm(x1, x2) @ sq, "trace")
    return PairBoundTerms(alpha, beta, pair_value(alpha, beta))


def _mixed_variance(rho, x):
    m = np.trace(rho @ x).real
    return np.trace(rho @ x @ x).real - m * m


def branciard_lhs(rho, x1, x2, eps1: float, eps2: float) -> float:
    """LHS - RHS of the Branciard relation; nonnegative for every admissible (eps1, eps2)."""
    rho = as_state(rho).rho
    v1, v2 = _mixed_variance(rho, x1), _mixed_variance(rho, x2)
    c = 0.5 * abs(np.trace(rho @ comm(x1, x2)))
    return eps1 ** 2 * v2 + eps2 ** 2 * v1 + 2 * np.sqrt(max(v1 * v2 - c * c, 0.0)) * eps1 * eps2 - c * c


def bound_branciard_pair(rho, x1, x2, w1: float = 1.0, w2: float = 1.0) -> PairBoundTerms:
    """Smallest w1 eps1^2 + w2 eps2^2 allowed by the Branciard relation."""
    rho = as_state(rho).rho
    alpha = w1 * _mixed_variance(rho, x1) + w2 * _mixed_variance(rho, x2)
    c = 0.5 * abs(np.trace(rho @ comm(x1, x2)))
    beta = 2 * np.sqrt(w1 * w2) * c
    return PairBoundTerms(alpha, beta, pair_value(alpha, beta), {"c12": c})


def default_pair_basis(rho, x1, x2) -> BasisChoice:
    sq = psd_sqrt(rho)
    h = core.herm(-1j * sq @ comm(x1, x2) @ sq)
    return BasisChoice(np.linalg.eigh(h)[1])


def bound_mixed_pair_EA(rho, x1, x2, w1: float = 1.0, w2: float = 1.0,
                        basis: BasisChoice | None = None) -> BoundReport:
    rho = as_state(rho)
    x1, x2 = core.hermitian(x1), core.hermitian(x2)
    basis = basis or default_pair_basis(rho, x1, x2)
    if basis.vectors.shape[0] != rho.dim:
        raise ValidationError("basis dimension differs from state dimension")
    sq = psd_sqrt(rho)
    terms = []
    total = 0.0
    for q in range(basis.vectors.shape[1]):
        v = sq @ basis.vectors[:, q]
        lam = float(np.vdot(v, v).real)
        if lam < core.ZERO_PROB:
            terms.append({"lambda": lam, "alpha": 0.0, "beta": 0.0})
            continue
        phi = v / np.sqrt(lam)
        a, b = _pure_terms(phi, x1, x2, w1, w2)
        total += 0.5 * lam * (a - np.sqrt(max(a * a - b * b, 0.0)))
        terms.append({"lambda": lam, "alpha": a, "beta": b})
    return BoundReport("EA", total, {"terms": terms})


PAIR_METHODS = ("ozawa", "branciard", "EA", "E0")


def pair_bound(rho, x1, x2, w1=1.0, w2=1.0, method: str = "ozawa", settings=None) -> float:
    if method == "ozawa":
        return bound_ozawa_pair(rho, x1, x2, w1, w2).value
    if method == "branciard":
        return bound_branciard_pair(rho, x1, x2, w1, w2).value
    if method == "EA":
        return bound_mixed_pair_EA(rho, x1, x2, w1, w2).value
    if method == "E0":
        from .sdpbounds import bound_e0
        return bound_e0(rho, [x1, x2], np.diag([w1, w2]), settings).value
    raise ValueError(f"unknown pair method {method!r}")


def pairwise_sum_bound(rho, xs, w=None, pair_method: str = "ozawa", settings=None) -> BoundReport:
    """sum_l w_l eps_l^2 >= (1/(n-1)) sum_{j<k} pair(X_j, X_k)."""
    xs = list(as_observables(xs))
    n = len(xs)
    w = core.weight_matrix(w, n)
    if np.max(np.abs(w - np.diag(np.diag(w)))) > 0:
        raise ValidationError("pairwise_sum_bound needs a diagonal weight matrix")
    wd = np.diag(w)
    if n == 1:
        return BoundReport(f"pairwise-{pair_method}", 0.0, {"pairs": {}})
    pairs = {}
    for j, k in itertools.combinations(range(n), 2):
        pairs[(j, k)] = pair_bound(rho, xs[j], xs[k], wd[j], wd[k], pair_method, settings)
    value = sum(pairs.values()) / (n - 1)
    return BoundReport(f"pairwise-{pair_method}", value, {"pairs": {f"{j + 1},{k + 1}": v for (j, k), v in pairs.items()}})
