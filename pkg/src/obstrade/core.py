"""Dense Hermitian linear algebra and the quantum data model.

States, observable sets, POVMs and value assignments are small frozen
dataclasses that validate on construction.  Every operation here is a pure
function over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

HERM_TOL = 1e-12
TRACE_TOL = 1e-10
PSD_TOL = 1e-10
POVM_SUM_TOL = 1e-9
INDEP_TOL = 1e-8
ZERO_PROB = 1e-14
PURE_TOL = 1e-10

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = (SIGMA_X, SIGMA_Y, SIGMA_Z)


class ValidationError(ValueError):
    """Input violates a documented invariant."""


def _as_square(a, name="matrix") -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {a.shape}")
    return a


def is_hermitian(h, tol: float = HERM_TOL) -> bool:
    h = np.asarray(h)
    scale = max(np.max(np.abs(h)), 1.0) if h.size else 1.0
    return bool(np.max(np.abs(h - h.conj().T), initial=0.0) <= tol * scale)


def hermitian(h, name="matrix") -> np.ndarray:
    """Validate and return an exactly Hermitian copy (symmetrised)."""
    h = _as_square(h, name)
    if not is_hermitian(h):
        raise ValidationError(f"{name} is not Hermitian")
    return 0.5 * (h + h.conj().T)


def herm(h) -> np.ndarray:
    """Hermitian part, no validation."""
    return 0.5 * (h + np.conj(np.swapaxes(h, -1, -2)))


def eig_hermitian(h):
    """Ascending eigenvalues and a unitary eigenvector matrix."""
    h = hermitian(h)
    w, v = np.linalg.eigh(h)
    return w, v


def psd_sqrt(rho) -> np.ndarray:
    """Principal square root with eigenvalues clipped at zero."""
    rho = rho.rho if isinstance(rho, State) else hermitian(rho)
    w, v = np.linalg.eigh(rho)
    w = np.sqrt(np.clip(w, 0.0, None))
    return herm((v * w) @ v.conj().T)


def psd_power(a, power: float, floor: float = 0.0) -> np.ndarray:
    """a**power for a Hermitian PD matrix (negative powers need floor > 0)."""
    w, v = np.linalg.eigh(herm(np.asarray(a, dtype=complex)))
    if power < 0 and np.min(w) <= floor:
        raise ValidationError("matrix is singular, cannot take a negative power")
    w = np.clip(w, 0.0, None) ** power
    out = (v * w) @ v.conj().T
    return out.real if np.isrealobj(a) else herm(out)


def matrix_norm(h, kind: str = "frobenius") -> float:
    h = np.asarray(h, dtype=complex)
    if kind == "frobenius":
        return float(np.sqrt(np.sum(np.abs(h) ** 2)))
    s = np.linalg.svd(h, compute_uv=False)
    if kind == "trace":
        return float(np.sum(s))
    if kind == "spectral":
        return float(np.max(s, initial=0.0))
    raise ValueError(f"unknown norm kind {kind!r}")


def kron(*ops) -> np.ndarray:
    out = np.array([[1.0 + 0j]])
    for op in ops:
        out = np.kron(out, op)
    return out


def comm(a, b):
    return a @ b - b @ a


def anticomm(a, b):
    return a @ b + b @ a


def real_embed(h) -> np.ndarray:
    """[[Re, -Im], [Im, Re]]; PSD iff h is PSD."""
    h = np.asarray(h, dtype=complex)
    return np.block([[h.real, -h.imag], [h.imag, h.real]])


# ---------------------------------------------------------------- data model


@dataclass(frozen=True)
class State:
    rho: np.ndarray

    def __post_init__(self):
        rho = hermitian(self.rho, "rho")
        if abs(np.trace(rho).real - 1.0) > TRACE_TOL:
            raise ValidationError(f"trace(rho) = {np.trace(rho).real!r}, expected 1")
        if np.linalg.eigvalsh(rho)[0] < -PSD_TOL:
            raise ValidationError("rho has a negative eigenvalue")
        object.__setattr__(self, "rho", rho)

    @classmethod
    def from_ket(cls, psi) -> "State":
        psi = np.asarray(psi, dtype=complex).ravel()
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))

    @property
    def dim(self) -> int:
        return self.rho.shape[0]

    def is_pure(self, tol: float = PURE_TOL) -> bool:
        w = np.linalg.eigvalsh(self.rho)
        return self.dim == 1 or bool(w[-2] < tol)

    def ket(self) -> np.ndarray:
        """Dominant eigenvector (the state vector for pure states)."""
        w, v = np.linalg.eigh(self.rho)
        psi = v[:, -1]
        k = np.argmax(np.abs(psi))
        return psi * np.exp(-1j * np.angle(psi[k]))


def as_state(rho) -> State:
    return rho if isinstance(rho, State) else State(np.asarray(rho, dtype=complex))


@dataclass(frozen=True)
class ObservableSet:
    observables: tuple

    def __post_init__(self):
        obs = tuple(hermitian(x, f"X{j + 1}") for j, x in enumerate(self.observables))
        if not obs:
            raise ValidationError("empty observable set")
        d = obs[0].shape[0]
        if any(x.shape[0] != d for x in obs):
            raise ValidationError("observables have mismatched dimensions")
        emb = np.array([np.concatenate([x.real.ravel(), x.imag.ravel()]) for x in obs])
        s = np.linalg.svd(emb, compute_uv=False)
        if s[0] == 0 or s[-1] <= INDEP_TOL * s[0]:
            raise ValidationError("observables are linearly dependent")
        object.__setattr__(self, "observables", obs)

    @property
    def dim(self) -> int:
        return self.observables[0].shape[0]

    @property
    def n(self) -> int:
        return len(self.observables)

    def __iter__(self):
        return iter(self.observables)

    def __getitem__(self, j):
        return self.observables[j]

    def __len__(self):
        return len(self.observables)


def as_observables(xs) -> ObservableSet:
    return xs if isinstance(xs, ObservableSet) else ObservableSet(tuple(xs))


@dataclass(frozen=True)
class Povm:
    outcomes: tuple
    labels: tuple = ()

    def __post_init__(self):
        ms = tuple(hermitian(m, f"M{k}") for k, m in enumerate(self.outcomes))
        if not ms:
            raise ValidationError("empty POVM")
        d = ms[0].shape[0]
        for k, m in enumerate(ms):
            if m.shape[0] != d:
                raise ValidationError("POVM elements have mismatched dimensions")
            if np.linalg.eigvalsh(m)[0] < -PSD_TOL:
                raise ValidationError(f"POVM element {k} is not PSD")
        if np.max(np.abs(sum(ms) - np.eye(d))) > POVM_SUM_TOL:
            raise ValidationError("POVM elements do not sum to the identity")
        labels = tuple(self.labels) if self.labels else tuple(range(len(ms)))
        if len(labels) != len(ms):
            raise ValidationError("label count differs from outcome count")
        object.__setattr__(self, "outcomes", ms)
        object.__setattr__(self, "labels", labels)

    @property
    def dim(self) -> int:
        return self.outcomes[0].shape[0]

    def __len__(self):
        return len(self.outcomes)

    def probabilities(self, rho) -> np.ndarray:
        rho = as_state(rho).rho
        return np.array([np.trace(rho @ m).real for m in self.outcomes])


@dataclass(frozen=True)
class ApproxMeasurement:
    povm: Povm
    values: np.ndarray  # (n, K), entry (j, m) = f_j(m)

    def __post_init__(self):
        f = np.atleast_2d(np.asarray(self.values, dtype=float))
        if not np.all(np.isfinite(f)):
            raise ValidationError("value assignment has non-finite entries")
        if f.shape[1] != len(self.povm):
            raise ValidationError("assignment column count differs from outcome count")
        object.__setattr__(self, "values", f)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def operators(self):
        """R_j = sum_m f_j(m) M_m and S_jk = sum_m f_j(m) f_k(m) M_m."""
        ms = np.array(self.povm.outcomes)
        f = self.values
        r = np.einsum("jm,mab->jab", f, ms)
        s = np.einsum("jm,km,mab->jkab", f, f, ms)
        return r, s


def weight_matrix(w, n: int | None = None) -> np.ndarray:
    if w is None:
        return np.eye(n)
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = np.diag(w)
    if n is not None and w.shape != (n, n):
        raise ValidationError(f"weight matrix must be {n}x{n}")
    if np.max(np.abs(w - w.T), initial=0.0) > HERM_TOL * max(1.0, np.max(np.abs(w))):
        raise ValidationError("weight matrix is not symmetric")
    if np.linalg.eigvalsh(w)[0] < -PSD_TOL:
        raise ValidationError("weight matrix is not PSD")
    return 0.5 * (w + w.T)


@dataclass(frozen=True)
class BasisChoice:
    vectors: np.ndarray  # columns are |u_q>
    flags: tuple = ()

    def __post_init__(self):
        u = np.asarray(self.vectors, dtype=complex)
        if u.ndim != 2:
            raise ValidationError("basis vectors must form a matrix")
        if np.max(np.abs(u @ u.conj().T - np.eye(u.shape[0]))) > POVM_SUM_TOL:
            raise ValidationError("basis is not complete")
        flags = tuple(bool(f) for f in self.flags) if self.flags else (False,) * u.shape[1]
        if len(flags) != u.shape[1]:
            raise ValidationError("one transpose flag per basis vector is required")
        object.__setattr__(self, "vectors", u)
        object.__setattr__(self, "flags", flags)

    @classmethod
    def computational(cls, d: int) -> "BasisChoice":
        return cls(np.eye(d, dtype=complex))

    def with_flags(self, flags) -> "BasisChoice":
        return BasisChoice(self.vectors, tuple(flags))


@dataclass(frozen=True)
class MomentData:
    s_re: np.ndarray
    s_im_tilde: np.ndarray
    lambdas: np.ndarray
    phis: tuple  # None where lambda_q < ZERO_PROB
    components: np.ndarray = field(repr=False, default=None)  # (q, n, n) S_{u_q,Im}

    @property
    def n(self) -> int:
        return self.s_re.shape[0]

    @property
    def s_tilde(self) -> np.ndarray:
        return self.s_re + 1j * self.s_im_tilde


# ---------------------------------------------------------------- operations


def commutator_moments(rho, xs):
    """(Tr(rho [Xj,Xk]) / 2i, Tr(rho {Xj,Xk}) / 2), both real n x n."""
    rho = as_state(rho).rho
    xs = list(xs)
    if any(np.shape(x) != rho.shape for x in xs):
        raise ValidationError("dimension mismatch between state and observables")
    n = len(xs)
    prod = np.array([[np.trace(rho @ xs[j] @ xs[k]) for k in range(n)] for j in range(n)])
    return prod.imag.copy(), prod.real.copy()


def approx_error_matrix(rho, xs, am: ApproxMeasurement) -> np.ndarray:
    """Q_jk = Tr(rho S_jk) - Tr(rho R_j X_k) - Tr(rho X_j R_k) + Tr(rho X_j X_k)."""
    rho = as_state(rho).rho
    xs = np.array(list(xs))
    if am.povm.dim != rho.shape[0] or xs.shape[1] != rho.shape[0]:
        raise ValidationError("dimension mismatch")
    if am.n != len(xs):
        raise ValidationError("assignment row count differs from observable count")
    r, s = am.operators()
    ts = np.einsum("ab,jkba->jk", rho, s)
    trx = np.einsum("ab,jbc,kca->jk", rho, r, xs)
    txr = np.einsum("ab,jbc,kca->jk", rho, xs, r)
    txx = np.einsum("ab,jbc,kca->jk", rho, xs, xs)
    return ts - trx - txr + txx


def weighted_error(q, w=None) -> float:
    q = np.asarray(q)
    w = weight_matrix(w, q.shape[0])
    return float(np.trace(w @ q.real))


def squared_errors(rho, xs, am: ApproxMeasurement) -> np.ndarray:
    """Per-observable eps_j^2 via the expanded single-observable formula."""
    rho = as_state(rho).rho
    probs = am.povm.probabilities(rho)
    out = []
    for j, x in enumerate(xs):
        f = am.values[j]
        cross = np.array([np.trace(rho @ m @ x).real for m in am.povm.outcomes])
        out.append(np.trace(rho @ x @ x).real + np.sum(f ** 2 * probs) - 2 * np.sum(f * cross))
    return np.array(out)


def optimal_values_for_povm(rho, xs, povm: Povm) -> ApproxMeasurement:
    """f_j(m) = Re Tr(rho M_m X_j) / Tr(rho M_m), zero on null outcomes."""
    rho = as_state(rho).rho
    probs = povm.probabilities(rho)
    f = np.zeros((len(list(xs)), len(povm)))
    for j, x in enumerate(xs):
        for m, mm in enumerate(povm.outcomes):
            if probs[m] >= ZERO_PROB:
                f[j, m] = np.trace(rho @ mm @ x).real / probs[m]
    return ApproxMeasurement(povm, f)


def _flag_components(rho, xs, vectors):
    """Per basis vector: lambda_q, phi_q and S_{u_q} (full complex n x n)."""
    sq = psd_sqrt(rho)
    xs = np.array(list(xs))
    phis_unnorm = sq @ vectors  # columns sqrt(rho)|u_q>
    xphi = np.einsum("jab,bq->qja", xs, phis_unnorm)  # X_j sqrt(rho) u_q
    s_u = np.einsum("qja,qka->qjk", xphi.conj(), xphi)  # <phi|X_j X_k|phi>
    lambdas = np.einsum("aq,aq->q", phis_unnorm.conj(), phis_unnorm).real
    return lambdas, phis_unnorm, s_u


def moment_data(rho, xs, basis: BasisChoice | None = None) -> MomentData:
    rho = as_state(rho)
    xs = list(xs)
    basis = basis or BasisChoice.computational(rho.dim)
    if basis.vectors.shape[0] != rho.dim:
        raise ValidationError("basis dimension differs from state dimension")
    lambdas, phi_u, s_u = _flag_components(rho.rho, xs, basis.vectors)
    signs = np.array([-1.0 if f else 1.0 for f in basis.flags])
    comps = s_u.imag
    s_im = np.einsum("q,qjk->jk", signs, comps)
    _, s_re = commutator_moments(rho, xs)
    phis = tuple(
        phi_u[:, q] / np.sqrt(lambdas[q]) if lambdas[q] >= ZERO_PROB else None
        for q in range(len(lambdas))
    )
    return MomentData(s_re, 0.5 * (s_im - s_im.T), lambdas, phis, comps)


def block_moment_matrix(rho, xs, am: ApproxMeasurement, basis: BasisChoice) -> np.ndarray:
    """The 2n x 2n matrix [[Q~, R~], [R~^dag, S~]] summed over the basis."""
    rho = as_state(rho).rho
    xs = np.array(list(xs))
    n = len(xs)
    r, s = am.operators()
    sq = psd_sqrt(rho)
    total = np.zeros((2 * n, 2 * n), dtype=complex)
    for q in range(basis.vectors.shape[1]):
        phi = sq @ basis.vectors[:, q]
        # columns (F_j - X_j) phi and X_j phi reproduce every block entry
        err = np.array([(r[j] - xs[j]) @ phi for j in range(n)])
        xv = np.array([xs[j] @ phi for j in range(n)])
        qb = np.array([[phi.conj() @ (s[j, k] - r[j] @ xs[k] - xs[j] @ r[k] + xs[j] @ xs[k]) @ phi
                        for k in range(n)] for j in range(n)])
        rb = err.conj() @ xv.T
        sb = xv.conj() @ xv.T
        blk = np.block([[qb, rb], [rb.conj().T, sb]])
        total += blk.T if basis.flags[q] else blk
    return total


# ---------------------------------------------------------------- random draws


def random_unitary(d: int, rng) -> np.ndarray:
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_pure(d: int, rng) -> State:
    return State.from_ket(rng.standard_normal(d) + 1j * rng.standard_normal(d))


def random_mixed(d: int, rng, rank: int | None = None) -> State:
    rank = rank or d
    g = rng.standard_normal((d, rank)) + 1j * rng.standard_normal((d, rank))
    rho = g @ g.conj().T
    return State(herm(rho / np.trace(rho).real))


def random_hermitian(d: int, rng, scale: float = 1.0) -> np.ndarray:
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return scale * herm(g) / np.sqrt(2)


def random_observables(d: int, n: int, rng) -> ObservableSet:
    return ObservableSet(tuple(random_hermitian(d, rng) for _ in range(n)))


def random_povm(d: int, k: int, rng) -> Povm:
    a = rng.standard_normal((k, d, d)) + 1j * rng.standard_normal((k, d, d))
    return povm_from_factors(a)


def povm_from_factors(a) -> Povm:
    """Normalise B_m = A_m^dag A_m to a POVM via N^{-1/2} B_m N^{-1/2}."""
    b = np.einsum("mba,mbc->mac", np.conj(a), a)
    nrm = b.sum(axis=0)
    inv = psd_power(nrm, -0.5, floor=1e-300)
    ms = herm(np.einsum("ab,mbc,cd->mad", inv, b, inv))
    d = ms.shape[1]
    # exact completion: push the rounding residue of sum M into the last element
    ms[-1] += np.eye(d) - ms.sum(axis=0)
    return Povm(tuple(herm(ms)))


def projective_povm(vectors) -> Povm:
    v = np.asarray(vectors, dtype=complex)
    return Povm(tuple(np.outer(v[:, k], v[:, k].conj()) for k in range(v.shape[1])))
