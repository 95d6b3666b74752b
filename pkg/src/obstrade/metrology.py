"""Multiparameter estimation: SLDs, Fisher information and the tradeoff bounds."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import core
from .analytic import (BasisChoice, bound_mixed_pair_EA, bound_multi, bound_ozawa_pair,
                       frobenius_bound, pairwise_sum_bound)
from .core import ValidationError, as_state, herm, psd_power
from .sdp import SdpSettings

SLD_DENOM = 1e-12
SLD_RESID = 1e-8
P_SKIP = 1e-12
DP_FLAG = 1e-8
MAX_COLLECTIVE_DIM = 256


@dataclass
class ParamFamily:
    name: str
    n_params: int
    state_fn: Callable[[np.ndarray], np.ndarray]
    deriv_fn: Optional[Callable[[np.ndarray], list]] = None
    h: float = 1e-5
    domain: Optional[Callable[[np.ndarray], None]] = field(default=None, repr=False)
    dim: Optional[int] = None

    def _x(self, x):
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.n_params:
            raise ValidationError(f"{self.name} takes {self.n_params} parameters, got {x.size}")
        if self.domain is not None:
            self.domain(x)
        return x

    def state(self, x) -> core.State:
        return core.State(self.state_fn(self._x(x)))

    def derivatives(self, x, richardson: bool = False) -> list:
        x = self._x(x)
        if self.deriv_fn is not None:
            return [herm(np.asarray(d, dtype=complex)) for d in self.deriv_fn(x)]
        return finite_difference(self.state_fn, x, self.h, richardson)

    def slds(self, x) -> list:
        rho = self.state(x).rho
        return [sld(rho, d) for d in self.derivatives(x)]

    def qfi(self, x) -> np.ndarray:
        return qfi_matrix(self.state(x), self.slds(x))


def finite_difference(fn, x, h: float = 1e-5, richardson: bool = False) -> list:
    out = []
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = 1.0
        d1 = (fn(x + h * e) - fn(x - h * e)) / (2 * h)
        if richardson:
            d2 = (fn(x + 2 * h * e) - fn(x - 2 * h * e)) / (4 * h)
            d1 = (4 * d1 - d2) / 3
        out.append(herm(np.asarray(d1, dtype=complex)))
    return out


def restrict(family: ParamFamily, free: Sequence[int], base) -> ParamFamily:
    """Sub-family varying only the parameters listed in free around base."""
    free = list(free)
    base = np.asarray(base, dtype=float)

    def embed(z):
        x = base.copy()
        x[free] = z
        return x

    deriv = None
    if family.deriv_fn is not None:
        deriv = lambda z: [family.deriv_fn(embed(z))[j] for j in free]
    return ParamFamily(f"{family.name}[{','.join(map(str, free))}]", len(free),
                       lambda z: family.state_fn(embed(z)), deriv, family.h,
                       (lambda z: family.domain(embed(z))) if family.domain else None, family.dim)


# ------------------------------------------------------------ core quantities


def sld(rho, drho) -> np.ndarray:
    """Eigenbasis SLD: L_ab = 2 (d rho)_ab / (lambda_a + lambda_b)."""
    rho = as_state(rho).rho
    drho = core.hermitian(drho, "drho")
    if abs(np.trace(drho)) > 1e-8:
        raise ValidationError("drho must be traceless")
    lam, v = np.linalg.eigh(rho)
    lam = np.clip(lam, 0.0, None)
    dr = v.conj().T @ drho @ v
    den = lam[:, None] + lam[None, :]
    lab = np.where(den > SLD_DENOM, 2 * dr / np.where(den > SLD_DENOM, den, 1.0), 0.0)
    out = herm(v @ lab @ v.conj().T)
    resid = np.max(np.abs(0.5 * (rho @ out + out @ rho) - drho))
    if resid > SLD_RESID:
        raise ValidationError(f"drho is not compatible with the support of rho (residual {resid:.2e})")
    return out


def qfi_matrix(rho, slds) -> np.ndarray:
    rho = as_state(rho).rho
    n = len(slds)
    f = np.array([[0.5 * np.trace(rho @ core.anticomm(slds[j], slds[k])).real for k in range(n)]
                  for j in range(n)])
    return 0.5 * (f + f.T)


def cfi_matrix(family: ParamFamily, povm: core.Povm, x, h: float | None = None) -> np.ndarray:
    rho = family.state(x).rho
    if h is not None and family.deriv_fn is None:
        derivs = finite_difference(family.state_fn, family._x(x), h)
    else:
        derivs = family.derivatives(x)
    return cfi_from_derivatives(rho, derivs, povm)


def cfi_from_derivatives(rho, derivs, povm: core.Povm) -> np.ndarray:
    rho = as_state(rho).rho
    n = len(derivs)
    f = np.zeros((n, n))
    for m in povm.outcomes:
        p = np.trace(rho @ m).real
        dp = np.array([np.trace(d @ m).real for d in derivs])
        if p < P_SKIP:
            if np.max(np.abs(dp), initial=0.0) > DP_FLAG:
                raise ValidationError("outcome with vanishing probability has nonzero derivative (singular Fisher information)")
            continue
        f += np.outer(dp, dp) / p
    return 0.5 * (f + f.T)


def optimal_sld_values(rho, derivs, povm: core.Povm) -> core.ApproxMeasurement:
    """f_j(m) = d_j p(m) / p(m), the assignment for which Q_Re = F_Q - F_C."""
    rho = as_state(rho).rho
    probs = povm.probabilities(rho)
    f = np.zeros((len(derivs), len(povm)))
    for m, mm in enumerate(povm.outcomes):
        if probs[m] >= core.ZERO_PROB:
            f[:, m] = [np.trace(d @ mm).real / probs[m] for d in derivs]
    return core.ApproxMeasurement(povm, f)


def _inv_half(f_q):
    f_q = np.asarray(f_q, dtype=float)
    w = np.linalg.eigvalsh(f_q)
    if w[0] <= 1e-12 * max(1.0, w[-1]):
        raise ValidationError("quantum Fisher information matrix is singular")
    return psd_power(0.5 * (f_q + f_q.T), -0.5)


def normalized_slds(f_q, slds) -> list:
    g = _inv_half(f_q)
    return [herm(sum(g[j, k] * slds[k] for k in range(len(slds)))) for j in range(len(slds))]


# ------------------------------------------------------------ bounds


def metrology_norm_term(f_q, s_im_tilde) -> float:
    g = _inv_half(f_q)
    s = np.asarray(s_im_tilde, dtype=float)
    return core.matrix_norm(g @ (0.5 * (s - s.T)) @ g)


def metrology_bound_analytic(f_q, s_im_tilde) -> float:
    """Tr(F_Q^-1 F_C) <= n - (sqrt(||F_Q^-1/2 S~_Im F_Q^-1/2||_F + 1) - 1)^2."""
    n = np.shape(f_q)[0]
    return float(n - frobenius_bound(metrology_norm_term(f_q, s_im_tilde)))


def metrology_analytic_for_state(rho, slds, basis: BasisChoice | None = None) -> tuple:
    """(bound, norm term, basis flags) with S~_Im chosen by the analytic-module heuristics."""
    f_q = qfi_matrix(rho, slds)
    _inv_half(f_q)
    rep = bound_multi(rho, slds, basis)
    t = rep.witness["norm_term"]
    return float(len(slds) - frobenius_bound(t)), t, rep.witness.get("flags")


def pairwise_comparison_value(f_q, s_im_tilde) -> float:
    """n - ||F_Q^-1/2 S~_Im F_Q^-1/2||_F^2 / (2(n-1)), the ceiling on any Ozawa pair-sum bound."""
    n = np.shape(f_q)[0]
    return float(n - metrology_norm_term(f_q, s_im_tilde) ** 2 / (2 * (n - 1)))


def metrology_pairwise_bound(rho, slds, pair_method: str = "ozawa") -> float:
    f_q = qfi_matrix(rho, slds)
    lt = normalized_slds(f_q, slds)
    return float(len(slds) - pairwise_sum_bound(rho, lt, None, pair_method).value)


def metrology_bound_sdp(rho, slds, settings: SdpSettings | None = None) -> float:
    """n - E_0(rho, F_Q^-1/2 L, W = I)."""
    from .sdpbounds import bound_e0

    f_q = qfi_matrix(rho, slds)
    lt = normalized_slds(f_q, slds)
    return float(len(slds) - bound_e0(rho, lt, None, settings).value)


def metrology_bound_two_param(rho, l1, l2, w1: float = 1.0, w2: float = 1.0,
                              basis: BasisChoice | None = None) -> float:
    """Lower bound on w1 (F_Q - F_C)_11 + w2 (F_Q - F_C)_22."""
    return bound_mixed_pair_EA(rho, l1, l2, w1, w2, basis).value


def metrology_ozawa_two_param(rho, l1, l2, w1: float = 1.0, w2: float = 1.0) -> float:
    return bound_ozawa_pair(rho, l1, l2, w1, w2).value


# ------------------------------------------------------------ families


def _bloch(theta, phi):
    return np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])


def _dot_sigma(v):
    return sum(c * s for c, s in zip(v, core.PAULI))


def qubit_bloch() -> ParamFamily:
    """rho = (I + lambda n(theta, phi).sigma) / 2."""

    def state(x):
        lam, th, ph = x
        return 0.5 * (np.eye(2) + lam * _dot_sigma(_bloch(th, ph)))

    def deriv(x):
        lam, th, ph = x
        n = _bloch(th, ph)
        dth = np.array([np.cos(th) * np.cos(ph), np.cos(th) * np.sin(ph), -np.sin(th)])
        dph = np.array([-np.sin(th) * np.sin(ph), np.sin(th) * np.cos(ph), 0.0])
        return [0.5 * _dot_sigma(n), 0.5 * lam * _dot_sigma(dth), 0.5 * lam * _dot_sigma(dph)]

    def domain(x):
        if not abs(x[0]) <= 1:
            raise ValidationError("qubit_bloch needs |lambda| <= 1")

    return ParamFamily("qubit_bloch", 3, state, deriv, domain=domain, dim=2)


# each amplitude of the three-qubit state is a product of factors (param, kind)
_S, _C, _E = "sin", "cos", "exp"


def _three_qubit_terms():
    # parameter order: theta0..theta4, phi0..phi4
    t = lambda k: k
    p = lambda k: 5 + k
    return {
        0b001: [(t(0), _S), (t(1), _S), (t(2), _S)],
        0b010: [(t(0), _S), (t(1), _S), (t(2), _C), (p(1), _E)],
        0b100: [(t(0), _S), (t(1), _C), (p(2), _E)],
        0b110: [(t(0), _C), (p(0), _E), (t(3), _S), (t(4), _S)],
        0b101: [(t(0), _C), (p(0), _E), (t(3), _S), (t(4), _C), (p(3), _E)],
        0b011: [(t(0), _C), (p(0), _E), (t(3), _C), (p(4), _E)],
    }


def _factor(kind, v, deriv=False):
    if kind == _S:
        return np.cos(v) if deriv else np.sin(v)
    if kind == _C:
        return -np.sin(v) if deriv else np.cos(v)
    return 1j * np.exp(1j * v) if deriv else np.exp(1j * v)


def three_qubit_ket(x, wrt: int | None = None) -> np.ndarray:
    psi = np.zeros(8, dtype=complex)
    for idx, factors in _three_qubit_terms().items():
        if wrt is not None and wrt not in [f[0] for f in factors]:
            continue
        amp = 1.0 + 0j
        for k, kind in factors:
            amp *= _factor(kind, x[k], deriv=(k == wrt))
        psi[idx] = amp
    return psi


def three_qubit() -> ParamFamily:
    """|psi> = sin t0 |psi1> + cos t0 e^{i p0} |psi2>, parameters (t0..t4, p0..p4)."""

    def state(x):
        psi = three_qubit_ket(x)
        return np.outer(psi, psi.conj())

    def deriv(x):
        psi = three_qubit_ket(x)
        out = []
        for j in range(10):
            dpsi = three_qubit_ket(x, wrt=j)
            out.append(np.outer(dpsi, psi.conj()) + np.outer(psi, dpsi.conj()))
        return out

    return ParamFamily("three_qubit", 10, state, deriv, dim=8)


THREE_QUBIT_FIVE = (0, 1, 2, 6, 7)  # theta0, theta1, theta2, phi1, phi2


def three_qubit_five(base=None) -> ParamFamily:
    base = np.full(10, np.pi / 4) if base is None else np.asarray(base, dtype=float)
    return restrict(three_qubit(), THREE_QUBIT_FIVE, base)


def spin1_state(p: float) -> np.ndarray:
    return np.diag([p / 2, 1 - p, p / 2]).astype(complex)


def spin1_observables():
    x1 = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex)
    x2 = np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]])
    x3 = np.diag([1, 0, -1]).astype(complex)
    return [x1, x2, x3]


def spin1_p() -> ParamFamily:
    def domain(x):
        if not 0 <= x[0] <= 1:
            raise ValidationError("spin1_p needs 0 <= p <= 1")

    return ParamFamily("spin1_p", 1, lambda x: spin1_state(x[0]),
                       lambda x: [np.diag([0.5, -1.0, 0.5]).astype(complex)], domain=domain, dim=3)


def builtin_families() -> dict:
    return {"qubit_bloch": qubit_bloch, "three_qubit": three_qubit,
            "three_qubit_five": three_qubit_five, "spin1_p": spin1_p}


def collectivize(family: ParamFamily, copies: int) -> ParamFamily:
    """rho -> rho^{(x) p}; derivatives sum over copy positions."""
    if copies < 1:
        raise ValidationError("copies must be >= 1")
    if copies == 1:
        return family
    if family.dim is not None and family.dim ** copies > MAX_COLLECTIVE_DIM:
        raise ValidationError(f"collective dimension {family.dim ** copies} exceeds {MAX_COLLECTIVE_DIM}")

    def state(x):
        rho = family.state_fn(x)
        if rho.shape[0] ** copies > MAX_COLLECTIVE_DIM:
            raise ValidationError(f"collective dimension {rho.shape[0] ** copies} exceeds {MAX_COLLECTIVE_DIM}")
        return core.kron(*([rho] * copies))

    def deriv(x):
        rho = family.state_fn(x)
        ds = family.deriv_fn(x) if family.deriv_fn else finite_difference(family.state_fn, x, family.h)
        out = []
        for dj in ds:
            tot = 0
            for pos in range(copies):
                tot = tot + core.kron(*[dj if i == pos else rho for i in range(copies)])
            out.append(tot)
        return out

    dim = family.dim ** copies if family.dim is not None else None
    return ParamFamily(f"{family.name}^{copies}", family.n_params, state, deriv, family.h, family.domain, dim)
