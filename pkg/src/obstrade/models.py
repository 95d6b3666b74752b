"""Named, parametrized problem instances used by the CLI, scripts and tests."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import core
from .core import ValidationError


@dataclass(frozen=True)
class Problem:
    rho: np.ndarray
    observables: tuple
    weights: Optional[np.ndarray] = None
    label: str = ""


@dataclass(frozen=True)
class Model:
    name: str
    param: str
    default: float
    build: Callable[[float], Problem]
    doc: str = ""


def spin1(p: float) -> Problem:
    from .metrology import spin1_observables, spin1_state

    if not 0 <= p <= 1:
        raise ValidationError("spin1 needs 0 <= p <= 1")
    return Problem(spin1_state(p), tuple(spin1_observables()), label=f"spin1(p={p:g})")


def spin1_pair(p: float) -> Problem:
    prob = spin1(p)
    return Problem(prob.rho, prob.observables[:2], label=f"spin1_pair(p={p:g})")


def pauli_pure(theta: float) -> Problem:
    from .experiment import pauli_halves, pure_setting

    psi = pure_setting(theta)
    return Problem(np.outer(psi, psi.conj()), tuple(pauli_halves()), label=f"pauli_pure(theta={theta:g})")


def pauli_mixed(p: float) -> Problem:
    from .experiment import mixed_setting, pauli_halves

    if not 0 <= p <= 1:
        raise ValidationError("pauli_mixed needs 0 <= p <= 1")
    return Problem(mixed_setting(p), tuple(pauli_halves()), label=f"pauli_mixed(p={p:g})")


GAP_X1 = np.array([[1, 0, 0, 0], [0, 1, 0, 0.5], [0, 0, -2, 0], [0, 0.5, 0, 0]], dtype=complex)
GAP_X2 = np.array([[0, 1, 0, 0], [1, 0, 1, 0], [0, 1, 0, -1.5], [0, 0, -1.5, 0]], dtype=complex)


def mixed_gap(p: float) -> Problem:
    """Rank-3 state in dimension 4 where E_0 is not attained."""
    if not -1 <= p <= 1:
        raise ValidationError("mixed_gap needs -1 <= p <= 1")
    rho = np.diag([1 - p, 1, 1 + p, 0]).astype(complex) / 3
    return Problem(rho, (GAP_X1, GAP_X2), label=f"mixed_gap(p={p:g})")


MODELS = {
    "spin1": Model("spin1", "p", 0.5, spin1, "spin-1 state diag(p/2, 1-p, p/2) with J_x, J_y, J_z (unnormalized)"),
    "spin1_pair": Model("spin1_pair", "p", 0.5, spin1_pair, "spin-1 state with J_x, J_y only"),
    "pauli_pure": Model("pauli_pure", "theta", np.pi / 4, pauli_pure, "R_z(pi/2)R_y(theta)|0> with Pauli/2 triple"),
    "pauli_mixed": Model("pauli_mixed", "p", 0.8, pauli_mixed, "p|0><0| + (1-p)|1><1| with Pauli/2 triple"),
    "mixed_gap": Model("mixed_gap", "p", 0.5, mixed_gap, "4-dim mixed instance with a gap to E_0"),
}


def build_model(name: str, value: Optional[float] = None) -> Problem:
    if name not in MODELS:
        raise ValidationError(f"unknown model {name!r}; choose from {sorted(MODELS)}")
    m = MODELS[name]
    return m.build(m.default if value is None else float(value))


def explicit_problem(rho, xs, w=None, label: str = "") -> Problem:
    st = core.as_state(rho)
    obs = core.as_observables(xs)
    return Problem(st.rho, tuple(obs.observables), None if w is None else core.weight_matrix(w, obs.n), label)
