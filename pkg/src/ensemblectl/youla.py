"""Agent plants, stabilizing gains, and stable factor triples.

Each agent's generalized plant maps disturbances ``[w, v]`` and the control
``u`` to regulated outputs ``[z, xi]`` and the measurement ``y``.  A pair of
Riccati gains (state feedback F, observer gain L) yields the observer-based
central controller and the stable factors (H, U, V) with

    closed_loop(Q) = H - U Q V

for any stable parameter Q, which ``verify_parametrization`` checks against
the true loop formed by ``controller_from_Q``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .config import STAB_MARGIN, SynthesisSettings
from .lti import StateSpaceSystem, freq_response, is_stable

__all__ = [
    "GeneralizedPlant",
    "YoulaFactors",
    "build_agent_plant",
    "stabilizing_gains",
    "youla_factors",
    "factorize_agent",
    "controller_from_Q",
    "closed_loop",
    "verify_parametrization",
    "InfeasiblePlantError",
]


class InfeasiblePlantError(RuntimeError):
    """Raised when a Riccati iteration cannot stabilize the named pair."""


@dataclass(frozen=True)
class GeneralizedPlant:
    """State-space plant partitioned into disturbance/control inputs and
    regulated/measurement outputs.

    Inputs are ordered ``[w-channels | u]`` and outputs ``[z-channels | y]``;
    the u- and y-channels are scalar.
    """

    A: np.ndarray
    B_w: np.ndarray
    B_u: np.ndarray
    C_z: np.ndarray
    C_y: np.ndarray
    D_zw: np.ndarray
    D_zu: np.ndarray
    D_yw: np.ndarray

    def __post_init__(self) -> None:
        for name in ("A", "B_w", "B_u", "C_z", "C_y", "D_zw", "D_zu", "D_yw"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), float)))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError("A must be square")
        if self.B_u.shape != (n, 1) or self.C_y.shape != (1, n):
            raise ValueError("u and y channels must be scalar")
        if self.B_w.shape[0] != n or self.C_z.shape[1] != n:
            raise ValueError("B_w/C_z dimensions inconsistent with A")
        if self.D_zw.shape != (self.n_regulated, self.n_disturbances):
            raise ValueError("D_zw shape mismatch")
        if self.D_zu.shape != (self.n_regulated, 1):
            raise ValueError("D_zu shape mismatch")
        if self.D_yw.shape != (1, self.n_disturbances):
            raise ValueError("D_yw shape mismatch")

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_disturbances(self) -> int:
        return self.B_w.shape[1]

    @property
    def n_regulated(self) -> int:
        return self.C_z.shape[0]

    def open_loop_wz(self) -> StateSpaceSystem:
        return StateSpaceSystem(self.A, self.B_w, self.C_z, self.D_zw)


@dataclass(frozen=True)
class YoulaFactors:
    """Stable factor triple plus the gains that generated it."""

    H: StateSpaceSystem  # (pz x mw) closed loop under the central controller
    U: StateSpaceSystem  # (pz x 1) Youla-injection to regulated outputs
    V: StateSpaceSystem  # (1 x mw) disturbances to the innovation
    F: np.ndarray
    L_gain: np.ndarray
    plant: GeneralizedPlant


def build_agent_plant(
    a: float, b: float, control_weight: float = 0.1
) -> GeneralizedPlant:
    """Case-study double-accumulator agent.

    Dynamics: ``x1+ = x1 + x2``; ``x2+ = a x2 + w + b u``; measurement
    ``y = -x1 + v``.  Regulated outputs: position ``z = x1`` and the weighted
    control ``xi = control_weight * u``.
    """
    if not (np.isfinite(a) and np.isfinite(b)):
        raise ValueError("agent parameters must be finite")
    if not (0.5 <= a <= 1.5 and 0.8 <= b <= 1.2):
        warnings.warn(
            f"agent parameters (a={a}, b={b}) outside the sampled ranges", stacklevel=2
        )
    return GeneralizedPlant(
        A=[[1.0, 1.0], [0.0, a]],
        B_w=[[0.0, 0.0], [1.0, 0.0]],  # w drives x2; v does not enter the state
        B_u=[[0.0], [b]],
        C_z=[[1.0, 0.0], [0.0, 0.0]],
        C_y=[[-1.0, 0.0]],
        D_zw=[[0.0, 0.0], [0.0, 0.0]],
        D_zu=[[0.0], [control_weight]],
        D_yw=[[0.0, 1.0]],
    )


def _dare_gain(
    A: np.ndarray,
    B: np.ndarray,
    pair_name: str,
    tol: float = 1e-12,
    max_iter: int = 10_000,
) -> np.ndarray:
    """Fixed-point iteration on the discrete Riccati equation, identity weights.

    Returns F with rho(A + B F) < 1.  Divergence or non-convergence raises
    ``InfeasiblePlantError`` naming the failing pair.
    """
    n = A.shape[0]
    q = np.eye(n)
    r = np.eye(B.shape[1])
    p = q.copy()
    for _ in range(max_iter):
        btp = B.T @ p
        gram = r + btp @ B
        w = btp @ A
        p_next = A.T @ p @ A - w.T @ np.linalg.solve(gram, w) + q
        p_next = 0.5 * (p_next + p_next.T)
        if not np.all(np.isfinite(p_next)) or np.max(np.abs(p_next)) > 1e14:
            raise InfeasiblePlantError(f"Riccati iteration diverged for the {pair_name} pair")
        if np.max(np.abs(p_next - p)) <= tol * max(1.0, np.max(np.abs(p_next))):
            p = p_next
            btp = B.T @ p
            return -np.linalg.solve(r + btp @ B, btp @ A)
        p = p_next
    raise InfeasiblePlantError(
        f"Riccati iteration did not converge within {max_iter} steps for the {pair_name} pair"
    )


def stabilizing_gains(
    plant: GeneralizedPlant, settings: SynthesisSettings | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """State-feedback and observer gains with closed-loop radii below 1.

    Any stabilizing pair parametrizes the same set of closed loops, so the
    Riccati weights are fixed at identity.
    """
    settings = settings or SynthesisSettings()
    f_gain = _dare_gain(
        plant.A, plant.B_u, "state-feedback (A, B_u)", settings.riccati_tol, settings.riccati_max_iter
    )
    l_dual = _dare_gain(
        plant.A.T, plant.C_y.T, "observer (A, C_y)", settings.riccati_tol, settings.riccati_max_iter
    )
    l_gain = l_dual.T
    for mat, label in (
        (plant.A + plant.B_u @ f_gain, "state-feedback"),
        (plant.A + l_gain @ plant.C_y, "observer"),
    ):
        rho = float(np.max(np.abs(np.linalg.eigvals(mat))))
        if rho > 1.0 - STAB_MARGIN:
            raise InfeasiblePlantError(f"{label} closed loop has spectral radius {rho:.6f}")
    return f_gain, l_gain


def youla_factors(
    plant: GeneralizedPlant, f_gain: np.ndarray, l_gain: np.ndarray
) -> YoulaFactors:
    """Observer-based factor triple satisfying ``closed_loop(Q) = H - U Q V``."""
    a, bw, bu = plant.A, plant.B_w, plant.B_u
    cz, cy = plant.C_z, plant.C_y
    dzw, dzu, dyw = plant.D_zw, plant.D_zu, plant.D_yw
    n = plant.n_states
    f = np.atleast_2d(f_gain)
    lg = np.atleast_2d(l_gain).reshape(n, 1)

    a_f = a + bu @ f
    a_l = a + lg @ cy
    # States [x; e] with e the observer error; e is unreachable from the
    # Youla injection, which is what makes the closed loop affine in Q.
    h = StateSpaceSystem(
        np.block([[a_f, -bu @ f], [np.zeros((n, n)), a_l]]),
        np.vstack([bw, bw + lg @ dyw]),
        np.hstack([cz + dzu @ f, -dzu @ f]),
        dzw,
    )
    u = StateSpaceSystem(a_f, bu, cz + dzu @ f, dzu)
    v = StateSpaceSystem(a_l, bw + lg @ dyw, cy, dyw)
    for sys, name in ((h, "H"), (u, "U"), (v, "V")):
        ok, rho = is_stable(sys)
        if not ok:
            raise InfeasiblePlantError(f"factor {name} unstable (rho={rho:.6f}); bad gains")
    return YoulaFactors(H=h, U=u, V=v, F=f, L_gain=lg, plant=plant)


def factorize_agent(
    a: float, b: float, settings: SynthesisSettings | None = None
) -> YoulaFactors:
    """Plant construction, gain synthesis, and factorization in one call."""
    settings = settings or SynthesisSettings()
    plant = build_agent_plant(a, b, control_weight=settings.control_weight)
    f_gain, l_gain = stabilizing_gains(plant, settings)
    return youla_factors(plant, f_gain, l_gain)


def controller_from_Q(factors: YoulaFactors, q: StateSpaceSystem) -> StateSpaceSystem:
    """Observer-based controller augmented with the stable parameter Q.

    Realizes ``u = F xhat - Q (y - C_y xhat)`` with the observer update
    ``xhat+ = A xhat + B_u u + L (C_y xhat - y)``.  Controller order equals
    plant order plus Q order.
    """
    ok, rho = is_stable(q)
    if not ok:
        raise ValueError(f"Youla parameter must be stable, got spectral radius {rho:.6f}")
    if q.n_inputs != 1 or q.n_outputs != 1:
        raise ValueError("Q must be scalar (1x1) for per-agent controllers")
    plant = factors.plant
    a, bu, cy = plant.A, plant.B_u, plant.C_y
    f, lg = factors.F, factors.L_gain
    n, nq = plant.n_states, q.n_states
    aq, bq, cq, dq = q.A, q.B, q.C, q.D
    a_k = np.block(
        [
            [a + lg @ cy + bu @ f + bu @ dq @ cy, -bu @ cq],
            [-bq @ cy, aq],
        ]
    )
    b_k = np.vstack([-(lg + bu @ dq), bq])
    c_k = np.hstack([f + dq @ cy, -cq])
    d_k = -dq
    if nq == 0:
        a_k, b_k, c_k = a_k[:n, :n], b_k[:n], c_k[:, :n]
    return StateSpaceSystem(a_k, b_k, c_k, d_k)


def closed_loop(plant: GeneralizedPlant, controller: StateSpaceSystem) -> StateSpaceSystem:
    """True w -> z map of the plant in feedback with ``u = controller(y)``."""
    a, bw, bu = plant.A, plant.B_w, plant.B_u
    cz, cy = plant.C_z, plant.C_y
    dzw, dzu, dyw = plant.D_zw, plant.D_zu, plant.D_yw
    ak, bk, ck, dk = controller.A, controller.B, controller.C, controller.D
    n, nk = plant.n_states, controller.n_states
    a_cl = np.block(
        [
            [a + bu @ dk @ cy, bu @ ck],
            [bk @ cy, ak],
        ]
    )
    b_cl = np.vstack([bw + bu @ dk @ dyw, bk @ dyw])
    c_cl = np.hstack([cz + dzu @ dk @ cy, dzu @ ck])
    d_cl = dzw + dzu @ dk @ dyw
    if nk == 0:
        a_cl, b_cl, c_cl = a_cl[:n, :n], b_cl[:n], c_cl[:, :n]
    return StateSpaceSystem(a_cl, b_cl, c_cl, d_cl)


def verify_parametrization(
    factors: YoulaFactors,
    q: StateSpaceSystem,
    probe_lambdas: np.ndarray,
) -> float:
    """Max relative gap between the true closed loop and ``H - U Q V``.

    The true loop is assembled independently from ``controller_from_Q`` via
    the feedback interconnection, so this is a genuine two-route check.
    """
    controller = controller_from_Q(factors, q)
    loop = closed_loop(factors.plant, controller)
    worst = 0.0
    for lam in np.asarray(probe_lambdas, dtype=complex):
        direct = freq_response(loop, lam)
        parametrized = freq_response(factors.H, lam) - freq_response(
            factors.U, lam
        ) @ freq_response(q, lam) @ freq_response(factors.V, lam)
        scale = max(1.0, float(np.linalg.norm(parametrized)))
        worst = max(worst, float(np.linalg.norm(direct - parametrized)) / scale)
    return worst
