"""Discrete-time LTI state-space systems and FIR matrices.

Transfer functions follow the convention ``M(lam) = sum_k M_k lam**k`` with
``M_0 = D`` and ``M_k = C A**(k-1) B``, so the frequency response on the unit
circle is ``M(lam) = D + lam * C (I - lam A)^{-1} B`` and a realization is
stable iff the spectral radius of ``A`` is below one.  Frequency grids use
``lam = exp(-1j * theta)`` for ``theta in [0, pi]``; responses at conjugate
points follow from the real coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import STAB_MARGIN

__all__ = [
    "StateSpaceSystem",
    "FirMatrix",
    "static_gain",
    "freq_response",
    "is_stable",
    "impulse_response",
    "series",
    "parallel",
    "feedback",
    "negate",
    "simulate",
    "lambda_grid",
]


def _as_2d(x, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    a = np.atleast_2d(np.asarray(x, dtype=float))
    if rows is not None and cols is not None and a.size == 0:
        a = a.reshape(rows, cols)
    return a


@dataclass(frozen=True)
class StateSpaceSystem:
    """Realization (A, B, C, D) of a discrete-time LTI map.

    Empty ``A`` (zero states) represents a static gain.  Instances are
    immutable and safe to share across workers.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "A", _as_2d(self.A))
        d = _as_2d(self.D)
        n = self.A.shape[0]
        object.__setattr__(self, "B", _as_2d(self.B, n, d.shape[1]))
        object.__setattr__(self, "C", _as_2d(self.C, d.shape[0], n))
        object.__setattr__(self, "D", d)
        if self.A.shape[0] != self.A.shape[1]:
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise ValueError(f"B has {self.B.shape[0]} rows, expected {n}")
        if self.C.shape[1] != n:
            raise ValueError(f"C has {self.C.shape[1]} columns, expected {n}")
        if self.D.shape != (self.C.shape[0], self.B.shape[1]):
            raise ValueError(
                f"D shape {self.D.shape} inconsistent with C/B ({self.C.shape[0]}x{self.B.shape[1]})"
            )

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    @property
    def spectral_radius(self) -> float:
        if self.n_states == 0:
            return 0.0
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))

    def response_grid(self, lams: np.ndarray) -> np.ndarray:
        """Frequency response at many unit-circle points, shape (len(lams), p, m)."""
        lams = np.asarray(lams, dtype=complex)
        if self.n_states == 0:
            return np.broadcast_to(self.D.astype(complex), (lams.size, *self.D.shape)).copy()
        eye = np.eye(self.n_states)
        m = eye[None, :, :] - lams[:, None, None] * self.A[None, :, :]
        x = np.linalg.solve(m, np.broadcast_to(self.B, (lams.size, *self.B.shape)))
        return self.D[None] + lams[:, None, None] * (self.C[None] @ x)

    def __repr__(self) -> str:
        return (
            f"StateSpaceSystem(n={self.n_states}, inputs={self.n_inputs}, "
            f"outputs={self.n_outputs})"
        )


def static_gain(D) -> StateSpaceSystem:
    """Memoryless system with the given feedthrough matrix (scalar accepted)."""
    d = _as_2d(D)
    return StateSpaceSystem(
        np.zeros((0, 0)), np.zeros((0, d.shape[1])), np.zeros((d.shape[0], 0)), d
    )


def is_stable(sys: StateSpaceSystem, margin: float = STAB_MARGIN) -> tuple[bool, float]:
    """Stability flag plus the spectral radius of ``A``.

    Stable means rho(A) <= 1 - margin, keeping factorization numerics away
    from the unit circle.
    """
    rho = sys.spectral_radius
    return rho <= 1.0 - margin, rho


def freq_response(sys: StateSpaceSystem, lam: complex) -> np.ndarray:
    """Evaluate ``D + lam * C (I - lam A)^{-1} B`` at one point of the unit circle."""
    if sys.n_states == 0:
        return sys.D.astype(complex)
    m = np.eye(sys.n_states) - lam * sys.A
    try:
        x = np.linalg.solve(m, sys.B)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"evaluation at a pole: (I - lam*A) singular at lam={lam}") from exc
    return sys.D + lam * (sys.C @ x)


def lambda_grid(thetas: np.ndarray) -> np.ndarray:
    """Unit-circle points ``exp(-1j*theta)`` for the library's grid convention."""
    return np.exp(-1j * np.asarray(thetas, dtype=float))


@dataclass(frozen=True)
class FirMatrix:
    """Finite impulse response: taps ``M_0 .. M_{L-1}``, each p x m.

    The H2 norm is the square root of the total squared tap energy.
    """

    taps: np.ndarray = field()

    def __post_init__(self) -> None:
        t = np.asarray(self.taps, dtype=float)
        if t.ndim == 1:
            t = t[:, None, None]
        if t.ndim != 3 or t.shape[0] < 1:
            raise ValueError("taps must be a (L, p, m) array with L >= 1")
        object.__setattr__(self, "taps", t)

    @property
    def length(self) -> int:
        return self.taps.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.taps.shape[1], self.taps.shape[2]

    def h2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.taps**2)))

    def response_grid(self, lams: np.ndarray) -> np.ndarray:
        lams = np.asarray(lams, dtype=complex)
        powers = lams[:, None] ** np.arange(self.length)[None, :]
        return np.einsum("fk,kpm->fpm", powers, self.taps)

    def scaled(self, factor: float) -> "FirMatrix":
        return FirMatrix(self.taps * factor)

    def as_statespace(self) -> StateSpaceSystem:
        """Shift-register realization (for SISO entries used as controllers)."""
        p, m = self.shape
        length = self.length
        if length == 1:
            return static_gain(self.taps[0])
        n = (length - 1) * m
        a = np.zeros((n, n))
        for k in range(length - 2):
            a[(k + 1) * m : (k + 2) * m, k * m : (k + 1) * m] = np.eye(m)
        b = np.zeros((n, m))
        b[:m, :] = np.eye(m)
        c = np.zeros((p, n))
        for k in range(1, length):
            c[:, (k - 1) * m : k * m] = self.taps[k]
        return StateSpaceSystem(a, b, c, self.taps[0])


def impulse_response(sys: StateSpaceSystem, length: int) -> tuple[FirMatrix, float]:
    """First ``length`` impulse-response taps plus a tail-energy estimate.

    The estimate is ``||C A^(L-1)|| * ||B|| / (1 - rho)`` for stable systems
    and ``inf`` otherwise.  Raises on overflow when iterating an unstable A.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    taps = np.zeros((length, sys.n_outputs, sys.n_inputs))
    taps[0] = sys.D
    stable, rho = is_stable(sys)
    if sys.n_states > 0 and length > 1:
        x = sys.B.copy()
        for k in range(1, length):
            taps[k] = sys.C @ x
            x = sys.A @ x
            if not np.all(np.isfinite(x)) or np.max(np.abs(x), initial=0.0) > 1e150:
                raise OverflowError(
                    f"impulse response of unstable system (rho={rho:.3g}) overflowed at tap {k}"
                )
        tail = (
            float(np.linalg.norm(sys.C @ np.linalg.matrix_power(sys.A, length - 1), 2))
            * float(np.linalg.norm(sys.B, 2))
        )
        tail_energy = tail / (1.0 - rho) if stable else np.inf
    else:
        tail_energy = 0.0
    return FirMatrix(taps), tail_energy


def series(first: StateSpaceSystem, second: StateSpaceSystem) -> StateSpaceSystem:
    """Cascade: output of ``first`` feeds ``second`` (response = S2(lam) S1(lam))."""
    if second.n_inputs != first.n_outputs:
        raise ValueError(
            f"series dimension mismatch: {first.n_outputs} outputs into {second.n_inputs} inputs"
        )
    n1, n2 = first.n_states, second.n_states
    a = np.block(
        [
            [first.A, np.zeros((n1, n2))],
            [second.B @ first.C, second.A],
        ]
    )
    b = np.vstack([first.B, second.B @ first.D])
    c = np.hstack([second.D @ first.C, second.C])
    d = second.D @ first.D
    return StateSpaceSystem(a, b, c, d)


def parallel(g1: StateSpaceSystem, g2: StateSpaceSystem) -> StateSpaceSystem:
    """Sum of responses; systems must share input/output dimensions."""
    if (g1.n_inputs, g1.n_outputs) != (g2.n_inputs, g2.n_outputs):
        raise ValueError("parallel requires matching dimensions")
    n1, n2 = g1.n_states, g2.n_states
    a = np.block([[g1.A, np.zeros((n1, n2))], [np.zeros((n2, n1)), g2.A]])
    b = np.vstack([g1.B, g2.B])
    c = np.hstack([g1.C, g2.C])
    return StateSpaceSystem(a, b, c, g1.D + g2.D)


def negate(g: StateSpaceSystem) -> StateSpaceSystem:
    return StateSpaceSystem(g.A, g.B, -g.C, -g.D)


def feedback(g: StateSpaceSystem, h: StateSpaceSystem | None = None, sign: float = -1.0) -> StateSpaceSystem:
    """Close the loop ``u = r + sign * h(y)`` around ``y = g(u)``.

    Default is negative feedback.  ``h=None`` means unity feedback.  Raises if
    the algebraic loop ``I - sign * D_g D_h`` is singular (ill-posed loop).
    """
    if h is None:
        h = static_gain(np.eye(g.n_outputs))
    if h.n_inputs != g.n_outputs or h.n_outputs != g.n_inputs:
        raise ValueError("feedback dimension mismatch")
    m = np.eye(g.n_inputs) - sign * (h.D @ g.D)
    if abs(np.linalg.det(m)) < 1e-12:
        raise ValueError("ill-posed algebraic loop: I - sign*Dh*Dg singular")
    minv = np.linalg.inv(m)
    n1, n2 = g.n_states, h.n_states
    # u = minv @ (r + sign*(h.C x_h + h.D g.C x_g))
    kx_g = sign * (minv @ h.D @ g.C)
    kx_h = sign * (minv @ h.C)
    a = np.block(
        [
            [g.A + g.B @ kx_g, g.B @ kx_h],
            [h.B @ (g.C + g.D @ kx_g), h.A + h.B @ g.D @ kx_h],
        ]
    )
    b = np.vstack([g.B @ minv, h.B @ g.D @ minv])
    c = np.hstack([g.C + g.D @ kx_g, g.D @ kx_h])
    d = g.D @ minv
    return StateSpaceSystem(a, b, c, d)


def simulate(
    sys: StateSpaceSystem,
    inputs: np.ndarray,
    x0: np.ndarray | None = None,
) -> np.ndarray:
    """Step ``x(k+1) = A x + B u``, ``y = C x + D u`` over a finite input sequence.

    ``inputs`` is (T, m); returns outputs with shape (T, p).
    """
    u = np.atleast_2d(np.asarray(inputs, dtype=float))
    if u.shape[1] != sys.n_inputs:
        if u.shape[0] == sys.n_inputs:
            u = u.T
        else:
            raise ValueError(f"inputs must have {sys.n_inputs} columns")
    x = np.zeros(sys.n_states) if x0 is None else np.asarray(x0, dtype=float).ravel()
    if x.size != sys.n_states:
        raise ValueError("x0 has wrong dimension")
    y = np.empty((u.shape[0], sys.n_outputs))
    for k in range(u.shape[0]):
        y[k] = sys.C @ x + sys.D @ u[k]
        x = sys.A @ x + sys.B @ u[k]
    return y
