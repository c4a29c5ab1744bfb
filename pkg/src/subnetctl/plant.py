"""Discrete LTI plant simulation and LQR synthesis.

A plant evolves as x(t+1) = A x(t) + B u(t) + w(t).  The controller sits on
the far side of an uplink: when a (possibly delayed, noisy) state observation
arrives it applies u = -phi * x_obs, otherwise it holds the previous action.
The instantaneous quadratic cost eta = x'Qx + u'Ru is the health signal the
whole stack is built around.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Cart-pole on a 1-ms grid: [cart pos, cart vel, pole angle, pole rate].
# Open loop is violently unstable (spectral radius ~11.34 per step).
CARTPOLE_A = np.array(
    [
        [1.0, 1.0, 0.0, 0.0],
        [0.0, 1.0, -1.78, 0.0],
        [0.0, 0.0, 1.0, 1.0],
        [0.0, 0.0, 106.91, 1.0],
    ]
)
CARTPOLE_B = np.array([[0.0], [1.97], [0.0], [-18.18]])
CARTPOLE_Q = np.diag([1.0, 10.0, 10.0, 100.0])
CARTPOLE_R = np.array([[0.1]])


def _check_symmetric_psd(M: np.ndarray, name: str, strict: bool = False) -> None:
    if not np.allclose(M, M.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    eigs = np.linalg.eigvalsh(M)
    if strict:
        if eigs.min() <= 0:
            raise ValueError(f"{name} must be positive definite (min eig {eigs.min():.3g})")
    elif eigs.min() < -1e-12:
        raise ValueError(f"{name} must be positive semidefinite (min eig {eigs.min():.3g})")


@dataclass
class PlantModel:
    """LTI plant (A, B) with quadratic cost weights (Q, R) and noise covariance."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    noise_cov: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        self.noise_cov = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        q, r = self.B.shape
        if self.A.shape != (q, q):
            raise ValueError(f"A must be {q}x{q}, got {self.A.shape}")
        if self.Q.shape != (q, q) or self.R.shape != (r, r):
            raise ValueError("Q/R dimensions inconsistent with A/B")
        if self.noise_cov.shape != (q, q):
            raise ValueError("noise_cov must match the state dimension")
        _check_symmetric_psd(self.Q, "Q")
        _check_symmetric_psd(self.R, "R", strict=True)
        _check_symmetric_psd(self.noise_cov, "noise_cov")

    @property
    def q(self) -> int:
        return self.A.shape[0]

    @property
    def r(self) -> int:
        return self.B.shape[1]


def cartpole(sigma_w: float = 1e-3) -> PlantModel:
    """The default cart-pole instance with isotropic noise of std sigma_w."""
    q = CARTPOLE_A.shape[0]
    return PlantModel(
        A=CARTPOLE_A.copy(),
        B=CARTPOLE_B.copy(),
        Q=CARTPOLE_Q.copy(),
        R=CARTPOLE_R.copy(),
        noise_cov=(sigma_w**2) * np.eye(q),
    )


@dataclass
class LqrGain:
    phi: np.ndarray        # r x q feedback gain, u = -phi x
    riccati_P: np.ndarray  # converged Riccati solution


@dataclass
class PlantState:
    x: np.ndarray
    u_prev: np.ndarray
    lqr_running_sum: float = 0.0
    steps: int = 0


def make_state(model: PlantModel, x0) -> PlantState:
    x0 = np.asarray(x0, dtype=float).reshape(model.q)
    return PlantState(x=x0, u_prev=np.zeros(model.r))


def solve_dare(model: PlantModel, tol: float = 1e-10, max_iter: int = 10000) -> LqrGain:
    """LQR gain via fixed-point iteration of the discrete Riccati recursion.

    Iterates P <- A'PA - A'PB (R + B'PB)^-1 B'PA + Q from P0 = Q until the
    max-abs element change drops below tol.  Raises if the iteration fails to
    converge (non-stabilizable model) or if (R + B'PB) becomes singular.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    A, B, Q, R = model.A, model.B, model.Q, model.R
    P = Q.copy()
    for _ in range(max_iter):
        M = R + B.T @ P @ B
        try:
            K = np.linalg.solve(M, B.T @ P @ A)
        except np.linalg.LinAlgError as e:
            raise RuntimeError(f"singular (R + B'PB) in Riccati iteration: {e}") from e
        # Joseph-form evaluation of the same map, A'PA - A'PB K + Q; keeps the
        # iterate symmetric so round-off does not swamp tight tolerances
        Acl = A - B @ K
        P_next = Acl.T @ P @ Acl + K.T @ R @ K + Q
        P_next = 0.5 * (P_next + P_next.T)
        if np.max(np.abs(P_next - P)) < tol:
            P = P_next
            break
        P = P_next
    else:
        raise RuntimeError(f"Riccati iteration did not converge in {max_iter} iterations")
    phi = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    closed = A - B @ phi
    rho = np.max(np.abs(np.linalg.eigvals(closed)))
    if rho >= 1.0:
        raise RuntimeError(f"closed loop not stable (spectral radius {rho:.6f})")
    return LqrGain(phi=phi, riccati_P=0.5 * (P + P.T))


def step_plant(state, model, gain, delivered=None, rng=None):
    """Advance one step; returns (new_state, eta).

    `delivered`, when present, is the observed state x(t - t_D) + measurement
    noise, already assembled by the caller.  Closed loop: u = -phi*delivered.
    No delivery: the actuator holds u_prev.  eta is evaluated on the
    pre-update true state and the applied u, then x <- Ax + Bu + w_process.
    """
    if delivered is not None:
        u = -(gain.phi @ np.asarray(delivered, dtype=float).reshape(model.q))
    else:
        u = state.u_prev.copy()
    x = state.x
    eta = float(x @ model.Q @ x + u @ model.R @ u)
    w = _draw_noise(model, rng)
    x_next = model.A @ x + model.B @ u + w
    return (
        PlantState(
            x=x_next,
            u_prev=u,
            lqr_running_sum=state.lqr_running_sum + eta,
            steps=state.steps + 1,
        ),
        eta,
    )


def _draw_noise(model: PlantModel, rng) -> np.ndarray:
    if rng is None or not np.any(model.noise_cov):
        return np.zeros(model.q)
    # isotropic fast path; general covariance via its symmetric square root
    diag = np.diag(model.noise_cov)
    if np.allclose(model.noise_cov, np.diag(diag)):
        return rng.normal(0.0, np.sqrt(diag))
    w, V = np.linalg.eigh(model.noise_cov)
    root = V @ np.diag(np.sqrt(np.maximum(w, 0.0))) @ V.T
    return root @ rng.normal(size=model.q)


def noisy_observation(x_past: np.ndarray, model: PlantModel, rng) -> np.ndarray:
    """Measurement model: the delivered observation is x(t - t_D) + w, w ~ N(0, noise_cov)."""
    return np.asarray(x_past, dtype=float) + _draw_noise(model, rng)


def mean_lqr(state: PlantState, horizon: int) -> float:
    """Mean LQR cost over exactly `horizon` steps."""
    if horizon == 0:
        raise ValueError("horizon must be positive")
    if state.steps != horizon:
        raise ValueError(f"state has {state.steps} steps, expected {horizon}")
    return state.lqr_running_sum / horizon
