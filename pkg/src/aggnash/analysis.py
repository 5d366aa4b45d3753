"""Gain bound, Lyapunov-bound estimation, decay fitting and convergence reports."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.integrate import simpson

from . import _backend
from .dynamics import (
    AlgorithmParams,
    OrthogonalBasis,
    Trajectory,
    _plan,
    ancillary_matrix,
    orthogonal_basis,
    projection_matrices,
    to_error_coordinates,
)
from .errors import HorizonTooShort, InputShapeError
from .game_model import GameConstants, GameSpec, stacked_phi
from .switching_graph import SwitchingSchedule, laplacian

TAIL_TOL = 1e-6
# Transition matrices growing past this are treated as non-decaying.
_DIVERGENCE = 1e12


def delta_star(constants: GameConstants, p: float, lambda_min_Q: float = 1.0,
               alpha: float = 1.0) -> float:
    """Largest action gain for which exponential convergence is certified.

    With ``M = 2 p ell sqrt(alpha^2 + 1)``::

        delta* = 4 mu lambda_min(Q) / ((theta_hat + M theta)^2 + 4 mu M theta_hat)

    The bound is sufficient, not necessary.
    """
    for name, v in (("p", p), ("lambda_min_Q", lambda_min_Q), ("alpha", alpha)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    c = constants
    M = 2.0 * p * c.ell * math.sqrt(alpha ** 2 + 1.0)
    return 4.0 * c.mu * lambda_min_Q / ((c.theta_hat + M * c.theta) ** 2
                                        + 4.0 * c.mu * M * c.theta_hat)


class DecayFit(NamedTuple):
    lambda_hat: float
    gamma_hat: float
    r_squared: float


def fit_decay_rate(times, norms, discard_fraction: float = 0.2,
                   floor: float = 1e-14) -> DecayFit:
    """Least-squares fit of ``log(norm) = log(gamma) - lambda t``.

    Samples from the first one below ``floor`` onwards are dropped as
    numerical zero, then the first ``discard_fraction`` of the remaining time
    span is discarded as transient.  ``lambda_hat`` is positive for decay and
    negative for growth.
    """
    if not 0 <= discard_fraction < 1:
        raise ValueError("discard_fraction must lie in [0, 1)")
    t = np.asarray(times, dtype=float)
    y = np.asarray(norms, dtype=float)
    if t.shape != y.shape:
        raise InputShapeError("times and norms must have equal length")
    low = np.flatnonzero(~(y >= floor))
    if low.size:
        t, y = t[:low[0]], y[:low[0]]
    if t.size:
        keep = t >= t[0] + discard_fraction * (t[-1] - t[0])
        t, y = t[keep], y[keep]
    if t.size < 10:
        raise ValueError(f"need at least 10 usable samples, have {t.size}")
    logy = np.log(y)
    slope, intercept = np.polyfit(t, logy, 1)
    resid = logy - (slope * t + intercept)
    ss_tot = float(np.sum((logy - logy.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(-slope), float(math.exp(intercept)), r2)


@dataclass
class LyapunovEstimate:
    """Numerical stand-in for the converse-Lyapunov matrix P(t)."""

    p_hat: float
    gamma_hat: float
    lambda_hat: float
    Q_matrix: np.ndarray
    truncation_horizon: float
    probe_times: list
    tail_bound: float
    c1: float
    c2: float
    P: list = field(default_factory=list, repr=False)

    @property
    def lambda_min_Q(self) -> float:
        return float(np.linalg.eigvalsh(self.Q_matrix)[0])

    def to_dict(self) -> dict:
        return {
            "p_hat": self.p_hat,
            "gamma_hat": self.gamma_hat,
            "lambda_hat": self.lambda_hat,
            "lambda_min_Q": self.lambda_min_Q,
            "Q_is_identity": bool(np.array_equal(self.Q_matrix, np.eye(len(self.Q_matrix)))),
            "truncation_horizon": self.truncation_horizon,
            "probe_times": [float(t) for t in self.probe_times],
            "tail_bound": self.tail_bound,
            "c1": self.c1,
            "c2": self.c2,
        }


def default_probe_times(schedule: SwitchingSchedule) -> list[float]:
    """Switching instants of one period plus the midpoint of every segment."""
    period = schedule.period if schedule.repeat else schedule.segments[0][1]
    probes = []
    for start, end, _ in schedule.pieces(0.0, period):
        probes += [start, 0.5 * (start + end)]
    return probes


def _ancillary_mats(schedule, params, n):
    basis = orthogonal_basis(schedule.n_nodes, n)
    return {k: ancillary_matrix(laplacian(g), params, basis, n)
            for k, g in enumerate(schedule.graphs)}


def _gramian_from(schedule, mats, Q, t, horizon, h, backend, norm_every=10):
    """Integrate Phi(tau, t) over [t, t+horizon] and accumulate int Phi^T Q Phi."""
    d = Q.shape[0]
    Phi = np.eye(d)
    zero = np.zeros(d)
    P = np.zeros((d, d))
    taus, norms = [0.0], [1.0]
    for start, end, gidx in schedule.pieces(t, t + horizon):
        A = mats[gidx]
        n_full, h_last = _plan(start, end, h)
        first = Phi.copy()
        done, rec = _backend.affine_steps(A, zero, Phi, h, n_full, 1,
                                          _DIVERGENCE, backend)
        if done < n_full or _backend.affine_steps(A, zero, Phi, h_last, 1, 1,
                                                  _DIVERGENCE, backend)[0] < 1:
            raise HorizonTooShort(math.inf, math.inf)
        stack = np.concatenate([first[None], rec, Phi[None]])
        ts = np.concatenate([start + h * np.arange(n_full + 1), [end]])
        G = np.matmul(stack.transpose(0, 2, 1), Q @ stack)
        P += simpson(G, x=ts, axis=0)
        sub = slice(norm_every, None, norm_every)
        taus.extend(ts[sub] - t)
        norms.extend(np.linalg.norm(stack[sub], 2, axis=(1, 2)))
    return 0.5 * (P + P.T), np.asarray(taus), np.asarray(norms)


def estimate_p(schedule: SwitchingSchedule, params: AlgorithmParams, Q=None,
               probe_times: Sequence[float] | None = None, horizon: float = 40.0,
               h: float = 1e-3, action_dim: int = 1, tail_tol: float = TAIL_TOL,
               backend: str | None = None) -> LyapunovEstimate:
    """Estimate ``p >= sup_t |P(t)|`` with ``P(t) = int_t^inf Phi^T Q Phi``.

    For each probe time the transition matrix of the ancillary system is
    integrated column-wise over ``[t, t + horizon]`` and the Gramian is
    accumulated by Simpson quadrature on each constant piece.  A decay law
    ``|Phi(tau, t)| <= gamma exp(-lambda (tau - t))`` is fitted to the sampled
    norms; if the neglected tail ``gamma^2 exp(-2 lambda H) |Q| / (2 lambda)``
    exceeds ``tail_tol``, :class:`HorizonTooShort` is raised.
    """
    N = schedule.n_nodes
    if Q is None:
        Q = np.eye((2 * N - 1) * action_dim)
    Q = np.asarray(Q, dtype=float)
    n, rem = divmod(Q.shape[0], 2 * N - 1)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or rem or n < 1:
        raise InputShapeError(f"Q must be square with size a multiple of {2 * N - 1}")
    if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q)[0] <= 0:
        raise ValueError("Q must be symmetric positive definite")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    probes = default_probe_times(schedule) if probe_times is None else list(probe_times)
    mats = _ancillary_mats(schedule, params, n)

    Ps, fits, samples = [], [], []
    for t in probes:
        P, taus, norms = _gramian_from(schedule, mats, Q, float(t), horizon, h, backend)
        Ps.append(P)
        samples.append((taus, norms))
        try:
            fits.append(fit_decay_rate(taus, norms, discard_fraction=0.2))
        except ValueError:
            # transition matrix collapsed below the floor: decays very fast
            fits.append(DecayFit(math.inf, 1.0, 1.0))
    lam = min(f.lambda_hat for f in fits)
    q_norm = float(np.linalg.norm(Q, 2))
    if not lam > 0:
        raise HorizonTooShort(math.inf, math.inf)
    if math.isinf(lam):
        gamma, tail = 1.0, 0.0
    else:
        gamma = max(float(np.max(nm * np.exp(lam * tau))) for tau, nm in samples)
        tail = gamma ** 2 * math.exp(-2 * lam * horizon) * q_norm / (2 * lam)
    if tail > tail_tol:
        needed = math.log(gamma ** 2 * q_norm / (2 * lam * tail_tol)) / (2 * lam)
        raise HorizonTooShort(tail, needed)
    eigs = [np.linalg.eigvalsh(P) for P in Ps]
    return LyapunovEstimate(
        p_hat=max(float(e[-1]) for e in eigs),
        gamma_hat=gamma,
        lambda_hat=lam,
        Q_matrix=Q,
        truncation_horizon=float(horizon),
        probe_times=[float(t) for t in probes],
        tail_bound=tail,
        c1=min(float(e[0]) for e in eigs),
        c2=max(float(e[-1]) for e in eigs),
        P=Ps,
    )


@dataclass(frozen=True)
class Tolerances:
    x: float = 1e-4
    s: float = 1e-4
    nu: float = 1e-4
    r_squared: float = 0.9
    nu_drift: float = 1e-9
    z1: float = 1e-9
    discard_fraction: float = 0.2
    fit_floor: float = 1e-11

    @classmethod
    def from_dict(cls, data: dict | None) -> "Tolerances":
        return cls(**(data or {}))


@dataclass
class ConvergenceReport:
    terminal_errors: dict
    decay: dict
    invariants: dict
    bounded: bool
    sup_norm: float
    diverged_at: float | None
    t_end: float
    tolerances: Tolerances
    checks: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = self.passed
        return d


def _z1_series(trajectory: Trajectory, game: GameSpec, x_star, basis: OrthogonalBasis,
               alpha: float) -> np.ndarray:
    return np.array([
        np.linalg.norm(to_error_coordinates(trajectory.state(k), game, x_star, basis, alpha).z1)
        for k in range(len(trajectory.times))
    ])


def verify_theorem1(trajectory: Trajectory, game: GameSpec, x_star,
                    params: AlgorithmParams, tolerances: Tolerances | None = None
                    ) -> ConvergenceReport:
    """Check a closed-loop trajectory against the NE convergence limits.

    The limits are ``x -> x*``, ``s -> P phi(x*)`` and
    ``nu -> alpha P_perp phi(x*)``.  Failures are report entries, never
    exceptions; a diverged trajectory is reported as such.
    """
    tol = tolerances or Tolerances()
    x_star = np.asarray(x_star, dtype=float)
    N, n = game.n_players, game.action_dim
    P, Pp = projection_matrices(N, n)
    ph_star = stacked_phi(game, x_star)
    s_target = P @ ph_star
    nu_target = params.alpha * (Pp @ ph_star)

    X, S, NU = trajectory.x, trajectory.s, trajectory.nu
    finite = np.all(np.isfinite(trajectory.states))
    terminal = {
        "x": float(np.linalg.norm(X[-1] - x_star)),
        "s": float(np.linalg.norm(S[-1] - s_target)),
        "nu": float(np.linalg.norm(NU[-1] - nu_target)),
    }
    x_err = np.linalg.norm(X - x_star, axis=1)
    decay: dict
    if np.all(x_err < tol.fit_floor):
        decay = {"status": "below_floor", "lambda_hat": None, "gamma_hat": None,
                 "r_squared": None}
        decay_ok = True
    else:
        try:
            fit = fit_decay_rate(trajectory.times, x_err, tol.discard_fraction, tol.fit_floor)
            decay = {"status": "fitted", **fit._asdict()}
            decay_ok = fit.lambda_hat > 0 and fit.r_squared >= tol.r_squared
        except ValueError as exc:
            decay = {"status": f"unfitted: {exc}", "lambda_hat": None,
                     "gamma_hat": None, "r_squared": None}
            decay_ok = False

    nu_sums = NU.reshape(len(NU), N, n).sum(axis=1)
    drift = float(np.max(np.linalg.norm(nu_sums - nu_sums[0], axis=1)))
    z1_max = float(np.max(_z1_series(trajectory, game, x_star, orthogonal_basis(N, n),
                                     params.alpha))) if N >= 2 else 0.0
    sup = float(np.max(np.linalg.norm(trajectory.states, axis=1))) if finite else math.inf
    bounded = bool(finite and trajectory.diverged_at is None)
    checks = {
        "x_terminal": terminal["x"] <= tol.x,
        "s_terminal": terminal["s"] <= tol.s,
        "nu_terminal": terminal["nu"] <= tol.nu,
        "exponential_decay": bool(decay_ok),
        "nu_sum_conserved": drift <= tol.nu_drift,
        "z1_zero": z1_max <= tol.z1,
        "bounded": bounded,
    }
    return ConvergenceReport(
        terminal_errors=terminal,
        decay=decay,
        invariants={"nu_sum_drift": drift, "z1_max": z1_max},
        bounded=bounded,
        sup_norm=sup,
        diverged_at=trajectory.diverged_at,
        t_end=float(trajectory.times[-1]),
        tolerances=tol,
        checks=checks,
    )
