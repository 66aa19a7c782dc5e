"""Iterative weighted-least-squares single point positioning.

Gauss-Newton on the pseudorange observation model: predicted range is the
geometric distance plus the receiver clock bias (meters), residuals are
measured-minus-predicted, and each iteration solves the weighted normal
equations for the position/clock update. Failure modes are reported
through the solution status, never by raising out of an epoch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .frames import DegenerateGeometry, EcefPosition, ecef_to_geodetic, enu_rotation

STATUS_CONVERGED = "Converged"
STATUS_DIVERGED = "Diverged"
STATUS_UNAVAILABLE = "Unavailable"

CLOCK_SINGLE = "single"
CLOCK_PER_CONSTELLATION = "per_constellation"

_SINGULAR_COND = 1e12


@dataclass
class SolverConfig:
    max_iterations: int = 20
    convergence_m: float = 1e-4
    initial_guess: tuple = (0.0, 0.0, 0.0)
    clock_mode: str = CLOCK_SINGLE

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.convergence_m <= 0:
            raise ValueError("convergence_m must be positive")
        if self.clock_mode not in (CLOCK_SINGLE, CLOCK_PER_CONSTELLATION):
            raise ValueError(f"bad clock_mode {self.clock_mode!r}")


@dataclass
class ReceiverSolution:
    """Epoch solution: ECEF position, per-constellation clock biases [m],
    covariance of the estimated states, iteration count and status."""

    position_ecef: EcefPosition | None
    clock_bias_m: dict = field(default_factory=dict)
    covariance: np.ndarray | None = None
    iterations: int = 0
    status: str = STATUS_UNAVAILABLE

    @property
    def converged(self) -> bool:
        return self.status == STATUS_CONVERGED


def predict_pseudorange(rx: EcefPosition, clock_m: float, sat: EcefPosition) -> float:
    """Geometric range plus receiver clock bias [m]."""
    dist = float(np.linalg.norm(sat.as_array() - rx.as_array()))
    if dist <= 1e6:
        raise DegenerateGeometry("satellite is too close to the receiver")
    return dist + clock_m

def jacobian_row(rx: EcefPosition, sat: EcefPosition) -> np.ndarray:
    """Gradient of the predicted pseudorange: (-unit_los, 1).

    The sign makes a Gauss-Newton step with residual measured-minus-
    predicted move the estimate toward the measurements.
    """
    diff = sat.as_array() - rx.as_array()
    dist = float(np.linalg.norm(diff))
    if dist <= 1e6:
        raise DegenerateGeometry("satellite is too close to the receiver")
    u = diff / dist
    return np.array([-u[0], -u[1], -u[2], 1.0])


def _clock_columns(observations, clock_mode):
    """Ordered clock-state labels and per-observation column index."""
    if clock_mode == CLOCK_SINGLE:
        return ["all"], [0] * len(observations)
    labels = sorted({obs.constellation for obs, _, _ in observations})
    index = {c: i for i, c in enumerate(labels)}
    return labels, [index[obs.constellation] for obs, _, _ in observations]


def _polish(x, sat_pos, rho, w, col, n_state):
    """One extra Gauss-Newton step; the model is nearly linear at the
    solution, so this pins the iterate to the weighted-least-squares optimum
    regardless of how the iteration path rounded on the way in."""
    for _ in range(2):
        diff = sat_pos - x[:3]
        dist = np.linalg.norm(diff, axis=1)
        g = np.zeros((len(rho), n_state))
        g[:, :3] = -diff / dist[:, None]
        g[np.arange(len(rho)), 3 + np.asarray(col)] = 1.0
        residual = rho - (dist + x[3 + np.asarray(col)])
        x = x + np.linalg.solve(g.T @ (w[:, None] * g), g.T @ (w * residual))
    return x


def wls_solve(observations, cfg: SolverConfig) -> ReceiverSolution:
    """Solve one epoch from (observation, corrected_pseudorange, weight) triples.

    Iterates position/clock updates until the step norm drops below
    ``convergence_m``. Status is Unavailable when fewer than
    3 + n_clock_states usable satellites are supplied, Diverged when the
    normal matrix is near singular, the step norm grows three times in a
    row, or the iteration budget runs out.
    """
    observations = list(observations)
    labels, col = _clock_columns(observations, cfg.clock_mode)
    n_clock = len(labels) if observations else 1
    n_state = 3 + n_clock
    if len(observations) < 3 + n_clock:
        return ReceiverSolution(None, {}, None, 0, STATUS_UNAVAILABLE)
    if any(w <= 0 for _, _, w in observations):
        raise ValueError("weights must be positive")

    sat_pos = np.array([obs.sat_pos_ecef.as_array() for obs, _, _ in observations])
    rho = np.array([r for _, r, _ in observations])
    w = np.array([wt for _, _, wt in observations])
    # The estimate only depends on weight ratios. Normalize by the mean and
    # keep 20 significant bits per weight: rescaled inputs then reproduce a
    # bit-identical iteration instead of drifting by range-magnitude rounding.
    w = w / w.mean()
    mant, expo = np.frexp(w)
    w = np.ldexp(np.round(mant * (1 << 20)) / float(1 << 20), expo)

    x = np.zeros(n_state)
    x[:3] = np.asarray(cfg.initial_guess, dtype=float)
    grow_streak = 0
    prev_step = None
    iterations = 0
    normal = None
    for iterations in range(1, cfg.max_iterations + 1):
        diff = sat_pos - x[:3]
        dist = np.linalg.norm(diff, axis=1)
        if np.any(dist <= 1e6):
            return ReceiverSolution(None, {}, None, iterations, STATUS_DIVERGED)
        g = np.zeros((len(observations), n_state))
        g[:, :3] = -diff / dist[:, None]
        g[np.arange(len(observations)), 3 + np.asarray(col)] = 1.0
        residual = rho - (dist + x[3 + np.asarray(col)])
        normal = g.T @ (w[:, None] * g)
        if np.linalg.cond(normal) > _SINGULAR_COND:
            return ReceiverSolution(None, {}, None, iterations, STATUS_DIVERGED)
        step = np.linalg.solve(normal, g.T @ (w * residual))
        x = x + step
        step_norm = float(np.linalg.norm(step))
        if step_norm < cfg.convergence_m:
            x = _polish(x, sat_pos, rho, w, col, n_state)
            clock = {label: float(x[3 + i]) for i, label in enumerate(labels)}
            return ReceiverSolution(
                EcefPosition(*x[:3]),
                clock,
                np.linalg.inv(normal),
                iterations,
                STATUS_CONVERGED,
            )
        if prev_step is not None and step_norm > prev_step:
            grow_streak += 1
            if grow_streak >= 3:
                return ReceiverSolution(None, {}, None, iterations, STATUS_DIVERGED)
        else:
            grow_streak = 0
        prev_step = step_norm
    return ReceiverSolution(None, {}, None, iterations, STATUS_DIVERGED)


def dilution_of_precision(rx: EcefPosition, sat_positions) -> tuple[float, float, float]:
    """(GDOP, HDOP, VDOP) of the satellite geometry seen from ``rx``.

    Uses the unweighted normal matrix of the position/clock geometry and
    rotates the position block into ENU at the receiver.

    Raises
    ------
    numpy.linalg.LinAlgError
        If the geometry is rank deficient (e.g. duplicated directions).
    """
    g = np.array([jacobian_row(rx, sat) for sat in sat_positions])
    normal = g.T @ g
    if np.linalg.cond(normal) > _SINGULAR_COND:
        raise np.linalg.LinAlgError("singular satellite geometry")
    q = np.linalg.inv(normal)
    geo = ecef_to_geodetic(rx)
    r_enu = enu_rotation(geo.latitude_rad, geo.longitude_rad)
    q_enu = r_enu.T @ q[:3, :3] @ r_enu
    hdop = math.sqrt(q_enu[0, 0] + q_enu[1, 1])
    vdop = math.sqrt(q_enu[2, 2])
    gdop = math.sqrt(np.trace(q))
    return gdop, hdop, vdop
