"""Constant-velocity Kalman smoothing of player coordinates.

Each x and y series is an independent 1-D filter with state (position,
velocity). The covariance recursion does not depend on the data, so the gain
schedule is computed once per (params, length) and shared by every column.
Once the gain has converged the remaining steps form a stationary linear
recursion, which runs through ``scipy.signal.lfilter``.
"""

import logging
import math
from typing import Optional, Tuple

import numpy as np
from scipy.signal import lfilter

from ..errors import FilterError
from ..models import FilterState, FrameSeries, KalmanParams

logger = logging.getLogger(__name__)

GAIN_CONVERGENCE_TOL = 1e-14


class ConstantVelocityKalman:
    """Step-wise predict/update filter for one coordinate."""

    def __init__(self, position: float, params: KalmanParams):
        self.params = params
        dt = params.dt
        self.F = np.array([[1.0, dt], [0.0, 1.0]])
        self.H = np.array([[1.0, 0.0]])
        self.Q = np.array([[dt ** 4 / 4, dt ** 3 / 2],
                           [dt ** 3 / 2, dt ** 2]]) * params.process_noise_accel
        self.R = params.measurement_noise
        self.x = np.array([position, 0.0])
        self.P = np.diag([params.measurement_noise, params.initial_velocity_variance])
        self.K = np.zeros(2)

    def predict(self) -> None:
        self.x = self.F @ self.x
        self.P = self.F @ self.P @ self.F.T + self.Q

    def update(self, z: float) -> None:
        S = self.P[0, 0] + self.R
        self.K = self.P[:, 0] / S if S > 0 else np.zeros(2)
        self.x = self.x + self.K * (z - self.x[0])
        # Joseph form keeps P symmetric PSD
        I_KH = np.eye(2) - np.outer(self.K, self.H[0])
        self.P = I_KH @ self.P @ I_KH.T + self.R * np.outer(self.K, self.K)
        self.P = (self.P + self.P.T) / 2

    def step(self, z: float) -> float:
        self.predict()
        self.update(z)
        return float(self.x[0])

    @property
    def state(self) -> FilterState:
        return FilterState(state=self.x.copy(), covariance=self.P.copy())


def gain_schedule(n: int, params: KalmanParams) -> Tuple[np.ndarray, int]:
    """Kalman gains for steps 1..n-1 and the step at which they converged.

    Returns an (m, 2) array of gains where m <= n - 1; every later step uses
    the last row.
    """
    kf = ConstantVelocityKalman(0.0, params)
    gains = []
    for _ in range(1, n):
        kf.predict()
        kf.update(0.0)
        gains.append(kf.K.copy())
        if len(gains) > 2:
            delta = np.max(np.abs(gains[-1] - gains[-2]))
            scale = max(np.max(np.abs(gains[-1])), 1e-300)
            if delta <= GAIN_CONVERGENCE_TOL * scale:
                break
    return np.array(gains).reshape(-1, 2), len(gains)


def steady_state_gain(params: KalmanParams) -> Tuple[float, float]:
    """Closed-form steady-state (alpha, beta) of the constant-velocity filter.

    The position gain is alpha and the velocity gain is beta / dt.
    """
    dt = params.dt
    if params.measurement_noise == 0:
        return 1.0, 2.0
    if params.process_noise_accel == 0:
        return 0.0, 0.0
    lam = math.sqrt(params.process_noise_accel) * dt ** 2 / math.sqrt(params.measurement_noise)
    r = (4 + lam - math.sqrt(8 * lam + lam ** 2)) / 4
    alpha = 1 - r ** 2
    beta = 2 * (2 - alpha) - 4 * math.sqrt(1 - alpha)
    return alpha, beta


def _filter_columns(Z: np.ndarray, params: KalmanParams) -> np.ndarray:
    """Filter every column of Z (n, c) independently; Z must be finite."""
    n = Z.shape[0]
    out = np.empty_like(Z, dtype=np.float64)
    if n == 0:
        return out
    out[0] = Z[0]
    if n == 1:
        return out

    gains, m = gain_schedule(n, params)
    dt = params.dt
    pos = Z[0].astype(np.float64).copy()
    vel = np.zeros_like(pos)

    # transient: time-varying gain
    for i in range(1, m + 1):
        k0, k1 = gains[i - 1]
        pred = pos + dt * vel
        resid = Z[i] - pred
        pos = pred + k0 * resid
        vel = vel + k1 * resid
        out[i] = pos

    if m + 1 >= n:
        return out

    # stationary tail: x_t = M x_{t-1} + K z_t with M = (I - K H) F
    k0, k1 = gains[-1]
    M = np.array([[1 - k0, (1 - k0) * dt], [-k1, 1 - k1 * dt]])
    b = [k0, M[0, 1] * k1 - M[1, 1] * k0]
    a = [1.0, -(M[0, 0] + M[1, 1]), M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]]
    zi = np.vstack([M[0, 0] * pos + M[0, 1] * vel, -a[2] * pos])
    out[m + 1:], _ = lfilter(b, a, Z[m + 1:], axis=0, zi=zi)
    return out


def filter_axis(series, params: Optional[KalmanParams] = None) -> np.ndarray:
    """Causal constant-velocity Kalman filter of one position series.

    Starts at the first measurement with zero velocity and returns a series of
    the same length.
    """
    params = params or KalmanParams()
    z = np.asarray(series, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise FilterError("filter_axis needs a non-empty 1-D series")
    bad = np.flatnonzero(~np.isfinite(z))
    if bad.size:
        raise FilterError(f"non-finite value {z[bad[0]]} at index {int(bad[0])}")
    return _filter_columns(z[:, None], params)[:, 0]


def filter_frames(frames: FrameSeries, params: Optional[KalmanParams] = None) -> FrameSeries:
    """Filter every player's x and y series independently."""
    dt = frames.grid_step / 1000.0
    params = params.model_copy(update={"dt": dt}) if params else KalmanParams(dt=dt)
    flat = frames.coords.reshape(frames.n_frames, -1)
    filtered = _filter_columns(flat, params)
    logger.info(
        f"Kalman-filtered {flat.shape[1]} series of {frames.n_frames} frames "
        f"(dt={params.dt}s, q={params.process_noise_accel}, r={params.measurement_noise})"
    )
    return frames.model_copy(update={
        "coords": filtered.reshape(frames.coords.shape),
        "filtered": True,
    })
