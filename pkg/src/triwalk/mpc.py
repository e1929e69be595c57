"""Receding-horizon walking controller for one axis of the three-mass model.

The controller optimizes input increments over a control horizon against a
prediction of the three outputs (stance mass, swing mass, zero-moment point),
subject to phase-dependent bounds on the swing-mass position, the ZMP and the
jerk inputs.  A steady-state Kalman observer reconstructs the 9-entry state
from the three measured outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import N_INPUTS, N_OUTPUTS, N_STATES, StateSpace, ThreeMassParams
from .qp import (
    STATUS_INFEASIBLE,
    STATUS_OPTIMAL,
    ActiveSetSolver,
    QpProblem,
)

PHASE_SINGLE = "single"
PHASE_DOUBLE = "double"
PHASE_STAND = "stand"


class ControllerFault(RuntimeError):
    """The controller could not produce a command even after softening."""


@dataclass(frozen=True)
class MpcConfig:
    """Horizons, sample time, tracking weights and constraint geometry."""

    n_pred: int = 80
    n_ctrl: int = 20
    ts: float = 0.02
    w_zmp: float = 20.0
    w_stance: float = 20.0
    w_swing: float = 20.0
    w_jerk: tuple[float, float, float] = (1e-4, 1e-4, 1e-4)
    jerk_limit: float = 500.0
    swing_reach: float = 0.25            # sagittal swing-mass corridor, +- about the support
    swing_band: tuple[float, float] = (0.05, 0.30)  # lateral swing-mass separation band
    soft_penalty: float = 1e6
    # Extra absolute headroom (m) inside the scaled ZMP box, covering the
    # estimation bias that hides in the ZMP output's zero direction after a
    # disturbance; keeps millimetre-scale drifts inside the true polygon.
    zmp_margin: float = 0.02
    # Move suppression: penalizes per-cycle input increments so measurement
    # noise does not chatter the commands; sized well below the gait's own
    # phase-boundary input surges.
    w_move: float = 0.0
    # Toe-ward shift of the sagittal enforcement box (m).  Forward walking
    # leaves more braking budget behind the ZMP than ahead of it; the bias
    # rebalances push tolerance between the two directions.
    zmp_bias: float = 0.005
    # Output constraints are enforced over this many predicted samples.  The
    # input is frozen beyond the control horizon, so constraining the ballistic
    # tail makes gait subproblems structurally infeasible whenever the support
    # box moves inside the horizon; None means "same as n_ctrl".
    n_constrained: int | None = None

    def __post_init__(self) -> None:
        if not 1 <= self.n_ctrl <= self.n_pred:
            raise ValueError("need 1 <= n_ctrl <= n_pred")
        if self.n_constrained is not None and not 1 <= self.n_constrained <= self.n_pred:
            raise ValueError("n_constrained must lie within the prediction horizon")
        if self.ts <= 0.0:
            raise ValueError("ts must be positive")
        if max(self.w_zmp, self.w_stance, self.w_swing) <= 0.0:
            raise ValueError("at least one output weight must be positive")
        if min(self.w_zmp, self.w_stance, self.w_swing, *self.w_jerk) < 0.0:
            raise ValueError("weights must be nonnegative")
        if self.jerk_limit <= 0.0 or self.soft_penalty <= 0.0:
            raise ValueError("jerk_limit and soft_penalty must be positive")
        if self.zmp_margin < 0.0:
            raise ValueError("zmp_margin must be nonnegative")
        if self.w_move < 0.0:
            raise ValueError("w_move must be nonnegative")

    @property
    def constraint_window(self) -> int:
        return self.n_ctrl if self.n_constrained is None else self.n_constrained


@dataclass(frozen=True)
class ReferenceBundle:
    """Per-axis reference samples over the prediction horizon (index 0 = k+1)."""

    r_stance: np.ndarray
    r_swing: np.ndarray
    r_zmp: np.ndarray

    def __post_init__(self) -> None:
        n = self.r_stance.shape[0]
        if self.r_swing.shape != (n,) or self.r_zmp.shape != (n,):
            raise ValueError("reference arrays must share one length")
        for arr in (self.r_stance, self.r_swing, self.r_zmp):
            if not np.all(np.isfinite(arr)):
                raise ValueError("references must be finite")

    def __len__(self) -> int:
        return self.r_stance.shape[0]

    def stacked(self) -> np.ndarray:
        """Interleave to match the stacked output vector ordering."""
        return np.column_stack([self.r_stance, self.r_swing, self.r_zmp]).ravel()


@dataclass(frozen=True)
class ConstraintRow:
    """One row of the mixed input/output constraint set:
    ``e . u(k+j) + f . y(k+j) <= g`` applied across the horizon."""

    e: tuple[float, float, float]
    f: tuple[float, float, float]
    g: float
    soft: bool = False


@dataclass(frozen=True)
class PredictionMatrices:
    """Condensed prediction: ``Y = phi x + phi_u u_prev + gamma dU`` and
    ``U = tile(u_prev) + u_map dU`` with dU zero beyond the control horizon."""

    phi: np.ndarray      # (3 n_pred, 9)
    phi_u: np.ndarray    # (3 n_pred, 3)
    gamma: np.ndarray    # (3 n_pred, 3 n_ctrl)
    u_map: np.ndarray    # (3 n_pred, 3 n_ctrl)
    n_pred: int
    n_ctrl: int


def build_prediction(ss: StateSpace, config: MpcConfig) -> PredictionMatrices:
    if not ss.is_discrete:
        raise ValueError("prediction requires a discrete model")
    if abs(ss.ts - config.ts) > 1e-12:
        raise ValueError("model sample time must match the controller")
    np_, nc = config.n_pred, config.n_ctrl
    Ad, Bd, Cd = ss.A, ss.B, ss.C

    # S[j] = sum_{l<j} Ad^l Bd is the state response to a constant unit input.
    S = [np.zeros((N_STATES, N_INPUTS)), Bd.copy()]
    powers = [np.eye(N_STATES), Ad.copy()]
    for j in range(2, np_ + 1):
        S.append(Ad @ S[-1] + Bd)
        powers.append(Ad @ powers[-1])

    phi = np.vstack([Cd @ powers[j] for j in range(1, np_ + 1)])
    phi_u = np.vstack([Cd @ S[j] for j in range(1, np_ + 1)])
    gamma = np.zeros((N_OUTPUTS * np_, N_INPUTS * nc))
    CS = [None] + [Cd @ S[j] for j in range(1, np_ + 1)]
    for j in range(1, np_ + 1):
        for l in range(min(j, nc)):
            gamma[N_OUTPUTS * (j - 1):N_OUTPUTS * j,
                  N_INPUTS * l:N_INPUTS * (l + 1)] = CS[j - l]
    u_map = np.zeros((N_INPUTS * np_, N_INPUTS * nc))
    eye = np.eye(N_INPUTS)
    for j in range(np_):
        for l in range(min(j + 1, nc)):
            u_map[N_INPUTS * j:N_INPUTS * (j + 1),
                  N_INPUTS * l:N_INPUTS * (l + 1)] = eye
    return PredictionMatrices(phi=phi, phi_u=phi_u, gamma=gamma, u_map=u_map,
                              n_pred=np_, n_ctrl=nc)


def output_weights(config: MpcConfig) -> np.ndarray:
    return np.tile([config.w_stance, config.w_swing, config.w_zmp], config.n_pred)


def input_weights(config: MpcConfig) -> np.ndarray:
    return np.tile(config.w_jerk, config.n_pred)


def build_cost(pred: PredictionMatrices, refs: ReferenceBundle, config: MpcConfig,
               x: np.ndarray, u_prev: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Quadratic cost in the input-increment variables.

    Encodes the weighted squared tracking errors of the three outputs over the
    prediction horizon plus the weighted squared jerks, as ``1/2 z'Hz + f'z``
    (constant terms dropped).
    """
    if len(refs) != pred.n_pred:
        raise ValueError("reference length must equal the prediction horizon")
    w_out = output_weights(config)
    w_in = input_weights(config)
    G, U = pred.gamma, pred.u_map
    H = 2.0 * (G.T @ (G * w_out[:, None]) + U.T @ (U * w_in[:, None]))
    H += 2.0 * config.w_move * np.eye(H.shape[0])
    H = 0.5 * (H + H.T)
    free = pred.phi @ x + pred.phi_u @ u_prev
    err = free - refs.stacked()
    f = 2.0 * (G.T @ (w_out * err) + U.T @ (w_in * np.tile(u_prev, pred.n_pred)))
    return H, f


def build_constraints(phase: str, support, params: ThreeMassParams, config: MpcConfig,
                      axis: str = "x", swing_side: float = 0.0,
                      half_extent: float | None = None) -> list[ConstraintRow]:
    """Constraint rows for one axis and one walking phase.

    ``support`` holds the support-foot center along the axis (a scalar in
    single support, a pair in double support or standing).  ``swing_side``
    gives the sign of the swing foot's lateral offset from the support and is
    required for the frontal (``axis="y"``) swing corridor.  ``half_extent``
    overrides the foot half-extent along the axis (used under turning).
    """
    if phase not in (PHASE_SINGLE, PHASE_DOUBLE, PHASE_STAND):
        raise ValueError(f"unknown phase {phase!r}")
    centers = np.atleast_1d(np.asarray(support, dtype=float))
    if phase == PHASE_SINGLE and centers.size != 1:
        raise ValueError("single support takes exactly one support center")
    if phase != PHASE_SINGLE and centers.size != 2:
        raise ValueError("double support and standing take two foot centers")
    if not np.all(np.isfinite(centers)):
        raise ValueError("support centers must be finite")
    if half_extent is None:
        half_extent = params.foot_length / 2.0 if axis == "x" else params.foot_width / 2.0
    half = np.broadcast_to(np.asarray(half_extent, dtype=float), centers.shape)

    rows: list[ConstraintRow] = []
    margin = params.zmp_safety_scale * half
    bias = config.zmp_bias if axis == "x" else 0.0
    z_lo = float(np.min(centers - margin)) + config.zmp_margin + bias
    z_hi = float(np.max(centers + margin)) - config.zmp_margin + bias
    if z_lo > z_hi:
        raise ValueError(f"inconsistent ZMP bounds [{z_lo}, {z_hi}]")
    rows.append(ConstraintRow(e=(0.0, 0.0, 0.0), f=(0.0, 0.0, 1.0), g=z_hi))
    rows.append(ConstraintRow(e=(0.0, 0.0, 0.0), f=(0.0, 0.0, -1.0), g=-z_lo))

    # The stance-leg mass belongs to a planted foot, so its position is
    # mechanically confined near the support.  The corridor also removes the
    # escape route along the ZMP output's unstable zero direction, where a
    # mass position can run away without moving the ZMP.
    st_lo = float(np.min(centers)) - config.swing_reach
    st_hi = float(np.max(centers)) + config.swing_reach
    rows.append(ConstraintRow(e=(0.0, 0.0, 0.0), f=(1.0, 0.0, 0.0), g=st_hi))
    rows.append(ConstraintRow(e=(0.0, 0.0, 0.0), f=(-1.0, 0.0, 0.0), g=-st_lo))

    if phase == PHASE_SINGLE:
        sup = float(centers[0])
        if axis == "x":
            lo, hi = sup - config.swing_reach, sup + config.swing_reach
        else:
            if swing_side not in (-1.0, 1.0):
                raise ValueError("frontal swing rows need swing_side of +1 or -1")
            a = sup + swing_side * config.swing_band[0]
            b = sup + swing_side * config.swing_band[1]
            lo, hi = min(a, b), max(a, b)
        if lo > hi:
            raise ValueError(f"inconsistent swing bounds [{lo}, {hi}]")
        rows.append(ConstraintRow(e=(0.0, 0.0, 0.0), f=(0.0, 1.0, 0.0), g=hi))
        rows.append(ConstraintRow(e=(0.0, 0.0, 0.0), f=(0.0, -1.0, 0.0), g=-lo))
    else:
        # Both feet planted: the swing-role mass is likewise confined.
        rows.append(ConstraintRow(e=(0.0, 0.0, 0.0), f=(0.0, 1.0, 0.0), g=st_hi))
        rows.append(ConstraintRow(e=(0.0, 0.0, 0.0), f=(0.0, -1.0, 0.0), g=-st_lo))

    for i in range(N_INPUTS):
        e_pos = tuple(1.0 if j == i else 0.0 for j in range(N_INPUTS))
        e_neg = tuple(-1.0 if j == i else 0.0 for j in range(N_INPUTS))
        rows.append(ConstraintRow(e=e_pos, f=(0.0, 0.0, 0.0), g=config.jerk_limit))
        rows.append(ConstraintRow(e=e_neg, f=(0.0, 0.0, 0.0), g=config.jerk_limit))
    return rows


def condense_constraints(pred: PredictionMatrices, rows: list[ConstraintRow],
                         free: np.ndarray, u_prev: np.ndarray,
                         samples: tuple[int, int] | None = None):
    """Expand constraint rows across the horizon into ``A dU <= b``.

    Output rows apply to the predicted samples k+1 .. k+n_pred, or to the
    1-based inclusive window ``samples`` when given (phase-scheduled rows);
    pure input rows cover the n_ctrl decided moves (inputs are constant
    beyond the control horizon) and are emitted only for windows containing
    the first sample.  Returns (A, b, soft_mask, output_mask).
    """
    blocks_a, blocks_b, soft, is_out = [], [], [], []
    G, U = pred.gamma, pred.u_map
    nc = pred.n_ctrl
    j0, j1 = (1, pred.n_pred) if samples is None else samples
    if not 1 <= j0 <= j1 <= pred.n_pred:
        raise ValueError("sample window must lie within the prediction horizon")
    sl = slice(j0 - 1, j1)
    for row in rows:
        e = np.asarray(row.e)
        f = np.asarray(row.f)
        has_e, has_f = bool(np.any(e)), bool(np.any(f))
        if has_f:
            A_blk = sum(f[i] * G[i::N_OUTPUTS][sl] for i in range(N_OUTPUTS) if f[i])
            b_blk = row.g - sum(f[i] * free[i::N_OUTPUTS][sl] for i in range(N_OUTPUTS) if f[i])
            if has_e:
                # Mixed row: pair u(k+j) with y(k+j), holding the input at its
                # last decided move beyond the control horizon.
                U_rows = np.vstack([
                    sum(e[i] * U[N_INPUTS * min(j, pred.n_pred - 1) + i]
                        for i in range(N_INPUTS) if e[i])
                    for j in range(j0, j1 + 1)
                ])
                A_blk = A_blk + U_rows
                b_blk = b_blk - float(e @ u_prev)
        elif has_e:
            if j0 != 1:
                continue
            A_blk = sum(e[i] * U[i::N_INPUTS] for i in range(N_INPUTS) if e[i])[:nc]
            b_blk = np.full(nc, row.g - float(e @ u_prev))
        else:
            raise ValueError("constraint row has neither input nor output part")
        blocks_a.append(np.atleast_2d(A_blk))
        blocks_b.append(np.atleast_1d(b_blk))
        n_rows = blocks_a[-1].shape[0]
        soft.extend([row.soft] * n_rows)
        is_out.extend([has_f] * n_rows)
    if not blocks_a:
        z = np.zeros((0, N_INPUTS * nc))
        return z, np.zeros(0), np.zeros(0, bool), np.zeros(0, bool)
    return (np.vstack(blocks_a), np.concatenate(blocks_b),
            np.asarray(soft, bool), np.asarray(is_out, bool))


@dataclass(frozen=True)
class ObserverConfig:
    """Noise levels (standard deviations) defining the steady-state filter.

    ``jerk_noise`` covers model mismatch entering through the input channels;
    ``accel_noise`` covers external pushes, which hit the acceleration states
    directly, and steers impulse innovations into the acceleration estimates.
    The torso is observed only through the ZMP output, so its channels
    dominate the smoothing/responsiveness trade-off.

    A single gain cannot be both smooth under heavy measurement noise and
    fast after a push, so a second, stiffer gain (computed with
    ``boost_accel_noise``) is engaged while any normalized innovation exceeds
    ``boost_gate`` standard deviations, then held for ``boost_hold`` cycles.
    """

    jerk_noise: tuple[float, float, float] = (1.0, 1.0, 1.0)
    accel_noise: tuple[float, float, float] = (0.0, 0.0, 0.0)
    measurement_noise: tuple[float, float, float] = (0.0167, 0.0167, 0.0167)
    boost_accel_noise: float = 6.0
    # Push detection: an innovation beyond ``boost_gate_high`` standard
    # deviations cannot be measurement noise and engages the recovery gain
    # immediately.  A smaller push biases the signed innovation of one
    # channel persistently while noise is zero-mean, so a rolling
    # ``boost_window``-cycle signed sum crossing ``boost_gate_sum`` also
    # engages it; ``boost_gate`` keeps it engaged while evidence remains.
    boost_gate: float = 3.0
    boost_gate_high: float = 4.0
    boost_gate_sum: float = 9.0
    boost_window: int = 4
    boost_hold: int = 8
    # Robustness against outliers: while boosted, the per-cycle correction of
    # each acceleration estimate is clipped to this magnitude (m/s^2), so the
    # time to absorb a push grows with its size.
    boost_rate: float = 1.6

    def __post_init__(self) -> None:
        if min(self.jerk_noise) <= 0.0 or min(self.measurement_noise) <= 0.0:
            raise ValueError("noise levels must be positive")
        if min(self.accel_noise) < 0.0 or self.boost_accel_noise < 0.0:
            raise ValueError("accel noise levels must be nonnegative")
        if self.boost_gate <= 0.0 or self.boost_hold < 0 or self.boost_rate <= 0.0:
            raise ValueError("boost gate, hold and rate must be positive")
        if self.boost_gate_high < self.boost_gate:
            raise ValueError("boost_gate_high must not be below boost_gate")
        if self.boost_gate_sum <= 0.0 or self.boost_window < 1:
            raise ValueError("boost window parameters must be positive")


class Observer:
    """Steady-state Kalman filter: predict with the model, correct with a
    precomputed gain.  Two gains are prepared: the nominal one and a stiffer
    push-recovery gain used while innovations are implausibly large.  The
    object is immutable; callers own the estimate and the boost bookkeeping."""

    def __init__(self, ss: StateSpace, config: ObserverConfig = ObserverConfig()):
        if not ss.is_discrete:
            raise ValueError("observer requires a discrete model")
        self.ss = ss
        self.config = config
        r = np.asarray(config.measurement_noise, dtype=float) ** 2
        R = np.diag(r)
        P = self._steady_state_covariance(ss.A, ss.C, self._process_noise(ss, config, 0.0), R)
        self.gain = P @ ss.C.T @ np.linalg.inv(ss.C @ P @ ss.C.T + R)
        poles = np.abs(np.linalg.eigvals((np.eye(N_STATES) - self.gain @ ss.C) @ ss.A))
        if np.max(poles) >= 1.0 - 1e-9:
            raise ValueError("observer configuration is not detectable")
        # Normalization for innovation gating under nominal operation.
        self.innovation_std = np.sqrt(np.diag(ss.C @ P @ ss.C.T + R))
        if config.boost_accel_noise > 0.0:
            # Push recovery: a fresh impulse corrupts the acceleration states
            # only, so the stiff gain comes from inflating their prior
            # variance while positions and velocities keep the nominal one.
            Pb = P.copy()
            for slot in (2, 5, 8):
                Pb[slot, slot] += config.boost_accel_noise ** 2
            self.gain_boost = Pb @ ss.C.T @ np.linalg.inv(ss.C @ Pb @ ss.C.T + R)
        else:
            self.gain_boost = self.gain

    @staticmethod
    def _process_noise(ss: StateSpace, config: ObserverConfig, extra_accel: float) -> np.ndarray:
        q = np.asarray(config.jerk_noise, dtype=float) ** 2
        qa = np.asarray(config.accel_noise, dtype=float) ** 2 + extra_accel ** 2
        Q = ss.B @ np.diag(q) @ ss.B.T
        for i, slot in enumerate((2, 5, 8)):
            Q[slot, slot] += qa[i]
        return Q

    @staticmethod
    def _steady_state_covariance(A, C, Q, R, max_iter: int = 500_000) -> np.ndarray:
        """Fixed-point iteration of the prediction-form Riccati recursion.

        More robust than generalized-Schur solvers for the semidefinite Q that
        arises when process noise enters only through the input channels.
        """
        P = Q + np.eye(A.shape[0])
        for _ in range(max_iter):
            S = C @ P @ C.T + R
            K = P @ C.T @ np.linalg.inv(S)
            P_next = A @ (P - K @ C @ P) @ A.T + Q
            P_next = 0.5 * (P_next + P_next.T)
            if np.max(np.abs(P_next - P)) <= 1e-12 * max(1.0, np.max(np.abs(P_next))):
                return P_next
            P = P_next
        raise ValueError("steady-state covariance iteration did not converge")

    def step(self, x_est: np.ndarray, u_prev: np.ndarray, y_meas: np.ndarray,
             boosted: bool = False) -> np.ndarray:
        """One predict/correct cycle; returns the new estimate.

        Boosted cycles use the push-recovery gain with the acceleration
        corrections rate-limited, so outlier innovations are absorbed over
        several cycles instead of being written in at once.
        """
        x_pred = self.ss.A @ x_est + self.ss.B @ u_prev
        gain = self.gain_boost if boosted else self.gain
        correction = gain @ (np.asarray(y_meas, dtype=float) - self.ss.C @ x_pred)
        if boosted:
            cap = self.config.boost_rate
            for slot in (2, 5, 8):
                correction[slot] = min(cap, max(-cap, correction[slot]))
        return x_pred + correction

    def innovation_sigmas(self, x_est: np.ndarray, u_prev: np.ndarray,
                          y_meas: np.ndarray) -> np.ndarray:
        """Signed per-output innovations in nominal standard deviations."""
        x_pred = self.ss.A @ x_est + self.ss.B @ u_prev
        innovation = np.asarray(y_meas, dtype=float) - self.ss.C @ x_pred
        return innovation / self.innovation_std


@dataclass
class ControlCycleInfo:
    status: str
    softened: bool
    objective: float
    iterations: int
    predicted_output: np.ndarray   # first predicted sample (stance, swing, zmp)


class AxisController:
    """Receding-horizon controller for one axis.

    Holds the previous applied input and the previous active set for warm
    starts; one instance per axis per walk session.
    """

    def __init__(self, ss: StateSpace, config: MpcConfig,
                 solver: ActiveSetSolver | None = None):
        self.config = config
        self.pred = build_prediction(ss, config)
        self.solver = solver or ActiveSetSolver(max_iter=2000)
        w_out = output_weights(config)
        w_in = input_weights(config)
        G, U = self.pred.gamma, self.pred.u_map
        H = 2.0 * (G.T @ (G * w_out[:, None]) + U.T @ (U * w_in[:, None]))
        H += 2.0 * config.w_move * np.eye(H.shape[0])
        self._H = 0.5 * (H + H.T)
        self._GtW = (G * w_out[:, None]).T
        self._UtW = (U * w_in[:, None]).T
        self.u_prev = np.zeros(N_INPUTS)
        self._warm: tuple[int, ...] | None = None
        self._warm_rows = -1

    def reset(self, u_prev=None) -> None:
        self.u_prev = np.zeros(N_INPUTS) if u_prev is None else np.asarray(u_prev, float).copy()
        self._warm = None
        self._warm_rows = -1

    def drop_warm_start(self) -> None:
        self._warm = None
        self._warm_rows = -1

    def control_step(self, x_est: np.ndarray, refs: ReferenceBundle,
                     constraints) -> tuple[np.ndarray, ControlCycleInfo]:
        """Solve the cycle subproblem and return the input to apply now.

        ``constraints`` is either a flat list of rows applied over the whole
        horizon, or a list of ``(rows, (j0, j1))`` segments scheduling rows
        over 1-based sample windows.
        """
        pred = self.pred
        if len(refs) != pred.n_pred:
            raise ValueError("reference window length must equal the horizon")
        free = pred.phi @ np.asarray(x_est, float) + pred.phi_u @ self.u_prev
        err = free - refs.stacked()
        f = 2.0 * (self._GtW @ err + self._UtW @ np.tile(self.u_prev, pred.n_pred))
        if constraints and isinstance(constraints[0], ConstraintRow):
            segments = [(constraints, None)]
        else:
            segments = constraints
        parts = [condense_constraints(pred, rows, free, self.u_prev, samples)
                 for rows, samples in segments]
        if parts:
            A = np.vstack([p[0] for p in parts])
            b = np.concatenate([p[1] for p in parts])
            soft = np.concatenate([p[2] for p in parts])
            is_out = np.concatenate([p[3] for p in parts])
        else:
            A = np.zeros((0, N_INPUTS * pred.n_ctrl))
            b = np.zeros(0)
            soft = np.zeros(0, bool)
            is_out = np.zeros(0, bool)

        problem = QpProblem(H=self._H, f=f, A_ineq=A, b_ineq=b,
                            soft=soft if soft.any() else None,
                            soft_penalty=self.config.soft_penalty)
        warm = self._warm if self._warm_rows == b.shape[0] else None
        sol = self.solver.solve(problem, warm_start=warm)
        softened = False
        if sol.status == STATUS_INFEASIBLE:
            softened = True
            relaxed = QpProblem(H=self._H, f=f, A_ineq=A, b_ineq=b,
                                soft=soft | is_out, soft_penalty=self.config.soft_penalty)
            sol = self.solver.solve(relaxed)
            if sol.status == STATUS_INFEASIBLE:
                raise ControllerFault("cycle subproblem infeasible even after softening outputs")
        if sol.status == STATUS_OPTIMAL and not softened:
            self._warm = sol.active_set
            self._warm_rows = b.shape[0]
        else:
            self.drop_warm_start()

        u = self.u_prev + sol.z[:N_INPUTS]
        self.u_prev = u.copy()
        info = ControlCycleInfo(
            status=sol.status,
            softened=softened,
            objective=sol.objective,
            iterations=sol.iterations,
            predicted_output=free[:N_OUTPUTS] + pred.gamma[:N_OUTPUTS] @ sol.z,
        )
        return u, info
