"""Walking engine: the phase state machine wiring planner output, reference
sampling and the two per-axis controllers into a closed loop.

The engine advances one control cycle per ``tick``: it filters operator
setpoints, runs the state observer on the measured outputs (with a gated
push-recovery gain), windows the reference trajectories over the prediction
horizon, schedules the phase constraint rows across the upcoming support
phases, and returns the jerk commands for both axes.

Turning support: each axis controller is one-dimensional, so the engine keeps
a working frame aligned with the current support heading.  At step boundaries
the frame rotates with the gait and all stateful quantities (estimates,
previous inputs) are re-projected; straight walking leaves the frame at the
world axes and every re-projection is the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .dynamics import StateSpace, ThreeMassParams, build_continuous, discretize, make_state
from .footstep import DEFAULT_SIGMA_MAX, DEFAULT_STEP_WIDTH, Footprint, FootstepPlan, wrap_angle
from .mpc import (
    PHASE_DOUBLE,
    PHASE_SINGLE,
    PHASE_STAND,
    AxisController,
    ControllerFault,
    MpcConfig,
    Observer,
    ObserverConfig,
    ReferenceBundle,
    build_constraints,
)
from .refgen import GaitTiming, RefSample, StepGeometry, WalkTimeline


class WalkPhase(Enum):
    IDLE = "idle"
    INITIALIZE = "initialize"
    SINGLE_SUPPORT = "single_support"
    DOUBLE_SUPPORT = "double_support"


@dataclass(frozen=True)
class Setpoints:
    """Omnidirectional walk command plus its low-pass-filtered state."""

    x: float = 0.0           # step length (m)
    y: float = 0.0           # step width offset (m)
    alpha_deg: float = 0.0   # turning rate (deg/s)
    filtered_x: float = 0.0
    filtered_y: float = 0.0
    filtered_alpha_deg: float = 0.0


def filter_setpoints(sp: Setpoints, ts: float, lag_tau: float) -> Setpoints:
    """One first-order lag update of the filtered setpoints."""
    if lag_tau <= 0.0:
        raise ValueError("lag_tau must be positive")
    a = ts / lag_tau
    return replace(
        sp,
        filtered_x=sp.filtered_x + a * (sp.x - sp.filtered_x),
        filtered_y=sp.filtered_y + a * (sp.y - sp.filtered_y),
        filtered_alpha_deg=sp.filtered_alpha_deg + a * (sp.alpha_deg - sp.filtered_alpha_deg),
    )


@dataclass(frozen=True)
class SupportFoot:
    """World-frame footprint geometry for support-polygon checks."""

    x: float
    y: float
    theta: float
    half_length: float
    half_width: float

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        rot = np.array([[c, -s], [s, c]])
        local = np.array([[self.half_length, self.half_width],
                          [self.half_length, -self.half_width],
                          [-self.half_length, -self.half_width],
                          [-self.half_length, self.half_width]])
        return local @ rot.T + np.array([self.x, self.y])


@dataclass
class CycleDiagnostics:
    """Per-cycle record emitted by ``tick`` (world frame throughout)."""

    k: int
    t: float
    phase: WalkPhase
    u_x: np.ndarray
    u_y: np.ndarray
    qp_status: tuple[str, str]
    softened: tuple[bool, bool]
    zmp_pred: np.ndarray
    refs: RefSample
    support_feet: tuple[SupportFoot, ...]
    clamped_step: bool = False
    step_index: int = -1
    swing_target: np.ndarray | None = None   # landing position during single support


def _rot(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def _inscribed_extents(half_length: float, half_width: float, rel_angle: float):
    """Axis-aligned box guaranteed to fit inside a rectangle rotated by
    ``rel_angle``; exact at zero angle, conservative otherwise."""
    c, s = abs(math.cos(rel_angle)), abs(math.sin(rel_angle))
    return half_length * c - half_width * s, half_width * c - half_length * s


class WalkEngine:
    """Owner of the walking state machine; advance with ``tick`` once per cycle."""

    def __init__(self, params: ThreeMassParams, config: MpcConfig, timing: GaitTiming,
                 observer: ObserverConfig | None = None,
                 initial_feet: tuple[Footprint, Footprint] | None = None,
                 lag_tau: float = 0.5,
                 step_width: float = DEFAULT_STEP_WIDTH,
                 sigma_max: float = DEFAULT_SIGMA_MAX,
                 provisional_steps: int = 3):
        self.params = params
        self.config = config
        self.timing = timing
        self.lag_tau = lag_tau
        self.step_width = step_width
        self.sigma_max = sigma_max
        self.provisional_steps = provisional_steps

        self.model: StateSpace = discretize(build_continuous(params), config.ts)
        self.controllers = {"x": AxisController(self.model, config),
                            "y": AxisController(self.model, config)}
        self.observer = Observer(self.model, observer or ObserverConfig())

        if initial_feet is None:
            w = step_width / 2.0
            initial_feet = (Footprint(0.0, w, 0.0, "L"), Footprint(0.0, -w, 0.0, "R"))
        left = next(f for f in initial_feet if f.side == "L")
        right = next(f for f in initial_feet if f.side == "R")
        self.feet: dict[str, Footprint] = {"L": left, "R": right}

        self.n_single, self.n_double = timing.cycles(config.ts)
        if self.n_double < 1:
            raise ValueError("double-support duration must span at least one cycle")
        self.n_step = self.n_single + self.n_double
        self.n_init = self.n_double

        self.k = 0
        self.phase = WalkPhase.IDLE
        self.phase_cycles = 0
        self.frame_angle = wrap_angle(0.5 * (left.theta + right.theta))
        self.setpoints = Setpoints()
        self.mode: str | None = None
        self._pending_walk = False
        self._walk_done = False
        self._plan: FootstepPlan | None = None
        self._step_index = -1
        self._first_swing = "R"
        self._clamped_step = False
        self._fault: str | None = None

        self._timeline: WalkTimeline | None = None
        self._timeline_origin = 0
        self._ref_table: np.ndarray | None = None   # cached world samples
        self._row_cache: dict = {}
        self._set_stand_timeline()

        self.estimates = {"x": np.zeros(9), "y": np.zeros(9)}
        self._boost_cycles = {"x": 0, "y": 0}
        self._sigma_window = {"x": [], "y": []}
        self.reset_posture()

    # ------------------------------------------------------------------ setup

    def standing_state(self, axis: str) -> np.ndarray:
        """Static standing posture for one axis at the current feet.

        Leg masses sit on their standing references and the torso is placed so
        the static ZMP falls exactly on the feet midpoint, making the posture
        a true equilibrium of the standing references.
        """
        idx = 0 if axis == "x" else 1
        p = self.params
        mid = 0.5 * (self.feet["L"].xy() + self.feet["R"].xy())[idx]
        swing_home = self.feet[self._first_swing].xy()[idx]
        c1 = mid
        c3 = 0.5 * (swing_home + mid)
        c2 = (p.M * mid - p.m1 * c1 - p.m3 * c3) / p.m2
        return make_state((c1, c2, c3))

    def command_path(self, plan: FootstepPlan) -> None:
        """Queue a planned walk; takes effect at the end of the current cycle."""
        if plan.n_steps < 1:
            raise ValueError("plan must contain at least one step")
        first, second = plan.footprints[0], plan.footprints[1]
        self.feet[first.side] = first
        self.feet[second.side] = second
        self._first_swing = first.side
        self.mode = "path"
        self._plan = plan
        self._pending_walk = True
        self._walk_done = False
        if self.phase == WalkPhase.IDLE:
            self._update_frame(wrap_angle(0.5 * (first.theta + second.theta)))
            self._set_stand_timeline()
            self.reset_posture()

    def command_setpoints(self, x: float = 0.0, y: float = 0.0, alpha_deg: float = 0.0) -> None:
        """Start setpoint-driven walking (continues until the caller stops)."""
        self.setpoints = replace(self.setpoints, x=x, y=y, alpha_deg=alpha_deg)
        self.mode = "setpoints"
        self._pending_walk = True
        self._walk_done = False

    def reset_posture(self) -> None:
        """Re-seed the state estimates with the current standing posture,
        expressed in the working frame."""
        X = np.vstack([self.standing_state("x"), self.standing_state("y")])
        X = _rot(-self.frame_angle) @ X
        self.estimates = {"x": X[0].copy(), "y": X[1].copy()}
        for ctrl in self.controllers.values():
            ctrl.reset()

    def set_setpoints(self, x: float, y: float, alpha_deg: float) -> None:
        self.setpoints = replace(self.setpoints, x=x, y=y, alpha_deg=alpha_deg)

    # ------------------------------------------------------------- main cycle

    def tick(self, y_meas_x, y_meas_y) -> CycleDiagnostics:
        """Advance one control cycle with the measured outputs of both axes."""
        self.setpoints = filter_setpoints(self.setpoints, self.config.ts, self.lag_tau)

        R_wf = _rot(-self.frame_angle)   # world -> frame
        y_pair = R_wf @ np.vstack([np.asarray(y_meas_x, float), np.asarray(y_meas_y, float)])
        segments = self._segment_keys()
        u_frame = {}
        status = {}
        softened = {}
        zmp_pred = np.zeros(2)
        try:
            for i, axis in enumerate(("x", "y")):
                ctrl = self.controllers[axis]
                sigmas = self.observer.innovation_sigmas(
                    self.estimates[axis], ctrl.u_prev, y_pair[i])
                peak = float(np.max(np.abs(sigmas)))
                conf = self.observer.config
                window = self._sigma_window[axis]
                window.append(sigmas)
                if len(window) > conf.boost_window:
                    window.pop(0)
                engaged = self._boost_cycles[axis] > 0
                # A huge innovation is a push; so is a persistent one-signed
                # bias in any channel (noise is zero-mean).  Either engages
                # the recovery gain, which stays on while evidence remains.
                bias = float(np.max(np.abs(np.sum(window, axis=0))))
                if (peak > conf.boost_gate_high
                        or bias > conf.boost_gate_sum
                        or (engaged and peak > conf.boost_gate)):
                    self._boost_cycles[axis] = conf.boost_hold
                boosted = self._boost_cycles[axis] > 0
                self._boost_cycles[axis] = max(0, self._boost_cycles[axis] - 1)
                est = self.observer.step(self.estimates[axis], ctrl.u_prev, y_pair[i],
                                         boosted=boosted)
                self.estimates[axis] = est
                refs = self._bundle(axis)
                constraints = [(self._rows_for(key, axis), (j0, j1))
                               for j0, j1, key in segments]
                u, info = ctrl.control_step(est, refs, constraints)
                u_frame[axis] = u
                status[axis] = info.status
                softened[axis] = info.softened
                zmp_pred[i] = info.predicted_output[2]
        except ControllerFault as exc:
            self._fault = f"cycle {self.k}, phase {self.phase.value}: {exc}"
            raise ControllerFault(self._fault) from exc

        R_fw = _rot(self.frame_angle)
        u_pair = R_fw @ np.vstack([u_frame["x"], u_frame["y"]])
        zmp_pred_world = R_fw @ zmp_pred

        swing_target = None
        if self.phase == WalkPhase.SINGLE_SUPPORT:
            swing_target = self._plan.swing_to(self._step_index).xy()
        diag = CycleDiagnostics(
            k=self.k,
            t=self.k * self.config.ts,
            phase=self.phase,
            u_x=u_pair[0].copy(),
            u_y=u_pair[1].copy(),
            qp_status=(status["x"], status["y"]),
            softened=(softened["x"], softened["y"]),
            zmp_pred=zmp_pred_world,
            refs=self._world_sample(self._local_cycle(self.k)),
            support_feet=self.support_feet(),
            clamped_step=self._clamped_step,
            step_index=self._step_index,
            swing_target=swing_target,
        )
        self.k += 1
        self.phase_cycles += 1
        self._advance_state_machine()
        return diag

    # ------------------------------------------------------- state machine

    def _advance_state_machine(self) -> None:
        if self.phase == WalkPhase.IDLE:
            if self._pending_walk:
                self._pending_walk = False
                self._start_walk()
            return
        if self.phase == WalkPhase.INITIALIZE and self.phase_cycles >= self.n_init:
            self._enter_step(0)
        elif self.phase == WalkPhase.SINGLE_SUPPORT and self.phase_cycles >= self.n_single:
            self._enter_double()
        elif self.phase == WalkPhase.DOUBLE_SUPPORT and self.phase_cycles >= self.n_double:
            nxt = self._step_index + 1
            if self.mode == "setpoints":
                self._roll_setpoint_plan()
            elif nxt < self._plan.n_steps:
                self._enter_step(nxt)
            else:
                self._finish_walk()

    def _start_walk(self) -> None:
        if self.mode == "path":
            plan = self._plan
        else:
            plan = self._synthesize_plan(start=True)
            self._plan = plan
        self._set_timeline(WalkTimeline(plan, self.timing, self.params, self.config.ts,
                                        include_initialize=True),
                           origin=self.k)
        self.phase = WalkPhase.INITIALIZE
        self.phase_cycles = 0
        self._step_index = -1

    def _enter_step(self, index: int) -> None:
        self._step_index = index
        self.phase = WalkPhase.SINGLE_SUPPORT
        self.phase_cycles = 0
        self._update_frame(self._plan.support(index).theta)

    def _enter_double(self) -> None:
        landed = self._plan.swing_to(self._step_index)
        self.feet[landed.side] = landed
        self.phase = WalkPhase.DOUBLE_SUPPORT
        self.phase_cycles = 0

    def _finish_walk(self) -> None:
        # The reference for the swing-role mass stays anchored at the foot
        # that landed last, keeping the standing references continuous.
        self._first_swing = self._plan.footprints[-1].side
        self.phase = WalkPhase.IDLE
        self.phase_cycles = 0
        self._walk_done = True
        self._step_index = -1
        self._set_stand_timeline()

    def _roll_setpoint_plan(self) -> None:
        plan = self._synthesize_plan(start=False)
        self._plan = plan
        self._set_timeline(WalkTimeline(plan, self.timing, self.params, self.config.ts,
                                        include_initialize=False),
                           origin=self.k)
        self._enter_step(0)

    # --------------------------------------------------- setpoint synthesis

    def plan_next_step(self, support: Footprint, landing_side: str) -> StepGeometry:
        """Next footprint from the filtered setpoints, landing relative to the
        support foot and clamped to the reachable window."""
        sp = self.setpoints
        sigma = math.radians(sp.filtered_alpha_deg) * self.timing.step_period
        clamped = abs(sigma) > self.sigma_max
        sigma = max(-self.sigma_max, min(self.sigma_max, sigma))
        heading = support.theta + sigma

        forward = sp.filtered_x
        if abs(forward) > self.config.swing_reach:
            clamped = True
            forward = math.copysign(self.config.swing_reach, forward)
        side_sign = 1.0 if landing_side == "L" else -1.0
        separation = self.step_width + side_sign * sp.filtered_y
        lo, hi = self.config.swing_band
        if not lo <= separation <= hi:
            clamped = True
            separation = min(hi, max(lo, separation))
        rel = np.array([forward, side_sign * separation])
        landing = support.xy() + _rot(heading) @ rel
        travel = landing - support.xy()
        return StepGeometry(footprint_xy=landing, heading=heading, side=landing_side,
                            travel=travel, clamped=clamped)

    def _synthesize_plan(self, start: bool) -> FootstepPlan:
        """Rolling plan: current stance plus one committed and several
        provisional landings computed from the filtered setpoints."""
        # After a step the just-landed foot becomes the support, so the foot
        # that supported the previous step swings next.
        swing = self._first_swing if start else self._plan.footprints[1].side
        other = "R" if swing == "L" else "L"
        prints = [self.feet[swing], self.feet[other]]
        self._clamped_step = False
        for _ in range(1 + self.provisional_steps):
            support = prints[-1]
            landing_side = prints[-2].side
            geo = self.plan_next_step(support, landing_side)
            self._clamped_step = self._clamped_step or geo.clamped
            prints.append(Footprint(geo.footprint_xy[0], geo.footprint_xy[1],
                                    geo.heading, landing_side))
        return FootstepPlan(tuple(prints), step_distance=None)

    # ------------------------------------------------------------ references

    def _set_stand_timeline(self) -> None:
        # Ordered so the terminal footprint is the swing-role anchor.
        stance = FootstepPlan((self.feet["R" if self._first_swing == "L" else "L"],
                               self.feet[self._first_swing]),
                              step_distance=None)
        self._set_timeline(WalkTimeline(stance, self.timing, self.params, self.config.ts,
                                        include_initialize=False),
                           origin=self.k)

    def _set_timeline(self, timeline: WalkTimeline, origin: int) -> None:
        self._timeline = timeline
        self._timeline_origin = origin
        self._row_cache = {}
        count = timeline.total_cycles + 2
        table = np.empty((count + 1, 9))
        for j in range(-1, count):
            s = timeline.sample(j)
            table[j + 1] = np.concatenate([s.zmp, s.hip, s.swing, s.stance_mass])
        self._ref_table = table

    def _world_sample(self, local: int) -> RefSample:
        return self._timeline.sample(local)

    def _local_cycle(self, k: int) -> int:
        return k - self._timeline_origin

    def _bundle(self, axis: str) -> ReferenceBundle:
        """Reference window in the working frame for one axis."""
        local = self._local_cycle(self.k)
        n_pred = self.config.n_pred
        count = self._ref_table.shape[0] - 1
        idxs = np.clip(np.arange(local + 1, local + 1 + n_pred), -1, count - 1) + 1
        rows = self._ref_table[idxs]
        R = _rot(-self.frame_angle)
        zmp = rows[:, 0:2] @ R.T
        hip = rows[:, 2:4] @ R.T
        swing = rows[:, 4:6] @ R.T
        stance = rows[:, 7:9] @ R.T
        i = 0 if axis == "x" else 1
        return ReferenceBundle(
            r_stance=stance[:, i],
            r_swing=0.5 * (swing[:, i] + hip[:, i]),
            r_zmp=zmp[:, i],
        )

    # ------------------------------------------------------------ constraints

    def support_feet(self) -> tuple[SupportFoot, ...]:
        """World-frame feet currently in ground contact."""
        hl = self.params.foot_length / 2.0
        hw = self.params.foot_width / 2.0

        def foot(fp: Footprint) -> SupportFoot:
            return SupportFoot(fp.x, fp.y, fp.theta, hl, hw)

        if self.phase == WalkPhase.SINGLE_SUPPORT:
            return (foot(self._plan.support(self._step_index)),)
        if self.phase == WalkPhase.DOUBLE_SUPPORT:
            return (foot(self._plan.support(self._step_index)),
                    foot(self._plan.swing_to(self._step_index)))
        return (foot(self.feet["L"]), foot(self.feet["R"]))

    def _frame_foot(self, fp: Footprint):
        """Foot center (frame coords) and inscribed extents for constraints."""
        center = _rot(-self.frame_angle) @ fp.xy()
        hl, hw = _inscribed_extents(self.params.foot_length / 2.0,
                                    self.params.foot_width / 2.0,
                                    wrap_angle(fp.theta - self.frame_angle))
        if hl <= 0.0 or hw <= 0.0:
            raise ValueError("foot heading too far from the working frame")
        return center, hl, hw

    def _segment_keys(self) -> list[tuple[int, int, tuple[str, int]]]:
        """Contiguous runs of equal timeline phase over the constrained window.

        Scheduling the constraint rows per upcoming phase gives the controller
        preview of support-box changes, so weight transfer starts before a
        single-support box tightens.  Samples beyond the constraint window are
        guided by the references only.
        """
        local = self._local_cycle(self.k)
        horizon = self.config.constraint_window
        segments = []
        j = 1
        while j <= horizon:
            key = self._timeline.phase(local + j)
            j_end = j
            while j_end < horizon and self._timeline.phase(local + j_end + 1) == key:
                j_end += 1
            segments.append((j, j_end, key))
            j = j_end + 1
        return segments

    def _rows_for(self, key: tuple[str, int], axis: str):
        cached = self._row_cache.get((key, axis))
        if cached is not None:
            return cached
        name, idx = key
        plan = self._timeline.plan
        if name == "single":
            sup, hl, hw = self._frame_foot(plan.support(idx))
            if axis == "x":
                rows = build_constraints(PHASE_SINGLE, sup[0], self.params, self.config,
                                         axis="x", half_extent=hl)
            else:
                target = _rot(-self.frame_angle) @ plan.swing_to(idx).xy()
                side = 1.0 if target[1] - sup[1] >= 0.0 else -1.0
                rows = build_constraints(PHASE_SINGLE, sup[1], self.params, self.config,
                                         axis="y", swing_side=side, half_extent=hw)
        else:
            if name == "double":
                feet = (plan.support(idx), plan.swing_to(idx))
                phase = PHASE_DOUBLE
            elif name == "initialize" or idx < 0:
                feet = (plan.footprints[0], plan.footprints[1])
                phase = PHASE_STAND
            else:
                feet = (plan.footprints[-2], plan.footprints[-1])
                phase = PHASE_STAND
            geom = [self._frame_foot(fp) for fp in feet]
            i = 0 if axis == "x" else 1
            rows = build_constraints(
                phase, (geom[0][0][i], geom[1][0][i]), self.params, self.config,
                axis=axis, half_extent=np.array([geom[0][1 + i], geom[1][1 + i]]))
        self._row_cache[(key, axis)] = rows
        return rows

    # ----------------------------------------------------------------- frame

    def _update_frame(self, new_angle: float) -> None:
        delta = wrap_angle(new_angle - self.frame_angle)
        if delta == 0.0:
            return
        R = _rot(-delta)
        X = np.vstack([self.estimates["x"], self.estimates["y"]])
        X = R @ X
        self.estimates["x"] = X[0].copy()
        self.estimates["y"] = X[1].copy()
        U = R @ np.vstack([self.controllers["x"].u_prev, self.controllers["y"].u_prev])
        self.controllers["x"].u_prev = U[0].copy()
        self.controllers["y"].u_prev = U[1].copy()
        for ctrl in self.controllers.values():
            ctrl.drop_warm_start()
        self.frame_angle = wrap_angle(self.frame_angle + delta)
        self._row_cache = {}
