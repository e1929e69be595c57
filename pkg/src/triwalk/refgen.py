"""Reference trajectories for walking: ZMP, hip, swing foot and mass targets.

Given a footstep plan and gait timing this module produces, per control
cycle, the three per-axis references the controller tracks (stance mass,
swing mass, ZMP) together with the hip and swing-foot curves they derive
from.  Within a step the ZMP holds at the support foot during single support
and ramps linearly to the next support during double support; the hip follows
the analytic constant-height pendulum solution between step boundary
positions; the swing foot follows polynomial arcs with zero end velocity.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import ThreeMassParams
from .footstep import FootstepPlan
from .mpc import ReferenceBundle


@dataclass(frozen=True)
class GaitTiming:
    """Phase durations and swing apex height.

    The default 70/30 single/double split leaves enough double-support time
    per step to re-center the masses under heavy measurement noise.
    """

    t_single: float = 0.7
    t_double: float = 0.3
    swing_height: float = 0.05

    def __post_init__(self) -> None:
        if self.t_single <= 0.0 or self.t_double < 0.0:
            raise ValueError("need t_single > 0 and t_double >= 0")
        if self.swing_height <= 0.0:
            raise ValueError("swing_height must be positive")

    @property
    def step_period(self) -> float:
        return self.t_single + self.t_double

    def cycles(self, ts: float) -> tuple[int, int]:
        """Phase durations in control cycles; durations must be multiples of ts."""
        out = []
        for name, dur in (("t_single", self.t_single), ("t_double", self.t_double)):
            n = round(dur / ts)
            if abs(n * ts - dur) > 1e-9:
                raise ValueError(f"{name} must be an integer multiple of the sample time")
            out.append(n)
        return out[0], out[1]


@dataclass(frozen=True)
class StepGeometry:
    """Next footprint plus the ZMP travel vector it implies."""

    footprint_xy: np.ndarray
    heading: float
    side: str
    travel: np.ndarray   # displacement of the ZMP anchor over the coming step
    clamped: bool = False


def _xy(point) -> np.ndarray:
    if hasattr(point, "xy"):
        return point.xy()
    return np.asarray(point, dtype=float)


def zmp_reference(plan: FootstepPlan, timing: GaitTiming, t: float) -> np.ndarray:
    """ZMP reference at time ``t`` from the start of the first step.

    Holds at the step's support foot for the single-support window, then
    ramps linearly toward the next support anchor over double support.  The
    final step ramps to the midpoint of the terminal stance so the walk ends
    in balanced standing.
    """
    n_steps = plan.n_steps
    period = timing.step_period
    total = n_steps * period
    if not 0.0 <= t <= total + 1e-12:
        raise ValueError(f"time {t} outside the plan duration [0, {total}]")
    i = min(int(t / period), n_steps - 1)
    return _zmp_piece(plan, timing, i, t - i * period)


def _zmp_piece(plan: FootstepPlan, timing: GaitTiming, i: int, t_local: float) -> np.ndarray:
    anchor = _xy(plan.support(i))
    if t_local < timing.t_single or timing.t_double == 0.0:
        return anchor
    if i < plan.n_steps - 1:
        target = _xy(plan.support(i + 1))
    else:
        target = 0.5 * (_xy(plan.footprints[-2]) + _xy(plan.footprints[-1]))
    frac = min((t_local - timing.t_single) / timing.t_double, 1.0)
    return anchor + (target - anchor) * frac


def hip_reference(p_st, p_h0, p_hf, t0: float, tf: float, t: float, omega: float):
    """Constant-height pendulum solution between step boundary positions.

    Evaluates the hyperbolic-sine interpolation anchored at the support point
    ``p_st`` with boundary values ``p_h0`` at ``t0`` and ``p_hf`` at ``tf``.
    """
    if tf == t0:
        raise ValueError("degenerate step interval")
    if omega <= 0.0:
        raise ValueError("omega must be positive")
    if not min(t0, tf) <= t <= max(t0, tf):
        raise ValueError(f"time {t} outside step interval [{t0}, {tf}]")
    p_st = np.asarray(p_st, dtype=float)
    p_h0 = np.asarray(p_h0, dtype=float)
    p_hf = np.asarray(p_hf, dtype=float)
    num = (p_st - p_hf) * math.sinh((t - t0) * omega) + (p_h0 - p_st) * math.sinh((t - tf) * omega)
    return p_st + num / math.sinh((t0 - tf) * omega)


def swing_reference(f_prev, f_next, timing: GaitTiming, t: float) -> np.ndarray:
    """Swing-foot position (x, y, z) at time ``t`` into the step.

    The horizontal components travel from ``f_prev`` to ``f_next`` along a
    polynomial arc with zero end velocity (repeated end control points); the
    height is a symmetric quartic peaking at ``swing_height`` mid-swing.  The
    foot rests on ``f_next`` through double support.
    """
    if not 0.0 <= t <= timing.step_period + 1e-12:
        raise ValueError(f"time {t} outside the step window")
    p0 = _xy(f_prev)
    p1 = _xy(f_next)
    if t >= timing.t_single:
        return np.array([p1[0], p1[1], 0.0])
    tau = t / timing.t_single
    blend = tau * tau * (3.0 - 2.0 * tau)
    xy = p0 + (p1 - p0) * blend
    z = 16.0 * timing.swing_height * tau * tau * (1.0 - tau) * (1.0 - tau)
    return np.array([xy[0], xy[1], z])


def mass_references(zmp_ref, hip_ref, swing_ref):
    """Targets for the three model masses from the planned curves.

    The stance-leg mass sits midway between ZMP and hip, the swing-leg mass
    midway between swing foot and hip; the torso target is the hip itself.
    """
    zmp_ref = np.asarray(zmp_ref, dtype=float)
    hip_ref = np.asarray(hip_ref, dtype=float)
    swing_xy = np.asarray(swing_ref, dtype=float)[:2]
    r_st = 0.5 * (zmp_ref + hip_ref)
    r_sw = 0.5 * (swing_xy + hip_ref)
    return r_st, hip_ref.copy(), r_sw


@dataclass(frozen=True)
class RefSample:
    """All reference signals at one control cycle (world frame)."""

    zmp: np.ndarray          # (2,)
    hip: np.ndarray          # (2,)
    swing: np.ndarray        # (3,) swing-foot position incl. height
    stance_mass: np.ndarray  # (2,)
    torso: np.ndarray        # (2,)
    swing_mass: np.ndarray   # (2,)


class WalkTimeline:
    """Cycle-indexed reference sampler for one footstep plan.

    Layout: an optional initialization window (one double-support duration,
    ramping the ZMP from between the feet onto the first support foot),
    followed by the plan's steps, followed by standing on the terminal feet.
    Cycle indices below zero return the initial standing posture, so windows
    that start before the walk are well defined.
    """

    def __init__(self, plan: FootstepPlan, timing: GaitTiming, params: ThreeMassParams,
                 ts: float, include_initialize: bool = True):
        self.plan = plan
        self.timing = timing
        self.params = params
        self.ts = ts
        self.n_single, self.n_double = timing.cycles(ts)
        self.n_step = self.n_single + self.n_double
        if self.n_step == 0:
            raise ValueError("step period must span at least one cycle")
        self.n_init = self.n_double if include_initialize else 0
        self.total_cycles = self.n_init + plan.n_steps * self.n_step
        fps = plan.footprints
        self._mid0 = 0.5 * (_xy(fps[0]) + _xy(fps[1]))
        self._mid_final = 0.5 * (_xy(fps[-2]) + _xy(fps[-1]))

    def phase(self, cycle: int) -> tuple[str, int]:
        """Phase name and step index at a cycle: stand/initialize/single/double."""
        if cycle < 0 or cycle >= self.total_cycles:
            return "stand", -1 if cycle < 0 else self.plan.n_steps
        if cycle < self.n_init:
            return "initialize", -1
        local = cycle - self.n_init
        i = local // self.n_step
        return ("single" if local - i * self.n_step < self.n_single else "double", i)

    def sample(self, cycle: int) -> RefSample:
        plan, timing = self.plan, self.timing
        fps = plan.footprints
        if cycle < 0:
            return self._standing(self._mid0, _xy(fps[0]))
        if cycle >= self.total_cycles:
            return self._standing(self._mid_final, _xy(fps[-1]))
        if cycle < self.n_init:
            frac = cycle / self.n_init
            zmp = self._mid0 + (_xy(plan.support(0)) - self._mid0) * frac
            return self._pack(zmp, self._mid0, np.array([*_xy(fps[0]), 0.0]))
        local = cycle - self.n_init
        i = int(local // self.n_step)
        t_local = (local - i * self.n_step) * self.ts
        zmp = _zmp_piece(plan, timing, i, t_local)
        hip = hip_reference(
            _xy(plan.support(i)),
            0.5 * (_xy(fps[i]) + _xy(fps[i + 1])),
            0.5 * (_xy(fps[i + 1]) + _xy(fps[i + 2])),
            0.0, timing.step_period, t_local, self.params.omega)
        swing = swing_reference(_xy(plan.swing_from(i)), _xy(plan.swing_to(i)), timing, t_local)
        return self._pack(zmp, hip, swing)

    def bundle(self, cycle: int, n_pred: int, axis: str) -> ReferenceBundle:
        """Per-axis reference window for predictions at cycle+1 .. cycle+n_pred."""
        idx = 0 if axis == "x" else 1
        r_st = np.empty(n_pred)
        r_sw = np.empty(n_pred)
        r_z = np.empty(n_pred)
        for j in range(n_pred):
            s = self.sample(cycle + 1 + j)
            r_st[j] = s.stance_mass[idx]
            r_sw[j] = s.swing_mass[idx]
            r_z[j] = s.zmp[idx]
        return ReferenceBundle(r_stance=r_st, r_swing=r_sw, r_zmp=r_z)

    def _standing(self, mid: np.ndarray, swing_xy: np.ndarray) -> RefSample:
        return self._pack(mid.copy(), mid.copy(), np.array([swing_xy[0], swing_xy[1], 0.0]))

    @staticmethod
    def _pack(zmp, hip, swing) -> RefSample:
        r_st, torso, r_sw = mass_references(zmp, hip, swing)
        return RefSample(zmp=zmp, hip=hip, swing=swing,
                         stance_mass=r_st, torso=torso, swing_mass=r_sw)


def assemble_bundle(timeline: WalkTimeline, cycle: int, n_pred: int,
                    axis: str = "x") -> ReferenceBundle:
    """Reference window for the controller; pads by holding the final stance."""
    return timeline.bundle(cycle, n_pred, axis)


REFERENCE_CSV_COLUMNS = ("t", "r_z_x", "r_z_y", "r_st_x", "r_st_y",
                         "r_sw_x", "r_sw_y", "hip_x", "hip_y", "swing_z")


def export_references(timeline: WalkTimeline, path, n_cycles: int | None = None) -> None:
    """Write the sampled reference signals as CSV."""
    n = timeline.total_cycles if n_cycles is None else n_cycles
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(REFERENCE_CSV_COLUMNS)
        for k in range(n):
            s = timeline.sample(k)
            writer.writerow([
                f"{k * timeline.ts:.6f}",
                s.zmp[0], s.zmp[1],
                s.stance_mass[0], s.stance_mass[1],
                s.swing_mass[0], s.swing_mass[1],
                s.hip[0], s.hip[1],
                s.swing[2],
            ])
