"""Scenario runner: closed-loop simulation with measurement noise, impulse
disturbances, fall detection and trace export.

A scenario couples the walking engine with the three-mass plant: per cycle the
plant outputs are measured (optionally with truncated-Gaussian noise), the
engine produces jerk commands, and disturbances enter as extra acceleration on
a target mass.  Metrics are computed against the true plant state; a fall is
declared when the true ZMP stays outside the unscaled support polygon for more
than ``n_fall`` consecutive cycles.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dynamics import ThreeMassParams, step_plant
from .engine import SupportFoot, WalkEngine
from .footstep import (
    FootstepPlan,
    footsteps_from_path,
    initial_feet_on_path,
    load_map,
    plan_footsteps,
)
from .mpc import ControllerFault, MpcConfig, ObserverConfig
from .refgen import GaitTiming


class BracketError(ValueError):
    """The bisection bracket does not straddle the survive/fall boundary."""


@dataclass(frozen=True)
class NoiseSpec:
    enabled: bool = False
    bound: float = 0.05
    seed: int = 0


@dataclass(frozen=True)
class Disturbance:
    """Impulse force on one model mass along one axis."""

    t_start: float
    duration: float
    force: float
    mass_index: int = 1     # torso by default
    axis: str = "x"


@dataclass
class Scenario:
    name: str = "scenario"
    mode: str = "path"                  # "path" | "setpoints"
    duration: float = 8.0
    params: ThreeMassParams = field(default_factory=ThreeMassParams.nominal)
    config: MpcConfig = field(default_factory=MpcConfig)
    timing: GaitTiming = field(default_factory=GaitTiming)
    observer: ObserverConfig = field(default_factory=ObserverConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    disturbances: tuple[Disturbance, ...] = ()
    n_fall: int = 25
    # Plan sources (path mode): an occupancy map (inline dict or file path)
    # with start/goal, or explicit waypoints; ``max_steps`` truncates the plan.
    map_source: dict | str | None = None
    path_points: tuple[tuple[float, float], ...] | None = None
    max_steps: int | None = None
    # Setpoint schedule (setpoints mode): entries (t, x, y, alpha_deg).
    schedule: tuple[tuple[float, float, float, float], ...] = ((0.0, 0.0, 0.0, 0.0),)

    def validate(self) -> None:
        if self.mode not in ("path", "setpoints"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "path" and self.map_source is None and self.path_points is None:
            raise ValueError("path mode needs map_source or path_points")
        if self.mode == "setpoints" and not self.schedule:
            raise ValueError("setpoints mode needs at least one schedule entry")
        if self.duration <= 0.0:
            raise ValueError("duration must be positive")
        for d in self.disturbances:
            if not (0.0 <= d.t_start and d.t_start + d.duration <= self.duration):
                raise ValueError("disturbance window must lie within the run")
            if d.mass_index not in (0, 1, 2) or d.axis not in ("x", "y"):
                raise ValueError("disturbance target is out of range")

    def build_plan(self) -> FootstepPlan | None:
        if self.mode != "path":
            return None
        if self.map_source is not None:
            grid, start, goal = load_map(self.map_source)
            if start is None or goal is None:
                raise ValueError("map must define start and goal cells")
            plan, _ = plan_footsteps(grid, start, goal)
        elif self.path_points is not None:
            pts = np.asarray(self.path_points, dtype=float)
            plan = footsteps_from_path(pts, initial_feet_on_path(pts))
        else:
            raise ValueError("path mode needs map_source or path_points")
        if self.max_steps is not None:
            plan = plan.truncated(self.max_steps)
        return plan

    def to_json(self) -> dict:
        data = {
            "name": self.name,
            "mode": self.mode,
            "duration": self.duration,
            "params": asdict(self.params),
            "config": asdict(self.config),
            "timing": asdict(self.timing),
            "observer": asdict(self.observer),
            "noise": asdict(self.noise),
            "disturbances": [asdict(d) for d in self.disturbances],
            "n_fall": self.n_fall,
            "schedule": [list(s) for s in self.schedule],
        }
        if self.map_source is not None:
            data["map"] = self.map_source
        if self.path_points is not None:
            data["path_points"] = [list(p) for p in self.path_points]
        if self.max_steps is not None:
            data["max_steps"] = self.max_steps
        return data

    @classmethod
    def from_json(cls, source) -> "Scenario":
        if isinstance(source, (str, Path)):
            data = json.loads(Path(source).read_text())
        else:
            data = source
        kwargs = {}
        for key in ("name", "mode", "duration", "n_fall", "max_steps"):
            if key in data:
                kwargs[key] = data[key]
        if "params" in data:
            kwargs["params"] = ThreeMassParams(**data["params"])
        if "config" in data:
            cfg = dict(data["config"])
            if "w_jerk" in cfg:
                cfg["w_jerk"] = tuple(cfg["w_jerk"])
            if "swing_band" in cfg:
                cfg["swing_band"] = tuple(cfg["swing_band"])
            kwargs["config"] = MpcConfig(**cfg)
        if "timing" in data:
            kwargs["timing"] = GaitTiming(**data["timing"])
        if "observer" in data:
            obs = {k: tuple(v) if isinstance(v, list) else v
                   for k, v in data["observer"].items()}
            kwargs["observer"] = ObserverConfig(**obs)
        if "noise" in data:
            kwargs["noise"] = NoiseSpec(**data["noise"])
        if "disturbances" in data:
            kwargs["disturbances"] = tuple(Disturbance(**d) for d in data["disturbances"])
        if "map" in data:
            kwargs["map_source"] = data["map"]
        if "path_points" in data:
            kwargs["path_points"] = tuple(tuple(p) for p in data["path_points"])
        if "schedule" in data:
            kwargs["schedule"] = tuple(tuple(s) for s in data["schedule"])
        scenario = cls(**kwargs)
        scenario.validate()
        return scenario


@dataclass
class Trace:
    """Per-cycle record arrays of one run."""

    t: np.ndarray
    phase: list[str]
    qp_status: list[tuple[str, str]]
    u: np.ndarray            # (n, 2, 3)
    zmp_meas: np.ndarray     # (n, 2)
    zmp_pred: np.ndarray
    zmp_true: np.ndarray
    refs: np.ndarray         # (n, 6): r_z, r_st, r_sw each (x, y)


@dataclass
class RunMetrics:
    completed: bool
    fall_detected: bool
    fall_time: float | None
    zmp_violation_cycles: int
    zmp_max_excursion: float
    scaled_violation_cycles: int
    tracking_rms: dict[str, float]
    n_cycles: int
    fault: str | None
    torso_sway_scores: tuple[float, ...] = ()   # per single-support phase, >0 when
                                                # the torso leans toward the support
    trace: Trace | None = None

    def summary(self) -> dict:
        return {
            "completed": self.completed,
            "fall_detected": self.fall_detected,
            "fall_time": self.fall_time,
            "zmp_violation_cycles": self.zmp_violation_cycles,
            "zmp_max_excursion": self.zmp_max_excursion,
            "scaled_violation_cycles": self.scaled_violation_cycles,
            "tracking_rms": dict(self.tracking_rms),
            "n_cycles": self.n_cycles,
            "fault": self.fault,
            "torso_sway_scores": list(self.torso_sway_scores),
        }


def noise_sample(rng: np.random.Generator, bound: float) -> float:
    """Zero-mean Gaussian (sigma = bound/3) truncated to [-bound, bound]."""
    if bound <= 0.0:
        raise ValueError("noise bound must be positive")
    sigma = bound / 3.0
    while True:
        v = rng.normal(0.0, sigma)
        if abs(v) <= bound:
            return v


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Counter-clockwise convex hull (monotone chain)."""
    pts = sorted({(float(p[0]), float(p[1])) for p in points})
    if len(pts) <= 2:
        return np.asarray(pts)

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and (
                    (out[-1][0] - out[-2][0]) * (p[1] - out[-2][1])
                    - (out[-1][1] - out[-2][1]) * (p[0] - out[-2][0])) <= 0.0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(reversed(pts))
    return np.asarray(lower[:-1] + upper[:-1])


def polygon_excursion(point, hull: np.ndarray) -> float:
    """Largest half-plane violation of ``point`` (<= 0 means inside)."""
    p = np.asarray(point, dtype=float)
    n = hull.shape[0]
    if n == 0:
        return math.inf
    if n == 1:
        return float(np.linalg.norm(p - hull[0]))
    worst = -math.inf
    for i in range(n):
        a = hull[i]
        b = hull[(i + 1) % n]
        edge = b - a
        length = float(np.linalg.norm(edge))
        if length < 1e-15:
            continue
        # Outward normal of a CCW polygon points right of the edge.
        normal = np.array([edge[1], -edge[0]]) / length
        worst = max(worst, float(normal @ (p - a)))
    return worst


def support_excursion(zmp, feet: tuple[SupportFoot, ...], scale: float = 1.0) -> float:
    """Distance of the ZMP outside the support polygon (<= 0 inside).

    ``scale`` shrinks every footprint about its own center, matching the
    safety margin the controller enforces.
    """
    if scale != 1.0:
        feet = tuple(replace(f, half_length=f.half_length * scale,
                             half_width=f.half_width * scale) for f in feet)
    corners = np.vstack([f.corners() for f in feet])
    return polygon_excursion(zmp, convex_hull(corners))


def _disturbance_schedule(scenario: Scenario):
    """Per-cycle extra acceleration, preserving each impulse under sampling."""
    ts = scenario.config.ts
    table: dict[int, dict[str, np.ndarray]] = {}
    masses = scenario.params.masses()
    for d in scenario.disturbances:
        n = max(1, math.ceil(d.duration / ts - 1e-9))
        accel = (d.force / masses[d.mass_index]) * (d.duration / (n * ts))
        k0 = int(round(d.t_start / ts))
        for k in range(k0, k0 + n):
            entry = table.setdefault(k, {"x": np.zeros(3), "y": np.zeros(3)})
            entry[d.axis][d.mass_index] += accel
    return table


def run(scenario: Scenario, out_dir=None, seed: int | None = None,
        keep_trace: bool = True) -> RunMetrics:
    """Simulate one scenario and return its metrics.

    ``seed`` overrides the scenario's noise seed.  With ``out_dir`` set, the
    trace CSV and a JSON summary are written there.
    """
    scenario.validate()
    cfg = scenario.config
    engine = WalkEngine(scenario.params, cfg, scenario.timing, observer=scenario.observer)
    if scenario.mode == "path":
        engine.command_path(scenario.build_plan())
    else:
        t0, x0, y0, a0 = scenario.schedule[0]
        engine.command_setpoints(x0, y0, a0)
    plant = {"x": engine.standing_state("x"), "y": engine.standing_state("y")}

    rng = np.random.default_rng(scenario.noise.seed if seed is None else seed)
    extra = _disturbance_schedule(scenario)
    ssd = engine.model
    zmp_row = ssd.C[2]
    n_cycles = int(round(scenario.duration / cfg.ts))
    schedule = sorted(scenario.schedule)
    next_entry = 1  # entry 0 consumed by command_setpoints

    rec_t, rec_phase, rec_status = [], [], []
    rec_u, rec_zm, rec_zp, rec_zt, rec_refs = [], [], [], [], []
    err_st, err_sw, err_z = [], [], []

    completed = True
    fault = None
    fall_detected = False
    fall_time = None
    violation_cycles = 0
    scaled_violations = 0
    max_excursion = -math.inf
    consecutive = 0
    sway_scores: list[float] = []
    sway_accum: list[float] = []
    sway_step = None

    for k in range(n_cycles):
        t = k * cfg.ts
        if scenario.mode == "setpoints":
            while next_entry < len(schedule) and schedule[next_entry][0] <= t + 1e-12:
                _, sx, sy, sa = schedule[next_entry]
                engine.set_setpoints(sx, sy, sa)
                next_entry += 1
        y_x = ssd.C @ plant["x"]
        y_y = ssd.C @ plant["y"]
        if scenario.noise.enabled:
            y_x = y_x + [noise_sample(rng, scenario.noise.bound) for _ in range(3)]
            y_y = y_y + [noise_sample(rng, scenario.noise.bound) for _ in range(3)]
        try:
            diag = engine.tick(y_x, y_y)
        except ControllerFault as exc:
            completed = False
            fault = str(exc)
            break
        kick = extra.get(k)
        plant["x"] = step_plant(ssd, plant["x"], diag.u_x,
                                kick["x"] if kick else None)
        plant["y"] = step_plant(ssd, plant["y"], diag.u_y,
                                kick["y"] if kick else None)

        zmp_true = np.array([zmp_row @ plant["x"], zmp_row @ plant["y"]])
        excursion = support_excursion(zmp_true, diag.support_feet)
        max_excursion = max(max_excursion, excursion)
        if excursion > 1e-9:
            violation_cycles += 1
            consecutive += 1
        else:
            consecutive = 0
        if support_excursion(zmp_true, diag.support_feet,
                             scale=scenario.params.zmp_safety_scale) > 1e-9:
            scaled_violations += 1

        # Per-phase torso lean toward the support foot during single support.
        if diag.swing_target is not None:
            sup = diag.support_feet[0]
            mid = 0.5 * (np.array([sup.x, sup.y]) + diag.swing_target)
            lateral = np.array([-math.sin(sup.theta), math.cos(sup.theta)])
            torso = np.array([plant["x"][3], plant["y"][3]])
            side = math.copysign(1.0, (np.array([sup.x, sup.y]) - mid) @ lateral)
            if sway_step is not None and diag.step_index != sway_step and sway_accum:
                sway_scores.append(float(np.mean(sway_accum)))
                sway_accum = []
            sway_step = diag.step_index
            sway_accum.append(((torso - mid) @ lateral) * side)
        elif sway_accum:
            sway_scores.append(float(np.mean(sway_accum)))
            sway_accum = []
            sway_step = None

        out_true = np.array([ssd.C @ plant["x"], ssd.C @ plant["y"]])
        refs = diag.refs
        err_st.append(np.hypot(out_true[0, 0] - refs.stance_mass[0],
                               out_true[1, 0] - refs.stance_mass[1]))
        err_sw.append(np.hypot(out_true[0, 1] - refs.swing_mass[0],
                               out_true[1, 1] - refs.swing_mass[1]))
        err_z.append(np.hypot(out_true[0, 2] - refs.zmp[0],
                              out_true[1, 2] - refs.zmp[1]))

        if keep_trace:
            rec_t.append(t)
            rec_phase.append(diag.phase.value)
            rec_status.append(diag.qp_status)
            rec_u.append(np.vstack([diag.u_x, diag.u_y]))
            rec_zm.append(np.array([y_x[2], y_y[2]]))
            rec_zp.append(diag.zmp_pred)
            rec_zt.append(zmp_true)
            rec_refs.append(np.concatenate([refs.zmp, refs.stance_mass, refs.swing_mass]))

        if consecutive > scenario.n_fall:
            fall_detected = True
            fall_time = t
            break

    trace = None
    if keep_trace:
        trace = Trace(
            t=np.asarray(rec_t),
            phase=rec_phase,
            qp_status=rec_status,
            u=np.asarray(rec_u) if rec_u else np.zeros((0, 2, 3)),
            zmp_meas=np.asarray(rec_zm) if rec_zm else np.zeros((0, 2)),
            zmp_pred=np.asarray(rec_zp) if rec_zp else np.zeros((0, 2)),
            zmp_true=np.asarray(rec_zt) if rec_zt else np.zeros((0, 2)),
            refs=np.asarray(rec_refs) if rec_refs else np.zeros((0, 6)),
        )
    if sway_accum:
        sway_scores.append(float(np.mean(sway_accum)))
    metrics = RunMetrics(
        completed=completed,
        fall_detected=fall_detected,
        fall_time=fall_time,
        zmp_violation_cycles=violation_cycles,
        zmp_max_excursion=max_excursion if max_excursion > -math.inf else 0.0,
        scaled_violation_cycles=scaled_violations,
        tracking_rms={
            "stance": float(np.sqrt(np.mean(np.square(err_st)))) if err_st else 0.0,
            "swing": float(np.sqrt(np.mean(np.square(err_sw)))) if err_sw else 0.0,
            "zmp": float(np.sqrt(np.mean(np.square(err_z)))) if err_z else 0.0,
        },
        n_cycles=len(err_st),
        fault=fault,
        torso_sway_scores=tuple(sway_scores),
        trace=trace,
    )
    if out_dir is not None:
        export_traces(metrics, Path(out_dir) / scenario.name)
    return metrics


TRACE_SCHEMA = ("t,phase,qp_status_x,qp_status_y,"
                "u1_x,u2_x,u3_x,u1_y,u2_y,u3_y,"
                "zmp_meas_x,zmp_meas_y,zmp_pred_x,zmp_pred_y,zmp_true_x,zmp_true_y,"
                "r_z_x,r_z_y,r_st_x,r_st_y,r_sw_x,r_sw_y")


def export_traces(metrics: RunMetrics, path_prefix) -> tuple[Path, Path]:
    """Write the per-cycle CSV and the JSON summary; returns both paths."""
    prefix = Path(path_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path = prefix.with_suffix(".csv")
    json_path = prefix.with_suffix(".json")
    lines = ["# triwalk-trace v1", TRACE_SCHEMA]
    tr = metrics.trace
    if tr is not None:
        for i in range(tr.t.shape[0]):
            row = [f"{tr.t[i]:.6f}", tr.phase[i], tr.qp_status[i][0], tr.qp_status[i][1]]
            row += [repr(v) for v in tr.u[i].ravel()]
            row += [repr(v) for v in tr.zmp_meas[i]]
            row += [repr(v) for v in tr.zmp_pred[i]]
            row += [repr(v) for v in tr.zmp_true[i]]
            row += [repr(v) for v in tr.refs[i]]
            lines.append(",".join(row))
    csv_path.write_text("\n".join(lines) + "\n")
    json_path.write_text(json.dumps(metrics.summary(), indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def with_impulse(scenario: Scenario, force: float) -> Scenario:
    """Copy of the scenario with the first disturbance set to ``force``."""
    if not scenario.disturbances:
        raise ValueError("scenario template has no disturbance to scale")
    first = replace(scenario.disturbances[0], force=force)
    return replace(scenario, disturbances=(first,) + scenario.disturbances[1:])


def max_withstand(scenario: Scenario, direction, bracket=(100.0, 1000.0),
                  tol: float = 5.0) -> float:
    """Largest impulse amplitude the closed loop survives, by bisection.

    ``direction`` is "fwd"/"bwd" or +1/-1 and signs the applied force.  The
    bracket low end must survive and the high end must fall.
    """
    sign = {"fwd": 1.0, "bwd": -1.0, 1: 1.0, -1: -1.0, 1.0: 1.0, -1.0: -1.0}.get(direction)
    if sign is None:
        raise ValueError(f"unknown direction {direction!r}")
    lo, hi = float(bracket[0]), float(bracket[1])
    if not 0.0 < lo < hi:
        raise BracketError("bracket must satisfy 0 < low < high")

    def survives(amplitude: float) -> bool:
        m = run(with_impulse(scenario, sign * amplitude), keep_trace=False)
        if not m.completed:
            return False
        return not m.fall_detected

    if not survives(lo):
        raise BracketError(f"low bracket {lo} N already causes a fall")
    if survives(hi):
        raise BracketError(f"high bracket {hi} N does not cause a fall")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if survives(mid):
            lo = mid
        else:
            hi = mid
    return sign * lo


# --------------------------------------------------------------- factories

def straight_path_points(length: float = 1.2, spacing: float = 0.1):
    xs = np.arange(0.0, length + spacing / 2.0, spacing)
    return tuple((float(x), 0.0) for x in xs)


def tracking_scenario(n_steps: int = 5, noise: bool = False, seed: int = 0,
                      duration: float | None = None) -> Scenario:
    """Straight walk over the first steps of a planned path."""
    timing = GaitTiming()
    if duration is None:
        duration = 0.2 + n_steps * timing.step_period + 1.5
    return Scenario(
        name=f"tracking-{n_steps}step" + ("-noise" if noise else ""),
        mode="path",
        duration=duration,
        path_points=straight_path_points(),
        max_steps=n_steps,
        noise=NoiseSpec(enabled=noise, seed=seed),
        timing=timing,
    )


def inplace_scenario(duration: float = 6.0, noise: bool = True, seed: int = 0,
                     disturbances: tuple[Disturbance, ...] = ()) -> Scenario:
    """Walking in place under setpoint control (disturbance test base)."""
    return Scenario(
        name="walk-in-place",
        mode="setpoints",
        duration=duration,
        noise=NoiseSpec(enabled=noise, seed=seed),
        disturbances=disturbances,
        schedule=((0.0, 0.0, 0.0, 0.0),),
    )


def disturbance_scenario(force: float, t_start: float = 1.6, duration_s: float = 0.01,
                         seed: int = 0, run_time: float | None = None) -> Scenario:
    """Impulse on the torso while walking the tracking scenario, with noise."""
    scenario = tracking_scenario(noise=True, seed=seed, duration=run_time)
    return replace(scenario, name=f"impulse-{int(force)}N",
                   disturbances=(Disturbance(t_start=t_start, duration=duration_s,
                                             force=force),))


def omnidirectional_scenario(duration: float = 56.0) -> Scenario:
    """Setpoint schedule: walk in place, forward, diagonal, diagonal + turn."""
    return Scenario(
        name="omnidirectional",
        mode="setpoints",
        duration=duration,
        schedule=(
            (0.0, 0.0, 0.0, 0.0),
            (8.0, 0.1, 0.0, 0.0),
            (24.0, 0.1, 0.025, 0.0),
            (42.0, 0.1, 0.025, 10.0),
        ),
    )
