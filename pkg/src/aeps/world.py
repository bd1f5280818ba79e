"""Desk-scale patrol world and the closed-loop mission simulator.

The world is a flat 300 x 300 m area with four obstacle kinds: static boxes
(buildings), ground vehicles moving at constant velocity, falling objects
that drop ballistically from a spawn time until they hit the ground, and
other aircraft following scripted waypoint loops.  Obstacle state is a pure
function of time, so worlds are deterministic and cheap to query.

run_mission closes the loop: plan, predict demand, precharge (enhanced mode),
then fly a double-integrator point mass that chases the reference while the
power plant gates its acceleration.  Per step the demand comes from the flown
trailing window, the allocator splits it across sources, and any brownout
scales the commanded acceleration by supplied/requested power.
"""

from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import planner as planner_mod
from . import plant as plant_mod
from .planner import ObstacleSnapshot, PlanParams, DEFAULT_ENVELOPE
from .plant import PlantState, PlantSpecs, DEFAULT_SPECS, PLANT_TRACE_HEADER
from .powermodel import BaselineParams, DemandParams, DEMAND_PRESETS, baseline_power, demand_profile
from .predictor import Predictor, plan_features
from .trajectory import Trajectory, features

__all__ = [
    "ObstacleSpec",
    "ScenarioConfig",
    "World",
    "MissionSettings",
    "UAVState",
    "SimulationTrace",
    "InvalidScenarioError",
    "GRAVITY",
    "generate_scenario",
    "spawn_scenario",
    "run_mission",
]

GRAVITY = 9.81

MODES = ("normal", "agility_enhanced")


class InvalidScenarioError(ValueError):
    """Start or goal conflicts with the layout, or malformed obstacle data."""


@dataclass(frozen=True)
class ObstacleSpec:
    """One obstacle; which fields matter depends on kind.

    static_box / moving_vehicle: center + size (full extents), vehicles add a
    constant ground velocity.  falling_object: radius + spawn position/time.
    other_uav: radius + timed waypoints, looped when loop is set.
    """

    kind: str
    center: tuple = (0.0, 0.0, 0.0)
    size: tuple = (1.0, 1.0, 1.0)
    velocity: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.3
    spawn_time: float = 0.0
    waypoints: tuple = ()
    loop: bool = True

    def __post_init__(self):
        if self.kind not in ("static_box", "moving_vehicle", "falling_object", "other_uav"):
            raise InvalidScenarioError(f"unknown obstacle kind {self.kind!r}")
        if self.kind in ("falling_object", "other_uav") and self.radius <= 0:
            raise InvalidScenarioError("sphere obstacles need radius > 0")
        if self.kind == "other_uav" and len(self.waypoints) < 2:
            raise InvalidScenarioError("scripted aircraft need >= 2 waypoints")
        if self.kind in ("static_box", "moving_vehicle") and min(self.size) <= 0:
            raise InvalidScenarioError("boxes need positive extents")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "center": list(self.center),
            "size": list(self.size),
            "velocity": list(self.velocity),
            "radius": self.radius,
            "spawn_time": self.spawn_time,
            "waypoints": [list(w) for w in self.waypoints],
            "loop": self.loop,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObstacleSpec":
        return cls(
            kind=d["kind"],
            center=tuple(d.get("center", (0.0, 0.0, 0.0))),
            size=tuple(d.get("size", (1.0, 1.0, 1.0))),
            velocity=tuple(d.get("velocity", (0.0, 0.0, 0.0))),
            radius=float(d.get("radius", 0.3)),
            spawn_time=float(d.get("spawn_time", 0.0)),
            waypoints=tuple(tuple(w) for w in d.get("waypoints", ())),
            loop=bool(d.get("loop", True)),
        )


@dataclass(frozen=True)
class ScenarioConfig:
    complexity: str = "low_dynamic"
    seed: int = 0
    area: tuple = (300.0, 300.0)
    start: tuple = (100.0, 100.0, 2.5)
    goal: tuple = (140.0, 100.0, 2.5)
    obstacles: tuple = ()
    dt: float = 0.1

    def __post_init__(self):
        if self.complexity not in ("low_dynamic", "high_dynamic"):
            raise InvalidScenarioError(f"unknown complexity {self.complexity!r}")
        if self.dt <= 0:
            raise InvalidScenarioError("dt must be > 0")

    def to_json(self, path) -> None:
        doc = {
            "schema": 1,
            "complexity": self.complexity,
            "seed": self.seed,
            "area": list(self.area),
            "start": list(self.start),
            "goal": list(self.goal),
            "dt": self.dt,
            "obstacles": [o.to_dict() for o in self.obstacles],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("schema") != 1:
            raise InvalidScenarioError(f"unsupported scenario schema {doc.get('schema')!r}")
        return cls(
            complexity=doc["complexity"],
            seed=int(doc["seed"]),
            area=tuple(doc["area"]),
            start=tuple(doc["start"]),
            goal=tuple(doc["goal"]),
            obstacles=tuple(ObstacleSpec.from_dict(o) for o in doc["obstacles"]),
            dt=float(doc.get("dt", 0.1)),
        )


class World:
    """Obstacle kinematics and queries over a ScenarioConfig."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.obstacles = list(config.obstacles)
        self.time = 0.0

    def step_world(self, dt: float) -> None:
        """Obstacle state is closed-form in time; stepping just advances it."""
        self.time += dt

    def static_boxes(self):
        out = []
        for ob in self.obstacles:
            if ob.kind == "static_box":
                c, s = np.asarray(ob.center), np.asarray(ob.size)
                out.append((c - s / 2.0, c + s / 2.0))
        return out

    # -- per-obstacle kinematics ------------------------------------------

    def active(self, i: int, t: float) -> bool:
        ob = self.obstacles[i]
        if ob.kind == "falling_object":
            if t < ob.spawn_time:
                return False
            drop = ob.center[2] - ob.radius
            if drop <= 0:
                return False
            return t < ob.spawn_time + np.sqrt(2.0 * drop / GRAVITY)
        return True

    def position(self, i: int, t: float) -> np.ndarray:
        ob = self.obstacles[i]
        if ob.kind == "static_box":
            return np.asarray(ob.center, dtype=float)
        if ob.kind == "moving_vehicle":
            return np.asarray(ob.center, dtype=float) + np.asarray(ob.velocity) * t
        if ob.kind == "falling_object":
            tau = max(t - ob.spawn_time, 0.0)
            p = np.asarray(ob.center, dtype=float).copy()
            p[2] -= 0.5 * GRAVITY * tau * tau
            return p
        return self._scripted_position(ob, t)

    def velocity(self, i: int, t: float) -> np.ndarray:
        ob = self.obstacles[i]
        if ob.kind == "moving_vehicle":
            return np.asarray(ob.velocity, dtype=float)
        if ob.kind == "falling_object":
            tau = max(t - ob.spawn_time, 0.0)
            return np.array([0.0, 0.0, -GRAVITY * tau])
        if ob.kind == "other_uav":
            eps = 0.05
            return (self._scripted_position(ob, t + eps) - self._scripted_position(ob, t - eps)) / (2 * eps)
        return np.zeros(3)

    def accel(self, i: int) -> np.ndarray:
        if self.obstacles[i].kind == "falling_object":
            return np.array([0.0, 0.0, -GRAVITY])
        return np.zeros(3)

    @staticmethod
    def _scripted_position(ob: ObstacleSpec, t: float) -> np.ndarray:
        wps = np.asarray(ob.waypoints, dtype=float)
        times, pts = wps[:, 0], wps[:, 1:4]
        if ob.loop and times[-1] > 0:
            t = t % times[-1]
        t = np.clip(t, times[0], times[-1])
        return np.array([np.interp(t, times, pts[:, k]) for k in range(3)])

    # -- queries ------------------------------------------------------------

    def surface_distance(self, i: int, point: np.ndarray, t: float) -> float:
        ob = self.obstacles[i]
        p = self.position(i, t)
        if ob.kind in ("static_box", "moving_vehicle"):
            half = np.asarray(ob.size) / 2.0
            d = np.maximum(np.abs(point - p) - half, 0.0)
            return float(np.linalg.norm(d))
        return float(np.linalg.norm(point - p) - ob.radius)

    def min_distance(self, point, t: float, sentinel: float = 20.0) -> tuple[float, int]:
        """Minimum surface distance over active obstacles, (sentinel, -1) if none."""
        point = np.asarray(point, dtype=float)
        best, best_i = np.inf, -1
        for i in range(len(self.obstacles)):
            if not self.active(i, t):
                continue
            d = self.surface_distance(i, point, t)
            if d < best:
                best, best_i = d, i
        if best_i < 0:
            return sentinel, -1
        return best, best_i

    def effective_radius(self, i: int) -> float:
        # lateral dodges make the horizontal footprint the binding dimension
        ob = self.obstacles[i]
        if ob.kind in ("static_box", "moving_vehicle"):
            return 0.5 * float(np.hypot(ob.size[0], ob.size[1]))
        return ob.radius

    def sense(self, point, t: float, sensing_range: float) -> list[ObstacleSnapshot]:
        """Perfect detections of every active obstacle within range."""
        point = np.asarray(point, dtype=float)
        out = []
        for i in range(len(self.obstacles)):
            if not self.active(i, t):
                continue
            d = self.surface_distance(i, point, t)
            if d <= sensing_range:
                ob = self.obstacles[i]
                boxy = ob.kind in ("static_box", "moving_vehicle")
                out.append(
                    ObstacleSnapshot(
                        kind=ob.kind,
                        index=i,
                        position=self.position(i, t),
                        velocity=self.velocity(i, t),
                        accel=self.accel(i),
                        effective_radius=self.effective_radius(i),
                        distance=d,
                        half_extents=np.asarray(ob.size) / 2.0 if boxy else None,
                    )
                )
        return out


# ---------------------------------------------------------------------------
# scenario generation


def _corridor_exists(start, goal, boxes, clearance=2.0) -> bool:
    """Some straight lateral offset of the start-goal line stays clear."""
    start, goal = np.asarray(start), np.asarray(goal)
    d = goal - start
    perp = np.array([-d[1], d[0], 0.0])
    n = np.linalg.norm(perp)
    if n < 1e-9:
        return False
    perp /= n
    ts = np.linspace(0.0, 1.0, 60)[:, None]
    for off in np.linspace(-6.0, 6.0, 13):
        line = start + ts * d + off * perp
        if planner_mod._static_clearance(line, boxes).min() >= clearance:
            return True
    return False


def _fall_time(z0: float, z_target: float) -> float:
    return float(np.sqrt(2.0 * max(z0 - z_target, 0.0) / GRAVITY))


def generate_scenario(
    complexity: str = "low_dynamic",
    seed: int = 0,
    area: tuple = (300.0, 300.0),
    dt: float = 0.1,
) -> ScenarioConfig:
    """Randomized patrol layout, deterministic in the seed.

    low_dynamic: three buildings (one astride the corridor), one oncoming
    vehicle sweeping the corridor, one crossing vehicle and one falling
    object both timed for a conservative traverse.  high_dynamic adds a
    fourth building, moves the conservative pair late in the corridor, adds
    a second crossing vehicle and falling object timed for a fast traverse,
    and two aircraft weaving along the corridor below cruise speed.  Layouts
    are rejection-sampled so that some straight lateral offset of the
    corridor keeps >= 2 m of static clearance and the endpoints stay clear.
    """
    if complexity not in ("low_dynamic", "high_dynamic"):
        raise InvalidScenarioError(f"unknown complexity {complexity!r}")
    rng = np.random.default_rng(seed)
    alt = 2.5

    for _ in range(60):
        start_xy = rng.uniform(80.0, 220.0, size=2)
        heading = rng.uniform(0.0, 2.0 * np.pi)
        length = rng.uniform(32.0, 42.0)
        d = np.array([np.cos(heading), np.sin(heading), 0.0])
        start = np.array([start_xy[0], start_xy[1], alt])
        goal = start + d * length
        if not (15.0 <= goal[0] <= area[0] - 15.0 and 15.0 <= goal[1] <= area[1] - 15.0):
            continue
        perp = np.array([-d[1], d[0], 0.0])

        def on_corridor(u, lateral, z=0.0):
            return start + d * (u * length) + perp * lateral + np.array([0.0, 0.0, z - alt])

        obstacles = []

        # buildings: one astride the corridor forces a detour, flanks pinch it
        n_flank = 2 if complexity == "low_dynamic" else 3
        mid_u = 0.45 + rng.uniform(-0.05, 0.05)
        sx, sy = rng.uniform(3.5, 6.0, size=2)
        sz = rng.uniform(6.0, 9.0)
        c = on_corridor(mid_u, rng.uniform(-0.5, 0.5), z=sz / 2.0)
        obstacles.append(ObstacleSpec("static_box", center=tuple(c), size=(sx, sy, sz)))
        flank_us = (0.2, 0.7, 0.55)
        for j in range(n_flank):
            u = flank_us[j] + rng.uniform(-0.05, 0.05)
            side = rng.choice((-1.0, 1.0))
            off = side * rng.uniform(4.5, 6.5)
            sx, sy = rng.uniform(2.0, 3.5, size=2)
            sz = rng.uniform(6.0, 9.0)
            c = on_corridor(u, off, z=sz / 2.0)
            obstacles.append(ObstacleSpec("static_box", center=tuple(c), size=(sx, sy, sz)))

        boxes = [
            (np.asarray(o.center) - np.asarray(o.size) / 2.0, np.asarray(o.center) + np.asarray(o.size) / 2.0)
            for o in obstacles
        ]
        if planner_mod._static_clearance(np.array([start, goal]), boxes).min() < 2.0:
            continue
        if not _corridor_exists(start, goal, boxes):
            continue

        # oncoming traffic: starts past the goal driving back down the
        # corridor, so it meets every speed class somewhere mid-flight
        ho_speed = rng.uniform(5.0, 6.5)
        ho_start = on_corridor(1.0, rng.uniform(-0.8, 0.8), z=1.6) + d * rng.uniform(5.0, 9.0)
        obstacles.append(
            ObstacleSpec(
                "moving_vehicle",
                center=tuple(ho_start),
                size=(3.5, 3.5, 3.2),
                velocity=tuple(-d * ho_speed),
            )
        )

        def crossing_for(speed_class: float, u: float) -> ObstacleSpec:
            # timed to reach the corridor when a flight at this speed does
            arrival = 1.2 + u * length / speed_class
            v_speed = rng.uniform(5.0, 7.0)
            side = rng.choice((-1.0, 1.0))
            point = on_corridor(u, 0.0, z=1.6)
            vel = -side * perp * v_speed
            pos0 = point - vel * arrival
            return ObstacleSpec(
                "moving_vehicle", center=tuple(pos0), size=(3.5, 3.5, 3.2), velocity=tuple(vel)
            )

        def falling_for(speed_class: float, u_range, late) -> ObstacleSpec:
            # biased late: flights lag their plan clock under brownout
            u = rng.uniform(*u_range)
            z0 = 14.0
            arrival = 1.2 + u * length / speed_class
            spawn = max(arrival - _fall_time(z0, alt) + rng.uniform(*late), 0.1)
            c = on_corridor(u, rng.uniform(-0.5, 0.5), z=z0)
            return ObstacleSpec("falling_object", center=tuple(c), radius=0.3, spawn_time=spawn)

        if complexity == "high_dynamic":
            # the slow-class pair sits late in the corridor: the slow
            # flight still meets it, a delayed fast flight stays ahead
            obstacles.append(crossing_for(3.0, rng.uniform(0.75, 0.85)))
            obstacles.append(falling_for(3.0, (0.58, 0.72), (0.3, 1.2)))
        else:
            obstacles.append(crossing_for(3.0, rng.uniform(0.55, 0.68)))
            obstacles.append(falling_for(3.0, (0.72, 0.85), (0.3, 1.2)))

        if complexity == "high_dynamic":
            obstacles.append(crossing_for(8.0, rng.uniform(0.55, 0.68)))
            obstacles.append(falling_for(8.0, (0.34, 0.46), (0.2, 1.0)))

            # weaving aircraft drift up the corridor slower than either
            # speed class cruises: overtaking problems for the fast
            # flight, out of reach for the slow one
            for u_base in (0.22, 0.74):
                u0 = u_base + rng.uniform(-0.03, 0.03)
                amp = rng.uniform(3.0, 4.0)
                speed = rng.uniform(3.5, 4.5)
                step = rng.uniform(8.0, 10.0)
                side0 = rng.choice((-1.0, 1.0))
                leg_t = float(np.hypot(step, 2.0 * amp) / speed)
                wps = tuple(
                    (
                        k * leg_t,
                        *on_corridor(u0 + k * step / length, side0 * amp * (-1.0) ** k, z=alt - 0.2),
                    )
                    for k in range(6)
                )
                obstacles.append(ObstacleSpec("other_uav", radius=0.3, waypoints=wps, loop=False))

        candidate = ScenarioConfig(
            complexity=complexity,
            seed=seed,
            area=tuple(area),
            start=tuple(start),
            goal=tuple(goal),
            obstacles=tuple(obstacles),
            dt=dt,
        )
        world = World(candidate)
        margins = [world.min_distance(p, 0.0, sentinel=np.inf)[0] for p in (start, goal)]
        if min(margins) < 1.0:
            continue
        return candidate
    raise InvalidScenarioError(f"no feasible layout found for seed {seed}")


def spawn_scenario(config: ScenarioConfig) -> World:
    """Instantiate a world exactly as configured (empty obstacles = free space)."""
    world = World(config)
    t0 = 0.0
    for point, name in ((config.start, "start"), (config.goal, "goal")):
        d, _ = world.min_distance(np.asarray(point, dtype=float), t0, sentinel=np.inf)
        if d <= 0.0:
            raise InvalidScenarioError(f"{name} lies inside an obstacle")
    return world


# ---------------------------------------------------------------------------
# mission execution


@dataclass(frozen=True)
class UAVState:
    position: np.ndarray
    velocity: np.ndarray
    mass: float = 0.9
    payload: float = 0.0
    accel_limit: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.payload <= 0.6:
            raise ValueError("payload out of [0, 0.6] kg")
        if self.accel_limit <= 0:
            raise ValueError("accel_limit must be > 0")


@dataclass(frozen=True)
class MissionSettings:
    """Physics and control knobs shared by every mission."""

    baseline: BaselineParams = BaselineParams()
    demand: DemandParams = DEMAND_PRESETS["scaled"]
    sensing_range: float = 30.0
    collision_radius: float = 0.25
    goal_tolerance: float = 1.0
    timeout_s: float = 300.0
    lookahead_s: float = 0.6
    k_pos: float = 4.0
    k_vel: float = 4.0
    accel_limit: float = 10.0
    conflict_horizon_s: float = 3.0
    evade_accel: float = 6.0
    demand_window_s: float = 1.0
    initial_soc: tuple = (1.0, 1.0, 0.0)  # fuel cell, battery, ultracap


@dataclass
class SimulationTrace:
    """Everything recorded during one mission."""

    mode: str
    complexity: str
    seed: int
    sample_interval: float
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    demand: np.ndarray
    p_fc_batt: np.ndarray
    p_uc: np.ndarray
    p_charge: np.ndarray
    soc: np.ndarray  # (n, 3) fc, batt, uc
    brownout: np.ndarray
    min_dist: np.ndarray
    events: list = field(default_factory=list)
    outcome: str = "timeout"
    duration_s: float = 0.0
    precharge_s: float = 0.0
    predicted_mean_w: float | None = None

    @property
    def supplied(self) -> np.ndarray:
        return self.p_fc_batt + self.p_uc

    @property
    def realized_mean_w(self) -> float:
        return float(np.mean(self.demand)) if len(self.demand) else 0.0

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "complexity": self.complexity,
            "seed": self.seed,
            "outcome": self.outcome,
            "duration_s": self.duration_s,
            "precharge_s": self.precharge_s,
            "total_s": self.duration_s + self.precharge_s,
            "predicted_mean_w": self.predicted_mean_w,
            "realized_mean_w": self.realized_mean_w,
            "max_supplied_w": float(np.max(self.supplied)) if len(self.times) else 0.0,
            "min_distance_m": float(np.min(self.min_dist)) if len(self.times) else None,
            "brownout_steps": int(np.sum(self.brownout)),
            "events": [[float(t), tag, detail] for t, tag, detail in self.events],
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["t", "x", "y", "z", "vx", "vy", "vz", "p_load", "p_fc_batt", "p_uc",
                 "p_charge", "soc_fc", "soc_batt", "soc_uc", "brownout", "min_dist"]
            )
            for i in range(len(self.times)):
                row = [self.times[i], *self.positions[i], *self.velocities[i], self.demand[i],
                       self.p_fc_batt[i], self.p_uc[i], self.p_charge[i], *self.soc[i]]
                writer.writerow([repr(float(v)) for v in row] + [int(self.brownout[i]), repr(float(self.min_dist[i]))])

    def to_plant_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(PLANT_TRACE_HEADER)
            for i in range(len(self.times)):
                row = [self.times[i], self.demand[i], self.p_fc_batt[i], self.p_uc[i],
                       self.p_charge[i], *self.soc[i]]
                writer.writerow([repr(float(v)) for v in row] + [int(self.brownout[i])])


def _window_curvature(window: deque, dt: float) -> float:
    if len(window) < 3:
        return 0.0
    pos = np.asarray(window)
    return float(np.mean(planner_mod._menger(pos, dt)))


def run_mission(
    config: ScenarioConfig,
    mode: str,
    predictor: Predictor | None = None,
    specs: PlantSpecs = DEFAULT_SPECS,
    settings: MissionSettings = MissionSettings(),
) -> SimulationTrace:
    """Fly one mission and record the full trace.

    normal: conservative plan (lambda 0), no demand prediction, no precharge.
    agility_enhanced: plan at the surge-backed aggressiveness, predict the
    mission-mean demand from the plan features, precharge the ultracap to the
    predicted surge energy, and replan reactively at whatever aggressiveness
    the remaining surge supports.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    world = spawn_scenario(config)
    dt = config.dt
    start = np.asarray(config.start, dtype=float)
    goal = np.asarray(config.goal, dtype=float)

    state = PlantState(specs, *settings.initial_soc)
    lam0 = planner_mod.aggressiveness(state, mode, prepared=True)
    params = PlanParams.from_aggressiveness(mode, lam0, settings.evade_accel)
    reference = planner_mod.plan_initial(world, start, goal, params)

    precharge_s = 0.0
    predicted_mean = None
    profile = demand_profile(reference, settings.baseline, settings.demand)
    if mode == "agility_enhanced":
        predicted_profile = profile
        if predictor is not None:
            predicted_mean = predictor.predict_scalar(plan_features(reference))
            predicted_profile = profile.scaled_to_mean(predicted_mean)
        state, precharge_s = plant_mod.precharge(state, predicted_profile)

    ref_feats = features(reference)
    pos = start.copy()
    vel = np.zeros(3)
    window: deque = deque(maxlen=int(round(settings.demand_window_s / dt)) + 1)
    window.append(pos.copy())
    n_steps = int(round(settings.timeout_s / dt))

    claims: dict[int, float] = {}
    cooldowns: dict[int, float] = {}
    events: list = []
    seen_spawns: set[int] = set()
    brownout_started = False
    scale = 1.0
    ref_idx = 0
    rows = {k: [] for k in ("t", "pos", "vel", "demand", "fc", "uc", "chg", "soc", "bo", "dmin")}
    outcome = "timeout"
    t_next = 0.0

    for k in range(n_steps):
        t = k * dt
        world.time = t

        for i, ob in enumerate(world.obstacles):
            if ob.kind == "falling_object" and i not in seen_spawns and t >= ob.spawn_time:
                seen_spawns.add(i)
                events.append((t, "spawn", f"falling_object_{i}"))

        # reactive avoidance: amend around the most imminent unclaimed
        # conflict; a near-collision prediction overrides an existing claim
        snaps = world.sense(pos, t, settings.sensing_range)
        conflicts = []
        for snap in snaps:
            if snap.kind == "static_box":
                continue  # statics are the global planner's job
            pc = planner_mod.predict_conflict(
                pos,
                vel,
                snap,
                settings.conflict_horizon_s,
                params.target_clearance,
                dt,
                reference=reference,
                now=t,
            )
            if pc is None:
                continue
            if claims.get(snap.index, -np.inf) > t:
                # a claimed obstacle is re-amended only when the committed
                # maneuver has had time to act and still predicts a near miss
                if t < cooldowns.get(snap.index, -np.inf) or pc.miss_distance >= 0.3 * params.target_clearance:
                    continue
            conflicts.append((pc.time_to_closest, snap.index, snap, pc))
        if conflicts:
            conflicts.sort(key=lambda c: (c[0], c[1]))
            _, _, snap, pc_old = conflicts[0]
            lam = planner_mod.aggressiveness(state, mode)
            live = PlanParams.from_aggressiveness(mode, lam, settings.evade_accel)
            amended = planner_mod.replan_avoid(
                pos, vel, snap, live, reference, ref_idx, t, static_boxes=world.static_boxes()
            )
            if amended is not None and claims.get(snap.index, -np.inf) > t:
                # evicting a committed maneuver: only adopt a plan that
                # actually predicts more room than the one already flying
                pc_new = planner_mod.predict_conflict(
                    pos,
                    vel,
                    snap,
                    settings.conflict_horizon_s,
                    params.target_clearance,
                    dt,
                    reference=amended.trajectory,
                    now=t,
                )
                if pc_new is not None and pc_new.miss_distance <= pc_old.miss_distance + 0.1:
                    amended = None
                    cooldowns[snap.index] = t + 0.8
            if amended is not None:
                reference = amended.trajectory
                ref_idx = 0
                ref_feats = features(reference)
                claims[snap.index] = t + amended.rejoin_s
                cooldowns[snap.index] = t + 0.8
                events.append((t, "avoidance-start", f"{amended.kind}:{snap.kind}_{snap.index}"))

        # follower: track the reference clock; the velocity feedforward looks
        # ahead but the position target does not, or the vehicle would ride
        # ahead of every deliberate slowdown.  Lagging under brownout is
        # physical, the plan timing is the target.
        n_ref = len(reference.positions)
        ref_idx = min(int(np.searchsorted(reference.times, t, side="right")), n_ref - 1)
        ti = min(int(np.searchsorted(reference.times, t + settings.lookahead_s, side="right")), n_ref - 1)
        target = reference.positions[ref_idx]
        if 0 < ti < n_ref - 1:
            span = reference.times[ti + 1] - reference.times[ti - 1]
            v_ref = (reference.positions[ti + 1] - reference.positions[ti - 1]) / max(span, 1e-9)
        else:
            v_ref = np.zeros(3)
        a_cmd = settings.k_pos * (target - pos) + settings.k_vel * (v_ref - vel)
        # the power gate scales whatever is commanded, so command through the
        # inverse of the last step's gate: tracking stays tight under
        # brownout and the authority ceiling still binds at the clamp
        a_cmd = a_cmd / max(scale, 0.05)
        a_norm = np.linalg.norm(a_cmd)
        if a_norm > settings.accel_limit:
            a_cmd *= settings.accel_limit / a_norm

        # demand from the executed motion, then allocate and gate the motion
        speed = float(np.linalg.norm(vel))
        kappa_w = _window_curvature(window, dt)
        demand = float(
            baseline_power(speed, settings.baseline)
            + settings.demand.k_curv * kappa_w
            + settings.demand.k_dist_curv * ref_feats.length_d * ref_feats.mean_abs_curvature
        )
        decision = plant_mod.allocate(demand, state)
        state = plant_mod.step(state, decision, dt)
        if decision.brownout and not brownout_started:
            brownout_started = True
            events.append((t, "brownout", f"shortfall_{demand - decision.p_supplied:.1f}w"))
        scale = decision.p_supplied / demand if (decision.brownout and demand > 0) else 1.0

        vel = vel + a_cmd * scale * dt
        pos = pos + vel * dt
        for ax, limit in ((0, config.area[0]), (1, config.area[1])):
            if pos[ax] < 0.0 or pos[ax] > limit:
                pos[ax] = np.clip(pos[ax], 0.0, limit)
                vel[ax] = 0.0
        if pos[2] < 0.2:
            pos[2] = 0.2
            vel[2] = max(vel[2], 0.0)
        window.append(pos.copy())

        t_next = t + dt
        dmin, _ = world.min_distance(pos, t_next, sentinel=settings.sensing_range)

        rows["t"].append(t_next)
        rows["pos"].append(pos.copy())
        rows["vel"].append(vel.copy())
        rows["demand"].append(demand)
        rows["fc"].append(decision.p_fc_batt)
        rows["uc"].append(decision.p_uc)
        rows["chg"].append(decision.p_charge)
        rows["soc"].append((state.soc_fc, state.soc_batt, state.soc_uc))
        rows["bo"].append(decision.brownout)
        rows["dmin"].append(dmin)

        if dmin <= settings.collision_radius:
            outcome = "collision"
            events.append((t_next, "collision", "obstacle"))
            break
        if np.linalg.norm(pos - goal) <= settings.goal_tolerance:
            outcome = "success"
            break
        total_energy = state.energy_fc + state.energy_batt + state.energy_uc
        if total_energy <= 1e-6 and demand > 1e-9:
            outcome = "power_exhausted"
            events.append((t_next, "power_exhausted", ""))
            break

    return SimulationTrace(
        mode=mode,
        complexity=config.complexity,
        seed=config.seed,
        sample_interval=dt,
        times=np.array(rows["t"]),
        positions=np.array(rows["pos"]),
        velocities=np.array(rows["vel"]),
        demand=np.array(rows["demand"]),
        p_fc_batt=np.array(rows["fc"]),
        p_uc=np.array(rows["uc"]),
        p_charge=np.array(rows["chg"]),
        soc=np.array(rows["soc"]),
        brownout=np.array(rows["bo"], dtype=bool),
        min_dist=np.array(rows["dmin"]),
        events=events,
        outcome=outcome,
        duration_s=t_next,
        precharge_s=precharge_s,
        predicted_mean_w=predicted_mean,
    )
