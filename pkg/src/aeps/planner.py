"""Power-aware flight planning.

Global plans come from a coarse grid search over the static world inflated by
the clearance target, straightened by shortcut smoothing, corner-rounded, and
time-parameterized at the cruise speed.  How wide and how fast is set by a
single aggressiveness number in [0, 1] derived from the surge power the
ultracapacitor can currently add: lambda 0 is the conservative profile
(1 m clearance, 3 m/s), lambda 1 the agile one (3 m clearance, 8 m/s).

Reactive amendments handle sensed moving obstacles: vehicles and other
aircraft get a lateral arc with a speed boost, falling objects get a
straight-line escape whose acceleration scales with lambda.  Amendments
always rejoin the global plan and are re-clamped to the flight envelope.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, replace

import numpy as np

from .plant import PlantState, available_surge
from .trajectory import Trajectory, curvature_series, arc_length

__all__ = [
    "Envelope",
    "DEFAULT_ENVELOPE",
    "PlanParams",
    "PlanningInfeasibleError",
    "ObstacleSnapshot",
    "ConflictPrediction",
    "AmendedPlan",
    "aggressiveness",
    "plan_initial",
    "predict_conflict",
    "replan_avoid",
    "enforce_envelope",
    "write_plan_csv",
]

log = logging.getLogger(__name__)

GRID_RES = 1.0  # meters
_SQRT3 = np.sqrt(3.0)


class PlanningInfeasibleError(RuntimeError):
    """No collision-free grid path exists even at minimum clearance."""


@dataclass(frozen=True)
class Envelope:
    """Hard flight limits every plan must satisfy."""

    clearance_min: float = 1.0
    clearance_max: float = 3.0
    curvature_cap: float = 1.0  # 1/m
    speed_min: float = 3.0
    speed_max: float = 8.0
    distance_min: float = 30.0
    distance_max: float = 45.0


DEFAULT_ENVELOPE = Envelope()


@dataclass(frozen=True)
class PlanParams:
    """Planner knobs for one mode/aggressiveness setting."""

    mode: str = "normal"
    aggressiveness: float = 0.0
    target_clearance: float = 1.0
    cruise_speed: float = 3.0
    evade_accel: float = 6.0
    lateral_accel: float = 2.2  # m/s^2 turn budget the power split can back
    corner_cut: float = 4.0

    def __post_init__(self):
        if self.mode not in ("normal", "agility_enhanced"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 <= self.aggressiveness <= 1.0:
            raise ValueError("aggressiveness must be in [0, 1]")
        if self.evade_accel <= 0 or self.lateral_accel <= 0:
            raise ValueError("accelerations must be > 0")

    def curvature_limit(self, envelope: Envelope = DEFAULT_ENVELOPE) -> float:
        """Tightest turn flyable at the envelope's floor speed on this budget."""
        return min(envelope.curvature_cap, self.lateral_accel / envelope.speed_min**2)

    @classmethod
    def from_aggressiveness(
        cls, mode: str, lam: float, evade_accel: float = 6.0, envelope: Envelope = DEFAULT_ENVELOPE
    ) -> "PlanParams":
        """Map aggressiveness onto clearance, speed, and turn authority.

        Normal mode pins lambda to 0 regardless of the plant state.  The
        lateral budget scales with lambda because surge power is what keeps
        acceleration commands from being browned out mid-turn.
        """
        lam = 0.0 if mode == "normal" else float(np.clip(lam, 0.0, 1.0))
        clearance = envelope.clearance_min + (envelope.clearance_max - envelope.clearance_min) * lam
        cruise = envelope.speed_min + (envelope.speed_max - envelope.speed_min) * lam
        return cls(
            mode,
            lam,
            clearance,
            cruise,
            evade_accel,
            lateral_accel=2.2 + 2.3 * lam,
            corner_cut=4.0 - 2.5 * lam,
        )


def aggressiveness(state: PlantState, mode: str = "agility_enhanced", prepared: bool = False) -> float:
    """Surge-gated aggressiveness in [0, 1].

    lambda = available surge power over the ultracap rating.  ``prepared``
    evaluates the plant as the pre-mission charge step would leave it (full
    ultracap), which is what the initial plan of an enhanced mission should
    assume; in-flight replanning uses the actual state.  Normal mode is
    always 0.
    """
    if mode == "normal":
        return 0.0
    ref = state.specs.ultracap.max_output
    if ref <= 0:
        return 0.0
    if prepared and state.specs.ultracap.energy_capacity > 0:
        state = replace(state, soc_uc=1.0)
    return min(1.0, available_surge(state) / ref)


# ---------------------------------------------------------------------------
# static-world geometry helpers


def _box_distance(points: np.ndarray, bmin: np.ndarray, bmax: np.ndarray) -> np.ndarray:
    """Euclidean distance from points (n,3) to an axis-aligned box (0 inside)."""
    d = np.maximum(np.maximum(bmin - points, 0.0), points - bmax)
    return np.linalg.norm(d, axis=-1)


def _static_clearance(points: np.ndarray, boxes) -> np.ndarray:
    points = np.atleast_2d(points)
    if not boxes:
        return np.full(len(points), np.inf)
    return np.min(
        np.stack([_box_distance(points, bmin, bmax) for bmin, bmax in boxes]), axis=0
    )


def _segment_clear(a, b, boxes, clearance, step=0.1) -> bool:
    n = max(2, int(np.ceil(np.linalg.norm(b - a) / step)) + 1)
    pts = a + np.linspace(0.0, 1.0, n)[:, None] * (b - a)
    return bool(np.all(_static_clearance(pts, boxes) >= clearance - 1e-9))


_NEIGHBORS = np.array(
    [(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1) if (i, j, k) != (0, 0, 0)]
)
_NEIGHBOR_COST = np.linalg.norm(_NEIGHBORS, axis=1) * GRID_RES


def _grid_search(start, goal, boxes, clearance, area):
    """A* over a bounded 1 m lattice around the start-goal segment."""
    margin = 15.0
    lo = np.minimum(start, goal) - margin
    hi = np.maximum(start, goal) + margin
    lo[0], lo[1] = max(lo[0], 0.0), max(lo[1], 0.0)
    hi[0], hi[1] = min(hi[0], area[0]), min(hi[1], area[1])
    top = max([bmax[2] for _, bmax in boxes], default=0.0)
    lo[2] = 0.5
    hi[2] = min(max(start[2], goal[2], top + clearance + 1.5), 20.0)

    shape = np.maximum(np.ceil((hi - lo) / GRID_RES).astype(int) + 1, 2)
    idx = np.indices(shape).reshape(3, -1).T
    centers = lo + idx * GRID_RES
    blocked = (_static_clearance(centers, boxes) < clearance).reshape(shape)

    def to_cell(p):
        return tuple(np.clip(np.round((p - lo) / GRID_RES).astype(int), 0, np.array(shape) - 1))

    def nearest_free(cell):
        if not blocked[cell]:
            return cell
        best, best_d = None, np.inf
        for di in range(-3, 4):
            for dj in range(-3, 4):
                for dk in range(-3, 4):
                    c = (cell[0] + di, cell[1] + dj, cell[2] + dk)
                    if all(0 <= c[a] < shape[a] for a in range(3)) and not blocked[c]:
                        d = di * di + dj * dj + dk * dk
                        if d < best_d:
                            best, best_d = c, d
        return best

    start_c = nearest_free(to_cell(start))
    goal_c = nearest_free(to_cell(goal))
    if start_c is None or goal_c is None:
        return None

    goal_arr = np.array(goal_c)
    open_heap = [(0.0, 0, start_c)]
    g_score = {start_c: 0.0}
    came = {}
    tie = 0
    while open_heap:
        _, _, cur = heapq.heappop(open_heap)
        if cur == goal_c:
            path = [cur]
            while path[-1] in came:
                path.append(came[path[-1]])
            cells = np.array(path[::-1], dtype=float)
            return lo + cells * GRID_RES
        g_cur = g_score[cur]
        for off, cost in zip(_NEIGHBORS, _NEIGHBOR_COST):
            nxt = (cur[0] + off[0], cur[1] + off[1], cur[2] + off[2])
            if not all(0 <= nxt[a] < shape[a] for a in range(3)) or blocked[nxt]:
                continue
            g_new = g_cur + cost
            if g_new < g_score.get(nxt, np.inf) - 1e-12:
                g_score[nxt] = g_new
                came[nxt] = cur
                h = np.linalg.norm((np.array(nxt) - goal_arr)) * GRID_RES
                tie += 1
                heapq.heappush(open_heap, (g_new + h, tie, nxt))
    return None


def _shortcut(points: np.ndarray, boxes, clearance) -> np.ndarray:
    """Greedy farthest-visible straightening of a waypoint chain."""
    keep = [0]
    i = 0
    while i < len(points) - 1:
        j = len(points) - 1
        while j > i + 1 and not _segment_clear(points[i], points[j], boxes, clearance):
            j -= 1
        keep.append(j)
        i = j
    return points[keep]


def _round_corners(points: np.ndarray, boxes, clearance, cut: float = 1.5) -> np.ndarray:
    """Replace interior corners with validated fillet chords."""
    if len(points) < 3:
        return points
    out = [points[0]]
    for k in range(1, len(points) - 1):
        prev, cur, nxt = out[-1], points[k], points[k + 1]
        la, lb = np.linalg.norm(cur - prev), np.linalg.norm(nxt - cur)
        if la < 1e-9 or lb < 1e-9:
            continue
        trial = cut
        rounded = None
        while trial >= 0.3:
            ca = min(0.25 * la, trial)
            cb = min(0.25 * lb, trial)
            a = cur - (cur - prev) / la * ca
            b = cur + (nxt - cur) / lb * cb
            if _segment_clear(a, b, boxes, clearance * 0.95):
                rounded = (a, b)
                break
            trial *= 0.5
        if rounded is None:
            out.append(cur)
        else:
            out.extend(rounded)
    out.append(points[-1])
    return np.array(out)


def _polyline_curvature(points: np.ndarray) -> np.ndarray:
    """Per-vertex Menger curvature of a (possibly uneven) polyline."""
    n = len(points)
    out = np.zeros(n)
    if n < 3:
        return out
    u = points[1:-1] - points[:-2]
    v = points[2:] - points[1:-1]
    w = points[2:] - points[:-2]
    denom = (
        np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1) * np.linalg.norm(w, axis=1)
    )
    cross = np.linalg.norm(np.cross(u, v), axis=1)
    k = np.zeros(n - 2)
    np.divide(2.0 * cross, denom, out=k, where=denom > 1e-12)
    out[1:-1] = k
    out[0], out[-1] = k[0], k[-1]
    return out


_ALONG_ACCEL = 1.5  # m/s^2 budget for speeding up / slowing down along track


def _speed_profile(
    points: np.ndarray, params: PlanParams, envelope: Envelope, target=None
) -> np.ndarray:
    """Per-vertex speed: the target (cruise by default), slowed where the
    curvature needs more lateral acceleration than the power budget backs,
    never below the envelope floor, with along-track accel smoothed."""
    kappa = _polyline_curvature(points)
    floor = min(envelope.speed_min, params.cruise_speed)
    want = np.full(len(points), params.cruise_speed) if target is None else np.asarray(target, dtype=float)
    v = np.minimum(want, np.sqrt(params.lateral_accel / np.maximum(kappa, 1e-9)))
    v = np.maximum(v, np.minimum(floor, want))  # never raise a deliberate slow patch
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    for i in range(1, len(v)):
        v[i] = min(v[i], np.sqrt(v[i - 1] ** 2 + 2.0 * _ALONG_ACCEL * seg[i - 1]))
    for i in range(len(v) - 2, -1, -1):
        v[i] = min(v[i], np.sqrt(v[i + 1] ** 2 + 2.0 * _ALONG_ACCEL * seg[i]))
    return v


def _time_parameterize(
    points: np.ndarray, params: PlanParams, dt: float, t0: float = 0.0,
    envelope: Envelope = DEFAULT_ENVELOPE,
) -> Trajectory:
    """Sample a polyline onto a uniform dt grid at the flyable speed profile."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    keep = np.concatenate([[True], seg > 1e-12])
    points = points[keep]
    v = _speed_profile(points, params, envelope)
    seg_speed = 0.5 * (v[:-1] + v[1:])
    return _retime_with_profile(points, seg_speed, dt, t0)


def plan_initial(world, start, goal, params: PlanParams, envelope: Envelope = DEFAULT_ENVELOPE) -> Trajectory:
    """Global plan around the static obstacles at this clearance and speed.

    Falls back to the envelope's minimum clearance when the requested one has
    no path, and raises PlanningInfeasibleError when even that fails.
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    boxes = world.static_boxes()
    area = world.config.area
    dt = world.config.dt

    pts = None
    for clearance in dict.fromkeys((params.target_clearance, envelope.clearance_min)):
        pts = _grid_search(start, goal, boxes, clearance, area)
        if pts is not None:
            if clearance != params.target_clearance:
                log.info("plan fell back to minimum clearance %.1f m", clearance)
            break
    if pts is None:
        raise PlanningInfeasibleError("no grid path between start and goal")

    pts[0], pts[-1] = start, goal
    pts = _shortcut(pts, boxes, min(clearance, params.target_clearance))
    pts = _round_corners(pts, boxes, clearance, cut=params.corner_cut)
    traj = _time_parameterize(pts, params, dt, envelope=envelope)
    traj = enforce_envelope(traj, envelope, curvature_cap=params.curvature_limit(envelope))

    length = arc_length(traj.positions)
    if not envelope.distance_min <= length <= envelope.distance_max:
        log.info("plan length %.1f m outside [%.0f, %.0f] m", length, envelope.distance_min, envelope.distance_max)
    return traj


# ---------------------------------------------------------------------------
# conflict prediction and reactive amendments


@dataclass(frozen=True)
class ObstacleSnapshot:
    """What sensing reports about one obstacle: state now plus motion model."""

    kind: str
    index: int
    position: np.ndarray
    velocity: np.ndarray
    accel: np.ndarray  # ballistic term for falling objects, else zeros
    effective_radius: float
    distance: float
    half_extents: np.ndarray | None = None  # box kinds only


@dataclass(frozen=True)
class ConflictPrediction:
    time_to_closest: float
    miss_distance: float  # surface separation


@dataclass(frozen=True)
class AmendedPlan:
    trajectory: Trajectory
    amended_mask: np.ndarray
    rejoin_s: float
    kind: str
    hover: bool = False


def predict_conflict(
    pos,
    vel,
    snap: ObstacleSnapshot,
    horizon: float = 3.0,
    clearance: float = 1.0,
    dt: float = 0.1,
    reference: Trajectory | None = None,
    now: float = 0.0,
) -> ConflictPrediction | None:
    """Closest approach over the horizon against the obstacle's ballistic track.

    With a committed plan the vehicle is assumed to keep following it on the
    plan's own clock, shifted by the present tracking error (lag is carried
    forward, not assumed to heal); without one it coasts at constant
    velocity.  Returns a prediction only when the closest approach comes
    nearer than the clearance target.
    """
    taus = np.arange(0.0, horizon + dt / 2, dt)
    p0 = np.asarray(pos, dtype=float)
    if reference is None:
        uav = p0 + taus[:, None] * np.asarray(vel, dtype=float)
    else:
        planned = np.column_stack(
            [np.interp(now + taus, reference.times, reference.positions[:, k]) for k in range(3)]
        )
        err = p0 - planned[0]
        k = int(np.clip(np.searchsorted(reference.times, now), 0, len(reference.times) - 2))
        span = min(k + 5, len(reference.times) - 1)
        trk = reference.positions[span] - reference.positions[k]
        n = np.linalg.norm(trk)
        ahead = float(np.dot(err, trk) / n) if n > 1e-9 else 0.0
        if ahead > 0.0:
            # running ahead of a deliberately slow reference heals: the
            # follower waits for its clock.  Lag and side error persist.
            trk = trk / n
            uav = planned + (err - ahead * trk) + np.outer(ahead * np.exp(-taus / 0.8), trk)
        else:
            uav = planned + err
    obst = snap.position + taus[:, None] * snap.velocity + 0.5 * taus[:, None] ** 2 * snap.accel
    rel = uav - obst
    if snap.half_extents is not None:
        dist = np.linalg.norm(np.maximum(np.abs(rel) - snap.half_extents, 0.0), axis=1)
    else:
        dist = np.linalg.norm(rel, axis=1) - snap.effective_radius
    i = int(np.argmin(dist))
    if taus[i] < 0.15 and dist[-1] > dist[i]:
        return None  # already separating
    if dist[i] < clearance:
        return ConflictPrediction(float(taus[i]), float(dist[i]))
    return None


def _horizontal_unit(v) -> np.ndarray:
    h = np.array([v[0], v[1], 0.0])
    n = np.linalg.norm(h)
    return h / n if n > 1e-9 else np.zeros(3)


def _remaining(reference: Trajectory, ref_index: int, pos=None) -> np.ndarray:
    """Reference tail from ref_index, re-anchored past the vehicle.

    When the vehicle has overshot its (possibly slowed) schedule, samples
    behind it would fold the amended path backward; the nearest upcoming
    sample wins instead.
    """
    pts = reference.positions[min(ref_index, len(reference.positions) - 1) :]
    if pos is not None and len(pts) > 2:
        k = min(len(pts), 40)
        j = int(np.argmin(np.linalg.norm(pts[:k] - np.asarray(pos, dtype=float), axis=1)))
        pts = pts[j:] if len(pts) - j > 2 else pts[-3:]
    return pts


def _exempt_slow(traj: Trajectory, envelope: Envelope) -> np.ndarray:
    """Mask of samples deliberately scheduled below the envelope floor."""
    v = np.linalg.norm(np.diff(traj.positions, axis=0), axis=1) / np.maximum(
        np.diff(traj.times), 1e-9
    )
    v = np.concatenate([[v[0]], v])
    return v < envelope.speed_min - 1e-6


def _incoming_speeds(rest: np.ndarray, reference: Trajectory, envelope: Envelope) -> np.ndarray:
    """Per-segment speeds the current reference already carries.

    Amendments keep this schedule outside their own window so that one
    obstacle's fix does not erase another's (a hold-back for a crosser must
    survive a later arc around a vehicle).
    """
    dt = max(reference.sample_interval, 1e-9)
    v = np.linalg.norm(np.diff(rest, axis=0), axis=1) / dt
    return np.clip(v, 0.05, envelope.speed_max)


def _retime_with_profile(points, speeds_per_seg, dt, t0, a_limit=None, v0=None):
    """Cumulative times from per-segment speeds, resampled onto dt.

    With a_limit the profile is reshaped so no speed change between
    segments exceeds that acceleration: a reference that steps down faster
    than the vehicle can brake just parks tracking error in front of the
    hazard it was meant to avoid.  v0 anchors the first segment to the
    vehicle's current speed.
    """
    speeds_per_seg = np.asarray(speeds_per_seg, dtype=float).copy()
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    if a_limit is not None and len(seg):
        ds = np.maximum(seg, 1e-6)
        v2 = np.maximum(speeds_per_seg, 0.02) ** 2
        if v0 is not None:
            # cannot shed speed instantly: the entry speed decays at the
            # braking limit no matter what the profile asks for
            lead = max(float(v0), 0.0) ** 2
            for i in range(len(v2)):
                if lead <= 0.0:
                    break
                v2[i] = max(v2[i], lead)
                lead -= 2.0 * a_limit * ds[i]
        for i in range(len(v2) - 2, -1, -1):  # brake early for slow zones
            v2[i] = min(v2[i], v2[i + 1] + 2.0 * a_limit * ds[i])
        start = max(float(v0), 0.2) ** 2 if v0 is not None else v2[0]
        prev = min(v2[0], start + 2.0 * a_limit * ds[0])
        v2[0] = prev
        for i in range(1, len(v2)):  # and never promise instant speed-up
            prev = min(v2[i], prev + 2.0 * a_limit * ds[i])
            v2[i] = prev
        speeds_per_seg = np.sqrt(v2)
    ok = seg > 1e-12
    seg_t = np.where(ok, seg / np.maximum(speeds_per_seg, 0.02), dt)
    t = np.concatenate([[0.0], np.cumsum(seg_t)])
    duration = t[-1]
    n_seg = max(2, int(round(duration / dt)))
    times = np.linspace(0.0, duration, n_seg + 1)
    cols = [np.interp(times, t, points[:, k]) for k in range(3)]
    return Trajectory(times + t0, np.column_stack(cols), sample_interval=duration / n_seg)


def _timing_gate(pos, vel, snap, params, reference, ref_index, envelope, now):
    """Retime the path through a crosser's lane instead of bending it.

    Sprint clear of the lane before the crosser arrives when the surge
    budget allows, otherwise hold back and cross behind its tail.  The
    geometry is untouched; only the schedule moves, so the amendment fits
    any corridor width.
    """
    lam = params.aggressiveness
    rest = _remaining(reference, ref_index, pos).copy()
    if len(rest) < 4:
        return None
    rest[0] = pos
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(rest, axis=0), axis=1))])

    w_hat = _horizontal_unit(snap.velocity)
    if snap.half_extents is not None:
        # the box stays axis aligned while it travels: its sideways reach
        # off the lane line is the support along the lane normal, which for
        # a diagonal crosser is well past either nominal half width
        hx, hy = float(snap.half_extents[0]), float(snap.half_extents[1])
        half_w = hx * abs(float(w_hat[1])) + hy * abs(float(w_hat[0]))
    else:
        half_w = snap.effective_radius
    pad = half_w + 0.6 * params.target_clearance + 0.3

    # path samples inside the crosser's swept lane
    rel = rest - snap.position
    rel[:, 2] = 0.0
    d_lane = np.linalg.norm(rel - np.outer(rel @ w_hat, w_hat), axis=1)
    in_lane = d_lane <= pad
    if not in_lane.any():
        return None
    i_in = int(np.argmax(in_lane))
    i_out = len(in_lane) - 1 - int(np.argmax(in_lane[::-1]))
    s_in = s[i_in]
    s_out = s[min(i_out + 1, len(s) - 1)]

    # when the crosser occupies the lane-band stretch of the path
    taus = np.arange(0.0, 10.0 + 1e-9, 0.1)
    cpos = snap.position[:2] + taus[:, None] * snap.velocity[:2]
    seg = rest[i_in : i_out + 2, :2]
    d = np.min(np.linalg.norm(cpos[:, None, :] - seg[None, :, :], axis=2), axis=1)
    occupied = d <= pad + 0.2
    if not occupied.any():
        return None
    T_in = now + float(taus[int(np.argmax(occupied))])
    T_out = now + float(taus[len(occupied) - 1 - int(np.argmax(occupied[::-1]))])

    speed_now = float(np.linalg.norm(vel))
    # only promise speed and braking the follower can actually deliver
    a_prof = 2.0 + 1.6 * lam
    v_fast = min(params.cruise_speed * (1.0 + 0.25 * lam), envelope.speed_max, speed_now + 2.5)
    margin = 0.8
    speeds = _incoming_speeds(rest, reference, envelope)
    sprint_eta = now + s_out / max(v_fast, 0.1)
    stop_d = speed_now**2 / (2.0 * a_prof)
    # the pad band has cushion; the box's own swept band does not.  A hold
    # may stand inside the pad but must come to rest clear of the box.
    past_box = d_lane <= half_w + 0.35
    s_hard = float(s[int(np.argmax(past_box))]) if past_box.any() else float(s[-1])
    if now >= T_out - 0.2:
        return None  # tail is already clearing the lane
    if lam > 0.5 and sprint_eta <= T_in - margin:
        # fast enough to clear the lane before the crosser reaches it
        speeds[: max(i_out + 1, 1)] = v_fast
        kind = "sprint_through"
        clear_t = sprint_eta
    elif stop_d + 0.3 > s_hard - 0.4:
        # braking from here ends inside the box's own band: bolting forward
        # is the only move left
        speeds[: max(i_out + 1, 1)] = v_fast
        kind = "sprint_through"
        clear_t = sprint_eta
    else:
        # stop short of the box band and dwell until the tail clears it;
        # the hold point respects the achievable braking distance so the
        # plan never promises a stop the vehicle cannot fly
        t_entry = max(T_out + margin, now + s_in / max(v_fast, 0.1))
        hold_pt = max(s_in - 1.2, stop_d + 0.3, 0.3)
        hold_pt = min(hold_pt, max(s_hard - 0.4, 0.3))
        i_hold = int(np.searchsorted(s, hold_pt))
        # glide so the hold point arrives as the lane is about to open: a
        # hot approach into a timed stop leaves the margin to tracking luck
        v_app = float(np.clip(hold_pt / max(t_entry - 0.6 - now, 0.5), 0.6, v_fast))
        if speed_now > v_app:
            # arrival follows the braking ramp the profile will carry, not
            # the requested glide speed alone
            d_brake = (speed_now**2 - v_app**2) / (2.0 * a_prof)
            if d_brake >= hold_pt:
                v_end = np.sqrt(max(speed_now**2 - 2.0 * a_prof * hold_pt, 0.0))
                t_arrive = now + (speed_now - v_end) / a_prof
            else:
                t_arrive = now + (speed_now - v_app) / a_prof + (hold_pt - d_brake) / v_app
        else:
            t_arrive = now + hold_pt / max(v_app, 0.1)
        # the dwell rolls toward the lane but stops short of its edge: the
        # follower rides ahead of a braking reference under brownout, and
        # that drift must not cross into the swept band before it opens
        dwell_end = max(s_in - 0.5, hold_pt + 1e-3)
        dwell_v = float(
            np.clip((dwell_end - hold_pt) / max(t_entry - t_arrive, 0.4), 0.05, params.cruise_speed)
        )
        i_dwell = int(np.searchsorted(s, dwell_end))
        speeds[:i_hold] = np.minimum(speeds[:i_hold], v_app)
        speeds[i_hold : max(i_dwell, i_hold + 1)] = dwell_v
        kind = "hold_back"
        clear_t = t_entry + (s_out - s_in) / max(params.cruise_speed, 0.5)
    traj = _retime_with_profile(
        rest, speeds, reference.sample_interval, now, a_limit=a_prof, v0=speed_now
    )
    traj = enforce_envelope(traj, envelope, exempt_floor=_exempt_slow(traj, envelope))
    # the claim must outlive the encounter, or post-pass re-detections
    # trigger pointless amendments
    rejoin_s = min(max(clear_t, T_out) - now + 1.0, 15.0)
    rejoin_s = max(rejoin_s, 2.0)
    mask = traj.times - now <= rejoin_s
    return AmendedPlan(traj, mask, float(rejoin_s), kind)


def _lateral_arc(pos, vel, snap, params, reference, ref_index, envelope, now, static_boxes=()):
    """Sideways bump past a moving obstacle: ramp out, hold while passing,
    ramp back.  Ramp length follows from the lateral acceleration budget at
    the arc speed; when the remaining corridor cannot fit the full geometry
    the arc slows down rather than cutting the clearance.  Of the two bump
    sides, the one that keeps more room to the buildings wins."""
    lam = params.aggressiveness

    rest = _remaining(reference, ref_index, pos).copy()
    if len(rest) < 4:
        return None
    rest[0] = pos  # amendments start where the vehicle actually is

    ahead = rest[min(3, len(rest) - 1)] - rest[0]
    track_uav = _horizontal_unit(ahead)

    # side choice: duck behind a crosser (shift against its cross-track
    # motion); for co-linear movers shift away from their track line
    to_uav = np.asarray(pos, dtype=float) - snap.position
    w_perp = snap.velocity - np.dot(snap.velocity, track_uav) * track_uav
    track = _horizontal_unit(snap.velocity)
    if np.linalg.norm(_horizontal_unit(w_perp)) > 1e-6 and np.linalg.norm(w_perp) > 1.0:
        side = -_horizontal_unit(w_perp)
    else:
        lateral = to_uav - np.dot(to_uav, track) * track if np.linalg.norm(track) > 0.5 else to_uav
        side = _horizontal_unit(lateral)
    if np.linalg.norm(side) < 1e-6:
        heading = _horizontal_unit(vel)
        side = np.array([-heading[1], heading[0], 0.0])
        if np.linalg.norm(side) < 1e-6:
            side = np.array([0.0, 1.0, 0.0])

    pred = predict_conflict(
        pos, vel, snap, clearance=params.target_clearance + 1.0, reference=reference, now=now
    )
    miss = pred.miss_distance if pred else params.target_clearance
    # offset past the obstacle's lateral footprint, or the amendment can
    # never release its own conflict
    if snap.half_extents is not None:
        half_w = float(max(snap.half_extents[0], snap.half_extents[1]))
    else:
        half_w = snap.effective_radius
    h = float(np.clip(params.target_clearance + half_w - miss + 0.5, 1.0, 8.0))

    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(rest, axis=0), axis=1))])
    avail = max(s[-1] - 4.0, 6.0)
    floor = min(envelope.speed_min, params.cruise_speed)

    def ramp_len(v):
        return max(np.pi * v * np.sqrt(h / (2.0 * params.lateral_accel)), 3.0)

    along = float(np.dot(snap.velocity, track_uav))
    v_arc = min(params.cruise_speed * (1.0 + 0.25 * lam), envelope.speed_max)
    hold = 2.0
    for _ in range(2):
        rel = max(abs(v_arc - along), 1.5)
        hold = v_arc * (2.0 * half_w + 4.0) / rel
        total = 2.0 * ramp_len(v_arc) + hold
        if total <= avail:
            break
        v_arc = max(v_arc * avail / total, floor)
    ramp = ramp_len(v_arc)
    total = min(2.0 * ramp + max(hold, 2.0), avail)
    if total < 2.0 * ramp:
        ramp = total / 2.0

    # slide the plateau over the predicted encounter instead of pinning the
    # bump to the vehicle's nose
    if pred is not None:
        enc = int(np.searchsorted(reference.times, now + pred.time_to_closest))
        enc = min(max(enc - ref_index, 0), len(rest) - 1)
        s_enc = s[enc]
    else:
        s_enc = ramp + 0.5 * hold
    start = float(np.clip(s_enc - 0.5 * total, 0.0, max(avail - total, 0.0)))

    w = np.zeros(len(rest))
    sl = s - start
    rise = (sl >= 0.0) & (sl < ramp)
    mid = (sl >= ramp) & (sl <= total - ramp)
    fall = (sl > total - ramp) & (sl < total)
    w[rise] = np.sin(0.5 * np.pi * sl[rise] / max(ramp, 1e-9)) ** 2
    w[mid] = 1.0
    w[fall] = np.sin(0.5 * np.pi * (total - sl[fall]) / max(ramp, 1e-9)) ** 2

    shifted = rest + w[:, None] * h * side
    if len(static_boxes):
        # prefer the obstacle-relative side, but not into a building
        active = w > 1e-6
        if active.any():
            margin = _static_clearance(shifted[active], static_boxes).min()
            if margin < 0.8 * params.target_clearance:
                other = rest - w[:, None] * h * side
                other_margin = _static_clearance(other[active], static_boxes).min()
                if other_margin > margin:
                    shifted = other

    seg_in = _incoming_speeds(rest, reference, envelope)
    pt_in = np.empty(len(rest))
    pt_in[0], pt_in[-1] = seg_in[0], seg_in[-1]
    pt_in[1:-1] = 0.5 * (seg_in[:-1] + seg_in[1:])
    v_target = np.where((sl >= 0.0) & (sl < total), np.minimum(v_arc, pt_in), pt_in)
    v = _speed_profile(shifted, params, envelope, target=v_target)
    speeds = 0.5 * (v[:-1] + v[1:])
    traj = _retime_with_profile(
        shifted,
        speeds,
        reference.sample_interval,
        now,
        a_limit=2.0 + 1.6 * lam,
        v0=float(np.linalg.norm(vel)),
    )
    traj = enforce_envelope(traj, envelope, exempt_floor=_exempt_slow(traj, envelope))
    rejoin_s = min((start + total) / max(min(v_arc, params.cruise_speed), 0.5) + 1.0, 15.0)
    mask = traj.times - now <= rejoin_s
    return AmendedPlan(traj, mask, float(rejoin_s), "lateral_arc")


def _escape_line(pos, vel, snap, params, reference, ref_index, envelope, now):
    lam = params.aggressiveness
    accel = params.evade_accel * (0.5 + 0.5 * lam)
    dt = reference.sample_interval

    offset = _horizontal_unit(snap.position - np.asarray(pos, dtype=float))
    if np.linalg.norm(offset) > 1e-6:
        escape = -offset
    else:
        # directly underneath: any horizontal direction works; pick a
        # deterministic one perpendicular to the current heading
        heading = _horizontal_unit(vel)
        if np.linalg.norm(heading) < 1e-6:
            if params.aggressiveness == 0.0:
                return _hover_hold(pos, reference, ref_index, envelope, now)
            escape = np.array([1.0, 0.0, 0.0])
        else:
            escape = np.array([-heading[1], heading[0], 0.0])

    # kinematic escape segment, speed capped at the envelope maximum
    t_esc = 2.0
    n_esc = int(round(t_esc / dt))
    p = np.asarray(pos, dtype=float).copy()
    v = np.asarray(vel, dtype=float).copy()
    esc_pts = [p.copy()]
    for _ in range(n_esc):
        v = v + accel * escape * dt
        speed = np.linalg.norm(v)
        if speed > envelope.speed_max:
            v *= envelope.speed_max / speed
        p = p + v * dt
        esc_pts.append(p.copy())
    esc_pts = np.array(esc_pts)

    rest = _remaining(reference, ref_index)
    rejoin_idx = min(int(round((t_esc + 4.0) / dt)), len(rest) - 1)
    tail = rest[rejoin_idx:]
    if len(tail) < 2:
        tail = rest[-2:]
    points = np.vstack([esc_pts, tail])
    n_seg = len(points) - 1
    speeds = np.full(n_seg, params.cruise_speed)
    esc_speed = np.linalg.norm(np.diff(esc_pts, axis=0), axis=1) / dt
    speeds[: len(esc_speed)] = np.maximum(esc_speed, 0.1)
    if len(tail) > 1:
        # keep whatever schedule the tail already carried (another
        # amendment may have slowed it on purpose)
        inc = _incoming_speeds(rest, reference, envelope)
        speeds[-(len(tail) - 1):] = inc[-(len(tail) - 1):]
    traj = _retime_with_profile(points, speeds, dt, now)

    exempt = (traj.times - now <= t_esc + dt) | _exempt_slow(traj, envelope)
    traj = enforce_envelope(traj, envelope, exempt_floor=exempt)
    rejoin_s = min(t_esc + 4.0 + np.linalg.norm(esc_pts[-1] - tail[0]) / max(params.cruise_speed, 0.5), 15.0)
    mask = traj.times - now <= rejoin_s
    return AmendedPlan(traj, mask, float(rejoin_s), "escape_line")


def _hover_hold(pos, reference, ref_index, envelope, now):
    """Emergency stop: hold position, then resume the remaining plan."""
    log.warning("no feasible escape at lambda=0: stop-and-hover amendment")
    dt = reference.sample_interval
    hold_s = 3.0
    n_hold = int(round(hold_s / dt))
    hold = np.tile(np.asarray(pos, dtype=float), (n_hold, 1))
    rest = _remaining(reference, ref_index)
    points = np.vstack([hold, rest])
    times = now + np.arange(len(points)) * dt
    traj = Trajectory(times, points, sample_interval=dt)
    mask = traj.times - now <= hold_s
    return AmendedPlan(traj, mask, hold_s, "hover_hold", hover=True)


def replan_avoid(
    uav_pos,
    uav_vel,
    snap: ObstacleSnapshot,
    params: PlanParams,
    reference: Trajectory,
    ref_index: int,
    now: float,
    envelope: Envelope = DEFAULT_ENVELOPE,
    static_boxes=(),
) -> AmendedPlan | None:
    """Amend the reference around one conflicting obstacle.

    Falling objects get a straight-line escape at lambda-scaled acceleration.
    Crossing traffic gets a retimed schedule through its lane; head-on and
    co-linear movers get a lateral arc with a lambda-scaled speed and turn
    budget.  Amendments span at most 15 s and then follow the original plan
    to the goal.
    """
    if snap.kind == "falling_object":
        return _escape_line(uav_pos, uav_vel, snap, params, reference, ref_index, envelope, now)

    candidates = []
    rest = _remaining(reference, ref_index)
    if len(rest) >= 4:
        track = _horizontal_unit(rest[min(3, len(rest) - 1)] - rest[0])
        along = float(np.dot(snap.velocity, track))
        w_perp = snap.velocity - along * track
        if np.linalg.norm(w_perp) > 1.0 and np.linalg.norm(w_perp) > abs(along):
            gate = _timing_gate(uav_pos, uav_vel, snap, params, reference, ref_index, envelope, now)
            if gate is not None:
                candidates.append(gate)
    arc = _lateral_arc(
        uav_pos, uav_vel, snap, params, reference, ref_index, envelope, now, static_boxes
    )
    if arc is not None:
        candidates.append(arc)
    if not candidates:
        return None
    if len(candidates) == 1:
        return candidates[0]

    def predicted_miss(plan: AmendedPlan) -> float:
        pc = predict_conflict(
            uav_pos,
            uav_vel,
            snap,
            clearance=params.target_clearance,
            reference=plan.trajectory,
            now=now,
        )
        return pc.miss_distance if pc is not None else np.inf

    # both a schedule fix and a geometry fix exist: fly the roomier one
    return max(candidates, key=predicted_miss)


# ---------------------------------------------------------------------------
# envelope enforcement


def _menger(pos: np.ndarray, dt: float) -> np.ndarray:
    u = pos[1:-1] - pos[:-2]
    v = pos[2:] - pos[1:-1]
    w = pos[2:] - pos[:-2]
    nu = np.linalg.norm(u, axis=1)
    nv = np.linalg.norm(v, axis=1)
    nw = np.linalg.norm(w, axis=1)
    cross = np.linalg.norm(np.cross(u, v), axis=1)
    denom = nu * nv * nw
    ok = (nw / (2.0 * dt) >= 1e-6) & (denom > 0.0)
    k = np.zeros(len(u))
    np.divide(2.0 * cross, denom, out=k, where=ok)
    return k


def enforce_envelope(
    trajectory: Trajectory,
    envelope: Envelope = DEFAULT_ENVELOPE,
    exempt_floor: np.ndarray | None = None,
    curvature_cap: float | None = None,
) -> Trajectory:
    """Clamp a plan into the envelope; identity when already compliant.

    Curvature violations are relaxed by local Laplacian smoothing; speeds are
    clamped by re-timing (geometry preserved).  The speed floor applies only
    to moving samples (hover is legal) and to samples not marked exempt --
    escape segments keep their kinematic timing.  A caller may tighten the
    curvature cap below the envelope's (never loosen it).
    """
    dt = trajectory.sample_interval
    if dt is None:
        raise ValueError("enforce_envelope needs a uniform trajectory")
    cap = envelope.curvature_cap if curvature_cap is None else min(curvature_cap, envelope.curvature_cap)
    if len(trajectory.positions) < 3:
        return trajectory

    moving_floor = 0.5  # m/s; slower segments count as hover, floor not applied

    def speed_violations(pos, exempt_seg):
        v = np.linalg.norm(np.diff(pos, axis=0), axis=1) / dt
        high = v > envelope.speed_max + 1e-9
        low = (v < envelope.speed_min - 1e-9) & (v > moving_floor) & ~exempt_seg
        return v, high, low

    pos = trajectory.positions
    times = trajectory.times
    exempt = (
        np.zeros(len(pos), dtype=bool) if exempt_floor is None else np.asarray(exempt_floor, dtype=bool)
    )
    if len(exempt) != len(pos):
        exempt = np.zeros(len(pos), dtype=bool)

    kappa0 = _menger(pos, dt)
    exempt_seg0 = exempt[:-1] | exempt[1:]
    _, high0, low0 = speed_violations(pos, exempt_seg0)
    if np.all(kappa0 <= cap + 1e-9) and not high0.any() and not low0.any():
        return trajectory

    pos = pos.copy()
    for _ in range(8):
        # curvature: relax violating neighbourhoods toward their chords
        for _ in range(400):
            k = _menger(pos, dt)
            viol = k > cap + 1e-12
            if not viol.any():
                break
            mask = viol.copy()
            mask[:-1] |= viol[1:]
            mask[1:] |= viol[:-1]
            idx = np.where(mask)[0] + 1
            pos[idx] += 0.3 * (pos[idx - 1] + pos[idx + 1] - 2.0 * pos[idx])

        exempt_seg = exempt[:-1] | exempt[1:]
        v, high, low = speed_violations(pos, exempt_seg)
        if not high.any() and not low.any():
            break

        target = v.copy()
        target[high] = envelope.speed_max
        target[low] = envelope.speed_min
        seg = np.linalg.norm(np.diff(pos, axis=0), axis=1)
        seg_t = np.where(seg > 1e-12, seg / np.maximum(target, 1e-9), dt)
        t_cum = np.concatenate([[0.0], np.cumsum(seg_t)])
        duration = t_cum[-1]
        n_seg = max(2, int(round(duration / dt)))
        new_times = np.linspace(0.0, duration, n_seg + 1)
        cols = [np.interp(new_times, t_cum, pos[:, c]) for c in range(3)]
        # carry the exemption mask through the re-timing
        exempt = np.interp(new_times, t_cum, exempt.astype(float)) > 0.5
        pos = np.column_stack(cols)
        times = new_times + trajectory.times[0]
        dt = duration / n_seg

    k = _menger(pos, dt)
    if np.any(k > cap + 1e-6):
        log.warning("envelope: %d curvature samples above cap after smoothing", int(np.sum(k > cap + 1e-6)))
    return Trajectory(times, pos, sample_interval=dt)


def write_plan_csv(path, trajectory: Trajectory, amended_mask: np.ndarray | None = None) -> None:
    """Trajectory CSV with the amended flag column."""
    import csv as _csv

    mask = (
        np.zeros(len(trajectory.times), dtype=bool)
        if amended_mask is None
        else np.asarray(amended_mask, dtype=bool)
    )
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["t", "x", "y", "z", "amended"])
        for t, p, a in zip(trajectory.times, trajectory.positions, mask):
            writer.writerow([repr(float(t))] + [repr(float(c)) for c in p] + [int(a)])
