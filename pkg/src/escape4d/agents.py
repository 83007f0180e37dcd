"""Scripted baseline policies and the external-process agent bridge.

A policy exposes ``reset(scene, seed)`` and ``act(obs, world) -> ActionRequest | str``.
Only :class:`OracleAgent` reads ``world``; every other policy works from the
observation alone, which is all an external agent ever receives.
"""

from __future__ import annotations

import heapq
import math
import queue
import socket
import subprocess
import threading
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .core import AGENT_RADIUS, LockKind, Pose, SceneSpec, Vec2, Wall, digit_strings, wrap180
from .engine import (
    GRAB_RANGE,
    TRIGGER_RANGE,
    ActionRequest,
    AgentTimeout,
    Interactions,
    Observation,
    TrajectoryLog,
    WorldState,
)
from .protocol import encode_episode_end, encode_observation, mask_audio, write_message

# ---------------------------------------------------------------------------
# simple baselines


class NoopAgent:
    name = "noop"

    def reset(self, scene: SceneSpec, seed: int) -> None:
        pass

    def act(self, obs: Observation, world: WorldState | None = None) -> ActionRequest:
        return engine.NOOP


def random_policy(obs: Observation, rng: np.random.Generator, grab_prob: float = 0.3) -> ActionRequest:
    """Uniform turn in [-90, 90], forward move in [0, 3]; grab w.p. ``grab_prob`` when something is centered."""
    rotate = float(rng.uniform(-90.0, 90.0))
    forward = float(rng.uniform(0.0, 3.0))
    u = float(rng.random())
    grab = obs.center_object is not None and u < grab_prob
    return ActionRequest(move_forward=forward, rotate_right=rotate, grab=grab)


class RandomAgent:
    name = "random"

    def __init__(self, grab_prob: float = 0.3):
        self.grab_prob = grab_prob
        self.rng = np.random.default_rng(0)

    def reset(self, scene: SceneSpec, seed: int) -> None:
        self.rng = np.random.default_rng([int(seed), 0xA11])

    def act(self, obs: Observation, world: WorldState | None = None) -> ActionRequest:
        return random_policy(obs, self.rng, self.grab_prob)


# ---------------------------------------------------------------------------
# loudness hill-climber


@dataclass
class GreedyState:
    rng: np.random.Generator
    phase: int = 0
    loud_before: float = 0.0
    d_first: float = 0.0
    turn_sign: float = 1.0
    codes: list[str] = field(default_factory=list)
    triggered: set[str] = field(default_factory=set)


_SOUND_LABELS = {"recorder", "radio"}


def greedy_audio_policy(obs: Observation, state: GreedyState, step: float = 1.5,
                        probe_period: int = 2) -> ActionRequest:
    """Climb the ambient loudness field toward its source.

    The gradient is re-estimated every ``probe_period`` (two) steps from finite
    differences: one move along the current heading, one move after a
    quarter turn. The next move then follows the estimated uphill direction
    and doubles as the first probe of the following cycle. With no audible
    ambient source the policy is a seeded random walk. A visible door is
    approached directly and grabbed within range with the last heard code;
    nearby sound emitters are triggered once.
    """
    for t in obs.transcripts:
        state.codes.extend(digit_strings(t))

    for v in obs.visible:
        if v.kind.lower() in _SOUND_LABELS and v.id not in state.triggered and v.distance <= TRIGGER_RANGE - 0.2:
            state.triggered.add(v.id)
            state.phase = 0
            return ActionRequest(look_at=v.image_coords, trigger=True)
    doors = [v for v in obs.visible if v.kind.lower() == "door"]
    if doors:
        v = min(doors, key=lambda d: d.distance)
        state.phase = 0
        if v.distance <= GRAB_RANGE - 0.1:
            inter = Interactions(input=state.codes[-1]) if state.codes else None
            return ActionRequest(look_at=v.image_coords, grab=True, interactions=inter)
        return ActionRequest(look_at=v.image_coords, move_forward=min(10.0, v.distance - 1.2))

    loud = obs.loudness
    if loud <= 0.0:
        state.phase = 0
        return ActionRequest(rotate_right=float(state.rng.uniform(-90.0, 90.0)),
                             move_forward=float(state.rng.uniform(0.0, 3.0)))

    if state.phase == 0 or probe_period < 2:
        state.phase, state.loud_before = 1, loud
        return ActionRequest(move_forward=step)
    delta = loud - state.loud_before
    state.loud_before = loud
    if state.phase == 1:
        state.d_first = delta
        state.phase = 2
        state.turn_sign = 1.0 if state.rng.random() < 0.5 else -1.0
        return ActionRequest(rotate_right=90.0 * state.turn_sign, move_forward=step)
    # first probe lies a quarter turn against turn_sign from the current heading
    right = -state.turn_sign * state.d_first
    if abs(right) + abs(delta) < 1e-9:
        angle = float(state.rng.uniform(-180.0, 180.0))
    else:
        angle = math.degrees(math.atan2(right, delta))
    state.phase = 1
    return ActionRequest(rotate_right=angle, move_forward=step)


class GreedyAudioAgent:
    name = "greedy_audio"

    def __init__(self, step: float = 1.5, probe_period: int = 2):
        self.step = step
        self.probe_period = probe_period
        self.state = GreedyState(np.random.default_rng(0))

    def reset(self, scene: SceneSpec, seed: int) -> None:
        self.state = GreedyState(np.random.default_rng([int(seed), 0x6EED]))

    def act(self, obs: Observation, world: WorldState | None = None) -> ActionRequest:
        return greedy_audio_policy(obs, self.state, self.step, self.probe_period)


# ---------------------------------------------------------------------------
# oracle planner


class PlanningError(RuntimeError):
    pass


GRID_STEP = 0.25
_CLEARANCE = AGENT_RADIUS + 0.05


def _point_seg_dist(px, py, ax, ay, bx, by) -> float:
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    t = 0.0 if L2 == 0 else max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / L2))
    return math.hypot(px - ax - t * dx, py - ay - t * dy)


def segment_wall_distance(a: Vec2, b: Vec2, w: Wall) -> float:
    if engine._segments_intersect(a, b, w):
        return 0.0
    return min(
        _point_seg_dist(a.x, a.y, w.x0, w.y0, w.x1, w.y1),
        _point_seg_dist(b.x, b.y, w.x0, w.y0, w.x1, w.y1),
        _point_seg_dist(w.x0, w.y0, a.x, a.y, b.x, b.y),
        _point_seg_dist(w.x1, w.y1, a.x, a.y, b.x, b.y),
    )


class GridPlanner:
    """8-connected Dijkstra/A* over a 0.25 m lattice inside the walkable area."""

    def __init__(self, scene: SceneSpec, step: float = GRID_STEP, clearance: float = _CLEARANCE):
        self.scene = scene
        self.step = step
        self.clearance = clearance
        g = scene.geometry
        self.nx = int(math.floor(g.width / step)) + 1
        self.ny = int(math.floor(g.depth / step)) + 1
        self.free = np.zeros((self.nx, self.ny), dtype=bool)
        for i in range(self.nx):
            for j in range(self.ny):
                self.free[i, j] = self._point_free(self.point((i, j)))

    def point(self, node: tuple[int, int]) -> Vec2:
        return Vec2(node[0] * self.step, node[1] * self.step)

    def _point_free(self, p: Vec2) -> bool:
        g = self.scene.geometry
        c = self.clearance
        if not (c <= p.x <= g.width - c and c <= p.y <= g.depth - c):
            return False
        return all(segment_wall_distance(p, p, w) >= c for w in g.walls)

    def segment_clear(self, a: Vec2, b: Vec2, clearance: float | None = None) -> bool:
        c = self.clearance if clearance is None else clearance
        return all(segment_wall_distance(a, b, w) >= c for w in self.scene.geometry.walls)

    def plan(self, start: Vec2, is_goal, heuristic=None) -> list[Vec2]:
        """Cheapest node path from ``start`` to any node where ``is_goal(point)`` holds."""
        heuristic = heuristic or (lambda p: 0.0)
        dist: dict = {}
        prev: dict = {}
        heap: list = []
        si, sj = int(round(start.x / self.step)), int(round(start.y / self.step))
        for di in range(-3, 4):
            for dj in range(-3, 4):
                n = (si + di, sj + dj)
                if 0 <= n[0] < self.nx and 0 <= n[1] < self.ny and self.free[n]:
                    p = self.point(n)
                    if self.segment_clear(start, p, AGENT_RADIUS):
                        d = start.distance_to(p)
                        if d < dist.get(n, math.inf):
                            dist[n] = d
                            prev[n] = None
                            heapq.heappush(heap, (d + heuristic(p), d, n))
        done = set()
        while heap:
            _, d, n = heapq.heappop(heap)
            if n in done:
                continue
            done.add(n)
            p = self.point(n)
            if is_goal(p):
                path = [p]
                while prev[n] is not None:
                    n = prev[n]
                    path.append(self.point(n))
                return path[::-1]
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    if di == dj == 0:
                        continue
                    m = (n[0] + di, n[1] + dj)
                    if not (0 <= m[0] < self.nx and 0 <= m[1] < self.ny) or not self.free[m] or m in done:
                        continue
                    q = self.point(m)
                    if self.scene.geometry.walls and not self.segment_clear(p, q):
                        continue
                    nd = d + self.step * (math.sqrt(2.0) if di and dj else 1.0)
                    if nd < dist.get(m, math.inf):
                        dist[m] = nd
                        prev[m] = n
                        heapq.heappush(heap, (nd + heuristic(q), nd, m))
        raise PlanningError("no reachable goal")


@dataclass
class _Goal:
    target: str
    mode: str  # "grab" | "trigger" | "look" | "misguide"
    interactions: Interactions | None = None


def _face(pose: Pose, target: Vec2) -> tuple[float, float]:
    _, dyaw, _ = engine.view_offsets(pose, target)
    return dyaw, -pose.pitch


class OracleAgent:
    """Executes the prop chain in order along collision-free shortest paths.

    ``detour_distractor`` makes the oracle trigger the distractor first;
    combined with ``fall_for_distractor`` it then submits the distractor's
    digits on the next step. Both exist to produce logs with known
    misguidance outcomes.
    """

    name = "oracle"

    def __init__(self, detour_distractor: bool = False, fall_for_distractor: bool = False):
        self.detour_distractor = detour_distractor
        self.fall_for_distractor = fall_for_distractor
        self.goals: list[_Goal] = []
        self.scene: SceneSpec | None = None
        self.planner: GridPlanner | None = None

    def reset(self, scene: SceneSpec, seed: int) -> None:
        self.scene = scene
        self.planner = GridPlanner(scene)
        self.goals = self._plan_goals(scene)

    def _plan_goals(self, scene: SceneSpec) -> list[_Goal]:
        fam = scene.family
        door = scene.door
        goals: list[_Goal] = []
        if self.detour_distractor and fam.misleading:
            goals.append(_Goal("distractor", "trigger"))
            if self.fall_for_distractor:
                goals.append(_Goal("distractor", "misguide",
                                   Interactions(input=scene.misleading_digits[0])))
        for hop in scene.prop_chain.hops:
            gate = scene.by_id[hop.gate]
            if gate.trigger_audio is not None:
                goals.append(_Goal(gate.id, "trigger"))
                if scene.transient_clue is not None and scene.transient_clue.trigger_id == gate.id:
                    goals.append(_Goal(scene.transient_clue.display_id, "look"))
            elif gate.interactable:
                goals.append(_Goal(gate.id, "grab", self._unlock_payload(scene, gate)))
        goals.append(_Goal(door.id, "grab", self._unlock_payload(scene, door)))
        return goals

    @staticmethod
    def _unlock_payload(scene: SceneSpec, obj) -> Interactions | None:
        lk = obj.lock
        if lk.kind is LockKind.NEEDS_KEY:
            return Interactions(use_item_id=lk.item)
        if lk.kind is LockKind.NEEDS_PASSWORD:
            return Interactions(input=lk.password)
        return None

    def _done(self, goal: _Goal, world: WorldState) -> bool:
        st = world.object_states.get(goal.target)
        if goal.mode == "trigger":
            return st.triggered
        if goal.mode == "look":
            return world.t_found is not None or world.clue_window.status == "Expired"
        if goal.mode == "misguide":
            return False
        return st.opened

    def _interaction_ok(self, world: WorldState, pose: Pose, goal: _Goal) -> bool:
        target = self.scene.by_id[goal.target]
        probe = world.clone()
        probe.pose = pose
        visible = engine._visible_with_offsets(probe)
        if goal.mode == "look":
            return any(o.id == target.id for o, *_ in visible)
        center = engine._center(visible)
        if center is None or center[0].id != target.id:
            return False
        limit = GRAB_RANGE if goal.mode == "grab" else TRIGGER_RANGE
        return center[1] <= limit - 0.05

    def _action(self, goal: _Goal, **kw) -> ActionRequest:
        if goal.mode == "grab":
            return ActionRequest(grab=True, interactions=goal.interactions, rationale=f"open the {goal.target}", **kw)
        if goal.mode == "trigger":
            return ActionRequest(trigger=True, rationale=f"play the {goal.target}", **kw)
        return ActionRequest(rationale=f"look at the {goal.target}", **kw)

    def act(self, obs: Observation, world: WorldState) -> ActionRequest:
        while self.goals and self._done(self.goals[0], world):
            self.goals.pop(0)
        if not self.goals:
            return engine.NOOP
        goal = self.goals[0]
        if goal.mode == "misguide":
            self.goals.pop(0)
            return ActionRequest(interactions=goal.interactions, rationale="try the numbers from the radio")
        scene = self.scene
        target = scene.by_id[goal.target].position
        pose = world.pose
        reach = {"grab": GRAB_RANGE, "trigger": TRIGGER_RANGE, "look": scene.geometry.diagonal}[goal.mode]

        # straight approach: face the target, walk up to a standoff point, interact
        dyaw, dpitch = _face(pose, target)
        dist = pose.position.distance_to(target)
        standoff = min(dist, reach - 0.8) if goal.mode != "look" else dist
        for move in (max(0.0, dist - standoff), 0.0):
            trial = ActionRequest(rotate_right=dyaw, rotate_down=dpitch, move_forward=min(move, 10.0))
            after = engine._apply_view(pose, trial)
            after = engine._apply_move(scene, after, trial.move_forward)
            if self._interaction_ok(world, after, goal):
                return self._action(goal, rotate_right=dyaw, rotate_down=dpitch,
                                    move_forward=trial.move_forward)

        def is_goal(p: Vec2) -> bool:
            if goal.mode != "look" and p.distance_to(target) > reach - 0.1:
                return False
            facing = Pose(p, 0.0, 0.0)
            dy, _ = _face(facing, target)
            return self._interaction_ok(world, Pose(p, dy, 0.0).normalized(), goal)

        path = self.planner.plan(pose.position, is_goal,
                                 heuristic=lambda p: max(0.0, p.distance_to(target) - reach))
        waypoint = path[-1]
        for p in reversed(path):
            if self.planner.segment_clear(pose.position, p, AGENT_RADIUS + 0.01):
                waypoint = p
                break
        d = pose.position.distance_to(waypoint)
        if d < 1e-9:
            raise PlanningError(f"stuck before {goal.target}")
        dyaw, dpitch = _face(pose, waypoint)
        return ActionRequest(rotate_right=dyaw, rotate_down=dpitch, move_forward=min(d, 10.0),
                             rationale=f"walk toward the {goal.target}")


class EpsilonAgent:
    """Wraps a policy; with probability ``epsilon`` a random action replaces its choice."""

    def __init__(self, base, epsilon: float = 0.2, grab_prob: float = 0.5, trigger_prob: float = 0.3):
        self.base = base
        self.epsilon = epsilon
        self.grab_prob = grab_prob
        self.trigger_prob = trigger_prob
        self.name = f"epsilon({getattr(base, 'name', 'policy')},{epsilon})"
        self.rng = np.random.default_rng(0)

    def reset(self, scene: SceneSpec, seed: int) -> None:
        self.base.reset(scene, seed)
        self.rng = np.random.default_rng([int(seed), 0xE95])

    def act(self, obs: Observation, world: WorldState) -> ActionRequest:
        if self.rng.random() < self.epsilon:
            return ActionRequest(
                rotate_right=float(self.rng.uniform(-60, 60)),
                move_forward=float(self.rng.uniform(0, 2)),
                grab=bool(self.rng.random() < self.grab_prob),
                trigger=bool(self.rng.random() < self.trigger_prob),
            )
        return self.base.act(obs, world)

    def finish(self, log: TrajectoryLog) -> None:
        if hasattr(self.base, "finish"):
            self.base.finish(log)


class MaskedAudioAgent:
    """Wraps a policy so it never sees loudness readings and/or trigger transcripts."""

    def __init__(self, base, hide_loudness: bool = False, hide_transcripts: bool = False):
        self.base = base
        self.hide_loudness = hide_loudness
        self.hide_transcripts = hide_transcripts
        hidden = [n for n, on in (("loudness", hide_loudness), ("transcripts", hide_transcripts)) if on]
        base_name = getattr(base, "name", "policy")
        self.name = f"{base_name}-no-{'-'.join(hidden)}" if hidden else base_name

    def reset(self, scene: SceneSpec, seed: int) -> None:
        self.base.reset(scene, seed)

    def act(self, obs: Observation, world: WorldState) -> ActionRequest:
        return self.base.act(mask_audio(obs, self.hide_loudness, self.hide_transcripts), world)

    def finish(self, log: TrajectoryLog) -> None:
        if hasattr(self.base, "finish"):
            self.base.finish(log)


# ---------------------------------------------------------------------------
# replay and external process bridge


class ReplayAgent:
    """Re-emits the actions of a recorded episode, including recorded faults."""

    name = "replay"

    def __init__(self, log: TrajectoryLog):
        self.log = log
        self.name = log.agent
        self._i = 0

    def reset(self, scene: SceneSpec, seed: int) -> None:
        self._i = 0

    def act(self, obs: Observation, world: WorldState | None = None):
        rec = self.log.records[self._i]
        self._i += 1
        for ev in rec.events:
            if ev.get("type") == "timeout":
                raise AgentTimeout()
            if ev.get("type") in ("decode_error", "decode_warning"):
                return ev["raw"]
        return rec.action


class ExternalAgent:
    """Bridge to an agent in another process speaking newline-delimited JSON.

    Each step the bridge writes one ObservationMsg line and waits up to
    ``timeout`` seconds for one reply line; a late reply becomes a no-op step.
    Either ``command`` (spawned, stdio transport) or ``address`` (TCP socket)
    must be given.
    """

    def __init__(self, command: list[str] | None = None, address: tuple[str, int] | None = None,
                 timeout: float = 120.0, name: str = "external"):
        if (command is None) == (address is None):
            raise ValueError("give exactly one of command or address")
        self.command = command
        self.address = address
        self.timeout = timeout
        self.name = name
        self._proc = None
        self._sock = None
        self._out = None
        self._lines: queue.Queue = queue.Queue()

    def _reader(self, stream) -> None:
        for line in stream:
            self._lines.put(line.rstrip("\n"))
        self._lines.put(None)

    def reset(self, scene: SceneSpec, seed: int) -> None:
        self.close()
        self._lines = queue.Queue()
        if self.command is not None:
            self._proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                          text=True, bufsize=1)
            self._out = self._proc.stdin
            reader_stream = self._proc.stdout
        else:
            self._sock = socket.create_connection(self.address, timeout=self.timeout)
            self._sock.settimeout(None)
            f = self._sock.makefile("rw", encoding="utf-8", newline="\n")
            self._out = f
            reader_stream = f
        threading.Thread(target=self._reader, args=(reader_stream,), daemon=True).start()

    def act(self, obs: Observation, world: WorldState | None = None) -> str:
        try:
            write_message(self._out, encode_observation(obs))
        except (BrokenPipeError, OSError):
            raise AgentTimeout() from None
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise AgentTimeout() from None
        if line is None:
            self._lines.put(None)
            raise AgentTimeout()
        return line

    def finish(self, log: TrajectoryLog) -> None:
        try:
            write_message(self._out, encode_episode_end(log))
        except (BrokenPipeError, OSError, ValueError, AttributeError):
            pass
        self.close()

    def close(self) -> None:
        if self._proc is not None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
            self._proc = None
        if self._sock is not None:
            self._sock.close()
            self._sock = None


BUILTIN_AGENTS = {
    "noop": NoopAgent,
    "random": RandomAgent,
    "greedy": GreedyAudioAgent,
    "greedy_audio": GreedyAudioAgent,
    "oracle": OracleAgent,
}


def make_agent(spec: str):
    if spec in BUILTIN_AGENTS:
        return BUILTIN_AGENTS[spec]()
    raise KeyError(f"unknown agent {spec!r}; choose from {sorted(BUILTIN_AGENTS)}")
