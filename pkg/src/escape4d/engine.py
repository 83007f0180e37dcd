"""Deterministic episode state machine.

One call to :func:`apply_action` is one protocol step. Sub-actions are resolved
in a fixed order: view change (``look_at`` overrides ``rotate_*``), forward move
with wall clamping, grab, trigger, read. The simulated clock then advances by
:func:`action_time_cost`, independent of what the sub-actions achieved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Protocol

from .core import (
    AGENT_RADIUS,
    AudioCategory,
    GameObject,
    LockKind,
    ObjectKind,
    Pose,
    SceneSpec,
    Vec2,
    Wall,
    wrap180,
)

FORWARD_SPEED = 2.0  # m/s
ROTATION_SPEED = 60.0  # deg/s
INTERACTION_COST = 0.5  # s, grab/trigger/interactions
FOV_H = 90.0
FOV_V = 60.0
CENTER_TOLERANCE = 5.0
GRAB_RANGE = 2.0
TRIGGER_RANGE = 3.0
TRIGGER_TOLERANCE = 10.0
DEFAULT_PLAY_DURATION = 5.0
MISGUIDE_WINDOW = 3


class EpisodeFinishedError(RuntimeError):
    """Raised when an action is applied to an episode that has already ended."""


class AgentTimeout(Exception):
    """Raised by a policy that failed to answer in time; the step becomes a no-op."""


def _clamp(v: float, lo: float, hi: float) -> float:
    return lo if v < lo else hi if v > hi else v


@dataclass(frozen=True)
class Interactions:
    use_item_id: str | None = None
    input: str | None = None


@dataclass(frozen=True)
class ActionRequest:
    """One agent action. Numeric fields are clamped to protocol ranges on construction."""

    move_forward: float = 0.0
    rotate_right: float = 0.0
    rotate_down: float = 0.0
    jump: bool = False
    look_at: tuple[float, float] | None = None
    grab: bool = False
    trigger: bool = False
    interactions: Interactions | None = None
    read: str | None = None
    rationale: str = ""

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "move_forward", _clamp(float(self.move_forward), -10.0, 10.0))
        set_(self, "rotate_right", _clamp(float(self.rotate_right), -180.0, 180.0))
        set_(self, "rotate_down", _clamp(float(self.rotate_down), -90.0, 90.0))
        if self.look_at is not None:
            x, y = self.look_at
            set_(self, "look_at", (_clamp(float(x), 0.0, 1.0), _clamp(float(y), 0.0, 1.0)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "move_forward": self.move_forward,
            "rotate_right": self.rotate_right,
            "rotate_down": self.rotate_down,
            "jump": self.jump,
            "look_at": None if self.look_at is None else list(self.look_at),
            "grab": self.grab,
            "trigger": self.trigger,
            "interactions": None if self.interactions is None else {
                "use_item_id": self.interactions.use_item_id,
                "input": self.interactions.input,
            },
            "read": self.read,
            "rationale": self.rationale,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ActionRequest:
        inter = d.get("interactions")
        look = d.get("look_at")
        return cls(
            move_forward=d.get("move_forward", 0.0),
            rotate_right=d.get("rotate_right", 0.0),
            rotate_down=d.get("rotate_down", 0.0),
            jump=bool(d.get("jump", False)),
            look_at=None if look is None else (look[0], look[1]),
            grab=bool(d.get("grab", False)),
            trigger=bool(d.get("trigger", False)),
            interactions=None if inter is None else Interactions(inter.get("use_item_id"),
                                                                 inter.get("input")),
            read=d.get("read"),
            rationale=d.get("rationale", ""),
        )


NOOP = ActionRequest()


def action_time_cost(action: ActionRequest) -> float:
    """Simulated seconds consumed by ``action``.

    Movement at 2 m/s, rotation at 60 deg/s, and a flat 0.5 s when the action
    grabs, triggers or carries an interaction payload. When ``look_at`` is present
    it replaces the rotate fields, and its equivalent rotation is what is charged.

    >>> action_time_cost(ActionRequest(move_forward=4.0))
    2.0
    >>> action_time_cost(ActionRequest(rotate_right=90))
    1.5
    """
    if action.look_at is not None:
        x, y = action.look_at
        rotation = abs(x - 0.5) * FOV_H + abs(y - 0.5) * FOV_V
    else:
        rotation = abs(action.rotate_right) + abs(action.rotate_down)
    cost = abs(action.move_forward) / FORWARD_SPEED + rotation / ROTATION_SPEED
    if action.grab or action.trigger or action.interactions is not None:
        cost += INTERACTION_COST
    return cost


def loudness_at(radius: float, source: Vec2, listener: Vec2) -> float:
    """Linear attenuation: 1 at the source, 0 at and beyond ``radius``."""
    if not radius > 0:
        raise ValueError("audible radius must be positive")
    d = source.distance_to(listener)
    return max(0.0, 1.0 - d / radius)


# ---------------------------------------------------------------------------
# observation types


@dataclass(frozen=True)
class VisibleObject:
    id: str
    kind: str
    image_coords: tuple[float, float]
    distance: float
    text: str | None = None


@dataclass(frozen=True)
class AmbientReading:
    loudness: float
    bearing: float


@dataclass(frozen=True)
class Observation:
    visible: tuple[VisibleObject, ...] = ()
    center_object: str | None = None
    interaction_result: str = ""
    ambient: tuple[AmbientReading, ...] = ()
    transcripts: tuple[str, ...] = ()
    bag_desc: str = ""
    steps_remaining: int = 0

    def find(self, object_id: str) -> VisibleObject | None:
        return next((v for v in self.visible if v.id == object_id), None)

    @property
    def loudness(self) -> float:
        return max((a.loudness for a in self.ambient), default=0.0)


# ---------------------------------------------------------------------------
# world state


@dataclass
class ObjectState:
    opened: bool = False
    locked: bool = False
    triggered: bool = False
    consumed: bool = False


@dataclass
class ClueWindow:
    status: str = "Inactive"  # Inactive -> Active -> Expired
    start: float | None = None
    end: float | None = None


@dataclass
class Playback:
    source_id: str
    started_at: float
    ends_at: float


@dataclass
class WorldState:
    scene: SceneSpec
    pose: Pose
    bag: list[str] = field(default_factory=list)
    object_states: dict[str, ObjectState] = field(default_factory=dict)
    clue_window: ClueWindow = field(default_factory=ClueWindow)
    playing_audio: list[Playback] = field(default_factory=list)
    clock: float = 0.0
    step_index: int = 0
    escaped: bool = False
    misguided_deadline: int | None = None
    distractor_trigger_step: int | None = None
    distractor_triggered: bool = False
    misguided: bool = False
    t_found: float | None = None
    last_result: str = ""
    last_transcripts: tuple[str, ...] = ()

    @classmethod
    def initial(cls, scene: SceneSpec) -> WorldState:
        states = {o.id: ObjectState(locked=o.lock.kind is not LockKind.NONE) for o in scene.objects}
        return cls(scene=scene, pose=scene.start_pose.normalized(), object_states=states)

    @property
    def finished(self) -> bool:
        return self.escaped or self.step_index >= self.scene.step_limit

    def clone(self) -> WorldState:
        return replace(
            self,
            bag=list(self.bag),
            object_states={k: replace(v) for k, v in self.object_states.items()},
            clue_window=replace(self.clue_window),
            playing_audio=[replace(p) for p in self.playing_audio],
        )


@dataclass(frozen=True)
class StepRecord:
    step_index: int
    clock_before: float
    clock_after: float
    pose_after: Pose
    action: ActionRequest
    events: tuple[dict[str, Any], ...]
    audio_active: bool


# ---------------------------------------------------------------------------
# geometry helpers


def _segments_intersect(p: Vec2, q: Vec2, w: Wall) -> bool:
    """Does segment p-q touch the wall segment (inclusive)?"""
    ax, ay, bx, by = p.x, p.y, q.x, q.y
    cx, cy, dx, dy = w.x0, w.y0, w.x1, w.y1

    def orient(px, py, qx, qy, rx, ry):
        v = (qx - px) * (ry - py) - (qy - py) * (rx - px)
        return 0 if abs(v) < 1e-12 else (1 if v > 0 else -1)

    def on_seg(px, py, qx, qy, rx, ry):
        return min(px, qx) - 1e-12 <= rx <= max(px, qx) + 1e-12 and \
            min(py, qy) - 1e-12 <= ry <= max(py, qy) + 1e-12

    o1 = orient(ax, ay, bx, by, cx, cy)
    o2 = orient(ax, ay, bx, by, dx, dy)
    o3 = orient(cx, cy, dx, dy, ax, ay)
    o4 = orient(cx, cy, dx, dy, bx, by)
    if o1 != o2 and o3 != o4:
        return True
    return ((o1 == 0 and on_seg(ax, ay, bx, by, cx, cy))
            or (o2 == 0 and on_seg(ax, ay, bx, by, dx, dy))
            or (o3 == 0 and on_seg(cx, cy, dx, dy, ax, ay))
            or (o4 == 0 and on_seg(cx, cy, dx, dy, bx, by)))


def line_of_sight(scene: SceneSpec, a: Vec2, b: Vec2) -> bool:
    return not any(_segments_intersect(a, b, w) for w in scene.geometry.walls)


def _max_travel(scene: SceneSpec, pos: Vec2, ux: float, uy: float, dist: float,
                radius: float = AGENT_RADIUS) -> float:
    """Largest t <= dist such that pos + t*u stays ``radius`` clear of bounds and walls."""
    g = scene.geometry
    t = dist
    eps = 1e-12
    if ux > eps:
        t = min(t, (g.width - radius - pos.x) / ux)
    elif ux < -eps:
        t = min(t, (pos.x - radius) / -ux)
    if uy > eps:
        t = min(t, (g.depth - radius - pos.y) / uy)
    elif uy < -eps:
        t = min(t, (pos.y - radius) / -uy)
    for w in g.walls:
        if w.vertical:
            t = min(t, _wall_stop(pos.x, pos.y, ux, uy, w.x0, min(w.y0, w.y1), max(w.y0, w.y1), radius, t))
        else:
            t = min(t, _wall_stop(pos.y, pos.x, uy, ux, w.y0, min(w.x0, w.x1), max(w.x0, w.x1), radius, t))
    return max(0.0, t)


def _wall_stop(n0: float, a0: float, un: float, ua: float, wn: float,
               lo: float, hi: float, radius: float, t_max: float) -> float:
    """Stop distance for a wall at normal coordinate ``wn`` spanning [lo, hi] along-axis."""
    if abs(un) < 1e-12:
        return t_max
    side = 1.0 if n0 < wn else -1.0
    if un * side <= 0:
        return t_max  # moving away
    best = t_max
    # crossing the offset plane inside the wall span
    plane = wn - side * radius
    t_plane = (plane - n0) / un
    if t_plane >= -1e-12:
        a = a0 + ua * t_plane
        if lo <= a <= hi:
            best = min(best, t_plane)
    # crossing the wall itself (shallow approaches past the plane check)
    t_wall = (wn - n0) / un
    if t_wall >= 0:
        a = a0 + ua * t_wall
        if lo <= a <= hi:
            best = min(best, t_wall - radius / abs(un))
    return best


def view_offsets(pose: Pose, target: Vec2) -> tuple[float, float, float]:
    """(distance, yaw offset, pitch offset) of ``target`` from the view center, degrees."""
    dx = target.x - pose.position.x
    dy = target.y - pose.position.y
    dist = math.hypot(dx, dy)
    dyaw = 0.0 if dist < 1e-12 else wrap180(math.degrees(math.atan2(dx, dy)) - pose.yaw)
    # rooms are planar: every object sits at eye level
    dpitch = -pose.pitch
    return dist, dyaw, dpitch


def _object_present(state: WorldState, obj: GameObject) -> bool:
    return not state.object_states[obj.id].consumed


def _visible_with_offsets(state: WorldState) -> list[tuple[GameObject, float, float, float]]:
    scene = state.scene
    view_distance = scene.geometry.diagonal
    out = []
    for obj in scene.objects:
        if not _object_present(state, obj):
            continue
        dist, dyaw, dpitch = view_offsets(state.pose, obj.position)
        if dist > view_distance or abs(dyaw) > FOV_H / 2 or abs(dpitch) > FOV_V / 2:
            continue
        if not line_of_sight(scene, state.pose.position, obj.position):
            continue
        out.append((obj, dist, dyaw, dpitch))
    return out


def _center(visible) -> tuple[GameObject, float, float] | None:
    best = None
    for obj, dist, dyaw, dpitch in visible:
        off = math.hypot(dyaw, dpitch)
        if off < CENTER_TOLERANCE:
            key = (dist, obj.id)
            if best is None or key < best[0]:
                best = (key, obj, dist, off)
    return None if best is None else (best[1], best[2], best[3])


def bag_description(state: WorldState) -> str:
    if not state.bag:
        return "Nothing."
    items = state.scene.items_by_id
    return "\n".join(f"- {i}: {items[i].name}" if i in items else f"- {i}" for i in state.bag)


def observe(state: WorldState) -> Observation:
    """Symbolic observation of ``state`` (pure; sightings are recorded by apply_action)."""
    scene = state.scene
    visible = _visible_with_offsets(state)
    clue = scene.transient_clue
    entries = []
    for obj, dist, dyaw, dpitch in visible:
        text = None
        if clue is not None and obj.id == clue.display_id and state.clue_window.status == "Active":
            text = clue.text
        entries.append(VisibleObject(obj.id, obj.label,
                                     (0.5 + dyaw / FOV_H, 0.5 + dpitch / FOV_V), dist, text))
    center = _center(visible)
    ambient = []
    for obj in scene.objects:
        a = obj.audio
        if a is None or a.category is not AudioCategory.AMBIENT:
            continue
        loud = loudness_at(a.audible_radius, obj.position, state.pose.position)
        if loud > 0:
            _, dyaw, _ = view_offsets(state.pose, obj.position)
            ambient.append(AmbientReading(loud, dyaw))
    return Observation(
        visible=tuple(entries),
        center_object=None if center is None else center[0].id,
        interaction_result=state.last_result,
        ambient=tuple(ambient),
        transcripts=state.last_transcripts,
        bag_desc=bag_description(state),
        steps_remaining=scene.step_limit - state.step_index,
    )


# ---------------------------------------------------------------------------
# step resolution


def _unlock_check(state: WorldState, obj: GameObject, action: ActionRequest) -> str | None:
    """None when the lock is satisfied, otherwise the failure text."""
    inter = action.interactions
    use = inter.use_item_id if inter else None
    if use is not None and use not in state.bag:
        return f"You don't have the item {use} in your bag."
    lock = obj.lock
    if lock.kind is LockKind.NONE:
        return None
    if lock.kind is LockKind.NEEDS_KEY:
        if use == lock.item:
            return None
        return f"The {obj.label} is locked. It seems to need a key."
    given = inter.input if inter else None
    if given is not None and given.strip() == lock.password:
        return None
    if given:
        return f"Wrong password. The {obj.label} stays locked."
    return f"The {obj.label} is locked. It seems to need a password."


def _resolve_grab(state: WorldState, action: ActionRequest, events: list, msgs: list) -> None:
    center = _center(_visible_with_offsets(state))
    if center is None:
        events.append({"type": "grab_fail", "object": None, "reason": "no_target"})
        msgs.append("There is no object at the center of your view.")
        return
    obj, dist, _ = center
    st = state.object_states[obj.id]
    if dist > GRAB_RANGE:
        events.append({"type": "grab_fail", "object": obj.id, "reason": "too_far"})
        msgs.append(f"You are too far away from the {obj.label}.")
        return
    if not obj.interactable:
        events.append({"type": "grab_fail", "object": obj.id, "reason": "not_interactable"})
        msgs.append(f"The {obj.label} cannot be interacted with.")
        return
    if st.opened and obj.kind is not ObjectKind.DOOR:
        events.append({"type": "grab_fail", "object": obj.id, "reason": "already_open"})
        msgs.append(f"The {obj.label} is already open and empty.")
        return
    failure = _unlock_check(state, obj, action)
    if failure is not None:
        events.append({"type": "grab_fail", "object": obj.id, "reason": "locked"})
        msgs.append(failure)
        return
    st.opened = True
    st.locked = False
    acquired = [i for i in obj.contents if i not in state.bag]
    events.append({"type": "grab_success", "object": obj.id, "items": acquired})
    if obj.kind is ObjectKind.DOOR:
        state.escaped = True
        events.append({"type": "escape", "object": obj.id})
        msgs.append("Escaped successfully!")
        return
    state.bag.extend(acquired)
    if obj.kind is ObjectKind.KEY:
        st.consumed = True
    names = ", ".join(state.scene.items_by_id[i].name for i in acquired if i in state.scene.items_by_id)
    if obj.lock.kind is LockKind.NEEDS_PASSWORD:
        msgs.append(f"You used the correct password to unlock the {obj.label} and found {names or 'nothing'}.")
    elif obj.lock.kind is LockKind.NEEDS_KEY:
        msgs.append(f"You unlocked the {obj.label} and found {names or 'nothing'}.")
    else:
        msgs.append(f"You picked up {names or 'nothing'}." if obj.kind is ObjectKind.KEY
                    else f"You opened the {obj.label} and found {names or 'nothing'}.")


def _resolve_trigger(state: WorldState, t_done: float, events: list, msgs: list,
                     transcripts: list) -> None:
    center = _center(_visible_with_offsets(state))
    obj = None if center is None else center[0]
    audio = None if obj is None else obj.trigger_audio
    if audio is None:
        events.append({"type": "trigger_fail", "object": None if obj is None else obj.id,
                       "reason": "not_sound_emitting"})
        msgs.append("There is no sound-emitting object at the center of your view.")
        return
    _, dist, off = center
    if dist > TRIGGER_RANGE or off > TRIGGER_TOLERANCE:
        events.append({"type": "trigger_fail", "object": obj.id, "reason": "too_far"})
        msgs.append(f"Nothing happens. You need to be closer to the {obj.label} and face it.")
        return
    duration = audio.play_duration if audio.play_duration is not None else DEFAULT_PLAY_DURATION
    state.playing_audio = [p for p in state.playing_audio if p.source_id != obj.id]
    state.playing_audio.append(Playback(obj.id, t_done, t_done + duration))
    state.object_states[obj.id].triggered = True
    events.append({"type": "trigger_success", "object": obj.id, "category": audio.category.value})
    transcripts.append(audio.transcript)
    msgs.append(f"The {obj.label} starts playing a sound.")
    if audio.category is AudioCategory.TRIGGER_MISLEADING:
        state.distractor_triggered = True
        state.distractor_trigger_step = state.step_index
        state.misguided_deadline = state.step_index + MISGUIDE_WINDOW
    clue = state.scene.transient_clue
    if clue is not None and obj.id == clue.trigger_id and state.clue_window.status == "Inactive":
        state.clue_window = ClueWindow("Active", t_done, t_done + clue.window_duration)
        events.append({"type": "clue_window_open", "start": t_done,
                       "end": t_done + clue.window_duration})


def _check_misguided(state: WorldState, action: ActionRequest, events: list) -> None:
    inter = action.interactions
    if inter is None or not inter.input or state.misguided_deadline is None:
        return
    k = state.step_index
    if not (state.distractor_trigger_step < k <= state.misguided_deadline):
        return
    for digits in state.scene.misleading_digits:
        if digits in inter.input:
            if not state.misguided:
                events.append({"type": "misguided", "input": inter.input})
            state.misguided = True
            return


def _apply_view(pose: Pose, action: ActionRequest) -> Pose:
    if action.look_at is not None:
        x, y = action.look_at
        return Pose(pose.position, pose.yaw + (x - 0.5) * FOV_H, pose.pitch + (y - 0.5) * FOV_V).normalized()
    return Pose(pose.position, pose.yaw + action.rotate_right, pose.pitch + action.rotate_down).normalized()


def _apply_move(scene: SceneSpec, pose: Pose, distance: float) -> Pose:
    if distance == 0.0:
        return pose
    fx, fy = pose.forward
    sign = 1.0 if distance > 0 else -1.0
    ux, uy = fx * sign, fy * sign
    t = _max_travel(scene, pose.position, ux, uy, abs(distance))
    return Pose(Vec2(pose.position.x + ux * t, pose.position.y + uy * t), pose.yaw, pose.pitch)


def apply_action(state: WorldState, action: ActionRequest,
                 extra_events: tuple[dict[str, Any], ...] = ()) -> tuple[WorldState, Observation, StepRecord]:
    """Advance one step. ``state`` is left untouched; a new state is returned."""
    if state.escaped:
        raise EpisodeFinishedError("episode already escaped")
    if state.step_index >= state.scene.step_limit:
        raise EpisodeFinishedError("step limit reached")
    s = state.clone()
    scene = s.scene
    events: list[dict[str, Any]] = list(extra_events)
    msgs: list[str] = []
    transcripts: list[str] = []
    clock_before = s.clock
    clock_after = clock_before + action_time_cost(action)

    s.pose = _apply_view(s.pose, action)
    s.pose = _apply_move(scene, s.pose, action.move_forward)
    if action.jump:
        events.append({"type": "jump"})

    _check_misguided(s, action, events)
    if action.grab:
        _resolve_grab(s, action, events, msgs)
    elif action.interactions is not None and action.interactions.use_item_id is not None:
        iid = action.interactions.use_item_id
        if iid in s.bag:
            msgs.append(f"You look at {scene.items_by_id[iid].name}." if iid in scene.items_by_id
                        else f"You look at {iid}.")
        else:
            msgs.append(f"You don't have the item {iid} in your bag.")
    if action.trigger and not s.escaped:
        _resolve_trigger(s, clock_after, events, msgs, transcripts)
    if action.read is not None:
        item = scene.items_by_id.get(action.read)
        if action.read in s.bag and item is not None:
            msgs.append(item.description)
            events.append({"type": "read", "item": action.read})
        else:
            msgs.append(f"You don't have the item {action.read} in your bag.")

    s.clock = clock_after
    s.step_index += 1
    audio_active = any(p.started_at <= clock_after and p.ends_at > clock_before
                       for p in s.playing_audio)
    s.playing_audio = [p for p in s.playing_audio if p.ends_at > clock_after]
    cw = s.clue_window
    if cw.status == "Active" and clock_after >= cw.end:
        s.clue_window = ClueWindow("Expired", cw.start, cw.end)
        events.append({"type": "clue_window_expired"})
    s.last_result = " ".join(msgs)
    s.last_transcripts = tuple(transcripts)

    obs = observe(s)
    clue = scene.transient_clue
    if clue is not None and s.t_found is None and any(v.text is not None for v in obs.visible):
        s.t_found = s.clock - s.clue_window.start
        events.append({"type": "clue_shown", "t_found": s.t_found})
    record = StepRecord(state.step_index, clock_before, clock_after, s.pose, action,
                        tuple(events), audio_active)
    return s, obs, record


# ---------------------------------------------------------------------------
# episodes


@dataclass(frozen=True)
class Outcome:
    escaped: bool
    steps_recorded: int


@dataclass(frozen=True)
class TrajectoryLog:
    scene_id: str
    family: str
    seed: int
    agent: str
    step_limit: int
    start_pose: Pose
    exit: Vec2
    exit_side: str
    ambient_audio: bool
    outcome: Outcome
    records: tuple[StepRecord, ...]
    t_found: float | None = None
    window_start: float | None = None
    window_duration: float | None = None
    distractor_triggered: bool = False
    misguided: bool = False
    final_clock: float = 0.0
    prop_count: int = 0

    @property
    def escaped(self) -> bool:
        return self.outcome.escaped


class Policy(Protocol):
    name: str

    def reset(self, scene: SceneSpec, seed: int) -> None: ...

    def act(self, obs: Observation, world: WorldState) -> ActionRequest | str: ...


def run_episode(scene: SceneSpec, agent: Policy | Callable, seed: int = 0) -> TrajectoryLog:
    """Run ``agent`` on ``scene`` until escape or the step limit.

    ``agent`` is either a :class:`Policy` or a plain callable ``(obs, world) -> action``.
    String actions are decoded with the wire protocol; undecodable text and
    :class:`AgentTimeout` become recorded no-op steps.
    """
    from .protocol import ActionDecodeError, decode_action

    if hasattr(agent, "reset"):
        agent.reset(scene, seed)
    act = agent.act if hasattr(agent, "act") else agent
    state = WorldState.initial(scene)
    obs = observe(state)
    records: list[StepRecord] = []
    while not state.finished:
        extra: list[dict[str, Any]] = []
        try:
            out = act(obs, state)
        except AgentTimeout:
            out = NOOP
            extra.append({"type": "timeout"})
        if isinstance(out, str):
            warnings: list[str] = []
            try:
                action = decode_action(out, warnings=warnings)
            except ActionDecodeError as exc:
                action = NOOP
                extra.append({"type": "decode_error", "raw": exc.raw})
            else:
                if warnings:
                    extra.append({"type": "decode_warning", "fields": warnings, "raw": out})
        elif out is None:
            action = NOOP
        else:
            action = out
        state, obs, rec = apply_action(state, action, tuple(extra))
        records.append(rec)
    steps = len(records) if state.escaped else scene.step_limit + 1
    clue = scene.transient_clue
    log = TrajectoryLog(
        scene_id=scene.id,
        family=scene.family.value,
        seed=seed,
        agent=getattr(agent, "name", getattr(agent, "__name__", type(agent).__name__)),
        step_limit=scene.step_limit,
        start_pose=scene.start_pose.normalized(),
        exit=scene.geometry.exit.position,
        exit_side=scene.geometry.exit.side.value,
        ambient_audio=scene.has_ambient,
        outcome=Outcome(state.escaped, steps),
        records=tuple(records),
        t_found=state.t_found,
        window_start=state.clue_window.start,
        window_duration=None if clue is None else clue.window_duration,
        distractor_triggered=state.distractor_triggered,
        misguided=state.misguided,
        final_clock=state.clock,
        prop_count=scene.prop_count,
    )
    if hasattr(agent, "finish"):
        agent.finish(log)
    return log
