"""Scene domain model: geometry, objects, audio sources, prop chains and validation.

Everything here is immutable once built, so a single :class:`SceneSpec` can be
shared by any number of concurrent episode runners.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable

AGENT_RADIUS = 0.3
DEFAULT_ROOM_SIZE = (10.0, 10.0)
PASSWORD_LENGTH = 4


class Family(str, Enum):
    D1 = "D1"
    D2 = "D2"
    D3 = "D3"
    D2M = "D2M"
    D3M = "D3M"
    D2T = "D2T"

    @property
    def base(self) -> int:
        return int(self.value[1])

    @property
    def misleading(self) -> bool:
        return self.value.endswith("M")

    @property
    def timed(self) -> bool:
        return self.value.endswith("T")

    @property
    def step_limit(self) -> int:
        return STEP_LIMITS[self.base]

    @property
    def hop_count(self) -> int:
        return self.base - 1


STEP_LIMITS = {1: 50, 2: 65, 3: 80}
FAMILIES = tuple(Family)


class Side(str, Enum):
    N = "N"
    E = "E"
    S = "S"
    W = "W"


class ObjectKind(str, Enum):
    DOOR = "Door"
    BOX = "Box"
    RECORDER = "Recorder"
    DISTRACTOR = "Distractor"
    KEY = "Key"
    WALL_DISPLAY = "WallDisplay"
    DECOY = "Decoy"


class AudioCategory(str, Enum):
    AMBIENT = "Ambient"
    TRIGGER_CLUE = "TriggerClue"
    TRIGGER_MISLEADING = "TriggerMisleading"

    @property
    def is_trigger(self) -> bool:
        return self is not AudioCategory.AMBIENT


class Reveal(str, Enum):
    VISUAL = "Visual"
    AUDITORY = "Auditory"
    TIMED = "Timed"


class ItemKind(str, Enum):
    KEY = "Key"
    NOTE = "Note"


class LockKind(str, Enum):
    NONE = "None"
    NEEDS_KEY = "NeedsKey"
    NEEDS_PASSWORD = "NeedsPassword"


@dataclass(frozen=True)
class Vec2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite coordinates: ({self.x}, {self.y})")

    def distance_to(self, other: Vec2) -> float:
        return math.hypot(other.x - self.x, other.y - self.y)


def wrap_yaw(yaw: float) -> float:
    """Wrap an angle in degrees into ``[0, 360)``."""
    wrapped = math.fmod(yaw, 360.0)
    if wrapped < 0.0:
        wrapped += 360.0
    if wrapped >= 360.0:
        wrapped = 0.0
    return wrapped


def wrap180(angle: float) -> float:
    """Wrap an angle in degrees into ``(-180, 180]``."""
    a = wrap_yaw(angle)
    return a - 360.0 if a > 180.0 else a


@dataclass(frozen=True)
class Pose:
    """Agent pose. Yaw is a compass heading (0 = +y, 90 = +x); positive pitch looks down."""

    position: Vec2
    yaw: float = 0.0
    pitch: float = 0.0

    def normalized(self) -> Pose:
        return Pose(self.position, wrap_yaw(self.yaw), min(90.0, max(-90.0, self.pitch)))

    @property
    def forward(self) -> tuple[float, float]:
        rad = math.radians(self.yaw)
        return math.sin(rad), math.cos(rad)


@dataclass(frozen=True)
class Wall:
    """Axis-aligned interior wall segment."""

    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def vertical(self) -> bool:
        return self.x0 == self.x1

    @property
    def horizontal(self) -> bool:
        return self.y0 == self.y1


@dataclass(frozen=True)
class Exit:
    position: Vec2
    side: Side


@dataclass(frozen=True)
class RoomGeometry:
    width: float
    depth: float
    exit: Exit
    walls: tuple[Wall, ...] = ()

    @property
    def center(self) -> Vec2:
        return Vec2(self.width / 2.0, self.depth / 2.0)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.depth)

    def contains(self, p: Vec2, margin: float = 0.0) -> bool:
        return (margin - 1e-9 <= p.x <= self.width - margin + 1e-9
                and margin - 1e-9 <= p.y <= self.depth - margin + 1e-9)

    def on_boundary(self, p: Vec2, side: Side | None = None, tol: float = 1e-6) -> bool:
        if not self.contains(p):
            return False
        hits = {
            Side.N: abs(p.y - self.depth) <= tol,
            Side.S: abs(p.y) <= tol,
            Side.E: abs(p.x - self.width) <= tol,
            Side.W: abs(p.x) <= tol,
        }
        return hits[side] if side is not None else any(hits.values())


@dataclass(frozen=True)
class Lock:
    kind: LockKind = LockKind.NONE
    item: str | None = None
    password: str | None = None

    @classmethod
    def none(cls) -> Lock:
        return cls()

    @classmethod
    def needs_key(cls, item_id: str) -> Lock:
        return cls(LockKind.NEEDS_KEY, item=item_id)

    @classmethod
    def needs_password(cls, password: str) -> Lock:
        return cls(LockKind.NEEDS_PASSWORD, password=password)


@dataclass(frozen=True)
class AudioSourceSpec:
    category: AudioCategory
    audible_radius: float
    transcript: str = ""
    play_duration: float | None = None


@dataclass(frozen=True)
class GameObject:
    id: str
    kind: ObjectKind
    position: Vec2
    name: str = ""
    interactable: bool = False
    lock: Lock = field(default_factory=Lock)
    contents: tuple[str, ...] = ()
    audio: AudioSourceSpec | None = None

    @property
    def label(self) -> str:
        return self.name or self.kind.value

    @property
    def trigger_audio(self) -> AudioSourceSpec | None:
        if self.audio is not None and self.audio.category.is_trigger:
            return self.audio
        return None


@dataclass(frozen=True)
class PropHop:
    reveal: Reveal
    gate: str
    yields: str


@dataclass(frozen=True)
class PropChainSpec:
    hops: tuple[PropHop, ...] = ()


@dataclass(frozen=True)
class TransientClue:
    display_id: str
    window_duration: float
    text: str
    trigger_id: str


@dataclass(frozen=True)
class Item:
    id: str
    name: str
    description: str
    kind: ItemKind = ItemKind.KEY


@dataclass(frozen=True)
class SceneSpec:
    id: str
    family: Family
    geometry: RoomGeometry
    objects: tuple[GameObject, ...]
    prop_chain: PropChainSpec
    step_limit: int
    seed: int
    start_pose: Pose
    items: tuple[Item, ...] = ()
    transient_clue: TransientClue | None = None

    @cached_property
    def by_id(self) -> dict[str, GameObject]:
        return {o.id: o for o in self.objects}

    @cached_property
    def items_by_id(self) -> dict[str, Item]:
        return {i.id: i for i in self.items}

    @property
    def door(self) -> GameObject:
        return next(o for o in self.objects if o.kind is ObjectKind.DOOR)

    def objects_of(self, kind: ObjectKind) -> list[GameObject]:
        return [o for o in self.objects if o.kind is kind]

    @property
    def has_ambient(self) -> bool:
        return any(o.audio is not None and o.audio.category is AudioCategory.AMBIENT
                   for o in self.objects)

    @property
    def misleading_digits(self) -> list[str]:
        out = []
        for o in self.objects:
            if o.audio is not None and o.audio.category is AudioCategory.TRIGGER_MISLEADING:
                out.extend(digit_strings(o.audio.transcript))
        return out

    @property
    def prop_count(self) -> int:
        """Number of bag items obtainable through the prop chain."""
        return sum(1 for h in self.prop_chain.hops if h.yields in self.items_by_id)


_DIGITS = re.compile(r"\d{%d,}" % PASSWORD_LENGTH)


def digit_strings(text: str) -> list[str]:
    return _DIGITS.findall(text)


def silence_scene(scene: SceneSpec) -> SceneSpec:
    """Copy of ``scene`` with every ambient source removed (the no-audio ablation)."""
    objects = tuple(
        GameObject(o.id, o.kind, o.position, o.name, o.interactable, o.lock, o.contents,
                   None if (o.audio is not None and o.audio.category is AudioCategory.AMBIENT)
                   else o.audio)
        for o in scene.objects
    )
    return SceneSpec(scene.id, scene.family, scene.geometry, objects, scene.prop_chain,
                     scene.step_limit, scene.seed, scene.start_pose, scene.items,
                     scene.transient_clue)


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def _lock_dependency(obj: GameObject, password_sources: dict[str, set[str]]) -> set[str]:
    """Object ids that must be opened/triggered before ``obj`` can be unlocked."""
    if obj.lock.kind is LockKind.NEEDS_PASSWORD:
        return set(password_sources.get(obj.lock.password or "", set()))
    return set()


def _solve(scene: SceneSpec) -> tuple[bool, set[str], list[str]]:
    """Fixpoint over obtainable clues and items. Returns (door reachable, bag, problems)."""
    problems: list[str] = []
    item_sources: dict[str, set[str]] = {}
    for o in scene.objects:
        for it in o.contents:
            item_sources.setdefault(it, set()).add(o.id)

    # cycle detection on the "needs" graph: container -> provider of its requirement
    needs: dict[str, set[str]] = {}
    password_sources: dict[str, set[str]] = {}
    for o in scene.objects:
        if o.trigger_audio is not None and o.audio.category is AudioCategory.TRIGGER_CLUE:
            for d in digit_strings(o.audio.transcript):
                password_sources.setdefault(d, set()).add(o.id)
    if scene.transient_clue is not None:
        for d in digit_strings(scene.transient_clue.text):
            password_sources.setdefault(d, set()).add(scene.transient_clue.trigger_id)
    for o in scene.objects:
        deps = _lock_dependency(o, password_sources)
        if o.lock.kind is LockKind.NEEDS_KEY:
            deps |= item_sources.get(o.lock.item or "", set())
        needs[o.id] = deps

    state: dict[str, int] = {}

    def has_cycle(node: str) -> bool:
        state[node] = 1
        for nxt in needs.get(node, ()):
            if state.get(nxt) == 1 or (state.get(nxt) is None and has_cycle(nxt)):
                return True
        state[node] = 2
        return False

    door_ids = [o.id for o in scene.objects if o.kind is ObjectKind.DOOR]
    if door_ids and has_cycle(door_ids[0]):
        problems.append("cyclic prop chain")

    known: set[str] = set()
    for o in scene.objects:
        a = o.trigger_audio
        if a is not None:
            known.update(digit_strings(a.transcript))
    if scene.transient_clue is not None:
        known.update(digit_strings(scene.transient_clue.text))

    bag: set[str] = set()
    opened: set[str] = set()
    door_open = False
    changed = True
    while changed:
        changed = False
        for o in scene.objects:
            if o.id in opened or not o.interactable:
                continue
            lock = o.lock
            ok = (lock.kind is LockKind.NONE
                  or (lock.kind is LockKind.NEEDS_KEY and lock.item in bag)
                  or (lock.kind is LockKind.NEEDS_PASSWORD and lock.password in known))
            if not ok:
                continue
            opened.add(o.id)
            changed = True
            if o.kind is ObjectKind.DOOR:
                door_open = True
            bag.update(o.contents)
    if not door_open:
        door = next((o for o in scene.objects if o.kind is ObjectKind.DOOR), None)
        if door is not None and not door.interactable:
            problems.append("door is not interactable")
        elif door is not None and door.lock.kind is LockKind.NEEDS_KEY and door.lock.item not in item_sources:
            problems.append(f"unobtainable prerequisite: item {door.lock.item!r}")
        problems.append("door unlock unreachable")
    return door_open, bag, problems


def validate_scene(scene: SceneSpec) -> ValidationReport:
    """Check every scene invariant and prop-chain solvability.

    Violations are returned as data; this never raises for a malformed scene.
    """
    v: list[str] = []
    g = scene.geometry
    if not (g.width > 0 and g.depth > 0):
        v.append("room dimensions must be positive")
    if not g.on_boundary(g.exit.position, g.exit.side):
        v.append("exit not on its boundary side")
    for w in g.walls:
        if not (w.vertical or w.horizontal):
            v.append(f"wall {w} is not axis-aligned")
        if not (g.contains(Vec2(w.x0, w.y0)) and g.contains(Vec2(w.x1, w.y1))):
            v.append(f"wall {w} outside bounds")

    ids = [o.id for o in scene.objects]
    if len(set(ids)) != len(ids):
        v.append("duplicate object ids")
    item_ids = [i.id for i in scene.items]
    if len(set(item_ids)) != len(item_ids):
        v.append("duplicate item ids")
    for o in scene.objects:
        if not g.contains(o.position):
            v.append(f"object {o.id} outside bounds")
        for it in o.contents:
            if it not in scene.items_by_id:
                v.append(f"object {o.id} contains unknown item {it!r}")
        if o.audio is not None and not o.audio.audible_radius > 0:
            v.append(f"object {o.id} has non-positive audible radius")

    doors = scene.objects_of(ObjectKind.DOOR)
    if len(doors) != 1:
        v.append(f"scene must contain exactly one Door (found {len(doors)})")
    elif doors[0].position.distance_to(g.exit.position) > 1e-6:
        v.append("door is not at the exit")

    fam = scene.family
    distractors = scene.objects_of(ObjectKind.DISTRACTOR)
    misleading = [o for o in scene.objects
                  if o.audio is not None and o.audio.category is AudioCategory.TRIGGER_MISLEADING]
    if fam.misleading:
        if not distractors:
            v.append("family requires distractor")
        if len(misleading) != 1:
            v.append("misleading family requires exactly one TriggerMisleading source")
    elif distractors or misleading:
        v.append("distractor outside misleading family")

    displays = scene.objects_of(ObjectKind.WALL_DISPLAY)
    if fam.timed:
        if scene.transient_clue is None:
            v.append("time-aware family requires a transient clue")
        else:
            tc = scene.transient_clue
            disp = scene.by_id.get(tc.display_id)
            if disp is None or disp.kind is not ObjectKind.WALL_DISPLAY:
                v.append("transient clue display is not a WallDisplay")
            trig = scene.by_id.get(tc.trigger_id)
            if trig is None or trig.trigger_audio is None:
                v.append("transient clue trigger is not sound-emitting")
            if not tc.window_duration > 0:
                v.append("transient window must be positive")
    else:
        if displays:
            v.append("WallDisplay outside time-aware family")
        if scene.transient_clue is not None:
            v.append("transient clue outside time-aware family")

    if scene.step_limit != fam.step_limit:
        v.append(f"step limit {scene.step_limit} != {fam.step_limit} for {fam.value}")
    if len(scene.prop_chain.hops) != fam.hop_count:
        v.append(f"prop chain has {len(scene.prop_chain.hops)} hops, family needs {fam.hop_count}")
    for hop in scene.prop_chain.hops:
        if hop.gate not in scene.by_id:
            v.append(f"prop hop gate {hop.gate!r} is not an object")

    if doors:
        true_codes = set()
        if doors[0].lock.kind is LockKind.NEEDS_PASSWORD:
            true_codes.add(doors[0].lock.password)
        for o in scene.objects:
            if o.lock.kind is LockKind.NEEDS_PASSWORD:
                true_codes.add(o.lock.password)
        if set(scene.misleading_digits) & true_codes:
            v.append("misleading digits equal a true password")
        _, _, problems = _solve(scene)
        v.extend(problems)

    if not g.contains(scene.start_pose.position, AGENT_RADIUS):
        v.append("start pose outside walkable area")
    return ValidationReport(tuple(v))


# ---------------------------------------------------------------------------
# serialization


def _enum_safe(obj: Any) -> Any:
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {k: _enum_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_enum_safe(v) for v in obj]
    return obj


def scene_to_dict(scene: SceneSpec) -> dict:
    d = _enum_safe(asdict(scene))
    order = ["id", "family", "geometry", "objects", "prop_chain", "transient_clue",
             "step_limit", "seed", "start_pose", "items"]
    return {k: d[k] for k in order}


def _vec(d: dict) -> Vec2:
    return Vec2(float(d["x"]), float(d["y"]))


def _pose(d: dict) -> Pose:
    return Pose(_vec(d["position"]), float(d["yaw"]), float(d["pitch"]))


def scene_from_dict(d: dict) -> SceneSpec:
    g = d["geometry"]
    geometry = RoomGeometry(
        float(g["width"]), float(g["depth"]),
        Exit(_vec(g["exit"]["position"]), Side(g["exit"]["side"])),
        tuple(Wall(float(w["x0"]), float(w["y0"]), float(w["x1"]), float(w["y1"]))
              for w in g.get("walls", [])),
    )
    objects = []
    for o in d["objects"]:
        lk = o.get("lock") or {}
        a = o.get("audio")
        audio = None if a is None else AudioSourceSpec(
            AudioCategory(a["category"]), float(a["audible_radius"]), a.get("transcript", ""),
            None if a.get("play_duration") is None else float(a["play_duration"]))
        objects.append(GameObject(
            o["id"], ObjectKind(o["kind"]), _vec(o["position"]), o.get("name", ""),
            bool(o.get("interactable", False)),
            Lock(LockKind(lk.get("kind", "None")), lk.get("item"), lk.get("password")),
            tuple(o.get("contents", ())), audio))
    chain = PropChainSpec(tuple(PropHop(Reveal(h["reveal"]), h["gate"], h["yields"])
                                for h in d["prop_chain"]["hops"]))
    tc = d.get("transient_clue")
    clue = None if tc is None else TransientClue(
        tc["display_id"], float(tc["window_duration"]), tc["text"], tc["trigger_id"])
    items = tuple(Item(i["id"], i["name"], i["description"], ItemKind(i["kind"]))
                  for i in d.get("items", []))
    return SceneSpec(d["id"], Family(d["family"]), geometry, tuple(objects), chain,
                     int(d["step_limit"]), int(d["seed"]), _pose(d["start_pose"]), items, clue)


def dumps_scene(scene: SceneSpec) -> str:
    return json.dumps(scene_to_dict(scene), indent=2) + "\n"


def save_scene(scene: SceneSpec, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps_scene(scene), encoding="utf-8")
    return path


def load_scene(path: str | Path) -> SceneSpec:
    return scene_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def load_scenes(paths: Iterable[str | Path]) -> list[SceneSpec]:
    return [load_scene(p) for p in paths]
