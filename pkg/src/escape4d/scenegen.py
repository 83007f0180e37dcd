"""Seeded procedural generation of level families and full benchmark suites.

Generation is a pure function of ``(family, seed, config)``; a suite derives one
seed per scene from the suite seed, so scenes can be built in any order or in
parallel and still come out identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    AGENT_RADIUS,
    FAMILIES,
    AudioCategory,
    AudioSourceSpec,
    Exit,
    Family,
    GameObject,
    Item,
    ItemKind,
    Lock,
    ObjectKind,
    Pose,
    PropChainSpec,
    PropHop,
    Reveal,
    RoomGeometry,
    SceneSpec,
    Side,
    TransientClue,
    Vec2,
    Wall,
    dumps_scene,
    validate_scene,
)

# mean objects per scene for each family in the reference benchmark
TARGET_OBJECT_COUNTS = {
    Family.D1: 13.82,
    Family.D2: 13.73,
    Family.D3: 16.91,
    Family.D2M: 17.09,
    Family.D3M: 17.45,
    Family.D2T: 14.82,
}
MIN_OBJECTS = 8
TRANSIENT_WINDOW = 20.0
TRIGGER_PLAY_DURATION = 5.0
DISTRACTOR_MIN_SEPARATION = 3.0

DECOY_CATALOG = (
    "chair", "table", "bookshelf", "lamp", "sofa", "plant", "vase", "clock", "rug",
    "cabinet", "painting", "mirror", "bed", "desk", "stool", "trash can", "fridge",
    "microwave", "television", "guitar", "cushion", "bench", "coat rack", "globe",
)

_FAMILY_CODE = {f: i for i, f in enumerate(FAMILIES)}


class GenerationError(RuntimeError):
    def __init__(self, family: Family, seed: int, what: str):
        super().__init__(f"could not place {what} for {family.value} (seed={seed})")
        self.family = family
        self.seed = seed


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    scenes_per_family: int = 11
    families: tuple[Family, ...] = FAMILIES
    target_object_counts: dict = field(default_factory=lambda: dict(TARGET_OBJECT_COUNTS))
    room_size: tuple[float, float] = (10.0, 10.0)
    min_spacing: float = 1.0
    min_start_distance: float = 5.0
    ambient_audio: bool = True
    interior_walls: int = 0
    max_tries: int = 2000

    def __post_init__(self):
        if self.scenes_per_family <= 0:
            raise ValueError("scenes_per_family must be positive")
        if not self.min_spacing > 2 * AGENT_RADIUS:
            raise ValueError("min_spacing must exceed twice the agent radius")
        if any(v <= 0 for v in self.target_object_counts.values()):
            raise ValueError("object count targets must be positive")


def _round(v: float) -> float:
    return round(float(v), 2)


def _password(rng: np.random.Generator, taken: set[str]) -> str:
    while True:
        p = f"{int(rng.integers(0, 10000)):04d}"
        if p not in taken:
            taken.add(p)
            return p


def _seg_point_distance(w: Wall, p: Vec2) -> float:
    x = min(max(p.x, min(w.x0, w.x1)), max(w.x0, w.x1))
    y = min(max(p.y, min(w.y0, w.y1)), max(w.y0, w.y1))
    return math.hypot(p.x - x, p.y - y)


class _Placer:
    def __init__(self, family: Family, seed: int, rng: np.random.Generator, cfg: GenConfig,
                 walls: tuple[Wall, ...]):
        self.family, self.seed, self.rng, self.cfg, self.walls = family, seed, rng, cfg, walls
        self.width, self.depth = cfg.room_size
        self.taken: list[Vec2] = []

    def _free(self, p: Vec2, spacing: float) -> bool:
        if any(p.distance_to(q) < spacing for q in self.taken):
            return False
        return all(_seg_point_distance(w, p) >= 2 * AGENT_RADIUS for w in self.walls)

    def interior(self, what: str, margin: float = 0.8, spacing: float | None = None,
                 accept=None, reserve: bool = True) -> Vec2:
        spacing = self.cfg.min_spacing if spacing is None else spacing
        for _ in range(self.cfg.max_tries):
            p = Vec2(_round(self.rng.uniform(margin, self.width - margin)),
                     _round(self.rng.uniform(margin, self.depth - margin)))
            if self._free(p, spacing) and (accept is None or accept(p)):
                if reserve:
                    self.taken.append(p)
                return p
        raise GenerationError(self.family, self.seed, what)

    def on_boundary(self, what: str, side: Side | None = None) -> tuple[Vec2, Side]:
        for _ in range(self.cfg.max_tries):
            s = side if side is not None else Side(("N", "E", "S", "W")[int(self.rng.integers(4))])
            along = self.width if s in (Side.N, Side.S) else self.depth
            t = _round(self.rng.uniform(1.0, along - 1.0))
            p = {Side.N: Vec2(t, self.depth), Side.S: Vec2(t, 0.0),
                 Side.E: Vec2(self.width, t), Side.W: Vec2(0.0, t)}[s]
            if self._free(p, self.cfg.min_spacing):
                self.taken.append(p)
                return p, s
        raise GenerationError(self.family, self.seed, what)


def _interior_walls(rng: np.random.Generator, cfg: GenConfig) -> tuple[Wall, ...]:
    width, depth = cfg.room_size
    walls = []
    for _ in range(cfg.interior_walls):
        length = float(rng.uniform(2.0, 3.5))
        if rng.integers(2):
            x = _round(rng.uniform(2.5, width - 2.5))
            y0 = _round(rng.uniform(1.5, depth - 1.5 - length))
            walls.append(Wall(x, y0, x, _round(y0 + length)))
        else:
            y = _round(rng.uniform(2.5, depth - 2.5))
            x0 = _round(rng.uniform(1.5, width - 1.5 - length))
            walls.append(Wall(x0, y, _round(x0 + length), y))
    return tuple(walls)


def required_object_count(family: Family) -> int:
    n = {1: 1, 2: 2, 3: 3}[family.base]
    if family.misleading:
        n += 1
    if family.timed:
        n += 1
    return n


def sample_object_count(family: Family, rng: np.random.Generator, cfg: GenConfig) -> int:
    target = cfg.target_object_counts[family]
    return max(MIN_OBJECTS, required_object_count(family), int(rng.poisson(target)))


def generate_scene(family: Family | str, seed: int, config: GenConfig | None = None, *,
                   object_count: int | None = None, scene_id: str | None = None) -> SceneSpec:
    """Build one validated scene of ``family`` deterministically from ``seed``."""
    family = Family(family)
    cfg = config or GenConfig()
    rng = np.random.default_rng([int(seed), _FAMILY_CODE[family], 0x5EED])
    width, depth = cfg.room_size
    if object_count is None:
        object_count = sample_object_count(family, rng, cfg)
    object_count = max(object_count, required_object_count(family))
    walls = _interior_walls(rng, cfg)
    place = _Placer(family, seed, rng, cfg, walls)
    passwords: set[str] = set()
    objects: list[GameObject] = []
    items: list[Item] = []
    hops: list[PropHop] = []
    clue = None

    door_pos, side = place.on_boundary("door")
    ambient = AudioSourceSpec(AudioCategory.AMBIENT, math.hypot(width, depth),
                              "wind blowing outside the door") if cfg.ambient_audio else None

    if family.base == 1:
        door = GameObject("door", ObjectKind.DOOR, door_pos, "door", True, Lock.none(), (), ambient)
        objects.append(door)
    else:
        rec_pos = place.interior("recorder")
        code = _password(rng, passwords)
        if family.timed:
            disp_pos, _ = place.on_boundary("wall display")
            transcript = ("When this message ends, the password for the door will appear on the "
                          "wall display for a short time. Find it before it disappears.")
            clue = TransientClue("display", TRANSIENT_WINDOW, f"The password is {code}.", "recorder")
            objects.append(GameObject("display", ObjectKind.WALL_DISPLAY, disp_pos, "wall display"))
            hops.append(PropHop(Reveal.TIMED, "recorder", code))
            door_lock = Lock.needs_password(code)
        elif family.base == 2:
            transcript = f"The password for the door is {code}."
            hops.append(PropHop(Reveal.AUDITORY, "recorder", code))
            door_lock = Lock.needs_password(code)
        else:
            transcript = f"The password for the box is {code}."
            box_pos = place.interior("box")
            key = Item("key_1", "brass key", "A small brass key. It looks like it fits the door.",
                       ItemKind.KEY)
            items.append(key)
            objects.append(GameObject("box", ObjectKind.BOX, box_pos, "box", True,
                                      Lock.needs_password(code), (key.id,)))
            hops.append(PropHop(Reveal.AUDITORY, "recorder", code))
            hops.append(PropHop(Reveal.VISUAL, "box", key.id))
            door_lock = Lock.needs_key(key.id)
        objects.insert(0, GameObject("door", ObjectKind.DOOR, door_pos, "door", True, door_lock, (), ambient))
        objects.append(GameObject(
            "recorder", ObjectKind.RECORDER, rec_pos, "recorder",
            audio=AudioSourceSpec(AudioCategory.TRIGGER_CLUE, 5.0, transcript, TRIGGER_PLAY_DURATION)))
        if family.misleading:
            fake = _password(rng, passwords)
            dis_pos = place.interior(
                "distractor", accept=lambda p: p.distance_to(rec_pos) >= DISTRACTOR_MIN_SEPARATION)
            objects.append(GameObject(
                "distractor", ObjectKind.DISTRACTOR, dis_pos, "radio",
                audio=AudioSourceSpec(AudioCategory.TRIGGER_MISLEADING, 5.0,
                                      f"Remember the numbers {fake}.", TRIGGER_PLAY_DURATION)))

    for i in range(object_count - len(objects)):
        name = DECOY_CATALOG[int(rng.integers(len(DECOY_CATALOG)))]
        objects.append(GameObject(f"decoy_{i:02d}", ObjectKind.DECOY, place.interior("decoy"), name))

    start = place.interior(
        "start", margin=1.0, spacing=0.5, reserve=False,
        accept=lambda p: p.distance_to(door_pos) >= cfg.min_start_distance)
    start_pose = Pose(start, round(float(rng.uniform(0.0, 360.0)), 1) % 360.0, 0.0)

    scene = SceneSpec(
        id=scene_id or f"{family.value}-s{seed}",
        family=family,
        geometry=RoomGeometry(width, depth, Exit(door_pos, side), walls),
        objects=tuple(objects),
        prop_chain=PropChainSpec(tuple(hops)),
        step_limit=family.step_limit,
        seed=int(seed),
        start_pose=start_pose,
        items=tuple(items),
        transient_clue=clue,
    )
    report = validate_scene(scene)
    if not report.ok:
        raise GenerationError(family, seed, "a valid scene: " + "; ".join(report.violations))
    return scene


def _allocate_counts(family: Family, n: int, cfg: GenConfig) -> list[int]:
    """Per-scene object counts: Poisson jitter, then nudged so the total hits the target mean."""
    rng = np.random.default_rng([int(cfg.seed), _FAMILY_CODE[family], 0xC0DE])
    floor = max(MIN_OBJECTS, required_object_count(family))
    target = cfg.target_object_counts[family]
    counts = [max(floor, int(c)) for c in rng.poisson(target, size=n)]
    total = int(round(target * n))
    while sum(counts) != total:
        i = int(rng.integers(n))
        if sum(counts) < total:
            counts[i] += 1
        elif counts[i] > floor:
            counts[i] -= 1
    return counts


def scene_seed(suite_seed: int, family: Family, index: int) -> int:
    return int(suite_seed) * 10_000 + _FAMILY_CODE[family] * 100 + index


@dataclass
class Suite:
    scenes: list[SceneSpec]
    manifest: dict


def generate_suite(config: GenConfig | None = None) -> Suite:
    """All scenes for ``config.families`` plus a manifest of ids, seeds and counts."""
    cfg = config or GenConfig()
    scenes: list[SceneSpec] = []
    entries = []
    families = {}
    for family in cfg.families:
        family = Family(family)
        counts = _allocate_counts(family, cfg.scenes_per_family, cfg)
        fam_scenes = []
        for i, count in enumerate(counts):
            seed = scene_seed(cfg.seed, family, i)
            sc = generate_scene(family, seed, cfg, object_count=count,
                                scene_id=f"{family.value}-{i:02d}")
            fam_scenes.append(sc)
            entries.append({"id": sc.id, "family": family.value, "seed": seed,
                            "object_count": len(sc.objects), "file": f"{sc.id}.json"})
        scenes.extend(fam_scenes)
        total = sum(len(s.objects) for s in fam_scenes)
        families[family.value] = {"scenes": len(fam_scenes), "total_objects": total,
                                  "mean_objects": round(total / len(fam_scenes), 2)}
    cfg_dict = asdict(cfg)
    cfg_dict["families"] = [Family(f).value for f in cfg.families]
    cfg_dict["target_object_counts"] = {Family(k).value: v for k, v in cfg.target_object_counts.items()}
    cfg_dict["room_size"] = list(cfg.room_size)
    manifest = {
        "seed": cfg.seed,
        "config": cfg_dict,
        "scenes": entries,
        "families": families,
        "total_scenes": len(scenes),
        "total_objects": sum(f["total_objects"] for f in families.values()),
    }
    return Suite(scenes, manifest)


def write_suite(suite: Suite, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for sc in suite.scenes:
        (out / f"{sc.id}.json").write_text(dumps_scene(sc), encoding="utf-8")
    path = out / "manifest.json"
    path.write_text(json.dumps(suite.manifest, indent=2) + "\n", encoding="utf-8")
    return path


def load_suite(suite_dir: str | Path) -> tuple[list[SceneSpec], dict]:
    from .core import load_scene

    d = Path(suite_dir)
    manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    return [load_scene(d / e["file"]) for e in manifest["scenes"]], manifest
