"""Curated scene + configuration corpus.

Each scenario bundles a synthetic scene with a run configuration that
reproduces one qualitative operating regime of a wearable mapping system:

  NOMINAL          rich geometry, everything healthy
  RANGE-LIMITED    a short-range depth camera inside a space that mostly
                   exceeds its range gate
  FOV-LIMITED      a narrow-window depth camera that rarely sees the ground
  DEGENERATE-WALL  an operator walking up to a blank wall and staring at it
  DUAL-RECOVERY    the wall stare with two body-worn devices: the chest
                   pipeline diverges and re-registers into the shared map

Scenes are simplified rectilinear analogues of office/lab/hall spaces; they
are labeled as analogues, not reconstructions of any real building.
The corpus is defined in code; `export_scenarios` writes the scene JSON and
config TOML pairs that ship in the repository's scenarios/ directory.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from portalio.config import RunConfig, parse_config
from portalio.sim.scene import Box, Patch, Scene
from portalio.sim.trajectory import WALL_STARE_STAND_X

REGIMES = ("NOMINAL", "RANGE-LIMITED", "FOV-LIMITED", "DEGENERATE-WALL", "DUAL-RECOVERY")


def _room_shell(sx0, sx1, sy0, sy1, z0, z1, sid0):
    """Floor, ceiling and four walls of a rectangular room, facing inward."""
    dx, dy, dz = sx1 - sx0, sy1 - sy0, z1 - z0
    return [
        Patch([sx0, sy0, z0], [dx, 0, 0], [0, dy, 0], sid0 + 0),      # floor
        Patch([sx0, sy0, z1], [dx, 0, 0], [0, dy, 0], sid0 + 1),      # ceiling
        Patch([sx0, sy0, z0], [0, dy, 0], [0, 0, dz], sid0 + 2),      # wall x-
        Patch([sx1, sy0, z0], [0, dy, 0], [0, 0, dz], sid0 + 3),      # wall x+
        Patch([sx0, sy0, z0], [dx, 0, 0], [0, 0, dz], sid0 + 4),      # wall y-
        Patch([sx0, sy1, z0], [dx, 0, 0], [0, 0, dz], sid0 + 5),      # wall y+
    ]


def office_scene() -> Scene:
    """12 x 10 x 3 office with a central column and furniture-sized clutter."""
    patches = _room_shell(-6, 6, -5, 5, 0, 3, 0)
    boxes = [
        Box([-0.4, -0.4, 0], [0.4, 0.4, 3.0], 10),     # central column
        Box([4.4, 2.9, 0], [5.4, 4.1, 1.2], 11),       # crates in the corners
        Box([-5.4, 3.0, 0], [-4.2, 4.2, 0.9], 12),
        Box([-5.2, -4.3, 0], [-4.0, -3.1, 1.5], 13),
        Box([4.2, -4.4, 0], [5.5, -3.2, 1.0], 14),
        Box([-1.2, 4.1, 0], [1.2, 4.9, 0.8], 15),      # bench along the far wall
        Box([-6.0, -1.0, 0], [-5.6, 1.0, 2.1], 16),    # shelf on the west wall
        Box([5.5, -1.2, 0], [6.0, 1.2, 2.1], 17),      # shelf on the east wall
    ]
    return Scene(boxes=boxes, patches=patches)


def lab_scene() -> Scene:
    """9 x 8 x 3 lab room; walk-loop clearance for a narrow-FoV camera."""
    patches = _room_shell(-4.5, 4.5, -4, 4, 0, 3, 0)
    boxes = [
        Box([-4.2, -3.8, 0], [-3.2, -2.8, 1.4], 10),
        Box([3.4, 3.0, 0], [4.3, 3.8, 1.1], 11),
        Box([3.5, -3.7, 0], [4.4, -2.9, 0.8], 12),
    ]
    return Scene(boxes=boxes, patches=patches)


def hall_scene() -> Scene:
    """22 m long, 12 m wide, 8 m high hall: most rays exceed a 9 m range gate."""
    return Scene(patches=_room_shell(-1.5, 20.5, -6, 6, 0, 8, 0))


def stare_hall_scene() -> Scene:
    """Large hall with one near wall and path-flanking pillars.

    The wall-stare path walks +x from the origin and stands at
    x = WALL_STARE_STAND_X staring at the wall 1.2 m ahead. Pillars flank
    the first two-thirds of the path; side walls are beyond sensor range.
    """
    wall_x = WALL_STARE_STAND_X + 1.2
    x0, x1 = -35.0, wall_x
    y0, y1 = -45.0, 45.0
    h = 12.0
    patches = [
        Patch([x0, y0, 0], [x1 - x0, 0, 0], [0, y1 - y0, 0], 0),   # floor
        Patch([x0, y0, h], [x1 - x0, 0, 0], [0, y1 - y0, 0], 1),   # ceiling
        Patch([wall_x, y0, 0], [0, y1 - y0, 0], [0, 0, h], 2),     # stare wall
        Patch([x0, y0, 0], [0, y1 - y0, 0], [0, 0, h], 3),         # far back wall
    ]
    boxes = []
    sid = 10
    for bx in (1.5, 3.0, 4.5):
        for by in (-4.0, 4.0):
            boxes.append(Box([bx - 0.4, by - 0.4, 0], [bx + 0.4, by + 0.4, 1.6], sid))
            sid += 1
    return Scene(boxes=boxes, patches=patches)


@dataclass(frozen=True)
class Scenario:
    name: str
    regime: str
    description: str
    scene_name: str
    config_text: str

    def scene(self) -> Scene:
        return _SCENES[self.scene_name]()

    def config(self) -> RunConfig:
        return parse_config(self.config_text)


_SCENES = {
    "office": office_scene,
    "lab": lab_scene,
    "hall": hall_scene,
    "stare-hall": stare_hall_scene,
}


def _cfg(body: str, scene_name: str) -> str:
    return f'[sim]\nscene = "scenes/{scene_name}.json"\n' + body


_CATALOG = [
    Scenario(
        name="office-loop",
        regime="NOMINAL",
        description="60 s walking loop in a cluttered office, one helmet-tilted 360deg scanner",
        scene_name="office",
        config_text=_cfg(
            """scenario = "walk-loop"
duration = 60.0
seed = 7
range_noise_sigma = 0.02
imu_noise = true

[[sim.sensors]]
preset = "mid360"
mount = "helmet-tilted"
""",
            "office",
        ),
    ),
    Scenario(
        name="dual-nominal",
        regime="NOMINAL",
        description="30 s office loop with shoulder + chest devices sharing one map",
        scene_name="office",
        config_text=_cfg(
            """scenario = "walk-loop"
duration = 30.0
seed = 7
range_noise_sigma = 0.02
imu_noise = true

[[sim.sensors]]
preset = "mid360"
mount = "shoulder"
points_per_second = 100000

[[sim.sensors]]
preset = "mid360"
mount = "chest-forward"
points_per_second = 100000

[filter]
degeneracy_min_eig = 3.0
""",
            "office",
        ),
    ),
    Scenario(
        name="hall-l515",
        regime="RANGE-LIMITED",
        description="short-range depth camera walking down a hall that exceeds its 9 m gate",
        scene_name="hall",
        config_text=_cfg(
            """scenario = "corridor"
duration = 18.0
seed = 3
range_noise_sigma = 0.02
imu_noise = true

[[sim.sensors]]
preset = "l515"
mount = "helmet-top"
""",
            "hall",
        ),
    ),
    Scenario(
        name="lab-l515",
        regime="FOV-LIMITED",
        description="narrow-window depth camera in a lab loop; the ground plane is rarely seen",
        scene_name="lab",
        config_text=_cfg(
            """scenario = "walk-loop"
duration = 20.0
seed = 5
range_noise_sigma = 0.02
imu_noise = true

[[sim.sensors]]
preset = "l515"
mount = "helmet-top"
""",
            "lab",
        ),
    ),
    Scenario(
        name="wall-stare",
        regime="DEGENERATE-WALL",
        description="chest device (primary) stares at a blank wall; shoulder device stays healthy",
        scene_name="stare-hall",
        config_text=_cfg(
            """scenario = "wall-stare"
duration = 22.0
seed = 2
range_noise_sigma = 0.02
imu_noise = true

[[sim.sensors]]
preset = "mid360"
mount = "chest-forward"
points_per_second = 80000

[[sim.sensors]]
preset = "mid360"
mount = "shoulder"
points_per_second = 80000

[sim.vio]
keyframe_period = 0.5
trans_sigma = 0.01
rot_sigma_deg = 0.2
""",
            "stare-hall",
        ),
    ),
    Scenario(
        name="dual-recovery",
        regime="DUAL-RECOVERY",
        description="wall stare with both devices: chest diverges, re-registers into the shared map",
        scene_name="stare-hall",
        config_text=_cfg(
            """scenario = "wall-stare"
duration = 24.0
seed = 11
range_noise_sigma = 0.02
imu_noise = true

[[sim.sensors]]
preset = "mid360"
mount = "chest-forward"
points_per_second = 80000

[[sim.sensors]]
preset = "mid360"
mount = "shoulder"
points_per_second = 80000

[sim.vio]
keyframe_period = 0.5
trans_sigma = 0.01
rot_sigma_deg = 0.2
""",
            "stare-hall",
        ),
    ),
]


def list_scenarios() -> list[str]:
    """Stable catalog order."""
    return [s.name for s in _CATALOG]


def load_scenario(name: str) -> Scenario:
    for s in _CATALOG:
        if s.name == name:
            return s
    raise KeyError(f"unknown scenario {name!r}; available: {', '.join(list_scenarios())}")


def all_scenarios() -> list[Scenario]:
    return list(_CATALOG)


def export_scenarios(out_dir) -> list[Path]:
    """Write the catalog as scene-JSON + config-TOML pairs."""
    out = Path(out_dir)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    written = []
    for scene_name, builder in _SCENES.items():
        p = out / "scenes" / f"{scene_name}.json"
        builder().save(p)
        written.append(p)
    for sc in _CATALOG:
        p = out / f"{sc.name}.toml"
        p.write_text(sc.config_text, encoding="utf-8")
        written.append(p)
    return written
