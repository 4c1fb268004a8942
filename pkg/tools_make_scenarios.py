"""Regenerate the bundled scenario JSON files."""
import pathlib

from vegnav.scenario import ScenarioSpec, VegBlob, save_scenario
from vegnav.perception import CameraModel, NoiseModel

OUT = pathlib.Path(__file__).parent / "src" / "vegnav" / "scenarios"


def border(w, h, t=0.2):
    return [
        VegBlob("tree", "rect", rect=(0.0, 0.0, w, t), height=3.0),
        VegBlob("tree", "rect", rect=(0.0, h - t, w, h), height=3.0),
        VegBlob("tree", "rect", rect=(0.0, 0.0, t, h), height=3.0),
        VegBlob("tree", "rect", rect=(w - t, 0.0, w, h), height=3.0),
    ]


def scenario1():
    # sparse tall grass patches and trees; free routes exist
    W, H = 16.0, 12.0
    blobs = border(W, H) + [
        VegBlob("sparse_grass", "rect", rect=(4.0, 5.2, 5.6, 6.8), height=0.45, drag=0.004, density=0.7),
        VegBlob("sparse_grass", "rect", rect=(7.2, 4.6, 9.0, 6.2), height=0.45, drag=0.004, density=0.7),
        VegBlob("sparse_grass", "rect", rect=(10.4, 5.8, 12.0, 7.4), height=0.45, drag=0.004, density=0.7),
        VegBlob("tree", "rect", rect=(5.8, 8.2, 7.0, 9.4), height=3.0),
        VegBlob("tree", "rect", rect=(8.6, 2.2, 9.8, 3.4), height=3.0),
        VegBlob("tree", "rect", rect=(12.2, 8.6, 13.2, 9.6), height=3.0),
    ]
    return ScenarioSpec(
        name="scenario1", grid_width=160, grid_height=120, resolution=0.1,
        blobs=tuple(blobs), start=(2.0, 6.0, 0.0), goal=(14.0, 6.0), seed=11,
        duration=90.0, snag_rate=0.0,
        camera=CameraModel(fov_deg=100.0), noise=NoiseModel(),
    )


def scenario2():
    # a tree line broken only by a dense tall-grass gap: the robot must pass
    # through the grass to reach the goal
    W, H = 18.0, 12.0
    blobs = border(W, H) + [
        VegBlob("tree", "rect", rect=(9.0, 0.2, 9.5, 4.5), height=3.0),
        VegBlob("tree", "rect", rect=(9.0, 7.5, 9.5, 11.8), height=3.0),
        VegBlob("dense_grass", "rect", rect=(8.7, 4.5, 9.8, 7.5), height=1.5, drag=0.01),
    ]
    return ScenarioSpec(
        name="scenario2", grid_width=180, grid_height=120, resolution=0.1,
        blobs=tuple(blobs), start=(2.5, 6.0, 0.0), goal=(15.5, 6.0), seed=22,
        duration=90.0, snag_rate=0.05,
        camera=CameraModel(fov_deg=100.0), noise=NoiseModel(),
    )


def scenario3():
    # trees, bushes and dense grass in close proximity; the only way through
    # the wall is a snag-prone tall dense-grass gap
    W, H = 20.0, 14.0
    gap_lo, gap_hi = 6.8, 11.3
    line = (gap_lo + gap_hi) / 2
    blobs = border(W, H) + [
        VegBlob("tree", "rect", rect=(9.0, 0.2, 10.6, gap_lo), height=3.0),
        VegBlob("dense_grass", "rect", rect=(9.0, gap_lo, 10.6, gap_hi), height=1.6, drag=0.008),
        VegBlob("tree", "rect", rect=(9.0, gap_hi, 10.6, H - 0.2), height=3.0),
        VegBlob("bush", "rect", rect=(13.0, 10.6, 14.6, 12.1), height=0.4),
        VegBlob("bush", "rect", rect=(4.6, 4.0, 5.6, 5.0), height=0.4),
        VegBlob("bush", "rect", rect=(13.6, 5.2, 14.6, 6.2), height=0.4),
        VegBlob("sparse_grass", "rect", rect=(4.0, 10.8, 6.5, 12.6), height=0.4, drag=0.003, density=0.7),
    ]
    return ScenarioSpec(
        name="scenario3", grid_width=200, grid_height=140, resolution=0.1,
        blobs=tuple(blobs), start=(3.0, line, 0.0), goal=(17.0, line), seed=33,
        duration=120.0, snag_rate=0.08, classification_hold=2.5,
        camera=CameraModel(fov_deg=100.0), noise=NoiseModel(p_mis=0.1),
    )


def scenario4():
    # scenario 2 plus a large obstacle of a kind the classifier was never
    # trained on, standing on the route behind the grass gap
    base = scenario2()
    blobs = base.blobs + (
        VegBlob("unknown", "rect", rect=(12.3, 5.4, 13.3, 6.4), height=1.8),
    )
    return base.replace(name="scenario4", blobs=blobs, seed=44, duration=120.0)


def entrapment():
    # scripted-snag corridor used by the recovery acceptance checks
    W, H = 14.0, 8.0
    blobs = border(W, H) + [
        VegBlob("dense_grass", "rect", rect=(4.0, 1.0, 7.0, 7.0), height=1.5, drag=0.015),
    ]
    return ScenarioSpec(
        name="entrapment", grid_width=140, grid_height=80, resolution=0.1,
        blobs=tuple(blobs), start=(2.0, 4.0, 0.0), goal=(12.0, 4.0), seed=55,
        duration=120.0, snag_rate=0.0, force_snag_time=3.0,
        camera=CameraModel(fov_deg=100.0), noise=NoiseModel(),
    )


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    for fn in (scenario1, scenario2, scenario3, scenario4, entrapment):
        spec = fn()
        spec.validate()
        save_scenario(spec, OUT / f"{spec.name}.json")
        print("wrote", spec.name)
