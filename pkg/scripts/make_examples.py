#!/usr/bin/env python3
"""
Write benchmark inputs: clutter PGM images for `bench-lsd` and example
experiment specs for `simulate`.

Images: 20 scenes of 752x480 with 40 anti-aliased segments of 10-300 px,
every fourth one over a textured background.

Specs:
- smoke.json     small noiseless scene, asserts near-zero ATE
- window.json    10 keyframes, 100 points, 30 lines, 1 px noise, mean ATE under 1 cm
- ablation.json  20 seeds, 30 points + 30 lines (endpoint residual) against points only
"""
import json
import sys
from pathlib import Path

from app.services.image_service import save_pgm, synthetic_line_image

N_IMAGES = 20

SPECS = {
    "smoke.json": {
        "scene": {"n_keyframes": 6, "n_points": 40, "n_lines": 10},
        "noise": {"pixel_sigma": 0.0, "init_pose_sigma_t": 0.0, "init_pose_sigma_r_deg": 0.0},
        "seeds": [1],
        "assertions": {"max_ate_rmse": 1e-6},
    },
    "window.json": {
        "scene": {"n_keyframes": 10, "n_points": 100, "n_lines": 30},
        "noise": {"pixel_sigma": 1.0, "init_pose_sigma_t": 0.05, "init_pose_sigma_r_deg": 2.0},
        "seeds": list(range(1, 21)),
        "assertions": {"max_mean_ate_rmse": 0.01},
    },
    "ablation.json": {
        "scene": {"n_keyframes": 20, "n_points": 30, "n_lines": 30},
        "noise": {"pixel_sigma": 1.0},
        "solver": {"line_residual": "endpoints"},
        "ablation": {"modes": ["lines_on", "lines_off"]},
        "seeds": list(range(1, 21)),
        "assertions": {"min_line_improvement_pct": 5.0, "min_line_better_fraction": 0.75},
    },
}


def write_images(out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for seed in range(N_IMAGES):
        img, segments = synthetic_line_image(seed, textured=seed % 4 == 3)
        (out_dir / f"clutter_{seed:02d}.pgm").write_bytes(save_pgm(img))
        print(f"  clutter_{seed:02d}.pgm: {len(segments)} segments")


def write_specs(out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, spec in SPECS.items():
        (out_dir / name).write_text(json.dumps(spec, indent=2) + "\n")
        print(f"  {name}")


if __name__ == "__main__":
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("data")
    print(f"Writing clutter images to {root / 'clutter'}")
    write_images(root / "clutter")
    print(f"Writing experiment specs to {root / 'specs'}")
    write_specs(root / "specs")
    print("Done.")
