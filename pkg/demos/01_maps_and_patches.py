"""
Occupancy maps, obstacle contours, and ego-centric patches
==========================================================

Builds a synthetic corridor map, inspects the world/pixel mapping, extracts
the obstacle contour cells used as negative-sampling anchors, and cuts the
rotated local patch a map-conditioned predictor sees. Writes a bare-map SVG
next to this script under out/.
"""

from pathlib import Path

import numpy as np

from colav.synth import SceneSpec, generate_scene
from colav.viz import render_svg

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

# 1. generate a corridor: walls on the long edges plus interior pillars
spec = SceneSpec(
    layout="corridor",
    width_m=24.0,
    height_m=10.0,
    meters_per_pixel=0.1,
    density=0.1,
    n_pedestrians=4,
    seed=3,
    name="demo",
)
occ, tracks = generate_scene(spec)
print(f"map: {occ.height} rows x {occ.width} cols, 1 cell = {1.0 / occ.h[0, 0]:.2f} m")
print(f"walkable fraction: {occ.cells.mean():.2f}")

# 2. the homography maps world meters to pixel coordinates (column, row)
p = np.array([12.0, 5.0])
pix = occ.world_to_pixel(p[None, :])[0]
print(f"world {p} m -> pixel (col={pix[0]:.1f}, row={pix[1]:.1f}), "
      f"obstacle={bool(occ.is_obstacle(p[None, :])[0])}")

# 3. contours: walkable-adjacent obstacle cells, returned as world centers
contours = occ.extract_contours()
print(f"{contours.shape[0]} contour cells ring the obstacles")
d = np.linalg.norm(contours - p, axis=1)
print(f"nearest contour to {p}: {contours[d.argmin()]} at {d.min():.2f} m")

# 4. a patch is the local map resampled into the pedestrian's frame:
#    row 0 is the far-forward edge, so a wall ahead lands in the top rows.
#    Standing 2 m from the bottom wall, facing it puts the wall in the
#    front half; facing away leaves the front clear.
center = np.array([12.0, 2.0])
for heading, label in [(-np.pi / 2, "toward the wall"), (np.pi / 2, "away from it")]:
    patch = occ.extract_patch(center, heading, size=16, cell_size=0.25, forward_offset=2.0)
    g = patch.grid
    print(f"facing {label}: obstacle fraction {1.0 - g.mean():.2f} "
          f"(front half {1.0 - g[:8].mean():.2f}, back half {1.0 - g[8:].mean():.2f})")

# 5. render the map (deterministic SVG, byte-stable across runs)
svg = render_svg(occ)
path = out_dir / "corridor_map.svg"
path.write_text(svg)
print(f"wrote {path}")
