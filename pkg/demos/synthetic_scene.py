"""
A synthetic stereo pair, up close
=================================

Builds a random piecewise-planar scene, checks that the right image really is
the left image shifted by the ground-truth disparity, and writes the pair and
its disparity map to ``demo_out/``.

Run with ``python demos/synthetic_scene.py``.
"""

from pathlib import Path

import numpy as np

from tilestereo.cli import colorize
from tilestereo.data import SceneConfig, constant_scene, gen_scene, photometric_error, write_image, write_pfm

out = Path("demo_out")
out.mkdir(exist_ok=True)

# %% a scene with three slanted foreground planes over a background plane
scene = gen_scene(SceneConfig(height=64, width=128, num_segments=3, seed=7))
print("image extent", scene.shape)
print("disparity range %.2f .. %.2f" % (scene.disparity[scene.valid].min(), scene.disparity[scene.valid].max()))
print("occluded / invalid pixels", int((~scene.valid).sum()))

# slopes come straight from the generating planes, so they are exact
print("dx range %.3f .. %.3f" % (scene.dx.min(), scene.dx.max()))
print("dy range %.3f .. %.3f" % (scene.dy.min(), scene.dy.max()))

# %% photometric consistency
# with an integer constant disparity, sampling the right image at x - d
# reproduces the left image to float precision
flat = constant_scene(64, 128, disparity=5.0, seed=1)
print("photometric error, constant d=5:", photometric_error(flat))

# %% write the pair for inspection
write_image(out / "left.pgm", scene.left)
write_image(out / "right.pgm", scene.right)
write_pfm(out / "disp.pfm", np.where(scene.valid, scene.disparity, np.inf).astype(np.float32))
write_image(out / "disp.ppm", colorize(scene.disparity, 24.0))
print("wrote", sorted(p.name for p in out.iterdir()))
