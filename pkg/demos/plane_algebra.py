"""
Slanted tile hypotheses
=======================

A tile hypothesis carries a disparity at the tile centre plus two slopes.
This walks through expanding one hypothesis to pixels, handing it to the next
finer level, and scoring it against a pair of feature maps.
"""

import numpy as np

from tilestereo.autodiff import Tensor, precision
from tilestereo.propagation import expand_map, expand_plane, upsample2x, warp_cost

# %% expanding a plane over a 4x4 tile
# offsets are measured from the tile centre, (i - 1.5) along x and (j - 1.5) along y;
# the patch is indexed [i, j], so it is the transpose of an image-layout tile
print(expand_plane(10.0, 0.5, -0.25, 4))

with precision(np.float64):
    # %% the same plane as a 1x1 hypothesis map: 16 channels, only d, dx, dy set (image layout)
    h = np.zeros((1, 16, 1, 1))
    h[0, :3, 0, 0] = (10.0, 0.5, -0.25)
    print(expand_map(Tensor(h), 4).data[0, 0])

    # %% handing over to the next finer level
    # each tile becomes four children; disparity doubles because the finer level
    # has twice the resolution, and the children sit at +-1 finer pixel
    child = upsample2x(Tensor(h)).data
    print("child centre disparities\n", child[0, 0])
    print("child slopes unchanged:", np.allclose(child[0, 1], 0.5), np.allclose(child[0, 2], -0.25))

    # the children describe the same surface as the parent, doubled
    fine = expand_map(Tensor(child), 4).data[0, 0]
    j, i = np.mgrid[0:8, 0:8]
    print("max deviation from 2d + (i-3.5)dx + (j-3.5)dy:",
          np.abs(fine - (20.0 + (i - 3.5) * 0.5 + (j - 3.5) * -0.25)).max())

    # %% matching cost of a disparity map
    rng = np.random.default_rng(0)
    right = rng.normal(size=(1, 8, 4, 32))
    left = np.roll(right, 3, axis=-1)  # left pixel x matches right pixel x - 3
    for d in (2.0, 2.5, 3.0, 3.5):
        cost = warp_cost(Tensor(left), Tensor(right), Tensor(np.full((1, 1, 4, 32), d))).data
        print("d=%.1f mean cost (away from the border) %.3f" % (d, cost[..., 4:].mean()))
