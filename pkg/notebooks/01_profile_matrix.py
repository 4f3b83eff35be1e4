"""
From a point cloud to a profile matrix
======================================

A turned part is sampled from above, cut into slabs along y, and every
slab's profile z = f(x) becomes one row of a matrix.  Because the part is
axisymmetric, the rows look alike: this is what makes the matrix low rank.
"""

# %%
import warnings

import numpy as np

from profile_rpca import synth
from profile_rpca.geometry import normalize_to_unit_bbox
from profile_rpca.profiles import build_profile_matrix

# %% [markdown]
# Part1 is two cylinders joined by a shoulder.  The generator samples the
# surface uniformly by area, keeping only what a scanner above the part sees.

# %%
cloud = synth.generate_sample("part1", "hole", seed=0, midrange=True)
print(len(cloud), "points, bounding box", np.round(cloud.bbox.extent, 3))
print("labelled anomaly points:", int(cloud.labels.sum()))

# %%
# Normalizing puts the box corner at the origin and the longest edge at 1.
norm, scale, offset = normalize_to_unit_bbox(cloud)
print("normalized extent", np.round(norm.bbox.extent, 4), "scale", round(scale, 5))

# %% [markdown]
# 100 slabs along y; slabs spanning less than 80% of the x range (the ones
# that only cross the wide head) are dropped.  The rest are fitted with
# cubic least-squares B-splines and resampled on a common x grid.

# %%
with warnings.catch_warnings(record=True) as caught:
    warnings.simplefilter("always")
    matrix = build_profile_matrix(norm)
for w in caught:
    print("note:", w.message)
rep = matrix.report
print("matrix", matrix.values.shape, "from", rep["m_prime"], "slabs;",
      len(rep["dropped_short_slabs"]), "short slabs dropped")
print("common domain", np.round(rep["domain"], 4), "median fit rms", np.median(rep["fit_rms"]))

# %%
# Rows differ mostly by a height offset (the scan sees each slab at a
# different depth).  After removing each row's median the matrix is close
# to rank 2: one shape for the head, one for the shank.
centred = matrix.values - np.median(matrix.values, axis=1, keepdims=True)
sv = np.linalg.svd(centred, compute_uv=False)
print("leading singular values", np.round(sv[:6] / sv[0], 4))
