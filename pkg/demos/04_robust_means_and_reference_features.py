"""
Robust means: picking reference features despite outliers
=========================================================

A tracked point is observed by many cameras, and each observation carries
a feature vector. Some observations are wrong (occlusions, repeated
texture), so the track's representative feature is computed robustly:
an iteratively reweighted mean under a Cauchy loss, followed by picking
the actual track member closest to that mean.
"""

import numpy as np

from domecal.robust import RobustLoss, reference_feature, rho, robust_mean

# 2-D toy features: a tight inlier cluster plus gross outliers
rng = np.random.default_rng(7)
inliers = np.array([1.0, 2.0]) + 0.05 * rng.normal(size=(12, 2))
outliers = np.array([[8.0, -5.0], [9.5, 7.0], [-6.0, 6.5]])
vectors = np.vstack([inliers, outliers])

arithmetic = vectors.mean(axis=0)
robust = robust_mean(vectors)
print(f"true cluster center:  [1.00 2.00]")
print(f"arithmetic mean:      [{arithmetic[0]:.2f} {arithmetic[1]:.2f}]"
      "   <- dragged by the outliers")
print(f"robust mean:          [{robust[0]:.2f} {robust[1]:.2f}]")

# the loss behind the reweighting: quadratic near zero, logarithmic far
# out, so distant points lose their influence
loss = RobustLoss()          # cauchy with scale 0.25
print(f"\nloss kind = {loss.kind!r}, scale = {loss.scale}")
for r in (0.1, 0.5, 2.0, 10.0):
    value, slope = rho(loss, r)
    print(f"  rho({r:4.1f}) = {value:7.4f}   (plain square would be {r*r:7.2f})")

# each reweighting pass can only lower the robust objective
def objective(center):
    return sum(rho(loss, float(np.linalg.norm(p - center)))[0] for p in vectors)

print(f"\nobjective at arithmetic mean: {objective(arithmetic):.6f}")
for k in (1, 2, 4, 8):
    center = robust_mean(vectors, max_iterations=k)
    print(f"objective after {k} reweighting pass(es): {objective(center):.6f}")

# the reference feature is a real member of the track, not the mean:
# downstream cost maps need a feature that actually occurs in some view
index, member = reference_feature(vectors)
print(f"\nreference member index: {index} (an inlier: {index < len(inliers)})")
print(f"reference vector:       [{member[0]:.3f} {member[1]:.3f}]")
print(f"distance to robust mean: {np.linalg.norm(member - robust):.4f}")
