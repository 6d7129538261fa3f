"""The synthetic face generator and its difficulty branches.

Writes a PNG contact sheet if matplotlib is installed; always prints the
landmark geometry checks.

Run:  python demos/05_synthetic_faces.py
"""
import numpy as np

from dsat.heatmaps import LandmarkSet
from dsat.metrics import norm_distance
from dsat.synthetic import DIFFICULTIES, augment, generate_sample

samples = {d: generate_sample(42, d, image_size=64) for d in DIFFICULTIES}

neutral = samples["neutral"]
print("landmarks (x, y) of the neutral face:")
names = ["l-outer", "l-inner", "r-inner", "r-outer", "l-pupil", "r-pupil",
         "nose", "m-left", "m-center", "m-right", "chin", "forehead"]
for name, (x, y) in zip(names, neutral.landmarks):
    print(f"  {name:>9s}: ({x:5.1f}, {y:5.1f})")

gt = LandmarkSet(neutral.landmarks)
print("inter-ocular distance:", round(norm_distance(gt, "inter-ocular"), 2))
print("inter-pupil distance: ", round(norm_distance(gt, "inter-pupil"), 2))
print("box diagonal:         ", round(norm_distance(gt, "diagonal"), 2))

occ = samples["occluded"]
changed = (occ.image != neutral.image).mean()
print(f"\noccluded branch changes {changed:.0%} of the pixels, landmarks unchanged:",
      np.array_equal(occ.landmarks, neutral.landmarks))

aug = augment(neutral, np.random.default_rng(3))
print("augmented copy still has", len(aug.landmarks), "landmarks in frame")

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 4, figsize=(12, 3.2))
    for ax, (label, s) in zip(axes, samples.items()):
        ax.imshow(s.image, cmap="gray", vmin=0, vmax=1)
        ax.scatter(s.landmarks[:, 0], s.landmarks[:, 1], s=12, c="red")
        ax.set_title(label)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig("synthetic_faces.png", dpi=120)
    print("wrote synthetic_faces.png")
except ImportError:
    print("matplotlib not installed; skipping the contact sheet")
