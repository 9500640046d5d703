# %% [markdown]
# # Matching detected hands to the body skeleton
#
# Hand detections arrive unlabelled and may include other people's hands.
# Each frame keeps at most one hand per wrist, within a pixel threshold of
# the projected body wrist; gaps are filled from the last observation.

# %%
import sys
import tempfile
from pathlib import Path

import numpy as np

from skelfusion.handprep import HandSelectConfig, crop_window, prepare_hands, select_hand_indices
from skelfusion.ingest import generate_synthetic_dataset, load_clip, project_points

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="skelfusion_demo_"))
manifest = generate_synthetic_dataset({"num_classes": 4, "clips_per_class": 3, "T": 32, "seed": 1}, out / "data")
clip = load_clip(manifest, "c03_001")
intr = manifest.intrinsics[clip.view_id]

# %% [markdown]
# One frame in detail: wrist distances and the chosen assignment.

# %%
body_2d = project_points(clip.body_array(), intr)
li, ri = clip.layout.left_wrist_idx, clip.layout.right_wrist_idx
t = 5
dets = clip.raw_detections[t]
for i, d in enumerate(dets):
    dl = np.hypot(*(d.coords_2d[0] - body_2d[t, li]))
    dr = np.hypot(*(d.coords_2d[0] - body_2d[t, ri]))
    print(f"detection {i}: score {d.score:.2f}  to left wrist {dl:6.1f}px  to right wrist {dr:6.1f}px")
print("chosen:", select_hand_indices(dets, body_2d[t, li], body_2d[t, ri]))
print("crop around right wrist:", crop_window((1920, 1080), body_2d[t, ri]))

# %% [markdown]
# Over a whole clip, a tighter threshold trades observed hands for filled ones.

# %%
for thr in (0.0, 25.0, 75.0, 150.0, 400.0):
    _, stats = prepare_hands(clip, HandSelectConfig(wrist_dist_threshold=thr), dims=3, intrinsics=intr)
    print(f"threshold {thr:5.0f}px: {stats.as_dict()}")
