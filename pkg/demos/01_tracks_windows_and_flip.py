# %% [markdown]
# # Feature tracks, windows and the flipped stream
#
# A face track is a `T x D` matrix of per-frame encoder features plus one
# label per frame. The classifier never sees a whole track: each frame is
# predicted from the window of `T_w` frames centred on it, padded at the
# track ends by repeating the first/last frame.

# %%
import numpy as np

from lamlstm.data import (
    FeatureTrack,
    SyntheticSpec,
    flip_stream,
    generate_synthetic,
    make_windows,
    read_feature_track,
    write_feature_track,
)

track = FeatureTrack("demo", np.arange(12, dtype=float).reshape(4, 3), [0, 0, 1, 1])
for w in make_windows(track, 3):
    print(w.center_frame, w.center_label, w.window[:, 0])

# %% [markdown]
# Without a real image encoder, "horizontal flip" is modelled in feature
# space as reversing each frame's coordinates. It is an involution and
# leaves labels alone.

# %%
flipped = flip_stream(track)
print(flipped.features[0], "<-", track.features[0])
assert np.array_equal(flipped.features[:, ::-1], track.features)

# %% [markdown]
# Tracks serialize to a small binary format (features stored as float32).

# %%
import tempfile
from pathlib import Path

with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "demo.lamf"
    write_feature_track(track, path)
    print(path.stat().st_size, "bytes")
    print(read_feature_track(path) == track)

# %% [markdown]
# The synthetic generator drives labels with a two-state Markov chain, so
# looking / not-looking segments persist for about `1 / transition_prob`
# frames, and blurs features over time.

# %%
spec = SyntheticSpec(n_tracks=4, frames_per_track=60, feature_dim=8, transition_prob=0.1)
tracks = generate_synthetic(spec, seed=0)
for tr in tracks[::2]:
    print(tr.track_id, tr.split, "".join(map(str, tr.labels)))
