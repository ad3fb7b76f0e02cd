# %% [markdown]
# # Inference: flip TTA, ensembling and median smoothing
#
# Each test track is scored twice, once per stream. The two softmax
# probabilities are averaged (TTA), several models' scores can be averaged
# again (ensemble), and a sliding median removes isolated spikes.

# %%
from lamlstm.data import SyntheticSpec, generate_synthetic
from lamlstm.inference import ensemble_mean, median_smooth, predict_track, tta_fuse
from lamlstm.metrics import evaluate
from lamlstm.model import ModelConfig
from lamlstm.training import TrainConfig, train

# label_spike_rate makes ~10% of frames look like the other class
spec = SyntheticSpec(n_tracks=120, frames_per_track=60, feature_dim=16, label_spike_rate=0.1)
tracks = generate_synthetic(spec, seed=1)
test = [t for t in tracks if t.split == "test" and t.stream == "original"]
test_flip = {t.track_id: t for t in tracks if t.split == "test" and t.stream == "flipped"}
model_cfg = ModelConfig(input_dim=16, projected_dim=32, hidden_dim=16, window=3, head_widths=(16, 8, 8))

members = []
for seed in (0, 1):
    params, _ = train(TrainConfig(epochs=8, seed=seed), model_cfg, tracks)
    fused = [tta_fuse(predict_track(params, t), predict_track(params, test_flip[t.track_id])) for t in test]
    members.append(fused)
    print(f"model seed {seed}, TTA:", evaluate(fused, test))

ensembled = [ensemble_mean([m[i] for m in members]) for i in range(len(test))]
print("ensemble:          ", evaluate(ensembled, test))

# %% [markdown]
# A window-3 model cannot see past a spiked frame, so its scores spike too;
# the median filter removes them.

# %%
for W in (1, 3, 5, 9, 15):
    smoothed = [median_smooth(s, W) for s in ensembled]
    print(f"median window {W:2d}:", evaluate(smoothed, test))
