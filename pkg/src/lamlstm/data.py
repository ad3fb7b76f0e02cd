"""Face-track features: file format, windowing, flip stream, synthetic data.

Track file layout (little-endian)::

    b"LAMF"                 magic
    u32 version             = 1
    u32 T, u32 D            frames, feature dims
    u8 stream               0 = original, 1 = flipped
    u8 split                0 = train, 1 = val, 2 = test
    u16 n + n bytes         UTF-8 track id
    T*D float32             features, row-major
    T u8                    labels: 0, 1, or 255 (unlabeled)

A manifest is JSON lines, one ``{"track_id", "path", "flip_path"?}`` object
per track; relative paths resolve against the manifest's directory.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import Rng

MAGIC = b"LAMF"
VERSION = 1
UNLABELED = 255

STREAMS = ("original", "flipped")
SPLITS = ("train", "val", "test")

_HEADER = struct.Struct("<4sIIIBB")


class FeatureFileError(ValueError):
    pass


class BadMagicError(FeatureFileError):
    pass


class BadVersionError(FeatureFileError):
    pass


class TruncatedFileError(FeatureFileError):
    pass


class BadLabelError(FeatureFileError):
    pass


@dataclass
class FeatureTrack:
    """One face track: ``T x D`` features with per-frame labels.

    ``labels`` holds 0, 1 or :data:`UNLABELED`. ``spikes`` is only set by the
    synthetic generator and marks frames whose features were drawn from the
    opposite class; it is never serialized.
    """

    track_id: str
    features: np.ndarray
    labels: np.ndarray
    stream: str = "original"
    split: str = "train"
    spikes: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.features.ndim != 2 or min(self.features.shape) < 1:
            raise ValueError(f"features must be T x D with T, D >= 1, got {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError(
                f"track {self.track_id!r}: {self.labels.shape[0]} labels for {self.features.shape[0]} frames"
            )
        if not np.all(np.isin(self.labels, (0, 1, UNLABELED))):
            raise BadLabelError(f"track {self.track_id!r}: labels must be 0, 1 or {UNLABELED}")
        if self.stream not in STREAMS:
            raise ValueError(f"unknown stream {self.stream!r}")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if self.split != "test" and np.any(self.labels == UNLABELED):
            raise ValueError(f"{self.split} track {self.track_id!r} has unlabeled frames")

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def labeled(self) -> bool:
        return not np.any(self.labels == UNLABELED)

    def __eq__(self, other):
        if not isinstance(other, FeatureTrack):
            return NotImplemented
        return (
            self.track_id == other.track_id
            and self.stream == other.stream
            and self.split == other.split
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.features, other.features)
        )


@dataclass
class WindowSample:
    track_id: str
    center_frame: int
    window: np.ndarray
    center_label: int


def encode_feature_track(track: FeatureTrack) -> bytes:
    tid = track.track_id.encode("utf-8")
    T, D = track.features.shape
    parts = [
        _HEADER.pack(MAGIC, VERSION, T, D, STREAMS.index(track.stream), SPLITS.index(track.split)),
        struct.pack("<H", len(tid)),
        tid,
        track.features.astype("<f4").tobytes(),
        track.labels.astype(np.uint8).tobytes(),
    ]
    return b"".join(parts)


def decode_feature_track(buf: bytes) -> FeatureTrack:
    if len(buf) < 4:
        raise TruncatedFileError("file shorter than the magic")
    if buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    if len(buf) < _HEADER.size + 2:
        raise TruncatedFileError("truncated header")
    _, version, T, D, stream, split = _HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise BadVersionError(f"unsupported version {version}")
    if stream >= len(STREAMS) or split >= len(SPLITS):
        raise FeatureFileError(f"bad stream/split code {stream}/{split}")
    off = _HEADER.size
    (n,) = struct.unpack_from("<H", buf, off)
    off += 2
    need = off + n + 4 * T * D + T
    if len(buf) < need:
        raise TruncatedFileError(f"payload truncated: {len(buf)} bytes, need {need}")
    if len(buf) > need:
        raise FeatureFileError(f"{len(buf) - need} trailing bytes")
    track_id = buf[off:off + n].decode("utf-8")
    off += n
    feats = np.frombuffer(buf, dtype="<f4", count=T * D, offset=off).reshape(T, D)
    off += 4 * T * D
    labels = np.frombuffer(buf, dtype=np.uint8, count=T, offset=off)
    bad = ~np.isin(labels, (0, 1, UNLABELED))
    if bad.any():
        raise BadLabelError(f"label byte {int(labels[bad][0])} at frame {int(np.argmax(bad))}")
    return FeatureTrack(
        track_id=track_id,
        features=feats.astype(np.float64),
        labels=labels.copy(),
        stream=STREAMS[stream],
        split=SPLITS[split],
    )


def write_feature_track(track: FeatureTrack, path) -> None:
    Path(path).write_bytes(encode_feature_track(track))


def read_feature_track(path) -> FeatureTrack:
    return decode_feature_track(Path(path).read_bytes())


def flip_stream(track: FeatureTrack) -> FeatureTrack:
    """Feature-space horizontal flip: reverse the coordinates of every frame.

    Labels are untouched. Flipping an already flipped track is refused;
    use the original instead.
    """
    if track.stream != "original":
        raise ValueError(f"track {track.track_id!r} is already flipped")
    return FeatureTrack(
        track_id=track.track_id,
        features=track.features[:, ::-1].copy(),
        labels=track.labels.copy(),
        stream="flipped",
        split=track.split,
        spikes=None if track.spikes is None else track.spikes.copy(),
    )


def window_indices(n_frames: int, window: int) -> np.ndarray:
    """``(T, window)`` frame indices with replicate padding at both ends."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window length must be odd and >= 1, got {window}")
    half = window // 2
    idx = np.arange(n_frames)[:, None] + np.arange(-half, half + 1)[None, :]
    return np.clip(idx, 0, n_frames - 1)


def window_stack(track: FeatureTrack, window: int) -> np.ndarray:
    """All windows of a track as one ``(T, window, D)`` array."""
    return track.features[window_indices(track.n_frames, window)]


def make_windows(track: FeatureTrack, window: int) -> list[WindowSample]:
    stack = window_stack(track, window)
    return [
        WindowSample(track.track_id, t, stack[t], int(track.labels[t]))
        for t in range(track.n_frames)
    ]


# --- manifest -------------------------------------------------------------

@dataclass
class ManifestEntry:
    track_id: str
    path: Path
    flip_path: Path | None = None


def read_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    base = path.parent
    entries = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                tid = obj["track_id"]
                p = obj["path"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed manifest line ({exc})") from None
            if tid in seen:
                raise ValueError(f"{path}:{lineno}: duplicate track_id {tid!r}")
            seen.add(tid)
            fp = obj.get("flip_path")
            entries.append(ManifestEntry(tid, base / p, None if fp is None else base / fp))
    return entries


def write_manifest(entries, path) -> None:
    path = Path(path)
    base = path.parent
    lines = []
    for e in entries:
        obj = {"track_id": e.track_id, "path": os.path.relpath(e.path, base)}
        if e.flip_path is not None:
            obj["flip_path"] = os.path.relpath(e.flip_path, base)
        lines.append(json.dumps(obj, sort_keys=True))
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_tracks(manifest, flipped: bool = False, split: str | None = None) -> list[FeatureTrack]:
    """Read the tracks a manifest points to, in manifest order.

    With ``flipped`` the ``flip_path`` files are read; a missing one raises.
    """
    entries = read_manifest(manifest) if not isinstance(manifest, list) else manifest
    out = []
    for e in entries:
        if flipped:
            if e.flip_path is None:
                raise ValueError(f"track {e.track_id!r} has no flip stream in the manifest")
            tr = read_feature_track(e.flip_path)
        else:
            tr = read_feature_track(e.path)
        if tr.track_id != e.track_id:
            raise ValueError(f"{e.path}: file holds track {tr.track_id!r}, manifest says {e.track_id!r}")
        if split is None or tr.split == split:
            out.append(tr)
    return out


# --- synthetic data -------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Parameters of the synthetic looking-at-me generator.

    Labels follow a symmetric two-state Markov chain that switches with
    ``transition_prob`` per frame, so segments have mean length
    ``1 / transition_prob``. Class means are ``+/- separation/2`` times a
    fixed random unit direction.
    """

    n_tracks: int = 200
    frames_per_track: int = 40
    feature_dim: int = 16
    separation: float = 2.0
    noise_std: float = 0.5
    transition_prob: float = 0.05
    blur_width: int = 3
    label_spike_rate: float = 0.0
    val_fraction: float = 0.15
    test_fraction: float = 0.15

    def __post_init__(self):
        for name in ("n_tracks", "frames_per_track", "feature_dim", "blur_width"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if self.blur_width % 2 == 0:
            raise ValueError("blur_width must be odd")
        if not 0.0 < self.transition_prob < 1.0:
            raise ValueError("transition_prob must lie in (0, 1)")
        if not 0.0 <= self.label_spike_rate < 1.0:
            raise ValueError("label_spike_rate must lie in [0, 1)")
        if self.noise_std < 0 or self.separation < 0:
            raise ValueError("noise_std and separation must be >= 0")
        if self.val_fraction < 0 or self.test_fraction < 0 or self.val_fraction + self.test_fraction > 1:
            raise ValueError("split fractions must be >= 0 and sum to at most 1")


def class_means(spec: SyntheticSpec, seed: int) -> np.ndarray:
    """``(2, D)`` class means: row 0 not looking, row 1 looking."""
    u = Rng(seed, 0).generator.normal(size=spec.feature_dim)
    u /= np.linalg.norm(u)
    half = 0.5 * spec.separation
    return np.stack([-half * u, half * u])


def markov_labels(rng: Rng, n: int, p_switch: float) -> np.ndarray:
    g = rng.generator
    switches = g.random(n) < p_switch
    switches[0] = False
    start = int(g.random() < 0.5)
    return ((start + np.cumsum(switches)) % 2).astype(np.uint8)


def _blur(x: np.ndarray, width: int) -> np.ndarray:
    if width == 1:
        return x
    idx = window_indices(x.shape[0], width)
    return x[idx].mean(axis=1)


def _split_of(n_tracks: int, spec: SyntheticSpec, seed: int) -> list[str]:
    n_test = int(round(spec.test_fraction * n_tracks))
    n_val = int(round(spec.val_fraction * n_tracks))
    order = Rng(seed, 1).generator.permutation(n_tracks)
    split = ["train"] * n_tracks
    for k, i in enumerate(order):
        if k < n_test:
            split[i] = "test"
        elif k < n_test + n_val:
            split[i] = "val"
    return split


def generate_synthetic(spec: SyntheticSpec, seed: int) -> list[FeatureTrack]:
    """Generate ``spec.n_tracks`` tracks, each followed by its flipped twin.

    Features are drawn from the class of each frame's *observed* label: with
    ``label_spike_rate`` > 0 a frame's observed class is flipped at random,
    mimicking a blurred frame that looks like the other class. The stored
    ``labels`` remain the clean chain; the flipped frames are kept in
    ``track.spikes``.
    """
    means = class_means(spec, seed)
    splits = _split_of(spec.n_tracks, spec, seed)
    width = len(str(spec.n_tracks - 1))
    out = []
    for i in range(spec.n_tracks):
        rng = Rng(seed, 2 + i)
        g = rng.generator
        labels = markov_labels(rng, spec.frames_per_track, spec.transition_prob)
        spikes = g.random(spec.frames_per_track) < spec.label_spike_rate
        observed = np.where(spikes, 1 - labels, labels)
        noise = g.normal(0.0, 1.0, size=(spec.frames_per_track, spec.feature_dim)) * spec.noise_std
        feats = _blur(means[observed] + noise, spec.blur_width)
        tr = FeatureTrack(f"track{i:0{width}d}", feats, labels, "original", splits[i], spikes=spikes)
        out.append(tr)
        out.append(flip_stream(tr))
    return out


def write_dataset(tracks, out_dir, manifest_name: str = "manifest.jsonl") -> Path:
    """Write tracks to ``out_dir`` and a manifest pairing original/flipped files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries: dict[str, ManifestEntry] = {}
    order = []
    for tr in tracks:
        fname = f"{tr.track_id}.{'flip.' if tr.stream == 'flipped' else ''}lamf"
        write_feature_track(tr, out_dir / fname)
        e = entries.get(tr.track_id)
        if e is None:
            e = entries[tr.track_id] = ManifestEntry(tr.track_id, None)
            order.append(tr.track_id)
        if tr.stream == "flipped":
            e.flip_path = out_dir / fname
        else:
            e.path = out_dir / fname
    missing = [tid for tid in order if entries[tid].path is None]
    if missing:
        raise ValueError(f"no original stream for tracks {missing}")
    manifest = out_dir / manifest_name
    write_manifest([entries[t] for t in order], manifest)
    return manifest
