"""Dataset ingestion, sequence-length normalization, splits, and the
synthetic gesture generator used by desk-scale end-to-end tests.

The on-disk layout follows the public DHG/SHREC'17 distribution:

    root/gesture_G/finger_F/subject_S/essai_E/skeleton_world.txt

with one frame per line, 66 whitespace-separated floats (22 joints x xyz),
and split list files ``train_gestures.txt`` / ``test_gestures.txt`` whose
lines start with the four integers  gesture finger subject essai.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidInput, ParseError

N_JOINTS = 22
DEFAULT_LENGTH = 171

INTERPOLATE = "interpolate"
PAD_LAST = "pad-last"


@dataclass
class GestureSequence:
    frames: np.ndarray       # (n, n_joints, 3)
    label_14: int            # coarse gesture class, 1-based
    label_28: int | None = None  # fine class: 2*(gesture-1) + finger
    subject: int = 0
    trial: int = 0
    finger: int = 1          # 1 = one finger, 2 = whole hand

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[2] != 3:
            raise InvalidInput(f"frames must be (n, joints, 3), got {self.frames.shape}")
        if self.frames.shape[0] < 2:
            raise InvalidInput("a gesture sequence needs at least two frames")
        if not np.all(np.isfinite(self.frames)):
            raise InvalidInput("gesture coordinates contain non-finite values")
        if self.label_28 is None:
            self.label_28 = 2 * (self.label_14 - 1) + self.finger

    def label(self, n_classes: int) -> int:
        return self.label_28 if n_classes == 28 else self.label_14


@dataclass
class DatasetSplit:
    train: list
    test: list


def _parse_skeleton_file(path: Path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3 * N_JOINTS:
                raise ParseError(
                    f"expected {3 * N_JOINTS} floats per frame, got {len(parts)}",
                    path=path,
                    line=lineno,
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise ParseError(f"bad float: {exc}", path=path, line=lineno) from None
    if len(rows) < 2:
        raise ParseError("sequence has fewer than two frames", path=path)
    return np.asarray(rows).reshape(len(rows), N_JOINTS, 3)


_DIR_RE = re.compile(r"gesture_(\d+)/finger_(\d+)/subject_(\d+)/essai_(\d+)$")


def _skeleton_file(directory: Path) -> Path:
    for name in ("skeleton_world.txt", "skeleton.txt"):
        candidate = directory / name
        if candidate.is_file():
            return candidate
    txts = sorted(directory.glob("*.txt"))
    if not txts:
        raise ConfigError(f"no skeleton file in {directory}")
    return txts[0]


def load_dhg(root) -> list[GestureSequence]:
    """Parse every sequence under a DHG-layout directory, path-sorted."""
    root = Path(root)
    if not root.is_dir():
        raise ConfigError(f"dataset root {root} does not exist")
    sequences = []
    for directory in sorted(root.glob("gesture_*/finger_*/subject_*/essai_*")):
        match = _DIR_RE.search(directory.as_posix())
        if match is None:
            continue
        g, f, s, e = map(int, match.groups())
        frames = _parse_skeleton_file(_skeleton_file(directory))
        sequences.append(
            GestureSequence(
                frames=frames,
                label_14=g,
                label_28=2 * (g - 1) + f,
                subject=s,
                trial=e,
                finger=f,
            )
        )
    if not sequences:
        raise ConfigError(f"no sequences found under {root}")
    return sequences


def _read_split_file(path: Path) -> set[tuple[int, int, int, int]]:
    if not path.is_file():
        raise ConfigError(f"missing split file {path}")
    keys = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 4:
                raise ParseError("split line needs at least 4 integers", path=path, line=lineno)
            keys.add(tuple(int(p) for p in parts[:4]))
    return keys


def dhg_split(sequences, root) -> DatasetSplit:
    """Apply the official train/test list files found under root."""
    root = Path(root)
    train_keys = _read_split_file(root / "train_gestures.txt")
    test_keys = _read_split_file(root / "test_gestures.txt")
    by_key = {(s.label_14, s.finger, s.subject, s.trial): s for s in sequences}
    missing = (train_keys | test_keys) - set(by_key)
    if missing:
        raise ConfigError(f"{len(missing)} split entries have no sequence, e.g. {sorted(missing)[0]}")
    return DatasetSplit(
        train=[by_key[k] for k in sorted(train_keys)],
        test=[by_key[k] for k in sorted(test_keys)],
    )


def resample(seq: GestureSequence, target_len: int = DEFAULT_LENGTH, method: str = INTERPOLATE) -> GestureSequence:
    """Normalize a sequence to target_len frames.

    ``interpolate`` (default): per-joint, per-coordinate piecewise-linear
    interpolation at uniformly spaced parameters over [0, 1]; endpoints are
    preserved exactly and length-matching input is returned unchanged.
    ``pad-last``: repeat the final frame (truncating if too long).
    """
    n = seq.frames.shape[0]
    if n < 2:
        raise InvalidInput("cannot resample a sequence shorter than two frames")
    if n == target_len:
        return seq
    if method == INTERPOLATE:
        t_old = np.linspace(0.0, 1.0, n)
        t_new = np.linspace(0.0, 1.0, target_len)
        flat = seq.frames.reshape(n, -1)
        out = np.empty((target_len, flat.shape[1]))
        for col in range(flat.shape[1]):
            out[:, col] = np.interp(t_new, t_old, flat[:, col])
        out[0] = flat[0]
        out[-1] = flat[-1]
        frames = out.reshape(target_len, *seq.frames.shape[1:])
    elif method == PAD_LAST:
        if n >= target_len:
            frames = seq.frames[:target_len].copy()
        else:
            pad = np.repeat(seq.frames[-1:], target_len - n, axis=0)
            frames = np.concatenate([seq.frames, pad], axis=0)
    else:
        raise InvalidInput(f"unknown resampling method {method!r}")
    return GestureSequence(
        frames=frames,
        label_14=seq.label_14,
        label_28=seq.label_28,
        subject=seq.subject,
        trial=seq.trial,
        finger=seq.finger,
    )


def center_on_wrist(seq: GestureSequence) -> GestureSequence:
    """Subtract the wrist (joint 1) position from every joint, per frame."""
    frames = seq.frames - seq.frames[:, :1, :]
    return GestureSequence(frames, seq.label_14, seq.label_28, seq.subject, seq.trial, seq.finger)


def rest_pose() -> np.ndarray:
    """Canonical 22-joint hand at rest: wrist, palm, five splayed chains."""
    pose = np.zeros((N_JOINTS, 3))
    pose[0] = (0.0, 0.0, 0.0)
    pose[1] = (0.0, 0.04, 0.0)
    base_x = (-0.05, -0.025, 0.0, 0.025, 0.05)
    for f in range(5):
        direction = np.array([base_x[f], 0.09, 0.0])
        direction /= np.linalg.norm(direction)
        for k in range(4):
            pose[2 + 4 * f + k] = np.array([base_x[f], 0.08, 0.0]) + 0.022 * k * direction
    return pose


def _prototype_motion(class_id: int, t: np.ndarray, pose: np.ndarray) -> np.ndarray:
    """Trajectory (n, 22, 3) of motion prototype class_id over phases t in [0, 1]."""
    n = t.shape[0]
    frames = np.repeat(pose[None], n, axis=0)
    phase = 2.0 * np.pi * t
    fingers = [list(range(2 + 4 * f, 6 + 4 * f)) for f in range(5)]
    depth = np.tile(np.arange(4), 5) / 3.0  # 0 at base, 1 at tip, per chain
    if class_id == 1:      # sway along x
        frames[..., 0] += 0.06 * np.sin(phase)[:, None]
    elif class_id == 2:    # lift along y
        frames[..., 1] += 0.06 * np.sin(phase)[:, None]
    elif class_id == 3:    # flex: finger joints curl in z by chain depth
        frames[:, 2:, 2] += 0.05 * np.sin(phase)[:, None] * depth[None, :]
    elif class_id == 4:    # spread: fingers fan out in x
        spread = np.concatenate([np.full(4, x) for x in (-2.0, -1.0, 0.0, 1.0, 2.0)])
        frames[:, 2:, 0] += 0.02 * np.sin(phase)[:, None] * spread[None, :]
    elif class_id == 5:    # rotate about z
        angle = 0.5 * np.sin(phase)
        ca, sa = np.cos(angle), np.sin(angle)
        x, y = frames[..., 0].copy(), frames[..., 1].copy()
        frames[..., 0] = ca[:, None] * x - sa[:, None] * y
        frames[..., 1] = sa[:, None] * x + ca[:, None] * y
    elif class_id == 6:    # wave: per-finger phase-shifted z ripple
        for f, joints in enumerate(fingers):
            frames[:, joints, 2] += 0.05 * np.sin(phase + 0.8 * f)[:, None]
    elif class_id == 7:    # pinch: thumb and index chains approach
        pull = 0.03 * np.sin(phase)
        frames[:, fingers[0], 0] += pull[:, None]
        frames[:, fingers[1], 0] -= pull[:, None]
    elif class_id == 8:    # shake: fast x oscillation
        frames[..., 0] += 0.05 * np.sin(3.0 * phase)[:, None]
    else:
        raise InvalidInput(f"unknown synthetic class id {class_id}")
    return frames


def synth_generate(
    n_per_class: int,
    n_classes: int,
    noise_sigma: float = 0.01,
    seed: int = 0,
    length: int = DEFAULT_LENGTH,
) -> list[GestureSequence]:
    """Labeled synthetic gestures: one motion prototype per class plus
    additive Gaussian coordinate noise.  Separable by construction."""
    if not 1 <= n_classes <= 8:
        raise InvalidInput("synthetic generator defines 8 motion prototypes")
    if n_per_class < 1:
        raise InvalidInput("n_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    pose = rest_pose()
    t = np.linspace(0.0, 1.0, length)
    sequences = []
    for cls in range(1, n_classes + 1):
        clean = _prototype_motion(cls, t, pose)
        for trial in range(n_per_class):
            noisy = clean + noise_sigma * rng.standard_normal(clean.shape)
            sequences.append(
                GestureSequence(noisy, label_14=cls, label_28=cls, subject=0, trial=trial)
            )
    return sequences


CACHE_VERSION = 1


def save_cache(path, sequences):
    """Lossless internal dataset cache (compressed npz with a version field)."""
    payload = {"version": np.array([CACHE_VERSION]), "count": np.array([len(sequences)])}
    meta = np.array(
        [[s.label_14, s.label_28, s.subject, s.trial, s.finger] for s in sequences],
        dtype=np.int64,
    )
    payload["meta"] = meta
    for i, s in enumerate(sequences):
        payload[f"frames_{i:05d}"] = s.frames
    np.savez_compressed(path, **payload)


def load_cache(path) -> list[GestureSequence]:
    with np.load(path) as data:
        if int(data["version"][0]) != CACHE_VERSION:
            raise ConfigError(f"{path}: unsupported cache version")
        count = int(data["count"][0])
        meta = data["meta"]
        return [
            GestureSequence(
                frames=data[f"frames_{i:05d}"],
                label_14=int(meta[i, 0]),
                label_28=int(meta[i, 1]),
                subject=int(meta[i, 2]),
                trial=int(meta[i, 3]),
                finger=int(meta[i, 4]),
            )
            for i in range(count)
        ]
