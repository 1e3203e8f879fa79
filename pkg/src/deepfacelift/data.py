"""Dataset types, CSV ingestion, person-disjoint folds and a synthetic generator.

On-disk layout of a dataset directory::

    profiles.csv   person_id,complexion,age_bin,gender
    sequences.csv  sequence_id,person_id,vas,opi
    frames.csv     sequence_id,frame_index,x0,y0,...,x65,y65[,au4,au6,au7,au9,au10,au43]
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import BadConfig, MalformedRow, MissingProfile, RangeViolation, TooFewPersons

N_LANDMARKS = 66
N_COORDS = 2 * N_LANDMARKS
AU_NAMES = ("AU4", "AU6", "AU7", "AU9", "AU10", "AU43")
AU_MAX = {"AU4": 5, "AU6": 5, "AU7": 5, "AU9": 5, "AU10": 5, "AU43": 1}

COMPLEXIONS = ("pale-fair", "fair-olive", "olive-dark")
AGE_BINS = ("young", "middle-aged", "elderly")
GENDERS = ("male", "female")
PERSONAL_GROUPS = {"complexion": COMPLEXIONS, "age": AGE_BINS, "gender": GENDERS}
N_PERSONAL = sum(len(v) for v in PERSONAL_GROUPS.values())

COORD_COLUMNS = [f"{axis}{i}" for i in range(N_LANDMARKS) for axis in ("x", "y")]
AU_COLUMNS = [name.lower() for name in AU_NAMES]


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class FrameSample:
    person_id: str
    sequence_id: str
    frame_index: int
    landmarks: np.ndarray
    au_intensities: Optional[Mapping[str, int]] = None

    def __post_init__(self):
        lm = _frozen(self.landmarks)
        if lm.shape != (N_COORDS,):
            raise MalformedRow(
                f"frame {self.sequence_id}/{self.frame_index}: expected {N_COORDS} landmark values, got {lm.size}"
            )
        if not np.all(np.isfinite(lm)):
            raise MalformedRow(f"frame {self.sequence_id}/{self.frame_index}: non-finite landmark value")
        if self.frame_index < 0:
            raise RangeViolation(f"negative frame index {self.frame_index}")
        object.__setattr__(self, "landmarks", lm)
        if self.au_intensities is not None:
            aus = dict(self.au_intensities)
            for name in AU_NAMES:
                if name not in aus:
                    raise MalformedRow(f"frame {self.sequence_id}/{self.frame_index}: missing {name}")
                v = aus[name]
                if int(v) != v or not 0 <= v <= AU_MAX[name]:
                    raise RangeViolation(f"{name}={v} outside [0, {AU_MAX[name]}]")
                aus[name] = int(v)
            object.__setattr__(self, "au_intensities", aus)


@dataclass(frozen=True)
class SequenceRecord:
    sequence_id: str
    person_id: str
    frames: tuple
    vas: int
    opi: int
    landmark_matrix: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise MalformedRow(f"sequence {self.sequence_id} has no frames")
        for i, fr in enumerate(frames):
            if fr.sequence_id != self.sequence_id or fr.person_id != self.person_id:
                raise MalformedRow(f"frame {i} does not belong to sequence {self.sequence_id}")
            if fr.frame_index != i:
                raise MalformedRow(
                    f"sequence {self.sequence_id}: frame indices must be consecutive from 0 (got {fr.frame_index} at {i})"
                )
        if int(self.vas) != self.vas or not 0 <= self.vas <= 10:
            raise RangeViolation(f"sequence {self.sequence_id}: vas={self.vas} outside 0..10")
        if int(self.opi) != self.opi or not 0 <= self.opi <= 5:
            raise RangeViolation(f"sequence {self.sequence_id}: opi={self.opi} outside 0..5")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "vas", int(self.vas))
        object.__setattr__(self, "opi", int(self.opi))
        object.__setattr__(self, "landmark_matrix", _frozen(np.stack([fr.landmarks for fr in frames])))

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class PersonProfile:
    person_id: str
    complexion: str
    age_bin: str
    gender: str

    def __post_init__(self):
        for value, allowed, name in (
            (self.complexion, COMPLEXIONS, "complexion"),
            (self.age_bin, AGE_BINS, "age_bin"),
            (self.gender, GENDERS, "gender"),
        ):
            if value not in allowed:
                raise RangeViolation(f"person {self.person_id}: {name}={value!r} not in {allowed}")


@dataclass(frozen=True)
class Dataset:
    sequences: tuple
    profiles: Mapping[str, PersonProfile]

    def __post_init__(self):
        seqs = tuple(self.sequences)
        ids = [s.sequence_id for s in seqs]
        if len(set(ids)) != len(ids):
            raise MalformedRow("duplicate sequence ids")
        for s in seqs:
            if s.person_id not in self.profiles:
                raise MissingProfile(f"sequence {s.sequence_id} references unknown person {s.person_id}")
        object.__setattr__(self, "sequences", seqs)
        object.__setattr__(self, "profiles", dict(self.profiles))

    @property
    def person_ids(self) -> list:
        """Persons that own at least one sequence, sorted."""
        return sorted({s.person_id for s in self.sequences})

    @property
    def n_frames(self) -> int:
        return sum(len(s) for s in self.sequences)

    def subset(self, person_ids) -> "Dataset":
        keep = set(person_ids)
        return Dataset(
            tuple(s for s in self.sequences if s.person_id in keep),
            {p: v for p, v in self.profiles.items() if p in keep},
        )


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple
    seed: int

    def train_persons(self, k: int) -> list:
        return sorted(p for i, f in enumerate(self.folds) if i != k for p in f)

    def test_persons(self, k: int) -> list:
        return sorted(self.folds[k])


def encode_personal(profile: PersonProfile, exclude: Sequence[str] = ()) -> np.ndarray:
    """One-hot complexion(3) ++ age(3) ++ gender(2).

    Groups named in ``exclude`` ("complexion", "age", "gender") are zeroed,
    which is how a personal feature is removed for ablation runs.
    """
    values = {"complexion": profile.complexion, "age": profile.age_bin, "gender": profile.gender}
    parts = []
    for group, levels in PERSONAL_GROUPS.items():
        block = np.zeros(len(levels))
        if group not in exclude:
            block[levels.index(values[group])] = 1.0
        parts.append(block)
    return np.concatenate(parts)


def split_folds(dataset: Dataset, k: int, seed: int) -> FoldPlan:
    persons = dataset.person_ids
    if k < 2:
        raise BadConfig(f"need at least 2 folds, got {k}")
    if k > len(persons):
        raise TooFewPersons(f"{k} folds requested but only {len(persons)} persons")
    order = np.random.default_rng(seed).permutation(len(persons))
    shuffled = [persons[i] for i in order]
    base, extra = divmod(len(persons), k)
    folds, start = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(frozenset(shuffled[start:start + size]))
        start += size
    return FoldPlan(tuple(folds), seed)


# --------------------------------------------------------------------------- I/O


def _read_csv(path: Path) -> tuple[list, list]:
    if not path.is_file():
        raise MalformedRow(f"missing file {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MalformedRow(f"{path.name}: header row required")
    return rows[0], rows[1:]


def _parse_int(text: str, where: str) -> int:
    try:
        v = float(text)
    except ValueError:
        raise MalformedRow(f"{where}: cannot parse {text!r} as integer") from None
    if not math.isfinite(v) or v != int(v):
        raise MalformedRow(f"{where}: {text!r} is not an integer")
    return int(v)


def load_dataset(path) -> Dataset:
    root = Path(path)
    header, rows = _read_csv(root / "profiles.csv")
    if header[:4] != ["person_id", "complexion", "age_bin", "gender"]:
        raise MalformedRow(f"profiles.csv: unexpected header {header}")
    profiles = {}
    for n, row in enumerate(rows, start=2):
        if len(row) != 4:
            raise MalformedRow(f"profiles.csv line {n}: expected 4 fields, got {len(row)}")
        if row[0] in profiles:
            raise MalformedRow(f"profiles.csv line {n}: duplicate person {row[0]}")
        profiles[row[0]] = PersonProfile(*row)

    header, rows = _read_csv(root / "sequences.csv")
    if header[:4] != ["sequence_id", "person_id", "vas", "opi"]:
        raise MalformedRow(f"sequences.csv: unexpected header {header}")
    seq_meta = {}
    for n, row in enumerate(rows, start=2):
        if len(row) != 4:
            raise MalformedRow(f"sequences.csv line {n}: expected 4 fields, got {len(row)}")
        sid, pid = row[0], row[1]
        if sid in seq_meta:
            raise MalformedRow(f"sequences.csv line {n}: duplicate sequence {sid}")
        if pid not in profiles:
            raise MissingProfile(f"sequence {sid} references unknown person {pid}")
        vas = _parse_int(row[2], f"sequences.csv line {n}")
        opi = _parse_int(row[3], f"sequences.csv line {n}")
        if not 0 <= vas <= 10:
            raise RangeViolation(f"sequences.csv line {n}: vas={vas} outside 0..10")
        if not 0 <= opi <= 5:
            raise RangeViolation(f"sequences.csv line {n}: opi={opi} outside 0..5")
        seq_meta[sid] = (pid, vas, opi)

    header, rows = _read_csv(root / "frames.csv")
    base_cols = ["sequence_id", "frame_index"] + COORD_COLUMNS
    if header == base_cols:
        has_au = False
    elif header == base_cols + AU_COLUMNS:
        has_au = True
    else:
        raise MalformedRow(f"frames.csv: header must list sequence_id, frame_index, x0..y65 and optionally AUs")
    width = len(header)
    frames = {sid: [] for sid in seq_meta}
    for n, row in enumerate(rows, start=2):
        if len(row) != width:
            raise MalformedRow(f"frames.csv line {n}: expected {width} fields, got {len(row)}")
        sid = row[0]
        if sid not in seq_meta:
            raise MalformedRow(f"frames.csv line {n}: unknown sequence {sid}")
        idx = _parse_int(row[1], f"frames.csv line {n}")
        try:
            lm = np.array([float(v) for v in row[2:2 + N_COORDS]])
        except ValueError:
            raise MalformedRow(f"frames.csv line {n}: non-numeric landmark value") from None
        aus = None
        if has_au:
            aus = {name: _parse_int(v, f"frames.csv line {n}") for name, v in zip(AU_NAMES, row[2 + N_COORDS:])}
        frames[sid].append(FrameSample(seq_meta[sid][0], sid, idx, lm, aus))

    sequences = []
    for sid, (pid, vas, opi) in seq_meta.items():
        frs = sorted(frames[sid], key=lambda f: f.frame_index)
        sequences.append(SequenceRecord(sid, pid, tuple(frs), vas, opi))
    return Dataset(tuple(sequences), profiles)


def save_dataset(dataset: Dataset, path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    persons = sorted(dataset.profiles)
    with open(root / "profiles.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["person_id", "complexion", "age_bin", "gender"])
        for pid in persons:
            p = dataset.profiles[pid]
            w.writerow([p.person_id, p.complexion, p.age_bin, p.gender])
    with open(root / "sequences.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence_id", "person_id", "vas", "opi"])
        for s in dataset.sequences:
            w.writerow([s.sequence_id, s.person_id, s.vas, s.opi])
    has_au = any(fr.au_intensities is not None for s in dataset.sequences for fr in s.frames)
    with open(root / "frames.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence_id", "frame_index"] + COORD_COLUMNS + (AU_COLUMNS if has_au else []))
        for s in dataset.sequences:
            for fr in s.frames:
                row = [s.sequence_id, fr.frame_index] + [repr(float(v)) for v in fr.landmarks]
                if has_au:
                    if fr.au_intensities is None:
                        raise MalformedRow(f"sequence {s.sequence_id}: AU intensities must be all-or-none")
                    row += [fr.au_intensities[name] for name in AU_NAMES]
                w.writerow(row)


# --------------------------------------------------------------------------- synthetic data

# rest face, (x, y) pixels, 66-point AAM ordering: jaw 0-16, brows 17-26,
# nose 27-35, eyes 36-47, outer lips 48-59, inner lips 60-65
def _template_face() -> np.ndarray:
    pts = []
    for t in np.linspace(np.pi * 0.95, np.pi * 0.05, 17):
        pts.append((160 + 70 * np.cos(t), 110 + 85 * np.sin(t)))
    for cx in (125, 195):
        for t in np.linspace(-2, 2, 5):
            pts.append((cx + 12 * t, 85 - 6 * (1 - (t / 2) ** 2)))
    for i in range(4):
        pts.append((160, 95 + 10 * i))
    for dx in (-12, -6, 0, 6, 12):
        pts.append((160 + dx, 138 + 2 * abs(dx) / 6))
    for cx in (128, 192):
        for t in np.linspace(0, 2 * np.pi, 7)[:-1]:
            pts.append((cx + 14 * np.cos(t + np.pi), 100 - 6 * np.sin(t + np.pi)))
    for t in np.linspace(0, 2 * np.pi, 13)[:-1]:
        pts.append((160 + 28 * np.cos(t + np.pi), 168 - 12 * np.sin(t + np.pi)))
    for t in np.linspace(0, 2 * np.pi, 7)[:-1]:
        pts.append((160 + 18 * np.cos(t + np.pi), 168 - 4 * np.sin(t + np.pi)))
    face = np.array(pts, dtype=float)
    assert face.shape == (N_LANDMARKS, 2)
    return face


# unit pain expression: brow lowering, eye narrowing, upper lip raise
def _deformation_pattern() -> np.ndarray:
    face = _template_face()
    d = np.zeros_like(face)
    d[17:27, 1] += 1.0
    d[17:22, 0] += 0.5
    d[22:27, 0] -= 0.5
    for start in (36, 42):
        eye = slice(start, start + 6)
        center = face[eye, 1].mean()
        d[eye, 1] += 0.8 * np.sign(center - face[eye, 1])
    d[48:60, 1] += np.where(face[48:60, 1] < 168, -0.7, -0.2)
    d[[48, 54], 0] += np.array([-0.6, 0.6])
    d[31:36, 1] -= 0.4
    return d


AGE_EXPRESSIVENESS = {"young": 0.5, "middle-aged": 0.0, "elderly": -0.5}


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic stand-in for restricted video data.

    Only ``age_bin`` drives expressiveness (deformation per VAS unit); complexion
    and gender are drawn but ignored, which makes them null features for
    ablation checks. ``length_coupling`` makes sequences with higher VAS
    longer on average (0 = length independent of VAS).
    """

    persons: int = 25
    sequences_per_person: int = 8
    min_frames: int = 12
    max_frames: int = 28
    landmark_noise: float = 0.3
    face_jitter: float = 0.3
    shape_spread: float = 0.04
    pose_jitter: float = 3.0
    expressiveness_spread: float = 1.2
    person_jitter: float = 0.1
    deformation_scale: float = 1.5
    opi_noise: float = 0.5
    apex_fraction: float = 1.0
    length_coupling: float = 0.5
    with_aus: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.persons < 1 or self.sequences_per_person < 1:
            raise BadConfig("persons and sequences_per_person must be positive")
        if self.min_frames < 1 or self.max_frames < self.min_frames:
            raise BadConfig("need 1 <= min_frames <= max_frames")
        for name in ("landmark_noise", "face_jitter", "shape_spread", "pose_jitter", "expressiveness_spread",
                     "person_jitter", "opi_noise"):
            if getattr(self, name) < 0:
                raise BadConfig(f"{name} must be nonnegative")
        if not 0 <= self.expressiveness_spread * AGE_EXPRESSIVENESS["young"] < 1:
            raise BadConfig("expressiveness_spread too large: every age group needs a positive gain")
        if not 0 < self.apex_fraction <= 1:
            raise BadConfig("apex_fraction must be in (0, 1]")
        if not 0 <= self.length_coupling <= 1:
            raise BadConfig("length_coupling must be in [0, 1]")
        if self.deformation_scale < 0:
            raise BadConfig("deformation_scale must be nonnegative")


def expressiveness(profile: PersonProfile, cfg: SynthConfig) -> float:
    """Profile-driven part of a person's deformation gain."""
    return 1.0 + cfg.expressiveness_spread * AGE_EXPRESSIVENESS[profile.age_bin]


def temporal_envelope(n: int, start: int, width: int, fraction: float) -> np.ndarray:
    """Smooth onset/apex/offset bump on frames [start, start+width), zero elsewhere.

    Scaled so its mean over all n frames is ``fraction / 2``; that keeps the
    mean deformation of a sequence proportional to its VAS regardless of n.
    """
    env = np.zeros(n)
    t = (np.arange(width) + 0.5) / width
    env[start:start + width] = np.sin(np.pi * t) ** 2
    return env * (0.5 * fraction * n / env.sum())


def _frame_count(vas: int, u: float, cfg: SynthConfig) -> int:
    """Sequence length; ``length_coupling`` of its position in the range follows VAS, the rest is uniform."""
    pos = cfg.length_coupling * vas / 10.0 + (1.0 - cfg.length_coupling) * u
    span = cfg.max_frames - cfg.min_frames
    return cfg.min_frames + min(span, int(pos * (span + 1)))


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    rng = np.random.default_rng(cfg.seed)
    template = _template_face()
    center = template.mean(axis=0)
    pattern = _deformation_pattern().reshape(-1) * cfg.deformation_scale
    id_width = len(str(cfg.persons - 1))
    profiles, sequences = {}, []
    for p in range(cfg.persons):
        pid = f"P{p:0{id_width}d}"
        prof = PersonProfile(
            pid,
            COMPLEXIONS[rng.integers(3)],
            AGE_BINS[rng.integers(3)],
            GENDERS[rng.integers(2)],
        )
        profiles[pid] = prof
        # identity: width/height stretch about the face center, small per-point
        # jitter, then a translation
        stretch = 1.0 + rng.normal(0.0, cfg.shape_spread, 2)
        base = center + (template - center) * stretch + rng.normal(0.0, cfg.face_jitter, template.shape)
        base = (base + rng.normal(0.0, cfg.pose_jitter, 2)).reshape(-1)
        gain = expressiveness(prof, cfg) * max(0.05, 1.0 + rng.normal(0.0, cfg.person_jitter))
        for q in range(cfg.sequences_per_person):
            sid = f"{pid}_S{q:02d}"
            vas = int(rng.integers(0, 11))
            opi = int(math.floor(min(max(0.5 * vas + rng.normal(0.0, cfg.opi_noise), 0.0), 5.0) + 0.5))
            n = _frame_count(vas, rng.random(), cfg)
            apex = max(1, int(round(cfg.apex_fraction * n)))
            env = temporal_envelope(n, int(rng.integers(0, n - apex + 1)), apex, cfg.apex_fraction)
            noise = rng.normal(0.0, cfg.landmark_noise, (n, N_COORDS))
            lms = base + np.outer(gain * vas * env, pattern) + noise
            frames = []
            for i in range(n):
                aus = None
                if cfg.with_aus:
                    level = gain * vas * env[i] / 2.0
                    a = int(min(5, round(level)))
                    aus = {"AU4": a, "AU6": a, "AU7": max(0, a - 1), "AU9": max(0, a - 2),
                           "AU10": max(0, a - 1), "AU43": int(level >= 4.0)}
                frames.append(FrameSample(pid, sid, i, lms[i], aus))
            sequences.append(SequenceRecord(sid, pid, tuple(frames), vas, opi))
    return Dataset(tuple(sequences), profiles)
