"""laneattn.scenarios

Synthetic driving scenarios standing in for recorded traffic: lane layouts
for straight roads, curves, bifurcations, merges and lane changes, a
point-mass driven along one route at constant speed, and the line-delimited
dataset file format.
"""
import json
import logging
import math
import os
from dataclasses import dataclass, field, fields
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from laneattn import format as fmt
from laneattn.errors import ConfigError, DatasetFormatError, DomainError
from laneattn.geometry import LanePolyline
from laneattn.graph import DT, TrackSample

logger = logging.getLogger(__name__)

KINDS = ("straight", "curve", "bifurcation_left", "bifurcation_right", "merge", "lane_change")
ALONG_ROAD = ("straight", "curve", "merge")
DEFAULT_MIX = {
    "straight": 0.52, "curve": 0.20, "merge": 0.10,
    "bifurcation_left": 0.06, "bifurcation_right": 0.06, "lane_change": 0.06,
}
SPLITS = ("train", "val", "test")
SPLIT_RATIO = (6.0, 2.0, 2.5)
SEED_BLOCK = 1_000_000
SPEED_RANGE = (3.0, 20.0)
START_ARC = 5.0
MARGIN = 40.0


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    speed: float = 10.0
    noise_std: float = 0.05
    lane_width: float = 3.5
    seed: int = 0
    obs_steps: Optional[int] = None  # None draws 2-20
    T_pred_steps: int = 30
    dt: float = DT
    heading_jitter: float = math.radians(15.0)
    placement_range: float = 100.0
    decoy_probability: float = 0.4

    def validate(self) -> "ScenarioSpec":
        if self.kind not in KINDS:
            raise DomainError(f"unknown scenario kind '{self.kind}'")
        if not SPEED_RANGE[0] <= self.speed <= SPEED_RANGE[1]:
            raise DomainError(f"speed {self.speed} outside {SPEED_RANGE}")
        if self.noise_std < 0 or self.lane_width <= 0 or self.T_pred_steps < 1:
            raise DomainError("noise_std must be >= 0, lane_width and T_pred_steps positive")
        if self.obs_steps is not None and not 1 <= self.obs_steps <= 20:
            raise DomainError("obs_steps must lie in 1..20")
        return self


@dataclass(frozen=True)
class ScenarioDefaults:
    """The `scenarios` section of the config file."""
    counts: Tuple[int, int, int] = (1200, 400, 500)
    noise_std: float = 0.05
    lane_width: float = 3.5
    seed: int = 0
    mix: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_MIX))

    def __post_init__(self):
        if len(self.counts) != len(SPLITS) or any(int(c) < 0 for c in self.counts):
            raise ConfigError("scenarios.counts must be three non-negative integers")
        if self.noise_std < 0 or self.lane_width <= 0:
            raise ConfigError("scenarios.noise_std must be >= 0 and lane_width positive")
        try:
            normalize_mix(self.mix)
        except DomainError as exc:
            raise ConfigError(f"scenarios.mix: {exc}") from None
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))

    def replace(self, **changes) -> "ScenarioDefaults":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return ScenarioDefaults(**values)

    @classmethod
    def from_dict(cls, values: Mapping) -> "ScenarioDefaults":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})


@dataclass
class Dataset:
    samples: List[TrackSample] = field(default_factory=list)
    split: str = ""

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def by_id(self, sample_id: str) -> TrackSample:
        for sample in self.samples:
            if sample.sample_id == sample_id:
                return sample
        raise KeyError(sample_id)


# Lane construction, in a local frame where traffic heads along +x

def _straight(x0: float, x1: float, y: float, spacing: float = 5.0) -> np.ndarray:
    n = max(2, int(math.ceil((x1 - x0) / spacing)) + 1)
    xs = np.linspace(x0, x1, n)
    return np.stack([xs, np.full(n, y)], axis=1)


def _turn(x_fork: float, radius: float, angle: float, offset: float, exit_len: float,
          left: bool = True, spacing: float = 1.0) -> np.ndarray:
    """Stem along y=offset up to x_fork, circular arc, then a straight exit."""
    stem = _straight(0.0, x_fork, offset)
    r = radius - offset
    n_arc = max(2, int(math.ceil(r * angle / spacing)) + 1)
    phi = np.linspace(0.0, angle, n_arc)[1:]
    arc = np.stack([x_fork + r * np.sin(phi), radius - r * np.cos(phi)], axis=1)
    heading = np.array([math.cos(angle), math.sin(angle)])
    n_exit = max(2, int(math.ceil(exit_len / 5.0)) + 1)
    exit_pts = arc[-1] + np.linspace(0.0, exit_len, n_exit)[1:, None] * heading
    pts = np.vstack([stem, arc, exit_pts])
    if not left:
        pts[:, 1] = -pts[:, 1]
    return pts


def _smooth_ramp(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(math.pi * u))


def _layout_straight(spec, rng, s_now, length):
    n_lanes = int(rng.integers(1, 4))
    ego = int(rng.integers(0, n_lanes))
    lanes = [_straight(0.0, length, (j - ego) * spec.lane_width) for j in range(n_lanes)]
    route = lanes[ego]
    if rng.random() < spec.decoy_probability:
        # exit lane branching off the driven lane; the vehicle keeps going straight
        x_fork = max(2.0, s_now + rng.uniform(-0.5, 1.5) * spec.speed)
        lanes.append(_turn(x_fork, rng.uniform(15.0, 40.0), math.pi / 2, 0.0, MARGIN,
                           left=bool(rng.random() < 0.5)))
    return lanes, route


def _layout_curve(spec, rng, s_now, length):
    left = bool(rng.random() < 0.5)
    radius = rng.uniform(25.0, 80.0)
    angle = rng.uniform(math.radians(30.0), math.radians(90.0))
    x_fork = max(2.0, s_now + rng.uniform(-1.0, 1.0) * spec.speed)
    offsets = [0.0]
    if rng.random() < 0.6:
        offsets.append(spec.lane_width * (1.0 if rng.random() < 0.5 else -1.0))
    lanes = [_turn(x_fork, radius, angle, off, length, left=left) for off in offsets]
    return lanes, lanes[0]


def _layout_bifurcation(spec, rng, s_now, length, left):
    x_fork = max(2.0, s_now + rng.uniform(-1.0, 1.0) * spec.speed)
    branch = _turn(x_fork, rng.uniform(12.0, 30.0), math.pi / 2, 0.0, length, left=left)
    # both routes hold the same stem points up to the fork
    through = np.vstack([_straight(0.0, x_fork, 0.0), _straight(x_fork, x_fork + length, 0.0)[1:]])
    return [through, branch], branch


def _layout_merge(spec, rng, s_now, length):
    side = spec.lane_width * (1.0 if rng.random() < 0.5 else -1.0)
    ramp_len = float(rng.integers(30, 51))
    x_merge = float(max(ramp_len + 2.0, round(s_now + rng.uniform(-1.0, 2.0) * spec.speed)))
    xs = np.arange(0.0, x_merge + length + 1.0, 1.0)
    main = np.stack([xs, np.zeros_like(xs)], axis=1)
    lateral = side * (1.0 - _smooth_ramp((xs - (x_merge - ramp_len)) / ramp_len))
    merging = np.stack([xs, lateral], axis=1)
    # past the merge point the two polylines hold identical points
    merging[xs >= x_merge] = main[xs >= x_merge]
    lanes = [main, merging]
    return lanes, lanes[int(rng.integers(0, 2))]


def _layout_lane_change(spec, rng, s_now, length):
    n_lanes = int(rng.integers(2, 4))
    src = int(rng.integers(0, n_lanes))
    tgt = src + 1 if src + 1 < n_lanes and (src == 0 or rng.random() < 0.5) else src - 1
    ys = [(j - src) * spec.lane_width for j in range(n_lanes)]
    lanes = [_straight(0.0, length, y) for y in ys]
    duration = rng.uniform(3.0, 5.0)
    x_start = max(1.0, s_now + rng.uniform(-1.5, 0.5) * spec.speed)
    change_len = spec.speed * duration
    xs = np.arange(0.0, length, 0.5)
    route = np.stack([xs, ys[src] + (ys[tgt] - ys[src]) * _smooth_ramp((xs - x_start) / change_len)], axis=1)
    return lanes, route


def _drive(route: np.ndarray, s_start: float, step_len: float, count: int) -> np.ndarray:
    """Point mass advancing along the route polyline at a fixed arc length per step."""
    line = LanePolyline.from_points(0, route)
    s = s_start + step_len * np.arange(count, dtype=np.float64)
    if s[-1] > line.length:
        raise DomainError("route shorter than the driven distance")
    return np.stack([np.interp(s, line.cum_len, line.points[:, 0]),
                     np.interp(s, line.cum_len, line.points[:, 1])], axis=1)


def generate(spec: ScenarioSpec) -> TrackSample:
    """Build one sample for the scenario kind."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    t_obs = spec.obs_steps if spec.obs_steps is not None else int(rng.integers(2, 21))
    count = t_obs + spec.T_pred_steps
    step_len = spec.speed * spec.dt
    s_now = START_ARC + step_len * (t_obs - 1)
    length = START_ARC + step_len * count + MARGIN + 3.0 * spec.speed
    if spec.kind == "straight":
        lanes, route = _layout_straight(spec, rng, s_now, length)
    elif spec.kind == "curve":
        lanes, route = _layout_curve(spec, rng, s_now, length)
    elif spec.kind in ("bifurcation_left", "bifurcation_right"):
        lanes, route = _layout_bifurcation(spec, rng, s_now, length, left=spec.kind == "bifurcation_left")
    elif spec.kind == "merge":
        lanes, route = _layout_merge(spec, rng, s_now, length)
    else:
        lanes, route = _layout_lane_change(spec, rng, s_now, length)
    track = _drive(route, START_ARC, step_len, count)

    # rigid placement in the world frame
    theta = rng.uniform(-spec.heading_jitter, spec.heading_jitter)
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    shift = rng.uniform(-spec.placement_range, spec.placement_range, size=2)

    def place(pts):
        return pts @ rot.T + shift

    track = place(track)
    ids = rng.permutation(len(lanes))
    polylines = [LanePolyline.from_points(int(ids[j]), place(pts)) for j, pts in enumerate(lanes)]

    observed = track[:t_obs].copy()
    if spec.noise_std > 0:
        observed += rng.normal(0.0, spec.noise_std, size=observed.shape)
    times = (np.arange(t_obs) - (t_obs - 1)) * spec.dt
    obs = np.column_stack([times, observed])
    sample = TrackSample(f"{spec.kind}-{spec.seed}", spec.kind, obs, track[t_obs:].copy(),
                         sorted(polylines, key=lambda lane: lane.id), spec.dt)
    return sample.validate(spec.T_pred_steps)


def parse_mix(text: str) -> Dict[str, float]:
    """'straight=0.5,curve=0.3,...' -> normalized proportions."""
    mix = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        name, _, value = part.partition("=")
        name = name.strip()
        if name not in KINDS:
            raise DomainError(f"unknown scenario kind '{name}' in mix")
        try:
            mix[name] = float(value)
        except ValueError:
            raise DomainError(f"mix weight for '{name}' is not a number: '{value}'") from None
    return normalize_mix(mix)


def normalize_mix(mix: Mapping[str, float]) -> Dict[str, float]:
    total = sum(mix.values())
    if total <= 0 or any(v < 0 for v in mix.values()):
        raise DomainError("mix weights must be non-negative and not all zero")
    return {k: v / total for k, v in mix.items()}


def allocate_kinds(n: int, mix: Mapping[str, float]) -> List[str]:
    """Largest-remainder split of n samples over the mix, in KINDS order."""
    mix = normalize_mix(mix)
    kinds = [k for k in KINDS if mix.get(k, 0.0) > 0]
    quotas = [n * mix[k] for k in kinds]
    counts = [int(math.floor(q + 1e-9)) for q in quotas]
    remainders = sorted(range(len(kinds)), key=lambda j: (-(quotas[j] - counts[j]), j))
    for j in remainders[: n - sum(counts)]:
        counts[j] += 1
    return [k for k, c in zip(kinds, counts) for _ in range(c)]


def split_counts(total: int) -> Tuple[int, int, int]:
    """Split a total over train/val/test in the 6 : 2 : 2.5 ratio."""
    weight = sum(SPLIT_RATIO)
    train = int(round(total * SPLIT_RATIO[0] / weight))
    val = int(round(total * SPLIT_RATIO[1] / weight))
    return train, val, max(0, total - train - val)


def generate_dataset(counts: Sequence[int], mix: Optional[Mapping[str, float]] = None, seed: int = 0,
                     noise_std: float = 0.05, T_pred_steps: int = 30,
                     lane_width: float = 3.5) -> Dict[str, Dataset]:
    """Deterministic train/val/test datasets drawn from disjoint seed blocks."""
    if len(counts) != len(SPLITS) or any(c < 0 for c in counts):
        raise DomainError("counts must be three non-negative integers (train, val, test)")
    mix = normalize_mix(mix or DEFAULT_MIX)
    out = {}
    for block, (split, n) in enumerate(zip(SPLITS, counts)):
        base = (seed * len(SPLITS) + block) * SEED_BLOCK
        kinds = allocate_kinds(int(n), mix)
        order = np.random.default_rng(base).permutation(len(kinds))
        samples = []
        for j, idx in enumerate(order):
            sample_seed = base + j
            speed = float(np.random.default_rng([sample_seed, 1]).uniform(*SPEED_RANGE))
            spec = ScenarioSpec(kinds[idx], speed=speed, noise_std=noise_std, lane_width=lane_width, seed=sample_seed,
                                T_pred_steps=T_pred_steps)
            samples.append(generate(spec))
        out[split] = Dataset(samples, split)
        logger.info("generated %d %s samples", len(samples), split)
    return out


# Dataset files: one JSON record per line

def sample_to_record(sample: TrackSample) -> dict:
    return {
        "id": sample.sample_id,
        "kind": sample.kind,
        "dt": sample.dt,
        "obs": sample.obs.tolist(),
        "future": sample.future.tolist(),
        "lanes": [{"id": lane.id, "points": lane.points.tolist()} for lane in sample.lanes],
    }


def _require(record, key, kind, lineno):
    if key not in record:
        raise DatasetFormatError(lineno, key, "missing")
    value = record[key]
    if not isinstance(value, kind) or isinstance(value, bool):
        raise DatasetFormatError(lineno, key, f"expected {getattr(kind, '__name__', kind)}")
    return value


def _points(value, width, lineno, name, min_rows):
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise DatasetFormatError(lineno, name, "not a numeric list") from None
    if arr.ndim != 2 or arr.shape[1] != width or len(arr) < min_rows:
        raise DatasetFormatError(lineno, name, f"expected at least {min_rows} rows of {width} numbers")
    return arr


def record_to_sample(record, lineno: int = 0) -> TrackSample:
    if not isinstance(record, dict):
        raise DatasetFormatError(lineno, "record", "expected a JSON object")
    sample_id = _require(record, "id", str, lineno)
    kind = _require(record, "kind", str, lineno)
    dt = float(_require(record, "dt", (int, float), lineno))
    obs = _points(_require(record, "obs", list, lineno), 3, lineno, "obs", 1)
    future = _points(_require(record, "future", list, lineno), 2, lineno, "future", 1)
    lanes = []
    for j, entry in enumerate(_require(record, "lanes", list, lineno)):
        name = f"lanes[{j}]"
        if not isinstance(entry, dict) or not isinstance(entry.get("id"), int):
            raise DatasetFormatError(lineno, f"{name}.id", "expected an integer lane id")
        pts = _points(entry.get("points"), 2, lineno, f"{name}.points", 2)
        try:
            lanes.append(LanePolyline.from_points(entry["id"], pts))
        except DomainError as exc:
            raise DatasetFormatError(lineno, f"{name}.points", str(exc)) from None
    sample = TrackSample(sample_id, kind, obs, future, lanes, dt)
    try:
        return sample.validate()
    except DomainError as exc:
        raise DatasetFormatError(lineno, "sample", str(exc)) from None


def write_dataset(dataset: Dataset, path: str):
    fmt.write_records((sample_to_record(s) for s in dataset.samples), path)
    logger.info("wrote %d samples to %s", len(dataset), path)


def read_dataset(path: str, split: Optional[str] = None) -> Dataset:
    samples = []
    for lineno, text in fmt.iter_lines(path):
        try:
            record = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(lineno, "record", f"invalid JSON ({exc.msg})") from None
        samples.append(record_to_sample(record, lineno))
    if split is None:
        split = os.path.splitext(os.path.basename(path))[0]
    logger.debug("read %d samples from %s", len(samples), path)
    return Dataset(samples, split)


def write_splits(datasets: Mapping[str, Dataset], out_dir: str) -> Dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for split, dataset in datasets.items():
        paths[split] = os.path.join(out_dir, f"{split}.jsonl")
        write_dataset(dataset, paths[split])
    return paths


def load_split(data: str, split: str) -> Dataset:
    """`data` is either a dataset file or a directory holding <split>.jsonl."""
    path = os.path.join(data, f"{split}.jsonl") if os.path.isdir(data) else data
    return read_dataset(path, split)
