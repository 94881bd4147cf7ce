"""laneattn.model

The lane-attention network. Per step: a vehicle LSTM over displacements, one
shared LSTM per lane over vehicle-lane offsets, per-lane total encodings,
aggregation over lanes (attention, pooling, single lane or none), an overall
LSTM and a bivariate-Gaussian head. `rollout` runs warm-up over the history
and then predicts autoregressively from the Gaussian means.
"""
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from laneattn import format as fmt
from laneattn.errors import CheckpointError, ConfigError, DomainError, ShapeError
from laneattn.geometry import LanePolyline, nearest_lane, translate
from laneattn.graph import DT, StepFeatures, TrackSample, sorted_lanes, step_features_at
from laneattn.numerics import Tensor, concat, leaves, linearized, softmax

logger = logging.getLogger(__name__)

AGGREGATORS = ("attention", "pooling", "single_lane", "none")
SIGMA_FLOOR = 1e-3
RHO_MAX = 0.99
CHECKPOINT_FORMAT = "laneattn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 32
    lstm_hidden: int = 64
    lane_enc_dim: int = 64
    agg_dim: int = 192
    overall_hidden: int = 256
    lane_shape_K: int = 10
    lane_shape_spacing: float = 2.0
    aggregator: str = "attention"
    T_pred_steps: int = 30
    mlp_min_hidden: int = 32

    def __post_init__(self):
        if self.aggregator not in AGGREGATORS:
            raise ConfigError(f"aggregator must be one of {AGGREGATORS}, got '{self.aggregator}'")
        if self.agg_dim != 3 * self.lane_enc_dim:
            raise ConfigError(f"agg_dim ({self.agg_dim}) must equal 3 x lane_enc_dim ({self.lane_enc_dim})")
        for name in ("embed_dim", "lstm_hidden", "lane_enc_dim", "overall_hidden", "lane_shape_K",
                     "T_pred_steps", "mlp_min_hidden"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.lane_shape_spacing <= 0:
            raise ConfigError("lane_shape_spacing must be positive")

    @property
    def overall_input(self) -> int:
        return self.agg_dim + self.lstm_hidden

    def replace(self, **changes) -> "ModelConfig":
        values = asdict(self)
        values.update(changes)
        return ModelConfig(**values)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})


def _mlp_shapes(prefix, n_in, n_out, min_hidden):
    hidden = max(n_out, min_hidden)
    return {f"{prefix}.W1": (n_in, hidden), f"{prefix}.b1": (hidden,),
            f"{prefix}.W2": (hidden, n_out), f"{prefix}.b2": (n_out,)}


def _lstm_shapes(prefix, n_in, hidden):
    return {f"{prefix}.W": (n_in, 4 * hidden), f"{prefix}.U": (hidden, 4 * hidden), f"{prefix}.b": (4 * hidden,)}


def param_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Name -> shape for every parameter tensor; a pure function of the config."""
    m = config.mlp_min_hidden
    shapes = {}
    shapes.update(_mlp_shapes("vv_embed", 2, config.embed_dim, m))
    shapes.update(_lstm_shapes("vv_lstm", config.embed_dim, config.lstm_hidden))
    shapes.update(_mlp_shapes("ss_embed", 2, config.embed_dim, m))
    shapes.update(_lstm_shapes("ss_lstm", config.embed_dim, config.lane_enc_dim))
    shapes.update(_mlp_shapes("cur_mlp", 2, config.lane_enc_dim, m))
    shapes.update(_mlp_shapes("fut_mlp", 2 * config.lane_shape_K, config.lane_enc_dim, m))
    shapes.update(_mlp_shapes("score_mlp", 2 * config.lane_enc_dim, 1, m))
    shapes.update(_lstm_shapes("overall_lstm", config.overall_input, config.overall_hidden))
    shapes.update(_mlp_shapes("head_mlp", config.overall_hidden, 5, m))
    return shapes


@dataclass(frozen=True)
class ModelParams:
    """Immutable snapshot of named parameter arrays."""
    tensors: Dict[str, np.ndarray]

    def __post_init__(self):
        for value in self.tensors.values():
            value.setflags(write=False)

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "ModelParams":
        return cls({name: np.array(value, dtype=np.float64) for name, value in arrays.items()})

    def names(self) -> List[str]:
        return list(self.tensors)

    def count(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))

    def __getitem__(self, name) -> np.ndarray:
        return self.tensors[name]

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (list(self.tensors) == list(other.tensors)
                and all(np.array_equal(v, other.tensors[k]) for k, v in self.tensors.items()))


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Glorot-uniform weights, zero biases, forget-gate biases at +1."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(config).items():
        prefix, kind = name.split(".")
        if len(shape) == 1:
            value = np.zeros(shape)
            if prefix.endswith("_lstm"):
                value[: shape[0] // 4] = 1.0
        else:
            fan_in, fan_out = shape
            if prefix.endswith("_lstm"):
                fan_out //= 4
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            value = rng.uniform(-limit, limit, size=shape)
        arrays[name] = value
    return ModelParams.from_arrays(arrays)


# Building blocks. `P` maps parameter names to tensors of the current pass.

def mlp(P: Mapping[str, Tensor], prefix: str, x: Tensor, final_relu: bool = True) -> Tensor:
    """One ReLU hidden layer, then a linear output (ReLU'd unless final_relu is False)."""
    hidden = (x @ P[f"{prefix}.W1"] + P[f"{prefix}.b1"]).relu()
    out = hidden @ P[f"{prefix}.W2"] + P[f"{prefix}.b2"]
    return out.relu() if final_relu else out


def lstm_cell(P: Mapping[str, Tensor], prefix: str, x: Tensor, h: Tensor, c: Tensor) -> Tuple[Tensor, Tensor]:
    """Standard LSTM cell; gate blocks are laid out forget, input, output, candidate."""
    hidden = h.shape[-1]
    if c.shape != h.shape:
        raise ShapeError(f"{prefix}: cell state {c.shape} does not match hidden state {h.shape}")
    z = x @ P[f"{prefix}.W"] + h @ P[f"{prefix}.U"] + P[f"{prefix}.b"]
    f = z[..., 0:hidden].sigmoid()
    i = z[..., hidden:2 * hidden].sigmoid()
    o = z[..., 2 * hidden:3 * hidden].sigmoid()
    g = z[..., 3 * hidden:4 * hidden].tanh()
    c_next = f * c + i * g
    h_next = o * c_next.tanh()
    return h_next, c_next


@dataclass(frozen=True)
class GaussianOut:
    mu: Tensor  # (2,)
    sigma: Tensor  # (2,)
    rho: Tensor  # ()

    def covariance(self) -> np.ndarray:
        sx, sy = self.sigma.data
        r = float(self.rho.data)
        return np.array([[sx * sx, r * sx * sy], [r * sx * sy, sy * sy]])


@dataclass
class StepState:
    h_vv: Tensor
    c_vv: Tensor
    h_ss: Tensor  # (N, lane_enc_dim), rows in lane_ids order
    c_ss: Tensor
    H_v: Tensor
    C_v: Tensor
    lane_ids: Tuple[int, ...] = ()
    e_tot: Optional[Tensor] = None
    a: Optional[Tensor] = None
    weights: Optional[np.ndarray] = None


def initial_state(config: ModelConfig, lane_ids: Sequence[int] = ()) -> StepState:
    n = len(lane_ids)
    return StepState(
        h_vv=Tensor.zeros(config.lstm_hidden), c_vv=Tensor.zeros(config.lstm_hidden),
        h_ss=Tensor.zeros((n, config.lane_enc_dim)), c_ss=Tensor.zeros((n, config.lane_enc_dim)),
        H_v=Tensor.zeros(config.overall_hidden), C_v=Tensor.zeros(config.overall_hidden),
        lane_ids=tuple(lane_ids),
    )


def align_lane_state(state: StepState, lane_ids: Sequence[int]) -> StepState:
    """Re-key per-lane rows to `lane_ids`; lanes seen for the first time start at zero."""
    lane_ids = tuple(lane_ids)
    if lane_ids == state.lane_ids:
        return state
    width = state.h_ss.shape[-1]
    old = {lane_id: row for row, lane_id in enumerate(state.lane_ids)}

    def rows(source: Tensor) -> Tensor:
        parts = [source[old[i]].reshape(1, width) if i in old else Tensor.zeros((1, width)) for i in lane_ids]
        return concat(parts, axis=0) if parts else Tensor.zeros((0, width))
    return StepState(state.h_vv, state.c_vv, rows(state.h_ss), rows(state.c_ss), state.H_v, state.C_v, lane_ids)


def encode_vehicle(P, state: StepState, delta: Tensor) -> Tuple[Tensor, Tensor]:
    e_vv = mlp(P, "vv_embed", delta)
    return lstm_cell(P, "vv_lstm", e_vv, state.h_vv, state.c_vv)


def encode_lane(P, state: StepState, offsets: Tensor) -> Tuple[Tensor, Tensor]:
    """Advance every lane's relation LSTM; rows share one set of weights."""
    e_ss = mlp(P, "ss_embed", offsets)
    return lstm_cell(P, "ss_lstm", e_ss, state.h_ss, state.c_ss)


def lane_total_encoding(P, h_ss: Tensor, offsets: Tensor, shapes: Tensor) -> Tensor:
    """concat(h_ss, e_cur, e_fut) per lane."""
    e_cur = mlp(P, "cur_mlp", offsets)
    e_fut = mlp(P, "fut_mlp", shapes)
    return concat([h_ss, e_cur, e_fut], axis=-1)


def _split_total(e_tot: Tensor):
    width = e_tot.shape[-1] // 3
    return e_tot[..., 0:width], e_tot[..., width:2 * width]


def aggregate_attention(P, e_tot: Tensor) -> Tuple[Tensor, Tensor]:
    """Softmax-weighted sum of lane encodings; scores come from (e_cur, h_ss)."""
    n = e_tot.shape[0]
    if n == 0:
        raise DomainError("attention over an empty lane set")
    h_ss, e_cur = _split_total(e_tot)
    scores = mlp(P, "score_mlp", concat([e_cur, h_ss], axis=-1), final_relu=False).reshape(n)
    weights = softmax(scores)
    return weights @ e_tot, weights


def _one_hot(n: int, index: int) -> np.ndarray:
    w = np.zeros(n)
    w[index] = 1.0
    return w


def aggregate_pooling(e_tot: Tensor, offsets: np.ndarray) -> Tuple[Tensor, np.ndarray]:
    """Encoding of the lane closest to the vehicle (lowest row on ties)."""
    n = e_tot.shape[0]
    if n == 0:
        raise DomainError("pooling over an empty lane set")
    offsets = np.asarray(offsets)
    index = int(np.argmin(np.einsum("ij,ij->i", offsets, offsets)))
    return e_tot[index], _one_hot(n, index)


def aggregate_single_lane(e_tot: Tensor, frozen_index: int) -> Tuple[Tensor, np.ndarray]:
    n = e_tot.shape[0]
    if not 0 <= frozen_index < n:
        raise DomainError(f"single-lane index {frozen_index} out of range for {n} lanes")
    return e_tot[frozen_index], _one_hot(n, frozen_index)


def update_overall(P, state: StepState, a: Tensor, h_vv: Tensor) -> Tuple[Tensor, Tensor]:
    e_v = concat([a, h_vv], axis=-1)
    return lstm_cell(P, "overall_lstm", e_v, state.H_v, state.C_v)


def gaussian_from_raw(raw: Tensor) -> GaussianOut:
    """Map the raw 5-vector to a valid bivariate Gaussian."""
    if raw.shape != (5,):
        raise ShapeError(f"gaussian head output must have shape (5,), got {raw.shape}")
    sigma = raw[2:4].exp().clip_min(SIGMA_FLOOR)
    rho = raw[4].tanh() * RHO_MAX
    return GaussianOut(mu=raw[0:2], sigma=sigma, rho=rho)


def gaussian_head(P, H_v: Tensor) -> GaussianOut:
    return gaussian_from_raw(mlp(P, "head_mlp", H_v, final_relu=False))


def advance(P, config: ModelConfig, state: StepState, delta: Tensor, feats: Optional[StepFeatures],
            pos: Optional[Tensor] = None, frozen_index: int = 0) -> StepState:
    """One ST-graph step: temporal evolution, spatial aggregation, overall update."""
    h_vv, c_vv = encode_vehicle(P, state, delta)
    if config.aggregator == "none":
        a = Tensor.zeros(config.agg_dim)
        h_ss, c_ss, lane_ids, e_tot, weights = state.h_ss, state.c_ss, state.lane_ids, None, None
    else:
        state = align_lane_state(state, feats.lane_ids)
        lane_ids = feats.lane_ids
        if pos is not None:
            offsets = linearized(feats.offsets, pos, feats.offsets_jac)
            shapes = linearized(feats.shapes, pos, feats.shapes_jac)
        else:
            offsets, shapes = Tensor(feats.offsets), Tensor(feats.shapes)
        h_ss, c_ss = encode_lane(P, state, offsets)
        e_tot = lane_total_encoding(P, h_ss, offsets, shapes)
        if config.aggregator == "attention":
            a, w = aggregate_attention(P, e_tot)
            weights = w.data.copy()
        elif config.aggregator == "pooling":
            a, weights = aggregate_pooling(e_tot, feats.offsets)
        else:
            a, weights = aggregate_single_lane(e_tot, frozen_index)
    H_v, C_v = update_overall(P, state, a, h_vv)
    return StepState(h_vv, c_vv, h_ss, c_ss, H_v, C_v, lane_ids, e_tot, a, weights)


@dataclass
class TraceStep:
    t: float
    lane_ids: Tuple[int, ...]
    weights: np.ndarray


@dataclass
class Rollout:
    positions: np.ndarray  # (T_pred, 2) in the input frame
    gaussians: List[GaussianOut]
    trace: List[TraceStep] = field(default_factory=list)
    warmup_h_vv: Optional[np.ndarray] = None
    frozen_lane_id: Optional[int] = None


def _as_tensors(params: Union[ModelParams, Mapping[str, Tensor]]) -> Mapping[str, Tensor]:
    if isinstance(params, ModelParams):
        return leaves(params.tensors, requires_grad=False)
    return params


def rollout(params: Union[ModelParams, Mapping[str, Tensor]], config: ModelConfig,
            sample: Optional[TrackSample] = None, *, history=None, lanes: Sequence[LanePolyline] = (),
            truth=None, steps: Optional[int] = None, teacher_forcing: bool = False,
            record_trace: bool = True, dt: float = DT) -> Rollout:
    """Warm up on the observed history, then predict `steps` points autoregressively.

    Either pass a TrackSample or live `history` (T, 2) positions with `lanes`.
    With teacher forcing, the ground-truth `truth` positions replace the
    predicted ones as the next step's input.
    """
    P = _as_tensors(params)
    if sample is not None:
        history, lanes, truth, dt = sample.positions, sample.lanes, sample.future, sample.dt
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 2 or history.shape[1] != 2 or len(history) == 0:
        raise DomainError("rollout needs at least one observed (x, y) position")
    steps = config.T_pred_steps if steps is None else int(steps)
    if teacher_forcing and (truth is None or len(truth) < steps):
        raise DomainError("teacher forcing needs ground-truth positions for every predicted step")
    uses_lanes = config.aggregator != "none"
    if uses_lanes and not lanes:
        raise DomainError(f"aggregator '{config.aggregator}' needs at least one lane")

    origin = history[-1].copy()
    local = history - origin
    local_lanes = [translate(lane, -origin[0], -origin[1]) for lane in sorted_lanes(lanes)] if uses_lanes else []
    K, spacing = config.lane_shape_K, config.lane_shape_spacing

    def features(pos, prev, jacobian=False):
        if not uses_lanes:
            return None
        return step_features_at(pos, prev, local_lanes, K, spacing, with_jacobian=jacobian)

    frozen_index = nearest_lane(np.zeros(2), local_lanes) if config.aggregator == "single_lane" else 0
    state = initial_state(config, tuple(lane.id for lane in local_lanes))
    trace: List[TraceStep] = []

    def record(t):
        if record_trace and state.weights is not None:
            trace.append(TraceStep(t, state.lane_ids, state.weights))

    # warm-up over the history; a single observation contributes one zero-delta step
    warm = [(0, 0)] if len(local) == 1 else [(t, t - 1) for t in range(1, len(local))]
    for cur, prev in warm:
        feats = features(local[cur], local[prev])
        delta = Tensor(local[cur] - local[prev])
        state = advance(P, config, state, delta, feats, frozen_index=frozen_index)
        record((cur - (len(local) - 1)) * dt)
    warmup_h_vv = state.h_vv.data.copy()

    local_truth = None if truth is None else np.asarray(truth, dtype=np.float64) - origin
    pos = Tensor(np.zeros(2))
    gaussians: List[GaussianOut] = []
    positions = np.empty((steps, 2))
    for k in range(steps):
        g = gaussian_head(P, state.H_v)
        gaussians.append(g)
        nxt = Tensor(local_truth[k]) if teacher_forcing else pos + g.mu
        positions[k] = nxt.data
        if k == steps - 1 and not record_trace:
            break
        feats = features(nxt.data, pos.data, jacobian=nxt.requires_grad)
        state = advance(P, config, state, nxt - pos, feats, pos=nxt if nxt.requires_grad else None,
                        frozen_index=frozen_index)
        record((k + 1) * dt)
        pos = nxt

    frozen_id = local_lanes[frozen_index].id if config.aggregator == "single_lane" else None
    return Rollout(positions=positions + origin, gaussians=gaussians, trace=trace,
                   warmup_h_vv=warmup_h_vv, frozen_lane_id=frozen_id)


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ModelParams
    meta: Dict = field(default_factory=dict)

    def to_blob(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "meta": dict(self.meta),
            "tensors": {name: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
                        for name, v in self.params.tensors.items()},
        }

    @classmethod
    def from_blob(cls, blob) -> "Checkpoint":
        if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError("not a lane-attention checkpoint")
        if blob.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {blob.get('version')}")
        config = ModelConfig.from_dict(blob.get("config", {}))
        expected = param_shapes(config)
        tensors = blob.get("tensors", {})
        if not isinstance(tensors, dict):
            raise CheckpointError("checkpoint tensors must be an object")
        arrays = {}
        for name, shape in expected.items():
            entry = tensors.get(name)
            if entry is None:
                raise CheckpointError(f"checkpoint is missing tensor '{name}'")
            try:
                value = np.array(entry["data"], dtype=np.float64)
                stored = tuple(int(n) for n in entry["shape"])
            except (KeyError, TypeError, ValueError) as exc:
                raise CheckpointError(f"tensor '{name}' is malformed: {exc!r}") from None
            if stored != shape or value.size != int(np.prod(shape)):
                raise CheckpointError(f"tensor '{name}' has shape {list(stored)}, expected {list(shape)}")
            arrays[name] = value.reshape(shape)
        return cls(config, ModelParams.from_arrays(arrays), dict(blob.get("meta", {})))

    def save(self, path: str):
        fmt.save_blob(self.to_blob(), path)
        logger.info("checkpoint written to %s", path)

    @classmethod
    def load(cls, path: str) -> "Checkpoint":
        try:
            blob = fmt.load_blob(path)
        except (ValueError, KeyError) as exc:
            raise CheckpointError(f"{path}: {exc}") from None
        return cls.from_blob(blob)
