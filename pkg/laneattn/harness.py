"""laneattn.harness

Displacement metrics, the constant-velocity baseline, the model comparison
table and the attention-trace export with its plots.
"""
import logging
import math
import os
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from laneattn import format as fmt
from laneattn.errors import DomainError, HorizonMismatchError, ShapeError
from laneattn.geometry import nearest_lane, project
from laneattn.graph import TrackSample
from laneattn.model import Checkpoint, rollout

logger = logging.getLogger(__name__)

HORIZONS_S = (1.0, 3.0)
CV_NAME = "CV"
MODEL_LABELS = OrderedDict([
    ("none", "LSTM"),
    ("single_lane", "Single-Lane"),
    ("pooling", "Lane-Pooling"),
    ("attention", "Lane-Attention"),
])
AVERAGING = "per-sample mean over steps, then mean over samples"
WEIGHT_TOLERANCE = 1e-9


def _pair(pred, truth) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 2 or pred.shape[1] != 2 or len(pred) == 0:
        raise ShapeError(f"trajectories of shape {pred.shape} and {truth.shape} cannot be compared")
    return pred, truth


def displacement_errors(pred, truth) -> np.ndarray:
    """Euclidean error at every step."""
    pred, truth = _pair(pred, truth)
    return np.hypot(pred[:, 0] - truth[:, 0], pred[:, 1] - truth[:, 1])


def ade(pred, truth) -> float:
    return float(np.mean(displacement_errors(pred, truth)))


def fde(pred, truth) -> float:
    return float(displacement_errors(pred, truth)[-1])


def constant_velocity_baseline(sample: TrackSample, steps: Optional[int] = None) -> np.ndarray:
    """Repeat the last observed displacement for every future step."""
    pos = sample.positions
    if len(pos) < 2:
        raise DomainError(f"sample {sample.sample_id}: constant velocity needs two observations")
    steps = sample.horizon_steps if steps is None else int(steps)
    delta = pos[-1] - pos[-2]
    return pos[-1] + np.arange(1, steps + 1)[:, None] * delta


@dataclass
class ModelEntry:
    """One column of the comparison: the baseline or a trained checkpoint."""
    name: str
    checkpoint: Optional[Checkpoint] = None

    @property
    def aggregator(self) -> str:
        return "cv" if self.checkpoint is None else self.checkpoint.config.aggregator

    def predict(self, sample: TrackSample, steps: int) -> np.ndarray:
        if self.checkpoint is None:
            return constant_velocity_baseline(sample, steps)
        result = rollout(self.checkpoint.params, self.checkpoint.config, sample, steps=steps, record_trace=False)
        return result.positions


@dataclass
class MetricRow:
    model: str
    aggregator: str
    horizon_s: float
    ade: float
    fde: float
    samples: int
    per_kind: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def to_record(self) -> dict:
        return {"type": "row", "model": self.model, "aggregator": self.aggregator,
                "horizon_s": self.horizon_s, "ade": self.ade, "fde": self.fde,
                "samples": self.samples, "per_kind": self.per_kind}


@dataclass
class EvalReport:
    rows: List[MetricRow]
    sample_count: int
    horizons: Tuple[float, ...] = HORIZONS_S

    @property
    def models(self) -> List[str]:
        return list(OrderedDict.fromkeys(row.model for row in self.rows))

    def row(self, model: str, horizon_s: float) -> MetricRow:
        for r in self.rows:
            if r.model == model and math.isclose(r.horizon_s, horizon_s):
                return r
        raise KeyError((model, horizon_s))

    def records(self) -> List[dict]:
        header = {"type": "header", "averaging": AVERAGING, "samples": self.sample_count,
                  "horizons_s": list(self.horizons), "models": self.models}
        return [header] + [row.to_record() for row in self.rows]

    def write(self, path: str):
        fmt.write_records(self.records(), path)
        logger.info("report written to %s", path)

    def table(self) -> str:
        """Horizon x metric rows against one column per model, errors in meters."""
        models = self.models
        widths = [max(len(m), 8) for m in models]
        lines = [f"# errors in meters; {AVERAGING} ({self.sample_count} samples)"]
        head = f"{'Horizon':<8} {'Metric':<6}" + "".join(f" {m:>{w}}" for m, w in zip(models, widths))
        lines.append(head)
        lines.append("-" * len(head))
        for h in self.horizons:
            for metric in ("ADE", "FDE"):
                label = f"{h:g} s" if metric == "ADE" else ""
                cells = [getattr(self.row(m, h), metric.lower()) for m in models]
                lines.append(f"{label:<8} {metric:<6}" + "".join(f" {c:>{w}.4f}" for c, w in zip(cells, widths)))
        return "\n".join(lines) + "\n"


def default_model_name(checkpoint: Checkpoint) -> str:
    return MODEL_LABELS.get(checkpoint.config.aggregator, checkpoint.config.aggregator)


def _unique_names(names: Sequence[str]) -> List[str]:
    seen: Dict[str, int] = {}
    out = []
    for name in names:
        seen[name] = seen.get(name, 0) + 1
        out.append(name if seen[name] == 1 else f"{name} ({seen[name]})")
    return out


def _sample_errors(job):
    entry, sample, horizon_steps = job
    pred = entry.predict(sample, max(horizon_steps))
    errs = displacement_errors(pred, sample.future[:len(pred)])
    return [(float(np.mean(errs[:n])), float(errs[n - 1])) for n in horizon_steps]


def compare(models: Sequence[Union[Checkpoint, Tuple[str, Checkpoint]]], samples: Sequence[TrackSample],
            horizons: Sequence[float] = HORIZONS_S, include_cv: bool = True, workers: int = 1) -> EvalReport:
    """Evaluate the baseline and every checkpoint at each horizon on one test set."""
    if not samples:
        raise DomainError("test set is empty")
    named = [m if isinstance(m, tuple) else (default_model_name(m), m) for m in models]
    t_pred = {ckpt.config.T_pred_steps for _, ckpt in named}
    if len(t_pred) > 1:
        raise HorizonMismatchError(f"models predict different horizons: {sorted(t_pred)} steps")
    dt = samples[0].dt
    horizon_steps = [int(round(h / dt)) for h in horizons]
    if min(horizon_steps) < 1:
        raise HorizonMismatchError(f"horizons {list(horizons)} are shorter than one step of {dt} s")
    needed = max(horizon_steps)
    if t_pred and needed > next(iter(t_pred)):
        raise HorizonMismatchError(f"{needed}-step horizon exceeds the models' {next(iter(t_pred))}-step prediction")
    short = [s.sample_id for s in samples if s.horizon_steps < needed]
    if short:
        raise HorizonMismatchError(f"{len(short)} samples have fewer than {needed} future steps, e.g. {short[0]}")

    entries = ([ModelEntry(CV_NAME)] if include_cv else [])
    names = _unique_names([name for name, _ in named])
    entries += [ModelEntry(name, ckpt) for name, (_, ckpt) in zip(names, named)]

    rows: List[MetricRow] = []
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for entry in entries:
            jobs = [(entry, s, horizon_steps) for s in samples]
            per_sample = list(pool.map(_sample_errors, jobs)) if pool is not None else [_sample_errors(j) for j in jobs]
            for hi, h in enumerate(horizons):
                errs = np.array([r[hi] for r in per_sample])
                per_kind = {}
                for kind in sorted({s.kind for s in samples}):
                    mask = np.array([s.kind == kind for s in samples])
                    per_kind[kind] = {"ade": float(errs[mask, 0].mean()), "fde": float(errs[mask, 1].mean()),
                                      "samples": int(mask.sum())}
                rows.append(MetricRow(entry.name, entry.aggregator, float(h), float(errs[:, 0].mean()),
                                      float(errs[:, 1].mean()), len(samples), per_kind))
            logger.info("evaluated %s on %d samples", entry.name, len(samples))
    finally:
        if pool is not None:
            pool.shutdown()
    return EvalReport(rows, len(samples), tuple(float(h) for h in horizons))


def predict_record(checkpoint: Checkpoint, sample: TrackSample) -> dict:
    """Predicted trajectory, per-step sigmas/rho and the final lane weights for one sample."""
    result = rollout(checkpoint.params, checkpoint.config, sample)
    final = result.trace[-1] if result.trace else None
    truth = sample.future[:len(result.positions)]
    record = {
        "id": sample.sample_id,
        "kind": sample.kind,
        "aggregator": checkpoint.config.aggregator,
        "positions": result.positions.tolist(),
        "sigma": [g.sigma.data.tolist() for g in result.gaussians],
        "rho": [float(g.rho.data) for g in result.gaussians],
        "final_attention": None if final is None else dict(zip(final.lane_ids, final.weights.tolist())),
    }
    if len(truth) == len(result.positions):
        record["ade"] = ade(result.positions, truth)
        record["fde"] = fde(result.positions, truth)
    return record


# Attention traces

@dataclass
class AttentionTrace:
    sample_id: str
    aggregator: str
    times: List[float]
    steps: List[List[Tuple[int, float]]]  # per step: (lane id, weight), id-sorted
    observed: np.ndarray
    predicted: np.ndarray
    truth: np.ndarray
    one_hot: bool = False

    def validate(self) -> "AttentionTrace":
        for t, step in zip(self.times, self.steps):
            total = math.fsum(w for _, w in step)
            if abs(total - 1.0) > WEIGHT_TOLERANCE:
                raise DomainError(f"trace {self.sample_id}: weights at t={t:g} sum to {total!r}")
        return self

    @property
    def lane_ids(self) -> List[int]:
        return sorted({lane_id for step in self.steps for lane_id, _ in step})

    def weight_matrix(self) -> np.ndarray:
        """(steps, lanes) weights over the union of lane ids; absent lanes are 0."""
        ids = self.lane_ids
        col = {lane_id: j for j, lane_id in enumerate(ids)}
        out = np.zeros((len(self.steps), len(ids)))
        for i, step in enumerate(self.steps):
            for lane_id, w in step:
                out[i, col[lane_id]] = w
        return out

    def to_record(self) -> dict:
        return {
            "id": self.sample_id,
            "aggregator": self.aggregator,
            "one_hot": self.one_hot,
            "steps": [{"t": t, "weights": [[lane_id, w] for lane_id, w in step]}
                      for t, step in zip(self.times, self.steps)],
            "observed": self.observed.tolist(),
            "predicted": self.predicted.tolist(),
            "truth": self.truth.tolist(),
        }

    @classmethod
    def from_record(cls, record: dict) -> "AttentionTrace":
        return cls(record["id"], record["aggregator"], [s["t"] for s in record["steps"]],
                   [[(int(lane_id), float(w)) for lane_id, w in s["weights"]] for s in record["steps"]],
                   np.array(record["observed"]), np.array(record["predicted"]), np.array(record["truth"]),
                   bool(record.get("one_hot", False)))


def attention_trace(checkpoint: Checkpoint, sample: TrackSample) -> AttentionTrace:
    if checkpoint.config.aggregator == "none":
        raise DomainError("a checkpoint without lane aggregation has no attention to export")
    result = rollout(checkpoint.params, checkpoint.config, sample)
    steps = [list(zip(step.lane_ids, step.weights.tolist())) for step in result.trace]
    return AttentionTrace(sample.sample_id, checkpoint.config.aggregator, [step.t for step in result.trace],
                          steps, sample.positions.copy(), result.positions,
                          sample.future[:len(result.positions)].copy(),
                          one_hot=checkpoint.config.aggregator != "attention").validate()


def followed_lane_id(sample: TrackSample) -> int:
    """Lane nearest the final ground-truth position."""
    return sample.lanes[nearest_lane(sample.future[-1], sample.lanes)].id


def final_window_leader(trace: AttentionTrace, window_s: float = 1.0) -> int:
    """Lane with the largest mean weight over the last `window_s` of the trace."""
    times = np.asarray(trace.times)
    mask = times > times[-1] - window_s - 1e-9
    weights = trace.weight_matrix()[mask].mean(axis=0)
    return trace.lane_ids[int(np.argmax(weights))]


def merge_point(sample: TrackSample) -> np.ndarray:
    """First vertex of the section two merging lanes share up to their ends."""
    if len(sample.lanes) != 2:
        raise DomainError(f"sample {sample.sample_id} has {len(sample.lanes)} lanes, a merge needs 2")
    a, b = (lane.points for lane in sample.lanes)
    shared = 0
    while shared < min(len(a), len(b)) and np.allclose(a[len(a) - 1 - shared], b[len(b) - 1 - shared]):
        shared += 1
    if shared < 2:
        raise DomainError(f"lanes of sample {sample.sample_id} do not end in a shared section")
    return a[len(a) - shared].copy()


def merge_weight_gap(trace: AttentionTrace, sample: TrackSample, smooth_steps: int = 5) -> np.ndarray:
    """|w_a - w_b| from the step the vehicle passes the merge point, as a trailing moving average.

    Steps are located by the observed track during warm-up and by ground truth after it.
    Returns an empty array when fewer than `smooth_steps` steps follow the merge point.
    """
    if smooth_steps < 1:
        raise DomainError("smooth_steps must be positive")
    lane = sample.lanes[0]
    merge_arc = project(lane, merge_point(sample)).arc_len
    track = np.vstack([trace.observed, trace.truth])[:len(trace.times)]
    past = np.array([project(lane, q).arc_len >= merge_arc for q in track])
    if not past.any():
        return np.zeros(0)
    weights = trace.weight_matrix()[int(np.argmax(past)):]
    gap = np.abs(weights[:, 0] - weights[:, 1])
    if len(gap) < smooth_steps:
        return np.zeros(0)
    return np.convolve(gap, np.ones(smooth_steps) / smooth_steps, mode="valid")


def _plot_trace(trace: AttentionTrace, sample: TrackSample, stem: str, formats: Sequence[str]) -> List[str]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rc = {"svg.fonttype": "none", "svg.hashsalt": "laneattn", "font.size": 9,
          "axes.spines.top": False, "axes.spines.right": False}
    written = []
    with plt.rc_context(rc):
        fig, (ax_map, ax_w) = plt.subplots(1, 2, figsize=(10, 4))
        for lane in sorted(sample.lanes, key=lambda lane: lane.id):
            ax_map.plot(lane.points[:, 0], lane.points[:, 1], lw=1.0, ls="--", label=f"lane {lane.id}")
        ax_map.plot(trace.observed[:, 0], trace.observed[:, 1], "k.-", lw=1.5, label="observed")
        ax_map.plot(trace.truth[:, 0], trace.truth[:, 1], "g-", lw=1.5, label="ground truth")
        ax_map.plot(trace.predicted[:, 0], trace.predicted[:, 1], "r-", lw=1.5, label="predicted")
        # keep the view on the vehicle rather than the full lane extent
        pts = np.vstack([trace.observed, trace.truth, trace.predicted])
        pad = 10.0
        ax_map.set_xlim(pts[:, 0].min() - pad, pts[:, 0].max() + pad)
        ax_map.set_ylim(pts[:, 1].min() - pad, pts[:, 1].max() + pad)
        ax_map.set_aspect("equal", adjustable="datalim")
        ax_map.set_xlabel("x [m]")
        ax_map.set_ylabel("y [m]")
        ax_map.legend(loc="best", fontsize=7)
        ax_map.set_title(trace.sample_id)

        ids = trace.lane_ids
        ax_w.stackplot(trace.times, trace.weight_matrix().T, labels=[f"lane {i}" for i in ids], alpha=0.8)
        ax_w.axvline(0.0, color="k", lw=0.8, ls=":")
        ax_w.set_ylim(0.0, 1.0)
        ax_w.set_xlabel("t [s]")
        ax_w.set_ylabel("weight")
        ax_w.legend(loc="upper left", fontsize=7)
        ax_w.set_title(f"{trace.aggregator}{' (one-hot)' if trace.one_hot else ''}")
        fig.tight_layout()
        for ext in formats:
            path = f"{stem}.{ext}"
            if ext == "svg":
                fig.savefig(path, format="svg", metadata={"Date": None})
            else:
                fig.savefig(path, format=ext, dpi=100)
            written.append(path)
        plt.close(fig)
    return written


def contact_sheet(png_paths: Sequence[str], out_path: str, thumb_width: int = 480) -> Optional[str]:
    """Tile the per-sample PNGs into one image."""
    from PIL import Image

    if not png_paths:
        return None
    thumbs = []
    for p in png_paths:
        with Image.open(p) as im:
            im = im.convert("RGB")
            scale = thumb_width / float(im.width)
            thumbs.append(im.resize((thumb_width, max(1, int(round(im.height * scale)))), resample=Image.LANCZOS))
    cols = int(math.ceil(math.sqrt(len(thumbs))))
    rows = int(math.ceil(len(thumbs) / cols))
    cell_h = max(t.height for t in thumbs)
    sheet = Image.new("RGB", (cols * thumb_width, rows * cell_h), "white")
    for i, thumb in enumerate(thumbs):
        sheet.paste(thumb, ((i % cols) * thumb_width, (i // cols) * cell_h))
    sheet.save(out_path)
    return out_path


def export_attention(checkpoint: Checkpoint, samples: Sequence[TrackSample], out_dir: str,
                     formats: Sequence[str] = ("svg", "png"), sheet: bool = True) -> List[AttentionTrace]:
    """Per sample: <id>.trace.json plus the scene/weight plot in each format."""
    if checkpoint.config.aggregator != "attention":
        logger.warning("checkpoint aggregates with '%s'; exported weights are one-hot", checkpoint.config.aggregator)
    os.makedirs(out_dir, exist_ok=True)
    traces, pngs = [], []
    for sample in samples:
        trace = attention_trace(checkpoint, sample)
        stem = os.path.join(out_dir, sample.sample_id)
        fmt.save_blob(trace.to_record(), f"{stem}.trace.json")
        written = _plot_trace(trace, sample, stem, formats)
        pngs.extend(p for p in written if p.endswith(".png"))
        traces.append(trace)
        logger.debug("exported attention for %s", sample.sample_id)
    if sheet and pngs:
        contact_sheet(pngs, os.path.join(out_dir, "contact_sheet.png"))
    logger.info("exported %d attention traces to %s", len(traces), out_dir)
    return traces
