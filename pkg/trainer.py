"""
Training and evaluation drivers: Charbonnier loss, Adam with per-group
learning rates, unrolled recurrent training, synthetic flow pretraining,
region evaluation and eye-tracker simulation.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from queue import Empty, Full, Queue
from threading import Event, Thread
from typing import Callable, Iterator, Protocol, Sequence

import numpy as np

from config import CrfpConfig, RunConfig
from constants import TraceKind
from crfp import CrfpModel
from data_io import (FrameSequence, TrainingSample, TrainingSampler, degrade_sequence,
                     write_frame, write_loss_curve, write_report)
from errors import ConfigurationError, NonFiniteLoss, UsageError
from flow_net import FLOW_GROUP, FlowNet, flow_forward
from foveation import (GazeTrace, horizontal_trajectory, raster_trajectory, tracker_trajectory,
                       write_trace)
from metrics import MetricReport, evaluate_clip, high_ssim_area
from serialize import (GazeTraceSerializer, config_echo, load_checkpoint, save_checkpoint,
                       write_summary)
from tensor_engine import GradientTape, Tensor, bicubic_resize, channel_slice
from utils import Box, make_rng

logger = logging.getLogger(__name__)

OPTIMIZER_PREFIX = "adam"
CHECKPOINT_NAME = "checkpoint.crfp"
LOSS_CURVE_NAME = "loss.csv"
PREFETCH_POLL = 0.05


def charbonnier_loss(x_hat: Tensor, x: Tensor, eps: float = 1e-3) -> Tensor:
    """
    mean(sqrt((x_hat - x)^2 + eps^2)).

    :raises ConfigurationError: if shapes differ or eps is not positive.
    """
    if x_hat.shape != x.shape:
        raise ConfigurationError(f"loss shapes differ: {x_hat.shape} vs {x.shape}")
    if eps <= 0:
        raise ConfigurationError(f"charbonnier eps must be positive, got {eps}")
    diff = x_hat - x
    return (diff.square() + eps * eps).sqrt().mean()


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale every gradient in place so their global L2 norm is at most max_norm."""
    total = float(np.sqrt(sum(float(np.square(g, dtype=np.float64).sum()) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / total
        for name in grads:
            grads[name] = grads[name] * grads[name].dtype.type(factor)
    return total


class AdamOptimizer:
    """
    Adaptive-moment update with bias correction.

    The learning rate of a parameter is looked up by its group (the first
    component of its name), falling back to default_lr.
    """

    def __init__(self, params: dict, default_lr: float, group_lrs: dict[str, float] | None = None,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
        self.params = dict(params.items())
        self.default_lr = default_lr
        self.group_lrs = dict(group_lrs or {})
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def lr_for(self, name: str) -> float:
        return self.group_lrs.get(name.split(".", 1)[0], self.default_lr)

    def step(self, grads: dict[str, np.ndarray]) -> None:
        """
        :raises UsageError: if a parameter has no gradient.
        """
        missing = [name for name in self.params if name not in grads]
        if missing:
            raise UsageError(f"no gradient for {len(missing)} parameters, e.g. {missing[0]!r}")
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, tensor in self.params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= m.dtype.type(b1)
            m += m.dtype.type(1.0 - b1) * g
            v *= v.dtype.type(b2)
            v += v.dtype.type(1.0 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            tensor.data = (tensor.data - self.lr_for(name) * update).astype(tensor.data.dtype)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.params:
            out[f"{OPTIMIZER_PREFIX}.m.{name}"] = self.m[name]
            out[f"{OPTIMIZER_PREFIX}.v.{name}"] = self.v[name]
        return out

    def load_state_dict(self, arrays: dict[str, np.ndarray], t: int) -> None:
        for name in self.params:
            self.m[name] = np.array(arrays[f"{OPTIMIZER_PREFIX}.m.{name}"], dtype=self.m[name].dtype)
            self.v[name] = np.array(arrays[f"{OPTIMIZER_PREFIX}.v.{name}"], dtype=self.v[name].dtype)
        self.t = t


@dataclass
class Batch:
    """Frame-major stack of TrainingSamples: arrays are (T, B, ...)."""
    lr: np.ndarray
    hr: np.ndarray
    fovea: np.ndarray
    boxes: list[tuple[Box, ...]]

    @classmethod
    def collate(cls, samples: Sequence[TrainingSample]) -> Batch:
        frames = samples[0].hr.shape[0]
        return cls(np.stack([s.lr for s in samples], axis=1),
                   np.stack([s.hr for s in samples], axis=1),
                   np.stack([s.fovea for s in samples], axis=1),
                   [tuple(s.boxes[t] for s in samples) for t in range(frames)])


class Prefetcher:
    """
    Produces items start .. stop-1 on a background thread into a bounded
    queue; iteration yields them in order. An exception raised by produce is
    re-raised in the consumer. close() stops the worker even when the
    consumer abandons iteration early.
    """

    def __init__(self, produce: Callable[[int], object], start: int, stop: int,
                 depth: int = 2) -> None:
        self.start, self.stop = start, stop
        self.queue: Queue = Queue(maxsize=depth)
        self.stopping = Event()
        self.thread = Thread(target=self._run, args=(produce,), name="prefetch", daemon=True)
        self.thread.start()

    def _run(self, produce: Callable[[int], object]) -> None:
        for i in range(self.start, self.stop):
            if self.stopping.is_set():
                return
            try:
                item = produce(i)
            except Exception as e:
                self._put(e)
                return
            if not self._put(item):
                return

    def _put(self, item: object) -> bool:
        while not self.stopping.is_set():
            try:
                self.queue.put(item, timeout=PREFETCH_POLL)
                return True
            except Full:
                continue
        return False

    def __iter__(self) -> Iterator:
        for _ in range(self.start, self.stop):
            item = self.queue.get()
            if isinstance(item, Exception):
                raise item
            yield item

    def close(self) -> None:
        self.stopping.set()
        while True:
            try:
                self.queue.get_nowait()
            except Empty:
                break
        self.thread.join()

    def __enter__(self) -> Prefetcher:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


@dataclass
class TrainResult:
    losses: list[float]
    iterations: int
    checkpoint: Path | None


class Trainer:
    """
    Truncated-backpropagation training: every iteration unrolls the model
    over `unroll` consecutive frames from a zero state, averages the
    per-frame Charbonnier losses and takes one clipped Adam step.
    """

    def __init__(self, config: RunConfig, model: CrfpModel, sequences: Sequence[FrameSequence],
                 output_dir: Path | None = None) -> None:
        self.config = config
        self.model = model
        self.output_dir = output_dir
        train = config.train
        self.sampler = TrainingSampler(sequences, train.seed, train.patch_size, train.fovea_size,
                                       train.unroll, model.config.scale)
        self.optimizer = AdamOptimizer(model.params, train.lr_model, {FLOW_GROUP: train.lr_flow})
        self.iteration = 0
        self.losses: list[float] = []

    def make_batch(self, iteration: int) -> Batch:
        return Batch.collate(self.sampler.batch(iteration, self.config.train.batch_size))

    def unrolled_loss(self, batch: Batch) -> Tensor:
        model = self.model
        eps = model.config.charbonnier_eps
        state = model.reset_state(Tensor(batch.lr[0]))
        total = None
        for t, boxes in enumerate(batch.boxes):
            x_fov = Tensor(batch.fovea[t]) if model.config.use_fovea else None
            x_hat, state = model.step(state, Tensor(batch.lr[t]), x_fov, boxes)
            loss = charbonnier_loss(x_hat, Tensor(batch.hr[t]), eps)
            total = loss if total is None else total + loss
        return total / len(batch.boxes)

    def train_step(self, batch: Batch) -> float:
        """
        :raises NonFiniteLoss: if the loss is NaN or infinite.
        """
        with GradientTape() as tape:
            tape.watch_all(self.model.params)
            loss = self.unrolled_loss(batch)
        value = loss.item()
        if not np.isfinite(value):
            raise NonFiniteLoss(self.iteration, value)
        grads = tape.backward(loss)
        norm = clip_grad_norm(grads, self.config.train.clip_norm)
        logger.debug("iter %d grad norm %.4f", self.iteration, norm)
        self.optimizer.step(grads)
        return value

    def train(self, iterations: int | None = None) -> TrainResult:
        """Run until `iterations` total iterations (train.iterations by default)."""
        train = self.config.train
        stop = iterations if iterations is not None else train.iterations
        with Prefetcher(self.make_batch, self.iteration, stop, train.prefetch) as batches:
            for batch in batches:
                value = self.train_step(batch)
                self.losses.append(value)
                if self.iteration % train.log_every == 0:
                    logger.info("iter %d loss %.6f", self.iteration, value)
                self.iteration += 1
                if (self.output_dir is not None and train.checkpoint_every
                        and self.iteration % train.checkpoint_every == 0):
                    self.save(self.output_dir / CHECKPOINT_NAME)

        checkpoint = None
        if self.output_dir is not None:
            checkpoint = self.output_dir / CHECKPOINT_NAME
            self.save(checkpoint)
            write_loss_curve(self.losses, self.output_dir / LOSS_CURVE_NAME)
        return TrainResult(list(self.losses), self.iteration, checkpoint)

    def save(self, path: Path) -> None:
        arrays = dict(self.model.params.state_dict())
        arrays.update(self.optimizer.state_dict())
        header = {"crfp": config_echo(self.model.config), "train": config_echo(self.config.train),
                  "iteration": self.iteration, "adam_step": self.optimizer.t,
                  "losses": self.losses}
        save_checkpoint(path, arrays, header)
        logger.info("checkpoint %s at iteration %d", path, self.iteration)

    def resume(self, path: Path) -> None:
        """
        Restore parameters, optimizer moments and the iteration counter.

        :raises ConfigurationError: if the checkpoint was written for another network.
        """
        arrays, header = load_checkpoint(path)
        check_config(header, self.model.config, path)
        self.model.params.load_state_dict(_model_arrays(arrays))
        self.optimizer.load_state_dict(arrays, int(header.get("adam_step", 0)))
        self.iteration = int(header.get("iteration", 0))
        self.losses = [float(v) for v in header.get("losses", [])]


def _model_arrays(arrays: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v for k, v in arrays.items() if not k.startswith(OPTIMIZER_PREFIX + ".")}


def check_config(header: dict, config: CrfpConfig, path: Path) -> None:
    """
    :raises ConfigurationError: naming every architecture field that differs.
    """
    saved = dict(header.get("crfp", {}))
    current = config_echo(config)
    saved.pop("seed", None)
    current.pop("seed", None)
    diffs = sorted(k for k in set(saved) | set(current) if saved.get(k) != current.get(k))
    if diffs:
        detail = ", ".join(f"{k}: {saved.get(k)!r} != {current.get(k)!r}" for k in diffs)
        raise ConfigurationError(f"checkpoint {path} does not match crfp config ({detail})")


def load_model(path: Path, config: CrfpConfig) -> CrfpModel:
    """CrfpModel with parameters restored from a checkpoint."""
    arrays, header = load_checkpoint(path)
    check_config(header, config, path)
    model = CrfpModel(config)
    model.params.load_state_dict(_model_arrays(arrays))
    return model


# Synthetic flow pretraining

def synthetic_flow_pair(frame: np.ndarray, rng: np.random.Generator, crop: int,
                        max_shift: int) -> tuple[np.ndarray, np.ndarray, tuple[int, int]]:
    """
    Two crops of one frame offset by an integer (u, v) with |(u, v)| <= max_shift,
    arranged so x_t(p) = x_prev(p + (u, v)).
    """
    while True:
        u, v = (int(s) for s in rng.integers(-max_shift, max_shift + 1, size=2))
        if u * u + v * v <= max_shift * max_shift:
            break
    h, w = frame.shape[1:]
    oy = int(rng.integers(max_shift, h - crop - max_shift + 1))
    ox = int(rng.integers(max_shift, w - crop - max_shift + 1))
    x_prev = frame[:, oy:oy + crop, ox:ox + crop]
    x_t = frame[:, oy + v:oy + v + crop, ox + u:ox + u + crop]
    return x_t, x_prev, (u, v)


def _flow_frames(sequences: Sequence[FrameSequence], crop: int, max_shift: int) -> list[np.ndarray]:
    need = crop + 2 * max_shift
    frames = []
    for seq in sequences:
        source = seq.lr if seq.lr and min(seq.lr_dims) >= need else seq.hr
        frames.extend(f for f in source if min(f.shape[1:]) >= need)
    if not frames:
        raise ConfigurationError(f"no frame is large enough for {crop}px flow crops")
    return frames


def _flow_batch(frames: list[np.ndarray], rng: np.random.Generator, batch: int, crop: int,
                max_shift: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pairs = [synthetic_flow_pair(frames[int(rng.integers(0, len(frames)))], rng, crop, max_shift)
             for _ in range(batch)]
    x_t = np.stack([p[0] for p in pairs])
    x_prev = np.stack([p[1] for p in pairs])
    target = np.array([p[2] for p in pairs], dtype=np.float32).reshape(batch, 2, 1, 1)
    return x_t, x_prev, target


def endpoint_error(flow: Tensor, target: Tensor, eps: float = 1e-6) -> Tensor:
    """Mean over pixels of sqrt(dx^2 + dy^2 + eps)."""
    sq = (flow - target).square()
    return (channel_slice(sq, 0, 1) + channel_slice(sq, 1, 2) + eps).sqrt().mean()


def evaluate_flow(net: FlowNet, sequences: Sequence[FrameSequence], pairs: int = 16,
                  crop: int = 32, max_shift: int = 4, seed: int = 1) -> float:
    """Mean endpoint error on held-out synthetic translations."""
    frames = _flow_frames(sequences, crop, max_shift)
    x_t, x_prev, target = _flow_batch(frames, make_rng(seed), pairs, crop, max_shift)
    flow = flow_forward(net, Tensor(x_t), Tensor(x_prev)).data
    return float(np.sqrt(np.square(flow - target).sum(axis=1)).mean())


def pretrain_flow(net: FlowNet, sequences: Sequence[FrameSequence], iterations: int,
                  lr: float = 1e-3, max_shift: int = 4, seed: int = 0, batch: int = 4,
                  crop: int = 32) -> list[float]:
    """
    Fit the flow net to synthetic integer translations with an endpoint-error
    loss. Only the "flow.*" group is updated. Returns the loss per iteration.
    """
    frames = _flow_frames(sequences, crop, max_shift)
    params = net.params.group(FLOW_GROUP)
    optimizer = AdamOptimizer(params, lr)
    rng = make_rng(seed)
    losses = []
    for i in range(iterations):
        x_t, x_prev, target = _flow_batch(frames, rng, batch, crop, max_shift)
        with GradientTape() as tape:
            tape.watch_all(params)
            loss = endpoint_error(flow_forward(net, Tensor(x_t), Tensor(x_prev)), Tensor(target))
        value = loss.item()
        if not np.isfinite(value):
            raise NonFiniteLoss(i, value)
        optimizer.step(tape.backward(loss))
        losses.append(value)
        if i % 50 == 0:
            logger.info("flow pretrain iter %d epe %.4f", i, value)
    return losses


# Evaluation

class Reconstructor(Protocol):
    def reconstruct(self, seq: FrameSequence, trace: GazeTrace) -> list[np.ndarray]:
        ...


def run_clip(model: CrfpModel, seq: FrameSequence, trace: GazeTrace) -> list[np.ndarray]:
    """
    Causal pass over a clip. The fovea crop of frame t is cut from the HR
    ground truth at trace box t.

    :raises UsageError: if the trace and the clip differ in length.
    """
    if len(trace) != len(seq):
        raise UsageError(f"trace has {len(trace)} boxes for a {len(seq)}-frame clip")
    if not seq.lr:
        seq = degrade_sequence(seq, model.config.scale)
    state = model.reset_state(Tensor(seq.lr[0][None]))
    outputs = []
    for t in range(len(seq)):
        box = trace.box(t)
        x_fov = None
        if model.config.use_fovea:
            x_fov = Tensor(seq.hr[t][None, :, box.y0:box.y1, box.x0:box.x1])
        x_hat, state = model.step(state, Tensor(seq.lr[t][None]), x_fov, box)
        outputs.append(x_hat.data[0])
    return outputs


class CrfpReconstructor:
    name = "crfp"

    def __init__(self, model: CrfpModel) -> None:
        self.model = model

    def reconstruct(self, seq: FrameSequence, trace: GazeTrace) -> list[np.ndarray]:
        return run_clip(self.model, seq, trace)


class BicubicBaseline:
    """Bicubic x8 up-sampling of the LR frames; ignores the fovea."""
    name = "bicubic"

    def __init__(self, scale: int = 8) -> None:
        self.scale = scale

    def reconstruct(self, seq: FrameSequence, trace: GazeTrace) -> list[np.ndarray]:
        if not seq.lr:
            seq = degrade_sequence(seq, self.scale)
        return [bicubic_resize(Tensor(lr), self.scale).data for lr in seq.lr]


def build_trace(kind: TraceKind, frame_dims: tuple[int, int], side: int, n_frames: int,
                sigma: float = 0.0, seed: int = 0, row: int | None = None) -> GazeTrace:
    if kind is TraceKind.RASTER:
        return raster_trajectory(frame_dims, side, n_frames)
    if kind is TraceKind.HORIZONTAL:
        return horizontal_trajectory(frame_dims, side, n_frames, row)
    return tracker_trajectory(frame_dims, side, n_frames, None, sigma, seed)


def _trace_for(config: RunConfig, seq: FrameSequence, kind: TraceKind, sigma: float) -> GazeTrace:
    row = config.trace.row if config.trace.row >= 0 else None
    return build_trace(kind, seq.hr_dims, config.crfp.fovea_size, len(seq), sigma,
                       config.trace.seed, row)


def evaluate_sequence(config: RunConfig, reconstructor: Reconstructor, seq: FrameSequence,
                      trace: GazeTrace, output_dir: Path | None = None) -> MetricReport:
    """Reconstruct one clip along a trace and score it; optionally write its artifacts."""
    if not seq.lr:
        seq = degrade_sequence(seq, config.crfp.scale)
    outputs = [np.clip(o, 0.0, 1.0) for o in reconstructor.reconstruct(seq, trace)]
    report = evaluate_clip(outputs, seq.hr, trace, seq.clip_id)
    if output_dir is not None:
        write_trace(trace, output_dir / "traces" / f"{seq.clip_id}.txt")
        if config.run.write_frames:
            for t, frame in enumerate(outputs):
                write_frame(frame, output_dir / "frames" / seq.clip_id / f"{t:08d}.png")
    return report


def run_eval(config: RunConfig, reconstructor: Reconstructor, clips: Sequence[FrameSequence],
             kind: TraceKind | None = None, sigma: float | None = None,
             output_dir: Path | None = None) -> MetricReport:
    """
    Three-region report over every clip. Clips run on run.jobs threads;
    rows keep clip order.
    """
    kind = kind if kind is not None else config.trace.kind
    sigma = sigma if sigma is not None else config.trace.sigma

    def one(seq: FrameSequence) -> tuple[MetricReport, GazeTrace]:
        trace = _trace_for(config, seq, kind, sigma)
        return evaluate_sequence(config, reconstructor, seq, trace, output_dir), trace

    with ThreadPoolExecutor(max_workers=config.run.jobs) as pool:
        results = list(pool.map(one, clips))
    report = MetricReport()
    for clip_report, _ in results:
        report.extend(clip_report)
    if output_dir is not None:
        write_report(report, output_dir / "report.csv")
        traces = {seq.clip_id: GazeTraceSerializer(trace).data
                  for seq, (_, trace) in zip(clips, results)}
        write_summary(report, output_dir / "summary.json",
                      {"trace": kind.value, "sigma": sigma, "method": getattr(reconstructor, "name", ""),
                       "traces": traces})
    logger.info("evaluated %d clips with %s trace", len(clips), kind.value)
    return report


def simulate_tracker(config: RunConfig, reconstructor: Reconstructor, seq: FrameSequence,
                     sigma: float, output_dir: Path | None = None
                     ) -> tuple[list[np.ndarray], MetricReport, GazeTrace]:
    """
    Fixed gaze at the clip center with Gaussian tracker jitter of sigma HR
    pixels. Returns the reconstructed frames, their region report and the trace;
    with output_dir set, also writes them with a summary holding the mean
    high-SSIM area.

    :raises ConfigurationError: if sigma is negative.
    """
    if sigma < 0:
        raise ConfigurationError(f"sigma must be non-negative, got {sigma}")
    if not seq.lr:
        seq = degrade_sequence(seq, config.crfp.scale)
    trace = build_trace(TraceKind.TRACKER, seq.hr_dims, config.crfp.fovea_size, len(seq), sigma,
                        config.trace.seed)
    outputs = [np.clip(o, 0.0, 1.0) for o in reconstructor.reconstruct(seq, trace)]
    report = evaluate_clip(outputs, seq.hr, trace, seq.clip_id)
    area = float(np.mean([high_ssim_area(o, gt) for o, gt in zip(outputs, seq.hr)]))
    logger.info("sigma %.1f: mean high-SSIM area %.0f px", sigma, area)
    if output_dir is not None:
        write_trace(trace, output_dir / "trace.txt")
        write_report(report, output_dir / "report.csv")
        write_summary(report, output_dir / "summary.json",
                      {"sigma": sigma, "high_ssim_area": area,
                       "method": getattr(reconstructor, "name", "")})
        for t, frame in enumerate(outputs):
            write_frame(frame, output_dir / "frames" / f"{t:08d}.png")
    return outputs, report, trace
