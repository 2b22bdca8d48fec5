"""Experiment harness: epoch loop, evaluation, and the noise-sweep runner.

Every run is deterministic given its config: shuffling uses stateless
per-epoch seeds, the noisy test set is corrupted once per run from seeds
derived only from the experiment seed and image index (so it is bit-identical
across epochs and across architectures sharing a sweep seed), and all
reductions are ordered.
"""

from __future__ import annotations

import io
import os
import time
import traceback
from dataclasses import dataclass, field

import numpy as np

from . import data_io
from .data_io import Dataset
from .networks import NetworkSpec, build_network
from .optim import Adam
from .slicing import NoiseSpec, corrupt_batch, subseed

_EVAL_BATCH = 256
_TRAIN_NOISE_SALT = 0x7261696E  # decorrelates train-time masks from test masks


@dataclass(frozen=True)
class ExperimentConfig:
    """One cell of the noise x architecture matrix."""

    network: NetworkSpec
    noise_ratio: float
    epochs: int
    seed: int
    batch_size: int = 32
    train_noise: str = "clean"  # "clean" or "noisy"
    eval_every: int = 1  # epochs between evaluation points
    dataset: str = "synthetic"
    lr: float = 1e-4
    beta1: float = 0.99
    beta2: float = 0.9
    epsilon: float = 1e-8
    noise_per_channel: bool = False

    def __post_init__(self):
        if not 0.0 <= self.noise_ratio <= 1.0:
            raise ValueError(f"noise_ratio must be in [0, 1], got {self.noise_ratio}")
        if self.train_noise not in ("clean", "noisy"):
            raise ValueError(f"train_noise must be 'clean' or 'noisy', "
                             f"got {self.train_noise!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("epochs must be >= 0, batch_size and eval_every >= 1")

    @property
    def tag(self) -> str:
        """Legend tag: noise_{ratio*10:02d}_{n_streams}."""
        return f"noise_{int(round(self.noise_ratio * 10)):02d}_{self.network.n_streams}"


@dataclass
class LogRow:
    epoch: int
    train_loss: float
    clean_acc: float
    noisy_acc: float
    wall_ms: float


@dataclass
class TrainingLog:
    """Per-evaluation-point accuracy trace for one experiment cell."""

    dataset: str
    tag: str
    seed: int
    rows: list = field(default_factory=list)

    @property
    def filename(self) -> str:
        return f"{self.dataset}_{self.tag}_{self.seed}.csv"

    def to_csv(self, include_wall: bool = True) -> str:
        out = io.StringIO()
        out.write("epoch,train_loss,clean_acc,noisy_acc,wall_ms\n")
        for r in self.rows:
            wall = f"{r.wall_ms:.3f}" if include_wall else "0"
            out.write(f"{r.epoch},{r.train_loss:.17g},{r.clean_acc:.17g},"
                      f"{r.noisy_acc:.17g},{wall}\n")
        return out.getvalue()

    def canonical_bytes(self) -> bytes:
        """CSV bytes with wall time zeroed; equal for identical config+seed runs."""
        return self.to_csv(include_wall=False).encode()

    @staticmethod
    def from_csv(text: str, dataset: str = "", tag: str = "",
                 seed: int = 0) -> "TrainingLog":
        lines = text.strip().splitlines()
        if not lines or lines[0] != "epoch,train_loss,clean_acc,noisy_acc,wall_ms":
            raise ValueError("not a training-log CSV (bad header)")
        rows = []
        for ln in lines[1:]:
            e, tl, ca, na, wm = ln.split(",")
            rows.append(LogRow(int(e), float(tl), float(ca), float(na), float(wm)))
        return TrainingLog(dataset, tag, seed, rows)


def final_window_mean(log: TrainingLog, column: str = "noisy_acc",
                      window: int = 10) -> float:
    """Mean of the last ``window`` evaluation points of one log column."""
    tail = log.rows[-window:]
    if not tail:
        raise ValueError("log has no rows")
    return float(np.mean([getattr(r, column) for r in tail]))


# ---------------------------------------------------------------------------
# Single run
# ---------------------------------------------------------------------------

def _accuracy(net, images: np.ndarray, labels: np.ndarray) -> float:
    hits = 0
    for start in range(0, images.shape[0], _EVAL_BATCH):
        logits = net.forward(images[start:start + _EVAL_BATCH])
        hits += int((logits.argmax(axis=1) == labels[start:start + _EVAL_BATCH]).sum())
    return hits / images.shape[0]


def evaluate(net, dataset: Dataset, noise: NoiseSpec) -> float:
    """Top-1 accuracy, corrupting per-image with sub-seeds of noise.seed."""
    images = dataset.images if noise.ratio == 0.0 else corrupt_batch(dataset.images, noise)
    return _accuracy(net, images, dataset.labels)


def train(config: ExperimentConfig, train_set: Dataset, test_set: Dataset,
          epoch_callback=None, resume_from: str | None = None):
    """Run one experiment cell; returns (net, optimizer, log).

    The log starts with a pre-training evaluation row (epoch 0) and adds one
    row per ``eval_every`` epochs. ``resume_from`` restarts from a checkpoint
    written by ``run_cell`` (or any checkpoint carrying epoch/log extras) and
    continues to ``config.epochs``, reproducing the uninterrupted run's rows.
    ``epoch_callback(epoch, net)``, when given, runs after every epoch.
    """
    if len(train_set) == 0 or len(test_set) == 0:
        raise ValueError("train and test sets must be non-empty")

    test_noise = NoiseSpec(config.noise_ratio, seed=config.seed,
                           per_channel=config.noise_per_channel)
    noisy_test = (test_set.images if config.noise_ratio == 0.0
                  else corrupt_batch(test_set.images, test_noise))
    train_images = train_set.images
    if config.train_noise == "noisy":
        train_images = corrupt_batch(
            train_images, NoiseSpec(config.noise_ratio,
                                    seed=subseed(config.seed, _TRAIN_NOISE_SALT),
                                    per_channel=config.noise_per_channel))

    start_epoch = 0
    log = TrainingLog(config.dataset, config.tag, config.seed)
    if resume_from is None:
        net = build_network(config.network)
        optimizer = Adam(net, lr=config.lr, beta1=config.beta1,
                         beta2=config.beta2, epsilon=config.epsilon)
    else:
        net, optimizer, extra = data_io.load_checkpoint(resume_from)
        if net.spec != config.network:
            raise ValueError("checkpoint spec does not match config.network")
        if optimizer is None or "epoch" not in extra:
            raise ValueError(f"{resume_from} is not a resumable training checkpoint")
        start_epoch = int(extra["epoch"])
        log.rows = [LogRow(*row) for row in extra["log_rows"]]

    t0 = time.perf_counter()

    def record(epoch: int, train_loss: float):
        clean = _accuracy(net, test_set.images, test_set.labels)
        noisy = _accuracy(net, noisy_test, test_set.labels)
        wall = (time.perf_counter() - t0) * 1e3
        log.rows.append(LogRow(epoch, train_loss, clean, noisy, wall))

    if start_epoch == 0:
        record(0, float("nan"))

    n = len(train_set)
    for epoch in range(start_epoch + 1, config.epochs + 1):
        order = np.random.default_rng(subseed(config.seed, epoch)).permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            net.zero_grad()
            loss, _ = net.loss_and_gradients(train_images[idx], train_set.labels[idx])
            optimizer.step(net)
            loss_sum += loss * idx.size
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            record(epoch, loss_sum / n)
        if epoch_callback is not None:
            epoch_callback(epoch, net)

    return net, optimizer, log


def run_cell(config: ExperimentConfig, train_set: Dataset, test_set: Dataset,
             out_dir: str, resume: bool = True):
    """Train one cell and persist its CSV log and final checkpoint.

    Returns the summary dict used by sweep(). A completed cell (checkpoint +
    CSV already present) is loaded instead of re-trained when ``resume``.
    """
    os.makedirs(out_dir, exist_ok=True)
    log_name = f"{config.dataset}_{config.tag}_{config.seed}"
    csv_path = os.path.join(out_dir, log_name + ".csv")
    ckpt_path = os.path.join(out_dir, log_name + ".ckpt")
    if resume and os.path.exists(csv_path) and os.path.exists(ckpt_path):
        with open(csv_path) as fh:
            log = TrainingLog.from_csv(fh.read(), config.dataset, config.tag,
                                       config.seed)
        skipped = True
    else:
        net, optimizer, log = train(config, train_set, test_set)
        data_io.save_checkpoint(
            ckpt_path, net, optimizer,
            extra={"epoch": config.epochs,
                   "log_rows": [[r.epoch, r.train_loss, r.clean_acc, r.noisy_acc,
                                 r.wall_ms] for r in log.rows],
                   "config_seed": config.seed})
        data_io.atomic_write(csv_path, log.to_csv().encode())
        skipped = False
    return {
        "dataset": config.dataset,
        "tag": config.tag,
        "seed": config.seed,
        "status": "cached" if skipped else "ok",
        "final_clean": final_window_mean(log, "clean_acc"),
        "final_noisy": final_window_mean(log, "noisy_acc"),
        "checkpoint": ckpt_path,
        "csv": csv_path,
    }


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------

def _worker_thread_cap():
    try:  # trim BLAS threads so parallel cells do not oversubscribe cores
        import threadpoolctl
        threadpoolctl.threadpool_limits(1)
    except ImportError:
        pass


def _run_cell_job(args):
    config, train_set, test_set, out_dir = args
    try:
        return run_cell(config, train_set, test_set, out_dir)
    except Exception:
        return {"dataset": config.dataset, "tag": config.tag, "seed": config.seed,
                "status": "failed", "final_clean": float("nan"),
                "final_noisy": float("nan"), "error": traceback.format_exc()}


def worker_count(default: int | None = None) -> int:
    env = os.environ.get("STREAMNET_THREADS", "")
    if env.strip():
        return max(1, int(env))
    if default is not None:
        return default
    return os.cpu_count() or 1


def sweep(cells: list, data: dict, out_dir: str, workers: int | None = None) -> list:
    """Run every cell (in parallel when workers > 1); returns sorted summaries.

    ``data`` maps config.dataset names to (train, test) Dataset pairs. One
    failed cell is reported in its summary row and does not stop the sweep.
    A summary CSV keyed by legend tag is written to out_dir/summary.csv.
    """
    jobs = [(cfg, data[cfg.dataset][0], data[cfg.dataset][1], out_dir)
            for cfg in cells]
    nworkers = worker_count() if workers is None else workers
    if nworkers > 1 and len(jobs) > 1:
        import multiprocessing
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(nworkers, initializer=_worker_thread_cap) as pool:
            results = pool.map(_run_cell_job, jobs)
    else:
        results = [_run_cell_job(j) for j in jobs]
    results.sort(key=lambda r: (r["dataset"], r["tag"], r["seed"]))
    lines = ["dataset,tag,seed,status,final_clean,final_noisy"]
    for r in results:
        lines.append(f"{r['dataset']},{r['tag']},{r['seed']},{r['status']},"
                     f"{r['final_clean']:.6f},{r['final_noisy']:.6f}")
    os.makedirs(out_dir, exist_ok=True)
    data_io.atomic_write(os.path.join(out_dir, "summary.csv"),
                          ("\n".join(lines) + "\n").encode())
    return results
