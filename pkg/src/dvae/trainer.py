"""Stochastic-gradient-ascent training loop with validation-ELBO early
stopping, plus model evaluation, checkpoint serialization and metrics rows.

Random streams are all derived from the single config seed by fixed,
documented offsets:

    seed + 1               encoder parameter init
    seed + 2               decoder parameter init
    seed + 3               epoch shuffling (one stream, advancing over epochs)
    seed + 4               validation sampling (re-seeded every epoch, so
                           validation uses common draws across epochs)
    seed + 1_000_000 + i   gradient sampling for training example i
                           (re-seeded every epoch, so a frozen model yields
                           identical metrics in every epoch)

Per-example streams keyed by dataset index make the recorded per-example
ELBO values independent of batch order, and make a zero-learning-rate run
produce the same metrics row every epoch.
"""

from __future__ import annotations

import math
import struct
import time
from dataclasses import dataclass, fields

import numpy as np

from dvae.data import Dataset, batches
from dvae.distributions import Rng
from dvae.model import DiscreteVae, ElboBreakdown, elbo_estimate
from dvae.network import HEAD_SIGMOID, HEAD_SOFTMAX, LinearLayer, Mlp

ENCODER_INIT_OFFSET = 1
DECODER_INIT_OFFSET = 2
SHUFFLE_OFFSET = 3
VALIDATION_OFFSET = 4
EXAMPLE_STREAM_BASE = 1_000_000

CHECKPOINT_MAGIC = b"DVAECKPT"
CHECKPOINT_VERSION = 1

METRICS_HEADER = "epoch,train_elbo,train_entropy,train_prior,train_recon,val_elbo,seconds"


class TrainingDiverged(RuntimeError):
    """The ELBO became non-finite during training."""


class CheckpointFormatError(ValueError):
    """Wrong magic or unsupported version."""


class CheckpointCorruptError(ValueError):
    """Header or payload inconsistent with the manifest."""


@dataclass
class TrainConfig:
    d_latents: int
    k_categories: int
    hidden_width: int = 512
    learning_rate: float = 1e-3
    batch_size: int = 100
    max_epochs: int = 50
    patience: int = 5
    seed: int = 42
    binarize_threshold: int = 128
    mc_samples: int = 1

    def __post_init__(self):
        for name in ("d_latents", "k_categories", "hidden_width", "batch_size",
                     "max_epochs", "mc_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        # 0 is allowed as an explicit "no updates" control run.
        if self.learning_rate < 0:
            raise ValueError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        if not 0 < self.binarize_threshold < 255:
            raise ValueError(f"threshold must lie in (0, 255), got {self.binarize_threshold}")


@dataclass
class MetricsRow:
    """One epoch's summary; epoch 0 is the pre-training state. seconds is
    wall-clock time since training started (not deterministic)."""

    epoch: int
    train_elbo: float
    train_entropy: float
    train_prior: float
    train_recon: float
    val_elbo: float
    seconds: float


@dataclass
class Checkpoint:
    """A deserialized model with the context it was saved under."""

    version: int
    config: dict[str, str]
    model: DiscreteVae
    epoch: int
    rng_state: int


def build_model(config: TrainConfig, p: int) -> DiscreteVae:
    """Fresh model for pixel count p, seeded from the config."""
    return DiscreteVae.create(
        p, config.d_latents, config.k_categories, config.hidden_width,
        Rng(config.seed + ENCODER_INIT_OFFSET),
        Rng(config.seed + DECODER_INIT_OFFSET),
    )


def evaluate(model: DiscreteVae, dataset: Dataset, rng: Rng) -> ElboBreakdown:
    """Mean of single-sample ELBO estimates over the dataset, iterated in
    index order and drawing latents sequentially from rng."""
    sums = np.zeros(3)
    for i in range(dataset.n):
        x = dataset.images[i]
        params = model.encode(x)
        z = model.sample_latent(params, rng)
        bd = elbo_estimate(x, params, model.decode(z))
        sums += (bd.entropy_term, bd.prior_term, bd.recon_term)
    means = sums / dataset.n
    return ElboBreakdown.from_terms(means[0], means[1], means[2])


def _example_mean_breakdown(model: DiscreteVae, x: np.ndarray, seed: int,
                            index: int, mc_samples: int) -> ElboBreakdown:
    """Mean single-sample breakdown for one example under its own stream,
    consuming exactly the draws the gradient pass would."""
    rng = Rng(seed + EXAMPLE_STREAM_BASE + index)
    sums = np.zeros(3)
    params = model.encode(x)
    for _ in range(mc_samples):
        z = model.sample_latent(params, rng)
        bd = elbo_estimate(x, params, model.decode(z))
        sums += (bd.entropy_term, bd.prior_term, bd.recon_term)
    means = sums / mc_samples
    return ElboBreakdown.from_terms(means[0], means[1], means[2])


def _train_set_mean(model: DiscreteVae, dataset: Dataset,
                    config: TrainConfig) -> ElboBreakdown:
    """Pre-training train metrics, matching the per-example streams a
    training epoch would consume."""
    sums = np.zeros(3)
    for i in range(dataset.n):
        bd = _example_mean_breakdown(model, dataset.images[i], config.seed, i,
                                     config.mc_samples)
        sums += (bd.entropy_term, bd.prior_term, bd.recon_term)
    means = sums / dataset.n
    return ElboBreakdown.from_terms(means[0], means[1], means[2])


def _snapshot(model: DiscreteVae) -> list[np.ndarray]:
    return [a.copy() for a in model.encoder.param_arrays() + model.decoder.param_arrays()]


def _restore(model: DiscreteVae, snapshot: list[np.ndarray]) -> None:
    for live, saved in zip(model.encoder.param_arrays() + model.decoder.param_arrays(),
                           snapshot):
        live[:] = saved


def train(config: TrainConfig, train_set: Dataset, val_set: Dataset,
          checkpoint_path=None) -> tuple[DiscreteVae, list[MetricsRow]]:
    """Run the ascent loop: per batch, accumulate per-example gradients,
    average them, and step the encoder then the decoder. Training stops when
    the mean validation ELBO has not improved for `patience` epochs or at
    max_epochs; the returned model carries the best-validation parameters.

    If checkpoint_path is given, the best model is also serialized there.
    """
    if train_set.p != val_set.p:
        raise ValueError(f"pixel counts differ: train {train_set.p}, val {val_set.p}")
    model = build_model(config, train_set.p)
    shuffle_rng = Rng(config.seed + SHUFFLE_OFFSET)
    start = time.perf_counter()
    history: list[MetricsRow] = []

    def record(epoch: int, train_bd: ElboBreakdown, val_bd: ElboBreakdown) -> None:
        history.append(MetricsRow(
            epoch, train_bd.total, train_bd.entropy_term, train_bd.prior_term,
            train_bd.recon_term, val_bd.total, time.perf_counter() - start,
        ))

    val_bd = evaluate(model, val_set, Rng(config.seed + VALIDATION_OFFSET))
    record(0, _train_set_mean(model, train_set, config), val_bd)
    best_val = val_bd.total
    best_epoch = 0
    best_params = _snapshot(model)
    best_rng_state = shuffle_rng.state
    stale = 0

    for epoch in range(1, config.max_epochs + 1):
        sums = np.zeros(3)
        n_samples = 0
        for batch_i, batch in enumerate(batches(train_set, config.batch_size, shuffle_rng)):
            model.encoder.zero_grads()
            model.decoder.zero_grads()
            for idx in batch:
                ex_rng = Rng(config.seed + EXAMPLE_STREAM_BASE + int(idx))
                for _ in range(config.mc_samples):
                    _, bd = model.compute_gradients(train_set.images[idx], ex_rng)
                    if not math.isfinite(bd.total):
                        raise TrainingDiverged(
                            f"non-finite ELBO estimate at epoch {epoch}, batch {batch_i}"
                        )
                    sums += (bd.entropy_term, bd.prior_term, bd.recon_term)
                    n_samples += 1
            scale = 1.0 / (len(batch) * config.mc_samples)
            model.encoder.scale_grads(scale)
            model.decoder.scale_grads(scale)
            if config.learning_rate > 0.0:
                model.encoder.sga_step(config.learning_rate)  # phi first,
                model.decoder.sga_step(config.learning_rate)  # then theta
        means = sums / n_samples
        train_bd = ElboBreakdown.from_terms(means[0], means[1], means[2])
        val_bd = evaluate(model, val_set, Rng(config.seed + VALIDATION_OFFSET))
        record(epoch, train_bd, val_bd)
        if val_bd.total > best_val:
            best_val = val_bd.total
            best_epoch = epoch
            best_params = _snapshot(model)
            best_rng_state = shuffle_rng.state
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    _restore(model, best_params)
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path, config=config, epoch=best_epoch,
                        rng_state=best_rng_state)
    return model, history


def write_metrics_csv(history: list[MetricsRow], path) -> None:
    """Metrics CSV, one row per epoch, floats formatted %.6f."""
    with open(path, "w", encoding="ascii") as f:
        f.write(METRICS_HEADER + "\n")
        for r in history:
            f.write("%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n" % (
                r.epoch, r.train_elbo, r.train_entropy, r.train_prior,
                r.train_recon, r.val_elbo, r.seconds))


def _tensor_entries(model: DiscreteVae) -> list[tuple[str, np.ndarray]]:
    out = []
    for prefix, net in (("enc", model.encoder), ("dec", model.decoder)):
        for i, layer in enumerate(net.layers):
            out.append((f"{prefix}.{i}.w", layer.weights))
            out.append((f"{prefix}.{i}.b", layer.bias))
    return out


def save_checkpoint(model: DiscreteVae, path, config: TrainConfig | None = None,
                    epoch: int = 0, rng_state: int = 0) -> None:
    """Serialize a model: 8-byte magic, uint32 version, a length-prefixed
    UTF-8 key=value header (config echo and tensor manifest), then each
    tensor as raw little-endian float64 in manifest order."""
    entries = _tensor_entries(model)
    lines = [f"d={model.d}", f"k={model.k}", f"p={model.p}",
             f"epoch={epoch}", f"rng_state={rng_state}"]
    if config is not None:
        lines += [f"cfg.{f.name}={getattr(config, f.name)}" for f in fields(config)]
    lines += [f"tensor={name} shape={','.join(str(s) for s in arr.shape)}"
              for name, arr in entries]
    header = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for _, arr in entries:
            f.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    """Parse a checkpoint back into a model plus its saved context.

    Raises CheckpointFormatError on a wrong magic or version and
    CheckpointCorruptError when the payload does not match the manifest.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", blob[8:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(
            f"{path}: version {version}, this build reads version {CHECKPOINT_VERSION}"
        )
    (header_len,) = struct.unpack("<I", blob[12:16])
    if len(blob) < 16 + header_len:
        raise CheckpointCorruptError(f"{path}: truncated header")
    header = blob[16:16 + header_len].decode("utf-8")

    meta: dict[str, str] = {}
    manifest: list[tuple[str, tuple[int, ...]]] = []
    for line in header.splitlines():
        key, _, value = line.partition("=")
        if key == "tensor":
            name, _, shape_part = value.partition(" shape=")
            manifest.append((name, tuple(int(s) for s in shape_part.split(","))))
        else:
            meta[key] = value

    payload = blob[16 + header_len:]
    expected = sum(int(np.prod(shape)) * 8 for _, shape in manifest)
    if len(payload) != expected:
        raise CheckpointCorruptError(
            f"{path}: payload is {len(payload)} bytes, manifest promises {expected}"
        )

    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in manifest:
        count = int(np.prod(shape))
        tensors[name] = np.frombuffer(
            payload, dtype="<f8", count=count, offset=offset
        ).astype(np.float64).reshape(shape)
        offset += count * 8

    d, k = int(meta["d"]), int(meta["k"])

    def rebuild(prefix: str) -> list[LinearLayer]:
        layers = []
        for i in range(sum(1 for n in tensors if n.startswith(f"{prefix}.") and n.endswith(".w"))):
            layers.append(LinearLayer(tensors[f"{prefix}.{i}.w"], tensors[f"{prefix}.{i}.b"]))
        return layers

    encoder = Mlp(rebuild("enc"), HEAD_SOFTMAX, softmax_shape=(d, k))
    decoder = Mlp(rebuild("dec"), HEAD_SIGMOID)
    model = DiscreteVae(encoder, decoder, d, k)
    config = {key[4:]: value for key, value in meta.items() if key.startswith("cfg.")}
    return Checkpoint(version, config, model, int(meta["epoch"]), int(meta["rng_state"]))
