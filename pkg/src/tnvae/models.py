"""VAE variants for time series and their training loop.

Two variants share one architecture: a `standard` model reconstructs its
input row, a `time_neighbor` model is trained to predict the next row, so
the encoding of x_t represents the latent state at t+1. The loss is
squared-error reconstruction (summed over features, averaged over the
batch) plus a beta-weighted KL term against the standard-normal prior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .data import SeriesMatrix, Splits
from .errors import ConfigError, DataError, NumericError, UsageError
from .metrics import EncodingMatrix, NeighborLoss, neighbor_loss
from .nn import (
    DiagGaussian,
    MlpNetwork,
    adam_step,
    backward_pass,
    clamp_log_var,
    forward_pass,
    init_adam,
    init_mlp,
    network_from_lines,
    network_to_lines,
)
from .rng import RngStream

VARIANTS = ("standard", "time_neighbor")

# declared sweep domains; grid points outside these are configuration errors
HP_DOMAINS = {
    "n_layers": (2, 4),
    "hidden_width": (50, 400),
    "beta": (1e-4, 1e-3),
    "lr": (1e-5, 1e-3),
}


@dataclass(frozen=True)
class Hyperparams:
    """One point of the sweep grid."""

    variant: str
    n_layers: int
    hidden_width: int
    latent_dim: int
    beta: float
    batch_size: int
    lr: float

    def validate(self) -> "Hyperparams":
        if self.variant not in VARIANTS:
            raise ConfigError(f"axis 'variant': {self.variant!r} not in {VARIANTS}")
        for name in ("n_layers", "hidden_width"):
            lo, hi = HP_DOMAINS[name]
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or not lo <= v <= hi:
                raise ConfigError(f"axis '{name}': {v!r} outside [{lo}, {hi}]")
        for name in ("beta", "lr"):
            lo, hi = HP_DOMAINS[name]
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ConfigError(f"axis '{name}': {v!r} outside [{lo}, {hi}]")
        if not isinstance(self.latent_dim, (int, np.integer)) or self.latent_dim < 2:
            raise ConfigError(f"axis 'latent_dim': {self.latent_dim!r} must be >= 2")
        if not isinstance(self.batch_size, (int, np.integer)) or self.batch_size < 1:
            raise ConfigError(f"axis 'batch_size': {self.batch_size!r} must be >= 1")
        return self

    def canonical(self) -> str:
        return (
            f"variant={self.variant},n_layers={self.n_layers},"
            f"hidden_width={self.hidden_width},latent_dim={self.latent_dim},"
            f"beta={self.beta!r},batch_size={self.batch_size},lr={self.lr!r}"
        )


@dataclass
class VaeModel:
    encoder: MlpNetwork
    decoder: MlpNetwork
    latent_dim: int
    variant: str
    beta: float

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.beta < 0:
            raise ConfigError("beta must be non-negative")
        if self.encoder.out_dim != 2 * self.latent_dim:
            raise ConfigError("encoder must output mean and log_var per latent dim")
        if self.decoder.in_dim != self.latent_dim:
            raise ConfigError("decoder input must match latent_dim")
        if self.decoder.out_dim != self.encoder.in_dim:
            raise ConfigError("decoder output must match the data dimension")

    @property
    def data_dim(self) -> int:
        return self.encoder.in_dim

    def parameters(self) -> list:
        return self.encoder.parameters() + self.decoder.parameters()


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")


def build_vae(hp: Hyperparams, data_dim: int, rng: RngStream) -> VaeModel:
    """Mirrored encoder/decoder MLPs: D -> widths -> 2d and d -> widths -> D."""
    hp.validate()
    hidden = [hp.hidden_width] * hp.n_layers
    encoder = init_mlp([data_dim] + hidden + [2 * hp.latent_dim], rng.substream("encoder"))
    decoder = init_mlp([hp.latent_dim] + hidden[::-1] + [data_dim], rng.substream("decoder"))
    return VaeModel(encoder, decoder, hp.latent_dim, hp.variant, hp.beta)


# ---------------------------------------------------------------------------
# loss


class ElboOut(NamedTuple):
    loss: float
    recon: float
    kl: float
    grads: list  # mirrors model.parameters() (encoder first)


class ElboValue(NamedTuple):
    loss: float
    recon: float
    kl: float


def _posterior_parts(model: VaeModel, inputs: np.ndarray):
    enc_out, enc_cache = forward_pass(model.encoder, inputs)
    d = model.latent_dim
    mu, lv_raw = enc_out[:, :d], enc_out[:, d:]
    return mu, lv_raw, clamp_log_var(lv_raw), enc_cache


def _elbo_grads(model: VaeModel, inputs, targets, eps) -> ElboOut:
    """Loss and exact gradients for one batch with the noise draw given."""
    n = inputs.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        mu, lv_raw, lv, enc_cache = _posterior_parts(model, inputs)
        sig = np.exp(0.5 * lv)
        z = mu + sig * eps
        x_hat, dec_cache = forward_pass(model.decoder, z)
        resid = x_hat - targets
        recon = float((resid**2).sum() / n)
        kl = float(0.5 * (mu**2 + np.exp(lv) - 1.0 - lv).sum() / n)
        loss = recon + model.beta * kl

        dec_grads, dz = backward_pass(model.decoder, dec_cache, 2.0 * resid / n)
        d_mu = dz + model.beta * mu / n
        d_lv = dz * eps * 0.5 * sig + model.beta * 0.5 * (np.exp(lv) - 1.0) / n
        inside = (lv_raw > -30.0) & (lv_raw < 30.0)  # clamp blocks gradient outside
        d_enc = np.concatenate([d_mu, np.where(inside, d_lv, 0.0)], axis=1)
        enc_grads, _ = backward_pass(model.encoder, enc_cache, d_enc)
    return ElboOut(loss, recon, kl, enc_grads + dec_grads)


def _elbo_value(model: VaeModel, inputs, targets, eps) -> ElboValue:
    n = inputs.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        mu, _, lv, _ = _posterior_parts(model, inputs)
        z = mu + np.exp(0.5 * lv) * eps
        x_hat, _ = forward_pass(model.decoder, z)
        recon = float(((x_hat - targets) ** 2).sum() / n)
        kl = float(0.5 * (mu**2 + np.exp(lv) - 1.0 - lv).sum() / n)
    return ElboValue(recon + model.beta * kl, recon, kl)


def _as_batch(rows) -> np.ndarray:
    batch = np.asarray(rows, dtype=np.float64)
    if batch.ndim == 1:
        batch = batch[None, :]
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise UsageError("expected a non-empty (batch, dim) array of rows")
    return batch


def vae_loss(model: VaeModel, batch, rng: RngStream) -> ElboOut:
    """Standard-variant loss on data rows: reconstruct each row from its own
    posterior sample. Returns loss, its two logged terms, and gradients."""
    if model.variant != "standard":
        raise UsageError("vae_loss applies to the standard variant")
    batch = _as_batch(batch)
    eps = rng.standard_normal((batch.shape[0], model.latent_dim))
    return _elbo_grads(model, batch, batch, eps)


def tnvae_loss(model: VaeModel, pairs, rng: RngStream) -> ElboOut:
    """Next-step loss on (x_t, x_{t+1}) pairs: encode x_t, decode a sample of
    q(z_{t+1} | x_t), score against x_{t+1}."""
    if model.variant != "time_neighbor":
        raise UsageError("tnvae_loss applies to the time_neighbor variant")
    pairs = np.asarray(pairs, dtype=np.float64)
    if pairs.size == 0:
        raise UsageError("empty pair list")
    if pairs.ndim != 3 or pairs.shape[1] != 2:
        raise UsageError("pairs must be (n, 2, dim): rows (x_t, x_{t+1})")
    eps = rng.standard_normal((pairs.shape[0], model.latent_dim))
    return _elbo_grads(model, pairs[:, 0], pairs[:, 1], eps)


# ---------------------------------------------------------------------------
# encoding


def encode(model: VaeModel, x, t: int):
    """Posterior for one row plus the time index the latent represents
    (t for standard, t+1 for time_neighbor)."""
    x = np.asarray(x, dtype=np.float64)
    out, _ = forward_pass(model.encoder, x[None, :])
    d = model.latent_dim
    q = DiagGaussian(out[0, :d], clamp_log_var(out[0, d:]))
    shift = 1 if model.variant == "time_neighbor" else 0
    return q, t + shift


def encode_values(model: VaeModel, values: np.ndarray) -> np.ndarray:
    """Posterior means for every row (no sampling)."""
    out, _ = forward_pass(model.encoder, values)
    return out[:, : model.latent_dim]


def encode_series(model: VaeModel, series, source_model="") -> EncodingMatrix:
    """Encode a series into posterior means with assigned time indices.

    For the time_neighbor variant indices are shifted by one: the first
    latent row represents index 1 and the final input row maps one step
    beyond the series.
    """
    values = series.values if isinstance(series, SeriesMatrix) else np.asarray(series, dtype=np.float64)
    shift = 1 if model.variant == "time_neighbor" else 0
    indices = np.arange(values.shape[0], dtype=np.int64) + shift
    return EncodingMatrix(encode_values(model, values), indices, source_model)


# ---------------------------------------------------------------------------
# training


@dataclass
class ModelRecord:
    """Persisted outcome of one training run."""

    hyperparams: Hyperparams
    seed: int
    epochs: int
    final_train_loss: float = float("nan")
    final_val_loss: float = float("nan")
    final_val_recon: float = float("nan")
    final_val_kl: float = float("nan")
    val_nl: float = float("nan")
    val_nl_per_pair: float = float("nan")
    loss_curves: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    checkpoint_ref: str = ""
    failed: bool = False
    note: str = ""
    run_id: str = ""

    def criterion_value(self, criterion: str) -> float:
        if criterion == "val_loss":
            return self.final_val_loss
        if criterion in ("neighbor_loss", "nl", "val_nl"):
            return self.val_nl
        raise UsageError(f"unknown selection criterion {criterion!r}")

    def save(self, path) -> None:
        hp = self.hyperparams
        lines = ["tnvae-record v1"]
        for key, val in [
            ("run_id", self.run_id),
            ("variant", hp.variant),
            ("n_layers", hp.n_layers),
            ("hidden_width", hp.hidden_width),
            ("latent_dim", hp.latent_dim),
            ("beta", repr(hp.beta)),
            ("batch_size", hp.batch_size),
            ("lr", repr(hp.lr)),
            ("seed", self.seed),
            ("epochs", self.epochs),
            ("failed", "true" if self.failed else "false"),
            ("note", self.note),
            ("final_train_loss", repr(self.final_train_loss)),
            ("final_val_loss", repr(self.final_val_loss)),
            ("final_val_recon", repr(self.final_val_recon)),
            ("final_val_kl", repr(self.final_val_kl)),
            ("val_nl", repr(self.val_nl)),
            ("val_nl_per_pair", repr(self.val_nl_per_pair)),
            ("checkpoint_ref", self.checkpoint_ref),
        ]:
            lines.append(f"{key} = {val}")
        lines.append("curves = epoch train_loss val_loss val_nl")
        for e, row in enumerate(np.asarray(self.loss_curves).tolist()):
            lines.append(f"curve {e} {row[0]!r} {row[1]!r} {row[2]!r}")
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")

    @staticmethod
    def load(path) -> "ModelRecord":
        try:
            with open(path, encoding="utf-8") as f:
                lines = f.read().splitlines()
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
        if not lines or lines[0] != "tnvae-record v1":
            raise UsageError(f"{path} is not a model record")
        fields_, curves = {}, []
        for line in lines[1:]:
            if line.startswith("curve "):
                parts = line.split()
                curves.append([float(parts[2]), float(parts[3]), float(parts[4])])
            else:
                key, _, val = line.partition(" = ")
                fields_[key.strip()] = val
        try:
            hp = Hyperparams(
                variant=fields_["variant"],
                n_layers=int(fields_["n_layers"]),
                hidden_width=int(fields_["hidden_width"]),
                latent_dim=int(fields_["latent_dim"]),
                beta=float(fields_["beta"]),
                batch_size=int(fields_["batch_size"]),
                lr=float(fields_["lr"]),
            )
            return ModelRecord(
                hyperparams=hp,
                seed=int(fields_["seed"]),
                epochs=int(fields_["epochs"]),
                final_train_loss=float(fields_["final_train_loss"]),
                final_val_loss=float(fields_["final_val_loss"]),
                final_val_recon=float(fields_["final_val_recon"]),
                final_val_kl=float(fields_["final_val_kl"]),
                val_nl=float(fields_["val_nl"]),
                val_nl_per_pair=float(fields_["val_nl_per_pair"]),
                loss_curves=np.array(curves) if curves else np.zeros((0, 3)),
                checkpoint_ref=fields_["checkpoint_ref"],
                failed=fields_["failed"] == "true",
                note=fields_["note"],
                run_id=fields_["run_id"],
            )
        except (KeyError, ValueError) as exc:
            raise UsageError(f"malformed record {path}: {exc}") from exc


def train(hp: Hyperparams, splits: Splits, config: TrainConfig, checkpoint_path=None, run_id="") -> ModelRecord:
    """Minibatch Adam over the split pairs, fully deterministic given the seed.

    Per epoch it logs mean train loss, full-batch validation loss, and the
    neighbor loss of the test-segment encoding. A non-finite loss aborts and
    returns a record flagged failed with the epoch/batch index.
    """
    hp.validate()
    series = splits.series
    values = series.values
    root = RngStream(config.seed)
    model = build_vae(hp, series.dim, root.substream("init"))
    params = model.parameters()
    adam = init_adam(params, config.lr)
    shift = 1 if model.variant == "time_neighbor" else 0
    test_values = values[splits.test_start :]

    record = ModelRecord(hyperparams=hp, seed=config.seed, epochs=config.epochs, run_id=run_id)
    curves = []
    val = ElboValue(math.nan, math.nan, math.nan)
    nl = NeighborLoss(math.nan, math.nan, 0)
    for epoch in range(config.epochs):
        order = splits.train_pairs[root.substream("shuffle", epoch).permutation(len(splits.train_pairs))]
        train_rng = root.substream("train", epoch)
        running, seen = 0.0, 0
        try:
            for batch_i, start in enumerate(range(0, len(order), config.batch_size)):
                idx = order[start : start + config.batch_size]
                eps = train_rng.standard_normal((len(idx), model.latent_dim))
                try:
                    out = _elbo_grads(model, values[idx], values[idx + shift], eps)
                except NumericError as exc:
                    raise NumericError(f"epoch {epoch} batch {batch_i}: {exc}") from exc
                if not np.isfinite(out.loss):
                    raise NumericError(f"epoch {epoch} batch {batch_i}: non-finite loss")
                adam_step(adam, params, out.grads)
                running += out.loss * len(idx)
                seen += len(idx)
            val_eps = root.substream("val", epoch).standard_normal(
                (len(splits.val_pairs), model.latent_dim)
            )
            val = _elbo_value(model, values[splits.val_pairs], values[splits.val_pairs + shift], val_eps)
            nl = neighbor_loss(encode_series(model, test_values, run_id))
        except NumericError as exc:
            record.failed = True
            record.note = str(exc)
            record.loss_curves = np.array(curves) if curves else np.zeros((0, 3))
            return record
        curves.append((running / seen, val.loss, nl.total))

    record.loss_curves = np.array(curves)
    record.final_train_loss = curves[-1][0]
    record.final_val_loss = val.loss
    record.final_val_recon = val.recon
    record.final_val_kl = val.kl
    record.val_nl = nl.total
    record.val_nl_per_pair = nl.per_pair
    if checkpoint_path is not None:
        save_model(checkpoint_path, model)
        record.checkpoint_ref = str(checkpoint_path)
    return record


# ---------------------------------------------------------------------------
# checkpoints


def save_model(path, model: VaeModel) -> None:
    lines = [
        "vae-checkpoint v1",
        f"variant = {model.variant}",
        f"latent_dim = {model.latent_dim}",
        f"beta = {float(model.beta).hex()}",
    ]
    lines += network_to_lines(model.encoder, "encoder")
    lines += network_to_lines(model.decoder, "decoder")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_model(path) -> VaeModel:
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not lines or lines[0] != "vae-checkpoint v1":
        raise UsageError(f"{path} is not a vae checkpoint")
    header = {}
    blocks, current = {}, None
    for line in lines[1:]:
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            blocks[current] = []
        elif current is None:
            key, _, val = line.partition(" = ")
            header[key.strip()] = val
        else:
            blocks[current].append(line)
    try:
        return VaeModel(
            encoder=network_from_lines(blocks["encoder"]),
            decoder=network_from_lines(blocks["decoder"]),
            latent_dim=int(header["latent_dim"]),
            variant=header["variant"],
            beta=float.fromhex(header["beta"]),
        )
    except (KeyError, ValueError) as exc:
        raise UsageError(f"malformed checkpoint {path}: {exc}") from exc
