"""The VAE itself: encoder, grid-based and pointwise decoders, loss assembly,
and the training loop.

The encoder maps a flattened surface to a Gaussian over latent space (mean
and log-variance, log-variance clamped to [-10, 10]). The grid decoder maps
z straight back to the full lattice; the pointwise decoder maps
(z, log maturity, delta) to a single vol and is the default for its off-grid
evaluation and exact coordinate Greeks. Both decoders end in softplus so
decoded vols are strictly positive.

Training minimizes RE + beta * KL (mean over the batch), optionally plus
static-arbitrage penalties, with one reparameterization draw per surface per
step. In the pointwise scheme every batch element contributes its full set
of grid coordinates to the decoder batch, so all grid points of a surface
appear every epoch.
"""

import json
from dataclasses import dataclass

import numpy as np

from volcraft import arbitrage, nncore, surfaces
from volcraft.errors import (
    DecoderKindError,
    DomainError,
    GridMismatchError,
    ShapeError,
    TrainingDivergenceError,
)
from volcraft.surfaces import GridSpec

GRID = "grid"
POINTWISE = "pointwise"

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0

FORMAT_VERSION = 1
DEFAULT_HIDDEN = (32, 32)


@dataclass
class LatentCode:
    """Gaussian over latent space, plus optionally a drawn sample."""

    mean: np.ndarray
    log_variance: np.ndarray
    sample: np.ndarray = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.log_variance = np.asarray(self.log_variance, dtype=np.float64)
        if self.mean.shape != self.log_variance.shape:
            raise ShapeError("mean and log_variance must have equal shape")
        if not (np.isfinite(self.mean).all() and np.isfinite(self.log_variance).all()):
            raise DomainError("latent code entries must be finite")
        self.log_variance = np.clip(self.log_variance, LOGVAR_MIN, LOGVAR_MAX)


@dataclass
class VaeModel:
    encoder: nncore.MlpParams
    decoder_kind: str
    decoder: nncore.MlpParams
    latent_dim: int
    beta: float
    grid: GridSpec
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        d = self.latent_dim
        if d < 1:
            raise DomainError("latent_dim must be >= 1")
        if self.beta < 0:
            raise DomainError("beta must be >= 0")
        if self.decoder_kind not in (GRID, POINTWISE):
            raise DecoderKindError(f"unknown decoder kind {self.decoder_kind!r}")
        n = self.grid.n_points
        if self.encoder.in_dim != n or self.encoder.out_dim != 2 * d:
            raise ShapeError(
                f"encoder must map {n} -> {2 * d}, got "
                f"{self.encoder.in_dim} -> {self.encoder.out_dim}"
            )
        if self.decoder_kind == GRID:
            if self.decoder.in_dim != d or self.decoder.out_dim != n:
                raise ShapeError(f"grid decoder must map {d} -> {n}")
        else:
            if self.decoder.in_dim != d + 2 or self.decoder.out_dim != 1:
                raise ShapeError(f"pointwise decoder must map {d + 2} -> 1")

    def grid_features(self):
        """(n_points, 2) decoder coordinate features in flatten order."""
        coords = self.grid.coordinates()
        log_t, delta = surfaces.normalize_features(coords[:, 0], coords[:, 1])
        return np.column_stack([log_t, delta])


@dataclass
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta: float = 1e-4
    seed: int = 0
    latent_dim: int = 4
    decoder_kind: str = POINTWISE
    hidden_dims: tuple = DEFAULT_HIDDEN
    lambda_cal: float = 0.0
    lambda_but: float = 0.0
    penalty_resolution: int = 12

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise DomainError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise DomainError("learning_rate must be positive")
        if self.beta < 0 or self.lambda_cal < 0 or self.lambda_but < 0:
            raise DomainError("beta and penalty weights must be >= 0")

    @property
    def penalties_on(self):
        return self.lambda_cal > 0.0 or self.lambda_but > 0.0


# --- inference -------------------------------------------------------------


def encode(model, surface_vector):
    """Encoder pass: flattened surface -> LatentCode (mean, log-variance)."""
    vec = np.asarray(surface_vector, dtype=np.float64)
    if vec.shape != (model.grid.n_points,):
        raise ShapeError(f"expected length-{model.grid.n_points} vector, got {vec.shape}")
    out = nncore.forward(model.encoder, vec)
    d = model.latent_dim
    return LatentCode(mean=out[:d], log_variance=out[d:])


def reparameterize(code, rng):
    """z = mean + exp(log_variance / 2) * eps with eps ~ N(0, I) from rng."""
    eps = rng.standard_normal(code.mean.shape)
    return code.mean + np.exp(0.5 * code.log_variance) * eps


def decode_grid(model, z):
    """Grid decoder: z -> flattened surface vector, strictly positive."""
    if model.decoder_kind != GRID:
        raise DecoderKindError("decode_grid needs a grid decoder")
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (model.latent_dim,):
        raise ShapeError(f"z must have shape ({model.latent_dim},)")
    return nncore.forward(model.decoder, z)


def decode_points(model, z, coords):
    """Pointwise decoder on an (n, 2) array of (maturity, delta) rows.

    Rows are evaluated independently: the result is bitwise identical to n
    single-point calls.
    """
    if model.decoder_kind != POINTWISE:
        raise DecoderKindError("decode_points needs a pointwise decoder")
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (model.latent_dim,):
        raise ShapeError(f"z must have shape ({model.latent_dim},)")
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    log_t, delta = surfaces.normalize_features(coords[:, 0], coords[:, 1])
    rows = np.column_stack([np.tile(z, (len(coords), 1)), log_t, delta])
    return nncore.forward_batch(model.decoder, rows)[:, 0]


def decode_point(model, z, maturity, delta):
    """Single off-grid vol; see ``decode_points``."""
    return float(decode_points(model, z, np.array([[maturity, delta]]))[0])


def decode_surface_vector(model, z):
    """Full-lattice decode for either decoder kind, in flatten order."""
    if model.decoder_kind == GRID:
        return decode_grid(model, z)
    return decode_points(model, z, model.grid.coordinates())


def point_greeks(model, z, maturity, delta):
    """Vol and its exact coordinate derivatives at one point, via backprop.

    Returns (vol, dvol/dmaturity, dvol/ddelta); the maturity derivative
    unwinds the log feature map.
    """
    if model.decoder_kind != POINTWISE:
        raise DecoderKindError("coordinate greeks need a pointwise decoder")
    z = np.asarray(z, dtype=np.float64)
    log_t, _ = surfaces.normalize_features(maturity, delta)
    row = np.concatenate([z, [log_t, delta]])
    vol = float(nncore.forward(model.decoder, row)[0])
    _, gx = nncore.backward(model.decoder, row, np.array([1.0]))
    d = model.latent_dim
    return vol, float(gx[d] / maturity), float(gx[d + 1])


# --- losses ----------------------------------------------------------------


def reconstruction_error(x, y):
    """Mean squared error (1/M) sum (x_i - y_i)^2."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"length mismatch: {x.shape} vs {y.shape}")
    return float(np.mean((x - y) ** 2))


def kl_divergence(code):
    """KL(N(mu, sigma^2) || N(0, I)) = 1/2 sum(-1 - log s2 + s2 + mu^2)."""
    s2 = np.exp(code.log_variance)
    return float(0.5 * np.sum(-1.0 - code.log_variance + s2 + code.mean**2))


def _clip_grad(raw, grad):
    inside = (raw > LOGVAR_MIN) & (raw < LOGVAR_MAX)
    return np.where(inside, grad, 0.0)


def total_loss(model, batch, rng, config):
    """Objective and gradients on a batch of flattened surfaces.

    Returns (loss, (encoder_grads, decoder_grads), components) where
    components holds the per-batch means of re, kl, l_cal, l_but. The loss is
    mean_i(RE_i + beta KL_i) plus lambda-weighted penalty means when
    configured. One reparameterization draw per surface is taken from ``rng``.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    n_points = model.grid.n_points
    if x.shape[1] != n_points:
        raise ShapeError(f"batch rows must have length {n_points}")
    n_batch = x.shape[0]
    d = model.latent_dim
    beta = config.beta

    enc_out, enc_cache = nncore.forward_cached(model.encoder, x)
    mu = enc_out[:, :d]
    lv_raw = enc_out[:, d:]
    lv = np.clip(lv_raw, LOGVAR_MIN, LOGVAR_MAX)
    eps = rng.standard_normal((n_batch, d))
    sig = np.exp(0.5 * lv)
    z = mu + sig * eps

    pointwise = model.decoder_kind == POINTWISE
    if pointwise:
        feats = model.grid_features()
        dec_in = np.column_stack(
            [np.repeat(z, n_points, axis=0), np.tile(feats, (n_batch, 1))]
        )
    else:
        dec_in = z
    dec_out, dec_cache = nncore.forward_cached(model.decoder, dec_in)
    y = dec_out.reshape(n_batch, n_points)

    resid = y - x
    re_mean = float(np.mean(resid**2))
    kl_each = 0.5 * np.sum(-1.0 - lv + np.exp(lv) + mu**2, axis=1)
    kl_mean = float(np.mean(kl_each))
    loss = re_mean + beta * kl_mean
    components = {"re": re_mean, "kl": kl_mean, "l_cal": 0.0, "l_but": 0.0}

    d_y = (2.0 / (n_points * n_batch)) * resid

    if config.penalties_on:
        pen_loss, pen_backward, comps = _penalty_forward(model, z, config)
        loss += pen_loss
        components.update(comps)

    if pointwise:
        dec_grads, g_rows = nncore.backward_cached(model.decoder, dec_cache, d_y.reshape(-1, 1))
        gz = g_rows[:, :d].reshape(n_batch, n_points, d).sum(axis=1)
    else:
        dec_grads, gz = nncore.backward_cached(model.decoder, dec_cache, d_y)

    if config.penalties_on:
        pen_dec_grads, pen_gz = pen_backward()
        nncore.add_grads(dec_grads, pen_dec_grads)
        gz = gz + pen_gz

    d_mu = gz + (beta / n_batch) * mu
    d_lv = gz * eps * (0.5 * sig) + (beta / n_batch) * 0.5 * (np.exp(lv) - 1.0)
    d_lv = _clip_grad(lv_raw, d_lv)
    enc_grads, _ = nncore.backward_cached(
        model.encoder, enc_cache, np.concatenate([d_mu, d_lv], axis=1)
    )
    return loss, (enc_grads, dec_grads), components


def _penalty_forward(model, z_batch, config):
    """Arbitrage penalty over the batch's latent draws.

    The decoder is sampled on a dense (delta, t) lattice per z; re-gridding
    operators are frozen from the detached vols (see arbitrage module). The
    returned closure runs the decoder backward once for the whole batch.
    """
    n_batch, d = z_batch.shape
    res = config.penalty_resolution
    grid = model.grid
    t_axis = np.exp(np.linspace(np.log(grid.maturities[0]), np.log(grid.maturities[-1]), res))
    d_axis = np.linspace(grid.deltas[0], grid.deltas[-1], res)
    if model.decoder_kind == POINTWISE:
        coords = np.column_stack([np.repeat(t_axis, res), np.tile(d_axis, res)])
        log_t, delta = surfaces.normalize_features(coords[:, 0], coords[:, 1])
        feats = np.column_stack([log_t, delta])
        dec_in = np.column_stack(
            [np.repeat(z_batch, res * res, axis=0), np.tile(feats, (n_batch, 1))]
        )
        sig_shape = (res, res)
    else:
        t_axis = grid.maturities
        d_axis = grid.deltas
        dec_in = z_batch
        sig_shape = (len(t_axis), len(d_axis))
    dec_out, cache = nncore.forward_cached(model.decoder, dec_in)
    sig_all = dec_out.reshape(n_batch, *sig_shape)

    total = 0.0
    cal_sum = 0.0
    but_sum = 0.0
    cotangents = np.zeros_like(sig_all)
    for i in range(n_batch):
        ops = arbitrage.penalty_operators(sig_all[i], t_axis, d_axis)
        l_cal, l_but, g_cal, g_but = arbitrage.penalty_apply(sig_all[i], ops)
        total += (config.lambda_cal * l_cal + config.lambda_but * l_but) / n_batch
        cal_sum += l_cal / n_batch
        but_sum += l_but / n_batch
        cotangents[i] = (config.lambda_cal * g_cal + config.lambda_but * g_but) / n_batch

    def run_backward():
        if model.decoder_kind == POINTWISE:
            cot = cotangents.reshape(-1, 1)
            grads, g_rows = nncore.backward_cached(model.decoder, cache, cot)
            gz = g_rows[:, :d].reshape(n_batch, -1, d).sum(axis=1)
        else:
            cot = cotangents.reshape(n_batch, -1)
            grads, gz = nncore.backward_cached(model.decoder, cache, cot)
        return grads, gz

    comps = {"l_cal": cal_sum, "l_but": but_sum}
    return total, run_backward, comps


# --- training ---------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    loss: float
    re: float
    kl: float
    l_cal: float
    l_but: float


@dataclass
class TrainResult:
    model: VaeModel
    trace: list


def build_model(grid, config, rng):
    """Fresh model with the default 2x32 architecture unless overridden."""
    d = config.latent_dim
    n = grid.n_points
    hidden = list(config.hidden_dims)
    enc_dims = [n] + hidden + [2 * d]
    enc_acts = [nncore.RELU] * len(hidden) + [nncore.IDENTITY]
    if config.decoder_kind == GRID:
        dec_dims = [d] + hidden + [n]
    else:
        dec_dims = [d + 2] + hidden + [1]
    dec_acts = [nncore.RELU] * len(hidden) + [nncore.SOFTPLUS]
    encoder = nncore.init_mlp(enc_dims, enc_acts, rng)
    decoder = nncore.init_mlp(dec_dims, dec_acts, rng)
    return VaeModel(
        encoder=encoder,
        decoder_kind=config.decoder_kind,
        decoder=decoder,
        latent_dim=d,
        beta=config.beta,
        grid=grid,
    )


def train(corpus, config):
    """Train a VAE on a corpus of ``VolSurface`` sharing one grid.

    Deterministic given the config seed: initialization, shuffling and
    reparameterization draws each use a named child stream of the seed.
    """
    if not corpus:
        raise DomainError("corpus must be non-empty")
    grid = corpus[0].grid
    for surf in corpus[1:]:
        if not grid.matches(surf.grid):
            raise GridMismatchError("all corpus surfaces must share one grid")
    x_all = np.stack([surfaces.flatten(s) for s in corpus])

    init_rng, shuffle_rng, noise_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(3)
    )
    model = build_model(grid, config, init_rng)
    adam_enc = nncore.AdamState.for_params(model.encoder, learning_rate=config.learning_rate)
    adam_dec = nncore.AdamState.for_params(model.decoder, learning_rate=config.learning_rate)

    n = len(corpus)
    trace = []
    for epoch in range(config.epochs):
        perm = shuffle_rng.permutation(n)
        sums = np.zeros(5)  # loss, re, kl, l_cal, l_but weighted by batch size
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            loss, (enc_grads, dec_grads), comps = total_loss(
                model, x_all[idx], noise_rng, config
            )
            if not np.isfinite(loss):
                raise TrainingDivergenceError(
                    f"non-finite loss {loss} at epoch {epoch}",
                    epoch=epoch,
                    batch=start // config.batch_size,
                    trace=trace,
                )
            try:
                nncore.adam_step(adam_enc, model.encoder, enc_grads)
                nncore.adam_step(adam_dec, model.decoder, dec_grads)
            except TrainingDivergenceError as exc:
                raise TrainingDivergenceError(
                    f"{exc} at epoch {epoch}",
                    epoch=epoch,
                    batch=start // config.batch_size,
                    trace=trace,
                ) from exc
            sums += len(idx) * np.array(
                [loss, comps["re"], comps["kl"], comps["l_cal"], comps["l_but"]]
            )
        stats = sums / n
        trace.append(EpochStats(epoch, *stats.tolist()))
    return TrainResult(model=model, trace=trace)


# --- serialization -----------------------------------------------------------


def _mlp_to_dict(mlp):
    return {
        "layers": [
            {
                "activation": layer.activation,
                "weights": layer.weights.tolist(),
                "biases": layer.biases.tolist(),
            }
            for layer in mlp.layers
        ]
    }


def _mlp_from_dict(data):
    return nncore.MlpParams(
        [
            nncore.LayerParams(
                np.array(layer["weights"], dtype=np.float64),
                np.array(layer["biases"], dtype=np.float64),
                layer["activation"],
            )
            for layer in data["layers"]
        ]
    )


def model_to_dict(model):
    return {
        "format_version": model.format_version,
        "grid": {
            "maturities": model.grid.maturities.tolist(),
            "deltas": model.grid.deltas.tolist(),
        },
        "decoder_kind": model.decoder_kind,
        "latent_dim": model.latent_dim,
        "beta": model.beta,
        "encoder": _mlp_to_dict(model.encoder),
        "decoder": _mlp_to_dict(model.decoder),
    }


def model_from_dict(data):
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise DomainError(f"unsupported model format_version {version!r}")
    grid = GridSpec(
        np.array(data["grid"]["maturities"], dtype=np.float64),
        np.array(data["grid"]["deltas"], dtype=np.float64),
    )
    return VaeModel(
        encoder=_mlp_from_dict(data["encoder"]),
        decoder_kind=data["decoder_kind"],
        decoder=_mlp_from_dict(data["decoder"]),
        latent_dim=int(data["latent_dim"]),
        beta=float(data["beta"]),
        grid=grid,
        format_version=version,
    )


def save_model(model, path):
    """Versioned JSON; float64 values round-trip exactly (repr serialization)."""
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))
