"""Energy-based GAN with an autoencoder discriminator for traffic anomaly detection.

The generator rewrites only the non-functional columns of real malicious
records; the discriminator's reconstruction error is the energy.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .neural import AdamState, GradientBundle, Mlp, ShapeError
from .preprocess import FunctionalMask

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    m: float = 1.0
    lambda_pt: float = 0.1
    learning_rate: float = 2e-4
    batch_size: int = 64
    epochs: int = 20
    latent_dim: int = 100
    seed: int = 0
    attack_category: str = "DoS"
    sn_enabled: bool = True
    noise_only_generator: bool = False
    code_dim: int = 100
    gen_hidden: tuple = (512, 256)
    enc_hidden: tuple = (512, 256)
    dec_hidden: tuple = (128, 256)
    beta1: float = 0.5
    beta2: float = 0.999
    leaky_slope: float = 0.2

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("margin m must be positive")
        if self.lambda_pt < 0:
            raise ValueError("lambda_pt must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        self.gen_hidden = tuple(int(w) for w in self.gen_hidden)
        self.enc_hidden = tuple(int(w) for w in self.enc_hidden)
        self.dec_hidden = tuple(int(w) for w in self.dec_hidden)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"


def sample_latent(n: int, latent_dim: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return rng.standard_normal((n, latent_dim))


class Generator:
    """MLP producing replacement values for the mask's non-functional columns.

    Input is ``z || x`` (noise concatenated with the encoded malicious record).
    With ``mask=None`` the generator runs in noise-only mode: input ``z`` alone,
    output a whole ``data_dim`` record.
    """

    def __init__(self, net: Mlp, latent_dim: int, data_dim: int, mask: Optional[FunctionalMask]):
        self.net = net
        self.latent_dim = latent_dim
        self.data_dim = data_dim
        self.mask = mask
        want_in = latent_dim if mask is None else latent_dim + data_dim
        want_out = data_dim if mask is None else mask.n_replaced
        if net.n_in != want_in or net.n_out != want_out:
            raise ShapeError(
                f"generator network is {net.n_in}->{net.n_out}, expected {want_in}->{want_out}"
            )

    @property
    def noise_only(self) -> bool:
        return self.mask is None

    @classmethod
    def build(cls, latent_dim: int, data_dim: int, mask: Optional[FunctionalMask],
              hidden=(512, 256), rng=None, slope: float = 0.2) -> "Generator":
        rng = rng if rng is not None else np.random.default_rng(0)
        n_in = latent_dim if mask is None else latent_dim + data_dim
        n_out = data_dim if mask is None else mask.n_replaced
        net = Mlp.build((n_in, *hidden, n_out), rng, sn=False, slope=slope)
        return cls(net, latent_dim, data_dim, mask)


@dataclass
class _GenCache:
    net_cache: object
    raw: np.ndarray  # unclamped generator output


def _generate(g: Generator, x_mal, z):
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if g.noise_only:
        raw, cache = g.net.forward(z)
        return np.clip(raw, 0.0, 1.0), _GenCache(cache, raw)
    x_mal = np.atleast_2d(np.asarray(x_mal, dtype=np.float64))
    if x_mal.shape[1] != g.data_dim:
        raise ShapeError(f"malicious batch has {x_mal.shape[1]} columns, expected {g.data_dim}")
    if x_mal.shape[0] != z.shape[0]:
        raise ShapeError(f"batch sizes differ: {x_mal.shape[0]} records vs {z.shape[0]} latent rows")
    raw, cache = g.net.forward(np.concatenate([z, x_mal], axis=1))
    out = x_mal.copy()
    out[:, list(g.mask.replaced_encoded)] = np.clip(raw, 0.0, 1.0)
    return out, _GenCache(cache, raw)


def generate_adversarial(g: Generator, malicious_batch, z, mask: Optional[FunctionalMask] = None) -> np.ndarray:
    """Rewrite the replaceable columns of each malicious row with clamped generator output."""
    if mask is not None and g.mask is not None and mask.replaced_encoded != g.mask.replaced_encoded:
        if mask.n_replaced != g.net.n_out:
            raise ShapeError(f"mask replaces {mask.n_replaced} columns but generator emits {g.net.n_out}")
        g = Generator(g.net, g.latent_dim, g.data_dim, mask)
    return _generate(g, malicious_batch, z)[0]


def generator_gradients(g: Generator, cache: _GenCache, grad_x_adv: np.ndarray) -> GradientBundle:
    """Backprop ``dL/dx_adv`` into the generator.

    Preserved columns are constants; clamped outputs pass gradient only inside [0, 1].
    """
    if g.noise_only:
        up = grad_x_adv
    else:
        up = grad_x_adv[:, list(g.mask.replaced_encoded)]
    up = np.where((cache.raw >= 0.0) & (cache.raw <= 1.0), up, 0.0)
    return g.net.backward(cache.net_cache, up)


class Discriminator:
    def __init__(self, encoder: Mlp, decoder: Mlp):
        if encoder.n_out != decoder.n_in or decoder.n_out != encoder.n_in:
            raise ShapeError("encoder and decoder widths do not form an autoencoder")
        self.encoder = encoder
        self.decoder = decoder

    @property
    def data_dim(self) -> int:
        return self.encoder.n_in

    @classmethod
    def build(cls, data_dim: int, code_dim: int = 100, enc_hidden=(512, 256), dec_hidden=(128, 256),
              rng=None, sn: bool = True, slope: float = 0.2) -> "Discriminator":
        rng = rng if rng is not None else np.random.default_rng(0)
        enc = Mlp.build((data_dim, *enc_hidden, code_dim), rng, sn=sn, slope=slope)
        dec = Mlp.build((code_dim, *dec_hidden, data_dim), rng, sn=False, slope=slope)
        return cls(enc, dec)

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.data_dim:
            raise ShapeError(f"expected {self.data_dim} columns, got shape {x.shape}")
        return x

    def encode(self, x) -> np.ndarray:
        return self.encoder(self._check(x))

    def reconstruct(self, x) -> np.ndarray:
        return self.decoder(self.encoder(self._check(x)))

    def energies(self, x) -> np.ndarray:
        x = np.atleast_2d(self._check(x))
        return np.mean((x - self.reconstruct(x)) ** 2, axis=1)


def energy(disc: Discriminator, x) -> float:
    """Reconstruction MSE of a single encoded record."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("energy() takes one record; use Discriminator.energies for batches")
    return float(disc.energies(x)[0])


# pull-away term -------------------------------------------------------------

def _pt_parts(s: np.ndarray):
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] < 2:
        raise ValueError("pull-away term needs a matrix with at least two rows")
    norms = np.linalg.norm(s, axis=1)
    zero = norms == 0.0
    if zero.any():
        warnings.warn(f"pull-away term: {int(zero.sum())} zero-norm row(s) contribute 0", RuntimeWarning)
    safe = np.where(zero, 1.0, norms)
    unit = s / safe[:, None]
    unit[zero] = 0.0
    cos = unit @ unit.T
    np.fill_diagonal(cos, 0.0)
    return s.shape[0], unit, safe, zero, cos


def pull_away(s) -> float:
    """Mean squared cosine similarity over ordered pairs of distinct rows."""
    n, _, _, _, cos = _pt_parts(s)
    return float(np.sum(cos ** 2) / (n * (n - 1)))


def pull_away_grad(s):
    """Return ``(value, dPT/dS)``."""
    n, unit, norms, zero, cos = _pt_parts(s)
    scale = 1.0 / (n * (n - 1))
    value = float(np.sum(cos ** 2) * scale)
    g_unit = 4.0 * scale * (cos @ unit)
    radial = np.sum(g_unit * unit, axis=1, keepdims=True)
    grad = (g_unit - radial * unit) / norms[:, None]
    grad[zero] = 0.0
    return value, grad


# losses ---------------------------------------------------------------------

@dataclass
class LossResult:
    loss: float
    encoder: Optional[GradientBundle] = None
    decoder: Optional[GradientBundle] = None
    input_grad: Optional[np.ndarray] = None
    energies: Optional[np.ndarray] = None
    pt: float = 0.0


@dataclass
class _AePass:
    x: np.ndarray
    code: np.ndarray
    diff: np.ndarray
    energies: np.ndarray
    enc_cache: object
    dec_cache: object


def _ae_forward(disc: Discriminator, x: np.ndarray) -> _AePass:
    h, enc_cache = disc.encoder.forward(x)
    xt, dec_cache = disc.decoder.forward(h)
    diff = x - xt
    return _AePass(x, h, diff, np.mean(diff ** 2, axis=1), enc_cache, dec_cache)


def _ae_backward(disc: Discriminator, fp: _AePass, row_weight: np.ndarray, code_grad=None):
    """Gradients of ``sum_i row_weight[i] * energy(x_i)``, plus ``code_grad`` injected at the code."""
    d = fp.x.shape[1]
    scaled = (2.0 / d) * row_weight[:, None] * fp.diff
    dec_b = disc.decoder.backward(fp.dec_cache, -scaled)
    g_code = dec_b.input if code_grad is None else dec_b.input + code_grad
    enc_b = disc.encoder.backward(fp.enc_cache, g_code)
    return enc_b, dec_b, enc_b.input + scaled


def d_loss(disc: Discriminator, x_normal, x_adv, m: float = 1.0) -> LossResult:
    """``mean energy(x) + mean max(0, m - energy(x_adv))`` with gradients for D only."""
    x_normal = np.atleast_2d(disc._check(x_normal))
    x_adv = np.atleast_2d(disc._check(x_adv))
    if len(x_normal) == 0 or len(x_adv) == 0:
        raise ValueError("d_loss needs non-empty batches")
    n, k = len(x_normal), len(x_adv)
    fp = _ae_forward(disc, np.concatenate([x_normal, x_adv]))
    e = fp.energies
    hinge = m - e[n:]
    # subgradient 0 at the hinge corner
    weights = np.concatenate([np.full(n, 1.0 / n), np.where(hinge > 0, -1.0 / k, 0.0)])
    enc_b, dec_b, _ = _ae_backward(disc, fp, weights)
    loss = float(np.mean(e[:n]) + np.mean(np.maximum(0.0, hinge)))
    return LossResult(loss, enc_b, dec_b, energies=e)


def g_loss(disc: Discriminator, x_adv, lambda_pt: float = 0.1) -> LossResult:
    """``mean energy(x_adv) + lambda_pt * PT(Enc(x_adv))`` and ``dL/dx_adv``.

    Feed ``input_grad`` to :func:`generator_gradients`; the discriminator
    gradients in the result are not meant to be applied.
    """
    x_adv = np.atleast_2d(disc._check(x_adv))
    k = len(x_adv)
    if lambda_pt > 0 and k < 2:
        raise ValueError("pull-away term needs a batch of at least two")
    fp = _ae_forward(disc, x_adv)
    pt, code_grad = 0.0, None
    if lambda_pt > 0:
        pt, pt_grad = pull_away_grad(fp.code)
        code_grad = lambda_pt * pt_grad
    enc_b, dec_b, g_in = _ae_backward(disc, fp, np.full(k, 1.0 / k), code_grad)
    loss = float(np.mean(fp.energies) + lambda_pt * pt)
    return LossResult(loss, enc_b, dec_b, input_grad=g_in, energies=fp.energies, pt=pt)


# training -------------------------------------------------------------------

@dataclass
class TrainResult:
    generator: Generator
    discriminator: Discriminator
    config: TrainConfig
    log: list = field(default_factory=list)  # (epoch, batch, d_loss, g_loss)


def build_models(config: TrainConfig, data_dim: int, mask: Optional[FunctionalMask], rng):
    gen_mask = None if config.noise_only_generator else mask
    if gen_mask is None and not config.noise_only_generator:
        raise ValueError("a functional mask is required unless noise_only_generator is set")
    disc = Discriminator.build(data_dim, config.code_dim, config.enc_hidden, config.dec_hidden,
                               rng=rng, sn=config.sn_enabled, slope=config.leaky_slope)
    gen = Generator.build(config.latent_dim, data_dim, gen_mask, config.gen_hidden,
                          rng=rng, slope=config.leaky_slope)
    return gen, disc


def _check_finite(name, value, seed, epoch, batch):
    if not math.isfinite(value):
        raise NumericalError(f"non-finite {name} (seed={seed}, epoch={epoch}, batch={batch}): {value}")


def train(config: TrainConfig, x_normal, x_malicious, mask: Optional[FunctionalMask],
          callback=None) -> TrainResult:
    """Alternate one D step and one G step per mini-batch of normal traffic.

    An epoch walks a fresh permutation of ``x_normal``; malicious rows are drawn
    with replacement. Batches smaller than two rows are skipped. Everything is
    driven by ``config.seed``.
    """
    x_normal = np.asarray(x_normal, dtype=np.float64)
    x_malicious = np.asarray(x_malicious, dtype=np.float64)
    if len(x_normal) == 0:
        raise ValueError("no normal training records")
    if len(x_malicious) == 0 and not config.noise_only_generator:
        raise ValueError("no malicious training records")
    d = x_normal.shape[1]
    init_seq, data_seq = np.random.SeedSequence(config.seed).spawn(2)
    gen, disc = build_models(config, d, mask, np.random.default_rng(init_seq))
    rng = np.random.default_rng(data_seq)
    # Adam is elementwise, so one state per network equals one optimizer over all of D
    opt_enc = AdamState(config.learning_rate, config.beta1, config.beta2)
    opt_dec = AdamState(config.learning_rate, config.beta1, config.beta2)
    opt_g = AdamState(config.learning_rate, config.beta1, config.beta2)
    result = TrainResult(gen, disc, config)
    bs = config.batch_size
    n_batches = math.ceil(len(x_normal) / bs)

    for epoch in range(config.epochs):
        perm = rng.permutation(len(x_normal))
        for b in range(n_batches):
            idx = perm[b * bs:(b + 1) * bs]
            if len(idx) < 2:
                continue
            xb = x_normal[idx]
            z = sample_latent(len(idx), config.latent_dim, rng)
            mal = None if gen.noise_only else x_malicious[rng.integers(0, len(x_malicious), len(idx))]
            disc.encoder.refresh_sn()
            x_adv, gcache = _generate(gen, mal, z)

            dres = d_loss(disc, xb, x_adv, config.m)
            _check_finite("d_loss", dres.loss, config.seed, epoch, b)
            disc.encoder.step(opt_enc, dres.encoder)
            disc.decoder.step(opt_dec, dres.decoder)
            gres = g_loss(disc, x_adv, config.lambda_pt)
            _check_finite("g_loss", gres.loss, config.seed, epoch, b)
            gen.net.step(opt_g, generator_gradients(gen, gcache, gres.input_grad))

            result.log.append((epoch, b, dres.loss, gres.loss))
            if callback is not None:
                callback(epoch, b, dres.loss, gres.loss)
        if result.log:
            last = [r for r in result.log if r[0] == epoch]
            log.info("epoch %d: d_loss %.5f g_loss %.5f", epoch,
                     np.mean([r[2] for r in last]), np.mean([r[3] for r in last]))
    if config.epochs:
        disc.encoder.refresh_sn()
    return result
