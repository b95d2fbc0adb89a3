"""Unpaired image translation (two generators, two patch discriminators) for augmentation."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data.synth import DomainDataset
from .metrics import RandomConvEncoder, fid_between
from .tensor import Adam, ContractError, Conv2d, GradTape, Module, Tensor, generator, ops, save_checkpoint
from .validation import check_image, check_images

logger = logging.getLogger(__name__)

SCORE_FLOOR = 1e-7


class TrainingAborted(RuntimeError):
    pass


class SaturationCounter:
    """Counts discriminator scores that had to be clamped away from 0 or 1."""

    def __init__(self):
        self.count = 0


saturation = SaturationCounter()


def _clamped_log(scores: Tensor, counter: SaturationCounter | None) -> Tensor:
    scores = scores if isinstance(scores, Tensor) else Tensor(scores)
    hit = int(np.count_nonzero((scores.data < SCORE_FLOOR) | (scores.data > 1.0 - SCORE_FLOOR)))
    if hit:
        (counter or saturation).count += hit
        scores = ops.clip(scores, SCORE_FLOOR, 1.0 - SCORE_FLOOR)
    return ops.log(scores)


def adversarial_loss(d_real, d_fake, counter: SaturationCounter | None = None) -> Tensor:
    """mean(log D(real)) + mean(log(1 - D(fake))) over batch and patch positions."""
    d_real = d_real if isinstance(d_real, Tensor) else Tensor(d_real)
    d_fake = d_fake if isinstance(d_fake, Tensor) else Tensor(d_fake)
    return ops.mean(_clamped_log(d_real, counter)) + ops.mean(_clamped_log(1.0 - d_fake, counter))


def discriminator_loss(d_real, d_fake, counter: SaturationCounter | None = None) -> Tensor:
    """Quantity the discriminator descends: the negated adversarial objective, halved."""
    return -0.5 * adversarial_loss(d_real, d_fake, counter)


def generator_adversarial_loss(d_fake, non_saturating: bool = False,
                               counter: SaturationCounter | None = None) -> Tensor:
    """Generator side of the adversarial objective.

    By default minimises mean(log(1 - D(G(x)))) as written; the
    non-saturating variant minimises -mean(log D(G(x))).
    """
    d_fake = d_fake if isinstance(d_fake, Tensor) else Tensor(d_fake)
    if non_saturating:
        return -ops.mean(_clamped_log(d_fake, counter))
    return ops.mean(_clamped_log(1.0 - d_fake, counter))


def cycle_loss(x, x_rec, y, y_rec) -> Tensor:
    """mean|F(G(x)) - x| + mean|G(F(y)) - y|."""
    for a, b, label in ((x, x_rec, "x"), (y, y_rec, "y")):
        if np.shape(getattr(a, "data", a)) != np.shape(getattr(b, "data", b)):
            raise ContractError(f"{label} and its reconstruction differ in shape")
    return ops.mean(ops.abs(ops.sub(x_rec, x))) + ops.mean(ops.abs(ops.sub(y_rec, y)))


def full_objective(adv_g, adv_f, cyc, lam: float):
    if lam < 0:
        raise ContractError("cycle weight must be non-negative")
    return adv_g + adv_f + lam * cyc


@dataclass
class GanTrainConfig:
    lam: float = 10.0
    lr: float = 2e-4
    constant_epochs: int = 100
    decay_epochs: int = 100
    steps_per_epoch: int | None = None
    batch_size: int = 1
    image_size: int = 64
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    ngf: int = 8
    ndf: int = 16
    n_res: int = 3
    non_saturating: bool = False
    fid_every: int = 20
    probe_size: int = 64
    checkpoint_every: int = 0
    max_steps: int | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ContractError("lam must be >= 0")
        if self.lr <= 0:
            raise ContractError("learning rate must be > 0")
        if self.batch_size < 1:
            raise ContractError("batch size must be >= 1")
        if self.constant_epochs < 0 or self.decay_epochs < 0 or self.constant_epochs + self.decay_epochs < 1:
            raise ContractError("need at least one scheduled epoch")

    @property
    def total_epochs(self) -> int:
        return self.constant_epochs + self.decay_epochs


def lr_schedule(epoch: int, config: GanTrainConfig) -> float:
    """Constant rate, then a linear ramp whose last epoch sits at exactly zero.

    Decay epochs ``C .. C+D-1`` take ``base * (C + D - 1 - epoch) / (D - 1)``,
    so epoch ``C`` still runs at the base rate and epoch ``C+D-1`` at 0.
    """
    c, d = config.constant_epochs, config.decay_epochs
    if not 0 <= epoch < c + d:
        raise ContractError(f"epoch {epoch} outside the schedule [0, {c + d})")
    if epoch < c:
        return config.lr
    if d == 1:
        return 0.0
    return config.lr * (c + d - 1 - epoch) / (d - 1)


# networks ---------------------------------------------------------------

INIT_STD = 0.02


def _conv(rng, c_in, c_out, k, stride=1, padding=0):
    return Conv2d(rng, c_in, c_out, k, stride=stride, padding=padding, init_std=INIT_STD)


class _ResBlock(Module):
    def __init__(self, rng, ch):
        self.conv1 = _conv(rng, ch, ch, 3, padding=1)
        self.conv2 = _conv(rng, ch, ch, 3, padding=1)

    def forward(self, x):
        h = ops.relu(ops.instance_norm(self.conv1(x)))
        return x + ops.instance_norm(self.conv2(h))


class GeneratorNet(Module):
    """Encoder (two stride-2 convs), residual blocks, nearest-upsample decoder, tanh output."""

    def __init__(self, rng: np.random.Generator, ngf: int = 8, n_res: int = 3, role: str = "G"):
        self.role = role
        self.stem = _conv(rng, 3, ngf, 7, padding=3)
        self.down = [_conv(rng, ngf, 2 * ngf, 3, stride=2, padding=1),
                     _conv(rng, 2 * ngf, 4 * ngf, 3, stride=2, padding=1)]
        self.blocks = [_ResBlock(rng, 4 * ngf) for _ in range(n_res)]
        self.up = [_conv(rng, 4 * ngf, 2 * ngf, 3, padding=1), _conv(rng, 2 * ngf, ngf, 3, padding=1)]
        self.head = _conv(rng, ngf, 3, 7, padding=3)

    def forward(self, x: Tensor) -> Tensor:
        h = ops.relu(ops.instance_norm(self.stem(x)))
        for conv in self.down:
            h = ops.relu(ops.instance_norm(conv(h)))
        for block in self.blocks:
            h = block(h)
        for conv in self.up:
            h = ops.relu(ops.instance_norm(conv(ops.upsample_nearest(h, 2))))
        return ops.tanh(self.head(h))


class DiscriminatorNet(Module):
    """Four-conv patch discriminator ending in a sigmoid score grid."""

    def __init__(self, rng: np.random.Generator, ndf: int = 16, role: str = "D_Y"):
        self.role = role
        self.c1 = _conv(rng, 3, ndf, 4, stride=2, padding=1)
        self.c2 = _conv(rng, ndf, 2 * ndf, 4, stride=2, padding=1)
        self.c3 = _conv(rng, 2 * ndf, 4 * ndf, 4, stride=1, padding=1)
        self.c4 = _conv(rng, 4 * ndf, 1, 4, stride=1, padding=1)

    def forward(self, x: Tensor) -> Tensor:
        h = ops.leaky_relu(self.c1(x), 0.2)
        h = ops.leaky_relu(ops.instance_norm(self.c2(h)), 0.2)
        h = ops.leaky_relu(ops.instance_norm(self.c3(h)), 0.2)
        return ops.sigmoid(self.c4(h))


def build_generator(config: GanTrainConfig, seed: int, role: str = "G") -> GeneratorNet:
    return GeneratorNet(generator(seed, "generator", role), config.ngf, config.n_res, role)


def build_discriminator(config: GanTrainConfig, seed: int, role: str = "D_Y") -> DiscriminatorNet:
    return DiscriminatorNet(generator(seed, "discriminator", role), config.ndf, role)


def _nchw(images: np.ndarray) -> Tensor:
    return Tensor(np.ascontiguousarray(images.transpose(0, 3, 1, 2)))


def _nhwc(t: Tensor) -> np.ndarray:
    return np.ascontiguousarray(t.data.transpose(0, 2, 3, 1))


def translate(g: GeneratorNet, images, size: int | None = None) -> np.ndarray:
    """Apply a generator to one H x W x 3 image or a batch; output matches input layout."""
    single = np.ndim(images) == 3
    if single:
        batch = check_image(images, size)[None]
    else:
        batch = check_images(images, size)
    out = np.concatenate([_nhwc(g(_nchw(batch[i:i + 16]))) for i in range(0, len(batch), 16)])
    return out[0] if single else out


def _set_trainable(net: Module, flag: bool) -> None:
    for p in net.parameters().values():
        p.requires_grad = flag


def _network_state(nets: dict[str, Module]) -> dict[str, np.ndarray]:
    return {f"{k}.{name}": arr for k, net in nets.items() for name, arr in net.state_dict().items()}


def train_cyclegan(x_data: DomainDataset, y_data: DomainDataset, config: GanTrainConfig,
                   checkpoint_dir: str | Path | None = None, encoder=None):
    """Alternating generator/discriminator training; returns (nets, trace, debug).

    ``nets`` maps ``G, F, D_X, D_Y`` to modules. ``trace`` has one record
    per epoch. ``debug`` exposes the most recent discriminator update's raw
    adversarial objective and the effective (halved, negated) loss.
    """
    if not len(x_data) or not len(y_data):
        raise ContractError("both domain datasets must be non-empty")
    for ds in (x_data, y_data):
        if ds.size != config.image_size:
            raise ContractError(f"domain {ds.domain} has {ds.size}px images, config expects {config.image_size}")
    seed = config.seed
    nets = {
        "G": build_generator(config, seed, "G"),
        "F": build_generator(config, seed, "F"),
        "D_X": build_discriminator(config, seed, "D_X"),
        "D_Y": build_discriminator(config, seed, "D_Y"),
    }
    gen_params = {f"G.{k}": v for k, v in nets["G"].parameters().items()}
    gen_params.update({f"F.{k}": v for k, v in nets["F"].parameters().items()})
    dis_params = {f"D_X.{k}": v for k, v in nets["D_X"].parameters().items()}
    dis_params.update({f"D_Y.{k}": v for k, v in nets["D_Y"].parameters().items()})
    opt_g = Adam(gen_params, lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    opt_d = Adam(dis_params, lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    counter = SaturationCounter()

    steps_per_epoch = config.steps_per_epoch or max(len(x_data), len(y_data)) // config.batch_size
    steps_per_epoch = max(1, steps_per_epoch)
    probe_rng = generator(seed, "fid-probe")
    probe = x_data.images[np.sort(probe_rng.permutation(len(x_data))[:min(config.probe_size, len(x_data))])]
    encoder = encoder if encoder is not None else RandomConvEncoder().fit()

    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
    trace: list[dict] = []
    debug: dict = {}
    step = 0
    bs = config.batch_size
    orders = {}

    def draw(ds: DomainDataset, k: int) -> np.ndarray:
        # sampling without replacement within an epoch of the dataset itself
        idx = []
        for j in range(k * bs, (k + 1) * bs):
            epoch, pos = divmod(j, len(ds))
            key = (ds.domain, epoch)
            if key not in orders:
                orders[key] = ds.epoch_order(epoch)
            idx.append(orders[key][pos])
        return ds.images[idx]

    for epoch in range(config.total_epochs):
        lr = lr_schedule(epoch, config)
        sums = dict(loss_G=0.0, loss_F=0.0, loss_D_X=0.0, loss_D_Y=0.0, loss_cyc=0.0)
        n = 0
        for _ in range(steps_per_epoch):
            if config.max_steps is not None and step >= config.max_steps:
                break
            x = _nchw(draw(x_data, step))
            y = _nchw(draw(y_data, step))

            _set_trainable(nets["D_X"], False)
            _set_trainable(nets["D_Y"], False)
            with GradTape() as tape:
                fake_y = nets["G"](x)
                rec_x = nets["F"](fake_y)
                fake_x = nets["F"](y)
                rec_y = nets["G"](fake_x)
                adv_g = generator_adversarial_loss(nets["D_Y"](fake_y), config.non_saturating, counter)
                adv_f = generator_adversarial_loss(nets["D_X"](fake_x), config.non_saturating, counter)
                cyc = cycle_loss(x, rec_x, y, rec_y)
                loss = full_objective(adv_g, adv_f, cyc, config.lam)
            if not np.isfinite(loss.data):
                raise TrainingAborted(f"non-finite generator loss at step {step}; last checkpoint kept")
            names = list(gen_params)
            grads = dict(zip(names, tape.gradient(loss, [gen_params[k] for k in names])))
            opt_g.step(grads, lr=lr)
            _set_trainable(nets["D_X"], True)
            _set_trainable(nets["D_Y"], True)

            fy, fx = Tensor(fake_y.data), Tensor(fake_x.data)
            with GradTape() as tape:
                eq1_y = adversarial_loss(nets["D_Y"](y), nets["D_Y"](fy), counter)
                eq1_x = adversarial_loss(nets["D_X"](x), nets["D_X"](fx), counter)
                loss_dy = -0.5 * eq1_y
                loss_dx = -0.5 * eq1_x
                loss_d = loss_dy + loss_dx
            if not np.isfinite(loss_d.data):
                raise TrainingAborted(f"non-finite discriminator loss at step {step}; last checkpoint kept")
            names = list(dis_params)
            grads = dict(zip(names, tape.gradient(loss_d, [dis_params[k] for k in names])))
            opt_d.step(grads, lr=lr)
            debug = {"adversarial_objective": float(eq1_x.data + eq1_y.data), "discriminator_loss": float(loss_d.data),
                     "step": step}

            sums["loss_G"] += float(adv_g.data)
            sums["loss_F"] += float(adv_f.data)
            sums["loss_D_X"] += float(loss_dx.data)
            sums["loss_D_Y"] += float(loss_dy.data)
            sums["loss_cyc"] += float(cyc.data)
            n += 1
            step += 1
        if n == 0:
            break
        record = {"epoch": epoch, "step": step, "lr": lr, **{k: v / n for k, v in sums.items()}}
        last_epoch = epoch == config.total_epochs - 1 or (config.max_steps is not None and step >= config.max_steps)
        if config.fid_every and ((epoch + 1) % config.fid_every == 0 or last_epoch):
            record["fid"] = fid_between(translate(nets["G"], probe), y_data.images, encoder)
        trace.append(record)
        logger.info("epoch %d %s", epoch, json.dumps(record))
        if ckpt_dir and config.checkpoint_every and ((epoch + 1) % config.checkpoint_every == 0 or last_epoch):
            for role, net in nets.items():
                save_checkpoint(ckpt_dir / f"epoch_{epoch + 1:04d}_{role}.ckpt", net.state_dict())
        if ckpt_dir:
            _write_trace(ckpt_dir / "trace.jsonl", trace)
        if config.max_steps is not None and step >= config.max_steps:
            break
    debug["saturation_count"] = counter.count
    return nets, trace, debug


def _write_trace(path: Path, trace: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in trace))


def _as_domain(data, domain: str, seed: int) -> DomainDataset:
    if isinstance(data, DomainDataset):
        return data
    return DomainDataset(domain, check_images(data), seed=seed)


def _images_of(data):
    return data.images if isinstance(data, DomainDataset) else data


class CycleGANTranslator(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit(X, Y)`` learns X->Y and Y->X; ``transform`` maps X->Y."""

    def __init__(self, lam=10.0, lr=2e-4, constant_epochs=100, decay_epochs=100, steps_per_epoch=None,
                 batch_size=1, image_size=64, beta1=0.9, beta2=0.999, ngf=8, ndf=16, n_res=3,
                 non_saturating=False, fid_every=20, probe_size=64, checkpoint_every=0, max_steps=None,
                 checkpoint_dir=None, random_state=0):
        self.lam = lam
        self.lr = lr
        self.constant_epochs = constant_epochs
        self.decay_epochs = decay_epochs
        self.steps_per_epoch = steps_per_epoch
        self.batch_size = batch_size
        self.image_size = image_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.ngf = ngf
        self.ndf = ndf
        self.n_res = n_res
        self.non_saturating = non_saturating
        self.fid_every = fid_every
        self.probe_size = probe_size
        self.checkpoint_every = checkpoint_every
        self.max_steps = max_steps
        self.checkpoint_dir = checkpoint_dir
        self.random_state = random_state

    def config(self) -> GanTrainConfig:
        p = self.get_params()
        p.pop("checkpoint_dir")
        p["seed"] = p.pop("random_state")
        return GanTrainConfig(**p)

    def fit(self, X, Y):
        cfg = self.config()
        nets, self.trace_, self.debug_ = train_cyclegan(
            _as_domain(X, "X", cfg.seed), _as_domain(Y, "Y", cfg.seed), cfg, self.checkpoint_dir)
        self.nets_ = nets
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "nets_")
        return translate(self.nets_["G"], _images_of(X), self.image_size)

    def inverse_transform(self, Y) -> np.ndarray:
        check_is_fitted(self, "nets_")
        return translate(self.nets_["F"], _images_of(Y), self.image_size)

    def reconstruction_error(self, X) -> float:
        """Mean L1 between F(G(x)) and x."""
        x = check_images(_images_of(X), self.image_size)
        return float(np.mean(np.abs(self.inverse_transform(self.transform(x)) - x)))

    def save(self, directory: str | Path) -> Path:
        check_is_fitted(self, "nets_")
        directory = Path(directory)
        for role, net in self.nets_.items():
            save_checkpoint(directory / f"{role}.ckpt", net.state_dict())
        (directory / "config.json").write_text(json.dumps(asdict(self.config()), sort_keys=True, indent=1))
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "CycleGANTranslator":
        from .tensor import load_checkpoint

        directory = Path(directory)
        cfg = json.loads((directory / "config.json").read_text())
        cfg["random_state"] = cfg.pop("seed")
        est = cls(**cfg)
        conf = est.config()
        est.nets_ = {
            "G": build_generator(conf, conf.seed, "G"), "F": build_generator(conf, conf.seed, "F"),
            "D_X": build_discriminator(conf, conf.seed, "D_X"), "D_Y": build_discriminator(conf, conf.seed, "D_Y"),
        }
        for role, net in est.nets_.items():
            net.load_state_dict(load_checkpoint(directory / f"{role}.ckpt"))
        est.trace_, est.debug_ = [], {}
        return est


def initial_weight_stats(net: Module) -> tuple[float, float, int]:
    """Mean, std and count over conv weights (biases excluded)."""
    w = np.concatenate([p.data.ravel() for k, p in net.named_parameters() if k.endswith("weight")])
    return float(w.mean()), float(w.std()), int(w.size)
