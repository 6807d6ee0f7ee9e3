"""Deep convolutional GAN for preictal spectrogram synthesis.

The generator maps a latent Gaussian vector through a dense layer, a reshape
and a stack of stride-2 transposed convolutions to an image in (-1, 1); the
discriminator is a stack of stride-2 convolutions ending in a sigmoid score.

Training alternates one discriminator update and one generator update per
batch. The trace keeps both losses in their minimized form::

    D_min = -mean log D(x) - mean log(1 - D(G(z)))
    G_min = -mean log D(G(z))

and training halts once ``D_min > G_min`` has held for ``patience``
consecutive batches (the discriminator no longer separates real from fake).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .ingest.manifest import DatasetManifest
from .numcore import (
    Act,
    AdamState,
    BCE_EPS,
    Conv,
    ConvT,
    Dense,
    Flatten,
    ModelCheckpoint,
    Reshape,
    Rng,
    Sequential,
    Tensor,
    adam_step,
    backward,
    bce_loss,
    no_grad,
    pack,
)
from .preprocess import Spectrogram, load_spectrogram

KERNEL = 5
CHECKPOINT_KIND = "dcgan"
CHECKPOINT_REVISION = 1


class GanError(RuntimeError):
    pass


class GanDivergenceError(GanError):
    """Raised on a non-finite loss; carries the trace up to the failure."""

    def __init__(self, message: str, trace: "LossTrace"):
        super().__init__(message)
        self.trace = trace


# -- architecture ---------------------------------------------------------------------

@dataclass(frozen=True)
class GanArch:
    image_size: int = 256
    channels: int = 3
    latent_dim: int = 100
    gen_filters: tuple[int, ...] = (256, 128, 128, 128, 128)  # hidden transposed convs; output layer adds `channels`
    dense_filters: int = 256  # depth of the reshaped dense output
    disc_filters: tuple[int, ...] = (256, 128, 64, 32)

    def __post_init__(self):
        n_up = len(self.gen_filters) + 1
        start = self.image_size / 2**n_up
        if start < 1 or start != int(start):
            raise ValueError(f"image size {self.image_size} is not reachable with {n_up} stride-2 upsamplings")
        if self.latent_dim < 1 or self.channels < 1:
            raise ValueError("latent_dim and channels must be positive")

    @property
    def start_size(self) -> int:
        return self.image_size // 2 ** (len(self.gen_filters) + 1)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.image_size, self.image_size, self.channels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gen_filters"] = list(self.gen_filters)
        d["disc_filters"] = list(self.disc_filters)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GanArch":
        d = dict(d)
        d["gen_filters"] = tuple(d["gen_filters"])
        d["disc_filters"] = tuple(d["disc_filters"])
        return cls(**d)


FULL_ARCH = GanArch()


def toy_arch(image_size: int = 8, channels: int = 1) -> GanArch:
    """Two-layer generator and discriminator for desk-scale runs."""
    n_up = 2 if image_size <= 8 else 3
    return GanArch(
        image_size=image_size,
        channels=channels,
        latent_dim=16,
        gen_filters=(16,) * (n_up - 1),
        dense_filters=16,
        disc_filters=(16, 32) if image_size <= 8 else (16, 32, 32),
    )


def generator_specs(arch: GanArch):
    s = arch.start_size
    specs = [Dense(s * s * arch.dense_filters), Reshape(s, s, arch.dense_filters), Act("relu")]
    for f in arch.gen_filters:
        specs += [ConvT(f, KERNEL, 2, "same"), Act("relu")]
    specs += [ConvT(arch.channels, KERNEL, 2, "same"), Act("tanh")]
    return specs


def discriminator_specs(arch: GanArch):
    specs = []
    for f in arch.disc_filters:
        specs += [Conv(f, KERNEL, 2, "same"), Act("leaky_relu")]
    specs += [Flatten(), Dense(1), Act("sigmoid")]
    return specs


def build_generator(arch: GanArch = FULL_ARCH) -> Sequential:
    return Sequential(generator_specs(arch), (arch.latent_dim,), prefix="G.")


def build_discriminator(arch: GanArch = FULL_ARCH) -> Sequential:
    return Sequential(discriminator_specs(arch), arch.image_shape, prefix="D.")


def generator_param_count(arch: GanArch) -> int:
    """Closed form: dense layer plus k*k*cin*cout + cout per transposed conv."""
    s = arch.start_size
    n = arch.latent_dim * s * s * arch.dense_filters + s * s * arch.dense_filters
    cin = arch.dense_filters
    for cout in list(arch.gen_filters) + [arch.channels]:
        n += KERNEL * KERNEL * cin * cout + cout
        cin = cout
    return n


def discriminator_param_count(arch: GanArch) -> int:
    n, cin, size = 0, arch.channels, arch.image_size
    for cout in arch.disc_filters:
        n += KERNEL * KERNEL * cin * cout + cout
        cin, size = cout, math.ceil(size / 2)
    return n + size * size * cin + 1


# -- losses ---------------------------------------------------------------------------

def _scores(x) -> np.ndarray:
    a = np.asarray(getattr(x, "data", x), dtype=np.float64).reshape(-1)
    if a.size == 0:
        raise ValueError("empty batch")
    return np.clip(a, BCE_EPS, 1.0 - BCE_EPS)


def discriminator_loss(real_scores, fake_scores) -> float:
    """``mean[log D(x)] + mean[log(1 - D(G(z)))]``, the quantity D ascends (<= 0)."""
    r, f = _scores(real_scores), _scores(fake_scores)
    if r.size != f.size:
        raise ValueError(f"batch sizes differ: {r.size} real vs {f.size} fake")
    return float(np.mean(np.log(r) + np.log1p(-f)))


def generator_loss(fake_scores) -> float:
    """Non-saturating generator objective ``-mean log D(G(z))`` (minimized)."""
    return float(-np.mean(np.log(_scores(fake_scores))))


# -- loss trace and early stopping ----------------------------------------------------

@dataclass
class LossTrace:
    d_loss: list[float] = field(default_factory=list)  # minimized form, i.e. -discriminator_loss
    g_loss: list[float] = field(default_factory=list)
    epoch: list[int] = field(default_factory=list)
    batch: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.d_loss)

    def append(self, d: float, g: float, epoch: int = 0, batch: int | None = None) -> None:
        self.d_loss.append(float(d))
        self.g_loss.append(float(g))
        self.epoch.append(int(epoch))
        self.batch.append(len(self.d_loss) - 1 if batch is None else int(batch))

    @property
    def epoch_boundaries(self) -> list[int]:
        """Trace index at which each epoch starts."""
        return [i for i in range(len(self.epoch)) if i == 0 or self.epoch[i] != self.epoch[i - 1]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "batch", "D_loss", "G_loss"])
        for row in zip(self.epoch, self.batch, self.d_loss, self.g_loss):
            w.writerow([row[0], row[1], repr(row[2]), repr(row[3])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "LossTrace":
        t = cls()
        for row in csv.DictReader(io.StringIO(text)):
            t.append(float(row["D_loss"]), float(row["G_loss"]), int(row["epoch"]), int(row["batch"]))
        return t


def early_stop_check(trace: LossTrace, k: int = 15) -> bool:
    """True iff each of the last ``k`` batches has D_loss > G_loss."""
    if k < 1:
        raise ValueError("k must be positive")
    if len(trace) < k:
        return False
    return all(d > g for d, g in zip(trace.d_loss[-k:], trace.g_loss[-k:]))


# -- training -------------------------------------------------------------------------

@dataclass
class GanTrainConfig:
    batch_size: int = 32
    patience: int = 15
    beta1: float = 0.5
    learning_rate: float = 1e-3
    max_epochs: int = 3000
    min_epochs: int = 100  # early stopping is consulted only after this many epochs
    seed: int = 0
    scale_mode: str = "full"

    def __post_init__(self):
        if self.batch_size < 1 or self.patience < 1:
            raise ValueError("batch_size and patience must be >= 1")
        if self.max_epochs < 1 or self.min_epochs < 0:
            raise ValueError("max_epochs must be >= 1 and min_epochs >= 0")
        if self.scale_mode not in ("full", "toy"):
            raise ValueError(f"scale_mode must be 'full' or 'toy', got {self.scale_mode!r}")


def toy_gan_config(seed: int = 0, **overrides) -> GanTrainConfig:
    """Settings for the desk-scale two-layer networks."""
    kw = dict(max_epochs=400, min_epochs=300, seed=seed, scale_mode="toy")
    kw.update(overrides)
    return GanTrainConfig(**kw)


@dataclass
class GanResult:
    checkpoint: ModelCheckpoint
    trace: LossTrace
    generator: Sequential
    discriminator: Sequential
    stopped_early: bool
    epochs_run: int


def train_gan(
    images: np.ndarray,
    config: GanTrainConfig = GanTrainConfig(),
    arch: GanArch | None = None,
    log_path=None,
    on_epoch: Callable[[int, Sequential, Sequential], None] | None = None,
) -> GanResult:
    """Train on an ``N x H x W x C`` array of images scaled to [-1, 1].

    ``on_epoch(epoch, G, D)`` is called after every completed epoch.
    """
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4 or len(images) == 0:
        raise GanError(f"expected a nonempty N x H x W x C batch, got shape {images.shape}")
    if arch is None:
        arch = toy_arch(images.shape[1], images.shape[3]) if config.scale_mode == "toy" else FULL_ARCH
    if images.shape[1:] != arch.image_shape:
        raise GanError(f"images are {images.shape[1:]}, architecture expects {arch.image_shape}")

    rng = Rng(config.seed)
    G = build_generator(arch).init(rng.child(1))
    D = build_discriminator(arch).init(rng.child(2))
    opt_g = AdamState(learning_rate=config.learning_rate, beta1=config.beta1)
    opt_d = AdamState(learning_rate=config.learning_rate, beta1=config.beta1)
    data_rng, z_rng = rng.child(3), rng.child(4)

    trace = LossTrace()
    log = open(log_path, "w") if log_path else None
    if log:
        log.write("epoch,batch,D_loss,G_loss\n")
    n = len(images)
    bs = min(config.batch_size, n)
    stopped, epoch = False, 0
    try:
        for epoch in range(config.max_epochs):
            order = data_rng.permutation(n)
            for b in range(n // bs):
                real = Tensor(images[order[b * bs : (b + 1) * bs]])
                z = Tensor(z_rng.normal((bs, arch.latent_dim)))
                ones = np.ones((bs, 1), dtype=np.float32)

                # discriminator step, generator frozen
                with no_grad():
                    fake = Tensor(G(z).data)
                D.zero_grad()
                d_loss = bce_loss(D(real), ones) + bce_loss(D(fake), np.zeros_like(ones))
                backward(d_loss)
                adam_step(D.params, opt_d)

                # generator step, discriminator frozen
                G.zero_grad()
                g_loss = bce_loss(D(G(z)), ones)
                backward(g_loss)
                adam_step(G.params, opt_g)
                D.zero_grad()

                dv, gv = float(d_loss.data), float(g_loss.data)
                trace.append(dv, gv, epoch, b)
                if log:
                    log.write(f"{epoch},{b},{dv!r},{gv!r}\n")
                if not (math.isfinite(dv) and math.isfinite(gv)):
                    raise GanDivergenceError(f"non-finite loss at epoch {epoch} batch {b}: D={dv} G={gv}", trace)
                if epoch >= config.min_epochs and early_stop_check(trace, config.patience):
                    stopped = True
                    break
            if on_epoch:
                on_epoch(epoch, G, D)
            if stopped:
                break
    finally:
        if log:
            log.close()

    meta = {
        "kind": CHECKPOINT_KIND,
        "revision": CHECKPOINT_REVISION,
        "arch": arch.to_dict(),
        "config": asdict(config),
        "epochs_run": epoch + 1,
        "stopped_early": stopped,
    }
    ckpt = pack({**G.params, **D.params}, {"G": opt_g, "D": opt_d}, meta)
    return GanResult(ckpt, trace, G, D, stopped, epoch + 1)


def load_images(manifest: DatasetManifest) -> np.ndarray:
    specs = [load_spectrogram(manifest.resolve(e)) for e in manifest]
    return np.stack([s.image for s in specs]) if specs else np.zeros((0, 0, 0, 0), np.float32)


def train_dcgan(manifest: DatasetManifest, config: GanTrainConfig = GanTrainConfig(), arch: GanArch | None = None, log_path=None) -> GanResult:
    """Train on the preictal spectrograms of ``manifest``."""
    if len(manifest) == 0:
        raise GanError("manifest is empty")
    other = [e.id for e in manifest if e.label != "preictal"]
    if other:
        raise GanError(f"GAN training takes preictal spectrograms only; found {len(other)} others (e.g. {other[0]})")
    return train_gan(load_images(manifest), config, arch, log_path)


def load_generator(ckpt: ModelCheckpoint) -> tuple[Sequential, GanArch]:
    meta = ckpt.metadata
    if meta.get("kind") != CHECKPOINT_KIND:
        raise GanError(f"checkpoint kind {meta.get('kind')!r} is not {CHECKPOINT_KIND!r}")
    if meta.get("revision") != CHECKPOINT_REVISION:
        raise GanError(f"checkpoint revision {meta.get('revision')} != {CHECKPOINT_REVISION}")
    arch = GanArch.from_dict(meta["arch"])
    G = build_generator(arch)
    try:
        G.load(ckpt.tensors)
    except (KeyError, ValueError) as exc:
        raise GanError(f"checkpoint does not match generator: {exc}") from None
    return G, arch


def load_discriminator(ckpt: ModelCheckpoint) -> Sequential:
    _, arch = load_generator(ckpt)
    return build_discriminator(arch).load(ckpt.tensors)


def generate_images(ckpt: ModelCheckpoint, count: int, rng: Rng, batch: int = 64) -> np.ndarray:
    if count < 1:
        raise ValueError("count must be >= 1")
    G, arch = load_generator(ckpt)
    z = rng.normal((count, arch.latent_dim))
    out = []
    with no_grad():
        for i in range(0, count, batch):
            out.append(G(Tensor(z[i : i + batch])).data)
    return np.concatenate(out)


def generate_samples(ckpt: ModelCheckpoint, count: int, rng: Rng, id_prefix: str = "syn") -> list[Spectrogram]:
    """``count`` synthetic preictal spectrograms drawn from the generator."""
    imgs = generate_images(ckpt, count, rng)
    return [
        Spectrogram(img, "preictal", "synthetic", f"{id_prefix}_{i:06d}")
        for i, img in enumerate(imgs)
    ]


def discriminator_accuracy(D: Sequential, real: np.ndarray, fake: np.ndarray) -> float:
    """Fraction of correct real-vs-fake calls at threshold 0.5, classes weighted equally."""
    with no_grad():
        r = D(Tensor(np.asarray(real, dtype=np.float32))).data.reshape(-1)
        f = D(Tensor(np.asarray(fake, dtype=np.float32))).data.reshape(-1)
    return 0.5 * (float(np.mean(r > 0.5)) + float(np.mean(f <= 0.5)))


def write_samples(samples: Sequence[Spectrogram], out_dir, name: str = "synthetic") -> DatasetManifest:
    from .ingest.manifest import ManifestEntry
    from .preprocess import save_spectrogram

    out_dir = Path(out_dir)
    (out_dir / "spectrograms").mkdir(parents=True, exist_ok=True)
    entries = []
    for s in samples:
        rel = f"spectrograms/{s.source_id}.pfsp"
        save_spectrogram(s, out_dir / rel)
        entries.append(ManifestEntry(s.source_id, rel, "synthetic", s.label, s.provenance))
    m = DatasetManifest(name, samples[0].image.shape[2] if samples else 3, entries, out_dir)
    m.save(out_dir / "manifest.csv")
    return m
