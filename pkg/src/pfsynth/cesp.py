"""Convolutional seizure predictor and the real/synthetic train-test protocol.

Three blocks of (3x3 stride-1 convolution, ReLU, 2x2 max-pool) feed a
32-unit and a 2-unit sigmoid layer. The preictal probability is the
normalized second head, ``p1 / (p0 + p1)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .evalstat import EvalConfig, EvalReport, PredictionRecord, evaluate_records, roc_auc
from .ingest.dataset import LabelPolicy
from .ingest.manifest import DatasetManifest, ManifestEntry
from .numcore import (
    Act,
    AdamState,
    Conv,
    Dense,
    Flatten,
    MaxPool,
    ModelCheckpoint,
    Rng,
    Sequential,
    Tensor,
    adam_step,
    backward,
    bce_loss,
    no_grad,
    pack,
)
from .preprocess import load_spectrogram

FULL_FILTERS = (126, 64, 64)
TOY_FILTERS = (32, 16, 16)
HIDDEN_UNITS = 32
COMBOS = ("TRTR", "TSTR", "TRTS", "TSTS")
CHECKPOINT_KIND = "cesp"


class CespError(ValueError):
    pass


class LeakageError(AssertionError):
    pass


# -- model ------------------------------------------------------------------------------

def cesp_specs(filters: Sequence[int] = FULL_FILTERS):
    specs = []
    for f in filters:
        specs += [Conv(f, 3, 1, "same"), Act("relu"), MaxPool(2)]
    specs += [Flatten(), Dense(HIDDEN_UNITS), Act("sigmoid"), Dense(2), Act("sigmoid")]
    return specs


def build_cesp(input_shape: Sequence[int] = (256, 256, 3), filters: Sequence[int] | None = None) -> Sequential:
    h, w, c = input_shape
    if h % 8 or w % 8:
        raise CespError(f"input {h}x{w} must be divisible by 8 for three 2x2 poolings")
    if filters is None:
        filters = FULL_FILTERS if h >= 64 else TOY_FILTERS
    return Sequential(cesp_specs(filters), (h, w, c))


def cesp_param_count(input_shape: Sequence[int], filters: Sequence[int]) -> int:
    h, w, cin = input_shape
    n = 0
    for f in filters:
        n += 3 * 3 * cin * f + f
        cin, h, w = f, h // 2, w // 2
    return n + (h * w * cin + 1) * HIDDEN_UNITS + (HIDDEN_UNITS + 1) * 2


def head_probability(out: np.ndarray) -> np.ndarray:
    """Normalized preictal score from the two sigmoid heads."""
    out = np.asarray(out, dtype=np.float64)
    return out[:, 1] / (out[:, 0] + out[:, 1])


def predict_images(model: Sequential, images: np.ndarray, batch: int = 64) -> np.ndarray:
    images = np.asarray(images, dtype=np.float32)
    if images.shape[1:] != model.input_shape:
        raise CespError(f"images are {images.shape[1:]}, model expects {model.input_shape}")
    out = []
    with no_grad():
        for i in range(0, len(images), batch):
            out.append(model(Tensor(images[i : i + batch])).data)
    return head_probability(np.concatenate(out)) if out else np.zeros(0)


# -- data -------------------------------------------------------------------------------

@dataclass
class LabeledImages:
    ids: list[str]
    images: np.ndarray
    labels: np.ndarray  # 1 = preictal
    entries: list[ManifestEntry]

    def __len__(self) -> int:
        return len(self.ids)

    def take(self, idx) -> "LabeledImages":
        idx = np.asarray(idx, dtype=int)
        return LabeledImages([self.ids[i] for i in idx], self.images[idx], self.labels[idx], [self.entries[i] for i in idx])


def load_labeled(manifest: DatasetManifest) -> LabeledImages:
    if len(manifest) == 0:
        raise CespError("manifest is empty")
    imgs = [load_spectrogram(manifest.resolve(e)).image for e in manifest]
    labels = np.array([e.label == "preictal" for e in manifest], dtype=np.int64)
    return LabeledImages([e.id for e in manifest], np.stack(imgs), labels, list(manifest.entries))


def stratified_folds(labels: Sequence[int], k: int, rng: Rng) -> list[np.ndarray]:
    """Partition indices into ``k`` validation folds with per-class round robin."""
    labels = np.asarray(labels)
    if k < 2:
        raise ValueError("need at least two folds")
    if len(labels) < k:
        raise CespError(f"{len(labels)} samples cannot fill {k} folds")
    folds: list[list[int]] = [[] for _ in range(k)]
    offset = 0
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        for j, i in enumerate(idx):
            folds[(offset + j) % k].append(int(i))
        offset += len(idx)
    return [np.sort(np.array(f, dtype=int)) for f in folds]


# -- training ---------------------------------------------------------------------------

@dataclass
class TrainPlan:
    combo: str = "TRTR"
    folds: int = 10
    learning_rate: float = 1e-4
    epochs: int = 50
    batch_size: int = 32
    patience: int = 5
    seed: int = 0
    augmentation_factor: int = 0
    filters: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.combo not in COMBOS:
            raise ValueError(f"combo must be one of {COMBOS}, got {self.combo!r}")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.augmentation_factor < 0:
            raise ValueError("augmentation factor must be nonnegative")
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size and patience must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")

    @property
    def train_provenance(self) -> str:
        return "real" if self.combo[1] == "R" else "synthetic"

    @property
    def test_provenance(self) -> str:
        return "real" if self.combo[3] == "R" else "synthetic"


def toy_plan(combo: str = "TRTR", seed: int = 0, **overrides) -> TrainPlan:
    """Default hyperparameters with the reduced filter counts."""
    kw = dict(combo=combo, seed=seed, filters=TOY_FILTERS)
    kw.update(overrides)
    return TrainPlan(**kw)


def _targets(labels: np.ndarray) -> np.ndarray:
    return np.stack([1 - labels, labels], axis=1).astype(np.float32)


def _loss(model: Sequential, images: np.ndarray, labels: np.ndarray) -> float:
    with no_grad():
        out = [model(Tensor(images[i : i + 64])) for i in range(0, len(images), 64)]
        return float(bce_loss(Tensor(np.concatenate([o.data for o in out])), _targets(labels)).data)


def fit(
    model: Sequential,
    data: LabeledImages,
    plan: TrainPlan,
    rng: Rng,
    val: LabeledImages | None = None,
    trainable: Sequence[str] | None = None,
    epochs: int | None = None,
) -> list[float]:
    """Mini-batch Adam on binary cross-entropy; returns per-epoch training loss.

    With ``val`` given, training stops after ``plan.patience`` epochs without
    validation-loss improvement and the best parameters are restored.
    """
    names = list(model.params) if trainable is None else list(trainable)
    opt = AdamState(learning_rate=plan.learning_rate)
    targets = _targets(data.labels)
    history = []
    best, best_params, bad = math.inf, None, 0
    n = len(data)
    for _ in range(plan.epochs if epochs is None else epochs):
        order = rng.permutation(n)
        for i in range(0, n, plan.batch_size):
            idx = order[i : i + plan.batch_size]
            model.zero_grad()
            loss = bce_loss(model(Tensor(data.images[idx])), targets[idx])
            backward(loss)
            adam_step({k: model.params[k] for k in names}, opt)
        model.zero_grad()
        history.append(_loss(model, data.images, data.labels))
        if val is not None and len(val):
            v = _loss(model, val.images, val.labels)
            if v < best - 1e-12:
                best, bad = v, 0
                best_params = {k: p.data.copy() for k, p in model.params.items()}
            else:
                bad += 1
                if bad >= plan.patience:
                    break
    if best_params is not None:
        for k, arr in best_params.items():
            model.params[k].data[...] = arr
    return history


@dataclass
class FoldResult:
    fold: int
    val_ids: list[str]
    accuracy: float
    auc: float
    epochs_run: int


@dataclass
class CespResult:
    model: Sequential
    checkpoint: ModelCheckpoint
    folds: list[FoldResult]
    oof_auc: float  # AUC over the pooled out-of-fold validation predictions
    history: list[float] = field(default_factory=list)

    @property
    def val_auc(self) -> float:
        """Mean of the per-fold validation AUCs (folds holding one class are skipped)."""
        aucs = [f.auc for f in self.folds if not math.isnan(f.auc)]
        return float(np.mean(aucs)) if aucs else math.nan


def _checkpoint(model: Sequential, plan: TrainPlan, extra: dict | None = None) -> ModelCheckpoint:
    meta = {
        "kind": CHECKPOINT_KIND,
        "input_shape": list(model.input_shape),
        "specs": [s.to_dict() for s in model.specs],
        "plan": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(plan).items()},
    }
    meta.update(extra or {})
    return pack(model.params, None, meta)


def load_cesp(ckpt: ModelCheckpoint) -> Sequential:
    from .numcore import LayerSpec

    if ckpt.metadata.get("kind") != CHECKPOINT_KIND:
        raise CespError(f"checkpoint kind {ckpt.metadata.get('kind')!r} is not {CHECKPOINT_KIND!r}")
    specs = [LayerSpec.from_dict(d) for d in ckpt.metadata["specs"]]
    model = Sequential(specs, ckpt.metadata["input_shape"])
    try:
        return model.load(ckpt.params())
    except (KeyError, ValueError) as exc:
        raise CespError(f"checkpoint does not match model: {exc}") from None


def train_on(data: LabeledImages, plan: TrainPlan) -> CespResult:
    """k-fold validation followed by a final fit on every sample."""
    if len(data) == 0:
        raise CespError("no training data")
    if len(np.unique(data.labels)) < 2:
        raise CespError("training data holds a single class")
    rng = Rng(plan.seed)
    folds = stratified_folds(data.labels, plan.folds, rng.child(0))
    fold_results = []
    oof = np.full(len(data), np.nan)
    shape = data.images.shape[1:]
    for f, val_idx in enumerate(folds):
        tr_idx = np.setdiff1d(np.arange(len(data)), val_idx)
        model = build_cesp(shape, plan.filters).init(rng.child(100 + f))
        hist = fit(model, data.take(tr_idx), plan, rng.child(200 + f), val=data.take(val_idx))
        p = predict_images(model, data.images[val_idx])
        oof[val_idx] = p
        yv = data.labels[val_idx]
        acc = float(np.mean((p >= 0.5) == (yv == 1)))
        auc = roc_auc(yv, p) if 0 < yv.sum() < len(yv) else math.nan
        fold_results.append(FoldResult(f, [data.ids[i] for i in val_idx], acc, auc, len(hist)))
    # final model: all samples, epoch budget set by the mean early-stopped fold length
    epochs = max(1, int(round(np.mean([fr.epochs_run for fr in fold_results]))))
    model = build_cesp(shape, plan.filters).init(rng.child(1))
    history = fit(model, data, plan, rng.child(2), epochs=epochs)
    ckpt = _checkpoint(model, plan, {"fold_accuracy": [fr.accuracy for fr in fold_results]})
    return CespResult(model, ckpt, fold_results, roc_auc(data.labels, oof), history)


def train_cesp(manifest: DatasetManifest, plan: TrainPlan = TrainPlan()) -> CespResult:
    return train_on(load_labeled(manifest), plan)


def predict_proba(model: Sequential, manifest: DatasetManifest) -> list[PredictionRecord]:
    data = load_labeled(manifest)
    p = predict_images(model, data.images)
    return [
        PredictionRecord(e.id, e.patient, e.label, float(np.clip(pi, 0.0, 1.0)), e.end_s)
        for e, pi in zip(data.entries, p)
    ]


# -- augmentation -----------------------------------------------------------------------

def augment_dataset(real: DatasetManifest, pool: DatasetManifest, factor: int) -> DatasetManifest:
    """Add ``factor`` synthetic preictal samples per real preictal sample."""
    if factor < 0:
        raise ValueError("factor must be nonnegative")
    if factor == 0:
        return real
    bad = [e.id for e in pool if e.label != "preictal" or e.provenance != "synthetic"]
    if bad:
        raise CespError(f"augmentation pool must be synthetic preictal only; offending entries: {bad[:3]}")
    pool = pool.rebase(real.root)
    out = list(real.entries)
    for pid in real.patients():
        need = factor * sum(1 for e in real if e.patient == pid and e.label == "preictal")
        mine = [e for e in pool if e.patient == pid] or [e for e in pool if e.patient not in real.patients()]
        if len(mine) < need:
            raise CespError(f"patient {pid}: need {need} synthetic preictal samples, pool has {len(mine)}")
        out += mine[:need]
    return replace(real, entries=out, name=f"{real.name}+{factor}x")


# -- protocol ---------------------------------------------------------------------------

def split_train_test(manifest: DatasetManifest, test_fraction: float = 1 / 3, rng: Rng | None = None) -> tuple[DatasetManifest, DatasetManifest]:
    """Per patient: the last seizures' preictal segments and the latest
    interictal segments go to test when timing is known; otherwise a
    stratified random split."""
    rng = rng or Rng(0)
    train, test = [], []
    for pid in manifest.patients():
        ents = [e for e in manifest if e.patient == pid]
        if all(e.has_time for e in ents):
            pre = [e for e in ents if e.label == "preictal"]
            inter = sorted((e for e in ents if e.label == "interictal"), key=lambda e: e.start_s)
            seizures = sorted({e.onset_s for e in pre})
            n_test_sz = max(1, int(round(len(seizures) * test_fraction))) if len(seizures) > 1 else 0
            test_onsets = set(seizures[len(seizures) - n_test_sz :])
            n_test_inter = int(round(len(inter) * test_fraction))
            cut = len(inter) - n_test_inter
            for e in pre:
                (test if e.onset_s in test_onsets else train).append(e)
            train += inter[:cut]
            test += inter[cut:]
        else:
            for label in ("preictal", "interictal"):
                group = [e for e in ents if e.label == label]
                order = rng.permutation(len(group))
                n_test = int(round(len(group) * test_fraction))
                test += [group[i] for i in order[:n_test]]
                train += [group[i] for i in order[n_test:]]
    return replace(manifest, entries=train), replace(manifest, entries=test)


def virtual_timeline(entries: Sequence[ManifestEntry], policy: LabelPolicy = LabelPolicy()) -> list[ManifestEntry]:
    """Place untimed entries of one patient on a synthetic timeline.

    Interictal segments run back to back from t=0; preictal segments are
    grouped into hour-long runs, each ending one SPH before a virtual onset,
    with runs separated by the interictal gap.
    """
    seg = policy.segment_s
    tiles = int(round(policy.preictal_span_s / seg))
    out = []
    t = 0.0
    for e in (e for e in entries if e.label == "interictal"):
        out.append(replace(e, start_s=t, duration_s=seg, onset_s=math.nan, seizure=None))
        t += seg
    pre = [e for e in entries if e.label == "preictal"]
    for g in range(0, len(pre), tiles):
        t += policy.interictal_gap_s
        group = pre[g : g + tiles]
        onset = t + len(group) * seg + policy.sph_s
        for e in group:
            out.append(replace(e, start_s=t, duration_s=seg, onset_s=onset, seizure=g // tiles))
            t += seg
        t = onset
    return out


def with_timeline(manifest: DatasetManifest) -> DatasetManifest:
    entries = []
    for pid in manifest.patients():
        ents = [e for e in manifest if e.patient == pid]
        entries += ents if all(e.has_time for e in ents) else virtual_timeline(ents)
    return replace(manifest, entries=entries)


def events_by_patient(manifest: DatasetManifest) -> tuple[dict[str, list[float]], dict[str, float]]:
    """Seizure onsets and interictal hours per patient, from a timed manifest."""
    onsets: dict[str, set] = {}
    hours: dict[str, float] = {}
    for e in manifest:
        onsets.setdefault(e.patient, set())
        hours.setdefault(e.patient, 0.0)
        if e.label == "preictal" and not math.isnan(e.onset_s):
            onsets[e.patient].add(e.onset_s)
        elif e.label == "interictal":
            hours[e.patient] += e.duration_s / 3600.0
    return {p: sorted(v) for p, v in onsets.items()}, hours


@dataclass
class ComboResult:
    combo: str
    reports: list[EvalReport]
    records: list[PredictionRecord]
    test_auc: float
    oof_auc: float
    val_auc: float
    train_ids: list[str]
    test_ids: list[str]


def evaluate(model: Sequential, test: DatasetManifest, config: EvalConfig = EvalConfig()) -> tuple[list[EvalReport], list[PredictionRecord], float]:
    test = with_timeline(test)
    records = predict_proba(model, test)
    onsets, hours = events_by_patient(test)
    reports = evaluate_records(records, onsets, hours, config)
    labels = [r.true_label == "preictal" for r in records]
    auc = roc_auc(labels, [r.p_preictal for r in records]) if 0 < sum(labels) < len(labels) else math.nan
    return reports, records, auc


def _with_interictal(synthetic: DatasetManifest, real: DatasetManifest) -> DatasetManifest:
    inter = real.filter(label="interictal").rebase(synthetic.root)
    return replace(synthetic, entries=list(synthetic.entries) + list(inter.entries))


def run_protocol(
    real: DatasetManifest,
    synthetic: DatasetManifest,
    plan: TrainPlan = TrainPlan(),
    combos: Sequence[str] = COMBOS,
    config: EvalConfig = EvalConfig(),
) -> dict[str, ComboResult]:
    """Train and test on each requested real/synthetic combination.

    Both manifests are split once with the plan's seed, so every combination
    sees the same partitions and the same alarm scoring.
    """
    needed = {("real" if ch == "R" else "synthetic") for c in combos for ch in (c[1], c[3])}
    sides = {}
    for prov, m in (("real", real), ("synthetic", synthetic)):
        if prov in needed:
            if m is None or len(m) == 0:
                raise CespError(f"{prov} manifest is empty but required by {list(combos)}")
            sides[prov] = split_train_test(m, rng=Rng(plan.seed).child(7))
    if "synthetic" in sides and "real" not in sides and not any(e.label == "interictal" for e in synthetic):
        sides["real"] = split_train_test(real, rng=Rng(plan.seed).child(7))
    if "synthetic" in sides and not any(e.label == "interictal" for e in synthetic):
        # generated data is preictal only; pair it with the real interictal segments of the same split
        sides["synthetic"] = tuple(
            _with_interictal(syn_part, real_part) for syn_part, real_part in zip(sides["synthetic"], sides["real"])
        )
    results = {}
    for i, combo in enumerate(combos):
        p = replace(plan, combo=combo)
        train = sides[p.train_provenance][0]
        test = sides[p.test_provenance][1]
        overlap = {e.id for e in train} & {e.id for e in test}
        if overlap:
            raise LeakageError(f"{combo}: test segments also used for training: {sorted(overlap)[:3]}")
        res = train_cesp(train, p)
        reports, records, auc = evaluate(res.model, test, config)
        results[combo] = ComboResult(combo, reports, records, auc, res.oof_auc, res.val_auc, [e.id for e in train], [e.id for e in test])
    return results


# -- transfer ---------------------------------------------------------------------------

def fine_tune(ckpt: ModelCheckpoint, manifest: DatasetManifest, frozen_layers: int, plan: TrainPlan = TrainPlan(), epochs: int | None = None) -> tuple[ModelCheckpoint, list[float]]:
    """Continue training a checkpoint with its first ``frozen_layers`` layers fixed.

    Returns the new checkpoint and the per-epoch training loss, starting with
    the loss before any update.
    """
    model = load_cesp(ckpt)
    if frozen_layers < 0:
        raise ValueError("frozen_layers must be nonnegative")
    trainable = [n for i in range(min(frozen_layers, len(model.specs)), len(model.specs)) for n in model.layer_param_names(i)]
    data = load_labeled(manifest)
    history = [_loss(model, data.images, data.labels)]
    if trainable:
        history += fit(model, data, plan, Rng(plan.seed).child(3), trainable=trainable, epochs=epochs)
    else:
        return ckpt, history
    meta = dict(ckpt.metadata)
    meta["fine_tuned_frozen_layers"] = frozen_layers
    return ModelCheckpoint({k: p.data.astype(np.float32) for k, p in model.params.items()}, meta), history
