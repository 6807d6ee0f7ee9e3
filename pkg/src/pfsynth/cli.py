"""``pf``: run the pipeline stage by stage.

Every stage reads its inputs from the output directory (or from paths named
in the config), writes its artifacts beneath it, and records a provenance
file with SHA-256 digests of everything it read and wrote.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, PipelineConfig, load_config
from .evalstat import (
    ALPHA,
    EvalConfig,
    EvalError,
    aggregate_reports,
    hanley_mcneil_p,
    is_significant,
    load_reports,
    records_from_csv,
    records_to_csv,
    roc_auc,
    roc_csv,
    save_reports,
)
from .ingest import (
    DatasetManifest,
    EdfError,
    LabelPolicy,
    ManifestEntry,
    PatientRecordings,
    build_dataset,
    load_segment,
    read_annotations,
    read_edf,
)
from .numcore import ModelCheckpoint, Rng

STAGES = ("ingest", "preprocess", "gan-train", "gan-sample", "sieve", "train", "protocol", "eval", "report")


class StageError(RuntimeError):
    pass


class Context:
    def __init__(self, cfg: PipelineConfig, out: Path, toy: bool):
        self.cfg = cfg
        self.out = out
        self.toy = toy
        self.seed = cfg["seed"]
        self.inputs: list[Path] = []

    def read(self, *paths: Path) -> None:
        self.inputs.extend(Path(p) for p in paths)

    def eval_config(self) -> EvalConfig:
        return EvalConfig(self.cfg["eval.sph_min"] * 60, self.cfg["eval.sop_min"] * 60, self.cfg["eval.threshold"])

    def load_manifest(self, path: Path) -> DatasetManifest:
        m = DatasetManifest.load(path)
        self.read(path, *(m.resolve(e) for e in m))
        return m

    # -- shared inputs ----------------------------------------------------------------
    def real_spectrograms(self) -> DatasetManifest:
        p = self.cfg.path("data.real_manifest") or self.out / "spectrograms" / "manifest.csv"
        if not p.exists():
            if not self.toy:
                raise StageError(f"no spectrogram manifest at {p}; run 'pf preprocess' first")
            p = self.out / "toy_spectrograms" / "manifest.csv"
            if not p.exists():
                from .toy import write_toy_spectrograms

                write_toy_spectrograms(p.parent, seed=self.seed, size=self.cfg["preprocess.size"])
        return self.load_manifest(p)

    def synthetic_spectrograms(self) -> DatasetManifest:
        p = self.cfg.path("data.synthetic_manifest") or self.out / "synthetic" / "manifest.csv"
        if not p.exists():
            if not self.toy:
                raise StageError(f"no synthetic manifest at {p}; run 'pf sieve' first")
            # stand-in synthetic data drawn from the same generator as the toy real corpus
            p = self.out / "toy_synthetic" / "manifest.csv"
            if not p.exists():
                from .toy import write_toy_spectrograms

                write_toy_spectrograms(
                    p.parent, seed=self.seed + 1, provenance="synthetic", size=self.cfg["preprocess.size"], timed=False
                )
        m = self.load_manifest(p)
        if len(m) == 0:
            raise StageError(f"synthetic manifest {p} is empty; the sieve kept no samples (see sieve/summary.csv)")
        return m

    def plan(self, combo: str = "TRTR"):
        from .cesp import TOY_FILTERS, TrainPlan

        c = self.cfg.section("cesp")
        return TrainPlan(
            combo=combo,
            folds=c["folds"],
            learning_rate=c["learning_rate"],
            epochs=c["epochs"],
            batch_size=c["batch_size"],
            patience=c["patience"],
            seed=self.seed,
            augmentation_factor=c["augmentation"],
            filters=TOY_FILTERS if self.toy else None,
        )


# -- stages -------------------------------------------------------------------------------

def stage_ingest(ctx: Context) -> list[Path]:
    edf_dir = ctx.cfg.path("data.edf_dir")
    if edf_dir is None:
        if not ctx.toy:
            raise StageError("data.edf_dir is not set")
        from .toy import write_toy_edf

        edf_dir = ctx.out / "toy_edf"
        if not any(edf_dir.glob("*.edf")):
            write_toy_edf(edf_dir, seed=ctx.seed)
    files = sorted(Path(edf_dir).glob("*.edf"))
    if not files:
        raise StageError(f"no .edf files in {edf_dir}")
    patients = []
    for f in files:
        side = f.with_suffix(".seizures")
        ctx.read(f, *([side] if side.exists() else []))
        rec = read_edf(f)
        patients.append(PatientRecordings(f.stem, [(0.0, rec)], read_annotations(side) if side.exists() else []))
    m = build_dataset(patients, ctx.out / "segments", LabelPolicy(), name="segments")
    return [ctx.out / "segments" / "manifest.csv"] + [m.resolve(e) for e in m]


def stage_preprocess(ctx: Context) -> list[Path]:
    from .preprocess import save_spectrogram, segment_to_spectrogram

    src = ctx.load_manifest(ctx.out / "segments" / "manifest.csv")
    dst = ctx.out / "spectrograms"
    (dst / "spectrograms").mkdir(parents=True, exist_ok=True)
    entries, outputs = [], []
    for e in src:
        seg = load_segment(src.resolve(e))
        spec = segment_to_spectrogram(
            seg, ctx.cfg["preprocess.line_freq"], ctx.cfg["preprocess.size"], ctx.cfg["preprocess.window_s"], e.id
        )
        rel = f"spectrograms/{e.id}.pfsp"
        save_spectrogram(spec, dst / rel)
        outputs.append(dst / rel)
        entries.append(replace(e, path=rel))
    DatasetManifest("spectrograms", 3, entries, dst).save(dst / "manifest.csv")
    return [dst / "manifest.csv"] + outputs


def _gan_setup(ctx: Context, image_shape):
    from .dcgan import FULL_ARCH, GanTrainConfig, toy_arch

    g = ctx.cfg.section("gan")
    cfg = GanTrainConfig(
        batch_size=g["batch_size"],
        patience=g["patience"],
        beta1=g["beta1"],
        learning_rate=g["learning_rate"],
        max_epochs=g["max_epochs"],
        min_epochs=g["min_epochs"],
        seed=ctx.seed,
        scale_mode="toy" if ctx.toy else "full",
    )
    arch = toy_arch(image_shape[0], image_shape[2]) if ctx.toy else FULL_ARCH
    return cfg, arch


def stage_gan_train(ctx: Context) -> list[Path]:
    from .dcgan import load_images, train_gan

    real = ctx.real_spectrograms()
    out = ctx.out / "gan"
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for k, pid in enumerate(real.patients()):
        pre = real.filter(label="preictal", patient=pid)
        if len(pre) == 0:
            continue
        images = load_images(pre)
        cfg, arch = _gan_setup(ctx, images.shape[1:])
        res = train_gan(images, replace(cfg, seed=ctx.seed + k), arch, log_path=out / f"{pid}_loss.csv")
        res.checkpoint.metadata["patient"] = pid
        res.checkpoint.save(out / f"{pid}.pfck")
        outputs += [out / f"{pid}.pfck", out / f"{pid}_loss.csv"]
        print(f"gan-train {pid}: {res.epochs_run} epochs, early stop {res.stopped_early}")
    if not outputs:
        raise StageError("no preictal spectrograms to train on")
    return outputs


def stage_gan_sample(ctx: Context) -> list[Path]:
    from .dcgan import generate_samples, write_samples

    ckpts = sorted((ctx.out / "gan").glob("*.pfck"))
    if not ckpts:
        raise StageError("no generator checkpoints; run 'pf gan-train' first")
    samples = []
    for k, path in enumerate(ckpts):
        ctx.read(path)
        ckpt = ModelCheckpoint.load(path)
        pid = ckpt.metadata.get("patient", path.stem)
        for s in generate_samples(ckpt, ctx.cfg["gan.samples"], Rng(ctx.seed).child(k), id_prefix=f"{pid}_syn"):
            s.meta["patient"] = pid
            samples.append(s)
    m = write_samples(samples, ctx.out / "synthetic_raw", "synthetic-raw")
    m = replace(m, entries=[replace(e, patient=s.meta["patient"]) for e, s in zip(m.entries, samples)])
    m.save(ctx.out / "synthetic_raw" / "manifest.csv")
    return [ctx.out / "synthetic_raw" / "manifest.csv"] + [m.resolve(e) for e in m]


def stage_sieve(ctx: Context) -> list[Path]:
    from .preprocess import load_spectrogram
    from .sieve import featurize, filter_samples, train_ocsvm

    real = ctx.real_spectrograms()
    raw_path = ctx.out / "synthetic_raw" / "manifest.csv"
    if not raw_path.exists():
        raise StageError("no raw synthetic samples; run 'pf gan-sample' first")
    raw = ctx.load_manifest(raw_path)
    grid = min(ctx.cfg["sieve.grid"], ctx.cfg["preprocess.size"])
    gamma = ctx.cfg["sieve.gamma"]
    gamma = gamma if gamma == "scale" else float(gamma)
    out = ctx.out / "sieve"
    out.mkdir(parents=True, exist_ok=True)
    kept_entries, summary, outputs = [], [], []
    for pid in raw.patients():
        ref = real.filter(label="preictal", patient=pid)
        if len(ref) == 0:
            raise StageError(f"patient {pid}: no real preictal spectrograms for the sieve")
        feats = np.stack([featurize(load_spectrogram(ref.resolve(e)), grid) for e in ref])
        model = train_ocsvm(feats, ctx.cfg["sieve.nu"], gamma)
        model.save(out / f"{pid}.pfsv")
        outputs.append(out / f"{pid}.pfsv")
        mine = [e for e in raw if e.patient == pid]
        res = filter_samples(model, [load_spectrogram(raw.resolve(e)) for e in mine], grid)
        keep = set(s.source_id for s in res.kept)
        kept_entries += [e for e in mine if e.id in keep]
        summary.append((pid, res.kept_count, res.discarded_count))
    syn = DatasetManifest("synthetic", raw.channels, kept_entries, raw.root).rebase(ctx.out / "synthetic")
    (ctx.out / "synthetic").mkdir(parents=True, exist_ok=True)
    syn.save(ctx.out / "synthetic" / "manifest.csv")
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient", "kept", "discarded"])
        w.writerows(summary)
    return outputs + [out / "summary.csv", ctx.out / "synthetic" / "manifest.csv"]


def stage_train(ctx: Context) -> list[Path]:
    from .cesp import augment_dataset, split_train_test, train_cesp

    real = ctx.real_spectrograms()
    plan = ctx.plan()
    train, _ = split_train_test(real, rng=Rng(plan.seed).child(7))
    if plan.augmentation_factor:
        train = augment_dataset(train, ctx.synthetic_spectrograms(), plan.augmentation_factor)
    res = train_cesp(train, plan)
    out = ctx.out / "cesp"
    out.mkdir(parents=True, exist_ok=True)
    res.checkpoint.save(out / "model.pfck")
    with open(out / "folds.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "n_val", "accuracy", "auc", "epochs"])
        for f in res.folds:
            w.writerow([f.fold, len(f.val_ids), repr(f.accuracy), repr(f.auc), f.epochs_run])
    print(f"train: mean fold AUC {res.val_auc:.4f}, pooled out-of-fold AUC {res.oof_auc:.4f}")
    return [out / "model.pfck", out / "folds.csv"]


def stage_eval(ctx: Context) -> list[Path]:
    from .cesp import evaluate, load_cesp, split_train_test

    ckpt_path = ctx.out / "cesp" / "model.pfck"
    if not ckpt_path.exists():
        raise StageError("no trained model; run 'pf train' first")
    ctx.read(ckpt_path)
    model = load_cesp(ModelCheckpoint.load(ckpt_path))
    _, test = split_train_test(ctx.real_spectrograms(), rng=Rng(ctx.seed).child(7))
    reports, records, auc = evaluate(model, test, ctx.eval_config())
    out = ctx.out / "eval"
    out.mkdir(parents=True, exist_ok=True)
    save_reports(reports + [aggregate_reports(reports)], out / "reports.csv")
    (out / "predictions.csv").write_text(records_to_csv(records))
    print(f"eval: test AUC {auc:.4f}")
    return [out / "reports.csv", out / "predictions.csv"]


def stage_protocol(ctx: Context) -> list[Path]:
    from .cesp import run_protocol

    results = run_protocol(ctx.real_spectrograms(), ctx.synthetic_spectrograms(), ctx.plan(), config=ctx.eval_config())
    out = ctx.out / "protocol"
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for combo, r in results.items():
        save_reports(r.reports + [aggregate_reports(r.reports)], out / f"{combo}_reports.csv")
        (out / f"{combo}_predictions.csv").write_text(records_to_csv(r.records))
        outputs += [out / f"{combo}_reports.csv", out / f"{combo}_predictions.csv"]
        print(f"protocol {combo}: test AUC {r.test_auc:.4f}")
    return outputs


def emit_roc(reports_dir, out_dir) -> list[Path]:
    """Per-patient ``fpr,tpr,threshold`` CSVs and a summary for every
    prediction file under ``reports_dir``."""
    reports_dir, out_dir = Path(reports_dir), Path(out_dir)
    files = sorted(reports_dir.glob("*predictions.csv")) if reports_dir.is_dir() else []
    sources = {f.stem.removesuffix("_predictions") or "predictions": records_from_csv(f.read_text()) for f in files}
    sources = {k: v for k, v in sources.items() if v}
    if not sources:
        raise EvalError(f"no prediction records found in {reports_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs, rows = [], []
    for src, records in sources.items():
        by_patient: dict[str, list] = {}
        for r in records:
            by_patient.setdefault(r.patient, []).append(r)
        for pid in sorted(by_patient):
            recs = by_patient[pid]
            labels = [r.true_label == "preictal" for r in recs]
            n_pos = sum(labels)
            n_neg = len(labels) - n_pos
            if n_pos == 0 or n_neg == 0:
                rows.append([src, pid, "nan", n_pos, n_neg])
                continue
            scores = [r.p_preictal for r in recs]
            path = out_dir / f"roc_{src}_{pid}.csv"
            path.write_text(roc_csv(labels, scores))
            outputs.append(path)
            rows.append([src, pid, repr(roc_auc(labels, scores)), n_pos, n_neg])
    summary = out_dir / "roc_summary.csv"
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "patient", "auc", "n_pos", "n_neg"])
        w.writerows(rows)
    return outputs + [summary]


def compare_to_reference(rows: list[list], reference: str = "TRTR") -> list[list]:
    """One-tailed Hanley-McNeil p of the reference AUC exceeding each other
    source's AUC, per patient, with the Bonferroni-corrected flag."""
    table = {(r[0], r[1]): r for r in rows if r[2] != "nan"}
    out = []
    for (src, pid), r in sorted(table.items()):
        ref = table.get((reference, pid))
        if src == reference or ref is None:
            continue
        a1, a2 = float(ref[2]), float(r[2])
        if not (0 < a1 < 1 and 0 < a2 < 1) or min(ref[3], ref[4], r[3], r[4]) < 2:
            p = math.nan
        else:
            p = hanley_mcneil_p(a1, ref[3], ref[4], a2, r[3], r[4])
        out.append([reference, src, pid, repr(a1), repr(a2), repr(p), str(not math.isnan(p) and is_significant(p))])
    return out


def stage_report(ctx: Context) -> list[Path]:
    out = ctx.out / "report"
    outputs = []
    rows = []
    for sub in ("protocol", "eval"):
        d = ctx.out / sub
        if d.is_dir() and any(d.glob("*predictions.csv")):
            ctx.read(*sorted(d.glob("*.csv")))
            paths = emit_roc(d, out / sub)
            outputs += paths
            with open(out / sub / "roc_summary.csv") as fh:
                for r in list(csv.reader(fh))[1:]:
                    rows.append([r[0], r[1], r[2], int(r[3]), int(r[4])])
    if not outputs:
        raise EvalError(f"no prediction records under {ctx.out}; run 'pf protocol' or 'pf eval' first")
    comp = compare_to_reference(rows)
    with open(out / "auc_comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["reference", "source", "patient", "auc_reference", "auc_source", "p_value", f"significant_at_{ALPHA:g}"])
        w.writerows(comp)
    averages = []
    for sub in ("protocol", "eval"):
        for f in sorted((ctx.out / sub).glob("*reports.csv")) if (ctx.out / sub).is_dir() else []:
            reps = [r for r in load_reports(f) if r.patient != "Average"]
            if reps:
                averages.append((f.stem.removesuffix("_reports") or sub, aggregate_reports(reps)))
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "sensitivity", "fpr_per_h", "specificity", "accuracy", "auc"])
        for name, a in averages:
            w.writerow([name] + [f"{v:.4f}" for v in (a.sensitivity, a.fpr_per_h, a.specificity, a.accuracy, a.auc)])
    return outputs + [out / "auc_comparison.csv", out / "summary.csv"]


STAGE_FUNCS = {
    "ingest": stage_ingest,
    "preprocess": stage_preprocess,
    "gan-train": stage_gan_train,
    "gan-sample": stage_gan_sample,
    "sieve": stage_sieve,
    "train": stage_train,
    "protocol": stage_protocol,
    "eval": stage_eval,
    "report": stage_report,
}


# -- provenance ---------------------------------------------------------------------------

def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_provenance(ctx: Context, stage: str, outputs: list[Path]) -> Path:
    def rel(p: Path) -> str:
        try:
            return Path(os.path.relpath(p.resolve(), ctx.out.resolve())).as_posix()
        except ValueError:
            return str(p)

    record = {
        "stage": stage,
        "version": __version__,
        "seed": ctx.seed,
        "config_sha256": ctx.cfg.digest(),
        "inputs": {rel(p): sha256(p) for p in sorted(set(ctx.inputs)) if p.is_file()},
        "outputs": {rel(p): sha256(p) for p in sorted(set(outputs)) if p.is_file()},
    }
    path = ctx.out / "provenance" / f"{stage}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path


# -- entry point --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pf", description="Seizure-prediction pipeline with GAN-based augmentation.")
    p.add_argument("--version", action="version", version=f"pf {__version__}")
    p.add_argument("stage", choices=STAGES, help="pipeline stage to run")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", default="pf-out", help="output directory (default: %(default)s)")
    p.add_argument("--toy", action="store_true", help="desk-scale mode on the bundled toy corpora")
    return p


def _thread_limit():
    raw = os.environ.get("PF_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError("PF_THREADS", f"must be a positive integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, toy=args.toy)
        if args.seed is not None:
            cfg.set("seed", args.seed)
        cfg.validate()
        limit = _thread_limit()
    except ConfigError as exc:
        print(f"pf: config error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context(cfg, out, args.toy)
    try:
        with limit:
            outputs = STAGE_FUNCS[args.stage](ctx)
    except (StageError, EvalError, EdfError, ValueError, RuntimeError, KeyError, OSError) as exc:
        print(f"pf {args.stage}: error: {exc}", file=sys.stderr)
        return 1
    prov = write_provenance(ctx, args.stage, outputs)
    print(f"pf {args.stage}: wrote {len(outputs)} artifacts; provenance in {prov}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
