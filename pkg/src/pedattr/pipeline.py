"""End-to-end runs: load -> extract -> train unaries -> similarities -> infer -> evaluate."""
from __future__ import annotations

import contextlib
import dataclasses
import hashlib
import json
import logging
import os
import time
import zlib
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import features as feat
from .inference import (REGIMES, InferenceConfig, RegimeModels, TransductiveData,
                        canonical_regime, run_regime)
from .ingest import SPLITS, UNKNOWN, AttributeRegistry, Sample, load_manifest, split_partition
from .report import EvalReport, evaluate, write_predictions
from .similarity import TreeConfig, squared_distances, train_unsupervised_forest
from .synth import generate_synthetic
from .unary import (Jitter, TrainConfig, augment_positives, intersection_kernel_matrix,
                    train_iksvm)

log = logging.getLogger(__name__)

CACHE_ENV = "PEDATTR_CACHE"
SIGMA_QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9)
C_GRID = (1.0, 0.1, 10.0)  # first entry wins ties


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@contextlib.contextmanager
def stage(name: str):
    t0 = time.perf_counter()
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:  # attach the stage name and re-raise
        raise PipelineError(name, exc) from exc
    log.info("stage %s done in %.1fs", name, time.perf_counter() - t0)


@dataclass
class RunConfig:
    manifest: str | None = None
    synth_n: int = 1000
    synth_attrs: int = 4
    synth_noise: float = 0.0
    synth_clusters: int | None = None
    schemes: tuple[str, ...] = ("fore+whole",)
    regimes: tuple[str, ...] = ("iksvm", "mrfr2")
    attributes: tuple[str, ...] | None = None
    k: int = 5
    lam: float = 1.0
    sigma: float | None = None  # None -> tuned on the verify split
    trees: int = 100
    tree_depth: int = TreeConfig().max_depth
    C: float = 1.0
    tune_C: bool = False
    augment: bool = True
    jitter_scale: tuple[float, float] = (0.9, 1.1)
    jitter_rotation: tuple[float, float] = (-10.0, 10.0)
    seed: int = 0
    ratios: tuple[float, float, float] = (0.5, 0.1, 0.4)
    filter_bank: str | None = None
    out_dir: str | None = None
    cache_dir: str | None = None
    write_predictions: bool = False

    _NON_RESULT = ("out_dir", "cache_dir", "write_predictions")

    def __post_init__(self):
        self.schemes = tuple(feat.canonical_scheme(s) for s in self.schemes)
        self.regimes = tuple(canonical_regime(r) for r in self.regimes)
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.trees < 1:
            raise ValueError("trees must be >= 1")
        for p in (self.manifest, self.filter_bank):
            if p is not None and not Path(p).is_file():
                raise FileNotFoundError(p)

    def result_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k in self._NON_RESULT:
            d.pop(k, None)
        if self.filter_bank:
            d["filter_bank"] = hashlib.sha256(Path(self.filter_bank).read_bytes()).hexdigest()
        if self.manifest:
            d["manifest"] = hashlib.sha256(Path(self.manifest).read_bytes()).hexdigest()
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.result_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig) if not f.name.startswith("_")}


def _parse_value(name: str, text: str):
    text = text.strip()
    typ = str(_FIELDS[name].type)
    if text.lower() in ("none", "auto", "") and "None" in typ:
        return None
    if typ.startswith("tuple"):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if "float" in typ:
            return tuple(float(t) for t in items)
        return tuple(items)
    if typ.startswith("bool"):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: not a boolean: {text!r}")
    if typ.startswith("int"):
        return int(text)
    if typ.startswith("float"):
        return float(text)
    return text


def parse_config_text(text: str, base_dir: Path | None = None) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; dashes in keys allowed."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "lambda":
            key = "lam"
        if key not in _FIELDS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        val = _parse_value(key, value)
        if key in ("manifest", "filter_bank", "out_dir", "cache_dir") and val and base_dir:
            val = str((base_dir / val) if not Path(val).is_absolute() else Path(val))
        out[key] = val
    return out


def load_config(path, **overrides) -> RunConfig:
    path = Path(path)
    values = parse_config_text(path.read_text(encoding="utf-8"), path.parent)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


# -- stages --------------------------------------------------------------------

def load_dataset(cfg: RunConfig) -> tuple[AttributeRegistry, list[Sample], str]:
    if cfg.manifest:
        registry, samples = load_manifest(cfg.manifest)
        dataset_id = "manifest:" + hashlib.sha256(Path(cfg.manifest).read_bytes()).hexdigest()[:16]
    else:
        registry, samples = generate_synthetic(cfg.synth_n, cfg.synth_attrs, cfg.synth_noise,
                                               cfg.seed, cfg.synth_clusters, ratios=cfg.ratios)
        dataset_id = (f"synthetic:n={cfg.synth_n},attrs={cfg.synth_attrs},"
                      f"noise={cfg.synth_noise},seed={cfg.seed}")
    if any(s.split is None for s in samples):
        samples = split_partition(samples, cfg.ratios, cfg.seed)
        registry = AttributeRegistry.from_samples(registry.names, samples)
    samples = sorted(samples, key=lambda s: s.id)
    return registry, samples, dataset_id


def _cache_dir(cfg: RunConfig) -> Path | None:
    d = cfg.cache_dir or os.environ.get(CACHE_ENV)
    return Path(d) if d else None


def extract_features(cfg: RunConfig, samples: Sequence[Sample], scheme: str, dataset_id: str,
                     bank: feat.FilterBankConfig) -> feat.FeatureSet:
    cache = _cache_dir(cfg)
    path = None
    if cache is not None:
        key = hashlib.sha256(json.dumps(
            [dataset_id, scheme, bank.to_dict(), feat.DEFAULT_SIZE], sort_keys=True).encode()
        ).hexdigest()[:24]
        path = cache / f"features-{key}.npz"
        if path.is_file():
            fs = feat.load_features(path)
            if fs.ids == tuple(s.id for s in samples) and fs.scheme == scheme:
                return fs
    fs = feat.extract_many(samples, scheme, bank)
    if path is not None:
        feat.save_features(path, fs)
    return fs


def _attr_seed(seed: int, attr: str) -> int:
    return (seed * 1_000_003 + zlib.crc32(attr.encode())) % (2 ** 32)


@dataclass
class UnaryOutcome:
    probs: dict[str, np.ndarray] = field(default_factory=dict)  # attr -> P(l=1) per sample row
    models: dict[str, object] = field(default_factory=dict)
    skipped: dict[str, str] = field(default_factory=dict)


def train_unaries(cfg: RunConfig, samples: Sequence[Sample], fs: feat.FeatureSet,
                  attributes: Sequence[str], bank: feat.FilterBankConfig) -> UnaryOutcome:
    """Fit one calibrated ikSVM per attribute and score every sample."""
    X = fs.X
    split = np.asarray([s.split for s in samples])
    train_rows = np.flatnonzero(split == "train")
    verify_rows = np.flatnonzero(split == "verify")
    K_train = intersection_kernel_matrix(X, X[train_rows], dtype=np.float32)
    col_of = {int(r): i for i, r in enumerate(train_rows)}
    jitter = Jitter(tuple(cfg.jitter_scale), tuple(cfg.jitter_rotation))
    out = UnaryOutcome()
    for attr in attributes:
        lab = np.asarray([s.labels.get(attr, UNKNOWN) for s in samples])
        tr = train_rows[lab[train_rows] >= 0]
        pos, neg = tr[lab[tr] == 1], tr[lab[tr] == 0]
        if pos.size == 0 or neg.size == 0:
            out.skipped[attr] = "training split has a single class"
            continue
        aug_X = np.zeros((0, X.shape[1]))
        if cfg.augment and pos.size < neg.size:
            extra = augment_positives([samples[i] for i in pos], int(neg.size), jitter,
                                      _attr_seed(cfg.seed, attr))[pos.size:]
            aug_X = np.stack([feat.extract(s.image, s.mask, fs.scheme, bank).values for s in extra])
        K_all = K_train[:, [col_of[int(r)] for r in tr]]
        if aug_X.shape[0]:
            K_all = np.hstack([K_all, intersection_kernel_matrix(X, aug_X, dtype=np.float32)])
            K_aug = np.hstack([intersection_kernel_matrix(aug_X, X[tr], dtype=np.float32),
                               intersection_kernel_matrix(aug_X, dtype=np.float32)])
            gram = np.vstack([K_all[tr], K_aug])
        else:
            gram = K_all[tr]
        gram = (gram + gram.T) / 2
        y = np.concatenate([lab[tr], np.ones(aug_X.shape[0], dtype=int)])
        train_X = np.vstack([X[tr], aug_X])
        ver = verify_rows[lab[verify_rows] >= 0]
        calib = (K_all[ver], lab[ver]) if ver.size else None

        def fit(C):
            tc = TrainConfig(C=C, seed=cfg.seed)
            return train_iksvm(train_X, y, tc, attr, gram=gram, calibration_kernel=calib)

        if cfg.tune_C and ver.size:
            best = None
            for C in C_GRID:
                m = fit(C)
                scores = m.decision_from_kernel(K_all[ver][:, m.support_index])
                acc = float(np.mean((scores > 0).astype(int) == lab[ver]))
                if best is None or acc > best[0]:
                    best = (acc, m)
            model = best[1]
        else:
            model = fit(cfg.C)
        scores = model.decision_from_kernel(K_all[:, model.support_index])
        out.probs[attr] = model.proba_from_scores(scores)
        out.models[attr] = model
        log.info("unary %s: %d train (+%d aug), %d SVs, C=%g", attr, tr.size,
                 aug_X.shape[0], model.support_index.size, model.C)
    return out


def train_forest(cfg: RunConfig, data: TransductiveData):
    """Unsupervised forest over the train and test descriptors (never verify)."""
    rows = data.rows(tuple(data.train_ids) + tuple(data.test_ids))
    return train_unsupervised_forest(rows, cfg.trees, TreeConfig(max_depth=cfg.tree_depth),
                                     cfg.seed)


def _accuracy_on(assignments, samples_by_id) -> float:
    accs = []
    for attr, asg in assignments.items():
        truth = {s: samples_by_id[s].labels.get(attr, UNKNOWN) for s in asg.nodes}
        pred = {s: l for s, l in asg.as_dict().items() if truth[s] in (0, 1)}
        truth = {s: t for s, t in truth.items() if t in (0, 1)}
        if truth:
            accs.append(evaluate(pred, truth)[0])
    return float(np.mean(accs)) if accs else 0.0


def tune_sigma(cfg: RunConfig, regime: str, data: TransductiveData, probs_maps, verify_ids,
               samples_by_id) -> float:
    """Pick sigma from quantiles of verify-split distances by verify accuracy."""
    D = np.sqrt(squared_distances(data.rows(verify_ids)))
    iu = np.triu_indices(len(verify_ids), 1)
    dists = D[iu]
    dists = dists[dists > 0]
    if dists.size == 0:
        return 1.0
    candidates = [float(np.quantile(dists, q)) for q in SIGMA_QUANTILES]
    vdata = TransductiveData(data.ids, data.X, data.train_ids, tuple(verify_ids), data.train_labels)
    best = None
    for sigma in candidates:
        res = run_regime(regime, vdata, RegimeModels(probs_maps),
                         InferenceConfig(cfg.k, cfg.lam, sigma))
        acc = _accuracy_on(res, samples_by_id)
        if best is None or acc > best[0]:
            best = (acc, sigma)
    log.info("sigma for %s tuned to %.4g (verify acc %.2f)", regime, best[1], best[0])
    return best[1]


def run_pipeline(cfg: RunConfig) -> EvalReport:
    with stage("load"):
        registry, samples, dataset_id = load_dataset(cfg)
        bank = (feat.FilterBankConfig.from_json(cfg.filter_bank) if cfg.filter_bank
                else feat.FilterBankConfig.default())
        attributes = list(cfg.attributes or registry.names)
        unknown = [a for a in attributes if a not in registry.names]
        if unknown:
            raise ValueError(f"unknown attributes: {unknown}")
        by_id = {s.id: s for s in samples}
        ids = tuple(s.id for s in samples)
        train_ids = tuple(s.id for s in samples if s.split == "train")
        verify_ids = tuple(s.id for s in samples if s.split == "verify")
        test_ids = tuple(s.id for s in samples if s.split == "test")
        for name, part in zip(SPLITS, (train_ids, verify_ids, test_ids)):
            if not part:
                raise ValueError(f"empty {name} split")
        train_labels = {a: {s: by_id[s].labels.get(a, UNKNOWN) for s in train_ids}
                        for a in attributes}

    report = EvalReport(attributes=[], columns=[(r, s) for r in cfg.regimes for s in cfg.schemes])
    report.metadata = {"dataset": dataset_id, "seed": str(cfg.seed),
                       "config": cfg.config_hash(),
                       "samples": f"train={len(train_ids)} verify={len(verify_ids)} test={len(test_ids)}"}
    pred_rows = []
    results = {}
    for scheme in cfg.schemes:
        with stage(f"extract[{scheme}]"):
            fs = extract_features(cfg, samples, scheme, dataset_id, bank)
        with stage(f"train-unary[{scheme}]"):
            unary = train_unaries(cfg, samples, fs, attributes, bank)
            report.skipped.update(unary.skipped)
            probs_maps = {a: dict(zip(ids, p.tolist())) for a, p in unary.probs.items()}
        data = TransductiveData(ids, fs.X, train_ids, test_ids,
                                {a: train_labels[a] for a in unary.probs})
        leaves = None
        if any(r.startswith("mrfr") for r in cfg.regimes):
            with stage(f"train-forest[{scheme}]"):
                leaves = train_forest(cfg, data).leaves(fs.X)
        for regime in cfg.regimes:
            with stage(f"infer[{regime},{scheme}]"):
                sigma = cfg.sigma
                if regime.startswith("mrfg") and sigma is None:
                    sigma = tune_sigma(cfg, regime, data, probs_maps, verify_ids, by_id)
                    report.metadata[f"sigma[{regime},{scheme}]"] = f"{sigma:.6g}"
                results[(regime, scheme)] = run_regime(
                    regime, data, RegimeModels(probs_maps, leaves=leaves),
                    InferenceConfig(cfg.k, cfg.lam, sigma))

    with stage("evaluate"):
        evaluated = [a for a in attributes if a not in report.skipped]
        for attr in evaluated:
            truth = {s: by_id[s].labels.get(attr, UNKNOWN) for s in test_ids}
            truth = {s: t for s, t in truth.items() if t in (0, 1)}
            if not truth:
                report.skipped[attr] = "no labelled test samples"
                continue
            report.attributes.append(attr)
            for col, res in results.items():
                pred = res[attr].as_dict()
                acc, bal = evaluate({s: pred[s] for s in truth}, truth)
                report.add(attr, col, acc, bal)
                if cfg.write_predictions:
                    pred_rows.extend((attr, col[0], col[1], s, pred[s]) for s in test_ids)
        if not report.attributes:
            raise ValueError("no attribute could be evaluated")
    if cfg.out_dir:
        with stage("write"):
            report.write(cfg.out_dir)
            if cfg.write_predictions:
                write_predictions(Path(cfg.out_dir) / "predictions.tsv", pred_rows)
    return report


__all__ = ["RunConfig", "PipelineError", "run_pipeline", "load_config", "REGIMES"]
