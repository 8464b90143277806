"""Semi-supervised detection pipeline.

Trains the autoencoder on malicious vectors only, calibrates a
reconstruction-error threshold on the training errors, classifies by
error-at-most-threshold and evaluates with malware as the positive class.
A scikit-learn style estimator wraps the same pieces so the detector
composes with the wider ecosystem.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .autoencoder import (
    DEFAULT_ACTIVATIONS,
    Network,
    TrainConfig,
    build_network,
    network_from_dict,
    network_to_dict,
    reconstruction_error,
    reconstruction_errors,
    train,
)
from .features import (
    FeatureVector,
    FeatureVocabulary,
    VocabularyMismatch,
    default_vocabulary,
    read_vector_records,
    vocabulary_from_dict,
    vocabulary_to_dict,
    write_vector_records,
)

BENIGN = "benign"
MALICIOUS = "malicious"
CLASS_LABELS = (BENIGN, MALICIOUS)

DEFAULT_PERCENTILE = 95.0
ROUTING_MERGE = "merge-train-benign"
ROUTING_TEST_ONLY = "benign-in-test-only"
ROUTINGS = (ROUTING_MERGE, ROUTING_TEST_ONLY)


class DetectorError(Exception):
    pass


class EmptyClass(DetectorError):
    """A label class has zero records where both are required."""


@dataclass(frozen=True)
class LabeledDataset:
    app_ids: tuple[str, ...]
    labels: tuple[str, ...]
    matrix: np.ndarray = field(repr=False)  # (n, dimension) of 0/1
    vocabulary_fingerprint: str

    def __post_init__(self):
        if self.matrix.ndim != 2:
            raise DetectorError("dataset matrix must be 2-d")
        if not len(self.app_ids) == len(self.labels) == self.matrix.shape[0]:
            raise DetectorError("ids, labels and matrix rows disagree")
        bad = set(self.labels) - set(CLASS_LABELS)
        if bad:
            raise DetectorError("unknown labels: %s" % ", ".join(sorted(bad)))

    def __len__(self) -> int:
        return self.matrix.shape[0]

    @property
    def dimension(self) -> int:
        return self.matrix.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        indices = list(indices)
        return LabeledDataset(
            app_ids=tuple(self.app_ids[i] for i in indices),
            labels=tuple(self.labels[i] for i in indices),
            matrix=self.matrix[indices],
            vocabulary_fingerprint=self.vocabulary_fingerprint,
        )

    def class_indices(self, label: str) -> list[int]:
        return [i for i, l in enumerate(self.labels) if l == label]

    def concat(self, other: "LabeledDataset") -> "LabeledDataset":
        if other.vocabulary_fingerprint != self.vocabulary_fingerprint:
            raise VocabularyMismatch(
                "fingerprints %s and %s"
                % (self.vocabulary_fingerprint, other.vocabulary_fingerprint)
            )
        return LabeledDataset(
            app_ids=self.app_ids + other.app_ids,
            labels=self.labels + other.labels,
            matrix=np.vstack([self.matrix, other.matrix]),
            vocabulary_fingerprint=self.vocabulary_fingerprint,
        )

    @classmethod
    def from_file(cls, path) -> "LabeledDataset":
        fingerprint, records = read_vector_records(path)
        unknown = [r[0] for r in records if r[1] not in CLASS_LABELS]
        if unknown:
            raise DetectorError(
                "records without a benign/malicious label: %s"
                % ", ".join(unknown[:5])
            )
        return cls(
            app_ids=tuple(r[0] for r in records),
            labels=tuple(r[1] for r in records),
            matrix=np.array([r[2] for r in records], dtype=np.float64),
            vocabulary_fingerprint=fingerprint,
        )

    def to_file(self, path, header_comments: tuple[str, ...] = ()) -> None:
        write_vector_records(
            path,
            self.vocabulary_fingerprint,
            (
                (app_id, label, row.astype(int))
                for app_id, label, row in zip(self.app_ids, self.labels, self.matrix)
            ),
            header_comments=header_comments,
        )


def split(
    data: LabeledDataset, train_fraction: float, seed: int
) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified-by-label shuffle split, seeded.

    Per-class train counts follow a largest-remainder allocation of
    floor(fraction * n + 0.5) total train records.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train fraction must lie strictly between 0 and 1")
    per_class = {label: data.class_indices(label) for label in CLASS_LABELS}
    for label, indices in per_class.items():
        if not indices:
            raise EmptyClass("class %r has zero records" % label)

    n_train_total = int(math.floor(train_fraction * len(data) + 0.5))
    ideal = {label: train_fraction * len(idx) for label, idx in per_class.items()}
    take = {label: int(math.floor(ideal[label])) for label in CLASS_LABELS}
    leftover = n_train_total - sum(take.values())
    # Hand the remaining slots to the largest fractional remainders; ties go
    # to the bigger class, then to label order, so the result is deterministic.
    order = sorted(
        CLASS_LABELS,
        key=lambda l: (-(ideal[l] - take[l]), -len(per_class[l]), l),
    )
    for label in order:
        if leftover <= 0:
            break
        if take[label] < len(per_class[label]):
            take[label] += 1
            leftover -= 1

    rng = np.random.default_rng(seed)
    train_indices: list[int] = []
    test_indices: list[int] = []
    for label in CLASS_LABELS:
        indices = per_class[label]
        shuffled = [indices[i] for i in rng.permutation(len(indices))]
        train_indices.extend(shuffled[: take[label]])
        test_indices.extend(shuffled[take[label] :])
    return data.subset(sorted(train_indices)), data.subset(sorted(test_indices))


def calibrate_threshold(
    net: Network,
    malicious_train,
    method: str = "percentile",
    percentile: float = DEFAULT_PERCENTILE,
) -> float:
    """Threshold from training reconstruction errors only (no test leakage).

    percentile uses linear interpolation; max-train-error takes the maximum.
    """
    matrix = np.asarray(malicious_train, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[np.newaxis, :]
    if matrix.shape[0] == 0:
        raise ValueError("calibration needs at least one training vector")
    errors = reconstruction_errors(net, matrix)
    if method == "percentile":
        if not 0.0 <= percentile <= 100.0:
            raise ValueError("percentile out of range")
        return float(np.percentile(errors, percentile))
    if method in ("max-train-error", "max"):
        return float(np.max(errors))
    raise ValueError("unknown calibration method %r" % method)


@dataclass(frozen=True)
class DetectorModel:
    network: Network
    threshold: float
    calibration_method: str
    vocabulary_fingerprint: str
    vocabulary: FeatureVocabulary | None = None

    def __post_init__(self):
        if self.threshold < 0:
            raise DetectorError("threshold must be >= 0")


def classify(model: DetectorModel, vector: FeatureVector) -> str:
    """Low error means the malware-trained net knows this app: malicious iff
    the reconstruction error is at most the threshold (boundary inclusive)."""
    if vector.vocabulary_fingerprint != model.vocabulary_fingerprint:
        raise VocabularyMismatch(
            "vector fingerprint %s, model fingerprint %s"
            % (vector.vocabulary_fingerprint, model.vocabulary_fingerprint)
        )
    error = reconstruction_error(model.network, np.asarray(vector.bits, dtype=np.float64))
    return MALICIOUS if error <= model.threshold else BENIGN


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    split: str
    positive_class: str = MALICIOUS
    config: dict = field(default_factory=dict)

    @classmethod
    def from_counts(
        cls,
        tp: int,
        fp: int,
        tn: int,
        fn: int,
        split: str,
        positive_class: str = MALICIOUS,
        config: dict | None = None,
    ) -> "EvalReport":
        total = tp + fp + tn + fn
        accuracy = (tp + tn) / total if total else 0.0
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = (
            2.0 * precision * recall / (precision + recall)
            if precision + recall
            else 0.0
        )
        return cls(
            accuracy=accuracy,
            precision=precision,
            recall=recall,
            f1=f1,
            tp=tp,
            fp=fp,
            tn=tn,
            fn=fn,
            split=split,
            positive_class=positive_class,
            config=config or {},
        )


def evaluate(
    model: DetectorModel,
    test: LabeledDataset,
    positive_class: str = MALICIOUS,
    split_label: str = "",
    config: dict | None = None,
) -> EvalReport:
    if len(test) == 0:
        raise DetectorError("test set is empty")
    if test.vocabulary_fingerprint != model.vocabulary_fingerprint:
        raise VocabularyMismatch(
            "dataset fingerprint %s, model fingerprint %s"
            % (test.vocabulary_fingerprint, model.vocabulary_fingerprint)
        )
    errors = reconstruction_errors(model.network, test.matrix)
    predicted = np.where(errors <= model.threshold, MALICIOUS, BENIGN)
    tp = fp = tn = fn = 0
    for truth, guess in zip(test.labels, predicted):
        if truth == positive_class:
            if guess == positive_class:
                tp += 1
            else:
                fn += 1
        else:
            if guess == positive_class:
                fp += 1
            else:
                tn += 1
    return EvalReport.from_counts(
        tp, fp, tn, fn, split=split_label, positive_class=positive_class,
        config=config,
    )


def run_pipeline(
    data: LabeledDataset,
    train_fraction: float,
    seed: int,
    cfg: TrainConfig = TrainConfig(),
    calibration: str = "percentile",
    percentile: float = DEFAULT_PERCENTILE,
    benign_routing: str = ROUTING_MERGE,
    hidden_sizes: tuple[int, ...] = (200, 100, 100),
    activations: tuple[str, ...] = DEFAULT_ACTIVATIONS,
) -> tuple[DetectorModel, EvalReport, list[float]]:
    """split -> train on malicious only -> calibrate -> evaluate.

    The cell seed drives the split shuffle, the weight init and the batch
    shuffle, so one integer reproduces the whole cell. Benign records from
    the train partition never train the autoencoder; under the default
    routing they are merged into evaluation, the report names the mode used.
    """
    if benign_routing not in ROUTINGS:
        raise ValueError("unknown benign routing %r" % benign_routing)
    train_part, test_part = split(data, train_fraction, seed)
    malicious_rows = train_part.class_indices(MALICIOUS)
    if not malicious_rows:
        raise EmptyClass("no malicious records in the train partition")
    malicious_matrix = train_part.matrix[malicious_rows]

    dimension = data.dimension
    net = build_network(
        (dimension, *hidden_sizes, dimension),
        activations,
        seed=seed,
        init_scheme=cfg.init_scheme,
    )
    trained, curve = train(net, malicious_matrix, replace(cfg, shuffle_seed=seed))
    threshold = calibrate_threshold(
        trained, malicious_matrix, method=calibration, percentile=percentile
    )

    eval_set = test_part
    if benign_routing == ROUTING_MERGE:
        benign_train_rows = train_part.class_indices(BENIGN)
        if benign_train_rows:
            eval_set = test_part.concat(train_part.subset(benign_train_rows))

    calibration_text = (
        "percentile:%g" % percentile if calibration == "percentile" else calibration
    )
    model = DetectorModel(
        network=trained,
        threshold=threshold,
        calibration_method=calibration_text,
        vocabulary_fingerprint=data.vocabulary_fingerprint,
    )
    split_label = "%d%%-%d%%" % (
        round(train_fraction * 100),
        100 - round(train_fraction * 100),
    )
    report = evaluate(
        model,
        eval_set,
        split_label=split_label,
        config={
            "train_fraction": train_fraction,
            "seed": seed,
            "benign_routing": benign_routing,
            "calibration": calibration_text,
            "learning_rate": cfg.learning_rate,
            "epochs": cfg.epochs,
            "batch_size": cfg.batch_size,
            "init_scheme": cfg.init_scheme,
            "hidden_sizes": list(hidden_sizes),
            "activations": list(activations),
            "threshold": threshold,
            "final_loss": curve[-1] if curve else None,
            "n_train_malicious": len(malicious_rows),
            "n_eval": len(eval_set),
        },
    )
    return model, report, curve


def run_split_sweep(
    data: LabeledDataset,
    fractions,
    seeds,
    cfg: TrainConfig = TrainConfig(),
    failures: list[str] | None = None,
    curves: dict[str, list[float]] | None = None,
    **pipeline_kwargs,
) -> list[EvalReport]:
    """Full pipeline per fraction x seed; one failed cell never aborts the
    sweep (its error lands in `failures` when a sink is given). Loss curves
    land in `curves` keyed by "<fraction>-seed<seed>" when a sink is given."""
    reports: list[EvalReport] = []
    for fraction in fractions:
        for seed in seeds:
            try:
                _model, report, curve = run_pipeline(
                    data, fraction, seed, cfg, **pipeline_kwargs
                )
            except Exception as exc:  # recorded, not raised
                if failures is not None:
                    failures.append(
                        "fraction %g seed %d: %s" % (fraction, seed, exc)
                    )
                continue
            reports.append(report)
            if curves is not None:
                curves["%g-seed%d" % (fraction, seed)] = curve
    return reports


def summarize_sweep(reports) -> list[dict]:
    """Mean accuracy/F1 per split label, in first-seen order."""
    order: list[str] = []
    grouped: dict[str, list[EvalReport]] = {}
    for report in reports:
        if report.split not in grouped:
            order.append(report.split)
            grouped[report.split] = []
        grouped[report.split].append(report)
    rows = []
    for label in order:
        cell = grouped[label]
        rows.append(
            {
                "split": label,
                "accuracy": sum(r.accuracy for r in cell) / len(cell),
                "f1": sum(r.f1 for r in cell) / len(cell),
                "cells": len(cell),
            }
        )
    return rows


# Synthetic corpus profiles: ids listed here round to 1 in the class's base
# pattern, everything else rounds to 0.
_MALICIOUS_HIGH = frozenset(
    {
        "perm:SEND_SMS",
        "perm:READ_SMS",
        "perm:RECEIVE_SMS",
        "perm:READ_PHONE_STATE",
        "perm:CALL_PHONE",
        "perm:READ_CONTACTS",
        "perm:RECEIVE_BOOT_COMPLETED",
        "perm:INSTALL_PACKAGES",
        "perm:SYSTEM_ALERT_WINDOW",
        "perm:GET_TASKS",
        "perm:INTERNET",
        "perm:WRITE_EXTERNAL_STORAGE",
        "intent:BOOT_COMPLETED",
        "intent:SMS_RECEIVED",
        "intent:USER_PRESENT",
        "intent:MAIN",
        "intent:LAUNCHER",
        "api:telephony",
        "api:network-http",
        "api:dynamic-loading",
        "api:reflection",
        "api:runtime-exec",
        "api:crypto",
        "api:system-service",
        "cert:invalid",
        "asset:embedded-apk",
    }
)

_BENIGN_HIGH = frozenset(
    {
        "perm:INTERNET",
        "intent:MAIN",
        "intent:LAUNCHER",
        "api:network-http",
        "api:system-service",
    }
)


def _profile(vocab: FeatureVocabulary, high_ids: frozenset[str]) -> np.ndarray:
    return np.array(
        [0.9 if f.id in high_ids else 0.1 for f in vocab.features], dtype=np.float64
    )


def generate_synthetic_dataset(
    n_benign: int,
    n_malicious: int,
    profile_seed: int,
    noise: float,
    vocab: FeatureVocabulary | None = None,
) -> LabeledDataset:
    """Stand-in corpus: two Bernoulli bit-profiles with per-bit flip noise.

    With zero noise every record equals its profile's deterministic
    rounding; the per-feature Bernoulli parameter is therefore
    |rounded_base - noise|.
    """
    if n_benign < 1 or n_malicious < 1:
        raise ValueError("both class counts must be >= 1")
    if not 0.0 <= noise < 0.5:
        raise ValueError("noise must lie in [0, 0.5)")
    vocab = vocab or default_vocabulary()
    base_benign = (_profile(vocab, _BENIGN_HIGH) >= 0.5).astype(np.float64)
    base_malicious = (_profile(vocab, _MALICIOUS_HIGH) >= 0.5).astype(np.float64)
    rng = np.random.default_rng(profile_seed)

    def sample(base: np.ndarray, count: int) -> np.ndarray:
        flips = rng.random((count, base.size)) < noise
        return np.abs(base[np.newaxis, :] - flips.astype(np.float64))

    benign_rows = sample(base_benign, n_benign)
    malicious_rows = sample(base_malicious, n_malicious)
    app_ids = tuple(
        ["benign-%04d" % i for i in range(n_benign)]
        + ["malicious-%04d" % i for i in range(n_malicious)]
    )
    labels = tuple([BENIGN] * n_benign + [MALICIOUS] * n_malicious)
    return LabeledDataset(
        app_ids=app_ids,
        labels=labels,
        matrix=np.vstack([benign_rows, malicious_rows]),
        vocabulary_fingerprint=vocab.fingerprint,
    )


class ReconstructionDetector(BaseEstimator):
    """Autoencoder anomaly detector with the scikit-learn estimator API.

    fit expects malicious rows only; predict labels a row malicious when its
    reconstruction error is at most the calibrated threshold.
    """

    def __init__(
        self,
        hidden_sizes=(200, 100, 100),
        activations=DEFAULT_ACTIVATIONS,
        learning_rate=0.01,
        epochs=100,
        batch_size=32,
        seed=0,
        init_scheme="uniform-scaled",
        calibration="percentile",
        percentile=DEFAULT_PERCENTILE,
    ):
        self.hidden_sizes = hidden_sizes
        self.activations = activations
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.init_scheme = init_scheme
        self.calibration = calibration
        self.percentile = percentile

    def _validated(self, X) -> np.ndarray:
        matrix = np.asarray(X, dtype=np.float64)
        if matrix.ndim != 2:
            raise ValueError("expected a 2-d array of feature vectors")
        if not np.isfinite(matrix).all():
            raise ValueError("input contains non-finite values")
        return matrix

    def fit(self, X, y=None):
        matrix = self._validated(X)
        if matrix.shape[0] == 0:
            raise EmptyClass("fit needs at least one malicious vector")
        dimension = matrix.shape[1]
        cfg = TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            shuffle_seed=self.seed,
            init_scheme=self.init_scheme,
        )
        net = build_network(
            (dimension, *self.hidden_sizes, dimension),
            tuple(self.activations),
            seed=self.seed,
            init_scheme=self.init_scheme,
        )
        self.network_, self.loss_curve_ = train(net, matrix, cfg)
        self.threshold_ = calibrate_threshold(
            self.network_, matrix, method=self.calibration, percentile=self.percentile
        )
        self.n_features_in_ = dimension
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "network_"):
            raise NotFittedError("call fit before using the detector")

    def reconstruction_errors(self, X) -> np.ndarray:
        self._check_fitted()
        return reconstruction_errors(self.network_, self._validated(X))

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        return np.where(
            self.reconstruction_errors(X) <= self.threshold_, MALICIOUS, BENIGN
        )

    def score(self, X, y) -> float:
        """Accuracy against benign/malicious labels."""
        predicted = self.predict(X)
        truth = np.asarray(y)
        return float(np.mean(predicted == truth))

    def to_model(
        self, vocabulary_fingerprint: str = "", vocabulary=None
    ) -> DetectorModel:
        self._check_fitted()
        calibration_text = (
            "percentile:%g" % self.percentile
            if self.calibration == "percentile"
            else self.calibration
        )
        return DetectorModel(
            network=self.network_,
            threshold=self.threshold_,
            calibration_method=calibration_text,
            vocabulary_fingerprint=vocabulary_fingerprint,
            vocabulary=vocabulary,
        )


def detector_to_dict(model: DetectorModel, run_manifest: dict | None = None) -> dict:
    payload = {
        "format": "droidae-detector",
        "version": 1,
        "threshold": model.threshold,
        "calibration_method": model.calibration_method,
        "vocabulary_fingerprint": model.vocabulary_fingerprint,
        "parameter_count": model.network.parameter_count,
        "network": network_to_dict(model.network),
        "vocabulary": (
            vocabulary_to_dict(model.vocabulary) if model.vocabulary else None
        ),
    }
    if run_manifest is not None:
        payload["run_manifest"] = run_manifest
    return payload


def detector_from_dict(payload: dict) -> DetectorModel:
    if payload.get("format") != "droidae-detector":
        raise DetectorError("not a detector document")
    vocabulary = (
        vocabulary_from_dict(payload["vocabulary"])
        if payload.get("vocabulary")
        else None
    )
    return DetectorModel(
        network=network_from_dict(payload["network"]),
        threshold=float(payload["threshold"]),
        calibration_method=payload["calibration_method"],
        vocabulary_fingerprint=payload["vocabulary_fingerprint"],
        vocabulary=vocabulary,
    )


def save_detector(model: DetectorModel, path, run_manifest: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(detector_to_dict(model, run_manifest), handle, indent=1)
        handle.write("\n")


def load_detector(path) -> DetectorModel:
    with open(path, encoding="utf-8") as handle:
        return detector_from_dict(json.load(handle))


def report_to_dict(report: EvalReport) -> dict:
    return {
        "accuracy": report.accuracy,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "confusion": {
            "tp": report.tp,
            "fp": report.fp,
            "tn": report.tn,
            "fn": report.fn,
        },
        "split": report.split,
        "positive_class": report.positive_class,
        "config": report.config,
    }


def report_from_dict(payload: dict) -> EvalReport:
    confusion = payload["confusion"]
    return EvalReport(
        accuracy=payload["accuracy"],
        precision=payload["precision"],
        recall=payload["recall"],
        f1=payload["f1"],
        tp=confusion["tp"],
        fp=confusion["fp"],
        tn=confusion["tn"],
        fn=confusion["fn"],
        split=payload["split"],
        positive_class=payload["positive_class"],
        config=payload.get("config", {}),
    )
