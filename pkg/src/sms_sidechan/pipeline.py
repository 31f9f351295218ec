"""Classification experiments and evaluation harnesses.

``run_experiment`` is the standard closed-world run: signatures are grouped
into classes, optionally capped per class by seeded down-sampling, and
scored with stratified k-fold cross-validation. The other harnesses reuse
the same configuration: step-wise (hierarchical) classification of an
unknown victim, accuracy over days after training, accuracy per
time-of-day and day-of-week slice, and accuracy versus distance.
"""

from __future__ import annotations

import fnmatch
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import stats
from sklearn.base import clone

from .exceptions import (
    ClassTooSmall, GroupEmpty, InsufficientPoints, LabelMismatch, MissingStageModel, SingleClass,
)
from .features import (
    FeatureVector,
    OutlierPolicy,
    build_signatures,
    feature_matrix,
    format_feature_csv,
    read_features,
    remove_outliers,
)
from .fileio import canonical_json
from .learn import MLPClassifier, cross_validate, grid_search
from .simulator import Scenario, load_scenario, simulate_campaign
from .trace import Selector, read_trace, utc_hour, utc_weekday

logger = logging.getLogger(__name__)

HOUR_BANDS = ((0, 6), (6, 12), (12, 18), (18, 24))
WEEKDAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")


@dataclass
class ExperimentConfig:
    """One classification experiment.

    ``groups`` maps a class name to label patterns (shell wildcards, e.g.
    ``{"Domestic": ["AE-*"], "Overseas": ["Int-*"]}``); without it every
    distinct label is its own class. ``mlp`` holds estimator parameters,
    ``grid`` an optional parameter grid searched before the final run.
    ``repetitions`` re-runs the down-sampling and cross-validation with
    seeds ``seed + 1, seed + 2, ...`` and reports every run's accuracy.
    """

    name: str = "experiment"
    trace: str | None = None
    scenario: str | dict | None = None
    features: str | None = None
    label_field: str = "location"
    groups: dict[str, list[str]] | None = None
    selector: dict | None = None
    samples_per_class: int | None = None
    repetitions: int = 1
    k: int = 10
    mlp: dict = field(default_factory=dict)
    grid: dict | None = None
    seed: int = 0
    slices: list[str] = field(default_factory=list)
    probability_matrix: bool = False
    outliers: str = "none"
    standardize: bool = True
    n_jobs: int = 1

    def __post_init__(self) -> None:
        if self.label_field not in ("location", "operator", "device"):
            raise ValueError(f"label_field must be location, operator or device, not {self.label_field!r}")
        if self.groups is not None and len(self.groups) < 2:
            raise ValueError("at least two groups are needed")
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.samples_per_class is not None and self.samples_per_class < self.k:
            raise ValueError("samples_per_class must be >= k")
        for s in self.slices:
            if s not in ("hours", "days"):
                raise ValueError(f"unknown slicing {s!r}; use 'hours' or 'days'")
        OutlierPolicy.parse(self.outliers)

    @classmethod
    def from_json(cls, obj: Mapping) -> ExperimentConfig:
        known = set(cls.__dataclass_fields__)
        unknown = [k for k in obj if k not in known and not k.startswith("_")]
        if unknown:
            raise ValueError(f"unknown experiment config keys: {unknown}")
        return cls(**{k: v for k, v in obj.items() if k in known})

    def to_json(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        text = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"), default=list)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def estimator(self) -> MLPClassifier:
        params = {"random_state": self.seed, "standardize": self.standardize, **self.mlp}
        if "hidden_layer_sizes" in params:
            params["hidden_layer_sizes"] = tuple(params["hidden_layer_sizes"])
        return MLPClassifier(**params)

    def build_selector(self) -> Selector | None:
        if not self.selector:
            return None
        sel = dict(self.selector)
        if "hours" in sel:
            sel["hours"] = tuple(tuple(h) for h in sel["hours"])
        if "date_range" in sel:
            sel["date_range"] = tuple(sel["date_range"])
        return Selector(**sel)


def load_vectors(config: ExperimentConfig) -> list[FeatureVector]:
    """Signatures from the configured feature CSV, trace CSV or scenario."""
    if config.features:
        return read_features(config.features)
    if config.trace:
        return build_signatures(read_trace(config.trace))
    if config.scenario is not None:
        sc = config.scenario
        scenario = load_scenario(sc) if isinstance(sc, str) else Scenario.from_json(sc)
        return build_signatures(simulate_campaign(scenario))
    raise ValueError("experiment config names no data source (features, trace or scenario)")


def dataset_digest(vectors: Sequence[FeatureVector]) -> str:
    return hashlib.sha256(format_feature_csv(vectors).encode("utf-8")).hexdigest()


def assign_classes(
    vectors: Sequence[FeatureVector], label_field: str, groups: Mapping[str, Sequence[str]] | None
) -> np.ndarray:
    """Class name per vector, or ``None`` when no group claims its label.

    A label matched by several groups goes to the first one listed.
    """
    out = np.empty(len(vectors), dtype=object)
    for i, v in enumerate(vectors):
        label = getattr(v, label_field)
        if groups is None:
            out[i] = label
            continue
        out[i] = None
        for name, patterns in groups.items():
            if any(fnmatch.fnmatchcase(label, p) for p in patterns):
                out[i] = name
                break
    return out


def downsample(classes: np.ndarray, cap: int | None, seed: int) -> np.ndarray:
    """Sorted indices keeping at most ``cap`` random members of each class."""
    keep = []
    rng = np.random.default_rng(seed)
    for c in sorted(set(classes.tolist())):
        members = np.flatnonzero(classes == c)
        if cap is not None and len(members) > cap:
            members = rng.choice(members, size=cap, replace=False)
        keep.append(members)
    return np.sort(np.concatenate(keep)) if keep else np.array([], dtype=int)


@dataclass
class PreparedData:
    vectors: list[FeatureVector]
    X: np.ndarray
    y: np.ndarray
    available: dict[str, int]


def prepare(vectors: Sequence[FeatureVector], config: ExperimentConfig) -> PreparedData:
    """Filter, outlier-clean, group and cap the signatures of an experiment."""
    vectors = list(vectors)
    sel = config.build_selector()
    if sel is not None:
        vectors = [v for v in vectors if sel.matches(v)]
    vectors, _ = remove_outliers(vectors, config.outliers)
    classes = assign_classes(vectors, config.label_field, config.groups)
    mask = np.array([c is not None for c in classes], dtype=bool)
    vectors = [v for v, m in zip(vectors, mask) if m]
    classes = classes[mask]
    available = {}
    names = list(config.groups) if config.groups else sorted(set(classes.tolist()))
    for name in names:
        available[name] = int(np.sum(classes == name))
        if available[name] == 0:
            raise GroupEmpty(name)
    if len(available) < 2:
        raise GroupEmpty("at least two nonempty classes are needed")
    keep = downsample(classes, config.samples_per_class, config.seed)
    vectors = [vectors[i] for i in keep]
    return PreparedData(vectors, feature_matrix(vectors), classes[keep].astype(str), available)


@dataclass
class EvaluationReport:
    name: str
    classes: list[str]
    class_counts: dict[str, int]
    available_counts: dict[str, int]
    fold_accuracies: list[float]
    mean_accuracy: float
    confusion: list[list[int]]
    config_digest: str
    dataset_digest: str
    seed: int
    k: int
    data_span_ms: list[int] | None = None
    slices: dict | None = None
    probability_matrix: list[list[float]] | None = None
    model_params: dict | None = None
    grid_scores: list[dict] | None = None
    repetition_accuracies: list[float] | None = None

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return canonical_json(self.to_json())


def run_experiment(
    config: ExperimentConfig, vectors: Sequence[FeatureVector] | None = None
) -> EvaluationReport:
    if vectors is None:
        vectors = load_vectors(config)
    data = prepare(vectors, config)
    estimator = config.estimator()
    grid_scores = None
    if config.grid:
        gr = grid_search(estimator, data.X, data.y, config.grid, k=config.k, seed=config.seed, n_jobs=config.n_jobs)
        estimator.set_params(**gr.best_params)
        grid_scores = gr.table
    cv = cross_validate(estimator, data.X, data.y, k=config.k, seed=config.seed, n_jobs=config.n_jobs)
    classes = [str(c) for c in cv.classes]
    t = [v.t_tx for v in data.vectors]
    report = EvaluationReport(
        name=config.name,
        classes=classes,
        class_counts={c: int(np.sum(data.y == c)) for c in classes},
        available_counts=data.available,
        fold_accuracies=cv.fold_accuracies,
        mean_accuracy=cv.accuracy,
        confusion=cv.confusion.tolist(),
        config_digest=config.digest(),
        dataset_digest=dataset_digest(list(vectors)),
        seed=config.seed,
        k=config.k,
        data_span_ms=[min(t), max(t)] if t else None,
        model_params=_jsonable_params(estimator.get_params()),
        grid_scores=grid_scores,
    )
    if config.repetitions > 1:
        accs = [cv.accuracy]
        for r in range(1, config.repetitions):
            rep_cfg = replace(config, seed=config.seed + r)
            rep_data = prepare(vectors, rep_cfg)
            est = clone(estimator).set_params(random_state=rep_cfg.seed)
            accs.append(cross_validate(est, rep_data.X, rep_data.y, k=config.k, seed=rep_cfg.seed,
                                       n_jobs=config.n_jobs).accuracy)
        report.repetition_accuracies = accs
    if config.probability_matrix:
        report.probability_matrix = cv.probability_matrix().tolist()
    if config.slices:
        report.slices = time_slice_analysis(data.vectors, config, kinds=config.slices, prepared=data)
    logger.info("%s: accuracy %.4f over %d samples", config.name, report.mean_accuracy, len(data.y))
    return report


def _jsonable_params(params: dict) -> dict:
    out = dict(params)
    out["hidden_layer_sizes"] = list(out["hidden_layer_sizes"])
    return out


def train_model(vectors: Sequence[FeatureVector], config: ExperimentConfig) -> MLPClassifier:
    """Fit one model on all prepared signatures (no cross-validation)."""
    data = prepare(vectors, config)
    return config.estimator().fit(data.X, data.y)


# -- step-wise classification --------------------------------------------------


@dataclass
class Stage:
    """One level of the location hierarchy.

    ``children`` maps a class this stage can predict to the stage that
    refines it; classes without a child end the descent.
    """

    name: str
    model: MLPClassifier | None = None
    children: dict[str, Stage] = field(default_factory=dict)


@dataclass
class HierarchyPlan:
    root: Stage

    def stages(self) -> list[Stage]:
        out, todo = [], [self.root]
        while todo:
            s = todo.pop(0)
            out.append(s)
            todo.extend(s.children.values())
        return out


@dataclass
class StageDecision:
    stage: str
    winner: str
    vote_shares: dict[str, float]
    mean_probabilities: dict[str, float]


def stage_vote(model: MLPClassifier, X: np.ndarray) -> tuple[str, dict[str, float], dict[str, float]]:
    """Majority vote of per-signature predictions.

    Ties go to the higher mean probability, then to the lower class index.
    """
    proba = model.predict_proba(X)
    votes = np.bincount(np.argmax(proba, axis=1), minlength=len(model.classes_))
    means = proba.mean(axis=0)
    tied = np.flatnonzero(votes == votes.max())
    win = int(tied[np.argmax(means[tied])])
    classes = [str(c) for c in model.classes_]
    shares = {c: float(v) / len(X) for c, v in zip(classes, votes)}
    return classes[win], shares, {c: float(m) for c, m in zip(classes, means)}


def hierarchical_classify(plan: HierarchyPlan, X) -> list[StageDecision]:
    """Descend the plan with one victim epoch of signatures ``X``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    path = []
    stage: Stage | None = plan.root
    while stage is not None:
        if stage.model is None:
            raise MissingStageModel(f"stage {stage.name!r} has no trained model")
        winner, shares, means = stage_vote(stage.model, X)
        path.append(StageDecision(stage.name, winner, shares, means))
        stage = stage.children.get(winner)
    return path


def train_stage(
    name: str, vectors: Sequence[FeatureVector], config: ExperimentConfig, children: dict | None = None
) -> Stage:
    return Stage(name, train_model(vectors, config), dict(children or {}))


# -- temporal stability -----------------------------------------------------


def temporal_stability(
    baseline: Sequence[FeatureVector],
    later: Sequence[tuple[int, Sequence[FeatureVector]]],
    config: ExperimentConfig,
) -> list[tuple[int, float]]:
    """Train once on ``baseline``; accuracy on each ``(day, vectors)`` set."""
    train = prepare(baseline, config)
    model = config.estimator().fit(train.X, train.y)
    known = set(str(c) for c in model.classes_)
    series = []
    for day, vectors in later:
        test_cfg = ExperimentConfig(**{**config.to_json(), "samples_per_class": None})
        data = prepare(vectors, test_cfg)
        extra = set(data.y.tolist()) - known
        if extra:
            raise LabelMismatch(f"day {day}: labels {sorted(extra)} not seen in training")
        acc = float(np.mean(model.predict(data.X).astype(str) == data.y))
        series.append((int(day), acc))
    return series


def spearman(x, y) -> float:
    """Spearman rank correlation; 0 when either side has no variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0
    return float(stats.spearmanr(x, y).statistic)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0
    return float(stats.pearsonr(x, y).statistic)


# -- time slices -------------------------------------------------------------


def _slice_defs(kind: str):
    if kind == "hours":
        return [(f"{a:02d}-{b - 1:02d}", lambda v, a=a, b=b: a <= utc_hour(v.t_tx) < b) for a, b in HOUR_BANDS]
    if kind == "days":
        return [(name, lambda v, d=d: utc_weekday(v.t_tx) == d) for d, name in enumerate(WEEKDAYS)]
    raise ValueError(f"unknown slicing {kind!r}")


def time_slice_analysis(
    vectors: Sequence[FeatureVector],
    config: ExperimentConfig,
    kinds: Sequence[str] = ("hours", "days"),
    prepared: PreparedData | None = None,
) -> dict[str, list[dict]]:
    """Hold out each time slice in turn: train on the rest, test on the slice.

    Every slice is reported; empty ones carry ``skipped: true`` and no
    accuracy. A slice whose complement holds fewer than two classes is
    scored by k-fold inside the slice instead (``method`` says which).
    """
    data = prepared or prepare(vectors, config)
    out: dict[str, list[dict]] = {}
    for kind in kinds:
        rows = []
        for name, pred in _slice_defs(kind):
            in_slice = np.array([pred(v) for v in data.vectors], dtype=bool)
            row = {"slice": name, "n_test": int(in_slice.sum()), "n_train": int((~in_slice).sum())}
            train_classes = set(data.y[~in_slice].tolist())
            if row["n_test"] == 0:
                row.update(skipped=True, method=None, accuracy=None)
            elif len(train_classes) >= 2:
                model = config.estimator().fit(data.X[~in_slice], data.y[~in_slice])
                acc = float(np.mean(model.predict(data.X[in_slice]).astype(str) == data.y[in_slice]))
                row.update(skipped=False, method="holdout", accuracy=acc)
            else:
                # nothing left to train on: fall back to k-fold inside the slice
                try:
                    cv = cross_validate(config.estimator(), data.X[in_slice], data.y[in_slice],
                                        k=config.k, seed=config.seed, n_jobs=config.n_jobs)
                    row.update(skipped=False, method="within_slice_cv", accuracy=cv.accuracy)
                except (ClassTooSmall, SingleClass):
                    row.update(skipped=True, method=None, accuracy=None)
            rows.append(row)
        out[kind] = rows
    return out


# -- distances -----------------------------------------------------------------


@dataclass
class DistancePoint:
    pair: str
    accuracy: float
    receiver_distance_km: float
    sender_distance_km: float


def distance_analysis(points: Sequence[DistancePoint]) -> dict:
    """Correlate pairwise accuracy with receiver separation and sender distance."""
    if len(points) < 3:
        raise InsufficientPoints(f"need at least 3 pairwise experiments, got {len(points)}")
    acc = [p.accuracy for p in points]
    out = {"n": len(points), "points": [asdict(p) for p in points]}
    for key, attr in (("receiver", "receiver_distance_km"), ("sender", "sender_distance_km")):
        d = [getattr(p, attr) for p in points]
        degenerate = np.ptp(acc) == 0 or np.ptp(d) == 0
        out[key] = {
            "pearson": pearson(d, acc),
            "spearman": spearman(d, acc),
            "undefined_variance": bool(degenerate),
        }
    return out


def pairwise_distance_study(
    vectors: Sequence[FeatureVector],
    coordinates: Mapping[str, Sequence[float]],
    sender: Sequence[float],
    config: ExperimentConfig,
) -> dict:
    """Run a two-location experiment for every pair of locations with coordinates.

    Coordinates are planar kilometres; the sender distance of a pair is the
    mean of its two sender-receiver distances.
    """
    locs = sorted(loc for loc in coordinates if any(v.location == loc for v in vectors))
    points = []
    for i, a in enumerate(locs):
        for b in locs[i + 1:]:
            cfg = ExperimentConfig(**{
                **config.to_json(), "name": f"{a}|{b}", "label_field": "location",
                "groups": {a: [a], b: [b]}, "slices": [], "grid": None,
            })
            rep = run_experiment(cfg, vectors)
            pa, pb, ps = (np.asarray(coordinates[a], float), np.asarray(coordinates[b], float),
                          np.asarray(sender, float))
            points.append(DistancePoint(
                f"{a}|{b}", rep.mean_accuracy,
                float(np.linalg.norm(pa - pb)),
                float((np.linalg.norm(pa - ps) + np.linalg.norm(pb - ps)) / 2),
            ))
    return distance_analysis(points)
