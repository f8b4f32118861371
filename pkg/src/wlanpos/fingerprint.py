"""Fingerprinting positioning: radio map, multiclass SVM, accuracy metrics.

Features per measurement are the RSS in dBm and the magnitudes of the
recorded channel-estimate taps; scenarios select 1 (rss_only), 5
(taps_only) or 6 (rss_plus_taps) of them.  Features are min-max normalized
with parameters frozen from the training corpus.  Classification is a
one-vs-one soft-margin SVM (libsvm SMO via scikit-learn, KKT tolerance
1e-3) with majority voting, ties broken by summed decision values.
"""

import json
import warnings
from dataclasses import dataclass, field

import joblib
import numpy as np
from sklearn.neighbors import KNeighborsClassifier
from sklearn.svm import SVC

from . import engine

FEATURE_SETS = ("rss_only", "taps_only", "rss_plus_taps")


def feature_names_for(feature_set: str, n_taps: int = 5) -> list:
    tap_names = [f"tap{t}_mag" for t in range(1, n_taps + 1)]
    if feature_set == "rss_only":
        return ["rss"]
    if feature_set == "taps_only":
        return tap_names
    if feature_set == "rss_plus_taps":
        return ["rss"] + tap_names
    raise ValueError(f"unknown feature set {feature_set!r}")


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormParams:
    mins: np.ndarray
    maxs: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "NormParams":
        mins = features.min(axis=0)
        maxs = features.max(axis=0)
        degenerate = np.flatnonzero(maxs - mins <= 0)
        if degenerate.size:
            warnings.warn(
                f"degenerate feature range in columns {degenerate.tolist()}; "
                "mapping to 0.5", stacklevel=2)
        return cls(mins=mins, maxs=maxs)

    def apply(self, features: np.ndarray) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        span = self.maxs - self.mins
        out = np.empty_like(features)
        ok = span > 0
        out[:, ok] = (features[:, ok] - self.mins[ok]) / span[ok]
        out[:, ~ok] = 0.5
        return out


# ---------------------------------------------------------------------------
# Radio map
# ---------------------------------------------------------------------------

@dataclass
class RadioMap:
    rp_ids: np.ndarray
    features: np.ndarray               # raw, one row per measurement
    feature_names: list
    coords: dict                       # rp_id -> (x_m, y_m)
    norm: NormParams = None

    def __post_init__(self):
        if self.norm is None:
            self.norm = NormParams.fit(self.features)
        unknown = set(np.unique(self.rp_ids)) - set(self.coords)
        if unknown:
            raise ValueError(f"samples reference unknown RPs {sorted(unknown)}")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("non-finite feature values in radio map")

    @property
    def n_samples(self) -> int:
        return self.rp_ids.size

    def normalized(self) -> np.ndarray:
        return self.norm.apply(self.features)


def features_from_records(records, feature_set: str, n_taps: int = 5) -> np.ndarray:
    rows = []
    for rec in records:
        mags = np.abs(np.asarray(rec.taps)[:n_taps])
        if feature_set == "rss_only":
            rows.append([rec.rssi_dbm])
        elif feature_set == "taps_only":
            rows.append(mags.tolist())
        elif feature_set == "rss_plus_taps":
            rows.append([rec.rssi_dbm] + mags.tolist())
        else:
            raise ValueError(f"unknown feature set {feature_set!r}")
    return np.asarray(rows, dtype=np.float64)


def build_radio_map(measurement_files, grid, feature_set: str,
                    n_taps: int = 5) -> RadioMap:
    """Assemble a radio map from per-RP record files.

    measurement_files: mapping rp_id -> records TSV path; grid: mapping
    rp_id -> (x_m, y_m).  Normalization parameters are frozen over the
    whole corpus handed in.
    """
    ids, feats = [], []
    for rp_id, path in sorted(measurement_files.items()):
        if rp_id not in grid:
            raise ValueError(f"RP {rp_id} ({path}) missing from the grid manifest")
        records = engine.read_records(path)
        if not records:
            raise ValueError(f"no measurements in {path}")
        block = features_from_records(records, feature_set, n_taps)
        if not np.all(np.isfinite(block)):
            raise ValueError(f"non-finite feature in {path}")
        feats.append(block)
        ids.append(np.full(block.shape[0], rp_id, dtype=np.int64))
    features = np.vstack(feats)
    return RadioMap(rp_ids=np.concatenate(ids), features=features,
                    feature_names=feature_names_for(feature_set, n_taps),
                    coords={rp: tuple(xy) for rp, xy in grid.items()})


def select_features(rmap: RadioMap, feature_set: str) -> RadioMap:
    """Project a full rss_plus_taps map down to a scenario's columns."""
    wanted = feature_names_for(feature_set,
                               n_taps=sum(1 for n in rmap.feature_names
                                          if n.startswith("tap")))
    try:
        cols = [rmap.feature_names.index(name) for name in wanted]
    except ValueError as exc:
        raise ValueError(f"map lacks features for {feature_set!r}") from exc
    return RadioMap(rmap.rp_ids, rmap.features[:, cols], wanted, rmap.coords)


def split_train_test(rmap: RadioMap, n_train: int, n_test: int,
                     seed: int) -> tuple:
    """Deterministic per-RP random split.  The training map re-derives its
    normalization from the training rows only; the test map reuses it."""
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for rp in np.unique(rmap.rp_ids):
        rows = np.flatnonzero(rmap.rp_ids == rp)
        if rows.size < n_train + n_test:
            raise ValueError(
                f"RP {rp} has {rows.size} samples, needs {n_train + n_test}")
        perm = rng.permutation(rows.size)
        train_idx.append(rows[perm[:n_train]])
        test_idx.append(rows[perm[n_train:n_train + n_test]])
    train_idx = np.concatenate(train_idx)
    test_idx = np.concatenate(test_idx)
    train = RadioMap(rmap.rp_ids[train_idx], rmap.features[train_idx],
                     rmap.feature_names, rmap.coords)
    test = RadioMap(rmap.rp_ids[test_idx], rmap.features[test_idx],
                    rmap.feature_names, rmap.coords, norm=train.norm)
    return train, test


RADIOMAP_META_PREFIX = "# meta "


def write_radio_map(rmap: RadioMap, path) -> None:
    meta = {
        "feature_names": rmap.feature_names,
        "norm_min": rmap.norm.mins.tolist(),
        "norm_max": rmap.norm.maxs.tolist(),
    }
    with open(path, "w") as fh:
        fh.write(RADIOMAP_META_PREFIX + json.dumps(meta) + "\n")
        fh.write("\t".join(["rp_id", "x_m", "y_m"] + rmap.feature_names) + "\n")
        for rp, row in zip(rmap.rp_ids, rmap.features):
            x, y = rmap.coords[int(rp)]
            vals = [str(int(rp)), f"{x:.4f}", f"{y:.4f}"]
            vals += [f"{v:.10g}" for v in row]
            fh.write("\t".join(vals) + "\n")


def read_radio_map(path) -> RadioMap:
    with open(path) as fh:
        meta_line = fh.readline()
        if not meta_line.startswith(RADIOMAP_META_PREFIX):
            raise ValueError(f"{path}: missing radio-map metadata line")
        meta = json.loads(meta_line[len(RADIOMAP_META_PREFIX):])
        fh.readline()  # header
        ids, coords, rows = [], {}, []
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            rp = int(parts[0])
            ids.append(rp)
            coords[rp] = (float(parts[1]), float(parts[2]))
            rows.append([float(v) for v in parts[3:]])
    return RadioMap(
        rp_ids=np.asarray(ids, dtype=np.int64),
        features=np.asarray(rows, dtype=np.float64),
        feature_names=list(meta["feature_names"]),
        coords=coords,
        norm=NormParams(np.asarray(meta["norm_min"]), np.asarray(meta["norm_max"])),
    )


# ---------------------------------------------------------------------------
# SVM classifier
# ---------------------------------------------------------------------------

@dataclass
class SvmModel:
    clf: SVC
    kernel_spec: dict
    norm: NormParams
    feature_names: list
    coords: dict
    split_spec: dict = field(default_factory=dict)

    @property
    def classes(self) -> np.ndarray:
        return self.clf.classes_

    @property
    def n_pair_classifiers(self) -> int:
        return int(np.asarray(self.clf.intercept_).size)


def svm_train(train_map: RadioMap, kernel: str = "rbf", C: float = 10.0,
              gamma="scale", tol: float = 1e-3) -> SvmModel:
    """One-vs-one soft-margin SVM on normalized training features."""
    labels = train_map.rp_ids
    if np.unique(labels).size < 2:
        raise ValueError("training needs at least two classes")
    X = train_map.normalized()
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite training features")
    clf = SVC(kernel=kernel, C=C, gamma=gamma, tol=tol, cache_size=256)
    clf.fit(X, labels)
    resolved_gamma = float(clf._gamma) if kernel == "rbf" else None
    spec = {"kernel": kernel, "C": C, "gamma": resolved_gamma, "tol": tol,
            "multiclass": "one-vs-one", "n_features": X.shape[1]}
    return SvmModel(clf=clf, kernel_spec=spec, norm=train_map.norm,
                    feature_names=list(train_map.feature_names),
                    coords=dict(train_map.coords))


def svm_predict(model: SvmModel, features) -> np.ndarray:
    """Predict RP ids for raw (unnormalized) feature rows."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[1] != len(model.feature_names):
        raise ValueError(
            f"feature dimension {features.shape[1]} != model dimension "
            f"{len(model.feature_names)}")
    return model.clf.predict(model.norm.apply(features))


def save_model(model: SvmModel, path) -> None:
    joblib.dump(model, path)


def load_model(path) -> SvmModel:
    return joblib.load(path)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def percentile_interp(values, q: float) -> float:
    """q-quantile by linear interpolation of the empirical CDF, whose
    corners are (x_(i), i/n) over the sorted values."""
    x = np.sort(np.asarray(values, dtype=np.float64))
    n = x.size
    if n == 0:
        raise ValueError("no values")
    pos = q * n
    if pos <= 1.0:
        return float(x[0])
    if pos >= n:
        return float(x[-1])
    k = int(np.floor(pos))
    frac = pos - k
    if frac == 0.0:
        return float(x[k - 1])
    return float(x[k - 1] + frac * (x[k] - x[k - 1]))


@dataclass
class EvalReport:
    prediction_accuracy: float          # percent
    distance_errors: np.ndarray         # meters, one per test sample
    mean_m: float
    std_m: float
    p50_m: float
    p90_m: float
    metadata: dict = field(default_factory=dict)

    def cdf(self) -> tuple:
        x = np.sort(self.distance_errors)
        return x, np.arange(1, x.size + 1) / x.size

    def save_cdf(self, path) -> None:
        x, f = self.cdf()
        with open(path, "w") as fh:
            fh.write("error_m\tcumulative_fraction\n")
            for xi, fi in zip(x, f):
                fh.write(f"{xi:.6f}\t{fi:.8f}\n")

    def format_table(self) -> str:
        lines = [
            f"prediction accuracy : {self.prediction_accuracy:.2f} %",
            f"mean distance error : {self.mean_m:.4f} m",
            f"std distance error  : {self.std_m:.4f} m",
            f"50th percentile     : {self.p50_m:.4f} m",
            f"90th percentile     : {self.p90_m:.4f} m",
            f"test samples        : {self.distance_errors.size}",
        ]
        for key, val in sorted(self.metadata.items()):
            lines.append(f"{key:<20}: {val}")
        return "\n".join(lines)


def evaluate_predictions(y_true, y_pred, coords) -> EvalReport:
    """Accuracy and distance-error statistics for predicted RP labels."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0:
        raise ValueError("empty test set")
    xy_true = np.array([coords[int(rp)] for rp in y_true])
    xy_pred = np.array([coords[int(rp)] for rp in y_pred])
    errors = np.hypot(xy_true[:, 0] - xy_pred[:, 0],
                      xy_true[:, 1] - xy_pred[:, 1])
    accuracy = 100.0 * float(np.mean(y_true == y_pred))
    return EvalReport(
        prediction_accuracy=accuracy,
        distance_errors=errors,
        mean_m=float(np.mean(errors)),
        std_m=float(np.std(errors)),
        p50_m=percentile_interp(errors, 0.5),
        p90_m=percentile_interp(errors, 0.9),
    )


def evaluate(model: SvmModel, test_map: RadioMap) -> EvalReport:
    pred = svm_predict(model, test_map.features)
    report = evaluate_predictions(test_map.rp_ids, pred, model.coords)
    report.metadata.update({f"svm_{k}": v for k, v in model.kernel_spec.items()})
    return report


def knn_baseline(train_map: RadioMap, test_map: RadioMap, k: int = 1) -> EvalReport:
    """Euclidean KNN majority vote on the same normalized features."""
    clf = KNeighborsClassifier(n_neighbors=k)
    clf.fit(train_map.normalized(), train_map.rp_ids)
    pred = clf.predict(train_map.norm.apply(test_map.features))
    report = evaluate_predictions(test_map.rp_ids, pred, train_map.coords)
    report.metadata["knn_k"] = k
    return report
