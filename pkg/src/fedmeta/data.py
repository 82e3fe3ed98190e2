"""Dataset ingestion, class splits, hospital sharding, and synthetic data.

The CSV path targets the UCI Arrhythmia layout: comma-separated numeric
fields, "?" for missing values, the class label in a configurable column.
Loading imputes missing values with the per-feature median, standardizes
every feature to zero mean / unit variance over the whole file, and buckets
rows by class.  A keep-list selects classes and renumbers them 1..n in list
order, so the keep-list ordering defines the working class codes.

Synthetic datasets place one isotropic Gaussian cluster per class, centers
drawn on a sphere of radius ``class_separation`` (so pairwise center
distances fall in [separation, 2*separation] and tasks vary in difficulty),
and are passed through the same standardization as loaded data.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, EpisodeInfeasibleError
from .seeds import derive_rng

# Class-size profile of the nine-class arrhythmia table (largest to smallest);
# reused as the default synthetic profile.
ARRHYTHMIA_CLASS_SIZES = (245, 50, 44, 25, 22, 15, 15, 13, 9)
# Original UCI class codes in that size order; renumbered 1..9 by load order.
ARRHYTHMIA_KEEP_CLASSES = (1, 10, 2, 6, 16, 3, 4, 5, 9)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray          # (rows, dim) f64, standardized
    labels: np.ndarray            # (rows,) int64 original class ids
    class_index: dict             # class id -> row index array
    standardization: tuple = None  # (mean, std_used) applied to features

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def rows(self):
        return self.features.shape[0]

    def classes(self):
        return sorted(self.class_index)

    def class_size(self, cid):
        return len(self.class_index[cid])

    def class_rows(self, cid):
        return self.features[self.class_index[cid]]

    def subset(self, class_ids, row_map=None):
        """Dataset restricted to the given classes (rows copied).

        row_map optionally restricts each class to a subset of its rows,
        as {class id: row index array into the full dataset}.
        """
        class_ids = list(class_ids)
        for cid in class_ids:
            if cid not in self.class_index:
                raise KeyError(f"class {cid} not present in dataset")
        idx = np.concatenate([
            np.asarray(row_map[cid] if row_map else self.class_index[cid], dtype=np.int64)
            for cid in class_ids
        ])
        feats = self.features[idx]
        labels = self.labels[idx]
        return build_dataset(feats, labels, self.standardization)


def build_dataset(features, labels, standardization=None) -> LabeledDataset:
    features = np.ascontiguousarray(features, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    class_index = {
        int(c): np.flatnonzero(labels == c) for c in np.unique(labels)
    }
    return LabeledDataset(features, labels, class_index, standardization)


@dataclass(frozen=True)
class SplitSpec:
    common_classes: tuple
    rare_classes: tuple
    hospital_shards: tuple  # per-hospital tuples of class ids

    def __post_init__(self):
        object.__setattr__(self, "common_classes", tuple(self.common_classes))
        object.__setattr__(self, "rare_classes", tuple(self.rare_classes))
        object.__setattr__(self, "hospital_shards",
                           tuple(tuple(s) for s in self.hospital_shards))
        if set(self.common_classes) & set(self.rare_classes):
            raise DataFormatError("common and rare class sets overlap")
        for shard in self.hospital_shards:
            if not set(shard) <= set(self.common_classes):
                raise DataFormatError(f"hospital shard {shard} not within common classes")


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 9
    dim: int = 24
    samples_per_class: tuple = ARRHYTHMIA_CLASS_SIZES
    cluster_spread: float = 1.0
    class_separation: float = 3.0
    seed: int = 2024

    def __post_init__(self):
        object.__setattr__(self, "samples_per_class",
                           tuple(int(s) for s in self.samples_per_class))
        if len(self.samples_per_class) != self.n_classes:
            raise DataFormatError(
                f"samples_per_class has {len(self.samples_per_class)} entries "
                f"for {self.n_classes} classes"
            )
        if self.cluster_spread <= 0 or self.class_separation <= 0:
            raise DataFormatError("cluster_spread and class_separation must be > 0")


def _standardize(features):
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    scale = np.where(std > 0.0, std, 1.0)
    return (features - mean) / scale, (mean, scale)


def load_csv(path, label_column=-1, missing_marker="?", keep_classes=None) -> LabeledDataset:
    """Load a numeric CSV with a class column and optional missing markers.

    keep_classes, when given, drops rows of other classes and renumbers the
    kept classes 1..len(keep_classes) in list order.
    """
    rows = []
    labels = []
    with open(path, newline="") as f:
        for lineno, fields in enumerate(csv.reader(f), start=1):
            if not fields:
                continue
            col = label_column if label_column >= 0 else len(fields) + label_column
            try:
                label = int(float(fields[col]))
                feats = [
                    np.nan if v.strip() == missing_marker else float(v)
                    for i, v in enumerate(fields) if i != col
                ]
            except (ValueError, IndexError) as e:
                raise DataFormatError(f"{path}: line {lineno}: {e}") from None
            rows.append(feats)
            labels.append(label)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DataFormatError(f"{path}: inconsistent column counts {sorted(widths)}")

    features = np.asarray(rows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)

    if keep_classes is not None:
        keep_classes = [int(c) for c in keep_classes]
        remap = {orig: new for new, orig in enumerate(keep_classes, start=1)}
        mask = np.isin(labels, keep_classes)
        features, labels = features[mask], labels[mask]
        for orig in keep_classes:
            if not (labels == orig).any():
                raise DataFormatError(f"{path}: keep-listed class {orig} has no rows")
        labels = np.asarray([remap[int(l)] for l in labels], dtype=np.int64)
    if features.shape[0] == 0:
        raise DataFormatError(f"{path}: no rows left after class filtering")

    # median imputation, then global standardization
    for j in range(features.shape[1]):
        col = features[:, j]
        missing = np.isnan(col)
        if missing.any():
            present = col[~missing]
            col[missing] = np.median(present) if present.size else 0.0
    features, standardization = _standardize(features)
    return build_dataset(features, labels, standardization)


def split(ds: LabeledDataset, common, rare):
    """Disjoint (train_pool, test_pool) keyed by class membership."""
    common, rare = list(common), list(rare)
    if not rare:
        raise DataFormatError("rare class list is empty; no test pool")
    if not common:
        raise DataFormatError("common class list is empty; no train pool")
    if set(common) & set(rare):
        raise DataFormatError("common and rare class lists overlap")
    return ds.subset(common), ds.subset(rare)


def shard_hospitals(train_pool: LabeledDataset, n_hospitals, classes_per_hospital,
                    rng, rare_classes=()) -> SplitSpec:
    """Uniformly random class subset per hospital (subsets may overlap)."""
    common = train_pool.classes()
    if classes_per_hospital > len(common):
        raise DataFormatError(
            f"classes_per_hospital {classes_per_hospital} exceeds {len(common)} common classes"
        )
    shards = []
    for _ in range(n_hospitals):
        pick = rng.choice(np.asarray(common, dtype=np.int64),
                          size=classes_per_hospital, replace=False)
        shards.append(tuple(sorted(int(c) for c in pick)))
    return SplitSpec(tuple(common), tuple(rare_classes), tuple(shards))


def build_client_pools(train_pool: LabeledDataset, spec: SplitSpec,
                       sample_split=False, rng=None):
    """Materialize one dataset per hospital from its class shard.

    Default: every hospital holding a class gets all of its rows.  With
    sample_split, hospitals sharing a class divide its rows evenly (disjoint),
    shuffled by rng.
    """
    if not sample_split:
        return [train_pool.subset(shard) for shard in spec.hospital_shards]
    if rng is None:
        raise ValueError("sample_split mode needs an rng")
    holders = {}
    for h, shard in enumerate(spec.hospital_shards):
        for cid in shard:
            holders.setdefault(cid, []).append(h)
    per_hospital = [dict() for _ in spec.hospital_shards]
    for cid, hs in sorted(holders.items()):
        idx = train_pool.class_index[cid].copy()
        rng.shuffle(idx)
        for part, h in enumerate(hs):
            per_hospital[h][cid] = np.sort(idx[part::len(hs)])
    return [
        train_pool.subset(sorted(shard), row_map=per_hospital[h])
        for h, shard in enumerate(spec.hospital_shards)
    ]


def gen_synthetic(spec: SyntheticSpec) -> LabeledDataset:
    """Gaussian-cluster dataset with Table-like class sizes; deterministic per seed."""
    rng = derive_rng(spec.seed)
    centers = []
    for c in range(spec.n_classes):
        for attempt in range(1000):
            direction = rng.normal(size=spec.dim)
            cand = spec.class_separation * direction / np.linalg.norm(direction)
            if all(np.linalg.norm(cand - other) >= spec.class_separation
                   for other in centers):
                centers.append(cand)
                break
        else:
            raise EpisodeInfeasibleError(
                f"could not place class {c + 1} center at separation "
                f"{spec.class_separation} in dim {spec.dim}"
            )
    feats, labels = [], []
    for c, size in enumerate(spec.samples_per_class):
        feats.append(centers[c] + spec.cluster_spread * rng.normal(size=(size, spec.dim)))
        labels.extend([c + 1] * size)
    features = np.concatenate(feats, axis=0)
    features, standardization = _standardize(features)
    return build_dataset(features, np.asarray(labels, dtype=np.int64), standardization)


def write_csv(ds: LabeledDataset, path):
    """Emit the CSV layout load_csv reads (features..., label last)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        for row, label in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [int(label)])
