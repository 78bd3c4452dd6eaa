"""Dataset container, CSV ingestion recipes, splitting, and serialization.

The interchange format between the synthetic generator, the bias
injectors, and the experiment harness is a plain CSV with one header
line ``feature_0,...,feature_{d-1},y,a[,z]`` and one row per sample.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd


class IngestionError(ValueError):
    """Raised when a source file or its declared columns cannot be used."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable columnar dataset: features X, labels y in {-1,+1}, groups a in {0,1}.

    z, when present, carries the latent clean labels alongside the observed
    ones so simulation studies can evaluate against the unbiased truth.
    """

    features: np.ndarray
    y: np.ndarray
    a: np.ndarray
    z: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=float))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=int))
        object.__setattr__(self, "a", np.asarray(self.a, dtype=int))
        if self.z is not None:
            object.__setattr__(self, "z", np.asarray(self.z, dtype=int))
        n = self.features.shape[0]
        if self.features.ndim != 2 or self.features.shape[1] < 1:
            raise ValueError("features must be an N x d matrix with d >= 1")
        if self.y.shape != (n,) or self.a.shape != (n,):
            raise ValueError("y and a must have one entry per row")
        if not np.isin(self.y, (-1, 1)).all():
            raise ValueError("labels must lie in {-1,+1}")
        if not np.isin(self.a, (0, 1)).all():
            raise ValueError("group ids must lie in {0,1}")
        if self.z is not None:
            if self.z.shape != (n,):
                raise ValueError("z must have one entry per row")
            if not np.isin(self.z, (-1, 1)).all():
                raise ValueError("clean labels must lie in {-1,+1}")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx: np.ndarray, note: str | None = None) -> "Dataset":
        prov = dict(self.provenance)
        if note:
            prov["subset"] = note
        return Dataset(self.features[idx], self.y[idx], self.a[idx],
                       None if self.z is None else self.z[idx], prov)

    def with_labels(self, y: np.ndarray, **prov_updates) -> "Dataset":
        prov = dict(self.provenance)
        prov.update(prov_updates)
        return Dataset(self.features, y, self.a, self.z, prov)


@dataclass(frozen=True)
class DatasetRecipe:
    """How to turn a raw CSV into an encoded Dataset.

    Categorical columns are one-hot encoded (category order sorted for
    determinism); numeric columns are z-scored.  Rows with missing values
    in any used column are dropped.
    """

    source_path: str
    label_column: str
    positive_label: str
    sensitive_column: str
    protected_value: str
    categorical_columns: tuple[str, ...]
    numeric_columns: tuple[str, ...]
    missing_markers: tuple[str, ...] = ("?", "")
    name: str = "recipe"

    def __post_init__(self):
        feats = set(self.categorical_columns) | set(self.numeric_columns)
        if self.label_column in feats or self.sensitive_column in feats:
            raise ValueError("label and sensitive columns must not appear among features")


def recipe_from_toml(path: str | Path, source_override: str | None = None) -> DatasetRecipe:
    """Read a recipe file; source_override points it at a different CSV."""
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    raw["categorical_columns"] = tuple(raw.get("categorical_columns", ()))
    raw["numeric_columns"] = tuple(raw.get("numeric_columns", ()))
    if "missing_markers" in raw:
        raw["missing_markers"] = tuple(raw["missing_markers"])
    if source_override is not None:
        raw["source_path"] = source_override
    return DatasetRecipe(**raw)


def load_csv(recipe: DatasetRecipe, standardize: bool = True) -> Dataset:
    """Encode a raw CSV per the recipe.

    With standardize=True the numeric columns are z-scored with statistics
    of the loaded rows.  Pipelines that split into train/test afterwards
    should pass standardize=False and use standardize_train_test so the
    test split never leaks into the statistics.

    The protected value of the sensitive column maps to group 0.
    """
    path = Path(recipe.source_path)
    if not path.exists():
        raise IngestionError(f"source file not found: {path}")
    used = [recipe.label_column, recipe.sensitive_column,
            *recipe.categorical_columns, *recipe.numeric_columns]
    try:
        frame = pd.read_csv(path, skipinitialspace=True, dtype=str)
    except Exception as exc:  # pragma: no cover - pandas error text varies
        raise IngestionError(f"cannot parse {path}: {exc}") from exc
    frame.columns = [c.strip() for c in frame.columns]
    missing_cols = [c for c in used if c not in frame.columns]
    if missing_cols:
        raise IngestionError(f"{path} lacks declared columns {missing_cols}")

    frame = frame[used].apply(lambda col: col.str.strip())
    mask = frame.notna().all(axis=1)
    for marker in recipe.missing_markers:
        mask &= ~(frame == marker).any(axis=1)
    n_dropped = int((~mask).sum())
    frame = frame[mask].reset_index(drop=True)
    if frame.empty:
        raise IngestionError(f"{path}: no rows left after dropping missing values")

    blocks: list[np.ndarray] = []
    names: list[str] = []
    numeric_idx: list[int] = []
    for col in recipe.categorical_columns:
        levels = sorted(frame[col].unique())
        for level in levels:
            blocks.append((frame[col] == level).to_numpy(dtype=float))
            names.append(f"{col}={level}")
    for col in recipe.numeric_columns:
        try:
            vals = frame[col].astype(float).to_numpy()
        except ValueError as exc:
            bad = frame[col][pd.to_numeric(frame[col], errors="coerce").isna()]
            raise IngestionError(
                f"{path}: column {col!r} has unparseable cell at row {bad.index[0]}"
            ) from exc
        numeric_idx.append(len(names))
        names.append(col)
        blocks.append(vals)
    features = np.column_stack(blocks)
    if standardize and numeric_idx:
        mu = features[:, numeric_idx].mean(axis=0)
        sd = features[:, numeric_idx].std(axis=0)
        sd[sd == 0.0] = 1.0
        features[:, numeric_idx] = (features[:, numeric_idx] - mu) / sd

    y = np.where(frame[recipe.label_column] == str(recipe.positive_label), 1, -1)
    a = np.where(frame[recipe.sensitive_column] == str(recipe.protected_value), 0, 1)
    prov = {
        "source": recipe.name,
        "path": str(path),
        "n_dropped_missing": n_dropped,
        "feature_names": names,
        "numeric_feature_idx": numeric_idx,
        "standardized_on_load": bool(standardize and numeric_idx),
        "n_protected": int((a == 0).sum()),
    }
    return Dataset(features, y, a, None, prov)


def split(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded uniform shuffle, then a disjoint exhaustive partition.

    Train size is floor(train_fraction * N).
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0,1)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(dataset.n)
    n_train = int(np.floor(train_fraction * dataset.n))
    train = dataset.subset(perm[:n_train], note=f"train(seed={seed})")
    test = dataset.subset(perm[n_train:], note=f"test(seed={seed})")
    return train, test


def standardize_train_test(train: Dataset, test: Dataset) -> tuple[Dataset, Dataset]:
    """Z-score the numeric feature columns of both splits with train statistics.

    Column indices come from ingestion provenance; datasets without numeric
    columns (e.g. synthetic binary features) pass through unchanged.
    """
    idx = train.provenance.get("numeric_feature_idx", [])
    if not idx:
        return train, test
    mu = train.features[:, idx].mean(axis=0)
    sd = train.features[:, idx].std(axis=0)
    sd[sd == 0.0] = 1.0

    def apply(ds: Dataset) -> Dataset:
        feats = ds.features.copy()
        feats[:, idx] = (feats[:, idx] - mu) / sd
        prov = dict(ds.provenance)
        prov["standardized_with_train_stats"] = True
        return Dataset(feats, ds.y, ds.a, ds.z, prov)

    return apply(train), apply(test)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write the interchange CSV; float cells use shortest round-trip repr."""
    path = Path(path)
    header = [f"feature_{j}" for j in range(dataset.d)] + ["y", "a"]
    if dataset.z is not None:
        header.append("z")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.features[i]]
            row += [str(int(dataset.y[i])), str(int(dataset.a[i]))]
            if dataset.z is not None:
                row.append(str(int(dataset.z[i])))
            writer.writerow(row)


def load_dataset(path: str | Path) -> Dataset:
    """Read the interchange CSV written by save_dataset."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"dataset file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise IngestionError(f"{path}: empty file")
        d = sum(1 for c in header if c.startswith("feature_"))
        expected = [f"feature_{j}" for j in range(d)] + ["y", "a"]
        has_z = header == expected + ["z"]
        if not has_z and header != expected:
            raise IngestionError(f"{path}: unexpected header {header}")
        feats, ys, gs, zs = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise IngestionError(f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}")
            try:
                feats.append([float(v) for v in row[:d]])
                ys.append(int(row[d]))
                gs.append(int(row[d + 1]))
                if has_z:
                    zs.append(int(row[d + 2]))
            except ValueError as exc:
                raise IngestionError(f"{path}: unparseable cell at row {lineno}") from exc
    return Dataset(np.array(feats), np.array(ys), np.array(gs),
                   np.array(zs) if has_z else None, {"source": str(path)})
