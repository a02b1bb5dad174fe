"""Core numeric containers, dataset splitting, CSV ingestion and synthetic sampling."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .rng import derive


class DataError(ValueError):
    """Raised on malformed input files or invalid dataset operations."""


@dataclass(frozen=True)
class Dataset:
    """A design matrix / response vector pair.

    features has shape (n, p), targets shape (n,). Immutable after
    construction; arrays are copied and marked read-only.
    """

    features: np.ndarray
    targets: np.ndarray
    id: str = "dataset"

    def __post_init__(self):
        X = np.ascontiguousarray(np.asarray(self.features, dtype=float))
        y = np.ascontiguousarray(np.asarray(self.targets, dtype=float)).reshape(-1)
        if X.ndim != 2:
            raise DataError(f"{self.id}: features must be a 2-d matrix")
        if X.shape[0] != y.shape[0]:
            raise DataError(
                f"{self.id}: {X.shape[0]} feature rows but {y.shape[0]} targets"
            )
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError(f"{self.id}: need at least one row and one column")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise DataError(f"{self.id}: non-finite entries")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def rows(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.targets[idx], self.id)


@dataclass(frozen=True)
class SplitDataset:
    """A train / held-out partition of one dataset."""

    train: Dataset
    held_out: Dataset
    split_fraction: float

    def __post_init__(self):
        if self.train.p != self.held_out.p:
            raise DataError("train and held-out feature widths differ")
        if not 0.0 < self.split_fraction < 1.0:
            raise DataError("split_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class GaussianSpec:
    """A known linear-Gaussian generating distribution.

    Covariates are N(mu, sigma_x); responses are x'beta + noise with noise
    variance noise_var. noise_var = 0 is allowed for degenerate (noiseless)
    constructions used in tests.
    """

    mu: np.ndarray
    sigma_x: np.ndarray
    beta: np.ndarray
    noise_var: float
    chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        S = np.asarray(self.sigma_x, dtype=float)
        beta = np.asarray(self.beta, dtype=float).reshape(-1)
        p = mu.shape[0]
        if S.shape != (p, p) or beta.shape[0] != p:
            raise DataError("mu, sigma_x, beta dimensions are inconsistent")
        if not np.allclose(S, S.T, atol=1e-10):
            raise DataError("sigma_x must be symmetric")
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise DataError("sigma_x is not positive definite") from None
        if self.noise_var < 0:
            raise DataError("noise_var must be nonnegative")
        for name, arr in (("mu", mu), ("sigma_x", S), ("beta", beta), ("chol", L)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def p(self) -> int:
        return self.mu.shape[0]

    @classmethod
    def isotropic(cls, beta, noise_var: float = 1.0, mu=None) -> "GaussianSpec":
        beta = np.asarray(beta, dtype=float).reshape(-1)
        p = beta.shape[0]
        if mu is None:
            mu = np.zeros(p)
        return cls(mu=mu, sigma_x=np.eye(p), beta=beta, noise_var=noise_var)


def ingest_csv(path, target_column: str) -> Dataset:
    """Read a UTF-8 comma-separated file with a header row into a Dataset.

    The named target column becomes the response; every remaining column,
    in file order, becomes a feature. Bad cells are reported with their
    1-based row number (header = row 1) and column name.
    """
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if target_column not in header:
            raise DataError(f"{path}: no column named {target_column!r}")
        t_idx = header.index(target_column)
        f_idx = [j for j in range(len(header)) if j != t_idx]
        feats, targs = [], []
        for i, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {i} has {len(row)} cells, expected {len(header)}")
            vals = []
            for j in range(len(header)):
                try:
                    vals.append(float(row[j]))
                except ValueError:
                    raise DataError(
                        f"{path}: row {i}, column {header[j]!r}: "
                        f"cannot parse {row[j]!r} as a number"
                    ) from None
            feats.append([vals[j] for j in f_idx])
            targs.append(vals[t_idx])
    if not feats:
        raise DataError(f"{path}: no data rows")
    import os

    name = os.path.splitext(os.path.basename(str(path)))[0]
    return Dataset(np.array(feats), np.array(targs), id=name)


def write_csv(d: Dataset, path, target_column: str = "y",
              feature_names=None) -> None:
    """Write a Dataset back out in the format ingest_csv reads."""
    if feature_names is None:
        feature_names = [f"x{j + 1}" for j in range(d.p)]
    if len(feature_names) != d.p:
        raise DataError("feature_names length does not match p")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(feature_names) + [target_column])
        for i in range(d.n):
            w.writerow([repr(float(v)) for v in d.features[i]]
                       + [repr(float(d.targets[i]))])


def split(d: Dataset, fraction: float, seed: int) -> SplitDataset:
    """Seeded shuffle split; train receives floor(fraction * n) rows."""
    if not 0.0 < fraction < 1.0:
        raise DataError("fraction must lie in (0, 1)")
    n_train = int(np.floor(fraction * d.n))
    if n_train < d.p + 2:
        raise DataError(
            f"{d.id}: train side would have {n_train} rows; "
            f"need at least p + 2 = {d.p + 2} for OLS and a variance estimate"
        )
    if d.n - n_train < 1:
        raise DataError(f"{d.id}: held-out side would be empty")
    perm = derive(seed, "split").permutation(d.n)
    return SplitDataset(
        train=d.rows(perm[:n_train]),
        held_out=d.rows(perm[n_train:]),
        split_fraction=fraction,
    )


def sample_synthetic(spec: GaussianSpec, n: int, seed: int, id: str = "synthetic") -> Dataset:
    """Draw n rows x ~ N(mu, sigma_x), y = x'beta + N(0, noise_var)."""
    if n < 1:
        raise DataError("n must be at least 1")
    g = derive(seed, "synthetic")
    X = spec.mu + g.standard_normal((n, spec.p)) @ spec.chol.T
    eps = np.sqrt(spec.noise_var) * g.standard_normal(n) if spec.noise_var > 0 else 0.0
    y = X @ spec.beta + eps
    return Dataset(X, y, id=id)


def load_spec_config(path) -> GaussianSpec:
    """Read a GaussianSpec from a flat key-value text file.

    Keys: mu, sigma_x, beta, noise_var. Vectors are comma/space separated;
    sigma_x is given row-major. Lines starting with # are comments.
    """
    kv = read_kv_file(path)
    for key in ("mu", "sigma_x", "beta", "noise_var"):
        if key not in kv:
            raise DataError(f"{path}: missing key {key!r}")
    mu = _parse_vector(kv["mu"])
    beta = _parse_vector(kv["beta"])
    p = mu.shape[0]
    flat = _parse_vector(kv["sigma_x"])
    if flat.shape[0] != p * p:
        raise DataError(f"{path}: sigma_x needs {p * p} entries, got {flat.shape[0]}")
    return GaussianSpec(mu=mu, sigma_x=flat.reshape(p, p), beta=beta,
                        noise_var=float(kv["noise_var"]))


def read_kv_file(path) -> dict:
    """Flat `key = value` (or `key: value`) text file -> dict of strings."""
    out = {}
    try:
        fh = open(path, "r", encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            for sep in ("=", ":"):
                if sep in line:
                    key, _, val = line.partition(sep)
                    out[key.strip()] = val.strip()
                    break
            else:
                raise DataError(f"{path}: line {lineno} is not `key = value`")
    return out


def _parse_vector(text: str) -> np.ndarray:
    parts = text.replace(",", " ").split()
    try:
        return np.array([float(t) for t in parts])
    except ValueError:
        raise DataError(f"cannot parse vector from {text!r}") from None
