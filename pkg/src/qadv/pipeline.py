"""Data ingestion and preprocessing: images/CSV to unit-norm vectors, PCA, padding."""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fileio import atomic_write_text, fmt, sha256_array

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".pgm", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}
#: Per-sample normalisation applied after scaling pixels to [0, 1].
NORMALIZATION = "unit_l2"


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    samples: np.ndarray
    labels: np.ndarray
    ids: list[str] = field(default_factory=list)
    class_names: dict = field(default_factory=lambda: {1: "+1", -1: "-1"})

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        self.labels = np.asarray(self.labels, dtype=float)
        if not self.ids:
            self.ids = [str(i) for i in range(len(self.labels))]
        if self.samples.shape[0] != self.labels.shape[0] or len(self.ids) != self.labels.shape[0]:
            raise DataError("samples, labels and ids must have equal lengths")
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise DataError("labels must be +1/-1")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.samples[idx], self.labels[idx], [self.ids[i] for i in idx],
                       dict(self.class_names))

    def digest(self) -> str:
        return sha256_array(np.hstack([self.labels[:, None], self.samples]))

    def to_csv(self) -> str:
        header = ["id", "label"] + [f"x{i}" for i in range(self.dim)]
        lines = [",".join(header) + "\n"]
        for i, (x, y) in enumerate(zip(self.samples, self.labels)):
            lines.append(",".join([self.ids[i], str(int(y))] + [fmt(v) for v in x]) + "\n")
        return "".join(lines)

    def save_csv(self, path):
        return atomic_write_text(path, self.to_csv())


def normalize_rows(X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    return np.divide(X, norms, out=np.zeros_like(X), where=norms > 0)


def _image_vector(path: Path, size: tuple[int, int]) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        img = img.convert("L")
        h, w = size
        if img.size != (w, h):
            img = img.resize((w, h), Image.BILINEAR)
        return np.asarray(img, dtype=float).reshape(-1) / 255.0


def load_images(directory, size: tuple[int, int] = (16, 16), classes: tuple[str, str] | None = None,
                normalize: bool = True) -> Dataset:
    """Load grayscale images from ``directory/<class>/*``.

    The first class (alphabetically, unless ``classes`` is given) is labelled
    +1. Unreadable files are skipped with a warning.
    """
    directory = Path(directory)
    if classes is None:
        classes = tuple(sorted(p.name for p in directory.iterdir() if p.is_dir()))
    if len(classes) != 2:
        raise DataError(f"expected exactly two class directories in {directory}, found {list(classes)}")
    samples, labels, ids = [], [], []
    skipped = 0
    for label, name in zip((1, -1), classes):
        files = sorted(p for p in (directory / name).iterdir()
                       if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        n_before = len(samples)
        for path in files:
            try:
                samples.append(_image_vector(path, size))
            except OSError as exc:
                skipped += 1
                log.warning("skipping unreadable image %s: %s", path, exc)
                continue
            labels.append(label)
            ids.append(f"{name}/{path.stem}")
        if len(samples) == n_before:
            raise DataError(f"class {name!r} has no readable images")
    if skipped:
        warnings.warn(f"skipped {skipped} unreadable image(s)")
    X = np.array(samples)
    if normalize:
        X = normalize_rows(X)
    return Dataset(X, np.array(labels, dtype=float), ids, {1: classes[0], -1: classes[1]})


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_csv(path, normalize: bool = False) -> Dataset:
    """Read a dataset CSV.

    Accepts the ``id,label,x0,...`` layout written by :meth:`Dataset.to_csv`
    or a header-less ``label,v0,v1,...`` layout. Labels may be +1/-1 or two
    class names (the alphabetically first becomes +1).
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise DataError(f"{path} is empty")
    if rows[0][:2] == ["id", "label"]:
        ids = [r[0] for r in rows[1:]]
        raw_labels = [r[1] for r in rows[1:]]
        values = [r[2:] for r in rows[1:]]
    else:
        if not any(_is_number(v) for v in rows[0][1:]):
            rows = rows[1:]
        ids = [str(i) for i in range(len(rows))]
        raw_labels = [r[0] for r in rows]
        values = [r[1:] for r in rows]
    try:
        X = np.array(values, dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric feature values") from exc
    names = sorted(set(raw_labels))
    try:
        y = np.array([float(v) for v in raw_labels])
        class_names = {1: "+1", -1: "-1"}
    except ValueError:
        if len(names) != 2:
            raise DataError(f"{path}: expected two classes, found {names}")
        y = np.array([1.0 if v == names[0] else -1.0 for v in raw_labels])
        class_names = {1: names[0], -1: names[1]}
    if normalize:
        X = normalize_rows(X / 255.0 if X.max() > 1.0 else X)
    return Dataset(X, y, ids, class_names)


def load_dataset(path, size: tuple[int, int] = (16, 16)) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path} does not exist")
    if path.is_dir():
        return load_images(path, size)
    return load_csv(path)


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance_ratio: np.ndarray

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PcaModel":
        return cls(np.array(doc["mean"], dtype=float),
                   np.atleast_2d(np.array(doc["components"], dtype=float)),
                   np.array(doc["explained_variance_ratio"], dtype=float))


def pca_fit(X, k: int) -> PcaModel:
    """Top-``k`` eigenvectors of the sample covariance (sign fixed so the largest entry is positive)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    m, d = X.shape
    if not 1 <= k <= d or k > m:
        raise ValueError(f"need 1 <= k <= min(M, d); got k={k}, M={m}, d={d}")
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / max(m - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    rank = int(np.sum(evals > 1e-12 * max(evals[0], 1e-300)))
    if k > rank:
        warnings.warn(f"k={k} exceeds the data rank {rank}; trailing components carry no variance")
    comps = evecs[:, :k].T.copy()
    pivots = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), pivots])
    comps *= np.where(signs == 0, 1.0, signs)[:, None]
    total = evals.sum()
    ratio = evals[:k] / total if total > 0 else np.zeros(k)
    return PcaModel(mean, comps, ratio)


def pca_transform(model: PcaModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.mean.size:
        raise ValueError(f"expected dimension {model.mean.size}, got {x.shape[-1]}")
    return (x - model.mean) @ model.components.T


def pca_inverse(model: PcaModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != model.n_components:
        raise ValueError(f"expected dimension {model.n_components}, got {z.shape[-1]}")
    return z @ model.components + model.mean


def zero_pad(x, target_dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] > target_dim:
        raise ValueError(f"vector of length {x.shape[-1]} exceeds target {target_dim}")
    pad = [(0, 0)] * (x.ndim - 1) + [(0, target_dim - x.shape[-1])]
    return np.pad(x, pad)


@dataclass
class Preprocessor:
    """Raw features to model input: optional PCA, then zero padding."""

    input_dim: int
    output_dim: int
    pca: PcaModel | None = None

    @classmethod
    def fit(cls, X, output_dim: int) -> "Preprocessor":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        d = X.shape[1]
        if d > output_dim:
            return cls(d, output_dim, pca_fit(X, output_dim))
        return cls(d, output_dim)

    def transform(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.input_dim:
            raise DataError(f"expected {self.input_dim} features, got {X.shape[1]}")
        if self.pca is not None:
            X = pca_transform(self.pca, X)
        return zero_pad(X, self.output_dim)

    def inverse(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if self.pca is not None:
            return pca_inverse(self.pca, Z[:, :self.pca.n_components])
        return Z[:, :self.input_dim]

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "output_dim": self.output_dim,
                "pca": None if self.pca is None else self.pca.to_dict()}

    @classmethod
    def from_dict(cls, doc: dict) -> "Preprocessor":
        pca = PcaModel.from_dict(doc["pca"]) if doc.get("pca") else None
        return cls(int(doc["input_dim"]), int(doc["output_dim"]), pca)


def synth_dataset(n_per_class: int, d: int, separation: float, seed: int = 0,
                  noise: float = 1.0, intrinsic_dim: int | None = None,
                  floor_noise: float = 0.0) -> Dataset:
    """Two Gaussian blobs at +/- separation/2 along a random unit direction, rows unit-normalised.

    By default the blob noise is isotropic in all ``d`` dimensions. With
    ``intrinsic_dim=k`` it is confined to a random k-dimensional subspace,
    plus ``floor_noise`` of isotropic noise. That mimics image data, whose
    variance concentrates in a few principal components.
    """
    if separation < 0:
        raise ValueError("separation must be non-negative")
    rng = np.random.default_rng(seed)
    u = rng.normal(size=d)
    u /= np.linalg.norm(u)
    if intrinsic_dim is None:
        basis = np.eye(d)
    else:
        if not 1 <= intrinsic_dim <= d:
            raise ValueError("intrinsic_dim must be in [1, d]")
        basis = np.linalg.qr(rng.normal(size=(d, intrinsic_dim)))[0]

    def blob(sign):
        spread = noise * rng.normal(size=(n_per_class, basis.shape[1])) @ basis.T
        return sign * separation / 2 * u + spread + floor_noise * rng.normal(size=(n_per_class, d))

    X = normalize_rows(np.vstack([blob(1.0), blob(-1.0)]))
    y = np.concatenate([np.ones(n_per_class), -np.ones(n_per_class)])
    ids = [f"p{i}" for i in range(n_per_class)] + [f"n{i}" for i in range(n_per_class)]
    return Dataset(X, y, ids)


def stratified_split(ds: Dataset, n_test: int, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Split keeping class proportions within one sample per class."""
    rng = np.random.default_rng(seed)
    test = []
    n = len(ds)
    for label in (1.0, -1.0):
        idx = np.flatnonzero(ds.labels == label)
        rng.shuffle(idx)
        take = int(round(n_test * idx.size / n))
        test += idx[:take].tolist()
    # rounding may leave the total one off
    while len(test) > n_test:
        test.pop()
    rest = [i for i in range(n) if i not in set(test)]
    while len(test) < n_test:
        test.append(rest.pop(int(rng.integers(len(rest)))))
    test = sorted(test)
    train = [i for i in range(n) if i not in set(test)]
    return ds.subset(train), ds.subset(test)
