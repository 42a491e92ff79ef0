"""Multi-view datasets: CSV loading, synthetic hierarchical data, pipeline configuration."""

from __future__ import annotations

import csv
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


class DataError(ValueError):
    pass


@dataclass
class MultiViewDataset:
    views: list
    labels: Optional[np.ndarray] = None
    names: list = field(default_factory=list)

    def __post_init__(self):
        self.views = [np.asarray(v, dtype=np.float64) for v in self.views]
        if len(self.views) < 2:
            raise DataError(f"need at least 2 views, got {len(self.views)}")
        n = self.views[0].shape[0]
        for name, v in zip(self.view_names, self.views):
            if v.ndim != 2:
                raise DataError(f"view {name!r} must be 2-D, got shape {v.shape}")
            if v.shape[0] != n:
                raise DataError(
                    f"row-count mismatch: view {self.view_names[0]!r} has {n} rows, "
                    f"view {name!r} has {v.shape[0]}"
                )
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != (n,):
                raise DataError(f"labels must have length {n}, got {self.labels.shape}")
        if not self.names:
            self.names = self.view_names

    @property
    def view_names(self) -> list:
        return self.names or [f"view{v}" for v in range(len(self.views))]

    @property
    def n_samples(self) -> int:
        return self.views[0].shape[0]

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def dims(self) -> tuple:
        return tuple(v.shape[1] for v in self.views)

    def concat(self) -> np.ndarray:
        return np.hstack(self.views)


def _read_numeric_csv(path, header: bool = False) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if header:
            next(reader, None)
        for r, row in enumerate(reader, start=1 + int(header)):
            if not row or all(not c.strip() for c in row):
                continue
            parsed = []
            for c, cell in enumerate(row, start=1):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric cell {cell!r} at row {r}, column {c}"
                    ) from None
            rows.append(parsed)
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise DataError(f"{path}: ragged rows (widths {sorted(widths)})")
    return np.array(rows, dtype=np.float64).reshape(len(rows), -1)


def load_matrix(path, header: bool = False) -> np.ndarray:
    """Read a numeric CSV into a 2-D float array."""
    return _read_numeric_csv(path, header=header)


def load_labels(path, header: bool = False) -> np.ndarray:
    """Read labels from a single-column CSV, or a single comma-separated line."""
    arr = _read_numeric_csv(path, header=header)
    if arr.shape[1] != 1 and arr.shape[0] != 1:
        raise DataError(f"{path}: label file must have a single column")
    labels = arr.reshape(-1)
    as_int = labels.astype(np.int64)
    return as_int if np.array_equal(as_int, labels) else labels


def load_views(paths: Sequence, label_path=None, header: bool = False) -> MultiViewDataset:
    """Load one CSV per view (rows aligned by index) and optional labels."""
    views = []
    for p in paths:
        arr = _read_numeric_csv(p, header=header)
        if views and arr.shape[0] != views[0].shape[0]:
            raise DataError(
                f"row-count mismatch: {paths[0]} has {views[0].shape[0]} rows, "
                f"{p} has {arr.shape[0]}"
            )
        views.append(arr)
    labels = None
    if label_path is not None:
        labels = load_labels(label_path, header=header)
        if labels.shape[0] != views[0].shape[0]:
            raise DataError(
                f"{label_path} has {labels.shape[0]} labels for {views[0].shape[0]} rows"
            )
    return MultiViewDataset(views, labels, [Path(p).stem for p in paths])


def write_matrix_csv(path, mat: np.ndarray) -> None:
    mat = np.atleast_2d(np.asarray(mat, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in mat:
            writer.writerow([repr(float(x)) for x in row])


def write_views(ds: MultiViewDataset, out_dir) -> list:
    """Write ``view{v}.csv`` files (and ``labels.csv``); returns the view paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for v, view in enumerate(ds.views):
        p = out_dir / f"view{v}.csv"
        write_matrix_csv(p, view)
        paths.append(p)
    if ds.labels is not None:
        with open(out_dir / "labels.csv", "w") as fh:
            fh.writelines(f"{int(x)}\n" for x in ds.labels)
    return paths


def zscore_columns(X) -> np.ndarray:
    """Per-column z-score with population std; constant columns become zero."""
    X = np.asarray(X, dtype=np.float64)
    # rounding in the mean can leave a tiny std on an exactly constant column
    sd = np.where(np.ptp(X, axis=0) > 0, X.std(axis=0), 0.0)
    safe = np.where(sd > 0, sd, 1.0)
    return np.where(sd > 0, (X - X.mean(axis=0)) / safe, 0.0)


def zscore_normalize(ds: MultiViewDataset) -> MultiViewDataset:
    """Z-score every view column-wise (see :func:`zscore_columns`)."""
    return MultiViewDataset([zscore_columns(v) for v in ds.views], ds.labels, list(ds.names))


def _random_hierarchy(K: int, depth: int, rng) -> list:
    """Levels of the K leaves of a random binary tree of at most ``depth`` levels.

    Returns a list of paths (tuples of 0/1 choices) from the root.
    """
    leaves = [()]
    while len(leaves) < K:
        splittable = [i for i, p in enumerate(leaves) if len(p) < depth]
        i = splittable[rng.integers(len(splittable))]
        p = leaves.pop(i)
        leaves[i:i] = [p + (0,), p + (1,)]
    return leaves


def synth_hier_gaussian(
    N: int,
    K: int,
    V: int = 2,
    depth: Optional[int] = None,
    sep: float = 10.0,
    noise: float = 0.1,
    seed: int = 0,
    latent_dim: int = 8,
    dims: Optional[Sequence[int]] = None,
):
    """Sample a multi-view dataset whose K cluster centres sit at the leaves of
    a random binary hierarchy.

    Child centres are their parent plus ``N(0, I) * sep / 2**level``.  Each
    sample is its cluster centre plus latent noise, mapped into every view by
    an independent random linear map, plus per-view noise.  Clusters are
    balanced (``N // K`` each, remainder to the first clusters) and the rows
    are shuffled.
    """
    if K > N:
        raise DataError(f"K={K} exceeds N={N}")
    if K < 1 or V < 1:
        raise DataError("K and V must be positive")
    if depth is None:
        depth = max(1, math.ceil(math.log2(K))) if K > 1 else 1
    if K > 2**depth:
        raise DataError(f"K={K} leaves do not fit in a binary hierarchy of depth {depth}")
    if dims is None:
        dims = [20 + 10 * v for v in range(V)]
    if len(dims) != V:
        raise DataError(f"got {len(dims)} view dims for V={V}")
    rng = np.random.default_rng(seed)

    paths = _random_hierarchy(K, depth, rng)
    node_centre = {(): np.zeros(latent_dim)}
    for p in sorted({p[:l] for p in paths for l in range(1, len(p) + 1)}, key=lambda q: (len(q), q)):
        node_centre[p] = node_centre[p[:-1]] + rng.normal(size=latent_dim) * sep / 2 ** len(p)
    centres = np.stack([node_centre[p] for p in paths])

    sizes = np.full(K, N // K)
    sizes[: N % K] += 1
    labels = np.repeat(np.arange(K), sizes)
    labels = labels[rng.permutation(N)]
    latent = centres[labels] + noise * rng.normal(size=(N, latent_dim))
    views = []
    for d in dims:
        proj = rng.normal(size=(latent_dim, d)) / math.sqrt(latent_dim)
        views.append(latent @ proj + noise * rng.normal(size=(N, d)))
    ds = MultiViewDataset(views, labels, [f"view{v}" for v in range(V)])
    ds.latent = latent
    ds.centres = centres
    return ds


@dataclass
class PipelineConfig:
    """All hyperparameters of the multi-view hierarchical clustering pipeline."""

    n_clusters: Optional[int] = None
    tau: float = 0.5
    tau_c: float = 0.05
    k: int = 50
    k_pos: Optional[int] = None
    k_neg: Optional[int] = None
    margin: float = 1.0
    alpha: float = 0.99
    strict_negatives: bool = False
    lr: float = 5e-4
    hc_lr: Optional[float] = None
    batch_size: int = 256
    hc_batch_size: int = 512
    ae_epochs: int = 50
    con_epochs: int = 20
    joint_epochs: int = 20
    hc_epochs: int = 50
    triplet_budget: Optional[int] = None
    hidden_dims: tuple = (500, 500, 2000)
    ae_dim: int = 512
    h_dim: int = 128
    e_dim: int = 128
    hyp_dim: int = 2
    hc_mode: str = "head"
    zscore: bool = True
    cg_tol: float = 1e-8
    cg_maxiter: int = 1000
    seed: int = 0

    def __post_init__(self):
        self.hidden_dims = tuple(int(d) for d in self.hidden_dims)
        self.validate()

    def validate(self) -> None:
        if self.tau <= 0 or self.tau_c <= 0:
            raise DataError("tau and tau_c must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise DataError("alpha must lie in (0, 1)")
        if self.margin < 0:
            raise DataError("margin must be non-negative")
        for name in ("ae_epochs", "con_epochs", "joint_epochs", "hc_epochs"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be >= 0")
        for name in ("batch_size", "hc_batch_size", "k"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be >= 1")
        if self.k_pos is not None and self.k_neg is not None and self.k_pos > self.k_neg:
            raise DataError("k_pos must not exceed k_neg")
        if self.hc_mode not in ("head", "direct"):
            raise DataError(f"hc_mode must be 'head' or 'direct', got {self.hc_mode!r}")

    def resolve(self, n_samples: int) -> "PipelineConfig":
        """Fill data-dependent defaults (k_pos, k_neg, triplet budget) for N samples."""
        cfg = PipelineConfig(**asdict(self))
        if cfg.k_pos is None or cfg.k_neg is None:
            if cfg.n_clusters is None:
                raise DataError("n_clusters is required to derive k_pos / k_neg")
            if cfg.k_pos is None:
                cfg.k_pos = math.ceil(n_samples / (2 * cfg.n_clusters))
            if cfg.k_neg is None:
                cfg.k_neg = math.ceil(n_samples / cfg.n_clusters)
        cfg.k = min(cfg.k, n_samples - 1)
        cfg.k_pos = min(cfg.k_pos, n_samples - 1)
        cfg.k_neg = min(cfg.k_neg, n_samples - 1)
        if cfg.triplet_budget is None:
            cfg.triplet_budget = n_samples * n_samples
        cfg.validate()
        if cfg.k_neg > n_samples:
            raise DataError("k_neg must not exceed N")
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


CONFIG_FIELDS = tuple(f.name for f in fields(PipelineConfig))


def load_config(path=None, overrides: Optional[dict] = None) -> PipelineConfig:
    """Read the flat ``[pipeline]`` TOML table; ``overrides`` (non-None values) win."""
    values: dict = {}
    if path is not None:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
        values.update(doc.get("pipeline", {}))
        unknown = set(values) - set(CONFIG_FIELDS)
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v
    return PipelineConfig(**values)
