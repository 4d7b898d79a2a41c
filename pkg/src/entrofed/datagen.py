"""Synthetic dataset generation and non-IID partitioning.

Gaussian blob classification data, label-shard and Dirichlet client splits,
and linear-regression federations with known ground-truth parameters. Every
generator is a pure function of its seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from entrofed.core import SeededRng
from entrofed.objectives import GlrObjective

_LATTICE_SEPARATION = 4.0
_DIRICHLET_RETRIES = 100


class PartitionInfeasibleError(RuntimeError):
    """Raised when a partition cannot satisfy its constraints."""


@dataclass(frozen=True)
class LabeledDataset:
    """n samples (features row-wise) with integer labels in [0, n_classes)."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError("features must be a nonempty n x d matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must have one entry per sample")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ValueError("labels out of range")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class PartitionSpec:
    """How to split a dataset across clients.

    mode "shards": label-sorted samples cut into client_count *
    shards_per_client contiguous shards, each client drawing
    shards_per_client of them at random. mode "dirichlet": per class, a
    symmetric Dirichlet(dirichlet_alpha) draw over clients allocates that
    class's samples; allocations leaving any client below
    min_samples_per_client are redrawn.
    """

    mode: str
    client_count: int
    shards_per_client: int = 2
    dirichlet_alpha: float = 0.5
    min_samples_per_client: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("shards", "dirichlet"):
            raise ValueError("mode must be 'shards' or 'dirichlet'")
        if self.client_count < 1:
            raise ValueError("client_count must be >= 1")
        if self.shards_per_client < 1:
            raise ValueError("shards_per_client must be >= 1")
        if not self.dirichlet_alpha > 0:
            raise ValueError("dirichlet_alpha must be positive")
        if self.min_samples_per_client < 0:
            raise ValueError("min_samples_per_client must be >= 0")


@dataclass(frozen=True)
class GlrFederationSpec:
    """Linear-regression federation with per-client true parameters.

    Designs are built with orthonormal columns scaled so that X^T X equals
    samples_per_client * design_scale * I exactly (up to rounding); targets
    are X w_i plus Gaussian noise of the given standard deviation.
    """

    client_count: int
    dimension: int
    samples_per_client: int
    true_params: np.ndarray  # (client_count, dimension)
    design_scale: float = 1.0
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.design_scale > 0:
            raise ValueError("design_scale must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        w = np.asarray(self.true_params, dtype=np.float64)
        if w.shape != (self.client_count, self.dimension):
            raise ValueError("true_params must have shape (client_count, dimension)")
        object.__setattr__(self, "true_params", w)


def _lattice_means(classes: int, dim: int) -> np.ndarray:
    """First `classes` points of the integer grid in `dim` dimensions,
    enumerated deterministically and scaled by a fixed separation."""
    side = 1
    while side**dim < classes:
        side += 1
    means = np.zeros((classes, dim))
    for c in range(classes):
        rem = c
        for j in range(dim):
            means[c, j] = rem % side
            rem //= side
    return means * _LATTICE_SEPARATION


def gen_gaussian_blobs(
    classes: int, per_class: int, dim: int, spread: float, seed: int
) -> LabeledDataset:
    """Isotropic Gaussian clusters with distinct lattice means, class-major order."""
    if classes < 2:
        raise ValueError("need at least two classes")
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    if spread < 0:
        raise ValueError("spread must be >= 0")
    rng = SeededRng(seed)
    means = _lattice_means(classes, dim)
    n = classes * per_class
    noise = rng.normals(n * dim).reshape(n, dim) * spread
    labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)
    return LabeledDataset(means[labels] + noise, labels, classes)


def partition_shards(ds: LabeledDataset, spec: PartitionSpec) -> list[np.ndarray]:
    """Label-sorted shard partition; every sample assigned exactly once."""
    m, s = spec.client_count, spec.shards_per_client
    total = m * s
    if ds.n < total:
        raise ValueError(f"{ds.n} samples cannot fill {total} shards")
    order = np.argsort(ds.labels, kind="stable")
    shards = np.array_split(order, total)
    rng = SeededRng(spec.seed)
    drawn = rng.permutation(total)
    return [
        np.sort(np.concatenate([shards[k] for k in drawn[i * s : (i + 1) * s]]))
        for i in range(m)
    ]


def partition_dirichlet(ds: LabeledDataset, spec: PartitionSpec) -> list[np.ndarray]:
    """Class-wise Dirichlet allocation of samples across clients.

    For each class, one symmetric Dirichlet(alpha) draw fixes the client
    proportions and each sample of the class lands in a client by an
    independent categorical draw. Whole allocations are redrawn (at most 100
    times) until every client holds min_samples_per_client samples.
    """
    m = spec.client_count
    rng = SeededRng(spec.seed)
    for _ in range(_DIRICHLET_RETRIES):
        owners = np.empty(ds.n, dtype=np.int64)
        for c in range(ds.n_classes):
            idx = np.flatnonzero(ds.labels == c)
            if idx.size == 0:
                continue
            probs = rng.dirichlet(spec.dirichlet_alpha, m)
            cut = np.cumsum(probs)
            cut[-1] = 1.0
            owners[idx] = np.searchsorted(cut, rng.uniforms(idx.size), side="right")
        counts = np.bincount(owners, minlength=m)
        if counts.min() >= spec.min_samples_per_client:
            return [np.flatnonzero(owners == i) for i in range(m)]
    raise PartitionInfeasibleError(
        f"no allocation with >= {spec.min_samples_per_client} samples per client "
        f"after {_DIRICHLET_RETRIES} draws"
    )


def partition(ds: LabeledDataset, spec: PartitionSpec) -> list[np.ndarray]:
    if spec.mode == "shards":
        return partition_shards(ds, spec)
    return partition_dirichlet(ds, spec)


def train_test_split_indices(
    indices: np.ndarray, test_fraction: float, rng: SeededRng
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded-shuffle split. A single-sample client reuses its sample on both
    sides rather than losing its test set."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise ValueError("cannot split an empty client")
    if indices.size == 1:
        return indices, indices
    shuffled = indices[rng.permutation(indices.size)]
    n_test = max(1, int(round(test_fraction * indices.size)))
    n_test = min(n_test, indices.size - 1)
    return np.sort(shuffled[n_test:]), np.sort(shuffled[:n_test])


@dataclass(frozen=True)
class GlrTruth:
    """Ground-truth record for regression oracles."""

    true_params: np.ndarray
    design_scale: float
    noise_std: float


def gen_glr_federation(spec: GlrFederationSpec) -> tuple[list[GlrObjective], GlrTruth]:
    """Per-client regression objectives with X^T X = n * b * I designs."""
    n, d = spec.samples_per_client, spec.dimension
    if d > n:
        raise ValueError("dimension cannot exceed samples_per_client (rank condition)")
    rng = SeededRng(spec.seed)
    objectives = []
    for i in range(spec.client_count):
        client_rng = rng.derive(1, i)
        raw = client_rng.normals(n * d).reshape(n, d)
        q, _ = np.linalg.qr(raw)
        design = q * np.sqrt(n * spec.design_scale)
        noise = spec.noise_std * client_rng.normals(n)
        targets = design @ spec.true_params[i] + noise
        objectives.append(GlrObjective(design, targets))
    return objectives, GlrTruth(spec.true_params.copy(), spec.design_scale, spec.noise_std)


def write_partition_csv(path, assignment: list[np.ndarray], labels: np.ndarray) -> None:
    """Serialize a partition as `client_id,sample_index,label` rows."""
    labels = np.asarray(labels)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# schema=partition-v1\n")
        fh.write("client_id,sample_index,label\n")
        for cid, idx in enumerate(assignment):
            for j in idx:
                fh.write(f"{cid},{int(j)},{int(labels[j])}\n")
