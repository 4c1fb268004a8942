"""Few-shot vegetation classifier: a small shared-weight embedder trained
with a contrastive pair loss on synthetic quadrant descriptors.

Descriptors stand in for quadrant images: each class is a Gaussian cluster
in feature space, and a "background" generator (mean zero) models content
that matches no class. Both halves of a pair run through the same encoder
(two affine layers with a tanh between), distances are plain euclidean, and
gradients are derived by hand so the module needs nothing beyond numpy.

Labels use 1 for similar pairs and 0 for dissimilar ones throughout.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

N_CLASSES = 4


@dataclass
class EmbedderParams:
    """Shared branch weights: embed(x) = w2 @ tanh(w1 @ x + b1) + b2."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def in_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.w2.shape[0]

    def copy(self) -> "EmbedderParams":
        return EmbedderParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    @classmethod
    def from_flat(cls, flat: np.ndarray, in_dim: int, hidden_dim: int, embed_dim: int):
        sizes = [hidden_dim * in_dim, hidden_dim, embed_dim * hidden_dim, embed_dim]
        if flat.size != sum(sizes):
            raise ValueError("flat parameter vector has the wrong length")
        a, b, c, d = np.split(flat, np.cumsum(sizes)[:-1])
        return cls(a.reshape(hidden_dim, in_dim), b.copy(), c.reshape(embed_dim, hidden_dim), d.copy())


def init_params(
    in_dim: int = 16, hidden_dim: int = 16, embed_dim: int = 8, seed: int = 0, scale: float = 0.1
) -> EmbedderParams:
    """Seeded small-uniform initialization of the shared branch weights."""
    rng = np.random.default_rng(seed)
    return EmbedderParams(
        w1=rng.uniform(-scale, scale, (hidden_dim, in_dim)),
        b1=rng.uniform(-scale, scale, hidden_dim),
        w2=rng.uniform(-scale, scale, (embed_dim, hidden_dim)),
        b2=rng.uniform(-scale, scale, embed_dim),
    )


@dataclass(frozen=True)
class TrainingParams:
    margin: float = 1.0
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.learning_rate < 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("bad training parameters")


def embed(params: EmbedderParams, x: np.ndarray) -> np.ndarray:
    """Deterministic embedding of one descriptor."""
    x = np.asarray(x, dtype=float)
    if x.shape != (params.in_dim,):
        raise ValueError(f"descriptor has shape {x.shape}, expected ({params.in_dim},)")
    return params.w2 @ np.tanh(params.w1 @ x + params.b1) + params.b2


def embed_batch(params: EmbedderParams, xs: np.ndarray) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 2 or xs.shape[1] != params.in_dim:
        raise ValueError(f"descriptor batch has shape {xs.shape}, expected (n, {params.in_dim})")
    return np.tanh(xs @ params.w1.T + params.b1) @ params.w2.T + params.b2


def pair_distance(h1: np.ndarray, h2: np.ndarray) -> float:
    """Euclidean distance between two embeddings."""
    h1 = np.asarray(h1, dtype=float)
    h2 = np.asarray(h2, dtype=float)
    if h1.shape != h2.shape:
        raise ValueError("embedding dimensions differ")
    return float(np.linalg.norm(h1 - h2))


def contrastive_loss(d: float, label: int, margin: float) -> float:
    """Pair loss: d^2 for similar pairs, hinge max(margin - d, 0)^2 for
    dissimilar ones. Zero exactly when a similar pair coincides or a
    dissimilar pair is at least margin apart."""
    if d < 0:
        raise ValueError("distance must be nonnegative")
    if margin <= 0:
        raise ValueError("margin must be positive")
    if label not in (0, 1):
        raise ValueError("label must be 0 or 1")
    if label == 1:
        return d * d
    gap = margin - d
    return gap * gap if gap > 0 else 0.0


def pair_loss(params: EmbedderParams, x1: np.ndarray, x2: np.ndarray, label: int, margin: float) -> float:
    """Forward-only loss of one pair (used by finite-difference checks)."""
    return contrastive_loss(pair_distance(embed(params, x1), embed(params, x2)), label, margin)


def _forward(params: EmbedderParams, xs: np.ndarray):
    z = xs @ params.w1.T + params.b1
    a = np.tanh(z)
    return a, a @ params.w2.T + params.b2


def _backprop(params: EmbedderParams, xs: np.ndarray, a: np.ndarray, dh: np.ndarray):
    dw2 = dh.T @ a
    db2 = dh.sum(axis=0)
    dz = (dh @ params.w2) * (1.0 - a * a)
    dw1 = dz.T @ xs
    db1 = dz.sum(axis=0)
    return dw1, db1, dw2, db2


def batch_loss_gradient(
    params: EmbedderParams,
    x1: np.ndarray,
    x2: np.ndarray,
    labels: np.ndarray,
    margin: float,
) -> tuple[float, EmbedderParams]:
    """Mean loss over a batch of pairs and its analytic gradient.

    Both branches share the parameters, so each branch's contribution is
    accumulated into the same gradient. At the hinge kink (d == margin) and
    at coincident dissimilar pairs (d == 0) the zero subgradient is used.
    """
    x1 = np.atleast_2d(np.asarray(x1, dtype=float))
    x2 = np.atleast_2d(np.asarray(x2, dtype=float))
    labels = np.atleast_1d(np.asarray(labels, dtype=float))
    n = x1.shape[0]
    a1, h1 = _forward(params, x1)
    a2, h2 = _forward(params, x2)
    diff = h1 - h2
    d = np.linalg.norm(diff, axis=1)

    gap = margin - d
    losses = labels * d * d + (1.0 - labels) * np.square(np.maximum(gap, 0.0))
    loss = float(losses.mean())

    # dL/d(diff): similar pairs pull together, dissimilar pairs inside the
    # margin push apart; the hinge is flat at and beyond the margin.
    g_sim = 2.0 * diff
    active = (gap > 0.0) & (d > 0.0)
    scale = np.where(active, -2.0 * gap / np.where(d > 0.0, d, 1.0), 0.0)
    g_dis = scale[:, None] * diff
    dh1 = (labels[:, None] * g_sim + (1.0 - labels)[:, None] * g_dis) / n

    grads1 = _backprop(params, x1, a1, dh1)
    grads2 = _backprop(params, x2, a2, -dh1)
    grad = EmbedderParams(*(g1 + g2 for g1, g2 in zip(grads1, grads2)))
    return loss, grad


def loss_gradient(
    params: EmbedderParams, x1: np.ndarray, x2: np.ndarray, label: int, margin: float
) -> tuple[float, EmbedderParams]:
    """Single-pair loss and gradient."""
    return batch_loss_gradient(params, x1[None, :], x2[None, :], np.array([label]), margin)


def make_pairs(
    xs: np.ndarray, ys: np.ndarray, n_pairs: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample a balanced labeled pair set: half same-class pairs (label 1),
    half cross-class pairs (label 0)."""
    by_class = {c: np.nonzero(ys == c)[0] for c in np.unique(ys)}
    classes = sorted(by_class)
    if len(classes) < 2:
        raise ValueError("need at least two classes to form pairs")
    i1 = np.empty(n_pairs, dtype=np.int64)
    i2 = np.empty(n_pairs, dtype=np.int64)
    labels = np.zeros(n_pairs, dtype=np.int64)
    for k in range(n_pairs):
        if k % 2 == 0:
            c = classes[int(rng.integers(len(classes)))]
            idx = by_class[c]
            i1[k], i2[k] = rng.choice(idx, 2, replace=True)
            labels[k] = 1
        else:
            ca, cb = rng.choice(len(classes), 2, replace=False)
            i1[k] = rng.choice(by_class[classes[ca]])
            i2[k] = rng.choice(by_class[classes[cb]])
    return xs[i1], xs[i2], labels


def train(
    pairs: tuple[np.ndarray, np.ndarray, np.ndarray],
    tp: TrainingParams,
    init: EmbedderParams | None = None,
    hidden_dim: int = 16,
    embed_dim: int = 8,
) -> tuple[EmbedderParams, list[float]]:
    """Seeded mini-batch gradient descent on the contrastive loss.

    Returns the trained parameters and the per-epoch mean loss curve.
    Requires a nonempty pair set containing both labels.
    """
    x1, x2, labels = (np.asarray(a) for a in pairs)
    if x1.shape[0] == 0:
        raise ValueError("empty training set")
    if not (np.any(labels == 1) and np.any(labels == 0)):
        raise ValueError("training pairs must include both labels")
    rng = np.random.default_rng(tp.seed)
    params = init.copy() if init is not None else init_params(
        in_dim=x1.shape[1], hidden_dim=hidden_dim, embed_dim=embed_dim,
        seed=int(rng.integers(2**31)),
    )
    n = x1.shape[0]
    curve = []
    for _ in range(tp.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, tp.batch_size):
            take = order[s : s + tp.batch_size]
            loss, grad = batch_loss_gradient(params, x1[take], x2[take], labels[take], tp.margin)
            total += loss * take.size
            params.w1 -= tp.learning_rate * grad.w1
            params.b1 -= tp.learning_rate * grad.b1
            params.w2 -= tp.learning_rate * grad.w2
            params.b2 -= tp.learning_rate * grad.b2
        curve.append(total / n)
    return params, curve


def min_class_distance(
    params: EmbedderParams, query: np.ndarray, references: dict[int, np.ndarray]
) -> np.ndarray:
    """Per-class minimum embedding distance from the query to any reference.

    `references` maps class index (1..4) to an (n, in_dim) array; every
    class must have at least one reference. Entry j-1 of the result is the
    smallest distance to a class-j reference.
    """
    hq = embed(params, query)
    out = np.empty(N_CLASSES, dtype=float)
    for j in range(1, N_CLASSES + 1):
        refs = references.get(j)
        if refs is None or len(refs) == 0:
            raise ValueError(f"class {j} has no references")
        hr = embed_batch(params, np.asarray(refs, dtype=float))
        out[j - 1] = float(np.min(np.linalg.norm(hr - hq, axis=1)))
    return out


def squash_distance(d):
    """Map raw distances [0, inf) into [0, 1) via d / (1 + d), preserving
    order (and therefore argmins)."""
    d = np.asarray(d, dtype=float)
    out = d / (1.0 + d)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Synthetic descriptor generation

@dataclass(frozen=True)
class DescriptorConfig:
    """Class-clustered synthetic descriptors: class j is a Gaussian blob of
    spread `noise` around separation * e_j; background descriptors (matching
    no class) cluster around the origin."""

    dim: int = 16
    separation: float = 4.0
    noise: float = 1.0

    def __post_init__(self):
        if self.dim < N_CLASSES:
            raise ValueError("descriptor dim must be at least the class count")


def class_mean(cfg: DescriptorConfig, class_index: int) -> np.ndarray:
    mean = np.zeros(cfg.dim)
    mean[class_index - 1] = cfg.separation
    return mean


def sample_class_descriptors(
    cfg: DescriptorConfig, class_index: int, n: int, rng: np.random.Generator
) -> np.ndarray:
    return class_mean(cfg, class_index) + rng.normal(0.0, cfg.noise, (n, cfg.dim))


def sample_background_descriptor(cfg: DescriptorConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(0.0, cfg.noise, cfg.dim)


def make_dataset(
    cfg: DescriptorConfig, per_class: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Labeled descriptor set: per_class samples for each of the 4 classes."""
    xs = np.vstack([sample_class_descriptors(cfg, c, per_class, rng) for c in range(1, N_CLASSES + 1)])
    ys = np.repeat(np.arange(1, N_CLASSES + 1), per_class)
    return xs, ys


def make_references(
    xs: np.ndarray, ys: np.ndarray, per_class: int, rng: np.random.Generator
) -> dict[int, np.ndarray]:
    refs = {}
    for c in range(1, N_CLASSES + 1):
        idx = np.nonzero(ys == c)[0]
        if idx.size == 0:
            raise ValueError(f"class {c} missing from dataset")
        take = rng.choice(idx, min(per_class, idx.size), replace=False)
        refs[c] = xs[take]
    return refs


def nearest_reference_accuracy(
    params: EmbedderParams, xs: np.ndarray, ys: np.ndarray, references: dict[int, np.ndarray]
) -> float:
    """Fraction of queries whose argmin class distance matches their label."""
    correct = 0
    for x, y in zip(xs, ys):
        pred = int(np.argmin(min_class_distance(params, x, references))) + 1
        correct += pred == int(y)
    return correct / len(xs)


# ---------------------------------------------------------------------------
# Serialization

_MAGIC = "vegnav-embedder 1"


def save_params(params: EmbedderParams, path: str | Path) -> None:
    """Versioned flat text layout: magic line, dims line, then one line per
    array (w1, b1, w2, b2) of repr'd floats in row-major order."""
    lines = [_MAGIC, f"{params.in_dim} {params.hidden_dim} {params.embed_dim}"]
    for arr in (params.w1, params.b1, params.w2, params.b2):
        lines.append(" ".join(repr(v) for v in arr.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_params(path: str | Path) -> EmbedderParams:
    lines = Path(path).read_text().strip().splitlines()
    if not lines or lines[0] != _MAGIC:
        raise ValueError("not an embedder parameter file")
    in_dim, hidden_dim, embed_dim = (int(v) for v in lines[1].split())
    arrays = [np.array([float(v) for v in line.split()]) for line in lines[2:6]]
    flat = np.concatenate(arrays)
    return EmbedderParams.from_flat(flat, in_dim, hidden_dim, embed_dim)


def write_loss_curve(path: str | Path, curve: list[float]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "mean_loss"])
        for i, loss in enumerate(curve):
            writer.writerow([i, repr(loss)])
