"""Dataset bundles: features, labels, per-seed splits, disk format.

A bundle on disk is a directory:

    meta            key=value lines: n, d, c, seeds
    edges           one "i j" pair per undirected edge
    features        one row of d space-separated reals per node
    labels          one class index per line
    splits/seed_<k> one of train/val/test per node line

All indices are 0-based. Feature values round-trip bit-exactly (%.17g).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import graph as graphlib
from .errors import ConfigError, DegenerateInputError, ParseError, ValidationError
from .graph import CsrGraph, from_edge_list

SPLIT_FRACTIONS = (0.48, 0.32, 0.20)
SPLIT_NAMES = ("train", "val", "test")


def _read_lines(path: Path) -> list[str]:
    try:
        return path.read_text().splitlines()
    except OSError as e:
        raise ParseError(f"{path}: unreadable ({e})") from None


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def part(self, name: str) -> np.ndarray:
        return getattr(self, name)


@dataclass
class GraphBundle:
    graph: CsrGraph
    features: np.ndarray
    labels: np.ndarray
    splits: dict[int, Split] = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        n = self.graph.n
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ValidationError(f"features shape {self.features.shape} does not match n={n}")
        if not np.isfinite(self.features).all():
            raise ValidationError("features contain nonfinite values")
        if self.labels.shape != (n,):
            raise ValidationError(f"labels shape {self.labels.shape} does not match n={n}")
        if len(self.labels) and self.labels.min() < 0:
            raise ValidationError("labels must be nonnegative class indices")

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def feat_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def split(self, seed: int) -> Split:
        if seed not in self.splits:
            raise ConfigError(f"bundle has no split for seed {seed}; available: {sorted(self.splits)}")
        return self.splits[seed]


def edge_homophily(b: GraphBundle) -> float:
    """Fraction of undirected edges joining same-label endpoints."""
    return graphlib.edge_homophily(b.graph, b.labels)


# ---------------------------------------------------------------------------
# synthetic graphs


def sbm_generate(
    n: int,
    c: int,
    p_in: float,
    p_out: float,
    feat_dim: int,
    feat_noise: float,
    rng: np.random.Generator,
) -> GraphBundle:
    """Stochastic block model with balanced classes.

    Features are the one-hot class centroid plus iid Gaussian noise of the
    given std, so p_out=0 with feat_noise=0 yields perfectly separable data.
    """
    if not (0.0 <= p_in <= 1.0 and 0.0 <= p_out <= 1.0):
        raise ConfigError(f"edge probabilities must be in [0, 1], got p_in={p_in}, p_out={p_out}")
    if c < 1 or n < 2 * c:
        raise ConfigError(f"need at least 2 nodes per class, got n={n}, c={c}")
    if feat_dim < c:
        raise ConfigError(f"feat_dim must be >= number of classes, got {feat_dim} < {c}")
    if feat_noise < 0:
        raise ConfigError(f"feat_noise must be nonnegative, got {feat_noise}")

    sizes = np.full(c, n // c, dtype=np.int64)
    sizes[: n % c] += 1
    labels = np.repeat(np.arange(c), sizes)

    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.random(len(prob)) < prob
    edges = np.column_stack([iu[keep], ju[keep]])
    g = from_edge_list(n, edges)

    features = np.zeros((n, feat_dim))
    features[np.arange(n), labels] = 1.0
    if feat_noise > 0:
        features += rng.normal(0.0, feat_noise, size=features.shape)
    return GraphBundle(g, features, labels)


# ---------------------------------------------------------------------------
# splits


def _largest_remainder(quotas: np.ndarray, total: int, caps: np.ndarray) -> np.ndarray:
    """Integer allocation matching ``total`` with floor+largest-remainder,
    respecting per-bucket caps."""
    base = np.minimum(np.floor(quotas).astype(np.int64), caps)
    short = total - int(base.sum())
    order = np.argsort(-(quotas - np.floor(quotas)), kind="stable")
    counts = base.copy()
    for idx in list(order) * 2:  # second pass in case caps bind
        if short == 0:
            break
        if counts[idx] < caps[idx]:
            counts[idx] += 1
            short -= 1
    if short != 0:
        raise ValidationError("split allocation could not satisfy the requested totals")
    return counts


def make_splits(b: GraphBundle, seeds: list[int]) -> GraphBundle:
    """Attach per-seed stratified 48/32/20 train/val/test partitions.

    Global sizes are exact up to rounding of the fractions; class
    proportions are preserved up to +-1 node per class. Deterministic in
    the seed. Classes with fewer than 3 nodes trigger a warning and an
    unstratified split.
    """
    if not seeds:
        raise ConfigError("make_splits needs at least one seed")
    n = b.n
    n_train = int(np.floor(SPLIT_FRACTIONS[0] * n + 0.5))
    n_val = int(np.floor(SPLIT_FRACTIONS[1] * n + 0.5))
    n_test = n - n_train - n_val

    class_sizes = np.bincount(b.labels)
    stratify = bool((class_sizes >= 3).all())
    if not stratify:
        warnings.warn(
            f"a class has fewer than 3 nodes (sizes {class_sizes.tolist()}); "
            "falling back to an unstratified split",
            stacklevel=2,
        )

    for seed in seeds:
        rng = np.random.default_rng(seed)
        if stratify:
            train_parts, val_parts, test_parts = [], [], []
            classes = np.unique(b.labels)
            members = [np.flatnonzero(b.labels == k) for k in classes]
            sizes = np.array([len(m) for m in members])
            take_train = _largest_remainder(sizes * SPLIT_FRACTIONS[0], n_train, sizes)
            remaining = sizes - take_train
            take_val = _largest_remainder(sizes * SPLIT_FRACTIONS[1], n_val, remaining)
            for m, t, v in zip(members, take_train, take_val):
                perm = rng.permutation(m)
                train_parts.append(perm[:t])
                val_parts.append(perm[t:t + v])
                test_parts.append(perm[t + v:])
            split = Split(
                np.sort(np.concatenate(train_parts)),
                np.sort(np.concatenate(val_parts)),
                np.sort(np.concatenate(test_parts)),
            )
        else:
            perm = rng.permutation(n)
            split = Split(
                np.sort(perm[:n_train]),
                np.sort(perm[n_train:n_train + n_val]),
                np.sort(perm[n_train + n_val:]),
            )
        assert len(split.train) == n_train and len(split.val) == n_val and len(split.test) == n_test
        b.splits[seed] = split
    return b


# ---------------------------------------------------------------------------
# disk format


def save_bundle(b: GraphBundle, path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    seeds = sorted(b.splits)
    (root / "meta").write_text(
        f"n={b.n}\nd={b.feat_dim}\nc={b.num_classes}\nseeds={','.join(str(s) for s in seeds)}\n"
    )
    with open(root / "edges", "w") as fh:
        for i, j in b.graph.undirected_edges():
            fh.write(f"{i} {j}\n")
    with open(root / "features", "w") as fh:
        for row in b.features:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")
    (root / "labels").write_text("".join(f"{y}\n" for y in b.labels))
    split_dir = root / "splits"
    split_dir.mkdir(exist_ok=True)
    for seed in seeds:
        split = b.splits[seed]
        roles = np.empty(b.n, dtype=object)
        for name in SPLIT_NAMES:
            roles[split.part(name)] = name
        (split_dir / f"seed_{seed}").write_text("".join(f"{r}\n" for r in roles))


def _parse_meta(path: Path) -> dict:
    out = {}
    for lineno, line in enumerate(_read_lines(path), start=1):
        line = line.strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    for key in ("n", "d", "c", "seeds"):
        if key not in out:
            raise ParseError(f"{path}: missing field {key!r}")
    try:
        meta = {"n": int(out["n"]), "d": int(out["d"]), "c": int(out["c"])}
    except ValueError as e:
        raise ParseError(f"{path}: non-integer meta field ({e})") from None
    meta["seeds"] = [int(s) for s in out["seeds"].split(",") if s != ""]
    return meta


def load_bundle(path) -> GraphBundle:
    root = Path(path)
    if not root.is_dir():
        raise ParseError(f"{root}: bundle directory not found")
    meta = _parse_meta(root / "meta")
    n, d = meta["n"], meta["d"]

    edges = []
    for lineno, line in enumerate(_read_lines(root / "edges"), start=1):
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"{root / 'edges'}:{lineno}: expected two indices, got {line!r}")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise ParseError(f"{root / 'edges'}:{lineno}: non-integer index in {line!r}") from None
    g = from_edge_list(n, edges)

    features = np.empty((n, d))
    lines = _read_lines(root / "features")
    if len(lines) != n:
        raise ParseError(f"{root / 'features'}: expected {n} rows, found {len(lines)}")
    for i, line in enumerate(lines):
        parts = line.split()
        if len(parts) != d:
            raise ParseError(f"{root / 'features'}:{i + 1}: expected {d} values, found {len(parts)}")
        try:
            features[i] = [float(x) for x in parts]
        except ValueError:
            raise ParseError(f"{root / 'features'}:{i + 1}: non-numeric value") from None

    label_lines = _read_lines(root / "labels")
    if len(label_lines) != n:
        raise ParseError(f"{root / 'labels'}: expected {n} rows, found {len(label_lines)}")
    try:
        labels = np.array([int(x) for x in label_lines], dtype=np.int64)
    except ValueError as e:
        raise ParseError(f"{root / 'labels'}: non-integer label ({e})") from None
    if labels.max() >= meta["c"]:
        raise ParseError(f"{root / 'labels'}: label {labels.max()} exceeds class count {meta['c']}")

    bundle = GraphBundle(g, features, labels)
    for seed in meta["seeds"]:
        sfile = root / "splits" / f"seed_{seed}"
        role_lines = _read_lines(sfile)
        if len(role_lines) != n:
            raise ParseError(f"{sfile}: expected {n} rows, found {len(role_lines)}")
        parts = {name: [] for name in SPLIT_NAMES}
        for i, role in enumerate(role_lines):
            role = role.strip()
            if role not in parts:
                raise ParseError(f"{sfile}:{i + 1}: unknown role {role!r}")
            parts[role].append(i)
        bundle.splits[seed] = Split(*(np.array(parts[name], dtype=np.int64) for name in SPLIT_NAMES))
    return bundle


def ingest_chameleon_npz(npz_path, out_dir, seeds: list[int] | None = None) -> GraphBundle:
    """Convert the public Chameleon-fix release (.npz with node_features,
    node_labels, edges) into a bundle directory with fresh 48/32/20 splits."""
    seeds = list(range(10)) if seeds is None else seeds
    try:
        data = np.load(npz_path)
        features = np.asarray(data["node_features"], dtype=np.float64)
        labels = np.asarray(data["node_labels"], dtype=np.int64)
        edges = np.asarray(data["edges"], dtype=np.int64)
    except (OSError, KeyError, ValueError) as e:
        raise ParseError(f"{npz_path}: not a readable release archive ({e})") from None
    g = from_edge_list(len(labels), edges)
    bundle = GraphBundle(g, features, labels)
    make_splits(bundle, seeds)
    save_bundle(bundle, out_dir)
    return bundle
