"""Dataset ingestion, preprocessing and synthetic generation.

Two on-disk schemas are supported: transaction CSVs (header row, one sample
per row, word-valued columns integer-encoded) and supply-graph directories
(four temporal CSVs ``<signal>.csv`` with a leading date column and one
column per product, edge CSVs ``edges_<kind>.csv`` with ``src,dst,label``
rows, and an optional ``products.csv`` with ``product,group,plant`` labels).
Synthetic generators emit the same shapes so the whole pipeline can be
exercised without the proprietary datasets.
"""

import csv
import os
from dataclasses import dataclass, field
from datetime import date, timedelta

import numpy as np

from chebnet.graph import DEFAULT_THRESHOLD, build_adjacency


class SchemaError(ValueError):
    """Input file does not match the expected schema."""


NODE_TASK = "node-class"
EDGE_TASK = "edge-class"

# Transaction-table feature columns (selected when all are present).
DATACO_FEATURES = (
    "Type",
    "Days for shipping (real)",
    "Days for shipment (scheduled)",
    "Benefit per order",
    "Sales per customer",
    "Latitude",
    "Longitude",
    "Order Item Discount",
    "Order Item Discount Rate",
    "Order Item Total",
    "Order Profit Per Order",
)
DATACO_TARGET = "Late_delivery_risk"

SG_SIGNALS = (
    "delivery_to_distributor",
    "factory_issue",
    "production",
    "sales_order",
)


@dataclass
class Dataset:
    """Feature windows plus targets for one classification task.

    ``features`` is (samples x channels) for node tasks and
    (nodes x node_features) for edge tasks, where ``targets`` then labels
    the rows of ``edges``.  ``conv_shape`` is the (channels, length) layout
    the convolutional branch reshapes one feature row into.
    """

    features: np.ndarray
    targets: np.ndarray
    task: str
    n_classes: int
    channel_names: tuple = ()
    edges: np.ndarray = None
    conv_shape: tuple = None
    n_dropped: int = 0
    class_names: tuple = ()

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        if self.task not in (NODE_TASK, EDGE_TASK):
            raise ValueError(f"unknown task kind {self.task!r}")
        if not np.isfinite(self.features).all():
            raise ValueError("features contain NaN or Inf")
        if self.task == EDGE_TASK:
            if self.edges is None:
                raise ValueError("edge-class dataset needs an edge list")
            self.edges = np.asarray(self.edges, dtype=np.int64)
            if self.edges.ndim != 2 or self.edges.shape[1] != 2:
                raise ValueError("edges must be an (E, 2) index array")
            n = self.features.shape[0]
            if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= n):
                raise ValueError("edge endpoint index out of range")
            if len(self.targets) != len(self.edges):
                raise ValueError("targets must label the edges")
        else:
            if len(self.targets) != len(self.features):
                raise ValueError("targets must label the samples")
        if self.targets.size and (
                self.targets.min() < 0 or self.targets.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        if not self.channel_names:
            self.channel_names = tuple(
                f"ch{i}" for i in range(self.features.shape[1]))
        if self.conv_shape is None:
            self.conv_shape = (1, self.features.shape[1])
        if self.conv_shape[0] * self.conv_shape[1] != self.features.shape[1]:
            raise ValueError("conv_shape must factor the feature width")
        if not self.class_names:
            self.class_names = tuple(f"class_{i}" for i in range(self.n_classes))

    @property
    def n_samples(self):
        return len(self.targets)


# ---------------------------------------------------------------------------
# normalization and windowing


def zscore_normalize(features):
    """Per-channel standardization with population std.

    Returns (normalized, mean, std); constant channels map to all zeros.
    The (mean, std) record reapplies the training statistics to test folds
    via ``apply_zscore``.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("normalization needs at least 2 samples")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    return apply_zscore(x, mean, std), mean, std


def apply_zscore(features, mean, std):
    x = np.asarray(features, dtype=np.float64)
    safe = np.where(std > 0.0, std, 1.0)
    out = (x - mean) / safe
    out[:, std == 0.0] = 0.0
    return out


def window_series(series, window=20, stride=1):
    """Contiguous windows of a (T x P) series: returns (n, P, window).

    n = floor((T - window) / stride) + 1; windows are ordered by start index.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("series must be (time x products)")
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be positive")
    if x.shape[0] < window:
        raise ValueError(
            f"series length {x.shape[0]} shorter than window {window}")
    views = np.lib.stride_tricks.sliding_window_view(x, window, axis=0)
    return np.ascontiguousarray(views[::stride])


# ---------------------------------------------------------------------------
# transaction CSV loading


def _is_missing(value):
    return value is None or value.strip() == ""


def _column_is_numeric(values):
    """A column is numeric when at least half its non-missing entries parse."""
    parsed = 0
    seen = 0
    for v in values:
        if _is_missing(v):
            continue
        seen += 1
        try:
            float(v)
            parsed += 1
        except ValueError:
            pass
    return seen > 0 and parsed * 2 >= seen


def _encode_first_appearance(values):
    codes = {}
    out = []
    for v in values:
        if v not in codes:
            codes[v] = len(codes)
        out.append(codes[v])
    return out, codes


def load_dataco(path, target_column=DATACO_TARGET, feature_columns=None):
    """Load a transaction CSV into a node-classification dataset.

    Word-valued columns become dense integer codes by first appearance;
    rows with missing or unparseable values are dropped (count recorded on
    the dataset).  Numeric targets are remapped to dense labels by sorted
    value, so a 0/1 late-delivery flag keeps 1 = late.
    """
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = [r for r in reader if any(not _is_missing(c) for c in r)]
    header = [h.strip() for h in header]
    if target_column not in header:
        raise SchemaError(f"{path}: missing target column {target_column!r}")
    if feature_columns is None:
        if all(c in header for c in DATACO_FEATURES):
            feature_columns = list(DATACO_FEATURES)
        else:
            feature_columns = [c for c in header if c != target_column]
    missing = [c for c in feature_columns if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing feature columns {missing}")

    idx = {c: header.index(c) for c in feature_columns + [target_column]}
    cols = {c: [r[idx[c]] if idx[c] < len(r) else "" for r in rows]
            for c in feature_columns + [target_column]}

    numeric = {c: _column_is_numeric(cols[c]) for c in feature_columns}
    target_numeric = _column_is_numeric(cols[target_column])

    encoded = {}
    for c in feature_columns:
        if not numeric[c]:
            non_missing = [v for v in cols[c] if not _is_missing(v)]
            _, codes = _encode_first_appearance(non_missing)
            encoded[c] = codes

    keep, feats, raw_targets = [], [], []
    for i in range(len(rows)):
        vals = []
        ok = True
        for c in feature_columns:
            v = cols[c][i]
            if _is_missing(v):
                ok = False
                break
            if numeric[c]:
                try:
                    vals.append(float(v))
                except ValueError:
                    ok = False
                    break
            else:
                vals.append(float(encoded[c][v]))
        tv = cols[target_column][i]
        if ok and _is_missing(tv):
            ok = False
        if ok and target_numeric:
            try:
                float(tv)
            except ValueError:
                ok = False
        if ok:
            keep.append(i)
            feats.append(vals)
            raw_targets.append(tv)
    n_dropped = len(rows) - len(keep)
    if not keep:
        raise ValueError(f"{path}: no rows left after cleaning")

    if target_numeric:
        values = [float(v) for v in raw_targets]
        uniq = sorted(set(values))
        remap = {v: i for i, v in enumerate(uniq)}
        targets = [remap[v] for v in values]
        class_names = tuple(str(v) for v in uniq)
    else:
        targets, codes = _encode_first_appearance(raw_targets)
        class_names = tuple(codes)
    return Dataset(
        features=np.array(feats, dtype=np.float64),
        targets=np.array(targets, dtype=np.int64),
        task=NODE_TASK,
        n_classes=len(class_names),
        channel_names=tuple(feature_columns),
        n_dropped=n_dropped,
        class_names=class_names,
    )


# ---------------------------------------------------------------------------
# supply-graph directory loading


def _parse_date(text):
    text = text.strip()
    for sep in ("-", "/"):
        parts = text.split(sep)
        if len(parts) == 3:
            try:
                return date(int(parts[0]), int(parts[1]), int(parts[2]))
            except ValueError:
                continue
    raise SchemaError(f"unparseable date {text!r}")


@dataclass
class SupplyGraphData:
    products: tuple
    dates: tuple
    series: dict                      # signal name -> (T x P) array
    edges: dict = field(default_factory=dict)   # kind -> (E x 2, E labels)
    groups: np.ndarray = None         # per-product group label or None
    plants: np.ndarray = None
    group_names: tuple = ()
    plant_names: tuple = ()


def _load_temporal_csv(path):
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if any(not _is_missing(c) for c in r)]
    products = tuple(h.strip() for h in header[1:])
    if not products:
        raise SchemaError(f"{path}: no product columns")
    dated = []
    for r in rows:
        if len(r) != len(header):
            raise SchemaError(f"{path}: ragged row {r!r}")
        try:
            values = [float(v) for v in r[1:]]
        except ValueError:
            raise SchemaError(f"{path}: non-numeric value in row {r[0]!r}") from None
        dated.append((_parse_date(r[0]), values))
    dated.sort(key=lambda t: t[0])
    matrix = np.array([v for _, v in dated], dtype=np.float64)
    return products, tuple(d for d, _ in dated), matrix


def _load_edge_csv(path, n_products):
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        header = [h.strip().lower() for h in next(reader)]
        if header[:3] != ["src", "dst", "label"]:
            raise SchemaError(f"{path}: expected header src,dst,label")
        edges, labels = [], []
        for r in reader:
            if not r or all(_is_missing(c) for c in r):
                continue
            try:
                s, d, lab = int(r[0]), int(r[1]), int(r[2])
            except (ValueError, IndexError):
                raise SchemaError(f"{path}: bad edge row {r!r}") from None
            if not (0 <= s < n_products and 0 <= d < n_products):
                raise SchemaError(
                    f"{path}: edge ({s},{d}) references a product index "
                    f">= {n_products}")
            edges.append((s, d))
            labels.append(lab)
    if not edges:
        raise SchemaError(f"{path}: no edges")
    labels = np.array(labels, dtype=np.int64)
    uniq = np.unique(labels)
    remap = {v: i for i, v in enumerate(uniq.tolist())}
    dense = np.array([remap[v] for v in labels.tolist()], dtype=np.int64)
    return np.array(edges, dtype=np.int64), dense, tuple(str(v) for v in uniq)


def load_supplygraph(directory):
    """Load the four temporal CSVs plus any edge CSVs and product metadata.

    The four temporal files must agree on the product set; columns are
    realigned to the first file's order.  Dates only order the rows.
    """
    series = {}
    products = None
    dates = None
    for name in SG_SIGNALS:
        path = os.path.join(directory, f"{name}.csv")
        if not os.path.exists(path):
            raise SchemaError(f"missing temporal file {path}")
        prods, ds, matrix = _load_temporal_csv(path)
        if products is None:
            products, dates = prods, ds
        else:
            if set(prods) != set(products):
                raise SchemaError(
                    f"{path}: product set differs from {SG_SIGNALS[0]}.csv")
            order = [prods.index(p) for p in products]
            matrix = matrix[:, order]
            if matrix.shape[0] != len(dates):
                raise SchemaError(f"{path}: date count differs")
        series[name] = matrix

    data = SupplyGraphData(products=products, dates=dates, series=series)

    for entry in sorted(os.listdir(directory)):
        if entry.startswith("edges_") and entry.endswith(".csv"):
            kind = entry[len("edges_"):-len(".csv")]
            data.edges[kind] = _load_edge_csv(
                os.path.join(directory, entry), len(products))

    meta_path = os.path.join(directory, "products.csv")
    if os.path.exists(meta_path):
        with open(meta_path, newline="", encoding="utf-8-sig") as fh:
            reader = csv.reader(fh)
            header = [h.strip().lower() for h in next(reader)]
            if header[:3] != ["product", "group", "plant"]:
                raise SchemaError(f"{meta_path}: expected header product,group,plant")
            rows = {r[0].strip(): (r[1].strip(), r[2].strip())
                    for r in reader if r and not _is_missing(r[0])}
        missing = [p for p in products if p not in rows]
        if missing:
            raise SchemaError(f"{meta_path}: missing products {missing[:5]}")
        groups, gcodes = _encode_first_appearance([rows[p][0] for p in products])
        plants, pcodes = _encode_first_appearance([rows[p][1] for p in products])
        data.groups = np.array(groups, dtype=np.int64)
        data.plants = np.array(plants, dtype=np.int64)
        data.group_names = tuple(gcodes)
        data.plant_names = tuple(pcodes)
    return data


def build_sg_node_dataset(sg, window=20, stride=1):
    """Product-group classification samples: one per (product, window start).

    Each sample concatenates the four signals' windows for one product
    (signal-major channel layout); the target is the product's group.
    """
    if sg.groups is None:
        raise SchemaError(
            "product-group task needs products.csv with group labels")
    windows = [window_series(sg.series[name], window, stride)
               for name in SG_SIGNALS]
    n_starts = windows[0].shape[0]
    n_products = len(sg.products)
    feats = np.empty((n_products * n_starts, len(SG_SIGNALS) * window))
    targets = np.empty(n_products * n_starts, dtype=np.int64)
    row = 0
    for p in range(n_products):
        for s in range(n_starts):
            feats[row] = np.concatenate([w[s, p, :] for w in windows])
            targets[row] = sg.groups[p]
            row += 1
    names = tuple(f"{sig}_t{j}" for sig in SG_SIGNALS for j in range(window))
    return Dataset(
        features=feats,
        targets=targets,
        task=NODE_TASK,
        n_classes=len(sg.group_names),
        channel_names=names,
        conv_shape=(len(SG_SIGNALS), window),
        class_names=sg.group_names,
    )


def build_sg_edge_dataset(sg, kind):
    """Edge-relation classification over products; node features are the
    concatenated temporal signals."""
    if kind not in sg.edges:
        raise SchemaError(
            f"edge kind {kind!r} not found (have {sorted(sg.edges)})")
    edges, labels, label_names = sg.edges[kind]
    t = sg.series[SG_SIGNALS[0]].shape[0]
    feats = np.concatenate(
        [sg.series[name].T for name in SG_SIGNALS], axis=1)  # (P, 4T)
    names = tuple(f"{sig}_t{j}" for sig in SG_SIGNALS for j in range(t))
    return Dataset(
        features=feats,
        targets=labels,
        task=EDGE_TASK,
        n_classes=len(label_names),
        channel_names=names,
        edges=edges,
        conv_shape=(len(SG_SIGNALS), t),
        class_names=label_names,
    )


# ---------------------------------------------------------------------------
# synthetic generation


def _orthonormal_directions(rng, n_channels, n_classes):
    if n_channels < n_classes:
        raise ValueError("need n_channels >= n_classes for separated means")
    q, _ = np.linalg.qr(rng.standard_normal((n_channels, n_classes)))
    return q[:, :n_classes]


def synth_generate(n_samples, n_channels, n_classes, separation, seed,
                   block_correlation=0.9, threshold=DEFAULT_THRESHOLD):
    """Class-conditional Gaussian dataset with a known channel graph.

    The leading channels are correlated in adjacent pairs at
    ``block_correlation`` (these carry the graph structure); class means of
    magnitude ``separation`` live on the trailing unpaired channels, so the
    class signal does not disturb the pair correlations.  The second return
    value is the adjacency built from the analytic correlation of the
    generating mixture, the ground truth for graph-recovery tests.
    """
    if separation < 0:
        raise ValueError("separation must be nonnegative")
    rng = np.random.default_rng(seed)
    n_free = max(n_classes, (n_channels + 2) // 3)
    if n_free > n_channels:
        raise ValueError("need n_channels >= n_classes")
    n_pairs = (n_channels - n_free) // 2
    cov = np.eye(n_channels)
    for p in range(n_pairs):
        i = 2 * p
        cov[i, i + 1] = cov[i + 1, i] = block_correlation

    directions = np.zeros((n_channels, n_classes))
    directions[n_channels - n_free:] = _orthonormal_directions(
        rng, n_free, n_classes)
    means = separation * directions.T  # (n_classes, n_channels)

    counts = np.full(n_classes, n_samples // n_classes, dtype=np.int64)
    counts[: n_samples % n_classes] += 1

    # analytic mixture correlation: within-class cov + between-class cov
    w = counts / n_samples
    mbar = w @ means
    centered = means - mbar
    total_cov = cov + (centered.T * w) @ centered
    scale = 1.0 / np.sqrt(np.diag(total_cov))
    truth_corr = np.clip(total_cov * np.outer(scale, scale), -1.0, 1.0)
    np.fill_diagonal(truth_corr, 1.0)
    truth_adjacency = build_adjacency(truth_corr, threshold)

    chol = np.linalg.cholesky(cov)
    feats = np.empty((n_samples, n_channels))
    targets = np.empty(n_samples, dtype=np.int64)
    row = 0
    for c in range(n_classes):
        z = rng.standard_normal((counts[c], n_channels))
        feats[row:row + counts[c]] = means[c] + z @ chol.T
        targets[row:row + counts[c]] = c
        row += counts[c]
    order = rng.permutation(n_samples)
    dataset = Dataset(
        features=feats[order],
        targets=targets[order],
        task=NODE_TASK,
        n_classes=n_classes,
    )
    return dataset, truth_adjacency


def synth_edge_generate(n_nodes, n_features, n_communities, separation,
                        n_edges, seed, threshold=DEFAULT_THRESHOLD):
    """Edge-relation dataset: node communities induce both the node-feature
    graph and the edge labels (ordered community pair -> class)."""
    if separation < 0:
        raise ValueError("separation must be nonnegative")
    rng = np.random.default_rng(seed)
    comm = np.arange(n_nodes) % n_communities
    rng.shuffle(comm)
    # orthogonal community signatures with unit-scale entries, so the shared
    # component carries separation**2 of each feature's variance
    directions = np.sqrt(n_features) * _orthonormal_directions(
        rng, n_features, n_communities)
    feats = (separation * directions.T[comm]
             + rng.standard_normal((n_nodes, n_features)))

    src = rng.integers(0, n_nodes, size=n_edges)
    dst = rng.integers(0, n_nodes - 1, size=n_edges)
    dst = np.where(dst >= src, dst + 1, dst)  # no self-loop edges
    labels = comm[src] * n_communities + comm[dst]

    rho = separation ** 2 / (separation ** 2 + 1.0)
    truth_corr = np.where(comm[:, None] == comm[None, :], rho, 0.0)
    np.fill_diagonal(truth_corr, 1.0)
    truth_adjacency = build_adjacency(truth_corr, threshold)

    dataset = Dataset(
        features=feats,
        targets=labels,
        task=EDGE_TASK,
        n_classes=n_communities ** 2,
        edges=np.stack([src, dst], axis=1),
    )
    return dataset, truth_adjacency


# ---------------------------------------------------------------------------
# synthetic export (same formats the loaders read)


def _fmt(x):
    return repr(float(x))


def write_dataco_csv(dataset, path, target_column="target"):
    """Write a node dataset as a transaction-style CSV."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(dataset.channel_names) + [target_column])
        for row, target in zip(dataset.features, dataset.targets):
            writer.writerow([_fmt(v) for v in row] + [int(target)])


def write_adjacency_csv(path, adjacency, channel_names):
    """Dense adjacency CSV with a header row of channel names."""
    adjacency = np.asarray(adjacency, dtype=np.float64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(channel_names))
        for row in adjacency:
            writer.writerow([_fmt(v) for v in row])


def read_adjacency_csv(path):
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        names = tuple(next(reader))
        rows = [[float(v) for v in r] for r in reader if r]
    return np.array(rows, dtype=np.float64), names


def write_supplygraph_dir(directory, n_products=12, n_dates=40,
                          n_communities=2, n_plants=5, n_edges=80, seed=0):
    """Emit a synthetic supply-graph directory.

    Products in the same community share a latent signal per temporal file,
    so the loader-side correlation graph recovers the communities.  Edge
    labels are ordered community pairs (product-group file) and ordered
    plant pairs (plant file, n_plants**2 classes at most).
    """
    rng = np.random.default_rng(seed)
    os.makedirs(directory, exist_ok=True)
    comm = np.arange(n_products) % n_communities
    rng.shuffle(comm)
    plants = np.arange(n_products) % n_plants
    rng.shuffle(plants)
    products = [f"P{i:02d}" for i in range(n_products)]
    start = date(2023, 1, 1)
    dates = [(start + timedelta(days=t)).strftime("%Y-%m-%d")
             for t in range(n_dates)]

    for name in SG_SIGNALS:
        latent = np.cumsum(rng.standard_normal((n_communities, n_dates)),
                           axis=1)
        noise = 0.3 * rng.standard_normal((n_dates, n_products))
        matrix = latent[comm].T + noise
        path = os.path.join(directory, f"{name}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["date"] + products)
            for t in range(n_dates):
                writer.writerow([dates[t]] + [_fmt(v) for v in matrix[t]])

    with open(os.path.join(directory, "products.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["product", "group", "plant"])
        for i, p in enumerate(products):
            writer.writerow([p, f"G{comm[i]}", f"PL{plants[i]}"])

    for kind, labels_of in (
            ("product_group", lambda s, d: comm[s] * n_communities + comm[d]),
            ("plant", lambda s, d: plants[s] * n_plants + plants[d])):
        src = rng.integers(0, n_products, size=n_edges)
        dst = rng.integers(0, n_products - 1, size=n_edges)
        dst = np.where(dst >= src, dst + 1, dst)
        path = os.path.join(directory, f"edges_{kind}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["src", "dst", "label"])
            for s, d in zip(src, dst):
                writer.writerow([int(s), int(d), int(labels_of(s, d))])
    return directory
