"""Labeled datasets, synthetic clusters, and on-disk formats.

Binary matrix layout (all integers and floats little-endian)::

    bytes 0..7    magic  b"XBMMAT01"
    bytes 8..15   rows   uint64
    bytes 16..23  cols   uint64
    then          rows*cols float64 values, row-major

A checkpoint is ``b"XBMCKPT1"``, a uint64 byte length, a UTF-8 JSON header
describing the layer shapes, and then one matrix block per parameter in the
order W0, b0, W1, b1, ... (biases stored as column vectors).
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ParseError, ShapeError
from .tensor import EmbeddingNet

MATRIX_MAGIC = b"XBMMAT01"
CHECKPOINT_MAGIC = b"XBMCKPT1"
_HEADER = struct.Struct("<8sQQ")


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    ids: np.ndarray = None
    class_index: dict = field(default=None, compare=False)

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64, order="C")
        if feats.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {feats.shape}")
        labels = np.asarray(self.labels)
        if labels.shape != (feats.shape[0],):
            raise ShapeError("need exactly one label per feature row")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise ConfigError("labels must be integers")
        labels = labels.astype(np.int64)
        if np.any(labels < 0):
            raise ConfigError("labels must be non-negative")
        ids = np.arange(feats.shape[0]) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if ids.shape != labels.shape or np.unique(ids).size != ids.size:
            raise ConfigError("ids must be unique, one per row")
        index = {}
        for lab in np.unique(labels):
            index[int(lab)] = np.flatnonzero(labels == lab)
        for arr in (feats, labels, ids, *index.values()):
            arr.flags.writeable = False
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "class_index", index)

    def __len__(self):
        return self.features.shape[0]

    @property
    def num_classes(self):
        return len(self.class_index)

    @property
    def input_dim(self):
        return self.features.shape[1]

    def subset(self, rows):
        """New dataset made of ``rows``, renumbered 0..len(rows)-1."""
        rows = np.asarray(rows, dtype=np.int64)
        return LabeledDataset(self.features[rows], self.labels[rows])

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.ids, other.ids)
        )

    __hash__ = None


def split_per_class(dataset, holdout_fraction, seed):
    """Hold out a fraction of every class; returns ``(train, heldout)``.

    Each class keeps at least one training instance.
    """
    if not 0.0 < holdout_fraction < 1.0:
        raise ConfigError("holdout_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    train_rows, test_rows = [], []
    for lab in sorted(dataset.class_index):
        rows = rng.permutation(dataset.class_index[lab])
        n_test = min(int(round(holdout_fraction * rows.size)), rows.size - 1)
        test_rows.extend(rows[:n_test])
        train_rows.extend(rows[n_test:])
    return dataset.subset(np.sort(train_rows)), dataset.subset(np.sort(test_rows))


def synth_clusters(
    num_classes,
    per_class,
    d_in,
    center_scale,
    noise_sigma,
    seed,
    *,
    num_superclasses=0,
    subclass_spread=0.5,
    nuisance_dims=0,
    nuisance_sigma=0.0,
):
    """Gaussian blobs around class centres placed on a sphere of radius ``center_scale``.

    Optional structure for harder retrieval tasks:

    * ``num_superclasses > 0`` groups classes round-robin into coarse groups.
      A class centre is its group direction plus a random offset of norm
      ``subclass_spread``, projected back onto the sphere, so sibling classes
      are each other's hard negatives.
    * ``nuisance_dims`` trailing coordinates carry no class information, only
      ``N(0, nuisance_sigma**2)`` noise; centres and ``noise_sigma`` live in
      the leading ``d_in - nuisance_dims`` coordinates.
    """
    for name, value in (("num_classes", num_classes), ("per_class", per_class), ("d_in", d_in)):
        if int(value) <= 0:
            raise ConfigError(f"{name} must be positive")
    if center_scale <= 0 or noise_sigma < 0 or nuisance_sigma < 0:
        raise ConfigError("center_scale must be positive and noise levels non-negative")
    if not 0 <= nuisance_dims < d_in:
        raise ConfigError("nuisance_dims must leave at least one informative coordinate")
    d_sig = d_in - nuisance_dims
    rng = np.random.default_rng(seed)
    if num_superclasses > 0:
        groups = rng.standard_normal((num_superclasses, d_sig))
        groups /= np.linalg.norm(groups, axis=1, keepdims=True)
        offsets = rng.standard_normal((num_classes, d_sig))
        offsets *= subclass_spread / np.linalg.norm(offsets, axis=1, keepdims=True)
        centers = groups[np.arange(num_classes) % num_superclasses] + offsets
    else:
        centers = rng.standard_normal((num_classes, d_sig))
    centers *= center_scale / np.linalg.norm(centers, axis=1, keepdims=True)
    labels = np.repeat(np.arange(num_classes), per_class)
    feats = np.empty((labels.size, d_in))
    feats[:, :d_sig] = centers[labels] + rng.standard_normal((labels.size, d_sig)) * noise_sigma
    feats[:, d_sig:] = rng.standard_normal((labels.size, nuisance_dims)) * nuisance_sigma
    return LabeledDataset(feats, labels)


# ---------------------------------------------------------------- delimited text


@dataclass(frozen=True)
class DelimitedSchema:
    """Column layout of a delimited dataset file.

    ``label_column`` is a column index, or a column name when ``header`` is
    set. ``feature_columns`` defaults to every other column.
    """

    label_column: int | str = -1
    feature_columns: tuple | None = None
    header: bool = False
    delimiter: str = ","


def _resolve_column(col, names, ncols):
    if isinstance(col, str):
        if names is None or col not in names:
            raise ConfigError(f"column {col!r} not found in header")
        return names.index(col)
    idx = int(col)
    if not -ncols <= idx < ncols:
        raise ConfigError(f"column index {idx} out of range for {ncols} columns")
    return idx % ncols


def load_delimited(path, schema=DelimitedSchema()):
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(enumerate(csv.reader(fh, delimiter=schema.delimiter), start=1))
    rows = [(n, r) for n, r in rows if r and any(c.strip() for c in r)]
    names = None
    if schema.header:
        if not rows:
            raise ParseError("missing header row", 1)
        names = [c.strip() for c in rows[0][1]]
        rows = rows[1:]
    if not rows:
        raise ParseError("no data rows")
    ncols = len(names) if names is not None else len(rows[0][1])
    label_idx = _resolve_column(schema.label_column, names, ncols)
    if schema.feature_columns is None:
        feat_idx = [c for c in range(ncols) if c != label_idx]
    else:
        feat_idx = [_resolve_column(c, names, ncols) for c in schema.feature_columns]
    feats = np.empty((len(rows), len(feat_idx)))
    labels = np.empty(len(rows), dtype=np.int64)
    for r, (line, cells) in enumerate(rows):
        if len(cells) != ncols:
            raise ParseError(f"expected {ncols} fields, found {len(cells)}", line)
        try:
            feats[r] = [float(cells[c]) for c in feat_idx]
        except ValueError as exc:
            raise ParseError(f"non-numeric feature ({exc})", line) from None
        if not np.all(np.isfinite(feats[r])):
            raise ParseError("non-finite feature value", line)
        try:
            labels[r] = int(cells[label_idx])
        except ValueError:
            raise ParseError(f"label {cells[label_idx]!r} is not an integer", line) from None
        if labels[r] < 0:
            raise ParseError("negative label", line)
    return LabeledDataset(feats, labels)


def save_delimited(dataset, path, header=True):
    """Write features followed by a ``label`` column; readable by ``load_delimited``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow([f"f{c}" for c in range(dataset.input_dim)] + ["label"])
    for x, y in zip(dataset.features, dataset.labels):
        writer.writerow([repr(float(v)) for v in x] + [int(y)])
    atomic_write(path, buf.getvalue())


# ---------------------------------------------------------------- binary formats


def atomic_write(path, payload):
    """Write ``payload`` (str or bytes) via a temp file and ``os.replace``."""
    path = Path(path)
    data = payload.encode() if isinstance(payload, str) else payload
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def matrix_bytes(matrix):
    arr = np.asarray(matrix, dtype="<f8")
    if arr.ndim != 2:
        raise ShapeError(f"only 2-D matrices can be stored, got shape {arr.shape}")
    return _HEADER.pack(MATRIX_MAGIC, *arr.shape) + np.ascontiguousarray(arr).tobytes()


def read_matrix(buf, offset=0):
    """Parse one matrix block at ``offset``; returns ``(matrix, next_offset)``."""
    if len(buf) - offset < _HEADER.size:
        raise FormatError("truncated matrix header")
    magic, rows, cols = _HEADER.unpack_from(buf, offset)
    if magic != MATRIX_MAGIC:
        raise FormatError("bad matrix magic")
    start = offset + _HEADER.size
    end = start + rows * cols * 8
    if end > len(buf):
        raise FormatError(f"payload shorter than header shape {rows}x{cols}")
    arr = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=start)
    return arr.reshape(rows, cols).astype(np.float64), end


def save_matrix(path, matrix):
    atomic_write(path, matrix_bytes(matrix))


def load_matrix(path):
    buf = Path(path).read_bytes()
    arr, end = read_matrix(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after matrix payload")
    return arr


def save_checkpoint(path, net):
    header = {
        "dims": net.dims,
        "layers": [{"weight": list(w.shape), "bias": [b.shape[0], 1]} for w, b in zip(net.weights, net.biases)],
    }
    head = json.dumps(header, sort_keys=True).encode()
    blocks = [CHECKPOINT_MAGIC, struct.pack("<Q", len(head)), head]
    for w, b in zip(net.weights, net.biases):
        blocks.append(matrix_bytes(w))
        blocks.append(matrix_bytes(b[:, None]))
    atomic_write(path, b"".join(blocks))


def load_checkpoint(path):
    buf = Path(path).read_bytes()
    if len(buf) < 16 or buf[:8] != CHECKPOINT_MAGIC:
        raise FormatError("not a checkpoint file")
    (hlen,) = struct.unpack_from("<Q", buf, 8)
    try:
        header = json.loads(buf[16 : 16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from None
    if not isinstance(header, dict) or not isinstance(header.get("layers"), list):
        raise FormatError("checkpoint header has no layer list")
    offset = 16 + hlen
    weights, biases = [], []
    for layer in header["layers"]:
        w, offset = read_matrix(buf, offset)
        b, offset = read_matrix(buf, offset)
        if list(w.shape) != layer["weight"] or list(b.shape) != layer["bias"]:
            raise FormatError("checkpoint payload disagrees with header shapes")
        weights.append(w)
        biases.append(b[:, 0].copy())
    if offset != len(buf):
        raise FormatError("trailing bytes after checkpoint payload")
    return EmbeddingNet(weights, biases)
