"""Causal-piece identification over datasets of forward traces.

The spike time of a neuron is an analytic function of its inputs only
while the causal set stays fixed; each distinct causal structure is one
linear-region-like "piece" of the network's input-output map.  This
module turns per-sample causal sets into integer piece IDs at three
granularities:

  * per neuron: two samples share an ID at (layer, neuron) exactly when
    the whole causal history feeding that neuron is identical,
  * per layer: the tuple of a layer's neuron IDs,
  * network-wide: the tuple of all layer IDs.

IDs are issued in first-encounter order over samples.  A neuron that
never spiked has no causal history; its ID is the reserved -1 and such
all-empty layer tuples are excluded from counts by default.

`causal_path` materialises the recursive causal history itself, which
the piece IDs summarise; it exists mostly as a brute-force cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import BatchTrace, DimensionError, InputError, NetworkTrace

__all__ = [
    "PieceTable",
    "PieceIds",
    "CausalPath",
    "SetSizeStats",
    "encode_piece_key",
    "assign_neuron_piece_ids",
    "assign_layer_piece_ids",
    "count_pieces",
    "count_network_pieces",
    "causal_path",
    "set_size_stats",
]

_EMPTY_ID = -1
_EMPTY_KEY = np.zeros(1, dtype="<i8").tobytes()

# Row slot for inputs outside the causal set in the fixed-width encoding
# below; distinct from every valid ID (>= 1) and from the empty ID.
_FILL = -2

# Cap on the temporary [samples, n_out, n_in] row tensors.
_CHUNK_BUDGET = 4_194_304


def encode_piece_key(
    selected_ids: Sequence[int] | None,
    causal_set: Sequence[int],
) -> bytes:
    """Canonical byte key of one neuron's piece.

    Layer-0 pieces are determined by the causal set alone; pass
    selected_ids=None there.  Deeper pieces combine the previous-layer
    IDs of the causal members with the set itself.  The encoding is a
    length-prefixed little-endian int64 sequence, so keys like {1, 23}
    and {12, 3} can never collide the way joined decimal strings would.
    An empty causal set always canonicalizes to the reserved empty key.
    """
    cset = np.asarray(causal_set, dtype=np.int64).reshape(-1)
    if cset.size == 0:
        return _EMPTY_KEY
    if np.any(cset < 0):
        raise InputError("causal set indices must be non-negative")
    order = np.argsort(cset, kind="stable")
    cset = cset[order]
    if np.any(cset[1:] == cset[:-1]):
        raise InputError("causal set contains duplicate indices")
    if selected_ids is None:
        parts = [np.zeros(1, dtype=np.int64), cset]
    else:
        ids = np.asarray(selected_ids, dtype=np.int64).reshape(-1)
        if ids.shape != cset.shape:
            raise DimensionError("need one previous-layer ID per causal member")
        parts = [np.array([cset.size], dtype=np.int64), ids[order], cset]
    return np.concatenate(parts).astype("<i8").tobytes()


class PieceTable:
    """First-encounter registry mapping piece keys to integer IDs.

    The reserved empty key is bound to -1 up front and a fresh ID equals
    the current map size, so real IDs start at 1.
    """

    __slots__ = ("_ids",)

    def __init__(self) -> None:
        self._ids: dict[bytes, int] = {_EMPTY_KEY: _EMPTY_ID}

    def assign(self, key: bytes) -> int:
        got = self._ids.get(key)
        if got is None:
            got = len(self._ids)
            self._ids[key] = got
        return got

    def lookup(self, key: bytes) -> int | None:
        return self._ids.get(key)

    @property
    def num_pieces(self) -> int:
        """IDs issued so far, the reserved empty key excluded."""
        return len(self._ids) - 1

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, key: bytes) -> bool:
        return key in self._ids

    def items(self):
        return self._ids.items()


@dataclass(frozen=True)
class PieceIds:
    """Piece IDs of a dataset.

    neuron_ids  per layer, [num_samples, layer_width] int64
    layer_ids   per layer, [num_samples] int64, or None until
                assign_layer_piece_ids has run
    """

    neuron_ids: tuple[np.ndarray, ...]
    layer_ids: tuple[np.ndarray, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "neuron_ids", tuple(self.neuron_ids))
        if not self.neuron_ids:
            raise DimensionError("need at least one layer of IDs")
        n = self.neuron_ids[0].shape[0]
        for arr in self.neuron_ids:
            if arr.ndim != 2 or arr.shape[0] != n:
                raise DimensionError("per-layer ID arrays disagree on sample count")
        if self.layer_ids is not None:
            object.__setattr__(self, "layer_ids", tuple(self.layer_ids))
            if len(self.layer_ids) != len(self.neuron_ids):
                raise DimensionError("layer_ids must cover every layer")
            for arr in self.layer_ids:
                if arr.shape != (n,):
                    raise DimensionError("layer_ids must hold one ID per sample")

    @property
    def num_samples(self) -> int:
        return self.neuron_ids[0].shape[0]

    @property
    def num_layers(self) -> int:
        return len(self.neuron_ids)


@dataclass(frozen=True)
class CausalPath:
    """Recursive causal history of a neuron subset.

    levels[n] lists (neuron index, causal set) pairs, sorted by neuron,
    for every layer-n neuron reached from the subset; the last level is
    the subset itself and level 0 holds causal sets of raw inputs.
    """

    levels: tuple[tuple[tuple[int, tuple[int, ...]], ...], ...]

    @property
    def depth(self) -> int:
        return len(self.levels)


@dataclass(frozen=True)
class SetSizeStats:
    """Quartile summary of causal-set cardinalities."""

    median: float
    q1: float
    q3: float


# ---------------------------------------------------------------------------
# ID assignment engine
# ---------------------------------------------------------------------------
#
# Internally each neuron's piece is a fixed-width int64 row over the
# layer's inputs: layer 0 stores the 0/1 membership mask, deeper layers
# store the previous-layer ID where the input is a causal member and a
# fill marker elsewhere.  Rows are in bijection with canonical keys, so
# first-encounter numbering over row bytes equals numbering over keys,
# and the canonical table is rebuilt from the distinct rows afterwards.


def _empty_row_key(layer0: bool, n_in: int) -> bytes:
    fill = 0 if layer0 else _FILL
    return np.full(n_in, fill, dtype=np.int64).tobytes()


def _canonical_from_row(row: np.ndarray, layer0: bool) -> bytes:
    if layer0:
        return encode_piece_key(None, np.flatnonzero(row))
    cset = np.flatnonzero(row != _FILL)
    return encode_piece_key(row[cset], cset)


def _assign_rows(rows: np.ndarray, rowmap: dict[bytes, int]) -> np.ndarray:
    """First-encounter IDs for a [num_rows, width] block, shared via rowmap."""
    uniq, first, inv = np.unique(rows, axis=0, return_index=True, return_inverse=True)
    inv = inv.reshape(-1)
    ids = np.empty(len(uniq), dtype=np.int64)
    for pos in np.argsort(first, kind="stable"):
        key = uniq[pos].tobytes()
        got = rowmap.get(key)
        if got is None:
            got = len(rowmap)
            rowmap[key] = got
        ids[pos] = got
    return ids[inv]


def _assign_layer(blocks, layer0: bool, n_in: int, num_samples: int, n_out: int,
                  table: PieceTable) -> np.ndarray:
    rowmap: dict[bytes, int] = {_empty_row_key(layer0, n_in): _EMPTY_ID}
    out = np.empty((num_samples, n_out), dtype=np.int64)
    for lo, hi, rows in blocks:
        out[lo:hi] = _assign_rows(rows.reshape(-1, n_in), rowmap).reshape(hi - lo, n_out)
    for key, pid in rowmap.items():
        if pid != _EMPTY_ID:
            table.assign(_canonical_from_row(np.frombuffer(key, dtype=np.int64), layer0))
    return out


def _batch_blocks(trace: BatchTrace, ell: int, prev: np.ndarray | None):
    act = trace.layers[ell]
    num_samples, n_out = act.times.shape
    n_in = act.rank.shape[1]
    chunk = max(1, _CHUNK_BUDGET // max(1, n_out * n_in))
    for lo in range(0, num_samples, chunk):
        hi = min(num_samples, lo + chunk)
        mask = act.rank[lo:hi, None, :] < act.prefix_len[lo:hi, :, None]
        if ell == 0:
            rows = mask.astype(np.int64)
        else:
            rows = np.where(mask, prev[lo:hi, None, :], _FILL)
        yield lo, hi, rows


def _assign_from_batch(trace: BatchTrace) -> tuple[PieceIds, list[PieceTable]]:
    tables = [PieceTable() for _ in trace.layers]
    neuron_ids: list[np.ndarray] = []
    prev: np.ndarray | None = None
    for ell, act in enumerate(trace.layers):
        num_samples, n_out = act.times.shape
        n_in = act.rank.shape[1]
        ids = _assign_layer(
            _batch_blocks(trace, ell, prev), ell == 0, n_in, num_samples, n_out,
            tables[ell],
        )
        neuron_ids.append(ids)
        prev = ids
    return PieceIds(tuple(neuron_ids)), tables


def _assign_from_list(traces: list[NetworkTrace]) -> tuple[PieceIds, list[PieceTable]]:
    if not traces:
        raise DimensionError("need at least one trace")
    widths = tuple(len(layer) for layer in traces[0].layers)
    n_inputs = len(traces[0].inputs)
    for tr in traces:
        if tuple(len(layer) for layer in tr.layers) != widths or len(tr.inputs) != n_inputs:
            raise DimensionError("traces disagree on topology")

    num_samples = len(traces)
    tables = [PieceTable() for _ in widths]
    neuron_ids: list[np.ndarray] = []
    prev: np.ndarray | None = None
    for ell, n_out in enumerate(widths):
        n_in = n_inputs if ell == 0 else widths[ell - 1]
        fill = 0 if ell == 0 else _FILL
        rows = np.full((num_samples, n_out, n_in), fill, dtype=np.int64)
        for b, tr in enumerate(traces):
            for i, nt in enumerate(tr.layers[ell]):
                cs = list(nt.causal_set)
                if not cs:
                    continue
                if min(cs) < 0 or max(cs) >= n_in:
                    raise DimensionError("causal set index outside the layer's inputs")
                rows[b, i, cs] = 1 if ell == 0 else prev[b, cs]
        ids = _assign_layer(
            [(0, num_samples, rows)], ell == 0, n_in, num_samples, n_out, tables[ell]
        )
        neuron_ids.append(ids)
        prev = ids
    return PieceIds(tuple(neuron_ids)), tables


def assign_neuron_piece_ids(
    traces: BatchTrace | Sequence[NetworkTrace],
) -> tuple[PieceIds, list[PieceTable]]:
    """Per-neuron piece IDs for a dataset of traces.

    Samples are numbered in order, layers inner, neurons innermost, so
    reruns over the same traces are bit-identical.  Layer-0 pieces are
    the raw causal sets; deeper pieces combine the previous-layer IDs
    selected by the causal set with the set itself.  Returns the IDs and
    the per-layer key tables.
    """
    if isinstance(traces, BatchTrace):
        return _assign_from_batch(traces)
    return _assign_from_list(list(traces))


def assign_layer_piece_ids(ids: PieceIds) -> PieceIds:
    """Add layer-level IDs: one fresh ID per distinct tuple of a layer's
    neuron IDs, issued in encounter order starting at 0."""
    layer_ids = []
    for arr in ids.neuron_ids:
        uniq, first, inv = np.unique(arr, axis=0, return_index=True, return_inverse=True)
        inv = inv.reshape(-1)
        rank = np.empty(len(uniq), dtype=np.int64)
        rank[np.argsort(first, kind="stable")] = np.arange(len(uniq))
        layer_ids.append(rank[inv])
    return PieceIds(ids.neuron_ids, tuple(layer_ids))


def _with_layer_ids(ids: PieceIds) -> PieceIds:
    return ids if ids.layer_ids is not None else assign_layer_piece_ids(ids)


def count_pieces(ids: PieceIds, layer: int, include_empty: bool = False) -> int:
    """Distinct layer-level pieces at one layer across the dataset.

    The tuple whose neuron IDs are all -1 (nothing in the layer spiked)
    is excluded unless include_empty is set.
    """
    if not 0 <= layer < ids.num_layers:
        raise DimensionError(f"layer {layer} outside 0..{ids.num_layers - 1}")
    ids = _with_layer_ids(ids)
    lid = ids.layer_ids[layer]
    if not include_empty:
        lid = lid[~np.all(ids.neuron_ids[layer] == _EMPTY_ID, axis=1)]
    return int(np.unique(lid).size)


def count_network_pieces(ids: PieceIds, include_empty: bool = False) -> int:
    """Distinct tuples of all layers' layer-IDs across the dataset.

    Samples silent in every layer are excluded unless include_empty is
    set; a sample spiking anywhere still defines a piece.
    """
    ids = _with_layer_ids(ids)
    stacked = np.stack(ids.layer_ids, axis=1)
    if not include_empty:
        dead = np.ones(ids.num_samples, dtype=bool)
        for arr in ids.neuron_ids:
            dead &= np.all(arr == _EMPTY_ID, axis=1)
        stacked = stacked[~dead]
    if stacked.shape[0] == 0:
        return 0
    return int(np.unique(stacked, axis=0).shape[0])


def causal_path(trace: NetworkTrace, layer: int, subset: Iterable[int]) -> CausalPath:
    """Recursive causal history of `subset` at `layer`, down to the inputs.

    Level by level, every neuron reached is recorded with its causal
    set; piece IDs identify two samples at a neuron exactly when these
    paths coincide, which is what makes this the brute-force oracle.
    """
    if not 0 <= layer < trace.num_layers:
        raise DimensionError(f"layer {layer} outside 0..{trace.num_layers - 1}")
    width = len(trace.layers[layer])
    cur = sorted(set(int(i) for i in subset))
    if cur and (cur[0] < 0 or cur[-1] >= width):
        raise DimensionError("subset indices outside the layer")
    levels = []
    for n in range(layer, -1, -1):
        entries = tuple((i, trace.layers[n][i].causal_set) for i in cur)
        levels.append(entries)
        reached: set[int] = set()
        for _, cs in entries:
            reached.update(cs)
        cur = sorted(reached)
    return CausalPath(tuple(reversed(levels)))


def set_size_stats(
    traces: BatchTrace | Sequence[NetworkTrace],
    layer: int,
    include_empty: bool = True,
) -> SetSizeStats:
    """Quartiles of causal-set sizes over all neurons of one layer.

    Empty sets count as size 0 by default; returns NaNs if exclusion
    leaves nothing to summarize.
    """
    if isinstance(traces, BatchTrace):
        if not 0 <= layer < traces.num_layers:
            raise DimensionError(f"layer {layer} outside 0..{traces.num_layers - 1}")
        sizes = traces.set_sizes(layer).ravel()
    else:
        traces = list(traces)
        if not traces:
            raise DimensionError("need at least one trace")
        if not 0 <= layer < traces[0].num_layers:
            raise DimensionError(f"layer {layer} outside 0..{traces[0].num_layers - 1}")
        sizes = np.array(
            [len(nt.causal_set) for tr in traces for nt in tr.layers[layer]]
        )
    if not include_empty:
        sizes = sizes[sizes > 0]
    if sizes.size == 0:
        nan = float("nan")
        return SetSizeStats(nan, nan, nan)
    q1, med, q3 = np.percentile(sizes, [25.0, 50.0, 75.0])
    return SetSizeStats(float(med), float(q1), float(q3))
