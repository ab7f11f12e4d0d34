"""Tests for piece-ID assignment, counting, and causal paths."""

import numpy as np
import pytest

from causalpieces import (
    DimensionError,
    InputError,
    NetworkParams,
    NetworkTrace,
    NeuronTrace,
    WeightStack,
    assign_layer_piece_ids,
    assign_neuron_piece_ids,
    causal_path,
    count_network_pieces,
    count_pieces,
    encode_piece_key,
    forward_batch,
    forward_network,
    set_size_stats,
)
from causalpieces.pieces import PieceIds, PieceTable, _EMPTY_KEY

PARAMS = NetworkParams()


def make_trace(n_inputs, csets_per_layer):
    """Hand-build a NetworkTrace; only the causal sets matter here."""
    layers = []
    for csets in csets_per_layer:
        layers.append(tuple(
            NeuronTrace(1.0 if cs else PARAMS.t_inf, tuple(cs),
                        2.0 if cs else 0.0, 3.0 if cs else 0.0)
            for cs in csets
        ))
    return NetworkTrace(np.zeros(n_inputs), tuple(layers))


def random_traces(rng, sizes, num_samples, mu=0.5, sigma=0.8):
    mats = [rng.normal(mu, sigma, (sizes[i + 1], sizes[i])) for i in range(len(sizes) - 1)]
    ws = WeightStack(mats)
    x = rng.uniform(0, 1, (num_samples, sizes[0]))
    return [forward_network(PARAMS, ws, xb) for xb in x], ws, x


def oracle_assign(traces):
    """Literal first-encounter assignment: samples outer, layers inner,
    neurons innermost, tuple-valued keys.  Independent of the package's
    byte encoding and row batching."""
    num_layers = traces[0].num_layers
    widths = [len(traces[0].layers[ell]) for ell in range(num_layers)]
    ids = [np.empty((len(traces), w), dtype=np.int64) for w in widths]
    tables = [{} for _ in range(num_layers)]
    for b, tr in enumerate(traces):
        for ell in range(num_layers):
            for i, nt in enumerate(tr.layers[ell]):
                cset = nt.causal_set
                if not cset:
                    ids[ell][b, i] = -1
                    continue
                if ell == 0:
                    key = cset
                else:
                    key = (tuple(int(ids[ell - 1][b, j]) for j in cset), cset)
                tab = tables[ell]
                if key not in tab:
                    tab[key] = len(tab) + 1
                ids[ell][b, i] = tab[key]
    return ids, tables


class TestEncodePieceKey:
    def test_empty_is_reserved(self):
        assert encode_piece_key(None, []) == _EMPTY_KEY
        assert encode_piece_key([], []) == _EMPTY_KEY

    def test_concatenation_ambiguity(self):
        assert encode_piece_key(None, [1, 23]) != encode_piece_key(None, [12, 3])

    def test_ids_and_set_do_not_blur(self):
        a = encode_piece_key([1, 2], [3, 4])
        b = encode_piece_key([1, 3], [2, 4])
        assert a != b

    def test_canonical_order(self):
        assert encode_piece_key([9, 8], [4, 3]) == encode_piece_key([8, 9], [3, 4])
        assert encode_piece_key(None, [2, 0, 1]) == encode_piece_key(None, [0, 1, 2])

    def test_duplicate_member_rejected(self):
        with pytest.raises(InputError):
            encode_piece_key(None, [1, 1])

    def test_id_count_mismatch(self):
        with pytest.raises(DimensionError):
            encode_piece_key([1], [2, 3])

    def test_negative_index_rejected(self):
        with pytest.raises(InputError):
            encode_piece_key(None, [-1])


class TestPieceTable:
    def test_numbering(self):
        t = PieceTable()
        assert t.lookup(_EMPTY_KEY) == -1
        k1 = encode_piece_key(None, [0])
        k2 = encode_piece_key(None, [1])
        assert t.assign(k1) == 1
        assert t.assign(k2) == 2
        assert t.assign(k1) == 1
        assert t.num_pieces == 2
        assert len(t) == 3


class TestAssignNeuronIds:
    def test_identical_samples_identical_ids(self):
        tr = make_trace(2, [[(0,), (0, 1)], [(0, 1)]])
        ids, tables = assign_neuron_piece_ids([tr, tr])
        for arr in ids.neuron_ids:
            assert np.array_equal(arr[0], arr[1])
        assert tables[0].num_pieces == 2
        assert tables[1].num_pieces == 1

    def test_nonspiking_neuron_is_minus_one(self):
        tr = make_trace(2, [[(0,), ()], [(0,)]])
        ids, _ = assign_neuron_piece_ids([tr])
        assert ids.neuron_ids[0][0, 1] == -1
        assert ids.neuron_ids[0][0, 0] == 1

    def test_first_encounter_numbering(self):
        t_a = make_trace(2, [[(0,)]])
        t_b = make_trace(2, [[(1,)]])
        ids, _ = assign_neuron_piece_ids([t_a, t_b, t_a])
        assert ids.neuron_ids[0][:, 0].tolist() == [1, 2, 1]

    def test_selected_hidden_ids_drive_output_ids(self):
        # same output causal set everywhere; output IDs must differ exactly
        # when the hidden IDs selected by that set differ
        hidden_variants = [
            [(0,), (1,)],
            [(0, 1), (1,)],
            [(0,), (0, 1)],
            [(0,), (1,)],
        ]
        traces = [make_trace(2, [h, [(0, 1)]]) for h in hidden_variants]
        ids, _ = assign_neuron_piece_ids(traces)
        keys = [tuple(ids.neuron_ids[0][b]) for b in range(4)]
        out = ids.neuron_ids[1][:, 0]
        for a in range(4):
            for b in range(4):
                assert (out[a] == out[b]) == (keys[a] == keys[b])

    def test_matches_literal_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(10):
            sizes = [int(rng.integers(1, 5)) for _ in range(int(rng.integers(2, 5)))]
            traces, _, _ = random_traces(rng, sizes, 40)
            ids, tables = assign_neuron_piece_ids(traces)
            ref_ids, ref_tables = oracle_assign(traces)
            for ell in range(len(sizes) - 1):
                assert np.array_equal(ids.neuron_ids[ell], ref_ids[ell])
                assert tables[ell].num_pieces == len(ref_tables[ell])

    def test_batch_trace_matches_trace_list(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            sizes = [int(rng.integers(1, 5)) for _ in range(int(rng.integers(2, 5)))]
            traces, ws, x = random_traces(rng, sizes, 60)
            ids_a, tab_a = assign_neuron_piece_ids(traces)
            ids_b, tab_b = assign_neuron_piece_ids(forward_batch(PARAMS, ws, x))
            for ell in range(len(sizes) - 1):
                assert np.array_equal(ids_a.neuron_ids[ell], ids_b.neuron_ids[ell])
                assert list(tab_a[ell].items()) == list(tab_b[ell].items())

    def test_determinism(self):
        rng = np.random.default_rng(11)
        traces, _, _ = random_traces(rng, [3, 4, 2], 30)
        a, tab_a = assign_neuron_piece_ids(traces)
        b, tab_b = assign_neuron_piece_ids(traces)
        for ell in range(2):
            assert np.array_equal(a.neuron_ids[ell], b.neuron_ids[ell])
            assert list(tab_a[ell].items()) == list(tab_b[ell].items())

    def test_topology_mismatch(self):
        t_a = make_trace(2, [[(0,)]])
        t_b = make_trace(3, [[(0,)]])
        with pytest.raises(DimensionError):
            assign_neuron_piece_ids([t_a, t_b])
        with pytest.raises(DimensionError):
            assign_neuron_piece_ids([])


class TestLayerIds:
    def test_all_identical_one_id_per_layer(self):
        tr = make_trace(2, [[(0,), (1,)], [(0, 1)]])
        ids = assign_layer_piece_ids(assign_neuron_piece_ids([tr, tr, tr])[0])
        for arr in ids.layer_ids:
            assert np.unique(arr).tolist() == [0]

    def test_single_neuron_flip_isolated_to_its_layer(self):
        t_a = make_trace(2, [[(0,), (1,)], [(0,), (0, 1)]])
        t_b = make_trace(2, [[(0,), (1,)], [(0,), (1,)]])
        ids = assign_layer_piece_ids(assign_neuron_piece_ids([t_a, t_b])[0])
        assert ids.layer_ids[0][0] == ids.layer_ids[0][1]
        assert ids.layer_ids[1][0] != ids.layer_ids[1][1]

    def test_encounter_order_starts_at_zero(self):
        t_a = make_trace(2, [[(0,)]])
        t_b = make_trace(2, [[(1,)]])
        ids = assign_layer_piece_ids(assign_neuron_piece_ids([t_b, t_a, t_b])[0])
        assert ids.layer_ids[0].tolist() == [0, 1, 0]

    def test_monotone_refinement(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            traces, _, _ = random_traces(rng, [3, 4, 3], 50)
            ids = assign_layer_piece_ids(assign_neuron_piece_ids(traces)[0])
            for ell in range(2):
                layer_distinct = np.unique(ids.layer_ids[ell]).size
                for i in range(ids.neuron_ids[ell].shape[1]):
                    assert layer_distinct >= np.unique(ids.neuron_ids[ell][:, i]).size


class TestCounting:
    def test_single_sample(self):
        tr = make_trace(2, [[(0,), (1,)], [(0, 1)]])
        ids, _ = assign_neuron_piece_ids([tr])
        assert count_pieces(ids, 0) == 1
        assert count_pieces(ids, 1) == 1
        assert count_network_pieces(ids) == 1

    def test_all_silent_layer(self):
        tr = make_trace(2, [[(), ()], [()]])
        ids, _ = assign_neuron_piece_ids([tr, tr])
        assert count_pieces(ids, 0) == 0
        assert count_pieces(ids, 0, include_empty=True) == 1
        assert count_network_pieces(ids) == 0
        assert count_network_pieces(ids, include_empty=True) == 1

    def test_partial_silence_still_counts(self):
        # silent output but active hidden layer: the sample keeps a piece
        tr = make_trace(2, [[(0,), ()], [()]])
        ids, _ = assign_neuron_piece_ids([tr])
        assert count_pieces(ids, 1) == 0
        assert count_network_pieces(ids) == 1

    def test_layer_out_of_range(self):
        tr = make_trace(2, [[(0,)]])
        ids, _ = assign_neuron_piece_ids([tr])
        with pytest.raises(DimensionError):
            count_pieces(ids, 1)

    def test_sample_order_invariance(self):
        rng = np.random.default_rng(17)
        traces, _, _ = random_traces(rng, [3, 4, 2], 60)
        ids = assign_neuron_piece_ids(traces)[0]
        perm = rng.permutation(len(traces))
        ids_p = assign_neuron_piece_ids([traces[k] for k in perm])[0]
        for ell in range(2):
            assert count_pieces(ids, ell) == count_pieces(ids_p, ell)
        assert count_network_pieces(ids) == count_network_pieces(ids_p)

    def test_grid_count_matches_path_oracle(self):
        # distinct output-layer pieces == distinct causal paths from the output
        rng = np.random.default_rng(19)
        ws = WeightStack([rng.normal(0.8, 0.8, (2, 2)), rng.normal(0.8, 0.8, (1, 2))])
        g = np.linspace(0.0, 1.0, 50)
        xx, yy = np.meshgrid(g, g)
        x = np.column_stack([xx.ravel(), yy.ravel()])
        bt = forward_batch(PARAMS, ws, x)
        ids, _ = assign_neuron_piece_ids(bt)
        paths = set()
        spiked = 0
        for b in range(x.shape[0]):
            tr = bt.sample_trace(b)
            if tr.layers[1][0].spiked:
                spiked += 1
                paths.add(causal_path(tr, 1, (0,)))
        assert spiked > 0
        assert count_pieces(ids, 1) == len(paths)


class TestCausalPath:
    def test_single_neuron_net(self):
        tr = make_trace(3, [[(0, 2)]])
        p = causal_path(tr, 0, (0,))
        assert p.levels == (((0, (0, 2)),),)

    def test_empty_subset(self):
        tr = make_trace(2, [[(0,), (1,)], [(0, 1)]])
        p = causal_path(tr, 1, ())
        assert p.levels == ((), ())

    def test_manual_unrolling(self):
        tr = make_trace(2, [[(0,), (0, 1)], [(0, 1)]])
        p = causal_path(tr, 1, (0,))
        assert p.levels == (
            ((0, (0,)), (1, (0, 1))),
            ((0, (0, 1)),),
        )

    def test_subset_out_of_range(self):
        tr = make_trace(2, [[(0,)]])
        with pytest.raises(DimensionError):
            causal_path(tr, 0, (1,))

    def test_id_equality_iff_path_equality(self):
        rng = np.random.default_rng(23)
        for _ in range(6):
            sizes = [int(rng.integers(1, 5)) for _ in range(int(rng.integers(2, 4)))]
            traces, _, _ = random_traces(rng, sizes, 100)
            ids, _ = assign_neuron_piece_ids(traces)
            for ell in range(len(sizes) - 1):
                for i in range(sizes[ell + 1]):
                    by_path = {}
                    by_id = {}
                    for b, tr in enumerate(traces):
                        p = causal_path(tr, ell, (i,))
                        n = int(ids.neuron_ids[ell][b, i])
                        assert by_path.setdefault(p, n) == n
                        assert by_id.setdefault(n, p) == p


class TestSetSizeStats:
    def test_constant_sizes(self):
        tr = make_trace(3, [[(0, 1), (1, 2)]])
        s = set_size_stats([tr, tr], 0)
        assert s.median == 2.0
        assert s.q1 == 2.0 and s.q3 == 2.0

    def test_mixed_sizes(self):
        traces = [
            make_trace(30, [[()]]),
            make_trace(30, [[tuple(range(10))]]),
            make_trace(30, [[tuple(range(30))]]),
        ]
        assert set_size_stats(traces, 0).median == 10.0

    def test_exclude_empty(self):
        traces = [make_trace(2, [[()]]), make_trace(2, [[(0, 1)]])]
        assert set_size_stats(traces, 0).median == 1.0
        assert set_size_stats(traces, 0, include_empty=False).median == 2.0
        silent = [make_trace(2, [[()]])]
        assert np.isnan(set_size_stats(silent, 0, include_empty=False).median)

    def test_batch_matches_list(self):
        rng = np.random.default_rng(29)
        traces, ws, x = random_traces(rng, [3, 5, 2], 40)
        bt = forward_batch(PARAMS, ws, x)
        for ell in range(2):
            a = set_size_stats(traces, ell)
            b = set_size_stats(bt, ell)
            assert (a.median, a.q1, a.q3) == (b.median, b.q1, b.q3)


class TestPieceIdsContainer:
    def test_shape_validation(self):
        with pytest.raises(DimensionError):
            PieceIds((np.zeros((2, 3), dtype=np.int64), np.zeros((3, 2), dtype=np.int64)))
        with pytest.raises(DimensionError):
            PieceIds(
                (np.zeros((2, 3), dtype=np.int64),),
                (np.zeros(3, dtype=np.int64),),
            )

    def test_properties(self):
        ids = PieceIds((np.zeros((4, 3), dtype=np.int64),))
        assert ids.num_samples == 4
        assert ids.num_layers == 1
