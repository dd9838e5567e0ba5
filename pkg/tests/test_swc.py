import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from persimorph.errors import (
    CycleDetected,
    DanglingParent,
    DuplicateId,
    EmptyFile,
    EmptyFitSet,
    MalformedLine,
    MultipleRoots,
    NoRoot,
)
from persimorph.swc import (
    SwcRecord,
    build_tree,
    compute_node_features,
    fit_and_apply_zscore,
    fit_zscore,
    load_tree,
    parse_swc,
    path_lengths,
    serialize_swc,
    tree_from_arrays,
    write_swc,
)

from helpers import dijkstra_path_lengths, random_tree


def rec(i, parent, xyz=(0.0, 0.0, 0.0), r=1.0, t=3):
    return SwcRecord(i, t, *xyz, r, parent)


class TestParse:
    def test_single_root_line(self):
        assert parse_swc("1 1 0 0 0 1.0 -1") == [SwcRecord(1, 1, 0.0, 0.0, 0.0, 1.0, -1)]

    def test_comments_and_blank_lines_skipped(self):
        text = "#comment\n\n1 1 0 0 0 1.0 -1\n  # indented comment\n2 3 1 0 0 0.5 1\n"
        recs = parse_swc(text)
        assert len(recs) == 2
        assert recs[1].parent_id == 1

    def test_field_count_violation(self):
        with pytest.raises(MalformedLine) as e:
            parse_swc("1 1 0 0")
        assert e.value.lineno == 1

    def test_line_numbers_count_comments(self):
        with pytest.raises(MalformedLine) as e:
            parse_swc("# header\n1 1 0 0 0 1 -1\n2 3 x 0 0 1 1\n")
        assert e.value.lineno == 3

    @pytest.mark.parametrize("line", [
        "0 1 0 0 0 1 -1",
        "1 1 0 0 nan 1 -1",
        "1 1 0 0 inf 1 -1",
        "1 1 0 0 0 -0.5 -1",
        "1.5 1 0 0 0 1 -1",
    ])
    def test_invalid_values(self, line):
        with pytest.raises(MalformedLine):
            parse_swc(line)

    def test_integer_valued_floats_accepted(self):
        assert parse_swc("1.0 1.0 0 0 0 1 -1.0")[0] == SwcRecord(1, 1, 0.0, 0.0, 0.0, 1.0, -1)

    def test_duplicate_id(self):
        with pytest.raises(DuplicateId) as e:
            parse_swc("1 1 0 0 0 1 -1\n1 3 1 0 0 1 1\n")
        assert e.value.node_id == 1

    @pytest.mark.parametrize("text", ["", "# only comments\n\n"])
    def test_empty(self, text):
        with pytest.raises(EmptyFile):
            parse_swc(text)

    def test_accepts_streams_and_line_lists(self):
        text = "1 1 0 0 0 1 -1\n2 3 1 0 0 1 1\n"
        assert parse_swc(io.StringIO(text)) == parse_swc(text) == parse_swc(text.splitlines())

    def test_malformed_is_a_value_error(self):
        with pytest.raises(ValueError):
            parse_swc("garbage")


class TestBuildTree:
    def test_two_leaf_star(self):
        t = build_tree([rec(1, -1), rec(2, 1), rec(3, 1)])
        assert t.root_id == 1
        assert t.children[1] == (2, 3)
        assert t.leaves == [2, 3]
        assert t.parent(2) == 1 and t.parent(1) is None

    def test_two_cycle(self):
        with pytest.raises(CycleDetected) as e:
            build_tree([rec(1, -1), rec(2, 3), rec(3, 2)])
        assert set(e.value.node_ids) == {2, 3}

    def test_multiple_roots(self):
        with pytest.raises(MultipleRoots) as e:
            build_tree([rec(1, -1), rec(2, -1)])
        assert e.value.root_ids == (1, 2)

    def test_no_root(self):
        with pytest.raises(NoRoot):
            build_tree([rec(1, 2), rec(2, 1)])

    def test_dangling_parent(self):
        with pytest.raises(DanglingParent) as e:
            build_tree([rec(1, -1), rec(2, 7)])
        assert (e.value.node_id, e.value.parent_id) == (2, 7)

    def test_out_of_order_ids(self):
        t = build_tree([rec(10, 4), rec(4, -1), rec(7, 10), rec(5, 4)])
        assert t.order == (4, 10, 5, 7)
        np.testing.assert_array_equal(t.parent_index, [-1, 0, 0, 1])

    def test_heights(self):
        t = build_tree([rec(1, -1), rec(2, 1), rec(3, 2), rec(4, 1)])
        assert t.order == (1, 2, 4, 3)
        np.testing.assert_array_equal(t.heights, [2, 1, 0, 0])

    def test_cached_arrays_are_read_only(self):
        t = build_tree([rec(1, -1), rec(2, 1)])
        with pytest.raises(ValueError):
            t.xyz[0, 0] = 1.0


class TestSerialize:
    def test_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        t = random_tree(rng, 40)
        text = serialize_swc(t, header="generated")
        t2 = build_tree(parse_swc(text))
        assert t2 == t
        assert serialize_swc(t2, header="generated") == text
        path = tmp_path / "n.swc"
        write_swc(t, path)
        assert load_tree(path) == t
        assert load_tree(path).name == "n"

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=3, max_size=3))
    def test_float_repr_survives(self, xyz):
        t = tree_from_arrays([-1, 0], np.array([[0.0, 0.0, 0.0], xyz]), [1.0, 0.25])
        t2 = build_tree(parse_swc(serialize_swc(t)))
        assert t2.xyz.tobytes() == t.xyz.tobytes()


class TestNodeFeatures:
    def test_pythagorean_edge(self):
        t = tree_from_arrays([-1, 0], np.array([[0, 0, 0], [3, 4, 0]], float), [1, 1])
        np.testing.assert_array_equal(path_lengths(t), [0.0, 5.0])

    def test_collinear_chain(self):
        t = tree_from_arrays([-1, 0, 1], np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], float), [1, 1, 1])
        np.testing.assert_array_equal(compute_node_features(t).values[:, 4], [0.0, 1.0, 2.0])

    def test_matches_dijkstra(self):
        rng = np.random.default_rng(20)
        for _ in range(10):
            t = random_tree(rng, 20)
            np.testing.assert_allclose(path_lengths(t), dijkstra_path_lengths(t), rtol=1e-12, atol=1e-12)

    def test_feature_columns(self):
        rng = np.random.default_rng(1)
        t = random_tree(rng, 12)
        nf = compute_node_features(t)
        assert nf.values.shape == (12, 5)
        np.testing.assert_array_equal(nf.values[:, :3], t.xyz)
        np.testing.assert_array_equal(nf.values[:, 3], t.radii)
        assert nf.node_ids == t.order
        assert not nf.normalized

    def test_path_length_strictly_increasing(self):
        rng = np.random.default_rng(2)
        t = random_tree(rng, 30)
        pl = path_lengths(t)
        p = t.parent_index
        assert pl[0] == 0.0
        assert np.all(pl[1:] > pl[p[1:]])


class TestZScore:
    def test_population_std(self):
        t = tree_from_arrays([-1, 0], np.array([[0, 5, 0], [2, 5, 0]], float), [1, 1])
        out, stats = fit_and_apply_zscore([compute_node_features(t)])
        np.testing.assert_array_equal(out[0].values[:, 0], [-1.0, 1.0])
        assert stats.mean[0] == 1.0 and stats.std[0] == 1.0

    def test_constant_column_centred(self):
        t = tree_from_arrays([-1, 0], np.array([[0, 5, 0], [2, 5, 0]], float), [1, 1])
        out, stats = fit_and_apply_zscore([compute_node_features(t)])
        np.testing.assert_array_equal(out[0].values[:, 1], [0.0, 0.0])
        assert stats.degenerate[1]
        assert np.all(np.isfinite(out[0].values))

    def test_fit_subset_only(self):
        rng = np.random.default_rng(5)
        feats = [compute_node_features(random_tree(rng, 10)) for _ in range(4)]
        out, stats = fit_and_apply_zscore(feats, fit_set=[0, 1])
        ref = fit_zscore(feats[:2])
        np.testing.assert_array_equal(stats.mean, ref.mean)
        assert len(out) == 4
        assert all(o.normalized for o in out)
        mask_out, mask_stats = fit_and_apply_zscore(feats, fit_set=np.array([True, True, False, False]))
        np.testing.assert_array_equal(mask_stats.std, ref.std)

    def test_empty_fit_set(self):
        with pytest.raises(EmptyFitSet):
            fit_zscore([])

    def test_stats_dict_round_trip(self):
        rng = np.random.default_rng(6)
        stats = fit_zscore([compute_node_features(random_tree(rng, 10))])
        back = type(stats).from_dict(stats.to_dict())
        np.testing.assert_array_equal(back.mean, stats.mean)
        np.testing.assert_array_equal(back.degenerate, stats.degenerate)
