import io
import math

import numpy as np
import pytest

from toxconv import features as F
from toxconv import metrics as M
from toxconv.model import follow_graph_project, prefix, reply_graph_from_tree
from toxconv.stats import summarize

from conftest import P, store, tree_of

PCAT = F.FeatureCatalog.all("prefix")
NCAT = F.FeatureCatalog.all("next_reply")


def ctx_of(friends=None, followers=None, alignments=None):
    return F.Context(store(friends or {}, followers), alignments or {}, 0.531)


def small_prefix_tree():
    return tree_of(P("r", "A", None, 0, tox=0.1), P("a", "B", "r", 60, tox=0.2), P("b", "C", "a", 120, tox=0.9),
                   P("c", "B", "b", 200, tox=0.3))


# ---------------------------------------------------------------- catalog and vectors


def test_catalog_parse_and_order():
    assert F.FeatureCatalog.parse("prefix", "all").sets == F.PREFIX_SETS
    assert F.FeatureCatalog.parse("prefix", "content").sets == ("content_toxicity",)
    assert "content_toxicity" not in F.FeatureCatalog.parse("prefix", "structure").sets
    assert F.FeatureCatalog.parse("prefix", "rate,arrival").sets == ("arrival", "rate")
    with pytest.raises(ValueError):
        F.FeatureCatalog("prefix", ())
    with pytest.raises(ValueError):
        F.FeatureCatalog.parse("prefix", "user_info")


def test_pair_difference_examples():
    cat = F.FeatureCatalog("prefix", ("rate",))
    a = F.FeatureVector(["x", "y"], [3, np.nan], cat)
    b = F.FeatureVector(["x", "y"], [1, 5], cat)
    d = F.pair_difference(a, b)
    assert d["x"] == 2 and math.isnan(d["y"])
    assert np.all(F.pair_difference(b, b).values == 0)
    with pytest.raises(F.CatalogMismatch):
        F.pair_difference(a, F.FeatureVector(["x", "y"], [1, 5], F.FeatureCatalog("prefix", ("arrival",))))


def test_feature_vector_rejects_duplicates():
    with pytest.raises(ValueError):
        F.FeatureVector(["x", "x"], [1, 2], PCAT)


def test_user_alignment_examples():
    table = {"d1": 0.8, "d2": -0.2, "d3": -0.5}
    assert F.user_alignment(["d1", "d2"], table) == pytest.approx(0.3)
    assert F.leaning(0.3) == "right"
    assert F.user_alignment([], table) is None and F.leaning(None) is None
    assert F.user_alignment(["d3"], table) == -0.5 and F.leaning(-0.5) == "left"
    assert F.user_alignment(["D1", "unknown"], table) == 0.8


# ---------------------------------------------------------------- prefix features


def test_content_example_and_stats_consistency():
    t = tree_of(P("r", "A", tox=0.1), P("a", "B", "r", 1, tox=0.2), P("b", "C", "a", 2, tox=0.9))
    cat = F.FeatureCatalog("prefix", ("content_toxicity",))
    v = F.prefix_features(prefix(t, 2), ctx_of(), cat)
    assert v["content.mean"] == pytest.approx(0.4)
    ref = summarize([0.1, 0.2, 0.9], ("mean", "std", "min", "max", "q1", "median", "q3"))
    assert v.as_dict() == {f"content.{k}": x for k, x in ref.items()}


def test_arrival_and_rate_examples():
    t = tree_of(P("r", "A", None, 0), P("a", "B", "r", 60), P("b", "C", "a", 120), P("c", "B", "b", 200))
    v = F.prefix_features(prefix(t, 3), ctx_of(), F.FeatureCatalog("prefix", ("arrival", "rate")))
    assert [v[f"arrival.temporal_id_{i}"] for i in (1, 2, 3)] == [1, 2, 1]
    assert [v[f"arrival.unique_users_{i}"] for i in (1, 2, 3)] == [1, 2, 2]
    v = F.prefix_features(prefix(t, 2), ctx_of(), F.FeatureCatalog("prefix", ("rate",)))
    assert v["rate.root_to_2"] == 120 and v["rate.mean_gap"] == 60


def test_prefix_undefined_features_are_nan():
    t = tree_of(P("r", "A"), P("a", "B", "r", 1))
    v = F.prefix_features(prefix(t, 1), ctx_of(), F.FeatureCatalog("prefix", ("rate", "reply_graph")))
    assert math.isnan(v["rate.mean_gap_second_half"])
    # a single reply edge: the degree variance is defined, assortativity is not
    assert not math.isnan(v["reply.in_degree.var"])
    assert math.isnan(v["reply.degree_assortativity"])


def test_empty_prefix_and_wrong_catalog():
    t = tree_of(P("r", "A"))
    with pytest.raises(F.EmptyPrefix):
        F.prefix_features(prefix(t, 1), ctx_of(), PCAT)
    with pytest.raises(F.CatalogMismatch):
        F.prefix_features(prefix(small_prefix_tree(), 2), ctx_of(), NCAT)


def test_graph_features_match_metrics():
    t = small_prefix_tree()
    friends = {"A": {"B", "C"}, "B": {"A"}, "C": {"B", "x"}}
    ctx = ctx_of(friends, {"A": 5, "B": 2, "C": 9})
    pre = prefix(t, 3)
    v = F.prefix_features(pre, ctx, PCAT)
    follow = follow_graph_project(pre.tree.participants(), ctx.snapshots, 200)
    reply = reply_graph_from_tree(pre.tree)
    assert v["follow.density"] == M.density(follow)
    assert v["reply.density"] == M.density(reply)
    assert v["follow.modularity"] == M.louvain(follow, seed=0).modularity
    assert v["follow.centralization_betweenness_undir"] == M.centralization(follow, "betweenness", False)
    assert v["follow.algebraic_connectivity"] == M.algebraic_connectivity(M.largest_component(follow))
    assert v["follow.2core.n_nodes"] == len(M.k_core(follow, 2).nodes)
    assert v["tree.wiener"] == M.wiener_index(pre.tree)
    census = M.dyad_triad_census(follow)
    for ty in M.TRIAD_TYPES:
        assert v[f"census.follow.triad_{ty}"] == census.triads[ty]
    e = M.embeddedness("A", "C", ctx.friends(["A", "C"], 200))
    assert v["emb.all.count.mean"] == pytest.approx(np.mean([
        M.embeddedness(a, b, ctx.friends("ABC", 200)).count for a, b in (("A", "B"), ("A", "C"), ("B", "C"))]))
    assert e.count == 1
    assert v["follow.followers.mean"] == pytest.approx(16 / 3)


def test_prefix_names_deterministic(small_corpus):
    ctx = F.context_for(small_corpus)
    trees = [t for t in small_corpus.trees if len(t.replies()) >= 10][:3]
    names = {F.prefix_features(prefix(t, 10), ctx, PCAT).names for t in trees}
    assert len(names) == 1
    buf1, buf2 = io.StringIO(), io.StringIO()
    for buf in (buf1, buf2):
        vs = [F.prefix_features(prefix(t, 10), ctx, PCAT) for t in trees]
        F.write_matrix(buf, vs[0].names, np.vstack([x.values for x in vs]))
    assert buf1.getvalue() == buf2.getvalue()


def test_matrix_round_trip():
    buf = io.StringIO()
    X = np.array([[1.5, np.nan], [0.1, -2.0]])
    F.write_matrix(buf, ["a", "b"], X, [("group", ["g1", "g2"])])
    assert buf.getvalue().splitlines()[1] == "g1,1.5,"
    names, extras, Y = F.read_matrix(io.StringIO(buf.getvalue()), 1)
    assert names == ["a", "b"] and extras == {"group": ["g1", "g2"]}
    np.testing.assert_array_equal(np.isnan(X), np.isnan(Y))
    np.testing.assert_array_equal(np.nan_to_num(X), np.nan_to_num(Y))


# ---------------------------------------------------------------- next reply features


def test_next_reply_examples():
    t = small_prefix_tree()
    friends = {"A": {"a", "b", "D"}, "B": {"A"}, "C": {"B"}, "D": {"a", "b", "c", "A", "x"}}
    ctx = ctx_of(friends)
    v = F.next_reply_features(t, "D", "r", ctx, NCAT)
    assert v["state.n_toxic_from_user"] == 0 and v["state.n_replies"] == 3
    assert v["state.n_toxic"] == 1
    assert v["parent.edge_mutual"] == 1.0 and v["parent.edge_none"] == 0.0
    # D and A share {a, b}; union is {a, b, c, x, A, D} minus ... compute with set arithmetic
    fa, fd = friends["A"], friends["D"]
    assert v["parent.common_friends"] == len(fa & fd)
    assert v["parent.common_friends_fraction"] == pytest.approx(len(fa & fd) / len(fa | fd))
    assert v["position.depth"] == 1 and v["position.siblings"] == 1


def test_common_friend_fraction_half():
    t = tree_of(P("r", "A"), P("a", "B", "r", 1))
    ctx = ctx_of({"A": {"a", "b", "c"}, "U": {"a", "b", "d"}})
    v = F.next_reply_features(t, "U", "r", ctx, F.FeatureCatalog("next_reply", ("user_root",)))
    assert v["root.common_friends"] == 2 and v["root.common_friends_fraction"] == 0.5


def test_next_reply_position_and_errors():
    t = small_prefix_tree()
    v = F.next_reply_features(t, "D", "b", ctx_of(), F.FeatureCatalog("next_reply", ("reply_tree",)))
    assert v["position.depth"] == 3
    assert v["position.subtree_size"] == 3 and v["position.subtree_fraction"] == 0.75
    with pytest.raises(F.UnknownParent):
        F.next_reply_features(t, "D", "zzz", ctx_of(), NCAT)
    with pytest.raises(F.CatalogMismatch):
        F.next_reply_features(t, "D", "r", ctx_of(), PCAT)


def test_next_reply_state_counts_user_history():
    t = small_prefix_tree()
    v = F.next_reply_features(t, "C", "c", ctx_of(), F.FeatureCatalog("next_reply", ("conversation_state",)))
    assert v["state.n_from_user"] == 1 and v["state.n_toxic_from_user"] == 1
    assert v["state.n_to_user"] == 1 and v["state.n_toxic_to_user"] == 0


def test_next_reply_centrality_delta_matches_metrics():
    t = small_prefix_tree()
    friends = {"A": {"B"}, "B": {"A", "C"}, "C": {"A"}, "D": {"B"}}
    ctx = ctx_of(friends)
    v = F.next_reply_features(t, "D", "a", ctx, F.FeatureCatalog("next_reply", ("user_parent",)), at=300)
    g = follow_graph_project({"A", "B", "C", "D"}, ctx.snapshots, 300)
    pr = M.centrality(g, "pagerank", True)
    assert v["parent.delta_follow_pagerank_dir"] == pytest.approx(pr["D"] - pr["B"])
    assert v["parent.edge_child_follows_parent"] == 1.0


def test_next_reply_names_fixed(small_corpus):
    ctx = F.context_for(small_corpus)
    t = next(t for t in small_corpus.trees if len(t.replies()) >= 5)
    reps = t.replies()
    n1 = F.next_reply_features(t, reps[0].author, t.root.id, ctx, NCAT).names
    n2 = F.next_reply_features(t, "nobody", reps[3].id, ctx, NCAT).names
    assert n1 == n2
