"""Edge weights, adjacency assembly, and graph convolution.

The frozen constants below are hand-derived:

edge weight: ped box (0,0,2,2) and object box (1,1,3,3) give the relation
[1,1,1,1,1,1,3,3]; with v_a=[1,-1] the concatenated v_i sums to 12, so a
proj_i of (+0.1 | -0.1) columns gives ReLU([1.2,-1.2]) = [1.2, 0]. With
v_o=[0.5,2] and proj_o=[[1,1],[0.5,-1]], ReLU([1.5,-1.5]) = [1.5, 0];
the inner product is 1.8 and sigmoid(1.8) = 0.8581489350995123.

one conv layer, one object: A=[[1,.5],[.5,1]], X=[[1,2],[3,-1]],
W=[[1,0],[2,1]] gives AX=[[2.5,1.5],[3.5,0]] and AXW=[[5.5,1.5],[3.5,0]].
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intent_graph import autodiff as ad
from intent_graph.autodiff import GradientTape, Tensor, finite_diff_check
from intent_graph.graph import (
    EdgeWeightParams,
    GraphConvParams,
    build_adjacency,
    context_vector,
    edge_weight,
    graph_conv,
    location_centric_edge,
    star_graph,
)
from intent_graph.scene import BoundingBox, spatial_relation

SIGMOID_1_8 = 0.8581489350995123


def _edge_params(tape=None):
    proj_i = np.hstack([np.full((10, 1), 0.1), np.full((10, 1), -0.1)])
    proj_o = np.array([[1.0, 1.0], [0.5, -1.0]])
    if tape is None:
        return EdgeWeightParams(Tensor(proj_i), Tensor(proj_o))
    return EdgeWeightParams(tape.parameter("proj_i", proj_i), tape.parameter("proj_o", proj_o))


def test_edge_weight_frozen_value():
    s = spatial_relation(BoundingBox(0, 0, 2, 2), BoundingBox(1, 1, 3, 3))
    w = edge_weight(Tensor([1.0, -1.0]), s, Tensor([0.5, 2.0]), _edge_params())
    assert w.shape == (1, 1)
    assert w.item() == pytest.approx(SIGMOID_1_8, abs=1e-15)


def test_edge_weight_gradient_reaches_both_projections():
    s = spatial_relation(BoundingBox(0, 0, 2, 2), BoundingBox(1, 1, 3, 3))

    def f(values):
        tape = GradientTape()
        p = EdgeWeightParams(
            tape.parameter("proj_i", values["proj_i"]),
            tape.parameter("proj_o", values["proj_o"]),
        )
        return edge_weight(Tensor([1.0, -1.0]), s, Tensor([0.5, 2.0]), p)

    report = finite_diff_check(
        f, {"proj_i": _edge_params().proj_i.data, "proj_o": _edge_params().proj_o.data}
    )
    assert report.passed, report.to_dict()


def test_location_centric_edge_skips_relu_and_spatial_term():
    # 0.7*0.5 + 0.2*0.7 = 0.49 on the embedded inner product of 1-vectors
    p = EdgeWeightParams(Tensor([[0.7, 0.2]]), Tensor([[0.5, 0.7]]))
    w = location_centric_edge(Tensor([1.0]), Tensor([1.0]), p)
    expect = 1.0 / (1.0 + np.exp(-0.49))
    assert w.item() == pytest.approx(expect, abs=1e-15)


def test_edge_params_width_mismatch():
    with pytest.raises(ValueError):
        EdgeWeightParams(Tensor(np.ones((10, 2))), Tensor(np.ones((2, 3))))


def test_saturating_edge_score_still_yields_a_valid_weight():
    # a huge inner product would round sigmoid to exactly 1.0; the weight
    # must stay strictly inside (0,1) so adjacency assembly accepts it
    s = spatial_relation(BoundingBox(0, 0, 2, 2), BoundingBox(1, 1, 3, 3))
    p = EdgeWeightParams(Tensor(np.full((10, 2), 50.0)), Tensor(np.full((2, 2), 50.0)))
    w = edge_weight(Tensor([1.0, 1.0]), s, Tensor([1.0, 1.0]), p)
    assert 0.0 < w.item() < 1.0
    build_adjacency([w])


# -- adjacency ----------------------------------------------------------------


def _w(v: float) -> Tensor:
    return Tensor(np.array([[v]]))


def test_star_adjacency_layout():
    a = build_adjacency([_w(0.5), _w(0.25)]).data
    want = np.array([[1.0, 0.5, 0.25], [0.5, 1.0, 0.0], [0.25, 0.0, 1.0]])
    assert np.array_equal(a, want)


def test_adjacency_rejects_out_of_range_weights():
    for bad in (0.0, 1.0, -0.2, 1.7):
        with pytest.raises(ValueError, match="open interval"):
            build_adjacency([_w(bad)])


def test_adjacency_rejects_non_scalar_weight():
    with pytest.raises(ValueError):
        build_adjacency([Tensor([0.5, 0.5])])


def test_fully_connected_needs_every_pair():
    weights = [_w(0.5), _w(0.5), _w(0.5)]
    pairs = {(0, 1): _w(0.3), (0, 2): _w(0.3)}  # (1, 2) missing
    with pytest.raises(ValueError, match="per object pair"):
        build_adjacency(weights, mode="fully_connected", pair_weights=pairs)
    pairs[(1, 2)] = _w(0.9)
    a = build_adjacency(weights, mode="fully_connected", pair_weights=pairs).data
    assert a[2, 3] == a[3, 2] == 0.9
    assert a[1, 2] == a[2, 1] == 0.3


def test_pair_weights_rejected_in_star_mode():
    with pytest.raises(ValueError, match="fully_connected"):
        build_adjacency([_w(0.5)], mode="star", pair_weights={(0, 1): _w(0.5)})


def test_row_normalized_rows_sum_to_one():
    a = build_adjacency([_w(0.5), _w(0.25)], row_normalize=True).data
    assert np.allclose(a.sum(axis=1), 1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-6, 1 - 1e-6, allow_nan=False), min_size=1, max_size=6))
def test_star_adjacency_invariants(raw):
    a = build_adjacency([_w(v) for v in raw]).data
    n = len(raw)
    assert a.shape == (n + 1, n + 1)
    assert np.array_equal(a, a.T)
    assert np.array_equal(np.diag(a), np.ones(n + 1))
    off = a - np.diag(np.diag(a))
    assert np.count_nonzero(off) == 2 * n
    nz = off[off != 0]
    assert np.all((nz > 0) & (nz < 1))


def test_adjacency_is_differentiable_in_the_weights():
    def f(values):
        tape = GradientTape()
        raw = tape.parameter("raw", values["raw"])
        w1 = ad.sigmoid(ad.slice_rows(ad.matmul(ad.constant(np.array([[1.0]])), raw), 0, 1))
        # two weights derived from the same parameter row
        w_a = ad.sigmoid(ad.dot(raw, ad.constant(np.array([[1.0, 2.0]]))))
        w_b = ad.sigmoid(ad.dot(raw, ad.constant(np.array([[-1.0, 0.5]]))))
        a = build_adjacency([w_a, w_b])
        x = ad.constant(np.arange(6.0).reshape(3, 2))
        z = graph_conv(a, x, GraphConvParams([tape.parameter("W", values["W"])], True, 2))
        return ad.sum_all(z)

    report = finite_diff_check(f, {"raw": np.array([[0.3, -0.2]]), "W": np.eye(2) * 0.7})
    assert report.passed, report.to_dict()


# -- convolution ---------------------------------------------------------------


A_1OBJ = Tensor(np.array([[1.0, 0.5], [0.5, 1.0]]))
X_1OBJ = Tensor(np.array([[1.0, 2.0], [3.0, -1.0]]))
W_CONV = np.array([[1.0, 0.0], [2.0, 1.0]])


def test_single_layer_conv_frozen_values():
    params = GraphConvParams([Tensor(W_CONV)], shared=True, num_layers=1)
    z = graph_conv(A_1OBJ, X_1OBJ, params).data
    assert np.allclose(z, [[5.5, 1.5], [3.5, 0.0]], atol=1e-12)


def test_zero_layers_returns_input_unchanged():
    params = GraphConvParams([], shared=True, num_layers=0)
    z = graph_conv(A_1OBJ, X_1OBJ, params)
    assert z is X_1OBJ


def test_relu_applied_between_but_not_after_layers():
    # one shared layer producing a negative entry; with 2 layers the
    # intermediate negative is clipped before the second product.
    w = Tensor(-np.eye(2))
    one = graph_conv(A_1OBJ, X_1OBJ, GraphConvParams([w], True, 1)).data
    assert one.min() < 0  # no trailing ReLU
    two = graph_conv(A_1OBJ, X_1OBJ, GraphConvParams([w], True, 2)).data
    manual_mid = np.maximum(A_1OBJ.data @ X_1OBJ.data @ -np.eye(2), 0.0)
    manual = A_1OBJ.data @ manual_mid @ -np.eye(2)
    assert np.allclose(two, manual, atol=1e-12)


def test_shared_conv_reuses_one_matrix():
    shared = GraphConvParams([Tensor(np.eye(2) * 0.5)], shared=True, num_layers=3)
    assert shared.layer(0) is shared.layer(2)
    with pytest.raises(ValueError):
        GraphConvParams([Tensor(np.eye(2))], shared=False, num_layers=2)
    with pytest.raises(ValueError):
        GraphConvParams([Tensor(np.eye(2))] * 2, shared=True, num_layers=2)


def test_conv_shape_validation():
    params = GraphConvParams([Tensor(np.eye(2))], shared=True, num_layers=1)
    with pytest.raises(ValueError):
        graph_conv(Tensor(np.ones((2, 3))), X_1OBJ, params)
    with pytest.raises(ValueError):
        graph_conv(A_1OBJ, Tensor(np.ones((3, 2))), params)


def test_context_vector_mean_and_empty():
    z = Tensor(np.array([[9.0, 9.0], [1.0, 3.0], [5.0, 7.0]]))
    assert np.array_equal(context_vector(z).data, [[3.0, 5.0]])
    lone = Tensor(np.array([[4.0, 2.0]]))
    assert np.array_equal(context_vector(lone).data, [[0.0, 0.0]])


def test_star_graph_bundle_and_validate():
    g = star_graph(Tensor([1.0, 2.0]), [Tensor([3.0, -1.0])], [_w(0.5)])
    assert g.a.shape == (2, 2)
    assert np.array_equal(g.x.data, [[1.0, 2.0], [3.0, -1.0]])
    g.validate()
    g.a.data[0, 1] = 0.9  # break symmetry behind the builder's back
    with pytest.raises(ValueError, match="symmetric"):
        g.validate()
    with pytest.raises(ValueError, match="weights"):
        star_graph(Tensor([1.0, 2.0]), [Tensor([3.0, -1.0])], [])


def test_zero_projections_give_exactly_half():
    # both embeddings collapse to zero, sigmoid(0) is exactly 0.5
    s = spatial_relation(BoundingBox(0, 0, 2, 2), BoundingBox(1, 1, 3, 3))
    zero = EdgeWeightParams(Tensor(np.zeros((10, 2))), Tensor(np.zeros((2, 2))))
    w = edge_weight(Tensor(np.array([[1.0, -1.0]])), s, Tensor(np.array([[0.5, 2.0]])), zero)
    assert w.data.item() == 0.5
    zero_loc = EdgeWeightParams(Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 2))))
    lw = location_centric_edge(Tensor(np.array([[1.0, -1.0]])), Tensor(np.array([[0.5, 2.0]])), zero_loc)
    assert lw.data.item() == 0.5


def test_single_conv_layer_is_linear_in_the_features():
    rng = np.random.default_rng(5)
    a = build_adjacency([ad.constant(np.array([[0.3]])), ad.constant(np.array([[0.8]]))])
    params = GraphConvParams(layers=(Tensor(rng.standard_normal((3, 3))),), shared=True, num_layers=1)
    x1 = rng.standard_normal((3, 3))
    x2 = rng.standard_normal((3, 3))
    combined = graph_conv(a, Tensor(2.0 * x1 - 3.0 * x2), params).data
    separate = 2.0 * graph_conv(a, Tensor(x1), params).data - 3.0 * graph_conv(a, Tensor(x2), params).data
    np.testing.assert_allclose(combined, separate, atol=1e-12)


def test_vanishing_edge_weight_detaches_the_object():
    # the smallest positive weight times O(1) features is absorbed: the
    # center row is bit for bit the row of the graph without that object
    tiny = np.nextafter(0.0, 1.0)
    rows = [
        Tensor(np.array([[1.0, -2.0]])),
        Tensor(np.array([[0.5, 3.0]])),
        Tensor(np.array([[4.0, 1.0]])),
    ]
    params = GraphConvParams(
        layers=(Tensor(np.random.default_rng(1).standard_normal((2, 2))),),
        shared=True,
        num_layers=1,
    )
    half = ad.constant(np.array([[0.5]]))
    with_obj = graph_conv(
        build_adjacency([half, ad.constant(np.array([[tiny]]))]),
        ad.stack_rows(rows),
        params,
    ).data[0]
    without = graph_conv(build_adjacency([half]), ad.stack_rows(rows[:2]), params).data[0]
    assert np.array_equal(with_obj, without)


def test_identity_weights_on_lone_center_are_a_no_op():
    x = Tensor(np.array([[3.0, -2.0]]))
    params = GraphConvParams(layers=(Tensor(np.eye(2)),), shared=True, num_layers=1)
    out = graph_conv(build_adjacency([]), x, params)
    assert np.array_equal(out.data, x.data)
