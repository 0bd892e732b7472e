import numpy as np
import pytest

from taylorskel import models
from taylorskel import numerics as nx
from taylorskel.topology import build_bodypart_hypergraph, build_ntu_graph, make_hypergraph

from oracles import stgcn_param_count


@pytest.fixture(scope="module")
def graph():
    return build_ntu_graph()


@pytest.fixture(scope="module")
def hypergraph():
    return build_bodypart_hypergraph()


def batch(seed, n=2, c=3, t=8, m=2):
    return np.random.default_rng(seed).normal(size=(n, c, t, 25, m))


def test_stgcn_default_shapes(graph):
    cfg = models.STGCNConfig()
    params = models.init_stgcn(cfg)
    aux = {}
    logits = models.stgcn_forward(batch(0, n=1, t=64), graph, cfg, params, aux=aux)
    assert logits.shape == (1, 60)
    assert aux["temporal_lengths"] == [64, 64, 64, 64, 32, 32, 32, 16, 16, 16]
    assert aux["features"].shape == (2, 256)


def test_stgcn_parameter_count():
    params = models.init_stgcn(models.STGCNConfig())
    assert models.count_parameters(params) == stgcn_param_count()
    small = models.STGCNConfig(num_classes=5, layer_channels=(4, 8), stride_layers={2}, temporal_kernel=3)
    assert models.count_parameters(models.init_stgcn(small)) == stgcn_param_count(
        5, 3, (4, 8), 3, (2,))


def test_count_parameters_trivial():
    assert models.count_parameters(models.ParameterSet()) == 0
    p = models.ParameterSet()
    p.add("w", np.zeros((3, 4)))
    assert models.count_parameters(p) == 12


def test_stgcn_zero_input_uniform(graph):
    cfg = models.STGCNConfig(num_classes=7, layer_channels=(8, 8), stride_layers=(), temporal_kernel=3)
    logits = models.stgcn_forward(np.zeros((1, 3, 6, 25, 2)), graph, cfg, models.init_stgcn(cfg, seed=4))
    np.testing.assert_allclose(nx.softmax(logits).data, np.full((1, 7), 1 / 7))


def test_hyperformer_default_widths(hypergraph):
    cfg = models.HyperformerConfig()
    params = models.init_hyperformer(cfg)
    aux = {}
    logits = models.hyperformer_forward(batch(1, n=1, t=64), hypergraph, cfg, params, aux=aux)
    assert logits.shape == (1, 60)
    assert aux["hidden_widths"] == [216] * 11
    assert aux["features"].shape == (2, 216)


def test_attention_rows_sum_to_one(hypergraph):
    cfg = models.micro_config("hyperformer", 3)
    aux = {}
    models.hyperformer_forward(batch(2), hypergraph, cfg, models.init_hyperformer(cfg), aux=aux)
    for attn in aux["attention"]:
        assert attn.shape == (4, 8, 2, 25, 25)
        np.testing.assert_allclose(attn.sum(axis=-1), 1.0, atol=1e-12)


def test_relation_bias_shifts_attention(hypergraph):
    cfg = models.micro_config("hyperformer", 3)
    params = models.init_hyperformer(cfg)
    params["layers.0.attn.relation_bias"].data[:, 0] = 5.0
    aux = {}
    models.hyperformer_forward(batch(2), hypergraph, cfg, params, aux=aux)
    same = hypergraph.same_edge().astype(bool)
    mass = aux["attention"][0][..., same].sum() / aux["attention"][0].sum()
    assert mass > 0.9


def test_single_edge_mix_preserves_constants():
    hg = make_hypergraph([range(25)])
    h = nx.Tensor(np.tile(np.array([1.0, -2.0, 0.5]), (2, 4, 25, 1)))
    out = models.hyperedge_mix(h, hg.operator(), nx.Tensor(np.eye(3)))
    np.testing.assert_allclose(out.data, h.data, atol=1e-14)


@pytest.mark.parametrize("kind", models.MODEL_KINDS)
def test_permutation_equivariance(kind):
    cfg = models.micro_config(kind, 4, target_frames=8)
    params = models.init_model(kind, cfg, seed=3)
    rng = np.random.default_rng(5)
    for stats in params.buffers.values():  # non-trivial running statistics
        stats["mean"] = rng.normal(size=stats["mean"].shape)
        stats["var"] = rng.uniform(0.5, 2.0, size=stats["var"].shape)
    topo = models.default_topology(kind)
    x = batch(6)
    perm = rng.permutation(25)
    base = models.forward(kind, x, topo, cfg, params)
    moved = models.forward(kind, x[:, :, :, perm], topo.permuted(perm), cfg,
                           models.permute_joints(params, perm, cfg.in_channels))
    np.testing.assert_allclose(moved.data, base.data, atol=1e-9)
    train_a = models.forward(kind, x, topo, cfg, params.copy(), training=True)
    train_b = models.forward(kind, x[:, :, :, perm], topo.permuted(perm), cfg,
                             models.permute_joints(params, perm, cfg.in_channels), training=True)
    np.testing.assert_allclose(train_b.data, train_a.data, atol=1e-9)


@pytest.mark.parametrize("kind", models.MODEL_KINDS)
def test_body_stream_symmetry(kind):
    cfg = models.micro_config(kind, 4, target_frames=8)
    params = models.init_model(kind, cfg, seed=1)
    topo = models.default_topology(kind)
    x = batch(7)
    for training in (False, True):
        a = models.forward(kind, x, topo, cfg, params.copy(), training=training).data
        b = models.forward(kind, x[..., ::-1], topo, cfg, params.copy(), training=training).data
        np.testing.assert_allclose(a, b, atol=1e-12)


@pytest.mark.parametrize("kind", models.MODEL_KINDS)
def test_deterministic_with_dropout_seed(kind):
    base = models.micro_config(kind, 4, target_frames=8)
    cfg = type(base)(**{**base.to_dict(), "dropout_p": 0.3})
    params = models.init_model(kind, cfg, seed=0)
    topo = models.default_topology(kind)
    x = batch(8)
    runs = [models.forward(kind, x, topo, cfg, params.copy(), training=True, rng=np.random.default_rng(9)).data
            for _ in range(2)]
    assert np.array_equal(*runs)


def test_concat_input_widens_only_first_layer():
    narrow = models.init_stgcn(models.STGCNConfig(in_channels=3))
    wide = models.init_stgcn(models.STGCNConfig(in_channels=6))
    changed = {k for k in narrow.tensors if narrow[k].shape != wide[k].shape}
    assert changed == {"data_bn.weight", "data_bn.bias", "layers.0.gcn.weight", "layers.0.res.weight"}


def test_stgcn_block_gradients(graph):
    cfg = models.STGCNConfig(num_classes=2, layer_channels=(4,), stride_layers=(), temporal_kernel=3,
                             dropout_p=0.0)
    params = models.init_stgcn(cfg, seed=1)
    x = np.random.default_rng(1).normal(size=(3, 3, 2, 25, 2))
    y = np.array([0, 1, 1])

    def f():
        return nx.cross_entropy(models.stgcn_forward(x, graph, cfg, params, training=True), y)

    assert nx.check_gradients(f, params.values()) < 1e-4


def test_input_validation(graph):
    cfg = models.micro_config("stgcn", 2)
    params = models.init_stgcn(cfg)
    with pytest.raises(nx.ShapeError, match="channels"):
        models.stgcn_forward(np.zeros((1, 6, 8, 25, 2)), graph, cfg, params)
    with pytest.raises(nx.ShapeError):
        models.stgcn_forward(np.zeros((1, 3, 8, 25)), graph, cfg, params)


def test_config_validation():
    with pytest.raises(ValueError):
        models.STGCNConfig(stride_layers={10})
    with pytest.raises(ValueError):
        models.STGCNConfig(temporal_kernel=4)
    with pytest.raises(ValueError):
        models.HyperformerConfig(hidden_channels=10, num_heads=3)
    with pytest.raises(ValueError, match="unknown"):
        models.config_from_dict("stgcn", {"widths": [1]})


@pytest.mark.parametrize("kind", models.MODEL_KINDS)
def test_config_round_trip(kind):
    cfg = models.micro_config(kind, 5)
    assert models.config_from_dict(kind, cfg.to_dict()) == cfg
