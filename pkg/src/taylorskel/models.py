"""ST-GCN and hypergraph-attention (Hyperformer-style) classifiers.

Both models take a batch shaped (N, C, T, V, M), run each of the M bodies as
its own stream through a shared network and average the per-stream logits.
Parameters live in a :class:`ParameterSet`; batch-norm running statistics are
kept beside them in ``buffers``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .numerics import Tensor


@dataclass(frozen=True)
class STGCNConfig:
    num_classes: int = 60
    in_channels: int = 3
    layer_channels: tuple = (64, 64, 64, 128, 128, 128, 256, 256, 256)
    temporal_kernel: int = 9
    stride_layers: frozenset = frozenset({4, 7})  # 1-based layer indices
    dropout_p: float = 0.5
    residual: bool = True
    num_joints: int = 25

    def __post_init__(self):
        object.__setattr__(self, "layer_channels", tuple(self.layer_channels))
        object.__setattr__(self, "stride_layers", frozenset(self.stride_layers))
        n = len(self.layer_channels)
        if not n:
            raise ValueError("need at least one layer")
        if not all(1 <= s <= n for s in self.stride_layers):
            raise ValueError(f"stride_layers must lie in [1, {n}]")
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout_p must be in [0, 1)")
        if self.temporal_kernel < 1 or self.temporal_kernel % 2 == 0:
            raise ValueError("temporal_kernel must be a positive odd integer")

    def to_dict(self):
        return {
            "num_classes": self.num_classes,
            "in_channels": self.in_channels,
            "layer_channels": list(self.layer_channels),
            "temporal_kernel": self.temporal_kernel,
            "stride_layers": sorted(self.stride_layers),
            "dropout_p": self.dropout_p,
            "residual": self.residual,
            "num_joints": self.num_joints,
        }


@dataclass(frozen=True)
class HyperformerConfig:
    num_classes: int = 60
    in_channels: int = 3
    num_layers: int = 10
    hidden_channels: int = 216
    num_heads: int = 6
    target_frames: int = 64
    temporal_kernel: int = 9
    ffn_channels: int = None  # defaults to hidden_channels
    dropout_p: float = 0.0
    num_joints: int = 25

    def __post_init__(self):
        if self.hidden_channels % self.num_heads:
            raise ValueError("hidden_channels must be divisible by num_heads")
        if self.num_layers < 1:
            raise ValueError("need at least one layer")
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout_p must be in [0, 1)")
        if self.ffn_channels is None:
            object.__setattr__(self, "ffn_channels", self.hidden_channels)

    def to_dict(self):
        return {k: getattr(self, k) for k in (
            "num_classes", "in_channels", "num_layers", "hidden_channels", "num_heads",
            "target_frames", "temporal_kernel", "ffn_channels", "dropout_p", "num_joints")}


def config_from_dict(kind, doc):
    cls = {"stgcn": STGCNConfig, "hyperformer": HyperformerConfig}.get(kind)
    if cls is None:
        raise ValueError(f"unknown model kind {kind!r}")
    unknown = set(doc) - set(cls.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown {kind} config fields: {sorted(unknown)}")
    return cls(**doc)


def micro_config(kind, num_classes=8, in_channels=3, target_frames=16):
    """Small instances that train in seconds on CPU."""
    if kind == "stgcn":
        return STGCNConfig(num_classes=num_classes, in_channels=in_channels, layer_channels=(8, 16, 16),
                           temporal_kernel=3, stride_layers={2}, dropout_p=0.0)
    if kind == "hyperformer":
        return HyperformerConfig(num_classes=num_classes, in_channels=in_channels, num_layers=2,
                                 hidden_channels=16, num_heads=2, target_frames=target_frames,
                                 temporal_kernel=3)
    raise ValueError(f"unknown model kind {kind!r}")


@dataclass
class ParameterSet:
    tensors: dict = field(default_factory=dict)  # name -> Tensor
    buffers: dict = field(default_factory=dict)  # bn name -> {"mean", "var"}

    def add(self, name, data):
        if name in self.tensors:
            raise KeyError(f"duplicate parameter {name!r}")
        self.tensors[name] = Tensor(data, requires_grad=True, name=name)
        return self.tensors[name]

    def add_bn(self, name, channels):
        self.add(f"{name}.weight", np.ones(channels))
        self.add(f"{name}.bias", np.zeros(channels))
        self.buffers[name] = {"mean": np.zeros(channels), "var": np.ones(channels)}

    def __getitem__(self, name):
        return self.tensors[name]

    def __len__(self):
        return len(self.tensors)

    def values(self):
        return list(self.tensors.values())

    def flat_buffers(self):
        return {f"{k}/{s}": v[s] for k, v in self.buffers.items() for s in ("mean", "var")}

    def copy(self):
        out = ParameterSet()
        for k, t in self.tensors.items():
            out.tensors[k] = Tensor(t.data.copy(), requires_grad=True, name=k)
        out.buffers = {k: {s: a.copy() for s, a in v.items()} for k, v in self.buffers.items()}
        return out

    @classmethod
    def from_arrays(cls, params, buffers=None):
        out = cls()
        for k, arr in params.items():
            out.add(k, arr)
        for key, arr in (buffers or {}).items():
            name, stat = key.rsplit("/", 1)
            out.buffers.setdefault(name, {})[stat] = np.array(arr, dtype=np.float64)
        return out


def count_parameters(params):
    tensors = params.tensors.values() if isinstance(params, ParameterSet) else params
    return int(sum(t.size for t in tensors))


# ------------------------------------------------------------------ shared pieces


def _he(rng, shape, fan_in):
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


def _bn(params, name, x, axis, training):
    return nx.batch_norm(x, params[f"{name}.weight"], params[f"{name}.bias"], axis=axis,
                         running=params.buffers[name], training=training)


def _check_input(x, cfg, num_joints):
    if x.ndim != 5:
        raise nx.ShapeError(f"expected input of shape (N, C, T, V, M), got {x.shape}")
    _, c, _, v, _ = x.shape
    if c != cfg.in_channels:
        raise nx.ShapeError(f"input has {c} channels, model expects {cfg.in_channels}")
    if v != num_joints:
        raise nx.ShapeError(f"input has {v} joints, topology has {num_joints}")


def _streams(x, params, training):
    """(N, C, T, V, M) -> data batch-norm over joint-channels -> (N*M, C, T, V)."""
    n, c, t, v, m = x.shape
    h = nx.reshape(nx.transpose(x, (0, 4, 3, 1, 2)), (n * m, v * c, t))
    h = _bn(params, "data_bn", h, 1, training)
    return nx.transpose(nx.reshape(h, (n * m, v, c, t)), (0, 2, 3, 1))


def _head(h, params, n, m):
    """Global mean pool, linear classifier per stream, mean over streams."""
    feat = nx.mean(h, axis=(2, 3))
    logits = nx.add(nx.matmul(feat, params["fc.weight"]), params["fc.bias"])
    k = logits.shape[1]
    return nx.mean(nx.reshape(logits, (n, m, k)), axis=1), feat


def _dropout(h, p, training, rng):
    if not training or p <= 0:
        return h
    return nx.dropout(h, p, rng=rng)


def permute_joints(params, perm, in_channels):
    """Copy of ``params`` with joint-indexed parameters reordered by ``perm``."""
    perm = np.asarray(perm)
    v = len(perm)
    idx = (perm[:, None] * in_channels + np.arange(in_channels)[None, :]).reshape(-1)
    out = params.copy()
    for name in ("data_bn.weight", "data_bn.bias"):
        out.tensors[name].data[...] = params[name].data[idx]
    for stat in ("mean", "var"):
        out.buffers["data_bn"][stat] = params.buffers["data_bn"][stat][idx]
    if "joint_embed" in out.tensors:
        assert out.tensors["joint_embed"].shape[0] == v
        out.tensors["joint_embed"].data[...] = params["joint_embed"].data[perm]
    return out


# ------------------------------------------------------------------ ST-GCN


def stgcn_layer_specs(cfg):
    """(in, out, stride) for each layer, in order."""
    specs = []
    c_in = cfg.in_channels
    for i, c_out in enumerate(cfg.layer_channels, start=1):
        specs.append((c_in, c_out, 2 if i in cfg.stride_layers else 1))
        c_in = c_out
    return specs


def init_stgcn(cfg, seed=0, num_partitions=3):
    rng = np.random.default_rng(seed)
    p = ParameterSet()
    p.add_bn("data_bn", cfg.in_channels * cfg.num_joints)
    k = cfg.temporal_kernel
    for i, (c_in, c_out, stride) in enumerate(stgcn_layer_specs(cfg)):
        pre = f"layers.{i}"
        p.add(f"{pre}.gcn.weight", _he(rng, (num_partitions, c_out, c_in), c_in * num_partitions))
        p.add_bn(f"{pre}.gcn_bn", c_out)
        p.add(f"{pre}.tcn.weight", _he(rng, (c_out, c_out, k), c_out * k))
        p.add_bn(f"{pre}.tcn_bn", c_out)
        if cfg.residual and (c_in != c_out or stride != 1):
            p.add(f"{pre}.res.weight", _he(rng, (c_out, c_in, 1), c_in))
            p.add_bn(f"{pre}.res_bn", c_out)
    width = cfg.layer_channels[-1]
    p.add("fc.weight", rng.normal(0.0, math.sqrt(1.0 / width), size=(width, cfg.num_classes)))
    p.add("fc.bias", np.zeros(cfg.num_classes))
    return p


def stgcn_forward(x, graph, cfg, params, training=False, rng=None, aux=None):
    """Logits (N, num_classes) for a batch (N, C, T, V, M).

    Each layer: partition-summed graph convolution, BN, ReLU, temporal
    convolution (stride per config), BN, dropout, residual add, ReLU.
    ``aux`` (a dict), if given, receives the temporal length after every
    layer under "temporal_lengths" and the pooled features under "features".
    """
    x = nx.as_tensor(x)
    _check_input(x, cfg, graph.joint_count)
    n, _, t, _, m = x.shape
    a = Tensor(graph.partitions)
    h = _streams(x, params, training)
    lengths = [t]
    for i, (c_in, c_out, stride) in enumerate(stgcn_layer_specs(cfg)):
        pre = f"layers.{i}"
        res = h
        y = nx.einsum("sctv,kdc,kwv->sdtw", h, params[f"{pre}.gcn.weight"], a)
        y = nx.relu(_bn(params, f"{pre}.gcn_bn", y, 1, training))
        y = nx.temporal_conv(y, params[f"{pre}.tcn.weight"], stride=stride)
        y = _bn(params, f"{pre}.tcn_bn", y, 1, training)
        y = _dropout(y, cfg.dropout_p, training, rng)
        if cfg.residual:
            if f"{pre}.res.weight" in params.tensors:
                res = nx.temporal_conv(res, params[f"{pre}.res.weight"], stride=stride)
                res = _bn(params, f"{pre}.res_bn", res, 1, training)
            y = nx.add(y, res)
        h = nx.relu(y)
        lengths.append(h.shape[2])
    logits, feat = _head(h, params, n, m)
    if aux is not None:
        aux["temporal_lengths"] = lengths
        aux["features"] = feat
    return logits


# ------------------------------------------------------------------ Hyperformer


def init_hyperformer(cfg, seed=0):
    rng = np.random.default_rng(seed)
    p = ParameterSet()
    hdim, f, k = cfg.hidden_channels, cfg.ffn_channels, cfg.temporal_kernel
    p.add_bn("data_bn", cfg.in_channels * cfg.num_joints)
    p.add("embed.weight", _he(rng, (cfg.in_channels, hdim), cfg.in_channels))
    p.add("embed.bias", np.zeros(hdim))
    p.add("joint_embed", rng.normal(0.0, 0.1, size=(cfg.num_joints, hdim)))
    for i in range(cfg.num_layers):
        pre = f"layers.{i}"
        p.add_bn(f"{pre}.attn_bn", hdim)
        for name in ("q", "k", "v", "o"):
            p.add(f"{pre}.attn.{name}", rng.normal(0.0, math.sqrt(1.0 / hdim), size=(hdim, hdim)))
        p.add(f"{pre}.attn.relation_bias", np.zeros((cfg.num_heads, 2)))
        p.add(f"{pre}.mix.weight", rng.normal(0.0, math.sqrt(1.0 / hdim), size=(hdim, hdim)))
        p.add_bn(f"{pre}.ffn_bn", hdim)
        p.add(f"{pre}.ffn.w1", _he(rng, (hdim, f), hdim))
        p.add(f"{pre}.ffn.b1", np.zeros(f))
        p.add(f"{pre}.ffn.w2", rng.normal(0.0, math.sqrt(1.0 / f), size=(f, hdim)))
        p.add(f"{pre}.ffn.b2", np.zeros(hdim))
        p.add(f"{pre}.tcn.weight", _he(rng, (hdim, hdim, k), hdim * k))
        p.add_bn(f"{pre}.tcn_bn", hdim)
    p.add_bn("out_bn", hdim)
    p.add("fc.weight", rng.normal(0.0, math.sqrt(1.0 / hdim), size=(hdim, cfg.num_classes)))
    p.add("fc.bias", np.zeros(cfg.num_classes))
    return p


def relation_onehot(hg):
    """(2, V, V): [same hyperedge, different hyperedge] indicators."""
    same = hg.same_edge()
    return np.stack([same, 1.0 - same])


def hypergraph_attention(z, params, prefix, relations, num_heads, weights_out=None):
    """Multi-head self-attention over the joints of each frame.

    ``z`` is (S, T, V, H). Scores get an additive per-head bias that depends
    only on whether the two joints share a hyperedge.
    """
    s, t, v, hdim = z.shape
    d = hdim // num_heads

    def heads(w):
        return nx.reshape(nx.einsum("stvh,hd->stvd", z, params[f"{prefix}.{w}"]), (s, t, v, num_heads, d))

    q, k, val = heads("q"), heads("k"), heads("v")
    scores = nx.scale(nx.einsum("stihd,stjhd->sthij", q, k), 1.0 / math.sqrt(d))
    bias = nx.einsum("hr,rij->hij", params[f"{prefix}.relation_bias"], Tensor(relations))
    attn = nx.softmax(nx.add(scores, bias), axis=-1)
    if weights_out is not None:
        weights_out.append(attn.data)
    out = nx.reshape(nx.einsum("sthij,stjhd->stihd", attn, val), (s, t, v, hdim))
    return nx.einsum("stvh,hd->stvd", out, params[f"{prefix}.o"])


def hyperedge_mix(h, operator, weight):
    """Aggregate (S, T, V, H) features through the V x V hypergraph operator, then project."""
    return nx.einsum("ij,stjh,hd->stid", Tensor(operator), h, weight)


def hyperformer_forward(x, hg, cfg, params, training=False, rng=None, aux=None):
    """Logits (N, num_classes) for a batch (N, C, T, V, M).

    Per layer: pre-BN relation-biased joint attention (residual), hyperedge
    mix (residual), pre-BN feed-forward (residual), then a temporal
    convolution branch (residual). A final BN bounds the residual stream
    before pooling. ``aux`` receives "hidden_widths",
    "attention" (per-layer weights) and "features".
    """
    x = nx.as_tensor(x)
    _check_input(x, cfg, hg.joint_count)
    n, _, _, _, m = x.shape
    rel = relation_onehot(hg)
    op = hg.operator()
    h = nx.transpose(_streams(x, params, training), (0, 2, 3, 1))  # S, T, V, C
    h = nx.add(nx.einsum("stvc,ch->stvh", h, params["embed.weight"]), params["embed.bias"])
    h = nx.add(h, params["joint_embed"])
    widths, attn_maps = [h.shape[-1]], []
    for i in range(cfg.num_layers):
        pre = f"layers.{i}"
        z = _bn(params, f"{pre}.attn_bn", h, -1, training)
        a = hypergraph_attention(z, params, f"{pre}.attn", rel, cfg.num_heads, attn_maps)
        h = nx.add(h, _dropout(a, cfg.dropout_p, training, rng))
        h = nx.add(h, hyperedge_mix(h, op, params[f"{pre}.mix.weight"]))
        z = _bn(params, f"{pre}.ffn_bn", h, -1, training)
        f = nx.relu(nx.add(nx.einsum("stvh,hf->stvf", z, params[f"{pre}.ffn.w1"]), params[f"{pre}.ffn.b1"]))
        f = nx.add(nx.einsum("stvf,fh->stvh", f, params[f"{pre}.ffn.w2"]), params[f"{pre}.ffn.b2"])
        h = nx.add(h, _dropout(f, cfg.dropout_p, training, rng))
        tc = nx.temporal_conv(nx.transpose(h, (0, 3, 1, 2)), params[f"{pre}.tcn.weight"])
        tc = nx.relu(_bn(params, f"{pre}.tcn_bn", tc, 1, training))
        h = nx.add(h, nx.transpose(tc, (0, 2, 3, 1)))
        widths.append(h.shape[-1])
    h = _bn(params, "out_bn", h, -1, training)
    logits, feat = _head(nx.transpose(h, (0, 3, 1, 2)), params, n, m)
    if aux is not None:
        aux["hidden_widths"] = widths
        aux["attention"] = attn_maps
        aux["features"] = feat
    return logits


# ------------------------------------------------------------------ dispatch

MODEL_KINDS = ("stgcn", "hyperformer")


def init_model(kind, cfg, seed=0):
    if kind == "stgcn":
        return init_stgcn(cfg, seed)
    if kind == "hyperformer":
        return init_hyperformer(cfg, seed)
    raise ValueError(f"unknown model kind {kind!r}")


def forward(kind, x, topology, cfg, params, training=False, rng=None, aux=None):
    fn = stgcn_forward if kind == "stgcn" else hyperformer_forward
    return fn(x, topology, cfg, params, training=training, rng=rng, aux=aux)


def default_topology(kind):
    from .topology import build_bodypart_hypergraph, build_ntu_graph

    return build_ntu_graph() if kind == "stgcn" else build_bodypart_hypergraph()
