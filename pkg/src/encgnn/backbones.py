"""GCN, GAT and GCNII layers assembled into the fixed training architecture.

Every model follows the same scheme: input dropout, a dense embedding, ReLU,
L backbone layers, dropout, and a dense classifier. The backbones differ only
in how a layer propagates features over the graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import SparseOperator, Tensor
from .graph import Graph

BACKBONES = ("gcn", "gat", "gcnii")


@dataclass
class ModelConfig:
    backbone: str
    num_layers: int
    hidden: int
    classes: int
    in_channels: int
    dropout: float
    leaky_slope: float = 0.2
    gat_heads: int = 1
    gcnii_alpha: float = 0.1
    gcnii_theta: float = 0.5

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}, expected one of {BACKBONES}")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if not 0.0 <= self.gcnii_alpha <= 1.0:
            raise ValueError("gcnii_alpha must be in [0, 1]")
        if self.backbone == "gat" and self.hidden % self.gat_heads != 0:
            raise ValueError("hidden channels must be divisible by gat_heads")


@dataclass
class Model:
    """Parameter container with a stable enumeration order."""

    config: ModelConfig
    embed: Tensor
    layer_weights: list[Tensor]
    attention: list[Tensor] = field(default_factory=list)  # per layer, GAT only
    classify: Tensor = None

    def parameters(self) -> list[tuple[str, Tensor]]:
        params = [("embed", self.embed)]
        for l, w in enumerate(self.layer_weights):
            params.append((f"layer{l}.weight", w))
            if self.attention:
                params.append((f"layer{l}.attention", self.attention[l]))
        params.append(("classify", self.classify))
        return params

    def gnn_parameters(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self.parameters() if n.startswith("layer")]

    def oc_parameters(self) -> list[tuple[str, Tensor]]:
        """Opening (embedding) and closing (classifier) parameters."""
        return [(n, t) for n, t in self.parameters() if not n.startswith("layer")]


def init_model(config: ModelConfig, rng: np.random.Generator) -> Model:
    """Glorot embedding/classifier, identity-initialized layer weights."""
    embed = ad.glorot_init(config.in_channels, config.hidden, rng)
    layer_weights = [ad.identity_init(config.hidden) for _ in range(config.num_layers)]
    attention = []
    if config.backbone == "gat":
        head_dim = config.hidden // config.gat_heads
        attention = [
            ad.glorot_init(config.gat_heads, 2 * head_dim, rng)
            for _ in range(config.num_layers)
        ]
    classify = ad.glorot_init(config.hidden, config.classes, rng)
    return Model(config, embed, layer_weights, attention, classify)


def _input_linear(x, embed: Tensor, p: float, rng, train: bool) -> Tensor:
    """Dropout on the input features followed by the embedding matmul.

    Sparse feature matrices keep their CSR form: dropout masks the stored
    nonzeros (zero entries are unaffected by dropout) and the product runs
    through the sparse kernel.
    """
    if sp.issparse(x):
        csr = x.tocsr()
        if train and p > 0.0:
            keep = (rng.random(csr.data.shape) >= p) / (1.0 - p)
            csr = sp.csr_matrix((csr.data * keep, csr.indices, csr.indptr), shape=csr.shape)
        return ad.spmm(SparseOperator(csr), embed)
    h = ad.dropout(Tensor(np.asarray(x)), p, rng, train)
    return ad.matmul(h, embed)


def gcn_layer(h: Tensor, w: Tensor, prop: SparseOperator) -> Tensor:
    return ad.relu(ad.matmul(prop.apply(h), w))


def gat_layer(h: Tensor, w: Tensor, a: Tensor, g: Graph, heads: int, slope: float) -> Tensor:
    """Attention-weighted propagation; softmax runs over each node's
    neighborhood including the node itself."""
    hw = ad.matmul(h, w)
    dst, src = g.directed_with_self_loops()
    head_dim = hw.cols // heads
    outs = []
    for head in range(heads):
        lo = head * head_dim
        hd = ad.slice_cols(hw, lo, lo + head_dim) if heads > 1 else hw
        a_head = ad.gather_rows(a, [head])
        a_dst = ad.slice_cols(a_head, 0, head_dim)
        a_src = ad.slice_cols(a_head, head_dim, 2 * head_dim)
        score_dst = ad.matmul(hd, ad.transpose(a_dst))
        score_src = ad.matmul(hd, ad.transpose(a_src))
        scores = ad.leaky_relu(
            ad.add(ad.gather_rows(score_dst, dst), ad.gather_rows(score_src, src)), slope
        )
        att = ad.segment_softmax(scores, dst, g.n)
        outs.append(ad.scatter_add_rows(ad.mul(att, ad.gather_rows(hd, src)), dst, g.n))
    out = outs[0]
    for other in outs[1:]:
        out = ad.concat_cols(out, other)
    return ad.relu(out)


def gcnii_layer(h: Tensor, h0: Tensor, w: Tensor, prop: SparseOperator,
                alpha: float, beta: float) -> Tensor:
    """Propagation mixed with the embedding output h0, then a residual-style
    blend of the transformed and untransformed signal."""
    s = ad.add(ad.scalar_mul(prop.apply(h), 1.0 - alpha), ad.scalar_mul(h0, alpha))
    return ad.relu(ad.add(ad.scalar_mul(ad.matmul(s, w), beta), ad.scalar_mul(s, 1.0 - beta)))


def gcnii_beta(theta: float, layer: int) -> float:
    """Strength of the identity-map decay at 1-based layer index."""
    return float(np.log(theta / layer + 1.0))


def forward(model: Model, g: Graph, x, mode: str = "train",
            rng: np.random.Generator | None = None) -> Tensor:
    """Full forward pass producing n x k logits."""
    cfg = model.config
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    train = mode == "train"
    if train and cfg.dropout > 0.0 and rng is None:
        raise ValueError("train mode with dropout requires an rng")
    n_rows = x.shape[0]
    if n_rows != g.n:
        raise ValueError(f"feature rows {n_rows} != node count {g.n}")

    h = ad.relu(_input_linear(x, model.embed, cfg.dropout, rng, train))
    h0 = h
    prop = g.propagation_operator()
    for l in range(cfg.num_layers):
        w = model.layer_weights[l]
        if cfg.backbone == "gcn":
            h = gcn_layer(h, w, prop)
        elif cfg.backbone == "gat":
            h = gat_layer(h, w, model.attention[l], g, cfg.gat_heads, cfg.leaky_slope)
        else:
            beta = gcnii_beta(cfg.gcnii_theta, l + 1)
            h = gcnii_layer(h, h0, w, prop, cfg.gcnii_alpha, beta)
    h = ad.dropout(h, cfg.dropout, rng, train)
    return ad.matmul(h, model.classify)


def predict(logits) -> Tensor:
    """Row-stochastic class probabilities from logits."""
    return ad.row_softmax(ad.astensor(logits))


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_HEADER = "encgnn-checkpoint v1"


def save_checkpoint(model: Model, path) -> None:
    """Text checkpoint: header, config line, then one named tensor per block."""
    cfg = model.config
    params = model.parameters()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CHECKPOINT_HEADER + "\n")
        fh.write(
            f"backbone={cfg.backbone} num_layers={cfg.num_layers} hidden={cfg.hidden} "
            f"classes={cfg.classes} in_channels={cfg.in_channels} dropout={cfg.dropout!r} "
            f"leaky_slope={cfg.leaky_slope!r} gat_heads={cfg.gat_heads} "
            f"gcnii_alpha={cfg.gcnii_alpha!r} gcnii_theta={cfg.gcnii_theta!r}\n"
        )
        fh.write(f"{len(params)}\n")
        for name, t in params:
            fh.write(f"{name} {t.rows} {t.cols}\n")
            for row in t.data:
                fh.write("\t".join(repr(float(v)) for v in row) + "\n")


def load_checkpoint(path) -> Model:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != CHECKPOINT_HEADER:
            raise ValueError(f"unrecognized checkpoint header: {header!r}")
        cfg_items = dict(kv.split("=", 1) for kv in fh.readline().split())
        cfg = ModelConfig(
            backbone=cfg_items["backbone"],
            num_layers=int(cfg_items["num_layers"]),
            hidden=int(cfg_items["hidden"]),
            classes=int(cfg_items["classes"]),
            in_channels=int(cfg_items["in_channels"]),
            dropout=float(cfg_items["dropout"]),
            leaky_slope=float(cfg_items["leaky_slope"]),
            gat_heads=int(cfg_items["gat_heads"]),
            gcnii_alpha=float(cfg_items["gcnii_alpha"]),
            gcnii_theta=float(cfg_items["gcnii_theta"]),
        )
        count = int(fh.readline())
        tensors: dict[str, Tensor] = {}
        for _ in range(count):
            name, rows, cols = fh.readline().split()
            rows, cols = int(rows), int(cols)
            data = np.empty((rows, cols))
            for r in range(rows):
                data[r] = [float(v) for v in fh.readline().split("\t")]
            tensors[name] = Tensor(data)

    layer_weights = [tensors[f"layer{l}.weight"] for l in range(cfg.num_layers)]
    attention = []
    if cfg.backbone == "gat":
        attention = [tensors[f"layer{l}.attention"] for l in range(cfg.num_layers)]
    return Model(cfg, tensors["embed"], layer_weights, attention, tensors["classify"])
