"""Objective terms for node classification training.

The total objective is the labelled cross-entropy plus three optional terms:
a node-class mutual-information loss over all nodes, an edge-aware total
variation penalty on the prediction map, and a cross-validating-gradients
loss that scores the cosine alignment of cross-entropy gradients taken on two
random halves of the labelled set. All terms are taped scalars.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .backbones import Model, forward
from .graph import Graph, NodeWeights, graph_gradient

COSINE_EPS = 1e-12


@dataclass
class LossWeights:
    """Weights of the objective terms.

    alpha scales the mutual-information loss, beta the total-variation loss
    and gamma the cross-validating-gradients loss. lam balances the class
    entropy inside the MI term; sigma is the bandwidth of the exponential
    edge weight in the TV term.
    """

    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    lam: float = 2.0
    sigma: float = 10.0
    tv_edge_aware: bool = True

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("loss weights must be non-negative")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


@dataclass
class Partition:
    """Disjoint halves of the labelled node ids, sizes differing by <= 1."""

    p1: np.ndarray
    p2: np.ndarray


def sample_partition(labelled_ids, rng: np.random.Generator,
                     stratified: bool = False, labels=None) -> Partition:
    """Uniform random split of the labelled ids at the midpoint.

    stratified=True splits each class's ids separately (needs labels);
    plain uniform sampling is the default.
    """
    ids = np.asarray(labelled_ids, dtype=np.int64)
    if ids.size < 2:
        raise ValueError("need at least 2 labelled nodes to partition")
    if not stratified:
        perm = rng.permutation(ids)
        half = ids.size // 2
        return Partition(perm[:half], perm[half:])
    if labels is None:
        raise ValueError("stratified partitioning requires labels")
    labels = np.asarray(labels)
    p1, p2 = [], []
    for c in np.unique(labels[ids]):
        members = rng.permutation(ids[labels[ids] == c])
        half = members.size // 2
        p1.extend(members[:half])
        p2.extend(members[half:])
    # rebalance the rounding remainders so the halves differ by at most one
    p1, p2 = np.asarray(p1, dtype=np.int64), np.asarray(p2, dtype=np.int64)
    while p2.size - p1.size > 1:
        take = rng.integers(p2.size)
        p1 = np.append(p1, p2[take])
        p2 = np.delete(p2, take)
    return Partition(p1, p2)


def cross_entropy(logits: Tensor, labels, mask) -> Tensor:
    """Mean negative log-likelihood over the masked nodes."""
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size == 0:
        raise ValueError("cross_entropy mask is empty")
    labels = np.asarray(labels, dtype=np.int64)
    log_probs = ad.gather_rows(ad.row_log_softmax(logits), mask)
    onehot = np.zeros((mask.size, logits.cols))
    onehot[np.arange(mask.size), labels[mask]] = 1.0
    picked = ad.sum_all(ad.mul(log_probs, Tensor(onehot)))
    return ad.scalar_mul(picked, -1.0 / mask.size)


def mi_loss(yhat: Tensor, lam: float = 2.0) -> Tensor:
    """Mean per-node prediction entropy plus lam times the negative entropy
    of the mean class distribution, over all nodes."""
    row_sums = yhat.data.sum(axis=1)
    if np.abs(row_sums - 1.0).max() > 1e-6:
        raise ValueError("mi_loss expects probability rows summing to 1")
    n = yhat.rows
    node_entropy = ad.scalar_mul(ad.sum_all(ad.mul(yhat, ad.log(yhat))), -1.0 / n)
    mean_probs = ad.scalar_mul(ad.sum_axis(yhat, axis=0), 1.0 / n)
    class_term = ad.scalar_mul(ad.sum_all(ad.mul(mean_probs, ad.log(mean_probs))), lam)
    return ad.add(node_entropy, class_term)


def edge_aware_factor(g: Graph, x_in, sigma: float) -> np.ndarray:
    """Per-edge weights exp(-||grad x_in||^2 / sigma), cached on the graph.

    The input features are training data, so the factor is a constant of the
    run; no gradient flows into it.
    """
    cache = getattr(g, "_edge_factor_cache", None)
    if cache is None:
        cache = g._edge_factor_cache = {}
    key = (id(x_in), float(sigma))
    factor = cache.get(key)
    if factor is None:
        dense = x_in.toarray() if hasattr(x_in, "toarray") else np.asarray(x_in)
        gx = graph_gradient(dense, g)
        factor = np.exp(-np.sum(gx * gx, axis=1, keepdims=True) / sigma)
        cache[key] = factor
    return factor


def tv_loss(yhat: Tensor, x_in, g: Graph, sigma: float = 10.0,
            edge_aware: bool = True) -> Tensor:
    """Mean L1 norm of the prediction graph gradient over canonical edges.

    With edge_aware, each edge is down-weighted by exp(-||grad x_in||^2 / sigma)
    computed from the input features.
    """
    if g.num_edges == 0:
        raise ValueError("tv_loss requires a graph with at least one edge")
    if yhat.rows != g.n:
        raise ValueError("prediction rows must match node count")
    w = NodeWeights.from_graph(g).w
    i, j = g.edges[:, 0], g.edges[:, 1]
    gy = ad.sub(
        ad.mul(Tensor(w[i].reshape(-1, 1)), ad.gather_rows(yhat, i)),
        ad.mul(Tensor(w[j].reshape(-1, 1)), ad.gather_rows(yhat, j)),
    )
    edge_l1 = ad.sum_axis(ad.abs_(gy), axis=1)
    if edge_aware:
        edge_l1 = ad.mul(edge_l1, Tensor(edge_aware_factor(g, x_in, sigma)))
    return ad.scalar_mul(ad.sum_all(edge_l1), 1.0 / g.num_edges)


def preg_loss(yhat: Tensor, g: Graph) -> Tensor:
    """Squared Frobenius distance between predictions and their smoothing by
    the row-normalized adjacency with self-loops."""
    if yhat.rows != g.n:
        raise ValueError("prediction rows must match node count")
    smoothed = g.row_stochastic_operator().apply(yhat)
    r = ad.sub(yhat, smoothed)
    return ad.sum_all(ad.mul(r, r))


def cvg_from_logits(tape: Tape, params: list[Tensor], logits: Tensor, labels,
                    p1, p2, eps: float = COSINE_EPS) -> tuple[Tensor, bool]:
    """Negative cosine similarity of the two partial cross-entropy gradients.

    Both gradients come from the logits of one shared forward pass. Returns
    (loss, zero_norm_flag); a zero-norm gradient on either half contributes 0.
    """
    ce1 = cross_entropy(logits, labels, p1)
    ce2 = cross_entropy(logits, labels, p2)
    g1 = ad.backward(tape, ce1, params, higher_order=True)
    g2 = ad.backward(tape, ce2, params, higher_order=True)

    num = None
    sq1 = None
    sq2 = None
    for p in params:
        a, b = g1[p.tape_id], g2[p.tape_id]
        term = ad.dot(a, b)
        num = term if num is None else ad.add(num, term)
        s1 = ad.dot(a, a)
        sq1 = s1 if sq1 is None else ad.add(sq1, s1)
        s2 = ad.dot(b, b)
        sq2 = s2 if sq2 is None else ad.add(sq2, s2)

    if sq1.item() == 0.0 or sq2.item() == 0.0:
        return Tensor(np.zeros((1, 1))), True
    denom = ad.add(ad.mul(ad.sqrt(sq1), ad.sqrt(sq2)), Tensor([[eps]]))
    return ad.neg(ad.div(num, denom)), False


def cvg_loss(model: Model, g: Graph, x, labels, part: Partition,
             mode: str = "train", rng: np.random.Generator | None = None) -> tuple[Tensor, bool]:
    """Standalone cross-validating-gradients loss with its own forward pass.

    Must run under an active tape so the gradient computation can be taped.
    """
    if len(part.p1) == 0 or len(part.p2) == 0:
        raise ValueError("both partition halves must be nonempty")
    tape = ad._tls().tape
    if tape is None:
        raise ValueError("cvg_loss requires an active tape")
    params = [t for _, t in model.parameters()]
    for p in params:
        if p.tape is not tape or p.tape_id is None:
            tape.watch(p)
    logits = forward(model, g, x, mode, rng)
    return cvg_from_logits(tape, params, logits, labels, part.p1, part.p2)


def total_loss(model: Model, g: Graph, x, labels, mask, weights: LossWeights,
               part: Partition | None = None, mode: str = "train",
               rng: np.random.Generator | None = None,
               preg_instead_of_tv: bool = False):
    """Weighted objective with per-term breakdown.

    One train-mode forward feeds every term. Terms with zero weight are
    skipped entirely. Returns (total, breakdown dict, cvg_zero_flag); the
    breakdown holds plain floats of the unweighted terms.
    """
    tape = ad._tls().tape
    if tape is None:
        raise ValueError("total_loss requires an active tape")
    params = [t for _, t in model.parameters()]
    for p in params:
        if p.tape is not tape or p.tape_id is None:
            tape.watch(p)

    logits = forward(model, g, x, mode, rng)
    total = cross_entropy(logits, labels, mask)
    breakdown = {"ce": total.item(), "mi": 0.0, "tv": 0.0, "cvg": 0.0}
    cvg_zero = False

    yhat = None
    if weights.alpha > 0:
        yhat = ad.row_softmax(logits)
        term = mi_loss(yhat, weights.lam)
        breakdown["mi"] = term.item()
        total = ad.add(total, ad.scalar_mul(term, weights.alpha))
    if weights.beta > 0:
        if yhat is None:
            yhat = ad.row_softmax(logits)
        if preg_instead_of_tv:
            term = preg_loss(yhat, g)
        else:
            term = tv_loss(yhat, x, g, weights.sigma, weights.tv_edge_aware)
        breakdown["tv"] = term.item()
        total = ad.add(total, ad.scalar_mul(term, weights.beta))
    if weights.gamma > 0:
        if part is None:
            raise ValueError("gamma > 0 requires a labelled-node partition")
        term, cvg_zero = cvg_from_logits(tape, params, logits, labels, part.p1, part.p2)
        breakdown["cvg"] = term.item()
        total = ad.add(total, ad.scalar_mul(term, weights.gamma))

    return total, breakdown, cvg_zero
