import numpy as np
import pytest

from encgnn import autodiff as ad
from encgnn.autodiff import SparseOperator, Tensor

from conftest import check_gradient, fd_gradient, grad_of, rel_err


def safe_normal(rng, shape, kink_margin=1e-3):
    """N(0,1) samples resampled away from relu/abs kinks."""
    x = rng.normal(size=shape)
    while np.any(np.abs(x) < kink_margin):
        bad = np.abs(x) < kink_margin
        x[bad] = rng.normal(size=bad.sum())
    return x


# ---------------------------------------------------------------------------
# forward values

def test_row_softmax_symmetry():
    out = ad.row_softmax(Tensor([[0.0, 0.0]]))
    assert np.allclose(out.data, [[0.5, 0.5]])


def test_row_softmax_rows_sum_to_one(rng):
    x = rng.normal(size=(7, 5)) * 3
    out = ad.row_softmax(Tensor(x))
    assert np.abs(out.data.sum(axis=1) - 1.0).max() < 1e-12


def test_log_softmax_matches_log_of_softmax(rng):
    x = rng.normal(size=(6, 4)) * 2
    ls = ad.row_log_softmax(Tensor(x)).data
    sm = np.log(ad.row_softmax(Tensor(x)).data)
    assert np.abs(ls - sm).max() < 1e-9


def test_log_softmax_stable_for_huge_logits():
    x = np.array([[1e4, -1e4, 0.0]])
    ls = ad.row_log_softmax(Tensor(x)).data
    assert np.all(np.isfinite(ls))
    assert abs(ls[0, 0]) < 1e-9  # dominant logit has probability ~1


def test_relu_backward_at_negative_input_is_zero():
    g = grad_of(lambda t: ad.sum_all(ad.relu(t)), np.array([[-1.0]]))
    assert g[0, 0] == 0.0


def test_dropout_p_zero_is_identity(rng):
    x = Tensor(rng.normal(size=(3, 3)))
    for train in (True, False):
        out = ad.dropout(x, 0.0, rng, train)
        assert out is x


def test_dropout_eval_is_identity(rng):
    x = Tensor(rng.normal(size=(3, 3)))
    assert ad.dropout(x, 0.7, rng, train=False) is x


def test_dropout_inverted_scaling(rng):
    x = Tensor(np.ones((200, 50)))
    out = ad.dropout(x, 0.4, rng, train=True)
    kept = out.data[out.data != 0]
    assert np.allclose(kept, 1.0 / 0.6)
    assert abs(out.data.mean() - 1.0) < 0.05


def test_log_clamp_makes_zero_entropy_terms_vanish():
    y = Tensor([[1.0, 0.0]])
    val = ad.sum_all(ad.mul(y, ad.log(y))).item()
    assert val == 0.0  # 1*log(1) + 0*log(eps) = 0


def test_abs_subgradient_at_zero_no_nan():
    g = grad_of(lambda t: ad.sum_all(ad.abs_(t)), np.array([[0.0, -2.0, 3.0]]))
    assert not np.any(np.isnan(g))
    assert g[0, 0] == 0.0 and g[0, 1] == -1.0 and g[0, 2] == 1.0


def test_log_negative_raises():
    with pytest.raises(ValueError):
        ad.log(Tensor([[-1.0]]))


def test_matmul_shape_mismatch_raises():
    with pytest.raises(ValueError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_backward_requires_scalar_loss(rng):
    tape = ad.Tape()
    w = Tensor(rng.normal(size=(2, 2)))
    with ad.active_tape(tape):
        tape.watch(w)
        out = ad.relu(w)
        with pytest.raises(ValueError):
            ad.backward(tape, out, [w])


def test_backward_detached_input_raises(rng):
    tape = ad.Tape()
    w = Tensor(rng.normal(size=(2, 2)))
    detached = Tensor(rng.normal(size=(2, 2)))
    with ad.active_tape(tape):
        tape.watch(w)
        loss = ad.sum_all(w)
        with pytest.raises(ValueError):
            ad.backward(tape, loss, [detached])


# ---------------------------------------------------------------------------
# gradient oracle: every primitive against central finite differences

def test_linear_loss_gradient_matches_broadcast_structure(rng):
    x = Tensor(rng.normal(size=(4, 3)))
    g = grad_of(lambda w: ad.sum_all(ad.matmul(w, x)), rng.normal(size=(2, 4)))
    expected = np.ones((2, 3)) @ x.data.T
    assert rel_err(g, expected) < 1e-12


UNARY_CASES = [
    ("relu", lambda t: ad.relu(t), lambda x: np.maximum(x, 0)),
    ("leaky_relu", lambda t: ad.leaky_relu(t, 0.2), lambda x: np.where(x > 0, x, 0.2 * x)),
    ("abs", lambda t: ad.abs_(t), np.abs),
    ("exp", lambda t: ad.exp(t), np.exp),
    ("neg", lambda t: ad.neg(t), lambda x: -x),
    ("transpose", lambda t: ad.transpose(t), lambda x: x.T),
    ("scalar_mul", lambda t: ad.scalar_mul(t, 1.7), lambda x: 1.7 * x),
    ("sqrt_pos", lambda t: ad.sqrt(t), np.sqrt),
    ("log_pos", lambda t: ad.log(t), np.log),
    ("row_softmax", lambda t: ad.row_softmax(t), None),
    ("row_log_softmax", lambda t: ad.row_log_softmax(t), None),
    ("sum_axis0", lambda t: ad.sum_axis(t, 0), lambda x: x.sum(axis=0, keepdims=True)),
    ("sum_axis1", lambda t: ad.sum_axis(t, 1), lambda x: x.sum(axis=1, keepdims=True)),
    ("mean", lambda t: ad.mean_all(t), None),
]


@pytest.mark.parametrize("name,op,np_op", UNARY_CASES, ids=[c[0] for c in UNARY_CASES])
def test_unary_gradients_match_finite_differences(name, op, np_op, rng):
    x = safe_normal(rng, (4, 3))
    if name in ("sqrt_pos", "log_pos"):
        x = np.abs(x) + 0.5
    weights = rng.normal(size=(4, 3) if name != "transpose" else (3, 4))

    def build(t):
        out = op(t)
        return ad.sum_all(ad.mul(out, Tensor(weights if out.shape == weights.shape else np.ones(out.shape))))

    def forward(xd):
        tmp = op(Tensor(xd)).data
        w = weights if tmp.shape == weights.shape else np.ones(tmp.shape)
        return float((tmp * w).sum())

    check_gradient(build, forward, x, tol=1e-5)


BINARY_CASES = [
    ("add", ad.add),
    ("sub", ad.sub),
    ("mul", ad.mul),
    ("div", ad.div),
]


@pytest.mark.parametrize("name,op", BINARY_CASES, ids=[c[0] for c in BINARY_CASES])
@pytest.mark.parametrize("b_shape", [(4, 3), (4, 1), (1, 3), (1, 1)])
def test_binary_gradients_with_broadcasting(name, op, b_shape, rng):
    a = safe_normal(rng, (4, 3))
    b = safe_normal(rng, b_shape) + (2.0 if name == "div" else 0.0)
    weights = rng.normal(size=(4, 3))

    for side in (0, 1):
        def build(t):
            args = (t, Tensor(b)) if side == 0 else (Tensor(a), t)
            return ad.sum_all(ad.mul(op(*args), Tensor(weights)))

        def forward(xd):
            args = (Tensor(xd), Tensor(b)) if side == 0 else (Tensor(a), Tensor(xd))
            return float((op(*args).data * weights).sum())

        check_gradient(build, forward, a if side == 0 else b, tol=1e-5)


def test_matmul_gradients_both_sides(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    weights = rng.normal(size=(3, 2))

    check_gradient(
        lambda t: ad.sum_all(ad.mul(ad.matmul(t, Tensor(b)), Tensor(weights))),
        lambda xd: float((xd @ b * weights).sum()),
        a,
    )
    check_gradient(
        lambda t: ad.sum_all(ad.mul(ad.matmul(Tensor(a), t), Tensor(weights))),
        lambda xd: float((a @ xd * weights).sum()),
        b,
    )


def test_gather_scatter_gradients(rng):
    x = rng.normal(size=(5, 3))
    idx = np.array([0, 2, 2, 4, 1, 0])
    weights = rng.normal(size=(len(idx), 3))

    check_gradient(
        lambda t: ad.sum_all(ad.mul(ad.gather_rows(t, idx), Tensor(weights))),
        lambda xd: float((xd[idx] * weights).sum()),
        x,
    )

    y = rng.normal(size=(len(idx), 3))
    w2 = rng.normal(size=(5, 3))

    def np_scatter(yd):
        out = np.zeros((5, 3))
        np.add.at(out, idx, yd)
        return float((out * w2).sum())

    check_gradient(
        lambda t: ad.sum_all(ad.mul(ad.scatter_add_rows(t, idx, 5), Tensor(w2))),
        np_scatter,
        y,
    )


def test_concat_slice_gradients(rng):
    a = rng.normal(size=(3, 2))
    b = rng.normal(size=(3, 4))
    weights = rng.normal(size=(3, 6))

    check_gradient(
        lambda t: ad.sum_all(ad.mul(ad.concat_cols(t, Tensor(b)), Tensor(weights))),
        lambda xd: float((np.concatenate([xd, b], axis=1) * weights).sum()),
        a,
    )
    w3 = rng.normal(size=(3, 2))
    check_gradient(
        lambda t: ad.sum_all(ad.mul(ad.slice_cols(t, 1, 3), Tensor(w3))),
        lambda xd: float((xd[:, 1:3] * w3).sum()),
        b,
    )


def test_segment_softmax_gradients(rng):
    scores = rng.normal(size=(7, 1))
    seg = np.array([0, 0, 1, 1, 1, 2, 2])
    weights = rng.normal(size=(7, 1))

    def np_forward(sd):
        out = np.zeros_like(sd)
        for s in np.unique(seg):
            m = seg == s
            e = np.exp(sd[m] - sd[m].max())
            out[m] = e / e.sum()
        return float((out * weights).sum())

    check_gradient(
        lambda t: ad.sum_all(ad.mul(ad.segment_softmax(t, seg, 3), Tensor(weights))),
        np_forward,
        scores,
    )


def test_segment_softmax_rows_sum_to_one(rng):
    seg = np.array([0, 0, 0, 2, 2])
    out = ad.segment_softmax(Tensor(rng.normal(size=(5, 1))), seg, 3)
    sums = np.zeros(3)
    np.add.at(sums, seg, out.data[:, 0])
    assert abs(sums[0] - 1.0) < 1e-12 and abs(sums[2] - 1.0) < 1e-12


def test_spmm_gradient_matches_dense(rng):
    import scipy.sparse as sp

    dense = (rng.random((5, 5)) < 0.4) * rng.normal(size=(5, 5))
    op = SparseOperator(sp.csr_matrix(dense))
    x = rng.normal(size=(5, 3))
    weights = rng.normal(size=(5, 3))

    check_gradient(
        lambda t: ad.sum_all(ad.mul(ad.spmm(op, t), Tensor(weights))),
        lambda xd: float((dense @ xd * weights).sum()),
        x,
    )


def test_sparse_operator_taped_values_gradient(rng):
    dst = np.array([0, 0, 1, 2, 2])
    src = np.array([1, 2, 0, 0, 1])
    vals = rng.normal(size=(5, 1))
    x = rng.normal(size=(3, 2))
    weights = rng.normal(size=(3, 2))

    def np_forward(vd):
        out = np.zeros((3, 2))
        np.add.at(out, dst, vd * x[src])
        return float((out * weights).sum())

    def build(t):
        op = SparseOperator.from_edges(dst, src, t, 3)
        return ad.sum_all(ad.mul(op.apply(Tensor(x)), Tensor(weights)))

    check_gradient(build, np_forward, vals)


def test_dropout_gradient_uses_saved_mask(rng):
    x = rng.normal(size=(6, 4))
    seed_rng = np.random.default_rng(7)
    mask_probe = np.random.default_rng(7)
    # probe the mask the op will draw
    keep = (mask_probe.random((6, 4)) >= 0.3) / 0.7

    g = grad_of(lambda t: ad.sum_all(ad.dropout(t, 0.3, seed_rng, True)), x)
    assert np.allclose(g, keep)


def test_mlp_gradient_matches_finite_differences(rng):
    """Random 3-layer MLP, gradients for every weight, rel err < 1e-5."""
    sizes = [(5, 7), (7, 6), (6, 2)]
    ws = [safe_normal(rng, s) for s in sizes]
    x = safe_normal(rng, (4, 5))
    target = rng.normal(size=(4, 2))

    def np_forward(mats):
        h = x
        for i, w in enumerate(mats):
            h = h @ w
            if i < 2:
                h = np.maximum(h, 0)
        d = h - target
        return float((d * d).sum())

    for k in range(3):
        def build(t):
            mats = [Tensor(w) for w in ws]
            mats[k] = t
            h = Tensor(x)
            for i, w in enumerate(mats):
                h = ad.matmul(h, w)
                if i < 2:
                    h = ad.relu(h)
            d = ad.sub(h, Tensor(target))
            return ad.sum_all(ad.mul(d, d))

        def forward(wd):
            mats = [w for w in ws]
            mats[k] = wd
            return np_forward(mats)

        check_gradient(build, forward, ws[k], tol=1e-5)


# ---------------------------------------------------------------------------
# second order

def test_second_backward_of_quadratic_is_constant_hessian(rng):
    v = rng.normal(size=(3, 3))
    tape = ad.Tape()
    w = Tensor(rng.normal(size=(3, 3)))
    with ad.active_tape(tape):
        tape.watch(w)
        loss = ad.sum_all(ad.mul(w, w))
        g = ad.backward(tape, loss, [w], higher_order=True)[w.tape_id]
        s = ad.dot(g, Tensor(v))
        hv = ad.backward(tape, s, [w])[w.tape_id]
    assert np.allclose(hv.data, 2 * v)


def test_second_order_matches_finite_differences_of_gradient(rng):
    """d/dw of (g(w) . v) vs central differences of g, rel err < 1e-4."""
    x = safe_normal(rng, (4, 3))
    w0 = safe_normal(rng, (3, 2))
    v = rng.normal(size=(3, 2))

    def grad_at(wd):
        tape = ad.Tape()
        w = Tensor(wd)
        with ad.active_tape(tape):
            tape.watch(w)
            h = ad.relu(ad.matmul(Tensor(x), w))
            loss = ad.sum_all(ad.mul(ad.row_softmax(h), ad.log(ad.row_softmax(h))))
            return ad.backward(tape, loss, [w])[w.tape_id].data

    tape = ad.Tape()
    w = Tensor(w0)
    with ad.active_tape(tape):
        tape.watch(w)
        h = ad.relu(ad.matmul(Tensor(x), w))
        loss = ad.sum_all(ad.mul(ad.row_softmax(h), ad.log(ad.row_softmax(h))))
        g = ad.backward(tape, loss, [w], higher_order=True)[w.tape_id]
        s = ad.dot(g, Tensor(v))
        hv = ad.backward(tape, s, [w])[w.tape_id].data

    numeric = fd_gradient(lambda wd: float((grad_at(wd) * v).sum()), w0, h=1e-5)
    assert rel_err(hv, numeric) < 1e-4


# ---------------------------------------------------------------------------
# initializers

def test_float32_mode_round_trips():
    ad.set_default_dtype(np.float32)
    try:
        t = Tensor(np.ones((2, 2)))
        assert t.data.dtype == np.float32
        g = grad_of(lambda w: ad.sum_all(ad.mul(w, w)), np.full((2, 2), 3.0))
        assert g.dtype == np.float32
        assert np.allclose(g, 6.0)
    finally:
        ad.set_default_dtype(np.float64)
    assert Tensor(np.ones((1, 1))).data.dtype == np.float64


def test_set_default_dtype_rejects_others():
    with pytest.raises(ValueError):
        ad.set_default_dtype(np.int32)


def test_concurrent_tapes_in_threads(rng):
    # distinct runs on independent tapes may execute concurrently
    import threading

    x = rng.normal(size=(6, 4))
    results = {}

    def work(key, scale):
        tape = ad.Tape()
        w = Tensor(np.full((4, 3), scale))
        with ad.active_tape(tape):
            tape.watch(w)
            loss = ad.sum_all(ad.relu(ad.matmul(Tensor(x), w)))
            results[key] = ad.backward(tape, loss, [w])[w.tape_id].data

    threads = [threading.Thread(target=work, args=(i, 0.5 + i)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    for i in range(4):
        expected = results[i]
        work(f"serial{i}", 0.5 + i)
        assert np.array_equal(results[f"serial{i}"], expected)


def test_identity_init():
    assert np.array_equal(ad.identity_init(3).data, np.eye(3))


def test_glorot_bound_64():
    rng = np.random.default_rng(0)
    bound = np.sqrt(6.0 / 128.0)
    assert abs(bound - 0.21650635094610965) < 1e-12
    t = ad.glorot_init(64, 64, rng)
    assert np.abs(t.data).max() <= bound


def test_glorot_support(rng):
    t = ad.glorot_init(100, 100, rng)
    bound = np.sqrt(6.0 / 200.0)
    assert t.data.size == 10**4
    assert np.all(t.data <= bound) and np.all(t.data >= -bound)


def test_glorot_rejects_nonpositive_dims(rng):
    with pytest.raises(ValueError):
        ad.glorot_init(0, 3, rng)
