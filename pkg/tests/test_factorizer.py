import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ccfactor.autodiff import Graph, ValidationError
from ccfactor.factorizer import (
    FULL_SCALE_FACTORIZER,
    FactorizerConfig,
    FactorPair,
    init_factorizer,
    mi_loss,
    project,
    project_numpy,
)
from ccfactor.gradcheck import check_gradients
from oracles import mi_terms_straight

SMALL = FactorizerConfig(F=3, hidden=5, hidden_layers=2, frame_dim=6)
E = 4


def _params(seed=0, cfg=SMALL):
    return init_factorizer(np.random.default_rng(seed), E, cfg)


def _mi(g, params, emb, frames, valid=None):
    nodes = g.bind(params)
    return mi_loss(g, nodes, g.constant(emb), g.constant(frames), valid)


def test_zero_embeddings_give_zero_factors():
    params = _params()
    zc, zx = project_numpy(params, np.zeros((5, E)))
    assert np.array_equal(zc, np.zeros((5, 3))) and np.array_equal(zx, np.zeros((5, 3)))


def test_projection_is_framewise():
    params = _params()
    e = np.random.default_rng(1).standard_normal((6, E))
    perm = np.random.default_rng(2).permutation(6)
    zc, zx = project_numpy(params, e)
    pc, px = project_numpy(params, e[perm])
    assert np.allclose(pc, zc[perm], rtol=0, atol=1e-15) and np.allclose(px, zx[perm], rtol=0, atol=1e-15)


def test_graph_and_numpy_projection_agree():
    params = _params()
    e = np.random.default_rng(1).standard_normal((2, 6, E))
    g = Graph()
    fp = project(g, g.bind(params), g.constant(e), "tanh")
    zc, zx = project_numpy(params, e, "tanh")
    assert np.allclose(fp.z_content.value, zc, rtol=0, atol=1e-15)
    assert np.allclose(fp.z_context.value, zx, rtol=0, atol=1e-15)


def test_full_scale_shapes():
    params = init_factorizer(np.random.default_rng(0), 1024, FULL_SCALE_FACTORIZER)
    assert FULL_SCALE_FACTORIZER.F == 512 and FULL_SCALE_FACTORIZER.hidden == 512 and FULL_SCALE_FACTORIZER.hidden_layers == 3
    assert params["factorizer/pi_content/0/W"].shape == (1024, 512)
    assert params["factorizer/pi_content/3/W"].shape == (512, 512)
    assert "factorizer/pi_content/4/W" not in params
    assert params["factorizer/phi_joint/0/W"].shape == (1024, 512)
    assert params["factorizer/phi_joint/3/W"].shape == (512, 192)


def test_dimension_mismatch_rejected():
    g = Graph()
    with pytest.raises(ValidationError):
        project(g, g.bind(_params()), g.constant(np.zeros((3, E + 1))))
    with pytest.raises(ValidationError):
        _mi(Graph(), _params(), np.zeros((4, E)), np.zeros((5, 6)))


def _linear_factorizer():
    cfg = FactorizerConfig(F=2, hidden=2, hidden_layers=0, frame_dim=2)
    return {k: np.zeros_like(v) for k, v in init_factorizer(np.random.default_rng(0), 2, cfg).items()}


def _hand_terms(params, zc, zx):
    g = Graph()
    nodes = g.bind(params)
    factors = FactorPair(g.constant(zc), g.constant(zx))
    return mi_loss(g, nodes, g.constant(np.zeros((1, 2))), g.constant(np.zeros((1, 2))), None, factors)


def test_hand_evaluated_content_term():
    terms = _hand_terms(_linear_factorizer(), np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
    assert terms.content.value[0] == 1.0


def test_exact_prediction_gives_zero_content_term():
    params = _linear_factorizer()
    params["factorizer/phi_content/0/W"] = np.array([[0.0, 0.0], [1.0, 0.0]])  # maps (0,1) to (1,0)
    terms = _hand_terms(params, np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
    assert terms.content.value[0] == 0.0


def test_matches_straight_line_reimplementation():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        params = _params(seed)
        emb = rng.standard_normal((4, E))
        frames = rng.standard_normal((4, 6))
        got = _mi(Graph(), params, emb, frames)
        want = mi_terms_straight(params, emb, frames)
        for node, w in zip((got.content, got.context, got.joint), want):
            assert abs(node.value[0] - w) <= 1e-12 * max(1.0, abs(w))
        assert got.total.value[0] == pytest.approx(sum(want), rel=1e-12)


def test_padding_frames_excluded():
    rng = np.random.default_rng(3)
    params = _params()
    emb = rng.standard_normal((1, 4, E))
    frames = rng.standard_normal((1, 4, 6))
    pad_e = np.concatenate([emb, rng.standard_normal((1, 3, E))], axis=1)
    pad_f = np.concatenate([frames, rng.standard_normal((1, 3, 6))], axis=1)
    valid = np.array([[True] * 4 + [False] * 3])
    a = _mi(Graph(), params, emb, frames).total.value[0]
    b = _mi(Graph(), params, pad_e, pad_f, valid).total.value[0]
    assert a == pytest.approx(b, rel=1e-13)


@given(st.integers(0, 10_000))
def test_mi_loss_nonnegative(seed):
    rng = np.random.default_rng(seed)
    t = _mi(Graph(), _params(seed % 7), rng.standard_normal((3, E)) * 3, rng.standard_normal((3, 6)))
    assert min(t.content.value[0], t.context.value[0], t.joint.value[0]) >= 0
    assert t.total.value[0] >= 0


def test_joint_term_zero_iff_exact_reconstruction():
    rng = np.random.default_rng(0)
    params = _params()
    emb = rng.standard_normal((4, E))
    g = Graph()
    nodes = g.bind(params)
    zc, zx = project_numpy(params, emb, "tanh")
    from oracles import mlp_forward

    recon = mlp_forward(params, "factorizer/phi_joint", np.concatenate([zc, zx], axis=1))
    assert mi_loss(g, nodes, g.constant(emb), g.constant(recon)).joint.value[0] == pytest.approx(0.0, abs=1e-28)
    g2 = Graph()
    off = recon.copy()
    off[2, 1] += 1e-3
    assert mi_loss(g2, g2.bind(params), g2.constant(emb), g2.constant(off)).joint.value[0] > 0


# -- gradient reversal placement ----------------------------------------------------


def _grads(term: str, mode: str, seed=0):
    rng = np.random.default_rng(seed)
    params = _params(seed)
    emb = rng.standard_normal((5, E))
    frames = rng.standard_normal((5, 6))
    g = Graph(grl_mode=mode)
    t = _mi(g, params, emb, frames)
    return g.backward(getattr(t, term))


@pytest.mark.parametrize("term,reversed_net,direct_nets", [
    ("content", "pi_context", ("phi_content", "pi_content")),
    ("context", "pi_content", ("phi_context", "pi_context")),
])
def test_reversal_flips_only_the_cross_projection(term, reversed_net, direct_nets):
    for seed in range(3):
        rev, ident = _grads(term, "reverse", seed), _grads(term, "identity", seed)
        for k in rev:
            net = k.split("/")[1]
            if net == reversed_net:
                assert np.array_equal(rev[k], -ident[k]), k
            else:
                assert np.array_equal(rev[k], ident[k]), k
        assert any(np.any(rev[k] != 0) for k in rev if k.split("/")[1] == reversed_net)
        for net in direct_nets:
            assert any(np.any(rev[k] != 0) for k in rev if k.split("/")[1] == net)


def test_joint_term_has_no_reversal():
    rev, ident = _grads("joint", "reverse"), _grads("joint", "identity")
    for k in rev:
        assert np.array_equal(rev[k], ident[k])


def test_whole_loss_gradient_check():
    rng = np.random.default_rng(8)
    params = _params(8)
    params["emb"] = rng.standard_normal((4, E))
    frames = rng.standard_normal((4, 6))

    def loss(g, p):
        nodes = g.bind({k: v for k, v in p.items() if k != "emb"})
        return mi_loss(g, nodes, g.param("emb", p["emb"]), g.constant(frames)).total

    assert check_gradients(loss, params).max_error < 1e-4
