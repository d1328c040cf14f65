"""Model assembly: embeddings, interleaving, heads, recall/ranking forwards."""

import numpy as np
import pytest

from recscale import model as M
from recscale.data import PAD, UserSequence
from recscale.tensor import Tensor

from conftest import numeric_grad, rel_err


def small_cfg(**kw):
    base = dict(vocab=12, dim=8, blocks=1, max_len=6)
    base.update(kw)
    return M.ModelConfig(**base)


def seq_of(items, ts=None, labels=None, n=6):
    items = np.asarray(items)
    m = len(items)
    full = np.zeros(n, np.int64)
    full[n - m:] = items
    t = np.zeros(n, np.int64)
    t[n - m:] = np.arange(1, m + 1) * 100 if ts is None else np.asarray(ts)
    lab = None
    if labels is not None:
        lab = np.zeros(n, np.int64)
        lab[n - m:] = labels
    return UserSequence(user_id="u", items=full, behaviors=np.zeros(n, np.int64),
                        timestamps=t, labels=lab)


# -- config -------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(M.ModelError):
        small_cfg(task="classify")
    with pytest.raises(M.ModelError):
        small_cfg(head="linear")
    with pytest.raises(M.ModelError):
        small_cfg(vocab=0)
    with pytest.raises(M.ModelError):
        small_cfg(behavior_tokens=True)  # missing behavior_vocab
    with pytest.raises(M.ModelError):
        small_cfg(side_info=True)        # missing attr vocabs


def test_interleaved_doubles_block_len():
    cfg = small_cfg(task="ranking")
    assert cfg.seq_len == 12
    assert cfg.block.max_len == 12
    assert small_cfg().seq_len == 6


def test_config_dict_round_trip():
    cfg = small_cfg(task="ranking", head="mlp", tie_output=False)
    back = M.ModelConfig.from_dict(cfg.to_dict())
    assert back.to_dict() == cfg.to_dict()


# -- initialization -----------------------------------------------------------

def test_pad_rows_start_zero():
    model = M.init_model(small_cfg(), seed=3)
    assert (model.tables.item.data[0] == 0).all()


def test_tie_output_shares_table():
    tied = M.init_model(small_cfg(tie_output=True))
    untied = M.init_model(small_cfg(tie_output=False))
    assert tied.output_table() is tied.tables.item
    assert untied.output_table() is untied.tables.out_item
    assert untied.tables.out_item is not untied.tables.item


def test_enforce_pad_rows():
    model = M.init_model(small_cfg())
    model.tables.item.data[0] = 7.0
    model.enforce_pad_rows()
    assert (model.tables.item.data[0] == 0).all()


def test_param_count_matches_named():
    model = M.init_model(small_cfg(blocks=2, head="mlp", task="ranking"))
    assert model.param_count() == sum(t.data.size for _, t in model.parameters())
    names = [n for n, _ in model.parameters()]
    assert len(names) == len(set(names))


def test_init_deterministic():
    a = M.init_model(small_cfg(), seed=9)
    b = M.init_model(small_cfg(), seed=9)
    for (n1, t1), (n2, t2) in zip(a.parameters(), b.parameters()):
        assert n1 == n2 and np.array_equal(t1.data, t2.data)


# -- interleaving -------------------------------------------------------------

def test_interleave_ranking_layout():
    tokens, slots = M.interleave_ranking([7, 9], [1, 0])
    assert tokens == [7, "L1", 9, "L0"]
    assert slots == [0, 2]


def test_de_interleave_inverse():
    tokens, _ = M.interleave_ranking([3, 1, 4], [0, 0, 1])
    items, labels = M.de_interleave_ranking(tokens)
    assert items == [3, 1, 4]
    assert labels == [0, 0, 1]
    with pytest.raises(M.ModelError):
        M.de_interleave_ranking([3, "L0", 4])


def test_interleave_rows_matches_numpy(rng):
    a = rng.standard_normal((2, 3, 4))
    b = rng.standard_normal((2, 3, 4))
    out = M._interleave_rows(Tensor(a), Tensor(b)).data
    assert out.shape == (2, 6, 4)
    assert np.array_equal(out[:, 0::2], a)
    assert np.array_equal(out[:, 1::2], b)


def test_interleave_arrays():
    out = M.interleave_arrays(np.array([[1, 2]]), np.array([[8, 9]]))
    assert out.tolist() == [[1, 8, 2, 9]]


def test_even_odd_row_split(rng):
    x = rng.standard_normal((2, 6, 4))
    assert np.array_equal(M._even_rows(Tensor(x)).data, x[:, 0::2])


# -- recall forward -----------------------------------------------------------

def test_forward_recall_shape_and_determinism():
    model = M.init_model(small_cfg(), seed=0)
    seqs = [seq_of([1, 2, 3]), seq_of([4, 5, 6, 7])]
    s1 = M.forward_recall(model, seqs)
    s2 = M.forward_recall(model, seqs)
    assert s1.shape == (2, 13)
    assert np.array_equal(s1, s2)


def test_forward_recall_all_pad_rejected():
    model = M.init_model(small_cfg())
    with pytest.raises(M.ModelError, match="all-pad"):
        M.forward_recall(model, [seq_of([])])


def test_forward_recall_empty_batch():
    model = M.init_model(small_cfg())
    with pytest.raises(M.ModelError):
        M.forward_recall(model, [])


def test_top_k_tie_break_ascending_id():
    scores = np.zeros((1, 6))
    out = M.top_k_items(scores, 3)
    assert out.tolist() == [[1, 2, 3]]  # pad excluded, then ascending ids
    scores[0, 4] = 1.0
    assert M.top_k_items(scores, 2).tolist() == [[4, 1]]


def test_loss_recall_rejects_pad_target():
    with pytest.raises(M.ModelError):
        M.loss_recall(Tensor(np.zeros((2, 5))), np.array([1, 0]))


def test_loss_recall_uniform_closed_form():
    # all-zero scores over V+1 classes -> loss = ln(V+1)
    scores = Tensor(np.zeros((3, 13), dtype=np.float64))
    loss = M.loss_recall(scores, np.array([1, 5, 12]))
    assert loss.item() == pytest.approx(np.log(13.0), abs=1e-12)


def test_loss_recall_sampled_mode(rng):
    scores = Tensor(rng.standard_normal((2, 20)), requires_grad=True)
    loss = M.loss_recall(scores, np.array([3, 4]), num_sampled=5,
                         rng=np.random.default_rng(0))
    loss.backward()
    assert np.isfinite(loss.item())
    assert scores.grad is not None
    with pytest.raises(M.ModelError):
        M.loss_recall(Tensor(np.zeros((2, 20))), np.array([3, 4]), num_sampled=5)


def test_gather_cols_grad(rng):
    x = rng.standard_normal((3, 8))
    cols = rng.integers(0, 8, size=(3, 4))
    cols[0, 1] = cols[0, 0]  # duplicate column must accumulate
    w = rng.standard_normal((3, 4))
    xt = Tensor(x.copy(), requires_grad=True)
    (M.gather_cols(xt, cols) * Tensor(w)).sum().backward()
    num = numeric_grad(lambda v: float((np.take_along_axis(v, cols, -1) * w).sum()), x)
    assert rel_err(xt.grad, num) < 1e-6


# -- scoring heads ------------------------------------------------------------

def test_score_head_dot_closed_form():
    s = Tensor(np.array([[1.0, 2.0, 3.0]]))
    e = Tensor(np.array([[4.0, 5.0, 6.0]]))
    out = M.score_head(s, e, M.ScoringHead(kind="dot"))
    assert out.data.tolist() == [32.0]


def test_score_head_shape_mismatch():
    with pytest.raises(M.ModelError):
        M.score_head(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 4))),
                     M.ScoringHead(kind="dot"))


@pytest.mark.parametrize("kind", M.HEADS)
def test_score_head_grads(kind, rng):
    d = 4
    model = M.init_model(small_cfg(dim=d, head=kind, task="ranking"), seed=2,
                         dtype=np.float64)
    s = rng.standard_normal((3, d))
    e = rng.standard_normal((3, d))
    w = rng.standard_normal(3)
    st = Tensor(s.copy(), requires_grad=True)
    out = M.score_head(st, Tensor(e), model.head)
    (out * Tensor(w)).sum().backward()
    num = numeric_grad(
        lambda v: float((M.score_head(Tensor(v), Tensor(e), model.head).data * w).sum()), s)
    assert rel_err(st.grad, num) < 1e-6


# -- ranking forward ----------------------------------------------------------

def rank_batch(model, seqs):
    items = np.stack([s.items for s in seqs])
    ts = np.stack([s.timestamps for s in seqs])
    labels = np.stack([s.labels for s in seqs])
    return M.ranking_logits(model, items, ts, labels)


def test_ranking_logits_shape():
    model = M.init_model(small_cfg(task="ranking"), seed=1)
    out = rank_batch(model, [seq_of([1, 2, 3], labels=[1, 0, 1])])
    assert out.shape == (1, 6)


def test_ranking_label_after_slot_no_leak():
    # the label token of item k sits after prediction slot k under the causal
    # mask, so flipping the last label cannot change its own logit
    model = M.init_model(small_cfg(task="ranking"), seed=1)
    a = rank_batch(model, [seq_of([1, 2, 3], labels=[1, 0, 1])]).data
    b = rank_batch(model, [seq_of([1, 2, 3], labels=[1, 0, 0])]).data
    assert np.array_equal(a[0], b[0])


def test_ranking_earlier_label_affects_later_slots_only():
    model = M.init_model(small_cfg(task="ranking"), seed=1)
    a = rank_batch(model, [seq_of([1, 2, 3], labels=[1, 0, 1])]).data[0]
    b = rank_batch(model, [seq_of([1, 2, 3], labels=[0, 0, 1])]).data[0]
    assert a[-3] == b[-3]                    # own slot unchanged
    assert not np.array_equal(a[-2:], b[-2:])  # later slots see the flip


def test_ranking_pad_labels_zeroed():
    # pad positions contribute zero label embedding regardless of label value
    model = M.init_model(small_cfg(task="ranking"), seed=1)
    s1 = seq_of([1, 2, 3], labels=[1, 0, 1])
    s2 = seq_of([1, 2, 3], labels=[1, 0, 1])
    s2.labels[0] = 1  # a pad position
    a = rank_batch(model, [s1]).data
    b = rank_batch(model, [s2]).data
    assert np.array_equal(a, b)


# -- behavior tokens and side info --------------------------------------------

def test_behavior_tokens_interleave():
    cfg = small_cfg(behavior_tokens=True, behavior_vocab=3)
    model = M.init_model(cfg, seed=0)
    items = np.array([[0, 1, 2, 3, 4, 5]])
    behaviors = np.array([[0, 1, 2, 1, 2, 1]])
    emb = M.embed_batch(model, items, behaviors=behaviors)
    assert emb.shape == (1, 12, 8)
    assert np.array_equal(emb.data[0, 0::2], model.tables.item.data[items[0]])
    assert np.array_equal(emb.data[0, 1::2], model.tables.behavior.data[behaviors[0]])
    with pytest.raises(M.ModelError):
        M.embed_batch(model, items)


def test_side_info_fusion_mean_oracle(rng):
    cfg = small_cfg(side_info=True, side_attr_vocabs=(5, 7))
    model = M.init_model(cfg, seed=4)
    items = np.array([[0, 2, 3]])
    attrs = np.array([[[0, 0], [1, 0], [2, 5]]])
    emb = M.embed_batch(model, items, attrs=attrs)
    it = model.tables.item.data
    a0 = model.tables.attrs[0].data
    a1 = model.tables.attrs[1].data
    assert np.allclose(emb.data[0, 0], 0.0)  # pad stays zero
    assert np.allclose(emb.data[0, 1], (it[2] + a0[1]) / 2.0, atol=1e-6)
    assert np.allclose(emb.data[0, 2], (it[3] + a0[2] + a1[5]) / 3.0, atol=1e-6)


def test_final_states_match_forward_recall():
    model = M.init_model(small_cfg(), seed=0)
    seqs = [seq_of([1, 2, 3]), seq_of([4, 5])]
    states = M.final_states(model, seqs)
    scores = M.forward_recall(model, seqs)
    assert np.allclose(states @ model.output_table().data.T, scores, atol=1e-6)
