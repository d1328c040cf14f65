"""Ingestion, sequence building, splits, filters, and synthetic generators."""

import math

import numpy as np
import pytest

from recscale import data as D


def write_csv(path, rows):
    lines = [",".join(D.CANONICAL_HEADER)]
    lines += [",".join(str(x) for x in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


@pytest.fixture
def tiny_log(tmp_path):
    rows = [
        ("u1", "a", "pv", 100, "", "d1"),
        ("u1", "b", "buy", 200, 5, "d1"),
        ("u1", "c", "pv", 300, 2, "d1"),
        ("u1", "d", "pv", 400, 4, "d1"),
        ("u2", "a", "buy", 150, 3, "d1"),
        ("u2", "c", "pv", 250, 5, "d1"),
        ("u2", "b", "pv", 350, 1, "d1"),
    ]
    p = tmp_path / "tiny.csv"
    write_csv(p, rows)
    return D.ingest(p, "canonical_csv")


# -- ingestion ----------------------------------------------------------------

def test_ingest_canonical(tiny_log):
    assert len(tiny_log.events) == 7
    assert tiny_log.num_items == 4
    assert "a" in tiny_log.item_vocab
    assert tiny_log.item_vocab.lookup("a") == 1  # first-seen order, 0 is pad


def test_ingest_bad_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("user,item\n")
    with pytest.raises(D.DataError, match="line 1"):
        D.ingest(p, "canonical_csv")


def test_ingest_bad_field_count(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text(",".join(D.CANONICAL_HEADER) + "\nu1,a,pv,5\n")
    with pytest.raises(D.DataError, match="line 2"):
        D.ingest(p, "canonical_csv")


def test_ingest_bad_id(tmp_path):
    p = tmp_path / "x.csv"
    write_csv(p, [("u 1", "a", "pv", 5, "", "d")])
    with pytest.raises(D.DataError, match="user_id"):
        D.ingest(p, "canonical_csv")


def test_ingest_bad_timestamp(tmp_path):
    p = tmp_path / "x.csv"
    write_csv(p, [("u1", "a", "pv", "notanint", "", "d")])
    with pytest.raises(D.DataError, match="timestamp"):
        D.ingest(p, "canonical_csv")


def test_ingest_unknown_format(tmp_path):
    with pytest.raises(D.DataError):
        D.ingest(tmp_path / "x", "parquet")


def test_ingest_movielens(tmp_path):
    p = tmp_path / "ml.dat"
    p.write_text("1::10::5::100\n1::20::3::200\n2::10::4::50\n")
    log = D.ingest(p, "movielens_dat")
    assert len(log.events) == 3
    assert log.events[0].rating == 5.0


def test_ingest_movielens_malformed(tmp_path):
    p = tmp_path / "ml.dat"
    p.write_text("1::10::5\n")
    with pytest.raises(D.DataError, match="line 1"):
        D.ingest(p, "movielens_dat")


def test_write_canonical_round_trip(tmp_path, tiny_log):
    p = tmp_path / "again.csv"
    D.write_canonical(tiny_log, p)
    log2 = D.ingest(p, "canonical_csv")
    assert [(e.user_id, e.item_id, e.timestamp, e.rating) for e in log2.events] == \
           [(e.user_id, e.item_id, e.timestamp, e.rating) for e in tiny_log.events]


# -- sequences and splits -----------------------------------------------------

def test_build_sequences_left_padding(tiny_log):
    seqs, dropped = D.build_sequences(tiny_log, 6)
    assert dropped == 0
    assert [s.user_id for s in seqs] == ["u1", "u2"]
    s = seqs[0]
    assert s.items.shape == (6,)
    assert (s.items[:2] == D.PAD).all()          # two pad slots on the left
    assert s.length == 4
    assert s.items[-1] == tiny_log.item_vocab.lookup("d")  # newest at the end
    assert list(s.timestamps[2:]) == [100, 200, 300, 400]


def test_build_sequences_truncates_to_recent(tiny_log):
    seqs, _ = D.build_sequences(tiny_log, 3)
    s = seqs[0]
    assert s.length == 3
    assert s.items[-1] == tiny_log.item_vocab.lookup("d")
    assert s.timestamps[0] == 200  # the oldest event fell off


def test_build_sequences_drops_short_users(tmp_path):
    p = tmp_path / "s.csv"
    write_csv(p, [("u1", "a", "pv", 1, "", "d"), ("u1", "b", "pv", 2, "", "d"),
                  ("u1", "c", "pv", 3, "", "d"), ("u2", "a", "pv", 1, "", "d")])
    log = D.ingest(p, "canonical_csv")
    seqs, dropped = D.build_sequences(log, 5)
    assert len(seqs) == 1 and dropped == 1


def test_build_sequences_min_length():
    with pytest.raises(D.DataError):
        D.build_sequences(D.InteractionLog(), 2)


def test_build_sequences_ranking_needs_ratings(tmp_path):
    p = tmp_path / "r.csv"
    write_csv(p, [("u1", "a", "pv", 1, "", "d")] * 3)
    log = D.ingest(p, "canonical_csv")
    with pytest.raises(D.DataError, match="rating"):
        D.build_sequences(log, 5, task="ranking")


def test_split_leave_last(tiny_log):
    seqs, _ = D.build_sequences(tiny_log, 6)
    train, test = D.split_leave_last(seqs)
    vocab = tiny_log.item_vocab
    # u1 events: a b c d -> test target d, train target c
    assert test[0].target == vocab.lookup("d")
    assert train[0].target == vocab.lookup("c")
    assert train[0].inputs.length == 2
    assert test[0].inputs.length == 3
    assert test[0].inputs.items[-1] == vocab.lookup("c")
    # the padding stays on the left after dropping the last event
    assert (test[0].inputs.items[:3] == D.PAD).all()
    # full sequence is preserved for slot-based ranking eval
    assert np.array_equal(test[0].full.items, seqs[0].items)


def test_split_requires_three_events(tmp_path):
    seq = D.UserSequence(user_id="u", items=np.array([0, 0, 1, 2]),
                         behaviors=np.zeros(4, np.int64), timestamps=np.zeros(4, np.int64))
    with pytest.raises(D.DataError):
        D.split_leave_last([seq])


def test_train_chains_drop_one(tiny_log):
    seqs, _ = D.build_sequences(tiny_log, 6)
    chains = D.train_chains(seqs)
    assert chains[0].length == seqs[0].length - 1
    assert chains[0].items[-1] == seqs[0].items[-2]


def test_binarize_feedback():
    assert D.binarize_feedback(4) == 1
    assert D.binarize_feedback(5) == 1
    assert D.binarize_feedback(3.9) == 0
    assert D.binarize_feedback(1) == 0
    with pytest.raises(D.DataError):
        D.binarize_feedback(None)


# -- negative sampling --------------------------------------------------------

def ranking_seq(labels, n=8):
    labels = np.asarray(labels)
    m = len(labels)
    items = np.zeros(n, np.int64)
    items[n - m:] = np.arange(1, m + 1)
    lab = np.zeros(n, np.int64)
    lab[n - m:] = labels
    ts = np.zeros(n, np.int64)
    ts[n - m:] = np.arange(m) * 10
    return D.UserSequence(user_id="u", items=items, behaviors=np.zeros(n, np.int64),
                          timestamps=ts, labels=lab)


def test_sample_negatives_identity_at_ratio_one(rng):
    seq = ranking_seq([1, 0, 1, 0, 0])
    out = D.sample_negatives(seq, 1.0, rng)
    assert out is seq  # bitwise identity, same object


def test_sample_negatives_keeps_positives(rng):
    seq = ranking_seq([1, 0, 1, 0, 0, 1])
    out = D.sample_negatives(seq, 1e-12, rng)
    kept = out.items[out.items != D.PAD]
    assert set(kept) == {1, 3, 6}  # only the positive positions survive
    assert (out.labels[out.items != D.PAD] == 1).all()


def test_sample_negatives_left_pads_result(rng):
    seq = ranking_seq([0, 0, 0, 1])
    out = D.sample_negatives(seq, 0.5, rng)
    nz = out.items != D.PAD
    # all non-pad entries are contiguous at the right edge
    assert nz.sum() == 0 or nz[np.argmax(nz):].all()


def test_sample_negatives_validation(rng):
    seq = ranking_seq([1, 0])
    with pytest.raises(D.DataError):
        D.sample_negatives(seq, 0.0, rng)
    with pytest.raises(D.DataError):
        D.sample_negatives(seq, 1.5, rng)
    seq2 = D.UserSequence(user_id="u", items=np.array([1]), behaviors=np.array([1]),
                          timestamps=np.array([1]))
    with pytest.raises(D.DataError):
        D.sample_negatives(seq2, 0.5, rng)


# -- behavior filter and domain merge -----------------------------------------

def test_filter_behaviors_identity(tiny_log):
    out = D.filter_behaviors(tiny_log, {"pv", "buy"})
    assert len(out.events) == len(tiny_log.events)


def test_filter_behaviors_subset(tiny_log):
    out = D.filter_behaviors(tiny_log, {"buy"})
    assert len(out.events) == 2
    assert all(ev.behavior == "buy" for ev in out.events)


def test_filter_behaviors_union_matches_single_filters(tiny_log):
    both = D.filter_behaviors(tiny_log, {"pv", "buy"})
    pv = D.filter_behaviors(tiny_log, {"pv"})
    buy = D.filter_behaviors(tiny_log, {"buy"})
    union = sorted(((e.user_id, e.item_id, e.timestamp) for e in pv.events + buy.events))
    assert union == sorted((e.user_id, e.item_id, e.timestamp) for e in both.events)


def test_filter_behaviors_errors(tiny_log):
    with pytest.raises(D.DataError):
        D.filter_behaviors(tiny_log, set())
    with pytest.raises(D.DataError, match="unknown"):
        D.filter_behaviors(tiny_log, {"click"})


def make_log(rows):
    log = D.InteractionLog()
    for u, i, t in rows:
        log.register(D.InteractionEvent(user_id=u, item_id=i, timestamp=t))
    return log


def test_merge_domains_prefixes_items():
    merged = D.merge_domains({"books": make_log([("u1", "x", 1)]),
                              "music": make_log([("u1", "x", 2)])})
    items = {e.item_id for e in merged.events}
    assert items == {"books:x", "music:x"}
    assert merged.num_items == 2


def test_merge_domains_interleaved_order_matches_sort():
    merged = D.merge_domains([("a", make_log([("u", "p", 10), ("u", "q", 30)])),
                              ("b", make_log([("u", "r", 20)]))])
    seqs, _ = D.build_sequences(merged, 3, min_events=1)
    order = [merged.item_vocab.decode(int(i)) for i in seqs[0].items if i != D.PAD]
    assert order == ["a:p", "b:r", "a:q"]


def test_merge_domains_duplicate_domain():
    with pytest.raises(D.DataError, match="collide"):
        D.merge_domains([("a", make_log([("u", "p", 1)])),
                         ("a", make_log([("u", "q", 2)]))])


# -- synthetic data -----------------------------------------------------------

def test_synth_deterministic():
    spec = D.SynthSpec(users=20, items=10, rule="markov_items")
    a = D.synth_generate(spec, seed=4)
    b = D.synth_generate(spec, seed=4)
    assert [(e.user_id, e.item_id, e.timestamp) for e in a.events] == \
           [(e.user_id, e.item_id, e.timestamp) for e in b.events]
    c = D.synth_generate(spec, seed=5)
    assert [(e.item_id) for e in a.events] != [(e.item_id) for e in c.events]


def test_synth_markov_follows_transition():
    spec = D.SynthSpec(users=30, items=12, rule="markov_items", markov_noise=0.0)
    log = D.synth_generate(spec, seed=0)
    trans = log.truth["transition"]
    for user, events in D._events_by_user(log).items():
        ids = [int(e.item_id[1:]) for e in events]
        for prev, cur in zip(ids, ids[1:]):
            assert cur == trans[prev]


def test_synth_time_gap_plants_cluster_of_previous_gap():
    spec = D.SynthSpec(users=40, items=40, rule="time_gap_dependent",
                       gap_levels=4, cluster_size=10, min_len=5, max_len=15)
    log = D.synth_generate(spec, seed=1)
    ranges = D._GAP_RANGES
    for user, events in D._events_by_user(log).items():
        ts = [e.timestamp for e in events]
        ids = [int(e.item_id[1:]) for e in events]
        for k in range(2, len(events)):
            gap = ts[k - 1] - ts[k - 2]
            level = next(i for i, (lo, hi) in enumerate(ranges) if lo <= gap <= hi)
            assert ids[k] // spec.cluster_size == level


def test_synth_gap_ranges_hit_distinct_buckets():
    from recscale.blocks import time_bucket
    lows = [time_bucket(lo, 128) for lo, _ in D._GAP_RANGES]
    highs = [time_bucket(hi, 128) for _, hi in D._GAP_RANGES]
    for k in range(len(D._GAP_RANGES) - 1):
        assert highs[k] < lows[k + 1]  # regimes never share a bucket


def test_synth_logistic_ranking_probs():
    spec = D.SynthSpec(users=50, items=20, rule="logistic_ranking")
    log = D.synth_generate(spec, seed=2)
    probs = log.truth["item_probs"]
    assert len(probs) == 20
    assert all(0.0 < p < 1.0 for p in probs)
    assert all(ev.rating in (1.0, 5.0) for ev in log.events)


def test_synth_validation():
    with pytest.raises(D.DataError):
        D.synth_generate(D.SynthSpec(items=1), seed=0)
    with pytest.raises(D.DataError):
        D.synth_generate(D.SynthSpec(rule="uniform"), seed=0)
    with pytest.raises(D.DataError):
        D.synth_generate(D.SynthSpec(rule="time_gap_dependent", items=10,
                                     gap_levels=4, cluster_size=10), seed=0)


# -- cache arrays -------------------------------------------------------------

def test_sequence_array_round_trip(tiny_log):
    seqs, _ = D.build_sequences(tiny_log, 6)
    arrays = dict(D.sequences_to_arrays(seqs))
    back = D.arrays_to_sequences(arrays, [s.user_id for s in seqs])
    for a, b in zip(seqs, back):
        assert a.user_id == b.user_id
        assert np.array_equal(a.items, b.items)
        assert np.array_equal(a.timestamps, b.timestamps)
