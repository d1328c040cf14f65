"""Interaction-log ingestion, sequence building, splits, and synthetic data.

Everything funnels through one canonical event form; format adapters
normalize into it. Sequences are fixed-length and left-padded with token 0
so the newest event always sits at the last position.
"""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

CANONICAL_HEADER = ["user_id", "item_id", "behavior", "timestamp", "rating", "domain"]
ID_RE = re.compile(r"^[A-Za-z0-9_:-]+$")

PAD = 0


class DataError(ValueError):
    """Malformed input data."""


@dataclass
class InteractionEvent:
    user_id: str
    item_id: str
    behavior: str = "default"
    timestamp: int = 0
    rating: float | None = None
    domain: str = "default"


class Vocab:
    """Bidirectional string<->dense-id mapping; id 0 is reserved for pad."""

    def __init__(self, tokens=()):
        self._to_id = {}
        self._to_str = [None]  # index 0 = pad
        for t in tokens:
            self.encode(t)

    def encode(self, token: str) -> int:
        idx = self._to_id.get(token)
        if idx is None:
            idx = len(self._to_str)
            self._to_id[token] = idx
            self._to_str.append(token)
        return idx

    def lookup(self, token: str) -> int:
        try:
            return self._to_id[token]
        except KeyError:
            raise KeyError(f"unknown token {token!r}") from None

    def decode(self, idx: int) -> str:
        if not 1 <= idx < len(self._to_str):
            raise KeyError(f"id {idx} not in vocabulary")
        return self._to_str[idx]

    def __len__(self):
        return len(self._to_str) - 1

    def __contains__(self, token):
        return token in self._to_id

    def to_list(self):
        return self._to_str[1:]


@dataclass
class InteractionLog:
    events: list[InteractionEvent] = field(default_factory=list)
    item_vocab: Vocab = field(default_factory=Vocab)
    behavior_vocab: Vocab = field(default_factory=Vocab)
    domain_vocab: Vocab = field(default_factory=Vocab)
    # optional dense (|V|+1, A) table of per-item attribute ids, 0 = absent
    item_attrs: np.ndarray | None = None
    attr_vocab_sizes: tuple[int, ...] = ()
    # synthetic ground truth (e.g. per-item click probabilities), if planted
    truth: dict = field(default_factory=dict)

    def register(self, event: InteractionEvent):
        self.item_vocab.encode(event.item_id)
        self.behavior_vocab.encode(event.behavior)
        self.domain_vocab.encode(event.domain)
        self.events.append(event)

    @property
    def num_items(self):
        return len(self.item_vocab)


@dataclass
class UserSequence:
    """Fixed-length, left-padded, chronologically ordered token sequence."""

    user_id: str
    items: np.ndarray       # (n,) int64, 0 = pad
    behaviors: np.ndarray   # (n,) int64
    timestamps: np.ndarray  # (n,) int64 seconds
    labels: np.ndarray | None = None   # (n,) int64 in {0,1}, ranking task
    attrs: np.ndarray | None = None    # (n, A) int64, 0 = absent
    domains: np.ndarray | None = None  # (n,) int64

    @property
    def length(self):
        return int((self.items != PAD).sum())

    def non_pad_items(self):
        return self.items[self.items != PAD]


@dataclass
class Example:
    """One split entry: observed prefix plus the held-out target.

    ``full`` keeps the sequence including the target event; ranking
    evaluation reads the prediction slot at the target item's position.
    """

    user_id: str
    inputs: UserSequence
    target: int
    target_label: int | None = None
    target_domain: int | None = None
    full: UserSequence | None = None


# -- ingestion ---------------------------------------------------------------

def _check_id(value, line_no, column):
    if not ID_RE.match(value):
        raise DataError(f"line {line_no}: invalid {column} {value!r} (must match [A-Za-z0-9_:-]+)")
    return value


def ingest(path, fmt: str) -> InteractionLog:
    """Parse a raw interaction file into a log with dense vocabularies.

    Per-user event order is stabilized by timestamp (stable sort, so the
    file order breaks ties).
    """
    if fmt == "canonical_csv":
        out = _ingest_canonical(path)
    elif fmt == "movielens_dat":
        out = _ingest_movielens(path)
    else:
        raise DataError(f"unknown input format {fmt!r}")
    return out


def _ingest_canonical(path) -> InteractionLog:
    out = InteractionLog()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CANONICAL_HEADER:
            raise DataError(f"line 1: expected header {','.join(CANONICAL_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if row == CANONICAL_HEADER:
                raise DataError(f"line {line_no}: duplicate header")
            if len(row) != 6:
                raise DataError(f"line {line_no}: expected 6 fields, got {len(row)}")
            user, item, behavior, ts, rating, domain = row
            _check_id(user, line_no, "user_id")
            _check_id(item, line_no, "item_id")
            try:
                ts_val = int(ts)
            except ValueError:
                raise DataError(f"line {line_no}: bad timestamp {ts!r}") from None
            try:
                rating_val = float(rating) if rating else None
            except ValueError:
                raise DataError(f"line {line_no}: bad rating {rating!r}") from None
            out.register(InteractionEvent(
                user_id=user, item_id=item,
                behavior=behavior or "default",
                timestamp=ts_val, rating=rating_val,
                domain=domain or "default",
            ))
    return out


def _ingest_movielens(path) -> InteractionLog:
    out = InteractionLog()
    with open(path, encoding="ISO-8859-1") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("::")
            if len(parts) != 4:
                raise DataError(f"line {line_no}: expected UserID::MovieID::Rating::Timestamp")
            user, movie, rating, ts = parts
            try:
                out.register(InteractionEvent(
                    user_id=user, item_id=movie,
                    timestamp=int(ts), rating=float(rating),
                ))
            except ValueError:
                raise DataError(f"line {line_no}: malformed numeric field") from None
    return out


def write_canonical(log: InteractionLog, path):
    """Dump a log back to the canonical CSV form (lossless for events)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CANONICAL_HEADER)
        for ev in log.events:
            rating = "" if ev.rating is None else f"{ev.rating:g}"
            writer.writerow([ev.user_id, ev.item_id, ev.behavior,
                             ev.timestamp, rating, ev.domain])


# -- sequence construction ---------------------------------------------------

def _events_by_user(log: InteractionLog):
    per_user: dict[str, list[InteractionEvent]] = {}
    for ev in log.events:
        per_user.setdefault(ev.user_id, []).append(ev)
    for events in per_user.values():
        events.sort(key=lambda e: e.timestamp)  # stable: file order breaks ties
    return per_user


def build_sequences(log: InteractionLog, n: int, task: str = "recall",
                    min_events: int = 3) -> tuple[list[UserSequence], int]:
    """Build one left-padded UserSequence per user.

    Users with fewer than ``min_events`` interactions are dropped; the count
    of dropped users is returned alongside the sequences. Raise ``min_events``
    to 5 for 5-core-style filtering.
    """
    if n < 3:
        raise DataError("sequence length n must be >= 3 for leave-last-two splitting")
    if task == "ranking":
        for ev in log.events:
            if ev.rating is None:
                raise DataError(f"ranking task needs ratings; user {ev.user_id} item {ev.item_id} has none")
    num_attr = log.item_attrs.shape[1] if log.item_attrs is not None else 0
    seqs = []
    dropped = 0
    per_user = _events_by_user(log)
    for user_id in sorted(per_user.keys()):
        events = per_user[user_id][-n:]  # keep the most recent n
        if len(per_user[user_id]) < min_events:
            dropped += 1
            continue
        m = len(events)
        items = np.zeros(n, dtype=np.int64)
        behaviors = np.zeros(n, dtype=np.int64)
        timestamps = np.zeros(n, dtype=np.int64)
        domains = np.zeros(n, dtype=np.int64)
        labels = np.zeros(n, dtype=np.int64) if task == "ranking" else None
        attrs = np.zeros((n, num_attr), dtype=np.int64) if num_attr else None
        for k, ev in enumerate(events):
            pos = n - m + k
            items[pos] = log.item_vocab.lookup(ev.item_id)
            behaviors[pos] = log.behavior_vocab.lookup(ev.behavior)
            timestamps[pos] = ev.timestamp
            domains[pos] = log.domain_vocab.lookup(ev.domain)
            if labels is not None:
                labels[pos] = binarize_feedback(ev.rating)
            if attrs is not None:
                attrs[pos] = log.item_attrs[items[pos]]
        seqs.append(UserSequence(user_id=user_id, items=items, behaviors=behaviors,
                                 timestamps=timestamps, labels=labels, attrs=attrs,
                                 domains=domains))
    if dropped:
        logging.getLogger(__name__).warning(
            "build_sequences: dropped %d users with < %d events", dropped, min_events)
    return seqs, dropped


def _drop_last(seq: UserSequence) -> UserSequence:
    """Remove the newest event, shifting the pad prefix right by one."""
    n = seq.items.shape[0]

    def shift(a):
        if a is None:
            return None
        out = np.zeros_like(a)
        out[1:] = a[:-1]
        return out

    return UserSequence(user_id=seq.user_id, items=shift(seq.items),
                        behaviors=shift(seq.behaviors), timestamps=shift(seq.timestamps),
                        labels=shift(seq.labels), attrs=shift(seq.attrs),
                        domains=shift(seq.domains))


def split_leave_last(seqs) -> tuple[list[Example], list[Example]]:
    """Leave-last-two protocol.

    Train: input = sequence minus the last two events, target = the
    second-to-last. Test: input = sequence minus the last event, target =
    the last.
    """
    train, test = [], []
    for seq in seqs:
        m = seq.length
        if m < 3:
            raise DataError(f"user {seq.user_id}: {m} events, need >= 3 for leave-last-two")
        test_input = _drop_last(seq)
        train_input = _drop_last(test_input)
        last = int(seq.items[-1])
        train.append(Example(
            user_id=seq.user_id, inputs=train_input, target=int(test_input.items[-1]),
            target_label=int(test_input.labels[-1]) if seq.labels is not None else None,
            target_domain=int(test_input.domains[-1]) if seq.domains is not None else None,
            full=test_input,
        ))
        test.append(Example(
            user_id=seq.user_id, inputs=test_input, target=last,
            target_label=int(seq.labels[-1]) if seq.labels is not None else None,
            target_domain=int(seq.domains[-1]) if seq.domains is not None else None,
            full=seq,
        ))
    return train, test


def train_chains(seqs) -> list[UserSequence]:
    """Training view of the leave-last-two protocol: the sequence minus its
    last event. Autoregressive shifted-target training over this chain uses
    everything except the last two items as context and predicts through the
    second-to-last item."""
    return [_drop_last(s) for s in seqs]


def binarize_feedback(rating) -> int:
    """Explicit feedback to binary: a score of 4 or more is positive."""
    if rating is None:
        raise DataError("missing rating cannot be binarized")
    return 1 if rating >= 4 else 0


def sample_negatives(seq: UserSequence, ratio: float, rng: np.random.Generator) -> UserSequence:
    """Independently retain each negative-label event with probability ``ratio``.

    Positives always survive; ratio 1.0 is an exact identity (the input
    object is returned unchanged).
    """
    if not 0.0 < ratio <= 1.0:
        raise DataError(f"negative sampling ratio must be in (0, 1], got {ratio}")
    if seq.labels is None:
        raise DataError("sample_negatives needs a ranking-task sequence with labels")
    if ratio == 1.0:
        return seq
    n = seq.items.shape[0]
    non_pad = seq.items != PAD
    draws = rng.random(n)
    keep = non_pad & ((seq.labels == 1) | (draws < ratio))
    m = int(keep.sum())

    def rebuild(a):
        if a is None:
            return None
        out = np.zeros_like(a)
        out[n - m:] = a[keep]
        return out

    return UserSequence(user_id=seq.user_id, items=rebuild(seq.items),
                        behaviors=rebuild(seq.behaviors), timestamps=rebuild(seq.timestamps),
                        labels=rebuild(seq.labels), attrs=rebuild(seq.attrs),
                        domains=rebuild(seq.domains))


def filter_behaviors(log: InteractionLog, subset) -> InteractionLog:
    """Keep only events whose behavior is in ``subset`` (order preserved)."""
    subset = set(subset)
    if not subset:
        raise DataError("behavior subset must be nonempty")
    known = set(log.behavior_vocab.to_list())
    unknown = subset - known
    if unknown:
        raise DataError(f"unknown behaviors in subset: {sorted(unknown)}")
    out = InteractionLog(item_attrs=log.item_attrs, attr_vocab_sizes=log.attr_vocab_sizes,
                         truth=dict(log.truth))
    # re-register against the original vocabs so dense ids stay comparable
    out.item_vocab = log.item_vocab
    out.behavior_vocab = log.behavior_vocab
    out.domain_vocab = log.domain_vocab
    out.events = [ev for ev in log.events if ev.behavior in subset]
    return out


def merge_domains(logs) -> InteractionLog:
    """Merge per-domain logs into one log with domain-prefixed item ids.

    ``logs`` maps domain name -> InteractionLog (or is an iterable of such
    pairs). Prefixing makes item id spaces disjoint; a repeated domain name
    would collide and is an error.
    """
    pairs = list(logs.items()) if isinstance(logs, dict) else list(logs)
    seen_domains = set()
    out = InteractionLog()
    for domain, src in pairs:
        _check_id(domain, 0, "domain")
        if domain in seen_domains:
            raise DataError(f"domain {domain!r} given twice: item ids would collide after offsetting")
        seen_domains.add(domain)
        for ev in src.events:
            item = f"{domain}:{ev.item_id}"
            out.register(InteractionEvent(
                user_id=ev.user_id, item_id=item, behavior=ev.behavior,
                timestamp=ev.timestamp, rating=ev.rating, domain=domain,
            ))
    return out


# -- synthetic data ----------------------------------------------------------

@dataclass
class SynthSpec:
    users: int = 100
    items: int = 50
    min_len: int = 5
    max_len: int = 20
    rule: str = "markov_items"          # markov_items | time_gap_dependent | logistic_ranking
    markov_noise: float = 0.0           # probability of a uniform-random jump
    gap_levels: int = 4                 # time_gap_dependent: number of planted gap regimes
    cluster_size: int = 10              # time_gap_dependent: items per regime cluster
    feat_dim: int = 8                   # logistic_ranking: latent feature width
    behavior_names: tuple[str, ...] = ("default",)
    behavior_weights: tuple[float, ...] = (1.0,)


# gap regimes far apart in log-space so their buckets never collide
_GAP_RANGES = [(1, 2), (400, 1000), (60_000, 150_000), (10_000_000, 24_000_000),
               (2_000_000_000, 4_000_000_000)]


def synth_generate(spec: SynthSpec, seed: int) -> InteractionLog:
    """Deterministic planted-structure interaction log."""
    if spec.items < 2:
        raise DataError("synthetic catalog needs at least 2 items")
    if spec.rule not in ("markov_items", "time_gap_dependent", "logistic_ranking"):
        raise DataError(f"unknown synthetic rule {spec.rule!r}")
    if spec.rule == "time_gap_dependent":
        if spec.gap_levels > len(_GAP_RANGES):
            raise DataError(f"at most {len(_GAP_RANGES)} gap levels supported")
        if spec.gap_levels * spec.cluster_size > spec.items:
            raise DataError("items too few for gap_levels * cluster_size planted clusters")
    rng = np.random.default_rng(seed)
    log_out = InteractionLog()
    item_names = [f"i{v}" for v in range(spec.items)]
    weights = np.asarray(spec.behavior_weights, dtype=np.float64)
    weights = weights / weights.sum()

    truth = {}
    if spec.rule == "markov_items":
        perm = rng.permutation(spec.items)
        truth["transition"] = perm.tolist()
    elif spec.rule == "logistic_ranking":
        z = rng.standard_normal((spec.items, spec.feat_dim))
        w = rng.standard_normal(spec.feat_dim) / math.sqrt(spec.feat_dim)
        probs = 1.0 / (1.0 + np.exp(-(z @ w) * 2.0))
        truth["item_probs"] = probs.tolist()
        truth["weights"] = w.tolist()

    for u in range(spec.users):
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        t = int(rng.integers(1_000_000, 2_000_000))
        user = f"u{u}"
        if spec.rule == "markov_items":
            v = int(rng.integers(spec.items))
        prev_level = int(rng.integers(spec.gap_levels)) if spec.rule == "time_gap_dependent" else 0
        for k in range(length):
            if spec.rule == "markov_items":
                if k > 0:
                    if spec.markov_noise > 0 and rng.random() < spec.markov_noise:
                        v = int(rng.integers(spec.items))
                    else:
                        v = int(truth["transition"][v])
                t += 60
                rating = None
            elif spec.rule == "time_gap_dependent":
                level = int(rng.integers(spec.gap_levels))
                lo, hi = _GAP_RANGES[level]
                t += int(rng.integers(lo, hi + 1))
                # the cluster is planted by the *previous* gap so the next
                # item is predictable from observed timestamps alone
                v = prev_level * spec.cluster_size + int(rng.integers(spec.cluster_size))
                prev_level = level
                rating = None
            else:  # logistic_ranking
                v = int(rng.integers(spec.items))
                t += 60
                rating = 5.0 if rng.random() < truth["item_probs"][v] else 1.0
            behavior = spec.behavior_names[int(rng.choice(len(weights), p=weights))]
            log_out.register(InteractionEvent(
                user_id=user, item_id=item_names[v], behavior=behavior,
                timestamp=t, rating=rating,
            ))
    log_out.truth = truth
    return log_out


# -- cache serialization -----------------------------------------------------

def sequences_to_arrays(seqs):
    """Stack sequences into named arrays for the binary cache container."""
    arrays = [
        ("items", np.stack([s.items for s in seqs])),
        ("behaviors", np.stack([s.behaviors for s in seqs])),
        ("timestamps", np.stack([s.timestamps for s in seqs])),
    ]
    if seqs and seqs[0].labels is not None:
        arrays.append(("labels", np.stack([s.labels for s in seqs])))
    if seqs and seqs[0].attrs is not None:
        arrays.append(("attrs", np.stack([s.attrs for s in seqs])))
    if seqs and seqs[0].domains is not None:
        arrays.append(("domains", np.stack([s.domains for s in seqs])))
    return arrays


def arrays_to_sequences(arrays, user_ids):
    seqs = []
    labels = arrays.get("labels")
    attrs = arrays.get("attrs")
    domains = arrays.get("domains")
    for i, uid in enumerate(user_ids):
        seqs.append(UserSequence(
            user_id=uid,
            items=arrays["items"][i],
            behaviors=arrays["behaviors"][i],
            timestamps=arrays["timestamps"][i],
            labels=None if labels is None else labels[i],
            attrs=None if attrs is None else attrs[i],
            domains=None if domains is None else domains[i],
        ))
    return seqs
