import itertools

import pytest

from kontext.errors import EmptyModel, ParseError, UnknownToken
from kontext.ingest import (
    Corpus,
    WindowedModelSpec,
    load_corpus,
    pad_sequences,
    window_counts,
    windowed_model,
)
from kontext.model import contextuality_number_definitional, validate_consistency


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def seqs(*strings, alphabet="ab"):
    idx = {ch: i for i, ch in enumerate(alphabet)}
    return Corpus(
        alphabet=tuple(alphabet),
        sequences=tuple(tuple(idx[ch] for ch in s) for s in strings),
    )


# -- loaders ---------------------------------------------------------------------


def test_plain_loader_with_explicit_alphabet(tmp_path):
    path = write(tmp_path, "c.txt", "acgt\n")
    c = load_corpus(path, "plain", alphabet="acgt")
    assert c.sequences == ((0, 1, 2, 3),)
    assert c.alphabet == ("a", "c", "g", "t")


def test_plain_loader_first_seen_order_and_case_folding(tmp_path):
    path = write(tmp_path, "c.txt", "GATTA\nttag\n")
    c = load_corpus(path, "plain")
    assert c.alphabet == ("g", "a", "t")
    assert c.sequences[0] == (0, 1, 2, 2, 1)


def test_fasta_loader_merges_record_lines(tmp_path):
    path = write(tmp_path, "c.fa", ">one\nac\ngt\n>two\nttt\n")
    c = load_corpus(path, "fasta", alphabet="acgt")
    assert c.sequences == ((0, 1, 2, 3), (3, 3, 3))


def test_csv_loader_column_select(tmp_path):
    path = write(tmp_path, "c.csv", "id1,acg\nid2,ttt\n")
    c = load_corpus(path, "csv", alphabet="acgt", csv_column=1)
    assert c.sequences == ((0, 1, 2), (3, 3, 3))


def test_unknown_token_reports_line(tmp_path):
    path = write(tmp_path, "c.txt", "acgt\nacgx\n")
    with pytest.raises(UnknownToken) as err:
        load_corpus(path, "plain", alphabet="acgt")
    assert err.value.line == 2


def test_unknown_format_and_empty_corpus(tmp_path):
    path = write(tmp_path, "c.txt", "\n\n")
    with pytest.raises(ParseError):
        load_corpus(path, "tsv")
    with pytest.raises(ParseError):
        load_corpus(path, "plain")


# -- padding -----------------------------------------------------------------------


def test_pad_sequences_lengths_and_determinism():
    c = seqs("ababababab", "aaaaabbbbbaaaaa")
    p1 = pad_sequences(c, 15, seed=3)
    p2 = pad_sequences(c, 15, seed=3)
    assert p1 == p2
    assert all(len(s) == 15 for s in p1.sequences)
    assert p1.sequences[1] == c.sequences[1]  # already at target length
    assert p1.sequences[0][:10] == c.sequences[0]


def test_pad_sequences_rejects_short_target():
    c = seqs("aaaa")
    with pytest.raises(ValueError):
        pad_sequences(c, 3)


# -- windowing ---------------------------------------------------------------------


def test_repeated_word_gives_point_mass():
    c = seqs("aabb", "aabb", "aabb")
    m = windowed_model(c, WindowedModelSpec(n=2, min_count=1))
    assert len(m.contexts) == 1
    assert m.distributions[0] == {(1, 1): 1.0}


def test_split_continuations_are_frequencies():
    c = seqs("abaa", "abaa", "abbb", "abbb", alphabet="ab")
    m = windowed_model(c, WindowedModelSpec(n=2, min_count=1, stride=4))
    assert len(m.contexts) == 1
    assert m.distributions[0] == {(0, 0): 0.5, (1, 1): 0.5}


def test_probabilities_sum_to_one_tightly():
    c = seqs("abbaabbbaaabab", "babbaaabbbabba", "aabbabab")
    m = windowed_model(c, WindowedModelSpec(n=2, min_count=1))
    for dist in m.distributions:
        assert abs(sum(dist.values()) - 1.0) <= 1e-12


def test_min_count_filters_and_empty_model():
    c = seqs("aabb", "abab")
    m = windowed_model(c, WindowedModelSpec(n=1, min_count=2))
    assert all(
        sum(d.values()) > 0 for d in m.distributions
    )
    with pytest.raises(EmptyModel):
        windowed_model(c, WindowedModelSpec(n=2, min_count=5))


def test_conservation_of_window_counts():
    c = seqs("abbaab", "aabbaa", "bbbb")
    spec = WindowedModelSpec(n=2, min_count=1)
    scanned, kept = window_counts(c, spec)
    lens = [len(s) for s in c.sequences]
    assert scanned == sum(max(0, L - 4 + 1) for L in lens)
    assert kept == scanned  # min_count=1 keeps everything


def test_contexts_share_slots_only_when_prefixes_agree():
    c = seqs("aaxy"[:4], "abxy"[:4], alphabet="abxy")
    m = windowed_model(c, WindowedModelSpec(n=2, min_count=1))
    byid = {ctx.id: ctx for ctx in m.contexts}
    assert len(byid) == 2
    obs0 = set(byid[0].observables)
    obs1 = set(byid[1].observables)
    # both prefixes start with "a" at slot 0, so exactly that slot is shared
    assert len(obs0 & obs1) == 1


def test_identical_prefixes_merge_across_sequences():
    c = seqs("aab_"[:3] + "b", "aaba", alphabet="ab_")
    m = windowed_model(c, WindowedModelSpec(n=2, min_count=1, stride=4))
    assert len(m.contexts) == 1
    assert sum(m.distributions[0].values()) == pytest.approx(1.0)


# -- padding invariance -----------------------------------------------------------


def contextual_corpus():
    # two prefixes sharing the second slot with clashing continuations
    return seqs("aaba", "abab", "baaa", "bbab", "aabb", "abba")


def test_windowed_padding_preserves_contextuality_number():
    c = contextual_corpus()
    base = WindowedModelSpec(n=2, min_count=1, stride=4)
    m0 = windowed_model(c, base)
    k0 = contextuality_number_definitional(m0)
    assert k0 >= 1  # the corpus is engineered to be strongly contextual
    for pad_to, seed in ((3, 5), (4, 9)):
        mp = windowed_model(
            c, WindowedModelSpec(n=2, min_count=1, stride=4, pad_to=pad_to, pad_seed=seed)
        )
        assert contextuality_number_definitional(mp) == k0
        assert all(len(ctx.observables) == pad_to for ctx in mp.contexts)
        # padded outcome positions are uniform over the full alphabet
        for dist in mp.distributions:
            tails = {}
            for o, p in dist.items():
                tails.setdefault(o[2:], 0.0)
                tails[o[2:]] += p
            vals = list(tails.values())
            assert len(tails) == len(c.alphabet) ** (pad_to - 2)
            assert max(vals) == pytest.approx(min(vals), rel=1e-9)


def test_padding_embeds_unpadded_sections():
    c = contextual_corpus()
    m0 = windowed_model(c, WindowedModelSpec(n=2, min_count=1, stride=4))
    mp = windowed_model(c, WindowedModelSpec(n=2, min_count=1, stride=4, pad_to=3, pad_seed=1))
    from kontext.model import sections_of

    for cid in [c.id for c in m0.contexts]:
        s0 = sections_of(m0, [cid])
        sp = sections_of(mp, [cid])
        assert len(sp) == len(s0) * len(c.alphabet)
