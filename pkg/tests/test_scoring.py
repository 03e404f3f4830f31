import math

import numpy as np
import pytest

from cdlm import (
    ChunkRecord,
    ScoringError,
    base_ppl,
    brute_force_score,
    build,
    build_vocabulary,
    enumerate_paths,
    fit_reference_lm,
    mock_constant_lm,
    ppl,
    precompute_proposals,
    score_sequence,
    scripted_proposals,
    sequence_logprob,
    vocabulary_from_corpus,
)
from cdlm.lm import ReferenceLmParams
from cdlm.scoring import _empty_proposal_at, _oracle_continue, _lm_logprobs


@pytest.fixture
def abcde():
    vocab = build_vocabulary(["A", "B", "C", "D", "E"])
    seq = vocab.encode("A B C D E")
    lm = mock_constant_lm(0.3, vocab)
    props = scripted_proposals(seq, {
        2: ((seq[1], seq[2]), 0.5),  # two-token chunk proposed after A
        3: ((seq[2], seq[3]), 0.5),  # two-token chunk proposed after B
    })
    return vocab, seq, lm, props


class TestScriptedFixture:
    def test_dp_equals_enumeration(self, abcde):
        _, seq, lm, props = abcde
        score, _ = score_sequence(seq, props, lm)
        assert math.exp(score.logprob) == pytest.approx(
            brute_force_score(seq, props, lm), rel=1e-12)

    def test_marginal_value(self, abcde):
        # Derived by enumerating the generative process by hand:
        #   all tokens from the LM:  .3 * (.5*.3) * (.5*.3) * .3 * .3  = .0006075
        #   accept at position 2:    .3 * .5 * .3 * .3                = .0135
        #   reject 2, accept 3:      .3 * (.5*.3) * .5 * .3           = .00675
        # total = .0208575
        _, seq, lm, props = abcde
        score, _ = score_sequence(seq, props, lm)
        assert math.exp(score.logprob) == pytest.approx(0.0208575, abs=1e-12)

    def test_path_terms(self, abcde):
        _, seq, lm, props = abcde
        terms = sorted(p for _, p in enumerate_paths(seq, props, lm) if p > 0)
        assert terms == pytest.approx([0.0006075, 0.00675, 0.0135], abs=1e-15)
        assert sum(terms) == pytest.approx(0.0208575, abs=1e-12)

    def test_paths_are_the_three_expected_interleavings(self, abcde):
        _, seq, lm, props = abcde
        labels = {tuple(l) for l, p in enumerate_paths(seq, props, lm) if p > 0}
        assert labels == {
            ("lm:1", "lm:2", "lm:3", "lm:4", "lm:5"),
            ("lm:1", "chunk:2+2", "lm:4", "lm:5"),
            ("lm:1", "lm:2", "chunk:3+2", "lm:5"),
        }


class TestPureLmReduction:
    def test_all_q_zero_equals_chain_rule(self):
        vocab = vocabulary_from_corpus("a b c d")
        lm = fit_reference_lm([vocab.encode("a b c d a b c d a")], vocab)
        seq = vocab.encode("a b c d a b")
        props = [_empty_proposal_at(n) for n in range(2, len(seq) + 1)]
        score, _ = score_sequence(seq, props, lm)
        assert score.logprob == pytest.approx(sequence_logprob(lm, seq), rel=1e-12)

    def test_empty_datastore_proposals_all_zero_q(self):
        vocab = vocabulary_from_corpus("a b")
        lm = fit_reference_lm([vocab.encode("a b a b")], vocab)
        store = build([], lm.dim, vocab)
        seq = vocab.encode("a b a")
        props = precompute_proposals(seq, store, lm, eta=0.5)
        assert all(p.q == 0.0 and p.tau == 0 for p in props)


class TestBoundaries:
    def test_forced_full_cover_chunk(self):
        # q=1 chunk at position 2 covering 2..N leaves only p(x1)
        vocab = build_vocabulary(["A", "B", "C", "D"])
        seq = vocab.encode("A B C D")
        lm = mock_constant_lm(0.3, vocab)
        props = scripted_proposals(seq, {2: (tuple(seq[1:]), 1.0)})
        score, _ = score_sequence(seq, props, lm)
        assert math.exp(score.logprob) == pytest.approx(0.3, rel=1e-12)
        assert brute_force_score(seq, props, lm) == pytest.approx(0.3, rel=1e-12)

    def test_overshooting_chunk_counts_prefix_match(self):
        # chunk longer than the remaining sequence: only its prefix must match
        vocab = build_vocabulary(["A", "B", "C", "D", "E"])
        seq = vocab.encode("A B C")
        lm = mock_constant_lm(0.3, vocab)
        long_chunk = (seq[1], seq[2], vocab.id_of("D"), vocab.id_of("E"))
        props = scripted_proposals(seq, {2: (long_chunk, 0.25)})
        score, _ = score_sequence(seq, props, lm)
        # paths: lm,lm,lm = .3 * (.75*.3) * .3 ; accept-overshoot = .3 * .25
        want = 0.3 * 0.75 * 0.3 * 0.3 + 0.3 * 0.25
        assert math.exp(score.logprob) == pytest.approx(want, rel=1e-12)
        assert brute_force_score(seq, props, lm) == pytest.approx(want, rel=1e-12)

    def test_single_token_sequence(self):
        vocab = build_vocabulary(["A"])
        lm = mock_constant_lm(0.4, vocab)
        score, _ = score_sequence([vocab.id_of("A")], [], lm)
        assert math.exp(score.logprob) == pytest.approx(0.4, rel=1e-15)

    def test_mismatch_nulls_alpha(self):
        vocab = build_vocabulary(["A", "B", "C", "D"])
        seq = vocab.encode("A B C D")
        lm = mock_constant_lm(0.3, vocab)
        wrong = (vocab.id_of("C"), vocab.id_of("B"))  # does not match x2:3
        props = scripted_proposals(seq, {2: (wrong, 0.5)})
        score, table = score_sequence(seq, props, lm)
        assert table.log_alpha[2] == float("-inf")
        # the mismatching proposal still costs its rejection factor
        want = 0.3 * (0.5 * 0.3) * 0.3 * 0.3
        assert math.exp(score.logprob) == pytest.approx(want, rel=1e-12)

    def test_oracle_guard(self):
        vocab = build_vocabulary(["A"])
        lm = mock_constant_lm(0.5, vocab)
        seq = [2] * 25
        with pytest.raises(ScoringError):
            brute_force_score(seq, scripted_proposals(seq, {}), lm)


def random_fixture(rng, max_len=12):
    """Random store + reference LM + sequence, driving the real retrieval path."""
    n_real = int(rng.integers(2, 7))
    vocab = build_vocabulary([f"t{i}" for i in range(n_real)])
    v = len(vocab)
    corpus = [list(rng.integers(0, v, size=20)) for _ in range(2)]
    lm = fit_reference_lm(corpus, vocab, ReferenceLmParams(dim=16, seed=int(rng.integers(1000))))
    records = []
    for i in range(int(rng.integers(1, 25))):
        vec = rng.normal(size=16)
        vec = (vec / np.linalg.norm(vec)).astype(np.float32)
        chunk = tuple(int(t) for t in rng.integers(0, v, size=int(rng.integers(1, 5))))
        records.append(ChunkRecord(context=(), entry=int(rng.integers(0, v)),
                                   chunk=chunk, vector=vec, source=(0, i)))
    # bias some stored vectors toward actual LM context vectors so that
    # similarities land above the knee reasonably often
    seq = [int(t) for t in rng.integers(0, v, size=int(rng.integers(2, max_len + 1)))]
    for i in range(0, len(records), 3):
        n = int(rng.integers(2, len(seq) + 1))
        query = lm.step(seq[:n - 2]).context_vector
        records[i] = ChunkRecord(context=(), entry=seq[n - 2],
                                 chunk=records[i].chunk,
                                 vector=query.astype(np.float32), source=(0, 1000 + i))
    store = build(records, 16, vocab)
    eta = float(rng.uniform(0, 0.95))
    return vocab, lm, store, seq, eta


class TestRandomizedEquivalence:
    def test_dp_matches_oracle_on_retrieval_driven_fixtures(self):
        rng = np.random.default_rng(42)
        for _ in range(60):
            _, lm, store, seq, eta = random_fixture(rng)
            props = precompute_proposals(seq, store, lm, eta)
            score, _ = score_sequence(seq, props, lm)
            want = brute_force_score(seq, props, lm)
            assert math.exp(score.logprob) == pytest.approx(want, rel=1e-10)

    def test_conditional_consistency_at_every_split(self):
        rng = np.random.default_rng(43)
        for _ in range(20):
            _, lm, store, seq, eta = random_fixture(rng)
            props = precompute_proposals(seq, store, lm, eta)
            _, table = score_sequence(seq, props, lm)
            lm_probs = np.exp(_lm_logprobs(seq, lm))
            for n in range(2, len(seq) + 1):
                dp_cond = math.exp(np.logaddexp(
                    table.log_alpha[n] + (math.log(table.q[n]) if table.q[n] > 0 else -math.inf),
                    table.log_beta[n] + (math.log1p(-table.q[n]) if table.q[n] < 1 else -math.inf),
                ))
                oracle_cond = _oracle_continue(seq, props, lm_probs, n)
                assert dp_cond == pytest.approx(oracle_cond, rel=1e-10, abs=1e-300)

    def test_score_table_values_are_probabilities(self):
        rng = np.random.default_rng(44)
        for _ in range(10):
            _, lm, store, seq, eta = random_fixture(rng)
            props = precompute_proposals(seq, store, lm, eta)
            _, table = score_sequence(seq, props, lm)
            for n in range(2, len(seq) + 1):
                assert table.log_alpha[n] <= 1e-12
                assert table.log_beta[n] <= 1e-12


class TestPrecompute:
    def test_causality(self):
        # the proposal at position n only sees tokens before n-1
        rng = np.random.default_rng(45)
        _, lm, store, seq, eta = random_fixture(rng, max_len=8)
        props = precompute_proposals(seq, store, lm, eta)
        mutated = list(seq)
        mutated[-1] = (mutated[-1] + 1) % len(lm.vocab)
        props2 = precompute_proposals(mutated, store, lm, eta)
        for a, b in zip(props[:-2], props2[:-2]):
            assert (a.chunk, a.tau, a.q) == (b.chunk, b.tau, b.q)

    def test_deterministic(self):
        rng = np.random.default_rng(46)
        _, lm, store, seq, eta = random_fixture(rng)
        a = precompute_proposals(seq, store, lm, eta)
        b = precompute_proposals(seq, store, lm, eta)
        assert a == b

    def test_fingerprint_mismatch_rejected(self):
        vocab = vocabulary_from_corpus("a b")
        other = vocabulary_from_corpus("a b c")
        lm = fit_reference_lm([vocab.encode("a b")], vocab)
        store = build([], lm.dim, other)
        with pytest.raises(ScoringError):
            precompute_proposals(vocab.encode("a b"), store, lm, 0.5)


class TestPpl:
    def test_empty_store_equals_base_ppl(self):
        vocab = vocabulary_from_corpus("a b c")
        lm = fit_reference_lm([vocab.encode("a b c a b c a")], vocab)
        store = build([], lm.dim, vocab)
        seqs = [vocab.encode("a b c a"), vocab.encode("c b a")]
        assert ppl(seqs, store, lm, eta=0.5) == pytest.approx(
            base_ppl(seqs, lm), rel=1e-12)

    def test_single_sequence_matches_score(self):
        vocab = vocabulary_from_corpus("a b")
        lm = fit_reference_lm([vocab.encode("a b a b a")], vocab)
        seq = vocab.encode("a b a")
        store = build([], lm.dim, vocab)
        props = precompute_proposals(seq, store, lm, 0.5)
        score, _ = score_sequence(seq, props, lm)
        assert ppl([seq], store, lm, 0.5) == pytest.approx(score.ppl, rel=1e-12)

    def test_requires_sequences(self):
        vocab = vocabulary_from_corpus("a")
        lm = fit_reference_lm([vocab.encode("a a")], vocab)
        with pytest.raises(ScoringError):
            ppl([], None, lm, 0.5)


class TestNormalization:
    def test_total_mass_over_fixed_length_sequences(self):
        # with a 3-token vocabulary every length-4 prefix mass must sum to 1
        rng = np.random.default_rng(47)
        vocab = build_vocabulary(["a"])  # 3 tokens with the reserved pair
        v = 3
        for _ in range(5):
            corpus = [list(rng.integers(0, v, size=12))]
            lm = fit_reference_lm(corpus, vocab, ReferenceLmParams(dim=8, seed=int(rng.integers(100))))
            records = []
            for i in range(int(rng.integers(1, 8))):
                vec = rng.normal(size=8)
                vec = (vec / np.linalg.norm(vec)).astype(np.float32)
                chunk = tuple(int(t) for t in rng.integers(0, v, size=int(rng.integers(1, 4))))
                records.append(ChunkRecord(context=(), entry=int(rng.integers(0, v)),
                                           chunk=chunk, vector=vec, source=(0, i)))
            store = build(records, 8, vocab)
            eta = float(rng.uniform(0, 0.9))
            total = 0.0
            for a in range(v):
                for b in range(v):
                    for c in range(v):
                        for d in range(v):
                            seq = [a, b, c, d]
                            props = precompute_proposals(seq, store, lm, eta)
                            total += brute_force_score(seq, props, lm)
            assert total == pytest.approx(1.0, abs=1e-8)
