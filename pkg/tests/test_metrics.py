import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peerqda.errors import ContractError
from peerqda.metrics import (
    CachingProvider,
    HashedTokenEmbedder,
    MatchConfig,
    aggregate,
    code_diversity,
    diversity_report,
    make_provider,
    match,
    normalize_similarity,
    similarity,
    text_utilization,
)
from peerqda.model import CodingStructure, Level

from genlib import make_code

VOCAB = (
    "scrum quality testing sprint backlog review release velocity retro "
    "standup pairing estimate defect coverage deploy trust morale scope "
    "handoff onboarding"
).split()

HASH = HashedTokenEmbedder()
CFG = MatchConfig(provider=HASH, tau=0.7)


def test_vocabulary_is_collision_free():
    dims = {w: HASH.token_dimension(w) for w in VOCAB}
    assert len(set(dims.values())) == len(VOCAB), "hash collisions in test vocabulary"


class TestHashedEmbedder:
    def test_unit_norm(self):
        for text in ("scrum", "scrum quality review", "a a a b"):
            assert abs(np.linalg.norm(HASH.embed(text)) - 1.0) < 1e-6

    def test_self_similarity_is_one(self):
        v = HASH.embed("sprint backlog review")
        assert float(np.dot(v, v)) == pytest.approx(1.0, abs=1e-9)

    def test_disjoint_tokens_orthogonal(self):
        a, b = HASH.embed("alpha beta"), HASH.embed("gamma delta")
        assert abs(float(np.dot(a, b))) < 1e-12

    def test_shared_token_cosine_half(self):
        # two 2-token texts sharing one token: cos = 1/(sqrt2*sqrt2) = 0.5
        s = float(np.dot(HASH.embed("scrum quality"), HASH.embed("scrum testing")))
        assert s == pytest.approx(0.5, abs=1e-9)

    def test_zero_token_error(self):
        with pytest.raises(ContractError):
            HASH.embed("   ")

    def test_deterministic(self):
        assert np.array_equal(HASH.embed("scrum quality"), HASH.embed("scrum quality"))


class TestNormalize:
    def test_identity_texts(self):
        assert normalize_similarity(1.0) == 1.0

    def test_orthogonal(self):
        assert normalize_similarity(0.0) == 0.5

    def test_tau_boundary_value(self):
        assert normalize_similarity(0.4) == 0.7

    def test_numerical_excess_clamped_silently(self):
        assert normalize_similarity(1.0 + 5e-7) == 1.0

    def test_gross_excess_warns(self):
        with pytest.warns(UserWarning):
            normalize_similarity(1.5)


def brute_force_match(generated, human, config):
    """Independent oracle: rescore every pair, pick best, apply the formulas."""
    assignment = []
    for g in generated:
        scored = [(similarity(config.provider, g, h), j) for j, h in enumerate(human)]
        best_score = max(s for s, _ in scored)
        best_j = min(j for s, j in scored if s == best_score)
        assignment.append(best_j if best_score >= config.tau else None)
    matched_human = {j for j in assignment if j is not None}
    recall = len(matched_human) / len(human)
    match_rate = len([j for j in assignment if j is not None]) / len(generated)
    return assignment, recall, match_rate


def random_codes(rng, n_max=12):
    n = rng.randint(1, n_max)
    return [
        " ".join(rng.choice(VOCAB) for _ in range(rng.randint(1, 5))) for _ in range(n)
    ]


class TestMatch:
    def test_identical_lists_full_scores(self):
        names = ["sprint quality", "release testing", "retro morale"]
        report = match(names, names, CFG)
        assert report.recall == 1.0
        assert report.match_rate == 1.0

    def test_disjoint_tokens_no_match(self):
        report = match(["alpha beta"], ["gamma delta"], CFG)
        assert report.best_scores[0] == 0.5
        assert report.recall == 0.0
        assert report.match_rate == 0.0

    def test_empty_sets_rejected(self):
        with pytest.raises(ContractError):
            match([], ["x"], CFG)
        with pytest.raises(ContractError):
            match(["x"], [], CFG)

    def test_one_to_many_shape(self):
        # two paraphrases of the same human code both match it
        report = match(["scrum quality review", "quality scrum review"], ["review scrum quality"], CFG)
        assert report.assignment == (0, 0)
        assert report.recall == 1.0
        assert report.match_rate == 1.0

    def test_oracle_equivalence_sampled(self):
        rng = random.Random(17)
        for _ in range(120):
            generated, human = random_codes(rng), random_codes(rng)
            report = match(generated, human, CFG)
            assignment, recall, match_rate = brute_force_match(generated, human, CFG)
            assert list(report.assignment) == assignment
            assert report.recall == recall
            assert report.match_rate == match_rate

    def test_tau_monotonicity(self):
        rng = random.Random(3)
        for _ in range(40):
            generated, human = random_codes(rng), random_codes(rng)
            last_recall, last_rate = 1.1, 1.1
            for tau in (0.3, 0.5, 0.7, 0.9):
                report = match(generated, human, MatchConfig(provider=HASH, tau=tau))
                assert report.recall <= last_recall + 1e-12
                assert report.match_rate <= last_rate + 1e-12
                last_recall, last_rate = report.recall, report.match_rate


def scan_oracle(generated, config, seed):
    """Literal pair-scan: walk pairs in shuffled order, drop the later member."""
    order = list(generated)
    random.Random(seed).shuffle(order)
    alive = [True] * len(order)
    for i in range(len(order)):
        if not alive[i]:
            continue
        for k in range(i + 1, len(order)):
            if alive[k] and similarity(config.provider, order[i], order[k]) >= config.tau:
                alive[k] = False
    return sum(alive) / len(order)


def clustered_codes(n_clusters=3, cluster_size=4, n_singletons=28):
    """Planted near-duplicate clusters over disjoint token sets."""
    base_tokens = [f"tok{j}" for j in range(200)]
    codes = []
    t = 0
    for c in range(n_clusters):
        stem = base_tokens[t : t + 4]
        t += 4
        for v in range(cluster_size):
            codes.append(" ".join(stem + [base_tokens[t + v]]))
        t += cluster_size
    for _ in range(n_singletons):
        codes.append(" ".join(base_tokens[t : t + 3]))
        t += 3
    return codes


class TestDiversity:
    def test_all_distinct_is_one(self):
        codes = ["alpha beta", "gamma delta", "epsi zeta"]
        for seed in (0, 42, 777):
            assert code_diversity(codes, CFG, seed) == 1.0

    def test_single_exact_duplicate(self):
        codes = ["alpha beta", "alpha beta", "gamma delta", "epsi zeta"]
        for seed in (0, 42, 777, 2026, 99999):
            assert code_diversity(codes, CFG, seed) == 0.75

    def test_clustered_fixture_matches_scan_oracle(self):
        codes = clustered_codes()
        assert len(codes) == 40
        for seed in (0, 42, 777, 2026, 99999):
            assert code_diversity(codes, CFG, seed) == scan_oracle(codes, CFG, seed)

    def test_clean_clusters_are_order_robust(self):
        report = diversity_report(clustered_codes(), CFG)
        # one survivor per cluster + singletons = (3 + 28) / 40
        assert report.values == tuple([31 / 40] * 5)
        assert report.std == 0.0

    def test_tau_monotonicity(self):
        rng = random.Random(9)
        for _ in range(25):
            codes = random_codes(rng)
            values = [
                code_diversity(codes, MatchConfig(provider=HASH, tau=tau), seed=1)
                for tau in (0.3, 0.6, 0.9)
            ]
            assert values == sorted(values)

    def test_value_in_unit_interval(self):
        rng = random.Random(31)
        for _ in range(30):
            codes = random_codes(rng)
            v = code_diversity(codes, CFG, seed=rng.randint(0, 999))
            assert 0.0 < v <= 1.0


class TestTextUtilization:
    def test_full_coverage(self):
        corpus = "one two three four five"
        s = CodingStructure(
            level=Level.CODE, roots={"Code 1": make_code("Code 1", "all", [corpus])}
        )
        assert text_utilization(s, corpus).rate == 1.0

    def test_five_of_hundred_tokens(self):
        corpus = " ".join(f"w{i}" for i in range(100))
        s = CodingStructure(
            level=Level.CODE,
            roots={"Code 1": make_code("Code 1", "bit", ["w0 w1 w2 w3 w4"])},
        )
        report = text_utilization(s, corpus)
        assert report.used_tokens == 5
        assert report.total_tokens == 100
        assert report.rate == 0.05

    def test_duplicate_chunk_counted_once(self):
        corpus = " ".join(f"w{i}" for i in range(10))
        s = CodingStructure(
            level=Level.CODE,
            roots={
                "Code 1": make_code("Code 1", "a", ["w0 w1"]),
                "Code 2": make_code("Code 2", "b", ["w0 w1"]),
            },
        )
        assert text_utilization(s, corpus).used_tokens == 2

    def test_empty_corpus_rejected(self):
        s = CodingStructure(level=Level.CODE, roots={"Code 1": make_code("Code 1", "a", ["x"])})
        with pytest.raises(ContractError):
            text_utilization(s, "")


class TestAggregate:
    def test_single_report_is_itself(self):
        row = {"recall": 0.5, "match_rate": 0.25}
        assert aggregate([row]) == row

    def test_two_reports_mean(self):
        out = aggregate([{"match_rate": 0.2}, {"match_rate": 0.4}])
        assert out["match_rate"] == pytest.approx(0.3)

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            aggregate([])


class TestProviders:
    def test_make_provider_specs(self):
        assert make_provider("hash").dimension == 256
        assert make_provider("hash:64").dimension == 64
        http = make_provider("http://localhost:9000/v1#mini")
        assert http.model == "mini"
        with pytest.raises(ContractError):
            make_provider("mystery")

    def test_caching_provider_avoids_recompute(self):
        calls = []

        class Counting:
            tag = "count"
            dimension = 4

            def embed(self, text):
                calls.append(text)
                return np.array([1.0, 0, 0, 0])

        cached = CachingProvider(Counting())
        cached.embed("x")
        cached.embed("x")
        assert calls == ["x"]

    def test_cache_persistence(self, tmp_path):
        path = tmp_path / "cache.json"
        cached = CachingProvider(HashedTokenEmbedder(), path=path)
        v1 = cached.embed("scrum quality")
        cached.save()
        reloaded = CachingProvider(HashedTokenEmbedder(), path=path)
        assert np.allclose(reloaded.embed("scrum quality"), v1)


@settings(max_examples=40, deadline=None)
@given(
    st.integers(min_value=0, max_value=10_000),
    st.sampled_from(["hash", "hash:101"]),
)
def test_structural_properties_hold_for_any_provider(seed, spec):
    """Swapping providers changes values but never the structural invariants."""
    provider = make_provider(spec)
    rng = random.Random(seed)
    generated, human = random_codes(rng, 8), random_codes(rng, 8)
    low = match(generated, human, MatchConfig(provider=provider, tau=0.4))
    high = match(generated, human, MatchConfig(provider=provider, tau=0.8))
    assert high.recall <= low.recall
    assert high.match_rate <= low.match_rate
    matched_edges = [j for j in low.assignment if j is not None]
    assert len(matched_edges) == round(low.match_rate * len(generated))
    d_low = code_diversity(generated, MatchConfig(provider=provider, tau=0.4), 7)
    d_high = code_diversity(generated, MatchConfig(provider=provider, tau=0.8), 7)
    assert d_low <= d_high
