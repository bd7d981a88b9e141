"""Closed-form oracles for feature statistics, Frechet distance, inception
score, and the bit-token analysis helpers."""

import json
import math

import pytest
import torch

from bitgen.evaluation import (
    EvaluationError,
    FeatureStats,
    append_metric_record,
    bit_flip_probe,
    compute_stats,
    extract_features,
    flip_bit,
    frechet_distance,
    hamming_distance,
    inception_score,
    nearest_neighbors,
    reconstruction_eval,
)


# --------------------------------------------------------------------------- #
# feature statistics
# --------------------------------------------------------------------------- #

def test_compute_stats_hand_case():
    stats = compute_stats([[0.0, 0.0], [2.0, 2.0]])
    assert torch.allclose(stats.mean, torch.tensor([1.0, 1.0], dtype=torch.float64))
    expected_cov = torch.full((2, 2), 2.0, dtype=torch.float64)
    assert torch.allclose(stats.covariance, expected_cov)
    assert stats.count == 2


def test_stats_validation():
    with pytest.raises(EvaluationError):
        compute_stats([[1.0, 2.0]])
    with pytest.raises(EvaluationError):
        compute_stats(torch.randn(4))
    asym = torch.tensor([[1.0, 0.5], [0.0, 1.0]], dtype=torch.float64)
    with pytest.raises(EvaluationError):
        FeatureStats(torch.zeros(2, dtype=torch.float64), asym, 10)


def test_merge_equals_concatenation():
    g = torch.Generator().manual_seed(0)
    x = torch.randn(50, 6, generator=g, dtype=torch.float64)
    merged = compute_stats(x[:20]).merge(compute_stats(x[20:]))
    full = compute_stats(x)
    assert torch.allclose(merged.mean, full.mean, atol=1e-12)
    assert torch.allclose(merged.covariance, full.covariance, atol=1e-12)
    assert merged.count == 50


def test_merge_is_associative():
    g = torch.Generator().manual_seed(1)
    x = torch.randn(30, 4, generator=g, dtype=torch.float64)
    a, b, c = compute_stats(x[:10]), compute_stats(x[10:20]), compute_stats(x[20:])
    left = a.merge(b).merge(c)
    right = a.merge(b.merge(c))
    assert torch.allclose(left.mean, right.mean, atol=1e-12)
    assert torch.allclose(left.covariance, right.covariance, atol=1e-11)


# --------------------------------------------------------------------------- #
# Frechet distance
# --------------------------------------------------------------------------- #

def random_stats(seed, d=5, n=100):
    g = torch.Generator().manual_seed(seed)
    return compute_stats(torch.randn(n, d, generator=g, dtype=torch.float64))


def test_frechet_self_distance_zero():
    a = random_stats(0)
    assert abs(frechet_distance(a, a)) <= 1e-6


def test_frechet_pure_mean_shift():
    a = random_stats(2, d=4)
    shift = torch.tensor([1.0, -2.0, 0.5, 3.0], dtype=torch.float64)
    b = FeatureStats(a.mean + shift, a.covariance.clone(), a.count)
    assert frechet_distance(a, b) == pytest.approx(float(shift @ shift), abs=1e-8)


def test_frechet_isotropic_hand_case():
    # N(0, I) vs N(0, 4I) in 2-D: 2 + 8 - 2 tr(2I) = 2
    eye = torch.eye(2, dtype=torch.float64)
    a = FeatureStats(torch.zeros(2, dtype=torch.float64), eye, 10)
    b = FeatureStats(torch.zeros(2, dtype=torch.float64), 4.0 * eye, 10)
    assert frechet_distance(a, b) == pytest.approx(2.0, abs=1e-10)


def test_frechet_symmetry():
    a, b = random_stats(3), random_stats(4)
    assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), abs=1e-8)


def test_frechet_rotation_invariance():
    g = torch.Generator().manual_seed(5)
    x = torch.randn(200, 6, generator=g, dtype=torch.float64)
    y = torch.randn(200, 6, generator=g, dtype=torch.float64) * 1.5 + 0.3
    q, _ = torch.linalg.qr(torch.randn(6, 6, generator=g, dtype=torch.float64))
    base = frechet_distance(compute_stats(x), compute_stats(y))
    rotated = frechet_distance(compute_stats(x @ q), compute_stats(y @ q))
    assert rotated == pytest.approx(base, abs=1e-6)


def test_frechet_rejects_bad_inputs():
    a, b = random_stats(0, d=3), random_stats(1, d=4)
    with pytest.raises(EvaluationError):
        frechet_distance(a, b)
    neg = FeatureStats(torch.zeros(2, dtype=torch.float64),
                       torch.diag(torch.tensor([-1.0, 1.0], dtype=torch.float64)), 5)
    with pytest.raises(EvaluationError):
        frechet_distance(neg, random_stats(0, d=2))


# --------------------------------------------------------------------------- #
# inception score
# --------------------------------------------------------------------------- #

def test_inception_score_uniform_rows():
    p = torch.full((64, 10), 0.1)
    assert inception_score(p) == pytest.approx(1.0, abs=1e-9)


def test_inception_score_distinct_one_hots():
    for c in (2, 5, 16):
        assert inception_score(torch.eye(c)) == pytest.approx(float(c), rel=1e-9)


def test_inception_score_hand_case():
    p = torch.tensor([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    expected = math.exp((2 * math.log(1.5) + math.log(3.0)) / 3)
    assert inception_score(p) == pytest.approx(expected, rel=1e-12)


def test_inception_score_validation_and_speed():
    import time
    with pytest.raises(EvaluationError):
        inception_score(torch.tensor([[0.5, 0.6]]))
    with pytest.raises(EvaluationError):
        inception_score(torch.tensor([[-0.1, 1.1]]))
    with pytest.raises(EvaluationError):
        inception_score(torch.randn(3))
    start = time.monotonic()
    inception_score(torch.full((10_000, 10), 0.1))
    assert time.monotonic() - start < 1.0


# --------------------------------------------------------------------------- #
# bit-token analysis
# --------------------------------------------------------------------------- #

def random_bits(seed, shape=(2, 4, 3)):
    g = torch.Generator().manual_seed(seed)
    return torch.where(torch.rand(*shape, generator=g) > 0.5, 1.0, -1.0)


def test_flip_bit_is_involution():
    bits = random_bits(0)
    assert torch.equal(flip_bit(flip_bit(bits, 1), 1), bits)
    assert hamming_distance(bits, flip_bit(bits, 1)) == 2 * 4
    with pytest.raises(EvaluationError):
        flip_bit(bits, 3)
    with pytest.raises(EvaluationError):
        flip_bit(bits[0], 0)


def test_bit_flip_probe_passes_flipped_grid():
    bits = random_bits(1)
    seen = {}
    out = bit_flip_probe(bits, 2, lambda b: seen.setdefault("bits", b))
    assert torch.equal(seen["bits"], flip_bit(bits, 2))
    assert out is seen["bits"]


def test_hamming_distance_brute_force():
    a, b = random_bits(2, (3, 5, 7)), random_bits(3, (3, 5, 7))
    manual = int((a.flatten() != b.flatten()).sum())
    assert hamming_distance(a, b) == manual
    assert hamming_distance(a, a) == 0
    with pytest.raises(EvaluationError):
        hamming_distance(a, b[:2])
    with pytest.raises(EvaluationError):
        hamming_distance(a * 0.5, b)


def test_nearest_neighbors_hamming_exact():
    corpus = random_bits(4, (6, 4, 8))
    query = corpus[2].clone()
    result = nearest_neighbors(query, corpus, "hamming", k=6)
    assert result[0] == (2, 0.0)
    manual = sorted((int((corpus[i] != query).sum()), i) for i in range(6))
    assert [(i, float(d)) for d, i in manual] == result


def test_nearest_neighbors_tie_breaks_by_index():
    corpus = random_bits(5, (4, 2, 4))
    corpus[3] = corpus[1]
    query = corpus[1].clone()
    result = nearest_neighbors(query, corpus, "hamming", k=2)
    assert result[0] == (1, 0.0)
    assert result[1] == (3, 0.0)


def test_nearest_neighbors_perceptual_and_errors():
    g = torch.Generator().manual_seed(6)
    corpus = torch.randn(5, 3, 4, 4, generator=g)
    query = corpus[4] + 0.01
    flat = lambda x: x.reshape(x.shape[0], -1)
    result = nearest_neighbors(query, corpus, "perceptual", k=1, extractor=flat)
    assert result[0][0] == 4
    expected = float((corpus[4] - query).pow(2).sum().sqrt())
    assert result[0][1] == pytest.approx(expected, rel=1e-5)
    with pytest.raises(EvaluationError):
        nearest_neighbors(query, corpus, "perceptual", k=1)
    with pytest.raises(EvaluationError):
        nearest_neighbors(query, corpus, "cosine", k=1)
    with pytest.raises(EvaluationError):
        nearest_neighbors(query, corpus, "perceptual", k=9, extractor=flat)
    with pytest.raises(EvaluationError):
        nearest_neighbors(query, corpus[:0], "perceptual", k=1, extractor=flat)


# --------------------------------------------------------------------------- #
# reconstruction proxy
# --------------------------------------------------------------------------- #

def flatten_extractor(x):
    return x.reshape(x.shape[0], -1)


def test_reconstruction_eval_identity_is_zero():
    g = torch.Generator().manual_seed(7)
    batches = [torch.randn(16, 3, 4, 4, generator=g) for _ in range(3)]
    score = reconstruction_eval(batches, lambda b: b, flatten_extractor)
    assert abs(score) <= 1e-6


def test_reconstruction_eval_monotone_in_noise():
    g = torch.Generator().manual_seed(8)
    batches = [torch.randn(32, 3, 4, 4, generator=g) for _ in range(2)]

    def noisy(scale):
        gen = torch.Generator().manual_seed(9)
        return lambda b: b + scale * torch.randn(b.shape, generator=gen)

    small = reconstruction_eval(batches, noisy(0.1), flatten_extractor)
    large = reconstruction_eval(batches, noisy(1.0), flatten_extractor)
    assert 0 < small < large
    with pytest.raises(EvaluationError):
        reconstruction_eval([], lambda b: b, flatten_extractor)


def test_extract_features_requires_batches():
    with pytest.raises(EvaluationError):
        extract_features([], flatten_extractor)


def test_append_metric_record_jsonl(tmp_path):
    path = tmp_path / "metrics.jsonl"
    append_metric_record(path, "fd_proxy", 1.25, "tiny_conv", 64, 0)
    append_metric_record(path, "is", 3.0, "tiny_conv", 128, 1)
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 2
    first = json.loads(lines[0])
    assert first == {"metric": "fd_proxy", "value": 1.25, "extractor": "tiny_conv",
                     "samples": 64, "seed": 0}
    assert json.loads(lines[1])["metric"] == "is"
