"""Frechet-distance and inception-score machinery with pluggable feature
extractors, plus token-level analysis: bit-flip probing, Hamming distance and
nearest neighbors, and the reconstruction-quality proxy.
"""

import json
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from . import bitops


class EvaluationError(ValueError):
    pass


# --------------------------------------------------------------------------- #
# feature statistics and Frechet distance
# --------------------------------------------------------------------------- #

@dataclass
class FeatureStats:
    mean: torch.Tensor        # (d,) float64
    covariance: torch.Tensor  # (d, d) float64, symmetric PSD
    count: int

    def __post_init__(self):
        if self.count < 2:
            raise EvaluationError("need at least two samples")
        asym = (self.covariance - self.covariance.T).abs().max()
        if float(asym) > 1e-8:
            raise EvaluationError(f"covariance asymmetric by {float(asym):g}")

    def merge(self, other: "FeatureStats") -> "FeatureStats":
        """Associative combination of two partial statistics."""
        na, nb = self.count, other.count
        n = na + nb
        delta = other.mean - self.mean
        mean = self.mean + delta * (nb / n)
        m2 = (self.covariance * (na - 1) + other.covariance * (nb - 1)
              + torch.outer(delta, delta) * (na * nb / n))
        return FeatureStats(mean, _symmetrize(m2 / (n - 1)), n)


def _symmetrize(m: torch.Tensor) -> torch.Tensor:
    return 0.5 * (m + m.T)


def compute_stats(features) -> FeatureStats:
    """Sample mean and unbiased covariance of an (n, d) feature matrix."""
    x = torch.as_tensor(features, dtype=torch.float64)
    if x.ndim != 2:
        raise EvaluationError(f"expected (n, d) features, got {tuple(x.shape)}")
    n = x.shape[0]
    if n < 2:
        raise EvaluationError("need at least two samples")
    mean = x.mean(dim=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    return FeatureStats(mean, _symmetrize(cov), n)


def _psd_sqrt(m: torch.Tensor, tol: float = 1e-6) -> torch.Tensor:
    eigvals, eigvecs = torch.linalg.eigh(_symmetrize(m))
    if float(eigvals.min()) < -tol:
        raise EvaluationError(
            f"matrix has eigenvalue {float(eigvals.min()):g} below -{tol:g}")
    root = eigvals.clamp_min(0.0).sqrt()
    return eigvecs @ torch.diag(root) @ eigvecs.T


def frechet_distance(a: FeatureStats, b: FeatureStats, tol: float = 1e-6) -> float:
    """||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)).

    The cross term is computed from the eigenvalues of Sa^(1/2) Sb Sa^(1/2),
    which is symmetric PSD and numerically stabler than the direct product.
    """
    if a.mean.shape != b.mean.shape:
        raise EvaluationError("feature dimensions differ")
    diff = a.mean - b.mean
    a_half = _psd_sqrt(a.covariance, tol)
    inner = _symmetrize(a_half @ b.covariance @ a_half)
    eigvals = torch.linalg.eigvalsh(inner)
    if float(eigvals.min()) < -tol:
        raise EvaluationError("cross-covariance term is not PSD within tolerance")
    cross = eigvals.clamp_min(0.0).sqrt().sum()
    value = float(diff @ diff + a.covariance.trace() + b.covariance.trace()
                  - 2.0 * cross)
    return value


def inception_score(class_probs) -> float:
    """exp(E_i KL(p(y|x_i) || E_j p(y|x_j))); 1 for uniform rows, C for
    distinct one-hots over C classes.
    """
    p = torch.as_tensor(class_probs, dtype=torch.float64)
    if p.ndim != 2:
        raise EvaluationError(f"expected (n, C) probabilities, got {tuple(p.shape)}")
    if float(p.min()) < 0:
        raise EvaluationError("probabilities must be nonnegative")
    row_sums = p.sum(dim=1)
    if float((row_sums - 1.0).abs().max()) > 1e-6:
        raise EvaluationError("rows must sum to 1")
    marginal = p.mean(dim=0)
    kl = (torch.special.xlogy(p, p) - torch.special.xlogy(p, marginal)).sum(dim=1)
    return float(torch.exp(kl.mean()))


# --------------------------------------------------------------------------- #
# bit-token analysis
# --------------------------------------------------------------------------- #

def flip_bit(bits: torch.Tensor, i: int) -> torch.Tensor:
    """Negate bit i of every token; an involution on (B, T, K) grids."""
    if bits.ndim != 3:
        raise EvaluationError(f"expected (B, T, K) bits, got {tuple(bits.shape)}")
    if not 0 <= i < bits.shape[2]:
        raise EvaluationError(f"bit index {i} outside [0, {bits.shape[2]})")
    flipped = bits.clone()
    flipped[..., i] = -flipped[..., i]
    return flipped


def bit_flip_probe(bits: torch.Tensor, i: int,
                   decoder: Callable[[torch.Tensor], torch.Tensor]) -> torch.Tensor:
    """Decode the grid with bit i flipped at every spatial position."""
    return decoder(flip_bit(bits, i))


def hamming_distance(a: torch.Tensor, b: torch.Tensor) -> int:
    if a.shape != b.shape:
        raise EvaluationError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    for t in (a, b):
        if not bool(t.abs().eq(1).all()):
            raise EvaluationError("bit grids must contain only -1 and +1")
    return int((a != b).sum())


def nearest_neighbors(query: torch.Tensor, corpus: torch.Tensor, metric: str,
                      k: int,
                      extractor: Optional[Callable] = None) -> List[Tuple[int, float]]:
    """k closest corpus entries to the query, ascending distance, ties by
    corpus index. metric 'hamming' expects bit grids; 'perceptual' expects
    images and uses L2 in the extractor's logit space.
    """
    if corpus.shape[0] == 0:
        raise EvaluationError("corpus is empty")
    if k > corpus.shape[0]:
        raise EvaluationError(f"k={k} exceeds corpus size {corpus.shape[0]}")
    if metric == "hamming":
        flat_q = query.reshape(1, -1).to(torch.int8).numpy()
        flat_c = corpus.reshape(corpus.shape[0], -1).to(torch.int8).numpy()
        dists = bitops.hamming_matrix(
            _pack_rows(flat_q), _pack_rows(flat_c))[0].astype(np.float64)
    elif metric == "perceptual":
        if extractor is None:
            raise EvaluationError("perceptual metric requires an extractor")
        with torch.no_grad():
            fq = extractor(query.unsqueeze(0))
            fc = extractor(corpus)
        dists = (fc - fq).pow(2).sum(dim=1).sqrt().double().numpy()
    else:
        raise EvaluationError(f"unknown metric {metric!r}")
    order = np.argsort(dists, kind="stable")[:k]
    return [(int(i), float(dists[i])) for i in order]


def _pack_rows(rows: np.ndarray) -> np.ndarray:
    return bitops.pack_bits(rows)


# --------------------------------------------------------------------------- #
# reconstruction-quality proxy
# --------------------------------------------------------------------------- #

def extract_features(batches: Iterable[torch.Tensor],
                     extractor: Callable[[torch.Tensor], torch.Tensor]) -> torch.Tensor:
    chunks = []
    with torch.no_grad():
        for batch in batches:
            chunks.append(extractor(batch).double())
    if not chunks:
        raise EvaluationError("no batches provided")
    return torch.cat(chunks, dim=0)


def reconstruction_eval(batches: Sequence[torch.Tensor],
                        reconstruct: Callable[[torch.Tensor], torch.Tensor],
                        extractor: Callable[[torch.Tensor], torch.Tensor]) -> float:
    """Frechet distance between feature stats of originals and their
    reconstructions; the desk-scale stand-in for reconstruction FID.
    """
    batches = list(batches)
    if not batches:
        raise EvaluationError("empty dataset")
    with torch.no_grad():
        recons = [reconstruct(b) for b in batches]
    orig_stats = compute_stats(extract_features(batches, extractor))
    recon_stats = compute_stats(extract_features(recons, extractor))
    return frechet_distance(orig_stats, recon_stats)


def append_metric_record(path, name: str, value: float, extractor_id: str,
                         sample_count: int, seed: int) -> None:
    """Append one line-delimited structured metric record."""
    record = {"metric": name, "value": float(value), "extractor": extractor_id,
              "samples": int(sample_count), "seed": int(seed)}
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record) + "\n")
