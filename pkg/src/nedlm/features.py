"""Scalar compatibility features and their learnable binned projections.

A bin layer turns a scalar x into a d-dimensional vector of Gaussian
bumps, p_i = exp(-(eps_i * |x - x_i|)^2), with learnable centers x_i and
sharpness eps_i.  Sharpness stays positive by parameterizing it through
softplus.  The ten lexical features compare a mention string with an
entity title; all of them land in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import CandidateTable
from .errors import FeatureError
from .params import Parameter, make_parameter

N_LEXICAL = 10


# ---------------------------------------------------------------------------
# Binning
# ---------------------------------------------------------------------------


def _softplus_inverse(y: float) -> float:
    # solve softplus(r) = y;  stable for y up to hundreds
    return y + np.log1p(-np.exp(-y))


@dataclass
class BinLayer:
    """Learnable centers and sharpness of one scalar-to-vector projection."""

    centers: Parameter  # [d]
    rho: Parameter  # [d]; sharpness = softplus(rho) > 0

    @property
    def dim(self) -> int:
        return self.centers.values.shape[0]

    @classmethod
    def create(cls, prefix: str, d: int) -> "BinLayer":
        if d < 1:
            raise FeatureError(f"bin dimension must be positive, got {d}")
        centers = np.linspace(0.0, 1.0, d) if d > 1 else np.array([0.5])
        rho = np.full(d, _softplus_inverse(float(d)))
        return cls(
            centers=make_parameter(prefix + ".centers", centers),
            rho=make_parameter(prefix + ".rho", rho),
        )

    def parameters(self) -> list[Parameter]:
        return [self.centers, self.rho]


def bin_project(x, layer: BinLayer) -> Tensor:
    """Gaussian bump activations of a scalar (or column of scalars).

    Accepts a float, a 0-d tensor, or an [n, 1] tensor; broadcasting
    against the center row produces [d] or [n, d] respectively.
    """
    x = x if isinstance(x, Tensor) else ad.constant(x)
    diff = ad.sub(x, layer.centers.tensor)
    eps = ad.softplus(layer.rho.tensor)
    return ad.exp(ad.neg(ad.square(ad.mul(eps, diff))))


# ---------------------------------------------------------------------------
# Lexical features
# ---------------------------------------------------------------------------


def _levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (ca != cb))
            )
        previous = current
    return previous[-1]


def _char_bigrams(s: str) -> set[str]:
    return {s[i : i + 2] for i in range(len(s) - 1)}


def lexical_features(mention: str, title: str) -> np.ndarray:
    """Ten surface-similarity scores between a mention and an entity title.

    1 exact match, 2 mention is prefix of title, 3 mention is suffix of
    title, 4 title is prefix of mention, 5 title is suffix of mention,
    6 mention contained in title, 7 title contained in mention,
    8 one minus normalized edit distance, 9 character-bigram Jaccard,
    10 fraction of mention tokens present in title.
    """
    m = " ".join(mention.lower().split())
    t = " ".join(title.lower().split())
    if not m or not t:
        raise FeatureError("lexical features need nonempty mention and title")

    out = np.zeros(N_LEXICAL)
    out[0] = float(m == t)
    out[1] = float(t.startswith(m))
    out[2] = float(t.endswith(m))
    out[3] = float(m.startswith(t))
    out[4] = float(m.endswith(t))
    out[5] = float(m in t)
    out[6] = float(t in m)
    out[7] = 1.0 - _levenshtein(m, t) / max(len(m), len(t))
    bm, bt = _char_bigrams(m), _char_bigrams(t)
    union = bm | bt
    out[8] = (len(bm & bt) / len(union)) if union else float(m == t)
    m_tokens = m.split()
    t_tokens = set(t.split())
    out[9] = sum(1 for tok in m_tokens if tok in t_tokens) / len(m_tokens)
    return out


def prior_feature(mention: str, entity_id: int, priors: CandidateTable) -> float:
    """p(e|m) from the table; 0 when the mention or pair is absent."""
    return priors.prior(mention, entity_id)
