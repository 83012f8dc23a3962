"""Comparator metrics that do not model foveation."""

import math
import re
from dataclasses import dataclass
from typing import List

import numpy as np

from .backends.base import DESCRIPTION_PROMPT, DIFFICULTY_PROMPT
from .errors import CapabilityError, MalformedResponseError
from .imageio import to_gray

ENTROPY_SAMPLES = 10
# entropy draws use their own sample indices so they never reuse the gold captions
ENTROPY_SAMPLE_OFFSET = 1000
_NUMBER = re.compile(r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)")


@dataclass
class EntropyEstimate:
    h_hat: float
    n_samples: int
    per_sample_loglik: List[float]
    per_token: bool = False


def entropy_from_logliks(logliks, lengths=None):
    """Monte Carlo predictive entropy: minus the mean sequence log-likelihood.

    With ``lengths`` each log-likelihood is first divided by its token count.
    """
    ll = [float(x) for x in logliks]
    if not ll:
        raise ValueError("need at least one sample")
    if lengths is not None:
        ll = [x / max(int(n), 1) for x, n in zip(ll, lengths, strict=True)]
    return 0.0 - math.fsum(ll) / len(ll)  # avoids -0.0


def language_entropy(image, caption, n=ENTROPY_SAMPLES, temperature=None, per_token=False,
                     prompt=DESCRIPTION_PROMPT):
    """Sample ``n`` descriptions and estimate the entropy of the caption distribution."""
    if not caption.supports_loglik:
        raise CapabilityError(f"backend {caption.backend_id} does not expose token log-likelihoods")
    ds = caption.describe(image, prompt, n, temperature, start=ENTROPY_SAMPLE_OFFSET)
    logliks = []
    lengths = []
    for s in ds.samples:
        if s.sequence_loglik is None:
            raise CapabilityError(f"backend {caption.backend_id} returned a sample without log-likelihoods")
        logliks.append(s.sequence_loglik)
        lengths.append(len(s.token_logliks) if s.token_logliks else len(s.text.split()))
    h = entropy_from_logliks(logliks, lengths if per_token else None)
    return EntropyEstimate(h, n, logliks, per_token)


@dataclass
class PromptedDifficulty:
    score: float
    raw_reply: str


def parse_difficulty(reply):
    """First number in ``reply``; it must lie in [0, 1]."""
    m = _NUMBER.search(reply)
    if m is None:
        raise MalformedResponseError(f"no number in reply {reply!r}", raw_reply=reply)
    value = float(m.group())
    if not 0.0 <= value <= 1.0:
        raise MalformedResponseError(f"first number {value} in reply is outside [0, 1]", raw_reply=reply)
    return PromptedDifficulty(value, reply)


def prompted_difficulty(image, caption):
    """Ask the VLM directly for a 0-1 difficulty rating (temperature 0)."""
    sample = caption.generate(image, DIFFICULTY_PROMPT, 0.0, 0)
    return parse_difficulty(sample.text)


def pixel_entropy(image):
    """Shannon entropy (bits) of the 256-bin grayscale histogram."""
    levels = np.clip(np.rint(to_gray(image) * 255.0), 0, 255).astype(np.int64)
    counts = np.bincount(levels.ravel(), minlength=256)
    p = counts[counts > 0] / counts.sum()
    return float(max(0.0, -(p * np.log2(p)).sum()))


def gradient_magnitude(image):
    """Forward-difference gradient magnitude; the last row/column difference is zero."""
    g = to_gray(image)
    gx = np.zeros_like(g)
    gy = np.zeros_like(g)
    gx[:, :-1] = g[:, 1:] - g[:, :-1]
    gy[:-1, :] = g[1:, :] - g[:-1, :]
    return np.hypot(gx, gy)


def edge_density(image, threshold=0.1):
    """Fraction of pixels whose gradient magnitude exceeds ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return float((gradient_magnitude(image) > threshold).mean())
