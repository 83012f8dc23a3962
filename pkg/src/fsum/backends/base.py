import hashlib
import math
from dataclasses import dataclass, field, asdict
from typing import List, Optional

import numpy as np

from ..errors import ConfigError, DegenerateInputError, ShapeError

DESCRIPTION_PROMPT = (
    "Make your best guess of what might be happening in this scene in one sentence. "
    "Avoid mentioning objects that do not aid in understanding the context of the scene."
)

DIFFICULTY_PROMPT = (
    "Please rate how difficult it would be for a human to describe this scene on a scale "
    "from 0.000 to 1.000, where 0.000 is very easy and 1.000 is very difficult. "
    "Respond with only a number between 0.000 and 1.000."
)


@dataclass
class CaptionSample:
    text: str
    sequence_loglik: Optional[float] = None
    token_logliks: Optional[List[float]] = None

    def __post_init__(self):
        if self.token_logliks is not None:
            total = math.fsum(self.token_logliks)
            if self.sequence_loglik is None:
                self.sequence_loglik = total
            elif abs(total - self.sequence_loglik) > 1e-6:
                raise ValueError("token log-likelihoods do not sum to sequence_loglik")
        if self.sequence_loglik is not None and self.sequence_loglik > 0:
            raise ValueError("sequence_loglik must be <= 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(d["text"], d.get("sequence_loglik"), d.get("token_logliks"))


@dataclass
class DescriptionSet:
    samples: List[CaptionSample]
    prompt_id: str
    temperature: float
    n_samples: int = field(default=0)

    def __post_init__(self):
        if not self.n_samples:
            self.n_samples = len(self.samples)
        if self.n_samples < 1 or len(self.samples) != self.n_samples:
            raise ShapeError(f"expected {self.n_samples} samples, got {len(self.samples)}")

    @property
    def texts(self):
        return [s.text for s in self.samples]


def prompt_id(prompt):
    if prompt == DESCRIPTION_PROMPT:
        return "describe"
    if prompt == DIFFICULTY_PROMPT:
        return "difficulty"
    return "custom-" + hashlib.sha256(prompt.encode()).hexdigest()[:12]


class CaptionBackend:
    """Produces text for an (image, prompt) pair.

    Subclasses implement :meth:`generate`; ``describe`` draws ``n`` samples.
    """

    backend_id = "abstract"
    supports_loglik = False
    default_temperature = 1.0

    def generate(self, image, prompt, temperature, sample_index):
        raise NotImplementedError

    def describe(self, image, prompt=DESCRIPTION_PROMPT, n=5, temperature=None, start=0):
        """``n`` samples with indices ``start .. start + n - 1`` (the index seeds each draw)."""
        if n < 1:
            raise ValueError("n must be >= 1")
        t = self.default_temperature if temperature is None else float(temperature)
        samples = [self.generate(image, prompt, t, start + i) for i in range(n)]
        return DescriptionSet(samples=samples, prompt_id=prompt_id(prompt), temperature=t, n_samples=n)


class EmbeddingBackend:
    backend_id = "abstract"

    def __init__(self):
        self._dim = None

    def _embed_batch(self, texts):
        raise NotImplementedError

    def _check_dims(self, vectors):
        for v in vectors:
            if self._dim is None:
                self._dim = len(v)
            elif len(v) != self._dim:
                raise ConfigError(f"embedding dim changed within a run: {self._dim} -> {len(v)}")

    def embed(self, texts):
        texts = list(texts)
        if not texts or any(not t for t in texts):
            raise ValueError("embed() needs a nonempty list of nonempty texts")
        vectors = [np.asarray(v, dtype=np.float64) for v in self._embed_batch(texts)]
        if len(vectors) != len(texts):
            raise ShapeError(f"backend returned {len(vectors)} vectors for {len(texts)} texts")
        self._check_dims(vectors)
        return vectors


def cosine(u, v):
    """Cosine similarity, clipped to [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ShapeError(f"dimension mismatch: {u.shape} vs {v.shape}")
    uu = float(np.dot(u, u))
    vv = float(np.dot(v, v))
    if uu == 0 or vv == 0 or not (np.isfinite(uu) and np.isfinite(vv)):
        raise DegenerateInputError("cosine of a zero-norm vector is undefined")
    # sqrt(|u|^2 |v|^2) rather than |u| |v| keeps cos(u, u) == 1.0 exactly
    return float(np.clip(np.dot(u, v) / np.sqrt(uu * vv), -1.0, 1.0))
