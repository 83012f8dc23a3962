"""Deterministic offline backends.

The stub captioner is crudely content-aware: the image is split into a 3x3
layout, each region is tied to a word by its (blur-stable) mean luminance,
and a region's word is only "seen" when the region still carries fine
detail. Foveated renders therefore mention what lies near the fixation,
which gives offline runs non-trivial maps. Sampling perturbations and
synthetic token log-likelihoods are drawn from a hash of
(image, prompt, temperature, sample index).
"""

import hashlib
import re
import threading

import numpy as np
from scipy import ndimage

from ..imageio import image_digest, to_gray
from .base import DIFFICULTY_PROMPT, CaptionBackend, CaptionSample, EmbeddingBackend

OBJECTS = [
    "dog", "ball", "bicycle", "table", "child", "umbrella", "kite", "bench",
    "tree", "car", "window", "knife", "bag", "cake", "horse", "boat",
    "laptop", "phone", "crowd", "fence", "train", "bottle", "chair", "book",
    "clock", "sign", "cup",
]
ACTIONS = [
    "playing", "waiting", "eating", "talking", "walking", "reaching",
    "sitting", "working", "watching",
]
FILLERS = ["possibly", "apparently", "outdoors", "indoors", "together", "quietly"]
DETAIL_THRESHOLD = 0.02
_TOKEN = re.compile(r"[a-z0-9]+")


def _rng(*parts):
    h = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return np.random.default_rng(int.from_bytes(h[:8], "little"))


def visible_objects(image):
    """(word, detail) for each region that still carries fine detail, most detailed first."""
    gray = to_gray(image)
    highpass = np.abs(gray - ndimage.uniform_filter(gray, size=3, mode="mirror"))
    h, w = gray.shape
    ys = np.linspace(0, h, 4).astype(int)
    xs = np.linspace(0, w, 4).astype(int)
    found = []
    for ri in range(3):
        for ci in range(3):
            region = (slice(ys[ri], ys[ri + 1]), slice(xs[ci], xs[ci + 1]))
            detail = float(highpass[region].mean())
            if detail < DETAIL_THRESHOLD:
                continue
            lum_bin = min(int(gray[region].mean() * 6), 5)
            word = OBJECTS[((3 * ri + ci) * 6 + lum_bin) % len(OBJECTS)]
            found.append((word, detail))
    found.sort(key=lambda t: (-t[1], t[0]))
    return found


class StubCaptionBackend(CaptionBackend):
    backend_id = "stub-caption-v1"
    supports_loglik = True
    default_temperature = 0.7

    def __init__(self):
        self.calls = 0
        self._lock = threading.Lock()

    def generate(self, image, prompt, temperature, sample_index):
        with self._lock:
            self.calls += 1
        digest = image_digest(image)
        if prompt == DIFFICULTY_PROMPT:
            rng = _rng(digest, prompt)
            return CaptionSample(f"{rng.random():.3f}", token_logliks=[-0.01])
        # at temperature 0 every sample is the same draw
        idx = int(sample_index) if temperature > 0 else 0
        rng = _rng(digest, prompt, float(temperature), idx)
        words = []
        for w, _ in visible_objects(image)[:4]:
            if w not in words:
                words.append(w)
        if temperature > 0 and len(words) > 1:
            if rng.random() < min(0.5, 0.3 * temperature):
                words.pop(int(rng.integers(len(words))))
            if rng.random() < min(0.5, 0.3 * temperature):
                i, j = rng.choice(len(words), size=2, replace=False)
                words[i], words[j] = words[j], words[i]
        if words:
            action = ACTIONS[OBJECTS.index(words[0]) % len(ACTIONS)]
            text = f"Someone is {action} near the {words[0]}"
            for w in words[1:]:
                text += f" and the {w}"
        else:
            text = "A blurry scene with nothing clearly visible"
        if temperature > 0 and rng.random() < min(0.6, 0.4 * temperature):
            text += f", {FILLERS[int(rng.integers(len(FILLERS)))]}"
        text += "."
        n_tokens = len(text.split())
        spread = 0.2 + float(temperature)
        token_ll = [-(0.05 + spread * float(u)) for u in rng.random(n_tokens)]
        return CaptionSample(text, token_logliks=token_ll)


class StubEmbeddingBackend(EmbeddingBackend):
    """Signed feature hashing of lowercase word tokens plus a constant bias component."""

    def __init__(self, dim=64, bias=0.25):
        super().__init__()
        self.dim = dim
        self.bias = bias
        self.backend_id = f"stub-embed-v1-d{dim}"
        self.calls = 0
        self._lock = threading.Lock()

    def _vector(self, text):
        v = np.zeros(self.dim)
        v[0] = self.bias
        for tok in _TOKEN.findall(text.lower()):
            h = hashlib.sha256(tok.encode()).digest()
            idx = 1 + int.from_bytes(h[:4], "little") % (self.dim - 1)
            v[idx] += 1.0 if h[4] & 1 else -1.0
        return v

    def _embed_batch(self, texts):
        with self._lock:
            self.calls += 1
        return [self._vector(t) for t in texts]
