"""Append-only on-disk response cache and cache-backed backend wrappers."""

import hashlib
import json
import os
import tempfile
import threading
import time
from pathlib import Path

from ..imageio import image_digest
from .base import CaptionBackend, CaptionSample, EmbeddingBackend


def make_key(**parts):
    """Stable hex digest over keyword parts (order-independent)."""
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ResponseCache:
    """Key/value store with one JSON file per key, named by the hex key.

    Writes go through a temp file and an atomic rename, so an interrupted run
    never leaves a half-written record. Concurrent requests for the same
    missing key are collapsed into one computation.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._inflight = {}
        self.hits = 0
        self.misses = 0

    def _path(self, key):
        return self.directory / key[:2] / f"{key}.json"

    def get(self, key):
        path = self._path(key)
        try:
            record = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        return record["payload"]

    def put(self, key, payload):
        if not isinstance(payload, str):
            raise TypeError("payload must be a serialized string")
        path = self._path(key)
        if path.exists():
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        record = {"key": key, "created_at": time.time(), "payload": payload}
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(record, fh, ensure_ascii=False)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def __contains__(self, key):
        return self._path(key).exists()

    def get_or_compute(self, key, compute):
        """Return the cached payload for ``key``, computing it at most once."""
        payload = self.get(key)
        if payload is not None:
            with self._lock:
                self.hits += 1
            return payload
        with self._lock:
            waiter = self._inflight.get(key)
            owner = waiter is None
            if owner:
                waiter = self._inflight[key] = {"event": threading.Event(), "error": None}
        if not owner:
            waiter["event"].wait()
            if waiter["error"] is not None:
                raise waiter["error"]
            with self._lock:
                self.hits += 1
            return self.get(key)
        try:
            payload = compute()
            self.put(key, payload)
            with self._lock:
                self.misses += 1
            return payload
        except BaseException as exc:
            waiter["error"] = exc
            raise
        finally:
            with self._lock:
                del self._inflight[key]
            waiter["event"].set()


class CachedCaptionBackend(CaptionBackend):
    def __init__(self, inner, cache):
        self.inner = inner
        self.cache = cache
        self.backend_id = inner.backend_id
        self.supports_loglik = inner.supports_loglik
        self.default_temperature = inner.default_temperature

    def generate(self, image, prompt, temperature, sample_index):
        key = make_key(
            kind="caption",
            image=image_digest(image),
            prompt=prompt,
            backend=self.backend_id,
            temperature=float(temperature),
            sample=int(sample_index),
        )

        def compute():
            sample = self.inner.generate(image, prompt, temperature, sample_index)
            return json.dumps(sample.to_dict(), sort_keys=True)

        return CaptionSample.from_dict(json.loads(self.cache.get_or_compute(key, compute)))


class CachedEmbeddingBackend(EmbeddingBackend):
    def __init__(self, inner, cache):
        super().__init__()
        self.inner = inner
        self.cache = cache
        self.backend_id = inner.backend_id

    def _embed_batch(self, texts):
        keys = [make_key(kind="embedding", text=t, backend=self.backend_id) for t in texts]
        out = [None] * len(texts)
        missing = []
        for i, key in enumerate(keys):
            payload = self.cache.get(key)
            if payload is None:
                missing.append(i)
            else:
                out[i] = json.loads(payload)
                with self.cache._lock:
                    self.cache.hits += 1
        if missing:
            # one batched request for all misses; duplicates within the batch collapse
            uniq = list(dict.fromkeys(texts[i] for i in missing))
            vectors = dict(zip(uniq, self.inner.embed(uniq)))
            for i in missing:
                vec = [float(x) for x in vectors[texts[i]]]
                payload = json.dumps(vec)
                self.cache.get_or_compute(keys[i], lambda p=payload: p)
                out[i] = json.loads(self.cache.get(keys[i]))
        return out
