"""HTTP backends for OpenAI-compatible chat-completion and embedding endpoints."""

import base64
import logging
import math
import os
import threading
import time

import httpx

from ..errors import BackendError, ConfigError, MalformedResponseError
from ..imageio import png_bytes
from .base import CaptionBackend, CaptionSample, EmbeddingBackend

logger = logging.getLogger(__name__)

RETRYABLE_STATUS = {408, 409, 429, 500, 502, 503, 504}


class HttpClient:
    """JSON POST client with bounded retries, exponential backoff and a rate limit.

    ``transport`` lets tests substitute an instrumented :class:`httpx.MockTransport`.
    """

    def __init__(self, base_url, api_key_env=None, timeout=60.0, attempts=3, backoff=1.0,
                 min_interval=0.0, transport=None, sleep=time.sleep):
        headers = {}
        if api_key_env:
            key = os.environ.get(api_key_env)
            if not key:
                raise ConfigError(f"environment variable {api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        self.client = httpx.Client(base_url=base_url, headers=headers, timeout=timeout, transport=transport)
        self.attempts = attempts
        self.backoff = backoff
        self.min_interval = min_interval
        self.sleep = sleep
        self.requests = 0
        self._lock = threading.Lock()
        self._last = 0.0

    def _throttle(self):
        if self.min_interval <= 0:
            return
        with self._lock:
            wait = self._last + self.min_interval - time.monotonic()
            if wait > 0:
                self.sleep(wait)
            self._last = time.monotonic()

    def post_json(self, path, payload):
        last_exc = None
        for attempt in range(self.attempts):
            if attempt:
                self.sleep(self.backoff * 2 ** (attempt - 1))
            self._throttle()
            with self._lock:
                self.requests += 1
            try:
                resp = self.client.post(path, json=payload)
            except httpx.TransportError as exc:
                last_exc = exc
                logger.warning("POST %s failed (attempt %d): %s", path, attempt + 1, exc)
                continue
            if resp.status_code in RETRYABLE_STATUS:
                last_exc = httpx.HTTPStatusError(f"status {resp.status_code}", request=resp.request, response=resp)
                logger.warning("POST %s returned %d (attempt %d)", path, resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise BackendError(f"POST {path} returned {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise MalformedResponseError(f"non-JSON response from {path}", raw_reply=resp.text) from exc
        raise BackendError(f"POST {path} failed after {self.attempts} attempts", cause=last_exc)


class RemoteCaptionBackend(CaptionBackend):
    """Vision-language model behind a chat-completions endpoint.

    With ``logprobs`` enabled the per-token log-probabilities of the reply are
    requested and attached to each sample.
    """

    def __init__(self, client, model, temperature=1.0, logprobs=False, name="remote"):
        self.client = client
        self.model = model
        self.default_temperature = temperature
        self.supports_loglik = bool(logprobs)
        self.backend_id = f"{name}:{model}"

    def generate(self, image, prompt, temperature, sample_index):
        data_url = "data:image/png;base64," + base64.b64encode(png_bytes(image)).decode("ascii")
        payload = {
            "model": self.model,
            "temperature": float(temperature),
            "n": 1,
            "seed": int(sample_index),
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": prompt},
                    {"type": "image_url", "image_url": {"url": data_url}},
                ],
            }],
        }
        if self.supports_loglik:
            payload["logprobs"] = True
        reply = self.client.post_json("/chat/completions", payload)
        try:
            choice = reply["choices"][0]
            text = (choice["message"]["content"] or "").strip()
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError("unexpected chat-completion shape", raw_reply=reply) from exc
        if not text:
            raise MalformedResponseError("empty caption", raw_reply=reply)
        token_ll = None
        if self.supports_loglik:
            try:
                token_ll = [float(t["logprob"]) for t in choice["logprobs"]["content"]]
            except (KeyError, TypeError) as exc:
                raise MalformedResponseError("logprobs requested but missing", raw_reply=reply) from exc
            token_ll = [min(0.0, t) for t in token_ll if math.isfinite(t)]
        return CaptionSample(text, token_logliks=token_ll)


class RemoteEmbeddingBackend(EmbeddingBackend):
    def __init__(self, client, model, name="remote"):
        super().__init__()
        self.client = client
        self.model = model
        self.backend_id = f"{name}:{model}"

    def _embed_batch(self, texts):
        reply = self.client.post_json("/embeddings", {"model": self.model, "input": list(texts)})
        try:
            rows = sorted(reply["data"], key=lambda d: d["index"])
            return [[float(x) for x in row["embedding"]] for row in rows]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponseError("unexpected embedding response shape", raw_reply=reply) from exc
