"""Caption and embedding providers."""

from .base import (
    DESCRIPTION_PROMPT,
    DIFFICULTY_PROMPT,
    CaptionBackend,
    CaptionSample,
    DescriptionSet,
    EmbeddingBackend,
    cosine,
)
from .cache import CachedCaptionBackend, CachedEmbeddingBackend, ResponseCache, make_key
from .remote import HttpClient, RemoteCaptionBackend, RemoteEmbeddingBackend
from .stub import StubCaptionBackend, StubEmbeddingBackend

__all__ = [
    "DESCRIPTION_PROMPT",
    "DIFFICULTY_PROMPT",
    "CaptionBackend",
    "CaptionSample",
    "DescriptionSet",
    "EmbeddingBackend",
    "cosine",
    "CachedCaptionBackend",
    "CachedEmbeddingBackend",
    "ResponseCache",
    "make_key",
    "HttpClient",
    "RemoteCaptionBackend",
    "RemoteEmbeddingBackend",
    "StubCaptionBackend",
    "StubEmbeddingBackend",
    "build_backends",
]


def build_backends(profile, cache_dir=None, transport=None):
    """Instantiate (caption, embedding) backends for a profile dict.

    ``profile["kind"]`` is ``"stub"`` or ``"remote"``. Remote profiles name a
    base URL, models and the environment variable holding the API key. When
    ``cache_dir`` is given both backends are wrapped in the response cache.
    """
    from ..errors import ConfigError

    kind = profile.get("kind", "stub")
    if kind == "stub":
        caption = StubCaptionBackend()
        if "temperature" in profile:
            caption.default_temperature = float(profile["temperature"])
        embedding = StubEmbeddingBackend(dim=int(profile.get("embedding_dim", 64)))
    elif kind == "remote":
        try:
            client = HttpClient(
                profile["base_url"],
                api_key_env=profile.get("api_key_env"),
                attempts=int(profile.get("attempts", 3)),
                backoff=float(profile.get("backoff", 1.0)),
                min_interval=float(profile.get("min_interval", 0.0)),
                transport=transport,
            )
            emb_client = client
            if profile.get("embedding_base_url"):
                emb_client = HttpClient(
                    profile["embedding_base_url"],
                    api_key_env=profile.get("embedding_api_key_env", profile.get("api_key_env")),
                    attempts=int(profile.get("attempts", 3)),
                    backoff=float(profile.get("backoff", 1.0)),
                    min_interval=float(profile.get("min_interval", 0.0)),
                    transport=transport,
                )
            name = profile.get("name", "remote")
            caption = RemoteCaptionBackend(
                client,
                profile["caption_model"],
                temperature=float(profile.get("temperature", 1.0)),
                logprobs=bool(profile.get("logprobs", False)),
                name=name,
            )
            embedding = RemoteEmbeddingBackend(emb_client, profile["embedding_model"], name=name)
        except KeyError as exc:
            raise ConfigError(f"remote profile is missing {exc}") from exc
    else:
        raise ConfigError(f"unknown backend kind {kind!r}")
    if cache_dir is not None:
        cache = ResponseCache(cache_dir)
        caption = CachedCaptionBackend(caption, cache)
        embedding = CachedEmbeddingBackend(embedding, cache)
    return caption, embedding
