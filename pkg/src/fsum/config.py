"""Run configuration (TOML) and dataset manifests (JSON)."""

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .errors import ConfigError, DataError
from .foveation import FoveationParams
from .fsum_map import GRID_TARGET, MapSettings

BUILTIN_PROFILES = {
    "stub": {"kind": "stub", "temperature": 0.7},
    "closed": {
        "kind": "remote",
        "name": "closed",
        "base_url": "https://api.openai.com/v1",
        "api_key_env": "OPENAI_API_KEY",
        "caption_model": "gpt-4o",
        "temperature": 1.0,
        "logprobs": False,
        "embedding_base_url": "https://generativelanguage.googleapis.com/v1beta/openai",
        "embedding_api_key_env": "GEMINI_API_KEY",
        "embedding_model": "embedding-001",
    },
    "open": {
        "kind": "remote",
        "name": "open",
        "base_url": "http://localhost:8000/v1",
        "caption_model": "Ovis2-8B",
        "temperature": 0.7,
        "logprobs": True,
        "embedding_model": "stella_en_400M_v5",
    },
}

DEFAULTS = {
    "seed": 0,
    "profile": "stub",
    "cache_dir": ".fsum-cache",
    "concurrency": 4,
    "sampling": {"n_samples": 5, "entropy_samples": 10},
    "grid": {"target": GRID_TARGET},
    "scoring": {"R": 10, "closed_bins": False},
    "foveation": {"pyramid_levels": 6, "sigma_base": 0.248, "k": 3.0, "alpha": 2.5},
    "render": {"colormap": "viridis", "enabled": True},
    "baselines": {"metrics": ["pixel-entropy", "edge-density", "entropy", "prompted"], "edge_threshold": 0.1},
    "analysis": {"n_boot": 10_000, "validity_threshold": 0.75, "bootstrap_scheme": "images",
                 "reference_metric": "fsum"},
    "profiles": {},
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RunConfig:
    data: dict

    @classmethod
    def load(cls, path=None, **overrides):
        data = DEFAULTS
        if path is not None:
            try:
                with open(path, "rb") as fh:
                    data = _merge(data, tomllib.load(fh))
            except FileNotFoundError as exc:
                raise ConfigError(f"config file not found: {path}") from exc
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        data = _merge(data, {k: v for k, v in overrides.items() if v is not None})
        cfg = cls(data)
        cfg.validate()
        return cfg

    def validate(self):
        if self.profile_name not in self.profiles:
            raise ConfigError(f"profile {self.profile_name!r} is not defined (known: {sorted(self.profiles)})")
        if "seed" not in self.data:
            raise ConfigError("seed is required")
        if self.n_samples < 1:
            raise ConfigError("sampling.n_samples must be >= 1")
        if self.R < 1:
            raise ConfigError("scoring.R must be >= 1")
        if self.data["analysis"]["bootstrap_scheme"] not in ("images", "participants"):
            raise ConfigError("analysis.bootstrap_scheme must be 'images' or 'participants'")
        try:
            self.foveation
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad [foveation] section: {exc}") from exc

    @property
    def profiles(self):
        return _merge(BUILTIN_PROFILES, self.data.get("profiles", {}))

    @property
    def profile_name(self):
        return self.data["profile"]

    @property
    def profile(self):
        return self.profiles[self.profile_name]

    @property
    def seed(self):
        return int(self.data["seed"])

    @property
    def n_samples(self):
        return int(self.data["sampling"]["n_samples"])

    @property
    def temperature(self):
        t = self.data["sampling"].get("temperature")
        return None if t is None else float(t)

    @property
    def R(self):
        return int(self.data["scoring"]["R"])

    @property
    def closed_bins(self):
        return bool(self.data["scoring"]["closed_bins"])

    @property
    def cache_dir(self):
        return Path(self.data["cache_dir"])

    @property
    def concurrency(self):
        return max(1, int(self.data["concurrency"]))

    @property
    def foveation(self):
        return FoveationParams.from_dict(self.data["foveation"])

    @property
    def map_settings(self):
        return MapSettings(
            n_samples=self.n_samples,
            temperature=self.temperature,
            grid_target=int(self.data["grid"]["target"]),
            foveation=self.foveation,
            workers=self.concurrency,
        )

    @property
    def analysis(self):
        return self.data["analysis"]

    def hash(self):
        """Digest of everything that affects outputs (the cache location does not)."""
        relevant = {k: v for k, v in self.data.items() if k not in ("cache_dir", "concurrency")}
        relevant["profile_resolved"] = self.profile
        blob = json.dumps(relevant, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def provenance(self):
        return {"config_hash": self.hash(), "code_version": __version__}


@dataclass
class ManifestEntry:
    image_id: str
    path: Path
    human_references: List[str] = field(default_factory=list)


@dataclass
class Manifest:
    dataset_id: str
    entries: List[ManifestEntry]
    created_at: Optional[str] = None

    def __post_init__(self):
        ids = [e.image_id for e in self.entries]
        dup = sorted({i for i in ids if ids.count(i) > 1})
        if dup:
            raise DataError(f"duplicate image ids in manifest: {dup}")
        for e in self.entries:
            if len(e.human_references) not in (0, 5):
                raise DataError(f"{e.image_id}: expected 0 or 5 human references, got {len(e.human_references)}")

    @classmethod
    def load(cls, path, strict=False):
        """Read a JSON manifest; relative image paths resolve against its directory.

        With ``strict`` every image path must exist.
        """
        path = Path(path)
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise DataError(f"manifest not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: {exc}") from exc
        entries = []
        for e in d.get("entries", []):
            p = Path(e["path"])
            if not p.is_absolute():
                p = path.parent / p
            entries.append(ManifestEntry(str(e["image_id"]), p, list(e.get("human_references") or [])))
        m = cls(str(d["dataset_id"]), entries, d.get("created_at"))
        if strict:
            missing = [str(e.path) for e in m.entries if not e.path.exists()]
            if missing:
                raise DataError(f"manifest paths do not exist: {missing}")
        return m

    def save(self, path):
        path = Path(path)
        base = path.parent.resolve()
        entries = []
        for e in self.entries:
            p = Path(e.path).resolve()
            try:
                p = p.relative_to(base)
            except ValueError:
                pass
            d = {"image_id": e.image_id, "path": str(p)}
            if e.human_references:
                d["human_references"] = e.human_references
            entries.append(d)
        doc = {"dataset_id": self.dataset_id, "created_at": self.created_at, "entries": entries}
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        return path

    @property
    def references(self):
        return {e.image_id: e.human_references for e in self.entries if e.human_references}
