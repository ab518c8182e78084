"""Catalogue of ensemble members and per-language routing."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable

import yaml

from .dataset import SEEN_LANGUAGES

MULTILINGUAL_LR = 8e-6
LANGUAGE_SPECIFIC_LR = 6e-6


class ModelKind(str, Enum):
    MULTILINGUAL = "multilingual"
    LANGUAGE_SPECIFIC = "language_specific"


class Mode(str, Enum):
    MULTILINGUAL = "multilingual"
    ROUTED = "routed"
    AUGMENTED = "augmented"


class RegistryError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    id: str
    kind: ModelKind
    artifact_id: str
    language: str | None = None
    learning_rate: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if not self.id:
            raise RegistryError("model spec needs an id")
        if not self.artifact_id:
            raise RegistryError(f"{self.id}: missing artifact_id")
        if (self.kind is ModelKind.LANGUAGE_SPECIFIC) != bool(self.language):
            raise RegistryError(f"{self.id}: language is required iff kind is language_specific")
        if self.language:
            object.__setattr__(self, "language", self.language.lower())
        if self.learning_rate is None:
            lr = MULTILINGUAL_LR if self.kind is ModelKind.MULTILINGUAL else LANGUAGE_SPECIFIC_LR
            object.__setattr__(self, "learning_rate", lr)
        elif not self.learning_rate > 0:
            raise RegistryError(f"{self.id}: learning_rate must be positive")

    @property
    def is_specialist(self) -> bool:
        return self.kind is ModelKind.LANGUAGE_SPECIFIC

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "language": self.language,
            "artifact_id": self.artifact_id,
            "learning_rate": self.learning_rate,
        }


@dataclass(frozen=True)
class Registry:
    members: tuple[ModelSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        seen_ids = set()
        specialist_langs = set()
        for m in self.members:
            if m.id in seen_ids:
                raise RegistryError(f"duplicate model id {m.id!r}")
            seen_ids.add(m.id)
            if m.is_specialist:
                if m.language in specialist_langs:
                    raise RegistryError(f"more than one language-specific model for {m.language!r}")
                specialist_langs.add(m.language)
        if not self.multilingual:
            raise RegistryError("registry needs at least one multilingual member")

    @property
    def multilingual(self) -> list[ModelSpec]:
        return [m for m in self.members if not m.is_specialist]

    @property
    def specialists(self) -> dict[str, ModelSpec]:
        return {m.language: m for m in self.members if m.is_specialist}

    def get(self, spec_id: str) -> ModelSpec:
        for m in self.members:
            if m.id == spec_id:
                return m
        raise KeyError(spec_id)

    def to_dict(self) -> dict:
        return {"members": [m.to_dict() for m in self.members]}

    @classmethod
    def from_records(cls, records: Iterable[dict]) -> "Registry":
        members = []
        for i, rec in enumerate(records):
            if not isinstance(rec, dict):
                raise RegistryError(f"member #{i} is not a mapping")
            unknown = set(rec) - {"id", "kind", "language", "artifact_id", "learning_rate"}
            if unknown:
                raise RegistryError(f"member #{i}: unknown keys {sorted(unknown)}")
            try:
                lr = rec.get("learning_rate")
                members.append(
                    ModelSpec(
                        id=rec.get("id", ""),
                        kind=rec.get("kind", ""),
                        artifact_id=rec.get("artifact_id", ""),
                        language=rec.get("language"),
                        learning_rate=None if lr is None else float(lr),
                    )
                )
            except ValueError as exc:
                raise RegistryError(f"member #{i}: {exc}") from None
        return cls(tuple(members))


def load_registry(path: str | Path | None = None) -> Registry:
    """Load a registry config (JSON or YAML). ``None`` loads the bundled default."""
    if path is None:
        text = resources.files("intimacy").joinpath("data/default_registry.json").read_text(encoding="utf-8")
        data = json.loads(text)
    else:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"registry config not found: {path}")
        text = path.read_text(encoding="utf-8")
        data = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
    if isinstance(data, dict):
        data = data.get("members")
    if not isinstance(data, list):
        raise RegistryError("registry config must contain a list of members")
    return Registry.from_records(data)


def default_registry() -> Registry:
    return load_registry(None)


def resolve(
    language: str,
    mode: Mode | str,
    registry: Registry,
    *,
    seen_languages: Iterable[str] = SEEN_LANGUAGES,
    augmented_seen_mode: Mode | str = Mode.MULTILINGUAL,
) -> list[ModelSpec]:
    """Ordered members to query for one example.

    Multilingual members come first in registry order; a specialist, when
    routed in, is always last. In augmented mode seen languages follow
    ``augmented_seen_mode`` and unseen ones are routed as English, since
    their text is translated before scoring.
    """
    mode = Mode(mode)
    language = language.lower()
    if mode is Mode.AUGMENTED:
        if language in set(seen_languages):
            inner = Mode(augmented_seen_mode)
            if inner is Mode.AUGMENTED:
                raise ValueError("augmented_seen_mode must be multilingual or routed")
            return resolve(language, inner, registry)
        return resolve("english", Mode.ROUTED, registry)

    members = registry.multilingual
    if mode is Mode.ROUTED:
        specialist = registry.specialists.get(language)
        if specialist is not None:
            members = members + [specialist]
    return members
