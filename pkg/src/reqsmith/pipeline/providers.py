"""LLM providers, prompt templates, and call transcripts."""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence

import requests

PLACEHOLDER = re.compile(r"⟨([a-z_]+)⟩")

DEFAULT_MAX_TOKENS = 16_384


class ProviderError(Exception):
    pass


class ScriptExhausted(ProviderError):
    def __init__(self, template_id: str, key: str, attempt: int):
        super().__init__(f"playbook has no response for {template_id!r} key={key!r} attempt={attempt}")
        self.template_id = template_id
        self.key = key
        self.attempt = attempt


@dataclass(frozen=True)
class Template:
    id: str
    system: str
    user: str
    digest: str

    def render(self, variables: Mapping[str, str]) -> tuple[str, str]:
        return _fill(self.system, variables, self.id), _fill(self.user, variables, self.id)


def _fill(text: str, variables: Mapping[str, str], tid: str) -> str:
    def sub(m: re.Match) -> str:
        name = m.group(1)
        if name not in variables:
            raise KeyError(f"template {tid!r} needs variable {name!r}")
        return str(variables[name])

    return PLACEHOLDER.sub(sub, text)


def parse_template(tid: str, raw: str) -> Template:
    section = None
    chunks: dict[str, list[str]] = {"system": [], "user": []}
    for line in raw.splitlines():
        if line.strip() in ("[system]", "[user]"):
            section = line.strip()[1:-1]
            continue
        if section is None:
            if line.strip():
                raise ValueError(f"template {tid!r}: text before the first section header")
            continue
        chunks[section].append(line)
    system = "\n".join(chunks["system"]).strip("\n")
    user = "\n".join(chunks["user"]).strip("\n")
    return Template(tid, system, user, hashlib.sha256(raw.encode("utf-8")).hexdigest()[:16])


class TemplateSet:
    """Prompt templates loaded from ``*.txt`` files with ``[system]``/``[user]`` sections."""

    def __init__(self, templates: Mapping[str, Template]):
        self._templates = dict(templates)

    @classmethod
    def load(cls, directory: Optional[Path] = None) -> "TemplateSet":
        if directory is None:
            root = resources.files("reqsmith") / "templates"
            files = {p.name: p.read_text(encoding="utf-8") for p in root.iterdir() if p.name.endswith(".txt")}
        else:
            files = {p.name: p.read_text(encoding="utf-8") for p in Path(directory).glob("*.txt")}
        return cls({name[:-4]: parse_template(name[:-4], raw) for name, raw in files.items()})

    def __getitem__(self, tid: str) -> Template:
        try:
            return self._templates[tid]
        except KeyError:
            raise KeyError(f"no template named {tid!r}") from None

    def render_suffix(self, tid: str, variables: Mapping[str, str]) -> str:
        return self[tid].render(variables)[1]


_default_templates: Optional[TemplateSet] = None


def default_templates() -> TemplateSet:
    global _default_templates
    if _default_templates is None:
        _default_templates = TemplateSet.load()
    return _default_templates


@dataclass(frozen=True)
class CompletionRequest:
    template_id: str
    variables: Mapping[str, str]
    temperature: float = 0.0
    max_output_tokens: int = DEFAULT_MAX_TOKENS
    key: str = ""
    suffix: str = ""


@dataclass(frozen=True)
class Completion:
    text: str
    attempt: int
    system: str
    user: str
    template_digest: str
    truncated: bool = False
    usage: Mapping[str, int] = field(default_factory=dict)


class Provider:
    """Base provider: renders the prompt, numbers the attempt, delegates generation.

    Calls are stateless: every request carries its full prompt.  The attempt
    index counts earlier calls with the same ``(template_id, key)``.
    """

    tag = "provider"

    def __init__(self, templates: Optional[TemplateSet] = None):
        self.templates = templates or default_templates()
        self._counts: dict[tuple[str, str], int] = {}
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> Completion:
        tpl = self.templates[request.template_id]
        system, user = tpl.render(request.variables)
        if request.suffix:
            user = f"{user}\n\n{request.suffix}"
        with self._lock:
            k = (request.template_id, request.key)
            attempt = self._counts.get(k, 0)
            self._counts[k] = attempt + 1
        text, truncated, usage = self._generate(request, system, user, attempt)
        return Completion(text, attempt, system, user, tpl.digest, truncated, usage)

    def _generate(self, request: CompletionRequest, system: str, user: str, attempt: int):
        raise NotImplementedError


@dataclass(frozen=True)
class PlaybookEntry:
    template_id: str
    response_text: str
    attempt: Optional[int] = None
    key: Optional[str] = None
    prompt_contains: Optional[str] = None
    truncated: bool = False

    def matches(self, request: CompletionRequest, prompt: str, attempt: int) -> bool:
        """An entry key also covers sub-keys: ``q1`` matches requests keyed ``q1/full_cegr``."""
        return (
            self.template_id == request.template_id
            and (self.key is None or self.key == request.key or request.key.startswith(self.key + "/"))
            and (self.attempt is None or self.attempt == attempt)
            and (self.prompt_contains is None or self.prompt_contains in prompt)
        )


class ScriptedProvider(Provider):
    """Deterministic provider answering from an ordered playbook; first matching entry wins."""

    tag = "scripted"

    def __init__(self, playbook: Sequence[PlaybookEntry], templates: Optional[TemplateSet] = None):
        super().__init__(templates)
        self.playbook = list(playbook)

    @classmethod
    def from_json(cls, data: Sequence[Mapping], templates: Optional[TemplateSet] = None) -> "ScriptedProvider":
        entries = [
            PlaybookEntry(
                template_id=d["template_id"],
                response_text=d["response_text"],
                attempt=d.get("attempt"),
                key=d.get("key"),
                prompt_contains=d.get("prompt_contains"),
                truncated=d.get("truncated", False),
            )
            for d in data
        ]
        return cls(entries, templates)

    @classmethod
    def load(cls, path, templates: Optional[TemplateSet] = None) -> "ScriptedProvider":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh), templates)

    @classmethod
    def from_transcript(cls, transcript: "Transcript", templates: Optional[TemplateSet] = None) -> "ScriptedProvider":
        return cls(
            [
                PlaybookEntry(r.template_id, r.response, attempt=r.attempt, key=r.key, truncated=r.truncated)
                for r in transcript.records
            ],
            templates,
        )

    def _generate(self, request, system, user, attempt):
        prompt = f"{system}\n\n{user}"
        for entry in self.playbook:
            if entry.matches(request, prompt, attempt):
                return entry.response_text, entry.truncated, {}
        raise ScriptExhausted(request.template_id, request.key, attempt)


ENV_ENDPOINT = "REQSMITH_LLM_ENDPOINT"
ENV_MODEL = "REQSMITH_LLM_MODEL"
ENV_KEY = "REQSMITH_LLM_KEY"


class HttpProvider(Provider):
    """JSON-over-HTTP chat completion: posts ``{model, system, user, temperature, max_tokens}``
    and expects ``{"text": ...}`` back (optionally ``"truncated"`` and ``"usage"``)."""

    tag = "http"

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: Optional[str] = None,
        timeout_s: float = 120.0,
        templates: Optional[TemplateSet] = None,
    ):
        super().__init__(templates)
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.timeout_s = timeout_s
        self.tag = f"http:{model}"

    @classmethod
    def from_env(cls, templates: Optional[TemplateSet] = None, **kw) -> "HttpProvider":
        endpoint = os.environ.get(ENV_ENDPOINT)
        model = os.environ.get(ENV_MODEL)
        if not endpoint or not model:
            raise ProviderError(f"set {ENV_ENDPOINT} and {ENV_MODEL} to use the http provider")
        return cls(endpoint, model, os.environ.get(ENV_KEY), templates=templates, **kw)

    def _generate(self, request, system, user, attempt):
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.model,
            "system": system,
            "user": user,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        try:
            resp = requests.post(self.endpoint, json=body, headers=headers, timeout=self.timeout_s)
            resp.raise_for_status()
            data = resp.json()
        except (requests.RequestException, ValueError) as exc:
            raise ProviderError(f"LLM request failed: {exc}") from exc
        if not isinstance(data, dict) or not isinstance(data.get("text"), str):
            raise ProviderError(f"LLM response lacks a 'text' field: {data!r}")
        truncated = bool(data.get("truncated")) or data.get("stop_reason") in ("length", "max_tokens")
        return data["text"], truncated, data.get("usage") or {}


@dataclass
class TranscriptRecord:
    template_id: str
    template_digest: str
    key: str
    attempt: int
    temperature: float
    system: str
    user: str
    response: str
    truncated: bool = False
    outcome: str = "pending"


class Transcript:
    """Append-only record of every provider call made by a pipeline run."""

    def __init__(self):
        self.records: list[TranscriptRecord] = []
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.records)

    def call(self, provider: Provider, request: CompletionRequest) -> tuple[Completion, TranscriptRecord]:
        c = provider.complete(request)
        rec = TranscriptRecord(
            request.template_id, c.template_digest, request.key, c.attempt,
            request.temperature, c.system, c.user, c.text, c.truncated,
        )
        with self._lock:
            self.records.append(rec)
        return c, rec

    def for_key(self, template_id: str, key: str) -> list[TranscriptRecord]:
        return [r for r in self.records if r.template_id == template_id and r.key == key]

    def to_json(self) -> list[dict]:
        return [asdict(r) for r in self.records]

    @classmethod
    def from_json(cls, data: Sequence[Mapping]) -> "Transcript":
        t = cls()
        t.records = [TranscriptRecord(**d) for d in data]
        return t
