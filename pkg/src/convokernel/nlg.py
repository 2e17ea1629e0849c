"""Template rendering and speech-markup generation.

A keyed template store with shuffle-bag surface selection (no surface repeats
until all have been used, and never the same surface twice in a row), slot
substitution, per-template metadata, and the SSML post-processor that
escapes reserved characters, inserts sentence pauses, optionally prepends a
spoken filler, and applies per-template speaking-rate overrides.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from fnmatch import fnmatch
from string import Formatter

from .errors import TemplateError

FILLER_BANK = ("hmm,", "well,", "so,")

_FORMATTER = Formatter()


def _slot_names(surface: str) -> frozenset[str]:
    try:
        return frozenset(
            name for _, name, _, _ in _FORMATTER.parse(surface) if name is not None
        )
    except ValueError as exc:
        raise TemplateError(f"malformed placeholder in surface {surface!r}: {exc}") from exc


@dataclass
class Template:
    key: str
    surfaces: list[str]
    metadata: dict

    def __post_init__(self):
        if not self.surfaces:
            raise TemplateError(f"template {self.key!r} has no surfaces")
        slot_sets = {_slot_names(s) for s in self.surfaces}
        if len(slot_sets) > 1:
            raise TemplateError(
                f"template {self.key!r}: surfaces disagree on slots {sorted(map(sorted, slot_sets))}"
            )
        self.slots = next(iter(slot_sets))


class ShuffleBag:
    """Draw-without-replacement over surface indices, refilled on exhaustion.

    The first draw after a refill never repeats the previous draw when the
    bag holds two or more surfaces, so no surface ever appears twice in a row.
    """

    def __init__(self, size: int, remaining: list[int] | None = None, last_drawn: int | None = None):
        if size < 1:
            raise ValueError("bag size must be >= 1")
        self.size = size
        self.remaining = list(remaining) if remaining is not None else list(range(size))
        self.last_drawn = last_drawn

    def draw(self, rng: random.Random) -> int:
        refilled = False
        if not self.remaining:
            self.remaining = list(range(self.size))
            refilled = True
        pool = self.remaining
        if refilled and self.size >= 2 and self.last_drawn in pool:
            pool = [i for i in pool if i != self.last_drawn]
        choice = pool[rng.randrange(len(pool))]
        self.remaining.remove(choice)
        self.last_drawn = choice
        return choice

    def to_state(self) -> dict:
        return {"size": self.size, "remaining": list(self.remaining), "last": self.last_drawn}

    @classmethod
    def from_state(cls, state: dict) -> "ShuffleBag":
        return cls(state["size"], state["remaining"], state["last"])


class BagSet:
    """Per-conversation shuffle-bag states, keyed by template key."""

    def __init__(self, states: dict[str, dict] | None = None):
        self._states: dict[str, dict] = dict(states or {})

    def bag_for(self, key: str, size: int) -> ShuffleBag:
        state = self._states.get(key)
        if state and state["size"] == size:
            return ShuffleBag.from_state(state)
        return ShuffleBag(size)

    def store(self, key: str, bag: ShuffleBag) -> None:
        self._states[key] = bag.to_state()

    def to_state(self) -> dict[str, dict]:
        return dict(self._states)


class TemplateStore:
    """All templates merged under unique keys; duplicates are authoring bugs."""

    def __init__(self):
        self._templates: dict[str, Template] = {}

    def add_document(self, doc: dict, source: str = "") -> None:
        for key, body in doc.items():
            if key == "version":
                continue
            if key in self._templates:
                raise TemplateError(f"duplicate template key {key!r} (from {source or 'merge'})")
            self._templates[key] = Template(
                key=key,
                surfaces=list(body["surfaces"]),
                metadata=dict(body.get("metadata", {})),
            )

    def __contains__(self, key: str) -> bool:
        return key in self._templates

    def __len__(self) -> int:
        return len(self._templates)

    def keys(self):
        return self._templates.keys()

    def template(self, key: str) -> Template:
        tpl = self._templates.get(key)
        if tpl is None:
            raise TemplateError(f"unknown template key {key!r}")
        return tpl

    def surface_count(self, key: str) -> int:
        return len(self.template(key).surfaces)

    def render(
        self,
        key: str,
        slots: dict | None = None,
        bags: BagSet | None = None,
        rng: random.Random | None = None,
    ) -> str:
        """Draw one surface for `key` and substitute its slots.

        Without a bag set / rng the first surface is used, which keeps
        single-surface templates and golden-value tests deterministic.
        """
        tpl = self.template(key)
        slots = slots or {}
        missing = tpl.slots - set(slots)
        if missing:
            raise TemplateError(f"template {key!r} missing slot(s): {sorted(missing)}")
        if bags is not None and rng is not None and len(tpl.surfaces) > 1:
            bag = bags.bag_for(key, len(tpl.surfaces))
            idx = bag.draw(rng)
            bags.store(key, bag)
        else:
            idx = 0
        surface = tpl.surfaces[idx]
        if tpl.slots:
            return surface.format(**{k: slots[k] for k in tpl.slots})
        return surface

    def template_metadata(self, key: str) -> dict:
        return dict(self.template(key).metadata)


# ------------------------------------------------------------------------ SSML

@dataclass
class ProsodyConfig:
    pause_ms_sentence: int = 300
    filler_probability: float = 0.1
    rate_overrides: dict[str, str] = field(default_factory=dict)


@dataclass
class SsmlResult:
    ssml: str
    fillers: list[str]


_SENTENCE_BOUNDARY = re.compile(r"[.!?]+\s+")
_TAG = re.compile(r"<[^>]*>")


def escape_text(text: str) -> str:
    return (
        text.replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
        .replace('"', "&quot;")
        .replace("'", "&apos;")
    )


def unescape_text(text: str) -> str:
    return (
        text.replace("&apos;", "'")
        .replace("&quot;", '"')
        .replace("&gt;", ">")
        .replace("&lt;", "<")
        .replace("&amp;", "&")
    )


def strip_ssml(ssml: str) -> str:
    """Markup-free text of an SSML document (inverse of escaping)."""
    return unescape_text(_TAG.sub("", ssml))


def ssml_postprocess(
    text: str,
    config: ProsodyConfig | None = None,
    rng: random.Random | None = None,
    template_key: str = "",
) -> SsmlResult:
    """Wrap plain text in a speak envelope with pauses, fillers, and rate."""
    config = config or ProsodyConfig()
    fillers: list[str] = []
    if rng is not None and config.filler_probability > 0 and text.strip():
        if rng.random() < config.filler_probability:
            fillers.append(FILLER_BANK[rng.randrange(len(FILLER_BANK))])

    pieces: list[str] = []
    pos = 0
    for match in _SENTENCE_BOUNDARY.finditer(text):
        pieces.append(escape_text(text[pos : match.end()]))
        pieces.append(f'<break time="{config.pause_ms_sentence}ms"/>')
        pos = match.end()
    pieces.append(escape_text(text[pos:]))
    body = "".join(pieces)

    if fillers:
        body = escape_text(fillers[0] + " ") + body

    rate = None
    if template_key:
        for pattern, value in config.rate_overrides.items():
            if fnmatch(template_key, pattern):
                rate = value
                break
    if rate:
        body = f'<prosody rate="{rate}">{body}</prosody>'

    return SsmlResult(ssml=f"<speak>{body}</speak>", fillers=fillers)
