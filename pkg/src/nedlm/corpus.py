"""Mention-annotated paragraphs, inventories, candidate tables, and synthesis.

File formats (all UTF-8):

* Paragraph file: one JSON record per line with fields ``doc_id``
  (string), ``tokens`` (string array), and ``mentions`` (array of
  ``{"start": int, "end": int, "entity": string}`` with 1-based
  inclusive token spans).
* Entity inventory: tab-separated ``entity_id<TAB>title<TAB>frequency``.
* Candidate table: tab-separated ``mention<TAB>entity_id<TAB>prior``,
  priors per mention summing to 1 before any cap is applied.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ParseError, ValidationError
from .rng import SeededRng

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"

PAD_CHAR_ID = 0
UNK_CHAR_ID = 1


@dataclass(frozen=True)
class Mention:
    """A gold-annotated span: 1-based inclusive token positions."""

    start: int
    end: int
    entity: str
    surface: str

    @classmethod
    def from_span(cls, tokens: list[str], start: int, end: int, entity: str) -> "Mention":
        return cls(start, end, entity, " ".join(tokens[start - 1 : end]))


@dataclass
class Paragraph:
    doc_id: str
    tokens: list[str]
    mentions: list[Mention] = field(default_factory=list)

    def validate(self) -> None:
        t = len(self.tokens)
        if t < 1:
            raise ValidationError(f"paragraph {self.doc_id!r} has no tokens")
        prev_end = 0
        for m in self.mentions:
            if not (1 <= m.start <= m.end <= t):
                raise ValidationError(
                    f"paragraph {self.doc_id!r}: mention span ({m.start},{m.end}) "
                    f"outside [1,{t}]"
                )
            if m.start <= prev_end:
                raise ValidationError(
                    f"paragraph {self.doc_id!r}: mention spans overlap or are unsorted"
                )
            prev_end = m.end


def normalize_mention(surface: str) -> str:
    """Lowercase and collapse whitespace; the key for priors and candidates."""
    return " ".join(surface.lower().split())


class EntityInventory:
    """Dense integer ids for entities plus title and link-frequency metadata."""

    def __init__(self):
        self.names: list[str] = []
        self.titles: list[str] = []
        self.frequencies: list[int] = []
        self._index: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.names)

    def add(self, name: str, title: str, frequency: int = 0) -> int:
        if not title:
            raise ValidationError(f"entity {name!r} has an empty title")
        if name in self._index:
            raise ValidationError(f"duplicate entity id {name!r}")
        if frequency < 0:
            raise ValidationError(f"entity {name!r} has negative frequency")
        eid = len(self.names)
        self.names.append(name)
        self.titles.append(title)
        self.frequencies.append(frequency)
        self._index[name] = eid
        return eid

    def id_of(self, name: str) -> int:
        if name not in self._index:
            raise ValidationError(f"unknown entity id {name!r}")
        return self._index[name]

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def title_tokens(self, eid: int) -> list[str]:
        return self.titles[eid].split()

    def recount_frequencies(self, paragraphs: list[Paragraph]) -> None:
        """Set each entity's frequency to its gold link count in ``paragraphs``."""
        counts = [0] * len(self.names)
        for p in paragraphs:
            for m in p.mentions:
                counts[self.id_of(m.entity)] += 1
        self.frequencies = counts


class Vocabulary:
    """Word ids with BOS/EOS/UNK sentinels; unseen words map to UNK."""

    def __init__(self, words: list[str]):
        self.words = words
        self._index = {w: i for i, w in enumerate(words)}
        self.bos_id = self._index[BOS]
        self.eos_id = self._index[EOS]
        self.unk_id = self._index[UNK]

    def __len__(self) -> int:
        return len(self.words)

    def id(self, word: str) -> int:
        return self._index.get(word, self.unk_id)

    @classmethod
    def build(cls, paragraphs: list[Paragraph], extra_tokens: list[str] = ()) -> "Vocabulary":
        words = [BOS, EOS, UNK]
        seen = set(words)
        for p in paragraphs:
            for tok in p.tokens:
                if tok not in seen:
                    seen.add(tok)
                    words.append(tok)
        for tok in extra_tokens:
            if tok not in seen:
                seen.add(tok)
                words.append(tok)
        return cls(words)


class CharAlphabet:
    """Character ids with a pad slot at 0 and an unknown slot at 1."""

    def __init__(self, chars: list[str]):
        self.chars = chars
        self._index = {c: i + 2 for i, c in enumerate(chars)}

    def __len__(self) -> int:
        return len(self.chars) + 2

    def encode(self, token: str, max_chars: int) -> list[int]:
        ids = [self._index.get(c, UNK_CHAR_ID) for c in token[:max_chars]]
        ids.extend([PAD_CHAR_ID] * (max_chars - len(ids)))
        return ids

    @classmethod
    def build(cls, paragraphs: list[Paragraph], extra_tokens: list[str] = ()) -> "CharAlphabet":
        chars: list[str] = []
        seen: set[str] = set()
        for source in ([BOS, EOS, UNK], (t for p in paragraphs for t in p.tokens), extra_tokens):
            for tok in source:
                for c in tok:
                    if c not in seen:
                        seen.add(c)
                        chars.append(c)
        return cls(chars)


class CandidateTable:
    """Normalized mention string to candidates with priors p(e|m).

    Lists are sorted by descending prior (ties by ascending entity id).
    ``cap`` is the per-mention candidate limit that was applied, if any.
    """

    def __init__(self, entries: dict[str, list[tuple[int, float]]], cap: int | None = None):
        self.entries = entries
        self.cap = cap

    def candidates(self, surface: str) -> list[tuple[int, float]]:
        return self.entries.get(normalize_mention(surface), [])

    def prior(self, surface: str, entity_id: int) -> float:
        for eid, p in self.candidates(surface):
            if eid == entity_id:
                return p
        return 0.0

    def capped(self, cap: int) -> "CandidateTable":
        if cap < 1:
            raise ParameterError(f"candidate cap must be positive, got {cap}")
        return CandidateTable(
            {m: lst[:cap] for m, lst in self.entries.items()}, cap=cap
        )


def build_priors(paragraphs: list[Paragraph], inventory: EntityInventory) -> CandidateTable:
    """p(e|m) = count(m links to e) / count(m linked to anything)."""
    counts: dict[str, dict[int, int]] = {}
    for p in paragraphs:
        for m in p.mentions:
            key = normalize_mention(m.surface)
            eid = inventory.id_of(m.entity)
            counts.setdefault(key, {})[eid] = counts.get(key, {}).get(eid, 0) + 1
    entries = {}
    for key, per_entity in counts.items():
        total = sum(per_entity.values())
        ranked = sorted(
            ((eid, n / total) for eid, n in per_entity.items()),
            key=lambda pair: (-pair[1], pair[0]),
        )
        entries[key] = ranked
    return CandidateTable(entries)


def candidate_recall(paragraphs: list[Paragraph], table: CandidateTable, inventory: EntityInventory) -> float:
    """Fraction of gold mentions whose entity appears in its candidate list."""
    total = 0
    hit = 0
    for p in paragraphs:
        for m in p.mentions:
            total += 1
            gold = inventory.id_of(m.entity)
            if any(eid == gold for eid, _ in table.candidates(m.surface)):
                hit += 1
    return hit / total if total else 0.0


def prior_argmax_baseline(paragraphs: list[Paragraph], table: CandidateTable, inventory: EntityInventory) -> float:
    """Accuracy of always picking the highest-prior candidate."""
    total = 0
    hit = 0
    for p in paragraphs:
        for m in p.mentions:
            total += 1
            cands = table.candidates(m.surface)
            if cands and cands[0][0] == inventory.id_of(m.entity):
                hit += 1
    return hit / total if total else 0.0


# ---------------------------------------------------------------------------
# File IO
# ---------------------------------------------------------------------------


def load_corpus(path) -> list[Paragraph]:
    paragraphs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                doc_id = rec["doc_id"]
                tokens = list(rec["tokens"])
                mentions = [
                    Mention.from_span(tokens, m["start"], m["end"], m["entity"])
                    for m in rec.get("mentions", [])
                ]
            except (json.JSONDecodeError, KeyError, TypeError, IndexError) as exc:
                raise ParseError(f"{path}:{lineno}: malformed paragraph record: {exc}") from exc
            paragraph = Paragraph(doc_id, tokens, mentions)
            try:
                paragraph.validate()
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
            paragraphs.append(paragraph)
    return paragraphs


def dump_corpus(paragraphs: list[Paragraph]) -> str:
    lines = []
    for p in paragraphs:
        rec = {
            "doc_id": p.doc_id,
            "tokens": p.tokens,
            "mentions": [
                {"start": m.start, "end": m.end, "entity": m.entity} for m in p.mentions
            ],
        }
        lines.append(json.dumps(rec, ensure_ascii=False))
    return "\n".join(lines) + ("\n" if lines else "")


def load_inventory(path) -> EntityInventory:
    inv = EntityInventory()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields")
            name, title, freq = parts
            try:
                inv.add(name, title, int(freq))
            except (ValueError, ValidationError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return inv


def dump_inventory(inv: EntityInventory) -> str:
    lines = [
        f"{name}\t{title}\t{freq}"
        for name, title, freq in zip(inv.names, inv.titles, inv.frequencies)
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def load_candidates(path, inventory: EntityInventory) -> CandidateTable:
    raw: dict[str, list[tuple[int, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields")
            mention, name, prior = parts
            try:
                eid = inventory.id_of(name)
                p = float(prior)
            except (ValueError, ValidationError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            if not 0.0 <= p <= 1.0:
                raise ParseError(f"{path}:{lineno}: prior {p} outside [0, 1]")
            raw.setdefault(mention, []).append((eid, p))
    entries = {
        m: sorted(lst, key=lambda pair: (-pair[1], pair[0])) for m, lst in raw.items()
    }
    return CandidateTable(entries)


def dump_candidates(table: CandidateTable, inventory: EntityInventory) -> str:
    lines = []
    for mention in sorted(table.entries):
        for eid, p in table.entries[mention]:
            lines.append(f"{mention}\t{inventory.names[eid]}\t{p!r}")
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------


@dataclass
class SynthSpec:
    """Shape of a generated corpus; ambiguity is candidates per mention string."""

    n_entities: int = 25
    n_paragraphs: int = 200
    ambiguity: int = 2
    vocab_size: int = 300
    seed: int = 13
    min_tokens: int = 9
    max_tokens: int = 13
    topic_words_per_entity: int = 6
    topic_token_rate: float = 0.7

    def validate(self) -> None:
        if self.n_entities < 1 or self.n_paragraphs < 1 or self.vocab_size < 1:
            raise ParameterError("synthetic corpus sizes must be positive")
        if self.ambiguity < 1:
            raise ParameterError("ambiguity degree must be at least 1")
        if self.min_tokens < 3 or self.max_tokens < self.min_tokens:
            raise ParameterError("token length range is invalid")


def synth_corpus(spec: SynthSpec) -> tuple[list[Paragraph], EntityInventory, Vocabulary]:
    """Generate a corpus where context, not the prior, identifies the entity.

    Entities are grouped so that ``ambiguity`` of them share one mention
    string; each entity draws its non-mention tokens from its own topic
    words, so the surrounding context carries the disambiguating signal.
    """
    spec.validate()
    rng = SeededRng(spec.seed)

    n_groups = (spec.n_entities + spec.ambiguity - 1) // spec.ambiguity
    groups = [
        list(range(g * spec.ambiguity, min((g + 1) * spec.ambiguity, spec.n_entities)))
        for g in range(n_groups)
    ]
    mention_strings = [f"name{g:03d}" for g in range(n_groups)]

    topic_words = [
        [f"t{e:03d}x{j}" for j in range(spec.topic_words_per_entity)]
        for e in range(spec.n_entities)
    ]
    n_common = max(
        20, spec.vocab_size - spec.n_entities * spec.topic_words_per_entity - n_groups
    )
    common_words = [f"w{i:04d}" for i in range(n_common)]

    inventory = EntityInventory()
    for e in range(spec.n_entities):
        g = e // spec.ambiguity
        inventory.add(f"E{e:03d}", f"{mention_strings[g]} {topic_words[e][0]}")

    # Gold choices per group: first cycle through every member so each one
    # is attested, then draw with a mild skew so priors are informative but
    # far from decisive.
    weights_by_size = {}
    for g, members in enumerate(groups):
        k = len(members)
        w = np.array([1.0 + 0.25 * (k - 1 - i) for i in range(k)])
        weights_by_size[g] = w / w.sum()

    paragraphs = []
    for idx in range(spec.n_paragraphs):
        g = idx % n_groups
        members = groups[g]
        cycle = idx // n_groups
        if cycle < len(members):
            gold = members[cycle]
        else:
            u = float(rng.derive("gold", idx).random())
            gold = members[int(np.searchsorted(np.cumsum(weights_by_size[g]), u))]
        length = int(rng.derive("len", idx).integers(spec.min_tokens, spec.max_tokens + 1))
        start = int(rng.derive("pos", idx).integers(1, length + 1))
        body_rng = rng.derive("body", idx)
        tokens = []
        for _ in range(length):
            if body_rng.random() < spec.topic_token_rate:
                words = topic_words[gold]
            else:
                words = common_words
            tokens.append(words[int(body_rng.integers(0, len(words)))])
        tokens[start - 1] = mention_strings[g]
        mention = Mention.from_span(tokens, start, start, inventory.names[gold])
        paragraphs.append(Paragraph(f"d{idx:05d}", tokens, [mention]))

    for p in paragraphs:
        p.validate()
    inventory.recount_frequencies(paragraphs)
    vocab = Vocabulary.build(paragraphs, extra_tokens=[w for t in topic_words for w in t])
    return paragraphs, inventory, vocab


def split(
    paragraphs: list[Paragraph], ratios: tuple[float, float, float], seed: int
) -> tuple[list[Paragraph], list[Paragraph], list[Paragraph]]:
    """Seeded document-level partition into (train, dev, test)."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ParameterError(f"split ratios must sum to 1, got {ratios}")
    doc_ids = []
    seen = set()
    for p in paragraphs:
        if p.doc_id not in seen:
            seen.add(p.doc_id)
            doc_ids.append(p.doc_id)
    order = SeededRng(seed).derive("split").permutation(len(doc_ids))
    shuffled = [doc_ids[i] for i in order]
    n = len(shuffled)
    b1 = int(np.floor(ratios[0] * n))
    b2 = int(np.floor((ratios[0] + ratios[1]) * n))
    assign = {}
    for i, d in enumerate(shuffled):
        assign[d] = 0 if i < b1 else (1 if i < b2 else 2)
    parts: tuple[list[Paragraph], ...] = ([], [], [])
    for p in paragraphs:
        parts[assign[p.doc_id]].append(p)
    return parts
