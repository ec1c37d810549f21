"""Dialogue corpus ingestion: parsing, tokenization, vocabularies, statistics.

Input files are assumed pre-tokenized; tokenization here is a whitespace
split. Lowercasing is on by default (pretrained vector releases used with
this toolkit are uncased); the turn-structure tags ``__eou__``/``__eot__``
are kept verbatim so they stay distinct vocabulary items.
"""

from __future__ import annotations

import csv
from collections import Counter
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass

TAG_EOU = "__eou__"
TAG_EOT = "__eot__"
_TAGS = (TAG_EOU, TAG_EOT)

PAIR_FORMATS = ("csv-triple", "tsv-triple")

DEFAULT_MAX_CONTEXT = 160
DEFAULT_MAX_RESPONSE = 40


class CorpusFormatError(ValueError):
    """A record in a corpus file does not match the expected layout."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


@dataclass(frozen=True)
class DialogueExample:
    """A labeled (context, response) pair of whitespace-free tokens."""

    context: tuple[str, ...]
    response: tuple[str, ...]
    label: int

    def __post_init__(self):
        if not self.context or not self.response:
            raise ValueError("context and response must each have at least one token")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")


@dataclass(frozen=True)
class Candidate:
    response: tuple[str, ...]
    label: int


@dataclass(frozen=True)
class RankingGroup:
    """A context with its ordered candidate responses."""

    context: tuple[str, ...]
    candidates: tuple[Candidate, ...]

    def __post_init__(self):
        if len(self.candidates) < 2:
            raise ValueError("a ranking group needs at least 2 candidates")

    @property
    def labels(self) -> tuple[int, ...]:
        return tuple(c.label for c in self.candidates)


@dataclass
class CorpusStats:
    n_positive_pairs: int
    n_negative_pairs: int
    n_contexts: int
    median_context_tokens: int
    median_response_tokens: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def tokenize(text: str, lowercase: bool = True, strip_tags: bool = False) -> list[str]:
    """Split on whitespace runs; optionally lowercase and/or drop the tag tokens.

    The literal tags are preserved verbatim under lowercasing and removed
    entirely when ``strip_tags`` is set.
    """
    tokens = text.split()
    if lowercase:
        tokens = [t if t in _TAGS else t.lower() for t in tokens]
    if strip_tags:
        tokens = [t for t in tokens if t not in _TAGS]
    return tokens


def truncate(
    example: DialogueExample,
    max_context: int = DEFAULT_MAX_CONTEXT,
    max_response: int = DEFAULT_MAX_RESPONSE,
) -> DialogueExample:
    """Keep the last `max_context` context tokens (most recent turns) and the
    first `max_response` response tokens."""
    if max_context < 1 or max_response < 1:
        raise ValueError("truncation lengths must be >= 1")
    context = example.context[-max_context:]
    response = example.response[:max_response]
    if context == example.context and response == example.response:
        return example
    return DialogueExample(context, response, example.label)


def _reader(fh, fmt: str):
    if fmt not in PAIR_FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {PAIR_FORMATS}")
    return csv.reader(fh, delimiter="," if fmt == "csv-triple" else "\t")


def parse_pair_file(
    path,
    fmt: str = "csv-triple",
    has_header: bool = False,
    lowercase: bool = True,
    strip_tags: bool = False,
) -> Iterator[DialogueExample]:
    """Stream labeled (context, response, label) triples from a CSV/TSV file.

    Each record must have exactly three fields with the third being "0" or
    "1"; quoting follows standard CSV rules. Raises CorpusFormatError with
    the offending line number on malformed records.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = _reader(fh, fmt)
        for i, row in enumerate(reader):
            if has_header and i == 0:
                continue
            line_no = reader.line_num
            if len(row) != 3:
                raise CorpusFormatError(path, line_no, f"expected 3 fields, got {len(row)}")
            label = row[2].strip()
            if label not in ("0", "1"):
                raise CorpusFormatError(path, line_no, f"label must be '0' or '1', got {row[2]!r}")
            context = tokenize(row[0], lowercase, strip_tags)
            response = tokenize(row[1], lowercase, strip_tags)
            if not context or not response:
                raise CorpusFormatError(path, line_no, "empty context or response after tokenization")
            yield DialogueExample(tuple(context), tuple(response), int(label))


def serialize_pair_file(examples: Iterable[DialogueExample], path, fmt: str = "csv-triple") -> None:
    """Write examples back out as triples, tokens joined by single spaces."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="," if fmt == "csv-triple" else "\t")
        for ex in examples:
            writer.writerow([" ".join(ex.context), " ".join(ex.response), str(ex.label)])


def parse_ranking_file(
    path,
    mode: str = "line",
    fmt: str = "csv",
    n_candidates: int = 10,
    has_header: bool = False,
    lowercase: bool = True,
    strip_tags: bool = False,
) -> Iterator[RankingGroup]:
    """Stream ranking groups from a candidate file.

    mode="line": each record is (context, ground-truth response, distractors...),
    the ground truth labeled 1 and every distractor 0.
    mode="triples": consecutive (context, response, label) records form groups
    of exactly `n_candidates` sharing one context; a context change inside a
    block or a trailing partial block is an error.
    """
    if mode not in ("line", "triples"):
        raise ValueError(f"unknown mode {mode!r}; expected 'line' or 'triples'")
    delimiter = "," if fmt == "csv" else "\t"
    if fmt not in ("csv", "tsv"):
        raise ValueError(f"unknown format {fmt!r}; expected 'csv' or 'tsv'")

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        if mode == "line":
            for i, row in enumerate(reader):
                if has_header and i == 0:
                    continue
                line_no = reader.line_num
                if len(row) < 3:
                    raise CorpusFormatError(path, line_no, f"need context + >=2 candidates, got {len(row)} fields")
                context = tokenize(row[0], lowercase, strip_tags)
                if not context:
                    raise CorpusFormatError(path, line_no, "empty context")
                candidates = []
                for j, field in enumerate(row[1:]):
                    response = tokenize(field, lowercase, strip_tags)
                    if not response:
                        raise CorpusFormatError(path, line_no, f"empty candidate in column {j + 2}")
                    candidates.append(Candidate(tuple(response), 1 if j == 0 else 0))
                yield RankingGroup(tuple(context), tuple(candidates))
        else:
            if n_candidates < 2:
                raise ValueError("n_candidates must be >= 2")
            block: list[tuple[tuple[str, ...], Candidate]] = []
            start_line = 1
            for i, row in enumerate(reader):
                if has_header and i == 0:
                    continue
                line_no = reader.line_num
                if len(row) != 3:
                    raise CorpusFormatError(path, line_no, f"expected 3 fields, got {len(row)}")
                label = row[2].strip()
                if label not in ("0", "1"):
                    raise CorpusFormatError(path, line_no, f"label must be '0' or '1', got {row[2]!r}")
                context = tuple(tokenize(row[0], lowercase, strip_tags))
                response = tuple(tokenize(row[1], lowercase, strip_tags))
                if not context or not response:
                    raise CorpusFormatError(path, line_no, "empty context or response after tokenization")
                if not block:
                    start_line = line_no
                elif context != block[0][0]:
                    raise CorpusFormatError(
                        path, line_no, f"context changed inside a group of {n_candidates} starting at line {start_line}"
                    )
                block.append((context, Candidate(response, int(label))))
                if len(block) == n_candidates:
                    yield RankingGroup(block[0][0], tuple(c for _, c in block))
                    block = []
            if block:
                raise CorpusFormatError(
                    path, start_line, f"incomplete group: {len(block)} of {n_candidates} candidates"
                )


class Vocabulary:
    """Dense token<->id mapping with counts. Ids 0 and 1 are reserved for
    padding and unknown; real tokens start at id 2 in descending-frequency
    order (ties broken lexicographically)."""

    PAD_ID = 0
    UNK_ID = 1

    def __init__(self, items: Sequence[tuple[str, int]]):
        self._items: list[tuple[str, int]] = []
        self._ids: dict[str, int] = {}
        for token, count in items:
            if not token or any(ch.isspace() for ch in token):
                raise ValueError(f"invalid vocabulary token {token!r}")
            if count < 1:
                raise ValueError(f"count must be >= 1 for {token!r}")
            if token in self._ids:
                raise ValueError(f"duplicate vocabulary token {token!r}")
            self._ids[token] = len(self._items) + 2
            self._items.append((token, int(count)))

    @classmethod
    def from_counts(cls, counts: Mapping[str, int], min_count: int = 1) -> "Vocabulary":
        if min_count < 1:
            raise ValueError("min_count must be >= 1")
        kept = [(t, c) for t, c in counts.items() if c >= min_count]
        kept.sort(key=lambda tc: (-tc[1], tc[0]))
        return cls(kept)

    def __len__(self) -> int:
        return len(self._items) + 2

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id_of(self, token: str) -> int:
        return self._ids.get(token, self.UNK_ID)

    def token_of(self, idx: int) -> str:
        if idx == self.PAD_ID:
            return "<pad>"
        if idx == self.UNK_ID:
            return "<unk>"
        return self._items[idx - 2][0]

    def count_of(self, token: str) -> int:
        idx = self._ids.get(token)
        return 0 if idx is None else self._items[idx - 2][1]

    def tokens(self) -> list[str]:
        return [t for t, _ in self._items]

    def items(self) -> list[tuple[str, int]]:
        return list(self._items)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._items == other._items


def build_vocabulary(examples: Iterable[DialogueExample], min_count: int = 1) -> Vocabulary:
    """Count tokens over contexts and responses and keep those with
    frequency >= min_count. Per-shard counts may be merged with
    ``collections.Counter`` addition before ``Vocabulary.from_counts``;
    the result does not depend on shard order."""
    counts: Counter[str] = Counter()
    for ex in examples:
        counts.update(ex.context)
        counts.update(ex.response)
    return Vocabulary.from_counts(counts, min_count)


def save_vocabulary(vocab: Vocabulary, path) -> None:
    """One `token<TAB>count` line per id, in id order; ids 0/1 are implicit."""
    with open(path, "w", encoding="utf-8") as fh:
        for token, count in vocab.items():
            fh.write(f"{token}\t{count}\n")


def load_vocabulary(path) -> Vocabulary:
    items = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CorpusFormatError(path, line_no, f"expected 'token<TAB>count', got {line!r}")
            try:
                count = int(parts[1])
            except ValueError:
                raise CorpusFormatError(path, line_no, f"bad count {parts[1]!r}") from None
            items.append((parts[0], count))
    return Vocabulary(items)


def _lower_median(values: list[int]) -> int:
    if not values:
        return 0
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def compute_stats(examples: Iterable[DialogueExample]) -> CorpusStats:
    """Corpus-level counts and lower-median token lengths (pre-truncation).

    ``n_contexts`` counts distinct contexts; the same context paired with a
    positive and sampled negatives counts once.
    """
    n_pos = 0
    n_neg = 0
    contexts: set[tuple[str, ...]] = set()
    ctx_lengths: list[int] = []
    rsp_lengths: list[int] = []
    for ex in examples:
        if ex.label == 1:
            n_pos += 1
        else:
            n_neg += 1
        contexts.add(ex.context)
        ctx_lengths.append(len(ex.context))
        rsp_lengths.append(len(ex.response))
    return CorpusStats(
        n_positive_pairs=n_pos,
        n_negative_pairs=n_neg,
        n_contexts=len(contexts),
        median_context_tokens=_lower_median(ctx_lengths),
        median_response_tokens=_lower_median(rsp_lengths),
    )


def format_stats(stats: CorpusStats) -> str:
    lines = [f"{key} {value}" for key, value in stats.to_dict().items()]
    return "\n".join(lines)
