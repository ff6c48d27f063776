"""Musical-form documents: parsing, validation, canonical serialization.

A form document is a JSON object mapping part numbers to 3-element arrays::

    { "1": ["prompt text", LENGTH_IN_SECONDS, REFERENCED_PART], ... }

``REFERENCED_PART`` is -1 (no reference) or the number of an earlier part
whose material the new part varies. The document usually arrives embedded
in LLM narrative; the parser extracts the first JSON object it can decode.

Parsing and validation are deliberately separate: the parser only rejects
documents it cannot represent at all, while every musical constraint
(durations, references, contiguity) is reported as data by
:func:`validate_form`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

from .textjson import extract_json_value, quote_integer_keys

DEFAULT_TOTAL_S = 150
DEFAULT_MIN_PART_S = 20
DEFAULT_MAX_PART_S = 30
DEFAULT_MIN_PARTS = 2

NO_REFERENCE = -1

# Closed set of validation rule ids.
RULE_TOTAL_DURATION = "total-duration"
RULE_PART_TOO_LONG = "part-too-long"
RULE_PART_TOO_SHORT = "part-too-short"
RULE_BAD_REFERENCE = "bad-reference"
RULE_INDEX_GAP = "index-gap"
RULE_TOO_FEW_PARTS = "too-few-parts"

ALL_RULES = (
    RULE_TOTAL_DURATION,
    RULE_PART_TOO_LONG,
    RULE_PART_TOO_SHORT,
    RULE_BAD_REFERENCE,
    RULE_INDEX_GAP,
    RULE_TOO_FEW_PARTS,
)

GLOBAL = -1  # part index used for piece-level violations


class FormError(Exception):
    """Base class for form-document parse failures."""


class MalformedDocument(FormError):
    pass


class DuplicatePart(FormError):
    pass


class NonIntegerLength(FormError):
    pass


@dataclass(frozen=True)
class PartSpec:
    """One contiguous section of the piece."""

    index: int
    prompt: str
    length_s: int
    referenced_part: int = NO_REFERENCE


@dataclass(frozen=True)
class FormSpec:
    parts: tuple[PartSpec, ...]
    total_s: int = DEFAULT_TOTAL_S
    description: str | None = None

    @property
    def num_parts(self) -> int:
        return len(self.parts)

    def part(self, index: int) -> PartSpec:
        for p in self.parts:
            if p.index == index:
                return p
        raise KeyError(index)


@dataclass(frozen=True)
class FormConstraints:
    total_s: int = DEFAULT_TOTAL_S
    min_part_s: int = DEFAULT_MIN_PART_S
    max_part_s: int = DEFAULT_MAX_PART_S
    min_parts: int = DEFAULT_MIN_PARTS


@dataclass(frozen=True)
class Violation:
    rule: str
    part_index: int  # GLOBAL (-1) for piece-level rules
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.violations


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _pairs_keep_duplicates(pairs):
    return list(pairs)


_DUP_DECODER = json.JSONDecoder(object_pairs_hook=_pairs_keep_duplicates)


def parse_form(document: str, description: str | None = None) -> FormSpec:
    """Parse a form document (raw JSON or LLM narrative containing one).

    Part keys may be quoted or bare integers; parts are returned sorted by
    index with the prompt text preserved exactly as decoded.

    Raises :class:`MalformedDocument`, :class:`DuplicatePart`, or
    :class:`NonIntegerLength`.
    """
    pairs = extract_json_value(document, "{", decoder=_DUP_DECODER)
    if pairs is None:
        # Listing-style documents may use bare integer keys, which strict
        # JSON rejects; quoting them can touch prompt text, so it is only a
        # fallback.
        pairs = extract_json_value(quote_integer_keys(document), "{", decoder=_DUP_DECODER)
    if pairs is None:
        raise MalformedDocument("no JSON object found in document")
    if not pairs:
        raise MalformedDocument("form has zero parts")

    parts: list[PartSpec] = []
    seen: set[int] = set()
    for key, value in pairs:
        try:
            index = int(key)
        except (TypeError, ValueError):
            raise MalformedDocument(f"part key {key!r} is not an integer")
        if index < 1:
            raise MalformedDocument(f"part number {index} is not positive")
        if index in seen:
            raise DuplicatePart(f"part {index} appears more than once")
        seen.add(index)
        if not isinstance(value, list) or len(value) != 3:
            raise MalformedDocument(
                f"part {index} is not a [prompt, length, referenced_part] array"
            )
        prompt, length_s, ref = value
        if not isinstance(prompt, str):
            raise MalformedDocument(f"part {index} prompt is not text")
        if not _is_int(length_s):
            raise NonIntegerLength(f"part {index} length {length_s!r} is not an integer")
        if not _is_int(ref):
            raise MalformedDocument(f"part {index} referenced part {ref!r} is not an integer")
        parts.append(PartSpec(index=index, prompt=prompt, length_s=length_s, referenced_part=ref))

    parts.sort(key=lambda p: p.index)
    return FormSpec(parts=tuple(parts), description=description)


def serialize_form(spec: FormSpec) -> str:
    """Canonical document form: sorted integer-string keys, UTF-8 JSON."""
    body = {
        str(p.index): [p.prompt, p.length_s, p.referenced_part]
        for p in sorted(spec.parts, key=lambda p: p.index)
    }
    return json.dumps(body, ensure_ascii=False, indent=2)


def validate_form(spec: FormSpec, constraints: FormConstraints | None = None) -> ValidationReport:
    """Check every constraint and report all violations (pure function)."""
    c = constraints or FormConstraints(total_s=spec.total_s)
    out: list[Violation] = []

    if spec.num_parts < c.min_parts:
        out.append(
            Violation(
                RULE_TOO_FEW_PARTS,
                GLOBAL,
                f"form has {spec.num_parts} part(s); at least {c.min_parts} required",
            )
        )

    total = sum(p.length_s for p in spec.parts)
    if total != c.total_s:
        out.append(
            Violation(
                RULE_TOTAL_DURATION,
                GLOBAL,
                f"part lengths sum to {total} s; piece must be exactly {c.total_s} s",
            )
        )

    indices = [p.index for p in spec.parts]
    if indices != list(range(1, spec.num_parts + 1)):
        out.append(
            Violation(
                RULE_INDEX_GAP,
                GLOBAL,
                f"part numbers {indices} are not exactly 1..{spec.num_parts}",
            )
        )

    for p in spec.parts:
        if p.length_s > c.max_part_s:
            out.append(
                Violation(
                    RULE_PART_TOO_LONG,
                    p.index,
                    f"part {p.index} is {p.length_s} s; parts may be at most {c.max_part_s} s",
                )
            )
        if p.length_s < c.min_part_s:
            out.append(
                Violation(
                    RULE_PART_TOO_SHORT,
                    p.index,
                    f"part {p.index} is {p.length_s} s; parts must be at least {c.min_part_s} s",
                )
            )
        ref = p.referenced_part
        if ref != NO_REFERENCE and not (1 <= ref < p.index):
            out.append(
                Violation(
                    RULE_BAD_REFERENCE,
                    p.index,
                    f"part {p.index} references part {ref}; must be -1 or an earlier part",
                )
            )

    return ValidationReport(violations=tuple(out))


def with_total(spec: FormSpec, total_s: int) -> FormSpec:
    return replace(spec, total_s=total_s)
