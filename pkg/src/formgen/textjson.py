"""Pull JSON values out of LLM chatter.

LLM responses wrap their payload in narrative text and/or markdown fences.
The scanners below find the first parseable JSON value of the wanted kind,
honoring string escaping via the stdlib decoder.
"""

from __future__ import annotations

import json
import re
from typing import Any

_FENCE_RE = re.compile(r"```(?:[a-zA-Z0-9_-]*)\n(.*?)```", re.DOTALL)

# LLMs emit Listing-style objects with bare integer keys ({1: [...]}),
# which strict JSON rejects; quote them before decoding.
_BARE_INT_KEY_RE = re.compile(r"([{,]\s*)(-?\d+)(\s*:)")


def quote_integer_keys(text: str) -> str:
    return _BARE_INT_KEY_RE.sub(r'\1"\2"\3', text)


def _scan(text: str, opener: str, decoder: json.JSONDecoder) -> Any | None:
    pos = text.find(opener)
    while pos != -1:
        try:
            value, _ = decoder.raw_decode(text, pos)
            return value
        except json.JSONDecodeError:
            pos = text.find(opener, pos + 1)
    return None


def extract_json_value(
    text: str, opener: str, decoder: json.JSONDecoder | None = None
) -> Any | None:
    """First JSON value starting with ``opener`` ('{' or '['), searching
    fenced code blocks first, then the raw text."""
    decoder = decoder or json.JSONDecoder()
    for block in _FENCE_RE.findall(text):
        found = _scan(block, opener, decoder)
        if found is not None:
            return found
    return _scan(text, opener, decoder)


def extract_json_array(text: str) -> list | None:
    value = extract_json_value(text, "[")
    return value if isinstance(value, list) else None
