"""Autoregressive token-model backends.

A backend maps (token-grid context, condition) to next-step logits, one
vector of V raw scores per codebook. Two backends ship:

* :class:`ToyBackend` - deterministic, stateless, desk-scale. Its logits
  are a documented pure function of the hashed context window so tests can
  recompute them independently:

      seed(j)      = hash64(b"toy-logits" | last-W-steps as uint32 LE
                            | uint32(j) | uint64(condition id))
      logit[j][v]  = splitmix64(seed(j) + v) / 2**64

  Only the last ``context_window`` steps participate, so tokens older than
  the window cannot move the logits.

* :class:`RemoteBackend` - HTTP client for the wire protocol below. The
  protocol carries raw logits, never samples, because condition blending
  happens engine-side.

Wire protocol::

    GET  /v1/info    -> {"name", "num_codebooks", "vocab_size",
                         "context_window", "max_context_steps", "timeout_s"}
    POST /v1/logits  {"context": [[int]], "condition":
                      {"kind": "none"|"text"|"audio_prefix",
                       "text"?: str, "prefix"?: [[int]]},
                      "want": "logits"}
                     -> {"logits": [[float; V]; K]}

Audio-prefix conditions mean "this grid precedes the context": the backend
prepends ``prefix`` to the passed context and then behaves as a plain text
(or unconditional) backend. Interleaving patterns are an adapter concern
for real models; the toy backend hashes raw grid rows.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import httpx
import numpy as np

from .hashing import hash64, normalize_text, unit_floats
from .patterns import TokenGrid, concat_grids

_LOGITS_DOMAIN = b"toy-logits"


class BackendError(Exception):
    pass


class BackendUnavailable(BackendError):
    pass


class ShapeMismatch(BackendError):
    pass


class ConditionKind(enum.Enum):
    NONE = "none"
    TEXT = "text"
    AUDIO_PREFIX = "audio_prefix"


@dataclass(frozen=True)
class ConditionId:
    """Opaque condition handle; ``id`` is a stable 64-bit content hash."""

    kind: ConditionKind
    id: int
    text: str | None = None
    prefix: TokenGrid | None = None

    def __post_init__(self):
        if self.kind is ConditionKind.TEXT and self.text is None:
            raise ValueError("text condition requires text")
        if self.kind is ConditionKind.AUDIO_PREFIX and self.prefix is None:
            raise ValueError("audio_prefix condition requires a prefix grid")

    @property
    def key(self) -> tuple[str, int]:
        """Deduplication key: two conditions with equal keys are the same
        condition."""
        return (self.kind.value, self.id)


def unconditional() -> ConditionId:
    return ConditionId(kind=ConditionKind.NONE, id=0)


def toy_condition_from_text(text: str) -> ConditionId:
    """Stable across runs and platforms; whitespace and case are
    normalized before hashing."""
    cid = hash64(normalize_text(text).encode("utf-8"))
    return ConditionId(kind=ConditionKind.TEXT, id=cid, text=text)


def audio_prefix_condition(prefix: TokenGrid, text: str | None = None) -> ConditionId:
    """Condition meaning "the prefix grid precedes the context", optionally
    combined with a text condition."""
    text_id = hash64(normalize_text(text).encode("utf-8")) if text is not None else 0
    cid = hash64(
        b"audio-prefix",
        np.ascontiguousarray(prefix.tokens, dtype="<u4").tobytes(),
        text_id.to_bytes(8, "little"),
    )
    return ConditionId(kind=ConditionKind.AUDIO_PREFIX, id=cid, text=text, prefix=prefix)


@dataclass(frozen=True)
class BackendInfo:
    num_codebooks: int
    vocab_size: int
    context_window: int
    name: str
    max_context_steps: int = 1 << 20
    timeout_s: float = 30.0


def _underlying_condition(condition: ConditionId) -> ConditionId:
    if condition.kind is ConditionKind.AUDIO_PREFIX:
        if condition.text is not None:
            return toy_condition_from_text(condition.text)
        return unconditional()
    return condition


@dataclass(frozen=True)
class ToyBackend:
    num_codebooks: int = 4
    vocab_size: int = 64
    context_window: int = 4
    name: str = "toy"

    def info(self) -> BackendInfo:
        return BackendInfo(
            num_codebooks=self.num_codebooks,
            vocab_size=self.vocab_size,
            context_window=self.context_window,
            name=self.name,
        )

    def next_logits(self, ctx: TokenGrid, condition: ConditionId) -> np.ndarray:
        """Raw scores in [0, 1), shape (K, V); see the module docstring for
        the exact formula."""
        if ctx.num_steps and ctx.num_codebooks != self.num_codebooks:
            raise ShapeMismatch(
                f"context has {ctx.num_codebooks} codebooks; backend has {self.num_codebooks}"
            )
        if ctx.tokens.size and ctx.tokens.max() >= self.vocab_size:
            raise ShapeMismatch(f"context token out of [0, {self.vocab_size})")
        if condition.kind is ConditionKind.AUDIO_PREFIX:
            ctx = concat_grids(condition.prefix, ctx) if ctx.num_steps else condition.prefix
            condition = _underlying_condition(condition)

        window = ctx.tokens[-self.context_window :] if ctx.num_steps else ctx.tokens
        ctx_bytes = np.ascontiguousarray(window, dtype="<u4").tobytes()
        cond_bytes = condition.id.to_bytes(8, "little")
        out = np.empty((self.num_codebooks, self.vocab_size))
        for j in range(self.num_codebooks):
            seed = hash64(_LOGITS_DOMAIN, ctx_bytes, j.to_bytes(4, "little"), cond_bytes)
            out[j] = unit_floats(seed, self.vocab_size)
        return out


def condition_to_wire(condition: ConditionId) -> dict:
    body: dict = {"kind": condition.kind.value}
    if condition.text is not None:
        body["text"] = condition.text
    if condition.prefix is not None:
        body["prefix"] = condition.prefix.tokens.tolist()
    return body


def condition_from_wire(body: dict) -> ConditionId:
    kind = ConditionKind(body["kind"])
    if kind is ConditionKind.NONE:
        return unconditional()
    if kind is ConditionKind.TEXT:
        return toy_condition_from_text(body["text"])
    prefix = TokenGrid(tokens=np.asarray(body["prefix"], dtype=np.int64))
    return audio_prefix_condition(prefix, body.get("text"))


@dataclass
class RemoteBackend:
    """Client for the /v1 wire protocol; retries are safe because the
    protocol is stateless."""

    base_url: str
    timeout_s: float = 10.0
    max_retries: int = 3
    retry_wait_s: float = 0.1
    _client: httpx.Client = field(init=False, repr=False)
    _info: BackendInfo | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self._client = httpx.Client(base_url=self.base_url, timeout=self.timeout_s)

    def close(self) -> None:
        self._client.close()

    def _request(self, method: str, path: str, **kwargs) -> httpx.Response:
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._client.request(method, path, **kwargs)
                if resp.status_code >= 500:
                    last_error = BackendUnavailable(f"{path} -> {resp.status_code}")
                else:
                    return resp
            except httpx.HTTPError as exc:
                last_error = exc
            if attempt < self.max_retries:
                time.sleep(self.retry_wait_s * (attempt + 1))
        raise BackendUnavailable(f"backend at {self.base_url} unreachable") from last_error

    def info(self) -> BackendInfo:
        if self._info is None:
            resp = self._request("GET", "/v1/info")
            resp.raise_for_status()
            self._info = BackendInfo(**resp.json())
        return self._info

    @property
    def num_codebooks(self) -> int:
        return self.info().num_codebooks

    @property
    def vocab_size(self) -> int:
        return self.info().vocab_size

    def next_logits(self, ctx: TokenGrid, condition: ConditionId) -> np.ndarray:
        payload = {
            "context": ctx.tokens.tolist(),
            "condition": condition_to_wire(condition),
            "want": "logits",
        }
        resp = self._request("POST", "/v1/logits", json=payload)
        if resp.status_code != 200:
            raise BackendUnavailable(f"/v1/logits -> {resp.status_code}: {resp.text}")
        logits = np.asarray(resp.json()["logits"], dtype=np.float64)
        info = self.info()
        if logits.shape != (info.num_codebooks, info.vocab_size):
            raise ShapeMismatch(f"remote logits have shape {logits.shape}")
        return logits


def backend_app(backend: ToyBackend):
    """FastAPI app exposing a backend over the wire protocol."""
    from fastapi import FastAPI

    app = FastAPI(title="formgen token-model backend")

    @app.get("/v1/info")
    def info():
        b = backend.info()
        return {
            "num_codebooks": b.num_codebooks,
            "vocab_size": b.vocab_size,
            "context_window": b.context_window,
            "name": b.name,
            "max_context_steps": b.max_context_steps,
            "timeout_s": b.timeout_s,
        }

    @app.post("/v1/logits")
    def logits(payload: dict):
        ctx = TokenGrid(
            tokens=np.asarray(payload["context"], dtype=np.int64).reshape(
                -1, backend.num_codebooks
            )
        )
        condition = condition_from_wire(payload["condition"])
        return {"logits": backend.next_logits(ctx, condition).tolist()}

    return app
