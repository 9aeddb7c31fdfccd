"""Chat-endpoint scoring of every pair in a label space.

Requests go to an OpenAI-compatible ``POST /v1/chat/completions``
endpoint. Every successful response is persisted to a content-addressed
cache keyed by a digest of (endpoint, model, request body), so an
interrupted scoring run resumes for free and a finished one replays
bit-identically with zero network traffic. Seen pairs are never queried:
they receive a +inf sentinel that survives any threshold.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import re
import string
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import httpx

from .errors import (
    PartialScoringError,
    PromptFormatError,
    ResponseFormatError,
    ScoreExtractionError,
    TransportError,
    ValidationError,
)
from .labelspace import Pair, PairSpace, enumerate_all
from .prompts import (
    GuidanceSet,
    PromptSpec,
    PromptText,
    canonical_fallback,
    compose_canonical,
    compose_guided,
    compose_qa,
    select_guidance,
)

API_KEY_ENV = "FLAB_API_KEY"
CHAT_PATH = "/v1/chat/completions"
SEEN_SENTINEL = math.inf

METHOD_FLM_LOGIT = "flm_logit"
METHOD_FLM_BINARY = "flm_binary"
METHOD_FLM_QA_SCORE = "flm_qa_score"
METHOD_GLOVE = "glove"
METHOD_CONCEPTNET = "conceptnet"
METHODS = (METHOD_FLM_LOGIT, METHOD_FLM_BINARY, METHOD_FLM_QA_SCORE, METHOD_GLOVE, METHOD_CONCEPTNET)

# Strippable token decorations: whitespace plus the sentencepiece and BPE
# word-boundary markers some backends leave on first tokens.
_TOKEN_MARKERS = string.whitespace + "▁Ġ"


@dataclass(frozen=True)
class EndpointConfig:
    """Where and how to talk to the chat backend."""

    base_url: str
    model: str
    cache_dir: str | Path = "cache"
    parallelism: int = 4
    requests_per_minute: float | None = None
    max_retries: int = 3
    backoff_base: float = 0.5
    timeout: float = 60.0
    top_logprobs_k: int = 20
    api_key_env: str = API_KEY_ENV


@dataclass(frozen=True)
class LLMRequest:
    """One chat completion request, always greedy (temperature 0)."""

    system_message: str
    human_message: str
    max_new_tokens: int
    temperature: float = 0.0
    want_logprobs: bool = False
    top_logprobs_k: int = 20

    def __post_init__(self) -> None:
        if self.temperature != 0:
            raise ValidationError("scoring requests must use temperature 0")
        if self.max_new_tokens < 1:
            raise ValidationError("max_new_tokens must be >= 1")


@dataclass(frozen=True)
class LLMResponse:
    text: str
    first_token_top_logprobs: dict[str, float] | None
    backend_id: str
    raw_payload_digest: str


@dataclass
class FeasibilityTable:
    """Feasibility score for every pair in the label space.

    Seen pairs hold the +inf sentinel. ``provenance`` records how each
    score was produced (seen exemption, guidance size, canonical
    fallback).
    """

    entries: dict[Pair, float]
    method: str
    normalized: bool = False
    provenance: dict[Pair, str] = field(default_factory=dict)


@dataclass(frozen=True)
class GuidancePolicy:
    """How in-context pairs are chosen for each queried pair."""

    mode: str = "related"  # related | random | none
    count: int = 20
    seed: int = 0


def request_body(request: LLMRequest, model: str) -> dict:
    body = {
        "model": model,
        "messages": [
            {"role": "system", "content": request.system_message},
            {"role": "user", "content": request.human_message},
        ],
        "temperature": request.temperature,
        "max_tokens": request.max_new_tokens,
    }
    if request.want_logprobs:
        body["logprobs"] = True
        body["top_logprobs"] = request.top_logprobs_k
    return body


def request_digest(config: EndpointConfig, body: dict) -> str:
    key = json.dumps(
        {"endpoint": config.base_url, "model": config.model, "body": body},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(key.encode("utf-8")).hexdigest()


class ResponseCache:
    """Content-addressed response store: ``cache/<first-2-hex>/<digest>.json``.

    Writes are atomic (temp file + rename), so concurrent writers of the
    same digest settle on identical content, last writer wins.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def path(self, digest: str) -> Path:
        return self.root / digest[:2] / f"{digest}.json"

    def get(self, digest: str) -> dict | None:
        path = self.path(digest)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            return None
        except json.JSONDecodeError:
            return None  # corrupt record: treat as a miss and rewrite

    def put(self, digest: str, record: dict) -> None:
        path = self.path(digest)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(f"{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(record, fh, sort_keys=True)
        os.replace(tmp, path)


class TokenBucket:
    """Thread-safe limiter enforcing a requests-per-minute budget."""

    def __init__(self, per_minute: float, burst: float = 1.0, clock=time.monotonic, sleep=time.sleep):
        if per_minute <= 0:
            raise ValidationError("requests_per_minute must be positive")
        self.rate = per_minute / 60.0
        self.capacity = burst
        self.tokens = burst
        self._clock = clock
        self._sleep = sleep
        self._stamp = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self.tokens = min(self.capacity, self.tokens + (now - self._stamp) * self.rate)
                self._stamp = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return
                wait = (1.0 - self.tokens) / self.rate
            self._sleep(wait)


def _parse_response(raw: dict, config: EndpointConfig) -> LLMResponse:
    digest = hashlib.sha256(json.dumps(raw, sort_keys=True).encode("utf-8")).hexdigest()
    try:
        choice = raw["choices"][0]
        text = choice["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise ResponseFormatError(f"chat completion body missing choices/message ({exc!r})") from None
    if not isinstance(text, str):
        raise ResponseFormatError("message content is not a string")
    top: dict[str, float] | None = None
    logprobs = choice.get("logprobs")
    if isinstance(logprobs, dict) and logprobs.get("content"):
        try:
            entries = logprobs["content"][0].get("top_logprobs") or []
            top = {}
            for entry in entries:
                token = entry["token"]
                value = float(entry["logprob"])
                if value > 0.0:
                    raise ResponseFormatError(f"log-probability above zero for token {token!r}")
                if token not in top or value > top[token]:
                    top[token] = value
        except (KeyError, TypeError) as exc:
            raise ResponseFormatError(f"malformed logprobs block ({exc!r})") from None
        if not top:
            top = None
    return LLMResponse(
        text=text,
        first_token_top_logprobs=top,
        backend_id=f"{config.base_url}#{config.model}",
        raw_payload_digest=digest,
    )


class ChatClient:
    """Synchronous chat client with caching, retries, and rate limiting.

    Safe for use from multiple threads; multiple processes may share one
    cache directory.
    """

    def __init__(self, config: EndpointConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        self.cache = ResponseCache(config.cache_dir)
        self.bucket = (
            TokenBucket(config.requests_per_minute) if config.requests_per_minute else None
        )
        self._http = httpx.Client(timeout=config.timeout, transport=transport)
        self._lock = threading.Lock()
        self.network_calls = 0
        self.cache_hits = 0

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "ChatClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def stats(self) -> dict[str, int]:
        with self._lock:
            return {"network_calls": self.network_calls, "cache_hits": self.cache_hits}

    def send(self, request: LLMRequest, context: str | None = None) -> LLMResponse:
        """Send one request, serving from cache when possible.

        ``context`` labels transport errors with the pair being scored.
        """
        body = request_body(request, self.config.model)
        digest = request_digest(self.config, body)
        record = self.cache.get(digest)
        if record is not None and isinstance(record.get("response"), dict):
            response = _parse_response(record["response"], self.config)
            with self._lock:
                self.cache_hits += 1
            return response
        raw = self._post(body, context)
        response = _parse_response(raw, self.config)  # never cache unparseable bodies
        self.cache.put(
            digest,
            {"endpoint": self.config.base_url, "model": self.config.model, "request": body, "response": raw},
        )
        return response

    def _post(self, body: dict, context: str | None) -> dict:
        url = self.config.base_url.rstrip("/") + CHAT_PATH
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.config.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        last_error: str = "no attempt made"
        status: int | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                time.sleep(self.config.backoff_base * 2 ** (attempt - 1))
            if self.bucket is not None:
                self.bucket.acquire()
            try:
                resp = self._http.post(url, json=body, headers=headers)
            except httpx.HTTPError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                continue
            with self._lock:
                self.network_calls += 1
            status = resp.status_code
            if status == 200:
                try:
                    return resp.json()
                except ValueError:
                    raise ResponseFormatError(
                        f"response body is not JSON (context: {context or 'n/a'})"
                    ) from None
            last_error = f"HTTP {status}"
            if status != 429 and not 500 <= status < 600:
                break  # non-transient client error: retrying will not help
        where = f" while scoring {context!r}" if context else ""
        raise TransportError(
            f"chat request failed after {self.config.max_retries + 1} attempt(s){where}: {last_error}",
            status=status,
            context=context,
        )


def _clean_token(token: str) -> str:
    return token.strip(_TOKEN_MARKERS).lower()


def yes_score(response: LLMResponse, mode: str) -> float:
    """Feasibility score from a yes/no style response.

    ``logit`` reads the best log-probability among first-token entries
    matching "yes" (case-insensitive, marker-stripped); when no entry
    matches, it floors at one below the worst returned log-probability
    so the pair still ranks below everything observed. ``binary`` maps
    the leading word of the text to 1 for "yes", else 0.
    """
    if mode == "logit":
        top = response.first_token_top_logprobs
        if not top:
            raise ScoreExtractionError("logit scoring requires first-token top logprobs")
        matches = [lp for token, lp in top.items() if _clean_token(token) == "yes"]
        if matches:
            return max(matches)
        return min(top.values()) - 1.0
    if mode == "binary":
        if not response.text.strip():
            raise ScoreExtractionError("empty response text in binary mode")
        match = re.search(r"[A-Za-z]+", response.text)
        return 1.0 if match and match.group(0).lower() == "yes" else 0.0
    raise ValidationError(f"unknown scoring mode {mode!r}")


def qa_score(response: LLMResponse, mode: str) -> float:
    """Score from a 0-9 question-answer response.

    ``binary`` takes the first digit character in the text. ``logit``
    returns the expected digit value under the renormalized first-token
    distribution restricted to single-digit tokens.
    """
    if mode == "binary":
        match = re.search(r"[0-9]", response.text)
        if not match:
            raise ScoreExtractionError(f"no digit found in response text {response.text!r}")
        return float(match.group(0))
    if mode == "logit":
        top = response.first_token_top_logprobs
        if not top:
            raise ScoreExtractionError("logit scoring requires first-token top logprobs")
        numerator = denominator = 0.0
        for token, lp in top.items():
            cleaned = _clean_token(token)
            if len(cleaned) == 1 and cleaned.isdigit():
                p = math.exp(lp)
                numerator += int(cleaned) * p
                denominator += p
        if denominator == 0.0:
            raise ScoreExtractionError("no single-digit tokens among top logprobs")
        return numerator / denominator
    raise ValidationError(f"unknown scoring mode {mode!r}")


def _build_prompt(
    spec: PromptSpec, pair: Pair, space: PairSpace, policy: GuidancePolicy, position: int
) -> tuple[PromptText, str]:
    """Render the prompt for one pair; returns (text, provenance note)."""
    if spec.format == "canonical":
        return compose_canonical(spec, pair.state, pair.object), ""
    if policy.mode == "none":
        guidance = GuidanceSet(pairs=(), selection_mode="related", requested_count=0)
    else:
        # Random mode derives a per-pair seed from the run seed and the
        # pair's canonical position so samples stay independent yet
        # reproducible.
        guidance = select_guidance(space, pair, policy.count, policy.mode, seed=policy.seed + position)
    if guidance.pairs:
        if spec.format == "list_guided":
            return compose_guided(spec, pair.state, pair.object, guidance), f"guidance={len(guidance.pairs)}"
        return compose_qa(spec, pair.state, pair.object, guidance), f"guidance={len(guidance.pairs)}"
    fallback = canonical_fallback(spec)
    return compose_canonical(fallback, pair.state, pair.object), "canonical-fallback"


def score_label_space(
    space: PairSpace,
    spec: PromptSpec,
    policy: GuidancePolicy,
    mode: str,
    client: ChatClient,
) -> FeasibilityTable:
    """Score every pair in the space through the chat backend.

    Seen pairs are exempt and sentineled. Requests run under the
    client's parallelism bound; per-pair failures are collected and
    raised as one aggregate error carrying the partial result.
    """
    if mode not in ("logit", "binary"):
        raise ValidationError(f"unknown scoring mode {mode!r}")
    if spec.format == "qa_score":
        method = METHOD_FLM_QA_SCORE
        extract = qa_score
    else:
        method = METHOD_FLM_LOGIT if mode == "logit" else METHOD_FLM_BINARY
        extract = yes_score

    entries: dict[Pair, float] = {}
    provenance: dict[Pair, str] = {}
    jobs: list[tuple[int, Pair]] = []
    for position, pair in enumerate(enumerate_all(space)):
        if pair in space.seen:
            entries[pair] = SEEN_SENTINEL
            provenance[pair] = "seen-exempt"
        else:
            jobs.append((position, pair))

    def score_one(position: int, pair: Pair) -> tuple[float, str]:
        prompt, note = _build_prompt(spec, pair, space, policy, position)
        if mode == "logit":
            request = LLMRequest(
                system_message=prompt.system_message,
                human_message=prompt.human_message,
                max_new_tokens=1,
                want_logprobs=True,
                top_logprobs_k=client.config.top_logprobs_k,
            )
        else:
            request = LLMRequest(
                system_message=prompt.system_message,
                human_message=prompt.human_message,
                max_new_tokens=16,
            )
        response = client.send(request, context=pair.text())
        return extract(response, mode), note

    failures: list[tuple[Pair, Exception]] = []
    bound = max(1, client.config.parallelism)
    with ThreadPoolExecutor(max_workers=bound) as pool:
        futures = {pool.submit(score_one, position, pair): pair for position, pair in jobs}
        for future in as_completed(futures):
            pair = futures[future]
            try:
                score, note = future.result()
            except (TransportError, ResponseFormatError, ScoreExtractionError, PromptFormatError) as exc:
                failures.append((pair, exc))
            else:
                entries[pair] = score
                if note:
                    provenance[pair] = note

    if failures:
        failures.sort(key=lambda item: space.index_of(item[0]))
        raise PartialScoringError(failures, entries, provenance)
    return FeasibilityTable(entries=entries, method=method, normalized=False, provenance=provenance)


def save_table(table: FeasibilityTable, path: str | Path, space: PairSpace) -> None:
    """Write the table as CSV in canonical pair order.

    The seen sentinel serializes as ``inf``; scores use shortest
    round-trip float formatting so a reload is bit-identical.
    """
    order = enumerate_all(space)
    missing = [p for p in order if p not in table.entries]
    extra = set(table.entries) - set(order)
    if missing or extra:
        raise ValidationError(
            f"table does not cover the label space exactly ({len(missing)} missing, {len(extra)} extra)"
        )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["state", "object", "score", "method", "provenance"])
        for pair in order:
            writer.writerow(
                [pair.state, pair.object, repr(table.entries[pair]), table.method, table.provenance.get(pair, "")]
            )


def load_table(path: str | Path) -> FeasibilityTable:
    entries: dict[Pair, float] = {}
    provenance: dict[Pair, str] = {}
    methods: set[str] = set()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["state", "object", "score", "method", "provenance"]:
            raise ValidationError(f"unexpected table header in {path}: {header!r}")
        for row in reader:
            if len(row) != 5:
                raise ValidationError(f"malformed table row in {path}: {row!r}")
            pair = Pair(row[0], row[1])
            if pair in entries:
                raise ValidationError(f"duplicate pair in table: {pair.text()!r}")
            try:
                entries[pair] = float(row[2])
            except ValueError:
                raise ValidationError(f"unparseable score for {pair.text()!r}: {row[2]!r}") from None
            methods.add(row[3])
            if row[4]:
                provenance[pair] = row[4]
    if not entries:
        raise ValidationError(f"empty feasibility table: {path}")
    if len(methods) != 1:
        raise ValidationError(f"table mixes methods: {sorted(methods)}")
    return FeasibilityTable(entries=entries, method=methods.pop(), normalized=False, provenance=provenance)
