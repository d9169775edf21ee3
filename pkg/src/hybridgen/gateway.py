"""Vision-language model boundary: prompts, parsing, transports.

Requests are rendered from template assets and answered either from a
directory of recorded responses (hermetic, keyed by a content hash of the
request) or over HTTP. Responses carry their parse result and validation
violations as data; malformed model output never raises.

Recorded-response files are named ``<sha256>.json`` and contain a JSON
object ``{"raw_text": "..."}``; HTTP endpoints return the same shape.
"""

from __future__ import annotations

import hashlib
import json
import re
import string
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .constraints import ConstraintPlan, plan_from_dict, validate_plan
from .errors import (
    ParseError,
    RecordingNotFoundError,
    TransportError,
    ValidationError,
)

KIND_VIDEO_ANALYSIS = "video_analysis"
KIND_CONSTRAINT_PROPOSAL = "constraint_proposal"

TOKEN_ENV_VAR = "HYBRIDGEN_VLM_TOKEN"

_TEMPLATES = {
    KIND_VIDEO_ANALYSIS: "video_analysis.txt",
    KIND_CONSTRAINT_PROPOSAL: "constraint_proposal.txt",
}

_FENCED_BLOCK = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class Attachment:
    kind: str  # "video" | "image"
    ref: str

    def __post_init__(self):
        if self.kind not in ("video", "image"):
            raise ValidationError(f"attachment kind must be video or image, got {self.kind!r}")


@dataclass(frozen=True)
class VlmRequest:
    kind: str
    prompt_text: str
    attachments: tuple[Attachment, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "attachments", tuple(self.attachments))
        if self.kind not in _TEMPLATES:
            raise ValidationError(f"unknown request kind {self.kind!r}")
        if self.kind == KIND_CONSTRAINT_PROPOSAL and not any(
            a.kind == "image" for a in self.attachments
        ):
            raise ValidationError("constraint proposals need an annotated image attachment")

    def digest(self) -> str:
        payload = json.dumps(
            {
                "kind": self.kind,
                "prompt": self.prompt_text,
                "attachments": [a.ref for a in self.attachments],
            },
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class VlmResponse:
    raw_text: str
    parsed: object  # list of interval dicts, or ConstraintPlan
    valid: bool
    violations: tuple[str, ...] = ()


def render_prompt(kind: str, task_description: str) -> str:
    """Template asset with the task description substituted."""
    if kind not in _TEMPLATES:
        raise ValidationError(f"unknown prompt kind {kind!r}")
    template = resources.files("hybridgen.prompts").joinpath(_TEMPLATES[kind]).read_text()
    return string.Template(template).safe_substitute(task=task_description)


def build_request(kind: str, task_description: str, attachments=()) -> VlmRequest:
    return VlmRequest(kind, render_prompt(kind, task_description), tuple(attachments))


@dataclass(frozen=True)
class ParsedIntervals:
    intervals: tuple[dict, ...]
    valid: bool
    violations: tuple[str, ...] = ()


def _first_json_block(text: str):
    match = _FENCED_BLOCK.search(text)
    if match is None:
        return None, "no fenced JSON block found"
    try:
        return json.loads(match.group(1)), None
    except json.JSONDecodeError as exc:
        return None, f"fenced block is not valid JSON: {exc.msg} (line {exc.lineno})"


def parse_intervals(text: str) -> ParsedIntervals:
    """Time intervals from a model response; diagnostics instead of exceptions."""
    doc, err = _first_json_block(text)
    if err is not None:
        return ParsedIntervals((), False, (err,))
    if not isinstance(doc, list):
        return ParsedIntervals((), False, ("expected a JSON list of intervals",))
    violations = []
    spans = []
    for i, item in enumerate(doc):
        if not isinstance(item, dict) or "start" not in item or "end" not in item:
            violations.append(f"interval {i} must be an object with start and end")
            continue
        try:
            start, end = float(item["start"]), float(item["end"])
        except (TypeError, ValueError):
            violations.append(f"interval {i} has non-numeric bounds")
            continue
        if not start < end:
            violations.append(f"interval {i}: start < end violated ({start} >= {end})")
            continue
        spans.append({"start": start, "end": end})
    spans.sort(key=lambda s: (s["start"], s["end"]))
    for a, b in zip(spans, spans[1:]):
        if b["start"] < a["end"]:
            violations.append(
                f"intervals overlap: [{a['start']}, {a['end']}] and [{b['start']}, {b['end']}]"
            )
    if violations:
        return ParsedIntervals((), False, tuple(violations))
    return ParsedIntervals(tuple(spans), True)


def parse_constraint_plan(text: str) -> tuple[ConstraintPlan | None, tuple[str, ...]]:
    doc, err = _first_json_block(text)
    if err is not None:
        return None, (err,)
    if not isinstance(doc, dict):
        return None, ("expected a JSON object describing the constraint plan",)
    try:
        plan = plan_from_dict(doc)
    except ParseError as exc:
        return None, (str(exc),)
    violations = validate_plan(plan)
    return plan, tuple(violations)


def _interpret(request: VlmRequest, raw_text: str) -> VlmResponse:
    if request.kind == KIND_VIDEO_ANALYSIS:
        parsed = parse_intervals(raw_text)
        return VlmResponse(raw_text, list(parsed.intervals), parsed.valid, parsed.violations)
    plan, violations = parse_constraint_plan(raw_text)
    return VlmResponse(raw_text, plan, plan is not None and not violations, violations)


# --- transports --------------------------------------------------------------


class RecordedTransport:
    """Resolves requests against committed response files; fully offline."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def fetch_raw(self, request: VlmRequest) -> str:
        digest = request.digest()
        path = self.directory / f"{digest}.json"
        if not path.exists():
            raise RecordingNotFoundError(digest, str(self.directory))
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"recording {digest}.json is not valid JSON: {exc.msg}") from exc
        if not isinstance(doc, dict) or "raw_text" not in doc:
            raise ParseError(f"recording {digest}.json lacks a raw_text field")
        return str(doc["raw_text"])

    @staticmethod
    def record_path(directory, request: VlmRequest) -> Path:
        return Path(directory) / f"{request.digest()}.json"


class HttpTransport:
    """POSTs requests as JSON; retries transport failures with backoff."""

    def __init__(
        self,
        endpoint: str,
        token: str | None = None,
        timeout: float = 30.0,
        attempts: int = 3,
        backoff: float = 1.0,
        max_in_flight: int = 2,
    ):
        self.endpoint = endpoint
        self.token = token
        self.timeout = timeout
        self.attempts = attempts
        self.backoff = backoff
        self._slot = threading.Semaphore(max_in_flight)

    def fetch_raw(self, request: VlmRequest) -> str:
        body = json.dumps(
            {
                "kind": request.kind,
                "prompt": request.prompt_text,
                "attachments": [{"kind": a.kind, "ref": a.ref} for a in request.attachments],
            }
        ).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        delay = self.backoff
        last_error: Exception | None = None
        for attempt in range(self.attempts):
            if attempt > 0:
                time.sleep(delay)
                delay *= 2.0
            req = urllib.request.Request(self.endpoint, data=body, headers=headers)
            try:
                with self._slot:
                    with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                        payload = resp.read().decode("utf-8")
                doc = json.loads(payload)
                if not isinstance(doc, dict) or "raw_text" not in doc:
                    raise TransportError("endpoint response lacks a raw_text field")
                return str(doc["raw_text"])
            except urllib.error.HTTPError as exc:
                last_error = exc
                if exc.code < 500:
                    raise TransportError(f"endpoint returned HTTP {exc.code}") from exc
            except (urllib.error.URLError, TimeoutError, json.JSONDecodeError) as exc:
                last_error = exc
        raise TransportError(f"request failed after {self.attempts} attempts: {last_error}")


def fetch(request: VlmRequest, transport) -> VlmResponse:
    """One request through a transport, parsed per its kind."""
    return _interpret(request, transport.fetch_raw(request))


def transport_from_spec(spec: str, token: str | None = None):
    """Build a transport from a CLI string: recorded:<dir> or http(s)://<url>."""
    if spec.startswith("recorded:"):
        return RecordedTransport(spec[len("recorded:") :])
    if spec.startswith(("http:", "https:")):
        return HttpTransport(spec, token=token)
    raise ValidationError(f"unknown transport spec {spec!r}; use recorded:<dir> or http:<url>")
