"""Fidelity oracles: ground-truth objectives, synthetic low-fidelity stand-ins,
and the chat-completions client that turns an LLM into a prediction oracle.

The prompt protocol is fixed: an invariant system prompt demanding strict
JSON output and a task-specific user prompt carrying background, parameter
definitions, the goal, read-only historical measurements, and the query
points. Responses must be a single JSON object with one ``data_points`` key.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .space import DesignSpace, FidelityDataset, Fidelity, normalize_point

SYSTEM_PROMPT = """You are a scientific assistant supporting Bayesian Optimization studies.
- Output ONLY valid JSON. No markdown, no explanations, no comments, no thinking process.
- Respond immediately with the required JSON format.
- Always keep feature order as provided and clip predictions to their valid numeric bounds.
- Treat historical measurements as read-only context; never copy them back into the output."""

_DEFAULT_BACKGROUND = (
    "We are conducting a Bayesian Optimization task to optimize a set of "
    "experimental conditions. The goal is to maximize a certain outcome, based "
    "on the observed relationship between input features and the target. The "
    "optimization is guided by a surrogate model that balances exploration and "
    "exploitation based on previous observations. The task involves selecting "
    "new points to evaluate based on the surrogate model's predictions."
)

_GOAL = (
    "Maximize the target outcome by optimizing the experimental conditions. "
    "The objective function is costly to evaluate, and the aim is to focus on "
    "areas with high potential, based on prior data and the surrogate model's "
    "predictions."
)

_OUTPUT_SCHEMA = """{
    "data_points": [
        {
            "features": [x1, x2, x3],
            "target": y
        },
        {
            "features": [x1, x2, x3],
            "target": y
        }
    ]
}"""

_RETRY_NOTE = (
    "Your previous response was not valid. Respond again with ONLY the required "
    "JSON object, exactly one \"data_points\" array entry per query point."
)


class MalformedJson(ValueError):
    pass


class SchemaViolation(ValueError):
    pass


class CountMismatch(ValueError):
    def __init__(self, expected: int, got: int):
        self.expected = expected
        self.got = got
        super().__init__(f"expected {expected} data_points entries, got {got}")


class TransportError(RuntimeError):
    def __init__(self, reason: str, status: Optional[int] = None):
        self.status = status
        super().__init__(reason)


class OracleFailure(RuntimeError):
    def __init__(self, attempts: int, last_error: Optional[Exception] = None):
        self.attempts = attempts
        self.last_error = last_error
        super().__init__(f"oracle failed after {attempts} attempts: {last_error}")


@dataclass(frozen=True)
class LlmClientConfig:
    """Connection and protocol settings for the chat-completions oracle."""

    endpoint_url: str
    model_name: str = "default"
    api_key_env_var: str = "LABO_LLM_TOKEN"
    max_retries: int = 3
    timeout_s: float = 60.0
    temperature: float = 0.0
    prior_knowledge: str = ""
    include_llm_history: bool = False
    max_history_rows: Optional[int] = None

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    def to_dict(self) -> dict:
        return {
            "endpoint_url": self.endpoint_url,
            "model_name": self.model_name,
            "api_key_env_var": self.api_key_env_var,
            "max_retries": self.max_retries,
            "timeout_s": self.timeout_s,
            "temperature": self.temperature,
            "prior_knowledge": self.prior_knowledge,
            "include_llm_history": self.include_llm_history,
            "max_history_rows": self.max_history_rows,
        }

    @staticmethod
    def from_dict(d: dict) -> "LlmClientConfig":
        return LlmClientConfig(**d)


def _fmt(v: float) -> str:
    return f"{v:g}"


def _round6(values: Sequence[float]) -> list[float]:
    return [float(round(float(v), 6)) for v in values]


def _data_points_json(entries: list[dict]) -> str:
    """Pretty data_points block with feature arrays kept on one line."""
    if not entries:
        return '{\n    "data_points": []\n}'
    blocks = []
    for e in entries:
        lines = [f'            "features": {json.dumps(e["features"])}']
        if "target" in e:
            lines[-1] += ","
            lines.append(f'            "target": {json.dumps(e["target"])}')
        blocks.append("        {\n" + "\n".join(lines) + "\n        }")
    return '{\n    "data_points": [\n' + ",\n".join(blocks) + "\n    ]\n}"


def build_prompt(
    space: DesignSpace,
    prior: str,
    history: FidelityDataset,
    queries: Sequence[Sequence[float]],
    *,
    include_llm_history: bool = False,
    max_history_rows: Optional[int] = None,
) -> tuple[str, str]:
    """Render the (system, user) message pair for a prediction request.

    Byte-deterministic for identical inputs: feature values are serialized
    in raw units at 6 decimals, history holds real-fidelity measurements
    (optionally also past LLM predictions), and the output-contract block
    carries the task's valid target range.
    """
    if len(queries) == 0:
        raise ValueError("queries must be nonempty")
    background = prior.strip() if prior and prior.strip() else _DEFAULT_BACKGROUND

    param_lines = [
        f"- Experimental Conditions: [{', '.join(space.names)}] (These represent "
        "the input features or parameters that influence the outcome of the experiments)"
    ]
    for dim in space.dims:
        bounds = f"range [{_fmt(dim.lower)}, {_fmt(dim.upper)}]"
        unit = f", unit {dim.unit}" if dim.unit else ""
        param_lines.append(f"- {dim.name}: {bounds}{unit}")
    param_lines.append(
        "- Objective Function: The objective is to predict the outcome (y) based "
        "on the above conditions."
    )

    rows = list(history.real_obs)
    if include_llm_history:
        rows = rows + [o for o in history.llm_obs]
    if max_history_rows is not None:
        rows = rows[-max_history_rows:]
    history_entries = [
        {"features": _round6(o.x), "target": float(round(o.y, 6))} for o in rows
    ]
    query_entries = [{"features": _round6(q)} for q in queries]

    requirements = f"""CRITICAL FORMATTING REQUIREMENTS:
1. Output ONLY the JSON object. No text before or after. No explanations. No markdown formatting.
2. Response must be valid JSON with double quotes, no comments, and no trailing commas.
3. The root object must contain exactly one key: "data_points" (an array).
4. The "data_points" array must contain exactly one entry for each input point, in the same order as provided.
5. Each entry must be an object with exactly two keys:
   - "features": an array of numbers in the same order as the provided input features
   - "target": a single number (the predicted f value, rounded to 3 decimals, clipped to [{_fmt(space.y_min)},{_fmt(space.y_max)}])
6. Do not include explanations, markdown, historical records, or any other keys or text outside the JSON object.
7. The number of entries in "data_points" must exactly match the number of input points provided."""

    user = "\n".join(
        [
            "Background:",
            background,
            "",
            "Parameters:",
            *param_lines,
            "",
            "Goal:",
            _GOAL,
            "",
            "Historical Data (read-only context):",
            _data_points_json(history_entries),
            "",
            "Predict These Points (return predictions in the same order):",
            _data_points_json(query_entries),
            "",
            "REQUIRED OUTPUT FORMAT (exact schema):",
            _OUTPUT_SCHEMA,
            "",
            requirements,
        ]
    ).replace("\r\n", "\n")
    return SYSTEM_PROMPT, user


def parse_llm_response(
    raw: str, expected_n: int, y_min: float, y_max: float
) -> list[float]:
    """Validate the JSON contract and return the clipped targets, in order."""
    try:
        obj = json.loads(raw)
    except (json.JSONDecodeError, TypeError) as e:
        raise MalformedJson(f"response is not valid JSON: {e}") from e
    if not isinstance(obj, dict):
        raise SchemaViolation("root must be a JSON object")
    if set(obj.keys()) != {"data_points"}:
        raise SchemaViolation(
            f"root object must contain exactly one key 'data_points', got {sorted(obj.keys())}"
        )
    entries = obj["data_points"]
    if not isinstance(entries, list):
        raise SchemaViolation("'data_points' must be an array")
    if len(entries) != expected_n:
        raise CountMismatch(expected_n, len(entries))
    out = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "target" not in entry:
            raise SchemaViolation(f"entry {i} must be an object with a 'target' key")
        t = entry["target"]
        if isinstance(t, bool) or not isinstance(t, (int, float)) or not math.isfinite(t):
            raise SchemaViolation(f"entry {i} 'target' must be a finite number, got {t!r}")
        out.append(float(min(max(float(t), y_min), y_max)))
    return out


class Transport(Protocol):
    def post(self, url: str, headers: dict, body: dict, timeout_s: float) -> tuple[int, str]:
        ...


class HttpTransport:
    """Default transport over httpx."""

    def post(self, url: str, headers: dict, body: dict, timeout_s: float) -> tuple[int, str]:
        import httpx

        try:
            resp = httpx.post(url, headers=headers, json=body, timeout=timeout_s)
        except httpx.HTTPError as e:
            raise TransportError(f"request failed: {e}") from e
        return resp.status_code, resp.text


class StubTransport:
    """Test transport replaying a scripted list of (status, payload) results."""

    def __init__(self, responses: Sequence[tuple[int, str]]):
        self.responses = list(responses)
        self.requests: list[dict] = []

    def post(self, url, headers, body, timeout_s):
        self.requests.append({"url": url, "body": body})
        if not self.responses:
            raise TransportError("stub exhausted")
        return self.responses.pop(0)


def chat_completion_payload(content: str) -> str:
    """Wrap assistant text in the chat-completions response shape (tests)."""
    return json.dumps({"choices": [{"message": {"role": "assistant", "content": content}}]})


class TranscriptWriter:
    """Appends one JSON line per request for later replay."""

    def __init__(self, path: Optional[str]):
        self.path = path

    def record(self, request: dict, response: str, parsed) -> None:
        if self.path is None:
            return
        line = {
            "ts": time.time(),
            "request_sha256": hashlib.sha256(
                json.dumps(request, sort_keys=True).encode()
            ).hexdigest(),
            "request": request,
            "response": response,
            "parsed": parsed,
        }
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(line) + "\n")


class ReplayTransport:
    """Serves recorded transcript responses, keyed by request hash."""

    def __init__(self, transcript_path: str):
        self.by_hash: dict[str, list[str]] = {}
        with open(transcript_path, encoding="utf-8") as f:
            for line in f:
                rec = json.loads(line)
                self.by_hash.setdefault(rec["request_sha256"], []).append(rec["response"])

    def post(self, url, headers, body, timeout_s):
        key = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()
        queue = self.by_hash.get(key)
        if not queue:
            raise TransportError(f"no recorded response for request {key[:12]}")
        return 200, queue.pop(0)


def llm_evaluate_batch(
    cfg: LlmClientConfig,
    space: DesignSpace,
    prior: str,
    history: FidelityDataset,
    queries: Sequence[Sequence[float]],
    transport: Optional[Transport] = None,
    transcript: Optional[TranscriptWriter] = None,
) -> list[float]:
    """One prediction round trip with retry-on-invalid-output.

    Sends the system+user pair to an OpenAI-compatible endpoint, parses
    ``choices[0].message.content`` through the JSON contract, and retries
    with an appended corrective instruction on any transport or parse
    failure. Raises :class:`OracleFailure` after ``max_retries + 1`` attempts.
    """
    transport = transport or HttpTransport()
    transcript = transcript or TranscriptWriter(None)
    system, user = build_prompt(
        space,
        prior,
        history,
        queries,
        include_llm_history=cfg.include_llm_history,
        max_history_rows=cfg.max_history_rows,
    )
    headers = {"Content-Type": "application/json"}
    token = os.environ.get(cfg.api_key_env_var, "")
    if token:
        headers["Authorization"] = f"Bearer {token}"
    url = cfg.endpoint_url.rstrip("/") + "/chat/completions"
    attempts = cfg.max_retries + 1
    last_err: Optional[Exception] = None
    for attempt in range(attempts):
        user_text = user if attempt == 0 else user + "\n\n" + _RETRY_NOTE
        body = {
            "model": cfg.model_name,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user_text},
            ],
            "temperature": cfg.temperature,
        }
        try:
            status, text = transport.post(url, headers, body, cfg.timeout_s)
            if status != 200:
                raise TransportError(f"endpoint returned status {status}", status=status)
            try:
                content = json.loads(text)["choices"][0]["message"]["content"]
            except (json.JSONDecodeError, KeyError, IndexError, TypeError) as e:
                raise MalformedJson(f"unexpected completion envelope: {e}") from e
            values = parse_llm_response(content, len(queries), space.y_min, space.y_max)
            transcript.record(body, text, values)
            return values
        except (TransportError, MalformedJson, SchemaViolation, CountMismatch) as e:
            last_err = e
            transcript.record(body, getattr(e, "raw", str(e)), None)
    raise OracleFailure(attempts, last_err)


def propose_initial_points(
    cfg: LlmClientConfig,
    space: DesignSpace,
    n: int,
    transport: Optional[Transport] = None,
    transcript: Optional[TranscriptWriter] = None,
) -> np.ndarray:
    """Ask the LLM for n high-value starting candidates (raw units, clipped)."""
    transport = transport or HttpTransport()
    transcript = transcript or TranscriptWriter(None)
    system = SYSTEM_PROMPT
    background = cfg.prior_knowledge.strip() or _DEFAULT_BACKGROUND
    dim_lines = "\n".join(
        f"- {d.name}: range [{_fmt(d.lower)}, {_fmt(d.upper)}]"
        + (f", unit {d.unit}" if d.unit else "")
        for d in space.dims
    )
    user = (
        f"Background:\n{background}\n\n"
        f"Parameters:\n{dim_lines}\n\n"
        f"Propose exactly {n} high-potential experimental conditions to measure "
        "first, spread over plausible regions of the search space.\n\n"
        "REQUIRED OUTPUT FORMAT (exact schema):\n"
        '{\n    "data_points": [\n        {\n            "features": [x1, x2, x3]\n        }\n    ]\n}\n\n'
        "CRITICAL FORMATTING REQUIREMENTS:\n"
        "1. Output ONLY the JSON object. No text before or after.\n"
        '2. The root object must contain exactly one key: "data_points" (an array).\n'
        f"3. The \"data_points\" array must contain exactly {n} entries.\n"
        '4. Each entry must be an object with exactly one key "features": an array '
        "of numbers in the same order as the parameter list, each within its range."
    )
    headers = {"Content-Type": "application/json"}
    token = os.environ.get(cfg.api_key_env_var, "")
    if token:
        headers["Authorization"] = f"Bearer {token}"
    url = cfg.endpoint_url.rstrip("/") + "/chat/completions"
    attempts = cfg.max_retries + 1
    last_err: Optional[Exception] = None
    for attempt in range(attempts):
        user_text = user if attempt == 0 else user + "\n\n" + _RETRY_NOTE
        body = {
            "model": cfg.model_name,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user_text},
            ],
            "temperature": cfg.temperature,
        }
        try:
            status, text = transport.post(url, headers, body, cfg.timeout_s)
            if status != 200:
                raise TransportError(f"endpoint returned status {status}", status=status)
            try:
                content = json.loads(text)["choices"][0]["message"]["content"]
                obj = json.loads(content)
                entries = obj["data_points"]
            except Exception as e:
                raise MalformedJson(f"unparseable proposal payload: {e}") from e
            if len(entries) != n:
                raise CountMismatch(n, len(entries))
            lo, hi = space.lower_bounds(), space.upper_bounds()
            pts = np.array([[float(v) for v in e["features"]] for e in entries])
            if pts.shape != (n, space.n_dims):
                raise SchemaViolation("feature vectors have the wrong length")
            pts = np.clip(pts, lo, hi)
            transcript.record(body, text, pts.tolist())
            return pts
        except (TransportError, MalformedJson, SchemaViolation, CountMismatch, KeyError) as e:
            last_err = e
            transcript.record(body, str(e), None)
    raise OracleFailure(attempts, last_err)


# ---------------------------------------------------------------------------
# Oracle implementations
# ---------------------------------------------------------------------------


class FidelityOracle(Protocol):
    fidelity_tag: Fidelity
    cost_per_query: float

    def evaluate_batch(
        self, points: Sequence[Sequence[float]], history: FidelityDataset
    ) -> list[float]:
        ...


@dataclass
class RealObjectiveOracle:
    """Ground-truth oracle wrapping a raw-units objective callable."""

    fn: Callable[[np.ndarray], float]
    fidelity_tag: Fidelity = Fidelity.REAL
    cost_per_query: float = 1.0

    def evaluate_batch(self, points, history=None) -> list[float]:
        return [float(self.fn(np.asarray(p, dtype=float))) for p in points]


@dataclass(frozen=True)
class Scaled:
    c: float = 1.0

    def to_dict(self):
        return {"kind": "scaled", "c": self.c}


@dataclass(frozen=True)
class Biased:
    """Adds a fixed low-frequency sinusoid over the normalized cube."""

    amplitude: float
    frequency: float = 0.5
    phase: float = 0.0

    def to_dict(self):
        return {
            "kind": "biased",
            "amplitude": self.amplitude,
            "frequency": self.frequency,
            "phase": self.phase,
        }


@dataclass(frozen=True)
class Noisy:
    sd: float
    seed: int = 0

    def to_dict(self):
        return {"kind": "noisy", "sd": self.sd, "seed": self.seed}


@dataclass(frozen=True)
class RandomUniform:
    """Uniform draws over the output range, independent of the input."""

    seed: int = 0

    def to_dict(self):
        return {"kind": "random", "seed": self.seed}


Transform = object  # Scaled | Biased | Noisy | RandomUniform


def transform_from_dict(d: dict):
    kind = d["kind"]
    if kind == "scaled":
        return Scaled(d["c"])
    if kind == "biased":
        return Biased(d["amplitude"], d.get("frequency", 0.5), d.get("phase", 0.0))
    if kind == "noisy":
        return Noisy(d["sd"], d.get("seed", 0))
    if kind == "random":
        return RandomUniform(d.get("seed", 0))
    raise ValueError(f"unknown transform kind {kind!r}")


def _point_rng(seed: int, x: np.ndarray) -> np.random.Generator:
    # stateless per-point stream: resume-safe and order-independent
    digest = hashlib.sha256(np.asarray(x, dtype=float).tobytes()).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, key]))


@dataclass
class SyntheticLowFidelity:
    """Cheap stand-in for the LLM oracle, built from the ground truth.

    ``Scaled`` multiplies, ``Biased`` adds a smooth field, ``Noisy`` adds
    seeded Gaussian noise, and ``RandomUniform`` ignores the base entirely.
    """

    space: DesignSpace
    transform: object
    base: Optional[Callable[[np.ndarray], float]] = None
    fidelity_tag: Fidelity = Fidelity.LLM
    cost_per_query: float = 0.0

    def _one(self, x: np.ndarray) -> float:
        t = self.transform
        if isinstance(t, RandomUniform):
            rng = _point_rng(t.seed, x)
            return float(rng.uniform(self.space.y_min, self.space.y_max))
        if self.base is None:
            raise ValueError(f"transform {t!r} needs a base objective")
        base_val = float(self.base(x))
        if isinstance(t, Scaled):
            return t.c * base_val
        if isinstance(t, Biased):
            u = normalize_point(self.space, x)
            field_val = t.amplitude * math.sin(
                2.0 * math.pi * (t.frequency * float(np.sum(u)) + t.phase)
            )
            return base_val + field_val
        if isinstance(t, Noisy):
            if t.sd == 0.0:
                return base_val
            rng = _point_rng(t.seed, x)
            return base_val + float(rng.normal(0.0, t.sd))
        raise ValueError(f"unknown transform {t!r}")

    def evaluate_batch(self, points, history=None) -> list[float]:
        return [self._one(np.asarray(p, dtype=float)) for p in points]


def synthetic_evaluate(oracle: SyntheticLowFidelity, points) -> list[float]:
    """Functional alias for :meth:`SyntheticLowFidelity.evaluate_batch`."""
    return oracle.evaluate_batch(points)


@dataclass
class LlmOracle:
    """LLM-fidelity oracle speaking the chat-completions protocol."""

    cfg: LlmClientConfig
    space: DesignSpace
    transport: Optional[Transport] = None
    transcript: Optional[TranscriptWriter] = None
    fidelity_tag: Fidelity = Fidelity.LLM
    cost_per_query: float = 0.0

    def evaluate_batch(self, points, history: FidelityDataset) -> list[float]:
        return llm_evaluate_batch(
            self.cfg,
            self.space,
            self.cfg.prior_knowledge,
            history,
            points,
            transport=self.transport,
            transcript=self.transcript,
        )
