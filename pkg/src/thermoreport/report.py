"""Structured conservation reports: prompt, endpoint client, parser.

The report schema has three fixed sections: (1) Thermal Output
Analysis, (2) Authenticity Assessment, (3) Defect Locations and Likely
Causes.  A deterministic offline generator fills the same schema from
the metrics record so the whole pipeline runs and tests without any
model endpoint; the hosted path speaks OpenAI-compatible chat
completions with images attached as base64 data URLs in a fixed order.
"""

from __future__ import annotations

import base64
import os
import re
import time
from dataclasses import dataclass

import requests

from .detect import Region
from .errors import InputError, ReportSchemaError, TransportError
from .fusion import MetricsRecord

__all__ = [
    "DISCLAIMER",
    "PromptSpec",
    "VlmInputSet",
    "EndpointConfig",
    "S1Finding",
    "AuthenticityAssessment",
    "DefectEntry",
    "StructuredReport",
    "build_prompt",
    "call_vlm",
    "parse_report",
    "generate_offline_report",
    "report_to_dict",
]

DISCLAIMER = "thermography alone cannot establish authenticity"
NO_ANOMALY_SENTENCE = "No consensus anomalies detected"

SECTION_TITLES = (
    "Thermal Output Analysis",
    "Authenticity Assessment",
    "Defect Locations and Likely Causes",
)

# hosted models vary in wording for the first header; accept both forms
_SECTION_PATTERNS = (
    r"(?:thermal\s+output\s+analysis|analysis\s+of\s+thermal\s+outputs)",
    r"authenticity\s+assessment",
    r"defect\s+locations\s+and\s+likely\s+causes",
)

KNOWN_MODALITIES = ("PCT", "TSR", "PPT", "CONSENSUS")

RETRYABLE_STATUS = {429, 500, 502, 503, 504}


@dataclass(frozen=True)
class PromptSpec:
    """Section templates plus the epistemic system constraints."""

    s1: str = (
        "Interpret each modality in turn (PCT, TSR, PPT, consensus): give the "
        "spatial localization of notable responses and a plausible physical "
        "explanation for each."
    )
    s2: str = (
        "Discuss authenticity-related implications cautiously, separating "
        "direct observations from hypotheses."
    )
    s3: str = (
        "List each defect as a bullet giving its location, the supporting "
        "modality or modalities, and a tentative physical cause."
    )
    system_constraints: str = (
        "Reason only from the supplied evidence and state uncertainty "
        "explicitly. Acknowledge that " + DISCLAIMER + ". Never report a "
        "defect that is absent from the consensus evidence."
    )

    def __post_init__(self) -> None:
        for name in ("s1", "s2", "s3", "system_constraints"):
            if not getattr(self, name).strip():
                raise InputError(f"prompt section {name} must be non-empty")
        if DISCLAIMER not in self.system_constraints.lower():
            raise InputError("system_constraints must contain the authenticity disclaimer")


@dataclass(frozen=True)
class VlmInputSet:
    """Ordered multimodal evidence for one report request.

    The four mandatory images are fixed in the order (PCT, TSR, PPT,
    consensus); the optical reference follows when present.  Consensus
    regions ride along so the offline generator can enumerate defects.
    """

    pct_map_png: bytes
    tsr_map_png: bytes
    ppt_map_png: bytes
    consensus_png: bytes
    metrics: MetricsRecord
    optical_png: bytes | None = None
    regions: tuple[Region, ...] = ()

    def __post_init__(self) -> None:
        for name in ("pct_map_png", "tsr_map_png", "ppt_map_png", "consensus_png"):
            if not getattr(self, name):
                raise InputError(f"{name} must be non-empty PNG bytes")

    def ordered_images(self) -> tuple[bytes, ...]:
        images = (self.pct_map_png, self.tsr_map_png, self.ppt_map_png, self.consensus_png)
        if self.optical_png is not None:
            images = images + (self.optical_png,)
        return images


@dataclass(frozen=True)
class EndpointConfig:
    """Connection settings for an OpenAI-compatible chat endpoint."""

    base_url: str = "http://127.0.0.1:8000/v1"
    model: str = "local-vlm"
    api_key_env: str = "THERMO_VLM_API_KEY"
    api_key_required: bool = False
    timeout_s: float = 60.0
    max_retries: int = 3
    retry_base_delay_s: float = 1.0
    offline: bool = False

    def __post_init__(self) -> None:
        if self.timeout_s <= 0:
            raise InputError("timeout_s must be positive")
        if self.max_retries < 0:
            raise InputError("max_retries must be >= 0")
        if self.retry_base_delay_s < 0:
            raise InputError("retry_base_delay_s must be >= 0")


# ---------------------------------------------------------------------------
# prompt
# ---------------------------------------------------------------------------

def build_prompt(metrics: MetricsRecord, spec: PromptSpec | None = None) -> str:
    """Deterministic prompt embedding the metrics and the three sections."""
    spec = spec or PromptSpec()
    lines = [
        "You are a conservation-imaging assistant interpreting pulsed-thermography "
        "evidence from a panel painting.",
        "",
        f"Quantitative evidence (ROI {metrics.roi_width}x{metrics.roi_height} px):",
        f"- pulse onset frame {metrics.t0}; peak-response frame {metrics.t_peak}",
        f"- base-median range {metrics.base_median_min:.2f} to {metrics.base_median_max:.2f}",
    ]
    for key, area in sorted(metrics.modality_areas.items()):
        lines.append(f"- {key} mask area: {area:.2f}% of the ROI")
    lines.append(
        f"- consensus mask: {metrics.consensus_area_percent:.2f}% of the ROI in "
        f"{metrics.consensus_region_count} regions"
    )
    lines += [
        "",
        "The attached images are, in order: (1) representative PCT component map, "
        "(2) TSR slope map, (3) PPT phase map, (4) consensus anomaly mask, and "
        "(5, when present) the optical reference.",
        "",
        "Respond with exactly three numbered sections:",
        f"1. {SECTION_TITLES[0]}",
        spec.s1,
        f"2. {SECTION_TITLES[1]}",
        spec.s2,
        f"3. {SECTION_TITLES[2]}",
        spec.s3,
        "",
        "System constraints:",
        spec.system_constraints,
    ]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# offline generator
# ---------------------------------------------------------------------------

_GRID_PHRASES = (
    ("upper-left", "upper-center", "upper-right"),
    ("center-left", "center", "center-right"),
    ("lower-left", "lower-center", "lower-right"),
)


def _grid_phrase(region: Region, roi_width: int, roi_height: int) -> str:
    cx, cy = region.centroid
    col = min(2, int(3.0 * cx / roi_width))
    row = min(2, int(3.0 * cy / roi_height))
    return f"{_GRID_PHRASES[row][col]} region"


def _cause_phrase(region: Region) -> str:
    if region.mean_z >= 0:
        return (
            "retarded local cooling consistent with an insulating discontinuity "
            "such as a detachment or void"
        )
    return (
        "accelerated local cooling consistent with denser or better-coupled "
        "material such as a consolidated repair"
    )


def generate_offline_report(metrics: MetricsRecord, regions: tuple[Region, ...] | list) -> str:
    """Template-filled report satisfying the full three-section schema.

    Section 3 bullets are in bijection with the consensus regions, so
    the generator can never describe a defect the mask does not contain.
    """
    areas = dict(metrics.modality_areas)
    pct = areas.get("pct_mag", 0.0)
    slope = areas.get("tsr_slope", 0.0)
    amp = areas.get("ppt_amp", 0.0)
    edge = areas.get("ppt_phase_edge", 0.0)
    cons = metrics.consensus_area_percent
    n = metrics.consensus_region_count
    out = [
        f"1. {SECTION_TITLES[0]}",
        f"- PCT: top-percentile magnitude response over {pct:.2f}% of the ROI; "
        "spatially confined departures from the dominant temporal variance pattern.",
        f"- TSR: cooling-slope mask covers {slope:.2f}% of the ROI; local decay "
        "rates deviate from the uniform diffusive trend of the surrounding surface.",
        f"- PPT: amplitude mask covers {amp:.2f}% and the phase-edge mask "
        f"{edge:.2f}% of the ROI; phase discontinuities outline regions of altered "
        "subsurface response.",
        f"- Consensus: {cons:.2f}% of the ROI across {n} regions is supported by "
        "both the cooling-slope and phase-edge indicators.",
        "",
        f"2. {SECTION_TITLES[1]}",
        f"Observations: cross-modality agreement is limited to {cons:.2f}% of the "
        f"ROI in {n} regions; pulse onset frame {metrics.t0} and peak-response "
        f"frame {metrics.t_peak} bracket the transient used by every transform.",
        "Hypotheses: the flagged regions may reflect adhesion differences, void "
        "formation, or past interventions; these readings are hypotheses pending "
        "confirmation by complementary techniques.",
        f"Disclaimer: the maps characterize subsurface thermal behavior only, and "
        f"{DISCLAIMER}.",
        "",
        f"3. {SECTION_TITLES[2]}",
    ]
    if not regions:
        out.append(
            f"- {NO_ANOMALY_SENTENCE}; the examined ROI shows no cross-modality "
            "agreement above threshold."
        )
    else:
        for r in regions:
            out.append(
                f"- Location: {_grid_phrase(r, metrics.roi_width, metrics.roi_height)} "
                f"(centroid x={r.centroid[0]:.1f}, y={r.centroid[1]:.1f}; "
                f"area {r.area} px). Supporting modalities: TSR, PPT. "
                f"Likely cause: {_cause_phrase(r)}."
            )
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class S1Finding:
    modality: str
    location_text: str
    physical_interpretation: str


@dataclass(frozen=True)
class AuthenticityAssessment:
    observations: tuple[str, ...]
    hypotheses: tuple[str, ...]
    disclaimer: str


@dataclass(frozen=True)
class DefectEntry:
    location: str
    supporting_modalities: tuple[str, ...]
    tentative_cause: str


@dataclass(frozen=True)
class StructuredReport:
    s1_findings: tuple[S1Finding, ...]
    s2_authenticity: AuthenticityAssessment
    s3_defects: tuple[DefectEntry, ...]
    raw_text: str


_LOCATION_CLAUSE = re.compile(
    r"(region|edge|corner|center|centre|background|interior|border|upper|lower"
    r"|left|right|top|bottom|figure)",
    re.IGNORECASE,
)

_FINDING_LINE = re.compile(
    r"^\s*(?:[-*•]\s*)?[*_]*(PCT|TSR|PPT|Consensus)[*_]*\s*:\s*(.+)$",
    re.IGNORECASE | re.MULTILINE,
)

_LOCATION_LABEL = re.compile(r"[*_]*location[*_]*\s*:", re.IGNORECASE)
_CAUSE_LABEL = re.compile(r"[*_]*(?:likely|tentative)\s+causes?[*_]*\s*:", re.IGNORECASE)
_MODALITY_TOKEN = re.compile(r"\b(PCT|TSR|PPT|consensus)\b", re.IGNORECASE)


def _find_sections(text: str) -> list[str]:
    spans = []
    for title, pattern in zip(SECTION_TITLES, _SECTION_PATTERNS):
        m = re.search(
            r"(?im)^.{0,16}?" + pattern + r".*$", text
        )
        if m is None:
            raise ReportSchemaError(f"missing section: {title}")
        spans.append((m.start(), m.end()))
    if not spans[0][0] <= spans[1][0] <= spans[2][0]:
        raise ReportSchemaError("sections out of order")
    bodies = [
        text[spans[0][1] : spans[1][0]],
        text[spans[1][1] : spans[2][0]],
        text[spans[2][1] :],
    ]
    return [b.strip() for b in bodies]


def _extract_location_clause(text: str) -> str:
    for clause in re.split(r"[;.]", text):
        if _LOCATION_CLAUSE.search(clause):
            return clause.strip()
    return ""


def _parse_s1(body: str) -> tuple[S1Finding, ...]:
    findings = []
    for m in _FINDING_LINE.finditer(body):
        modality = m.group(1).upper()
        content = m.group(2).strip()
        findings.append(
            S1Finding(
                modality=modality,
                location_text=_extract_location_clause(content),
                physical_interpretation=content,
            )
        )
    return tuple(findings)


def _parse_s2(body: str) -> AuthenticityAssessment:
    if DISCLAIMER not in body.lower():
        raise ReportSchemaError(
            "authenticity section is missing the required disclaimer "
            f"({DISCLAIMER!r})"
        )
    labeled_obs = re.search(r"(?is)observations?\s*:\s*(.+?)(?=hypothes|disclaimer|$)", body)
    labeled_hyp = re.search(r"(?is)hypothes[ei]s\s*:\s*(.+?)(?=disclaimer|$)", body)
    sentences = [s.strip() for s in re.split(r"(?<=[.;])\s+", body) if s.strip()]
    if labeled_obs:
        observations = tuple(
            s.strip() for s in re.split(r"(?<=[.;])\s+", labeled_obs.group(1)) if s.strip()
        )
    else:
        observations = tuple(sentences)
    if labeled_hyp:
        hypotheses = tuple(
            s.strip() for s in re.split(r"(?<=[.;])\s+", labeled_hyp.group(1)) if s.strip()
        )
    else:
        hedge = re.compile(r"\b(may|might|could|possible|possibly|suggest)", re.IGNORECASE)
        hypotheses = tuple(s for s in sentences if hedge.search(s))
    disclaimer_sentence = next(
        (s for s in sentences if DISCLAIMER in s.lower()), DISCLAIMER
    )
    return AuthenticityAssessment(observations, hypotheses, disclaimer_sentence)


def _parse_s3(body: str) -> tuple[DefectEntry, ...]:
    if NO_ANOMALY_SENTENCE.lower() in body.lower():
        return ()
    label_starts = [m.start() for m in _LOCATION_LABEL.finditer(body)]
    if label_starts:
        chunks = [
            body[start : label_starts[i + 1] if i + 1 < len(label_starts) else len(body)]
            for i, start in enumerate(label_starts)
        ]
    else:
        chunks = [
            line for line in body.splitlines() if re.match(r"\s*[-*•]\s*\S", line)
        ]
    if not chunks:
        raise ReportSchemaError("defect section has no parseable entries")
    entries = []
    for chunk in chunks:
        label = _LOCATION_LABEL.search(chunk)
        if label:
            rest = chunk[label.end() :].lstrip()
            first_line = rest.splitlines()[0] if rest else ""
            location = first_line.strip().rstrip(".")
        else:
            location = _extract_location_clause(chunk)
        modalities = tuple(
            sorted({m.group(1).upper() for m in _MODALITY_TOKEN.finditer(chunk)})
        )
        if not modalities:
            raise ReportSchemaError(
                "defect entry lists no supporting modality from the known set: "
                + chunk.strip()[:80]
            )
        cause_m = _CAUSE_LABEL.search(chunk)
        if cause_m:
            cause = chunk[cause_m.end() :].strip().rstrip(".")
        else:
            cause = chunk[label.end() :].strip() if label else chunk.strip()
        entries.append(DefectEntry(location, modalities, cause))
    return tuple(entries)


def parse_report(raw: str) -> StructuredReport:
    """Parse and validate model output against the three-section schema.

    Header detection is lenient on numbering/markdown style but strict
    on section presence; validation failures name the broken invariant.
    """
    s1_body, s2_body, s3_body = _find_sections(raw)
    for title, body in zip(SECTION_TITLES, (s1_body, s2_body, s3_body)):
        if not body:
            raise ReportSchemaError(f"section {title!r} is empty")
    return StructuredReport(
        s1_findings=_parse_s1(s1_body),
        s2_authenticity=_parse_s2(s2_body),
        s3_defects=_parse_s3(s3_body),
        raw_text=raw,
    )


def report_to_dict(report: StructuredReport) -> dict:
    """JSON-ready view of a parsed report."""
    return {
        "s1_findings": [
            {
                "modality": f.modality,
                "location_text": f.location_text,
                "physical_interpretation": f.physical_interpretation,
            }
            for f in report.s1_findings
        ],
        "s2_authenticity": {
            "observations": list(report.s2_authenticity.observations),
            "hypotheses": list(report.s2_authenticity.hypotheses),
            "disclaimer": report.s2_authenticity.disclaimer,
        },
        "s3_defects": [
            {
                "location": d.location,
                "supporting_modalities": list(d.supporting_modalities),
                "tentative_cause": d.tentative_cause,
            }
            for d in report.s3_defects
        ],
    }


# ---------------------------------------------------------------------------
# endpoint client
# ---------------------------------------------------------------------------

def _data_url(png: bytes) -> str:
    return "data:image/png;base64," + base64.b64encode(png).decode("ascii")


def call_vlm(input_set: VlmInputSet, prompt: str, endpoint: EndpointConfig) -> str:
    """Submit the evidence and prompt; return the first choice's text.

    Transient failures (connection errors, 5xx, 429) are retried up to
    max_retries times with exponential backoff.  Offline mode skips the
    network entirely and delegates to the deterministic generator.
    """
    if endpoint.offline:
        return generate_offline_report(input_set.metrics, input_set.regions)

    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(endpoint.api_key_env, "")
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    elif endpoint.api_key_required:
        raise TransportError(
            f"endpoint requires credentials but {endpoint.api_key_env} is not set"
        )

    content: list[dict] = [{"type": "text", "text": prompt}]
    for png in input_set.ordered_images():
        content.append({"type": "image_url", "image_url": {"url": _data_url(png)}})
    payload = {
        "model": endpoint.model,
        "temperature": 0,
        "messages": [{"role": "user", "content": content}],
    }
    url = endpoint.base_url.rstrip("/") + "/chat/completions"

    last_error: Exception | None = None
    for attempt in range(endpoint.max_retries + 1):
        if attempt:
            time.sleep(endpoint.retry_base_delay_s * 2 ** (attempt - 1))
        try:
            resp = requests.post(url, json=payload, headers=headers, timeout=endpoint.timeout_s)
        except requests.RequestException as exc:
            last_error = exc
            continue
        if resp.status_code in RETRYABLE_STATUS:
            last_error = TransportError(f"endpoint returned {resp.status_code}")
            continue
        if resp.status_code != 200:
            raise TransportError(f"endpoint returned {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed endpoint response: {exc}") from exc
        if not isinstance(text, str):
            raise TransportError("endpoint response content is not text")
        return text
    raise TransportError(
        f"endpoint unreachable after {endpoint.max_retries + 1} attempts: {last_error}"
    )
