"""Telemetry data model and wire format.

Ingests, canonicalizes, merges, filters, and persists corpora of per-script
execution traces.  The wire format is JSON Lines: one trace object per line,
see ``parse_telemetry_line`` for the schema.  Corpus files start with a
``{"format": "fp-corpus", "version": 1, ...}`` header line followed by
website lines and then trace lines.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Mapping
from urllib.parse import urlsplit

from .errors import (
    FormatVersionError,
    InvalidIdentifierError,
    SchemaError,
    TelemetryParseError,
    ValidationError,
)

CORPUS_FORMAT = "fp-corpus"
CORPUS_VERSION = 1

# Categories removed by default, mirroring the harmful-content filter applied
# when the website list was assembled.
DEFAULT_EXCLUDED_CATEGORIES = frozenset(
    {
        "Adult Themes",
        "Gambling",
        "Questionable Content",
        "Security Threats",
        "Violence",
        "Security Risks",
    }
)

# Multi-label public suffixes recognized by registrable_domain().  Not a full
# public-suffix list; covers the common country-level second-level domains.
_MULTI_SUFFIXES = frozenset(
    {
        "ac.il", "ac.th", "ac.uk", "co.at", "co.id", "co.il", "co.in",
        "co.jp", "co.kr", "co.nz", "co.th", "co.uk", "co.za", "com.ar",
        "com.au", "com.bd", "com.br", "com.cn", "com.co", "com.eg",
        "com.hk", "com.mx", "com.my", "com.pe", "com.ph", "com.pk",
        "com.pl", "com.sa", "com.sg", "com.tr", "com.tw", "com.ve",
        "com.vn", "edu.au", "edu.cn", "gov.au", "gov.br", "gov.cn",
        "gov.uk", "ne.jp", "net.au", "net.br", "net.cn", "net.pl",
        "or.at", "or.jp", "or.th", "org.au", "org.br", "org.cn",
        "org.il", "org.pl", "org.uk",
    }
)

_RAW_PAYLOAD_FIELDS = frozenset({"raw_args", "raw_returns"})

_AGGREGATE_KEYS = (
    ("calls", "call_count"),
    ("distinct_str_args", "distinct_string_args"),
    ("max_str_len", "max_string_arg_len"),
    ("sum_str_len", "sum_string_arg_len"),
    ("list_ret_len_sum", "list_return_len_sum"),
)


def canonicalize_api_name(raw: str) -> str:
    """Return the canonical form of an API identifier.

    Lowercased and trimmed; whitespace outside bracketed selectors is
    removed, single spaces inside brackets are preserved (e.g.
    ``window.navigator.plugins[pdf viewer]``).  Idempotent.
    """
    if not isinstance(raw, str) or not raw.strip():
        raise InvalidIdentifierError("API identifier must be a nonempty string")
    out: list[str] = []
    depth = 0
    for ch in raw.strip().lower():
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth = max(0, depth - 1)
        if ch.isspace():
            if depth > 0:
                out.append(" ")
            continue
        out.append(ch)
    name = "".join(out)
    if not name:
        raise InvalidIdentifierError(f"API identifier is empty after canonicalization: {raw!r}")
    return name


def registrable_domain(url_or_host: str) -> str:
    """Extract the registrable domain (eTLD+1) from a URL or hostname.

    Uses a compact suffix table rather than the full public-suffix list;
    IP addresses and single-label hosts are returned unchanged.
    """
    host = url_or_host
    if "//" in url_or_host or url_or_host.startswith(("http:", "https:")):
        host = urlsplit(url_or_host).hostname or ""
    host = host.strip().strip(".").lower()
    if not host:
        raise ValidationError(f"cannot extract a hostname from {url_or_host!r}")
    labels = host.split(".")
    if len(labels) <= 2 or all(part.isdigit() for part in labels):
        return host
    if ".".join(labels[-2:]) in _MULTI_SUFFIXES:
        return ".".join(labels[-3:])
    return ".".join(labels[-2:])


@dataclass(frozen=True)
class ApiCallAggregate:
    """Per-API usage summary for one script; never carries raw values."""

    api: str
    call_count: int
    distinct_string_args: int = 0
    max_string_arg_len: int = 0
    sum_string_arg_len: int = 0
    list_return_len_sum: int = 0

    def __post_init__(self):
        for name in (
            "call_count",
            "distinct_string_args",
            "max_string_arg_len",
            "sum_string_arg_len",
            "list_return_len_sum",
        ):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise ValidationError(f"{name} must be a nonnegative integer, got {value!r}")
        if self.call_count < 1:
            raise ValidationError("stored aggregates require call_count >= 1")
        if self.distinct_string_args > self.call_count:
            raise ValidationError(
                f"distinct_string_args ({self.distinct_string_args}) exceeds "
                f"call_count ({self.call_count}) for {self.api}"
            )

    def merged_with(self, other: "ApiCallAggregate") -> "ApiCallAggregate":
        """Combine two aggregates of the same API: sums add, distinct and max
        take the element-wise max (conservative upper bound)."""
        if other.api != self.api:
            raise ValidationError(f"cannot merge aggregates of {self.api} and {other.api}")
        return ApiCallAggregate(
            api=self.api,
            call_count=self.call_count + other.call_count,
            distinct_string_args=max(self.distinct_string_args, other.distinct_string_args),
            max_string_arg_len=max(self.max_string_arg_len, other.max_string_arg_len),
            sum_string_arg_len=self.sum_string_arg_len + other.sum_string_arg_len,
            list_return_len_sum=self.list_return_len_sum + other.list_return_len_sum,
        )


@dataclass(frozen=True)
class ScriptTrace:
    """One script's execution record on one page."""

    script_id: str
    script_url: str
    page_url: str
    site: str
    frame_depth: int
    aggregates: Mapping[str, ApiCallAggregate] = field(default_factory=dict)

    def __post_init__(self):
        if self.frame_depth < 0:
            raise ValidationError("frame_depth must be nonnegative")

    def key(self) -> tuple[str, str, str]:
        return (self.site, self.page_url, self.script_id)

    def call_count(self, api: str) -> int:
        agg = self.aggregates.get(api)
        return agg.call_count if agg else 0


@dataclass(frozen=True)
class WebsiteRecord:
    """One website of the visit list, with rank and category metadata."""

    site: str
    rank: int
    category: str = "unknown"
    pages: tuple[str, ...] = ()
    http_status: int | None = None

    def __post_init__(self):
        if self.rank < 1:
            raise ValidationError(f"rank must be >= 1, got {self.rank}")


@dataclass
class Corpus:
    """A labeled collection of websites and the traces observed on them."""

    label: str
    websites: list[WebsiteRecord] = field(default_factory=list)
    traces: list[ScriptTrace] = field(default_factory=list)

    def site_set(self) -> set[str]:
        return {w.site for w in self.websites}

    def website(self, site: str) -> WebsiteRecord:
        for record in self.websites:
            if record.site == site:
                return record
        raise ValidationError(f"site {site!r} not in corpus")

    def validate(self) -> None:
        known = self.site_set()
        for trace in self.traces:
            if trace.site not in known:
                raise ValidationError(
                    f"trace for {trace.site!r} has no matching website record"
                )
        seen: set[tuple[str, str, str]] = set()
        for trace in self.traces:
            key = trace.key()
            if key in seen:
                raise ValidationError(f"duplicate trace triple {key}")
            seen.add(key)


def _require(obj: dict, name: str, line_no: int | None = None):
    if name not in obj:
        where = f" (line {line_no})" if line_no is not None else ""
        raise SchemaError(f"missing required field {name!r}{where}", field=name)
    return obj[name]


def _reject_raw_payload(obj: dict) -> None:
    for key in _RAW_PAYLOAD_FIELDS:
        if key in obj:
            raise ValidationError(
                f"field {key!r} is not accepted: raw argument/return values are never persisted"
            )


def parse_telemetry_line(line: str, line_no: int | None = None) -> ScriptTrace:
    """Decode one telemetry JSON line into a validated ScriptTrace.

    Schema (one object per line)::

        {"script_id": hex, "script_url": str, "page_url": str, "site": str,
         "frame_depth": int, "apis": [{"name": str, "calls": int,
         "distinct_str_args": int, "max_str_len": int, "sum_str_len": int,
         "list_ret_len_sum": int}]}

    Unknown fields are ignored, except ``raw_args``/``raw_returns`` which are
    rejected outright so raw values can never reach a spool file.  API names
    are canonicalized; aggregates with zero calls are dropped; duplicate API
    entries are merged.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TelemetryParseError(
            f"malformed telemetry JSON at byte offset {exc.pos}: {exc.msg}",
            offset=exc.pos,
        ) from exc
    if not isinstance(obj, dict):
        raise SchemaError("telemetry line must be a JSON object")
    _reject_raw_payload(obj)

    script_id = _require(obj, "script_id", line_no)
    script_url = _require(obj, "script_url", line_no)
    page_url = _require(obj, "page_url", line_no)
    site = _require(obj, "site", line_no)
    frame_depth = _require(obj, "frame_depth", line_no)
    apis = _require(obj, "apis", line_no)

    if not isinstance(script_id, str) or not script_id:
        raise ValidationError("script_id must be a nonempty string")
    if not isinstance(frame_depth, int) or isinstance(frame_depth, bool) or frame_depth < 0:
        raise ValidationError(f"frame_depth must be a nonnegative integer, got {frame_depth!r}")
    if not isinstance(apis, list):
        raise SchemaError("apis must be a list", field="apis")

    expected_site = registrable_domain(page_url)
    if site != expected_site:
        raise ValidationError(
            f"site {site!r} does not match registrable domain {expected_site!r} of page_url"
        )

    aggregates: dict[str, ApiCallAggregate] = {}
    for entry in apis:
        if not isinstance(entry, dict):
            raise SchemaError("apis entries must be objects", field="apis")
        _reject_raw_payload(entry)
        name = canonicalize_api_name(_require(entry, "name", line_no))
        calls = _require(entry, "calls", line_no)
        if not isinstance(calls, int) or isinstance(calls, bool) or calls < 0:
            raise ValidationError(f"calls must be a nonnegative integer, got {calls!r}")
        if calls == 0:
            continue
        kwargs = {}
        for wire_key, field_name in _AGGREGATE_KEYS[1:]:
            value = entry.get(wire_key, 0)
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise ValidationError(f"{wire_key} must be a nonnegative integer, got {value!r}")
            kwargs[field_name] = value
        agg = ApiCallAggregate(api=name, call_count=calls, **kwargs)
        aggregates[name] = aggregates[name].merged_with(agg) if name in aggregates else agg

    return ScriptTrace(
        script_id=script_id,
        script_url=str(script_url),
        page_url=str(page_url),
        site=site,
        frame_depth=frame_depth,
        aggregates=aggregates,
    )


def merge_traces(traces: Iterable[ScriptTrace]) -> list[ScriptTrace]:
    """Merge traces sharing (site, page_url, script_id) into one record each.

    Additive fields add; distinct counts and max lengths take the max.  The
    result is order-independent: output is sorted by key, and tie-breaking on
    metadata uses min(), so merging in any order yields the same traces.
    """
    merged: dict[tuple[str, str, str], ScriptTrace] = {}
    for trace in traces:
        key = trace.key()
        if key not in merged:
            merged[key] = trace
            continue
        base = merged[key]
        aggregates = dict(base.aggregates)
        for api, agg in trace.aggregates.items():
            aggregates[api] = aggregates[api].merged_with(agg) if api in aggregates else agg
        merged[key] = ScriptTrace(
            script_id=base.script_id,
            script_url=min(base.script_url, trace.script_url),
            page_url=base.page_url,
            site=base.site,
            frame_depth=min(base.frame_depth, trace.frame_depth),
            aggregates=aggregates,
        )
    return [merged[key] for key in sorted(merged)]


def filter_websites_by_category(
    corpus: Corpus, excluded: frozenset[str] | set[str] | None = None
) -> Corpus:
    """Drop websites whose category is excluded, along with their traces.

    ``excluded`` defaults to the harmful-content category set; the "unknown"
    category is never part of the default.
    """
    if excluded is None:
        excluded = DEFAULT_EXCLUDED_CATEGORIES
    websites = [w for w in corpus.websites if w.category not in excluded]
    kept = {w.site for w in websites}
    traces = [t for t in corpus.traces if t.site in kept]
    return Corpus(label=corpus.label, websites=websites, traces=traces)


def trace_to_obj(trace: ScriptTrace) -> dict:
    """Serialize a trace to the wire-format JSON object."""
    apis = []
    for name in sorted(trace.aggregates):
        agg = trace.aggregates[name]
        apis.append(
            {
                "name": agg.api,
                "calls": agg.call_count,
                "distinct_str_args": agg.distinct_string_args,
                "max_str_len": agg.max_string_arg_len,
                "sum_str_len": agg.sum_string_arg_len,
                "list_ret_len_sum": agg.list_return_len_sum,
            }
        )
    return {
        "script_id": trace.script_id,
        "script_url": trace.script_url,
        "page_url": trace.page_url,
        "site": trace.site,
        "frame_depth": trace.frame_depth,
        "apis": apis,
    }


def _dump_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def save_corpus(corpus: Corpus, path) -> None:
    """Write a corpus file: header line, website lines, then trace lines.

    Traces are written in canonical key order so identical corpora are
    byte-identical on disk.
    """
    corpus.validate()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            _dump_line({"format": CORPUS_FORMAT, "version": CORPUS_VERSION, "label": corpus.label})
            + "\n"
        )
        for website in sorted(corpus.websites, key=lambda w: (w.rank, w.site)):
            obj = {
                "site": website.site,
                "rank": website.rank,
                "category": website.category,
                "pages": list(website.pages),
            }
            if website.http_status is not None:
                obj["http_status"] = website.http_status
            fh.write(_dump_line(obj) + "\n")
        for trace in sorted(corpus.traces, key=ScriptTrace.key):
            fh.write(_dump_line(trace_to_obj(trace)) + "\n")


def load_corpus(path) -> Corpus:
    """Read a corpus file written by ``save_corpus``."""
    with open(path, "r", encoding="utf-8") as fh:
        return read_corpus(fh)


def read_corpus(fh: IO[str]) -> Corpus:
    header_line = fh.readline()
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError as exc:
        raise FormatVersionError(f"corpus header is not valid JSON: {exc.msg}") from exc
    if not isinstance(header, dict) or header.get("format") != CORPUS_FORMAT:
        raise FormatVersionError("not a corpus file: bad format header")
    if header.get("version") != CORPUS_VERSION:
        raise FormatVersionError(
            f"unsupported corpus version {header.get('version')!r}, expected {CORPUS_VERSION}"
        )
    corpus = Corpus(label=str(header.get("label", "")))
    for line_no, line in enumerate(fh, start=2):
        if not line.strip():
            continue
        if '"script_id"' in line:
            corpus.traces.append(parse_telemetry_line(line, line_no=line_no))
        else:
            obj = json.loads(line)
            corpus.websites.append(
                WebsiteRecord(
                    site=obj["site"],
                    rank=int(obj["rank"]),
                    category=obj.get("category", "unknown"),
                    pages=tuple(obj.get("pages", ())),
                    http_status=obj.get("http_status"),
                )
            )
    corpus.validate()
    return corpus


def corpora_equal(a: Corpus, b: Corpus) -> bool:
    """Structural equality, order-insensitive on traces and websites."""
    if a.label != b.label:
        return False
    if sorted(a.websites, key=lambda w: w.site) != sorted(b.websites, key=lambda w: w.site):
        return False
    at = {t.key(): t for t in a.traces}
    bt = {t.key(): t for t in b.traces}
    if at.keys() != bt.keys():
        return False
    return all(
        at[k].aggregates == bt[k].aggregates
        and at[k].script_url == bt[k].script_url
        and at[k].frame_depth == bt[k].frame_depth
        for k in at
    )


def relabel(corpus: Corpus, label: str) -> Corpus:
    return replace(corpus, label=label)
