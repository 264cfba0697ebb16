"""Deterministic synthetic corpora with controllable fingerprinting behavior.

Generates paired "real-like"/"crawl-like" corpora: the crawl twin is derived
by suppressing fingerprinting traces per a reason-keyed policy (failed
visits, auth pages, content pages, home pages), simulating what an automated
crawler fails to trigger.  Fingerprinting traces on interaction-gated pages
carry extra API vectors that never appear in the crawl corpus, so a model
fine-tuned on the real corpus has genuinely new signal to learn.

Every generated fingerprinting trace is checked against the heuristics at
generation time; every benign trace must label clean.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ValidationError
from .heuristics import label_script
from .telemetry import ApiCallAggregate, Corpus, ScriptTrace, WebsiteRecord

FP_PROFILE_KINDS = ("canvas_fp", "canvas_font_fp", "webrtc_fp", "audio_fp")
BENIGN_PROFILE_KINDS = ("benign_canvas", "benign_misc")

DEFAULT_CATEGORIES = (
    "E-commerce",
    "Shopping",
    "News",
    "Technology",
    "Entertainment",
    "Finance",
    "Travel",
    "Education",
    "Video Streaming",
    "Society & Lifestyle",
)

DEFAULT_PROFILE_MIX = {
    "canvas_fp": 0.55,
    "audio_fp": 0.18,
    "webrtc_fp": 0.12,
    "canvas_font_fp": 0.05,
    "canvas_fp+audio_fp": 0.10,
}

# Interaction-triggered vectors: appear only on gated pages, hence absent
# from any crawl corpus whose policy suppresses those pages.
INTERACTION_EXTRA_APIS = (
    "audiocontext.sinkid",
    "audiocontext.onsinkchange",
    "rtcpeerconnection.getconfiguration",
    "rtcpeerconnection.sctp",
    "rtcpeerconnection.gettransceivers",
    "rtcpeerconnection.tostring",
    "rtcicecandidate.address",
    "window.navigator.plugins[pdf viewer]",
    "window.navigator.plugins[chrome pdf viewer]",
    "offlineaudiocontext.hasownproperty",
)

_PAGE_KINDS = ("home", "auth", "content")


@dataclass(frozen=True)
class BehaviorProfile:
    """A named script behavior with call-count intensity ranges.

    The range drives the plain API-call draws; threshold-bearing draws (the
    font and measureText counts of the canvas-font profile) keep their own
    bounds so the profile always lands on the intended side of the
    detectors.
    """

    kind: str
    min_calls: int = 1
    max_calls: int = 4

    def __post_init__(self):
        if self.kind not in FP_PROFILE_KINDS + BENIGN_PROFILE_KINDS:
            raise ConfigError(f"unknown behavior profile {self.kind!r}")
        if not 1 <= self.min_calls <= self.max_calls:
            raise ConfigError("profile call range must satisfy 1 <= min <= max")


DEFAULT_PROFILES = {
    "canvas_fp": BehaviorProfile("canvas_fp", 1, 3),
    "canvas_font_fp": BehaviorProfile("canvas_font_fp", 1, 5),
    "webrtc_fp": BehaviorProfile("webrtc_fp", 1, 4),
    "audio_fp": BehaviorProfile("audio_fp", 1, 4),
    "benign_canvas": BehaviorProfile("benign_canvas", 1, 6),
    "benign_misc": BehaviorProfile("benign_misc", 1, 5),
}


@dataclass(frozen=True)
class SuppressionPolicy:
    """Per-reason probabilities that a fingerprinting site's scripts are
    absent from the crawl corpus."""

    failed_fraction: float = 0.0
    auth_fraction: float = 0.0
    content_fraction: float = 0.0
    home_fraction: float = 0.0

    def __post_init__(self):
        for name in ("failed_fraction", "auth_fraction", "content_fraction", "home_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")


def _calls(rng: np.random.Generator, lo: int, hi: int) -> int:
    return int(rng.integers(lo, hi + 1))


def _agg(api: str, calls: int, distinct: int = 0, max_len: int = 0, sum_len: int = 0,
         list_len: int = 0) -> ApiCallAggregate:
    return ApiCallAggregate(
        api=api,
        call_count=calls,
        distinct_string_args=min(distinct, calls),
        max_string_arg_len=max_len,
        sum_string_arg_len=sum_len,
        list_return_len_sum=list_len,
    )


def _profile_aggregates(
    kind: str,
    rng: np.random.Generator,
    profile: BehaviorProfile | None = None,
) -> dict[str, ApiCallAggregate]:
    profile = profile or DEFAULT_PROFILES.get(kind)
    if profile is None or profile.kind != kind:
        raise ConfigError(f"no behavior profile for kind {kind!r}")
    lo, hi = profile.min_calls, profile.max_calls
    aggs: dict[str, ApiCallAggregate] = {}

    def put(api, calls, **kwargs):
        if calls > 0:
            aggs[api] = _agg(api, calls, **kwargs)

    if kind == "canvas_fp":
        text_calls = _calls(rng, lo, hi)
        put("canvasrenderingcontext2d.filltext", text_calls,
            distinct=1, max_len=_calls(rng, 8, 24), sum_len=_calls(rng, 8, 40))
        put("canvasrenderingcontext2d.fillstyle", _calls(rng, lo, hi),
            distinct=1, max_len=7, sum_len=7)
        put("htmlcanvaselement.todataurl", _calls(rng, lo, hi))
        put("htmlcanvaselement.getcontext", 1, distinct=1, max_len=2, sum_len=2)
    elif kind == "canvas_font_fp":
        distinct_fonts = _calls(rng, 21, 45)
        setter_calls = distinct_fonts + _calls(rng, lo, hi + 5)
        put("canvasrenderingcontext2d.font", setter_calls,
            distinct=distinct_fonts, max_len=24, sum_len=setter_calls * 12)
        put("canvasrenderingcontext2d.measuretext", _calls(rng, 21, 60),
            distinct=_calls(rng, 1, 5), max_len=12, sum_len=120)
        put("htmlcanvaselement.getcontext", 1, distinct=1, max_len=2, sum_len=2)
    elif kind == "webrtc_fp":
        if rng.random() < 0.5:
            put("rtcpeerconnection.createdatachannel", _calls(rng, lo, hi), distinct=1,
                max_len=8, sum_len=8)
        else:
            put("rtcpeerconnection.createoffer", _calls(rng, lo, hi))
        if rng.random() < 0.5:
            put("rtcpeerconnection.onicecandidate", _calls(rng, lo, hi))
        else:
            put("rtcpeerconnection.localdescription", _calls(rng, lo, hi))
    elif kind == "audio_fp":
        apis = list(rng.choice(
            ["audiocontext.createoscillator", "audiocontext.createdynamicscompressor",
             "audiocontext.destination", "offlineaudiocontext.startrendering",
             "offlineaudiocontext.oncomplete"],
            size=_calls(rng, 1, 3), replace=False))
        for api in apis:
            put(api, _calls(rng, lo, hi))
    elif kind == "benign_canvas":
        # Uses the canvas like a chart library: either no extraction call, or
        # extraction guarded by save/restore.
        put("canvasrenderingcontext2d.filltext", _calls(rng, lo, hi),
            distinct=2, max_len=16, sum_len=48)
        put("canvasrenderingcontext2d.fillstyle", _calls(rng, lo, hi),
            distinct=2, max_len=7, sum_len=14)
        if rng.random() < 0.5:
            put("htmlcanvaselement.todataurl", _calls(rng, 1, 2))
            put("canvasrenderingcontext2d.save", _calls(rng, 1, 4))
            put("canvasrenderingcontext2d.restore", _calls(rng, 1, 4))
        put("canvasrenderingcontext2d.measuretext", _calls(rng, 1, 15),
            distinct=1, max_len=10, sum_len=40)
    elif kind == "benign_misc":
        for api in ("window.navigator.useragent", "window.navigator.platform",
                    "window.screen.width", "window.screen.height",
                    "window.navigator.language"):
            if rng.random() < 0.7:
                put(api, _calls(rng, lo, hi))
        if not aggs:
            put("window.navigator.useragent", 1)
    else:
        raise ConfigError(f"unknown behavior profile {kind!r}")
    return aggs


def _merge_aggs(parts: list[dict[str, ApiCallAggregate]]) -> dict[str, ApiCallAggregate]:
    out: dict[str, ApiCallAggregate] = {}
    for part in parts:
        for api, agg in part.items():
            out[api] = out[api].merged_with(agg) if api in out else agg
    return out


def build_profile_trace(
    mix_key: str,
    rng: np.random.Generator,
    site: str,
    page_url: str,
    script_idx: int,
    extra_apis: tuple[str, ...] = (),
    frame_depth: int = 0,
    profiles: dict[str, BehaviorProfile] | None = None,
) -> ScriptTrace:
    """Construct one trace for a profile key ("canvas_fp", "canvas_fp+audio_fp", ...)
    and verify the heuristics label it exactly as intended."""
    kinds = mix_key.split("+")
    parts = [_profile_aggregates(kind, rng, (profiles or {}).get(kind)) for kind in kinds]
    if extra_apis:
        extras = {api: _agg(api, _calls(rng, 1, 5)) for api in extra_apis}
        parts.append(extras)
    aggregates = _merge_aggs(parts)
    token = f"{site}|{page_url}|{script_idx}|{mix_key}"
    script_id = hashlib.sha256(token.encode("utf-8")).hexdigest()
    trace = ScriptTrace(
        script_id=script_id,
        script_url=f"https://cdn.{site}/js/{mix_key.replace('+', '-')}-{script_idx}.js",
        page_url=page_url,
        site=site,
        frame_depth=frame_depth,
        aggregates=aggregates,
    )
    label = label_script(trace)
    fp_kinds = {k for k in kinds if k in FP_PROFILE_KINDS}
    want = {
        "canvas": "canvas_fp" in fp_kinds,
        "canvas_font": "canvas_font_fp" in fp_kinds,
        "webrtc": "webrtc_fp" in fp_kinds,
        "audio": "audio_fp" in fp_kinds,
    }
    got = {
        "canvas": label.canvas,
        "canvas_font": label.canvas_font,
        "webrtc": label.webrtc,
        "audio": label.audio,
    }
    if got != want:
        raise ValidationError(
            f"profile {mix_key!r} produced labels {got}, expected {want}"
        )
    return trace


def _site_name(index: int) -> str:
    return f"site-{index + 1:05d}.example"


def _pages_for(site: str) -> dict[str, str]:
    return {
        "home": f"https://{site}/",
        "auth": f"https://{site}/login",
        "content": f"https://{site}/products/1",
    }


def _normalized_mix(profile_mix: dict[str, float]) -> tuple[list[str], np.ndarray]:
    for key in profile_mix:
        for kind in key.split("+"):
            if kind not in FP_PROFILE_KINDS:
                raise ConfigError(f"profile mix key {key!r} is not a fingerprinting profile")
    keys = sorted(profile_mix)
    weights = np.array([profile_mix[k] for k in keys], dtype=np.float64)
    if weights.sum() <= 0:
        raise ConfigError("profile mix weights must sum to a positive value")
    return keys, weights / weights.sum()


def generate_corpus(
    n_sites: int,
    scripts_per_site: int = 5,
    fp_site_fraction: float = 0.1,
    profile_mix: dict[str, float] | None = None,
    seed: int = 0,
    label: str = "real",
    fp_page_kind_weights: tuple[float, float, float] = (0.6, 0.1, 0.3),
    gated_profile_mix: dict[str, float] | None = None,
    gated_extra_apis: tuple[str, ...] = INTERACTION_EXTRA_APIS,
    profiles: dict[str, BehaviorProfile] | None = None,
) -> Corpus:
    """Generate a deterministic corpus.

    Sites get ranks 1..n and round-robin categories.  A seeded permutation
    picks round(fraction * n) fingerprinting sites; each hosts its
    fingerprinting scripts on one designated page kind (home, auth, or
    content, drawn from ``fp_page_kind_weights``).  Scripts on auth and
    content pages draw from ``gated_profile_mix`` when given and additionally
    call the interaction-gated extra APIs, so suppressing those pages leaves
    the crawl twin without any example of that behavior.  Per-site sub-seeds
    make parallel generation order-independent.
    """
    if n_sites < 1:
        raise ConfigError("n_sites must be >= 1")
    if scripts_per_site < 1:
        raise ConfigError("scripts_per_site must be >= 1")
    if not 0.0 <= fp_site_fraction <= 1.0:
        raise ConfigError("fp_site_fraction must be in [0, 1]")
    if profile_mix is None:
        profile_mix = dict(DEFAULT_PROFILE_MIX)
    n_fp = int(round(fp_site_fraction * n_sites))
    if n_fp > 0 and not profile_mix:
        raise ConfigError("fp_site_fraction > 0 requires a nonempty fingerprinting profile mix")
    mix_keys, mix_weights = ([], np.zeros(0))
    gated_keys, gated_weights = ([], np.zeros(0))
    if n_fp > 0:
        mix_keys, mix_weights = _normalized_mix(profile_mix)
        gated_keys, gated_weights = (
            _normalized_mix(gated_profile_mix) if gated_profile_mix else (mix_keys, mix_weights)
        )
    kind_weights = np.array(fp_page_kind_weights, dtype=np.float64)
    kind_weights = kind_weights / kind_weights.sum()

    root = np.random.default_rng(np.random.SeedSequence((seed, 0)))
    fp_sites = set(root.permutation(n_sites)[:n_fp].tolist())

    websites: list[WebsiteRecord] = []
    traces: list[ScriptTrace] = []
    for index in range(n_sites):
        site = _site_name(index)
        pages = _pages_for(site)
        websites.append(
            WebsiteRecord(
                site=site,
                rank=index + 1,
                category=DEFAULT_CATEGORIES[index % len(DEFAULT_CATEGORIES)],
                pages=tuple(pages.values()),
                http_status=200,
            )
        )
        rng = np.random.default_rng(np.random.SeedSequence((seed, 1, index)))
        is_fp = index in fp_sites
        fp_kind = _PAGE_KINDS[int(rng.choice(3, p=kind_weights))] if is_fp else None
        n_fp_scripts = 1 if is_fp else 0
        for script_idx in range(scripts_per_site):
            if script_idx < n_fp_scripts:
                gated = fp_kind in ("auth", "content")
                keys, weights = (gated_keys, gated_weights) if gated else (mix_keys, mix_weights)
                mix_key = keys[int(rng.choice(len(keys), p=weights))]
                page_url = pages[fp_kind]
                extras = gated_extra_apis if gated else ()
                traces.append(
                    build_profile_trace(mix_key, rng, site, page_url, script_idx, extras,
                                        profiles=profiles)
                )
            else:
                benign_kind = "benign_canvas" if rng.random() < 0.3 else "benign_misc"
                page_url = pages[_PAGE_KINDS[int(rng.integers(0, 3))]]
                traces.append(build_profile_trace(benign_kind, rng, site, page_url,
                                                  script_idx, profiles=profiles))

    corpus = Corpus(label=label, websites=websites, traces=traces)
    corpus.validate()
    return corpus


def _page_kind(page_url: str) -> str:
    from .analysis import classify_subpage

    reason = classify_subpage(page_url, http_status=None)
    return {"Auth": "auth", "Home": "home", "Content": "content"}.get(reason, "content")


def derive_crawl_corpus(
    real: Corpus, policy: SuppressionPolicy, seed: int = 0, label: str = "crawl"
) -> Corpus:
    """Derive the crawl twin of a corpus by suppressing fingerprinting traces.

    Per fingerprinting site, in order: with ``failed_fraction`` probability
    the site is marked failed (HTTP 403, every trace dropped); otherwise each
    page kind is independently suppressed with its policy probability,
    removing the fingerprinting traces on pages of that kind.  Never adds
    traces and never alters a retained trace.
    """
    from .heuristics import fingerprinting_sites

    fp_sites = sorted(fingerprinting_sites(real))
    failed: set[str] = set()
    suppressed_kinds: dict[str, set[str]] = {}
    for site_idx, site in enumerate(fp_sites):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 2, site_idx)))
        if rng.random() < policy.failed_fraction:
            failed.add(site)
            continue
        kinds = set()
        for kind, fraction in (
            ("auth", policy.auth_fraction),
            ("content", policy.content_fraction),
            ("home", policy.home_fraction),
        ):
            if rng.random() < fraction:
                kinds.add(kind)
        suppressed_kinds[site] = kinds

    websites = []
    for record in real.websites:
        if record.site in failed:
            websites.append(
                WebsiteRecord(
                    site=record.site,
                    rank=record.rank,
                    category=record.category,
                    pages=record.pages,
                    http_status=403,
                )
            )
        else:
            websites.append(record)

    traces = []
    for trace in real.traces:
        if trace.site in failed:
            continue
        kinds = suppressed_kinds.get(trace.site)
        if kinds and _page_kind(trace.page_url) in kinds and label_script(trace).any:
            continue
        traces.append(trace)

    return Corpus(label=label, websites=websites, traces=traces)
