import pytest

from fpsentinel import kernels
from fpsentinel.telemetry import ApiCallAggregate, Corpus, ScriptTrace, WebsiteRecord


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # Compile the JIT kernels once so timed tests measure work, not compilation.
    kernels.warmup()


def make_trace(
    apis,
    site="example.com",
    page_url=None,
    script_id="a" * 16,
    script_url="https://cdn.example.com/app.js",
    frame_depth=0,
):
    """Trace factory: ``apis`` maps API name to a call count or kwargs dict."""
    page_url = page_url or f"https://{site}/"
    aggregates = {}
    for api, fields in apis.items():
        if isinstance(fields, int):
            aggregates[api] = ApiCallAggregate(api=api, call_count=fields)
        else:
            aggregates[api] = ApiCallAggregate(api=api, **fields)
    return ScriptTrace(
        script_id=script_id,
        script_url=script_url,
        page_url=page_url,
        site=site,
        frame_depth=frame_depth,
        aggregates=aggregates,
    )


def make_corpus(traces, label="real", categories=None, pages=None, statuses=None):
    """Corpus factory: website records are synthesized from the traces."""
    categories = categories or {}
    statuses = statuses or {}
    sites = sorted({t.site for t in traces})
    site_pages = {}
    for t in traces:
        site_pages.setdefault(t.site, [])
        if t.page_url not in site_pages[t.site]:
            site_pages[t.site].append(t.page_url)
    if pages:
        for site, extra in pages.items():
            site_pages.setdefault(site, [])
            site_pages[site].extend(p for p in extra if p not in site_pages[site])
    websites = [
        WebsiteRecord(
            site=site,
            rank=i + 1,
            category=categories.get(site, "unknown"),
            pages=tuple(site_pages.get(site, (f"https://{site}/",))),
            http_status=statuses.get(site, 200),
        )
        for i, site in enumerate(sites)
    ]
    return Corpus(label=label, websites=websites, traces=list(traces))


# Independent brute-force evaluator of the four fingerprinting criteria.
# Deliberately shares no predicate code or manifest lookups with the package.
_AUDIO_APIS = (
    "audiocontext.createoscillator",
    "audiocontext.createdynamicscompressor",
    "audiocontext.destination",
    "audiocontext.startrendering",
    "audiocontext.oncomplete",
    "offlineaudiocontext.createoscillator",
    "offlineaudiocontext.createdynamicscompressor",
    "offlineaudiocontext.destination",
    "offlineaudiocontext.startrendering",
    "offlineaudiocontext.oncomplete",
)


def brute_force_label(trace):
    counts = {}
    for api, agg in trace.aggregates.items():
        counts[api] = agg.call_count

    def used(*names):
        for name in names:
            if counts.get(name, 0) > 0:
                return True
        return False

    canvas = True
    if not used("canvasrenderingcontext2d.filltext", "canvasrenderingcontext2d.stroketext"):
        canvas = False
    if not used("canvasrenderingcontext2d.fillstyle", "canvasrenderingcontext2d.strokestyle"):
        canvas = False
    if not used("htmlcanvaselement.todataurl"):
        canvas = False
    if used(
        "canvasrenderingcontext2d.save",
        "canvasrenderingcontext2d.restore",
        "htmlcanvaselement.addeventlistener",
    ):
        canvas = False

    font_agg = trace.aggregates.get("canvasrenderingcontext2d.font")
    n_fonts = font_agg.distinct_string_args if font_agg is not None else 0
    n_measure = counts.get("canvasrenderingcontext2d.measuretext", 0)
    canvas_font = (n_fonts >= 21) and (n_measure >= 21)

    webrtc = used("rtcpeerconnection.createdatachannel", "rtcpeerconnection.createoffer") and used(
        "rtcpeerconnection.onicecandidate", "rtcpeerconnection.localdescription"
    )

    audio = used(*_AUDIO_APIS)
    return {"canvas": canvas, "canvas_font": canvas_font, "webrtc": webrtc, "audio": audio}
