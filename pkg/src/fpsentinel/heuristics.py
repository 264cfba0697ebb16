"""High-precision fingerprinting heuristics over script traces.

Four detectors (canvas, canvas font, WebRTC, audio) evaluate boolean and
count signals extracted from a trace's API aggregates.  The detectors are
deliberately narrow: they exclude plain property curation and only fire on
the API combinations known to indicate fingerprinting.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import SiteNotFoundError
from .manifest import ApiManifest, default_manifest
from .telemetry import Corpus, ScriptTrace

# Font-diversity and measureText thresholds; both strict ("more than 20").
FONT_COUNT_THRESHOLD = 20
MEASURE_TEXT_THRESHOLD = 20


@dataclass(frozen=True)
class HeuristicSignals:
    """Per-trace predicates and counts feeding the detectors."""

    canvas_text_written: bool = False
    canvas_style_set: bool = False
    canvas_to_data_url: bool = False
    canvas_save_restore_listener: bool = False
    canvas_distinct_fonts: int = 0
    canvas_measure_text_calls: int = 0
    webrtc_channel_or_offer: bool = False
    webrtc_candidate_or_localdesc: bool = False
    audio_api_called: bool = False


@dataclass(frozen=True)
class FingerprintingLabel:
    """Per-script booleans for the four fingerprinting types."""

    canvas: bool
    canvas_font: bool
    webrtc: bool
    audio: bool

    @property
    def any(self) -> bool:
        return self.canvas or self.canvas_font or self.webrtc or self.audio


def extract_signals(trace: ScriptTrace, manifest: ApiManifest | None = None) -> HeuristicSignals:
    """Compute heuristic signals from a trace via the monitored-API manifest.

    A boolean signal is true iff any mapped API was called at least once;
    the font count is the distinct-string-args total of the font setter and
    the measure count is the call total of measureText.
    """
    manifest = manifest or default_manifest()

    def any_called(signal: str) -> bool:
        return any(trace.call_count(api) >= 1 for api in manifest.signal_apis(signal))

    distinct_fonts = sum(
        trace.aggregates[api].distinct_string_args
        for api in manifest.signal_apis("canvas_font_setter")
        if api in trace.aggregates
    )
    measure_calls = sum(
        trace.call_count(api) for api in manifest.signal_apis("canvas_measure_text")
    )
    return HeuristicSignals(
        canvas_text_written=any_called("canvas_text_written"),
        canvas_style_set=any_called("canvas_style_set"),
        canvas_to_data_url=any_called("canvas_to_data_url"),
        canvas_save_restore_listener=any_called("canvas_save_restore_listener"),
        canvas_distinct_fonts=distinct_fonts,
        canvas_measure_text_calls=measure_calls,
        webrtc_channel_or_offer=any_called("webrtc_channel_or_offer"),
        webrtc_candidate_or_localdesc=any_called("webrtc_candidate_or_localdesc"),
        audio_api_called=any_called("audio_api"),
    )


def detect_canvas(s: HeuristicSignals) -> bool:
    """Text written, style set, image extracted, and no save/restore/listener."""
    return (
        s.canvas_text_written
        and s.canvas_style_set
        and s.canvas_to_data_url
        and not s.canvas_save_restore_listener
    )


def detect_canvas_font(s: HeuristicSignals) -> bool:
    """More than 20 distinct fonts set and more than 20 measureText calls."""
    return (
        s.canvas_distinct_fonts > FONT_COUNT_THRESHOLD
        and s.canvas_measure_text_calls > MEASURE_TEXT_THRESHOLD
    )


def detect_webrtc(s: HeuristicSignals) -> bool:
    """Data channel or offer created, plus candidate or local description use."""
    return s.webrtc_channel_or_offer and s.webrtc_candidate_or_localdesc


def detect_audio(s: HeuristicSignals) -> bool:
    """Any monitored audio-processing API called at least once."""
    return s.audio_api_called


def label_script(trace: ScriptTrace, manifest: ApiManifest | None = None) -> FingerprintingLabel:
    """Apply all four detectors to one trace."""
    s = extract_signals(trace, manifest)
    return FingerprintingLabel(
        canvas=detect_canvas(s),
        canvas_font=detect_canvas_font(s),
        webrtc=detect_webrtc(s),
        audio=detect_audio(s),
    )


def label_corpus(
    corpus: Corpus, manifest: ApiManifest | None = None
) -> list[tuple[ScriptTrace, FingerprintingLabel]]:
    manifest = manifest or default_manifest()
    return [(trace, label_script(trace, manifest)) for trace in corpus.traces]


def label_website(corpus: Corpus, site: str, manifest: ApiManifest | None = None) -> bool:
    """True iff at least one of the site's scripts is labeled fingerprinting."""
    if site not in corpus.site_set():
        raise SiteNotFoundError(site)
    manifest = manifest or default_manifest()
    return any(
        label_script(trace, manifest).any for trace in corpus.traces if trace.site == site
    )


def fingerprinting_sites(corpus: Corpus, manifest: ApiManifest | None = None) -> set[str]:
    """All sites hosting at least one fingerprinting-labeled script."""
    manifest = manifest or default_manifest()
    found: set[str] = set()
    for trace in corpus.traces:
        if trace.site not in found and label_script(trace, manifest).any:
            found.add(trace.site)
    return found
