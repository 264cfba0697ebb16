"""Monitored-API manifest: which in-page APIs are instrumented, how they map
to heuristic signals, and which custom aggregates become features.

The same JSON document is consumed by the in-browser instrumentation, so the
trainer and the collector always agree on names and feature order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ConfigError, FormatVersionError
from .telemetry import canonicalize_api_name

MANIFEST_FORMAT = "fp-manifest"
MANIFEST_VERSION = 1

# Heuristic signal names; each maps to a list of canonical API identifiers.
SIGNAL_NAMES = (
    "canvas_text_written",
    "canvas_style_set",
    "canvas_to_data_url",
    "canvas_save_restore_listener",
    "canvas_font_setter",
    "canvas_measure_text",
    "webrtc_channel_or_offer",
    "webrtc_candidate_or_localdesc",
    "audio_api",
)

CUSTOM_FIELDS = (
    "distinct_string_args",
    "max_string_arg_len",
    "sum_string_arg_len",
    "list_return_len_sum",
)

_DEFAULT_SIGNALS: dict[str, tuple[str, ...]] = {
    "canvas_text_written": (
        "canvasrenderingcontext2d.filltext",
        "canvasrenderingcontext2d.stroketext",
    ),
    "canvas_style_set": (
        "canvasrenderingcontext2d.fillstyle",
        "canvasrenderingcontext2d.strokestyle",
    ),
    "canvas_to_data_url": ("htmlcanvaselement.todataurl",),
    # addEventListener is scoped to the canvas element, matching the
    # element-scoped reading of the exclusion criterion.
    "canvas_save_restore_listener": (
        "canvasrenderingcontext2d.save",
        "canvasrenderingcontext2d.restore",
        "htmlcanvaselement.addeventlistener",
    ),
    "canvas_font_setter": ("canvasrenderingcontext2d.font",),
    "canvas_measure_text": ("canvasrenderingcontext2d.measuretext",),
    "webrtc_channel_or_offer": (
        "rtcpeerconnection.createdatachannel",
        "rtcpeerconnection.createoffer",
    ),
    "webrtc_candidate_or_localdesc": (
        "rtcpeerconnection.onicecandidate",
        "rtcpeerconnection.localdescription",
    ),
    "audio_api": (
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
    ),
}

# APIs monitored beyond the heuristic ones; together with the signal APIs
# they form the feature vocabulary.
_DEFAULT_EXTRA_VOCABULARY = (
    "audiocontext.sinkid",
    "audiocontext.onsinkchange",
    "offlineaudiocontext.hasownproperty",
    "rtcpeerconnection.getconfiguration",
    "rtcpeerconnection.sctp",
    "rtcpeerconnection.gettransceivers",
    "rtcpeerconnection.onicecandidateerror",
    "rtcpeerconnection.tostring",
    "rtcpeerconnection.addtransceiver",
    "rtcicecandidate.address",
    "htmlcanvaselement.getcontext",
    "canvasrenderingcontext2d.getimagedata",
    "window.navigator.plugins",
    "window.navigator.plugins[pdf viewer]",
    "window.navigator.plugins[chrome pdf plugin]",
    "window.navigator.plugins[chrome pdf viewer]",
    "window.navigator.plugins[chromium pdf viewer]",
    "window.navigator.plugins[webkit built-in pdf]",
    "window.navigator.plugins[microsoft edge pdf viewer]",
    "window.navigator.useragent",
    "window.navigator.platform",
    "window.navigator.language",
    "window.navigator.hardwareconcurrency",
    "window.screen.width",
    "window.screen.height",
    "window.screen.colordepth",
)

_DEFAULT_CUSTOM_FEATURES = (
    ("canvasrenderingcontext2d.font", "distinct_string_args"),
    ("canvasrenderingcontext2d.font", "max_string_arg_len"),
    ("canvasrenderingcontext2d.filltext", "sum_string_arg_len"),
    ("canvasrenderingcontext2d.measuretext", "sum_string_arg_len"),
    ("window.navigator.plugins", "list_return_len_sum"),
)


@dataclass(frozen=True)
class ApiManifest:
    """Signal map plus the full monitored vocabulary and custom features."""

    signals: dict[str, tuple[str, ...]]
    vocabulary: tuple[str, ...]
    custom_features: tuple[tuple[str, str], ...] = field(default_factory=tuple)

    def __post_init__(self):
        missing = [name for name in SIGNAL_NAMES if name not in self.signals]
        if missing:
            raise ConfigError(f"manifest is missing signal entries: {missing}")
        for name, apis in self.signals.items():
            if name not in SIGNAL_NAMES:
                raise ConfigError(f"unknown signal {name!r}")
            for api in apis:
                if api != canonicalize_api_name(api):
                    raise ConfigError(f"signal API {api!r} is not canonical")
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise ConfigError("vocabulary contains duplicate APIs")
        for api, fld in self.custom_features:
            if fld not in CUSTOM_FIELDS:
                raise ConfigError(f"unknown custom feature field {fld!r}")
            if api != canonicalize_api_name(api):
                raise ConfigError(f"custom feature API {api!r} is not canonical")
        if len(set(self.custom_features)) != len(self.custom_features):
            raise ConfigError("duplicate custom feature descriptor in manifest")

    def signal_apis(self, name: str) -> tuple[str, ...]:
        return self.signals[name]

    def all_monitored(self) -> tuple[str, ...]:
        """Every monitored API, signals and extras, sorted and deduplicated."""
        seen: set[str] = set()
        for apis in self.signals.values():
            seen.update(apis)
        seen.update(self.vocabulary)
        return tuple(sorted(seen))


def default_manifest() -> ApiManifest:
    return ApiManifest(
        signals=dict(_DEFAULT_SIGNALS),
        vocabulary=tuple(
            sorted(
                set(_DEFAULT_EXTRA_VOCABULARY)
                | {api for apis in _DEFAULT_SIGNALS.values() for api in apis}
            )
        ),
        custom_features=_DEFAULT_CUSTOM_FEATURES,
    )


def manifest_to_obj(manifest: ApiManifest) -> dict:
    return {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "signals": {name: list(apis) for name, apis in sorted(manifest.signals.items())},
        "vocabulary": list(manifest.vocabulary),
        "custom_features": [[api, fld] for api, fld in manifest.custom_features],
    }


def save_manifest(manifest: ApiManifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest_to_obj(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> ApiManifest:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("format") != MANIFEST_FORMAT or obj.get("version") != MANIFEST_VERSION:
        raise FormatVersionError("not a recognized manifest file")
    return ApiManifest(
        signals={name: tuple(apis) for name, apis in obj["signals"].items()},
        vocabulary=tuple(obj["vocabulary"]),
        custom_features=tuple((api, fld) for api, fld in obj.get("custom_features", ())),
    )
