"""Measurement analytics and model-evaluation metrics.

Covers per-type prevalence counts, the per-API Call Ratio between
fingerprinting and non-fingerprinting scripts, the real-vs-crawl corpus diff
with per-reason and per-category miss percentages, and the classifier
metrics (false positives, precision, recall, AUPRC) with stratified
splitting and k-fold utilities.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from urllib.parse import urlsplit

import numpy as np

from .errors import ValidationError
from .features import FeatureVector
from .heuristics import fingerprinting_sites, label_corpus
from .manifest import ApiManifest, default_manifest
from .telemetry import Corpus, WebsiteRecord

FP_TYPES = ("canvas", "canvas_font", "webrtc", "audio")
MISS_REASONS = ("Failed", "Auth", "Content", "Home")

# Path segments marking authentication pages.
AUTH_KEYWORDS = frozenset(
    {"login", "signin", "sign-in", "signup", "sign-up", "register", "account", "auth"}
)


@dataclass
class PrevalenceReport:
    per_type_counts: dict[str, int]
    total_fp_scripts: int
    total_scripts: int
    fp_websites: int


@dataclass
class CallRatioEntry:
    api: str
    fp_calls: int
    nonfp_calls: int

    @property
    def ratio(self) -> float:
        if self.nonfp_calls > 0:
            return self.fp_calls / self.nonfp_calls
        return math.inf


@dataclass
class MissReport:
    real_fp_sites: set[str]
    crawl_fp_sites: set[str]
    missed: set[str]
    miss_percentage: float
    by_reason: dict[str, int]
    by_category: dict[str, float]


@dataclass
class MetricsReport:
    false_positives: int
    precision: float
    recall: float
    auprc: float
    per_fold: list["MetricsReport"] = field(default_factory=list)
    mean_and_std: dict[str, tuple[float, float]] = field(default_factory=dict)


def prevalence(corpus: Corpus, manifest: ApiManifest | None = None) -> PrevalenceReport:
    """Count scripts per fingerprinting type; a script may count for several."""
    manifest = manifest or default_manifest()
    counts = {t: 0 for t in FP_TYPES}
    total_fp = 0
    for _, label in label_corpus(corpus, manifest):
        for t in FP_TYPES:
            if getattr(label, t):
                counts[t] += 1
        if label.any:
            total_fp += 1
    return PrevalenceReport(
        per_type_counts=counts,
        total_fp_scripts=total_fp,
        total_scripts=len(corpus.traces),
        fp_websites=len(fingerprinting_sites(corpus, manifest)),
    )


def call_ratio(corpus: Corpus, manifest: ApiManifest | None = None) -> list[CallRatioEntry]:
    """Per-API call totals of fingerprinting vs non-fingerprinting scripts.

    APIs never called by a fingerprinting script are omitted; the result is
    sorted by descending ratio with infinite entries first, ties broken by
    API name.
    """
    manifest = manifest or default_manifest()
    fp_calls: Counter[str] = Counter()
    nonfp_calls: Counter[str] = Counter()
    for trace, label in label_corpus(corpus, manifest):
        bucket = fp_calls if label.any else nonfp_calls
        for api, agg in trace.aggregates.items():
            bucket[api] += agg.call_count
    entries = [
        CallRatioEntry(api=api, fp_calls=count, nonfp_calls=nonfp_calls.get(api, 0))
        for api, count in fp_calls.items()
        if count > 0
    ]
    entries.sort(key=lambda e: (-e.ratio, e.api))
    return entries


def classify_subpage(
    page_url: str,
    http_status: int | None,
    site_record: WebsiteRecord | None = None,
) -> str:
    """Assign a miss reason to a page: Failed > Auth > Home > Content.

    Failed on a 4xx/5xx status or a site with no successfully visited pages;
    Auth when a path segment matches the authentication keywords; Home for
    the root path; Content otherwise.
    """
    status = http_status
    if status is None and site_record is not None:
        status = site_record.http_status
    if status is not None and 400 <= status <= 599:
        return "Failed"
    if site_record is not None and not site_record.pages:
        return "Failed"
    try:
        path = urlsplit(page_url).path
    except ValueError:
        warnings.warn(f"unparsable page URL {page_url!r}; classifying as Content", stacklevel=2)
        return "Content"
    segments = [s.lower() for s in path.split("/") if s]
    if any(s in AUTH_KEYWORDS for s in segments):
        return "Auth"
    if path in ("", "/"):
        return "Home"
    return "Content"


def _earliest_fp_page(corpus: Corpus, site: str, manifest: ApiManifest) -> str:
    from .heuristics import label_script

    for trace in corpus.traces:
        if trace.site == site and label_script(trace, manifest).any:
            return trace.page_url
    raise ValidationError(f"site {site!r} has no fingerprinting trace")


def compare_corpora(
    real: Corpus, crawl: Corpus, manifest: ApiManifest | None = None
) -> MissReport:
    """Diff fingerprinting websites between the real and crawl corpora.

    A missed site's reason comes from its earliest fingerprinting page in the
    real corpus, with the crawl corpus supplying the HTTP status that marks
    failed visits.
    """
    manifest = manifest or default_manifest()
    real_fp = fingerprinting_sites(real, manifest)
    crawl_fp = fingerprinting_sites(crawl, manifest)
    missed = real_fp - crawl_fp
    miss_percentage = 100.0 * len(missed) / len(real_fp) if real_fp else 0.0

    crawl_sites = {w.site: w for w in crawl.websites}
    by_reason = {reason: 0 for reason in MISS_REASONS}
    for site in missed:
        page = _earliest_fp_page(real, site, manifest)
        record = crawl_sites.get(site)
        status = record.http_status if record is not None else None
        by_reason[classify_subpage(page, status, record)] += 1

    categories = {w.site: w.category for w in real.websites}
    by_category: dict[str, float] = {}
    for category in sorted({categories.get(s, "unknown") for s in real_fp}):
        fp_in_cat = [s for s in real_fp if categories.get(s, "unknown") == category]
        missed_in_cat = [s for s in fp_in_cat if s in missed]
        by_category[category] = 100.0 * len(missed_in_cat) / len(fp_in_cat)

    return MissReport(
        real_fp_sites=real_fp,
        crawl_fp_sites=crawl_fp,
        missed=missed,
        miss_percentage=miss_percentage,
        by_reason=by_reason,
        by_category=by_category,
    )


def _split_by_class(vectors: list[FeatureVector]) -> dict[bool, list[int]]:
    groups: dict[bool, list[int]] = {}
    for i, v in enumerate(vectors):
        groups.setdefault(bool(v.label), []).append(i)
    return groups


def stratified_split(
    vectors: list[FeatureVector], test_fraction: float, seed: int = 0
) -> tuple[list[FeatureVector], list[FeatureVector]]:
    """Class-proportional train/test split, deterministic given the seed."""
    if not 0.0 < test_fraction < 1.0:
        raise ValidationError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    test_idx: list[int] = []
    for cls, indices in sorted(_split_by_class(vectors).items()):
        if len(indices) < 2:
            raise ValidationError(f"class {cls} has fewer than 2 examples")
        order = rng.permutation(len(indices))
        n_test = int(round(len(indices) * test_fraction))
        for pos, j in enumerate(order):
            (test_idx if pos < n_test else train_idx).append(indices[j])
    return (
        [vectors[i] for i in sorted(train_idx)],
        [vectors[i] for i in sorted(test_idx)],
    )


def stratified_kfold(
    vectors: list[FeatureVector], k: int, seed: int = 0
) -> list[tuple[list[FeatureVector], list[FeatureVector]]]:
    """k disjoint folds covering the data, each class-balanced within one."""
    if k < 2:
        raise ValidationError("k must be >= 2")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(vectors), dtype=np.int64)
    for cls, indices in sorted(_split_by_class(vectors).items()):
        if len(indices) < k:
            raise ValidationError(f"class {cls} has fewer than {k} examples")
        order = rng.permutation(len(indices))
        for pos, j in enumerate(order):
            fold_of[indices[j]] = pos % k
    folds = []
    for fold in range(k):
        train = [v for i, v in enumerate(vectors) if fold_of[i] != fold]
        test = [v for i, v in enumerate(vectors) if fold_of[i] == fold]
        folds.append((train, test))
    return folds


def compute_metrics(
    scores: list[tuple[float, bool]], threshold: float = 0.5
) -> MetricsReport:
    """Thresholded counts plus AUPRC from an exhaustive threshold sweep.

    AUPRC uses step-function interpolation over the distinct scores, which
    makes the sweep itself the reference computation.
    """
    if not scores:
        raise ValidationError("scores must be nonempty")
    y_score = np.array([s for s, _ in scores], dtype=np.float64)
    y_true = np.array([bool(t) for _, t in scores])
    n_pos = int(y_true.sum())
    if n_pos == 0:
        raise ValidationError("AUPRC is undefined without positive examples")

    predicted = y_score >= threshold
    tp = int(np.sum(predicted & y_true))
    fp = int(np.sum(predicted & ~y_true))
    fn = int(np.sum(~predicted & y_true))
    precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
    recall = tp / (tp + fn)

    order = np.argsort(-y_score, kind="stable")
    sorted_true = y_true[order]
    sorted_score = y_score[order]
    tp_cum = np.cumsum(sorted_true)
    pred_cum = np.arange(1, len(scores) + 1)
    # Only positions where the score changes are valid thresholds.
    is_last_of_tie = np.append(sorted_score[1:] != sorted_score[:-1], True)
    precisions = tp_cum[is_last_of_tie] / pred_cum[is_last_of_tie]
    recalls = tp_cum[is_last_of_tie] / n_pos
    recall_steps = np.diff(np.concatenate(([0.0], recalls)))
    auprc = float(np.sum(recall_steps * precisions))

    return MetricsReport(
        false_positives=fp,
        precision=float(precision),
        recall=float(recall),
        auprc=auprc,
    )


def aggregate_fold_metrics(per_fold: list[MetricsReport]) -> MetricsReport:
    """Mean metrics across folds, with per-metric standard deviations."""
    if not per_fold:
        raise ValidationError("no fold metrics to aggregate")
    summary: dict[str, tuple[float, float]] = {}
    for name in ("false_positives", "precision", "recall", "auprc"):
        values = np.array([getattr(m, name) for m in per_fold], dtype=np.float64)
        summary[name] = (float(values.mean()), float(values.std()))
    return MetricsReport(
        false_positives=int(round(summary["false_positives"][0])),
        precision=summary["precision"][0],
        recall=summary["recall"][0],
        auprc=summary["auprc"][0],
        per_fold=list(per_fold),
        mean_and_std=summary,
    )
