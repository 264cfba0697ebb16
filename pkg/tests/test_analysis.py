import math

import numpy as np
import pytest

from conftest import make_corpus, make_trace
from fpsentinel.analysis import (
    aggregate_fold_metrics,
    call_ratio,
    classify_subpage,
    compare_corpora,
    compute_metrics,
    prevalence,
    stratified_kfold,
    stratified_split,
)
from fpsentinel.errors import ValidationError
from fpsentinel.features import FeatureVector
from fpsentinel.telemetry import Corpus, WebsiteRecord

CANVAS = {
    "canvasrenderingcontext2d.filltext": 2,
    "canvasrenderingcontext2d.fillstyle": 1,
    "htmlcanvaselement.todataurl": 1,
}
AUDIO = {"audiocontext.createoscillator": 1}
BENIGN = {"window.navigator.useragent": 3}


def fv(label, site="example.com", script_id="s"):
    return FeatureVector(values=np.zeros(1), label=label, script_id=script_id, site=site)


class TestPrevalence:
    def test_empty_corpus(self):
        report = prevalence(Corpus(label="x"))
        assert report.total_scripts == 0
        assert report.total_fp_scripts == 0
        assert all(v == 0 for v in report.per_type_counts.values())

    def test_multi_type_script_counts_in_both(self):
        trace = make_trace({**CANVAS, **AUDIO})
        report = prevalence(make_corpus([trace]))
        assert report.per_type_counts["canvas"] == 1
        assert report.per_type_counts["audio"] == 1
        assert report.total_fp_scripts == 1
        assert report.fp_websites == 1

    def test_benign_only(self):
        report = prevalence(make_corpus([make_trace(BENIGN)]))
        assert report.total_fp_scripts == 0
        assert report.total_scripts == 1


class TestCallRatio:
    def _corpus(self):
        traces = [
            make_trace({**CANVAS, "x.api": 10}, script_id="fp1"),
            make_trace({"x.api": 2, **BENIGN}, script_id="ben1"),
            make_trace({**AUDIO, "only.fp": 3}, script_id="fp2"),
        ]
        return make_corpus(traces)

    def test_finite_ratio(self):
        entries = {e.api: e for e in call_ratio(self._corpus())}
        assert entries["x.api"].ratio == pytest.approx(5.0)

    def test_infinite_ratio(self):
        entries = {e.api: e for e in call_ratio(self._corpus())}
        assert math.isinf(entries["only.fp"].ratio)

    def test_nonfp_only_api_omitted(self):
        entries = {e.api for e in call_ratio(self._corpus())}
        assert "window.navigator.useragent" not in entries

    def test_sorted_infinite_first_then_by_name(self):
        entries = call_ratio(self._corpus())
        ratios = [e.ratio for e in entries]
        assert ratios == sorted(ratios, reverse=True)
        infinite = [e.api for e in entries if math.isinf(e.ratio)]
        assert infinite == sorted(infinite)

    def test_known_ratio_fixture_33(self):
        traces = [
            make_trace({**CANVAS, "rtcpeerconnection.addtransceiver": 33}, script_id="fp"),
            make_trace({"rtcpeerconnection.addtransceiver": 1, **BENIGN}, script_id="ben"),
        ]
        entries = {e.api: e for e in call_ratio(make_corpus(traces))}
        assert entries["rtcpeerconnection.addtransceiver"].ratio == pytest.approx(33.0)

    def test_invariant_under_corpus_duplication(self):
        corpus = self._corpus()
        doubled = Corpus(
            label=corpus.label,
            websites=corpus.websites,
            traces=corpus.traces + [
                make_trace(
                    {api: agg.call_count for api, agg in t.aggregates.items()},
                    script_id=t.script_id + "-dup",
                )
                for t in corpus.traces
            ],
        )
        before = {(e.api): e.ratio for e in call_ratio(corpus)}
        after = {(e.api): e.ratio for e in call_ratio(doubled)}
        assert before.keys() == after.keys()
        for api, ratio in before.items():
            if math.isinf(ratio):
                assert math.isinf(after[api])
            else:
                assert after[api] == pytest.approx(ratio)


class TestClassifySubpage:
    def test_4xx_failed(self):
        assert classify_subpage("https://x.com/login", 403) == "Failed"

    def test_auth_keyword(self):
        assert classify_subpage("https://x.com/login", 200) == "Auth"

    def test_home(self):
        assert classify_subpage("https://x.com/", 200) == "Home"

    def test_content(self):
        assert classify_subpage("https://x.com/products/7", 200) == "Content"

    def test_precedence_failed_over_auth(self):
        record = WebsiteRecord(site="x.com", rank=1, pages=("https://x.com/",),
                               http_status=500)
        assert classify_subpage("https://x.com/login", None, record) == "Failed"

    def test_site_without_pages_failed(self):
        record = WebsiteRecord(site="x.com", rank=1, pages=())
        assert classify_subpage("https://x.com/shop", None, record) == "Failed"

    def test_unparsable_url_content_with_warning(self):
        with pytest.warns(UserWarning):
            assert classify_subpage("https://[bad/url", 200) == "Content"


class TestCompare:
    def _pair(self, real_sites, crawl_sites):
        def corpus(sites, label):
            traces = [
                make_trace(CANVAS, site=s, script_id=f"fp-{s}",
                           page_url=f"https://{s}/")
                for s in sites
            ]
            all_sites = sorted(set(real_sites) | set(crawl_sites))
            websites = [
                WebsiteRecord(site=s, rank=i + 1, pages=(f"https://{s}/",), http_status=200)
                for i, s in enumerate(all_sites)
            ]
            return Corpus(label=label, websites=websites, traces=traces)

        return corpus(real_sites, "real"), corpus(crawl_sites, "crawl")

    def test_two_thirds_missed(self):
        real, crawl = self._pair(["a.com", "b.com", "c.com"], ["a.com"])
        report = compare_corpora(real, crawl)
        assert report.miss_percentage == pytest.approx(66.7, abs=0.1)
        assert report.missed == {"b.com", "c.com"}

    def test_empty_real_zero(self):
        real, crawl = self._pair([], ["a.com"])
        report = compare_corpora(real, crawl)
        assert report.miss_percentage == 0.0

    def test_self_comparison_zero(self):
        real, _ = self._pair(["a.com", "b.com"], [])
        report = compare_corpora(real, real)
        assert report.miss_percentage == 0.0
        assert report.missed == set()

    def test_reasons_sum_to_missed(self):
        real, crawl = self._pair(["a.com", "b.com", "c.com", "d.com"], ["b.com"])
        report = compare_corpora(real, crawl)
        assert sum(report.by_reason.values()) == len(report.missed)

    def test_failed_reason_uses_crawl_status(self):
        real, crawl = self._pair(["a.com"], [])
        crawl.websites = [
            WebsiteRecord(site="a.com", rank=1, pages=("https://a.com/",), http_status=403)
        ]
        report = compare_corpora(real, crawl)
        assert report.by_reason["Failed"] == 1

    def test_by_category_percentages(self):
        real, crawl = self._pair(["a.com", "b.com"], ["a.com"])
        for corpus in (real, crawl):
            corpus.websites = [
                WebsiteRecord(site=w.site, rank=w.rank, category="News",
                              pages=w.pages, http_status=w.http_status)
                for w in corpus.websites
            ]
        report = compare_corpora(real, crawl)
        assert report.by_category["News"] == pytest.approx(50.0)


class TestStratifiedSplit:
    def test_exact_allocation(self):
        vectors = [fv(i < 10, script_id=f"s{i}") for i in range(100)]
        train, test = stratified_split(vectors, 0.2, seed=4)
        assert sum(v.label for v in test) == 2
        assert len(test) == 20
        assert sum(v.label for v in train) == 8

    def test_same_seed_identical(self):
        vectors = [fv(i % 5 == 0, script_id=f"s{i}") for i in range(50)]
        a = stratified_split(vectors, 0.25, seed=7)
        b = stratified_split(vectors, 0.25, seed=7)
        assert [v.script_id for v in a[0]] == [v.script_id for v in b[0]]
        assert [v.script_id for v in a[1]] == [v.script_id for v in b[1]]

    def test_small_class_rejected(self):
        vectors = [fv(False, script_id=f"s{i}") for i in range(10)] + [fv(True)]
        with pytest.raises(ValidationError) as exc:
            stratified_split(vectors, 0.5, seed=0)
        assert "True" in str(exc.value)

    def test_partition_complete(self):
        vectors = [fv(i % 3 == 0, script_id=f"s{i}") for i in range(30)]
        train, test = stratified_split(vectors, 0.3, seed=1)
        ids = sorted(v.script_id for v in train + test)
        assert ids == sorted(v.script_id for v in vectors)


class TestStratifiedKfold:
    def test_balanced_tiny(self):
        vectors = [fv(i < 5, script_id=f"s{i}") for i in range(10)]
        folds = stratified_kfold(vectors, 5, seed=0)
        for _, test in folds:
            assert len(test) == 2
            assert sum(v.label for v in test) == 1

    def test_disjoint_and_exhaustive(self):
        vectors = [fv(i % 4 == 0, script_id=f"s{i}") for i in range(40)]
        folds = stratified_kfold(vectors, 5, seed=3)
        seen = []
        for _, test in folds:
            seen.extend(v.script_id for v in test)
        assert sorted(seen) == sorted(v.script_id for v in vectors)

    def test_k2_on_four_balanced(self):
        vectors = [fv(i % 2 == 0, script_id=f"s{i}") for i in range(4)]
        folds = stratified_kfold(vectors, 2, seed=0)
        for _, test in folds:
            assert len(test) == 2
            assert sum(v.label for v in test) == 1

    def test_class_too_small(self):
        vectors = [fv(False, script_id=f"s{i}") for i in range(10)] + [
            fv(True, script_id="p1"), fv(True, script_id="p2")]
        with pytest.raises(ValidationError):
            stratified_kfold(vectors, 3, seed=0)


class TestMetrics:
    def test_perfect_separation(self):
        scores = [(0.9, True), (0.8, True), (0.2, False), (0.1, False)]
        report = compute_metrics(scores)
        assert report.precision == 1.0
        assert report.recall == 1.0
        assert report.auprc == pytest.approx(1.0)
        assert report.false_positives == 0

    def test_constant_score_degenerate(self):
        scores = [(0.9, True)] + [(0.9, False)] * 3
        report = compute_metrics(scores, threshold=0.5)
        assert report.recall == 1.0
        assert report.precision == pytest.approx(0.25)

    def test_four_point_fixture(self):
        scores = [(0.9, True), (0.8, False), (0.7, True), (0.1, False)]
        report = compute_metrics(scores)
        assert report.auprc == pytest.approx(5.0 / 6.0, abs=1e-12)

    def test_no_positives_error(self):
        with pytest.raises(ValidationError):
            compute_metrics([(0.4, False)])

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(8)
        scores = [(float(s), bool(t)) for s, t in
                  zip(rng.random(200), rng.random(200) > 0.8)]
        if not any(t for _, t in scores):
            scores[0] = (scores[0][0], True)
        base = compute_metrics(scores).auprc
        for transform in (lambda s: 2 * s + 3, lambda s: s**3, math.exp):
            moved = [(transform(s), t) for s, t in scores]
            assert compute_metrics(moved).auprc == pytest.approx(base, abs=1e-12)

    def test_matches_sklearn_average_precision(self):
        sklearn = pytest.importorskip("sklearn.metrics")
        rng = np.random.default_rng(9)
        y_score = rng.random(500)
        y_true = rng.random(500) > 0.7
        ours = compute_metrics(list(zip(y_score, y_true))).auprc
        ref = sklearn.average_precision_score(y_true, y_score)
        assert ours == pytest.approx(ref, abs=1e-10)

    def test_fold_aggregation(self):
        folds = [
            compute_metrics([(0.9, True), (0.1, False)]),
            compute_metrics([(0.8, True), (0.6, False), (0.2, False)]),
        ]
        agg = aggregate_fold_metrics(folds)
        assert len(agg.per_fold) == 2
        assert agg.mean_and_std["auprc"][0] == pytest.approx(
            (folds[0].auprc + folds[1].auprc) / 2
        )
