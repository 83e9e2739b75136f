import numpy as np
import pytest
import tomli
from scipy.integrate import trapezoid

from oracles import pair_count_auc
from pseudoae.dataset import Video
from pseudoae.evaluation import (
    EvalReport,
    EvaluationError,
    SweepPoint,
    dedupe_grid,
    evaluate,
    report_from_scores,
    roc_auc,
    roc_curve,
    sweep,
    write_report,
    write_sweep_csv,
)
from pseudoae.scoring import ScoreSeries


class TestRocAuc:
    def test_perfect_separation(self):
        assert roc_auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0

    def test_all_equal_scores(self):
        assert roc_auc([0.5] * 4, [1, 0, 1, 0]) == 0.5

    def test_partial_overlap(self):
        assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75

    def test_single_class_rejected(self):
        with pytest.raises(EvaluationError, match="both classes"):
            roc_auc([0.1, 0.2], [1, 1])

    def test_bad_labels(self):
        with pytest.raises(EvaluationError):
            roc_auc([0.1, 0.2], [0, 2])

    def test_length_mismatch(self):
        with pytest.raises(EvaluationError):
            roc_auc([0.1, 0.2, 0.3], [0, 1])

    def test_matches_pair_counting_with_ties(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 400))
            scores = rng.integers(0, 20, n) / 20.0  # coarse grid forces ties
            labels = rng.integers(0, 2, n)
            labels[:2] = [0, 1]
            assert roc_auc(scores, labels) == pair_count_auc(scores, labels)

    def test_complement(self, rng):
        s = rng.random(200)
        y = rng.integers(0, 2, 200)
        assert roc_auc(-s, y) == pytest.approx(1 - roc_auc(s, y), abs=1e-12)

    def test_monotone_transform_invariance(self, rng):
        s = rng.random(300)
        y = rng.integers(0, 2, 300)
        assert roc_auc(np.exp(3 * s) + 2, y) == roc_auc(s, y)

    def test_roc_curve_area_matches(self, rng):
        s = rng.integers(0, 10, 200) / 10
        y = rng.integers(0, 2, 200)
        fpr, tpr = roc_curve(s, y)
        assert fpr[0] == 0 and tpr[0] == 0 and fpr[-1] == 1 and tpr[-1] == 1
        assert trapezoid(tpr, fpr) == pytest.approx(roc_auc(s, y), abs=1e-12)


def labelled(vid, labels, anomaly="appearance"):
    return Video(vid, np.zeros((len(labels), 4, 4)), np.array(labels), anomaly)


def series(vid, score):
    score = np.asarray(score, dtype=float)
    return ScoreSeries(vid, 30 - 10 * score, score, np.arange(len(score)))


class TestReport:
    def test_dataset_and_per_video(self):
        videos = [labelled("a", [0, 0, 1, 1]), labelled("b", [0, 1, 0, 1], "motion"),
                  labelled("c", [0, 0, 0, 0], "motion")]
        ss = [series("a", [0.1, 0.2, 0.9, 0.8]), series("b", [0.5, 0.4, 0.3, 0.6]),
              series("c", [0.0, 0.1, 0.2, 0.3])]
        rep, ls = report_from_scores(ss, videos)
        assert rep.per_video["a"] == 1.0 and rep.per_video["c"] is None
        assert rep.n_frames == 12 and rep.n_anomalous == 4
        assert rep.auc == pytest.approx(pair_count_auc(ls.scores, ls.labels))
        assert set(rep.per_anomaly) == {"appearance", "motion"}
        assert sum(rep.histograms["anomalous"]) == 4

    def test_label_count_mismatch(self):
        with pytest.raises(EvaluationError):
            report_from_scores([series("a", [0.1, 0.2])], [labelled("a", [0, 1, 1])])

    def test_evaluate_needs_labels(self):
        with pytest.raises(EvaluationError, match="no labels"):
            evaluate(None, [Video("a", np.zeros((8, 4, 4)))], 4)

    def test_write_report(self, tmp_path):
        videos = [labelled("a", [0, 0, 1, 1])]
        rep, ls = report_from_scores([series("a", [0.1, 0.2, 0.9, 0.8])], videos, {"seed": "0"})
        write_report(tmp_path, rep, ls)
        with open(tmp_path / "report.toml", "rb") as f:
            doc = tomli.load(f)
        assert doc["auc"] == 1.0 and doc["provenance"]["seed"] == "0"
        assert (tmp_path / "roc.csv").read_text().startswith("fpr,tpr\n")


class TestSweep:
    def test_dedupe(self):
        assert dedupe_grid([0.2, 0.0, 0.2, 0.5, 0.0]) == [0.2, 0.0, 0.5]

    def test_failed_point_does_not_stop_grid(self):
        def run(v):
            if v == 2:
                raise RuntimeError("boom")
            return EvalReport(v / 10, {}, {"motion": v / 20}, {})

        pts = sweep([1, 2, 3, 1], run)
        assert [p.value for p in pts] == [1, 2, 3]
        assert pts[1].auc is None and "boom" in pts[1].error
        assert pts[2].auc == 0.3

    def test_csv(self, tmp_path):
        pts = [SweepPoint(0.2, 0.9, {"motion": 0.8}), SweepPoint((2, 3), None, {}, "err")]
        write_sweep_csv(tmp_path / "s.csv", "p", pts)
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "p,auc,auc_motion,error"
        assert lines[1] == "0.2,0.900000,0.800000,"
        assert lines[2] == '"2,3",,,err'
