import json

import numpy as np
import pytest

from swirpad.evalkit import (GranularityWarning, MissingClassError, ScoreEntry,
                             ScoreSet, apcer_by_type, compute_rates, eer,
                             roc_points, threshold_at_bpcer, write_report)


def score_set(bonafide, attacks, attack_types=None, **kw):
    entries = []
    for i, s in enumerate(bonafide):
        entries.append(ScoreEntry(f"b{i}", float(s), "bonafide"))
    for i, s in enumerate(attacks):
        at = attack_types[i] if attack_types else "print"
        entries.append(ScoreEntry(f"a{i}", float(s), "attack", at))
    return ScoreSet(entries, **kw)


# -- independent oracle: literal recount at a threshold ----------------------

def oracle_rates(bonafide, attacks, tau):
    apcer = 100.0 * sum(1 for s in attacks if s >= tau) / len(attacks)
    bpcer = 100.0 * sum(1 for s in bonafide if s < tau) / len(bonafide)
    return apcer, bpcer


class TestComputeRates:
    def test_quarter_example(self):
        ss = score_set([0.7, 0.8, 0.4, 0.9], [0.6, 0.4, 0.3, 0.2])
        r = compute_rates(ss, 0.5)
        assert (r.apcer, r.bpcer, r.acer) == (25.0, 25.0, 25.0)

    def test_published_rows_exact(self):
        # rows reconstructed from their (APCER, BPCER) pairs
        ss = score_set([0.9] * 500, [0.2] * 450 + [0.8] * 50)
        r = compute_rates(ss, 0.5)
        assert (r.apcer, r.bpcer) == (10.0, 0.0) and r.acer == 5.0
        ss = score_set([0.9] * 500, [0.2] * 453 + [0.8] * 47)
        r = compute_rates(ss, 0.5)
        assert (r.apcer, r.bpcer) == (9.4, 0.0) and r.acer == 4.7
        ss = score_set([0.9] * 464 + [0.2] * 36, [0.2] * 470 + [0.8] * 30)
        r = compute_rates(ss, 0.5)
        assert (r.apcer, r.bpcer) == (6.0, 7.2) and r.acer == 6.6

    def test_zero_threshold_accepts_everything(self):
        ss = score_set([0.7, 0.2], [0.6, 0.1])
        r = compute_rates(ss, 0.0)
        assert (r.apcer, r.bpcer, r.acer) == (100.0, 0.0, 50.0)

    def test_missing_class_named(self):
        only_bona = ScoreSet([ScoreEntry("b", 0.5, "bonafide")])
        with pytest.raises(MissingClassError, match="attack"):
            compute_rates(only_bona, 0.5)
        only_attack = ScoreSet([ScoreEntry("a", 0.5, "attack", "print")])
        with pytest.raises(MissingClassError, match="bonafide"):
            compute_rates(only_attack, 0.5)

    def test_acer_identity_random(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            ss = score_set(rng.uniform(0, 1, 7), rng.uniform(0, 1, 9))
            tau = float(rng.uniform(0, 1))
            r = compute_rates(ss, tau)
            assert r.acer == (r.apcer + r.bpcer) / 2
            assert (r.apcer, r.bpcer) == oracle_rates(
                ss.bonafide_scores(), ss.attack_scores(), tau)


class TestScoreSet:
    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            ScoreSet([ScoreEntry("x", 0.1, "bonafide"),
                      ScoreEntry("x", 0.2, "attack", "print")])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            ScoreSet([ScoreEntry("x", float("nan"), "bonafide")])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ScoreSet([])


class TestThreshold:
    def test_hundred_bonafide_hits_one_percent(self):
        rng = np.random.default_rng(1)
        rest = rng.uniform(0.45, 1.0, 98)
        bona = np.concatenate([[0.30, 0.40], rest])
        ss = score_set(bona, [0.1])
        tau = threshold_at_bpcer(ss, 1.0)
        assert tau == pytest.approx(0.35)
        assert compute_rates(ss, tau).bpcer == 1.0

    def test_target_zero_just_below_min(self):
        ss = score_set([0.30, 0.40, 0.90], [0.1])
        tau = threshold_at_bpcer(ss, 0.0)
        assert tau < 0.30 and tau == pytest.approx(0.30, abs=1e-5)
        assert compute_rates(ss, tau).bpcer == 0.0

    def test_granularity_warning_falls_back_to_zero(self):
        ss = score_set(np.linspace(0.3, 0.9, 10), [0.1])
        with pytest.warns(GranularityWarning):
            tau = threshold_at_bpcer(ss, 1.0)
        assert compute_rates(ss, tau).bpcer == 0.0

    def test_largest_tau_wins(self):
        # duplicated minimum: the duplicate midpoint equals the min and
        # still rejects nothing
        ss = score_set([0.3, 0.3, 0.8, 0.9], [0.1])
        with pytest.warns(GranularityWarning):
            tau = threshold_at_bpcer(ss, 1.0)
        assert tau == pytest.approx(0.3)


class TestEer:
    def test_separated_is_zero(self):
        ss = score_set([0.8, 0.9], [0.1, 0.2])
        assert eer(ss) == 0.0

    def test_four_point_sweep(self):
        ss = score_set([0.8, 0.4], [0.6, 0.2])
        assert eer(ss) == 50.0

    def test_symmetry_under_negation(self):
        rng = np.random.default_rng(2)
        bona = rng.uniform(0, 1, 6)
        att = rng.uniform(0, 1, 8)
        forward = eer(score_set(bona, att))
        backward = eer(score_set([-s for s in att], [-s for s in bona]))
        assert forward == pytest.approx(backward)

    def test_oracle_exhaustive(self):
        # brute force over all candidate taus on small random sets
        rng = np.random.default_rng(3)
        for _ in range(20):
            bona = rng.uniform(0, 1, 5)
            att = rng.uniform(0, 1, 6)
            ss = score_set(bona, att)
            taus = np.concatenate([np.unique(np.concatenate([bona, att])) - 1e-9,
                                   [2.0]])
            best = min((abs(np.subtract(*oracle_rates(bona, att, t))), t)
                       for t in taus)
            a, b = oracle_rates(bona, att, best[1])
            assert eer(ss) == pytest.approx((a + b) / 2)


class TestRoc:
    def test_point_count(self):
        ss = score_set([0.1, 0.5], [0.3, 0.7])
        assert len(roc_points(ss)) == 4 + 1

    def test_monotonicity(self):
        rng = np.random.default_rng(4)
        ss = score_set(rng.uniform(0, 1, 10), rng.uniform(0, 1, 12))
        pts = roc_points(ss)
        for (t0, a0, b0), (t1, a1, b1) in zip(pts, pts[1:]):
            assert t0 < t1 and a1 <= a0 and b1 >= b0

    def test_rates_match_compute_rates(self):
        rng = np.random.default_rng(5)
        ss = score_set(rng.uniform(0, 1, 6), rng.uniform(0, 1, 6))
        for tau, apcer, bpcer in roc_points(ss):
            r = compute_rates(ss, tau)
            assert (apcer, bpcer) == (r.apcer, r.bpcer)


class TestBreakdown:
    def test_per_type_rates(self):
        ss = score_set([0.9], [0.8, 0.9, 0.1, 0.2],
                       attack_types=["tattoo", "tattoo", "glasses", "glasses"])
        got = apcer_by_type(ss, 0.5)
        assert got == {"tattoo": 100.0, "glasses": 0.0}

    def test_absent_types_omitted(self):
        ss = score_set([0.9], [0.8], attack_types=["wig"])
        assert set(apcer_by_type(ss, 0.5)) == {"wig"}

    def test_single_type_equals_overall(self):
        ss = score_set([0.9, 0.8], [0.7, 0.3, 0.6],
                       attack_types=["print"] * 3)
        got = apcer_by_type(ss, 0.5)
        assert got["print"] == compute_rates(ss, 0.5).apcer


class TestSweepOracle:
    def test_all_metrics_against_recount(self):
        # for <=20 scores every reported rate equals a direct recount
        rng = np.random.default_rng(6)
        for _ in range(10):
            bona = rng.uniform(0, 1, rng.integers(2, 10))
            att = rng.uniform(0, 1, rng.integers(2, 10))
            ss = score_set(bona, att)
            for tau, apcer, bpcer in roc_points(ss):
                assert (apcer, bpcer) == oracle_rates(bona, att, tau)

    def test_duplicate_entry_bounded_shift(self):
        bona = [0.6, 0.7, 0.8, 0.9]
        att = [0.1, 0.2, 0.3]
        ss = score_set(bona, att)
        dup = score_set(bona + [0.6], att)
        for tau in (0.05, 0.45, 0.65, 0.95):
            r0, r1 = compute_rates(ss, tau), compute_rates(dup, tau)
            assert abs(r1.bpcer - r0.bpcer) <= 100.0 / len(bona)
            assert r1.apcer == r0.apcer


class TestReport:
    def dev_test_sets(self):
        rng = np.random.default_rng(7)
        bona = rng.uniform(0.7, 1.0, 12)
        att = rng.uniform(0.0, 0.3, 15)
        types = [t for t in ("print", "tattoo", "glasses") for _ in range(5)]
        dev = score_set(bona, att, attack_types=types, split="dev",
                        protocol="grand_test")
        test = score_set(bona + 0.001, att, attack_types=types, split="test",
                         protocol="grand_test")
        return dev, test

    def test_perfectly_separable(self, tmp_path):
        dev, test = self.dev_test_sets()
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", GranularityWarning)
            paths = write_report(dev, test, tmp_path / "r")
        doc = json.loads(open(paths["metrics"]).read())
        assert doc["test_apcer"] == 0.0
        assert doc["test_bpcer"] == 0.0
        assert doc["test_acer"] == 0.0
        assert doc["test_eer"] == 0.0
        assert doc["protocol"] == "grand_test"
        assert set(doc) == {"protocol", "tau", "dev_bpcer_target", "test_apcer",
                            "test_bpcer", "test_acer", "test_eer"}

    def test_rerun_byte_identical(self, tmp_path):
        dev, test = self.dev_test_sets()
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", GranularityWarning)
            write_report(dev, test, tmp_path / "a")
            write_report(dev, test, tmp_path / "b")
        for name in ("metrics.json", "roc.csv", "breakdown.csv", "summary.txt"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes()

    def test_breakdown_csv_columns(self, tmp_path):
        dev, test = self.dev_test_sets()
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", GranularityWarning)
            paths = write_report(dev, test, tmp_path / "c")
        lines = open(paths["breakdown"]).read().splitlines()
        assert lines[0] == "attack_type,count,apcer"
        assert len(lines) == 4  # three attack types present

    def test_dev_threshold_may_miss_test_bpcer(self, tmp_path):
        # tau chosen on dev need not reproduce the dev BPCER on test
        rng = np.random.default_rng(8)
        dev_bona = np.concatenate([[0.30, 0.40], rng.uniform(0.5, 1.0, 98)])
        test_bona = np.concatenate([[0.30, 0.32, 0.34], rng.uniform(0.5, 1.0, 97)])
        dev = score_set(dev_bona, [0.1] * 5, split="dev")
        test = score_set(test_bona, [0.1] * 5, split="test")
        write_report(dev, test, tmp_path / "d")
        doc = json.loads(open(tmp_path / "d" / "metrics.json").read())
        assert doc["test_bpcer"] != 1.0
