import pytest

from scenario import load_scenario
from suites import (brute_force_supported_prefix, check_censorship, check_equivalence, check_leaderless, check_trie,
                    check_upperbound, fit_exponent, max_f, random_scenario, run_suite, sweep)
from tests.helpers import scenario_path


def test_fit_exponent_recovers_quadratic_growth():
    ns = [4, 7, 10, 13]
    assert fit_exponent(ns, [3 * n * n for n in ns]) == pytest.approx(2.0)


def test_max_f():
    assert max_f("pc3", 4) == 1
    assert max_f("spc", 10) == 3
    assert max_f("pc_5f1", 11) == 2


def test_brute_force_supported_prefix():
    vectors = [(b"a", b"b"), (b"a", b"b", b"c"), (b"a", b"c")]
    assert brute_force_supported_prefix(vectors, 2) == (b"a", b"b")
    assert brute_force_supported_prefix(vectors, 3) == (b"a",)
    assert brute_force_supported_prefix([(b"x",), (b"y",)], 1) == (b"x",)


def test_trie_matches_the_subset_oracle():
    report = check_trie(runs=50, seed=3, quiet=True)
    assert report.runs == 50
    assert report.passed["trie_oracle"] == 50


def test_compact_certification_matches_plain():
    report = check_equivalence(runs=5, quiet=True)
    assert report.runs == 5
    assert sum(report.passed.values()) > 0
    assert report.passed["tampering_rejected"] > 0


def test_random_scenarios_are_reproducible():
    assert random_scenario(3, "pc3", 4) == random_scenario(3, "pc3", 4)
    calm = random_scenario(3, "spc", 7, fuzz=False)
    assert calm.delay.gst == 0
    assert calm.f == 2


def test_small_upperbound_suite():
    report = check_upperbound(runs=4, ns=[4], protocols=["pc3"], quiet=True)
    assert report.runs == 4
    assert report.passed["upper_bound"] == 4


def test_censorship_stays_within_f():
    report = check_censorship(f=1, slots=5, runs=1, quiet=True)
    assert report.stats["max_censored_slots"] <= 1
    assert report.stats["n"] == 4


def test_unknown_suite():
    with pytest.raises(ValueError):
        run_suite("liveness")


@pytest.mark.slow
def test_message_sweep_grows_quadratically(out_dir):
    report = sweep(load_scenario(scenario_path("pc3_faultfree_n4")), [4, 7], out_dir=out_dir, quiet=True)
    assert list(report.table["n"]) == [4, 7]
    assert 1.5 < report.exponents["messages"] < 3
    assert set(report.paths) == {"table", "fit"}


@pytest.mark.slow
def test_leaderless_runs_terminate():
    report = check_leaderless(runs=2, quiet=True)
    assert report.runs == 2
