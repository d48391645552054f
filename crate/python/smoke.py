"""Smoke test for the heteroglossia extension module.

Install first with ``pip install -e crates/py --no-build-isolation``.
"""

import math
import pathlib
import tempfile

import heteroglossia as hg

ROOT = pathlib.Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "crates" / "core" / "tests" / "fixtures"


def main():
    assert [hg.compute_reward(w) for w in (0, 4, 5, 511, 1000)] == [100, 100, 101, 151, 200]

    assert math.isclose(hg.cosine_distance([1.0, 0.0], [0.0, 1.0]), 1.0)
    assert math.isclose(hg.cosine_distance([1.0, 2.0], [2.0, 4.0]), 0.0, abs_tol=1e-12)
    assert hg.split_sentences("One. Two!") == ["One.", "Two!"]

    with tempfile.NamedTemporaryFile("w", suffix=".txt", delete=False) as f:
        f.write("cat 1 0\ndog 0 1\nfish 1 1\n")
    scorer = hg.Scorer(f.name)
    assert "word_sum" in scorer.metrics()
    assert math.isclose(scorer.distance("cat", "dog"), 1.0)
    assert math.isclose(scorer.distance("cat dog", "fish"), 0.0, abs_tol=1e-12)
    try:
        scorer.distance("cat", "dog", metric="nope")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown metric accepted")

    x = [1.0, 2.0, 3.0, 4.0, 5.0]
    y = [2.0, 1.0, 4.0, 3.0, 6.0]
    assert -1.0 <= hg.pearson(x, y) <= 1.0
    assert math.isclose(hg.kendall_tau(x, y), 0.6)
    t, df, p = hg.paired_t_test(y, x)
    assert df == 4.0 and 0.0 < p <= 1.0
    assert math.isclose(hg.student_t_two_tailed(0.0, 7.0), 1.0)

    report, text = hg.study_report(str(FIXTURES / "ratings.csv"), str(FIXTURES / "distances.csv"))
    assert report["stories"] > 0 and report["aspects"] and report["correlations"]
    assert text.strip()
    print("smoke ok:", report["stories"], "stories,", len(report["aspects"]), "aspects")


if __name__ == "__main__":
    main()
