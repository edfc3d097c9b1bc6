import math

import pytest

import epitome


def test_worked_example():
    r = epitome.evaluate(["attrs", "find"], ["attrs", "match"])
    assert (r["precision"], r["recall"], r["f1"]) == (0.5, 0.5, 0.5)
    assert epitome.evaluate(["get", "size"], ["get", "size"])["f1"] == 1.0


def test_tokenizer():
    assert epitome.split_by_convention("getTableSize") == ["get", "table", "size"]
    assert epitome.rule_tokenize(["time", "times", "set"], "timeset") == ["time", "set"]
    assert epitome.tokenize("zipfileNext") == ["zip", "file", "next"]


def test_relations():
    assert epitome.smith_waterman_score("set", "set") == 3
    assert epitome.sw_relative_similarity("set", "set") == 1.0
    assert epitome.classify_relation("init", "initialize") == "synonym"
    assert epitome.stem("effects") == "effect"


def test_metrics_and_graph():
    assert math.isclose(epitome.kl_divergence([1.0, 0.0], [0.5, 0.5]), math.log(2.0), rel_tol=1e-6)
    assert epitome.oov_ratio(["a", "zz", "a", "a"], ["a"]) == 0.25
    assert epitome.khop_neighborhood(4, [(0, 1), (1, 2), (2, 3)], 0, 2) == [1, 2]


def test_gradcheck_and_cli():
    assert "joint" in epitome.loss_paths()
    assert epitome.gradcheck("cdi", 50) < 1e-4
    code, out, _ = epitome.run_cli(["--help"])
    assert code == 0 and "evaluate" in out
    assert epitome.run_cli(["nope"])[0] == 2


def test_errors_surface():
    with pytest.raises(epitome.EpitomeError):
        epitome.oov_ratio([], ["a"])
