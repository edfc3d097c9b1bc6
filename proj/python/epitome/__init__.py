"""Function name prediction for stripped binaries."""

from functools import lru_cache
from pathlib import Path

from ._core import (
    EpitomeError,
    LabelPreprocessor,
    classify_relation,
    default_data_dir,
    evaluate,
    gradcheck,
    khop_neighborhood,
    kl_divergence,
    loss_paths,
    oov_ratio,
    rule_tokenize,
    run_cli,
    smith_waterman_score,
    split_by_convention,
    stem,
    sw_relative_similarity,
)

__all__ = [
    "EpitomeError",
    "LabelPreprocessor",
    "classify_relation",
    "default_data_dir",
    "evaluate",
    "gradcheck",
    "khop_neighborhood",
    "kl_divergence",
    "loss_paths",
    "oov_ratio",
    "rule_tokenize",
    "run_cli",
    "smith_waterman_score",
    "split_by_convention",
    "stem",
    "sw_relative_similarity",
    "tokenize",
]


@lru_cache(maxsize=4)
def _preprocessor(corpus, lexicon):
    return LabelPreprocessor.load(corpus, lexicon)


def tokenize(name, corpus=None, lexicon=None):
    """Labels for one function name using the bundled corpus and lexicon by default."""
    data = Path(default_data_dir())
    corpus = str(corpus or data / "name_corpus.txt")
    lexicon = str(lexicon or data / "lexicon.tsv")
    return _preprocessor(corpus, lexicon)(name)
