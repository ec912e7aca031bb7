"""Joint topic / LaTeX-equation modeling toolkit."""

__version__ = "0.1.0"

from . import align, apps, corpus, eqnet, evalsuite, gradcore, mathtok, topicnet, trainer

__all__ = [
    "align",
    "apps",
    "corpus",
    "eqnet",
    "evalsuite",
    "gradcore",
    "mathtok",
    "topicnet",
    "trainer",
]
