"""The reference classifier: a fixed corpus and training recipe.

Training is deterministic, so the model is identified by its recipe; a cache
directory keyed on the recipe digest avoids retraining.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .corpus import CorpusConfig, make_corpus
from .network import ClassifierModel, load_model, save_model
from .training import TrainParams, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReferenceRecipe:
    n_per_class: int = 2000
    corpus_seed: int = 1
    train_seed: int = 0
    params: TrainParams = field(default_factory=lambda: TrainParams(lr=0.01, epochs=5))
    corpus: CorpusConfig = field(default_factory=CorpusConfig)

    def digest(self) -> str:
        return hashlib.sha256(repr(sorted(asdict(self).items())).encode()).hexdigest()[:16]


def train_reference(recipe: ReferenceRecipe = ReferenceRecipe(), cache_dir=None) -> ClassifierModel:
    """Build the corpus and train; reuse ``cache_dir/reference-<digest>.clf`` when present."""
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"reference-{recipe.digest()}.clf"
        if path.exists():
            log.info("loading cached reference model %s", path)
            return load_model(path)
    x, y = make_corpus(recipe.n_per_class, recipe.corpus_seed, recipe.corpus)
    model = train(x, y, recipe.params, seed=recipe.train_seed)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        save_model(model, tmp)
        tmp.replace(path)
    return model
