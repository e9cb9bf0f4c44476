import pytest

from slowdef.classify.reference import ReferenceRecipe, train_reference


@pytest.fixture(scope="session")
def reference_model(request):
    """The reference classifier, trained once and cached across test runs."""
    cache = request.config.cache.mkdir("slowdef-reference")
    return train_reference(ReferenceRecipe(), cache_dir=cache)
