import hypothesis
import numpy as np
import pytest

hypothesis.settings.register_profile("ci", max_examples=50, deadline=None)
hypothesis.settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def random_volume(rng, h=4, w=8, c=2, dtype=np.float32, normalized=True):
    """Random strictly-positive-norm feature volume for tests."""
    from crossview.featex import FeatureVolume, l2_normalize

    data = rng.standard_normal((h, w, c)).astype(dtype)
    vol = FeatureVolume(data=data)
    return l2_normalize(vol) if normalized else vol
