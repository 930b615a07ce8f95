import pytest

from metatriage.corpus import GeneratorConfig, SignalStrengths, generate_synthetic


@pytest.fixture(scope="session")
def default_corpus():
    """Full-strength planted signals, production scale."""
    return generate_synthetic(GeneratorConfig(), seed=7)


@pytest.fixture(scope="session")
def small_corpus():
    """Same recipe at a size cheap enough for per-test composition."""
    return generate_synthetic(GeneratorConfig(n_apps=2500), seed=7)


@pytest.fixture(scope="session")
def permission_corpus():
    """Permissions are the only label-coupled group; everything else is noise."""
    config = GeneratorConfig(
        n_apps=8000,
        signal_strengths=SignalStrengths(
            reputation=0.0, temporal=0.0, permissions=0.5, social=0.0
        ),
    )
    return generate_synthetic(config, seed=21)
