import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture
def toy_task(tmp_path):
    from moe_linker.synthetic import toy_separable_task
    return toy_separable_task(tmp_path / "toy")


@pytest.fixture(scope="session")
def small_config():
    from moe_linker.config import RunConfig
    return RunConfig(seed=0, experts_K=3, top_k=2, embed_dim=8, native_dim=6, num_patches=3,
                     max_text_len=5, expert_hidden_mult=2, epochs=2, learning_rate=1e-3, batch_size=8)
