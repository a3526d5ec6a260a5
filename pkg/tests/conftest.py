import dataclasses

import pytest

from revolt.config import Config


def small_config(max_steps: int = 120) -> Config:
    """Cheap training and short episodes for behavioural tests."""
    cfg = Config()
    return dataclasses.replace(
        cfg,
        object_embed=dataclasses.replace(cfg.object_embed, epochs=2),
        region_embed=dataclasses.replace(cfg.region_embed, epochs=2),
        rollout=dataclasses.replace(cfg.rollout, epochs=2),
        sim=dataclasses.replace(cfg.sim, max_steps=max_steps),
        eval=dataclasses.replace(cfg.eval, train_houses=40),
    )


@pytest.fixture(scope="session")
def small_models():
    from revolt.evaluation import train_models

    cfg = small_config()
    models, summary = train_models(cfg)
    return cfg, models, summary
