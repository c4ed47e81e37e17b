from .base import Env, EnvSpec, EpisodeWindows, History, StepResult
from .chain_coop import ChainCoopEnv
from .micro_battle import MicroBattleEnv
from .tabular import enumerate_tabular, joint_action_decode, joint_action_index

ENV_REGISTRY = {
    "chain_coop": ChainCoopEnv,
    "micro_battle": MicroBattleEnv,
}


def make_env(env_id, **kwargs):
    if env_id not in ENV_REGISTRY:
        raise ValueError(f"unknown env {env_id!r}; known: {sorted(ENV_REGISTRY)}")
    return ENV_REGISTRY[env_id](**kwargs)


__all__ = [
    "Env",
    "EnvSpec",
    "EpisodeWindows",
    "History",
    "StepResult",
    "ChainCoopEnv",
    "MicroBattleEnv",
    "enumerate_tabular",
    "joint_action_decode",
    "joint_action_index",
    "ENV_REGISTRY",
    "make_env",
]
