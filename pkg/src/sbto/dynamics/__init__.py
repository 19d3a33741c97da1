from .base import (
    CONTACT_CLASSES,
    DIVERGENCE_BOUND,
    DynamicsModel,
    PdGains,
    pd_torque,
)
from .models import CartPole, DoubleIntegrator, Pendulum, PlanarPusher
from .rollout import RolloutBatch, initial_state, rollout, rollout_batch

__all__ = [
    "CONTACT_CLASSES",
    "DIVERGENCE_BOUND",
    "CartPole",
    "DoubleIntegrator",
    "DynamicsModel",
    "PdGains",
    "Pendulum",
    "PlanarPusher",
    "RolloutBatch",
    "initial_state",
    "pd_torque",
    "rollout",
    "rollout_batch",
]
