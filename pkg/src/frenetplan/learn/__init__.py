"""Learned behavioural-input policies trained through the unrolled optimizer."""

from .losses import cvae_loss, kl_diag, plan_xp, reparameterize, self_supervised_loss, unrolled_forward
from .networks import CvaePolicy, MlpPolicy, OutputSpec, normalize_observation
from .persist import load_policy, save_policy
from .train import Adam, TrainConfig, TrainResult, evaluate, train

__all__ = [
    "Adam", "CvaePolicy", "MlpPolicy", "OutputSpec", "TrainConfig", "TrainResult", "cvae_loss",
    "evaluate", "kl_diag", "load_policy", "normalize_observation", "plan_xp", "reparameterize",
    "save_policy", "self_supervised_loss", "train", "unrolled_forward",
]
