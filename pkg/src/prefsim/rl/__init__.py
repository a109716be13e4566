from .common import (NetPolicy, evaluate_policy, evaluation_rollouts, expectile_loss, load_policy,
                     mlp, save_policy, write_metrics)
from .ddpg import DDPGConfig, DDPGResult, ReplayBuffer, train_ddpg_shaped
from .iql import IQLConfig, IQLResult, awr_weights, q_target, train_iql
