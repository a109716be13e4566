from ._backend import BACKEND
from .core import (HOPPER_TO_WALKER, REFERENCE_RETURNS, REPLAY_MIXTURE, DimMapping, DiskReacher,
                   Env, EnvError, EnvSpec, FunctionPolicy, LineHopper, Policy, ScriptedPolicy,
                   TwinWalker, as_policy, env_names, generate_offline_dataset, identity_mapping,
                   make_env, map_simple_to_complex, measure_reference_returns, mixture,
                   project_complex_to_simple, reference_returns, rollout, rollout_batch,
                   rotation_direction, scripted_policy, zero_policy)
