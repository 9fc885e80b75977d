"""poql: tabular Q-learning for partially observable environments, guided by
deterministic labeled MDPs learned passively from the agent's own traces."""

from .agent import (
    AgentConfig,
    BaselineAgent,
    EvalStats,
    ExtendedState,
    PoqlAgent,
    QTable,
    RandomAgent,
    RepeatActionAgent,
    baseline_obs_q,
    evaluate,
    get_action,
    replay,
    train,
    update_q_values,
)
from .beliefs import (
    Belief,
    BeliefMdp,
    ImpossibleObservation,
    belief_mdp_as_mdp,
    belief_update,
    build_belief_mdp,
    observation_probability,
    optimal_expected_steps,
    policy_expected_steps,
    value_iteration,
)
from .envs import (
    ENVIRONMENT_NAMES,
    Environment,
    EpisodeProtocolError,
    GridSpec,
    World,
    fully_observable,
    make_environment,
    sample_pomdp_traces,
)
from .learn import (
    InconsistentSample,
    Iofpta,
    IofptaNode,
    LearnerConfig,
    build_iofpta,
    compatible,
    hoeffding_compatible,
    run_ioalergia,
)
from .models import (
    DeterministicLabeledMdp,
    Mdp,
    Pomdp,
    RewardObservationTrace,
    TrackerState,
    discounted_return,
    dlmdp_to_dot,
    isomorphic,
    observation_trace,
    read_trace_file,
    reset_to_initial,
    step_to,
    write_trace_file,
)

__version__ = "0.1.0"
