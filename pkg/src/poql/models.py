"""Core model types: MDPs, POMDPs, learned labeled models, traces, and trackers.

State ids are opaque integers assigned in creation order; observation and
action symbols are interned strings. Models are immutable after construction
and safe to share across threads.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, NamedTuple, Sequence

#: Tolerance used when asserting that a probability distribution sums to 1.
PROB_SUM_TOL = 1e-9

#: Number type accepted wherever a probability is expected. Learned models
#: and the hand-built benchmark POMDPs use exact Fractions.
Prob = Fraction | float

_SYMBOL = re.compile(r"[^\s;:,|]+\Z")


def check_symbol(token: str) -> str:
    """Validate and intern a symbol used for observations and actions.

    Symbols must be non-whitespace and must not contain the separator
    characters of the trace file format (';', ':', ',', '|').
    """
    if not isinstance(token, str) or not _SYMBOL.match(token):
        raise ValueError(
            f"invalid symbol {token!r}: need a non-whitespace token without ';:,|'"
        )
    return sys.intern(token)


def _check_distribution(dist: Mapping[int, Prob], what: str) -> None:
    total = sum(dist.values())
    if abs(float(total) - 1.0) > PROB_SUM_TOL:
        raise ValueError(f"{what}: distribution sums to {float(total)!r}, not 1")
    if any(p < 0 for p in dist.values()):
        raise ValueError(f"{what}: negative probability")


@dataclass(frozen=True)
class Mdp:
    """Finite Markov decision process with a total transition function.

    delta maps every (state, action) pair to a distribution over successor
    states. Distributions must sum to 1 within PROB_SUM_TOL.
    """

    states: tuple[int, ...]
    initial: int
    actions: tuple[str, ...]
    delta: Mapping[tuple[int, str], Mapping[int, Prob]]

    def __post_init__(self) -> None:
        state_set = set(self.states)
        if self.initial not in state_set:
            raise ValueError(f"initial state {self.initial} not among states")
        for s in self.states:
            for a in self.actions:
                dist = self.delta.get((s, a))
                if dist is None:
                    raise ValueError(f"delta not total: missing ({s}, {a!r})")
                _check_distribution(dist, f"delta({s}, {a!r})")
                if not set(dist) <= state_set:
                    raise ValueError(f"delta({s}, {a!r}) targets unknown states")

    def distribution(self, state: int, action: str) -> Mapping[int, Prob]:
        return self.delta[(state, action)]


@dataclass(frozen=True)
class Pomdp:
    """A POMDP: an MDP whose states are hidden behind an observation function.

    Rewards are attached to states; a step that enters state s' yields
    reward_fn[s']. goal_states terminate an episode when entered.
    """

    mdp: Mdp
    observations: tuple[str, ...]
    obs_fn: Mapping[int, str]
    reward_fn: Mapping[int, float]
    goal_states: frozenset[int]

    def __post_init__(self) -> None:
        state_set = set(self.mdp.states)
        if set(self.obs_fn) != state_set:
            raise ValueError("obs_fn must be total over states")
        if not set(self.obs_fn.values()) <= set(self.observations):
            raise ValueError("obs_fn emits unknown observations")
        if not self.goal_states <= state_set:
            raise ValueError("goal_states outside state space")

    def obs(self, state: int) -> str:
        return self.obs_fn[state]

    def reward(self, state: int) -> float:
        return self.reward_fn.get(state, 0.0)


def label_determinism_violations(
    label: Mapping[int, str],
    trans: Mapping[tuple[int, str], Mapping[int, Prob]],
) -> list[tuple[int, str, int, int]]:
    """Return (state, action, succ1, succ2) tuples violating label determinism.

    A labeled model is deterministic when, for every state and action, no two
    successors with positive probability carry the same label.
    """
    bad = []
    for (s, a), dist in trans.items():
        seen: dict[str, int] = {}
        for succ, p in dist.items():
            if p <= 0:
                continue
            lbl = label[succ]
            if lbl in seen and seen[lbl] != succ:
                bad.append((s, a, seen[lbl], succ))
            else:
                seen[lbl] = succ
    return bad


@dataclass(frozen=True)
class DeterministicLabeledMdp:
    """Labeled MDP where successor labels identify successors uniquely.

    The transition map may be partial: (state, action) pairs never observed
    in training data are simply absent. Learned models additionally carry
    integer edge counts so transition probabilities are exact rationals.
    """

    states: tuple[int, ...]
    initial: int
    actions: tuple[str, ...]
    label: Mapping[int, str]
    trans: Mapping[tuple[int, str], Mapping[int, Prob]]
    counts: Mapping[tuple[int, str], Mapping[int, int]] | None = None
    _step_map: dict[tuple[int, str], dict[str, int]] = field(
        default_factory=dict, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        state_set = set(self.states)
        if self.initial not in state_set:
            raise ValueError(f"initial state {self.initial} not among states")
        if set(self.label) != state_set:
            raise ValueError("label must be total over states")
        for (s, a), dist in self.trans.items():
            if s not in state_set or a not in self.actions:
                raise ValueError(f"transition from unknown ({s}, {a!r})")
            _check_distribution(dist, f"trans({s}, {a!r})")
        bad = label_determinism_violations(self.label, self.trans)
        if bad:
            s, a, s1, s2 = bad[0]
            raise ValueError(
                f"label determinism violated at ({s}, {a!r}): "
                f"successors {s1} and {s2} share label {self.label[s1]!r}"
            )
        # (state, action) -> {successor label -> successor}; sound because of
        # the determinism invariant checked above.
        for (s, a), dist in self.trans.items():
            self._step_map[(s, a)] = {
                self.label[succ]: succ for succ, p in dist.items() if p > 0
            }

    def prob(self, state: int, action: str, succ: int) -> float:
        dist = self.trans.get((state, action))
        return float(dist.get(succ, 0.0)) if dist else 0.0

    def successors(self, state: int, action: str) -> Mapping[int, Prob]:
        return self.trans.get((state, action), {})

    def successor_for_obs(self, state: int, action: str, obs: str) -> int | None:
        entry = self._step_map.get((state, action))
        return entry.get(obs) if entry else None

    def reachable_states(self) -> list[int]:
        seen = {self.initial}
        frontier = [self.initial]
        while frontier:
            s = frontier.pop()
            for a in self.actions:
                for succ, p in self.successors(s, a).items():
                    if p > 0 and succ not in seen:
                        seen.add(succ)
                        frontier.append(succ)
        return sorted(seen)


class TrackerState(NamedTuple):
    """Current state of a trace simulation on a learned model.

    Once `defined` is False it stays False and `state` keeps the last state
    visited while the simulation was still defined.
    """

    state: int
    defined: bool


def reset_to_initial(model: DeterministicLabeledMdp) -> TrackerState:
    """Start tracking at the model's initial state with the defined flag set."""
    return TrackerState(model.initial, True)


def step_to(
    tracker: TrackerState, action: str, obs: str, model: DeterministicLabeledMdp
) -> TrackerState:
    """Advance the tracker by one (action, observation) step.

    If the model has a successor for (state, action) labeled `obs`, move
    there; otherwise clear the defined flag and keep the state. Never raises:
    undefined behavior is encoded in the flag.
    """
    if not tracker.defined:
        return tracker
    succ = model.successor_for_obs(tracker.state, action, obs)
    if succ is None:
        return TrackerState(tracker.state, False)
    return TrackerState(succ, True)


def observation_trace(path: Sequence, obs_fn: Mapping[int, str]) -> list:
    """Replace the states of an alternating state/action path by observations.

    The path must start with a state and alternate state, action, state, ...
    Actions are passed through verbatim.
    """
    if len(path) % 2 == 0 or not path:
        raise ValueError("path must alternate state/action/state and start with a state")
    out = []
    for i, item in enumerate(path):
        if i % 2 == 0:
            if item not in obs_fn:
                raise ValueError(f"state {item!r} outside observation function domain")
            out.append(obs_fn[item])
        else:
            out.append(item)
    return out


def discounted_return(trace_rewards: Sequence[float], t: int, gamma: float) -> float:
    """Discounted sum of the rewards strictly after step t.

    trace_rewards holds the reward of every state along a path, including the
    initial state's. The result is sum_i gamma**i * trace_rewards[t + 1 + i].
    """
    if not 0 <= t < len(trace_rewards):
        raise IndexError(f"step index {t} out of range for {len(trace_rewards)} rewards")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    total = 0.0
    factor = 1.0
    for r in trace_rewards[t + 1 :]:
        total += factor * r
        factor *= gamma
    return total


@dataclass(frozen=True)
class RewardObservationTrace:
    """One episode: initial observation and reward, then (action, reward, obs) steps."""

    initial_obs: str
    initial_reward: float
    steps: tuple[tuple[str, float, str], ...]

    def __post_init__(self) -> None:
        if not self.initial_obs:
            raise ValueError("initial observation must be nonempty")

    def observation_part(self) -> ObsTrace:
        """Drop the rewards, keeping the (action, observation) skeleton."""
        return (self.initial_obs, tuple((a, o) for a, _, o in self.steps))

    def rewards(self) -> list[float]:
        return [self.initial_reward] + [r for _, r, _ in self.steps]


#: An observation trace: initial observation plus (action, observation) steps.
ObsTrace = tuple[str, tuple[tuple[str, str], ...]]


def format_trace(trace: RewardObservationTrace) -> str:
    parts = [f"{check_symbol(trace.initial_obs)}:{float(trace.initial_reward)!r}"]
    for a, r, o in trace.steps:
        parts.append(f"{check_symbol(a)}:{float(r)!r}:{check_symbol(o)}")
    return ";".join(parts)


def parse_trace(line: str) -> RewardObservationTrace:
    chunks = line.strip().split(";")
    head = chunks[0].split(":")
    if len(head) != 2:
        raise ValueError(f"malformed trace head {chunks[0]!r}")
    steps = []
    for chunk in chunks[1:]:
        fields = chunk.split(":")
        if len(fields) != 3:
            raise ValueError(f"malformed trace step {chunk!r}")
        steps.append((check_symbol(fields[0]), float(fields[1]), check_symbol(fields[2])))
    return RewardObservationTrace(check_symbol(head[0]), float(head[1]), tuple(steps))


def write_trace_file(traces: Iterable[RewardObservationTrace], path) -> None:
    """Write one episode per line in the `obs:reward(;action:reward:obs)*` format."""
    with open(path, "w", encoding="ascii") as fh:
        for trace in traces:
            fh.write(format_trace(trace))
            fh.write("\n")


def read_trace_file(path) -> list[RewardObservationTrace]:
    with open(path, "r", encoding="ascii") as fh:
        return [parse_trace(line) for line in fh if line.strip()]


def dlmdp_to_dot(
    model: DeterministicLabeledMdp,
    beliefs: Mapping[int, Mapping[int, Prob]] | None = None,
    comment: str | None = None,
) -> str:
    """Render a labeled model as a DOT digraph with a stable node/edge order.

    Node labels are `id|obs`; edge labels are `action:prob` with four decimal
    digits. Belief annotations, when given, are attached as node tooltips.
    """
    if not model.states:
        raise ValueError("cannot export an empty model")
    lines = ["digraph model {"]
    if comment:
        lines.append(f"  // {comment}")
    lines.append('  __start [shape=none, label=""];')
    lines.append(f"  __start -> s{model.initial};")
    for s in sorted(model.states):
        attrs = [f'label="{s}|{model.label[s]}"']
        if beliefs is not None and s in beliefs:
            dist = ",".join(
                f"{q}:{float(p):g}" for q, p in sorted(beliefs[s].items())
            )
            attrs.append(f'tooltip="{dist}"')
        lines.append(f"  s{s} [{', '.join(attrs)}];")
    edges = []
    for (s, a), dist in model.trans.items():
        for succ, p in dist.items():
            if p > 0:
                edges.append((s, a, succ, float(p)))
    for s, a, succ, p in sorted(edges):
        lines.append(f'  s{s} -> s{succ} [label="{a}:{p:.4f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def isomorphic(
    m1: DeterministicLabeledMdp,
    m2: DeterministicLabeledMdp,
    prob_tol: float = 0.0,
) -> bool:
    """Check for a label- and structure-preserving bijection on reachable parts.

    Determinism makes the candidate pairing unique: starting from the two
    initial states, matching (action, successor label) edges must pair up
    exactly, with transition probabilities within prob_tol.
    """
    if m1.label[m1.initial] != m2.label[m2.initial]:
        return False
    pairing = {m1.initial: m2.initial}
    reverse = {m2.initial: m1.initial}
    queue = [(m1.initial, m2.initial)]
    actions = set(m1.actions) | set(m2.actions)
    while queue:
        s1, s2 = queue.pop()
        for a in actions:
            d1 = m1.successors(s1, a)
            d2 = m2.successors(s2, a)
            e1 = {m1.label[succ]: (succ, float(p)) for succ, p in d1.items() if p > 0}
            e2 = {m2.label[succ]: (succ, float(p)) for succ, p in d2.items() if p > 0}
            if set(e1) != set(e2):
                return False
            for lbl, (succ1, p1) in e1.items():
                succ2, p2 = e2[lbl]
                if abs(p1 - p2) > prob_tol:
                    return False
                if succ1 in pairing:
                    if pairing[succ1] != succ2:
                        return False
                elif succ2 in reverse:
                    return False
                else:
                    pairing[succ1] = succ2
                    reverse[succ2] = succ1
                    queue.append((succ1, succ2))
    return True
