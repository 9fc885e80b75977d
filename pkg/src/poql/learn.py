"""Passive learning of deterministic labeled MDPs from observation traces.

The learner builds a frequency prefix tree over the traces and then merges
statistically compatible nodes in the red-blue framework. Compatibility uses
a per-observation Hoeffding test whose significance is controlled by eps_al:
smaller eps_al widens the acceptance bound, so smaller values merge more
aggressively and yield smaller models.

A learning run mutates its own tree, so each invocation is single-threaded;
the returned models are immutable.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import log, sqrt
from typing import Iterable, Mapping

from .models import DeterministicLabeledMdp, ObsTrace, check_symbol, read_trace_file


class InconsistentSample(ValueError):
    """Raised when the traces of one sample do not share an initial observation."""


class IofptaNode:
    """Prefix tree node: an observation label plus frequency-annotated edges.

    children and freq are keyed by (action, observation); an edge exists iff
    its frequency is positive. totals caches the per-action frequency sums.
    """

    __slots__ = ("label", "children", "freq", "totals", "red_index")

    def __init__(self, label: str):
        self.label = label
        self.children: dict[tuple[str, str], IofptaNode] = {}
        self.freq: dict[tuple[str, str], int] = {}
        self.totals: dict[str, int] = {}
        self.red_index: int | None = None

    def add_step(self, action: str, obs: str) -> "IofptaNode":
        key = (action, obs)
        child = self.children.get(key)
        if child is None:
            child = self.children[key] = IofptaNode(obs)
            self.freq[key] = 0
        self.freq[key] += 1
        self.totals[action] = self.totals.get(action, 0) + 1
        return child


@dataclass(frozen=True)
class Iofpta:
    """Frequency prefix tree acceptor over a multiset of observation traces."""

    root: IofptaNode
    num_traces: int

    def edge_mass(self) -> int:
        """Total frequency over all edges; equals the total number of steps."""
        total = 0
        stack = [self.root]
        while stack:
            node = stack.pop()
            total += sum(node.freq.values())
            stack.extend(node.children.values())
        return total


@dataclass(frozen=True)
class LearnerConfig:
    eps_al: float = 0.05
    min_traces: int = 1

    def __post_init__(self) -> None:
        if not 0.0 < self.eps_al <= 1.0:
            raise ValueError(f"eps_al must be in (0, 1], got {self.eps_al}")
        if self.min_traces < 1:
            raise ValueError("min_traces must be at least 1")


def build_iofpta(traces: Iterable[ObsTrace]) -> Iofpta:
    """Merge the common prefixes of the traces into a frequency tree."""
    traces = list(traces)
    if not traces:
        raise InconsistentSample("empty sample")
    initial = traces[0][0]
    root = IofptaNode(check_symbol(initial))
    for init_obs, steps in traces:
        if init_obs != initial:
            raise InconsistentSample(
                f"initial observations differ: {initial!r} vs {init_obs!r}"
            )
        node = root
        for action, obs in steps:
            node = node.add_step(action, obs)
    return Iofpta(root, len(traces))


def hoeffding_compatible(
    f1: Mapping[str, int], n1: int, f2: Mapping[str, int], n2: int, eps_al: float
) -> bool:
    """Two-sample frequency comparison with a Hoeffding acceptance bound.

    Empty samples are compatible with anything. Otherwise every observation's
    empirical frequencies must differ by less than
    sqrt(ln(2 / eps_al) / 2) * (1/sqrt(n1) + 1/sqrt(n2)).
    """
    if not 0.0 < eps_al <= 1.0:
        raise ValueError(f"eps_al must be in (0, 1], got {eps_al}")
    if n1 == 0 or n2 == 0:
        return True
    bound = sqrt(0.5 * log(2.0 / eps_al)) * (1.0 / sqrt(n1) + 1.0 / sqrt(n2))
    for obs in f1.keys() | f2.keys():
        if abs(f1.get(obs, 0) / n1 - f2.get(obs, 0) / n2) >= bound:
            return False
    return True


def compatible(r: IofptaNode, b: IofptaNode, eps_al: float) -> bool:
    """Recursive statistical compatibility of two nodes.

    Labels must match; for every action the successor-observation frequencies
    must pass the Hoeffding test; and the check recurses into successors
    present on both sides. The second node always lies in an unmerged part of
    the tree, which bounds the recursion.
    """
    if r.label != b.label:
        return False
    bound_scale = sqrt(0.5 * log(2.0 / eps_al))
    return _compatible(r, b, bound_scale)


def _compatible(r: IofptaNode, b: IofptaNode, bound_scale: float) -> bool:
    for action, n2 in b.totals.items():
        n1 = r.totals.get(action, 0)
        if n1 == 0 or n2 == 0:
            continue
        bound = bound_scale * (1.0 / sqrt(n1) + 1.0 / sqrt(n2))
        if bound <= 1.0:  # frequency differences never exceed 1
            keys = {k for k in r.freq if k[0] == action}
            keys.update(k for k in b.freq if k[0] == action)
            for key in keys:
                if abs(r.freq.get(key, 0) / n1 - b.freq.get(key, 0) / n2) >= bound:
                    return False
    for key, b_child in b.children.items():
        r_child = r.children.get(key)
        if r_child is not None and r_child is not b_child:
            if r_child.label != b_child.label:
                return False
            if not _compatible(r_child, b_child, bound_scale):
                return False
    return True


def _fold(target: IofptaNode, source: IofptaNode) -> None:
    """Add source's subtree frequencies into target's region of the automaton.

    Matching edges add up and recurse; unmatched subtrees are grafted whole.
    Recursion descends the unmerged source tree, so it terminates even though
    the target region may contain cycles.
    """
    for key, count in source.freq.items():
        target.freq[key] = target.freq.get(key, 0) + count
        target.totals[key[0]] = target.totals.get(key[0], 0) + count
        t_child = target.children.get(key)
        if t_child is None:
            target.children[key] = source.children[key]
        else:
            _fold(t_child, source.children[key])


def run_ioalergia(
    traces: Iterable[ObsTrace], config: LearnerConfig = LearnerConfig()
) -> DeterministicLabeledMdp:
    """Learn a deterministic labeled MDP from a multiset of observation traces.

    The tree root becomes the initial state. Blue nodes (non-promoted children
    of promoted states) are processed in (promotion index, action, observation)
    order and merged into the first compatible promoted state, or promoted
    themselves. The same sample in the same order yields the identical model.
    """
    traces = list(traces)
    if len(traces) < config.min_traces:
        raise ValueError(
            f"need at least {config.min_traces} traces, got {len(traces)}"
        )
    tree = build_iofpta(traces)
    root = tree.root
    root.red_index = 0
    red: list[IofptaNode] = [root]

    changed = True
    while changed:
        changed = False
        i = 0
        while i < len(red):
            node = red[i]
            key = _first_blue_key(node)
            if key is None:
                i += 1
                continue
            changed = True
            blue = node.children[key]
            merged = False
            for candidate in red:
                if candidate.label == blue.label and compatible(
                    candidate, blue, config.eps_al
                ):
                    node.children[key] = candidate
                    _fold(candidate, blue)
                    merged = True
                    break
            if not merged:
                blue.red_index = len(red)
                red.append(blue)
            # Folding can graft new blue nodes onto earlier promoted states,
            # so rescan this state and let the outer loop settle globally.

    states = tuple(range(len(red)))
    label = {node.red_index: node.label for node in red}
    counts: dict[tuple[int, str], dict[int, int]] = {}
    for node in red:
        for key, count in node.freq.items():
            action = key[0]
            succ = node.children[key].red_index
            entry = counts.setdefault((node.red_index, action), {})
            entry[succ] = entry.get(succ, 0) + count
    trans = {
        key: {succ: Fraction(c, sum(entry.values())) for succ, c in entry.items()}
        for key, entry in counts.items()
    }
    return DeterministicLabeledMdp(
        states=states,
        initial=0,
        actions=tuple(sorted({action for (_, action) in counts})),
        label=label,
        trans=trans,
        counts=counts,
    )


def _first_blue_key(node: IofptaNode) -> tuple[str, str] | None:
    best = None
    for key, child in node.children.items():
        if child.red_index is None and (best is None or key < best):
            best = key
    return best


def observation_traces_from_file(path) -> list[ObsTrace]:
    """Load a trace file, discarding the rewards."""
    return [t.observation_part() for t in read_trace_file(path)]
