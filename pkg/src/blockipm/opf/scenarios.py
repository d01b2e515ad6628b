"""Load/contingency scenarios for the stochastic OPF."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
from scipy.stats import truncnorm

from .matpower import CaseData

LOAD_LOW, LOAD_HIGH = 0.5, 1.5


class DisconnectedNetwork(ValueError):
    def __init__(self, scenario: int, branches):
        super().__init__(f"outage of branches {list(branches)} disconnects the network (scenario {scenario})")
        self.scenario = scenario
        self.branches = list(branches)


@dataclass(frozen=True)
class ScenarioSet:
    """``multipliers[i, b]`` scales the load of bus ``b`` in scenario ``i``;
    ``outages[i]`` lists 0-based indices of in-service branches removed in it."""

    multipliers: np.ndarray
    outages: tuple
    seed: int | None = None
    sigma: float = 0.0
    contingencies: tuple = field(default=())

    def __post_init__(self):
        mult = np.asarray(self.multipliers, dtype=float)
        if mult.ndim != 2 or mult.shape[0] < 1:
            raise ValueError("multipliers must be (N, n_bus) with N >= 1")
        if np.any(mult <= 0):
            raise ValueError("load multipliers must be positive")
        if len(self.outages) != mult.shape[0]:
            raise ValueError("one outage list per scenario is required")
        object.__setattr__(self, "multipliers", mult)
        object.__setattr__(self, "outages", tuple(tuple(int(b) for b in o) for o in self.outages))

    @property
    def N(self) -> int:
        return self.multipliers.shape[0]

    def to_json(self) -> str:
        return json.dumps({
            "seed": self.seed, "sigma": self.sigma,
            "contingencies": [list(c) for c in self.contingencies],
            "multipliers": self.multipliers.tolist(),
            "outages": [list(o) for o in self.outages],
        })

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSet":
        obj = json.loads(text)
        return cls(np.array(obj["multipliers"], dtype=float), tuple(tuple(o) for o in obj["outages"]),
                   obj.get("seed"), float(obj.get("sigma", 0.0)),
                   tuple(tuple(c) for c in obj.get("contingencies", [])))

    def __eq__(self, other):
        return (isinstance(other, ScenarioSet) and np.array_equal(self.multipliers, other.multipliers)
                and self.outages == other.outages and self.seed == other.seed and self.sigma == other.sigma)

    def __hash__(self):
        return hash((self.multipliers.tobytes(), self.outages, self.seed, self.sigma))


def is_connected(case: CaseData, removed=()) -> bool:
    """Connectivity of the in-service network after removing branch indices ``removed``."""
    case = case.in_service()
    idx = case.bus_index()
    keep = np.ones(case.n_branch, dtype=bool)
    keep[list(removed)] = False
    f = np.array([idx[int(b)] for b in case.branch[keep, 0]], dtype=np.int64)
    t = np.array([idx[int(b)] for b in case.branch[keep, 1]], dtype=np.int64)
    A = sp.coo_matrix((np.ones(f.size), (f, t)), shape=(case.n_bus, case.n_bus))
    ncomp, _ = csgraph.connected_components(A, directed=False)
    return ncomp == 1


def generate_scenarios(case: CaseData, N: int, sigma: float = 0.0, contingencies=(), seed: int | None = 0) -> ScenarioSet:
    """``N`` scenarios with per-bus load multipliers from a normal ``N(1, sigma^2)``
    truncated to ``[0.5, 1.5]``.

    ``contingencies`` is a list of outages (each a branch index or a tuple of
    them).  Scenarios cycle through the slots ``[no outage] + contingencies``,
    so scenario ``i`` takes slot ``i mod (len(contingencies) + 1)``.
    """
    if N < 1:
        raise ValueError("at least one scenario is required")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    n_bus = case.n_bus
    rng = np.random.default_rng(seed)
    if sigma == 0:
        mult = np.ones((N, n_bus))
    else:
        a, b = (LOAD_LOW - 1.0) / sigma, (LOAD_HIGH - 1.0) / sigma
        mult = truncnorm.rvs(a, b, loc=1.0, scale=sigma, size=(N, n_bus), random_state=rng)
    conts = tuple(tuple(c) if np.ndim(c) else (int(c),) for c in contingencies)
    n_branch = case.in_service().n_branch
    for c in conts:
        for b in c:
            if not 0 <= b < n_branch:
                raise ValueError(f"branch index {b} out of range")
    slots = ((),) + conts
    outages = tuple(slots[i % len(slots)] for i in range(N))
    for i, out in enumerate(outages):
        if out and not is_connected(case, out):
            raise DisconnectedNetwork(i, out)
    return ScenarioSet(mult, outages, seed, float(sigma), conts)
