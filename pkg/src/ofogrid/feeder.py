"""Three-phase radial feeder model.

Holds the feeder topology, builds the LinDist3Flow sensitivity matrices
(``r3``/``x3``) used by the controllers, and solves the exact unbalanced
power flow (the simulated plant) by a current-injection backward/forward
sweep.

Units
-----
Everything returned from here is per-unit. Powers are per phase on a base of
``s_base_kva / 3``; voltages are phase-to-neutral on ``v_base_kv / sqrt(3)``;
the impedance base is therefore ``v_base_kv**2 / (s_base_kva / 1000)`` ohm.
Voltage profiles are *squared* magnitudes (p.u.^2). Injections are positive,
absorption (demand) negative.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

PHASES = "abc"
SQRT3 = np.sqrt(3.0)
PHASE_ANGLES = np.deg2rad([0.0, -120.0, 120.0])
# _LEAD[i, j] = +1 when phase i leads phase j by 120 degrees
_LEAD = np.array([[0, 1, -1], [-1, 0, 1], [1, -1, 0]], dtype=float)


class FeederError(ValueError):
    """Invalid feeder description (topology, configs or dimensions)."""


class PowerFlowError(RuntimeError):
    """The plant power flow failed to produce a usable solution."""

    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


def parse_phases(mask: str | Sequence[str]) -> tuple[int, ...]:
    """Turn ``"abc"``/``"ac"``/``["a", "c"]`` into sorted phase indices."""
    letters = list(mask.lower()) if isinstance(mask, str) else list(mask)
    try:
        idx = sorted({PHASES.index(ch) for ch in letters})
    except ValueError as exc:
        raise FeederError(f"bad phase mask {mask!r}") from exc
    if not idx:
        raise FeederError("empty phase mask")
    return tuple(idx)


def phase_str(phases: Sequence[int]) -> str:
    return "".join(PHASES[k] for k in phases)


@dataclass(frozen=True)
class LineImpedanceConfig:
    """Series impedance of a line configuration, ohm per mile (3x3, a-b-c)."""

    r: np.ndarray
    x: np.ndarray
    name: str = ""

    def __post_init__(self):
        r = np.array(self.r, dtype=float)
        x = np.array(self.x, dtype=float)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "x", x)
        for label, m in (("R", r), ("X", x)):
            if m.shape != (3, 3):
                raise FeederError(f"config {self.name!r}: {label} must be 3x3, got {m.shape}")
            if not np.allclose(m, m.T, rtol=0.0, atol=1e-12):
                raise FeederError(f"config {self.name!r}: {label} is not symmetric")

    @property
    def is_switch(self) -> bool:
        """All-zero impedance, an ideal closed switch."""
        return not (self.r.any() or self.x.any())

    def check_phases(self, phases: Sequence[int]) -> None:
        if self.is_switch:
            return
        for k in phases:
            if self.r[k, k] <= 0 or self.x[k, k] <= 0:
                raise FeederError(
                    f"config {self.name!r}: non-positive diagonal on phase {PHASES[k]}"
                )

    def masked(self, phases: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        keep = np.zeros(3, dtype=bool)
        keep[list(phases)] = True
        m = np.outer(keep, keep)
        return np.where(m, self.r, 0.0), np.where(m, self.x, 0.0)


def _h_entries(r: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    hp = -r + SQRT3 * _LEAD * x
    hq = -x - SQRT3 * _LEAD * r
    idx = np.arange(3)
    hp[idx, idx] = 2.0 * r[idx, idx]
    hq[idx, idx] = 2.0 * x[idx, idx]
    return hp, hq


def build_h_matrices(config: LineImpedanceConfig, phases: Sequence[int] = (0, 1, 2)):
    """LinDist3Flow coupling matrices ``(HP, HQ)`` of one impedance config.

    ``HP[i, j]`` is the per-length sensitivity of the squared voltage on phase
    ``i`` to active power injected on phase ``j`` (``HQ`` likewise for reactive
    power). Rows/columns of phases not in ``phases`` are zero.

    The sign of the sqrt(3) cross term follows the 120 degree shift between
    the two phases: ``HP`` gets ``+sqrt(3) x`` for (a,b), (b,c), (c,a) and
    ``-sqrt(3) x`` for the reverse pairs; ``HQ`` mirrors this with ``r``.
    """
    config.check_phases(phases)
    return _h_entries(*config.masked(phases))


@dataclass(frozen=True)
class Bus:
    id: str
    phases: tuple[int, ...]


@dataclass(frozen=True)
class Line:
    from_bus: str
    to_bus: str
    phases: tuple[int, ...]
    length_mi: float
    config: str


@dataclass(frozen=True)
class Transformer:
    """Wye-wye transformer modeled as a series impedance on its own kVA rating."""

    from_bus: str
    to_bus: str
    phases: tuple[int, ...]
    kva: float
    r_pct: float
    x_pct: float


@dataclass(frozen=True)
class Shunt:
    bus: str
    phase: int
    kvar: float


@dataclass(frozen=True)
class Load:
    bus: str
    phase: int
    kw: float
    kvar: float


@dataclass
class FeederTopology:
    """Radial three-phase feeder description (physical units)."""

    buses: list[Bus]
    lines: list[Line]
    slack_bus: str
    slack_v2: np.ndarray = field(default_factory=lambda: np.ones(3))
    shunts: list[Shunt] = field(default_factory=list)
    loads: list[Load] = field(default_factory=list)
    transformers: list[Transformer] = field(default_factory=list)
    s_base_kva: float = 5000.0
    v_base_kv: float = 4.16
    name: str = ""

    def __post_init__(self):
        self.slack_v2 = np.broadcast_to(np.asarray(self.slack_v2, dtype=float), (3,)).copy()

    @property
    def z_base(self) -> float:
        return self.v_base_kv**2 / (self.s_base_kva / 1000.0)

    @property
    def s_phase_kva(self) -> float:
        return self.s_base_kva / 3.0

    def branches(self) -> list[Line | Transformer]:
        return [*self.lines, *self.transformers]


def _branch_label(br) -> str:
    return f"{br.from_bus}-{br.to_bus}"


def _radial_order(topo: FeederTopology) -> tuple[list[str], dict[str, int]]:
    """Breadth-first bus order from the slack and the feeding branch of each bus."""
    ids = [b.id for b in topo.buses]
    if len(set(ids)) != len(ids):
        raise FeederError("duplicate bus ids")
    phases = {b.id: b.phases for b in topo.buses}
    if topo.slack_bus not in phases:
        raise FeederError(f"slack bus {topo.slack_bus!r} not among buses")
    if np.any(topo.slack_v2 <= 0):
        raise FeederError("slack squared voltage must be positive")

    branches = topo.branches()
    adj: dict[str, list[tuple[str, int]]] = {b: [] for b in ids}
    for k, br in enumerate(branches):
        for end in (br.from_bus, br.to_bus):
            if end not in phases:
                raise FeederError(f"branch {_branch_label(br)}: unknown bus {end!r}")
            if not set(br.phases) <= set(phases[end]):
                raise FeederError(
                    f"branch {_branch_label(br)}: phases {phase_str(br.phases)} "
                    f"not present at bus {end}"
                )
        if br.from_bus == br.to_bus:
            raise FeederError(f"branch {_branch_label(br)} is a self loop")
        adj[br.from_bus].append((br.to_bus, k))
        adj[br.to_bus].append((br.from_bus, k))

    # union-find in file order so the reported branch is the one that closes the loop
    root = {b: b for b in ids}

    def find(b):
        while root[b] != b:
            root[b] = root[root[b]]
            b = root[b]
        return b

    for br in branches:
        a, b = find(br.from_bus), find(br.to_bus)
        if a == b:
            raise FeederError(f"branch {_branch_label(br)} closes a loop; feeder must be radial")
        root[a] = b

    order: list[str] = []
    parent: dict[str, int] = {}
    seen = {topo.slack_bus}
    queue = deque([topo.slack_bus])
    while queue:
        u = queue.popleft()
        for v, k in adj[u]:
            if v in seen:
                continue
            seen.add(v)
            parent[v] = k
            order.append(v)
            queue.append(v)
    missing = set(ids) - seen
    if missing:
        raise FeederError(f"buses not reachable from slack: {sorted(missing)}")
    for v in order:
        br = branches[parent[v]]
        if tuple(br.phases) != tuple(phases[v]):
            raise FeederError(
                f"bus {v}: phases {phase_str(phases[v])} differ from feeding branch "
                f"{_branch_label(br)} ({phase_str(br.phases)})"
            )
    return order, parent


class FeederModel:
    """A validated feeder with its (bus, phase) index layout.

    ``index`` lists the (bus, phase) pairs, slack excluded, in the row order of
    every vector and matrix built from this model. Branch-phase columns share
    the same ordering: column ``k`` is the branch feeding row ``k``'s bus, on
    the same phase.
    """

    def __init__(self, topology: FeederTopology, configs: Mapping[str, LineImpedanceConfig]):
        self.topology = topology
        self.configs = dict(configs)
        order, parent = _radial_order(topology)
        phases = {b.id: b.phases for b in topology.buses}
        branches = topology.branches()

        self.index: list[tuple[str, int]] = [(b, p) for b in order for p in phases[b]]
        pos = {key: k for k, key in enumerate(self.index)}
        n = len(self.index)

        self.branch_of_row = np.array([parent[b] for b, _ in self.index])
        # rows: branch-phase, cols: bus-phase; +1 at the receiving end
        inc = np.zeros((n, n))
        for k, (bus, ph) in enumerate(self.index):
            inc[k, k] = 1.0
            up = branches[parent[bus]].from_bus
            if up == bus:
                up = branches[parent[bus]].to_bus
            if up != topology.slack_bus:
                inc[k, pos[(up, ph)]] = -1.0
        self.incidence = inc
        self.z_blocks = [self._branch_pu(br) for br in branches]
        self._pos = pos

    def _branch_pu(self, br) -> tuple[np.ndarray, np.ndarray]:
        topo = self.topology
        if isinstance(br, Transformer):
            if br.kva <= 0 or br.r_pct <= 0 or br.x_pct <= 0:
                raise FeederError(f"transformer {_branch_label(br)}: non-positive rating")
            keep = np.zeros(3)
            keep[list(br.phases)] = 1.0
            scale = topo.s_base_kva / br.kva / 100.0
            return np.diag(keep * br.r_pct * scale), np.diag(keep * br.x_pct * scale)
        if br.config not in self.configs:
            raise FeederError(f"line {_branch_label(br)}: unknown config {br.config!r}")
        if br.length_mi < 0:
            raise FeederError(f"line {_branch_label(br)}: negative length")
        cfg = self.configs[br.config]
        cfg.check_phases(br.phases)
        r, x = cfg.masked(br.phases)
        return r * br.length_mi / topo.z_base, x * br.length_mi / topo.z_base

    @property
    def n(self) -> int:
        return len(self.index)

    def row(self, bus: str, phase: int | str) -> int:
        ph = PHASES.index(phase) if isinstance(phase, str) else phase
        try:
            return self._pos[(bus, ph)]
        except KeyError:
            raise FeederError(f"no phase {PHASES[ph]} at bus {bus!r}") from None

    def rows(self, bus: str) -> list[int]:
        return [k for k, (b, _) in enumerate(self.index) if b == bus]

    def labels(self) -> list[str]:
        return [f"{b}.{PHASES[p]}" for b, p in self.index]

    @cached_property
    def path_matrix(self) -> np.ndarray:
        """``F``, the inverse of the three-phase incidence matrix.

        ``F[i, k] = 1`` when branch-phase ``k`` lies on the path from the slack
        to bus-phase ``i``.
        """
        return np.linalg.inv(self.incidence)

    def branch_diag(self, which: str) -> np.ndarray:
        """Block-diagonal branch matrix in branch-phase coordinates.

        ``which``: ``"hp"``/``"hq"`` for LinDist3Flow coupling, ``"z"`` for the
        complex series impedance.
        """
        n = self.n
        out = np.zeros((n, n), dtype=complex if which == "z" else float)
        groups: dict[int, list[int]] = {}
        for k, b in enumerate(self.branch_of_row):
            groups.setdefault(int(b), []).append(k)
        for b, rows in groups.items():
            r, x = self.z_blocks[b]
            if which == "z":
                blk = r + 1j * x
            elif which in ("hp", "hq"):
                blk = _h_entries(r, x)[0 if which == "hp" else 1]
            else:
                raise ValueError(which)
            ph = [self.index[k][1] for k in rows]
            out[np.ix_(rows, rows)] = blk[np.ix_(ph, ph)]
        return out

    def static_demand(self) -> "PowerInjection":
        """Constant loads with the always-on capacitor banks folded in (p.u.)."""
        dp = np.zeros(self.n)
        dq = np.zeros(self.n)
        s = self.topology.s_phase_kva
        for ld in self.topology.loads:
            k = self.row(ld.bus, ld.phase)
            dp[k] += ld.kw / s
            dq[k] += ld.kvar / s
        for sh in self.topology.shunts:
            dq[self.row(sh.bus, sh.phase)] -= sh.kvar / s
        return PowerInjection(dp, dq)

    def slack_phasors(self) -> np.ndarray:
        """Complex slack voltage seen on each row's phase."""
        mag = np.sqrt(self.topology.slack_v2)
        ph = np.array([p for _, p in self.index])
        return mag[ph] * np.exp(1j * PHASE_ANGLES[ph])


@dataclass
class PowerInjection:
    """Per-(bus, phase) active/reactive power in p.u., injection positive."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        if self.p.shape != self.q.shape or self.p.ndim != 1:
            raise FeederError(f"p/q shape mismatch {self.p.shape} vs {self.q.shape}")

    @classmethod
    def zeros(cls, n: int) -> "PowerInjection":
        return cls(np.zeros(n), np.zeros(n))

    def __add__(self, other: "PowerInjection") -> "PowerInjection":
        return PowerInjection(self.p + other.p, self.q + other.q)


@dataclass
class SensitivityModel:
    """LinDist3Flow sensitivities ``v = v_n + r3 (p - dP) + x3 (q - dQ)``."""

    r3: np.ndarray
    x3: np.ndarray
    v_n: np.ndarray
    labels: list[str]
    s_base_kva: float
    v_base_kv: float

    @property
    def n(self) -> int:
        return self.v_n.size


def sensitivity_from_model(model: FeederModel) -> SensitivityModel:
    f = model.path_matrix
    r3 = f @ model.branch_diag("hp") @ f.T
    x3 = f @ model.branch_diag("hq") @ f.T
    ph = np.array([p for _, p in model.index])
    return SensitivityModel(
        r3=r3,
        x3=x3,
        v_n=model.topology.slack_v2[ph].copy(),
        labels=model.labels(),
        s_base_kva=model.topology.s_base_kva,
        v_base_kv=model.topology.v_base_kv,
    )


def build_sensitivity_model(
    topology: FeederTopology, configs: Mapping[str, LineImpedanceConfig]
) -> SensitivityModel:
    """Assemble ``R3 = F bdiag(HP) F^T`` and ``X3 = F bdiag(HQ) F^T`` in p.u."""
    return sensitivity_from_model(FeederModel(topology, configs))


def _check_dim(model: SensitivityModel, *vectors: PowerInjection) -> None:
    for vec in vectors:
        if vec.p.size != model.n:
            raise FeederError(f"injection has {vec.p.size} entries, model has {model.n}")


def lindist_voltages(
    model: SensitivityModel, injections: PowerInjection, demand: PowerInjection
) -> np.ndarray:
    """Linearized squared voltages for battery ``injections`` and load ``demand``."""
    _check_dim(model, injections, demand)
    return (
        model.v_n
        + model.r3 @ (injections.p - demand.p)
        + model.x3 @ (injections.q - demand.q)
    )


@dataclass
class PowerFlowResult:
    voltages: np.ndarray  # complex phase-to-neutral, p.u.
    iterations: int
    residual: float

    @property
    def v2(self) -> np.ndarray:
        return np.abs(self.voltages) ** 2


class Plant:
    """Exact unbalanced power flow by backward/forward sweep.

    Loads are constant power. Each sweep computes bus currents
    ``conj(S / V)``, accumulates them into branch currents leaf-to-root
    (backward pass), then walks root-to-leaf subtracting the full 3x3 branch
    voltage drops from the slack voltage (forward pass). The two passes are
    kept as the matrices ``F^T`` and ``F bdiag(Z)``.
    """

    def __init__(
        self,
        model: FeederModel,
        tol: float = 1e-9,
        max_iter: int = 100,
        v_floor: float = 0.5,
    ):
        self.model = model
        self.tol = tol
        self.max_iter = max_iter
        self.v_floor = v_floor
        f = model.path_matrix
        self._backward = np.ascontiguousarray(f.T)
        self._forward = f @ model.branch_diag("z")
        self._v0 = model.slack_phasors()
        self._last: np.ndarray | None = None

    def solve(
        self,
        injections: PowerInjection,
        demand: PowerInjection,
        warm_start: bool = True,
    ) -> PowerFlowResult:
        n = self.model.n
        if injections.p.size != n or demand.p.size != n:
            raise FeederError(f"injection vectors must have {n} entries")
        s_net = (injections.p - demand.p) + 1j * (injections.q - demand.q)
        v = self._last.copy() if (warm_start and self._last is not None) else self._v0.copy()
        residual = np.inf
        for it in range(1, self.max_iter + 1):
            i_bus = np.conj(-s_net / v)  # current drawn at each bus-phase
            i_branch = self._backward @ i_bus
            v_new = self._v0 - self._forward @ i_branch
            residual = float(np.max(np.abs(v_new - v)))
            v = v_new
            if np.any(~np.isfinite(v)) or np.min(np.abs(v)) < self.v_floor:
                raise PowerFlowError(
                    f"voltage collapse: min |V| below {self.v_floor} p.u. at iteration {it}",
                    residual=residual,
                    iterations=it,
                )
            if residual < self.tol:
                self._last = v
                return PowerFlowResult(v, it, residual)
        raise PowerFlowError(
            f"backward/forward sweep did not converge in {self.max_iter} iterations "
            f"(residual {residual:.3e})",
            residual=residual,
            iterations=self.max_iter,
        )


def plant_powerflow(
    topology: FeederTopology,
    configs: Mapping[str, LineImpedanceConfig],
    injections: PowerInjection,
    demand: PowerInjection,
    **options,
) -> np.ndarray:
    """Squared voltage magnitudes from the exact power flow (one-shot helper)."""
    plant = Plant(FeederModel(topology, configs), **options)
    return plant.solve(injections, demand, warm_start=False).v2


# -- feeder files -------------------------------------------------------------

BUNDLED_FEEDERS = {"ieee13-mod": "ieee13-mod.yaml"}


def _mat3(value, name: str) -> np.ndarray:
    """Accept a full 3x3 or an upper-triangular row list and symmetrize."""
    rows = [list(map(float, r)) for r in value]
    if [len(r) for r in rows] == [3, 2, 1]:
        m = np.zeros((3, 3))
        for i, r in enumerate(rows):
            m[i, i:] = r
        return m + np.triu(m, 1).T
    m = np.array(rows, dtype=float)
    if m.shape != (3, 3):
        raise FeederError(f"{name}: expected 3x3 or upper-triangular rows")
    return m


def feeder_from_dict(data: Mapping) -> tuple[FeederTopology, dict[str, LineImpedanceConfig]]:
    """Build topology and configs from a parsed feeder description."""
    try:
        base = data.get("base", {})
        configs = {
            str(cid): LineImpedanceConfig(
                _mat3(c["r"], f"configs.{cid}.r"), _mat3(c["x"], f"configs.{cid}.x"), str(cid)
            )
            for cid, c in data["configs"].items()
        }
        ft_per_mi = 5280.0

        def length(entry):
            if "length_mi" in entry:
                return float(entry["length_mi"])
            return float(entry["length_ft"]) / ft_per_mi

        slack = data["slack"]
        v_pu = slack.get("v_pu", 1.0)
        topo = FeederTopology(
            name=str(data.get("name", "")),
            buses=[Bus(str(b["id"]), parse_phases(b["phases"])) for b in data["buses"]],
            lines=[
                Line(
                    str(ln["from"]),
                    str(ln["to"]),
                    parse_phases(ln["phases"]),
                    length(ln),
                    str(ln["config"]),
                )
                for ln in data.get("lines", [])
            ],
            transformers=[
                Transformer(
                    str(t["from"]),
                    str(t["to"]),
                    parse_phases(t["phases"]),
                    float(t["kva"]),
                    float(t["r_pct"]),
                    float(t["x_pct"]),
                )
                for t in data.get("transformers", [])
            ],
            slack_bus=str(slack["bus"]),
            slack_v2=np.square(np.broadcast_to(np.asarray(v_pu, dtype=float), (3,))),
            shunts=[
                Shunt(str(s["bus"]), parse_phases(s["phase"])[0], float(s["kvar"]))
                for s in data.get("shunts", [])
            ],
            loads=[
                Load(str(ld["bus"]), parse_phases(ld["phase"])[0], float(ld["kw"]), float(ld["kvar"]))
                for ld in data.get("loads", [])
            ],
            s_base_kva=float(base.get("s_kva", 5000.0)),
            v_base_kv=float(base.get("v_kv_ll", 4.16)),
        )
    except KeyError as exc:
        raise FeederError(f"feeder file: missing field {exc.args[0]!r}") from None
    return topo, configs


def load_feeder(source: str | Path) -> tuple[FeederTopology, dict[str, LineImpedanceConfig]]:
    """Load a feeder from a YAML file path or a bundled fixture name."""
    if str(source) in BUNDLED_FEEDERS:
        text = resources.files("ofogrid.data").joinpath(BUNDLED_FEEDERS[str(source)]).read_text()
    else:
        text = Path(source).read_text()
    data = yaml.safe_load(text)
    if not isinstance(data, Mapping):
        raise FeederError(f"feeder file {source}: top level must be a mapping")
    return feeder_from_dict(data)
