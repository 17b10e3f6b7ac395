"""Experiment configuration files.

A minimal sectioned ``key = value`` format; ``#`` starts a comment::

    [topology]
    name = grid24            # grid24 | ring | path | single | pair | file
    links = 9                # ring / path only
    hops = 2                 # ring only
    file = my_topology.txt   # file only, relative to the config file

    [scheduler]              # repeat the section once per algorithm
    algorithm = qcsma
    window = 48
    weight = log_scaled
    alpha = 0.1

    [traffic]
    kind = bernoulli-grid    # bernoulli-grid | ring-adversarial | bernoulli | poisson
    rho = 0.9

    [run]
    horizon = 100000
    runs = 10
    seed = 1
    record_every = 100

Topology files list links as ``id: u v`` under ``[links]`` (node names are
arbitrary tokens) and conflicts under ``[conflicts]`` either as
``interference = k`` / ``interference: k-hop`` (k-hop model over the node
graph) or as ``i j`` / ``conflict: i j`` pairs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .conflict_graph import (
    ConflictGraph,
    TopologyError,
    build_khop_conflicts,
    conflicting_pair,
    grid24,
    path,
    ring,
    single_link,
)
from .schedulers import ConfigError, SchedulerConfig, WeightFunction
from .traffic import (
    BernoulliTraffic,
    PoissonTraffic,
    RingAdversarialTraffic,
    TrafficError,
    grid_traffic,
)

TOPOLOGY_NAMES = ("grid24", "ring", "path", "single", "pair", "file")
TRAFFIC_KINDS = ("bernoulli-grid", "ring-adversarial", "bernoulli", "poisson")
RHO_GRID = tuple(round(0.50 + 0.05 * k, 2) for k in range(10))
EPS_GRID = tuple(round(0.01 * k, 2) for k in range(1, 11))


class ConfigFileError(ConfigError):
    """Malformed configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, source: str = ""):
        self.line = line
        self.source = source
        where = f"{source}:" if source else ""
        where += f"{line}: " if line is not None else (" " if source else "")
        super().__init__(f"{where}{message}")


@dataclass(frozen=True)
class TopologySpec:
    name: str = "grid24"
    links: int = 9
    hops: int = 2
    file: str = ""

    def build(self, base: Path | None = None) -> ConflictGraph:
        if self.name == "grid24":
            return grid24()
        if self.name == "ring":
            return ring(self.links, self.hops)
        if self.name == "path":
            return path(self.links)
        if self.name == "single":
            return single_link()
        if self.name == "pair":
            return conflicting_pair()
        p = Path(self.file)
        if base is not None and not p.is_absolute():
            p = base / p
        return load_topology_file(p)


@dataclass(frozen=True)
class TrafficSpec:
    kind: str = "bernoulli-grid"
    rho: float = 1.0
    eps: float = 0.0
    rates: tuple[float, ...] = ()

    @property
    def point(self) -> float:
        """The swept coordinate: eps for the ring pattern, rho otherwise."""
        return self.eps if self.kind == "ring-adversarial" else self.rho

    def at(self, value: float) -> "TrafficSpec":
        if self.kind == "ring-adversarial":
            return TrafficSpec(self.kind, self.rho, float(value), self.rates)
        return TrafficSpec(self.kind, float(value), self.eps, self.rates)

    def build(self, g: ConflictGraph):
        n = g.link_count
        if self.kind == "bernoulli-grid":
            if n != 24:
                raise ConfigError("bernoulli-grid traffic needs the 24-link grid topology")
            return grid_traffic(self.rho)
        if self.kind == "ring-adversarial":
            if n != 9:
                raise ConfigError("ring-adversarial traffic needs a 9-link topology")
            return RingAdversarialTraffic(self.eps)
        if len(self.rates) not in (1, n):
            raise ConfigError(f"traffic rates: expected 1 or {n} values, got {len(self.rates)}")
        rates = self.rho * np.broadcast_to(np.asarray(self.rates, dtype=float), (n,))
        return BernoulliTraffic(rates) if self.kind == "bernoulli" else PoissonTraffic(rates)


@dataclass(frozen=True)
class RunSpec:
    horizon: int = 100_000
    runs: int = 10
    seed: int = 1
    record_every: int = 100


@dataclass(frozen=True)
class LabConfig:
    topology: TopologySpec
    schedulers: tuple[SchedulerConfig, ...]
    traffic: TrafficSpec
    run: RunSpec = field(default_factory=RunSpec)
    base_dir: Path | None = field(default=None, compare=False)

    def graph(self) -> ConflictGraph:
        return self.topology.build(self.base_dir)


# ---------------------------------------------------------------- parsing

def _int(v: str) -> int:
    return int(v)


def _float(v: str) -> float:
    x = float(v)
    if math.isnan(x):
        raise ValueError("nan")
    return x


def _floats(v: str) -> tuple[float, ...]:
    return tuple(_float(s) for s in v.replace(",", " ").split())


_TOPOLOGY_KEYS = {"name": str, "links": _int, "hops": _int, "file": str}
_TRAFFIC_KEYS = {"kind": str, "rho": _float, "eps": _float, "rates": _floats}
_RUN_KEYS = {"horizon": _int, "runs": _int, "seed": _int, "record_every": _int}
_SCHEDULER_KEYS = {
    "algorithm": str,
    "window": _int,
    "frames": _int,
    "log_base": _float,
    "frame_width": _int,
    "w0": _int,
    "q0": _float,
    "weight": str,
    "alpha": _float,
    "p_min": _float,
}
_SECTIONS = {
    "topology": _TOPOLOGY_KEYS,
    "scheduler": _SCHEDULER_KEYS,
    "traffic": _TRAFFIC_KEYS,
    "run": _RUN_KEYS,
}


@dataclass
class _Section:
    name: str
    line: int
    values: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict)


def _split_sections(text: str, allowed: dict, source: str) -> list[_Section]:
    sections: list[_Section] = []
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigFileError(f"malformed section header {raw.strip()!r}", no, source)
            name = line[1:-1].strip().lower()
            if name not in allowed:
                raise ConfigFileError(f"unknown section [{name}]", no, source)
            sections.append(_Section(name, no))
            continue
        if not sections:
            raise ConfigFileError("key outside of any section", no, source)
        sec = sections[-1]
        keys = allowed[sec.name]
        if keys is None:  # free-form section, kept verbatim
            sec.values[len(sec.values)] = line
            sec.lines[len(sec.lines)] = no
            continue
        if "=" not in line:
            raise ConfigFileError(f"expected 'key = value', got {line!r}", no, source)
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lower()
        if key not in keys:
            raise ConfigFileError(f"unknown key {key!r} in [{sec.name}]", no, source)
        if key in sec.values:
            raise ConfigFileError(f"duplicate key {key!r} in [{sec.name}]", no, source)
        try:
            sec.values[key] = keys[key](value)
        except ValueError:
            raise ConfigFileError(f"bad value {value!r} for {key!r}", no, source) from None
        sec.lines[key] = no
    return sections


def _build(cls, sec: _Section, source: str, **extra):
    try:
        return cls(**sec.values, **extra)
    except (ConfigError, TrafficError, TopologyError, ValueError) as exc:
        raise ConfigFileError(f"[{sec.name}] {exc}", sec.line, source) from None


def _scheduler(sec: _Section, source: str) -> SchedulerConfig:
    vals = dict(sec.values)
    if "algorithm" not in vals:
        raise ConfigFileError("[scheduler] needs an 'algorithm' key", sec.line, source)
    kind = vals.pop("weight", "log_scaled")
    alpha = vals.pop("alpha", 0.1)
    try:
        weight = WeightFunction(kind, alpha)
        return SchedulerConfig(weight=weight, **vals)
    except (ConfigError, ValueError) as exc:
        raise ConfigFileError(f"[scheduler] {exc}", sec.line, source) from None


def parse_config(text: str, source: str = "", base_dir: Path | None = None) -> LabConfig:
    sections = _split_sections(text, _SECTIONS, source)
    by_name: dict[str, list[_Section]] = {}
    for s in sections:
        by_name.setdefault(s.name, []).append(s)
    for name in ("topology", "traffic", "run"):
        if len(by_name.get(name, [])) > 1:
            raise ConfigFileError(f"section [{name}] given twice", by_name[name][1].line, source)
    for name in ("topology", "scheduler", "traffic"):
        if name not in by_name:
            raise ConfigFileError(f"missing [{name}] section", None, source)

    topo_sec = by_name["topology"][0]
    topo = _build(TopologySpec, topo_sec, source)
    if topo.name not in TOPOLOGY_NAMES:
        raise ConfigFileError(
            f"unknown topology {topo.name!r}; expected one of {', '.join(TOPOLOGY_NAMES)}",
            topo_sec.lines.get("name", topo_sec.line), source,
        )
    if topo.name == "file" and not topo.file:
        raise ConfigFileError("topology 'file' needs a 'file' key", topo_sec.line, source)

    traffic_sec = by_name["traffic"][0]
    if "kind" not in traffic_sec.values:
        raise ConfigFileError("[traffic] needs a 'kind' key", traffic_sec.line, source)
    traffic = _build(TrafficSpec, traffic_sec, source)
    if traffic.kind not in TRAFFIC_KINDS:
        raise ConfigFileError(
            f"unknown traffic kind {traffic.kind!r}; expected one of {', '.join(TRAFFIC_KINDS)}",
            traffic_sec.lines["kind"], source,
        )
    if traffic.kind in ("bernoulli", "poisson") and not traffic.rates:
        raise ConfigFileError(f"{traffic.kind} traffic needs 'rates'", traffic_sec.line, source)

    run = _build(RunSpec, by_name["run"][0], source) if "run" in by_name else RunSpec()
    for key in ("horizon", "runs", "record_every"):
        if getattr(run, key) < 1:
            sec = by_name["run"][0]
            raise ConfigFileError(f"{key} must be at least 1", sec.lines.get(key, sec.line), source)

    schedulers = tuple(_scheduler(s, source) for s in by_name["scheduler"])
    return LabConfig(topo, schedulers, traffic, run, base_dir)


def load_config(path) -> LabConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigFileError(f"cannot read config: {exc.strerror}", None, str(p)) from None
    cfg = parse_config(text, str(p), p.parent)
    if cfg.topology.name == "file":
        # surface topology-file problems as configuration errors up front
        cfg.graph()
    return cfg


# ---------------------------------------------------------------- topology files

_TOPO_FILE_SECTIONS = {"links": None, "conflicts": None}


def parse_topology(text: str, source: str = "") -> ConflictGraph:
    sections = _split_sections(text, _TOPO_FILE_SECTIONS, source)
    names = [s.name for s in sections]
    for n in ("links", "conflicts"):
        if names.count(n) != 1:
            raise ConfigFileError(f"topology file needs exactly one [{n}] section", None, source)
    links_sec = sections[names.index("links")]
    conf_sec = sections[names.index("conflicts")]

    endpoints: dict[int, tuple[str, str]] = {}
    for k, line in links_sec.values.items():
        no = links_sec.lines[k]
        head, sep, rest = line.partition(":")
        parts = rest.split()
        if not sep or len(parts) != 2:
            raise ConfigFileError(f"expected 'id: u v', got {line!r}", no, source)
        try:
            lid = int(head)
        except ValueError:
            raise ConfigFileError(f"link id {head.strip()!r} is not an integer", no, source) from None
        if lid in endpoints:
            raise ConfigFileError(f"link {lid} defined twice", no, source)
        endpoints[lid] = (parts[0], parts[1])
    n = len(endpoints)
    if n == 0:
        raise ConfigFileError("no links defined", links_sec.line, source)
    if sorted(endpoints) != list(range(1, n + 1)):
        raise ConfigFileError(f"link ids must be exactly 1..{n}", links_sec.line, source)
    links = [endpoints[i] for i in range(1, n + 1)]

    hops = None
    pairs = []
    for k, line in conf_sec.values.items():
        no = conf_sec.lines[k]
        key, sep, value = line.partition("=") if "=" in line else line.partition(":")
        key, value = key.strip().lower(), value.strip()
        if sep and key == "conflict":
            line = value
        elif sep:
            if key != "interference":
                raise ConfigFileError(f"unknown key {key!r} in [conflicts]", no, source)
            try:
                hops = int(value.lower().removesuffix("-hop"))
            except ValueError:
                raise ConfigFileError(f"bad interference value {value!r}", no, source) from None
            continue
        try:
            a, b = (int(s) for s in line.split())
        except ValueError:
            raise ConfigFileError(f"expected a conflict pair 'i j', got {line!r}", no, source) from None
        pairs.append((a, b))
    if hops is not None and pairs:
        raise ConfigFileError("give either 'interference = k' or conflict pairs, not both",
                              conf_sec.line, source)
    try:
        if hops is not None:
            return build_khop_conflicts(links, links, hops, name=Path(source).stem if source else "")
        return ConflictGraph.from_pairs(n, pairs, name=Path(source).stem if source else "")
    except TopologyError as exc:
        raise ConfigFileError(str(exc), conf_sec.line, source) from None


def load_topology_file(path) -> ConflictGraph:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigFileError(f"cannot read topology file: {exc.strerror}", None, str(p)) from None
    return parse_topology(text, str(p))


# ---------------------------------------------------------------- emitting

def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


_RELEVANT = {
    "qcsma": ("window", "weight", "alpha", "p_min"),
    "dms": ("window",),
    "dgms": ("frames", "log_base", "frame_width"),
    "hybrid": ("w0", "frames", "log_base", "frame_width", "q0", "weight", "alpha", "p_min"),
    "gms": (),
    "mws": ("weight", "alpha"),
    "cyclic": (),
}


def _scheduler_items(sc: SchedulerConfig) -> list[tuple[str, object]]:
    flat = {f.name: getattr(sc, f.name) for f in fields(sc) if f.name != "weight"}
    flat["weight"] = sc.weight.kind
    flat["alpha"] = sc.weight.alpha
    default = SchedulerConfig(sc.algorithm)
    dflat = {f.name: getattr(default, f.name) for f in fields(default) if f.name != "weight"}
    dflat["weight"] = default.weight.kind
    dflat["alpha"] = default.weight.alpha
    keys = [k for k in _SCHEDULER_KEYS if k != "algorithm"]
    shown = [k for k in keys if k in _RELEVANT[sc.algorithm] or flat[k] != dflat[k]]
    return [("algorithm", sc.algorithm)] + [(k, flat[k]) for k in shown]


def dump_config(cfg: LabConfig) -> str:
    out = ["[topology]", f"name = {cfg.topology.name}"]
    t = cfg.topology
    if t.name in ("ring", "path"):
        out.append(f"links = {t.links}")
    if t.name == "ring":
        out.append(f"hops = {t.hops}")
    if t.name == "file":
        out.append(f"file = {t.file}")
    for sc in cfg.schedulers:
        out += ["", "[scheduler]"]
        out += [f"{k} = {_fmt(v)}" for k, v in _scheduler_items(sc)]
    tr = cfg.traffic
    out += ["", "[traffic]", f"kind = {tr.kind}"]
    default_tr = TrafficSpec()
    if tr.kind == "ring-adversarial":
        out.append(f"eps = {_fmt(tr.eps)}")
        if tr.rho != default_tr.rho:
            out.append(f"rho = {_fmt(tr.rho)}")
    else:
        out.append(f"rho = {_fmt(tr.rho)}")
        if tr.eps != default_tr.eps:
            out.append(f"eps = {_fmt(tr.eps)}")
    if tr.rates:
        out.append(f"rates = {_fmt(tr.rates)}")
    r = cfg.run
    out += ["", "[run]", f"horizon = {r.horizon}", f"runs = {r.runs}",
            f"seed = {r.seed}", f"record_every = {r.record_every}"]
    return "\n".join(out) + "\n"


def paper_schedulers() -> tuple[SchedulerConfig, ...]:
    """The four distributed algorithms with a 48 mini-slot control phase each."""
    weight = WeightFunction("log_scaled", 0.1)
    return (
        SchedulerConfig("dms", window=48),
        SchedulerConfig("dgms", frames=3, log_base=8.0, frame_width=16),
        SchedulerConfig("qcsma", window=48, weight=weight),
        SchedulerConfig("hybrid", w0=5, frames=3, log_base=8.0, frame_width=14, q0=100.0, weight=weight),
    )


def paper_defaults(experiment: str) -> LabConfig:
    if experiment == "grid":
        return LabConfig(TopologySpec("grid24"), paper_schedulers(),
                         TrafficSpec("bernoulli-grid", rho=0.9))
    if experiment == "ring":
        return LabConfig(TopologySpec("ring", links=9, hops=2), paper_schedulers(),
                         TrafficSpec("ring-adversarial", eps=0.09))
    raise ConfigError(f"unknown experiment {experiment!r}; expected 'grid' or 'ring'")
