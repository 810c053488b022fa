"""Scenario configuration: YAML (or JSON) text -> validated ``ScenarioConfig``."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any

import yaml

STRATEGIES = ("honest", "colliding", "fraudulent-delay", "partition-collusion")
DELAY_KINDS = ("uniform", "geometric")
# deliberately broken finality builds, used to show the safety monitor trips
FAULTS = (None, "commit-quorum-1", "finalize-tip")


class ConfigError(ValueError):
    """Carries a list of (field path, reason) diagnostics."""

    def __init__(self, diagnostics: list[tuple[str, str]]) -> None:
        self.diagnostics = diagnostics
        super().__init__("; ".join(f"{p}: {r}" for p, r in diagnostics))


@dataclass(frozen=True)
class DelaySpec:
    kind: str = "uniform"
    # uniform: delay in [1, max_ticks]; geometric: 1 + Geom(p), capped at max_ticks
    max_ticks: int = 12
    p: float = 0.3


@dataclass(frozen=True)
class AbnormalWindow:
    start: int
    end: int  # inclusive round
    groups: tuple[tuple[int, ...], ...] = ()
    split: int = 2
    delay: DelaySpec = field(default_factory=DelaySpec)


@dataclass(frozen=True)
class AdversarySpec:
    strategy: str = "honest"
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ScenarioConfig:
    n: int
    f: int
    c: int
    d: int
    delta: int
    rounds: int
    seed: int = 0
    epoch_length: int = 100
    tau0: int = 2
    tau1: int = 10
    confirm_depth: int = 7
    mode_window: int = 3
    delta_multiplier: int = 3
    endorse_offset: int | None = None  # ticks into the round; default delta
    recovery_length: int = 10
    orphan_ttl: int = 1000
    honest_filter: bool = True
    strict_finality: bool = False
    pp_clears_pc: bool = True  # False: opt-in variant where the prepare rule keeps pc
    tx_per_round: int = 2
    max_block_txs: int = 8
    adversaries: tuple[int, ...] | None = None
    adversary: AdversarySpec = field(default_factory=AdversarySpec)
    situation_schedule: tuple[AbnormalWindow, ...] = ()
    scripted_leaders: dict = field(default_factory=dict)  # round -> node id
    fault: str | None = None
    trace_level: str = "compact"

    @property
    def round_ticks(self) -> int:
        return self.delta_multiplier * self.delta

    @property
    def endorse_tick(self) -> int:
        return self.delta if self.endorse_offset is None else self.endorse_offset

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adversaries"] = list(self.adversaries) if self.adversaries is not None else None
        d["situation_schedule"] = [
            {**asdict(w), "groups": [list(g) for g in w.groups]} for w in self.situation_schedule]
        d["scripted_leaders"] = {str(k): v for k, v in sorted(self.scripted_leaders.items())}
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_changes(self, **kw: Any) -> "ScenarioConfig":
        data = self.to_dict()
        data.update(kw)
        return from_dict(data)


_TOP = {f.name for f in fields(ScenarioConfig)}
_REQUIRED = ("n", "f", "c", "d", "delta", "rounds")


def _int(diag, path, v, lo=None):
    if isinstance(v, bool) or not isinstance(v, int):
        diag.append((path, "must be an integer"))
        return None
    if lo is not None and v < lo:
        diag.append((path, f"must be >= {lo}"))
    return v


def _window(diag, path: str, raw: Any) -> AbnormalWindow | None:
    if not isinstance(raw, dict):
        diag.append((path, "must be a mapping"))
        return None
    allowed = {"start", "end", "groups", "split", "delay"}
    for k in raw:
        if k not in allowed:
            diag.append((f"{path}.{k}", "unknown key"))
    start = _int(diag, f"{path}.start", raw.get("start"), 1)
    end = _int(diag, f"{path}.end", raw.get("end"), 1)
    groups = raw.get("groups") or []
    split = raw.get("split", 2)
    _int(diag, f"{path}.split", split, 1)
    delay_raw = raw.get("delay") or {}
    if not isinstance(delay_raw, dict):
        diag.append((f"{path}.delay", "must be a mapping"))
        delay_raw = {}
    for k in delay_raw:
        if k not in {"kind", "max_ticks", "p"}:
            diag.append((f"{path}.delay.{k}", "unknown key"))
    delay = DelaySpec(**{k: v for k, v in delay_raw.items() if k in {"kind", "max_ticks", "p"}})
    if delay.kind not in DELAY_KINDS:
        diag.append((f"{path}.delay.kind", f"must be one of {DELAY_KINDS}"))
    if not (0 < float(delay.p) <= 1):
        diag.append((f"{path}.delay.p", "must be in (0, 1]"))
    _int(diag, f"{path}.delay.max_ticks", delay.max_ticks, 1)
    if start is not None and end is not None and end < start:
        diag.append((path, "end must be >= start"))
    if start is None or end is None:
        return None
    return AbnormalWindow(start, end, tuple(tuple(int(x) for x in g) for g in groups), int(split), delay)


def from_dict(raw: Any) -> ScenarioConfig:
    diag: list[tuple[str, str]] = []
    if not isinstance(raw, dict):
        raise ConfigError([("<root>", "config must be a mapping")])
    for k in raw:
        if k not in _TOP:
            diag.append((k, "unknown key"))
    for k in _REQUIRED:
        if k not in raw:
            diag.append((k, "required"))
    if diag:
        raise ConfigError(diag)
    kw: dict[str, Any] = {}
    for k, v in raw.items():
        if k in ("adversary", "situation_schedule", "adversaries", "scripted_leaders"):
            continue
        kw[k] = v
    for k in ("n", "f", "c", "d", "delta", "rounds", "epoch_length", "tau0", "tau1",
              "confirm_depth", "mode_window", "delta_multiplier", "recovery_length",
              "orphan_ttl", "tx_per_round", "max_block_txs", "seed"):
        if k in kw:
            _int(diag, k, kw[k], 0)

    adv_raw = raw.get("adversary") or {}
    if isinstance(adv_raw, str):
        adv_raw = {"strategy": adv_raw}
    if not isinstance(adv_raw, dict):
        diag.append(("adversary", "must be a mapping or strategy id"))
        adv_raw = {}
    for k in adv_raw:
        if k not in ("strategy", "params"):
            diag.append((f"adversary.{k}", "unknown key"))
    strategy = adv_raw.get("strategy", "honest")
    if strategy not in STRATEGIES:
        diag.append(("adversary.strategy", f"must be one of {STRATEGIES}"))
    kw["adversary"] = AdversarySpec(strategy, dict(adv_raw.get("params") or {}))

    sched = raw.get("situation_schedule") or []
    if not isinstance(sched, list):
        diag.append(("situation_schedule", "must be a list"))
        sched = []
    windows = [w for i, x in enumerate(sched) if (w := _window(diag, f"situation_schedule[{i}]", x))]
    kw["situation_schedule"] = tuple(sorted(windows, key=lambda w: w.start))
    if raw.get("adversaries") is not None:
        kw["adversaries"] = tuple(int(x) for x in raw["adversaries"])
    sl = raw.get("scripted_leaders") or {}
    if not isinstance(sl, dict):
        diag.append(("scripted_leaders", "must be a mapping round -> node"))
        sl = {}
    kw["scripted_leaders"] = {int(k): int(v) for k, v in sl.items()}
    if diag:
        raise ConfigError(diag)
    cfg = ScenarioConfig(**kw)
    validate(cfg)
    return cfg


def validate(cfg: ScenarioConfig) -> None:
    diag: list[tuple[str, str]] = []
    if cfg.n < 1:
        diag.append(("n", "must be >= 1"))
    if 3 * cfg.f + 1 > cfg.n:
        diag.append(("f", f"3f+1 <= n violated (3*{cfg.f}+1 > {cfg.n})"))
    if cfg.d < 1:
        diag.append(("d", "must be >= 1"))
    if cfg.d > cfg.c:
        diag.append(("d", f"d <= c violated ({cfg.d} > {cfg.c})"))
    if cfg.c > cfg.n:
        diag.append(("c", f"c <= n violated ({cfg.c} > {cfg.n})"))
    if cfg.delta < 1:
        diag.append(("delta", "must be >= 1"))
    if cfg.rounds < 1:
        diag.append(("rounds", "must be >= 1"))
    if cfg.epoch_length < 1:
        diag.append(("epoch_length", "must be >= 1"))
    if cfg.confirm_depth < 1:
        diag.append(("confirm_depth", "must be >= 1"))
    if cfg.mode_window < 1:
        diag.append(("mode_window", "must be >= 1"))
    if cfg.delta_multiplier < 3:
        diag.append(("delta_multiplier", "a round needs at least 3 delta (broadcast, endorse, collect)"))
    if not 0 < cfg.endorse_tick < 2 * cfg.delta + (cfg.delta_multiplier - 3) * cfg.delta:
        diag.append(("endorse_offset", "endorsement must happen inside the round before collection"))
    if cfg.trace_level not in ("compact", "full"):
        diag.append(("trace_level", "must be 'compact' or 'full'"))
    if cfg.adversaries is not None:
        ids = cfg.adversaries
        if len(set(ids)) != len(ids) or len(ids) != cfg.f or any(not 0 <= i < cfg.n for i in ids):
            diag.append(("adversaries", "must list exactly f distinct node ids in [0, n)"))
    for rnd, node in cfg.scripted_leaders.items():
        if not 0 <= node < cfg.n or rnd < 1:
            diag.append((f"scripted_leaders.{rnd}", "round must be >= 1 and node in [0, n)"))
    prev_end = None
    for i, w in enumerate(cfg.situation_schedule):
        path = f"situation_schedule[{i}]"
        if w.end > cfg.rounds:
            diag.append((path, "window ends after the last round"))
        if cfg.rounds - w.end < cfg.recovery_length:
            diag.append((path, f"needs a normal stretch of >= recovery_length={cfg.recovery_length} rounds after it"))
        if prev_end is not None and w.start - prev_end - 1 < cfg.recovery_length:
            diag.append((path, "overlaps or follows the previous window without a recovery stretch"))
        for g in w.groups:
            for x in g:
                if not 0 <= x < cfg.n:
                    diag.append((f"{path}.groups", f"node {x} out of range"))
        prev_end = w.end
    if cfg.fault not in FAULTS:
        diag.append(("fault", "unknown fault id"))
    if diag:
        raise ConfigError(diag)


def parse_config(text: str) -> ScenarioConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([("<root>", f"unparseable: {exc}")]) from None
    return from_dict(raw)


def load_config(path: str) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
