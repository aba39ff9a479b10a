"""Experiment configs, closed-form predictions and record output."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np

from .consensus import ConsensusRule, RuleKind, success_probability, target
from .ledger import COIN, Chain, ChainParams, as_fraction, fee_for, to_units
from .simulator import Mode, PartySpec, measure_block_time, run_chain_build, run_race
from .strategies import Strategy, adversary_earning_rate, funding_allocations, sustainability_check

EULER_GAMMA = 0.5772156649015329

COMMANDS = ("block-time", "chain-build", "race", "earning-rate", "sustainability")

CSV_COLUMNS = (
    "command",
    "rule",
    "D",
    "F",
    "E",
    "Rwd",
    "FPC",
    "WR",
    "L",
    "trials",
    "seed",
    "metric",
    "empirical",
    "theoretical",
    "relative_error",
)


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class SimConfig:
    rule: str = "PSP"
    D: int = 16
    F: int | None = None
    E: int | None = None
    Rwd: Any = 50
    FPC: Any = 0.1
    WR: Any = 1
    L: int = 512
    trials: int = 200
    seed: int = 0
    mode: str = "geometric"
    genesis: list = field(default_factory=list)  # [[party, coins], ...]
    hashrates: list = field(default_factory=lambda: [[1, 1.0]])  # [[party, rate], ...]
    CN: Any = None
    s: Any = 0  # block-time: spending statistic in coins
    S: Any = None  # explicit spend per block in coins (overrides WR)
    horizon: float | None = None  # race: ticks
    max_blocks: int | None = None  # race: per-party cap
    adversary_WR: Any = None  # race: adversary work ratio (honest uses WR)

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        if not isinstance(data, dict):
            raise ConfigError("config", "top level must be an object")
        known = {f.name for f in dataclasses.fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown field")
        cfg = cls(**data)
        cfg.genesis = [list(x) for x in cfg.genesis]
        cfg.hashrates = [list(x) for x in cfg.hashrates]
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "SimConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("config", str(exc)) from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    # --- derived values ---------------------------------------------------

    def consensus_rule(self) -> ConsensusRule:
        kind = RuleKind(self.rule)
        return ConsensusRule(
            kind,
            self.D,
            self.F if kind in (RuleKind.PRS, RuleKind.RSO) else None,
            self.E if kind in (RuleKind.PSO, RuleKind.RSO) else None,
        )

    @property
    def reward_units(self) -> int:
        return to_units(self.Rwd)

    @property
    def fpc(self) -> Fraction:
        return as_fraction(self.FPC)

    @property
    def wr(self) -> Fraction:
        return as_fraction(self.WR)

    def strategy(self, wr=None) -> Strategy:
        min_age = self.consensus_rule().experience
        if self.S is not None and wr is None:
            return Strategy.fixed(to_units(self.S), min_age)
        return Strategy.self_spend(self.reward_units, self.fpc, self.wr if wr is None else wr, min_age)

    def genesis_units(self) -> list[tuple[int, int]]:
        return [(int(p), to_units(a)) for p, a in self.genesis]

    def network_coins(self) -> Fraction:
        if self.CN is not None:
            return as_fraction(self.CN)
        return sum((as_fraction(a) for _, a in self.genesis), Fraction(0))

    def validate(self) -> None:
        try:
            kind = RuleKind(self.rule)
        except ValueError:
            raise ConfigError("rule", f"must be one of {[k.value for k in RuleKind]}") from None
        _check_int(self.D, "D", 1)
        if kind in (RuleKind.PRS, RuleKind.RSO):
            _check_int(self.F, "F", 1)
        if kind in (RuleKind.PSO, RuleKind.RSO):
            _check_int(self.E, "E", 0)
        _check_int(self.L, "L", 1)
        _check_int(self.trials, "trials", 1)
        _check_int(self.seed, "seed", 0)
        if self.mode not in {m.value for m in Mode}:
            raise ConfigError("mode", "must be 'geometric' or 'grind'")
        for name in ("Rwd", "FPC", "WR"):
            value = _coin_field(self, name)
            if value < 0 or (name != "Rwd" and value == 0):
                raise ConfigError(name, "out of range")
        for name in ("s", "S", "adversary_WR", "CN"):
            if getattr(self, name) is not None and _coin_field(self, name) < 0:
                raise ConfigError(name, "must be non-negative")
        for entry in self.genesis:
            if len(entry) != 2:
                raise ConfigError("genesis", "entries are [party, amount]")
            _check_int(entry[0], "genesis", 0)
            try:
                if to_units(entry[1]) < 0:
                    raise ConfigError("genesis", "negative allocation")
            except ValueError as exc:
                raise ConfigError("genesis", str(exc)) from None
        if not self.hashrates:
            raise ConfigError("hashrates", "at least one party required")
        for entry in self.hashrates:
            if len(entry) != 2:
                raise ConfigError("hashrates", "entries are [party, rate]")
            _check_int(entry[0], "hashrates", 0)
            if not isinstance(entry[1], (int, float)) or not entry[1] > 0:
                raise ConfigError("hashrates", "rates must be positive numbers")
        genesis_sum = sum((as_fraction(a) for _, a in self.genesis), Fraction(0))
        if self.CN is not None and as_fraction(self.CN) < genesis_sum:
            raise ConfigError("CN", "must be at least the genesis supply")
        if self.horizon is not None and not self.horizon > 0:
            raise ConfigError("horizon", "must be positive")
        if self.max_blocks is not None:
            _check_int(self.max_blocks, "max_blocks", 1)


def _check_int(value, name: str, minimum: int) -> None:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(name, f"must be an integer >= {minimum}")


def _coin_field(cfg: SimConfig, name: str) -> Fraction:
    try:
        return as_fraction(getattr(cfg, name))
    except (ValueError, ArithmeticError, TypeError):
        raise ConfigError(name, "not a number") from None


# --- closed forms -------------------------------------------------------------


def block_time_oracle(rule: ConsensusRule, spend_coins: float, i: int) -> float:
    """Expected attempts for a solo builder's block ``i`` (0-based) at a constant spend."""
    if rule.kind is RuleKind.POW:
        return 2.0**rule.D
    window = rule.window
    k = i if window is None else min(i, window)
    return 2.0**rule.D / (1 + k * spend_coins)


def theoretical_time(config: SimConfig) -> dict:
    """Asymptotic and exact expected time for a solo builder to add L blocks.

    ``exact_oracle`` sums the per-block expectations 2^D / (1 + s) from the
    first block, which is found at POW difficulty. ``exact_after_first`` drops
    that block, matching the index range the asymptotic formulas sum over.
    ``model_oracle`` is what the simulator actually converges to: a block
    always takes at least one attempt, so each term is floored at 1 once
    1 + s reaches 2^D.
    """
    rule = config.consensus_rule()
    D, L = rule.D, config.L
    reward = float(Fraction(config.reward_units, COIN))
    fpc = float(config.fpc)
    strategy = config.strategy()
    S = strategy.spend / COIN
    wr = float(config.wr) if config.S is None else S * fpc / reward
    kind = rule.kind
    if kind is RuleKind.POB:
        b0 = sum(a for p, a in config.genesis_units() if p == _builder(config)) / COIN
        per_block = reward - fee_for(strategy.spend, config.fpc) / COIN
        times = [2.0**D / (1 + b0 + i * per_block) for i in range(L)]
        asym = 2.0**D * math.log(L) / per_block if per_block > 0 else math.inf
    else:
        times = [block_time_oracle(rule, S, i) for i in range(L)]
        if kind is RuleKind.POW:
            asym = L * 2.0**D
        elif kind is RuleKind.PSP:
            asym = 2.0**D / wr * fpc / reward * (EULER_GAMMA + math.log(L))
        elif kind is RuleKind.PSO:
            asym = 2.0**D * fpc / reward / wr * math.log(L)
        else:
            asym = 2.0**D / rule.F * fpc / reward / wr * L
    model = [max(1.0, t) for t in times]
    return {
        "asymptotic": asym,
        "exact_oracle": math.fsum(times),
        "exact_after_first": math.fsum(times[1:]),
        "model_oracle": math.fsum(model),
        "model_after_first": math.fsum(model[1:]),
    }


def _builder(config: SimConfig) -> int:
    return int(config.hashrates[0][0])


def _rate(config: SimConfig, k: int = 0) -> float:
    return float(config.hashrates[k][1])


# --- running ------------------------------------------------------------------


@dataclass
class ExperimentResult:
    command: str
    config: SimConfig
    records: list[dict]
    exit_code: int = 0
    message: str | None = None

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in self.records:
            writer.writerow([_fmt(rec[c]) for c in CSV_COLUMNS])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "command": self.command,
            "seed": self.config.seed,
            "config": self.config.to_dict(),
            "exit_code": self.exit_code,
            "message": self.message,
            "records": [{k: _jsonable(v) for k, v in rec.items()} for rec in self.records],
        }

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.csv").write_text(self.csv_text())
        (out / "summary.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _jsonable(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else repr(v)
    return value


def _record(config: SimConfig, command: str, metric: str, empirical, theoretical) -> dict:
    rule = config.consensus_rule()
    emp = float(empirical) if empirical is not None else math.nan
    theo = float(theoretical) if theoretical is not None else math.nan
    if math.isfinite(theo) and theo != 0 and math.isfinite(emp):
        rel = abs(emp - theo) / abs(theo)
    else:
        rel = math.nan
    return {
        "command": command,
        "rule": rule.kind.value,
        "D": rule.D,
        "F": rule.F,
        "E": rule.E,
        "Rwd": config.Rwd,
        "FPC": config.FPC,
        "WR": config.WR,
        "L": config.L,
        "trials": config.trials,
        "seed": config.seed,
        "metric": metric,
        "empirical": emp,
        "theoretical": theo,
        "relative_error": rel,
    }


def _genesis_or_funding(config: SimConfig, parties_and_strategies) -> list[tuple[int, int]]:
    if config.genesis:
        return config.genesis_units()
    alloc = []
    count = config.consensus_rule().experience + 2
    for party, strategy in parties_and_strategies:
        alloc.extend(funding_allocations(party, strategy, config.fpc, count))
    return alloc


def run_experiment(config: SimConfig, command: str) -> ExperimentResult:
    if command not in COMMANDS:
        raise ConfigError("command", f"must be one of {COMMANDS}")
    config.validate()
    handler = {
        "block-time": _block_time,
        "chain-build": _chain_build,
        "race": _race,
        "earning-rate": _earning_rate,
        "sustainability": _sustainability,
    }[command]
    return handler(config, command)


def _block_time(config: SimConfig, command: str) -> ExperimentResult:
    rule = config.consensus_rule()
    rate = _rate(config)
    stats = measure_block_time(rule, as_fraction(config.s), rate, config.trials, config.seed, Mode(config.mode))
    p = success_probability(target(rule.D, as_fraction(config.s)))
    exact = 1 / p / rate
    sd = math.sqrt(1 - p) / p / rate
    records = [
        _record(config, command, "mean_block_time", stats.mean, exact),
        _record(config, command, "block_time_stderr", stats.stderr, sd / math.sqrt(stats.n)),
    ]
    return ExperimentResult(command, config, records)


def _chain_build(config: SimConfig, command: str) -> ExperimentResult:
    rule = config.consensus_rule()
    strategy = config.strategy()
    builder = _builder(config)
    genesis = _genesis_or_funding(config, [(builder, strategy)])
    result = run_chain_build(
        rule,
        strategy,
        config.L,
        config.trials,
        config.seed,
        genesis=genesis,
        reward=config.reward_units,
        fpc=config.fpc,
        builder=builder,
        hashrate=_rate(config),
        mode=Mode(config.mode),
    )
    if not result.completed:
        rec = _record(config, command, "failure_height", result.failure_height, None)
        return ExperimentResult(command, config, [rec], 3, result.failure_reason)
    theory = theoretical_time(config)
    rate = _rate(config)
    after_first = result.block_times[:, 1:].sum(axis=1)
    records = [
        _record(config, command, "total_time", result.stats.mean, theory["exact_oracle"] / rate),
        _record(config, command, "total_time_stderr", result.stats.stderr, None),
        _record(config, command, "time_after_first_block", after_first.mean(), theory["exact_after_first"] / rate),
        _record(config, command, "time_after_first_block_vs_asymptotic", after_first.mean(), theory["asymptotic"] / rate),
        _record(config, command, "total_time_vs_model", result.stats.mean, theory["model_oracle"] / rate),
    ]
    if rule.window is not None and config.L > rule.window:
        steady = result.block_times[:, rule.window :]
        expected = block_time_oracle(rule, strategy.spend / COIN, rule.window) / rate
        records.append(_record(config, command, "steady_block_time", steady.mean(), expected))
    return ExperimentResult(command, config, records)


def _race(config: SimConfig, command: str) -> ExperimentResult:
    if len(config.hashrates) < 2:
        raise ConfigError("hashrates", "race needs [honest, adversary] entries")
    if config.horizon is None:
        raise ConfigError("horizon", "race needs a horizon in ticks")
    rule = config.consensus_rule()
    (h_id, h_rate), (a_id, a_rate) = config.hashrates[:2]
    adv_wr = config.adversary_WR if config.adversary_WR is not None else config.WR
    h_strategy = config.strategy(config.wr)
    a_strategy = config.strategy(as_fraction(adv_wr))
    genesis = _genesis_or_funding(config, [(h_id, h_strategy), (a_id, a_strategy)])
    base = Chain.create(genesis, ChainParams(config.reward_units, config.fpc, rule.experience))
    honest = PartySpec(int(h_id), float(h_rate), h_strategy)
    adversary = PartySpec(int(a_id), float(a_rate), a_strategy)
    overtakes = 0
    lengths = np.zeros((config.trials, 2))
    nets = np.zeros((config.trials, 2))
    emp = [0.0, 0.0]
    theo = [0.0, 0.0]
    for t in range(config.trials):
        res = run_race(
            honest, adversary, rule, config.horizon, config.seed, base=base, trial=t,
            max_blocks=config.max_blocks, mode=Mode(config.mode),
        )
        overtakes += res.overtook
        lengths[t] = (res.honest_length - len(base), res.adversary_length - len(base))
        nets[t] = (res.honest_net / COIN, res.adversary_net / COIN)
        n = min(len(res.honest_times), len(res.adversary_times))
        for k, (times, strat, rate) in enumerate(
            ((res.honest_times, h_strategy, h_rate), (res.adversary_times, a_strategy, a_rate))
        ):
            emp[k] += times[1:n].sum()
            theo[k] += sum(block_time_oracle(rule, strat.spend / COIN, i) for i in range(1, n)) / rate
    records = [
        _record(config, command, "overtake_frequency", overtakes / config.trials, None),
        _record(config, command, "honest_blocks", lengths[:, 0].mean(), None),
        _record(config, command, "adversary_blocks", lengths[:, 1].mean(), None),
        _record(config, command, "honest_net_coins", nets[:, 0].mean(), None),
        _record(config, command, "adversary_net_coins", nets[:, 1].mean(), None),
        _record(
            config,
            command,
            "adversary_to_honest_block_time_ratio",
            emp[1] / emp[0] if emp[0] else math.nan,
            theo[1] / theo[0] if theo[0] else math.nan,
        ),
    ]
    return ExperimentResult(command, config, records)


def _earning_rate(config: SimConfig, command: str) -> ExperimentResult:
    rule = config.consensus_rule()
    if rule.kind not in (RuleKind.PRS, RuleKind.RSO):
        raise ConfigError("rule", "earning-rate requires PRS or RSO")
    if not 0 < config.wr < 1:
        raise ConfigError("WR", "earning-rate requires 0 < WR < 1")
    er = adversary_earning_rate(rule, config.wr, config.reward_units, config.fpc, config.trials, config.seed)
    records = [
        _record(config, command, "earning_rate_per_tick", er.measured, er.formula),
        _record(config, command, "steady_block_time", er.steady_block_time, er.steady_block_time_exact),
    ]
    return ExperimentResult(command, config, records)


def _sustainability(config: SimConfig, command: str) -> ExperimentResult:
    strategy = config.strategy()
    builder = _builder(config)
    initial = sum(a for p, a in config.genesis_units() if p == builder)
    if initial <= 0:
        raise ConfigError("genesis", "sustainability needs a funded builder")
    report = sustainability_check(
        strategy,
        config.L,
        initial_balance=initial,
        reward=config.reward_units,
        fpc=config.fpc,
        party=builder,
        rule=config.consensus_rule(),
        seed=config.seed,
        split=config.consensus_rule().experience > 0,
    )
    records = [
        _record(config, command, "failure_height", report.failure_height, report.bound),
        _record(
            config,
            command,
            "balance_delta_per_block",
            report.per_block_delta / COIN,
            (config.reward_units - strategy.spend * config.fpc) / COIN,
        ),
    ]
    msg = None if report.failure_height is None else f"plan infeasible at height {report.failure_height}"
    return ExperimentResult(command, config, records, 0, msg)
