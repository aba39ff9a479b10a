"""Party behaviours and the economics of solo chain building."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from .consensus import ConsensusRule, RuleKind
from .ledger import COIN, Chain, InsufficientFunds, PartyId, Transaction, as_fraction, fee_for, make_transaction
from .simulator import run_chain_build


class StrategyKind(str, enum.Enum):
    HONEST = "honest"
    SELF_SPEND = "self_spend"


class Plan(NamedTuple):
    transactions: tuple[Transaction, ...]
    reason: str | None = None  # set when the plan could not be funded


@dataclass(frozen=True)
class Strategy:
    kind: StrategyKind
    spend: int  # S, base units paid per block
    wr: Fraction = Fraction(1)
    min_age: int = 0
    payees: tuple[PartyId, ...] = ()

    @classmethod
    def self_spend(cls, reward: int, fpc, wr=1, min_age: int = 0) -> "Strategy":
        """Pay (Rwd / FPC) * WR to oneself every block; S rounds down."""
        wr = as_fraction(wr)
        if not wr > 0:
            raise ValueError("WR must be positive")
        spend = math.floor(reward * wr / as_fraction(fpc))
        return cls(StrategyKind.SELF_SPEND, spend, wr, min_age)

    @classmethod
    def honest(cls, reward: int, fpc, payees: Sequence[PartyId], wr=1, min_age: int = 0) -> "Strategy":
        if not payees:
            raise ValueError("honest strategy needs at least one payee")
        base = cls.self_spend(reward, fpc, wr, min_age)
        return cls(StrategyKind.HONEST, base.spend, base.wr, min_age, tuple(payees))

    @classmethod
    def fixed(cls, spend: int, min_age: int = 0) -> "Strategy":
        """Self-payment of an explicit ``spend`` per block."""
        return cls(StrategyKind.SELF_SPEND, spend, Fraction(0), min_age)

    def plan(self, party: PartyId, chain: Chain, time: int | None = None) -> Plan:
        return plan_block_transactions(self, party, chain, time)


def plan_block_transactions(strategy: Strategy, party: PartyId, chain: Chain, time: int | None = None) -> Plan:
    """Transactions ``party`` puts in its next block on ``chain``.

    Each payee gets its own transaction over disjoint inputs; change is not
    spendable until the block is on chain. If any leg cannot be funded the
    plan is empty and carries the shortfall message.
    """
    if strategy.spend <= 0:
        return Plan(())
    if strategy.kind is StrategyKind.SELF_SPEND:
        legs = [(party, strategy.spend)]
    else:
        k = len(strategy.payees)
        share, extra = divmod(strategy.spend, k)
        legs = [(payee, share + (1 if i < extra else 0)) for i, payee in enumerate(strategy.payees)]
    txs = []
    used: set = set()
    for payee, amount in legs:
        if amount <= 0:
            continue
        try:
            tx = make_transaction(party, payee, amount, chain, strategy.min_age, time, used)
        except InsufficientFunds as exc:
            return Plan((), str(exc))
        used.update(tx.inputs)
        txs.append(tx)
    return Plan(tuple(txs))


def funding_allocations(party: PartyId, strategy: Strategy, fpc, count: int) -> list[tuple[PartyId, int]]:
    """``count`` genesis outputs, each covering one block's payment plus fee.

    Splitting matters under coin-age rules: a single large output would have
    its change re-created young after the first spend.
    """
    unit = strategy.spend + fee_for(strategy.spend, as_fraction(fpc))
    return [(party, unit)] * count


# --- economics ---------------------------------------------------------------


@dataclass
class SustainabilityReport:
    failure_height: int | None
    balances: np.ndarray  # builder balance after each block, base units
    per_block_delta: int  # Rwd - fee(S), base units
    bound: float | None  # initial / (S * FPC - Rwd) + 1 when the plan drains funds


def sustainability_check(
    strategy: Strategy,
    L: int,
    *,
    initial_balance: int,
    reward: int,
    fpc,
    party: PartyId = 1,
    rule: ConsensusRule | None = None,
    seed: int = 0,
    split: bool = False,
) -> SustainabilityReport:
    """Build up to ``L`` blocks alone and track the builder's balance.

    Checks that the balance moves by exactly Rwd - fee(S) per block and
    reports the height at which the plan could no longer be funded.

    With ``split`` the initial balance is held as one output per block's
    payment plus fee (remainder in a last output), the layout an aged-coin
    spender needs; otherwise it is a single output.
    """
    fpc = as_fraction(fpc)
    rule = rule or ConsensusRule(RuleKind.POW, 8)
    genesis = [(party, initial_balance)]
    if split:
        unit = strategy.spend + fee_for(strategy.spend, fpc)
        count, rest = divmod(initial_balance, unit) if unit else (0, initial_balance)
        genesis = [(party, unit)] * count + ([(party, rest)] if rest else [])
    result = run_chain_build(rule, strategy, L, 1, seed, genesis=genesis, reward=reward, fpc=fpc, builder=party)
    fee = fee_for(strategy.spend, fpc)
    delta = reward - fee
    bal = np.concatenate([[initial_balance], result.balances[0]])
    steps = np.diff(bal)
    if steps.size and not np.all(steps == delta):
        bad = int(np.argmax(steps != delta))
        raise RuntimeError(f"balance moved by {steps[bad]} at block {bad + 1}, expected {delta}")
    bound = initial_balance / (fee - reward) + 1 if fee > reward else None
    return SustainabilityReport(result.failure_height, result.balances[0], delta, bound)


@dataclass
class EarningRate:
    wr: Fraction
    measured: float  # coins per tick
    formula: float  # (F / 2^D) (Rwd^2 / FPC) WR (1 - WR)
    steady_block_time: float
    steady_block_time_stderr: float
    steady_block_time_exact: float  # 2^D / (1 + F S)

    @property
    def relative_error(self) -> float:
        return abs(self.measured - self.formula) / self.formula


def earning_rate_formula(F: int, D: int, reward, fpc, wr) -> float:
    reward, fpc, wr = float(as_fraction(reward)), float(as_fraction(fpc)), float(as_fraction(wr))
    return F / 2.0**D * reward**2 / fpc * wr * (1 - wr)


def adversary_earning_rate(
    rule: ConsensusRule,
    wr,
    reward: int,
    fpc,
    trials: int,
    seed: int,
    *,
    steady_blocks: int | None = None,
    party: PartyId = 1,
) -> EarningRate:
    """Steady-state coins per tick of a self-spending solo builder.

    Only blocks built once the freshness window is full of the builder's own
    spending are measured; the balance gain over them is divided by the time
    they took.
    """
    if rule.kind not in (RuleKind.PRS, RuleKind.RSO):
        raise ValueError("earning rate is defined for the windowed rules PRS and RSO")
    wr = as_fraction(wr)
    if not 0 < wr < 1:
        raise ValueError("WR must lie strictly between 0 and 1")
    fpc = as_fraction(fpc)
    strategy = Strategy.self_spend(reward, fpc, wr, min_age=rule.experience)
    F = rule.F
    n_steady = steady_blocks or 4 * F
    L = F + n_steady
    genesis = funding_allocations(party, strategy, fpc, rule.experience + 2)
    result = run_chain_build(rule, strategy, L, trials, seed, genesis=genesis, reward=reward, fpc=fpc, builder=party)
    if not result.completed:
        raise RuntimeError(f"builder ran out of funds at height {result.failure_height}: {result.failure_reason}")
    steady = result.block_times[:, F:]
    earned = (result.balances[:, -1] - result.balances[:, F - 1]).sum() / COIN
    spent_time = steady.sum()
    per_block = steady.mean(axis=1)
    return EarningRate(
        wr=wr,
        measured=float(earned / spent_time),
        formula=earning_rate_formula(F, rule.D, Fraction(reward, COIN), fpc, wr),
        steady_block_time=float(steady.mean()),
        steady_block_time_stderr=float(per_block.std(ddof=1) / math.sqrt(trials)) if trials > 1 else float("nan"),
        steady_block_time_exact=2.0**rule.D / (1 + F * strategy.spend / COIN),
    )


@dataclass(frozen=True)
class BalanceRequirement:
    required: Fraction  # E * S * WR, coins
    threshold_E: Fraction  # CN / S = (FPC / Rwd) * CN
    meets: bool | None  # whether ``balance`` exceeds ``required``
    implication_holds: bool  # E >= threshold_E  =>  required >= CN * WR


def pso_balance_requirement(E: int, S, WR, CN, balance=None) -> BalanceRequirement:
    """Aged balance a PSO/RSO adversary needs to keep spending S * WR per block.

    ``S`` is the full sustainable rate Rwd / FPC in coins; the bound on E is
    expressed through it as CN / S.
    """
    S, WR, CN = as_fraction(S), as_fraction(WR), as_fraction(CN)
    required = E * S * WR
    threshold = CN / S if S else Fraction(math.inf)
    holds = (not E >= threshold) or required >= CN * WR
    meets = None if balance is None else as_fraction(balance) > required
    return BalanceRequirement(required, threshold, meets, holds)
