"""Proof-of-spending block-chain rules, UTXO ledger and Monte Carlo simulator."""

from .consensus import (
    ConsensusRule,
    RuleKind,
    block_valid,
    digest_block,
    fork_choice,
    nlz,
    spending_statistic,
    target,
)
from .experiments import SimConfig, run_experiment, theoretical_time
from .ledger import (
    COIN,
    Block,
    BlockRejected,
    Chain,
    ChainParams,
    InsufficientFunds,
    Output,
    OutputRef,
    Transaction,
    apply_block,
    balance,
    coin_age,
    make_transaction,
    spent_old,
    spent_recent,
    spent_recent_old,
    spent_total,
    to_units,
)
from .simulator import Mode, PartySpec, TrialStats, measure_block_time, run_chain_build, run_race, sample_block_time
from .strategies import (
    Strategy,
    adversary_earning_rate,
    plan_block_transactions,
    pso_balance_requirement,
    sustainability_check,
)

__version__ = "0.1.0"
