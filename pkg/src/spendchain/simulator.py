"""Seeded Monte Carlo engine for block races.

Time is counted in hash attempts: a party with hashrate r makes r attempts
per tick. In geometric mode the number of attempts to the next block is
drawn from Geometric(p), with p the rule's per-attempt success probability,
and the winning digest is placed uniformly below the target by solving for
the nonce. Grind mode tries consecutive nonces from a random start until one
digest falls below the target; it is meant as a cross-check at small D.
"""

from __future__ import annotations

import enum
import gc
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from . import _kernels
from .consensus import (
    ConsensusRule,
    extend_chain,
    fork_choice,
    spending_statistic,
    success_probability,
    target,
    target_units,
)
from .ledger import Block, Chain, ChainParams, PartyId, Transaction, as_fraction

GRIND_MAX_D = 20
_SPACE = 2.0**256
_WARMUP_STREAM = 0xFFFFFFFF


class Mode(str, enum.Enum):
    GEOMETRIC = "geometric"
    GRIND = "grind"


class Planner(Protocol):
    def plan(self, party: PartyId, chain: Chain, time: int): ...


@dataclass(frozen=True)
class PartySpec:
    id: PartyId
    hashrate: float
    strategy: Planner | None = None

    def __post_init__(self):
        if not self.hashrate > 0:
            raise ValueError("hashrate must be positive")


@dataclass(frozen=True)
class TrialStats:
    n: int
    mean: float
    stderr: float
    ci95: tuple[float, float]
    samples: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_samples(cls, samples) -> "TrialStats":
        x = np.asarray(samples, dtype=float)
        n = x.size
        mean = float(x.mean())
        stderr = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
        return cls(n, mean, stderr, (mean - 1.96 * stderr, mean + 1.96 * stderr), x)


@contextmanager
def _gc_paused():
    """Suspend cyclic GC; chains are acyclic and the collector dominates tight loops."""
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was_enabled:
            gc.enable()


def party_rng(seed: int, trial: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for one party in one trial."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, trial, stream])))


def sample_attempts(p: float, rng: np.random.Generator) -> int:
    if not p > 0:
        raise ValueError("success probability must be positive")
    if p >= 1:
        return 1
    return int(rng.geometric(p))


def sample_block_time(p: float, hashrate: float, rng: np.random.Generator) -> float:
    return sample_attempts(p, rng) / hashrate


@dataclass(frozen=True)
class MinedBlock:
    block: Block
    attempts: int
    elapsed: float


def mine_block(
    parent: Chain,
    creator: PartyId,
    transactions: Sequence[Transaction],
    rule: ConsensusRule,
    rng: np.random.Generator,
    *,
    time: int,
    hashrate: float = 1.0,
    mode: Mode = Mode.GEOMETRIC,
) -> MinedBlock:
    """Find a block on ``parent`` that meets ``rule``'s target for ``creator``."""
    T = target_units(rule.D, spending_statistic(rule, creator, parent))
    txs = tuple(transactions)
    template = Block(time, parent.tip_digest, txs, creator, 0, parent.params.reward)
    state = template.prefix_state
    if mode == Mode.GRIND:
        if rule.D > GRIND_MAX_D:
            raise ValueError(f"grind mode is limited to D <= {GRIND_MAX_D}")
        start = int(rng.integers(0, 1 << 64, dtype=np.uint64))
        attempts, nonce = _kernels.grind(state, start, T, 1 << 40)
        if attempts == 0:
            raise RuntimeError("nonce search exhausted")
    else:
        attempts = sample_attempts(T / _SPACE, rng)
        top_bound = T >> 192
        if top_bound == 0:
            raise ValueError("geometric mode needs a target of at least 2**192")
        # multiply-shift maps a raw 64-bit draw onto [0, top_bound)
        top = (int(rng.bit_generator.random_raw()) * top_bound) >> 64
        nonce = _kernels.nonce_for_top_lane(state, top)
    block = Block(time, template.prev_digest, txs, creator, nonce, template.reward)
    block.__dict__["prefix_state"] = state  # same prefix, skip re-absorbing
    return MinedBlock(block, attempts, attempts / hashrate)


def measure_block_time(
    rule: ConsensusRule,
    s=0,
    hashrate: float = 1.0,
    trials: int = 10_000,
    seed: int = 0,
    mode: Mode = Mode.GEOMETRIC,
) -> TrialStats:
    """Time to one block at statistic ``s`` (coins), over independent trials."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    T = target(rule.D, s)
    p = success_probability(T)
    rng = party_rng(seed, 0)
    if Mode(mode) is Mode.GEOMETRIC:
        if p >= 1:
            attempts = np.ones(trials)
        else:
            attempts = rng.geometric(p, size=trials).astype(float)
    else:
        if rule.D > GRIND_MAX_D:
            raise ValueError(f"grind mode is limited to D <= {GRIND_MAX_D}")
        words = rng.integers(0, 1 << 64, size=(trials, 8), dtype=np.uint64)
        attempts = np.empty(trials)
        for t in range(trials):
            state = _kernels.absorb_bytes(words[t, :7].astype(">u8").tobytes())
            attempts[t], _ = _kernels.grind(state, int(words[t, 7]), T, 1 << 40)
    return TrialStats.from_samples(attempts / hashrate)


def warm_up(base: Chain, rule: ConsensusRule, blocks: int, creator: PartyId, seed: int) -> Chain:
    """Extend ``base`` with empty blocks by ``creator`` (time not reported)."""
    rng = party_rng(seed, _WARMUP_STREAM)
    chain = base
    clock = float(base.tip.time)
    for _ in range(blocks):
        mined = mine_block(chain, creator, (), rule, rng, time=int(clock))
        chain = extend_chain(chain, mined.block, rule)
        clock += mined.elapsed
    return chain


@dataclass
class ChainBuildResult:
    stats: TrialStats  # total time over the L blocks
    block_times: np.ndarray  # (trials, L)
    balances: np.ndarray  # (trials, L) builder balance after each block, base units
    start_balance: int
    base_height: int
    failure_height: int | None = None
    failure_reason: str | None = None
    final_chain: Chain | None = None

    @property
    def completed(self) -> bool:
        return self.failure_height is None


def run_chain_build(
    rule: ConsensusRule,
    strategy: Planner | None,
    L: int,
    trials: int,
    seed: int,
    *,
    genesis: Sequence[tuple[PartyId, int]],
    reward: int,
    fpc,
    builder: PartyId = 1,
    hashrate: float = 1.0,
    mode: Mode = Mode.GEOMETRIC,
    warmup: int | None = None,
    warmup_creator: PartyId = 0,
) -> ChainBuildResult:
    """One party builds ``L`` blocks alone, ``trials`` times.

    Every block goes through the ledger and the rule's threshold check. If
    the strategy cannot fund a block the run stops and reports the height of
    the block it failed to build.

    ``warmup`` empty blocks by ``warmup_creator`` precede the build so that
    genesis coins can age; it defaults to the rule's experience E.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    params = ChainParams(reward, as_fraction(fpc), rule.experience)
    base = Chain.create(genesis, params)
    if warmup is None:
        warmup = rule.experience
    base = warm_up(base, rule, warmup, warmup_creator, seed)
    times = np.zeros((trials, L))
    balances = np.zeros((trials, L), dtype=np.int64)
    start_balance = base.balance_of(builder)
    chain = base
    with _gc_paused():
        for t in range(trials):
            chain, failure = _build_once(
                base, rule, strategy, builder, party_rng(seed, t), times[t], balances[t], hashrate, mode
            )
            if failure is not None:
                done = len(chain) - len(base)
                return ChainBuildResult(
                    stats=TrialStats.from_samples(times[t, :done].sum(keepdims=True)),
                    block_times=times[t : t + 1, :done],
                    balances=balances[t : t + 1, :done],
                    start_balance=start_balance,
                    base_height=base.height,
                    failure_height=len(chain),
                    failure_reason=failure,
                    final_chain=chain,
                )
    return ChainBuildResult(
        stats=TrialStats.from_samples(times.sum(axis=1)),
        block_times=times,
        balances=balances,
        start_balance=start_balance,
        base_height=base.height,
        final_chain=chain,
    )


def _build_once(base, rule, strategy, builder, rng, times, balances, hashrate, mode):
    chain = base
    clock = float(base.tip.time)
    for i in range(times.shape[0]):
        now = int(clock)
        txs: tuple = ()
        if strategy is not None:
            plan = strategy.plan(builder, chain, now)
            if plan.reason is not None:
                return chain, plan.reason
            txs = plan.transactions
        mined = mine_block(chain, builder, txs, rule, rng, time=now, hashrate=hashrate, mode=mode)
        chain = extend_chain(chain, mined.block, rule)
        times[i] = mined.elapsed
        balances[i] = chain.balance_of(builder)
        clock += mined.elapsed
    return chain, None


@dataclass
class RaceResult:
    honest_length: int
    adversary_length: int
    overtook: bool  # fork choice at the horizon picks the adversary's fork
    ever_ahead: bool  # adversary fork strictly longer at some instant
    honest_net: int  # base units gained since the fork point
    adversary_net: int
    honest_times: np.ndarray  # inter-block times of each party's own blocks
    adversary_times: np.ndarray
    honest_chain: Chain
    adversary_chain: Chain
    infeasible: dict = field(default_factory=dict)  # party -> height of first unfunded plan


def run_race(
    honest: PartySpec,
    adversary: PartySpec,
    rule: ConsensusRule,
    horizon: float,
    seed: int,
    *,
    genesis: Sequence[tuple[PartyId, int]] | None = None,
    reward: int | None = None,
    fpc=None,
    base: Chain | None = None,
    trial: int = 0,
    max_blocks: int | None = None,
    mode: Mode = Mode.GEOMETRIC,
) -> RaceResult:
    """Honest public chain against a private adversary fork from ``base``.

    Each party mines only on its own branch, so its block clock depends only
    on its own chain; the two clocks run concurrently until ``horizon`` ticks
    or until each party has ``max_blocks`` blocks. Parties whose plan cannot
    be funded keep mining empty blocks.
    """
    if base is None:
        if genesis is None or reward is None or fpc is None:
            raise ValueError("give either base or genesis, reward and fpc")
        base = Chain.create(genesis, ChainParams(reward, as_fraction(fpc), rule.experience))
    specs = (honest, adversary)
    rngs = [party_rng(seed, trial, k) for k in range(2)]
    chains = [base, base]
    tip_arrival = [0.0, 0.0]
    times: list[list[float]] = [[], []]
    infeasible: dict = {}
    ever_ahead = False
    t0 = float(base.tip.time)

    def start(k: int, now: float):
        spec = specs[k]
        txs: tuple = ()
        if spec.strategy is not None:
            plan = spec.strategy.plan(spec.id, chains[k], int(now))
            if plan.reason is None:
                txs = plan.transactions
            else:
                infeasible.setdefault(spec.id, len(chains[k]))
        mined = mine_block(chains[k], spec.id, txs, rule, rngs[k], time=int(now), hashrate=spec.hashrate, mode=mode)
        return now + mined.elapsed, mined

    with _gc_paused():
        pending = [start(0, t0), start(1, t0)]
        active = [True, True]
        while any(active):
            k = min((j for j in (0, 1) if active[j]), key=lambda j: (pending[j][0], j))
            when, mined = pending[k]
            if when - t0 > horizon:
                active[k] = False
                continue
            chains[k] = extend_chain(chains[k], mined.block, rule)
            times[k].append(mined.elapsed)
            tip_arrival[k] = when
            if len(chains[1]) > len(chains[0]):
                ever_ahead = True
            if max_blocks is not None and len(times[k]) >= max_blocks:
                active[k] = False
                continue
            pending[k] = start(k, when)

    order = sorted((0, 1), key=lambda j: (tip_arrival[j], j))
    winner = fork_choice([chains[j] for j in order])
    return RaceResult(
        honest_length=len(chains[0]),
        adversary_length=len(chains[1]),
        overtook=winner is chains[1] and chains[1] is not chains[0],
        ever_ahead=ever_ahead,
        honest_net=chains[0].balance_of(honest.id) - base.balance_of(honest.id),
        adversary_net=chains[1].balance_of(adversary.id) - base.balance_of(adversary.id),
        honest_times=np.array(times[0]),
        adversary_times=np.array(times[1]),
        honest_chain=chains[0],
        adversary_chain=chains[1],
        infeasible=infeasible,
    )
