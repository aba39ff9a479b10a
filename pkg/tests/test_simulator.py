from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from spendchain.consensus import ConsensusRule, RuleKind, block_valid, target_units
from spendchain.ledger import COIN, Chain, ChainParams, replay, spent_total
from spendchain.simulator import (
    Mode,
    PartySpec,
    TrialStats,
    measure_block_time,
    mine_block,
    party_rng,
    run_chain_build,
    run_race,
    sample_attempts,
    sample_block_time,
)
from spendchain.strategies import Strategy, funding_allocations

FPC = Fraction(1, 10)
RWD = 50 * COIN


def test_sample_attempts_edges():
    rng = party_rng(0, 0)
    assert sample_attempts(1.0, rng) == 1
    assert sample_block_time(1.0, 4.0, rng) == 0.25
    with pytest.raises(ValueError):
        sample_attempts(0.0, rng)


def test_sample_block_time_mean():
    rng = party_rng(1, 0)
    draws = [sample_block_time(2.0**-12, 1.0, rng) for _ in range(10_000)]
    assert abs(np.mean(draws) / 4096 - 1) < 0.05


def test_party_rng_deterministic_and_independent():
    a = party_rng(5, 2, 1).integers(0, 1 << 30, 8)
    assert np.array_equal(a, party_rng(5, 2, 1).integers(0, 1 << 30, 8))
    assert not np.array_equal(a, party_rng(5, 2, 0).integers(0, 1 << 30, 8))
    assert not np.array_equal(a, party_rng(5, 3, 1).integers(0, 1 << 30, 8))


def test_trial_stats():
    st = TrialStats.from_samples([1.0, 2.0, 3.0])
    assert st.n == 3 and st.mean == 2.0
    assert st.stderr == pytest.approx(1 / np.sqrt(3))
    assert st.ci95[0] < 2.0 < st.ci95[1]


@pytest.mark.parametrize("D,s,exact", [(12, 63, 64), (10, 0, 1024)])
def test_measure_block_time(D, s, exact):
    st = measure_block_time(ConsensusRule(RuleKind.POW, D), s, 1.0, 10_000, seed=3)
    assert abs(st.mean / exact - 1) < 0.05


def test_measure_block_time_capped_probability():
    st = measure_block_time(ConsensusRule(RuleKind.POW, 6), 63, 2.0, 100, seed=0)
    assert st.mean == 0.5


@pytest.mark.parametrize("D,s", [(8, 0), (12, 15)])
def test_grind_and_geometric_agree_in_distribution(D, s):
    rule = ConsensusRule(RuleKind.POW, D)
    geo = measure_block_time(rule, s, 1.0, 3000, seed=1).samples
    grind = measure_block_time(rule, s, 1.0, 3000, seed=2, mode=Mode.GRIND).samples
    assert stats.ks_2samp(geo, grind).pvalue > 0.001
    assert abs(grind.mean() / (2**D / (1 + s)) - 1) < 0.1


@pytest.mark.parametrize("mode", [Mode.GEOMETRIC, Mode.GRIND])
def test_mined_blocks_are_valid(mode):
    params = ChainParams(RWD, FPC)
    chain = Chain.create([(1, 1000 * COIN)], params)
    rule = ConsensusRule(RuleKind.PSP, 12)
    rng = party_rng(9, 0)
    for _ in range(5):
        mined = mine_block(chain, 1, (), rule, rng, time=0, mode=mode)
        assert block_valid(mined.block, chain, rule)
        assert mined.block.digest < target_units(12, spent_total(1, chain))
        chain = chain.apply(mined.block)


def test_geometric_digests_uniform_below_target():
    params = ChainParams(RWD, FPC)
    chain = Chain.create([], params)
    rule = ConsensusRule(RuleKind.POW, 16)
    rng = party_rng(4, 0)
    T = target_units(16, 0)
    fractions = [mine_block(chain, 1, (), rule, rng, time=0).block.digest / T for _ in range(2000)]
    assert stats.kstest(fractions, "uniform").pvalue > 0.001


def test_grind_mode_limited():
    chain = Chain.create([], ChainParams(RWD, FPC))
    with pytest.raises(ValueError):
        mine_block(chain, 1, (), ConsensusRule(RuleKind.POW, 21), party_rng(0, 0), time=0, mode=Mode.GRIND)


def _psp_build(trials=3, seed=0, L=20, mode=Mode.GEOMETRIC, D=16):
    strategy = Strategy.self_spend(RWD, FPC, 1)
    genesis = funding_allocations(1, strategy, FPC, 2)
    return run_chain_build(
        ConsensusRule(RuleKind.PSP, D), strategy, L, trials, seed, genesis=genesis, reward=RWD, fpc=FPC, mode=mode
    )


def test_chain_build_deterministic():
    a, b = _psp_build(seed=4), _psp_build(seed=4)
    assert np.array_equal(a.block_times, b.block_times)
    assert a.final_chain.tip_digest == b.final_chain.tip_digest
    assert not np.array_equal(a.block_times, _psp_build(seed=5).block_times)


def test_chain_build_grind_mode_produces_valid_chain():
    res = _psp_build(trials=1, L=12, mode=Mode.GRIND, D=14)
    chain = res.final_chain
    assert len(chain) == 13
    assert replay(chain).utxo == chain.utxo
    assert spent_total(1, chain) == 12 * 500 * COIN


def test_chain_build_balance_constant_at_full_work_ratio():
    res = _psp_build(trials=2)
    assert res.completed
    assert np.all(res.balances == res.start_balance)


def test_chain_build_reports_failure():
    strategy = Strategy.fixed(40 * COIN)
    res = run_chain_build(
        ConsensusRule(RuleKind.POW, 4), strategy, 50, 1, 0, genesis=[(1, 100 * COIN)], reward=COIN, fpc=FPC
    )
    assert not res.completed
    # the payment returns to the builder, so each block drains fee - reward = 3 coins;
    # after k blocks 100 - 3k remain and a plan needs 44, first missing at k = 19
    assert res.failure_height == 20
    assert "short by" in res.failure_reason
    assert res.block_times.shape == (1, 19)
    assert res.balances[0, -1] == 43 * COIN


# --- races ----------------------------------------------------------------------


def test_race_tiny_adversary_never_overtakes():
    base = Chain.create([], ChainParams(RWD, FPC))
    rule = ConsensusRule(RuleKind.POW, 8)
    for trial in range(30):
        r = run_race(PartySpec(1, 1.0), PartySpec(2, 1e-9), rule, 256 * 20, 0, base=base, trial=trial)
        assert not r.overtook and not r.ever_ahead
        assert r.adversary_length == len(base)


def test_race_symmetric_parties_overtake_half_the_time():
    base = Chain.create([], ChainParams(RWD, FPC))
    rule = ConsensusRule(RuleKind.POW, 8)
    n = 600
    wins = sum(
        run_race(PartySpec(1, 1.0), PartySpec(2, 1.0), rule, 256 * 10, 1, base=base, trial=t).overtook
        for t in range(n)
    )
    assert abs(wins / n - 0.5) <= 3 * np.sqrt(0.25 / n)


def test_race_deterministic():
    base = Chain.create([], ChainParams(RWD, FPC))
    rule = ConsensusRule(RuleKind.POW, 8)
    a = run_race(PartySpec(1, 1.0), PartySpec(2, 0.7), rule, 5000, 3, base=base, trial=2)
    b = run_race(PartySpec(1, 1.0), PartySpec(2, 0.7), rule, 5000, 3, base=base, trial=2)
    assert np.array_equal(a.honest_times, b.honest_times)
    assert np.array_equal(a.adversary_times, b.adversary_times)
    assert a.honest_chain.tip_digest == b.honest_chain.tip_digest


def test_race_psp_lower_work_ratio_is_slower():
    honest = Strategy.self_spend(RWD, FPC, 1)
    adversary = Strategy.self_spend(RWD, FPC, Fraction(1, 2))
    genesis = funding_allocations(1, honest, FPC, 2) + funding_allocations(2, adversary, FPC, 2)
    base = Chain.create(genesis, ChainParams(RWD, FPC))
    rule = ConsensusRule(RuleKind.PSP, 20)
    n_blocks = 64
    emp = np.zeros(2)
    for t in range(200):
        r = run_race(
            PartySpec(1, 1.0, honest), PartySpec(2, 1.0, adversary), rule, 1e15, 0,
            base=base, trial=t, max_blocks=n_blocks,
        )
        assert not r.infeasible
        emp += (r.honest_times[1:].sum(), r.adversary_times[1:].sum())

    def oracle(S):
        return sum(2**20 / (1 + i * S) for i in range(1, n_blocks))

    expected = oracle(250) / oracle(500)
    assert emp[1] / emp[0] > 1.5
    assert abs(emp[1] / emp[0] / expected - 1) < 0.10


def test_race_unfunded_party_mines_empty_blocks():
    strategy = Strategy.fixed(100 * COIN)
    base = Chain.create([(2, 50 * COIN)], ChainParams(RWD, FPC))
    rule = ConsensusRule(RuleKind.PSP, 8)
    r = run_race(PartySpec(1, 1.0), PartySpec(2, 1.0, strategy), rule, 256 * 5, 0, base=base)
    assert r.infeasible[2] == 1
    first = r.adversary_chain.blocks[1]
    assert first.creator == 2 and first.transactions == ()


def test_psp_build_matches_floored_oracle():
    """Past 1 + s = 2^D every attempt succeeds, so blocks take exactly one attempt."""
    res = _psp_build(trials=100, seed=8, L=512)
    after_first = res.block_times[:, 1:].sum(axis=1).mean()
    floored = sum(max(1.0, 2**16 / (1 + 500 * i)) for i in range(1, 512))
    assert abs(after_first / floored - 1) < 0.05
    assert np.all(res.block_times[:, 132:] == 1.0)
