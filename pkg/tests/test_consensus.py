from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spendchain import _kernels
from spendchain.consensus import (
    MAX_DIGEST,
    ConsensusRule,
    RuleKind,
    block_target,
    block_valid,
    extend_chain,
    fork_choice,
    nlz,
    spending_statistic,
    success_probability,
    target,
    target_units,
)
from spendchain.ledger import COIN, Block, BlockRejected, Chain, ChainParams, spent_recent

from conftest import empty_block, grow, pay


def with_digest(block: Block, digest: int) -> Block:
    """Pin a block's digest, to probe the threshold comparison at exact values."""
    block.__dict__["digest"] = digest
    return block


def test_nlz_examples():
    assert nlz(1 << 255) == 0
    assert nlz(1) == 255
    assert nlz(0) == 256


def test_target_examples():
    assert target(8, 0) == 1 << 248
    assert success_probability(target(8, 0)) == 2.0**-8
    assert target(16, 15) == 1 << 244
    assert success_probability(target(16, 15)) == 2.0**-12
    assert target(8, 255) == MAX_DIGEST
    assert target(8, 10**6) == MAX_DIGEST
    assert target(10, Fraction(1, 2)) == 3 << 245


def test_target_units_agrees_with_coins():
    for D, s in [(8, 0), (16, 15), (12, 63), (20, "0.37"), (3, 1000)]:
        s = Fraction(s) if not isinstance(s, str) else Fraction(s)
        assert target_units(D, int(s * COIN)) == target(D, s)


@pytest.mark.parametrize("D", [1, 5, 12, 16])
def test_integer_statistic_matches_coarse_threshold(D):
    """With integer s the target's top 16 bits equal floor((1 + s) 2^(16 - D)), low bits zero."""
    for s in range(0, 3000, 7):
        T = target(D, s)
        if T == MAX_DIGEST:
            assert (1 + s) >= 1 << D
            continue
        assert T & ((1 << 240) - 1) == 0
        assert T >> 240 == (1 + s) * (1 << 16) >> D


@given(st.integers(0, MAX_DIGEST), st.integers(1, 24), st.integers(0, 24))
def test_power_of_two_statistic_is_nlz_threshold(h, D, k):
    """When 1 + s = 2^k < 2^D the rule is exactly nlz(h) >= D - k."""
    s = (1 << k) - 1
    if k < D:
        assert (h < target(D, s)) == (nlz(h) >= D - k)
    else:
        # capped target: everything but the all-ones digest passes
        assert (h < target(D, s)) == (h != MAX_DIGEST)


def test_rejects_bad_rules():
    with pytest.raises(ValueError):
        ConsensusRule(RuleKind.POW, 0)
    with pytest.raises(ValueError):
        ConsensusRule(RuleKind.PRS, 8)
    with pytest.raises(ValueError):
        ConsensusRule(RuleKind.RSO, 8, F=3, E=-1)
    assert ConsensusRule("PSO", 8, E=0).experience == 0


# --- statistics per rule --------------------------------------------------------


def test_spending_statistic_dispatch(funded):
    chain = grow(pay(grow(funded, 3), 1, 2, 10), 2)
    assert spending_statistic(ConsensusRule(RuleKind.POW, 8), 1, chain) == 0
    assert spending_statistic(ConsensusRule(RuleKind.POB, 8), 1, chain) == 89 * COIN
    assert spending_statistic(ConsensusRule(RuleKind.PSP, 8), 1, chain) == 10 * COIN
    prs = ConsensusRule(RuleKind.PRS, 8, F=5)
    assert spending_statistic(prs, 1, chain) == spent_recent(1, chain, 5) == 10 * COIN
    assert spending_statistic(ConsensusRule(RuleKind.PRS, 8, F=2), 1, chain) == 0
    assert spending_statistic(ConsensusRule(RuleKind.PSO, 8, E=4), 1, chain) == 10 * COIN
    assert spending_statistic(ConsensusRule(RuleKind.PSO, 8, E=5), 1, chain) == 0
    assert spending_statistic(ConsensusRule(RuleKind.RSO, 8, F=5, E=4), 1, chain) == 10 * COIN
    assert spending_statistic(ConsensusRule(RuleKind.PSP, 8), 1, funded) == 0


# --- validity --------------------------------------------------------------------


def _psp_chain_with_spend(coins: int) -> Chain:
    params = ChainParams.from_coins(50, "0.1")
    chain = Chain.create([(1, 100 * COIN)], params)
    return pay(chain, 1, 1, coins)


def test_block_valid_boundaries():
    rule = ConsensusRule(RuleKind.PSP, 16)
    chain = _psp_chain_with_spend(15)
    assert block_target(empty_block(chain, 1), chain, rule) == 1 << 244
    at = with_digest(empty_block(chain, 1), 1 << 244)
    below = with_digest(empty_block(chain, 1, nonce=1), (1 << 244) - 1)
    assert not block_valid(at, chain, rule)
    assert "threshold" in block_valid(at, chain, rule).reason
    assert block_valid(below, chain, rule)
    # someone without spending history faces the plain POW target
    assert not block_valid(with_digest(empty_block(chain, 2), (1 << 244) - 1), chain, rule)
    assert block_valid(with_digest(empty_block(chain, 2, nonce=2), 0), chain, rule)


def test_top_bit_digest_invalid(funded):
    rule = ConsensusRule(RuleKind.POW, 1)
    assert not block_valid(with_digest(empty_block(funded), 1 << 255), funded, rule)
    assert block_valid(with_digest(empty_block(funded, nonce=5), (1 << 255) - 1), funded, rule)


def test_structural_rejection_prefixed(funded):
    rule = ConsensusRule(RuleKind.POW, 1)
    orphan = with_digest(Block(0, 42, (), 0, 0, funded.params.reward), 0)
    verdict = block_valid(orphan, funded, rule)
    assert not verdict and verdict.reason.startswith("structural:")
    with pytest.raises(BlockRejected, match="^structural:"):
        extend_chain(funded, orphan, rule)


def test_statistic_excludes_candidate_block():
    """A block's own spending never lowers its own threshold."""
    params = ChainParams.from_coins(50, "0.1")
    chain = Chain.create([(1, 100 * COIN)], params)
    from spendchain.ledger import make_transaction

    tx = make_transaction(1, 1, 63 * COIN, chain)
    block = with_digest(Block(0, chain.tip_digest, (tx,), 1, 0, params.reward), 1 << 249)
    rule = ConsensusRule(RuleKind.PSP, 8)
    assert block_target(block, chain, rule) == 1 << 248
    assert not block_valid(block, chain, rule)


def test_digest_properties(funded):
    a, b = empty_block(funded, nonce=7), empty_block(funded, nonce=7)
    assert a.digest == b.digest
    assert empty_block(funded, nonce=8).digest != a.digest
    assert 0 <= a.digest <= MAX_DIGEST


def test_fork_choice(funded):
    five = grow(funded, 4)
    seven = grow(funded, 6)
    other_five = grow(funded, 4, creator=3)
    assert fork_choice([five, seven]) is seven
    assert fork_choice([seven, five]) is seven
    assert fork_choice([five, other_five]) is five
    assert fork_choice([other_five, five]) is other_five
    assert fork_choice([five]) is five
    with pytest.raises(ValueError):
        fork_choice([])


def test_target_probability_monte_carlo():
    rng = np.random.default_rng(11)
    rows = rng.integers(0, 1 << 64, size=(1_000_000, 6), dtype=np.uint64)
    top = _kernels.digest_rows(rows)[:, 0]
    for D, s in [(8, 0), (12, 63), (16, 15)]:
        T = target(D, s)
        p = success_probability(T)
        # targets here are multiples of 2^192, so the top lane decides
        hits = int(np.count_nonzero(top < np.uint64(T >> 192)))
        n = rows.shape[0]
        assert abs(hits - n * p) <= 3 * np.sqrt(n * p * (1 - p))
