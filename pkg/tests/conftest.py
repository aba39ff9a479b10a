import pytest

from spendchain.consensus import ConsensusRule, RuleKind, extend_chain
from spendchain.ledger import COIN, Block, Chain, ChainParams, make_transaction


def empty_block(chain: Chain, creator: int = 0, nonce: int = 0) -> Block:
    return Block(chain.tip.time, chain.tip_digest, (), creator, nonce, chain.params.reward)


def block_with(chain: Chain, txs, creator: int = 0, nonce: int = 0) -> Block:
    return Block(chain.tip.time, chain.tip_digest, tuple(txs), creator, nonce, chain.params.reward)


def grow(chain: Chain, n: int, creator: int = 0) -> Chain:
    """Append ``n`` empty blocks without any threshold check."""
    for _ in range(n):
        chain = chain.apply(empty_block(chain, creator))
    return chain


def pay(chain: Chain, payer: int, payee: int, coins, creator: int = 0, min_age: int = 0) -> Chain:
    tx = make_transaction(payer, payee, int(coins * COIN), chain, min_age)
    return chain.apply(block_with(chain, [tx], creator))


@pytest.fixture
def params():
    return ChainParams.from_coins(50, "0.1")


@pytest.fixture
def funded(params):
    """Genesis chain: party 1 holds 100 coins, party 2 holds 40."""
    return Chain.create([(1, 100 * COIN), (2, 40 * COIN)], params)


POW8 = ConsensusRule(RuleKind.POW, 8)


ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
