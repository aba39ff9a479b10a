"""Block validity rules and fork choice.

Every rule accepts block B on chain C by creator A iff

    digest(B) < floor((1 + s) * 2**(256 - D))      (capped at 2**256 - 1)

where s is the rule's spending statistic of A on C, in coins. When 1 + s
is a power of two 2**k this is exactly nlz(digest) >= D - k; otherwise it
realizes the fractional threshold D - log2(1 + s) with success probability
(1 + s) * 2**-D per uniformly distributed digest.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from . import ledger
from .ledger import COIN, Block, BlockRejected, Chain, PartyId

Digest = int

DIGEST_BITS = 256
MAX_DIGEST = (1 << DIGEST_BITS) - 1


class RuleKind(str, enum.Enum):
    POW = "POW"
    POB = "POB"
    PSP = "PSP"
    PRS = "PRS"
    PSO = "PSO"
    RSO = "RSO"


@dataclass(frozen=True)
class ConsensusRule:
    kind: RuleKind
    D: int
    F: int | None = None
    E: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", RuleKind(self.kind))
        if self.D < 1:
            raise ValueError("target difficulty D must be >= 1")
        if self.kind in (RuleKind.PRS, RuleKind.RSO):
            if self.F is None or self.F < 1:
                raise ValueError(f"{self.kind.value} needs freshness F >= 1")
        if self.kind in (RuleKind.PSO, RuleKind.RSO):
            if self.E is None or self.E < 0:
                raise ValueError(f"{self.kind.value} needs experience E >= 0")

    @property
    def window(self) -> int | None:
        return self.F if self.kind in (RuleKind.PRS, RuleKind.RSO) else None

    @property
    def experience(self) -> int:
        return self.E if self.kind in (RuleKind.PSO, RuleKind.RSO) else 0


def nlz(digest: Digest) -> int:
    return DIGEST_BITS - digest.bit_length()


def spending_statistic(rule: ConsensusRule, creator: PartyId, chain: Chain) -> int:
    """The rule's statistic for ``creator`` on ``chain``, in base units."""
    kind = rule.kind
    if kind is RuleKind.POW:
        return 0
    if kind is RuleKind.POB:
        return ledger.balance(creator, chain)
    if kind is RuleKind.PSP:
        return ledger.spent_total(creator, chain)
    if kind is RuleKind.PRS:
        return ledger.spent_recent(creator, chain, rule.F)
    if kind is RuleKind.PSO:
        return ledger.spent_old(creator, chain, rule.E)
    return ledger.spent_recent_old(creator, chain, rule.F, rule.E)


def target_units(D: int, s_units: int) -> Digest:
    """Digest target for a statistic given in base units."""
    return min(MAX_DIGEST, ((COIN + s_units) << (DIGEST_BITS - D)) // COIN)


def target(D: int, s=0) -> Digest:
    """Digest target for a statistic ``s`` given in coins."""
    if D < 1:
        raise ValueError("D must be >= 1")
    s = Fraction(s)
    if s < 0:
        raise ValueError("statistic must be non-negative")
    return min(MAX_DIGEST, ((1 + s) * (1 << (DIGEST_BITS - D))).__floor__())


def success_probability(T: Digest) -> float:
    return T / 2.0**DIGEST_BITS


def digest_block(block: Block) -> Digest:
    return block.digest


def block_target(block: Block, parent: Chain, rule: ConsensusRule) -> Digest:
    return target_units(rule.D, spending_statistic(rule, block.creator, parent))


def extend_chain(parent: Chain, block: Block, rule: ConsensusRule) -> Chain:
    """Apply ``block`` to ``parent`` after checking its threshold.

    The statistic is evaluated on ``parent``, never including ``block``.
    Raises BlockRejected with reason prefixed "structural:" or "threshold:".
    """
    try:
        child = parent.apply(block)
    except BlockRejected as exc:
        raise BlockRejected("structural: " + exc.reason) from None
    T = block_target(block, parent, rule)
    if not block.digest < T:
        raise BlockRejected(f"threshold: digest nlz {nlz(block.digest)} not below target for {rule.kind.value}")
    return child


@dataclass(frozen=True)
class Verdict:
    valid: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.valid


def block_valid(block: Block, parent: Chain, rule: ConsensusRule) -> Verdict:
    try:
        extend_chain(parent, block, rule)
    except BlockRejected as exc:
        return Verdict(False, exc.reason)
    return Verdict(True)


def fork_choice(candidates: Sequence[Chain]) -> Chain:
    """Longest chain; among equals the earliest in ``candidates`` (arrival order)."""
    if not candidates:
        raise ValueError("no candidate chains")
    best = candidates[0]
    for chain in candidates[1:]:
        if len(chain) > len(best):
            best = chain
    return best
