"""UTXO ledger: transactions, blocks, chains and spending statistics.

Amounts are integers in base units (``COIN`` base units per coin). Fees are
burned; each block mints ``reward`` base units to its creator.
"""

from __future__ import annotations

import hashlib
import struct
from bisect import bisect_left
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from functools import cached_property
from typing import Iterable, NamedTuple

from . import _kernels

COIN = 100_000_000
ZERO_DIGEST = b"\x00" * 32

PartyId = int


class LedgerError(Exception):
    """Base class for ledger failures."""


class BlockRejected(LedgerError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class InsufficientFunds(LedgerError):
    def __init__(self, payer: PartyId, needed: int, available: int, min_age: int = 0):
        self.payer = payer
        self.needed = needed
        self.available = available
        self.shortfall = needed - available
        aged = f" of age >= {min_age}" if min_age else ""
        super().__init__(
            f"party {payer} short by {self.shortfall / COIN:.8f} coins{aged} "
            f"(needs {needed / COIN:.8f}, has {available / COIN:.8f})"
        )


class UnknownOutput(LedgerError):
    pass


def to_units(amount) -> int:
    """Convert a coin amount (int, str, float, Decimal, Fraction) to base units."""
    if isinstance(amount, Fraction):
        units = amount * COIN
    else:
        units = Fraction(Decimal(str(amount)) * COIN)
    if units.denominator != 1:
        raise ValueError(f"{amount!r} has more than 8 fractional digits")
    return int(units)


def to_coins(units: int) -> Fraction:
    return Fraction(units, COIN)


def as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    return Fraction(Decimal(str(x)))


def fee_for(payment: int, fpc: Fraction) -> int:
    """Fee in base units: FPC x payment, rounded half-up."""
    num, den = fpc.numerator, fpc.denominator
    return (2 * payment * num + den) // (2 * den)


class OutputRef(NamedTuple):
    source: bytes  # 32 bytes: creating txid, block digest (rewards) or zeros (genesis)
    index: int

    def to_bytes(self) -> bytes:
        return self.source + self.index.to_bytes(8, "big")


class Output(NamedTuple):
    owner: PartyId
    amount: int
    created_at: int
    ref: OutputRef


@dataclass(frozen=True)
class Transaction:
    time: int
    payer: PartyId
    payee: PartyId
    payment: int
    fee: int
    inputs: tuple[OutputRef, ...]
    change: int
    signature: PartyId  # simulated: echoes the payer id

    def to_bytes(self) -> bytes:
        head = struct.pack(">5Q", self.time, self.payer, self.payee, self.payment, self.fee)
        body = b"".join(ref.to_bytes() for ref in self.inputs)
        return head + body + self.change.to_bytes(8, "big")

    @cached_property
    def txid(self) -> bytes:
        return hashlib.sha256(self.to_bytes()).digest()


@dataclass(frozen=True)
class Block:
    time: int
    prev_digest: int
    transactions: tuple[Transaction, ...]
    creator: PartyId
    nonce: int
    reward: int

    def prefix_bytes(self) -> bytes:
        """Canonical serialization without the trailing nonce."""
        parts = [self.time.to_bytes(8, "big"), self.prev_digest.to_bytes(32, "big")]
        parts.extend(tx.to_bytes() for tx in self.transactions)
        parts.append(self.creator.to_bytes(8, "big"))
        return b"".join(parts)

    def to_bytes(self) -> bytes:
        return self.prefix_bytes() + self.nonce.to_bytes(8, "big")

    @cached_property
    def prefix_state(self) -> tuple[int, int, int, int]:
        return _kernels.absorb_bytes(self.prefix_bytes())

    @cached_property
    def digest(self) -> int:
        return _kernels.lanes_to_int(_kernels.finalize_py(self.prefix_state, self.nonce))


@dataclass(frozen=True)
class ChainParams:
    reward: int
    fpc: Fraction
    experience: int = 0  # E used by the cached aged-spend index

    @classmethod
    def from_coins(cls, reward, fpc, experience: int = 0) -> "ChainParams":
        return cls(to_units(reward), as_fraction(fpc), experience)


class _SpendLog:
    """Per-party spend history, one entry per block in which the party paid.

    Lists are shared between a chain and its descendants; a descendant that
    forks off an earlier prefix copies before appending.
    """

    __slots__ = ("heights", "cum_spent", "cum_old", "parts")

    def __init__(self, heights=None, cum_spent=None, cum_old=None, parts=None):
        self.heights = heights or []
        self.cum_spent = cum_spent or []
        self.cum_old = cum_old or []
        self.parts = parts or []  # per entry: tuple of (age, amount) payment slices

    def prefix(self, n: int) -> "_SpendLog":
        return _SpendLog(self.heights[:n], self.cum_spent[:n], self.cum_old[:n], self.parts[:n])


class SpendEntry(NamedTuple):
    height: int
    spent: int
    parts: tuple[tuple[int, int], ...]


def attribute_payment(payment: int, inputs: Iterable[Output], height: int) -> tuple[tuple[int, int], ...]:
    """Split a payment over its inputs oldest-first as (age, amount) slices."""
    slices = []
    remaining = payment
    for out in sorted(inputs, key=lambda o: o.created_at):
        if remaining <= 0:
            break
        take = min(out.amount, remaining)
        slices.append((height - out.created_at, take))
        remaining -= take
    return tuple(slices)


class Chain:
    """An append-only block chain with its UTXO set and spend indices.

    Instances are never mutated after construction; ``apply_block`` returns a
    new chain that shares storage with its parent.
    """

    __slots__ = (
        "params",
        "genesis",
        "_blocks",
        "_digests",
        "_n",
        "utxo",
        "_balances",
        "_spend",
        "genesis_supply",
        "fees_burned",
    )

    def __init__(self):
        raise TypeError("use Chain.create() or apply_block()")

    @classmethod
    def create(cls, allocations: Iterable[tuple[PartyId, int]], params: ChainParams) -> "Chain":
        """Genesis chain (length 1) holding one output per ``(party, units)`` allocation."""
        self = object.__new__(cls)
        self.params = params
        self.genesis = tuple((int(p), int(a)) for p, a in allocations)
        block = Block(time=0, prev_digest=0, transactions=(), creator=0, nonce=0, reward=0)
        self._blocks = [block]
        self._digests = [block.digest]
        self._n = 1
        self.utxo = {}
        self._balances = {}
        for i, (party, amount) in enumerate(self.genesis):
            if amount < 0:
                raise ValueError("negative genesis allocation")
            ref = OutputRef(ZERO_DIGEST, i)
            self.utxo[ref] = Output(party, amount, 0, ref)
            self._balances[party] = self._balances.get(party, 0) + amount
        self._spend = {}
        self.genesis_supply = sum(a for _, a in self.genesis)
        self.fees_burned = 0
        return self

    def __len__(self) -> int:
        return self._n

    @property
    def height(self) -> int:
        return self._n - 1

    @property
    def tip(self) -> Block:
        return self._blocks[self._n - 1]

    @property
    def tip_digest(self) -> int:
        return self._digests[self._n - 1]

    @property
    def blocks(self) -> tuple[Block, ...]:
        return tuple(self._blocks[: self._n])

    @property
    def supply(self) -> int:
        return sum(o.amount for o in self.utxo.values())

    def balance_of(self, party: PartyId) -> int:
        return self._balances.get(party, 0)

    def outputs_of(self, party: PartyId) -> list[Output]:
        return [o for o in self.utxo.values() if o.owner == party]

    def spend_entries(self, party: PartyId) -> list[SpendEntry]:
        if party not in self._spend:
            return []
        log, n = self._spend[party]
        out = []
        prev = 0
        for i in range(n):
            out.append(SpendEntry(log.heights[i], log.cum_spent[i] - prev, log.parts[i]))
            prev = log.cum_spent[i]
        return out

    def _window_index(self, log: _SpendLog, n: int, window: int | None) -> int:
        if window is None or window >= self._n:
            return 0
        return bisect_left(log.heights, self._n - window, 0, n)

    def _spent(self, party: PartyId, window: int | None, experience: int | None) -> int:
        if party not in self._spend:
            return 0
        log, n = self._spend[party]
        if n == 0:
            return 0
        lo = self._window_index(log, n, window)
        if experience is None or experience == 0:
            cum = log.cum_spent
        elif experience == self.params.experience:
            cum = log.cum_old
        else:
            return sum(amt for i in range(lo, n) for age, amt in log.parts[i] if age >= experience)
        return cum[n - 1] - (cum[lo - 1] if lo else 0)

    # --- extension ---------------------------------------------------------

    def apply(self, block: Block) -> "Chain":
        if block.prev_digest != self.tip_digest:
            raise BlockRejected("prev_digest does not match chain tip")
        if block.reward != self.params.reward:
            raise BlockRejected(f"reward {block.reward} != {self.params.reward}")
        if block.time < self.tip.time:
            raise BlockRejected("block time precedes parent")
        height = self._n
        fpc = self.params.fpc
        utxo = dict(self.utxo)
        balances = dict(self._balances)
        spends: dict[PartyId, list] = {}
        fees = 0
        for k, tx in enumerate(block.transactions):
            where = f"tx {k}: "
            if tx.signature != tx.payer:
                raise BlockRejected(where + "bad signature")
            if min(tx.payment, tx.fee, tx.change) < 0:
                raise BlockRejected(where + "negative amount")
            if tx.fee != fee_for(tx.payment, fpc):
                raise BlockRejected(where + f"fee {tx.fee} != FPC x payment")
            if not tx.inputs:
                raise BlockRejected(where + "no inputs")
            if len(set(tx.inputs)) != len(tx.inputs):
                raise BlockRejected(where + "duplicate input")
            consumed = []
            for ref in tx.inputs:
                out = utxo.pop(ref, None)
                if out is None:
                    raise BlockRejected(where + "input missing or already spent")
                if out.owner != tx.payer:
                    raise BlockRejected(where + "input not owned by payer")
                consumed.append(out)
            total_in = sum(o.amount for o in consumed)
            if total_in != tx.payment + tx.fee + tx.change:
                raise BlockRejected(where + "inputs != payment + fee + change")
            txid = tx.txid
            created = []
            if tx.payment > 0:
                created.append(Output(tx.payee, tx.payment, height, OutputRef(txid, 0)))
            if tx.change > 0:
                created.append(Output(tx.payer, tx.change, height, OutputRef(txid, 1)))
            for out in created:
                if out.ref in utxo:
                    raise BlockRejected(where + "duplicate output reference")
                utxo[out.ref] = out
                balances[out.owner] = balances.get(out.owner, 0) + out.amount
            balances[tx.payer] = balances.get(tx.payer, 0) - total_in
            fees += tx.fee
            if tx.payment > 0:
                spends.setdefault(tx.payer, []).append(attribute_payment(tx.payment, consumed, height))
        if block.reward > 0:
            ref = OutputRef(block.digest.to_bytes(32, "big"), 0)
            if ref in utxo:
                raise BlockRejected("duplicate reward reference")
            utxo[ref] = Output(block.creator, block.reward, height, ref)
            balances[block.creator] = balances.get(block.creator, 0) + block.reward

        child = object.__new__(Chain)
        child.params = self.params
        child.genesis = self.genesis
        child._blocks = _extend(self._blocks, self._n, block)
        child._digests = _extend(self._digests, self._n, block.digest)
        child._n = self._n + 1
        child.utxo = utxo
        child._balances = balances
        child.genesis_supply = self.genesis_supply
        child.fees_burned = self.fees_burned + fees
        spend = self._spend
        if spends:
            spend = dict(spend)
            e = self.params.experience
            for party, slices_per_tx in spends.items():
                log, n = spend.get(party, (None, 0))
                if log is None:
                    log = _SpendLog()
                elif len(log.heights) != n:
                    log = log.prefix(n)
                parts = tuple(s for slices in slices_per_tx for s in slices)
                spent = sum(a for _, a in parts)
                old = sum(a for age, a in parts if age >= e)
                log.heights.append(height)
                log.cum_spent.append((log.cum_spent[-1] if n else 0) + spent)
                log.cum_old.append((log.cum_old[-1] if n else 0) + old)
                log.parts.append(parts)
                spend[party] = (log, n + 1)
        child._spend = spend
        return child


def _extend(items: list, n: int, item) -> list:
    if len(items) == n:
        items.append(item)
        return items
    fresh = items[:n]
    fresh.append(item)
    return fresh


# --- public operations ------------------------------------------------------


def apply_block(chain: Chain, block: Block) -> Chain:
    return chain.apply(block)


def replay(chain: Chain) -> Chain:
    """Rebuild ``chain`` from its genesis allocations by re-applying every block."""
    fresh = Chain.create(chain.genesis, chain.params)
    for block in chain.blocks[1:]:
        fresh = fresh.apply(block)
    return fresh


def balance(party: PartyId, chain: Chain) -> int:
    return chain.balance_of(party)


def spent_total(party: PartyId, chain: Chain) -> int:
    return chain._spent(party, None, None)


def spent_recent(party: PartyId, chain: Chain, F: int) -> int:
    if F < 1:
        raise ValueError("freshness F must be >= 1")
    return chain._spent(party, F, None)


def spent_old(party: PartyId, chain: Chain, E: int) -> int:
    if E < 0:
        raise ValueError("experience E must be >= 0")
    return chain._spent(party, None, E)


def spent_recent_old(party: PartyId, chain: Chain, F: int, E: int) -> int:
    if F < 1:
        raise ValueError("freshness F must be >= 1")
    if E < 0:
        raise ValueError("experience E must be >= 0")
    return chain._spent(party, F, E)


def coin_age(output: Output | OutputRef, chain: Chain) -> int:
    """Blocks since ``output`` was created.

    Live outputs are aged at the chain tip; consumed outputs at the height of
    the block that spent them.
    """
    ref = output.ref if isinstance(output, Output) else output
    live = chain.utxo.get(ref)
    if live is not None:
        return chain.height - live.created_at
    created_at = None
    if ref.source == ZERO_DIGEST and ref.index < len(chain.genesis):
        created_at = 0
    blocks = chain.blocks
    for h, block in enumerate(blocks[1:], start=1):
        for tx in block.transactions:
            if created_at is None and tx.txid == ref.source and ref.index in (0, 1):
                created_at = h
            if created_at is not None and ref in tx.inputs:
                return h - created_at
        if created_at is None and ref.index == 0 and ref.source == block.digest.to_bytes(32, "big"):
            created_at = h
    raise UnknownOutput(f"output {ref.source.hex()[:16]}:{ref.index} not in chain history")


def make_transaction(
    payer: PartyId,
    payee: PartyId,
    payment: int,
    chain: Chain,
    min_age: int = 0,
    time: int | None = None,
    exclude: frozenset | set = frozenset(),
) -> Transaction:
    """Build a payment for inclusion in the block after ``chain``'s tip.

    Inputs are the payer's outputs of age >= ``min_age`` at the spend height,
    taken oldest-first until payment + fee is covered.
    """
    if payment <= 0:
        raise ValueError("payment must be positive")
    fee = fee_for(payment, chain.params.fpc)
    needed = payment + fee
    spend_height = len(chain)
    candidates = sorted(
        (o for o in chain.outputs_of(payer) if spend_height - o.created_at >= min_age and o.ref not in exclude),
        key=lambda o: (o.created_at, o.ref.source, o.ref.index),
    )
    picked = []
    total = 0
    for out in candidates:
        if total >= needed:
            break
        picked.append(out.ref)
        total += out.amount
    if total < needed:
        raise InsufficientFunds(payer, needed, total, min_age)
    return Transaction(
        time=chain.tip.time if time is None else time,
        payer=payer,
        payee=payee,
        payment=payment,
        fee=fee,
        inputs=tuple(picked),
        change=total - needed,
        signature=payer,
    )
