"""
Portfolio - Cash, Equity and Protective-Put Ledger

Value semantics: every operation takes a PortfolioState and returns a new
one plus the TradeRecord it produced. Nothing is mutated in place, so a
state can be copied freely into candidate evaluations.

EXECUTION:
- Equity fills at the day's close, proportional cost equity_rate * notional
- Puts buy at the ask and sell at the bid
- Option cost = |dn| * fixed_per_contract + prop_rate * |dn| * premium * M
- Volume gate caps |dn| at min(volume, open_interest)
- Insufficient cash scales a buy down to the largest affordable quantity

VALUATION:
V = cash + close * shares + sum(bid * M * contracts); held contracts with no
quote today are marked with Black-Scholes at sigma = VIX / 100.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from datetime import date
from typing import Optional

from scripts.backtest.options_pricing import PricingInputs, PutSpec, bs_put_price, year_fraction

logger = logging.getLogger(__name__)

EQUITY_RATE = 0.002
OPTION_FIXED_PER_CONTRACT = 0.70
OPTION_FIXED_RAW = 0.007
OPTION_PROP_RATE = 0.005
DEFAULT_MULTIPLIER = 100

# Float slack when comparing an outlay to available cash
CASH_TOLERANCE = 1e-9
# Shields ceil() from representation error in N * (1 + a)
SELL_ROUNDING_SLACK = 1e-9


class PortfolioError(ValueError):
    """Quote, contract or date does not match the ledger state."""


@dataclass(frozen=True)
class CostModel:
    equity_rate: float = EQUITY_RATE
    option_fixed_per_contract: float = OPTION_FIXED_PER_CONTRACT
    option_prop_rate: float = OPTION_PROP_RATE

    def __post_init__(self):
        for name in ('equity_rate', 'option_fixed_per_contract', 'option_prop_rate'):
            if getattr(self, name) < 0:
                raise PortfolioError(f"{name} must be non-negative, got {getattr(self, name)}")

    @classmethod
    def zero(cls):
        return cls(0.0, 0.0, 0.0)

    def equity_cost(self, price, quantity):
        return self.equity_rate * price * abs(quantity)

    def option_cost(self, premium, multiplier, contracts):
        contracts = abs(contracts)
        return contracts * self.option_fixed_per_contract + self.option_prop_rate * contracts * premium * multiplier


@dataclass(frozen=True)
class Position:
    spec: PutSpec
    contracts: int
    entry_premium: float

    def __post_init__(self):
        if self.contracts < 1:
            raise PortfolioError(f"position must hold >= 1 contract, got {self.contracts}")


@dataclass(frozen=True)
class PortfolioState:
    date: date
    cash: float
    shares: int = 0
    positions: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.cash < -CASH_TOLERANCE:
            raise PortfolioError(f"cash went negative on {self.date}: {self.cash}")
        if self.shares < 0:
            raise PortfolioError(f"short equity position on {self.date}: {self.shares}")

    @property
    def contracts(self):
        return sum(p.contracts for p in self.positions)

    def position_for(self, spec):
        for position in self.positions:
            if position.spec == spec:
                return position
        return None

    def advance(self, new_date):
        return replace(self, date=new_date)


@dataclass(frozen=True)
class TradeRecord:
    date: date
    kind: str
    quantity: float
    price: float
    cost: float
    strike: Optional[float] = None
    expiry: Optional[date] = None
    multiplier: int = 1
    requested: Optional[float] = None

    @property
    def cash_effect(self):
        """Signed cash change; settlements carry their payout as price."""
        if self.kind == 'settlement':
            return self.quantity * self.price * self.multiplier
        return -self.quantity * self.price * self.multiplier - self.cost

    @property
    def clamped(self):
        return self.requested is not None and self.requested != self.quantity


def initial_state(start, cash):
    if cash <= 0:
        raise PortfolioError(f"initial cash must be positive, got {cash}")
    return PortfolioState(start, float(cash), 0, ())


def _check_date(state, market):
    if market.date != state.date:
        raise PortfolioError(f"slice dated {market.date} does not match portfolio date {state.date}")


def find_quote(market, spec):
    for quote in market.puts:
        if quote.expiry == spec.expiry and math.isclose(quote.strike, spec.strike, rel_tol=0, abs_tol=1e-9):
            return quote
    return None


def mark_position(position, market, rate=0.0):
    """Per-share liquidation mark: the quoted bid, else a Black-Scholes fallback."""
    quote = find_quote(market, position.spec)
    if quote is not None:
        return quote.bid
    inputs = PricingInputs(market.close, position.spec.strike,
                           year_fraction(market.date, position.spec.expiry), rate,
                           max(market.vix, 0.0) / 100.0)
    return bs_put_price(inputs)


def portfolio_value(state, market, rate=0.0):
    _check_date(state, market)
    options = sum(mark_position(p, market, rate) * p.spec.multiplier * p.contracts for p in state.positions)
    return state.cash + market.close * state.shares + options


def _affordable_units(budget, unit_outlay, upper):
    """Largest n <= upper with n * unit_outlay <= budget."""
    if unit_outlay <= 0 or upper <= 0:
        return max(upper, 0)
    n = min(upper, int(math.floor(budget / unit_outlay)))
    while n > 0 and n * unit_outlay > budget + CASH_TOLERANCE:
        n -= 1
    while n < upper and (n + 1) * unit_outlay <= budget + CASH_TOLERANCE:
        n += 1
    return max(n, 0)


def apply_equity_trade(state, a, price, cost_model=CostModel()):
    """
    Map a trading action a in [-1, 1] to an integer share trade.

    a > 0 spends at most a * cash on new shares (cost included), a < 0 sells
    the fraction |a| of held shares rounded up, a = 0 holds.

    Args:
        state: portfolio before the trade
        a: trading action in [-1, 1]
        price: fill price, the day's close
        cost_model: equity_rate is charged on the traded notional

    Returns:
        (new state, TradeRecord). The record keeps the unclamped request.

    Raises:
        PortfolioError: non-positive price or a outside [-1, 1]
    """
    if not price > 0:
        raise PortfolioError(f"equity price must be positive, got {price}")
    if not -1.0 <= a <= 1.0:
        raise PortfolioError(f"trading action {a} outside [-1, 1]")

    if a > 0:
        budget = a * state.cash
        requested = int(math.floor(budget / price))
        delta = _affordable_units(budget, price * (1.0 + cost_model.equity_rate), requested)
    elif a < 0:
        target = int(math.ceil(state.shares * (1.0 + a) - SELL_ROUNDING_SLACK))
        delta = max(target, 0) - state.shares
        requested = delta
    else:
        delta = requested = 0

    cost = cost_model.equity_cost(price, delta)
    cash = state.cash - delta * price - cost
    if delta > 0:
        cash = max(cash, 0.0)
    new_state = replace(state, cash=cash, shares=state.shares + delta)
    record = TradeRecord(state.date, 'equity', delta, price, cost, requested=requested)
    return new_state, record


def apply_option_trade(state, spec, delta_contracts, quote, cost_model=CostModel()):
    """
    Buy (dn > 0) or sell (dn < 0) puts of one contract. Buys fill at the ask,
    sells at the bid; the volume gate, cash and held quantity clamp dn.

    Args:
        state: portfolio before the trade
        spec: contract (strike, expiry, multiplier)
        delta_contracts: integer dn
        quote: today's quote for exactly this contract
        cost_model: fixed fee per contract plus option_prop_rate of premium * M

    Returns:
        (new state, TradeRecord) with the filled quantity, possibly 0
    """
    if quote.date != state.date:
        raise PortfolioError(f"quote dated {quote.date} used on {state.date}")
    if quote.right != 'put':
        raise PortfolioError(f"only puts are tradable, got {quote.right}")
    if quote.expiry != spec.expiry or not math.isclose(quote.strike, spec.strike, rel_tol=0, abs_tol=1e-9):
        raise PortfolioError(f"quote {quote.strike}/{quote.expiry} does not match contract "
                             f"{spec.strike}/{spec.expiry}")
    requested = int(delta_contracts)
    if requested != delta_contracts:
        raise PortfolioError(f"contract quantity must be an integer, got {delta_contracts}")

    multiplier = spec.multiplier
    gate = min(quote.volume, quote.open_interest)
    held = state.position_for(spec)
    held_contracts = held.contracts if held else 0

    if requested > 0:
        price = quote.ask
        unit = price * multiplier + cost_model.option_cost(price, multiplier, 1)
        n = _affordable_units(state.cash, unit, min(requested, gate))
    elif requested < 0:
        price = quote.bid
        n = -min(-requested, gate, held_contracts)
        # zero-bid sales still pay the fixed fee
        while n < 0 and state.cash + (-n) * price * multiplier - cost_model.option_cost(price, multiplier, n) < -CASH_TOLERANCE:
            n += 1
    else:
        price, n = quote.ask, 0

    if n != requested:
        logger.info(f"{state.date}: put {spec.strike}/{spec.expiry} order {requested} clamped to {n} "
                    f"(gate={gate}, held={held_contracts}, cash={state.cash:.2f})")

    cost = cost_model.option_cost(price, multiplier, n)
    cash = state.cash - n * price * multiplier - cost
    if n > 0:
        cash = max(cash, 0.0)
    positions = [p for p in state.positions if p.spec != spec]
    remaining = held_contracts + n
    if remaining > 0:
        if n > 0:
            entry = (held_contracts * (held.entry_premium if held else 0.0) + n * price) / remaining
        else:
            entry = held.entry_premium
        positions.append(Position(spec, remaining, entry))
    positions.sort(key=lambda p: (p.spec.expiry, p.spec.strike))

    new_state = replace(state, cash=cash, positions=tuple(positions))
    record = TradeRecord(state.date, 'option', n, price, cost, spec.strike, spec.expiry, multiplier,
                         requested=requested)
    return new_state, record


def settlement_records(state, market):
    """Settlement rows for the positions settle_expiries() would close today."""
    return [
        TradeRecord(market.date, 'settlement', p.contracts, max(p.spec.strike - market.close, 0.0), 0.0,
                    p.spec.strike, p.spec.expiry, p.spec.multiplier)
        for p in state.positions if p.spec.expiry <= market.date
    ]


def settle_expiries(state, market):
    """
    Cash-settle every position expiring on or before the slice date at
    n * M * max(K - close, 0) and drop it from the book.

    A position whose expiry fell on a non-trading day (or a day missing from
    the feed) settles on the first slice after it, at that slice's close.
    The close of the expiry date itself is never looked up.

    Returns:
        (new state, settlement cash)
    """
    _check_date(state, market)
    proceeds = 0.0
    kept = []
    settled = 0
    for position in state.positions:
        if position.spec.expiry <= market.date:
            payoff = max(position.spec.strike - market.close, 0.0)
            proceeds += position.contracts * position.spec.multiplier * payoff
            settled += 1
        else:
            kept.append(position)
    if not settled:
        return state, 0.0
    logger.info(f"{market.date}: settled {settled} expiring put position(s) for {proceeds:.2f}")
    return replace(state, cash=state.cash + proceeds, positions=tuple(kept)), proceeds
