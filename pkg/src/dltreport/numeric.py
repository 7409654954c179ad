"""Exact rational helpers shared by serialization code."""

from __future__ import annotations

from decimal import ROUND_HALF_EVEN, Decimal, localcontext
from fractions import Fraction

DECIMAL_PLACES = 10
_QUANTUM = Decimal(1).scaleb(-DECIMAL_PLACES)


def to_fraction(value) -> Fraction:
    """Parse an int, a decimal/fraction string or a float (via its repr) exactly."""
    if isinstance(value, bool):
        raise TypeError("booleans are not numbers here")
    if isinstance(value, (int, Fraction)):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(repr(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    raise TypeError(f"cannot interpret {value!r} as a rational")


def render_decimal(value: Fraction | int) -> str:
    """Decimal string rounded half-even to 10 places; integers render bare."""
    value = Fraction(value)
    if value.denominator == 1:
        return str(value.numerator)
    with localcontext() as ctx:
        ctx.prec = 60
        d = Decimal(value.numerator) / Decimal(value.denominator)
        return str(d.quantize(_QUANTUM, rounding=ROUND_HALF_EVEN))


def json_number(value: Fraction | int):
    """JSON-ready form: int for integral values, decimal string otherwise."""
    value = Fraction(value)
    if value.denominator == 1:
        return value.numerator
    return render_decimal(value)


def fraction_text(value: Fraction | int) -> str:
    """Lossless text form ("3/20" or "7")."""
    return str(Fraction(value))


def exact_decimal_text(value: Fraction) -> str | None:
    """Exact finite decimal rendering, or None if the expansion does not terminate."""
    value = Fraction(value)
    den = value.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return None
    places = max(twos, fives)
    scaled = value * 10**places
    assert scaled.denominator == 1
    n = scaled.numerator
    sign = "-" if n < 0 else ""
    digits = str(abs(n)).rjust(places + 1, "0")
    if places == 0:
        return sign + digits
    return f"{sign}{digits[:-places]}.{digits[-places:]}"
