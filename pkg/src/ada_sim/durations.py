"""Duration strings of the form "<integer><unit>" stored as integer microseconds.

Units are s, m, h. All simulation arithmetic is exact integer microseconds so
that replays are deterministic.
"""

from __future__ import annotations

import re

from .errors import ValidationError

US_PER_SECOND = 1_000_000
US_PER_MINUTE = 60 * US_PER_SECOND
US_PER_HOUR = 60 * US_PER_MINUTE

_UNIT_US = {"s": US_PER_SECOND, "m": US_PER_MINUTE, "h": US_PER_HOUR}
_DURATION_RE = re.compile(r"^(\d+)([smh])$")


def parse_duration(text: object, *, path: str = "duration") -> int:
    """Parse "300s" / "5m" / "1h" into microseconds."""
    if not isinstance(text, str):
        raise ValidationError(f"expected a duration string, got {text!r}", path=path)
    m = _DURATION_RE.match(text.strip())
    if m is None:
        raise ValidationError(
            f"invalid duration {text!r} (expected <integer><s|m|h>)", path=path
        )
    return int(m.group(1)) * _UNIT_US[m.group(2)]


def format_duration(us: int) -> str:
    """Render microseconds back to the largest unit that divides evenly."""
    if us % US_PER_SECOND != 0:
        raise ValueError(f"{us} microseconds is not representable as <int><s|m|h>")
    if us % US_PER_HOUR == 0 and us != 0:
        return f"{us // US_PER_HOUR}h"
    if us % US_PER_MINUTE == 0 and us != 0:
        return f"{us // US_PER_MINUTE}m"
    return f"{us // US_PER_SECOND}s"


def seconds(us: int) -> float:
    return us / US_PER_SECOND
