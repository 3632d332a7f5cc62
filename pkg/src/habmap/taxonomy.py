"""Habitat codes, their three-level hierarchy, and formation membership.

Codes follow a strict grammar: a formation prefix (one of MA2, N, P, Q, R, S,
T, U, V) optionally followed by further characters. The prefix alone is a
level-1 code, one extra character gives level 2, anything longer is level 3
("T" -> "T1" -> "T17"). The saltmarsh formation uses the three-character
prefix "MA2", so its level-3 codes are five characters long ("MA221").
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Iterator

FORMATIONS = ("MA2", "N", "P", "Q", "R", "S", "T", "U", "V")

_CODE_RE = re.compile(r"[A-Z]+[0-9A-Z]*\Z")


class TaxonomyError(ValueError):
    """Malformed habitat code or inconsistent taxonomy."""


def _formation_prefix(code: str) -> str:
    if code.startswith("M"):
        if code.startswith("MA2"):
            return "MA2"
        raise TaxonomyError(
            f"unknown formation prefix in {code!r} (marine codes must start with 'MA2')"
        )
    if code[0] in FORMATIONS:
        return code[0]
    raise TaxonomyError(f"unknown formation prefix in {code!r}")


@dataclass(frozen=True, order=True)
class HabitatCode:
    code: str
    level: int

    @property
    def formation(self) -> str:
        return _formation_prefix(self.code)

    def __str__(self) -> str:
        return self.code


def parse_code(text: str) -> HabitatCode:
    """Parse a habitat code token, inferring its hierarchy level.

    The level is purely syntactic: the formation prefix alone is level 1,
    one further character level 2, anything longer level 3. Raises
    TaxonomyError naming the offending text for malformed tokens.
    """
    if not isinstance(text, str) or not text:
        raise TaxonomyError(f"empty or non-string habitat code: {text!r}")
    if not _CODE_RE.match(text):
        raise TaxonomyError(f"malformed habitat code {text!r}")
    prefix = _formation_prefix(text)
    extra = len(text) - len(prefix)
    level = 1 if extra == 0 else (2 if extra == 1 else 3)
    return HabitatCode(code=text, level=level)


def _coerce(code: HabitatCode | str) -> HabitatCode:
    return code if isinstance(code, HabitatCode) else parse_code(code)


def formation_of(code: HabitatCode | str) -> HabitatCode:
    """Return the level-1 ancestor (identity on level-1 codes)."""
    c = _coerce(code)
    return HabitatCode(code=c.formation, level=1)


def level2_of(code: HabitatCode | str) -> HabitatCode:
    """Drop the final character ("S22" -> "S2", "MA221" -> "MA22")."""
    c = _coerce(code)
    if c.level == 1:
        raise TaxonomyError(f"level-1 code {c.code!r} has no level-2 ancestor")
    return parse_code(c.code[:-1])


class Taxonomy:
    """A declared set of level-3 habitat classes, partitioned by formation."""

    def __init__(self, classes: Iterable[HabitatCode | str]):
        seen: dict[str, HabitatCode] = {}
        for raw in classes:
            c = _coerce(raw)
            if c.level != 3:
                raise TaxonomyError(f"taxonomy classes must be level 3, got {c.code!r}")
            if c.code in seen:
                raise TaxonomyError(f"duplicate habitat code {c.code!r}")
            seen[c.code] = c
        self._classes = tuple(sorted(seen.values()))
        self._by_formation: dict[str, tuple[HabitatCode, ...]] = {}
        for c in self._classes:
            self._by_formation.setdefault(c.formation, ())
            self._by_formation[c.formation] += (c,)

    @classmethod
    def from_file(cls, path, allowed_formations: Iterable[str] | None = None) -> "Taxonomy":
        """Load one level-3 code per line; '#' starts a comment.

        `allowed_formations`, when given, rejects codes outside the listed
        formations at load time (e.g. to exclude inland waters).
        """
        allowed = set(allowed_formations) if allowed_formations is not None else None
        codes = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                token = line.split("#", 1)[0].strip()
                if not token:
                    continue
                try:
                    c = parse_code(token)
                except TaxonomyError as exc:
                    raise TaxonomyError(f"{path}:{lineno}: {exc}") from None
                if allowed is not None and c.formation not in allowed:
                    raise TaxonomyError(
                        f"{path}:{lineno}: formation {c.formation!r} not allowed here"
                    )
                codes.append(c)
        return cls(codes)

    @property
    def classes(self) -> tuple[HabitatCode, ...]:
        return self._classes

    @property
    def formations(self) -> tuple[str, ...]:
        return tuple(sorted(self._by_formation))

    def classes_in(self, formation: str) -> tuple[HabitatCode, ...]:
        return self._by_formation.get(formation, ())

    def __contains__(self, code: HabitatCode | str) -> bool:
        c = code.code if isinstance(code, HabitatCode) else code
        return any(c == k.code for k in self._classes)

    def __iter__(self) -> Iterator[HabitatCode]:
        return iter(self._classes)

    def __len__(self) -> int:
        return len(self._classes)

    def validate(self, code: HabitatCode | str) -> HabitatCode:
        c = _coerce(code)
        if c.code not in {k.code for k in self._classes}:
            raise TaxonomyError(f"habitat code {c.code!r} not in taxonomy")
        return c
