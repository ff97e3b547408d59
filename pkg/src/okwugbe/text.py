"""Character sets with diacritics, transcript normalisation, label encoding."""

from __future__ import annotations

import hashlib
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import regex

BLANK_TOKEN = "<blank>"
_GRAPHEME = regex.compile(r"\X")


class CharsetError(ValueError):
    pass


class EncodeError(ValueError):
    pass


def graphemes(text: str) -> list[str]:
    """Split into extended grapheme clusters (a base letter keeps its combining marks)."""
    return _GRAPHEME.findall(text)


def normalize_text(text: str) -> str:
    """NFC, lower-case, single spaces, no leading or trailing whitespace."""
    prev = None
    # lower() and NFC do not commute for a handful of code points; iterate to a fixpoint
    for _ in range(4):
        if text == prev:
            break
        prev = text
        text = " ".join(unicodedata.normalize("NFC", text.lower()).split())
    return text


@dataclass(frozen=True)
class CharSet:
    symbols: tuple[str, ...]
    blank_index: int = 0
    index_of: dict[str, int] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            seen = set()
            dup = next(s for s in self.symbols if s in seen or seen.add(s))
            raise CharsetError(f"duplicate symbol {dup!r}")
        if self.symbols.count(BLANK_TOKEN) != 1 or self.symbols[self.blank_index] != BLANK_TOKEN:
            raise CharsetError("charset needs exactly one blank, at index 0")
        object.__setattr__(self, "index_of", {s: i for i, s in enumerate(self.symbols)})

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def digest(self) -> str:
        """Stable hash of the ordered symbol list; checkpoints record it."""
        return hashlib.sha256("\n".join(self.symbols).encode("utf-8")).hexdigest()[:16]

    @classmethod
    def from_symbols(cls, symbols: Sequence[str]) -> "CharSet":
        return cls(symbols=(BLANK_TOKEN, *symbols))


def parse_charset(text: str, source: str = "<string>") -> CharSet:
    symbols: list[str] = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        line = line.rstrip("\r")
        if line.startswith("#") or line == "":
            continue
        sym = unicodedata.normalize("NFC", line)
        if not symbols:
            if sym != BLANK_TOKEN:
                raise CharsetError(f"{source}:{lineno}: first entry must be {BLANK_TOKEN!r}")
        elif sym == BLANK_TOKEN:
            raise CharsetError(f"{source}:{lineno}: blank listed twice")
        elif len(graphemes(sym)) != 1:
            raise CharsetError(f"{source}:{lineno}: {sym!r} is not a single grapheme")
        if sym in symbols:
            raise CharsetError(f"{source}:{lineno}: duplicate symbol {sym!r}")
        symbols.append(sym)
    if not symbols:
        raise CharsetError(f"{source}: empty charset")
    return CharSet(symbols=tuple(symbols))


def load_charset(path: str | Path) -> CharSet:
    """Load a charset file, or a shipped one by name (``fon``, ``igbo``, ``synthetic``)."""
    p = Path(path)
    if not p.exists() and str(path) in shipped_charsets():
        data = resources.files("okwugbe.charsets").joinpath(f"{path}.txt").read_bytes()
        source = f"{path}.txt"
    else:
        data = p.read_bytes()
        source = str(p)
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CharsetError(f"{source}: not valid UTF-8 ({exc})") from exc
    return parse_charset(text, source)


def shipped_charsets() -> list[str]:
    root = resources.files("okwugbe.charsets")
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".txt"))


def encode(text: str, cs: CharSet) -> list[int]:
    ids = []
    for pos, g in enumerate(graphemes(text)):
        try:
            ids.append(cs.index_of[g])
        except KeyError:
            raise EncodeError(f"grapheme {g!r} at position {pos} is not in the charset") from None
        if ids[-1] == cs.blank_index:
            raise EncodeError(f"blank token cannot appear in a transcript (position {pos})")
    return ids


def decode_text(ids: Sequence[int], cs: CharSet) -> str:
    n = len(cs)
    out = []
    for i in ids:
        if not 0 <= int(i) < n:
            raise EncodeError(f"label id {i} out of range [0, {n})")
        out.append(cs.symbols[int(i)])
    return "".join(out)
