"""Double Metaphone phonetic encoding.

Implements Lawrence Philips' Double Metaphone algorithm (the 2000 revision,
as circulated in Kevin Atkinson's C port and its Python translations).
Codes are used to match mis-transcribed noun phrases against a module's
domain vocabulary, so both sides must be encoded by this same function.

Each letter handler yields an action tuple: (primary, advance) when both
codes receive the same fragment, or (primary, secondary, advance) when they
diverge. ``None``/empty fragments add nothing.
"""

from __future__ import annotations

import unicodedata

_VOWELS = frozenset("AEIOUY")
_SILENT_STARTS = ("GN", "KN", "PN", "WR", "PS")


def _normalize_token(token: str) -> str:
    """Uppercase and strip to plain ASCII letters."""
    decomposed = unicodedata.normalize("NFD", token)
    return "".join(c for c in decomposed.upper() if "A" <= c <= "Z")


def double_metaphone(token: str) -> tuple[str, str]:
    """Encode one word; returns (primary, secondary) codes.

    The secondary code equals the primary when the algorithm finds no
    alternate pronunciation. Empty or letter-free input encodes to ("", "").
    Case-insensitive and deterministic.
    """
    word = _normalize_token(token)
    if not word:
        return ("", "")
    primary, secondary = _encode(word)
    # an empty-but-distinct secondary (alternate drops every sound) is kept
    return (primary, primary if secondary is None else secondary)


def phrase_code(phrase: str) -> str:
    """Primary-code signature for a multi-word phrase (space-joined)."""
    return " ".join(double_metaphone(w)[0] for w in phrase.split())


def phrase_code_secondary(phrase: str) -> str:
    """Secondary-code signature for a multi-word phrase."""
    return " ".join(double_metaphone(w)[1] for w in phrase.split())


def _encode(word: str) -> tuple[str, str | None]:
    length = len(word)
    first = 2
    # pad so contextual lookbehind/lookahead never leaves the string
    s = "-" * first + word + " " * 5
    last = first + length - 1
    slavo_germanic = ("W" in word or "K" in word or "CZ" in word or "WITZ" in word)

    pos = first
    pri = sec = ""
    if s[first : first + 2] in _SILENT_STARTS:
        pos += 1
    if s[first] == "X":  # initial X as in "Xavier"
        pri = sec = "S"
        pos += 1

    while pos <= last:
        ch = s[pos]
        if ch in _VOWELS:
            act = ("A", 1) if pos == first else (None, 1)
        elif ch == "B":
            act = ("P", 2 if s[pos + 1] == "B" else 1)
        elif ch == "C":
            act = _letter_c(s, pos, first)
        elif ch == "D":
            if s[pos : pos + 2] == "DG":
                act = ("J", 3) if s[pos + 2] in "IEY" else ("TK", 2)
            elif s[pos : pos + 2] in ("DT", "DD"):
                act = ("T", 2)
            else:
                act = ("T", 1)
        elif ch == "F":
            act = ("F", 2 if s[pos + 1] == "F" else 1)
        elif ch == "G":
            act = _letter_g(s, pos, first, slavo_germanic)
        elif ch == "H":
            # keep only when word-initial before a vowel or between vowels
            if (pos == first or s[pos - 1] in _VOWELS) and s[pos + 1] in _VOWELS:
                act = ("H", 2)
            else:
                act = (None, 1)
        elif ch == "J":
            act = _letter_j(s, pos, first, last, slavo_germanic)
        elif ch == "K":
            act = ("K", 2 if s[pos + 1] == "K" else 1)
        elif ch == "L":
            if s[pos + 1] == "L":
                # Spanish-style "-illo"/"-alle" endings drop the L in the alternate
                if (pos == last - 2 and s[pos - 1 : pos + 3] in ("ILLO", "ILLA", "ALLE")) or (
                    (s[last - 1 : last + 1] in ("AS", "OS") or s[last] in "AO")
                    and s[pos - 1 : pos + 3] == "ALLE"
                ):
                    act = ("L", "", 2)
                else:
                    act = ("L", 2)
            else:
                act = ("L", 1)
        elif ch == "M":
            if (
                s[pos + 1 : pos + 4] == "UMB"
                and (pos + 1 == last or s[pos + 2 : pos + 4] == "ER")
            ) or s[pos + 1] == "M":
                act = ("M", 2)
            else:
                act = ("M", 1)
        elif ch == "N":
            act = ("N", 2 if s[pos + 1] == "N" else 1)
        elif ch == "P":
            if s[pos + 1] == "H":
                act = ("F", 2)
            elif s[pos + 1] in "PB":
                act = ("P", 2)
            else:
                act = ("P", 1)
        elif ch == "Q":
            act = ("K", 2 if s[pos + 1] == "Q" else 1)
        elif ch == "R":
            # French final "-ier" drops the R in the primary
            if (
                pos == last
                and not slavo_germanic
                and s[pos - 2 : pos] == "IE"
                and s[pos - 4 : pos - 2] not in ("ME", "MA")
            ):
                head: tuple = ("", "R")
            else:
                head = ("R",)
            act = head + (2 if s[pos + 1] == "R" else 1,)
        elif ch == "S":
            act = _letter_s(s, pos, first, last, slavo_germanic)
        elif ch == "T":
            if s[pos : pos + 4] == "TION" or s[pos : pos + 3] in ("TIA", "TCH"):
                act = ("X", 3)
            elif s[pos : pos + 2] == "TH" or s[pos : pos + 3] == "TTH":
                if s[pos + 2 : pos + 4] in ("OM", "AM") or s[first : first + 4] in (
                    "VON ",
                    "VAN ",
                ) or s[first : first + 3] == "SCH":
                    act = ("T", 2)
                else:
                    act = ("0", "T", 2)
            elif s[pos + 1] in "TD":
                act = ("T", 2)
            else:
                act = ("T", 1)
        elif ch == "V":
            act = ("F", 2 if s[pos + 1] == "V" else 1)
        elif ch == "W":
            act = _letter_w(s, pos, first, last)
        elif ch == "X":
            # French final "-eaux" stays silent
            if pos == last and (
                s[pos - 3 : pos] in ("IAU", "EAU") or s[pos - 2 : pos] in ("AU", "OU")
            ):
                head = (None,)
            else:
                head = ("KS",)
            act = head + (2 if s[pos + 1] in "CX" else 1,)
        elif ch == "Z":
            if s[pos + 1] == "H":  # pinyin "zh"
                head = ("J",)
            elif s[pos + 1 : pos + 3] in ("ZO", "ZI", "ZA") or (
                slavo_germanic and pos > first and s[pos - 1] != "T"
            ):
                head = ("S", "TS")
            else:
                head = ("S",)
            act = head + (2 if s[pos + 1] == "Z" else 1,)
        else:
            act = (None, 1)

        if len(act) == 2:
            frag, advance = act
            if frag:
                pri += frag
                sec += frag
        else:
            frag, alt, advance = act
            if frag:
                pri += frag
            if alt:
                sec += alt
        pos += advance

    return (pri, sec if sec != pri else None)


def _letter_c(s: str, pos: int, first: int) -> tuple:
    # Germanic "-ach-"
    if (
        pos > first + 1
        and s[pos - 2] not in _VOWELS
        and s[pos - 1 : pos + 2] == "ACH"
        and (s[pos + 2] not in "IE" or s[pos - 2 : pos + 4] in ("BACHER", "MACHER"))
    ):
        return ("K", 2)
    if pos == first and s[first : first + 6] == "CAESAR":
        return ("S", 2)
    if s[pos : pos + 4] == "CHIA":  # Italian "chianti"
        return ("K", 2)
    if s[pos : pos + 2] == "CH":
        if pos > first and s[pos : pos + 4] == "CHAE":  # "michael"
            return ("K", "X", 2)
        if (
            pos == first
            and (
                s[pos + 1 : pos + 6] in ("HARAC", "HARIS")
                or s[pos + 1 : pos + 4] in ("HOR", "HYM", "HIA", "HEM")
            )
            and s[first : first + 5] != "CHORE"
        ):
            return ("K", 2)
        # Germanic or Greek "ch" pronounced as "kh"
        if (
            s[first : first + 4] in ("VAN ", "VON ")
            or s[first : first + 3] == "SCH"
            or s[pos - 2 : pos + 4] in ("ORCHES", "ARCHIT", "ORCHID")
            or s[pos + 2] in "TS"
            or (
                (s[pos - 1] in "AOUE" or pos == first)
                and s[pos + 2] in "LRNMBHFVW "
            )
        ):
            return ("K", 1)
        if pos > first:
            if s[first : first + 2] == "MC":
                return ("K", 2)
            return ("X", "K", 2)
        return ("X", 2)
    if s[pos : pos + 2] == "CZ" and s[pos - 2 : pos + 2] != "WICZ":  # "czerny"
        return ("S", "X", 2)
    if s[pos + 1 : pos + 4] == "CIA":  # "focaccia"
        return ("X", 3)
    if s[pos : pos + 2] == "CC" and not (pos == first + 1 and s[first] == "M"):
        # "bellocchio" but not "bacchus"
        if s[pos + 2] in "IEH" and s[pos + 2 : pos + 4] != "HU":
            if (pos == first + 1 and s[first] == "A") or s[pos - 1 : pos + 4] in (
                "UCCEE",
                "UCCES",
            ):
                return ("KS", 3)  # "accident", "succeed"
            return ("X", 3)  # Italian "bacci"
        return ("K", 2)
    if s[pos : pos + 2] in ("CK", "CG", "CQ"):
        return ("K", "K", 2)
    if s[pos : pos + 2] in ("CI", "CE", "CY"):
        if s[pos : pos + 3] in ("CIO", "CIE", "CIA"):
            return ("S", "X", 2)
        return ("S", 2)
    if s[pos + 1 : pos + 3] in (" C", " Q", " G"):  # "mac caffrey"
        return ("K", 3)
    if s[pos + 1] in "CKQ" and s[pos + 1 : pos + 3] not in ("CE", "CI"):
        return ("K", 2)
    return ("K", 1)


def _letter_g(s: str, pos: int, first: int, slavo_germanic: bool) -> tuple:
    if s[pos + 1] == "H":
        if pos > first and s[pos - 1] not in _VOWELS:
            return ("K", 2)
        if pos < first + 3:
            if pos == first:  # "ghislane" vs "ghoul"
                return ("J", 2) if s[pos + 2] == "I" else ("K", 2)
            return (None, 1)
        # Parker's rule: silent gh as in "hugh"
        if (
            (pos > first + 1 and s[pos - 2] in "BHD")
            or (pos > first + 2 and s[pos - 3] in "BHD")
            or (pos > first + 3 and s[pos - 4] in "BH")
        ):
            return (None, 2)
        # "laugh", "cough", "rough"
        if pos > first + 2 and s[pos - 1] == "U" and s[pos - 3] in "CGLRT":
            return ("F", 2)
        if pos > first and s[pos - 1] != "I":
            return ("K", 2)
        return (None, 1)
    if s[pos + 1] == "N":
        if pos == first + 1 and s[first] in _VOWELS and not slavo_germanic:
            return ("KN", "N", 2)
        # not "cagney"
        if s[pos + 2 : pos + 4] != "EY" and s[pos + 1] != "Y" and not slavo_germanic:
            return ("N", "KN", 2)
        return ("KN", 2)
    if s[pos + 1 : pos + 3] == "LI" and not slavo_germanic:  # "tagliaro"
        return ("KL", "L", 2)
    if pos == first and (
        s[pos + 1] == "Y"
        or s[pos + 1 : pos + 3]
        in ("ES", "EP", "EB", "EL", "EY", "IB", "IL", "IN", "IE", "EI", "ER")
    ):
        return ("K", "J", 2)
    if (
        (s[pos + 1 : pos + 2] == "ER" or s[pos + 1] == "Y")
        and s[first : first + 6] not in ("DANGER", "RANGER", "MANGER")
        and s[pos - 1] not in "EI"
        and s[pos - 1 : pos + 2] not in ("RGY", "OGY")
    ):
        return ("K", "J", 2)
    if s[pos + 1] in "EIY" or s[pos - 1 : pos + 3] in ("AGGI", "OGGI"):
        if (
            s[first : first + 4] in ("VON ", "VAN ")
            or s[first : first + 3] == "SCH"
            or s[pos + 1 : pos + 3] == "ET"
        ):
            return ("K", 2)
        if s[pos + 1 : pos + 5] == "IER ":  # French soft ending
            return ("J", 2)
        return ("J", "K", 2)
    if s[pos + 1] == "G":
        return ("K", 2)
    return ("K", 1)


def _letter_j(s: str, pos: int, first: int, last: int, slavo_germanic: bool) -> tuple:
    if s[pos : pos + 4] == "JOSE" or s[first : first + 4] == "SAN ":
        if (pos == first and s[pos + 4] == " ") or s[first : first + 4] == "SAN ":
            head: tuple = ("H",)
        else:
            head = ("J", "H")
    elif pos == first and s[pos : pos + 4] != "JOSE":
        head = ("J", "A")  # Yankelovich / Jankelowicz
    elif s[pos - 1] in _VOWELS and not slavo_germanic and s[pos + 1] in "AO":
        head = ("J", "H")  # Spanish "bajador"
    elif pos == last:
        head = ("J", " ")
    elif s[pos + 1] not in "LTKSNMBZ" and s[pos - 1] not in "SKL":
        head = ("J",)
    else:
        head = (None,)
    return head + (2 if s[pos + 1] == "J" else 1,)


def _letter_s(s: str, pos: int, first: int, last: int, slavo_germanic: bool) -> tuple:
    if s[pos - 1 : pos + 2] in ("ISL", "YSL"):  # "island", "carlisle"
        return (None, 1)
    if pos == first and s[first : first + 5] == "SUGAR":
        return ("X", "S", 1)
    if s[pos : pos + 2] == "SH":
        if s[pos + 1 : pos + 5] in ("HEIM", "HOEK", "HOLM", "HOLZ"):
            return ("S", 2)
        return ("X", 2)
    if s[pos : pos + 3] in ("SIO", "SIA") or s[pos : pos + 4] == "SIAN":
        if not slavo_germanic:
            return ("S", "X", 3)
        return ("S", 3)
    # "smith" matching "schmidt", "-sz-" in Slavic
    if (pos == first and s[pos + 1] in "MNLW") or s[pos + 1] == "Z":
        return ("S", "X", 2 if s[pos + 1] == "Z" else 1)
    if s[pos : pos + 2] == "SC":
        if s[pos + 2] == "H":  # Schlesinger's rule
            if s[pos + 3 : pos + 5] in ("OO", "ER", "EN", "UY", "ED", "EM"):
                if s[pos + 3 : pos + 5] in ("ER", "EN"):  # "schermerhorn"
                    return ("X", "SK", 3)
                return ("SK", 3)  # "school", "schooner"
            if pos == first and s[first + 3] not in _VOWELS and s[first + 3] != "W":
                return ("X", "S", 3)
            return ("X", 3)
        if s[pos + 2] in "IEY":
            return ("S", 3)
        return ("SK", 3)
    if pos == last and s[pos - 2 : pos] in ("AI", "OI"):  # French "resnais"
        return ("", "S", 1)
    return ("S", 2 if s[pos + 1] in "SZ" else 1)


def _letter_w(s: str, pos: int, first: int, last: int) -> tuple:
    if s[pos : pos + 2] == "WR":
        return ("R", 2)
    if pos == first and (s[pos + 1] in _VOWELS or s[pos : pos + 2] == "WH"):
        if s[pos + 1] in _VOWELS:  # Wasserman matches Vasserman
            return ("A", "F", 1)
        return ("A", 1)
    if (
        (pos == last and s[pos - 1] in _VOWELS)
        or s[pos - 1 : pos + 5] in ("EWSKI", "EWSKY", "OWSKI", "OWSKY")
        or s[first : first + 3] == "SCH"
    ):
        return ("", "F", 1)  # Arnow matches Arnoff
    if s[pos : pos + 4] in ("WICZ", "WITZ"):  # Polish "filipowicz"
        return ("TS", "FX", 4)
    return (None, 1)
