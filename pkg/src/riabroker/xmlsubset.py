"""A small, forgiving XML reader for the broker's document subset.

The documents this broker accepts are hand-written service listings, and some
of them are not well-formed XML: unquoted attribute values, spaces inside the
encoding name, start tags missing their closing ``>``, stray cardinality
markers such as ``*`` and ``?``. A strict parser rejects all of those, so this
reader recovers from them while still refusing documents that are truncated,
have mismatched end tags, or carry content outside the root element.

Namespaces are not resolved. Elements and attributes keep their prefixed
names and are looked up by local name.

Every failure surfaces as :class:`~riabroker.errors.XmlMalformed`; no other
exception escapes :func:`parse`.
"""

from __future__ import annotations

import codecs
import re
from dataclasses import dataclass, field
from typing import Iterator

from .errors import XmlMalformed

_NAME = r"[^\W\d][\w.:-]*"
_ATTR = r"\s+(" + _NAME + r")\s*=\s*(\"[^\"<]*\"|'[^'<]*')"
_FAST_START = re.compile(r"<(" + _NAME + r")((?:" + _ATTR + r")*)\s*(/?)>")
_ATTR_RE = re.compile(_ATTR)
_NAME_RE = re.compile(_NAME)
_END_TAG = re.compile(r"</(" + _NAME + r")\s*>")
_WS = re.compile(r"\s*")
_UNQUOTED = re.compile(r"[^\s<>]*")
_STRAY = re.compile(r"[^\s<>/]+|/")
_ENTITY = re.compile(r"&(#[xX][0-9A-Fa-f]+|#[0-9]+|[A-Za-z][\w.-]*);")
_ATTR_WS = re.compile(r"[\t\n]")
_DECL_ENCODING = re.compile(rb"\s*<\?xml[^>]*?encoding\s*=\s*([\"'])(.*?)\1", re.S)

_PREDEFINED = {"lt": "<", "gt": ">", "amp": "&", "quot": '"', "apos": "'"}

_TEXT_SPECIAL = re.compile("[&<>\r\x00-\x08\x0b\x0c\x0e-\x1f\ud800-\udfff\ufffe\uffff]")
_ATTR_SPECIAL = re.compile("[&<>\"\t\n\r\x00-\x08\x0b\x0c\x0e-\x1f\ud800-\udfff\ufffe\uffff]")
_ESCAPES = {"&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;"}


@dataclass(eq=False)
class Element:
    tag: str
    attrs: dict[str, str] = field(default_factory=dict)
    children: list["Element"] = field(default_factory=list)
    text: str = ""
    _source: str = field(default="", repr=False)
    _span: tuple[int, int] = field(default=(0, 0), repr=False)

    @property
    def local(self) -> str:
        return self.tag.rpartition(":")[2]

    @property
    def inner(self) -> str:
        """Raw source between the start and end tag."""
        return self._source[self._span[0] : self._span[1]]

    def iter(self) -> Iterator["Element"]:
        """Pre-order walk over this element and all descendants."""
        stack = [self]
        while stack:
            el = stack.pop()
            yield el
            stack.extend(reversed(el.children))

    def find(self, local: str) -> "Element | None":
        """First descendant (not self) with the given local name."""
        for el in self.iter():
            if el is not self and el.local == local:
                return el
        return None

    def findall(self, local: str) -> list["Element"]:
        return [el for el in self.iter() if el is not self and el.local == local]

    def child(self, local: str) -> "Element | None":
        for el in self.children:
            if el.local == local:
                return el
        return None

    def attr(self, local: str, default: str | None = None) -> str | None:
        for name, value in self.attrs.items():
            if name.rpartition(":")[2] == local:
                return value
        return default

    def itertext(self) -> Iterator[str]:
        for el in self.iter():
            if el.text:
                yield el.text


def _decode(data: bytes) -> str:
    try:
        if data.startswith(codecs.BOM_UTF8):
            return data[3:].decode("utf-8")
        if data.startswith((codecs.BOM_UTF16_LE, codecs.BOM_UTF16_BE)):
            return data.decode("utf-16")
        encoding = "utf-8"
        m = _DECL_ENCODING.match(data)
        if m:
            name = re.sub(rb"\s+", b"", m.group(2)).decode("ascii")
            info = codecs.lookup(name)
            if not getattr(info, "_is_text_encoding", True):
                raise LookupError(name)
            encoding = info.name
        return data.decode(encoding)
    except (LookupError, UnicodeError, ValueError, TypeError) as exc:
        raise XmlMalformed(f"cannot decode document: {exc}") from None


def _entity(m: re.Match) -> str:
    ref = m.group(1)
    if ref[0] == "#":
        digits = ref[2:] if ref[1] in "xX" else ref[1:]
        cp = int(digits, 16 if ref[1] in "xX" else 10) if len(digits) <= 8 else -1
        if not 0 <= cp <= 0x10FFFF:
            raise XmlMalformed(f"character reference out of range: &{ref};")
        return chr(cp)
    # unknown named entities are kept literally
    return _PREDEFINED.get(ref, m.group(0))


def unescape(raw: str) -> str:
    if "&" not in raw:
        return raw
    return _ENTITY.sub(_entity, raw)


def _charref(m: re.Match) -> str:
    c = m.group(0)
    return _ESCAPES.get(c) or f"&#x{ord(c):X};"


def escape_text(s: str) -> str:
    return _TEXT_SPECIAL.sub(_charref, s)


def escape_attr(s: str) -> str:
    return _ATTR_SPECIAL.sub(_charref, s)


def _attr_value(raw: str) -> str:
    return unescape(_ATTR_WS.sub(" ", raw))


class _Parser:
    def __init__(self, s: str, multiple: bool):
        self.s = s
        self.multiple = multiple
        self.stack: list[tuple[Element, list[str]]] = []
        self.roots: list[Element] = []

    def text(self, raw: str, entities: bool = True) -> None:
        if not self.stack:
            if raw.strip():
                raise XmlMalformed(f"text outside the root element: {raw.strip()[:40]!r}")
            return
        self.stack[-1][1].append(unescape(raw) if entities else raw)

    def open(self, name: str, attrs: dict[str, str], start: int, self_closing: bool) -> None:
        if not self.stack and self.roots and not self.multiple:
            raise XmlMalformed(f"second root element <{name}>")
        el = Element(name, attrs, _source=self.s, _span=(start, start))
        if self.stack:
            self.stack[-1][0].children.append(el)
        if self_closing:
            if not self.stack:
                self.roots.append(el)
        else:
            self.stack.append((el, []))

    def close(self, name: str, end: int) -> None:
        if not self.stack:
            raise XmlMalformed(f"end tag </{name}> without matching start tag")
        el, parts = self.stack[-1]
        if el.tag != name:
            raise XmlMalformed(f"end tag </{name}> does not match <{el.tag}>")
        self.stack.pop()
        el.text = "".join(parts)
        el._span = (el._span[0], end)
        if not self.stack:
            self.roots.append(el)

    def start_tag_slow(self, lt: int) -> int:
        s, n = self.s, len(self.s)
        m = _NAME_RE.match(s, lt + 1)
        if not m:
            raise XmlMalformed(f"invalid markup at offset {lt}")
        name = m.group(0)
        attrs: dict[str, str] = {}
        i = m.end()
        self_closing = False
        while True:
            i = _WS.match(s, i).end()
            if i >= n:
                raise XmlMalformed(f"unterminated start tag <{name}>")
            c = s[i]
            if c == ">":
                i += 1
                break
            if s.startswith("/>", i):
                i += 2
                self_closing = True
                break
            if c == "<":
                # start tag missing its '>': end it here and keep going
                break
            am = _NAME_RE.match(s, i)
            if am:
                j = _WS.match(s, am.end()).end()
                if j < n and s[j] == "=":
                    j = _WS.match(s, j + 1).end()
                    if j < n and s[j] in "\"'":
                        q = s.find(s[j], j + 1)
                        if q < 0:
                            raise XmlMalformed(f"unterminated attribute value in <{name}>")
                        attrs[am.group(0)] = _attr_value(s[j + 1 : q])
                        i = q + 1
                    else:
                        um = _UNQUOTED.match(s, j)
                        attrs[am.group(0)] = _attr_value(um.group(0))
                        i = um.end()
                else:
                    # attribute name without a value: ignored
                    i = am.end()
                continue
            i = _STRAY.match(s, i).end()
        self.open(name, attrs, i, self_closing)
        return i

    def run(self) -> list[Element]:
        s = self.s
        n = len(s)
        pos = 0
        while pos < n:
            lt = s.find("<", pos)
            if lt < 0:
                self.text(s[pos:])
                break
            if lt > pos:
                self.text(s[pos:lt])
            if s.startswith("<!--", lt):
                end = s.find("-->", lt + 4)
                if end < 0:
                    raise XmlMalformed("unterminated comment")
                pos = end + 3
            elif s.startswith("<?", lt):
                end = s.find("?>", lt + 2)
                if end < 0:
                    raise XmlMalformed("unterminated processing instruction")
                pos = end + 2
            elif s.startswith("<![CDATA[", lt):
                end = s.find("]]>", lt + 9)
                if end < 0:
                    raise XmlMalformed("unterminated CDATA section")
                self.text(s[lt + 9 : end], entities=False)
                pos = end + 3
            elif s.startswith("<!", lt):
                raise XmlMalformed("document type declarations are not supported")
            elif s.startswith("</", lt):
                m = _END_TAG.match(s, lt)
                if not m:
                    raise XmlMalformed(f"malformed end tag at offset {lt}")
                self.close(m.group(1), lt)
                pos = m.end()
            else:
                m = _FAST_START.match(s, lt)
                if m:
                    attrs = {a: _attr_value(v[1:-1]) for a, v in _ATTR_RE.findall(m.group(2))} if m.group(2) else {}
                    self.open(m.group(1), attrs, m.end(), m.group(5) == "/")
                    pos = m.end()
                else:
                    pos = self.start_tag_slow(lt)
        if self.stack:
            raise XmlMalformed(f"document ends inside <{self.stack[-1][0].tag}>")
        if not self.roots and not self.multiple:
            raise XmlMalformed("no root element")
        return self.roots


def parse(data: bytes | str) -> Element:
    """Parse a single-rooted document."""
    s = _decode(bytes(data)) if isinstance(data, (bytes, bytearray, memoryview)) else data
    s = s.replace("\r\n", "\n").replace("\r", "\n")
    return _Parser(s, multiple=False).run()[0]


def parse_many(data: bytes | str) -> list[Element]:
    """Parse a stream of concatenated root elements; an empty stream yields ``[]``."""
    s = _decode(bytes(data)) if isinstance(data, (bytes, bytearray, memoryview)) else data
    s = s.replace("\r\n", "\n").replace("\r", "\n")
    return _Parser(s, multiple=True).run()
