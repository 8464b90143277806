"""Binary Android XML (AXML) decoding for compiled manifests.

Walks the chunk stream of a compiled AndroidManifest.xml and surfaces the
declared permissions and intent-filter actions/categories. A plain-text
fallback covers fixtures and unpacked app directories.
"""

from __future__ import annotations

import struct
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

# Chunk types (little-endian u16 at chunk start).
CHUNK_AXML_FILE = 0x0003
CHUNK_STRING_POOL = 0x0001
CHUNK_RESOURCE_MAP = 0x0180
CHUNK_START_NAMESPACE = 0x0100
CHUNK_END_NAMESPACE = 0x0101
CHUNK_START_ELEMENT = 0x0102
CHUNK_END_ELEMENT = 0x0103
CHUNK_CDATA = 0x0104

UTF8_FLAG = 0x100
TYPE_STRING = 0x03
NO_INDEX = 0xFFFFFFFF

ANDROID_NS = "http://schemas.android.com/apk/res/android"


class AxmlError(Exception):
    """Base class for manifest decoding failures."""


class NotAxml(AxmlError):
    """Input does not start with the AXML file chunk."""


class TruncatedChunk(AxmlError):
    """A chunk's declared size runs past the available bytes."""


class StringIndexOutOfRange(AxmlError):
    """A chunk references a string-pool slot that does not exist."""


class MalformedXml(AxmlError):
    """Plain-text manifest is not well-formed XML."""


@dataclass(frozen=True)
class ManifestFacts:
    permissions: frozenset[str] = frozenset()
    intent_actions: frozenset[str] = frozenset()
    intent_categories: frozenset[str] = frozenset()
    package: str = ""


def _read_u16(data: bytes, pos: int) -> int:
    if pos + 2 > len(data):
        raise TruncatedChunk("u16 read at %d past end" % pos)
    return struct.unpack_from("<H", data, pos)[0]


def _read_u32(data: bytes, pos: int) -> int:
    if pos + 4 > len(data):
        raise TruncatedChunk("u32 read at %d past end" % pos)
    return struct.unpack_from("<I", data, pos)[0]


class _StringPool:
    def __init__(self, data: bytes, start: int, size: int):
        if size < 28:
            raise TruncatedChunk("string pool chunk too small")
        count = _read_u32(data, start + 8)
        style_count = _read_u32(data, start + 12)
        flags = _read_u32(data, start + 16)
        strings_offset = _read_u32(data, start + 20)
        styles_offset = _read_u32(data, start + 24)
        if 28 + 4 * (count + style_count) > size:
            raise TruncatedChunk("string pool offset table exceeds chunk")
        if strings_offset > size:
            raise TruncatedChunk("string data offset exceeds chunk")
        data_end = start + (styles_offset or size)
        if styles_offset and styles_offset > size:
            raise TruncatedChunk("style data offset exceeds chunk")
        blob = data[start + strings_offset : min(data_end, start + size)]

        self.strings: list[str] = []
        is_utf8 = bool(flags & UTF8_FLAG)
        for i in range(count):
            offset = _read_u32(data, start + 28 + 4 * i)
            if offset >= len(blob):
                raise TruncatedChunk("string %d offset exceeds pool data" % i)
            if is_utf8:
                self.strings.append(self._decode8(blob, offset))
            else:
                self.strings.append(self._decode16(blob, offset))

    @staticmethod
    def _length(blob: bytes, pos: int, wide: bool) -> tuple[int, int]:
        # High bit set means the length spills into a second unit.
        if wide:
            first = struct.unpack_from("<H", blob, pos)[0]
            if first & 0x8000:
                second = struct.unpack_from("<H", blob, pos + 2)[0]
                return ((first & 0x7FFF) << 16) | second, 4
            return first, 2
        first = blob[pos]
        if first & 0x80:
            return ((first & 0x7F) << 8) | blob[pos + 1], 2
        return first, 1

    def _decode8(self, blob: bytes, offset: int) -> str:
        try:
            _chars, skip = self._length(blob, offset, wide=False)
            nbytes, skip2 = self._length(blob, offset + skip, wide=False)
            start = offset + skip + skip2
            if start + nbytes > len(blob):
                raise TruncatedChunk("utf-8 string exceeds pool data")
            return blob[start : start + nbytes].decode("utf-8", "replace")
        except (IndexError, struct.error):
            raise TruncatedChunk("utf-8 string header cut short") from None

    def _decode16(self, blob: bytes, offset: int) -> str:
        try:
            chars, skip = self._length(blob, offset, wide=True)
            start = offset + skip
            if start + 2 * chars > len(blob):
                raise TruncatedChunk("utf-16 string exceeds pool data")
            return blob[start : start + 2 * chars].decode("utf-16-le", "replace")
        except struct.error:
            raise TruncatedChunk("utf-16 string header cut short") from None

    def get(self, index: int) -> str:
        if index == NO_INDEX:
            return ""
        if not 0 <= index < len(self.strings):
            raise StringIndexOutOfRange(
                "string index %d, pool holds %d" % (index, len(self.strings))
            )
        return self.strings[index]


@dataclass
class _Element:
    name: str
    attrs: dict[tuple[str, str], str] = field(default_factory=dict)

    def named(self, attr: str) -> str | None:
        # Attribute resolution is by name; android-namespaced wins over bare.
        value = self.attrs.get((ANDROID_NS, attr))
        if value is None:
            value = self.attrs.get(("", attr))
        return value


def _parse_element(data: bytes, pos: int, size: int, pool: _StringPool) -> _Element:
    name = pool.get(_read_u32(data, pos + 20))
    attr_count = _read_u32(data, pos + 28) & 0xFFFF
    if 36 + 20 * attr_count > size:
        raise TruncatedChunk("attribute table exceeds element chunk")
    element = _Element(name=name)
    for i in range(attr_count):
        base = pos + 36 + 20 * i
        ns = pool.get(_read_u32(data, base))
        attr_name = pool.get(_read_u32(data, base + 4))
        raw_value = _read_u32(data, base + 8)
        data_type = _read_u32(data, base + 12) >> 24
        value_data = _read_u32(data, base + 16)
        if data_type == TYPE_STRING:
            index = raw_value if raw_value != NO_INDEX else value_data
            value = pool.get(index)
        else:
            value = str(value_data)
        element.attrs[(ns, attr_name)] = value
    return element


def decode_axml(data: bytes) -> ManifestFacts:
    """Decode a compiled AndroidManifest.xml.

    Unknown chunk types are skipped by declared size; real manifests contain
    vendor chunks. Raises NotAxml, TruncatedChunk or StringIndexOutOfRange.
    """
    if len(data) < 8 or struct.unpack_from("<H", data, 0)[0] != CHUNK_AXML_FILE:
        raise NotAxml("missing AXML file chunk header")
    file_size = _read_u32(data, 4)
    if file_size > len(data):
        raise TruncatedChunk(
            "declared file size %d, have %d bytes" % (file_size, len(data))
        )
    end = file_size
    header_size = _read_u16(data, 2)
    if header_size < 8 or header_size > end:
        raise TruncatedChunk("implausible file chunk header size %d" % header_size)

    pool: _StringPool | None = None
    permissions: set[str] = set()
    actions: set[str] = set()
    categories: set[str] = set()
    package = ""
    stack: list[str] = []

    pos = header_size
    while pos < end:
        if pos + 8 > end:
            raise TruncatedChunk("chunk header at %d cut short" % pos)
        chunk_type = _read_u16(data, pos)
        chunk_size = _read_u32(data, pos + 4)
        if chunk_size < 8 or pos + chunk_size > end:
            raise TruncatedChunk(
                "chunk 0x%04x at %d declares size %d" % (chunk_type, pos, chunk_size)
            )

        if chunk_type == CHUNK_STRING_POOL and pool is None:
            pool = _StringPool(data, pos, chunk_size)
        elif chunk_type == CHUNK_START_ELEMENT:
            if pool is None:
                raise TruncatedChunk("element chunk before string pool")
            if chunk_size < 36:
                raise TruncatedChunk("element chunk too small")
            element = _parse_element(data, pos, chunk_size, pool)
            _collect(element, stack, permissions, actions, categories)
            if element.name == "manifest" and not package:
                package = (element.named("package") or "").strip()
            stack.append(element.name)
        elif chunk_type == CHUNK_END_ELEMENT:
            if stack:
                stack.pop()
        # Namespace, resource-map, cdata and vendor chunks carry nothing we
        # extract; skip them by declared size.
        pos += chunk_size

    return ManifestFacts(
        permissions=frozenset(permissions),
        intent_actions=frozenset(actions),
        intent_categories=frozenset(categories),
        package=package,
    )


def _collect(
    element: _Element,
    stack: list[str],
    permissions: set[str],
    actions: set[str],
    categories: set[str],
) -> None:
    if element.name == "uses-permission":
        value = (element.named("name") or "").strip()
        if value:
            permissions.add(value)
    elif element.name in ("action", "category") and stack and stack[-1] == "intent-filter":
        value = (element.named("name") or "").strip()
        if value:
            (actions if element.name == "action" else categories).add(value)


def parse_plaintext_manifest(data: bytes) -> ManifestFacts:
    """Same extraction contract as decode_axml, for textual manifests."""
    try:
        root = ET.fromstring(data.decode("utf-8"))
    except (ET.ParseError, UnicodeDecodeError, ValueError) as exc:
        raise MalformedXml(str(exc)) from exc

    def named(el: ET.Element, attr: str) -> str:
        value = el.get("{%s}%s" % (ANDROID_NS, attr))
        if value is None:
            value = el.get(attr, "")
        return value.strip()

    permissions = {
        name
        for el in root.iter("uses-permission")
        if (name := named(el, "name"))
    }
    actions: set[str] = set()
    categories: set[str] = set()
    for intent_filter in root.iter("intent-filter"):
        for child in intent_filter:
            if child.tag == "action" and (name := named(child, "name")):
                actions.add(name)
            elif child.tag == "category" and (name := named(child, "name")):
                categories.add(name)
    package = root.get("package", "").strip() if root.tag == "manifest" else ""
    return ManifestFacts(
        permissions=frozenset(permissions),
        intent_actions=frozenset(actions),
        intent_categories=frozenset(categories),
        package=package,
    )
