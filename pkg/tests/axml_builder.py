"""Binary AXML writer for test fixtures.

Compiles a textual manifest into the chunk format the production decoder
reads: string pool (UTF-16 or UTF-8), namespace chunks and element chunks
with typed string attributes. Written independently of the decoder so the
two can be compared differentially.
"""

from __future__ import annotations

import struct
import xml.etree.ElementTree as ET

ANDROID_NS = "http://schemas.android.com/apk/res/android"

_TYPE_FILE = 0x0003
_TYPE_STRING_POOL = 0x0001
_TYPE_RESOURCE_MAP = 0x0180
_TYPE_START_NS = 0x0100
_TYPE_END_NS = 0x0101
_TYPE_START_ELEMENT = 0x0102
_TYPE_END_ELEMENT = 0x0103

_UTF8_FLAG = 0x100
_TYPE_STRING_VALUE = 0x03
_NO_INDEX = 0xFFFFFFFF


class _StringTable:
    def __init__(self):
        self._index: dict[str, int] = {}
        self.strings: list[str] = []

    def add(self, value: str) -> int:
        if value not in self._index:
            self._index[value] = len(self.strings)
            self.strings.append(value)
        return self._index[value]


def _encode_length(value: int, wide: bool) -> bytes:
    if wide:
        if value < 0x8000:
            return struct.pack("<H", value)
        return struct.pack("<HH", 0x8000 | (value >> 16), value & 0xFFFF)
    if value < 0x80:
        return struct.pack("<B", value)
    return struct.pack("<BB", 0x80 | (value >> 8), value & 0xFF)


def _pool_chunk(strings: list[str], utf8: bool) -> bytes:
    blobs: list[bytes] = []
    offsets: list[int] = []
    position = 0
    for text in strings:
        offsets.append(position)
        utf16_units = len(text.encode("utf-16-le")) // 2
        if utf8:
            raw = text.encode("utf-8")
            blob = (
                _encode_length(utf16_units, wide=False)
                + _encode_length(len(raw), wide=False)
                + raw
                + b"\x00"
            )
        else:
            raw = text.encode("utf-16-le")
            blob = _encode_length(utf16_units, wide=True) + raw + b"\x00\x00"
        blobs.append(blob)
        position += len(blob)
    data = b"".join(blobs)
    data += b"\x00" * (-len(data) % 4)

    strings_offset = 28 + 4 * len(strings)
    size = strings_offset + len(data)
    header = struct.pack(
        "<HHIIIIII",
        _TYPE_STRING_POOL,
        28,
        size,
        len(strings),
        0,  # style count
        _UTF8_FLAG if utf8 else 0,
        strings_offset,
        0,  # styles offset
    )
    return header + b"".join(struct.pack("<I", o) for o in offsets) + data


def _namespace_chunk(chunk_type: int, prefix_idx: int, uri_idx: int) -> bytes:
    return struct.pack(
        "<HHIIIII", chunk_type, 16, 24, 1, _NO_INDEX, prefix_idx, uri_idx
    )


def _start_element_chunk(
    name_idx: int, attrs: list[tuple[int, int, int]]
) -> bytes:
    size = 36 + 20 * len(attrs)
    out = struct.pack(
        "<HHIII",
        _TYPE_START_ELEMENT,
        16,
        size,
        1,  # line number
        _NO_INDEX,  # comment
    )
    out += struct.pack("<II", _NO_INDEX, name_idx)
    out += struct.pack("<HH", 0x14, 0x14)  # attribute start / record size
    out += struct.pack("<I", len(attrs))  # count in low 16, no id attribute
    out += struct.pack("<I", 0)  # no class / style attribute
    for ns_idx, attr_name_idx, value_idx in attrs:
        out += struct.pack("<II", ns_idx, attr_name_idx)
        out += struct.pack("<I", value_idx)  # raw value
        out += struct.pack("<HBB", 8, 0, _TYPE_STRING_VALUE)
        out += struct.pack("<I", value_idx)  # typed data
    return out


def _end_element_chunk(name_idx: int) -> bytes:
    return struct.pack(
        "<HHIIIII", _TYPE_END_ELEMENT, 16, 24, 1, _NO_INDEX, _NO_INDEX, name_idx
    )


def compile_manifest(
    xml_text: str,
    utf8_pool: bool = False,
    inject_unknown_chunk: bool = False,
    inject_resource_map: bool = False,
    pool_order_seed: int | None = None,
) -> bytes:
    """Compile textual manifest XML to binary AXML bytes.

    `pool_order_seed` permutes the string pool so decoders can be checked
    for semantic (not positional) behavior.
    """
    root = ET.fromstring(xml_text)
    table = _StringTable()

    uses_android_ns = False

    def split_attr(key: str) -> tuple[str, str]:
        if key.startswith("{"):
            uri, _, name = key[1:].partition("}")
            return uri, name
        return "", key

    # Collect strings in document order: tag, then attribute names/values.
    def collect(el: ET.Element) -> None:
        nonlocal uses_android_ns
        table.add(el.tag)
        for key, value in el.attrib.items():
            uri, name = split_attr(key)
            if uri:
                uses_android_ns = True
                table.add(uri)
            table.add(name)
            table.add(value)
        for child in el:
            collect(child)

    collect(root)
    if uses_android_ns:
        table.add("android")
        table.add(ANDROID_NS)
    if pool_order_seed is not None:
        import random

        order = list(table.strings)
        random.Random(pool_order_seed).shuffle(order)
        table._index = {s: i for i, s in enumerate(order)}
        table.strings = order
    prefix_idx = table.add("android") if uses_android_ns else None
    uri_idx = table.add(ANDROID_NS) if uses_android_ns else None

    chunks: list[bytes] = [_pool_chunk(table.strings, utf8_pool)]
    if inject_resource_map:
        chunks.append(
            struct.pack("<HHI", _TYPE_RESOURCE_MAP, 8, 8 + 8)
            + struct.pack("<II", 0x0101021B, 0x01010003)
        )
    if uses_android_ns:
        chunks.append(_namespace_chunk(_TYPE_START_NS, prefix_idx, uri_idx))
    if inject_unknown_chunk:
        chunks.append(struct.pack("<HHI", 0x0777, 8, 12) + b"\xde\xad\xbe\xef")

    def emit(el: ET.Element) -> None:
        attrs = []
        for key, value in el.attrib.items():
            uri, name = split_attr(key)
            ns_idx = table.add(uri) if uri else _NO_INDEX
            attrs.append((ns_idx, table.add(name), table.add(value)))
        chunks.append(_start_element_chunk(table.add(el.tag), attrs))
        for child in el:
            emit(child)
        chunks.append(_end_element_chunk(table.add(el.tag)))

    emit(root)
    if uses_android_ns:
        chunks.append(_namespace_chunk(_TYPE_END_NS, prefix_idx, uri_idx))

    body = b"".join(chunks)
    return struct.pack("<HHI", _TYPE_FILE, 8, 8 + len(body)) + body
