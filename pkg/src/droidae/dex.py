"""DEX bytecode container scanning.

Parses the string/type/proto/method id tables of classes*.dex payloads and
reports which sensitive API categories an app references. Method-reference
presence counts as use; no instruction decoding happens here.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field

from .apk import ApkArchive, ApkError, read_entry

DEX_VERSIONS = (b"035", b"037", b"038", b"039")
HEADER_SIZE = 0x70

_DEX_ENTRY_RE = re.compile(r"^classes\d*\.dex$")


class DexError(Exception):
    """Base class for DEX parsing failures."""


class NotDex(DexError):
    """Input does not start with a known DEX magic."""


class TruncatedTable(DexError):
    """An id table or string datum runs past the available bytes."""


class IndexOutOfRange(DexError):
    """An id table cross-reference points outside its target table."""


@dataclass(frozen=True)
class ApiMatcher:
    class_prefix: str
    method_name: str | None = None

    def matches(self, class_descriptor: str, method: str) -> bool:
        if not class_descriptor.startswith(self.class_prefix):
            return False
        return self.method_name is None or method == self.method_name


@dataclass(frozen=True)
class ApiCategory:
    name: str
    matchers: tuple[ApiMatcher, ...]


@dataclass(frozen=True)
class ApiCatalog:
    categories: tuple[ApiCategory, ...]

    def __post_init__(self):
        names = [c.name for c in self.categories]
        if len(set(names)) != len(names):
            raise ValueError("duplicate category names in catalog")
        for category in self.categories:
            for matcher in category.matchers:
                if not matcher.class_prefix.startswith("L"):
                    raise ValueError(
                        "matcher prefix %r is not a type-descriptor prefix"
                        % matcher.class_prefix
                    )

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.categories)


@dataclass(frozen=True)
class ApiHits:
    evidence: dict[str, frozenset[tuple[str, str]]] = field(default_factory=dict)

    @property
    def hit_categories(self) -> frozenset[str]:
        return frozenset(self.evidence)

    def union(self, other: "ApiHits") -> "ApiHits":
        merged = dict(self.evidence)
        for name, pairs in other.evidence.items():
            merged[name] = merged.get(name, frozenset()) | pairs
        return ApiHits(evidence=merged)


def default_catalog() -> ApiCatalog:
    """The seven sensitive API categories matched by default.

    telephony identifiers, HTTP/socket networking, DexClassLoader-style
    dynamic loading, reflection, system-service lookups, Runtime.exec and
    javax.crypto use.
    """
    return ApiCatalog(
        categories=(
            ApiCategory("telephony", (ApiMatcher("Landroid/telephony/"),)),
            ApiCategory(
                "network-sockets",
                (ApiMatcher("Ljava/net/"), ApiMatcher("Lorg/apache/http/")),
            ),
            ApiCategory(
                "dynamic-loading",
                (
                    ApiMatcher("Ldalvik/system/DexClassLoader;"),
                    ApiMatcher("Ldalvik/system/InMemoryDexClassLoader;"),
                ),
            ),
            ApiCategory("reflection", (ApiMatcher("Ljava/lang/reflect/"),)),
            # Any class qualifies: the call name alone is the signal.
            ApiCategory("system-service", (ApiMatcher("L", "getSystemService"),)),
            ApiCategory("runtime-exec", (ApiMatcher("Ljava/lang/Runtime;", "exec"),)),
            ApiCategory("crypto", (ApiMatcher("Ljavax/crypto/"),)),
        )
    )


def _read_uleb128(data: bytes, pos: int) -> tuple[int, int]:
    value = 0
    shift = 0
    for i in range(5):
        if pos + i >= len(data):
            raise TruncatedTable("uleb128 at %d cut short" % pos)
        byte = data[pos + i]
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value, pos + i + 1
        shift += 7
    raise TruncatedTable("uleb128 at %d exceeds 5 bytes" % pos)


def _decode_mutf8(raw: bytes) -> str:
    """Decode MUTF-8: CESU-8 style surrogates plus 0xC0 0x80 for NUL."""
    units: list[int] = []
    i = 0
    n = len(raw)
    while i < n:
        b = raw[i]
        if b & 0x80 == 0:
            units.append(b)
            i += 1
        elif b & 0xE0 == 0xC0:
            if i + 1 >= n or raw[i + 1] & 0xC0 != 0x80:
                raise TruncatedTable("malformed 2-byte mutf-8 sequence")
            units.append(((b & 0x1F) << 6) | (raw[i + 1] & 0x3F))
            i += 2
        elif b & 0xF0 == 0xE0:
            if i + 2 >= n or raw[i + 1] & 0xC0 != 0x80 or raw[i + 2] & 0xC0 != 0x80:
                raise TruncatedTable("malformed 3-byte mutf-8 sequence")
            units.append(
                ((b & 0x0F) << 12) | ((raw[i + 1] & 0x3F) << 6) | (raw[i + 2] & 0x3F)
            )
            i += 3
        else:
            raise TruncatedTable("invalid mutf-8 lead byte 0x%02x" % b)
    out: list[str] = []
    j = 0
    while j < len(units):
        unit = units[j]
        if (
            0xD800 <= unit <= 0xDBFF
            and j + 1 < len(units)
            and 0xDC00 <= units[j + 1] <= 0xDFFF
        ):
            out.append(
                chr(0x10000 + ((unit - 0xD800) << 10) + (units[j + 1] - 0xDC00))
            )
            j += 2
        else:
            out.append(chr(unit))
            j += 1
    return "".join(out)


def _table_bounds(data: bytes, offset: int, count: int, width: int, name: str) -> None:
    if count and (offset + count * width > len(data) or offset < HEADER_SIZE):
        raise TruncatedTable(
            "%s table (%d entries at 0x%x) exceeds file" % (name, count, offset)
        )


def _read_string(data: bytes, offset: int) -> str:
    if offset >= len(data):
        raise TruncatedTable("string data offset 0x%x past end" % offset)
    _utf16_len, pos = _read_uleb128(data, offset)
    end = data.find(b"\x00", pos)
    if end < 0:
        raise TruncatedTable("string data at 0x%x not terminated" % offset)
    return _decode_mutf8(data[pos:end])


def scan_dex(data: bytes, catalog: ApiCatalog) -> ApiHits:
    """Report catalog categories whose matchers hit the method_ids table."""
    if len(data) < 8 or data[:4] != b"dex\n" or data[7:8] != b"\x00":
        raise NotDex("missing DEX magic")
    if data[4:7] not in DEX_VERSIONS:
        raise NotDex("unknown DEX version %r" % data[4:7])
    if len(data) < HEADER_SIZE:
        raise TruncatedTable("header cut short")

    string_count, string_off = struct.unpack_from("<II", data, 0x38)
    type_count, type_off = struct.unpack_from("<II", data, 0x40)
    proto_count, proto_off = struct.unpack_from("<II", data, 0x48)
    method_count, method_off = struct.unpack_from("<II", data, 0x58)
    _table_bounds(data, string_off, string_count, 4, "string_ids")
    _table_bounds(data, type_off, type_count, 4, "type_ids")
    _table_bounds(data, proto_off, proto_count, 12, "proto_ids")
    _table_bounds(data, method_off, method_count, 8, "method_ids")

    strings = [
        _read_string(data, struct.unpack_from("<I", data, string_off + 4 * i)[0])
        for i in range(string_count)
    ]

    descriptors: list[str] = []
    for i in range(type_count):
        idx = struct.unpack_from("<I", data, type_off + 4 * i)[0]
        if idx >= string_count:
            raise IndexOutOfRange("type_id %d: string index %d" % (i, idx))
        descriptors.append(strings[idx])

    for i in range(proto_count):
        shorty_idx, return_idx, _params_off = struct.unpack_from(
            "<III", data, proto_off + 12 * i
        )
        if shorty_idx >= string_count:
            raise IndexOutOfRange("proto_id %d: shorty index %d" % (i, shorty_idx))
        if return_idx >= type_count:
            raise IndexOutOfRange("proto_id %d: return type %d" % (i, return_idx))

    evidence: dict[str, set[tuple[str, str]]] = {}
    for i in range(method_count):
        class_idx, proto_idx, name_idx = struct.unpack_from(
            "<HHI", data, method_off + 8 * i
        )
        if class_idx >= type_count:
            raise IndexOutOfRange("method_id %d: class index %d" % (i, class_idx))
        if proto_idx >= proto_count:
            raise IndexOutOfRange("method_id %d: proto index %d" % (i, proto_idx))
        if name_idx >= string_count:
            raise IndexOutOfRange("method_id %d: name index %d" % (i, name_idx))
        descriptor = descriptors[class_idx]
        method = strings[name_idx]
        for category in catalog.categories:
            if any(m.matches(descriptor, method) for m in category.matchers):
                evidence.setdefault(category.name, set()).add((descriptor, method))

    return ApiHits(evidence={k: frozenset(v) for k, v in evidence.items()})


def scan_app_dex(
    archive: ApkArchive, catalog: ApiCatalog
) -> tuple[ApiHits, list[str]]:
    """Union of scan_dex over all classes*.dex entries.

    One corrupt DEX does not discard hits from the others; its error is
    returned in the diagnostics list.
    """
    hits = ApiHits()
    diagnostics: list[str] = []
    dex_paths = [e.path for e in archive.entries if _DEX_ENTRY_RE.match(e.path)]
    if not dex_paths:
        diagnostics.append("no classes*.dex entries")
        return hits, diagnostics
    for path in dex_paths:
        try:
            hits = hits.union(scan_dex(read_entry(archive, path), catalog))
        except (ApkError, DexError) as exc:
            diagnostics.append("%s: %s" % (path, exc))
    return hits, diagnostics
