"""APK container access.

Reads an APK as a ZIP archive straight from the central directory, extracts
entries with CRC verification, scans the asset folder for nested APK payloads
and checks the v1 (JAR-style) signature.
"""

from __future__ import annotations

import base64
import hashlib
import re
import struct
import zlib
from dataclasses import dataclass, field
from datetime import datetime, timezone

from cryptography.hazmat.primitives.serialization import pkcs7

EOCD_SIG = b"PK\x05\x06"          # end of central directory, 0x06054b50
CENTRAL_SIG = b"PK\x01\x02"       # central directory header, 0x02014b50
LOCAL_SIG = b"PK\x03\x04"         # local file header, 0x04034b50

METHOD_STORED = 0
METHOD_DEFLATED = 8

# An APK Signing Block (v2/v3 scheme) ends with this magic, sitting directly
# before the central directory.
APK_SIG_BLOCK_MAGIC = b"APK Sig Block 42"

_SIG_BLOCK_RE = re.compile(r"^META-INF/[^/]+\.(RSA|DSA|EC)$", re.IGNORECASE)
_MANIFEST_PATH = "META-INF/MANIFEST.MF"

STATUS_VALID = "valid"
STATUS_EXPIRED = "expired"
STATUS_NOT_YET_VALID = "not-yet-valid"
STATUS_DIGEST_MISMATCH = "digest-mismatch"
STATUS_MISSING_SIGNATURE = "missing-signature"
STATUS_UNPARSABLE = "unparsable"

INVALID_CERT_STATUSES = frozenset(
    {
        STATUS_EXPIRED,
        STATUS_NOT_YET_VALID,
        STATUS_DIGEST_MISMATCH,
        STATUS_MISSING_SIGNATURE,
        STATUS_UNPARSABLE,
    }
)


class ApkError(Exception):
    """Base class for container-level failures."""


class NotZip(ApkError):
    """Input has no usable end-of-central-directory record."""


class TruncatedArchive(ApkError):
    """Central directory runs past the available bytes."""


class DuplicateEntryPath(ApkError):
    """Two central-directory records share one path (a known masking trick)."""


class EntryNotFound(ApkError):
    pass


class CrcMismatch(ApkError):
    pass


class DecompressFailure(ApkError):
    pass


@dataclass(frozen=True)
class ZipEntry:
    path: str
    compressed_size: int
    uncompressed_size: int
    crc32: int
    method: int
    local_header_offset: int

    @property
    def method_name(self) -> str:
        if self.method == METHOD_STORED:
            return "stored"
        if self.method == METHOD_DEFLATED:
            return "deflated"
        return "unsupported-%d" % self.method


@dataclass(frozen=True)
class ApkArchive:
    """Immutable view of one APK: entry metadata plus the raw bytes.

    Safe to share across threads; all reads are positional slices of `data`.
    """

    source_id: str
    entries: tuple[ZipEntry, ...]
    data: bytes = field(repr=False)
    diagnostics: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self, "_by_path", {e.path: e for e in self.entries}
        )

    def entry(self, path: str) -> ZipEntry:
        try:
            return self._by_path[path]
        except KeyError:
            raise EntryNotFound("%s: no entry %r" % (self.source_id, path)) from None

    def has_entry(self, path: str) -> bool:
        return path in self._by_path


def _find_eocd(data: bytes) -> int:
    # Comment field is at most 65535 bytes, so the record starts within the
    # last 65557 bytes of the file.
    window_start = max(0, len(data) - 65535 - 22)
    pos = data.rfind(EOCD_SIG, window_start)
    if pos < 0:
        raise NotZip("no end-of-central-directory record")
    return pos


def open_archive(data: bytes, source_id: str = "<bytes>") -> ApkArchive:
    """Enumerate the central directory without decompressing anything.

    Raises NotZip, TruncatedArchive or DuplicateEntryPath.
    """
    if not data:
        raise NotZip("empty input")
    eocd_pos = _find_eocd(data)
    if eocd_pos + 22 > len(data):
        raise TruncatedArchive("end-of-central-directory record cut short")
    (
        _sig,
        _disk,
        _cd_disk,
        _n_disk,
        n_total,
        cd_size,
        cd_offset,
        _comment_len,
    ) = struct.unpack("<IHHHHIIH", data[eocd_pos : eocd_pos + 22])

    if cd_offset + cd_size > eocd_pos or cd_offset > len(data):
        raise TruncatedArchive(
            "central directory (%d+%d) exceeds archive size %d"
            % (cd_offset, cd_size, eocd_pos)
        )

    entries: list[ZipEntry] = []
    seen: set[str] = set()
    pos = cd_offset
    cd_end = cd_offset + cd_size
    for _ in range(n_total):
        if pos + 46 > cd_end:
            raise TruncatedArchive("central directory header cut short")
        header = data[pos : pos + 46]
        if header[:4] != CENTRAL_SIG:
            raise TruncatedArchive(
                "bad central directory signature at offset %d" % pos
            )
        (
            _ver_made,
            _ver_need,
            flags,
            method,
            _mtime,
            _mdate,
            crc,
            csize,
            usize,
            name_len,
            extra_len,
            comment_len,
            _disk_no,
            _iattr,
            _eattr,
            lho,
        ) = struct.unpack("<HHHHHHIIIHHHHHII", header[4:46])
        if pos + 46 + name_len + extra_len + comment_len > cd_end:
            raise TruncatedArchive("central directory record cut short")
        raw_name = data[pos + 46 : pos + 46 + name_len]
        encoding = "utf-8" if flags & 0x0800 else "cp437"
        path = raw_name.decode(encoding, "replace")
        if path in seen:
            raise DuplicateEntryPath("duplicate entry path %r" % path)
        seen.add(path)
        entries.append(
            ZipEntry(
                path=path,
                compressed_size=csize,
                uncompressed_size=usize,
                crc32=crc,
                method=method,
                local_header_offset=lho,
            )
        )
        pos += 46 + name_len + extra_len + comment_len

    diagnostics = []
    if cd_offset >= 16 and data[cd_offset - 16 : cd_offset] == APK_SIG_BLOCK_MAGIC:
        diagnostics.append("apk-signing-block-present (v2/v3 scheme, not verified)")

    return ApkArchive(
        source_id=source_id,
        entries=tuple(entries),
        data=data,
        diagnostics=tuple(diagnostics),
    )


def read_entry(archive: ApkArchive, path: str) -> bytes:
    """Decompress one entry, verifying size and CRC-32 against the directory."""
    entry = archive.entry(path)
    data = archive.data
    lho = entry.local_header_offset
    if lho + 30 > len(data):
        raise DecompressFailure("%s: local header out of range" % path)
    header = data[lho : lho + 30]
    if header[:4] != LOCAL_SIG:
        raise DecompressFailure("%s: bad local header signature" % path)
    name_len, extra_len = struct.unpack("<HH", header[26:30])
    start = lho + 30 + name_len + extra_len
    end = start + entry.compressed_size
    if end > len(data):
        raise DecompressFailure("%s: entry data truncated" % path)
    payload = data[start:end]

    if entry.method == METHOD_STORED:
        raw = payload
    elif entry.method == METHOD_DEFLATED:
        try:
            inflater = zlib.decompressobj(-15)  # raw DEFLATE, RFC 1951
            raw = inflater.decompress(payload) + inflater.flush()
        except zlib.error as exc:
            raise DecompressFailure("%s: %s" % (path, exc)) from exc
    else:
        raise DecompressFailure(
            "%s: unsupported compression method %d" % (path, entry.method)
        )

    if len(raw) != entry.uncompressed_size:
        raise DecompressFailure(
            "%s: declared size %d, got %d"
            % (path, entry.uncompressed_size, len(raw))
        )
    if zlib.crc32(raw) & 0xFFFFFFFF != entry.crc32:
        raise CrcMismatch(
            "%s: crc32 %08x does not match declared %08x"
            % (path, zlib.crc32(raw) & 0xFFFFFFFF, entry.crc32)
        )
    return raw


def scan_assets_for_apk(
    archive: ApkArchive, diagnostics: list[str] | None = None
) -> bool:
    """True iff any entry under assets/ is itself a ZIP containing a manifest.

    Extension is ignored so renamed payloads count. Corrupt asset entries are
    skipped; a note lands in `diagnostics` when a sink is given.
    """
    found = False
    for entry in archive.entries:
        if not entry.path.startswith("assets/"):
            continue
        try:
            payload = read_entry(archive, entry.path)
        except ApkError as exc:
            if diagnostics is not None:
                diagnostics.append("asset %s unreadable: %s" % (entry.path, exc))
            continue
        try:
            nested = open_archive(payload, source_id=entry.path)
        except ApkError:
            continue  # not a ZIP, nothing masked here
        if nested.has_entry("AndroidManifest.xml"):
            found = True
    return found


@dataclass(frozen=True)
class CertificateVerdict:
    status: str
    not_before: datetime | None = None
    not_after: datetime | None = None
    subject: str = ""

    @property
    def is_invalid(self) -> bool:
        return self.status in INVALID_CERT_STATUSES


def _parse_jar_manifest(text: str) -> list[dict[str, str]]:
    """Split MANIFEST.MF into named sections with unwrapped attributes."""
    lines: list[str] = []
    for raw in text.splitlines():
        if raw.startswith(" ") and lines:
            lines[-1] += raw[1:]  # 70-byte line wrap continuation
        else:
            lines.append(raw)
    sections: list[dict[str, str]] = []
    current: dict[str, str] = {}
    for line in lines:
        if not line.strip():
            if current:
                sections.append(current)
                current = {}
            continue
        key, sep, value = line.partition(":")
        if sep:
            current[key.strip().lower()] = value.strip()
    if current:
        sections.append(current)
    return sections


def _entry_digest_ok(archive: ApkArchive, section: dict[str, str]) -> bool:
    path = section.get("name")
    if path is None:
        return True
    if "sha-256-digest" in section:
        algo, expected = hashlib.sha256, section["sha-256-digest"]
    elif "sha1-digest" in section:
        algo, expected = hashlib.sha1, section["sha1-digest"]
    else:
        return True  # no digest attribute to check
    if not archive.has_entry(path):
        return False
    try:
        payload = read_entry(archive, path)
    except ApkError:
        return False
    actual = base64.b64encode(algo(payload).digest()).decode("ascii")
    return actual == expected


def verify_certificate(
    archive: ApkArchive, reference_time: datetime
) -> CertificateVerdict:
    """v1 (JAR-style) signature check.

    Locates META-INF signature blocks and MANIFEST.MF, reads the signing
    certificate's validity window and recomputes the digest of every entry
    listed in the manifest. Every failure mode is a verdict status, never an
    exception. `reference_time` is an explicit parameter so runs reproduce;
    naive datetimes are taken as UTC.
    """
    if reference_time.tzinfo is None:
        reference_time = reference_time.replace(tzinfo=timezone.utc)

    block_paths = sorted(
        e.path for e in archive.entries if _SIG_BLOCK_RE.match(e.path)
    )
    if not block_paths or not archive.has_entry(_MANIFEST_PATH):
        return CertificateVerdict(status=STATUS_MISSING_SIGNATURE)

    try:
        block = read_entry(archive, block_paths[0])
        certs = pkcs7.load_der_pkcs7_certificates(block)
    except Exception:
        return CertificateVerdict(status=STATUS_UNPARSABLE)
    if not certs:
        return CertificateVerdict(status=STATUS_UNPARSABLE)
    cert = certs[0]
    try:
        not_before = cert.not_valid_before_utc
        not_after = cert.not_valid_after_utc
        subject = cert.subject.rfc4514_string()
    except Exception:
        return CertificateVerdict(status=STATUS_UNPARSABLE)

    # Validity boundaries are inclusive at both ends.
    if reference_time < not_before:
        return CertificateVerdict(
            STATUS_NOT_YET_VALID, not_before, not_after, subject
        )
    if reference_time > not_after:
        return CertificateVerdict(STATUS_EXPIRED, not_before, not_after, subject)

    try:
        manifest_text = read_entry(archive, _MANIFEST_PATH).decode("utf-8")
    except (ApkError, UnicodeDecodeError):
        return CertificateVerdict(STATUS_UNPARSABLE, not_before, not_after, subject)
    for section in _parse_jar_manifest(manifest_text):
        if not _entry_digest_ok(archive, section):
            return CertificateVerdict(
                STATUS_DIGEST_MISMATCH, not_before, not_after, subject
            )

    return CertificateVerdict(STATUS_VALID, not_before, not_after, subject)
