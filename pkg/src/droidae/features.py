"""Joint binary feature space for APK reports.

Defines the ordered feature universe (permissions, intent strings, API
categories, certificate and embedded-APK predicates), maps extraction
results onto indicator vectors and owns the vocabulary / vector-record
file formats.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from datetime import datetime

from .apk import (
    INVALID_CERT_STATUSES,
    STATUS_VALID,
    ApkError,
    CertificateVerdict,
    open_archive,
    read_entry,
    scan_assets_for_apk,
    verify_certificate,
)
from .axml import AxmlError, ManifestFacts, NotAxml, decode_axml, parse_plaintext_manifest
from .dex import ApiCatalog, ApiCategory, ApiHits, ApiMatcher, scan_app_dex

SET_TAGS = ("fs1", "fs2", "fs3", "fs4", "fs5")
LABELS = ("benign", "malicious", "unknown")

VECTOR_HEADER_PREFIX = "#vocabulary-fingerprint="


class FeatureError(Exception):
    pass


class VocabularyMismatch(FeatureError):
    """Vector or report was produced under a different vocabulary."""


@dataclass(frozen=True)
class Feature:
    id: str
    set_tag: str
    matcher: str

    def __post_init__(self):
        if self.set_tag not in SET_TAGS:
            raise FeatureError("unknown set tag %r" % self.set_tag)


@dataclass(frozen=True)
class FeatureVocabulary:
    """Ordered feature universe; the order is the vector index order."""

    features: tuple[Feature, ...]
    catalog: ApiCatalog

    def __post_init__(self):
        ids = [f.id for f in self.features]
        if len(set(ids)) != len(ids):
            raise FeatureError("feature ids must be unique")
        present = {f.set_tag for f in self.features}
        missing = [tag for tag in SET_TAGS if tag not in present]
        if missing:
            raise FeatureError("feature sets %s are empty" % ", ".join(missing))

    @property
    def dimension(self) -> int:
        return len(self.features)

    def set_counts(self) -> dict[str, int]:
        counts = {tag: 0 for tag in SET_TAGS}
        for feature in self.features:
            counts[feature.set_tag] += 1
        return counts

    @property
    def fingerprint(self) -> str:
        canonical = "\n".join(
            "%s\t%s\t%s" % (f.id, f.set_tag, f.matcher) for f in self.features
        )
        return "%08x" % (zlib.crc32(canonical.encode("utf-8")) & 0xFFFFFFFF)

    def index_of(self, feature_id: str) -> int:
        for i, feature in enumerate(self.features):
            if feature.id == feature_id:
                return i
        raise KeyError(feature_id)


def union_dimension(vocab: FeatureVocabulary) -> int:
    """|S| as the sum of the (disjoint) per-set counts."""
    return sum(vocab.set_counts().values())


@dataclass(frozen=True)
class FeatureVector:
    app_id: str
    bits: tuple[int, ...]
    vocabulary_fingerprint: str

    def __post_init__(self):
        if any(bit not in (0, 1) for bit in self.bits):
            raise FeatureError("vector components must be 0 or 1")


@dataclass(frozen=True)
class ApkReport:
    """Raw extraction result for one app, even when parts of it failed."""

    app_id: str
    manifest: ManifestFacts
    api: ApiHits
    certificate: CertificateVerdict
    embedded_apk: bool
    diagnostics: tuple[str, ...] = ()


DEFAULT_PERMISSIONS = (
    "SEND_SMS",
    "READ_SMS",
    "RECEIVE_SMS",
    "WRITE_SMS",
    "READ_PHONE_STATE",
    "CALL_PHONE",
    "READ_CONTACTS",
    "WRITE_CONTACTS",
    "READ_CALL_LOG",
    "WRITE_CALL_LOG",
    "RECEIVE_BOOT_COMPLETED",
    "INSTALL_PACKAGES",
    "DELETE_PACKAGES",
    "SYSTEM_ALERT_WINDOW",
    "ACCESS_FINE_LOCATION",
    "ACCESS_COARSE_LOCATION",
    "RECORD_AUDIO",
    "CAMERA",
    "READ_EXTERNAL_STORAGE",
    "WRITE_EXTERNAL_STORAGE",
    "INTERNET",
    "GET_TASKS",
)

DEFAULT_INTENTS = (
    "android.intent.action.BOOT_COMPLETED",
    "android.provider.Telephony.SMS_RECEIVED",
    "android.intent.action.MAIN",
    "android.intent.category.LAUNCHER",
    "android.intent.action.USER_PRESENT",
    "android.intent.action.NEW_OUTGOING_CALL",
    "android.intent.action.PACKAGE_ADDED",
    "android.intent.category.HOME",
)

DEFAULT_API_CATEGORIES = (
    "telephony",
    "network-http",
    "network-sockets",
    "dynamic-loading",
    "reflection",
    "system-service",
    "runtime-exec",
    "crypto",
)

DEFAULT_INVALID_CERT_MATCHER = ",".join(sorted(INVALID_CERT_STATUSES))


def _default_vocabulary_catalog() -> ApiCatalog:
    """Eight extraction categories: the seven defaults with networking split
    into HTTP use and raw sockets."""
    return ApiCatalog(
        categories=(
            ApiCategory("telephony", (ApiMatcher("Landroid/telephony/"),)),
            ApiCategory(
                "network-http",
                (
                    ApiMatcher("Lorg/apache/http/"),
                    ApiMatcher("Ljava/net/HttpURLConnection;"),
                    ApiMatcher("Ljava/net/URL;"),
                ),
            ),
            ApiCategory(
                "network-sockets",
                (
                    ApiMatcher("Ljava/net/Socket;"),
                    ApiMatcher("Ljava/net/ServerSocket;"),
                    ApiMatcher("Ljava/net/DatagramSocket;"),
                ),
            ),
            ApiCategory(
                "dynamic-loading",
                (
                    ApiMatcher("Ldalvik/system/DexClassLoader;"),
                    ApiMatcher("Ldalvik/system/InMemoryDexClassLoader;"),
                ),
            ),
            ApiCategory("reflection", (ApiMatcher("Ljava/lang/reflect/"),)),
            ApiCategory("system-service", (ApiMatcher("L", "getSystemService"),)),
            ApiCategory("runtime-exec", (ApiMatcher("Ljava/lang/Runtime;", "exec"),)),
            ApiCategory("crypto", (ApiMatcher("Ljavax/crypto/"),)),
        )
    )


def default_vocabulary() -> FeatureVocabulary:
    """The 40-feature default: 22 permissions, 8 intent strings, 8 API
    categories, one invalid-certificate bit, one embedded-APK bit."""
    features: list[Feature] = []
    for name in DEFAULT_PERMISSIONS:
        features.append(
            Feature("perm:%s" % name, "fs1", "android.permission.%s" % name)
        )
    for intent in DEFAULT_INTENTS:
        short = intent.rsplit(".", 1)[-1]
        features.append(Feature("intent:%s" % short, "fs2", intent))
    for category in DEFAULT_API_CATEGORIES:
        features.append(Feature("api:%s" % category, "fs3", category))
    features.append(Feature("cert:invalid", "fs4", DEFAULT_INVALID_CERT_MATCHER))
    features.append(Feature("asset:embedded-apk", "fs5", "embedded-apk"))
    return FeatureVocabulary(
        features=tuple(features), catalog=_default_vocabulary_catalog()
    )


def _feature_present(feature: Feature, report: ApkReport) -> bool:
    if feature.set_tag == "fs1":
        return feature.matcher in report.manifest.permissions
    if feature.set_tag == "fs2":
        return (
            feature.matcher in report.manifest.intent_actions
            or feature.matcher in report.manifest.intent_categories
        )
    if feature.set_tag == "fs3":
        return feature.matcher in report.api.hit_categories
    if feature.set_tag == "fs4":
        statuses = {s.strip() for s in feature.matcher.split(",") if s.strip()}
        return report.certificate.status in statuses
    return report.embedded_apk  # fs5


def vectorize(report: ApkReport, vocab: FeatureVocabulary) -> FeatureVector:
    """Indicator mapping: bit i is 1 iff feature i is present in the report."""
    bits = tuple(
        1 if _feature_present(feature, report) else 0 for feature in vocab.features
    )
    return FeatureVector(
        app_id=report.app_id,
        bits=bits,
        vocabulary_fingerprint=vocab.fingerprint,
    )


def report_for_bits(
    bits, vocab: FeatureVocabulary, app_id: str = "synthetic"
) -> ApkReport:
    """Build a report that satisfies exactly the given features.

    Round-trip companion of vectorize: assumes every matcher is distinct
    within its set, which holds for the default vocabulary.
    """
    bits = tuple(int(b) for b in bits)
    if len(bits) != vocab.dimension:
        raise VocabularyMismatch(
            "%d bits for a %d-dimension vocabulary" % (len(bits), vocab.dimension)
        )
    permissions: set[str] = set()
    actions: set[str] = set()
    categories: set[str] = set()
    api: dict[str, frozenset[tuple[str, str]]] = {}
    status = STATUS_VALID
    embedded = False
    for feature, bit in zip(vocab.features, bits):
        if not bit:
            continue
        if feature.set_tag == "fs1":
            permissions.add(feature.matcher)
        elif feature.set_tag == "fs2":
            if ".category." in feature.matcher:
                categories.add(feature.matcher)
            else:
                actions.add(feature.matcher)
        elif feature.set_tag == "fs3":
            api[feature.matcher] = frozenset({("Lsynthetic/Source;", "use")})
        elif feature.set_tag == "fs4":
            status = sorted(
                s.strip() for s in feature.matcher.split(",") if s.strip()
            )[0]
        else:
            embedded = True
    return ApkReport(
        app_id=app_id,
        manifest=ManifestFacts(
            permissions=frozenset(permissions),
            intent_actions=frozenset(actions),
            intent_categories=frozenset(categories),
        ),
        api=ApiHits(evidence=api),
        certificate=CertificateVerdict(status=status),
        embedded_apk=embedded,
    )


def extract_report(
    data: bytes,
    app_id: str,
    vocab: FeatureVocabulary,
    reference_time: datetime,
) -> ApkReport:
    """Run every extractor over one APK's bytes.

    Container-level failures propagate; sub-extractor failures degrade to
    empty facts plus a diagnostic, so a report exists for every archive that
    opens.
    """
    archive = open_archive(data, source_id=app_id)
    diagnostics: list[str] = list(archive.diagnostics)

    manifest = ManifestFacts()
    if archive.has_entry("AndroidManifest.xml"):
        try:
            raw = read_entry(archive, "AndroidManifest.xml")
            try:
                manifest = decode_axml(raw)
            except NotAxml:
                manifest = parse_plaintext_manifest(raw)
        except (ApkError, AxmlError) as exc:
            diagnostics.append("manifest: %s" % exc)
    else:
        diagnostics.append("manifest: no AndroidManifest.xml entry")

    hits, dex_diagnostics = scan_app_dex(archive, vocab.catalog)
    diagnostics.extend(dex_diagnostics)

    certificate = verify_certificate(archive, reference_time)
    embedded = scan_assets_for_apk(archive, diagnostics)

    return ApkReport(
        app_id=app_id,
        manifest=manifest,
        api=hits,
        certificate=certificate,
        embedded_apk=embedded,
        diagnostics=tuple(diagnostics),
    )


def vocabulary_to_dict(vocab: FeatureVocabulary) -> dict:
    return {
        "format": "droidae-vocabulary",
        "version": 1,
        "features": [
            {"id": f.id, "set": f.set_tag, "matcher": f.matcher}
            for f in vocab.features
        ],
        "api_catalog": [
            {
                "name": category.name,
                "matchers": [
                    {"class_prefix": m.class_prefix, "method_name": m.method_name}
                    for m in category.matchers
                ],
            }
            for category in vocab.catalog.categories
        ],
    }


def vocabulary_from_dict(payload: dict) -> FeatureVocabulary:
    if payload.get("format") != "droidae-vocabulary":
        raise FeatureError("not a vocabulary document")
    features = tuple(
        Feature(entry["id"], entry["set"], entry["matcher"])
        for entry in payload["features"]
    )
    catalog = ApiCatalog(
        categories=tuple(
            ApiCategory(
                entry["name"],
                tuple(
                    ApiMatcher(m["class_prefix"], m.get("method_name"))
                    for m in entry["matchers"]
                ),
            )
            for entry in payload["api_catalog"]
        )
    )
    return FeatureVocabulary(features=features, catalog=catalog)


def save_vocabulary(vocab: FeatureVocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(vocabulary_to_dict(vocab), handle, indent=2)
        handle.write("\n")


def load_vocabulary(path) -> FeatureVocabulary:
    with open(path, encoding="utf-8") as handle:
        return vocabulary_from_dict(json.load(handle))


def write_vector_records(
    path,
    fingerprint: str,
    records,
    header_comments: tuple[str, ...] = (),
) -> None:
    """One record per line: app-id, label, then the bits, comma separated.

    The first line carries the vocabulary fingerprint; further '#' lines are
    free-form comments readers skip.
    """
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(VECTOR_HEADER_PREFIX + fingerprint + "\n")
        for comment in header_comments:
            handle.write("#" + comment + "\n")
        for app_id, label, bits in records:
            if "," in app_id or "\n" in app_id:
                raise FeatureError("app id %r contains a separator" % app_id)
            if label not in LABELS:
                raise FeatureError("unknown label %r" % label)
            handle.write(
                "%s,%s,%s\n"
                % (app_id, label, ",".join(str(int(b)) for b in bits))
            )


def read_vector_records(path) -> tuple[str, list[tuple[str, str, tuple[int, ...]]]]:
    fingerprint = None
    records: list[tuple[str, str, tuple[int, ...]]] = []
    dimension = None
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith(VECTOR_HEADER_PREFIX):
                fingerprint = line[len(VECTOR_HEADER_PREFIX) :].strip()
                continue
            if line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) < 3:
                raise FeatureError("line %d: too few fields" % line_no)
            app_id, label = parts[0], parts[1]
            if label not in LABELS:
                raise FeatureError("line %d: unknown label %r" % (line_no, label))
            try:
                bits = tuple(int(p) for p in parts[2:])
            except ValueError:
                raise FeatureError("line %d: non-integer bit" % line_no) from None
            if any(b not in (0, 1) for b in bits):
                raise FeatureError("line %d: bits must be 0 or 1" % line_no)
            if dimension is None:
                dimension = len(bits)
            elif len(bits) != dimension:
                raise FeatureError(
                    "line %d: %d bits, expected %d" % (line_no, len(bits), dimension)
                )
            records.append((app_id, label, bits))
    if fingerprint is None:
        raise FeatureError("missing vocabulary fingerprint header")
    return fingerprint, records
