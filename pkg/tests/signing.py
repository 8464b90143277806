"""v1 (JAR-style) signing of fixture archives with a throwaway key.

Digests are computed with hashlib and the PKCS#7 block is produced by the
cryptography builder; the production verifier only ever reads these
artifacts, so the two code paths stay independent.
"""

from __future__ import annotations

import base64
import hashlib
from datetime import datetime, timezone

from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import rsa
from cryptography.hazmat.primitives.serialization import pkcs7
from cryptography.x509.oid import NameOID


def make_throwaway_identity(
    not_before: datetime, not_after: datetime, common_name: str = "Fixture Signer"
):
    key = rsa.generate_private_key(public_exponent=65537, key_size=2048)
    name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, common_name)])
    cert = (
        x509.CertificateBuilder()
        .subject_name(name)
        .issuer_name(name)
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(not_before.astimezone(timezone.utc))
        .not_valid_after(not_after.astimezone(timezone.utc))
        .sign(key, hashes.SHA256())
    )
    return key, cert


def build_jar_manifest(entries: dict[str, bytes]) -> bytes:
    lines = ["Manifest-Version: 1.0", ""]
    for path in sorted(entries):
        digest = base64.b64encode(hashlib.sha256(entries[path]).digest()).decode()
        lines.append("Name: %s" % path)
        lines.append("SHA-256-Digest: %s" % digest)
        lines.append("")
    return ("\r\n".join(lines) + "\r\n").encode("utf-8")


def build_signature_block(manifest: bytes, key, cert) -> bytes:
    return (
        pkcs7.PKCS7SignatureBuilder()
        .set_data(manifest)
        .add_signer(cert, key, hashes.SHA256())
        .sign(
            serialization.Encoding.DER,
            [pkcs7.PKCS7Options.DetachedSignature, pkcs7.PKCS7Options.Binary],
        )
    )


def sign_entries(entries: dict[str, bytes], key, cert) -> dict[str, bytes]:
    """Return the entry map extended with META-INF signing files."""
    manifest = build_jar_manifest(entries)
    signed = dict(entries)
    signed["META-INF/MANIFEST.MF"] = manifest
    signed["META-INF/CERT.RSA"] = build_signature_block(manifest, key, cert)
    return signed
