"""Shared fixture machinery.

Archives are produced by the stdlib zipfile module, which acts as the
independent oracle archiver for the hand-rolled container reader.
"""

from __future__ import annotations

import io
import sys
import zipfile
from datetime import datetime, timezone
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from signing import make_throwaway_identity  # noqa: E402

REFERENCE_TIME = datetime(2018, 6, 1, tzinfo=timezone.utc)
CERT_NOT_BEFORE = datetime(2017, 1, 1, tzinfo=timezone.utc)
CERT_NOT_AFTER = datetime(2020, 1, 1, tzinfo=timezone.utc)


def make_zip(
    entries: dict[str, bytes], compression: int = zipfile.ZIP_DEFLATED
) -> bytes:
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w", compression=compression) as archive:
        for name, payload in entries.items():
            archive.writestr(name, payload)
    return buffer.getvalue()


@pytest.fixture(scope="session")
def signer_identity():
    return make_throwaway_identity(CERT_NOT_BEFORE, CERT_NOT_AFTER)
