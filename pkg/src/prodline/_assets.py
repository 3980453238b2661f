"""Checksummed access to the CSV tables shipped inside the package."""

from __future__ import annotations

import hashlib
from importlib import resources

__all__ = ["AssetError", "read_asset"]

_EXPECTED_SHA256 = {
    "orthogonal_design.csv": "0350c23cb781f866ecc02a53380fb7744ccba55920b8e4984a2c720d627d1eee",
    "camera_mean.csv": "b23e36a706e81591b5477b8e8660aae903a99bdf1acbedf9c1be844a03fbc9ba",
    "camera_cov.csv": "5f742c474feda9c9619f6afdb8fc686af1a16d76717db09f33fe57b9bd2b2f1b",
}


class AssetError(RuntimeError):
    """A packaged data file is missing or does not match its checksum."""


def read_asset(name: str) -> str:
    """Return the text of a packaged data file after verifying its checksum."""
    if name not in _EXPECTED_SHA256:
        raise AssetError(f"unknown data asset {name!r}")
    try:
        raw = (resources.files("prodline") / "data" / name).read_bytes()
    except (FileNotFoundError, ModuleNotFoundError) as exc:
        raise AssetError(f"data asset {name!r} is not installed") from exc
    digest = hashlib.sha256(raw).hexdigest()
    if digest != _EXPECTED_SHA256[name]:
        raise AssetError(
            f"data asset {name!r} is corrupted: sha256 {digest} != {_EXPECTED_SHA256[name]}"
        )
    return raw.decode("utf-8")
