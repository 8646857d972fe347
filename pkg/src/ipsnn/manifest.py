"""Run manifests: config hash, seeds, timestamps, artifact inventory.

The manifest is written atomically when a run finishes and ties every
artifact in the run directory to the exact configuration bytes that
produced it, so a directory is reconstructible from (manifest, code
version) and tampering is detectable.
"""

from __future__ import annotations

import hashlib
import json
import os

from . import __version__

MANIFEST_NAME = "manifest.json"
CONFIG_COPY_NAME = "config.json"


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _inventory(run_dir: str) -> list[dict]:
    entries = []
    for root, _, files in os.walk(run_dir):
        for name in sorted(files):
            if name in (MANIFEST_NAME,):
                continue
            path = os.path.join(root, name)
            rel = os.path.relpath(path, run_dir)
            entries.append({"path": rel.replace(os.sep, "/"),
                            "sha256": sha256_file(path),
                            "bytes": os.path.getsize(path)})
    entries.sort(key=lambda e: e["path"])
    return entries


def write_manifest(run_dir: str, seeds: dict, started: str, finished: str,
                   extra: dict | None = None) -> dict:
    """Hash the stored config copy and every artifact, then write atomically."""
    config_path = os.path.join(run_dir, CONFIG_COPY_NAME)
    manifest = {
        "code_version": __version__,
        "config_sha256": sha256_file(config_path),
        "seeds": seeds,
        "started": started,
        "finished": finished,
        "artifacts": _inventory(run_dir),
    }
    manifest.update(extra or {})
    tmp = os.path.join(run_dir, MANIFEST_NAME + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, os.path.join(run_dir, MANIFEST_NAME))
    return manifest


def load_manifest(run_dir: str) -> dict:
    with open(os.path.join(run_dir, MANIFEST_NAME)) as fh:
        return json.load(fh)


def validate_manifest(run_dir: str) -> list[str]:
    """Return a list of problems; empty means the directory checks out."""
    problems = []
    try:
        manifest = load_manifest(run_dir)
    except FileNotFoundError:
        return ["manifest.json missing"]
    config_path = os.path.join(run_dir, CONFIG_COPY_NAME)
    if not os.path.exists(config_path):
        problems.append("config.json missing")
    elif sha256_file(config_path) != manifest.get("config_sha256"):
        problems.append("config.json does not match the recorded hash")
    for entry in manifest.get("artifacts", []):
        path = os.path.join(run_dir, entry["path"])
        if not os.path.exists(path):
            problems.append(f"missing artifact: {entry['path']}")
        elif sha256_file(path) != entry["sha256"]:
            problems.append(f"artifact changed: {entry['path']}")
    return problems
