# Output files: atomic writes, content digests and run manifests
# contributor: smlee

# History
# 2025-02-10 | v1.0 - first commit

# Module import
import os
import json
import hashlib
import tempfile
from typing import Any, Dict, Iterable, Optional
import logging
logger = logging.getLogger('delayadapt')
from delayadapt import __version__

# Main
def atomic_write_text(path:str, text:str):
    """Write text through a temporary file in the same directory, then rename
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def dumps_json(document:Any) -> str:
    """Canonical JSON text: sorted keys, fixed indent, trailing newline
    """
    return json.dumps(document, sort_keys=True, indent=2) + "\n"


def atomic_write_json(path:str, document:Any):
    atomic_write_text(path, dumps_json(document))


def file_digest(path:str) -> str:
    """64-bit blake2b content hash as 16 hex digits
    """
    h = hashlib.blake2b(digest_size=8)
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    """What produced an output: command, resolved flags, seed, input digests

    Args:
        command: cli sub-command
        flags: resolved flag values
        seed: master seed, if the command takes one
        inputs: input file paths to digest
    """

    def __init__(self,
                 command:str,
                 flags:Dict[str, Any],
                 seed:Optional[int]=None,
                 inputs:Iterable[str]=()):
        self.command = command
        self.flags = {k: v for k, v in flags.items() if k not in ("func", "jobs", "verbose")}
        self.seed = seed
        self.inputs = {p: file_digest(p) for p in sorted(set(inputs))}
        self.version = __version__

    def to_dict(self) -> Dict[str, Any]:
        return {"command": self.command,
                "flags": self.flags,
                "seed": self.seed,
                "input_digests": self.inputs,
                "artifact_version": self.version}

    def write_for(self, output_path:str):
        """Write ``<output_path>.manifest.json`` (or ``manifest.json`` inside a directory)
        """
        if os.path.isdir(output_path):
            target = os.path.join(output_path, "manifest.json")
        else:
            target = f"{output_path}.manifest.json"
        atomic_write_json(target, self.to_dict())
        logger.debug(f"manifest written to {target}")
        return target
