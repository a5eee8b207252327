import csv
import hashlib
import io
import json
import os
import subprocess
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import ncedfpy
from ncedfpy.common import ConfigError

OUTPUT_DIR_ENV = "NCEDFPY_OUTPUT_DIR"
MANIFEST_SUFFIX = ".manifest.json"


def resolve_output_path(path: str) -> str:
    """
    Returns the path where an output file has to be written. Relative paths are
    re-rooted under the directory named by the NCEDFPY_OUTPUT_DIR environment
    variable, when it is set; absolute paths are always honored as given.
    """
    if os.path.isabs(path) or OUTPUT_DIR_ENV not in os.environ:
        return path
    return os.path.join(os.environ[OUTPUT_DIR_ENV], path)


def write_text_atomic(path: str, text: str) -> None:
    """Write text to path through a temporary sibling file and os.replace."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(
        prefix=".%s." % os.path.basename(path), dir=directory
    )
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def dumps(obj: Any) -> str:
    """
    Serializes obj as single-line JSON with the default ", " and ": " separators.
    Floats use the shortest repr that reads back to the identical double, so
    files round-trip bit-exactly.
    """
    return json.dumps(obj, separators=(", ", ": "), allow_nan=False)


def write_json_atomic(path: str, obj: Any) -> None:
    write_text_atomic(path, json.dumps(obj, indent=2, allow_nan=False) + "\n")


def read_json(path: str) -> Any:
    try:
        with open(path, mode="r") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError("Invalid JSON in '%s': %s" % (path, e)) from None


def write_jsonl(path: str, header: Dict[str, Any], rows: Iterable[Any]) -> int:
    """Writes a header line followed by one JSON object per row. Returns the row count."""
    buffer = io.StringIO()
    buffer.write(dumps(header) + "\n")
    count = 0
    for row in rows:
        buffer.write(dumps(row) + "\n")
        count += 1
    write_text_atomic(path, buffer.getvalue())
    return count


def read_jsonl(path: str) -> Tuple[Dict[str, Any], Iterator[Dict[str, Any]]]:
    """
    Returns the header object and a lazy iterator over the remaining lines. The
    file is only held open while the iterator runs: it is opened on the first
    row and closed once the rows are exhausted or the iterator is closed.
    """
    with open(path, mode="r") as f:
        first = f.readline()
    if not first:
        raise ConfigError("Empty JSON-lines file: '%s'" % path)
    try:
        header = json.loads(first)
    except json.JSONDecodeError as e:
        raise ConfigError("Invalid header line in '%s': %s" % (path, e)) from None

    def rows() -> Iterator[Dict[str, Any]]:
        with open(path, mode="r") as f:
            f.readline()
            for lineno, line in enumerate(f, start=2):
                if not line.strip():
                    continue
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as e:
                    raise ConfigError(
                        "Invalid line %d in '%s': %s" % (lineno, path, e)
                    ) from None

    return header, rows()


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    write_text_atomic(path, buffer.getvalue())


def read_csv(path: str) -> List[Dict[str, str]]:
    with open(path, mode="r", newline="") as f:
        return list(csv.DictReader(f))


def checksum(path: str) -> str:
    hash = hashlib.sha256()
    with open(path, "rb") as f:
        while True:
            data = f.read(1024 * 1024)
            if not data:
                break
            hash.update(data)
    return hash.hexdigest()


def git_describe() -> str:
    """Best-effort `git describe` of the working tree the command runs from."""
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
    except OSError:
        return "unknown"
    if result.returncode != 0:
        return "unknown"
    return result.stdout.decode("utf-8").strip() or "unknown"


def package_version() -> str:
    return getattr(ncedfpy, "__version__", "unknown")


@dataclass
class RunManifest:
    """Everything needed to re-run a command and get the same outputs."""

    command: str
    config: Dict[str, Any]
    seeds: Dict[str, int]
    argv: List[str] = field(default_factory=lambda: list(sys.argv))
    version: str = field(default_factory=package_version)
    git_describe: str = field(default_factory=git_describe)
    started: str = field(default_factory=lambda: datetime.now().isoformat())
    finished: Optional[str] = None
    outputs: Dict[str, str] = field(default_factory=dict)

    def finish(self, outputs: Dict[str, str]) -> None:
        self.outputs = dict(outputs)
        self.finished = datetime.now().isoformat()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def manifest_path(output_path: str) -> str:
    return output_path + MANIFEST_SUFFIX


def write_manifest(manifest: RunManifest, output_path: str) -> str:
    path = manifest_path(output_path)
    write_json_atomic(path, manifest.to_dict())
    return path
