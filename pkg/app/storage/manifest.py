from pathlib import Path
from typing import Iterable, Union
import orjson
from pydantic import ValidationError
from app.schemas.data_schemas import Manifest, ManifestRecord
from app.utils.errors import DataError


# Function to read a dataset manifest
def load_manifest(path: Union[str, Path]) -> Manifest:
    """
    Reads a manifest: a JSON array of records whose paths are relative to the manifest file.

    - **Parameters**:
        - `path`: The manifest.json file.

    - **Returns**:
        - The validated records and the directory they resolve against.

    - **Raises**:
        - DataError: If the file is not a JSON array of valid records.
    """
    path = Path(path)
    try:
        raw = orjson.loads(path.read_bytes())
    except orjson.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise DataError(f"{path}: a manifest is a JSON array of records")
    records = []
    for index, item in enumerate(raw):
        try:
            records.append(ManifestRecord.model_validate(item))
        except ValidationError as exc:
            raise DataError(f"{path}: record {index}: {exc}") from exc
    return Manifest(records=records, root=path.parent.resolve())


# Function to write a dataset manifest
def save_manifest(path: Union[str, Path], records: Iterable[ManifestRecord]) -> None:
    payload = [record.model_dump(mode="json", exclude_none=True) for record in records]
    Path(path).write_bytes(orjson.dumps(payload, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS) + b"\n")
