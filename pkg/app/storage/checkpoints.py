"""
Binary checkpoints: one JSON header line, then a little-endian float32 payload of every tensor
in index order.
"""
from pathlib import Path
from typing import Any, NamedTuple, Union
import numpy as np
import orjson
import torch
from pydantic import ValidationError
from app.schemas.data_schemas import CheckpointHeader, TensorIndexEntry
from app.schemas.feature_schemas import FeatureKind
from app.schemas.model_schemas import TrainConfig
from app.services.ar_model import SyncDecoder, init_params
from app.utils.errors import DataError

PAYLOAD_DTYPE = np.dtype("<f4")


class LoadedCheckpoint(NamedTuple):
    header: CheckpointHeader
    params: SyncDecoder


def _header_bytes(header: CheckpointHeader) -> bytes:
    return orjson.dumps(header.model_dump(mode="json"), option=orjson.OPT_SORT_KEYS) + b"\n"


# Function to write a checkpoint
def save_checkpoint(path: Union[str, Path], params: SyncDecoder, train_cfg: TrainConfig,
                    feature_kind: FeatureKind, preprocessing: dict[str, Any]) -> None:
    """
    Writes the parameters in single precision.

    - **Parameters**:
        - `path`: Destination file.
        - `params`: The decoder.
        - `train_cfg`: Recipe the parameters were trained with.
        - `feature_kind`: Feature set the model consumes.
        - `preprocessing`: JSON-ready description of the feature preprocessing.
    """
    index, chunks, offset = [], [], 0
    for name, tensor in params.state_dict().items():
        array = tensor.detach().cpu().to(torch.float32).numpy().astype(PAYLOAD_DTYPE, copy=False)
        index.append(TensorIndexEntry(name=name, shape=list(array.shape), offset_elems=offset))
        chunks.append(np.ascontiguousarray(array).tobytes())
        offset += array.size
    header = CheckpointHeader(
        model_cfg=params.config,
        train_cfg=train_cfg,
        feature_kind=feature_kind,
        tensors=index,
        preprocessing=preprocessing,
    )
    Path(path).write_bytes(_header_bytes(header) + b"".join(chunks))


# Function to read a checkpoint
def load_checkpoint(path: Union[str, Path]) -> LoadedCheckpoint:
    """
    Reads a checkpoint into a float32 decoder (eval mode).

    - **Raises**:
        - DataError: If the header is invalid, the payload length is wrong, or the tensors do not
          fit the configured model.
    """
    path = Path(path)
    blob = path.read_bytes()
    newline = blob.find(b"\n")
    if newline < 0:
        raise DataError(f"{path}: missing checkpoint header")
    try:
        header = CheckpointHeader.model_validate(orjson.loads(blob[:newline]))
    except (orjson.JSONDecodeError, ValidationError) as exc:
        raise DataError(f"{path}: invalid checkpoint header: {exc}") from exc

    payload = blob[newline + 1:]
    expected = header.n_elems * PAYLOAD_DTYPE.itemsize
    if len(payload) != expected:
        raise DataError(f"{path}: payload has {len(payload)} bytes, header describes {expected}")

    state = {}
    for entry in header.tensors:
        count = int(np.prod(entry.shape, dtype=np.int64))
        array = np.frombuffer(payload, dtype=PAYLOAD_DTYPE, count=count,
                              offset=entry.offset_elems * PAYLOAD_DTYPE.itemsize)
        state[entry.name] = torch.from_numpy(array.astype(np.float32).reshape(entry.shape))
    params = init_params(header.model_cfg, seed=0)
    try:
        params.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise DataError(f"{path}: tensors do not match the model configuration: {exc}") from exc
    return LoadedCheckpoint(header, params.eval())
