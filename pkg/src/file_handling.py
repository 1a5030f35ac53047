import hashlib
import json
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd

from .errors import FormatError
from .optim import OptimState
from .tensor_nn import LayerSpec, Network

CHECKPOINT_FORMAT = "qaug-checkpoint/1"
PROVENANCE_PREFIX = "# "

PathLike = Union[str, Path]
Optimizers = Union[None, OptimState, Dict[str, OptimState]]


# =============================================================================
# OUTPUT FOLDERS
# =============================================================================

def create_output_folder(base: Optional[PathLike] = None, prefix: str = "qaug_run") -> Path:
    """Use `base` when given, otherwise a fresh timestamped folder."""
    if base is not None:
        output_dir = Path(base)
    else:
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        output_dir = Path(f"{prefix}_{timestamp}")
    output_dir.mkdir(parents=True, exist_ok=True)
    return output_dir


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def dumps(payload: Any) -> str:
    # json writes floats with repr, which round-trips exactly
    return json.dumps(payload, indent=2, sort_keys=True, default=_jsonable, allow_nan=True)


def write_json(path: PathLike, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(payload) + "\n", encoding="utf-8")
    return path


def read_json(path: PathLike) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_csv(path: PathLike, frame: pd.DataFrame, provenance: Optional[Dict[str, Any]] = None) -> Path:
    """`provenance` goes on a leading `# {json}` line; read back with read_csv."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        if provenance is not None:
            f.write(PROVENANCE_PREFIX + json.dumps(provenance, sort_keys=True, default=_jsonable) + "\n")
        frame.to_csv(f, index=False, float_format="%.17g")
    return path


def read_csv(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def read_csv_provenance(path: PathLike) -> Optional[Dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
    if not first.startswith(PROVENANCE_PREFIX):
        return None
    return json.loads(first[len(PROVENANCE_PREFIX):])


def write_output_files(output_dir: PathLike, json_files: Dict[str, Any], csv_files: Dict[str, pd.DataFrame],
                       provenance: Optional[Dict[str, Any]] = None) -> List[str]:
    output_dir = Path(output_dir)
    output_files = []
    for name, payload in json_files.items():
        output_files.append(str(write_json(output_dir / name, payload)))
    for name, frame in csv_files.items():
        output_files.append(str(write_csv(output_dir / name, frame, provenance)))
    return output_files


# =============================================================================
# HASHES
# =============================================================================

def file_sha256(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def content_hash(payload: Any) -> str:
    """Stable sha256 of any JSON-serializable payload (key order does not matter)."""
    return hashlib.sha256(dumps(payload).encode("utf-8")).hexdigest()


def input_hashes(paths: Iterable[Optional[PathLike]]) -> Dict[str, str]:
    return {str(p): file_sha256(p) for p in paths if p is not None}


# =============================================================================
# CHECKPOINTS
# =============================================================================

def _flatten_weights(weights: List[Dict[str, np.ndarray]]) -> List[Dict[str, Any]]:
    return [{k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()} for k, v in group.items()}
            for group in weights]


def _unflatten_weights(groups: List[Dict[str, Any]]) -> List[Dict[str, np.ndarray]]:
    return [{k: np.asarray(e["data"], dtype=float).reshape(e["shape"]) for k, e in group.items()}
            for group in groups]


def network_to_dict(net: Network) -> Dict[str, Any]:
    return {"spec": [s.to_dict() for s in net.specs], "weights": _flatten_weights(net.weights)}


def network_from_dict(data: Dict[str, Any]) -> Network:
    return Network([LayerSpec(**s) for s in data["spec"]], _unflatten_weights(data["weights"]))


def array_to_dict(values: np.ndarray) -> Dict[str, Any]:
    return {"shape": list(values.shape), "data": values.reshape(-1).tolist()}


def array_from_dict(data: Dict[str, Any]) -> np.ndarray:
    return np.asarray(data["data"], dtype=float).reshape(data["shape"])


def _optimizers_to_dict(optimizer: Optimizers) -> Optional[Dict[str, Any]]:
    if optimizer is None:
        return None
    if isinstance(optimizer, OptimState):
        return optimizer.to_dict()
    return {name: state.to_dict() for name, state in optimizer.items()}


def _optimizers_from_dict(data: Optional[Dict[str, Any]]) -> Optimizers:
    if not data:
        return None
    if "kind" in data:
        return OptimState.from_dict(data)
    return {name: OptimState.from_dict(state) for name, state in data.items()}


def save_checkpoint(path: PathLike, networks: Dict[str, Network], *, extra: Optional[Dict[str, Any]] = None,
                    optimizer: Optimizers = None, seed: Optional[int] = None, step: int = 0) -> Path:
    """
    Write one JSON document: spec and flat weights per network, optimizer
    state, rng seed and step, plus any model-specific `extra` fields.
    `optimizer` is one OptimState or a mapping of them by name.
    """
    payload = {
        "format": CHECKPOINT_FORMAT,
        "networks": {name: network_to_dict(net) for name, net in networks.items()},
        "optimizer": _optimizers_to_dict(optimizer),
        "seed": seed,
        "step": step,
        "extra": extra or {},
    }
    return write_json(path, payload)


def load_checkpoint(path: PathLike) -> Dict[str, Any]:
    """Inverse of save_checkpoint; networks and optimizer come back as objects."""
    data = read_json(path)
    if data.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path} is not a {CHECKPOINT_FORMAT} document")
    return {
        "networks": {name: network_from_dict(d) for name, d in data["networks"].items()},
        "optimizer": _optimizers_from_dict(data.get("optimizer")),
        "seed": data.get("seed"),
        "step": data.get("step", 0),
        "extra": data.get("extra", {}),
    }
