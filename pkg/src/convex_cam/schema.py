from enum import Enum, EnumMeta
from pathlib import Path
from typing import Any, Union

import numpy as np
import orjson
from pydantic import BaseModel as _BaseSchema
from pydantic import BaseSettings as _BaseSettings

__all__ = [
    "BaseSchema",
    "BaseSettings",
    "deserialize_object",
    "serialize_object",
]


def _serializer(obj: Any) -> Any:
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, EnumMeta):
        return None
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, _BaseSchema):
        return obj.dict()
    raise TypeError


def serialize_object(obj: Any, *, indent: bool = False) -> str:
    """
    Encodes json with the optimized ORJSON package

    numpy arrays and dataclasses are serialized natively; floats are written with the shortest
    representation that round-trips exactly.
    """
    option = orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_NON_STR_KEYS
    if indent:
        option |= orjson.OPT_INDENT_2
    return orjson.dumps(obj, default=_serializer, option=option).decode()


def deserialize_object(obj: Union[bytes, bytearray, memoryview, str, dict[str, Any]]) -> Any:
    """
    Decodes to an object with the optimized ORJSON package
    """
    if isinstance(obj, dict):
        return obj
    return orjson.loads(obj)


def _dumps(obj: Any, *, default: Any = None, **_: Any) -> str:
    # pydantic passes its own encoder as ``default``
    return orjson.dumps(obj, default=default or _serializer, option=orjson.OPT_SERIALIZE_NUMPY).decode()


class BaseSchema(_BaseSchema):
    """
    Base schema model for input deserialization and validation, and output serialization.
    """

    class Config:
        arbitrary_types_allowed = True
        use_enum_values = True
        json_loads = deserialize_object
        json_dumps = _dumps
        json_encoders = {
            Enum: lambda enum: enum.value if enum else None,
            EnumMeta: None,
            Path: str,
        }


class BaseSettings(_BaseSettings):
    """Base Settings"""

    class Config:
        """Base Settings Config"""

        json_loads = deserialize_object
        json_dumps = _dumps
        case_sensitive = False
        validate_assignment = True
        use_enum_values = True
        env_file = ".env"
        env_file_encoding = "utf-8"
