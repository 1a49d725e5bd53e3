"""
Base model for versioned documents
Unknown fields are dropped with a warning so newer documents still load
"""

import logging
from typing import Any

from pydantic import BaseModel, model_validator

logger = logging.getLogger(__name__)


class TolerantModel(BaseModel):
    """BaseModel that ignores unknown keys and logs each one."""

    @model_validator(mode='before')
    @classmethod
    def _drop_unknown_fields(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        known = set(cls.model_fields)
        unknown = [key for key in data if key not in known]
        if not unknown:
            return data
        for key in unknown:
            logger.warning(f"Ignoring unknown field '{key}' in {cls.__name__}")
        return {key: value for key, value in data.items() if key in known}
