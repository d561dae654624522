"""
运行清单、JSON 输出与运行记录
"""

import hashlib
import json
import logging
import platform
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from django.utils import timezone
from pydantic import BaseModel, Field

from . import __version__

logger = logging.getLogger(__name__)


class RunManifest(BaseModel):
    """每个输出 JSON 内嵌的运行清单，重放同一清单可逐位复现输出（时间戳除外）"""

    command: str
    parameters: Dict[str, Any]
    seeds: Dict[str, int] = Field(default_factory=dict)
    tool_version: str = __version__
    python_version: str = Field(default_factory=platform.python_version)
    started_at: datetime = Field(default_factory=timezone.now)
    finished_at: Optional[datetime] = None
    input_digests: Dict[str, str] = Field(default_factory=dict)

    def finish(self) -> 'RunManifest':
        return self.model_copy(update={'finished_at': timezone.now()})


def file_digest(path: Union[str, Path]) -> str:
    """输入文件的 sha256"""
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for block in iter(lambda: handle.read(1 << 20), b''):
            digest.update(block)
    return digest.hexdigest()


def input_digests(paths: List[Union[str, Path]]) -> Dict[str, str]:
    return {str(path): file_digest(path) for path in paths if path and Path(path).is_file()}


def to_json(manifest: RunManifest, payload: Dict[str, Any]) -> str:
    document = {'manifest': manifest.model_dump(mode='json'), **payload}
    return json.dumps(document, indent=2, ensure_ascii=False, allow_nan=True)


def write_json(path: Union[str, Path], manifest: RunManifest, payload: Dict[str, Any]) -> Path:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json(manifest, payload) + '\n', encoding='utf-8')
    logger.info(f"Wrote {path}")
    return path


def record_run(
    manifest: RunManifest,
    exit_code: int,
    output_path: Optional[Union[str, Path]] = None,
    wall_time: Optional[float] = None,
) -> None:
    """写入 ExperimentRun；数据库不可用（如未迁移）时只记警告"""
    from .models import ExperimentRun

    try:
        ExperimentRun.objects.create(
            command=manifest.command,
            parameters=json.loads(json.dumps(manifest.parameters, default=str)),
            manifest=manifest.model_dump(mode='json'),
            started_at=manifest.started_at,
            finished_at=manifest.finished_at or timezone.now(),
            exit_code=exit_code,
            output_path=str(output_path or ''),
            wall_time=wall_time,
        )
    except Exception as record_error:
        logger.warning(f"Failed to record experiment run: {record_error}")
