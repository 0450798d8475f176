# -*- coding: utf-8 -*-
"""
实验产物导出工具
功能：CSV/JSON写出、配置文件哈希、实验清单（记录每个产出文件、种子、版本与起止时间）
"""

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]],
              comments: Optional[Sequence[str]] = None) -> Path:
    """
    写出CSV文件

    参数:
        header: 列名
        rows: 数据行
        comments: 可选的文件头注释行（以 "# " 开头写在列名之前）
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for line in comments or []:
            f.write(f"# {line}\n")
        writer = csv.writer(f)
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])
    return path


def _format_cell(value: Any) -> Any:
    if isinstance(value, float):
        return repr(value)
    return value


def read_csv(path: Path) -> List[Dict[str, str]]:
    """读取 write_csv 写出的文件（跳过注释行）"""
    with open(path, "r", encoding="utf-8", newline="") as f:
        lines = [line for line in f if not line.startswith("#")]
    return list(csv.DictReader(lines))


def write_json(path: Path, data: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, ensure_ascii=False, sort_keys=True, default=str)
    return path


def file_sha256(path: Path) -> str:
    """文件内容的SHA-256"""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class ArtifactRecord:
    """单个产出文件记录"""
    path: str
    stage: str
    partial: bool = False


@dataclass
class ExperimentManifest:
    """
    实验清单
    - 所有写出的文件都登记在 artifacts 中
    - 阶段失败时已产出的文件保留并标记为 partial
    """
    experiment_id: str
    config_hashes: Dict[str, str]
    module_versions: Dict[str, str]
    seeds: List[int]
    artifacts: List[ArtifactRecord] = field(default_factory=list)
    stage_order: List[str] = field(default_factory=list)
    started_at: str = ""
    finished_at: str = ""
    status: str = "running"
    failed_stage: Optional[str] = None
    error: Optional[str] = None

    @classmethod
    def start(cls, config_path: Path, module_versions: Dict[str, str], seeds: List[int]) -> "ExperimentManifest":
        config_hash = file_sha256(config_path)
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        return cls(
            experiment_id=f"exp_{timestamp}_{config_hash[:8]}",
            config_hashes={Path(config_path).name: config_hash},
            module_versions=module_versions,
            seeds=list(seeds),
            started_at=datetime.now().isoformat(timespec="seconds"),
        )

    def record(self, path: Path, stage: str) -> Path:
        self.artifacts.append(ArtifactRecord(path=str(path), stage=stage))
        return path

    def mark_failed(self, stage: str, error: BaseException) -> None:
        self.status = "failed"
        self.failed_stage = stage
        self.error = str(error)
        for artifact in self.artifacts:
            artifact.partial = True

    def finish(self) -> None:
        if self.status == "running":
            self.status = "completed"
        self.finished_at = datetime.now().isoformat(timespec="seconds")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def save(self, path: Path) -> Path:
        return write_json(path, self.to_dict())
