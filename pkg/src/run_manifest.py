"""
运行清单
记录配置哈希、输入哈希、库版本与各阶段结果，不含任何时间戳，相同输入的两次运行清单一致
"""
import os
import json
import hashlib
import logging
import platform
from typing import Dict, Any, Iterable, Optional

from frame_io import file_sha256

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'


def library_versions() -> Dict[str, str]:
    """核心依赖库版本"""
    import numpy
    import scipy
    import cv2
    import matplotlib

    return {
        'python': platform.python_version(),
        'numpy': numpy.__version__,
        'scipy': scipy.__version__,
        'opencv': cv2.__version__,
        'matplotlib': matplotlib.__version__,
    }


def digest_files(paths: Iterable[str]) -> str:
    """按文件名与内容合并计算的 SHA-256"""
    digest = hashlib.sha256()
    for path in sorted(paths):
        digest.update(os.path.basename(path).encode('utf-8'))
        digest.update(file_sha256(path).encode('ascii'))
    return digest.hexdigest()


class RunManifest:
    """运行记录器"""

    def __init__(self, config_text: str):
        """
        Args:
            config_text: 规范化后的配置 JSON 文本
        """
        self.config_sha256 = hashlib.sha256(config_text.encode('utf-8')).hexdigest()
        self.inputs: Dict[str, str] = {}
        self.stages: Dict[str, Dict[str, Any]] = {}
        self.success_count = 0
        self.error_count = 0

    def record_input(self, name: str, path: Optional[str]):
        """记录单个输入文件或整个目录的哈希"""
        if not path or not os.path.exists(path):
            return
        if os.path.isdir(path):
            names = [os.path.join(path, n) for n in os.listdir(path)]
            self.inputs[name] = digest_files(p for p in names if os.path.isfile(p))
        else:
            self.inputs[name] = file_sha256(path)

    def record_stage(self, stage: str, success: bool = True, **details):
        """记录阶段结果"""
        if success:
            self.success_count += 1
        else:
            self.error_count += 1
        self.stages[stage] = {'success': success, **details}

    def get_status(self) -> Dict[str, Any]:
        return {
            'healthy': self.error_count == 0,
            'success_count': self.success_count,
            'error_count': self.error_count,
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            'config_sha256': self.config_sha256,
            'inputs': self.inputs,
            'versions': library_versions(),
            'stages': self.stages,
            'status': self.get_status(),
        }

    def write(self, output_dir: str) -> str:
        path = os.path.join(output_dir, MANIFEST_NAME)
        os.makedirs(output_dir, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, sort_keys=True, indent=2, ensure_ascii=False)
            f.write('\n')
        logger.info(f"运行清单已写出: {path}")
        return path
