"""
输出目录管理
写出帧、CSV 与 JSON 报告，列出并清理上一次运行遗留的帧
"""
import os
import json
import math
import logging
from typing import Any, List

import numpy as np

from frame_io import ImageBuffer, write_png

logger = logging.getLogger(__name__)


def json_safe(value: Any) -> Any:
    """非有限浮点数（如 TTC 的 +∞）写为 null，numpy 标量转为 Python 数值"""
    if isinstance(value, dict):
        return {str(k): json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


class OutputStore:
    """输出目录管理器"""

    def __init__(self, output_dir: str):
        self.output_dir = os.path.abspath(output_dir)

    def test_writable(self) -> bool:
        """创建输出目录并确认可写"""
        try:
            os.makedirs(self.output_dir, exist_ok=True)
            probe = os.path.join(self.output_dir, '.write_probe')
            with open(probe, 'w', encoding='utf-8') as f:
                f.write('ok')
            os.remove(probe)
            return True
        except OSError as e:
            logger.error(f"输出目录不可写: {self.output_dir}, 错误: {str(e)}")
            return False

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def write_frame(self, name: str, img: ImageBuffer) -> str:
        return write_png(self.path(name), img)

    def write_json(self, name: str, data: Any) -> str:
        """键排序、缩进 2、末尾换行，保证重复运行字节一致"""
        path = self.path(name)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(json_safe(data), f, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False)
            f.write('\n')
        logger.info(f"已写出: {path}")
        return path

    def list_outputs(self, prefix: str = '', suffix: str = '') -> List[str]:
        """列出输出目录中指定前缀和后缀的文件"""
        if not os.path.isdir(self.output_dir):
            return []
        names = sorted(n for n in os.listdir(self.output_dir)
                       if n.startswith(prefix) and n.endswith(suffix))
        return [self.path(n) for n in names]

    def delete_stale(self, prefix: str, suffix: str = '.png') -> int:
        """删除上一次运行遗留的同类输出"""
        deleted = 0
        for path in self.list_outputs(prefix, suffix):
            try:
                os.remove(path)
                deleted += 1
            except OSError as e:
                logger.error(f"删除文件失败 {path}: {str(e)}")
        if deleted:
            logger.info(f"清理旧输出: 删除了 {deleted} 个 {prefix}*{suffix} 文件")
        return deleted
