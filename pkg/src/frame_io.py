"""
图像帧读写工具
ImageBuffer 以 numpy 数组表示：(H, W) 单通道或 (H, W, 3) 三通道，
整数图像取值 [0,255]，浮点图像需显式转换。
"""
import os
import re
import hashlib
import logging
from typing import List, Optional, Tuple

import cv2
import numpy as np

logger = logging.getLogger(__name__)

ImageBuffer = np.ndarray

FRAME_SUFFIXES = ('.png', '.pgm')


class ChannelError(ValueError):
    """图像通道数不符合要求"""


def validate_image(img: ImageBuffer) -> ImageBuffer:
    """校验图像维度：宽高 ≥ 1，通道数为 1 或 3"""
    if not isinstance(img, np.ndarray):
        raise ChannelError(f"图像必须是numpy数组，实际为: {type(img).__name__}")
    if img.ndim == 3 and img.shape[2] not in (1, 3):
        raise ChannelError(f"不支持的通道数: {img.shape[2]}")
    if img.ndim not in (2, 3):
        raise ChannelError(f"不支持的图像维度: {img.ndim}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ChannelError(f"图像尺寸无效: {img.shape[1]}x{img.shape[0]}")
    return img


def require_single_channel(img: ImageBuffer) -> np.ndarray:
    """返回二维单通道视图，多通道输入抛出 ChannelError"""
    validate_image(img)
    if img.ndim == 3:
        if img.shape[2] != 1:
            raise ChannelError(f"需要单通道图像，实际通道数: {img.shape[2]}")
        return img[:, :, 0]
    return img


def to_float(img: ImageBuffer) -> np.ndarray:
    """整数图像 → float64，数值保持 [0,255] 刻度"""
    return np.asarray(img, dtype=np.float64)


def to_uint8(img: ImageBuffer) -> np.ndarray:
    """浮点图像 → uint8，四舍五入并裁剪到 [0,255]"""
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def read_gray(path: str) -> np.ndarray:
    """读取 8 位灰度 PNG/PGM"""
    img = cv2.imread(path, cv2.IMREAD_GRAYSCALE)
    if img is None:
        raise ValueError(f"无法读取图像: {path}")
    return img


def read_color(path: str) -> np.ndarray:
    """读取 BGR 三通道图像"""
    img = cv2.imread(path, cv2.IMREAD_COLOR)
    if img is None:
        raise ValueError(f"无法读取图像: {path}")
    return img


def write_png(path: str, img: ImageBuffer) -> str:
    """写出 PNG，浮点图像先转换为 uint8"""
    data = img if img.dtype == np.uint8 else to_uint8(img)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    if not cv2.imwrite(path, data):
        raise ValueError(f"写出图像失败: {path}")
    logger.debug(f"已写出图像: {path} ({data.shape[1]}x{data.shape[0]})")
    return path


def list_frames(directory: str) -> List[str]:
    """按文件名排序列出目录中的 PNG/PGM 帧"""
    if not os.path.isdir(directory):
        return []
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith(FRAME_SUFFIXES))
    return [os.path.join(directory, n) for n in names]


_EYE_NAME = re.compile(r'^(\d+)(?:_([LR]))?$', re.IGNORECASE)


def parse_eye_name(path: str) -> Optional[Tuple[int, Optional[str]]]:
    """
    解析眼动相机帧文件名

    Returns:
        (utc_ms, 'L' | 'R' | None)，文件名不符合 <utc_ms>[_L|_R] 时返回 None
    """
    stem = os.path.splitext(os.path.basename(path))[0]
    match = _EYE_NAME.match(stem)
    if not match:
        return None
    side = match.group(2).upper() if match.group(2) else None
    return int(match.group(1)), side


def file_sha256(path: str) -> str:
    """计算文件的 SHA-256"""
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(8192), b''):
            digest.update(chunk)
    return digest.hexdigest()
