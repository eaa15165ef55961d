"""
注视点坐标映射
将眼动仪屏幕上的注视点映射到车载相机画面，并生成融合用的裁剪框与图像块
"""
import logging
from dataclasses import dataclass, asdict
from typing import Dict, Any, List, Sequence, Tuple

import cv2
import numpy as np

from frame_io import ImageBuffer, validate_image

logger = logging.getLogger(__name__)

# 眼动视频中注视标记的颜色（BGR，红色）
MARKER_COLOR = (0, 0, 255)


class GeometryError(ValueError):
    """屏幕几何参数无效"""


class OffScreenGazeError(ValueError):
    """注视点映射后完全落在目标画面之外，该帧跳过融合"""


class GazeSeriesError(ValueError):
    """注视序列不满足插值条件"""


@dataclass(frozen=True)
class ScreenGeometry:
    """眼动仪屏幕与车载相机画面的几何参数"""
    source_w: float = 1920
    source_h: float = 1080
    target_w: float = 480
    target_h: float = 270
    x_offset: float = 480
    y_offset: float = 10
    marker_radius: int = 35

    def __post_init__(self):
        for key, value in asdict(self).items():
            if value <= 0:
                raise GeometryError(f"几何参数必须为正数: {key}={value}")
        if self.source_w == self.target_w:
            raise GeometryError(f"source_w 与 target_w 不能相等: {self.source_w}")
        if self.source_h == self.target_h:
            raise GeometryError(f"source_h 与 target_h 不能相等: {self.source_h}")

    @property
    def crop_side(self) -> int:
        return 2 * int(self.marker_radius)

    @property
    def scale_x(self) -> float:
        return self.target_w / (self.source_w - self.target_w)

    @property
    def scale_y(self) -> float:
        return self.target_h / (self.source_h - self.target_h)

    @property
    def half_width_x(self) -> float:
        return self.marker_radius * self.target_w / (2 * self.source_w)

    @property
    def half_width_y(self) -> float:
        return self.marker_radius * self.target_h / (2 * self.source_h)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class GazePoint:
    """屏幕坐标系下的注视点；area 为两眼瞳孔面积的均值"""
    utc_ms: float
    x_i: float
    y_i: float
    area: float = 0.0


@dataclass(frozen=True)
class CropBox:
    """目标画面坐标系下的裁剪框"""
    x_jmin: float
    x_jmax: float
    y_jmin: float
    y_jmax: float

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x_jmin + self.x_jmax) / 2.0, (self.y_jmin + self.y_jmax) / 2.0


def map_gaze(g: GazePoint, geom: ScreenGeometry) -> Tuple[Tuple[float, float], CropBox]:
    """
    按坐标伸缩公式把注视点映射到车载画面

    x_j = (x_i - x_offset)·x1/(x0 - x1) ∓ 35·x1/(2·x0)，y 方向同理

    Returns:
        (框中心, 裁剪框)

    Raises:
        OffScreenGazeError: 注视点不在源屏幕内，或映射框完全在目标画面之外
    """
    if not (0 <= g.x_i <= geom.source_w and 0 <= g.y_i <= geom.source_h):
        raise OffScreenGazeError(f"注视点不在眼动屏幕内: ({g.x_i:.3f}, {g.y_i:.3f})")

    cx = (g.x_i - geom.x_offset) * geom.scale_x
    cy = (g.y_i - geom.y_offset) * geom.scale_y
    box = CropBox(
        x_jmin=cx - geom.half_width_x,
        x_jmax=cx + geom.half_width_x,
        y_jmin=cy - geom.half_width_y,
        y_jmax=cy + geom.half_width_y,
    )

    if (box.x_jmax < 0 or box.x_jmin > geom.target_w or
            box.y_jmax < 0 or box.y_jmin > geom.target_h):
        raise OffScreenGazeError(
            f"映射框在车载画面之外: x[{box.x_jmin:.3f}, {box.x_jmax:.3f}] "
            f"y[{box.y_jmin:.3f}, {box.y_jmax:.3f}]"
        )

    return box.center, box


def _strictly_increasing(values: Sequence[float]) -> bool:
    return bool(np.all(np.diff(np.asarray(values, dtype=np.float64)) > 0))


def resample_gaze(series: Sequence[GazePoint], frame_times: Sequence[float]) -> List[GazePoint]:
    """
    将眼动采样（约 0.117s 周期）线性插值到相机帧时间

    落在注视序列时间范围之外的帧直接丢弃，不做外推
    """
    if len(series) < 2:
        raise GazeSeriesError(f"插值至少需要2个注视采样，实际: {len(series)}")

    times = [g.utc_ms for g in series]
    if not _strictly_increasing(times):
        raise GazeSeriesError("注视采样时间必须严格递增")
    if not _strictly_increasing(frame_times):
        raise GazeSeriesError("帧时间必须严格递增")

    t = np.asarray(times, dtype=np.float64)
    xs = np.array([g.x_i for g in series], dtype=np.float64)
    ys = np.array([g.y_i for g in series], dtype=np.float64)
    areas = np.array([g.area for g in series], dtype=np.float64)

    ft = np.asarray(frame_times, dtype=np.float64)
    keep = ft[(ft >= t[0]) & (ft <= t[-1])]
    dropped = len(ft) - len(keep)
    if dropped:
        logger.debug(f"丢弃 {dropped} 个超出注视时间范围的帧")

    return [
        GazePoint(utc_ms=float(ts), x_i=float(x), y_i=float(y), area=float(a))
        for ts, x, y, a in zip(keep, np.interp(keep, t, xs), np.interp(keep, t, ys),
                               np.interp(keep, t, areas))
    ]


def crop_patch(eye_frame: ImageBuffer, g: GazePoint, geom: ScreenGeometry) -> ImageBuffer:
    """以注视点为中心裁剪 crop_side × crop_side 图像块，越界部分按边缘像素复制"""
    validate_image(eye_frame)
    side = geom.crop_side
    half = side // 2
    height, width = eye_frame.shape[:2]

    cx = int(np.floor(g.x_i + 0.5))
    cy = int(np.floor(g.y_i + 0.5))
    rows = np.clip(np.arange(cy - half, cy - half + side), 0, height - 1)
    cols = np.clip(np.arange(cx - half, cx - half + side), 0, width - 1)
    return eye_frame[np.ix_(rows, cols)].copy()


def render_marker_patch(base_patch: ImageBuffer, geom: ScreenGeometry) -> ImageBuffer:
    """在图像块上绘制实心红色注视标记（无眼动场景帧时使用）"""
    patch = base_patch.copy()
    if patch.ndim == 2:
        patch = np.repeat(patch[:, :, None], 3, axis=2)
    half = geom.crop_side // 2
    cv2.circle(patch, (half, half), int(geom.marker_radius), MARKER_COLOR, thickness=-1)
    return patch
