"""
瞳孔中心提取
导向滤波平滑 → Canny 边缘 → Hough 圆投票，得到瞳孔中心与面积，两眼取均值得到注视点
"""
import os
import csv
import math
import bisect
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from frame_io import ImageBuffer, require_single_channel, to_float, read_gray, list_frames, parse_eye_name
from gazemap import GazePoint

logger = logging.getLogger(__name__)

GAZE_CSV_HEADER = ['UTC', 'Gaze_X', 'Gaze_Y', 'PupilArea']

# 眼动仪回传周期（秒）为 0.117
EYE_SAMPLE_PERIOD_MS = 117

DEFAULT_CANNY = (50.0, 150.0)
DEFAULT_R_MIN = 5


class ThresholdError(ValueError):
    """Canny 阈值无效"""


class RadiusRangeError(ValueError):
    """Hough 半径范围无效"""


class NoCircleError(ValueError):
    """边缘图中找不到圆"""


class EyeSyncError(ValueError):
    """左右眼采样时间差超过采样周期"""


@dataclass(frozen=True)
class GuidedFilterParams:
    """导向滤波参数：窗口半径 ω 与正则项 ε；median_size > 1 时先做该窗口的中值滤波去除椒盐噪声"""
    window_radius: int = 2
    epsilon: float = 100.0
    median_size: int = 0

    def __post_init__(self):
        if int(self.window_radius) < 1:
            raise ValueError(f"window_radius 必须 ≥ 1: {self.window_radius}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon 必须 > 0: {self.epsilon}")
        if int(self.median_size) < 0:
            raise ValueError(f"median_size 必须 ≥ 0: {self.median_size}")


@dataclass
class EdgeMap:
    """二值边缘图，1 表示边界点"""
    bits: np.ndarray

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))


@dataclass(frozen=True)
class HoughCircle:
    a: int
    b: int
    r: int
    votes: int


@dataclass(frozen=True)
class PupilSample:
    """单眼瞳孔采样，面积为 π·r²（像素²）"""
    utc_ms: int
    x: float
    y: float
    area: float


def _window_mean(values: np.ndarray, size: int, coverage: np.ndarray) -> np.ndarray:
    """窗口均值，窗口裁剪到图像内部"""
    return ndimage.uniform_filter(values, size=size, mode='constant', cval=0.0) / coverage


def guided_filter(img: ImageBuffer, p: GuidedFilterParams) -> np.ndarray:
    """
    以输入自身为引导图的导向滤波

    每个窗口 ω 内：a = Φ²/(Φ²+ε)，b = (1-a)·M；
    输出为覆盖该像素的所有窗口的 a·I + b 的均值
    """
    image = to_float(require_single_channel(img))
    size = 2 * int(p.window_radius) + 1
    coverage = ndimage.uniform_filter(np.ones_like(image), size=size, mode='constant', cval=0.0)

    mean = _window_mean(image, size, coverage)
    variance = np.maximum(_window_mean(image * image, size, coverage) - mean * mean, 0.0)

    a = variance / (variance + p.epsilon)
    b = (1.0 - a) * mean

    return _window_mean(a, size, coverage) * image + _window_mean(b, size, coverage)


# 梯度方向量化后沿梯度方向的两个邻居偏移 (drow, dcol)
_NMS_NEIGHBOURS = {
    0: ((0, 1), (0, -1)),
    45: ((1, 1), (-1, -1)),
    90: ((1, 0), (-1, 0)),
    135: ((1, -1), (-1, 1)),
}


def _quantize_direction(angle: np.ndarray) -> np.ndarray:
    sector = np.zeros(angle.shape, dtype=np.int32)
    sector[(angle >= 22.5) & (angle < 67.5)] = 45
    sector[(angle >= 67.5) & (angle < 112.5)] = 90
    sector[(angle >= 112.5) & (angle < 157.5)] = 135
    return sector


def _non_max_suppression(magnitude: np.ndarray, sector: np.ndarray) -> np.ndarray:
    height, width = magnitude.shape
    padded = np.pad(magnitude, 1, mode='constant')
    keep = np.zeros(magnitude.shape, dtype=bool)

    for direction, ((dr1, dc1), (dr2, dc2)) in _NMS_NEIGHBOURS.items():
        first = padded[1 + dr1:1 + dr1 + height, 1 + dc1:1 + dc1 + width]
        second = padded[1 + dr2:1 + dr2 + height, 1 + dc2:1 + dc2 + width]
        keep |= (sector == direction) & (magnitude >= first) & (magnitude >= second)

    return np.where(keep & (magnitude > 0), magnitude, 0.0)


def canny_edges(img: ImageBuffer, low: float = DEFAULT_CANNY[0], high: float = DEFAULT_CANNY[1]) -> EdgeMap:
    """
    Canny 边缘检测：Sobel 3×3 梯度 → 四方向非极大值抑制 → 滞后阈值连接

    阈值作用于 0–255 刻度图像的梯度幅值
    """
    if not (0 <= low < high):
        raise ThresholdError(f"Canny阈值必须满足 0 ≤ low < high: low={low}, high={high}")

    image = to_float(require_single_channel(img))
    gx = ndimage.sobel(image, axis=1, mode='nearest')
    gy = ndimage.sobel(image, axis=0, mode='nearest')
    magnitude = np.hypot(gx, gy)
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0

    thin = _non_max_suppression(magnitude, _quantize_direction(angle))

    strong = thin >= high
    candidate = thin >= low
    labels, count = ndimage.label(candidate, structure=np.ones((3, 3), dtype=bool))
    if count == 0:
        return EdgeMap(bits=np.zeros(image.shape, dtype=np.uint8))

    linked = np.unique(labels[strong])
    linked = linked[linked > 0]
    bits = np.isin(labels, linked).astype(np.uint8)
    logger.debug(f"Canny: 强边缘 {int(strong.sum())}, 连接后边缘点 {int(bits.sum())}")
    return EdgeMap(bits=bits)


def _ring_offsets(r: int) -> Tuple[np.ndarray, np.ndarray]:
    """半径四舍五入等于 r 的整数偏移 (dx, dy)"""
    span = np.arange(-r - 1, r + 2)
    dx, dy = np.meshgrid(span, span)
    ring = np.floor(np.hypot(dx, dy) + 0.5) == r
    return dx[ring], dy[ring]


def hough_circle(edges: EdgeMap, r_min: int = DEFAULT_R_MIN, r_max: Optional[int] = None) -> HoughCircle:
    """
    Hough 圆变换：每个边界点对所有经过它的 (a, b, r) 投票，返回票数最多的圆

    同票时取最小 r，再按行优先（先 b 后 a）取第一个
    """
    height, width = edges.height, edges.width
    limit = min(height, width) // 2
    if r_max is None:
        r_max = limit
    if not (1 <= r_min <= r_max <= limit):
        raise RadiusRangeError(f"半径范围必须满足 1 ≤ r_min ≤ r_max ≤ {limit}: [{r_min}, {r_max}]")

    ys, xs = np.nonzero(edges.bits)
    if len(xs) == 0:
        raise NoCircleError("边缘图为空，找不到圆")

    best: Optional[HoughCircle] = None
    for r in range(int(r_min), int(r_max) + 1):
        dx, dy = _ring_offsets(r)
        a = xs[:, None] - dx[None, :]
        b = ys[:, None] - dy[None, :]
        valid = (a >= 0) & (a < width) & (b >= 0) & (b < height)
        if not valid.any():
            continue

        votes = np.bincount((b[valid] * width + a[valid]).ravel(), minlength=height * width)
        index = int(np.argmax(votes))
        if best is None or votes[index] > best.votes:
            best = HoughCircle(a=index % width, b=index // width, r=r, votes=int(votes[index]))

    if best is None:
        raise NoCircleError("没有有效的圆参数")

    logger.debug(f"Hough圆: 中心=({best.a}, {best.b}), r={best.r}, 票数={best.votes}")
    return best


def detect_pupil(img: ImageBuffer,
                 p: GuidedFilterParams = GuidedFilterParams(),
                 canny: Tuple[float, float] = DEFAULT_CANNY,
                 r_range: Optional[Tuple[int, Optional[int]]] = None,
                 utc_ms: int = 0) -> PupilSample:
    """（中值滤波 →）导向滤波 → Canny → Hough，面积取 π·r²"""
    if p.median_size > 1:
        img = ndimage.median_filter(require_single_channel(img), size=int(p.median_size), mode='nearest')
    smoothed = guided_filter(img, p)
    edges = canny_edges(smoothed, canny[0], canny[1])
    r_min, r_max = r_range if r_range is not None else (DEFAULT_R_MIN, None)
    circle = hough_circle(edges, r_min, r_max)
    return PupilSample(utc_ms=int(utc_ms), x=float(circle.a), y=float(circle.b),
                       area=math.pi * circle.r ** 2)


def merge_eyes(left: PupilSample, right: PupilSample, max_gap_ms: float = EYE_SAMPLE_PERIOD_MS) -> GazePoint:
    """两眼瞳孔中心取均值得到注视点"""
    gap = abs(left.utc_ms - right.utc_ms)
    if gap > max_gap_ms:
        raise EyeSyncError(f"左右眼时间差 {gap}ms 超过采样周期 {max_gap_ms}ms")
    return GazePoint(
        utc_ms=(left.utc_ms + right.utc_ms) / 2.0,
        x_i=(left.x + right.x) / 2.0,
        y_i=(left.y + right.y) / 2.0,
        area=(left.area + right.area) / 2.0,
    )


def single_eye(sample: PupilSample) -> GazePoint:
    """单目帧直接作为注视点"""
    return GazePoint(utc_ms=sample.utc_ms, x_i=sample.x, y_i=sample.y, area=sample.area)


def group_eye_frames(directory: str,
                     tolerance_ms: float = EYE_SAMPLE_PERIOD_MS / 2.0) -> List[List[Tuple[int, str]]]:
    """
    按文件名把眼动相机帧分组

    <utc_ms>_L / <utc_ms>_R 按时间戳配对：时间差最小者优先，时间差不超过 tolerance_ms；
    <utc_ms> 与无法配对的单侧帧按单目处理，不符合命名规则的文件跳过

    Returns:
        每组为 [(utc_ms, path), ...]，双目组为 [左, 右]，按组内最早时间排序
    """
    lefts, rights, groups = [], [], []
    for path in list_frames(directory):
        parsed = parse_eye_name(path)
        if parsed is None:
            logger.warning(f"跳过无法识别的眼动帧文件名: {os.path.basename(path)}")
            continue
        utc_ms, side = parsed
        if side == 'L':
            lefts.append((utc_ms, path))
        elif side == 'R':
            rights.append((utc_ms, path))
        else:
            groups.append([(utc_ms, path)])

    lefts.sort()
    rights.sort()
    right_times = [utc for utc, _ in rights]
    candidates = []
    for i, (utc, _) in enumerate(lefts):
        lo = bisect.bisect_left(right_times, utc - tolerance_ms)
        hi = bisect.bisect_right(right_times, utc + tolerance_ms)
        candidates.extend((abs(utc - right_times[j]), i, j) for j in range(lo, hi))
    candidates.sort()
    left_used, right_used = set(), set()
    for _, i, j in candidates:
        if i in left_used or j in right_used:
            continue
        left_used.add(i)
        right_used.add(j)
        groups.append([lefts[i], rights[j]])

    unmatched = [item for i, item in enumerate(lefts) if i not in left_used]
    unmatched += [item for j, item in enumerate(rights) if j not in right_used]
    if unmatched:
        logger.warning(f"{len(unmatched)} 个眼动帧没有同时刻的另一侧帧，按单目处理")
    groups.extend([item] for item in unmatched)
    groups.sort(key=lambda group: (min(utc for utc, _ in group), [path for _, path in group]))
    return groups


def process_eye_group(group: Sequence[Tuple[int, str]], p: GuidedFilterParams,
                      canny: Tuple[float, float], r_range: Tuple[int, Optional[int]]) -> GazePoint:
    """处理一组眼动帧（单目或双目），返回注视点"""
    samples = [detect_pupil(read_gray(path), p, canny, r_range, utc_ms=utc) for utc, path in group]
    if len(samples) == 2:
        return merge_eyes(samples[0], samples[1])
    return single_eye(samples[0])


def write_gaze_csv(path: str, points: Sequence[GazePoint]) -> str:
    """按 UTC,Gaze_X,Gaze_Y,PupilArea 列顺序写出注视 CSV"""
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(GAZE_CSV_HEADER)
        for g in points:
            writer.writerow([f"{g.utc_ms:.0f}", f"{g.x_i:.3f}", f"{g.y_i:.3f}", f"{g.area:.3f}"])
    logger.info(f"注视CSV已写出: {path} ({len(points)} 行)")
    return path


def read_gaze_csv(path: str) -> List[GazePoint]:
    """读取注视 CSV"""
    points = []
    with open(path, 'r', newline='', encoding='utf-8') as f:
        reader = csv.DictReader(f)
        missing = [c for c in GAZE_CSV_HEADER if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"注视CSV缺少列: {', '.join(missing)}")
        for line_no, row in enumerate(reader, start=2):
            try:
                points.append(GazePoint(
                    utc_ms=float(row['UTC']),
                    x_i=float(row['Gaze_X']),
                    y_i=float(row['Gaze_Y']),
                    area=float(row['PupilArea']),
                ))
            except (TypeError, ValueError) as e:
                raise ValueError(f"注视CSV第{line_no}行解析失败: {str(e)}")
    return points
