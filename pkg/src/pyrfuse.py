"""
金字塔图像融合
LoG 处理注视图像块，高斯/拉普拉斯金字塔将注视层融合进检测标注后的相机帧
"""
import math
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from frame_io import ImageBuffer, validate_image, to_float
from gazemap import CropBox, ScreenGeometry, OffScreenGazeError

logger = logging.getLogger(__name__)

# 5×5 二项式核的一维分量
BINOMIAL_TAPS = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0

# 最小边低于该值时停止下采样
MIN_PYRAMID_SIDE = 8

DEFAULT_LOG_SIGMA = 1.4


class KernelRadiusError(ValueError):
    """LoG 核截断半径过小"""


class PyramidShapeError(ValueError):
    """金字塔层级结构或尺寸不匹配"""


@dataclass
class LoGKernel:
    sigma: float
    radius: int
    weights: np.ndarray


@dataclass
class GaussianPyramid:
    levels: List[np.ndarray]


@dataclass
class LaplacianPyramid:
    """bands[k] 与高斯金字塔第 k 层同尺寸，top 为最粗层残差"""
    bands: List[np.ndarray]
    top: np.ndarray

    @property
    def depth(self) -> int:
        return len(self.bands) + 1

    def shapes(self) -> List[Tuple[int, ...]]:
        return [b.shape for b in self.bands] + [self.top.shape]


@dataclass
class MaskPyramid:
    """掩膜的高斯金字塔，取值 [0,1]"""
    levels: List[np.ndarray] = field(default_factory=list)


def log_value(x: float, y: float, sigma: float) -> float:
    """连续 LoG：-(1/(πσ⁴))·exp(-ρ²/2σ²)·(1 - ρ²/2σ²)"""
    rho = (x * x + y * y) / (2.0 * sigma * sigma)
    return -(1.0 / (math.pi * sigma ** 4)) * math.exp(-rho) * (1.0 - rho)


def log_kernel(sigma: float = DEFAULT_LOG_SIGMA, radius: Optional[int] = None) -> LoGKernel:
    """在整数网格上采样 LoG，再减去均值使权重和为零"""
    if not sigma > 0:
        raise ValueError(f"sigma 必须 > 0: {sigma}")
    min_radius = int(math.ceil(3.0 * sigma))
    if radius is None:
        radius = min_radius
    if radius < min_radius:
        raise KernelRadiusError(f"LoG核半径 {radius} 小于 ⌈3σ⌉={min_radius}，截断会使核产生偏差")

    span = np.arange(-radius, radius + 1, dtype=np.float64)
    xx, yy = np.meshgrid(span, span)
    rho = (xx ** 2 + yy ** 2) / (2.0 * sigma ** 2)
    weights = -(1.0 / (math.pi * sigma ** 4)) * np.exp(-rho) * (1.0 - rho)
    weights -= weights.mean()
    return LoGKernel(sigma=float(sigma), radius=int(radius), weights=weights)


def _per_channel(img: np.ndarray, func) -> np.ndarray:
    if img.ndim == 2:
        return func(img)
    return np.stack([func(img[:, :, c]) for c in range(img.shape[2])], axis=2)


def smooth_patch(patch: ImageBuffer, k: LoGKernel) -> np.ndarray:
    """逐通道卷积 LoG 核，边界 reflect-101"""
    validate_image(patch)
    return _per_channel(to_float(patch),
                        lambda channel: ndimage.convolve(channel, k.weights, mode='mirror'))


def prepare_patch(patch: ImageBuffer, k: LoGKernel) -> np.ndarray:
    """用 LoG 响应增强图像块的轮廓：patch - LoG∗patch，裁剪到 [0,255]"""
    return np.clip(to_float(patch) - smooth_patch(patch, k), 0.0, 255.0)


def _blur(img: np.ndarray) -> np.ndarray:
    out = ndimage.convolve1d(img, BINOMIAL_TAPS, axis=0, mode='mirror')
    return ndimage.convolve1d(out, BINOMIAL_TAPS, axis=1, mode='mirror')


def _downsample(img: np.ndarray) -> np.ndarray:
    return _blur(img)[::2, ::2]


def _upsample(img: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """零插值后 4 倍模糊，输出裁剪到 shape"""
    up = np.zeros(tuple(shape[:2]) + img.shape[2:], dtype=np.float64)
    up[::2, ::2] = img
    return 4.0 * _blur(up)


def build_gaussian_pyramid(img: ImageBuffer) -> GaussianPyramid:
    """反复模糊并隔行隔列抽取（奇数边向上取整），直到最小边 < 8，至少两层"""
    validate_image(img)
    if min(img.shape[:2]) < 2:
        raise PyramidShapeError(f"图像最小边必须 ≥ 2: {img.shape[1]}x{img.shape[0]}")

    levels = [to_float(img)]
    while len(levels) < 2 or min(levels[-1].shape[:2]) >= MIN_PYRAMID_SIDE:
        levels.append(_downsample(levels[-1]))
    return GaussianPyramid(levels=levels)


def build_laplacian_pyramid(img: ImageBuffer) -> LaplacianPyramid:
    """bands[k] = G_k - upsample(G_{k+1})，top 为最粗的高斯层"""
    gaussian = build_gaussian_pyramid(img).levels
    bands = [gaussian[k] - _upsample(gaussian[k + 1], gaussian[k].shape)
             for k in range(len(gaussian) - 1)]
    return LaplacianPyramid(bands=bands, top=gaussian[-1])


def build_mask_pyramid(mask: np.ndarray) -> MaskPyramid:
    values = np.asarray(mask, dtype=np.float64)
    if values.min() < 0 or values.max() > 1:
        raise ValueError("掩膜取值必须在 [0,1] 内")
    return MaskPyramid(levels=build_gaussian_pyramid(values).levels)


def _weight(mask: np.ndarray, layer: np.ndarray) -> np.ndarray:
    return mask[:, :, None] if layer.ndim == 3 and mask.ndim == 2 else mask


def blend_pyramids(LA: LaplacianPyramid, LB: LaplacianPyramid, GM: MaskPyramid) -> LaplacianPyramid:
    """逐层逐像素：LS = GM·LA + (1-GM)·LB"""
    if LA.shapes() != LB.shapes():
        raise PyramidShapeError(f"LA 与 LB 层级结构不一致: {LA.shapes()} vs {LB.shapes()}")
    if len(GM.levels) != LA.depth:
        raise PyramidShapeError(f"掩膜金字塔层数 {len(GM.levels)} 与图像金字塔 {LA.depth} 不一致")
    for mask, shape in zip(GM.levels, LA.shapes()):
        if mask.shape[:2] != shape[:2]:
            raise PyramidShapeError(f"掩膜层尺寸 {mask.shape[:2]} 与图像层 {shape[:2]} 不一致")

    bands = []
    for la, lb, gm in zip(LA.bands, LB.bands, GM.levels):
        w = _weight(gm, la)
        bands.append(w * la + (1.0 - w) * lb)
    w = _weight(GM.levels[-1], LA.top)
    return LaplacianPyramid(bands=bands, top=w * LA.top + (1.0 - w) * LB.top)


def reconstruct(LS: LaplacianPyramid, clamp: bool = True) -> np.ndarray:
    """自粗到细逐层上采样并叠加；仅在最后一步裁剪到 [0,255]"""
    image = LS.top
    for band in reversed(LS.bands):
        image = _upsample(image, band.shape) + band
    return np.clip(image, 0.0, 255.0) if clamp else image


def disc_mask(shape: Tuple[int, int], center: Tuple[float, float], radius: float) -> np.ndarray:
    """以 center 为圆心、radius 为半径的二值圆盘掩膜（注视区域）"""
    rows, cols = np.mgrid[0:shape[0], 0:shape[1]]
    cx, cy = center
    return (((cols - cx) ** 2 + (rows - cy) ** 2) <= radius ** 2).astype(np.float64)


def paste_patch(camera: np.ndarray, patch: np.ndarray, center: Tuple[float, float]) -> np.ndarray:
    """把图像块中心对齐到 center 贴到相机帧副本上，越界部分裁掉"""
    canvas = to_float(camera).copy()
    if canvas.ndim == 3 and patch.ndim == 2:
        patch = np.repeat(patch[:, :, None], canvas.shape[2], axis=2)
    elif canvas.ndim == 2 and patch.ndim == 3:
        patch = patch.mean(axis=2)

    height, width = canvas.shape[:2]
    ph, pw = patch.shape[:2]
    top = int(math.floor(center[1] + 0.5)) - ph // 2
    left = int(math.floor(center[0] + 0.5)) - pw // 2

    r0, r1 = max(top, 0), min(top + ph, height)
    c0, c1 = max(left, 0), min(left + pw, width)
    if r0 < r1 and c0 < c1:
        canvas[r0:r1, c0:c1] = patch[r0 - top:r1 - top, c0 - left:c1 - left]
    return canvas


def blend_layers(camera: ImageBuffer, gaze_layer: ImageBuffer, mask: np.ndarray,
                 literal_step6: bool = False) -> np.ndarray:
    """
    以掩膜金字塔为权重融合相机帧与注视层

    默认掩膜权重赋给注视层；literal_step6 时按原式 GM·LA + (1-GM)·LB，LA 为相机帧
    """
    LA = build_laplacian_pyramid(camera)
    LB = build_laplacian_pyramid(gaze_layer)
    GM = build_mask_pyramid(mask)
    LS = blend_pyramids(LA, LB, GM) if literal_step6 else blend_pyramids(LB, LA, GM)
    return reconstruct(LS)


def fuse_frame(camera: ImageBuffer, patch: ImageBuffer, box: CropBox, geom: ScreenGeometry,
               literal_step6: bool = False) -> np.ndarray:
    """
    把注视图像块融合进相机帧

    图像块放在裁剪框中心，圆盘掩膜半径为 marker_radius，
    掩膜高斯金字塔作为权重融合两者的拉普拉斯金字塔后重建
    """
    validate_image(camera)
    height, width = camera.shape[:2]
    if (width, height) != (int(geom.target_w), int(geom.target_h)):
        raise PyramidShapeError(
            f"相机帧尺寸 {width}x{height} 与配置的目标画面 {int(geom.target_w)}x{int(geom.target_h)} 不一致")
    if box.x_jmax < 0 or box.x_jmin > width or box.y_jmax < 0 or box.y_jmin > height:
        raise OffScreenGazeError(f"裁剪框在画面之外: {box}")

    center = box.center
    gaze_layer = paste_patch(camera, np.asarray(patch), center)
    mask = disc_mask((height, width), center, geom.marker_radius)
    return blend_layers(camera, gaze_layer, mask, literal_step6)


def montage(camera: ImageBuffer, fused: ImageBuffer) -> np.ndarray:
    """相机帧与融合结果左右拼接的调试图"""
    left = to_float(camera)
    right = to_float(fused)
    if left.ndim != right.ndim:
        left = np.repeat(left[:, :, None], 3, axis=2) if left.ndim == 2 else left
        right = np.repeat(right[:, :, None], 3, axis=2) if right.ndim == 2 else right
    return np.hstack([left, right])
