"""
合成测试场景
生成眼动相机帧、车载相机帧、帧索引、检测/真值框、RTK 数据与配置文件，
以及用于轨迹融合验证的左转弧线场景。所有随机量使用固定种子
"""
import os
import csv
import json
import math
import logging
from dataclasses import dataclass
from typing import Dict, Any, List, Tuple

import cv2
import numpy as np

from frame_io import write_png
from gazemap import ScreenGeometry, MARKER_COLOR
from trackfuse import Trajectory, RTK_CSV_HEADER

logger = logging.getLogger(__name__)

BASE_UTC_MS = 1620436346002
FRAME_PERIOD_MS = 100

PUPIL_RADIUS = 9
# 左右眼瞳孔相对注视点的水平偏移
EYE_SEPARATION_PX = 2

# 车辆速度（m/s）与初始间距（m），间距每帧缩短 GAP_STEP_M
EGO_VY = 10.0
OBJ_VY = 5.0
START_GAP_M = 40.0
GAP_STEP_M = 3.0

# TTC 落在 (1.03, 2.0] 时注视点偏向车尾
REAR_GAZE_OFFSET_PX = -18

# 标定使 1 m 对应 1 px：(1/20) · (540-480)·480/1440 = 1
FIXTURE_CALIBRATION = {
    's_x1': 0.0, 's_x2': 1.0, 'p_x1': 0.0, 'p_x2': 20.0, 'ref_x': 540.0,
    's_y1': 0.0, 's_y2': 1.0, 'p_y1': 0.0, 'p_y2': 20.0, 'ref_y': 70.0,
}

CONFLICT_CLASS = 'car'


@dataclass(frozen=True)
class FixtureFrame:
    frame_id: int
    utc_ms: int
    box: Tuple[float, float, float, float]
    gaze_screen: Tuple[int, int]
    gap_m: float


def disc_image(shape: Tuple[int, int], center: Tuple[int, int], radius: int,
               foreground: int = 40, background: int = 200) -> np.ndarray:
    """浅色背景上的实心暗圆（瞳孔）"""
    img = np.full(shape, background, dtype=np.uint8)
    cv2.circle(img, (int(center[0]), int(center[1])), int(radius), int(foreground), thickness=-1)
    return img


def plan_frames(frames: int = 10, geom: ScreenGeometry = ScreenGeometry()) -> List[FixtureFrame]:
    """冲突车辆向右行驶并逐渐接近，注视点跟随车辆"""
    plan = []
    for i in range(frames):
        cx, cy = 150.0 + 12.0 * i, 150.0 + 2.0 * i
        gap = START_GAP_M - GAP_STEP_M * i
        ttc = gap / (EGO_VY + OBJ_VY)
        offset = REAR_GAZE_OFFSET_PX if 1.03 < ttc <= 2.0 else 0
        gx = int(round((cx + offset) / geom.scale_x + geom.x_offset))
        gy = int(round(cy / geom.scale_y + geom.y_offset))
        plan.append(FixtureFrame(
            frame_id=i,
            utc_ms=BASE_UTC_MS + FRAME_PERIOD_MS * i,
            box=(cx - 32.0, cy - 20.0, 64.0, 40.0),
            gaze_screen=(gx, gy),
            gap_m=gap,
        ))
    return plan


def _detections_for(frame: FixtureFrame, rng: np.random.Generator) -> Tuple[List[Dict], List[Dict]]:
    """每帧三类目标的检测与真值，检测框带噪声，第 3 帧多一个低置信度误检"""
    x, y, w, h = frame.box
    walker = (400.0 - 2.0 * frame.frame_id, 180.0, 16.0, 40.0)
    truck = (20.0, 110.0, 90.0, 60.0)

    truth = [
        {'frame': frame.frame_id, 'class': CONFLICT_CLASS, 'x': x, 'y': y, 'w': w, 'h': h},
        {'frame': frame.frame_id, 'class': 'pedestrian', 'x': walker[0], 'y': walker[1], 'w': walker[2], 'h': walker[3]},
        {'frame': frame.frame_id, 'class': 'truck', 'x': truck[0], 'y': truck[1], 'w': truck[2], 'h': truck[3]},
    ]

    dets = []
    for item, conf in zip(truth, (0.9, 0.8, 0.7)):
        jitter = rng.normal(0.0, 1.5, size=2)
        dets.append({**item,
                     'x': round(float(item['x'] + jitter[0]), 3),
                     'y': round(float(item['y'] + jitter[1]), 3),
                     'conf': conf})
    if frame.frame_id == 9:
        dets = [d for d in dets if d['class'] != 'truck']
    if frame.frame_id == 3:
        dets.append({'frame': 3, 'class': 'pedestrian', 'x': 300.0, 'y': 40.0, 'w': 16.0, 'h': 40.0, 'conf': 0.3})
    return dets, truth


def _camera_frame(truth: List[Dict], dets: List[Dict], geom: ScreenGeometry) -> np.ndarray:
    """道路背景 + 目标色块 + 检测框标注"""
    height, width = int(geom.target_h), int(geom.target_w)
    rows = np.linspace(70, 130, height, dtype=np.float64)[:, None]
    gray = np.repeat(rows, width, axis=1).astype(np.uint8)
    img = np.repeat(gray[:, :, None], 3, axis=2)

    colors = {CONFLICT_CLASS: (150, 70, 40), 'pedestrian': (40, 160, 220), 'truck': (60, 60, 60)}
    for t in truth:
        top_left = (int(round(t['x'])), int(round(t['y'])))
        bottom_right = (int(round(t['x'] + t['w'])), int(round(t['y'] + t['h'])))
        cv2.rectangle(img, top_left, bottom_right, colors[t['class']], thickness=-1)
    for d in dets:
        if d['conf'] < 0.5:
            continue
        top_left = (int(round(d['x'])), int(round(d['y'])))
        bottom_right = (int(round(d['x'] + d['w'])), int(round(d['y'] + d['h'])))
        cv2.rectangle(img, top_left, bottom_right, (0, 255, 0), thickness=1)
    return img


def _scene_frame(camera: np.ndarray, gaze: Tuple[int, int], geom: ScreenGeometry) -> np.ndarray:
    """眼动仪场景帧：相机画面按屏幕几何放大贴入，叠加红色注视标记"""
    scene = np.full((int(geom.source_h), int(geom.source_w), 3), 30, dtype=np.uint8)
    w = int(round(geom.target_w / geom.scale_x))
    h = int(round(geom.target_h / geom.scale_y))
    x0, y0 = int(geom.x_offset), int(geom.y_offset)
    scaled = cv2.resize(camera, (w, h), interpolation=cv2.INTER_NEAREST)
    h = min(h, scene.shape[0] - y0)
    w = min(w, scene.shape[1] - x0)
    scene[y0:y0 + h, x0:x0 + w] = scaled[:h, :w]
    cv2.circle(scene, gaze, int(geom.marker_radius), MARKER_COLOR, thickness=-1)
    return scene


def _write_jsonl(path: str, records: List[Dict[str, Any]]):
    with open(path, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + '\n')


def write_fixture(directory: str, frames: int = 10, seed: int = 7) -> str:
    """
    写出完整的合成场景并返回配置文件路径

    目录结构：eye/ camera/ scene/ frame_index.csv detections.jsonl ground_truth.jsonl rtk.csv config.json
    """
    geom = ScreenGeometry()
    rng = np.random.default_rng(seed)
    for sub in ('eye', 'camera', 'scene'):
        os.makedirs(os.path.join(directory, sub), exist_ok=True)

    index_rows, all_dets, all_truth, rtk_rows = [], [], [], []
    screen_shape = (int(geom.source_h), int(geom.source_w))
    for frame in plan_frames(frames, geom):
        gx, gy = frame.gaze_screen
        write_png(os.path.join(directory, 'eye', f"{frame.utc_ms}_L.png"),
                  disc_image(screen_shape, (gx - EYE_SEPARATION_PX, gy), PUPIL_RADIUS))
        write_png(os.path.join(directory, 'eye', f"{frame.utc_ms}_R.png"),
                  disc_image(screen_shape, (gx + EYE_SEPARATION_PX, gy), PUPIL_RADIUS))

        dets, truth = _detections_for(frame, rng)
        all_dets.extend(dets)
        all_truth.extend(truth)

        camera = _camera_frame(truth, dets, geom)
        camera_rel = os.path.join('camera', f"frame_{frame.frame_id:06d}.png")
        write_png(os.path.join(directory, camera_rel), camera)

        scene_rel = ''
        if frame.frame_id % 2 == 0:
            scene_rel = os.path.join('scene', f"scene_{frame.frame_id:06d}.png")
            write_png(os.path.join(directory, scene_rel), _scene_frame(camera, (gx, gy), geom))

        index_rows.append([frame.frame_id, frame.utc_ms, camera_rel, scene_rel])
        x, y, w, h = frame.box
        rtk_rows.append([frame.utc_ms, f"{x + w / 2:.3f}", f"{y + h / 2:.3f}",
                         f"{EGO_VY:.3f}", f"{OBJ_VY:.3f}", f"{frame.gap_m:.3f}"])

    with open(os.path.join(directory, 'frame_index.csv'), 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['frame_id', 'utc_ms', 'camera_path', 'eye_path'])
        writer.writerows(index_rows)

    with open(os.path.join(directory, 'rtk.csv'), 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(RTK_CSV_HEADER)
        writer.writerows(rtk_rows)

    _write_jsonl(os.path.join(directory, 'detections.jsonl'), all_dets)
    _write_jsonl(os.path.join(directory, 'ground_truth.jsonl'), all_truth)

    config = {
        'paths': {
            'output_dir': 'out',
            'eye_frames_dir': 'eye',
            'frame_index': 'frame_index.csv',
            'detections': 'detections.jsonl',
            'ground_truth': 'ground_truth.jsonl',
            'rtk_csv': 'rtk.csv',
        },
        'hough': {'r_min': 5, 'r_max': 30},
        'calibration': FIXTURE_CALIBRATION,
        'zones': {'class_name': CONFLICT_CLASS},
    }
    config_path = os.path.join(directory, 'config.json')
    with open(config_path, 'w', encoding='utf-8') as f:
        json.dump(config, f, indent=2, sort_keys=True)
        f.write('\n')

    logger.info(f"合成场景已写出: {directory} ({frames} 帧)")
    return config_path


def left_turn_scenario(frames: int = 500, sigma: float = 2.0, seed: int = 42,
                       radius: float = 150.0, period_ms: float = 100.0) -> Dict[str, Trajectory]:
    """
    左转弧线：真值沿四分之一圆弧行驶，注视与检测轨迹分别叠加独立高斯噪声

    Returns:
        {'ground_truth': ..., 'gaze': ..., 'detector': ...}
    """
    rng = np.random.default_rng(seed)
    times = BASE_UTC_MS + period_ms * np.arange(frames)
    theta = np.linspace(0.0, math.pi / 2.0, frames)
    # 图像坐标 y 向下，沿弧线左转
    xs = 240.0 + radius * np.sin(theta)
    ys = 250.0 - radius * (1.0 - np.cos(theta))

    trajectories = {'ground_truth': Trajectory.from_arrays(times, xs, ys, 'ground_truth')}
    for source in ('gaze', 'detector'):
        noise = rng.normal(0.0, sigma, size=(frames, 2))
        trajectories[source] = Trajectory.from_arrays(times, xs + noise[:, 0], ys + noise[:, 1], source)
    return trajectories
