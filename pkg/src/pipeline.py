"""
流水线阶段
pupil → fuse → track → eval，每个阶段读取配置中的输入，写出帧、CSV、JSON 报告与 SVG 图
"""
import os
import logging
from typing import Dict, Any, List, Optional

import numpy as np

from config_loader import PipelineConfig, FrameIndex, FrameRecord, read_frame_index, config_json
from deteval import EmptyScoresError, evaluate, read_detections, read_ground_truth
from frame_io import read_color
from frame_pool import FramePool, successes, failures
from gazemap import GazePoint, GazeSeriesError, OffScreenGazeError, map_gaze, resample_gaze, crop_patch, render_marker_patch
from output_store import OutputStore
from pupilcore import group_eye_frames, process_eye_group, read_gaze_csv, write_gaze_csv
from pyrfuse import LoGKernel, PyramidShapeError, log_kernel, prepare_patch, fuse_frame, montage
from run_manifest import RunManifest
from trackfuse import (
    Trajectory, TrackPoint, TrajectoryOverlapError, constant_velocity_model, fuse_trajectories,
    detector_trajectory, conflict_boxes, ground_truth_pixels, rmse, ttc_series, gaze_zone_stats,
    resample_rtk, read_rtk_csv, write_trajectories_csv, plot_trajectories,
)

logger = logging.getLogger(__name__)

GAZE_CSV_NAME = 'gaze.csv'
TRAJECTORIES_CSV_NAME = 'trajectories.csv'
METRICS_NAME = 'metrics.json'
PLOT_NAME = 'trajectories.svg'
EVAL_NAME = 'eval.json'

STAGE_ORDER = ('pupil', 'fuse', 'track', 'eval')


class StageError(ValueError):
    """阶段失败，退出码 1"""
    exit_code = 1


class EmptyInputError(StageError):
    """没有可处理的输入，退出码 2"""
    exit_code = 2


class CooperceptPipeline:
    """流水线主类"""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.store = OutputStore(cfg.paths.output_dir)
        self.manifest = RunManifest(config_json(cfg))
        self.gaze_csv: Optional[str] = None
        self._index: Optional[FrameIndex] = None

    # ------------------------------------------------------------ 输入

    def _require(self, key: str) -> str:
        """取配置中的输入路径，缺失或不存在时报错并指明键名"""
        path = getattr(self.cfg.paths, key)
        if not path:
            raise StageError(f"配置缺少输入路径: paths.{key}")
        if not os.path.exists(path):
            raise StageError(f"输入不存在: paths.{key} = {path}")
        self.manifest.record_input(key, path)
        return path

    def _frame_index(self) -> FrameIndex:
        if self._index is None:
            index = read_frame_index(self._require('frame_index'))
            if not len(index):
                raise EmptyInputError("帧索引为空")
            camera_dirs = sorted({os.path.dirname(r.camera_path) for r in index.records})
            for i, directory in enumerate(camera_dirs):
                self.manifest.record_input(f"camera_frames_{i}", directory)
            self._index = index
        return self._index

    def _gaze_csv_path(self) -> str:
        """本次运行生成的注视 CSV 优先，其次为配置中的 paths.gaze_csv，最后为输出目录中的 gaze.csv"""
        if self.gaze_csv:
            return self.gaze_csv
        if self.cfg.paths.gaze_csv:
            return self._require('gaze_csv')
        path = self.store.path(GAZE_CSV_NAME)
        if not os.path.exists(path):
            raise StageError(f"找不到注视CSV: 请先运行 pupil 阶段或配置 paths.gaze_csv ({path})")
        return path

    def _gaze_on_frames(self, index: FrameIndex) -> List[GazePoint]:
        points = read_gaze_csv(self._gaze_csv_path())
        try:
            return resample_gaze(points, index.times())
        except GazeSeriesError as e:
            raise StageError(f"注视序列无法插值到帧时间: {str(e)}")

    # ------------------------------------------------------------ 阶段

    def run_pupil(self) -> str:
        """处理全部眼动帧，写出 UTC,Gaze_X,Gaze_Y,PupilArea 格式的注视 CSV"""
        cfg = self.cfg
        eye_dir = self._require('eye_frames_dir')
        groups = group_eye_frames(eye_dir)
        if not groups:
            raise EmptyInputError(f"眼动帧目录中没有可处理的帧: {eye_dir}")

        canny = (cfg.canny.low, cfg.canny.high)
        r_range = (cfg.hough.r_min, cfg.hough.r_max)
        pool = FramePool(cfg.runtime.jobs, label='瞳孔检测')
        outcomes = pool.map(lambda group: process_eye_group(group, cfg.guided_filter, canny, r_range),
                            groups, describe=lambda group: os.path.basename(group[0][1]))

        points = sorted(successes(outcomes), key=lambda g: g.utc_ms)
        if not points:
            raise EmptyInputError(f"{len(groups)} 组眼动帧均未检测到瞳孔")

        if not self.store.test_writable():
            raise StageError(f"输出目录不可写: paths.output_dir = {self.store.output_dir}")
        self.gaze_csv = write_gaze_csv(self.store.path(GAZE_CSV_NAME), points)
        self.manifest.record_stage('pupil', True, groups=len(groups), succeeded=len(points),
                                   skipped=len(groups) - len(points))
        return self.gaze_csv

    def _gaze_patch(self, record: FrameRecord, g: GazePoint, camera: np.ndarray,
                    center, kernel: LoGKernel) -> np.ndarray:
        """有眼动场景帧时从场景帧裁剪并做 LoG 增强，否则在相机帧上绘制注视标记"""
        geom = self.cfg.geometry
        if record.eye_path:
            patch = crop_patch(read_color(record.eye_path), g, geom)
            return prepare_patch(patch, kernel) if self.cfg.log.enhance_patch else patch
        base = crop_patch(camera, GazePoint(g.utc_ms, center[0], center[1]), geom)
        return render_marker_patch(base, geom)

    def _fuse_one(self, record: FrameRecord, g: Optional[GazePoint], kernel: LoGKernel) -> str:
        cfg, geom = self.cfg, self.cfg.geometry
        camera = read_color(record.camera_path)
        height, width = camera.shape[:2]
        if (width, height) != (int(geom.target_w), int(geom.target_h)):
            raise PyramidShapeError(
                f"相机帧 {os.path.basename(record.camera_path)} 尺寸 {width}x{height} "
                f"与 geometry.target_w/target_h {int(geom.target_w)}x{int(geom.target_h)} 不一致")

        name = f"fused_{record.frame_id:06d}.png"
        if g is None:
            logger.warning(f"帧 {record.frame_id} 没有同时刻的注视采样，原样复制")
            self.store.write_frame(name, camera)
            return 'copied'
        try:
            center, box = map_gaze(g, geom)
        except OffScreenGazeError as e:
            logger.warning(f"帧 {record.frame_id} 注视点在画面之外，原样复制: {str(e)}")
            self.store.write_frame(name, camera)
            return 'copied'

        patch = self._gaze_patch(record, g, camera, center, kernel)
        fused = fuse_frame(camera, patch, box, geom, cfg.runtime.literal_step6)
        self.store.write_frame(name, fused)
        if cfg.runtime.montage:
            self.store.write_frame(f"montage_{record.frame_id:06d}.png", montage(camera, fused))
        return 'fused'

    def run_fuse(self) -> List[str]:
        """每个相机帧写出一张 fused_%06d.png，没有注视或注视在画面外的帧原样复制"""
        cfg = self.cfg
        index = self._frame_index()
        gaze_at = {g.utc_ms: g for g in self._gaze_on_frames(index)}
        kernel = log_kernel(cfg.log.sigma, cfg.log.radius)

        if not self.store.test_writable():
            raise StageError(f"输出目录不可写: paths.output_dir = {self.store.output_dir}")
        self.store.delete_stale('fused_')
        self.store.delete_stale('montage_')

        pool = FramePool(cfg.runtime.jobs, label='图像融合')
        outcomes = pool.map(lambda r: self._fuse_one(r, gaze_at.get(r.utc_ms), kernel),
                            index.records, describe=lambda r: f"帧 {r.frame_id}")

        failed = failures(outcomes)
        if failed:
            mismatch = [o for o in failed if isinstance(o.error, PyramidShapeError)]
            first = (mismatch or failed)[0]
            raise StageError(f"融合阶段 {len(failed)} 帧失败，帧 {first.item.frame_id}: {str(first.error)}")

        results = successes(outcomes)
        fused, copied = results.count('fused'), results.count('copied')
        logger.info(f"融合完成: 融合 {fused} 帧, 原样复制 {copied} 帧")
        self.manifest.record_stage('fuse', True, frames=len(results), fused=fused, copied=copied)
        return self.store.list_outputs('fused_', '.png')

    def _gaze_trajectory(self, index: FrameIndex) -> Trajectory:
        """注视点插值到帧时间并映射到车载画面，画面外的点跳过"""
        points = []
        for g in self._gaze_on_frames(index):
            try:
                (cx, cy), _ = map_gaze(g, self.cfg.geometry)
            except OffScreenGazeError as e:
                logger.warning(f"t={g.utc_ms:.0f} 注视点不在画面内，不计入轨迹: {str(e)}")
                continue
            points.append(TrackPoint(g.utc_ms, cx, cy, 'gaze'))
        return Trajectory(points, 'gaze')

    def run_track(self) -> Dict[str, Any]:
        """EKF 融合注视与检测轨迹，计算各来源相对真值的 RMSE、TTC 序列与注视区域统计"""
        cfg = self.cfg
        rtk_path = self._require('rtk_csv')
        det_path = self._require('detections')
        index = self._frame_index()
        frame_times = index.time_of()

        gaze = self._gaze_trajectory(index)
        detections = read_detections(det_path)
        detector = detector_trajectory(detections, frame_times, cfg.zones.class_name)

        model = constant_velocity_model(cfg.ekf.q_diag, cfg.ekf.r_diag, cfg.ekf.p0_diag)
        try:
            fused = fuse_trajectories(gaze, detector, model)
        except TrajectoryOverlapError as e:
            raise StageError(f"时间戳无法对齐: 注视 {len(gaze)} 点, 检测 {len(detector)} 点; {str(e)}")

        # RTK 采样时刻与相机帧不一定相同，先插值到帧时间
        frame_times_ms = index.times()
        rtk = resample_rtk(read_rtk_csv(rtk_path), frame_times_ms)
        if not rtk:
            raise StageError(f"RTK 时间范围与相机帧时间 [{frame_times_ms[0]:.0f}, {frame_times_ms[-1]:.0f}] "
                             f"不重叠: {rtk_path}")
        if len(rtk) < len(index):
            logger.warning(f"RTK 只覆盖 {len(rtk)}/{len(index)} 个相机帧")
        truth = ground_truth_pixels(rtk, cfg.calibration, cfg.geometry)
        errors = {}
        for traj in (gaze, detector, fused):
            try:
                errors[traj.source] = rmse(traj, truth)
            except TrajectoryOverlapError as e:
                raise StageError(f"时间戳无法对齐: RTK 与 {traj.source} 轨迹没有公共时间戳; {str(e)}")
        for source, value in errors.items():
            logger.info(f"RMSE[{source}] = {value:.4f} px")

        series = ttc_series(rtk)
        zones = gaze_zone_stats(gaze, conflict_boxes(detections, frame_times, cfg.zones.class_name),
                                series, cfg.zones.ttc_edges, truth=truth)

        if not self.store.test_writable():
            raise StageError(f"输出目录不可写: paths.output_dir = {self.store.output_dir}")
        trajectories = [truth, gaze, detector, fused]
        write_trajectories_csv(self.store.path(TRAJECTORIES_CSV_NAME), trajectories)
        metrics = {
            'rmse_px': errors,
            'points': {t.source: len(t) for t in trajectories},
            'ttc': [{'utc_ms': t, 'ttc_s': v} for t, v in series],
            'zones': zones,
        }
        self.store.write_json(METRICS_NAME, metrics)
        plot_trajectories(self.store.path(PLOT_NAME), trajectories, title='ground truth vs fused trajectory')

        self.manifest.record_stage('track', True, points=metrics['points'])
        return metrics

    def run_eval(self) -> Dict[str, Any]:
        """按类别计算 AP、mAP 与 P/R/F1"""
        cfg = self.cfg
        detections = read_detections(self._require('detections'))
        truth = read_ground_truth(self._require('ground_truth'))
        try:
            report = evaluate(detections, truth, cfg.eval.iou_thresh, cfg.eval.conf_thresh)
        except EmptyScoresError as e:
            raise StageError(str(e))

        if not self.store.test_writable():
            raise StageError(f"输出目录不可写: paths.output_dir = {self.store.output_dir}")
        data = report.to_dict()
        self.store.write_json(EVAL_NAME, data)
        self.manifest.record_stage('eval', True, classes=len(report.ap))
        return data

    # ------------------------------------------------------------ 调度

    def run(self, stage: str):
        """运行单个阶段或 all；失败的阶段记入清单后以 StageError 抛出"""
        names = STAGE_ORDER if stage == 'all' else (stage,)
        runners = {
            'pupil': self.run_pupil,
            'fuse': self.run_fuse,
            'track': self.run_track,
            'eval': self.run_eval,
        }
        for name in names:
            logger.info(f"开始执行阶段: {name}")
            try:
                runners[name]()
            except StageError as e:
                self.manifest.record_stage(name, False, error=str(e))
                raise
            except (ValueError, OSError) as e:
                self.manifest.record_stage(name, False, error=str(e))
                raise StageError(f"{name} 阶段失败: {str(e)}") from e
            logger.info(f"阶段完成: {name}")

    def write_manifest(self) -> str:
        return self.manifest.write(self.store.output_dir)
