"""
轨迹融合与风险评估
RTK 真值转像素轨迹，EKF 融合注视轨迹与检测轨迹，计算 TTC、RMSE 与注视区域统计
"""
import csv
import math
import bisect
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Any, List, Optional, Sequence, Tuple

import numpy as np

from gazemap import ScreenGeometry
from deteval import Detection

logger = logging.getLogger(__name__)

SOURCES = ('gaze', 'detector', 'fused', 'ground_truth')

TRAJECTORY_CSV_HEADER = ['utc_ms', 'x_px', 'y_px', 'source']
RTK_CSV_HEADER = ['utc_ms', 'rel_x_m', 'rel_y_m', 'ego_vy_mps', 'obj_vy_mps', 'gap_m']

DEFAULT_TTC_EDGES = (1.03, 2.0)

# 创新协方差条件数上限，超过视为奇异
MAX_INNOVATION_COND = 1e12


class TrajectoryError(ValueError):
    """轨迹数据不满足时间或来源约束"""


class TrajectoryOverlapError(ValueError):
    """两条轨迹没有公共时间戳"""


class InnovationSingularError(ValueError):
    """创新协方差数值奇异"""


class CalibrationError(ValueError):
    """真值标定参数无效"""


@dataclass(frozen=True)
class TrackPoint:
    utc_ms: float
    x: float
    y: float
    source: str


@dataclass
class Trajectory:
    """按时间严格递增、来源唯一的像素轨迹"""
    points: List[TrackPoint]
    source: str

    def __post_init__(self):
        if self.source not in SOURCES:
            raise TrajectoryError(f"未知轨迹来源: {self.source}")
        for p in self.points:
            if p.source != self.source:
                raise TrajectoryError(f"轨迹来源不一致: {p.source} != {self.source}")
            if not (math.isfinite(p.x) and math.isfinite(p.y)):
                raise TrajectoryError(f"轨迹坐标非有限值: t={p.utc_ms}")
        times = self.times()
        if len(times) > 1 and not np.all(np.diff(times) > 0):
            raise TrajectoryError(f"{self.source} 轨迹时间戳必须严格递增")

    @classmethod
    def from_arrays(cls, times: Sequence[float], xs: Sequence[float], ys: Sequence[float],
                    source: str) -> 'Trajectory':
        return cls([TrackPoint(float(t), float(x), float(y), source) for t, x, y in zip(times, xs, ys)],
                   source)

    def __len__(self) -> int:
        return len(self.points)

    def times(self) -> np.ndarray:
        return np.array([p.utc_ms for p in self.points], dtype=np.float64)

    def xy(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p in self.points], dtype=np.float64).reshape(-1, 2)

    def by_time(self) -> Dict[float, TrackPoint]:
        return {p.utc_ms: p for p in self.points}


@dataclass
class EkfModel:
    """
    EKF 模型描述

    f(x, dt) / F(x, dt)：状态转移及其雅可比；h(x) / H(x)：量测函数及其雅可比。
    x0 为 None 时由融合过程用首个量测初始化
    """
    state_dim: int
    f: Callable[[np.ndarray, float], np.ndarray]
    F: Callable[[np.ndarray, float], np.ndarray]
    h: Callable[[np.ndarray], np.ndarray]
    H: Callable[[np.ndarray], np.ndarray]
    Q: np.ndarray
    R: np.ndarray
    P0: np.ndarray
    x0: Optional[np.ndarray] = None


@dataclass
class EkfState:
    x_hat: np.ndarray
    P: np.ndarray
    k: int = 0


@dataclass(frozen=True)
class ConflictState:
    """冲突状态：间距 ΔS（米）与 y 方向速度（米/秒）"""
    delta_s: float
    v1y: float
    v2y: float

    def __post_init__(self):
        if self.delta_s < 0:
            raise ValueError(f"间距 ΔS 不能为负: {self.delta_s}")


@dataclass
class GroundTruthCalibration:
    """
    真值标定：两组参考点的实际坐标（米）与像素坐标，
    ref_x / ref_y 为伸缩项所用的屏幕参考坐标
    """
    s_x1: float = 0.0
    s_x2: float = 1.0
    s_y1: float = 0.0
    s_y2: float = 1.0
    p_x1: float = 0.0
    p_x2: float = 1.0
    p_y1: float = 0.0
    p_y2: float = 1.0
    ref_x: float = 960.0
    ref_y: float = 540.0

    def validate(self) -> 'GroundTruthCalibration':
        if self.p_x2 == self.p_x1:
            raise CalibrationError(f"水平像素基线为零: p_x1 = p_x2 = {self.p_x1}")
        if self.p_y2 == self.p_y1:
            raise CalibrationError(f"竖直像素基线为零: p_y1 = p_y2 = {self.p_y1}")
        return self


@dataclass(frozen=True)
class RtkSample:
    utc_ms: float
    rel_x_m: float
    rel_y_m: float
    ego_vy_mps: float
    obj_vy_mps: float
    gap_m: float


# ---------------------------------------------------------------- EKF

def ekf_init(m: EkfModel, x0: Optional[np.ndarray] = None) -> EkfState:
    start = x0 if x0 is not None else m.x0
    if start is None:
        raise ValueError("EKF 初始状态未给定")
    return EkfState(x_hat=np.asarray(start, dtype=np.float64).copy(),
                    P=np.asarray(m.P0, dtype=np.float64).copy(), k=0)


def _symmetric(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def ekf_predict(s: EkfState, m: EkfModel, dt: float = 1.0) -> EkfState:
    """x⁻ = f(x)，P⁻ = F P Fᵀ + Q，步数不变"""
    F = m.F(s.x_hat, dt)
    x_prior = np.asarray(m.f(s.x_hat, dt), dtype=np.float64)
    P_prior = F @ s.P @ F.T + m.Q
    return EkfState(x_hat=x_prior, P=_symmetric(P_prior), k=s.k)


def ekf_update(s: EkfState, z: Sequence[float], m: EkfModel) -> EkfState:
    """
    ẑ = h(x⁻)，K = P⁻Hᵀ(HP⁻Hᵀ + R)⁻¹，x⁺ = x⁻ + K(z - ẑ)，P⁺ = (I - KH)P⁻

    Raises:
        InnovationSingularError: 创新协方差数值奇异
    """
    H = m.H(s.x_hat)
    z_hat = np.asarray(m.h(s.x_hat), dtype=np.float64)
    S = H @ s.P @ H.T + m.R

    cond = np.linalg.cond(S) if np.all(np.isfinite(S)) else np.inf
    if not np.isfinite(cond) or cond > MAX_INNOVATION_COND:
        raise InnovationSingularError(f"第{s.k + 1}步创新协方差奇异，条件数过大")

    K = np.linalg.solve(S.T, H @ s.P.T).T
    innovation = np.asarray(z, dtype=np.float64) - z_hat
    x_post = s.x_hat + K @ innovation
    P_post = (np.eye(m.state_dim) - K @ H) @ s.P
    return EkfState(x_hat=x_post, P=_symmetric(P_post), k=s.k + 1)


def linear_model(F: np.ndarray, H: np.ndarray, Q: np.ndarray, R: np.ndarray,
                 P0: np.ndarray, x0: Optional[np.ndarray] = None) -> EkfModel:
    """线性模型包装为 EKF 模型（雅可比为常矩阵）"""
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    return EkfModel(
        state_dim=F.shape[0],
        f=lambda x, dt: F @ x,
        F=lambda x, dt: F,
        h=lambda x: H @ x,
        H=lambda x: H,
        Q=np.atleast_2d(np.asarray(Q, dtype=np.float64)),
        R=np.atleast_2d(np.asarray(R, dtype=np.float64)),
        P0=np.atleast_2d(np.asarray(P0, dtype=np.float64)),
        x0=None if x0 is None else np.atleast_1d(np.asarray(x0, dtype=np.float64)),
    )


def cv_transition(dt: float) -> np.ndarray:
    return np.array([
        [1.0, 0.0, dt, 0.0],
        [0.0, 1.0, 0.0, dt],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])


# 注视与检测两路位置量测叠加
STACKED_H = np.array([
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
])


def constant_velocity_model(q_diag: Sequence[float] = (0.01, 0.01, 0.1, 0.1),
                            r_diag: Sequence[float] = (4.0, 4.0, 4.0, 4.0),
                            p0_diag: Sequence[float] = (4.0, 4.0, 100.0, 100.0),
                            x0: Optional[Sequence[float]] = None) -> EkfModel:
    """二维匀速模型，状态 [x, y, vx, vy]，量测 [gaze_x, gaze_y, det_x, det_y]，dt 单位秒"""
    return EkfModel(
        state_dim=4,
        f=lambda x, dt: cv_transition(dt) @ x,
        F=lambda x, dt: cv_transition(dt),
        h=lambda x: STACKED_H @ x,
        H=lambda x: STACKED_H,
        Q=np.diag(np.asarray(q_diag, dtype=np.float64)),
        R=np.diag(np.asarray(r_diag, dtype=np.float64)),
        P0=np.diag(np.asarray(p0_diag, dtype=np.float64)),
        x0=None if x0 is None else np.asarray(x0, dtype=np.float64),
    )


def common_times(a: Trajectory, b: Trajectory) -> List[float]:
    return sorted(set(a.by_time()) & set(b.by_time()))


def fuse_trajectories(gaze: Trajectory, detector: Trajectory, m: EkfModel) -> Trajectory:
    """
    逐公共时间戳 EKF 融合注视轨迹与检测轨迹，输出后验位置

    首个时间戳只做量测更新；之后按时间差（秒）预测再更新
    """
    times = common_times(gaze, detector)
    if not times:
        raise TrajectoryOverlapError("注视轨迹与检测轨迹没有公共时间戳")

    g_at, d_at = gaze.by_time(), detector.by_time()
    first_g, first_d = g_at[times[0]], d_at[times[0]]
    x0 = m.x0
    if x0 is None:
        x0 = np.array([(first_g.x + first_d.x) / 2.0, (first_g.y + first_d.y) / 2.0, 0.0, 0.0])

    state = ekf_init(m, x0)
    fused = []
    previous = None
    for t in times:
        if previous is not None:
            state = ekf_predict(state, m, dt=(t - previous) / 1000.0)
        g, d = g_at[t], d_at[t]
        state = ekf_update(state, [g.x, g.y, d.x, d.y], m)
        fused.append(TrackPoint(t, float(state.x_hat[0]), float(state.x_hat[1]), 'fused'))
        previous = t

    logger.info(f"EKF融合完成: {len(fused)} 个时间戳")
    return Trajectory(fused, 'fused')


def resample_trajectory(traj: Trajectory, times: Sequence[float]) -> Trajectory:
    """线性插值到给定时间，超出轨迹时间范围的时间点丢弃"""
    if len(traj) < 2:
        raise TrajectoryError(f"{traj.source} 轨迹插值至少需要2个点")
    target = np.asarray(times, dtype=np.float64)
    if len(target) > 1 and not np.all(np.diff(target) > 0):
        raise TrajectoryError("插值时间必须严格递增")

    t = traj.times()
    xy = traj.xy()
    keep = target[(target >= t[0]) & (target <= t[-1])]
    return Trajectory.from_arrays(keep, np.interp(keep, t, xy[:, 0]), np.interp(keep, t, xy[:, 1]),
                                  traj.source)


def resample_rtk(rtk: Sequence[RtkSample], times: Sequence[float]) -> List[RtkSample]:
    """RTK 各字段线性插值到给定时间，不外推"""
    if len(rtk) < 2:
        raise TrajectoryError("RTK 插值至少需要2行")
    t = np.array([r.utc_ms for r in rtk], dtype=np.float64)
    if not np.all(np.diff(t) > 0):
        raise TrajectoryError("RTK 时间戳必须严格递增")
    target = np.asarray(times, dtype=np.float64)
    keep = target[(target >= t[0]) & (target <= t[-1])]

    columns = {name: np.interp(keep, t, [getattr(r, name) for r in rtk])
               for name in RTK_CSV_HEADER[1:]}
    return [RtkSample(float(u), **{name: float(values[i]) for name, values in columns.items()})
            for i, u in enumerate(keep)]


# ---------------------------------------------------------------- 指标

def ttc(c: ConflictState) -> float:
    """TTC = ΔS / (v1y + v2y)，无接近速度时返回 +∞"""
    closing = c.v1y + c.v2y
    if closing <= 0:
        return math.inf
    return c.delta_s / closing


def ttc_series(rtk: Sequence[RtkSample]) -> List[Tuple[float, float]]:
    return [(r.utc_ms, ttc(ConflictState(r.gap_m, r.ego_vy_mps, r.obj_vy_mps))) for r in rtk]


def ground_truth_pixels(rtk: Sequence[RtkSample], cal: GroundTruthCalibration,
                        geom: ScreenGeometry) -> Trajectory:
    """
    RTK 实际位移 → 像素轨迹（乘积形式）

    p_x = (s_x2 - s_x1)/(p_x2 - p_x1) · (ref_x - x_offset)·x1/(x0 - x1) · s_x，y 同理
    """
    cal.validate()
    kx = (cal.s_x2 - cal.s_x1) / (cal.p_x2 - cal.p_x1) * (cal.ref_x - geom.x_offset) * geom.scale_x
    ky = (cal.s_y2 - cal.s_y1) / (cal.p_y2 - cal.p_y1) * (cal.ref_y - geom.y_offset) * geom.scale_y
    return Trajectory.from_arrays(
        [r.utc_ms for r in rtk],
        [kx * r.rel_x_m for r in rtk],
        [ky * r.rel_y_m for r in rtk],
        'ground_truth',
    )


def rmse(pred: Trajectory, truth: Trajectory) -> float:
    """公共时间戳上的像素欧氏距离均方根"""
    times = common_times(pred, truth)
    if not times:
        raise TrajectoryOverlapError(f"{pred.source} 与 {truth.source} 没有公共时间戳")
    p_at, t_at = pred.by_time(), truth.by_time()
    sq = [(p_at[t].x - t_at[t].x) ** 2 + (p_at[t].y - t_at[t].y) ** 2 for t in times]
    return math.sqrt(sum(sq) / len(sq))


def detector_trajectory(detections: Sequence[Detection], frame_times: Dict[int, float],
                        class_name: Optional[str] = None) -> Trajectory:
    """每帧取置信度最高的检测框，锚框中心构成检测轨迹"""
    best = conflict_boxes(detections, frame_times, class_name)
    times = sorted(best)
    return Trajectory.from_arrays(times,
                                  [best[t].center[0] for t in times],
                                  [best[t].center[1] for t in times],
                                  'detector')


def conflict_boxes(detections: Sequence[Detection], frame_times: Dict[int, float],
                   class_name: Optional[str] = None) -> Dict[float, Detection]:
    """帧时间 → 该帧置信度最高的检测框（冲突目标）"""
    best: Dict[float, Detection] = {}
    for det in detections:
        if class_name is not None and det.class_name != class_name:
            continue
        if det.frame_id not in frame_times:
            logger.debug(f"检测帧 {det.frame_id} 不在帧索引中，已忽略")
            continue
        t = frame_times[det.frame_id]
        if t not in best or det.confidence > best[t].confidence:
            best[t] = det
    return best


def ttc_bin_labels(edges: Sequence[float]) -> List[str]:
    labels = [f"<={edges[0]:g}s"]
    labels += [f"({lo:g},{hi:g}]s" for lo, hi in zip(edges[:-1], edges[1:])]
    labels.append(f">{edges[-1]:g}s")
    return labels


def ttc_bin(value: float, edges: Sequence[float]) -> int:
    """区间左开右闭：value ≤ edges[0] 为第 0 档"""
    return bisect.bisect_left(list(edges), value)


def _mean_pair(values: List[Tuple[float, float]]) -> List[float]:
    arr = np.asarray(values, dtype=np.float64)
    return [float(arr[:, 0].mean()), float(arr[:, 1].mean())]


def gaze_zone_stats(gaze: Trajectory, boxes: Dict[float, Detection],
                    ttc_values: Sequence[Tuple[float, float]],
                    edges: Sequence[float] = DEFAULT_TTC_EDGES,
                    truth: Optional[Trajectory] = None) -> Dict[str, Any]:
    """
    按 TTC 分档统计注视点与冲突目标检测框的关系

    每档：注视点落在框内的比例、注视点相对框中心的平均偏移（像素及按框宽高归一化）、
    注视点与锚框中心的平均位置、锚框中心相对真值轨迹的平均偏移（未给真值或无公共时刻时为 None）；
    没有样本的档位列入 absent
    """
    ttc_at = dict(ttc_values)
    truth_at = {p.utc_ms: (p.x, p.y) for p in truth.points} if truth is not None else {}
    labels = ttc_bin_labels(edges)
    buckets: Dict[int, List[Dict[str, Any]]] = {i: [] for i in range(len(labels))}

    for p in gaze.points:
        if p.utc_ms not in boxes or p.utc_ms not in ttc_at:
            continue
        box = boxes[p.utc_ms]
        cx, cy = box.center
        buckets[ttc_bin(ttc_at[p.utc_ms], edges)].append({
            'inside': box.x <= p.x <= box.x + box.w and box.y <= p.y <= box.y + box.h,
            'offset': (p.x - cx, p.y - cy),
            'norm': ((p.x - cx) / box.w, (p.y - cy) / box.h),
            'gaze': (p.x, p.y),
            'anchor': (cx, cy),
            'anchor_offset': ((cx - truth_at[p.utc_ms][0], cy - truth_at[p.utc_ms][1])
                              if p.utc_ms in truth_at else None),
        })

    report: Dict[str, Any] = {'edges': [float(e) for e in edges], 'bins': {}, 'absent': []}
    matched = 0
    for i, label in enumerate(labels):
        rows = buckets[i]
        if not rows:
            report['absent'].append(label)
            continue
        matched += len(rows)
        anchor_offsets = [r['anchor_offset'] for r in rows if r['anchor_offset'] is not None]
        report['bins'][label] = {
            'count': len(rows),
            'inside_fraction': sum(r['inside'] for r in rows) / len(rows),
            'gaze_offset_px': _mean_pair([r['offset'] for r in rows]),
            'gaze_offset_norm': _mean_pair([r['norm'] for r in rows]),
            'gaze_mean_px': _mean_pair([r['gaze'] for r in rows]),
            'anchor_mean_px': _mean_pair([r['anchor'] for r in rows]),
            'anchor_offset_px': _mean_pair(anchor_offsets) if anchor_offsets else None,
        }
    report['matched_points'] = matched
    return report


# ---------------------------------------------------------------- 文件

def read_rtk_csv(path: str) -> List[RtkSample]:
    samples = []
    with open(path, 'r', newline='', encoding='utf-8') as f:
        reader = csv.DictReader(f)
        missing = [c for c in RTK_CSV_HEADER if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"RTK CSV缺少列: {', '.join(missing)}")
        for line_no, row in enumerate(reader, start=2):
            try:
                samples.append(RtkSample(**{k: float(row[k]) for k in RTK_CSV_HEADER}))
            except (TypeError, ValueError) as e:
                raise ValueError(f"RTK CSV第{line_no}行解析失败: {str(e)}")
    return samples


def write_trajectories_csv(path: str, trajectories: Sequence[Trajectory]) -> str:
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(TRAJECTORY_CSV_HEADER)
        for traj in trajectories:
            for p in traj.points:
                writer.writerow([f"{p.utc_ms:.0f}", f"{p.x:.4f}", f"{p.y:.4f}", p.source])
    return path


_PLOT_COLORS = {
    'ground_truth': 'green',
    'gaze': 'tab:blue',
    'detector': 'tab:orange',
    'fused': 'red',
}


def plot_trajectories(path: str, trajectories: Sequence[Trajectory], title: str = 'trajectories') -> str:
    """四条轨迹叠加绘制为 SVG（图像坐标，y 轴向下）"""
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    plt.rcParams['svg.hashsalt'] = 'coopercept'
    plt.rcParams['svg.fonttype'] = 'none'

    fig, ax = plt.subplots(figsize=(8, 5))
    for traj in trajectories:
        if not len(traj):
            continue
        color = _PLOT_COLORS.get(traj.source, 'black')
        xy = traj.xy()
        ax.plot(xy[:, 0], xy[:, 1], color=color, linewidth=1.2, label=traj.source)
    ax.invert_yaxis()
    ax.set_xlabel('x (px)')
    ax.set_ylabel('y (px)')
    ax.set_title(title)
    ax.legend(loc='best')
    fig.savefig(path, format='svg', metadata={'Date': None})
    plt.close(fig)
    logger.info(f"轨迹图已写出: {path}")
    return path
