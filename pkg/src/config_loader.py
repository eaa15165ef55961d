"""
流水线配置解析器
读取 JSON 配置文件，补全默认值并校验，另负责帧索引文件的解析
"""
import os
import csv
import json
import logging
from dataclasses import dataclass, field, asdict, fields
from typing import Dict, Any, List, Optional, Tuple, Union, get_args, get_origin, get_type_hints

from gazemap import ScreenGeometry
from pupilcore import GuidedFilterParams, DEFAULT_CANNY, DEFAULT_R_MIN
from pyrfuse import DEFAULT_LOG_SIGMA
from trackfuse import GroundTruthCalibration, DEFAULT_TTC_EDGES
from deteval import DEFAULT_IOU_THRESH, DEFAULT_CONF_THRESH

logger = logging.getLogger(__name__)

DEFAULT_JOBS = 4

FRAME_INDEX_HEADER = ['frame_id', 'utc_ms', 'camera_path', 'eye_path']


class ConfigError(ValueError):
    """配置缺少必要键或取值无效"""


class FrameIndexError(ValueError):
    """帧索引文件格式错误"""


@dataclass
class PathsConfig:
    """输入输出路径，均已解析为绝对路径"""
    output_dir: str
    eye_frames_dir: Optional[str] = None
    frame_index: Optional[str] = None
    gaze_csv: Optional[str] = None
    detections: Optional[str] = None
    ground_truth: Optional[str] = None
    rtk_csv: Optional[str] = None


@dataclass
class CannyConfig:
    low: float = DEFAULT_CANNY[0]
    high: float = DEFAULT_CANNY[1]


@dataclass
class HoughConfig:
    r_min: int = DEFAULT_R_MIN
    r_max: Optional[int] = None


@dataclass
class LogConfig:
    sigma: float = DEFAULT_LOG_SIGMA
    radius: Optional[int] = None
    enhance_patch: bool = True


@dataclass
class EkfConfig:
    q_diag: Tuple[float, ...] = (0.01, 0.01, 0.1, 0.1)
    r_diag: Tuple[float, ...] = (4.0, 4.0, 4.0, 4.0)
    p0_diag: Tuple[float, ...] = (4.0, 4.0, 100.0, 100.0)


@dataclass
class EvalConfig:
    iou_thresh: float = DEFAULT_IOU_THRESH
    conf_thresh: float = DEFAULT_CONF_THRESH


@dataclass
class ZonesConfig:
    ttc_edges: Tuple[float, ...] = DEFAULT_TTC_EDGES
    class_name: Optional[str] = None


@dataclass
class RuntimeConfig:
    jobs: int = DEFAULT_JOBS
    literal_step6: bool = False
    montage: bool = False


@dataclass
class PipelineConfig:
    paths: PathsConfig
    geometry: ScreenGeometry = field(default_factory=ScreenGeometry)
    guided_filter: GuidedFilterParams = field(default_factory=GuidedFilterParams)
    canny: CannyConfig = field(default_factory=CannyConfig)
    hough: HoughConfig = field(default_factory=HoughConfig)
    log: LogConfig = field(default_factory=LogConfig)
    ekf: EkfConfig = field(default_factory=EkfConfig)
    calibration: GroundTruthCalibration = field(default_factory=GroundTruthCalibration)
    eval: EvalConfig = field(default_factory=EvalConfig)
    zones: ZonesConfig = field(default_factory=ZonesConfig)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)
    source_path: Optional[str] = field(default=None, compare=False)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data.pop('source_path')
        return data


SECTIONS = {
    'geometry': ScreenGeometry,
    'guided_filter': GuidedFilterParams,
    'canny': CannyConfig,
    'hough': HoughConfig,
    'log': LogConfig,
    'ekf': EkfConfig,
    'calibration': GroundTruthCalibration,
    'eval': EvalConfig,
    'zones': ZonesConfig,
    'runtime': RuntimeConfig,
}


@dataclass(frozen=True)
class FrameRecord:
    frame_id: int
    utc_ms: float
    camera_path: str
    eye_path: Optional[str] = None


@dataclass
class FrameIndex:
    """frame_id → (utc_ms, 相机帧路径, 可选的眼动场景帧路径)"""
    records: List[FrameRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def times(self) -> List[float]:
        return [r.utc_ms for r in self.records]

    def time_of(self) -> Dict[int, float]:
        return {r.frame_id: r.utc_ms for r in self.records}


class PipelineConfigParser:
    """解析 JSON 配置文件为 PipelineConfig"""

    @staticmethod
    def parse_config(text: str, base_dir: str) -> PipelineConfig:
        """
        解析配置文本

        只有 paths.output_dir 是必需的，其余键缺省时取默认值；
        相对路径相对于 base_dir 解析
        """
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"配置JSON格式错误: 第{e.lineno}行 {e.msg}")
        if not isinstance(raw, dict):
            raise ConfigError("配置顶层必须是JSON对象")

        unknown = sorted(set(raw) - set(SECTIONS) - {'paths'})
        if unknown:
            raise ConfigError(f"未知的配置节: {', '.join(unknown)}")
        if 'paths' not in raw:
            raise ConfigError("配置缺少必需的键: paths")

        sections = {name: PipelineConfigParser._parse_section(name, raw.get(name, {}))
                    for name in SECTIONS}
        cfg = PipelineConfig(paths=PipelineConfigParser._parse_paths(raw['paths'], base_dir), **sections)
        PipelineConfigParser.validate_config(cfg)
        return cfg

    @staticmethod
    def _parse_paths(section: Any, base_dir: str) -> PathsConfig:
        if not isinstance(section, dict):
            raise ConfigError("配置节 paths 必须是JSON对象")
        known = {f.name for f in fields(PathsConfig)}
        unknown = sorted(set(section) - known)
        if unknown:
            raise ConfigError(f"paths 中有未知的键: {', '.join(unknown)}")
        if not section.get('output_dir'):
            raise ConfigError("配置缺少必需的键: paths.output_dir")

        resolved = {}
        for key, value in section.items():
            if value is None or value == '':
                resolved[key] = None
                continue
            if not isinstance(value, str):
                raise ConfigError(f"paths.{key} 必须是字符串路径: {value!r}")
            resolved[key] = os.path.normpath(os.path.join(base_dir, os.path.expanduser(value)))
        return PathsConfig(**resolved)

    @staticmethod
    def _parse_section(name: str, section: Any):
        if not isinstance(section, dict):
            raise ConfigError(f"配置节 {name} 必须是JSON对象")
        cls = SECTIONS[name]
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(section) - known)
        if unknown:
            raise ConfigError(f"{name} 中有未知的键: {', '.join(f'{name}.{k}' for k in unknown)}")

        hints = get_type_hints(cls)
        values = {}
        for key, value in section.items():
            if isinstance(value, list):
                value = tuple(value)
            values[key] = PipelineConfigParser._check_type(f"{name}.{key}", value, hints[key])
        try:
            return cls(**values)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"配置节 {name} 取值无效: {str(e)}")

    @staticmethod
    def _check_type(key: str, value: Any, hint: Any) -> Any:
        """按字段注解检查取值类型；整数字段接受整数值的浮点数"""
        if get_origin(hint) is Union:
            if value is None and type(None) in get_args(hint):
                return value
            hint = next(a for a in get_args(hint) if a is not type(None))

        def is_number(v):
            return isinstance(v, (int, float)) and not isinstance(v, bool)

        if hint is bool:
            if not isinstance(value, bool):
                raise ConfigError(f"{key} 必须是布尔值: {value!r}")
        elif hint is int:
            if not is_number(value) or not float(value).is_integer():
                raise ConfigError(f"{key} 必须是整数: {value!r}")
            return int(value)
        elif hint is float:
            if not is_number(value):
                raise ConfigError(f"{key} 必须是数值: {value!r}")
        elif hint is str:
            if not isinstance(value, str):
                raise ConfigError(f"{key} 必须是字符串: {value!r}")
        elif get_origin(hint) is tuple:
            if not isinstance(value, tuple) or not all(is_number(v) for v in value):
                raise ConfigError(f"{key} 必须是数值数组: {value!r}")
        return value

    @staticmethod
    def validate_config(cfg: PipelineConfig) -> PipelineConfig:
        """校验跨字段约束，错误信息指明键名与约束"""
        if not (0 <= cfg.canny.low < cfg.canny.high):
            raise ConfigError(f"canny.low/canny.high 必须满足 0 ≤ low < high: {cfg.canny.low}, {cfg.canny.high}")

        if cfg.hough.r_min < 1:
            raise ConfigError(f"hough.r_min 必须 ≥ 1: {cfg.hough.r_min}")
        if cfg.hough.r_max is not None and cfg.hough.r_max < cfg.hough.r_min:
            raise ConfigError(f"hough.r_max 必须 ≥ hough.r_min: {cfg.hough.r_max} < {cfg.hough.r_min}")

        if not cfg.log.sigma > 0:
            raise ConfigError(f"log.sigma 必须 > 0: {cfg.log.sigma}")

        for key in ('q_diag', 'r_diag', 'p0_diag'):
            diag = getattr(cfg.ekf, key)
            if len(diag) != 4:
                raise ConfigError(f"ekf.{key} 必须有4个元素: {list(diag)}")
            if any(v < 0 for v in diag):
                raise ConfigError(f"ekf.{key} 不能有负数: {list(diag)}")
        if any(v <= 0 for v in cfg.ekf.r_diag):
            raise ConfigError(f"ekf.r_diag 必须全部 > 0: {list(cfg.ekf.r_diag)}")

        for key in ('iou_thresh', 'conf_thresh'):
            value = getattr(cfg.eval, key)
            if not (0.0 <= value <= 1.0):
                raise ConfigError(f"eval.{key} 必须在 [0,1] 内: {value}")

        edges = list(cfg.zones.ttc_edges)
        if not edges:
            raise ConfigError("zones.ttc_edges 不能为空")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ConfigError(f"zones.ttc_edges 必须严格递增: {edges}")

        if cfg.runtime.jobs < 1:
            raise ConfigError(f"runtime.jobs 必须 ≥ 1: {cfg.runtime.jobs}")

        try:
            cfg.calibration.validate()
        except ValueError as e:
            raise ConfigError(f"calibration 无效: {str(e)}")
        return cfg

    @staticmethod
    def get_config_info(cfg: PipelineConfig) -> str:
        """配置摘要，用于日志"""
        g = cfg.geometry
        return (f"{int(g.source_w)}x{int(g.source_h)} -> {int(g.target_w)}x{int(g.target_h)}, "
                f"offset=({g.x_offset:g}, {g.y_offset:g}), radius={g.marker_radius}, "
                f"jobs={cfg.runtime.jobs}, output={cfg.paths.output_dir}")


def load_config(path: str) -> PipelineConfig:
    """读取配置文件"""
    if not os.path.isfile(path):
        raise ConfigError(f"配置文件不存在: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        text = f.read()
    cfg = PipelineConfigParser.parse_config(text, os.path.dirname(os.path.abspath(path)))
    cfg.source_path = os.path.abspath(path)
    logger.info(f"配置加载完成: {PipelineConfigParser.get_config_info(cfg)}")
    return cfg


def config_json(cfg: PipelineConfig) -> str:
    """配置的规范化 JSON 文本（键排序）"""
    return json.dumps(cfg.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + '\n'


def write_config(cfg: PipelineConfig, path: str) -> str:
    """写出配置，路径为绝对路径，load_config 读回后与原配置相等"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(config_json(cfg))
    return path


def read_frame_index(path: str) -> FrameIndex:
    """
    读取帧索引 CSV：frame_id,utc_ms,camera_path,eye_path

    路径相对于索引文件所在目录；按 frame_id 排序后 utc_ms 必须严格递增
    """
    base_dir = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, 'r', newline='', encoding='utf-8') as f:
        reader = csv.DictReader(f)
        missing = [c for c in FRAME_INDEX_HEADER[:3] if c not in (reader.fieldnames or [])]
        if missing:
            raise FrameIndexError(f"帧索引缺少列: {', '.join(missing)}")
        for line_no, row in enumerate(reader, start=2):
            try:
                eye = (row.get('eye_path') or '').strip()
                records.append(FrameRecord(
                    frame_id=int(row['frame_id']),
                    utc_ms=float(row['utc_ms']),
                    camera_path=os.path.normpath(os.path.join(base_dir, row['camera_path'].strip())),
                    eye_path=os.path.normpath(os.path.join(base_dir, eye)) if eye else None,
                ))
            except (TypeError, ValueError, AttributeError) as e:
                raise FrameIndexError(f"帧索引第{line_no}行解析失败: {str(e)}")

    records.sort(key=lambda r: r.frame_id)
    for prev, cur in zip(records, records[1:]):
        if cur.frame_id == prev.frame_id:
            raise FrameIndexError(f"帧索引中 frame_id 重复: {cur.frame_id}")
        if cur.utc_ms <= prev.utc_ms:
            raise FrameIndexError(f"帧 {cur.frame_id} 的时间戳 {cur.utc_ms:.0f} 未严格大于前一帧")
    logger.info(f"帧索引读取完成: {len(records)} 帧")
    return FrameIndex(records=records)
