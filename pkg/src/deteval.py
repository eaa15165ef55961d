"""
目标检测评估
IoU、11 点插值 AP、mAP、精确率/召回率/F1，以及独立的 Mish 函数
"""
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Any, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_IOU_THRESH = 0.5
DEFAULT_CONF_THRESH = 0.5

RECALL_GRID = [i / 10.0 for i in range(11)]


class UndefinedAPError(ValueError):
    """该类别没有真值框，AP 无定义"""


class EmptyScoresError(ValueError):
    """没有可求均值的类别 AP"""


class RecordParseError(ValueError):
    """JSON-lines 记录解析失败"""

    def __init__(self, path: str, line_no: int, reason: str):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path} 第{line_no}行: {reason}")


@dataclass(frozen=True)
class Detection:
    """检测框（左上角 + 宽高，相机画面像素）"""
    frame_id: int
    class_name: str
    x: float
    y: float
    w: float
    h: float
    confidence: float = 1.0

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"检测框宽高必须 > 0: w={self.w}, h={self.h}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"置信度必须在 [0,1] 内: {self.confidence}")

    @property
    def center(self) -> Tuple[float, float]:
        return self.x + self.w / 2.0, self.y + self.h / 2.0


@dataclass
class GroundTruthBox:
    frame_id: int
    class_name: str
    x: float
    y: float
    w: float
    h: float
    matched: bool = False

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"真值框宽高必须 > 0: w={self.w}, h={self.h}")


@dataclass
class EvalReport:
    ap: Dict[str, float] = field(default_factory=dict)
    mAP: float = 0.0
    precision: Dict[str, float] = field(default_factory=dict)
    recall: Dict[str, float] = field(default_factory=dict)
    f1: Dict[str, float] = field(default_factory=dict)
    excluded: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'ap': self.ap,
            'mAP': self.mAP,
            'precision': self.precision,
            'recall': self.recall,
            'f1': self.f1,
            'excluded': self.excluded,
        }


def iou(a, b) -> float:
    """交并比，a/b 需有 x, y, w, h 属性"""
    ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    if inter <= 0.0:
        return 0.0
    union = a.w * a.h + b.w * b.h - inter
    return inter / union


def _match(dets: Sequence[Detection], gts: Sequence[GroundTruthBox], cls: str,
           iou_thresh: float) -> Tuple[List[bool], int]:
    """
    按置信度降序贪心一对一匹配

    Returns:
        (按置信度排序后每个检测是否为 TP, 该类真值框数)
    """
    truth = [replace(g, matched=False) for g in gts if g.class_name == cls]
    by_frame: Dict[int, List[GroundTruthBox]] = {}
    for g in truth:
        by_frame.setdefault(g.frame_id, []).append(g)

    ranked = sorted((d for d in dets if d.class_name == cls), key=lambda d: -d.confidence)
    hits = []
    for det in ranked:
        best, best_iou = None, iou_thresh
        for g in by_frame.get(det.frame_id, []):
            if g.matched:
                continue
            overlap = iou(det, g)
            if overlap >= best_iou:
                best, best_iou = g, overlap
        if best is not None:
            best.matched = True
        hits.append(best is not None)
    return hits, len(truth)


def ap_11point(dets: Sequence[Detection], gts: Sequence[GroundTruthBox], cls: str,
               iou_thresh: float = DEFAULT_IOU_THRESH) -> float:
    """
    11 点插值 AP：P_interp(r) 为召回率 ≥ r 的所有工作点中的最大精确率

    Raises:
        UndefinedAPError: 该类别没有真值框
    """
    hits, n_truth = _match(dets, gts, cls, iou_thresh)
    if n_truth == 0:
        raise UndefinedAPError(f"类别 {cls} 没有真值框，AP无定义")
    if not hits:
        return 0.0

    tp = np.cumsum(np.asarray(hits, dtype=np.float64))
    precision = tp / np.arange(1, len(hits) + 1)
    recall = tp / n_truth

    total = 0.0
    for r in RECALL_GRID:
        reached = precision[recall >= r]
        total += float(reached.max()) if reached.size else 0.0
    return total / len(RECALL_GRID)


def map_score(per_class: Dict[str, Optional[float]]) -> float:
    """有定义的类别 AP 的算术平均"""
    defined = [v for v in per_class.values() if v is not None]
    if not defined:
        raise EmptyScoresError("没有有定义的类别AP，无法计算mAP")
    return sum(defined) / len(defined)


def prf1(dets: Sequence[Detection], gts: Sequence[GroundTruthBox], cls: str,
         iou_thresh: float = DEFAULT_IOU_THRESH,
         conf_thresh: float = DEFAULT_CONF_THRESH) -> Tuple[float, float, float]:
    """置信度过滤后统计 TP/FP/FN；无检测时精确率记 0，P+R=0 时 F1 记 0"""
    kept = [d for d in dets if d.confidence >= conf_thresh]
    hits, n_truth = _match(kept, gts, cls, iou_thresh)
    tp = sum(hits)
    fp = len(hits) - tp
    fn = n_truth - tp

    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def mish(x):
    """Mish = x·tanh(softplus(x))，softplus 用 logaddexp 防溢出"""
    return x * np.tanh(np.logaddexp(0.0, x))


def evaluate(dets: Sequence[Detection], gts: Sequence[GroundTruthBox],
             iou_thresh: float = DEFAULT_IOU_THRESH,
             conf_thresh: float = DEFAULT_CONF_THRESH) -> EvalReport:
    """对真值或检测中出现的全部类别计算 AP、mAP 与 P/R/F1"""
    classes = sorted({g.class_name for g in gts} | {d.class_name for d in dets})
    report = EvalReport()
    for cls in classes:
        try:
            report.ap[cls] = ap_11point(dets, gts, cls, iou_thresh)
        except UndefinedAPError as e:
            logger.warning(f"{str(e)}，不计入mAP")
            report.excluded.append(cls)
            continue
        p, r, f = prf1(dets, gts, cls, iou_thresh, conf_thresh)
        report.precision[cls], report.recall[cls], report.f1[cls] = p, r, f

    report.mAP = map_score(report.ap)
    logger.info(f"评估完成: {len(report.ap)} 个类别, mAP={report.mAP:.4f}")
    return report


def _read_jsonl(path: str) -> List[Tuple[int, Dict[str, Any]]]:
    records = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise RecordParseError(path, line_no, f"JSON格式错误: {e.msg}")
            if not isinstance(record, dict):
                raise RecordParseError(path, line_no, "记录必须是JSON对象")
            records.append((line_no, record))
    return records


def _box_fields(path: str, line_no: int, record: Dict[str, Any], keys: Sequence[str]) -> Dict[str, Any]:
    missing = [k for k in keys if k not in record]
    if missing:
        raise RecordParseError(path, line_no, f"缺少字段: {', '.join(missing)}")
    try:
        return {
            'frame_id': int(record['frame']),
            'class_name': str(record['class']),
            'x': float(record['x']),
            'y': float(record['y']),
            'w': float(record['w']),
            'h': float(record['h']),
        }
    except (TypeError, ValueError) as e:
        raise RecordParseError(path, line_no, f"字段类型错误: {str(e)}")


def read_detections(path: str) -> List[Detection]:
    """读取 {"frame","class","x","y","w","h","conf"} 格式的检测结果"""
    detections = []
    for line_no, record in _read_jsonl(path):
        fields = _box_fields(path, line_no, record, ('frame', 'class', 'x', 'y', 'w', 'h', 'conf'))
        try:
            detections.append(Detection(confidence=float(record['conf']), **fields))
        except (TypeError, ValueError) as e:
            raise RecordParseError(path, line_no, str(e))
    return detections


def read_ground_truth(path: str) -> List[GroundTruthBox]:
    """读取不含 conf 的真值框"""
    boxes = []
    for line_no, record in _read_jsonl(path):
        fields = _box_fields(path, line_no, record, ('frame', 'class', 'x', 'y', 'w', 'h'))
        try:
            boxes.append(GroundTruthBox(**fields))
        except (TypeError, ValueError) as e:
            raise RecordParseError(path, line_no, str(e))
    return boxes
