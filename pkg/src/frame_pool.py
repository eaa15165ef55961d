"""
逐帧任务工作池
有界线程池并行处理帧，结果按输入顺序返回，单帧失败只记录不中断
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Generic, List, Optional, Sequence, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')


@dataclass
class FrameOutcome(Generic[T, R]):
    index: int
    item: T
    result: Optional[R] = None
    error: Optional[Exception] = None

    @property
    def ok(self) -> bool:
        return self.error is None


class FramePool:
    """帧处理工作池"""

    def __init__(self, jobs: int = 4, label: str = 'frame'):
        """
        Args:
            jobs: 最大并行数，1 表示在当前线程顺序执行
            label: 日志中使用的任务名
        """
        if jobs < 1:
            raise ValueError(f"jobs 必须 ≥ 1: {jobs}")
        self.jobs = jobs
        self.label = label

    def _safe_call(self, func: Callable[[T], R], index: int, item: T,
                   describe: Callable[[T], str]) -> FrameOutcome:
        """单帧任务包装器，异常转为失败记录"""
        try:
            return FrameOutcome(index=index, item=item, result=func(item))
        except Exception as e:
            logger.warning(f"{self.label} {describe(item)} 处理失败: {type(e).__name__}: {str(e)}")
            return FrameOutcome(index=index, item=item, error=e)

    def map(self, func: Callable[[T], R], items: Sequence[T],
            describe: Callable[[T], str] = str) -> List[FrameOutcome]:
        """对每个元素执行 func，返回与 items 同序的结果"""
        items = list(items)
        if not items:
            return []

        if self.jobs == 1 or len(items) == 1:
            outcomes = [self._safe_call(func, i, item, describe) for i, item in enumerate(items)]
        else:
            with ThreadPoolExecutor(max_workers=min(self.jobs, len(items))) as executor:
                futures = [executor.submit(self._safe_call, func, i, item, describe)
                           for i, item in enumerate(items)]
                outcomes = [f.result() for f in futures]

        outcomes.sort(key=lambda o: o.index)
        failed = sum(1 for o in outcomes if not o.ok)
        logger.info(f"{self.label} 处理完成: 成功 {len(outcomes) - failed}, 失败 {failed}")
        return outcomes


def successes(outcomes: Sequence[FrameOutcome]) -> List[Any]:
    return [o.result for o in outcomes if o.ok]


def failures(outcomes: Sequence[FrameOutcome]) -> List[FrameOutcome]:
    return [o for o in outcomes if not o.ok]
