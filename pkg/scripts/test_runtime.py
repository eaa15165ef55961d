#!/usr/bin/env python3
"""
运行支撑组件测试脚本
工作池、输出目录与运行清单
"""
import os
import sys
import json
import math
import time
import tempfile

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from tester import Tester
from frame_pool import FramePool, successes, failures
from output_store import OutputStore, json_safe
from run_manifest import RunManifest, MANIFEST_NAME


def slow_square(n):
    # 前面的任务更慢，检验输出仍按输入顺序
    time.sleep(0.002 * (10 - n))
    if n == 7:
        raise ValueError("第7帧损坏")
    return n * n


class RuntimeTester(Tester):
    """运行支撑组件测试器"""

    title = "运行支撑组件测试"

    def test_frame_pool(self):
        """测试工作池"""
        print("\n=== 测试工作池 ===")

        try:
            outcomes = FramePool(jobs=4, label='测试帧').map(slow_square, range(10))
            success = ([o.index for o in outcomes] == list(range(10))
                       and successes(outcomes) == [n * n for n in range(10) if n != 7]
                       and [o.item for o in failures(outcomes)] == [7]
                       and isinstance(failures(outcomes)[0].error, ValueError))
            self.log_test("并行结果按输入顺序", success, f"失败: {[o.item for o in failures(outcomes)]}")
        except Exception as e:
            self.log_test("并行结果按输入顺序", False, str(e))

        try:
            parallel = FramePool(jobs=4).map(slow_square, range(10))
            serial = FramePool(jobs=1).map(slow_square, range(10))
            success = [o.result for o in parallel] == [o.result for o in serial]
            self.log_test("并行与顺序结果一致", success, "")
        except Exception as e:
            self.log_test("并行与顺序结果一致", False, str(e))

        try:
            self.log_test("空输入", FramePool().map(slow_square, []) == [], "")
        except Exception as e:
            self.log_test("空输入", False, str(e))

        self.expect_raises("并发数为零", ValueError, FramePool, 0)

    def test_output_store(self):
        """测试输出目录"""
        print("\n=== 测试输出目录 ===")

        try:
            data = {'ttc': [math.inf, 1.5, np.float64(2.0)], 'n': np.int64(3), 2: (1, 2)}
            safe = json_safe(data)
            success = safe == {'ttc': [None, 1.5, 2.0], 'n': 3, '2': [1, 2]} and type(safe['n']) is int
            self.log_test("非有限值写为null", success, f"{safe}")
        except Exception as e:
            self.log_test("非有限值写为null", False, str(e))

        with tempfile.TemporaryDirectory() as tmp:
            store = OutputStore(os.path.join(tmp, 'out'))
            try:
                self.log_test("输出目录可写", store.test_writable() and os.listdir(store.output_dir) == [], "")
            except Exception as e:
                self.log_test("输出目录可写", False, str(e))

            try:
                path = store.write_json('metrics.json', {'b': math.inf, 'a': 1})
                with open(path, encoding='utf-8') as f:
                    text = f.read()
                self.log_test("JSON键排序且末尾换行", text == '{\n  "a": 1,\n  "b": null\n}\n', repr(text))
            except Exception as e:
                self.log_test("JSON键排序且末尾换行", False, str(e))

            try:
                for i in range(3):
                    store.write_frame(f"fused_{i:06d}.png", np.zeros((8, 8, 3), dtype=np.uint8))
                store.write_frame('montage_000000.png', np.zeros((8, 16, 3), dtype=np.uint8))
                listed = [os.path.basename(p) for p in store.list_outputs('fused_', '.png')]
                deleted = store.delete_stale('fused_')
                remaining = sorted(os.listdir(store.output_dir))
                success = (listed == ['fused_000000.png', 'fused_000001.png', 'fused_000002.png']
                           and deleted == 3 and remaining == ['metrics.json', 'montage_000000.png'])
                self.log_test("清理旧帧", success, f"剩余: {remaining}")
            except Exception as e:
                self.log_test("清理旧帧", False, str(e))

            try:
                blocker = os.path.join(tmp, 'file')
                open(blocker, 'w').close()
                self.log_test("输出路径被文件占用", not OutputStore(os.path.join(blocker, 'out')).test_writable(), "")
            except Exception as e:
                self.log_test("输出路径被文件占用", False, str(e))

    def test_manifest(self):
        """测试运行清单"""
        print("\n=== 测试运行清单 ===")

        with tempfile.TemporaryDirectory() as tmp:
            inputs = os.path.join(tmp, 'eye')
            os.makedirs(inputs)
            for name in ('1000_L.png', '1000_R.png'):
                with open(os.path.join(inputs, name), 'wb') as f:
                    f.write(name.encode('utf-8'))

            def build():
                manifest = RunManifest('{"paths": {}}\n')
                manifest.record_input('eye_frames_dir', inputs)
                manifest.record_input('missing', os.path.join(tmp, 'nothing.csv'))
                manifest.record_stage('pupil', True, samples=1)
                manifest.record_stage('fuse', False, error='相机帧尺寸不符')
                return manifest

            try:
                first = build().write(os.path.join(tmp, 'a'))
                second = build().write(os.path.join(tmp, 'b'))
                with open(first, 'rb') as f1, open(second, 'rb') as f2:
                    same = f1.read() == f2.read()
                with open(first, encoding='utf-8') as f:
                    data = json.load(f)
                success = (same and os.path.basename(first) == MANIFEST_NAME
                           and sorted(data['inputs']) == ['eye_frames_dir']
                           and data['stages']['fuse'] == {'success': False, 'error': '相机帧尺寸不符'}
                           and data['status'] == {'healthy': False, 'success_count': 1, 'error_count': 1}
                           and 'numpy' in data['versions'])
                self.log_test("清单可复现且不含时间戳", success, f"{data['status']}")
            except Exception as e:
                self.log_test("清单可复现且不含时间戳", False, str(e))

    def run_tests(self):
        self.test_frame_pool()
        self.test_output_store()
        self.test_manifest()


def test_runtime():
    assert RuntimeTester().run_all_tests()


def main():
    """主函数"""
    success = RuntimeTester().run_all_tests()
    sys.exit(0 if success else 1)


if __name__ == "__main__":
    main()
