#!/usr/bin/env python3
"""
检测评估测试脚本
"""
import os
import sys
import tempfile

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from tester import Tester
from deteval import (
    Detection, GroundTruthBox, UndefinedAPError, EmptyScoresError, RecordParseError,
    iou, ap_11point, map_score, prf1, mish, evaluate, read_detections, read_ground_truth,
)


def car_fixture():
    """两个真值框，检测依次为 TP(0.9)、FP(0.8)、TP(0.7)"""
    gts = [GroundTruthBox(0, 'car', 0, 0, 10, 10), GroundTruthBox(1, 'car', 0, 0, 10, 10)]
    dets = [
        Detection(0, 'car', 0, 0, 10, 10, 0.9),
        Detection(0, 'car', 50, 50, 10, 10, 0.8),
        Detection(1, 'car', 0, 0, 10, 10, 0.7),
    ]
    return dets, gts


class EvalTester(Tester):
    """检测评估测试器"""

    title = "检测评估测试"

    def test_iou(self):
        """测试IoU"""
        print("\n=== 测试IoU ===")

        try:
            a = Detection(0, 'car', 0, 0, 2, 2)
            b = Detection(0, 'car', 1, 0, 2, 2)
            c = Detection(0, 'car', 5, 5, 2, 2)
            success = abs(iou(a, b) - 1 / 3) < 1e-12 and iou(a, c) == 0.0 and iou(a, a) == 1.0
            self.log_test("交并比", success, f"{iou(a, b):.6f}")
        except Exception as e:
            self.log_test("交并比", False, str(e))

        try:
            rng = np.random.default_rng(13)
            asymmetric = 0
            for _ in range(500):
                x1, y1, x2, y2 = rng.uniform(0, 50, size=4)
                w1, h1, w2, h2 = rng.uniform(0.5, 30, size=4)
                a, b = Detection(0, 'car', x1, y1, w1, h1), Detection(0, 'car', x2, y2, w2, h2)
                asymmetric += iou(a, b) != iou(b, a) or not 0.0 <= iou(a, b) <= 1.0
            self.log_test("交并比对称且在[0,1]内", asymmetric == 0, f"不满足 {asymmetric}/500")
        except Exception as e:
            self.log_test("交并比对称且在[0,1]内", False, str(e))

        self.expect_raises("零宽检测框", ValueError, Detection, 0, 'car', 0, 0, 0, 5)
        self.expect_raises("置信度越界", ValueError, Detection, 0, 'car', 0, 0, 5, 5, 1.5)
        self.expect_raises("负高真值框", ValueError, GroundTruthBox, 0, 'car', 0, 0, 5, -1)

    def test_ap(self):
        """测试11点AP"""
        print("\n=== 测试11点AP ===")
        dets, gts = car_fixture()

        try:
            ap = ap_11point(dets, gts, 'car')
            self.log_test("11点插值AP", abs(ap - 28 / 33) < 1e-12, f"{ap:.6f}")
        except Exception as e:
            self.log_test("11点插值AP", False, str(e))

        try:
            ap = ap_11point([d for d in dets if d.confidence != 0.8], gts, 'car')
            self.log_test("完美检测AP为1", ap == 1.0, f"{ap}")
        except Exception as e:
            self.log_test("完美检测AP为1", False, str(e))

        try:
            rng = np.random.default_rng(41)
            rescaled_diff, decreased = 0.0, []
            for trial in range(30):
                gts = [GroundTruthBox(f, 'car', float(rng.uniform(0, 200)), float(rng.uniform(0, 200)), 20, 20)
                       for f in range(5) for _ in range(2)]
                confs = rng.permutation(np.linspace(0.05, 0.95, 16))
                dets = [Detection(g.frame_id, 'car', g.x + float(rng.uniform(-8, 8)), g.y + float(rng.uniform(-8, 8)),
                                  20, 20, float(confs[i])) for i, g in enumerate(gts)]
                far = [Detection(int(rng.integers(0, 5)), 'car', 500 + 30 * i, 500, 20, 20, float(c))
                       for i, c in enumerate(confs[len(gts):])]
                dets += far
                ap = ap_11point(dets, gts, 'car')

                squashed = [Detection(d.frame_id, d.class_name, d.x, d.y, d.w, d.h, d.confidence ** 3) for d in dets]
                rescaled_diff = max(rescaled_diff, abs(ap_11point(squashed, gts, 'car') - ap))

                for fp in far:
                    pruned = ap_11point([d for d in dets if d is not fp], gts, 'car')
                    if pruned < ap - 1e-12:
                        decreased.append((trial, ap, pruned))
            self.log_test("置信度单调变换不改变AP", rescaled_diff == 0.0, f"最大差 {rescaled_diff}")
            self.log_test("删除误检AP不下降", not decreased, f"{decreased}")
        except Exception as e:
            self.log_test("置信度单调变换不改变AP", False, str(e))

        try:
            ap = ap_11point([], gts, 'car')
            self.log_test("无检测AP为0", ap == 0.0, f"{ap}")
        except Exception as e:
            self.log_test("无检测AP为0", False, str(e))

        try:
            dup = [Detection(0, 'car', 0, 0, 10, 10, 0.9), Detection(0, 'car', 0, 0, 10, 10, 0.8)]
            p, r, f = prf1(dup, gts[:1], 'car')
            success = p == 0.5 and r == 1.0 and abs(f - 2 / 3) < 1e-12
            self.log_test("重复检测记为FP", success, f"P={p}, R={r}, F1={f:.4f}")
        except Exception as e:
            self.log_test("重复检测记为FP", False, str(e))

        self.expect_raises("无真值框", UndefinedAPError, ap_11point, dets, gts, 'truck')

    def test_map_and_prf1(self):
        """测试mAP与P/R/F1"""
        print("\n=== 测试mAP与P/R/F1 ===")

        try:
            value = map_score({'a': 0.5, 'b': None, 'c': 1.0})
            self.log_test("忽略无定义类别", value == 0.75, f"{value}")
        except Exception as e:
            self.log_test("忽略无定义类别", False, str(e))

        self.expect_raises("空类别集合", EmptyScoresError, map_score, {})
        self.expect_raises("全部无定义", EmptyScoresError, map_score, {'a': None})

        dets, gts = car_fixture()
        try:
            result = prf1(dets, gts, 'car', conf_thresh=0.75)
            self.log_test("置信度过滤", result == (0.5, 0.5, 0.5), f"{result}")
        except Exception as e:
            self.log_test("置信度过滤", False, str(e))

        try:
            result = prf1([], gts, 'car')
            self.log_test("无检测时全为0", result == (0.0, 0.0, 0.0), f"{result}")
        except Exception as e:
            self.log_test("无检测时全为0", False, str(e))

    def test_mish(self):
        """测试Mish"""
        print("\n=== 测试Mish ===")

        try:
            values = mish(np.array([0.0, 1.0, -100.0, 100.0]))
            success = (values[0] == 0.0 and abs(values[1] - 0.8651) < 1e-4
                       and abs(values[2]) < 1e-30 and abs(values[3] - 100.0) < 1e-9)
            self.log_test("Mish取值", success, f"{values.tolist()}")
            self.log_test("标量输入", abs(float(mish(1.0)) - 0.865098) < 1e-6, f"{float(mish(1.0)):.6f}")
        except Exception as e:
            self.log_test("Mish取值", False, str(e))

        try:
            xs = np.linspace(-20.0, 20.0, 400001)
            values = mish(xs)
            rising = np.diff(values[xs >= 0.0])
            self.log_test("Mish下界", values.min() >= -0.31, f"最小值 {values.min():.6f}")
            self.log_test("Mish在x≥0单调递增", bool(np.all(rising > 0)), f"最小增量 {rising.min():.2e}")
        except Exception as e:
            self.log_test("Mish下界", False, str(e))

    def test_evaluate(self):
        """测试多类别评估"""
        print("\n=== 测试多类别评估 ===")
        dets, gts = car_fixture()
        gts = gts + [GroundTruthBox(2, 'pedestrian', 10, 10, 5, 15)]
        dets = dets + [
            Detection(2, 'pedestrian', 10, 10, 5, 15, 0.95),
            Detection(2, 'truck', 40, 40, 20, 20, 0.6),
        ]

        try:
            report = evaluate(dets, gts)
            success = (sorted(report.ap) == ['car', 'pedestrian'] and report.excluded == ['truck']
                       and abs(report.mAP - (28 / 33 + 1.0) / 2) < 1e-12
                       and report.precision['pedestrian'] == 1.0
                       and report.recall['car'] == 1.0 and report.precision['car'] == 2 / 3)
            self.log_test("三类别评估", success, f"{report.to_dict()}")
        except Exception as e:
            self.log_test("三类别评估", False, str(e))

        self.expect_raises("只有无真值类别", EmptyScoresError, evaluate,
                           [Detection(0, 'truck', 0, 0, 1, 1, 0.9)], [])

    def test_records(self):
        """测试JSON-lines读取"""
        print("\n=== 测试JSON-lines读取 ===")

        with tempfile.TemporaryDirectory() as tmp:
            try:
                path = os.path.join(tmp, 'detections.jsonl')
                with open(path, 'w', encoding='utf-8') as f:
                    f.write('{"frame": 0, "class": "car", "x": 1, "y": 2, "w": 3, "h": 4, "conf": 0.9}\n')
                    f.write('\n')
                    f.write('{"frame": 1, "class": "car", "x": 1, "y": 2, "w": 3, "h": 4, "conf": 0.5}\n')
                dets = read_detections(path)
                success = len(dets) == 2 and dets[0] == Detection(0, 'car', 1.0, 2.0, 3.0, 4.0, 0.9)
                self.log_test("读取检测结果", success, f"{len(dets)} 条")
            except Exception as e:
                self.log_test("读取检测结果", False, str(e))

            path = os.path.join(tmp, 'bad.jsonl')
            with open(path, 'w', encoding='utf-8') as f:
                f.write('{"frame": 0, "class": "car", "x": 1, "y": 2, "w": 3, "h": 4}\n')
                f.write('{"frame": 1, "class": \n')
            e = self.expect_raises("JSON格式错误", RecordParseError, read_ground_truth, path)
            if e is not None:
                self.log_test("错误信息含行号", e.line_no == 2 and '第2行' in str(e), str(e))

            path = os.path.join(tmp, 'noconf.jsonl')
            with open(path, 'w', encoding='utf-8') as f:
                f.write('{"frame": 0, "class": "car", "x": 1, "y": 2, "w": 3, "h": 4}\n')
            self.expect_raises("检测缺少conf", RecordParseError, read_detections, path)

            path = os.path.join(tmp, 'zero.jsonl')
            with open(path, 'w', encoding='utf-8') as f:
                f.write('{"frame": 0, "class": "car", "x": 1, "y": 2, "w": 0, "h": 4}\n')
            self.expect_raises("零宽真值框", RecordParseError, read_ground_truth, path)

    def run_tests(self):
        self.test_iou()
        self.test_ap()
        self.test_map_and_prf1()
        self.test_mish()
        self.test_evaluate()
        self.test_records()


def test_deteval():
    assert EvalTester().run_all_tests()


def main():
    """主函数"""
    success = EvalTester().run_all_tests()
    sys.exit(0 if success else 1)


if __name__ == "__main__":
    main()
