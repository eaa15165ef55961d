#!/usr/bin/env python3
"""
配置解析测试脚本
测试配置默认值、校验规则与帧索引读取
"""
import os
import sys
import json
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from tester import Tester
from main import main as cli_main
from config_loader import (
    ConfigError, FrameIndexError, PipelineConfigParser,
    load_config, write_config, read_frame_index,
)


class ConfigTester(Tester):
    """配置解析测试器"""

    title = "配置解析测试"

    def parse(self, raw, base_dir='/data/run'):
        return PipelineConfigParser.parse_config(json.dumps(raw), base_dir)

    def test_defaults(self):
        """测试默认值"""
        print("\n=== 测试默认值 ===")

        try:
            cfg = self.parse({'paths': {'output_dir': 'out', 'rtk_csv': 'data/rtk.csv'}})
            success = (cfg.paths.output_dir == '/data/run/out'
                       and cfg.paths.rtk_csv == '/data/run/data/rtk.csv'
                       and cfg.paths.gaze_csv is None
                       and cfg.geometry.source_w == 1920 and cfg.geometry.marker_radius == 35
                       and cfg.guided_filter.window_radius == 2 and cfg.guided_filter.epsilon == 100.0
                       and (cfg.canny.low, cfg.canny.high) == (50.0, 150.0)
                       and cfg.ekf.r_diag == (4.0, 4.0, 4.0, 4.0)
                       and cfg.zones.ttc_edges == (1.03, 2.0)
                       and cfg.runtime.jobs == 4 and not cfg.runtime.literal_step6)
            self.log_test("缺省键取默认值", success, PipelineConfigParser.get_config_info(cfg))
        except Exception as e:
            self.log_test("缺省键取默认值", False, str(e))

        try:
            cfg = self.parse({'paths': {'output_dir': '/abs/out'}, 'ekf': {'q_diag': [1, 1, 1, 1]},
                              'zones': {'ttc_edges': [1.0, 3.0, 5.0]}})
            success = (cfg.paths.output_dir == '/abs/out' and cfg.ekf.q_diag == (1, 1, 1, 1)
                       and cfg.zones.ttc_edges == (1.0, 3.0, 5.0))
            self.log_test("列表转换为元组", success, f"{cfg.zones.ttc_edges}")
        except Exception as e:
            self.log_test("列表转换为元组", False, str(e))

    def test_invalid(self):
        """测试无效配置"""
        print("\n=== 测试无效配置 ===")
        base = {'output_dir': 'out'}

        cases = [
            ("缺少paths", {}, 'paths'),
            ("缺少output_dir", {'paths': {'rtk_csv': 'rtk.csv'}}, 'paths.output_dir'),
            ("未知配置节", {'paths': base, 'mysql': {}}, 'mysql'),
            ("未知键", {'paths': base, 'canny': {'sigma': 1}}, 'canny.sigma'),
            ("TTC分档非递增", {'paths': base, 'zones': {'ttc_edges': [2.0, 1.03]}}, 'zones.ttc_edges'),
            ("Canny阈值颠倒", {'paths': base, 'canny': {'low': 200, 'high': 100}}, 'canny.low'),
            ("几何参数为负", {'paths': base, 'geometry': {'source_w': -1}}, 'geometry'),
            ("导向滤波ε为零", {'paths': base, 'guided_filter': {'epsilon': 0}}, 'guided_filter'),
            ("Hough半径颠倒", {'paths': base, 'hough': {'r_min': 10, 'r_max': 5}}, 'hough.r_max'),
            ("EKF维度错误", {'paths': base, 'ekf': {'r_diag': [1, 1]}}, 'ekf.r_diag'),
            ("量测噪声为零", {'paths': base, 'ekf': {'r_diag': [1, 0, 1, 1]}}, 'ekf.r_diag'),
            ("IoU阈值越界", {'paths': base, 'eval': {'iou_thresh': 1.5}}, 'eval.iou_thresh'),
            ("并发数为零", {'paths': base, 'runtime': {'jobs': 0}}, 'runtime.jobs'),
            ("标定基线为零", {'paths': base, 'calibration': {'p_x1': 3, 'p_x2': 3}}, 'calibration'),
            ("阈值为字符串", {'paths': base, 'canny': {'low': 'fifty'}}, 'canny.low'),
            ("半径为小数", {'paths': base, 'hough': {'r_max': 12.5}}, 'hough.r_max'),
            ("开关不是布尔值", {'paths': base, 'runtime': {'montage': 'yes'}}, 'runtime.montage'),
            ("几何参数为null", {'paths': base, 'geometry': {'target_w': None}}, 'geometry.target_w'),
            ("噪声数组含字符串", {'paths': base, 'ekf': {'q_diag': [1, 1, 'a', 1]}}, 'ekf.q_diag'),
            ("类别名不是字符串", {'paths': base, 'zones': {'class_name': 3}}, 'zones.class_name'),
        ]
        for name, raw, key in cases:
            e = self.expect_raises(name, ConfigError, self.parse, raw)
            if e is not None and key not in str(e):
                self.log_test(f"{name} 错误信息", False, f"未提到 {key}: {e}")

        self.expect_raises("JSON格式错误", ConfigError, PipelineConfigParser.parse_config, '{"paths": ', '/tmp')
        self.expect_raises("配置文件不存在", ConfigError, load_config, '/nonexistent/coopercept.json')

        try:
            cfg = self.parse({'paths': base, 'hough': {'r_min': 4.0, 'r_max': None}, 'log': {'radius': None}})
            success = cfg.hough.r_min == 4 and isinstance(cfg.hough.r_min, int) and cfg.hough.r_max is None
            self.log_test("整数值浮点数与null可接受", success, f"{cfg.hough}")
        except Exception as e:
            self.log_test("整数值浮点数与null可接受", False, str(e))

        with tempfile.TemporaryDirectory() as tmp:
            try:
                path = os.path.join(tmp, 'config.json')
                with open(path, 'w', encoding='utf-8') as f:
                    json.dump({'paths': {'output_dir': 'out'}, 'canny': {'low': 'fifty'}}, f)
                code = cli_main(['eval', '--config', path])
                self.log_test("类型错误退出码3", code == 3, f"退出码: {code}")
            except Exception as e:
                self.log_test("类型错误退出码3", False, str(e))

    def test_round_trip(self):
        """测试配置写出后读回"""
        print("\n=== 测试配置写出后读回 ===")

        with tempfile.TemporaryDirectory() as tmp:
            try:
                path = os.path.join(tmp, 'config.json')
                with open(path, 'w', encoding='utf-8') as f:
                    json.dump({'paths': {'output_dir': 'out', 'frame_index': 'index.csv'},
                               'hough': {'r_min': 4, 'r_max': 20},
                               'zones': {'ttc_edges': [1.5, 2.5], 'class_name': 'car'}}, f)
                cfg = load_config(path)
                copy_path = write_config(cfg, os.path.join(tmp, 'copy', 'config.json'))
                again = load_config(copy_path)
                success = (again == cfg and cfg.paths.output_dir == os.path.join(tmp, 'out')
                           and again.source_path == copy_path)
                self.log_test("写出后读回相等", success, f"{cfg.paths.frame_index}")
            except Exception as e:
                self.log_test("写出后读回相等", False, str(e))

    def test_frame_index(self):
        """测试帧索引"""
        print("\n=== 测试帧索引 ===")

        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'frame_index.csv')
            try:
                with open(path, 'w', encoding='utf-8') as f:
                    f.write('frame_id,utc_ms,camera_path,eye_path\n')
                    f.write('1,1100,camera/b.png,\n')
                    f.write('0,1000,camera/a.png,scene/a.png\n')
                index = read_frame_index(path)
                success = (len(index) == 2 and index.times() == [1000.0, 1100.0]
                           and index.time_of() == {0: 1000.0, 1: 1100.0}
                           and index.records[0].eye_path == os.path.join(tmp, 'scene', 'a.png')
                           and index.records[1].eye_path is None
                           and index.records[1].camera_path == os.path.join(tmp, 'camera', 'b.png'))
                self.log_test("按frame_id排序并解析路径", success, f"{index.records}")
            except Exception as e:
                self.log_test("按frame_id排序并解析路径", False, str(e))

            bad_rows = [
                ("时间非递增", '0,1000,a.png,\n1,1000,b.png,\n'),
                ("frame_id重复", '0,1000,a.png,\n0,1100,b.png,\n'),
                ("时间无法解析", '0,abc,a.png,\n'),
            ]
            for name, rows in bad_rows:
                with open(path, 'w', encoding='utf-8') as f:
                    f.write('frame_id,utc_ms,camera_path,eye_path\n' + rows)
                self.expect_raises(name, FrameIndexError, read_frame_index, path)

            with open(path, 'w', encoding='utf-8') as f:
                f.write('frame_id,camera_path\n0,a.png\n')
            self.expect_raises("缺少列", FrameIndexError, read_frame_index, path)

    def run_tests(self):
        self.test_defaults()
        self.test_invalid()
        self.test_round_trip()
        self.test_frame_index()


def test_config():
    assert ConfigTester().run_all_tests()


def main():
    """主函数"""
    success = ConfigTester().run_all_tests()
    sys.exit(0 if success else 1)


if __name__ == "__main__":
    main()
