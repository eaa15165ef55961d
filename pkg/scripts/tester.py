"""
测试脚本公用的测试器基类
记录 PASS/FAIL，打印摘要
"""
import os
import sys
from datetime import datetime

# 添加src目录到Python路径
sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), '..', 'src'))


class Tester:
    """测试器基类"""

    title = "测试"
    # 基类本身不是 pytest 测试用例
    __test__ = False

    def __init__(self):
        self.test_results = []

    def log_test(self, test_name, success, message=""):
        """记录测试结果"""
        status = "✓ PASS" if success else "✗ FAIL"
        print(f"{status} {test_name}: {message}")
        self.test_results.append({
            'test': test_name,
            'success': bool(success),
            'message': message,
            'timestamp': datetime.now().isoformat()
        })

    def expect_raises(self, test_name, error_type, func, *args, **kwargs):
        """期望 func 抛出 error_type，返回捕获到的异常"""
        try:
            func(*args, **kwargs)
            self.log_test(test_name, False, "应该抛出异常")
        except error_type as e:
            self.log_test(test_name, True, f"正确抛出{type(e).__name__}")
            return e
        except Exception as e:
            self.log_test(test_name, False, f"错误的异常类型: {type(e).__name__}: {e}")
        return None

    def run_tests(self):
        raise NotImplementedError

    def run_all_tests(self):
        """运行所有测试"""
        print(self.title)
        print("=" * 50)
        print(f"测试时间: {datetime.now()}")
        self.run_tests()
        return self.print_summary()

    def print_summary(self):
        """打印测试摘要"""
        print("\n" + "=" * 50)
        print("测试摘要")
        print("=" * 50)

        total_tests = len(self.test_results)
        passed_tests = sum(1 for result in self.test_results if result['success'])
        failed_tests = total_tests - passed_tests

        print(f"总测试数: {total_tests}")
        print(f"通过: {passed_tests}")
        print(f"失败: {failed_tests}")
        print(f"成功率: {(passed_tests/total_tests*100):.1f}%" if total_tests > 0 else "0%")

        if failed_tests > 0:
            print("\n失败的测试:")
            for result in self.test_results:
                if not result['success']:
                    print(f"  - {result['test']}: {result['message']}")

        print("\n测试完成!")
        return total_tests > 0 and failed_tests == 0
