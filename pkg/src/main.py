"""
coopercept 命令行主程序
解析参数与配置，按子命令运行流水线阶段并写出运行清单
"""
import os
import sys
import logging
import argparse
from typing import List, Optional

from config_loader import ConfigError, PipelineConfig, PipelineConfigParser, load_config
from pipeline import CooperceptPipeline, StageError
from synthetic import write_fixture

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_FILE_NAME = 'coopercept.log'
LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR')

EXIT_OK = 0
EXIT_STAGE_FAILED = 1
EXIT_EMPTY_INPUT = 2
EXIT_CONFIG_ERROR = 3

STAGE_COMMANDS = ('pupil', 'fuse', 'track', 'eval', 'all')


class _ArgumentParser(argparse.ArgumentParser):
    """参数错误按配置错误退出"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG_ERROR, f"{self.prog}: 错误: {message}\n")


def setup_logging():
    """设置日志配置，级别取自 COOPERCEPT_LOG"""
    log_level = os.getenv('COOPERCEPT_LOG', 'INFO').upper()
    unknown = log_level not in LOG_LEVELS
    level = logging.INFO if unknown else getattr(logging, log_level)

    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=[logging.StreamHandler(sys.stdout)])
    logging.getLogger().setLevel(level)
    if unknown:
        logging.getLogger(__name__).warning(f"未知的日志级别 COOPERCEPT_LOG={log_level}，使用 INFO")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog='coopercept', description='人车协同视觉感知流水线')
    subparsers = parser.add_subparsers(dest='command', required=True)

    for name in STAGE_COMMANDS:
        sub = subparsers.add_parser(name, help=f"运行 {name} 阶段" if name != 'all' else '依次运行全部阶段')
        sub.add_argument('--config', required=True, help='JSON 配置文件路径')
        sub.add_argument('--out', help='覆盖 paths.output_dir')
        sub.add_argument('--literal-step6', action='store_true',
                         help='按原式以掩膜权重加权相机帧金字塔')
        sub.add_argument('--jobs', type=int, help='覆盖 runtime.jobs')
        sub.add_argument('--montage', action='store_true', help='额外写出相机帧与融合结果的拼接图')

    synth = subparsers.add_parser('synth', help='写出合成测试场景')
    synth.add_argument('--out', required=True, help='场景输出目录')
    synth.add_argument('--frames', type=int, default=10, help='帧数')
    synth.add_argument('--seed', type=int, default=7, help='随机种子')
    return parser


class CooperceptApp:
    """命令行应用"""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.logger = logging.getLogger(__name__)
        self.file_handler: Optional[logging.Handler] = None

    def load_config(self) -> PipelineConfig:
        """加载配置并应用命令行覆盖"""
        cfg = load_config(self.args.config)
        if self.args.out:
            cfg.paths.output_dir = os.path.abspath(self.args.out)
        if self.args.jobs is not None:
            cfg.runtime.jobs = self.args.jobs
        if self.args.literal_step6:
            cfg.runtime.literal_step6 = True
        if self.args.montage:
            cfg.runtime.montage = True
        return PipelineConfigParser.validate_config(cfg)

    def attach_log_file(self, output_dir: str):
        """日志同时写入 <output_dir>/coopercept.log"""
        try:
            os.makedirs(output_dir, exist_ok=True)
            handler = logging.FileHandler(os.path.join(output_dir, LOG_FILE_NAME), mode='a', encoding='utf-8')
        except OSError as e:
            self.logger.warning(f"无法创建日志文件: {str(e)}")
            return
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logging.getLogger().addHandler(handler)
        self.file_handler = handler

    def detach_log_file(self):
        if self.file_handler is not None:
            logging.getLogger().removeHandler(self.file_handler)
            self.file_handler.close()
            self.file_handler = None

    def run_synth(self) -> int:
        config_path = write_fixture(self.args.out, frames=self.args.frames, seed=self.args.seed)
        print(config_path)
        return EXIT_OK

    def run(self) -> int:
        """执行子命令并返回退出码"""
        if self.args.command == 'synth':
            return self.run_synth()

        try:
            cfg = self.load_config()
        except ConfigError as e:
            self.logger.error(f"配置错误: {str(e)}")
            return EXIT_CONFIG_ERROR

        self.attach_log_file(cfg.paths.output_dir)
        pipeline = CooperceptPipeline(cfg)
        try:
            pipeline.run(self.args.command)
            self.logger.info(f"{self.args.command} 执行成功")
            return EXIT_OK
        except StageError as e:
            self.logger.error(str(e))
            return e.exit_code
        finally:
            try:
                pipeline.write_manifest()
            except OSError as e:
                self.logger.error(f"写出运行清单失败: {str(e)}")
            self.detach_log_file()


def main(argv: Optional[List[str]] = None) -> int:
    """主函数"""
    setup_logging()
    args = build_parser().parse_args(argv)
    return CooperceptApp(args).run()


if __name__ == '__main__':
    sys.exit(main())
