"""
管理命令公共部分：参数解析、运行清单、异常到退出码的映射
"""

import argparse
import logging
import math
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from django.core.management.base import BaseCommand, CommandError
from pydantic import ValidationError

from magfim.conf import get_setting
from magfim.dipole_core import MagnetModel
from magfim.exceptions import EXIT_IO, EXIT_USAGE, MagfimError
from magfim.geometry_catalog import COLUMN_AXES, SensorLayout, layout_from_dual_layer, resolve_layout
from magfim.observability import NoiseModel, WorkspaceSpec
from magfim.performance import resolve_threads
from magfim.reporting import RunManifest, input_digests, record_run, write_json

logger = logging.getLogger('magfim.commands')

DJANGO_OPTIONS = {'verbosity', 'settings', 'pythonpath', 'traceback', 'no_color', 'force_color', 'skip_checks'}


# ---------------------------------------------------------------------------
# argparse 类型
# ---------------------------------------------------------------------------

def parse_range(text: str) -> Tuple[float, float]:
    """'lo:hi'（m）"""
    try:
        lo, hi = (float(part) for part in text.split(':'))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo:hi', got '{text}'") from None
    if not lo < hi:
        raise argparse.ArgumentTypeError(f"range must satisfy lo < hi, got '{text}'")
    return lo, hi


def parse_vector(text: str) -> Tuple[float, float, float]:
    """'x,y,z'"""
    try:
        values = tuple(float(part) for part in text.split(','))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'x,y,z', got '{text}'") from None
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma separated values, got '{text}'")
    return values


def parse_clip(text: str) -> float:
    """饱和阈值（µT）；'none' 表示不截断"""
    if text.lower() == 'none':
        return math.inf
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a threshold in µT or 'none', got '{text}'") from None
    if not value > 0:
        raise argparse.ArgumentTypeError("clip threshold must be positive")
    return value


def parse_levels(text: str) -> List[float]:
    """'start:stop:step'（m），包含两端"""
    try:
        start, stop, step = (float(part) for part in text.split(':'))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'start:stop:step', got '{text}'") from None
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError(f"invalid level grid '{text}'")
    count = int(round((stop - start) / step)) + 1
    return [round(start + i * step, 12) for i in range(count)]


def non_negative_float(text: str) -> float:
    value = float(text)
    if value < 0 or not math.isfinite(value):
        raise argparse.ArgumentTypeError(f"expected a finite value >= 0, got '{text}'")
    return value


def positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got '{text}'")
    return value


def _jsonable(value: Any) -> Any:
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if value is None or isinstance(value, (str, int, float, bool)):
        return value
    return str(value)


# ---------------------------------------------------------------------------
# 命令基类
# ---------------------------------------------------------------------------

class MagfimCommand(BaseCommand):
    """
    子命令基类

    子类声明 actions 并实现 run(action, options, manifest)，返回输出文件路径。
    领域异常转为 CommandError(returncode=exit_code)；每次运行都写入 ExperimentRun。
    """

    command_name = ''
    actions: Tuple[str, ...] = ()

    def add_arguments(self, parser):
        if self.actions:
            parser.add_argument('action', choices=self.actions, help='/'.join(self.actions))
        self.add_options(parser)
        parser.add_argument(
            '--threads', type=int, default=None,
            help='并行线程数，缺省取环境变量 MAGFIM_THREADS，再缺省为 CPU 核数；输出与线程数无关',
        )

    def add_options(self, parser):
        raise NotImplementedError

    # 公共参数组
    def add_layout_options(self, parser, default: str = 'staggered'):
        parser.add_argument(
            '--layout', default=default,
            help='布局：planar / single-split / staggered，或布局 JSON 文件路径（坐标单位 m）',
        )
        parser.add_argument('--column-axis', choices=COLUMN_AXES, default='x', help='外/内列的编号方向')
        parser.add_argument(
            '--dual-layer', action='store_true',
            help='从 32 通道双层硬件中选取对应的 16 个传感器',
        )

    def add_model_options(self, parser, sigma: bool = True):
        parser.add_argument(
            '--b-t', type=float, default=get_setting('MAGFIM_B_T'),
            help='磁铁强度常数 B_T（µT·m³），默认 7.9666e-2',
        )
        if sigma:
            parser.add_argument(
                '--sigma', type=non_negative_float, default=get_setting('MAGFIM_SIGMA_UT'),
                help='每通道高斯噪声标准差（µT），默认 10',
            )

    def add_workspace_options(self, parser, z_range: Tuple[float, float] = (0.050, 0.150)):
        parser.add_argument('--x-range', type=parse_range, default=(-0.050, 0.050), help='x 范围 lo:hi（m）')
        parser.add_argument('--y-range', type=parse_range, default=(-0.050, 0.050), help='y 范围 lo:hi（m）')
        parser.add_argument(
            '--z-range', type=parse_range, default=z_range,
            help=f'z 范围 lo:hi（m），默认 {z_range[0]:.3f}:{z_range[1]:.3f}',
        )
        parser.add_argument(
            '--theta-margin', type=float, default=0.05,
            help='极角离两极的最小距离（rad），默认 0.05',
        )

    def add_output_option(self, parser, help_text: str = '输出 JSON 路径'):
        parser.add_argument('--out', default=None, help=f'{help_text}，缺省写入 MAGFIM_OUTPUT_DIR')

    # 参数转对象
    def layout_from(self, options) -> SensorLayout:
        if options.get('dual_layer'):
            return layout_from_dual_layer(options['layout'], column_axis=options['column_axis'])
        return resolve_layout(options['layout'], column_axis=options['column_axis'])

    def model_from(self, options) -> MagnetModel:
        return MagnetModel(b_t=options['b_t'])

    def noise_from(self, options) -> NoiseModel:
        return NoiseModel(sigma=options['sigma'])

    def workspace_from(self, options, n_samples: int, seed: int) -> WorkspaceSpec:
        return WorkspaceSpec(
            x_range=options['x_range'],
            y_range=options['y_range'],
            z_range=options['z_range'],
            n_samples=n_samples,
            seed=seed,
            theta_margin=options['theta_margin'],
        )

    def threads_from(self, options) -> int:
        return resolve_threads(options.get('threads'))

    def output_path(self, options, default_name: str, key: str = 'out') -> Path:
        if options.get(key):
            return Path(options[key])
        return Path(get_setting('MAGFIM_OUTPUT_DIR')) / default_name

    def write_report(self, path: Path, manifest: RunManifest, payload: Dict[str, Any]) -> Path:
        return write_json(path, manifest.finish(), payload)

    def layout_inputs(self, options) -> List[str]:
        layout = options.get('layout')
        return [layout] if layout and Path(layout).is_file() else []

    # 执行
    def handle(self, *args, **options):
        action = options.get('action')
        parameters = {
            key: _jsonable(value) for key, value in options.items() if key not in DJANGO_OPTIONS
        }
        manifest = RunManifest(
            command=' '.join(part for part in (self.command_name, action) if part),
            parameters=parameters,
            seeds={'seed': options['seed']} if options.get('seed') is not None else {},
        )
        start = time.perf_counter()
        exit_code = 0
        output: Optional[Path] = None
        try:
            manifest.input_digests.update(input_digests(self.input_files(options)))
            output = self.run(action, options, manifest)
        except MagfimError as exc:
            exit_code = exc.exit_code
            logger.error(f"{manifest.command} failed: {exc}")
            raise CommandError(str(exc), returncode=exit_code) from exc
        except ValidationError as exc:
            exit_code = EXIT_USAGE
            raise CommandError(f"invalid parameters: {exc.errors()[0]['msg']}", returncode=exit_code) from exc
        except OSError as exc:
            exit_code = EXIT_IO
            logger.error(f"{manifest.command} failed on file access: {exc}")
            raise CommandError(f"file error: {exc}", returncode=exit_code) from exc
        finally:
            record_run(manifest.finish(), exit_code, output, time.perf_counter() - start)

    def input_files(self, options) -> List[str]:
        return self.layout_inputs(options)

    def run(self, action: Optional[str], options: Dict[str, Any], manifest: RunManifest) -> Optional[Path]:
        raise NotImplementedError

    # 输出
    def print_table(self, header: List[str], rows: List[List[Any]]):
        widths = [max([len(str(h))] + [len(_cell(row[i])) for row in rows]) for i, h in enumerate(header)]
        self.stdout.write('  '.join(str(h).ljust(w) for h, w in zip(header, widths)))
        for row in rows:
            self.stdout.write('  '.join(_cell(value).ljust(w) for value, w in zip(row, widths)))


def _cell(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return f'{value:.4g}'
    return str(value)
