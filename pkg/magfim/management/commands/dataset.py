"""
dataset gen：生成带截断与噪声的仿真数据集（CSV 或二进制）
"""

from magfim.conf import get_setting
from magfim.dataset_gen import DATASET_WORKSPACE, DatasetSpec, GenerationStats, NoiseMode, generate, write_binary, write_csv

from ._common import MagfimCommand, parse_clip, positive_int


class Command(MagfimCommand):
    help = '仿真数据集生成（长度单位 m，磁场与截断阈值单位 µT）'
    command_name = 'dataset'
    actions = ('gen',)

    def add_options(self, parser):
        self.add_layout_options(parser)
        self.add_model_options(parser, sigma=False)
        self.add_workspace_options(parser, z_range=DATASET_WORKSPACE.z_range)
        parser.add_argument('--count', type=positive_int, default=100000, help='样本数，默认 100000')
        parser.add_argument('--seed', type=int, default=0, help='随机种子（位姿采样与噪声）')
        parser.add_argument(
            '--noise', type=NoiseMode.parse, default=NoiseMode(),
            help="噪声：none | absolute:<µT> | relative:<比例>，如 relative:0.02 表示信号幅值的 2%%",
        )
        parser.add_argument(
            '--clip', type=parse_clip, default=get_setting('MAGFIM_B_CLIP_UT'),
            help="饱和阈值（µT），默认 1900；none 表示不截断",
        )
        parser.add_argument('--noise-before-clip', action='store_true', help='先加噪声再截断')
        parser.add_argument('--format', choices=('csv', 'binary'), default='csv', help='输出格式')
        self.add_output_option(parser, '数据集文件路径')

    def run(self, action, options, manifest):
        layout = self.layout_from(options)
        spec = DatasetSpec(
            workspace=self.workspace_from(options, options['count'], options['seed']),
            layout=layout,
            model=self.model_from(options),
            b_clip=options['clip'],
            noise_mode=options['noise'],
            count=options['count'],
            seed=options['seed'],
            clip_before_noise=not options['noise_before_clip'],
        )
        suffix = 'csv' if options['format'] == 'csv' else 'magd'
        path = self.output_path(options, f'dataset_{layout.name}.{suffix}')
        path.parent.mkdir(parents=True, exist_ok=True)

        stats = GenerationStats()
        writer = write_csv if options['format'] == 'csv' else write_binary
        count = writer(generate(spec, stats), path)
        self.stdout.write(self.style.SUCCESS(
            f'{count} 条样本（{layout.n_sensors} 个传感器，重采样 {stats.n_resampled} 次）已写入 {path}'
        ))
        return path
