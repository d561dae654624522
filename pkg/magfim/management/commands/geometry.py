"""
geometry eval|show

eval：对布局做 LHS 工作空间 CRLB 扫描，打印中位数表并写出 SweepReport JSON
show：打印传感器坐标（mm），可导出布局 JSON
"""

from magfim.conf import get_setting
from magfim.geometry_catalog import save_layout
from magfim.observability import METRIC_NAMES, sweep_workspace

from ._common import MagfimCommand, positive_int


class Command(MagfimCommand):
    help = '传感器几何的 Fisher 信息/CRLB 评估（长度单位 m，--sigma 单位 µT，报告界限单位 mm/度）'
    command_name = 'geometry'
    actions = ('eval', 'show')

    def add_options(self, parser):
        self.add_layout_options(parser)
        self.add_model_options(parser)
        self.add_workspace_options(parser)
        parser.add_argument(
            '--samples', type=positive_int, default=get_setting('MAGFIM_SWEEP_SAMPLES'),
            help='LHS 样本数，默认 200000',
        )
        parser.add_argument('--seed', type=int, default=0, help='LHS 随机种子')
        self.add_output_option(parser, 'eval：SweepReport JSON 路径；show：布局 JSON 导出路径')

    def run(self, action, options, manifest):
        layout = self.layout_from(options)
        if action == 'show':
            return self.show(layout, options)

        spec = self.workspace_from(options, options['samples'], options['seed'])
        report = sweep_workspace(
            layout, spec, self.model_from(options), self.noise_from(options), threads=self.threads_from(options)
        )
        self.stdout.write(
            f"布局 '{layout.name}'：{report.n_valid}/{report.n_samples} 个有效位姿，"
            f"{report.n_degenerate} 个奇异"
        )
        self.print_table(
            ['metric', 'median', 'mean', 'p5', 'p95'],
            [
                [name, report.metrics[name].median, report.metrics[name].mean,
                 report.metrics[name].p5, report.metrics[name].p95]
                for name in METRIC_NAMES
            ],
        )
        path = self.output_path(options, f'geometry_eval_{layout.name}.json')
        self.write_report(path, manifest, {'report': report.model_dump(mode='json')})
        self.stdout.write(self.style.SUCCESS(f'报告已写入 {path}'))
        return path

    def show(self, layout, options):
        self.stdout.write(f"布局 '{layout.name}'：{layout.n_sensors} 个传感器，高度 {[round(z * 1000, 3) for z in layout.z_levels]} mm")
        self.print_table(
            ['#', 'x_mm', 'y_mm', 'z_mm'],
            [[i, *(round(float(c) * 1000.0, 6) for c in position)] for i, position in enumerate(layout.positions)],
        )
        if not options.get('out'):
            return None
        path = self.output_path(options, f'{layout.name}.json')
        path.parent.mkdir(parents=True, exist_ok=True)
        save_layout(layout, path)
        self.stdout.write(self.style.SUCCESS(f'布局已导出到 {path}'))
        return path
