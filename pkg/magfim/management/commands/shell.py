"""
shell optimize：立方壳体上的贪心 + 细化传感器布局
"""

from magfim.conf import get_setting
from magfim.exceptions import InvariantViolation
from magfim.geometry_catalog import build_layout, save_layout
from magfim.observability import sweep_workspace
from magfim.performance import CacheManager
from magfim.shell_placement import (
    DEFAULT_CANDIDATES_PER_FACE,
    DEFAULT_CENTER,
    DEFAULT_EVAL_POSES,
    DEFAULT_SIDE,
    MIN_USEFUL_SENSORS,
    RefineConfig,
    ShellSpec,
    default_poses,
    greedy_place,
    improvement_ratios,
    refine_place,
    relative_profile,
)

from ._common import MagfimCommand, parse_vector, positive_int


class Command(MagfimCommand):
    help = '立方壳体约束下的传感器布局优化（长度单位 m，--sigma 单位 µT，报告界限单位 mm/度）'
    command_name = 'shell'
    actions = ('optimize',)

    def add_options(self, parser):
        self.add_model_options(parser)
        self.add_workspace_options(parser)
        parser.add_argument('--sensors', type=int, default=16, help='传感器数 k（≥ 5），默认 16')
        parser.add_argument('--side', type=float, default=DEFAULT_SIDE, help='壳体边长（m），默认 0.16')
        parser.add_argument(
            '--center', type=parse_vector, default=DEFAULT_CENTER,
            help='壳体中心 x,y,z（m），默认 0,0,0.1',
        )
        parser.add_argument(
            '--candidates-per-face', type=positive_int, default=DEFAULT_CANDIDATES_PER_FACE,
            help='每面候选点数（取 g×g 网格），默认 225',
        )
        parser.add_argument(
            '--poses', type=positive_int, default=DEFAULT_EVAL_POSES,
            help='优化目标使用的 LHS 位姿数，默认 2000',
        )
        parser.add_argument('--seed', type=int, default=0, help='优化位姿的 LHS 种子')
        parser.add_argument('--skip-refine', action='store_true', help='只输出贪心结果')
        parser.add_argument('--max-cycles', type=positive_int, default=10, help='细化最大循环数')
        parser.add_argument(
            '--eval-samples', type=positive_int, default=get_setting('MAGFIM_SWEEP_SAMPLES'),
            help='最终报告与基线比较使用的 LHS 样本数，默认 200000',
        )
        parser.add_argument('--eval-seed', type=int, default=0, help='最终报告的 LHS 种子')
        parser.add_argument('--baseline', default='staggered', help='比较基线布局名称，默认 staggered')
        self.add_output_option(parser, 'PlacementResult JSON 路径')
        parser.add_argument('--layout-out', default=None, help='优化后布局 JSON 路径')

    def run(self, action, options, manifest):
        k = options['sensors']
        if k < MIN_USEFUL_SENSORS:
            raise InvariantViolation(f"--sensors must be >= {MIN_USEFUL_SENSORS}, got {k}")
        shell = ShellSpec(center=options['center'], side=options['side'])
        model = self.model_from(options)
        noise = self.noise_from(options)
        threads = self.threads_from(options)
        workspace = self.workspace_from(options, options['poses'], options['seed'])
        poses = default_poses(options['seed'], options['poses'], workspace)

        greedy = greedy_place(
            shell, k, options['candidates_per_face'], poses, model, noise, seed=options['seed'], threads=threads
        )
        self.stdout.write(f"贪心完成：目标值 {greedy.objective:.4f}")
        result = greedy
        refined = None
        if not options['skip_refine']:
            result = refined = refine_place(
                greedy.layout, shell, poses, model, noise, RefineConfig(max_cycles=options['max_cycles'])
            )
            self.stdout.write(f"细化完成：{result.cycles} 轮，目标值 {result.objective:.4f}")
        manifest.seeds['eval_seed'] = options['eval_seed']

        eval_spec = self.workspace_from(options, options['eval_samples'], options['eval_seed'])
        final = sweep_workspace(result.layout, eval_spec, model, noise, threads=threads)
        result = result.with_report(final)

        baselines = {}
        for name in dict.fromkeys((options['baseline'], 'planar')):
            layout = build_layout(name)
            key = CacheManager.get_cache_key('baseline_sweep', {
                'layout': layout.to_document(),
                'workspace': eval_spec.model_dump(mode='json'),
                'sigma': noise.sigma,
                'b_t': model.b_t,
            })
            baselines[name] = CacheManager.get_or_set_cache(
                key, lambda layout=layout: sweep_workspace(layout, eval_spec, model, noise, threads=threads)
            )
        baseline = baselines[options['baseline']]
        ratios = improvement_ratios(final, baseline)
        self.print_table(
            ['layout', 'mean_pos_mm', 'mean_ori_deg', 'median_lambda_min'],
            [
                [report.layout_name, report.mean('pos_bound_mm'), report.mean('ori_bound_deg'),
                 report.median('lambda_min')]
                for report in (final, baseline)
            ],
        )
        self.stdout.write(
            f"相对 {options['baseline']}：位置界 ×{ratios['pos_bound_mean_ratio']:.3f}，"
            f"方向界 ×{ratios['ori_bound_mean_ratio']:.3f}"
        )

        path = self.output_path(options, f'shell_optimize_k{k}.json')
        layout_path = self.output_path(options, f'{result.layout.name}.json', key='layout_out')
        layout_path.parent.mkdir(parents=True, exist_ok=True)
        save_layout(result.layout, layout_path)
        self.write_report(path, manifest, {
            'result': result.to_document(),
            'greedy_trace': greedy.objective_trace,
            'refine_trace': refined.objective_trace if refined else None,
            'baseline': baseline.model_dump(mode='json'),
            'improvement': ratios,
            'profile_vs_planar': {
                result.layout.name: relative_profile(final, baselines['planar']),
                baseline.layout_name: relative_profile(baseline, baselines['planar']),
            },
            'layout_path': str(layout_path),
        })
        self.stdout.write(self.style.SUCCESS(f'结果已写入 {path}，布局已写入 {layout_path}'))
        return path
