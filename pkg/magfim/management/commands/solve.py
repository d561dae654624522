"""
solve：对数据集中的一条记录运行一次 LM 求解
"""

import math

import numpy as np

from magfim.dataset_gen import read_binary, read_csv
from magfim.exceptions import InvariantViolation
from magfim.lm_solver import DEFAULT_DN, DEFAULT_DP, LmConfig, LmState6, lm_solve, perturbed_init
from magfim.mc_eval import e_ori, e_pos

from ._common import MagfimCommand, parse_vector, positive_int


class Command(MagfimCommand):
    help = '单条记录的 Levenberg-Marquardt 位姿求解（长度单位 m，磁场单位 µT，误差单位 mm/度）'
    command_name = 'solve'

    def add_options(self, parser):
        parser.add_argument('input', help='数据集文件（dataset gen 生成的 CSV，或 .magd 二进制）')
        parser.add_argument('--row', type=int, default=0, help='记录序号（从 0 开始）')
        self.add_layout_options(parser)
        self.add_model_options(parser, sigma=False)
        parser.add_argument('--dp', type=float, default=DEFAULT_DP, help='初值位置扰动（m），默认 0.02')
        parser.add_argument('--dn', type=float, default=DEFAULT_DN, help='初值方向向量扰动，默认 0.3')
        parser.add_argument('--init-p', type=parse_vector, default=None, help='显式初始位置 x,y,z（m）')
        parser.add_argument('--init-n', type=parse_vector, default=None, help='显式初始方向向量 x,y,z')
        parser.add_argument('--max-iters', type=positive_int, default=100, help='最大迭代次数')
        parser.add_argument('--use-sat-mask', action='store_true', help='剔除饱和通道')
        self.add_output_option(parser, '求解结果 JSON 路径（可选）')

    def input_files(self, options):
        return [options['input'], *self.layout_inputs(options)]

    def run(self, action, options, manifest):
        path = options['input']
        records = read_binary(path) if str(path).endswith('.magd') else read_csv(path)
        row = options['row']
        if not 0 <= row < len(records):
            raise InvariantViolation(f"--row {row} out of range, file has {len(records)} records")
        record = records[row]
        layout = self.layout_from(options)
        model = self.model_from(options)

        if options['init_p'] is not None or options['init_n'] is not None:
            fallback = perturbed_init(record.pose, options['dp'], options['dn'])
            init = LmState6(
                p=options['init_p'] if options['init_p'] is not None else fallback.p,
                m=options['init_n'] if options['init_n'] is not None else fallback.m,
            )
        else:
            init = perturbed_init(record.pose, options['dp'], options['dn'])
        config = LmConfig(max_iters=options['max_iters'], use_sat_mask=options['use_sat_mask'])
        estimate = lm_solve(record.fields, layout, model, init, config)

        pos_error = e_pos(estimate.p_hat, record.pose.p)
        ori_error = e_ori(estimate.n_hat, record.n)
        self.print_table(
            ['', 'x', 'y', 'z'],
            [
                ['p_true_mm', *(record.pose.p * 1000.0)],
                ['p_hat_mm', *(estimate.p_hat * 1000.0)],
                ['n_true', *record.n],
                ['n_hat', *estimate.n_hat],
            ],
        )
        status = self.style.SUCCESS('converged') if estimate.converged else self.style.WARNING('not converged')
        self.stdout.write(
            f"{status}: {estimate.iters} 次迭代，残差 RMS {estimate.residual_rms:.4g} µT，"
            f"E_pos {pos_error:.6g} mm，E_ori {ori_error:.6g} 度，饱和通道 {int(np.sum(record.sat_mask))}"
        )
        if not options.get('out'):
            return None
        out = self.output_path(options, 'solve.json')
        self.write_report(out, manifest, {
            'row': row,
            'truth': {'p_m': record.pose.p.tolist(), 'n': record.n.tolist()},
            'init': {'p_m': init.p.tolist(), 'm': init.m.tolist()},
            'estimate': {
                'p_m': estimate.p_hat.tolist(),
                'n': estimate.n_hat.tolist(),
                'residual_rms_ut': estimate.residual_rms,
                'iters': estimate.iters,
                'converged': estimate.converged,
                'wall_time_ms': estimate.wall_time * 1000.0,
            },
            'e_pos_mm': pos_error,
            'e_ori_deg': ori_error if math.isfinite(ori_error) else None,
        })
        return out
