"""
命令行入口

子命令:
    encode  网格 -> HNSC 容器
    decode  HNSC 容器 -> OBJ/PLY 网格
    eval    计算重建网格相对参考网格的 d_pm 与 d_n
    info    查看容器内容
"""

import functools
import json
import sys
import time
from pathlib import Path

import click

from app.presets import PRESET_NAMES, describe_presets
from service.codec import MeshCodec
from service.decoder import decode
from service.trainer import ProgressRecorder
from utils.container import HEADER_SIZE, deserialize
from utils.errors import EXIT_INTERNAL, EXIT_IO, CodecError, FormatError, MeshIOError
from utils.log import get_logger, setup_logging
from utils.metrics import evaluate, format_report
from utils.mesh_io import read_mesh, write_mesh
from utils.settings import CodecSettings, apply_overrides, load_codec_settings

logger = get_logger(__name__)


def _handle_errors(func):
    """把异常映射为退出码：CodecError 用自身退出码，其他异常为 1"""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            return func(*args, **kwargs)
        except CodecError as exc:
            click.echo(f"❌ {exc}", err=True)
            ctx.exit(exc.exit_code)
        except OSError as exc:
            click.echo(f"❌ [io] {exc}", err=True)
            ctx.exit(EXIT_IO)
        except click.exceptions.Exit:
            raise
        except click.ClickException:
            raise
        except Exception as exc:  # noqa: BLE001
            logger.exception("内部错误")
            click.echo(f"❌ 内部错误: {exc}", err=True)
            ctx.exit(EXIT_INTERNAL)

    return wrapper


def _read_model(path: str):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise MeshIOError(f"无法读取模型文件: {path}: {exc}") from exc
    return deserialize(data), len(data)


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="配置文件 (JSON/YAML)，默认 config/codec_settings.json")
@click.option("--log-level", default=None, help="日志级别 (DEBUG/INFO/WARNING/ERROR)")
@click.pass_context
def cli(ctx: click.Context, config_path, log_level):
    """分层神经曲面网格编解码器"""
    setup_logging("INFO", stream=sys.stderr)
    try:
        settings = load_codec_settings(config_path)
    except CodecError as exc:
        click.echo(f"❌ {exc}", err=True)
        ctx.exit(exc.exit_code)
    setup_logging(log_level or settings.log_level, stream=sys.stderr)
    ctx.obj = settings


@cli.command("encode")
@click.argument("input_path", type=click.Path(dir_okay=False))
@click.argument("output_path", type=click.Path(dir_okay=False))
@click.option("--preset", type=click.Choice(PRESET_NAMES), default=None,
              help=f"目标大小预设: {describe_presets()}")
@click.option("--hidden-layers", type=int, default=None, help="q_f 隐藏层数（覆盖预设）")
@click.option("--hidden-width", type=int, default=None, help="q_f 隐藏层宽度（覆盖预设）")
@click.option("--levels", type=int, default=None, help="位置编码级数 L")
@click.option("--coarse-iterations", type=int, default=None)
@click.option("--fine-iterations", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lr", "base_lr", type=float, default=None, help="基础学习率")
@click.option("--seed", type=int, default=None)
@click.option("--table-level", type=int, default=None, help="失真表 icosphere 级数")
@click.option("--area-weighted/--no-area-weighted", "area_weighted_table", default=None,
              help="失真权重是否乘以面面积")
@click.option("--fine-sampling", type=click.Choice(["adaptive", "uniform"]), default=None)
@click.option("--smoothing-iterations", type=int, default=None, help="拉普拉斯平滑次数 c")
@click.option("--smoothing-lambda", type=float, default=None, help="拉普拉斯平滑步长 lambda")
@click.option("--no-quantize", is_flag=True, default=False, help="以 fp32 保存参数")
@click.option("--import-sphere", type=click.Path(dir_okay=False), default=None,
              help="外部球面参数化网格（连接关系须与输入一致）")
@click.option("--progress-file", type=click.Path(dir_okay=False), default=None,
              help="训练进度 JSON 行输出文件，默认标准输出")
@click.option("--save-intermediate", "intermediate_dir", type=click.Path(file_okay=False), default=None,
              help="保存中间网格与失真权重的目录")
@click.option("--workers", type=int, default=None, help="查询线程数（不影响结果）")
@click.pass_obj
@_handle_errors
def cmd_encode(settings: CodecSettings, input_path, output_path, preset, hidden_layers, hidden_width, levels,
               coarse_iterations, fine_iterations, batch_size, base_lr, seed, table_level, area_weighted_table,
               fine_sampling, smoothing_iterations, smoothing_lambda, no_quantize, import_sphere,
               progress_file, intermediate_dir, workers):
    """编码网格为 HNSC 容器"""
    config = apply_overrides(settings.train, {
        "preset": preset,
        "fine_hidden_layers": hidden_layers,
        "fine_hidden_width": hidden_width,
        "positional_levels": levels,
        "coarse_iterations": coarse_iterations,
        "fine_iterations": fine_iterations,
        "batch_size": batch_size,
        "base_lr": base_lr,
        "seed": seed,
        "table_level": table_level,
        "area_weighted_table": area_weighted_table,
        "fine_sampling": fine_sampling,
        "smoothing_iterations": smoothing_iterations,
        "smoothing_lambda": smoothing_lambda,
        "quantize": False if no_quantize else None,
        "workers": workers or settings.workers,
    })

    # 导入参数化要求面列表与输入逐一对应，不能删除退化面
    keep_faces = import_sphere is not None
    mesh = read_mesh(input_path, drop_degenerate=not keep_faces)
    sphere_candidate = read_mesh(import_sphere, drop_degenerate=False) if keep_faces else None

    progress_stream = open(progress_file, "w", encoding="utf-8") if progress_file else sys.stdout
    try:
        progress = ProgressRecorder(progress_stream, config.log_every)
        with MeshCodec(config, settings.param, progress) as codec:
            model = codec.encode_to_file(
                mesh,
                output_path,
                sphere_candidate=sphere_candidate,
                save_intermediate=intermediate_dir is not None,
                intermediate_dir=intermediate_dir,
            )
            timings = dict(codec.timings)
    finally:
        if progress_file:
            progress_stream.close()

    click.echo("-" * 50)
    for stage, seconds in timings.items():
        click.echo(f"⏱️  {stage:<13}: {seconds:.2f}s")
    for stage, loss in progress.final_losses.items():
        click.echo(f"📉 {stage} 最终损失: {loss:.6g}")
    click.echo(f"📦 文件大小: {Path(output_path).stat().st_size} 字节 "
               f"(q_c {model.coarse_payload_bytes} + q_f {model.fine_payload_bytes} + 头 {HEADER_SIZE})")


@cli.command("decode")
@click.argument("model_path", type=click.Path(dir_okay=False))
@click.argument("output_path", type=click.Path(dir_okay=False))
@click.option("--level", "-k", type=int, default=None, help="icosphere 级数")
@click.option("--adaptive/--no-adaptive", default=None, help="按 q_c 像面积自适应细分")
@click.option("--ratio-threshold", type=float, default=None, help="细分面积比阈值")
@click.option("--max-rounds", type=int, default=None, help="最多细分轮数")
@click.option("--coarse-only", is_flag=True, default=False, help="只输出粗糙重建")
@click.option("--ascii", "ascii_ply", is_flag=True, default=False, help="PLY 以 ASCII 写出")
@click.pass_obj
@_handle_errors
def cmd_decode(settings: CodecSettings, model_path, output_path, level, adaptive, ratio_threshold, max_rounds,
               coarse_only, ascii_ply):
    """从 HNSC 容器重建网格"""
    options = apply_overrides(settings.decode, {
        "level": level,
        "adaptive": adaptive,
        "ratio_threshold": ratio_threshold,
        "max_rounds": max_rounds,
    })
    model, _ = _read_model(model_path)
    start = time.perf_counter()
    mesh = decode(
        model,
        options.level,
        adaptive=options.adaptive,
        ratio_threshold=options.ratio_threshold,
        max_rounds=options.max_rounds,
        coarse_only=coarse_only,
    )
    elapsed = time.perf_counter() - start
    write_mesh(mesh, output_path, binary=not ascii_ply)
    click.echo(f"✅ 顶点 {mesh.vertex_count}, 面 {mesh.face_count}, 解码用时 {elapsed:.3f}s")


@cli.command("eval")
@click.argument("recon_path", type=click.Path(dir_okay=False))
@click.argument("reference_path", type=click.Path(dir_okay=False))
@click.option("--samples", "-n", type=int, default=None, help="每个方向的采样数")
@click.option("--seed", type=int, default=None)
@click.option("--direction", type=click.Choice(["recon->ref", "ref->recon", "symmetric"]), default=None)
@click.option("--json-out", type=click.Path(dir_okay=False), default=None, help="追加一行 JSON 评估记录")
@click.option("--workers", type=int, default=None)
@click.pass_obj
@_handle_errors
def cmd_eval(settings: CodecSettings, recon_path, reference_path, samples, seed, direction, json_out, workers):
    """计算 d_pm×10^4 与 d_n"""
    options = apply_overrides(settings.metrics, {"samples": samples, "seed": seed, "direction": direction})
    recon = read_mesh(recon_path)
    reference = read_mesh(reference_path)
    report = evaluate(
        recon,
        reference,
        n=options.samples,
        seed=options.seed,
        direction=options.direction,
        workers=workers or settings.workers,
    )
    click.echo(format_report(report))
    if json_out:
        record = {"recon": str(recon_path), "reference": str(reference_path), **report.to_dict()}
        with open(json_out, "a", encoding="utf-8") as f:
            f.write(json.dumps(record) + "\n")


@cli.command("info")
@click.argument("model_path", type=click.Path(dir_okay=False))
@click.pass_obj
@_handle_errors
def cmd_info(settings: CodecSettings, model_path):
    """查看容器结构与大小"""
    model, size = _read_model(model_path)
    if size != model.total_bytes:
        raise FormatError(f"文件长度 {size} 与模型大小 {model.total_bytes} 不一致")
    for name, mlp in (("q_c", model.coarse), ("q_f", model.fine)):
        arch = mlp.architecture
        click.echo(
            f"{name}: input_dim={arch.input_dim} H={arch.hidden_layers} W={arch.hidden_width} "
            f"L={arch.positional_levels} params={mlp.parameter_count}"
        )
    click.echo(f"quantized: {'yes' if model.quantized else 'no'}")
    click.echo(f"smoothing: c={model.smoothing_iterations} lambda={model.smoothing_lambda:g}")
    click.echo(f"version: {model.version}")
    click.echo(f"payload bytes: q_c={model.coarse_payload_bytes} q_f={model.fine_payload_bytes} "
               f"header={HEADER_SIZE} total={size}")


def main():
    cli(prog_name="hnsc")
