"""
网格编码流程

实现从输入网格到 HNSC 容器的完整编码流程:
1. 归一化 - 删除退化面，检查水密零亏格，缩放到包围盒对角线为 1
2. 球面参数化 - 平滑-投影得到 M_s（或导入外部参数化）
3. 拉普拉斯平滑 - 生成粗糙网格 M_c
4. 粗糙网络训练 - q_c 拟合 P_c^-1
5. 失真表 - 在 icosphere 面中心计算 q_c 的失真比
6. 精细网络训练 - q_f 拟合位移，q_c 冻结
7. 组装 - 可选 fp16 量化，写出容器

任一步骤抛出的 CodecError 都会带上该步骤的名称。
"""

import os
import shutil
import tempfile
import time
from pathlib import Path
from typing import Callable, Dict, Optional

import numpy as np

from service.trainer import ProgressRecorder, train_coarse, train_fine
from utils.container import CompressedModel, quantize_model, serialize
from utils.distortion import DistortionTable
from utils.errors import CodecError
from utils.log import get_logger
from utils.mesh_core import TriangleMesh, drop_degenerate_faces, normalize_mesh
from utils.mesh_io import write_mesh
from utils.nn import Mlp
from utils.settings import ParameterizationOptions, TrainConfig
from utils.spherical_param import (
    ParameterizedShape,
    SphereLocator,
    build_shape,
    import_parameterization,
    require_sphere_topology,
    spherical_parameterize,
)

logger = get_logger(__name__)


class MeshCodec:
    """网格编码器"""

    def __init__(
        self,
        config: Optional[TrainConfig] = None,
        param_options: Optional[ParameterizationOptions] = None,
        progress: Optional[ProgressRecorder] = None,
    ):
        self.config = config or TrainConfig()
        self.param_options = param_options or ParameterizationOptions()
        self.progress = progress
        self.temp_dir: Optional[str] = None
        self.save_intermediate_files = False
        self.intermediate_dir: Optional[Path] = None
        self.intermediate_files: Dict[str, Path] = {}
        self.timings: Dict[str, float] = {}
        self.scale = 1.0
        self.offset = np.zeros(3)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.cleanup()

    def cleanup(self):
        """清理临时文件"""
        if self.temp_dir and os.path.exists(self.temp_dir):
            shutil.rmtree(self.temp_dir, ignore_errors=True)
        self.temp_dir = None

    def _run_step(self, stage: str, title: str, fn: Callable, *args):
        logger.info(f"{title}")
        start = time.perf_counter()
        try:
            result = fn(*args)
        except CodecError as exc:
            if exc.stage is None:
                exc.stage = stage
            logger.error(f"❌ {title} 失败: {exc.message}")
            raise
        self.timings[stage] = time.perf_counter() - start
        logger.info(f"✅ {title} 完成，用时 {self.timings[stage]:.2f}s")
        return result

    def _save_intermediate_mesh(self, mesh: TriangleMesh, name: str) -> None:
        if not self.save_intermediate_files or self.intermediate_dir is None:
            return
        path = self.intermediate_dir / f"{name}.obj"
        write_mesh(mesh, path)
        self.intermediate_files[name] = path
        logger.info(f"💾 中间文件已保存: {path}")

    # ---- 步骤 ----

    def step1_normalize(self, mesh: TriangleMesh, keep_faces: bool = False) -> TriangleMesh:
        if not keep_faces:
            mesh, _ = drop_degenerate_faces(mesh)
        require_sphere_topology(mesh)
        normalized, self.scale, self.offset = normalize_mesh(mesh)
        logger.info(f"   顶点 {normalized.vertex_count}, 面 {normalized.face_count}, 缩放 {self.scale:.6g}")
        self._save_intermediate_mesh(normalized, "step1_normalized")
        return normalized

    def step2_parameterize(self, mesh: TriangleMesh, sphere_candidate: Optional[TriangleMesh] = None) -> TriangleMesh:
        if sphere_candidate is not None:
            logger.info("   使用导入的球面参数化")
            sphere = import_parameterization(mesh, sphere_candidate)
        else:
            sphere = spherical_parameterize(mesh, self.param_options)
        self._save_intermediate_mesh(sphere, "step2_sphere")
        return sphere

    def step3_smooth(self, mesh: TriangleMesh, sphere: TriangleMesh) -> ParameterizedShape:
        shape = build_shape(mesh, sphere, self.config.smoothing_iterations, self.config.smoothing_lambda)
        self._save_intermediate_mesh(shape.coarse, "step3_coarse")
        return shape

    def step4_train_coarse(self, shape: ParameterizedShape) -> Mlp:
        return train_coarse(shape, self.config, self.progress)

    def step5_distortion_table(self, q_c: Mlp) -> Optional[DistortionTable]:
        if self.config.fine_sampling == "uniform":
            logger.info("   均匀采样模式，跳过失真表")
            return None
        table = DistortionTable.build(q_c, self.config.table_level, self.config.area_weighted_table)
        if self.save_intermediate_files and self.intermediate_dir is not None:
            path = self.intermediate_dir / "step5_distortion_weights.npy"
            np.save(path, table.weights)
            self.intermediate_files["step5_distortion_weights"] = path
            logger.info(f"💾 中间文件已保存: {path}")
        return table

    def step6_train_fine(self, shape: ParameterizedShape, q_c: Mlp, table: Optional[DistortionTable]) -> Mlp:
        locator = SphereLocator.build(shape.sphere)
        return train_fine(shape, q_c, table, locator, self.config, self.progress)

    def step7_assemble(self, q_c: Mlp, q_f: Mlp) -> CompressedModel:
        model = CompressedModel(
            coarse=q_c,
            fine=q_f,
            quantized=False,
            smoothing_iterations=self.config.smoothing_iterations,
            smoothing_lambda=self.config.smoothing_lambda,
            scale=self.scale,
            offset=self.offset,
        )
        if self.config.quantize:
            model = quantize_model(model)
        logger.info(f"   量化: {'fp16' if model.quantized else 'fp32'}, 总大小 {model.total_bytes} 字节")
        return model

    # ---- 完整流程 ----

    def encode(
        self,
        mesh: TriangleMesh,
        sphere_candidate: Optional[TriangleMesh] = None,
        save_intermediate: bool = False,
        intermediate_dir: Optional[str] = None,
    ) -> CompressedModel:
        """
        完整编码流程

        Args:
            mesh: 水密零亏格输入网格
            sphere_candidate: 外部球面参数化（可选，连接关系须与 mesh 一致）
            save_intermediate: 是否保存中间文件
            intermediate_dir: 中间文件目录

        Returns:
            CompressedModel: 可直接序列化的模型
        """
        self.save_intermediate_files = save_intermediate
        if save_intermediate:
            self.intermediate_dir = Path(intermediate_dir or tempfile.mkdtemp(prefix="hnsc_intermediate_"))
            self.intermediate_dir.mkdir(parents=True, exist_ok=True)
            logger.info(f"📂 中间文件目录: {self.intermediate_dir}")

        start = time.perf_counter()
        logger.info("🚀 开始编码")
        logger.info("=" * 60)

        normalized = self._run_step(
            "normalize", "步骤1: 归一化与拓扑检查", self.step1_normalize, mesh, sphere_candidate is not None
        )
        sphere = self._run_step(
            "parameterize", "步骤2: 球面参数化", self.step2_parameterize, normalized, sphere_candidate
        )
        shape = self._run_step("smooth", "步骤3: 拉普拉斯平滑", self.step3_smooth, normalized, sphere)
        q_c = self._run_step("train_coarse", "步骤4: 训练粗糙网络", self.step4_train_coarse, shape)
        table = self._run_step("distortion", "步骤5: 计算失真表", self.step5_distortion_table, q_c)
        q_f = self._run_step("train_fine", "步骤6: 训练精细网络", self.step6_train_fine, shape, q_c, table)
        model = self._run_step("assemble", "步骤7: 组装压缩模型", self.step7_assemble, q_c, q_f)

        logger.info("=" * 60)
        logger.info(f"🎉 编码完成，总用时 {time.perf_counter() - start:.2f}s")
        return model

    def encode_to_file(self, mesh: TriangleMesh, output_file: str, **kwargs) -> CompressedModel:
        """编码并写出容器；先写入临时目录再移动到目标路径"""
        model = self.encode(mesh, **kwargs)
        self.temp_dir = tempfile.mkdtemp(prefix="hnsc_encode_")
        temp_path = Path(self.temp_dir) / "model.hnsc"
        temp_path.write_bytes(serialize(model))
        output = Path(output_file)
        if output.parent and not output.parent.exists():
            output.parent.mkdir(parents=True, exist_ok=True)
        shutil.move(str(temp_path), str(output))
        logger.info(f"💾 已写出 {output} ({output.stat().st_size} 字节)")
        return model


def encode(
    mesh: TriangleMesh,
    config: Optional[TrainConfig] = None,
    param_options: Optional[ParameterizationOptions] = None,
    sphere_candidate: Optional[TriangleMesh] = None,
    progress: Optional[ProgressRecorder] = None,
) -> CompressedModel:
    with MeshCodec(config, param_options, progress) as codec:
        return codec.encode(mesh, sphere_candidate=sphere_candidate)
