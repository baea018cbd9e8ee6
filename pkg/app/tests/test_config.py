#!/usr/bin/env python3
"""
配置测试脚本
用于验证config.py与流水线参数模型是否正常工作
"""

import unittest
from unittest.mock import patch

from pydantic import ValidationError

from app.core.config import Config, config, _parse_scales
from app.core.models import KernelParams, PipelineConfig, SyntheticSpec


class TestConfig(unittest.TestCase):
    """配置测试类"""

    def test_config_loading(self):
        """测试配置加载"""
        self.assertIsNotNone(config.APP_NAME)
        self.assertIsNotNone(config.VERSION)
        self.assertIsInstance(config.THREADS, int)

    def test_config_validation(self):
        """测试配置验证"""
        self.assertTrue(config.validate_config())

    def test_log_level(self):
        """测试日志级别"""
        self.assertIn(config.LOG_LEVEL, ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'])

    def test_invalid_log_level(self):
        """测试无效日志级别导致验证失败"""
        with patch.object(Config, "LOG_LEVEL", "LOUD"):
            self.assertFalse(Config.validate_config())

    def test_even_smoothing_window_invalid(self):
        """测试偶数平滑窗口导致验证失败"""
        with patch.object(Config, "SMOOTH", 4):
            self.assertFalse(Config.validate_config())

    def test_parse_scales(self):
        """测试尺度列表解析"""
        self.assertEqual(_parse_scales("0.5, 1.0,2.0,"), [0.5, 1.0, 2.0])


class TestPipelineConfig(unittest.TestCase):
    """流水线参数模型测试"""

    def test_defaults(self):
        """测试默认参数"""
        pipeline = PipelineConfig()
        self.assertEqual(pipeline.d, 128)
        self.assertEqual(pipeline.kappa, 65536)
        self.assertEqual(pipeline.tau, 0.0)
        self.assertEqual(pipeline.alpha, 3.0)
        self.assertEqual(pipeline.smooth, 3)
        self.assertEqual(pipeline.topn, 1000)
        self.assertEqual(pipeline.ma_query, 5)
        self.assertEqual(pipeline.scales, [0.25, 0.353, 0.5, 0.707, 1.0, 1.414, 2.0])

    def test_overrides(self):
        """测试命令行覆盖默认值，None 表示不覆盖"""
        pipeline = Config.pipeline(kappa=64, tau=None, ma_query=2)
        self.assertEqual(pipeline.kappa, 64)
        self.assertEqual(pipeline.ma_query, 2)
        self.assertEqual(pipeline.tau, Config.TAU)

    def test_invalid_values(self):
        """测试非法参数"""
        with self.assertRaises(ValidationError):
            PipelineConfig(tau=1.5)
        with self.assertRaises(ValidationError):
            PipelineConfig(smooth=2)
        with self.assertRaises(ValidationError):
            PipelineConfig(scales=[])
        with self.assertRaises(ValidationError):
            PipelineConfig(scales=[1.0, -0.5])
        with self.assertRaises(ValidationError):
            PipelineConfig(seed=2 ** 64)

    def test_small_codebook_with_default_ma(self):
        """测试码本规模小于默认多重分配数时配置仍然有效（只在检索时检查）"""
        pipeline = PipelineConfig(kappa=4, ma_query=5)
        self.assertEqual((pipeline.kappa, pipeline.ma_query), (4, 5))
        self.assertEqual(PipelineConfig(seed=2 ** 64 - 1).seed, 2 ** 64 - 1)

    def test_kernel_params(self):
        """测试核参数派生"""
        params = PipelineConfig(d=20, alpha=2.0, tau=0.25).kernel_params()
        self.assertEqual(params, KernelParams(alpha=2.0, tau=0.25, d=20))
        self.assertEqual(params.n_bytes, 3)

    def test_models_are_frozen(self):
        """测试模型不可变"""
        params = KernelParams()
        with self.assertRaises(ValidationError):
            params.alpha = 1.0

    def test_synthetic_spec(self):
        """测试合成数据规格"""
        spec = SyntheticSpec(n_images=10, descriptors_per_image=5, dim=4, n_objects=3)
        self.assertEqual(spec.query_count, 3)
        self.assertEqual(SyntheticSpec(n_images=10, descriptors_per_image=5, dim=4, n_objects=3,
                                       n_queries=7).query_count, 7)
        with self.assertRaises(ValidationError):
            SyntheticSpec(n_images=10, descriptors_per_image=5, dim=4, n_objects=3, burst_factor=0)


if __name__ == '__main__':
    unittest.main()
