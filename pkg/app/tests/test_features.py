#!/usr/bin/env python3
"""
局部描述子后处理测试
"""

import unittest

import numpy as np

from app.core.exceptions import FeatureMapError, WhiteningError
from app.services.features import (
    DenseFeatureMap,
    LocalDescriptorSet,
    WhiteningTransform,
    apply_whitening,
    attention_map,
    extract_multiscale,
    extract_single_scale,
    fit_whitening,
    how_pool,
    identity_whitening,
    local_smooth,
    merge_multiscale,
    multiscale_global,
    spoc_pool,
)


def naive_smooth(data: np.ndarray, window: int) -> np.ndarray:
    """逐位置平均窗口内的有效邻居"""
    height, width, _ = data.shape
    half = window // 2
    out = np.zeros_like(data)
    for y in range(height):
        for x in range(width):
            block = data[max(0, y - half):y + half + 1, max(0, x - half):x + half + 1]
            out[y, x] = block.reshape(-1, data.shape[2]).mean(axis=0)
    return out


def random_transform(rng, input_dim: int, output_dim: int) -> WhiteningTransform:
    return WhiteningTransform(rng.standard_normal((output_dim, input_dim)), rng.standard_normal(input_dim))


class TestDenseFeatureMap(unittest.TestCase):
    """特征图类型测试"""

    def test_rejects_negative_activations(self):
        """测试负激活值被拒绝，除非显式允许"""
        data = np.ones((2, 2, 3))
        data[1, 1, 2] = -0.5
        with self.assertRaises(FeatureMapError):
            DenseFeatureMap(data)
        self.assertEqual(DenseFeatureMap(data, allow_negative=True).depth, 3)

    def test_from_flat_layout(self):
        """测试行优先 (y, x, channel) 布局"""
        values = np.arange(2 * 3 * 4, dtype=float)
        fmap = DenseFeatureMap.from_flat(3, 2, 4, values)
        self.assertEqual((fmap.width, fmap.height, fmap.depth), (3, 2, 4))
        np.testing.assert_array_equal(fmap.data[1, 2], values[(1 * 3 + 2) * 4:(1 * 3 + 2) * 4 + 4])
        with self.assertRaises(FeatureMapError):
            DenseFeatureMap.from_flat(3, 2, 4, values[:-1])

    def test_invalid_scale(self):
        """测试非正尺度因子"""
        with self.assertRaises(FeatureMapError):
            DenseFeatureMap(np.ones((1, 1, 1)), scale_factor=0.0)


class TestAttentionAndSmoothing(unittest.TestCase):
    """注意力与局部平滑测试"""

    def setUp(self):
        self.rng = np.random.default_rng(7)

    def test_attention_pythagorean(self):
        """测试 (3, 4) 的范数为 5"""
        fmap = DenseFeatureMap(np.array([[[3.0, 4.0]]]))
        self.assertEqual(attention_map(fmap)[0, 0], 5.0)

    def test_attention_zero_map(self):
        """测试全零特征图"""
        np.testing.assert_array_equal(attention_map(DenseFeatureMap(np.zeros((3, 2, 4)))), np.zeros((3, 2)))

    def test_attention_matches_elementwise_oracle(self):
        """测试与逐元素计算一致"""
        data = self.rng.uniform(0, 2, (4, 4, 8))
        result = attention_map(DenseFeatureMap(data))
        for y in range(4):
            for x in range(4):
                self.assertAlmostEqual(result[y, x], np.sqrt(sum(v * v for v in data[y, x])), places=12)

    def test_smooth_identity_window(self):
        """测试 M=1 为恒等变换"""
        data = self.rng.uniform(0, 1, (5, 4, 3))
        np.testing.assert_array_equal(local_smooth(DenseFeatureMap(data), 1).data, data)

    def test_smooth_constant_map(self):
        """测试常数图平滑后不变"""
        data = np.full((6, 5, 2), 0.7)
        np.testing.assert_allclose(local_smooth(DenseFeatureMap(data), 3).data, data, rtol=0, atol=1e-15)

    def test_smooth_impulse(self):
        """测试中心脉冲：中心 9 个位置为 1/9，其余为 0"""
        data = np.zeros((5, 5, 1))
        data[2, 2, 0] = 1.0
        smoothed = local_smooth(DenseFeatureMap(data), 3).data[:, :, 0]
        expected = np.zeros((5, 5))
        expected[1:4, 1:4] = 1.0 / 9.0
        np.testing.assert_allclose(smoothed, expected, rtol=0, atol=1e-15)

    def test_smooth_border_policy(self):
        """测试边界只对有效邻居取平均"""
        data = self.rng.uniform(0, 3, (6, 7, 4))
        for window in (3, 5):
            np.testing.assert_allclose(local_smooth(DenseFeatureMap(data), window).data,
                                       naive_smooth(data, window), rtol=0, atol=1e-12)

    def test_smooth_range(self):
        """测试平滑保持非负且不超过每通道最大值"""
        data = self.rng.exponential(1.0, (8, 8, 5))
        smoothed = local_smooth(DenseFeatureMap(data), 3).data
        self.assertTrue(np.all(smoothed >= 0))
        self.assertTrue(np.all(smoothed <= data.max(axis=(0, 1))))

    def test_smooth_even_window_rejected(self):
        """测试偶数窗口被拒绝"""
        with self.assertRaises(FeatureMapError):
            local_smooth(DenseFeatureMap(np.ones((3, 3, 1))), 2)


class TestWhitening(unittest.TestCase):
    """白化测试"""

    def setUp(self):
        self.rng = np.random.default_rng(11)
        mixing = self.rng.standard_normal((8, 8))
        self.sample = self.rng.standard_normal((600, 8)) @ mixing + self.rng.uniform(-2, 2, 8)

    def _covariance(self, vectors):
        centered = vectors - vectors.mean(axis=0)
        return centered.T @ centered / vectors.shape[0]

    def test_whitened_sample_is_decorrelated(self):
        """测试 eps=0 时白化样本协方差为单位阵"""
        transform = fit_whitening(self.sample, 8, eps=0.0)
        whitened = apply_whitening(transform, self.sample)
        covariance = self._covariance(whitened)
        off_diagonal = covariance - np.diag(np.diag(covariance))
        self.assertLess(np.abs(off_diagonal).max(), 1e-6)
        np.testing.assert_allclose(np.diag(covariance), np.ones(8), rtol=0, atol=1e-6)
        np.testing.assert_allclose(whitened.mean(axis=0), np.zeros(8), rtol=0, atol=1e-6)

    def test_regularized_diagonal(self):
        """测试带正则项时对角线为 lambda / (lambda + eps)"""
        eps = 0.5
        transform = fit_whitening(self.sample, 5, eps=eps)
        covariance = self._covariance(apply_whitening(transform, self.sample))
        eigvals = np.sort(np.linalg.eigvalsh(self._covariance(self.sample)))[::-1][:5]
        np.testing.assert_allclose(np.diag(covariance), eigvals / (eigvals + eps), rtol=0, atol=1e-6)
        off_diagonal = covariance - np.diag(np.diag(covariance))
        self.assertLess(np.abs(off_diagonal).max(), 1e-6)

    def test_dominant_direction(self):
        """测试二维相关高斯样本 d=1 时投影方向为主特征向量"""
        sample = self.rng.multivariate_normal([0, 0], [[3.0, 1.2], [1.2, 1.0]], size=2000)
        transform = fit_whitening(sample, 1)
        eigvals, eigvecs = np.linalg.eig(self._covariance(sample))
        dominant = eigvecs[:, np.argmax(eigvals)]
        row = transform.projection[0]
        cosine = abs(row @ dominant) / np.linalg.norm(row) / np.linalg.norm(dominant)
        self.assertLess(np.arccos(min(1.0, cosine)), 1e-4)

    def test_sign_convention(self):
        """测试每个主方向绝对值最大的分量为正"""
        transform = fit_whitening(self.sample, 6)
        pivots = np.argmax(np.abs(transform.projection), axis=1)
        self.assertTrue(np.all(transform.projection[np.arange(6), pivots] > 0))

    def test_rank_deficient_sample(self):
        """测试秩不足的样本报错并给出秩"""
        basis = self.rng.standard_normal((2, 4))
        sample = self.rng.standard_normal((50, 2)) @ basis
        with self.assertRaises(WhiteningError) as ctx:
            fit_whitening(sample, 3)
        self.assertIn("rank 2", str(ctx.exception))

    def test_sample_too_small(self):
        """测试样本数不超过维度时报错"""
        with self.assertRaises(WhiteningError):
            fit_whitening(self.sample[:8], 4)
        with self.assertRaises(WhiteningError):
            fit_whitening(self.sample, 9)

    def test_apply_whitening(self):
        """测试 P(u - m) 的计算"""
        transform = random_transform(self.rng, 6, 3)
        u = self.rng.standard_normal(6)
        np.testing.assert_array_equal(apply_whitening(transform, transform.mean), np.zeros(3))
        expected = [sum(transform.projection[i, j] * (u[j] - transform.mean[j]) for j in range(6)) for i in range(3)]
        np.testing.assert_allclose(apply_whitening(transform, u), expected, rtol=0, atol=1e-12)
        np.testing.assert_array_equal(apply_whitening(identity_whitening(6), u), u)
        with self.assertRaises(WhiteningError):
            apply_whitening(transform, np.ones(5))


class TestExtraction(unittest.TestCase):
    """描述子提取测试"""

    def setUp(self):
        self.rng = np.random.default_rng(3)
        self.transform = random_transform(self.rng, 8, 4)

    def test_single_scale_composition(self):
        """测试单尺度提取等于依次组合三个操作"""
        fmap = DenseFeatureMap(self.rng.uniform(0, 1, (4, 4, 8)), scale_factor=0.5)
        descriptors = extract_single_scale(fmap, self.transform, 3)
        self.assertEqual(len(descriptors), 16)
        smoothed = naive_smooth(fmap.data, 3)
        for item in descriptors:
            raw = fmap.data[item.grid_y, item.grid_x]
            self.assertAlmostEqual(item.strength, np.linalg.norm(raw), places=12)
            expected = self.transform.projection @ (smoothed[item.grid_y, item.grid_x] - self.transform.mean)
            np.testing.assert_allclose(item.vector, expected, rtol=0, atol=1e-10)
            self.assertEqual(item.source_scale, 0.5)

    def test_single_location(self):
        """测试 1x1 特征图"""
        u = np.array([1.0, 2.0, 0.0, 3.0, 0.5, 0.0, 1.0, 2.0])
        descriptors = list(extract_single_scale(DenseFeatureMap(u.reshape(1, 1, 8)), self.transform, 3))
        self.assertEqual(len(descriptors), 1)
        self.assertAlmostEqual(descriptors[0].strength, np.linalg.norm(u), places=12)
        np.testing.assert_allclose(descriptors[0].vector, apply_whitening(self.transform, u), rtol=0, atol=1e-12)

    def test_zero_map_strengths(self):
        """测试全零图的强度全为零"""
        descriptors = extract_single_scale(DenseFeatureMap(np.zeros((3, 3, 8))), self.transform, 3)
        np.testing.assert_array_equal(descriptors.strengths, np.zeros(9))

    def test_strength_independent_of_whitening(self):
        """测试强度与白化参数无关"""
        fmap = DenseFeatureMap(self.rng.uniform(0, 1, (3, 5, 8)))
        other = random_transform(self.rng, 8, 2)
        np.testing.assert_array_equal(extract_single_scale(fmap, self.transform, 3).strengths,
                                      extract_single_scale(fmap, other, 1).strengths)

    def test_depth_mismatch(self):
        """测试特征图深度与白化输入维度不一致"""
        with self.assertRaises(FeatureMapError):
            extract_single_scale(DenseFeatureMap(np.ones((2, 2, 5))), self.transform, 3)

    def test_identity_whitening_raw_activations(self):
        """测试恒等白化且 M=1 时退化为按范数排序的原始激活"""
        data = self.rng.uniform(0, 1, (3, 3, 8))
        merged = extract_multiscale([DenseFeatureMap(data)], identity_whitening(8), 1, 4)
        norms = np.linalg.norm(data.reshape(-1, 8), axis=1)
        order = np.argsort(-norms)[:4]
        np.testing.assert_array_equal(merged.vectors, data.reshape(-1, 8)[order])


class TestMergeMultiscale(unittest.TestCase):
    """多尺度合并测试"""

    def _set(self, strengths, scale, dim=2):
        n = len(strengths)
        return LocalDescriptorSet(np.arange(n * dim, dtype=float).reshape(n, dim) + scale, strengths,
                                  np.full(n, scale), np.arange(n), np.zeros(n, np.int64))

    def test_keeps_strongest(self):
        """测试强度 {5,1} 与 {3} 取 n=2 时保留 5 和 3"""
        merged = merge_multiscale([self._set([5.0, 1.0], 1.0), self._set([3.0], 0.5)], 2)
        self.assertEqual(merged.strengths.tolist(), [5.0, 3.0])
        self.assertEqual(merged.scales.tolist(), [1.0, 0.5])

    def test_fewer_than_n(self):
        """测试描述子少于 n 时全部保留并排序"""
        merged = merge_multiscale([self._set([1.0, 4.0, 2.0], 1.0)], 10, "img")
        self.assertEqual(merged.strengths.tolist(), [4.0, 2.0, 1.0])
        self.assertEqual(merged.image_id, "img")

    def test_tie_break(self):
        """测试同强度时按尺度、行、列升序"""
        vectors = np.eye(4)
        a = LocalDescriptorSet(vectors[:2], [1.0, 1.0], [2.0, 2.0], [1, 0], [0, 0])
        b = LocalDescriptorSet(vectors[2:], [1.0, 1.0], [0.5, 0.5], [0, 0], [1, 0])
        merged = merge_multiscale([a, b], 4)
        self.assertEqual(list(zip(merged.scales.tolist(), merged.grid_y.tolist(), merged.grid_x.tolist())),
                         [(0.5, 0, 0), (0.5, 1, 0), (2.0, 0, 0), (2.0, 0, 1)])

    def test_matches_reference_sort(self):
        """测试七个尺度随机强度与参考排序一致"""
        rng = np.random.default_rng(5)
        scales = [0.25, 0.353, 0.5, 0.707, 1.0, 1.414, 2.0]
        parts = [self._set(rng.integers(0, 50, 300).astype(float), scale) for scale in scales]
        merged = merge_multiscale(parts, 1000)
        rows = [(-s, sc, gy, gx) for part in parts
                for s, sc, gy, gx in zip(part.strengths, part.scales, part.grid_y, part.grid_x)]
        expected = sorted(rows)[:1000]
        actual = list(zip(-merged.strengths, merged.scales, merged.grid_y, merged.grid_x))
        self.assertEqual(actual, expected)
        again = merge_multiscale(parts, 1000)
        np.testing.assert_array_equal(again.vectors, merged.vectors)

    def test_empty_input(self):
        """测试空输入得到空集合"""
        self.assertEqual(len(merge_multiscale([], 5)), 0)
        with self.assertRaises(FeatureMapError):
            merge_multiscale([], 0)

    def test_parallel_extraction_is_identical(self):
        """测试线程池提取结果与串行一致"""
        rng = np.random.default_rng(9)
        transform = random_transform(rng, 6, 3)
        maps = [DenseFeatureMap(rng.uniform(0, 1, (h, h, 6)), scale) for h, scale in ((3, 0.5), (5, 1.0), (7, 2.0))]
        serial = extract_multiscale(maps, transform, 3, 20, "x", workers=1)
        parallel = extract_multiscale(maps, transform, 3, 20, "x", workers=3)
        np.testing.assert_array_equal(serial.vectors, parallel.vectors)
        np.testing.assert_array_equal(serial.strengths, parallel.strengths)


class TestGlobalDescriptors(unittest.TestCase):
    """全局描述子测试"""

    def setUp(self):
        self.rng = np.random.default_rng(21)

    def test_spoc_single_location(self):
        """测试单位置 SPoC"""
        u = np.array([1.0, 2.0, 2.0])
        np.testing.assert_allclose(spoc_pool(DenseFeatureMap(u.reshape(1, 1, 3))).vector, u / 3.0)

    def test_spoc_repeated_location(self):
        """测试重复位置保持方向"""
        u = np.array([0.5, 1.5])
        np.testing.assert_allclose(spoc_pool(DenseFeatureMap(np.stack([u, u]).reshape(1, 2, 2))).vector,
                                   u / np.linalg.norm(u))

    def test_spoc_equals_cross_match(self):
        """测试池化内积等于逐对内积之和"""
        U = DenseFeatureMap(self.rng.uniform(0, 1, (4, 5, 16)))
        V = DenseFeatureMap(self.rng.uniform(0, 1, (6, 3, 16)))
        double_sum = sum(float(u @ v) for u in U.vectors() for v in V.vectors())
        gamma_u = 1.0 / np.linalg.norm(U.vectors().sum(axis=0))
        gamma_v = 1.0 / np.linalg.norm(V.vectors().sum(axis=0))
        pooled = spoc_pool(U).vector @ spoc_pool(V).vector
        self.assertLess(abs(pooled - gamma_u * gamma_v * double_sum) / abs(pooled), 1e-6)

    def test_spoc_zero_map(self):
        """测试全零图报错"""
        with self.assertRaises(FeatureMapError):
            spoc_pool(DenseFeatureMap(np.zeros((2, 2, 3))))

    def test_how_equals_weighted_cross_match(self):
        """测试 HOW 池化内积等于加权逐对匹配"""
        transform = random_transform(self.rng, 12, 6)
        U = DenseFeatureMap(self.rng.uniform(0, 1, (5, 4, 12)))
        V = DenseFeatureMap(self.rng.uniform(0, 1, (3, 6, 12)))
        du = extract_single_scale(U, transform, 3)
        dv = extract_single_scale(V, transform, 3)
        double_sum = sum(a.strength * b.strength * float(a.vector @ b.vector) for a in du for b in dv)
        gamma_u = 1.0 / np.linalg.norm(du.strengths @ du.vectors)
        gamma_v = 1.0 / np.linalg.norm(dv.strengths @ dv.vectors)
        pooled = how_pool(U, transform, 3).vector @ how_pool(V, transform, 3).vector
        self.assertLess(abs(pooled - gamma_u * gamma_v * double_sum) / abs(pooled), 1e-6)
        self.assertAlmostEqual(np.linalg.norm(how_pool(U, transform, 3).vector), 1.0, places=9)

    def random_map(self, max_side: int, depth: int) -> DenseFeatureMap:
        shape = (int(self.rng.integers(1, max_side + 1)), int(self.rng.integers(1, max_side + 1)), depth)
        return DenseFeatureMap(self.rng.uniform(0, 1, shape))

    def test_spoc_equals_cross_match_random(self):
        """测试 1000 个随机实例上 SPoC 内积等于归一化的逐对内积之和"""
        worst = 0.0
        for _ in range(1000):
            depth = int(self.rng.integers(1, 33))
            U, V = self.random_map(6, depth), self.random_map(6, depth)
            cross = float((U.vectors() @ V.vectors().T).sum())
            gamma_u = 1.0 / np.linalg.norm(U.vectors().sum(axis=0))
            gamma_v = 1.0 / np.linalg.norm(V.vectors().sum(axis=0))
            pooled = float(spoc_pool(U).vector @ spoc_pool(V).vector)
            worst = max(worst, abs(pooled - gamma_u * gamma_v * cross) / abs(pooled))
        self.assertLess(worst, 1e-6)

    def test_how_equals_weighted_cross_match_random(self):
        """测试 1000 个随机实例上 HOW 池化内积等于加权逐对匹配"""
        worst = 0.0
        for _ in range(1000):
            depth = int(self.rng.integers(2, 33))
            transform = random_transform(self.rng, depth, int(self.rng.integers(1, depth + 1)))
            window = int(self.rng.choice([1, 3, 5]))
            U, V = self.random_map(6, depth), self.random_map(6, depth)
            du = extract_single_scale(U, transform, window)
            dv = extract_single_scale(V, transform, window)
            weights = du.strengths[:, None] * dv.strengths[None, :]
            cross = float((weights * (du.vectors @ dv.vectors.T)).sum())
            gamma_u = 1.0 / np.linalg.norm(du.strengths @ du.vectors)
            gamma_v = 1.0 / np.linalg.norm(dv.strengths @ dv.vectors)
            pooled = float(how_pool(U, transform, window).vector @ how_pool(V, transform, window).vector)
            worst = max(worst, abs(pooled - gamma_u * gamma_v * cross) / abs(pooled))
        self.assertLess(worst, 1e-6)

    def test_how_single_location(self):
        """测试单位置 HOW 池化"""
        transform = random_transform(self.rng, 4, 3)
        u = np.array([2.0, 0.5, 1.0, 3.0])
        expected = apply_whitening(transform, u)
        np.testing.assert_allclose(how_pool(DenseFeatureMap(u.reshape(1, 1, 4)), transform, 3).vector,
                                   expected / np.linalg.norm(expected), rtol=0, atol=1e-12)

    def test_how_dominant_location(self):
        """测试强度占绝对优势的位置主导池化方向"""
        transform = identity_whitening(4)
        data = np.full((3, 3, 4), 0.001)
        data[1, 1] = [50.0, 10.0, 30.0, 20.0]
        pooled = how_pool(DenseFeatureMap(data), transform, 1).vector
        target = data[1, 1] / np.linalg.norm(data[1, 1])
        self.assertLess(np.arccos(min(1.0, pooled @ target)), 0.1)

    def test_multiscale_global(self):
        """测试多尺度全局描述子之和再归一化"""
        maps = [DenseFeatureMap(self.rng.uniform(0, 1, (3, 3, 5))) for _ in range(3)]
        combined = multiscale_global([spoc_pool(fmap) for fmap in maps])
        expected = sum(spoc_pool(fmap).vector for fmap in maps)
        np.testing.assert_allclose(combined.vector, expected / np.linalg.norm(expected), rtol=0, atol=1e-12)
        self.assertEqual(combined.kind, "spoc")
        with self.assertRaises(FeatureMapError):
            multiscale_global([spoc_pool(maps[0]), how_pool(maps[1], identity_whitening(5), 1)])


if __name__ == '__main__':
    unittest.main()
