import numpy as np
import pytest

from lttr import tensor as T
from lttr.backbone import Backbone, siamese_extract
from lttr.config import ConfigError, RunConfig, paper_config
from lttr.gradcheck import check_gradients
from lttr.scene import PointCloud, generate_sequence, voxelize
from lttr.tensor import Tensor

from conftest import randomize, tiny_config


def desk_grid(seed=0, cfg=None):
    cfg = cfg or RunConfig()
    frame = generate_sequence(seed, 2).frames[0]
    local = frame.gt_box.to_local(frame.cloud.points)
    return voxelize(PointCloud(local), cfg)


class TestExtract:
    def test_desk_shape(self, rng):
        fmap = Backbone(RunConfig(), rng).extract(desk_grid())
        assert fmap.tensor.shape == (8, 8, 32)
        assert fmap.stride_m == pytest.approx((0.8, 0.8))
        assert fmap.geometry.origin == (-3.2, -3.2)

    def test_paper_shape(self, rng):
        cfg = paper_config(channels_3d=[2, 2, 2], channels_2d=[4], feature_dim=4)
        x = np.zeros(cfg.grid_extents + (4,))
        x[128, 128, 60] = [0.1, -0.2, 0.0, 0.2]
        assert Backbone(cfg, rng).extract(x).tensor.shape == (32, 32, 4)

    def test_zero_grid_gives_zero_map(self, rng):
        fmap = Backbone(RunConfig(), rng).extract(np.zeros((64, 64, 16, 4)))
        np.testing.assert_array_equal(fmap.tensor.data, 0.0)

    def test_indivisible_extents(self, rng):
        with pytest.raises(ConfigError):
            Backbone(RunConfig(), rng).extract(np.zeros((60, 64, 16, 4)))

    def test_translation_covariance(self, rng):
        # the volume statistics are shift-invariant while the content stays clear of the x borders
        net = Backbone(RunConfig(), rng)
        x = np.zeros((64, 64, 16, 4))
        r = np.random.default_rng(2)
        cells = np.column_stack([r.integers(16, 40, 60), r.integers(8, 56, 60), r.integers(0, 16, 60)])
        x[tuple(cells.T)] = r.normal(size=(60, 4))
        shifted = np.zeros_like(x)
        shifted[8:] = x[:-8]
        a = net.extract(x).tensor.data
        b = net.extract(shifted).tensor.data
        # three stride-2 stages: 8 voxels = 1 BEV cell.  Normalized empty voxels are not
        # 0, so zero padding leaves a border band that grows through every stage; only
        # the two central BEV rows are clear of it in both runs.
        np.testing.assert_allclose(b[4:6], a[3:5], atol=1e-9)

    def test_gradient_through_extract(self):
        cfg = tiny_config(range=[-1.6, -1.6, -1.0, 1.6, 1.6, 1.0], voxel_size=[0.2, 0.2, 0.5],
                          channels_3d=[2, 2, 2], channels_2d=[3], feature_dim=3, region_size=1,
                          point_grid=1)
        net = Backbone(cfg, np.random.default_rng(0))
        params = list(net.state().values())
        randomize(params, np.random.default_rng(1))
        x = np.random.default_rng(2).normal(size=cfg.grid_extents + (4,))
        w = np.random.default_rng(3).normal(size=(2, 2, 3))
        report = check_gradients(lambda: T.tsum(net.extract(x).tensor * w), params)
        assert report.passed(), report


class TestSiamese:
    def test_same_input_same_output(self, rng):
        net = Backbone(RunConfig(), rng)
        g = desk_grid()
        ms, mt = siamese_extract(g, g, net)
        np.testing.assert_array_equal(ms.tensor.data, mt.tensor.data)

    def test_swap_and_independence(self, rng):
        net = Backbone(RunConfig(), rng)
        a, b = desk_grid(0), desk_grid(1)
        ms, mt = siamese_extract(a, b, net)
        ms2, mt2 = siamese_extract(b, a, net)
        np.testing.assert_array_equal(ms.tensor.data, mt2.tensor.data)
        np.testing.assert_array_equal(mt.tensor.data, ms2.tensor.data)

        perturbed = a.features.copy()
        perturbed[30, 30, 8] += 1.0
        _, mt3 = siamese_extract(Tensor(perturbed), b, net)
        np.testing.assert_array_equal(mt3.tensor.data, mt.tensor.data)

    def test_mismatched_grids(self, rng):
        other = RunConfig(range=[-1.6, -1.6, -1.0, 1.6, 1.6, 1.0])
        net = Backbone(RunConfig(), rng)
        with pytest.raises(ConfigError):
            siamese_extract(desk_grid(), desk_grid(cfg=other), net)
