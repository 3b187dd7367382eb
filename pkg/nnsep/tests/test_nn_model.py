"""Network architecture: shapes, stride, widths, ASPP structure, config."""

import pytest
import torch
from torch import nn

from nnsep.model import STRIDE, ModelConfig, SeparatorNet


def small_net(base_width: int = 4) -> SeparatorNet:
    torch.manual_seed(0)
    return SeparatorNet(ModelConfig(base_width=base_width))


class TestConfig:
    def test_default_widths_reach_512(self):
        cfg = ModelConfig()
        assert cfg.base_width == 32
        assert cfg.stage_widths == (32, 64, 128, 256, 512)
        assert cfg.bottleneck_width == 512
        assert cfg.aspp_rates == (3, 6, 9, 12)
        assert cfg.input_channels == 3
        assert cfg.num_classes == 3

    def test_reduced_width_scales_all_stages(self):
        cfg = ModelConfig(base_width=8)
        assert cfg.stage_widths == (8, 16, 32, 64, 128)
        assert cfg.bottleneck_width == 128

    def test_round_trip_dict(self):
        cfg = ModelConfig(base_width=8, aspp_rates=(2, 4))
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_validation(self):
        with pytest.raises(ValueError, match="base_width"):
            ModelConfig(base_width=0)
        with pytest.raises(ValueError, match="input_channels"):
            ModelConfig(input_channels=0)
        with pytest.raises(ValueError, match="num_classes"):
            ModelConfig(num_classes=1)
        with pytest.raises(ValueError, match="aspp_rates"):
            ModelConfig(aspp_rates=(3, 3))
        with pytest.raises(ValueError, match="aspp_rates"):
            ModelConfig(aspp_rates=())


class TestForward:
    @pytest.mark.parametrize("shape", [(16, 16), (32, 48), (64, 64), (96, 32)])
    def test_output_matches_input_resolution(self, shape):
        net = small_net()
        x = torch.randn(2, 3, *shape)
        class_logits, skel_logits = net(x)
        assert class_logits.shape == (2, 3, *shape)
        assert skel_logits.shape == (2, 1, *shape)

    def test_exactly_two_heads(self):
        net = small_net().eval()
        out = net(torch.randn(1, 3, 16, 16))
        assert isinstance(out, tuple) and len(out) == 2
        heads = [
            m
            for name, m in net.named_children()
            if isinstance(m, nn.Conv2d) and name.endswith("head")
        ]
        assert len(heads) == 2
        assert sorted(h.out_channels for h in heads) == [1, 3]

    def test_rejects_bad_spatial_dims(self):
        net = small_net()
        with pytest.raises(ValueError, match=f"divisible by {STRIDE}"):
            net(torch.randn(1, 3, 40, 64))
        with pytest.raises(ValueError, match=f"divisible by {STRIDE}"):
            net(torch.randn(1, 3, 64, 24))

    def test_rejects_bad_channels_or_rank(self):
        net = small_net()
        with pytest.raises(ValueError, match="shape"):
            net(torch.randn(1, 4, 16, 16))
        with pytest.raises(ValueError, match="shape"):
            net(torch.randn(3, 16, 16))

    def test_overall_stride_is_16(self):
        net = small_net()
        captured = {}

        def hook(_module, _inputs, output):
            captured["shape"] = tuple(output.shape)

        handle = net.encoder[-1].register_forward_hook(hook)
        try:
            net(torch.randn(1, 3, 64, 96))
        finally:
            handle.remove()
        assert captured["shape"][-2:] == (64 // STRIDE, 96 // STRIDE)

    def test_deterministic_under_seed(self):
        a = small_net().state_dict()
        b = small_net().state_dict()
        assert a.keys() == b.keys()
        for key in a:
            assert torch.equal(a[key], b[key])


class TestStructure:
    def test_five_encoder_stages(self):
        net = small_net()
        assert len(net.encoder) == 5
        # one full-resolution stage, four downsampling stages
        strides = [stage.conv1.stride for stage in net.encoder]
        assert strides == [(1, 1), (2, 2), (2, 2), (2, 2), (2, 2)]

    def test_aspp_branches(self):
        net = small_net()
        convs = [branch[0] for branch in net.aspp.branches]
        assert convs[0].kernel_size == (1, 1)
        dilations = [c.dilation for c in convs[1:]]
        assert dilations == [(3, 3), (6, 6), (9, 9), (12, 12)]
        assert isinstance(net.aspp.pool_branch[0], nn.AdaptiveAvgPool2d)

    def test_aspp_operates_at_bottleneck_width(self):
        cfg = ModelConfig(base_width=4)
        net = SeparatorNet(cfg)
        for branch in net.aspp.branches:
            assert branch[0].out_channels == cfg.bottleneck_width
        assert net.aspp.project[0].out_channels == cfg.bottleneck_width

    def test_decoder_has_four_upsampling_stages(self):
        net = small_net()
        assert len(net.decoder) == 4
        for stage in net.decoder:
            assert isinstance(stage.up, nn.ConvTranspose2d)
            assert stage.up.stride == (2, 2)

    def test_residual_shortcut_projection(self):
        from nnsep.model import ResidualBlock

        net = small_net()
        # channel- or resolution-changing blocks project the shortcut;
        # shape-preserving blocks keep the identity
        assert isinstance(net.encoder[1].shortcut, nn.Conv2d)
        assert isinstance(net.decoder[0].block.shortcut, nn.Conv2d)
        same = ResidualBlock(8, 8, stride=1)
        assert isinstance(same.shortcut, nn.Identity)
        x = torch.randn(1, 8, 8, 8)
        assert same(x).shape == x.shape
