import pytest
import torch

from hetnet.backbone import BackboneConfig, build_backbone, extract
from hetnet.errors import ConfigurationError, InputError


def test_tiny_pyramid_sizes(gen):
    bb = build_backbone(BackboneConfig.tiny([16, 32, 64, 64, 64]))
    feats = extract(bb, torch.randn(1, 3, 64, 64, generator=gen))
    assert [f.shape[-1] for f in feats] == [32, 16, 8, 4, 2]
    assert [f.shape[1] for f in feats] == [16, 32, 64, 64, 64]


def test_full_stage_shapes_at_inference_size():
    with torch.device("meta"):
        bb = build_backbone(BackboneConfig.full()).eval()
        feats = extract(bb, torch.zeros(1, 3, 352, 352))
    assert len(feats) == 5
    assert [tuple(f.shape[1:]) for f in feats] == [
        (64, 176, 176), (256, 88, 88), (512, 44, 44), (1024, 22, 22), (2048, 11, 11)]


def test_batch_dimension_preserved(gen):
    bb = build_backbone(BackboneConfig.tiny())
    assert all(f.shape[0] == 4 for f in extract(bb, torch.randn(4, 3, 32, 32, generator=gen)))


def test_zero_image_is_finite():
    bb = build_backbone(BackboneConfig.tiny()).eval()
    assert all(torch.isfinite(f).all() for f in extract(bb, torch.zeros(1, 3, 64, 64)))


def test_batch_independence_in_eval_mode(gen):
    bb = build_backbone(BackboneConfig.tiny()).eval()
    x = torch.randn(3, 3, 64, 64, generator=gen)
    together = extract(bb, x)
    for i in range(3):
        alone = extract(bb, x[i:i + 1])
        for a, b in zip(alone, together):
            assert torch.allclose(a[0], b[i], atol=1e-5)


def test_identical_items_get_identical_features(gen):
    bb = build_backbone(BackboneConfig.tiny()).eval()
    x = torch.randn(1, 3, 32, 32, generator=gen).repeat(2, 1, 1, 1)
    for f in extract(bb, x):
        assert torch.equal(f[0], f[1])


def test_deterministic(gen):
    bb = build_backbone(BackboneConfig.tiny()).eval()
    x = torch.randn(2, 3, 64, 64, generator=gen)
    for a, b in zip(extract(bb, x), extract(bb, x)):
        assert torch.equal(a, b)


def test_shapes_need_no_weights():
    with torch.device("meta"):
        bb = build_backbone(BackboneConfig.tiny())
        feats = extract(bb, torch.zeros(2, 3, 96, 96))
    assert [tuple(f.shape) for f in feats][-1] == (2, 64, 3, 3)


def test_indivisible_input():
    bb = build_backbone(BackboneConfig.tiny())
    with pytest.raises(InputError, match="divisible by 32"):
        extract(bb, torch.zeros(1, 3, 48, 64))


def test_wrong_channel_count():
    with pytest.raises(InputError):
        extract(build_backbone(BackboneConfig.tiny()), torch.zeros(1, 1, 64, 64))


@pytest.mark.parametrize("kw", [
    dict(variant="resnet"),
    dict(stage_channels=[16, 32, 64]),
    dict(stage_strides=[2, 4, 4, 16, 32]),
    dict(stage_channels=[16, 0, 64, 64, 64]),
])
def test_invalid_configs(kw):
    with pytest.raises(ConfigurationError):
        build_backbone(BackboneConfig(**kw))


def test_checkpoint_keys_follow_stage_block_scheme():
    keys = build_backbone(BackboneConfig.tiny()).state_dict().keys()
    assert "stage1.block0.conv.weight" in keys
    with torch.device("meta"):
        full = build_backbone(BackboneConfig.full()).state_dict().keys()
    assert "stage4.block22.conv2.weight" in full


def test_weight_round_trip_and_mismatch(tmp_path):
    src = build_backbone(BackboneConfig.tiny())
    path = tmp_path / "w.pt"
    torch.save({f"backbone.{k}": v for k, v in src.state_dict().items()}, path)
    loaded = build_backbone(BackboneConfig.tiny(pretrained_weights_path=str(path)))
    for k, v in src.state_dict().items():
        assert torch.equal(loaded.state_dict()[k], v)

    other = build_backbone(BackboneConfig.tiny([8, 32, 64, 64, 64]))
    torch.save(other.state_dict(), path)
    with pytest.raises(ConfigurationError, match="stage1.block0.conv.weight"):
        build_backbone(BackboneConfig.tiny(pretrained_weights_path=str(path)))


def test_missing_weights_file(tmp_path):
    with pytest.raises(ConfigurationError):
        build_backbone(BackboneConfig.tiny(pretrained_weights_path=str(tmp_path / "nope.pt")))
