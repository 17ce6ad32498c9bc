import numpy as np
import pytest

from mcnet.config import DataConfig
from mcnet.errors import SceneError
from mcnet.tensor import Tensor
from mcnet.video import (
    NORMED11,
    RAW01,
    SceneSpec,
    VideoClip,
    denormalize,
    difference_frames,
    generate_clip,
    generate_dataset,
    normalize,
    render_frame,
    scene_specs,
    stack_batch,
)


@pytest.fixture
def clip():
    return generate_clip(SceneSpec(velocity=(1, 2), start=(3, 5)), 6)


def test_should_render_same_dataset_for_same_config():
    cfg = DataConfig(count=3, length=5, height=16, width=16)
    assert generate_dataset(cfg) == generate_dataset(cfg)
    other = generate_dataset(DataConfig(count=3, length=5, height=16, width=16, seed=1))
    assert other != generate_dataset(cfg)


def test_should_describe_clip_by_kind_and_seed():
    spec = SceneSpec(kind="bouncing-ball", seed=11)
    clip = generate_clip(spec, 2)
    assert clip.descriptor == {"kind": "bouncing-ball", "seed": "11"}
    assert repr(clip) == (
        "VideoClip(length=2, frame_shape=(1, 32, 32), value_range='raw01')"
    )


def test_should_wrap_translating_square_around_frame():
    spec = SceneSpec(width=16, height=16, velocity=(0, 1), start=(0, 0))
    clip = generate_clip(spec, 17)
    frames = clip.array()
    assert np.array_equal(frames[16], frames[0])
    assert np.array_equal(np.roll(frames[0], 3, axis=-1), frames[3])
    assert frames[0].sum() == 64.0


def test_should_keep_bouncing_ball_inside_frame():
    spec = SceneSpec(kind="bouncing-ball", velocity=(3, 2), start=(0, 0))
    sums = {float(f.sum()) for f in generate_clip(spec, 40).array()}
    assert len(sums) == 1


def test_should_paint_second_object_dimmer():
    spec = SceneSpec(kind="two-object", velocity=(1, 1), seed=4)
    frame = render_frame(spec, 0)
    assert 0.75 in set(np.unique(frame))
    assert set(np.unique(frame)) <= {0.0, 0.75, 1.0}


def test_should_repeat_oscillator_after_period():
    spec = SceneSpec(
        kind="periodic-oscillator", velocity=(0, 0), start=(12, 12), period=6
    )
    frames = generate_clip(spec, 13).array()
    assert np.array_equal(frames[0], frames[6])
    assert np.array_equal(frames[1], frames[7])
    assert not np.array_equal(frames[0], frames[1])


def test_should_shift_textured_background_with_drift():
    spec = SceneSpec(velocity=(0, 0), start=(4, 4), drift=(1, 2), texture=0.25)
    frames = generate_clip(spec, 4).array()
    assert np.array_equal(np.roll(frames[0], (3, 6), axis=(-2, -1)), frames[3])


def test_should_render_static_clips_without_speed():
    clips = generate_dataset(DataConfig(count=3, length=4, max_speed=0))
    for clip in clips:
        frames = clip.array()
        assert all(np.array_equal(frames[0], f) for f in frames)
    assert all(s.velocity == (0, 0) for s in scene_specs(DataConfig(max_speed=0)))


def test_should_never_draw_still_objects_with_speed():
    specs = scene_specs(DataConfig(count=30, max_speed=1))
    assert all(s.velocity != (0, 0) for s in specs)
    assert all(max(abs(v) for v in s.velocity) <= 1 for s in specs)


def test_should_repeat_channels():
    frame = render_frame(SceneSpec(channels=3, start=(0, 0)), 0)
    assert frame.shape == (3, 32, 32)
    assert np.array_equal(frame[0], frame[2])


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(kind="spiral"),
        dict(size=40),
        dict(size=0),
        dict(start=(30, 0)),
        dict(background=1.5),
        dict(background=0.5, texture=0.75),
        dict(period=0),
    ],
)
def test_should_reject_invalid_scene(kwargs):
    with pytest.raises(SceneError):
        SceneSpec(**kwargs)


def test_should_be_a_value_error():
    assert issubclass(SceneError, ValueError)


def test_should_reject_empty_clip_length():
    with pytest.raises(ValueError, match="at least 1"):
        generate_clip(SceneSpec(), 0)


def test_should_hold_frames_as_single_batch_tensors(clip):
    assert clip.frame_shape == (1, 32, 32)
    assert len(clip) == 6
    assert all(isinstance(f, Tensor) and f.shape == (1, 1, 32, 32) for f in clip)
    assert clip.array().shape == (6, 1, 32, 32)


@pytest.mark.parametrize("attr", ["frames", "value_range"])
def test_should_not_allow_to_change_clip(clip, attr):
    with pytest.raises(AttributeError, match="readonly"):
        setattr(clip, attr, None)


@pytest.mark.parametrize(
    "frames,value_range,match",
    [
        ([], RAW01, "at least one frame"),
        ([np.zeros((1, 4, 4)), np.zeros((1, 4, 5))], RAW01, "shapes differ"),
        ([np.full((1, 4, 4), -0.5)], RAW01, "outside"),
        ([np.full((1, 4, 4), 1.5)], NORMED11, "outside"),
        ([np.zeros((1, 4, 4))], "bytes", "value_range"),
    ],
)
def test_should_reject_invalid_clip(frames, value_range, match):
    with pytest.raises(ValueError, match=match):
        VideoClip(frames, value_range)


def test_should_normalize_and_back(clip):
    normed = normalize(clip)
    assert normed.value_range == NORMED11
    assert normed.array().min() == -1.0 and normed.array().max() == 1.0
    assert denormalize(normed) == clip
    with pytest.raises(ValueError, match="already"):
        normalize(normed)
    with pytest.raises(ValueError, match="not normalized"):
        denormalize(clip)


def test_should_compute_difference_frames(clip):
    normed = normalize(clip)
    diffs = difference_frames(normed)
    assert len(diffs) == len(clip) - 1
    assert np.array_equal(diffs[2].data, normed[3].data - normed[2].data)
    with pytest.raises(ValueError, match="normalized"):
        difference_frames(clip)
    with pytest.raises(ValueError, match="at least 2"):
        difference_frames(normed.window(0, 1))


def test_should_cut_windows(clip):
    part = clip.window(2, 3)
    assert len(part) == 3
    assert part[0] == clip[2]
    assert part.descriptor == clip.descriptor
    with pytest.raises(ValueError, match="outside"):
        clip.window(4, 3)


def test_should_stack_windows_of_several_clips(clip):
    other = generate_clip(SceneSpec(velocity=(0, 1), start=(0, 0)), 6)
    batch = stack_batch([clip, other], [1, 3], 2)
    assert len(batch) == 2
    assert batch[0].shape == (2, 1, 32, 32)
    assert np.array_equal(batch[1].data[0], clip[2].data[0])
    assert np.array_equal(batch[1].data[1], other[4].data[0])
