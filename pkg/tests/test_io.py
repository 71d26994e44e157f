import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from artifact.errors import ConfigError, FormatError, TooFewFrames, TooManyClasses
from artifact.io import formats
from artifact.io.config import KEYS, SCHEMA, Config, load_config, parse_config
from artifact.io.formats import (ClipSet, CloudSet, decode_clips, decode_clouds, encode_clips, encode_clouds,
                                 read_clips, read_clouds, sniff, write_clips, write_clouds)
from artifact.io.synth import PRIMITIVE_NAMES, apply_motion, gen_synth_dynamic, gen_synth_static
from artifact.numcore.rng import RngState


def pairwise(x):
    return np.sqrt(((x[:, None] - x[None]) ** 2).sum(-1))


# synthetic data ------------------------------------------------------------------

@pytest.mark.parametrize("points", [64, 65])
def test_sphere_points_on_unit_radius(points):
    assert PRIMITIVE_NAMES[0] == "sphere"
    cloud = gen_synth_static(2, 3, points, 0.0, RngState(0)).clouds[0]
    radius = np.linalg.norm(cloud - cloud.mean(axis=0), axis=1)
    assert np.max(np.abs(radius - 1.0)) <= 1e-6


def test_static_counts_and_determinism():
    a = gen_synth_static(2, 1, 10, 0.01, RngState(5))
    assert len(a) == 2 and struct.unpack_from("<I", encode_clouds(a), 6)[0] == 2
    b = gen_synth_static(2, 1, 10, 0.01, RngState(5))
    assert encode_clouds(a) == encode_clouds(b)
    assert np.max(np.linalg.norm(gen_synth_static(16, 1, 50, 0.0, RngState(1)).clouds, axis=-1)) <= 1 + 1e-12
    for bad in (1, 17):
        with pytest.raises(TooManyClasses):
            gen_synth_static(bad, 1, 10, 0.0, RngState(0))


def test_translation_class_moves_centroid_uniformly():
    clip = gen_synth_dynamic(2, 1, 7, 40, 0.0, RngState(2)).clips[0]   # class 0 translates
    steps = np.diff(clip.mean(axis=1), axis=0)
    assert np.max(np.abs(steps - steps[0])) <= 1e-9 and np.linalg.norm(steps[0]) > 0


def test_rotation_class_is_rigid():
    data = gen_synth_dynamic(2, 2, 6, 30, 0.0, RngState(3), task="rotation")
    for clip in data.clips:
        ref = pairwise(clip[0])
        for frame in clip[1:]:
            assert np.max(np.abs(pairwise(frame) - ref)) <= 1e-9


def test_counter_clockwise_is_time_reversed_clockwise():
    base = np.random.default_rng(4).normal(size=(9, 3))
    cw = apply_motion(base, "rotate_cw", 5, RngState(1))
    ccw = apply_motion(base, "rotate_ccw", 5, RngState(1))
    assert np.array_equal(ccw, cw[::-1])
    # seen from +z the first clockwise step turns points by a negative angle
    a0, a1 = np.arctan2(cw[0, :, 1], cw[0, :, 0]), np.arctan2(cw[1, :, 1], cw[1, :, 0])
    assert np.allclose(np.angle(np.exp(1j * (a1 - a0))), -np.deg2rad(20.0), atol=1e-9)


def test_dynamic_determinism_and_errors():
    a = encode_clips(gen_synth_dynamic(3, 2, 4, 12, 0.02, RngState(7)))
    assert a == encode_clips(gen_synth_dynamic(3, 2, 4, 12, 0.02, RngState(7)))
    with pytest.raises(TooFewFrames):
        gen_synth_dynamic(2, 1, 1, 10, 0.0, RngState(0))
    with pytest.raises(TooManyClasses):
        gen_synth_dynamic(3, 1, 4, 10, 0.0, RngState(0), task="rotation")


# containers ----------------------------------------------------------------------

f32 = st.floats(-1e6, 1e6, width=32, allow_nan=False)


@given(st.integers(0, 5), st.integers(1, 6), st.integers(1, 4), st.integers(0, 10**6))
def test_cloud_round_trip(n, p, k, seed):
    rng = np.random.default_rng(seed)
    data = CloudSet(rng.normal(size=(n, p, 3)).astype(np.float32).astype(np.float64), rng.integers(0, k, n), k)
    back = decode_clouds(encode_clouds(data))
    assert back.clouds.tobytes() == data.clouds.tobytes() and back.clouds.shape == (n, p, 3)
    assert np.array_equal(back.labels, data.labels) and back.num_classes == k


@given(st.integers(0, 4), st.integers(1, 5), st.integers(1, 5), st.lists(f32, min_size=1, max_size=1))
def test_clip_round_trip(n, t, p, fill):
    rng = np.random.default_rng(n * 31 + t)
    clips = rng.normal(size=(n, t, p, 3)).astype(np.float32).astype(np.float64)
    if n:
        clips[0, 0, 0, 0] = fill[0]
    data = ClipSet(clips, rng.integers(0, 3, n), 3)
    back = decode_clips(encode_clips(data))
    assert back.clips.tobytes() == clips.tobytes() and np.array_equal(back.labels, data.labels)


def test_file_round_trip_and_sniff(tmp_path):
    clouds = gen_synth_static(2, 2, 8, 0.0, RngState(0))
    clips = gen_synth_dynamic(2, 2, 3, 8, 0.0, RngState(0))
    write_clouds(tmp_path / "s.pc3d", clouds)
    write_clips(tmp_path / "d.pcv4", clips)
    assert sniff(tmp_path / "s.pc3d") == "PC3D" and sniff(tmp_path / "d.pcv4") == "PCV4"
    assert np.array_equal(read_clouds(tmp_path / "s.pc3d").clouds, clouds.clouds.astype(np.float32))
    assert read_clips(tmp_path / "d.pcv4").clips.shape == (4, 3, 8, 3)
    (tmp_path / "x").write_bytes(b"NOPE")
    with pytest.raises(FormatError):
        sniff(tmp_path / "x")
    with pytest.raises(FormatError):
        read_clouds(tmp_path / "d.pcv4")


def test_corrupted_headers_are_rejected():
    blob = bytearray(encode_clips(gen_synth_dynamic(2, 1, 3, 4, 0.0, RngState(0))))
    cases = {
        "magic": (0, b"PCV3"), "version": (4, struct.pack("<H", 9)),
        "count": (6, struct.pack("<I", 3)), "frames": (10, struct.pack("<H", 0)),
        "channels": (16, b"\x04"), "classes": (17, struct.pack("<I", 1)),
    }
    for name, (offset, patch) in cases.items():
        bad = bytearray(blob)
        bad[offset:offset + len(patch)] = patch
        with pytest.raises(FormatError):
            decode_clips(bytes(bad))
    for cut in (0, 10, len(blob) - 1):
        with pytest.raises(FormatError):
            decode_clips(bytes(blob[:cut]))
    with pytest.raises(FormatError):
        encode_clouds(CloudSet(np.zeros((1, 2, 3)), [2], 2))


def test_declared_size_checked_before_reading_body(tmp_path, monkeypatch):
    head = struct.pack("<4sHIIBI", b"PC3D", 1, 100_000, 50_000, 3, 4)
    path = tmp_path / "lie.pc3d"
    path.write_bytes(head + b"\0" * 16)
    reads = []
    real_open = Path.open

    def spy(self, *a, **kw):
        fh = real_open(self, *a, **kw)
        raw = fh.read
        fh_read = lambda n=-1: reads.append(n) or raw(n)  # noqa: E731
        return type("F", (), {"read": staticmethod(fh_read), "__enter__": lambda s: s,
                              "__exit__": lambda s, *e: fh.close()})()

    monkeypatch.setattr(Path, "open", spy)
    with pytest.raises(FormatError):
        read_clouds(path)
    assert reads == [struct.calcsize("<4sHIIBI")]
    with pytest.raises(FormatError):  # beyond the sanity cap
        formats._validate(b"PC3D", b"PC3D", 1, formats.MAX_COUNT + 1, 1, 3, 2)


# config --------------------------------------------------------------------------

def test_every_key_has_default_and_doc():
    conf = Config()
    for key in KEYS:
        default, _, doc = SCHEMA[key]
        assert conf[key] == default and doc
    assert conf["ot.epsilon"] == 0.1 and conf["ot.p"] == 2.0 and conf["otdd.b"] == 32


def test_unknown_key_lists_all_keys():
    with pytest.raises(ConfigError) as info:
        parse_config("ot.epsilonn = 1\n")
    assert all(k in str(info.value) for k in KEYS)
    with pytest.raises(ConfigError):
        Config().updated({"nope": 1})


def test_comments_duplicates_and_bad_values():
    conf = parse_config("# header\not.epsilon = 0.5  # inline\n\nschedule.decay_epochs = 5,7\n")
    assert conf["ot.epsilon"] == 0.5 and conf["schedule.decay_epochs"] == (5, 7)
    with pytest.raises(ConfigError):
        parse_config("ot.p = 1\not.p = 2\n")
    with pytest.raises(ConfigError):
        parse_config("otdd.b = many\n")
    with pytest.raises(ConfigError):
        parse_config("toggle.pva = maybe\n")
    with pytest.raises(ConfigError):
        parse_config("just words\n")


def test_echo_reparses_to_same_config(tmp_path):
    conf = Config({"ot.epsilon": 0.01, "toggle.sce": False, "data.task": "rotation", "schedule.decay_epochs": (3,)})
    path = tmp_path / "c.txt"
    path.write_text("# seed 4\n" + conf.to_text())
    assert load_config(path) == conf
    assert load_config(None) == Config()
