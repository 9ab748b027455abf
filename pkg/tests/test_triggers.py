import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poisonforge.dataset_io import LabeledDataset, serialize_dataset
from poisonforge.errors import ValidationError
from poisonforge.selection import SelectionReport
from poisonforge.triggers import (
    BadnetsSpec,
    BlendedSpec,
    MultiBppSpec,
    apply_badnets,
    apply_blended,
    apply_multibpp,
    channel_lattice,
    component_c_presets,
    default_badnets_geometry,
    load_trigger,
    normalize_rgb,
    poison_dataset,
    procedural_blend_trigger,
    quantize_channel,
    rgb_to_xyz_chromaticity,
    save_trigger,
    trigger_entire_dataset,
    trigger_from_dict,
    trigger_to_dict,
)


def random_image(rng, h=8, w=8):
    return rng.integers(0, 256, size=(3, h, w), dtype=np.uint8)


# --- apply_badnets -------------------------------------------------------------

def test_badnets_all_black_patch():
    rng = np.random.default_rng(0)
    img = random_image(rng)
    spec = BadnetsSpec(height=3, width=3, row=2, col=4, patterns=(1, 1, 1))
    out = apply_badnets(img, spec)
    assert (out[:, 2:5, 4:7] == 0).all()
    mask = np.ones((8, 8), dtype=bool)
    mask[2:5, 4:7] = False
    assert (out[:, mask] == img[:, mask]).all()


def test_badnets_vanilla_is_identity():
    rng = np.random.default_rng(1)
    img = random_image(rng)
    spec = BadnetsSpec(height=3, width=3, row=0, col=0, patterns=(3, 3, 3))
    assert (apply_badnets(img, spec) == img).all()


def test_badnets_110_checker_plane():
    rng = np.random.default_rng(2)
    img = random_image(rng)
    spec = BadnetsSpec(height=3, width=3, row=1, col=1, patterns=(1, 1, 0))
    out = apply_badnets(img, spec)
    assert (out[0, 1:4, 1:4] == 0).all()
    assert (out[1, 1:4, 1:4] == 0).all()
    expected = np.array([[0, 255, 0], [255, 0, 255], [0, 255, 0]], dtype=np.uint8)
    assert (out[2, 1:4, 1:4] == expected).all()


def test_badnets_white_pattern():
    img = np.zeros((3, 6, 6), dtype=np.uint8)
    spec = BadnetsSpec(height=2, width=2, row=0, col=0, patterns=(2, 3, 2))
    out = apply_badnets(img, spec)
    assert (out[0, :2, :2] == 255).all()
    assert (out[1] == 0).all()


def test_badnets_out_of_bounds():
    img = np.zeros((3, 8, 8), dtype=np.uint8)
    spec = BadnetsSpec(height=3, width=3, row=6, col=6, patterns=(1, 1, 1))
    with pytest.raises(ValidationError, match="out of bounds"):
        apply_badnets(img, spec)


def test_badnets_never_mutates_input():
    rng = np.random.default_rng(3)
    img = random_image(rng)
    before = img.tobytes()
    apply_badnets(img, BadnetsSpec(height=3, width=3, row=0, col=0, patterns=(0, 0, 0)))
    assert img.tobytes() == before


def test_default_geometry():
    assert default_badnets_geometry(32, 32) == (3, (29, 29))
    assert default_badnets_geometry(64, 64) == (9, (55, 55))


# --- apply_blended ---------------------------------------------------------------

def test_blended_zero_alpha_is_identity():
    rng = np.random.default_rng(4)
    img = random_image(rng)
    trig = random_image(rng)
    out = apply_blended(img, BlendedSpec(trigger_image=trig, alphas=(0, 0, 0)))
    assert (out == img).all()


def test_blended_full_alpha_is_trigger():
    rng = np.random.default_rng(5)
    img = random_image(rng)
    trig = random_image(rng)
    out = apply_blended(img, BlendedSpec(trigger_image=trig, alphas=(1, 1, 1)))
    assert (out == trig).all()


def test_blended_hand_value():
    img = np.full((3, 4, 4), 100, dtype=np.uint8)
    trig = np.full((3, 4, 4), 200, dtype=np.uint8)
    out = apply_blended(img, BlendedSpec(trigger_image=trig, alphas=(0.3, 0.3, 0.3)))
    assert (out == 130).all()


def test_blended_alpha_zero_channels_untouched():
    rng = np.random.default_rng(6)
    img = random_image(rng)
    trig = random_image(rng)
    out = apply_blended(img, BlendedSpec(trigger_image=trig, alphas=(0.0, 0.5, 0.0)))
    assert (out[0] == img[0]).all()
    assert (out[2] == img[2]).all()


def test_blended_size_mismatch():
    with pytest.raises(ValidationError, match="size mismatch"):
        apply_blended(
            np.zeros((3, 4, 4), dtype=np.uint8),
            BlendedSpec(
                trigger_image=np.zeros((3, 5, 5), dtype=np.uint8), alphas=(0.2,) * 3
            ),
        )


# --- quantization -----------------------------------------------------------------

def test_quantize_hand_values():
    assert quantize_channel(0, 255, 7) == 0
    assert quantize_channel(255, 255, 31) == 255
    assert quantize_channel(100, 255, 7) == 109


def test_quantize_zero_for_any_levels():
    for n_p in (1, 7, 31, 255):
        assert quantize_channel(0, 255, n_p) == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 255), st.sampled_from([1, 7, 8, 12, 24, 31, 32, 48, 255]))
def test_quantize_idempotent_and_on_lattice(x, n_p):
    q = quantize_channel(x, 255, n_p)
    assert quantize_channel(q, 255, n_p) == q
    assert q in set(channel_lattice(255, n_p).tolist())


def test_quantize_validates_levels():
    with pytest.raises(ValidationError):
        quantize_channel(10, 255, 0)
    with pytest.raises(ValidationError):
        quantize_channel(10, 8, 9)


def test_multibpp_full_levels_identity():
    rng = np.random.default_rng(7)
    img = random_image(rng)
    spec = MultiBppSpec(levels=(255, 255, 255), dithering=False)
    assert (apply_multibpp(img, spec) == img).all()


def test_multibpp_single_pixel_dither_equals_plain():
    img = np.array([[[137]], [[9]], [[220]]], dtype=np.uint8)
    quant = apply_multibpp(img, MultiBppSpec(levels=(24, 48, 8), dithering=False))
    dith = apply_multibpp(img, MultiBppSpec(levels=(24, 48, 8), dithering=True))
    assert (quant == dith).all()


def test_multibpp_dithered_on_lattice_and_mean_preserved():
    rng = np.random.default_rng(8)
    spec = MultiBppSpec(levels=(24, 48, 8), dithering=True)
    img = random_image(rng, 4, 4)
    out = apply_multibpp(img, spec)
    for ch, n_p in enumerate(spec.levels):
        lattice = set(channel_lattice(255, n_p).tolist())
        assert set(np.unique(out[ch]).tolist()) <= lattice
        drift = abs(float(out[ch].mean()) - float(img[ch].mean()))
        assert drift < 2.0


def test_multibpp_undithered_idempotent_on_images():
    rng = np.random.default_rng(9)
    img = random_image(rng)
    spec = MultiBppSpec(levels=(24, 48, 8), dithering=False)
    once = apply_multibpp(img, spec)
    assert (apply_multibpp(once, spec) == once).all()


def test_multibpp_literal_mode_valid_output():
    rng = np.random.default_rng(10)
    img = random_image(rng)
    spec = MultiBppSpec(levels=(24, 48, 8), dithering=True, dither_mode="literal")
    out = apply_multibpp(img, spec)
    assert out.dtype == np.uint8
    assert out.shape == img.shape
    standard = apply_multibpp(img, MultiBppSpec(levels=(24, 48, 8), dithering=True))
    assert (out != standard).any()  # the two schemes genuinely differ


def test_dithering_error_conservation_interior():
    # every unit of residual is split exactly by the diffusion weights
    spec = MultiBppSpec(levels=(8, 8, 8))
    assert abs(sum(spec.diffusion) - 1.0) < 1e-9
    with pytest.raises(ValidationError, match="sum to 1"):
        MultiBppSpec(levels=(8, 8, 8), diffusion=(0.5, 0.1, 0.1, 0.1))


def test_dithering_fixed_point_on_lattice_image():
    # zero residual everywhere means nothing diffuses: a dithered output
    # passes through a second dithering run unchanged
    rng = np.random.default_rng(21)
    spec = MultiBppSpec(levels=(24, 48, 8), dithering=True)
    img = random_image(rng, 6, 6)
    once = apply_multibpp(img, spec)
    again = apply_multibpp(once, spec)
    assert (again == once).all()


def test_multibpp_spec_validation():
    with pytest.raises(ValidationError):
        MultiBppSpec(levels=(0, 8, 8))
    with pytest.raises(ValidationError):
        MultiBppSpec(levels=(300, 8, 8))
    with pytest.raises(ValidationError):
        MultiBppSpec(levels=(8, 8, 8), dither_mode="serpentine")


# --- presets ------------------------------------------------------------------------

def test_presets_match_published_settings():
    assert component_c_presets("badnets_vanilla").patterns == (1, 1, 1)
    assert component_c_presets("badnets_c").patterns == (1, 1, 0)
    assert component_c_presets("blended_vanilla").alphas == (0.2, 0.2, 0.2)
    assert component_c_presets("blended_c").alphas == (0.2, 0.1, 0.3)
    assert component_c_presets("multibpp_b").levels == (255, 255, 8)
    assert component_c_presets("multibpp_rgb").levels == (24, 48, 8)
    assert component_c_presets("bpp_base").levels == (32, 32, 32)
    with pytest.raises(ValidationError):
        component_c_presets("narcissus")


def test_preset_badnets_geometry_follows_image_size():
    small = component_c_presets("badnets_c", image_size=(32, 32))
    assert (small.height, small.row, small.col) == (3, 29, 29)
    large = component_c_presets("badnets_c", image_size=(64, 64))
    assert (large.height, large.row, large.col) == (9, 55, 55)


def test_procedural_blend_trigger_deterministic():
    a = procedural_blend_trigger(16, 16)
    b = procedural_blend_trigger(16, 16)
    assert (a == b).all()
    assert a.dtype == np.uint8


# --- chromaticity --------------------------------------------------------------------

def test_chromaticity_equal_shares():
    x, y, z = rgb_to_xyz_chromaticity(1 / 3, 1 / 3, 1 / 3)
    assert x == pytest.approx(1.000 / 2.939, abs=1e-4)
    assert y == pytest.approx(0.939 / 2.939, abs=1e-4)
    assert z == pytest.approx(1.000 / 2.939, abs=1e-4)


def test_chromaticity_pure_blue():
    x, y, z = rgb_to_xyz_chromaticity(0.0, 0.0, 1.0)
    assert x == pytest.approx(0.200 / 1.200, abs=1e-6)
    assert y == pytest.approx(0.010 / 1.200, abs=1e-6)
    assert z == pytest.approx(0.990 / 1.200, abs=1e-6)


def test_chromaticity_black_pixel():
    assert rgb_to_xyz_chromaticity(0.0, 0.0, 0.0) == (0.0, 0.0, 0.0)
    assert normalize_rgb(0, 0, 0) == (0.0, 0.0, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 255), st.integers(0, 255), st.integers(0, 255))
def test_chromaticity_non_negative(r, g, b):
    shares = normalize_rgb(float(r), float(g), float(b))
    out = rgb_to_xyz_chromaticity(*shares)
    assert all(v >= 0 for v in out)


# --- poison_dataset ------------------------------------------------------------------

def make_dataset(rng, n=20, k=5, h=8, w=8):
    return LabeledDataset(
        images=rng.integers(0, 256, size=(n, 3, h, w), dtype=np.uint8),
        labels=rng.integers(0, k, size=n),
        num_classes=k,
    )


def make_report(chosen, target_label):
    return SelectionReport(
        metric="forget",
        target_label=target_label,
        indices=list(chosen),
        scores=None,
        ranks=None,
        chosen=list(chosen),
    )


def test_poison_empty_selection_is_identity():
    rng = np.random.default_rng(11)
    ds = make_dataset(rng)
    trigger = BadnetsSpec(height=3, width=3, row=5, col=5, patterns=(1, 1, 0))
    poisoned, manifest = poison_dataset(ds, make_report([], 0), trigger)
    assert serialize_dataset(poisoned) == serialize_dataset(ds)
    assert manifest.alpha == 0.0
    assert manifest.indices == []


def test_poison_single_index_byte_diff():
    rng = np.random.default_rng(12)
    ds = make_dataset(rng)
    y_t = int(ds.labels[4])
    trigger = BadnetsSpec(height=3, width=3, row=0, col=0, patterns=(1, 1, 1))
    poisoned, manifest = poison_dataset(ds, make_report([4], y_t), trigger)
    raw_in = serialize_dataset(ds)
    raw_out = serialize_dataset(poisoned)
    record = 1 + 3 * 8 * 8
    changed = [
        i
        for i in range(len(ds))
        if raw_in[i * record : (i + 1) * record] != raw_out[i * record : (i + 1) * record]
    ]
    assert changed == [4]
    # the label byte of the changed record is untouched
    assert raw_in[4 * record] == raw_out[4 * record]
    assert manifest.alpha == pytest.approx(1 / len(ds))


def test_poison_clean_label_violation():
    rng = np.random.default_rng(13)
    ds = make_dataset(rng)
    y_t = int(ds.labels[0])
    other = next(i for i in range(len(ds)) if ds.labels[i] != y_t)
    trigger = BadnetsSpec(height=3, width=3, row=0, col=0, patterns=(1, 1, 1))
    with pytest.raises(ValidationError, match="clean-label violation"):
        poison_dataset(ds, make_report([other], y_t), trigger)


def test_poison_duplicate_indices_rejected():
    rng = np.random.default_rng(14)
    ds = make_dataset(rng)
    y_t = int(ds.labels[0])
    trigger = BadnetsSpec(height=3, width=3, row=0, col=0, patterns=(1, 1, 1))
    with pytest.raises(ValidationError, match="duplicate"):
        poison_dataset(ds, make_report([0, 0], y_t), trigger)


def test_poison_labels_byte_identical_and_manifest_hash():
    rng = np.random.default_rng(15)
    ds = make_dataset(rng, n=30)
    y_t = 2
    chosen = [i for i in range(30) if ds.labels[i] == y_t][:3]
    trigger = MultiBppSpec(levels=(24, 48, 8))
    poisoned, manifest = poison_dataset(ds, make_report(chosen, y_t), trigger)
    assert np.array_equal(poisoned.labels, ds.labels)
    assert manifest.output_sha256 == hashlib.sha256(serialize_dataset(poisoned)).hexdigest()
    assert manifest.alpha == pytest.approx(len(chosen) / 30)
    # input untouched
    assert serialize_dataset(ds) != serialize_dataset(poisoned)


def test_trigger_entire_dataset_keeps_labels():
    rng = np.random.default_rng(16)
    ds = make_dataset(rng)
    trigger = BadnetsSpec(height=3, width=3, row=0, col=0, patterns=(1, 1, 0))
    triggered, manifest = trigger_entire_dataset(ds, trigger)
    assert np.array_equal(triggered.labels, ds.labels)
    assert manifest.extras["mode"] == "all"
    for i in range(len(ds)):
        assert (triggered.images[i] == apply_badnets(ds.images[i], trigger)).all()


# --- trigger JSON ---------------------------------------------------------------------

def test_trigger_json_round_trip(tmp_path):
    rng = np.random.default_rng(17)
    specs = [
        BadnetsSpec(height=3, width=3, row=29, col=29, patterns=(1, 1, 0)),
        BlendedSpec(trigger_image=random_image(rng), alphas=(0.2, 0.1, 0.3)),
        BlendedSpec(
            trigger_image=procedural_blend_trigger(8, 8),
            alphas=(0.2, 0.2, 0.2),
            procedural=True,
        ),
        MultiBppSpec(levels=(255, 255, 8)),
    ]
    for n, spec in enumerate(specs):
        path = tmp_path / f"trigger{n}.json"
        save_trigger(spec, path)
        back = load_trigger(path)
        assert trigger_to_dict(back) == trigger_to_dict(spec)
        if isinstance(spec, BlendedSpec):
            assert (back.trigger_image == spec.trigger_image).all()


def test_trigger_json_is_stable_bytes(tmp_path):
    spec = MultiBppSpec(levels=(24, 48, 8))
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    save_trigger(spec, a)
    save_trigger(spec, b)
    assert a.read_bytes() == b.read_bytes()


def test_trigger_from_dict_rejects_unknown():
    with pytest.raises(ValidationError):
        trigger_from_dict({"kind": "warp"})
    with pytest.raises(ValidationError):
        trigger_from_dict(
            {
                "kind": "blended",
                "alphas": [0.2, 0.2, 0.2],
                "trigger_image": {"height": 4, "width": 4, "data_b64": "AAAA"},
            }
        )
