"""Tiling, annotations, mask composition, resizing, augmentation, splits, I/O."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from fencepipe.datapipe import (
    AugmentConfig,
    ManifestEntry,
    Region,
    SceneImage,
    apply_augment,
    augment,
    concat_masks,
    filter_positive,
    gaussian_blur,
    import_annotations,
    load_annotations,
    load_image,
    load_manifest,
    load_mask,
    plan_augment,
    rasterize_regions,
    reassemble,
    region_from_via,
    resize_bilinear,
    resize_for_classification,
    resize_nearest,
    save_annotations,
    save_image,
    save_manifest,
    save_mask,
    slice_image,
    split_dataset,
    union_masks,
)
from fencepipe.errors import (
    AnnotationError,
    ConfigError,
    DataError,
    DimensionError,
    EmptyInputError,
)


# ---------------------------------------------------------------------------
# tiling


def test_drone_frame_grid_layout():
    grid = slice_image(np.zeros((3933, 5904, 3), dtype=np.uint8))[1]
    assert (grid.rows, grid.cols) == (8, 12)
    assert grid.rows * grid.cols == 96
    assert (grid.pad_bottom, grid.pad_right) == (163, 240)
    assert grid.origin(1, 2) == (1024, 512)
    assert grid.origin(0, 0) == (0, 0)
    with pytest.raises(DimensionError):
        grid.origin(8, 0)


def test_slice_pads_by_edge_replication():
    img = np.arange(5 * 3, dtype=np.float64).reshape(5, 3)
    tiles, grid = slice_image(img, tile_size=4)
    assert (grid.rows, grid.cols) == (2, 1)
    # padded column 3 replicates column 2
    assert np.array_equal(tiles[0][:, 3], img[:4, 2])
    # padded rows of the bottom tile replicate row 4
    assert np.array_equal(tiles[1][1], tiles[1][3])


def test_slice_accepts_scene_image_and_masks():
    scene = SceneImage(np.random.default_rng(0).random((7, 9, 3)))
    tiles, grid = slice_image(scene, tile_size=4)
    assert len(tiles) == grid.rows * grid.cols == 6
    assert all(t.shape == (4, 4, 3) for t in tiles)
    mt, mg = slice_image(np.ones((7, 9), dtype=np.uint8), tile_size=4)
    assert mt[0].shape == (4, 4)
    assert np.array_equal(reassemble(mt, mg), np.ones((7, 9), dtype=np.uint8))


@settings(max_examples=40, deadline=None)
@given(h=st.integers(1, 40), w=st.integers(1, 40), t=st.integers(1, 12),
       chans=st.sampled_from([None, 1, 3]))
def test_slice_reassemble_round_trip(h, w, t, chans):
    rng = np.random.default_rng(h * 1000 + w * 20 + t)
    shape = (h, w) if chans is None else (h, w, chans)
    img = rng.random(shape)
    tiles, grid = slice_image(img, tile_size=t)
    assert np.array_equal(reassemble(tiles, grid), img)


def test_tiling_input_validation():
    with pytest.raises(ConfigError):
        slice_image(np.zeros((4, 4)), tile_size=0)
    with pytest.raises(DimensionError):
        slice_image(np.zeros(4))
    with pytest.raises(EmptyInputError):
        slice_image(np.zeros((0, 4)))
    tiles, grid = slice_image(np.zeros((4, 4)), tile_size=2)
    with pytest.raises(DimensionError):
        reassemble(tiles[:-1], grid)
    with pytest.raises(DimensionError):
        reassemble([np.zeros((3, 3))] * 4, grid)


def test_filter_positive_keeps_order_and_counts_discards():
    tiles = [np.full((2, 2), i) for i in range(4)]
    masks = [np.zeros((2, 2), dtype=np.uint8) for _ in range(4)]
    masks[1][0, 0] = 1
    masks[3][:] = 1
    kt, km, dropped = filter_positive(tiles, masks)
    assert [int(t[0, 0]) for t in kt] == [1, 3]
    assert dropped == 2
    kt2, _, dropped2 = filter_positive(tiles, masks, min_positive=2)
    assert [int(t[0, 0]) for t in kt2] == [3]
    assert dropped2 == 3
    with pytest.raises(DimensionError):
        filter_positive(tiles, masks[:2])


# ---------------------------------------------------------------------------
# annotations


def test_region_from_via_polygon_and_rect():
    poly = region_from_via({
        "shape_attributes": {"name": "polygon",
                             "all_points_x": [1, 5, 3], "all_points_y": [1, 1, 4]},
        "region_attributes": {"label": "insulator"},
    })
    assert poly.kind == "polygon" and poly.label == "insulator"
    assert poly.polygon() == ((1.0, 5.0, 3.0), (1.0, 1.0, 4.0))
    rect = region_from_via({
        "shape_attributes": {"name": "rect", "x": 2, "y": 3, "width": 4, "height": 5},
        "region_attributes": {},
    })
    assert rect.polygon() == ((2.0, 6.0, 6.0, 2.0), (3.0, 3.0, 8.0, 8.0))


@pytest.mark.parametrize("raw", [
    {"shape_attributes": {"name": "circle", "cx": 1, "cy": 1, "r": 2}},
    {"shape_attributes": {"name": "polygon", "all_points_x": [0, 1],
                          "all_points_y": [0, 1]}},
    {"shape_attributes": {"name": "polygon", "all_points_x": [0, 1, 2],
                          "all_points_y": [0, 1]}},
    {"shape_attributes": {"name": "rect", "x": 1}},
    {"region_attributes": {}},
])
def test_region_from_via_rejects_malformed(raw):
    with pytest.raises(AnnotationError):
        region_from_via(raw)


def test_annotation_file_round_trip(tmp_path):
    docs = {
        "a.png": [Region("polygon", "ins", (1.0, 6.0, 3.5), (1.0, 2.0, 7.0)),
                  Region("rect", "ins", x=2.0, y=2.0, width=3.0, height=3.0)],
        "b.png": [],
    }
    p = tmp_path / "ann.json"
    save_annotations(p, docs)
    back = load_annotations(p)
    assert back == docs


def test_load_annotations_accepts_project_wrapper_and_dict_regions(tmp_path):
    payload = {
        "_via_img_metadata": {
            "img.png-1": {
                "filename": "img.png",
                "regions": {
                    "1": {"shape_attributes": {"name": "rect", "x": 0, "y": 0,
                                               "width": 2, "height": 2},
                          "region_attributes": {"label": "b"}},
                    "0": {"shape_attributes": {"name": "polygon",
                                               "all_points_x": [0, 3, 0],
                                               "all_points_y": [0, 0, 3]},
                          "region_attributes": {"label": "a"}},
                },
            }
        }
    }
    p = tmp_path / "via.json"
    p.write_text(json.dumps(payload))
    docs = load_annotations(p)
    assert [r.label for r in docs["img.png"]] == ["a", "b"]


def test_load_annotations_rejects_bad_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(AnnotationError):
        load_annotations(p)
    p.write_text("[1, 2]")
    with pytest.raises(AnnotationError):
        load_annotations(p)


def test_integer_rect_rasterizes_to_exact_pixel_block():
    mask = rasterize_regions([Region("rect", x=2, y=3, width=4, height=5)], (12, 12))
    expect = np.zeros((12, 12), dtype=np.uint8)
    expect[3:8, 2:6] = 1
    assert np.array_equal(mask, expect)


def test_polygon_raster_matches_per_pixel_reference():
    rng = np.random.default_rng(11)
    for _ in range(25):
        n = int(rng.integers(3, 7))
        xs = tuple(rng.uniform(0, 16, n))
        ys = tuple(rng.uniform(0, 16, n))
        got = rasterize_regions([Region("polygon", xs=xs, ys=ys)], (16, 16))
        want = oracles.rasterize_polygon_reference(xs, ys, (16, 16))
        assert np.array_equal(got, want)


def test_out_of_range_vertices_clamp_with_warning():
    with pytest.warns(UserWarning, match="clamping"):
        mask = rasterize_regions(
            [Region("polygon", xs=(-5.0, 4.0, 4.0), ys=(0.0, 0.0, 4.0))], (8, 8))
    assert mask.max() == 1


def test_import_annotations_is_the_region_union():
    regions = [Region("rect", x=0, y=0, width=2, height=2),
               Region("rect", x=4, y=4, width=2, height=2)]
    mask = import_annotations(regions, (8, 8))
    assert int(mask.sum()) == 8
    assert mask[0, 0] == 1 and mask[5, 5] == 1 and mask[3, 3] == 0
    with pytest.raises(AnnotationError):
        import_annotations(None, (8, 8))


# ---------------------------------------------------------------------------
# mask composition


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 12), st.integers(1, 12)), min_size=1, max_size=5),
       st.integers(0, 2 ** 31 - 1))
def test_concat_masks_properties(shapes, seed):
    rng = np.random.default_rng(seed)
    masks = [(rng.random(s) > 0.5).astype(np.uint8) for s in shapes]
    out = concat_masks(masks)
    assert out.shape == (max(h for h, _ in shapes), sum(w for _, w in shapes))
    assert int(out.sum()) == sum(int(m.sum()) for m in masks)


def test_concat_masks_single_passthrough_and_padding():
    m = np.array([[1, 0], [0, 1]], dtype=np.uint8)
    solo = concat_masks([m])
    assert np.array_equal(solo, m) and solo is not m
    tall = np.ones((3, 1), dtype=np.uint8)
    out = concat_masks([m, tall])
    assert out.shape == (3, 3)
    assert np.array_equal(out[:, 2], [1, 1, 1])
    assert np.array_equal(out[2, :2], [0, 0])  # zero padding under the short mask


def test_union_masks():
    a = np.array([[1, 0], [0, 0]], dtype=np.uint8)
    b = np.array([[0, 0], [0, 1]], dtype=np.uint8)
    assert np.array_equal(union_masks([a, b]), [[1, 0], [0, 1]])
    assert np.array_equal(union_masks([a, b]), union_masks([b, a]))
    with pytest.raises(EmptyInputError):
        union_masks([])
    with pytest.raises(DimensionError):
        union_masks([a, np.zeros((3, 3), dtype=np.uint8)])


# ---------------------------------------------------------------------------
# resizing


def test_resize_nearest_identity_and_upsample():
    img = np.arange(6, dtype=np.float64).reshape(2, 3)
    assert np.array_equal(resize_nearest(img, 2, 3), img)
    up = resize_nearest(img, 4, 6)
    assert np.array_equal(up, np.repeat(np.repeat(img, 2, axis=0), 2, axis=1))


def test_resize_bilinear_matches_reference():
    rng = np.random.default_rng(21)
    for shape, out in [((5, 7), (9, 4)), ((3, 3), (8, 8)), ((6, 4, 3), (5, 5))]:
        arr = rng.random(shape)
        got = resize_bilinear(arr, *out)
        want = oracles.bilinear_reference(arr, *out)
        assert np.allclose(got, want, atol=1e-12)


def test_resize_bilinear_preserves_constants():
    arr = np.full((4, 6, 3), 0.37)
    assert np.allclose(resize_bilinear(arr, 11, 3), 0.37, atol=1e-12)


def test_resize_for_classification():
    out = resize_for_classification(np.random.default_rng(0).random((10, 20, 3)), size=16)
    assert out.shape == (16, 16, 3)
    with pytest.raises(DimensionError):
        resize_for_classification(np.zeros((4, 4)), size=8)
    with pytest.raises(ConfigError):
        resize_for_classification(np.zeros((4, 4, 3)), size=0)


# ---------------------------------------------------------------------------
# augmentation


ALL_OFF = AugmentConfig(p_hflip=0, p_vflip=0, p_crop=0, p_affine=0,
                        p_blur=0, p_noise=0, p_brightness=0)


def _cfg(**on):
    kw = {"p_hflip": 0.0, "p_vflip": 0.0, "p_crop": 0.0, "p_affine": 0.0,
          "p_blur": 0.0, "p_noise": 0.0, "p_brightness": 0.0}
    kw.update(on)
    return AugmentConfig(**kw)


def _sample_pair(seed=0, size=12):
    rng = np.random.default_rng(seed)
    img = rng.random((size, size, 3))
    mask = np.zeros((size, size), dtype=np.uint8)
    mask[3:7, 2:9] = 1
    return img, mask


def test_augment_is_deterministic_in_the_seed():
    img, mask = _sample_pair()
    a_img, a_mask = augment(img, mask, seed=7)
    b_img, b_mask = augment(img, mask, seed=7)
    assert np.array_equal(a_img, b_img) and np.array_equal(a_mask, b_mask)
    c_img, _ = augment(img, mask, seed=8)
    assert not np.array_equal(a_img, c_img)


def test_plan_consumes_a_constant_rng_stream():
    # the coins decide what is *kept*, not what is drawn
    r1 = np.random.default_rng(3)
    plan_augment(r1, AugmentConfig())
    r2 = np.random.default_rng(3)
    plan_augment(r2, ALL_OFF)
    assert r1.random() == r2.random()


def test_plan_frequencies_over_many_draws():
    rng = np.random.default_rng(123)
    plans = [plan_augment(rng, AugmentConfig()) for _ in range(1000)]
    blur_on = sum(p.blur_sigma is not None for p in plans) / 1000
    bright_on = sum(p.brightness is not None for p in plans) / 1000
    assert 0.45 <= blur_on <= 0.55
    assert 0.15 <= bright_on <= 0.25
    assert all(0.0 <= p.blur_sigma <= 0.5 for p in plans if p.blur_sigma is not None)
    assert all(all(0.0 <= f <= 0.1 for f in p.crop) for p in plans if p.crop is not None)


def test_hflip_and_vflip_are_involutions():
    img, mask = _sample_pair(1)
    for key in ("p_hflip", "p_vflip"):
        once_i, once_m = augment(img, mask, seed=4, config=_cfg(**{key: 1.0}))
        twice_i, twice_m = augment(once_i, once_m, seed=4, config=_cfg(**{key: 1.0}))
        assert np.array_equal(twice_i, img)
        assert np.array_equal(twice_m, mask)


def test_geometric_ops_keep_image_and_mask_aligned():
    # image IS the mask broadcast to 3 channels: after any geometric-only
    # plan the first channel must still equal the mask bit for bit
    _, mask = _sample_pair(2, size=16)
    img = np.repeat(mask[:, :, None].astype(np.float64), 3, axis=2)
    cfg = _cfg(p_hflip=1.0, p_vflip=1.0, p_crop=1.0, p_affine=1.0)
    for seed in range(8):
        out_i, out_m = augment(img, mask, seed=seed, config=cfg)
        assert out_i.shape[:2] == out_m.shape
        assert np.array_equal(out_i[:, :, 0].astype(np.uint8), out_m)
        assert set(np.unique(out_m)) <= {0, 1}


def test_photometric_ops_leave_the_mask_alone():
    img, mask = _sample_pair(3)
    cfg = _cfg(p_blur=1.0, p_noise=1.0, p_brightness=1.0)
    out_i, out_m = augment(img, mask, seed=5, config=cfg)
    assert np.array_equal(out_m, mask)
    assert not np.array_equal(out_i, img)
    assert out_i.min() >= 0.0 and out_i.max() <= 1.0


def test_crop_zooms_the_cropped_window_back_to_full_size():
    img, mask = _sample_pair(4, size=20)
    plan = plan_augment(np.random.default_rng(9), _cfg(p_crop=1.0))
    out_i, out_m = apply_augment(img, mask, plan)
    t, b, l, r = (int(f * 20) for f in plan.crop)
    assert out_i.shape == img.shape and out_m.shape == mask.shape
    assert np.array_equal(out_i, resize_nearest(img[t:20 - b, l:20 - r], 20, 20))
    assert np.array_equal(
        out_m, resize_nearest(mask[t:20 - b, l:20 - r].astype(np.float64), 20, 20) >= 0.5)


def test_gaussian_blur_edge_cases():
    img = np.random.default_rng(6).random((9, 9, 3))
    assert np.array_equal(gaussian_blur(img, 0.0), img)
    flat = np.full((6, 6, 1), 0.25)
    assert np.allclose(gaussian_blur(flat, 1.5), 0.25, atol=1e-12)
    blurred = gaussian_blur(img, 1.0)
    assert blurred.var() < img.var()


def test_noise_is_reproducible_from_the_plan():
    img, _ = _sample_pair(5)
    plan = plan_augment(np.random.default_rng(2), _cfg(p_noise=1.0))
    assert plan.noise_seed is not None
    a, _ = apply_augment(img, None, plan)
    b, _ = apply_augment(img, None, plan)
    assert np.array_equal(a, b)


def test_augment_shape_validation():
    with pytest.raises(DimensionError):
        augment(np.zeros((4, 4)))
    img, _ = _sample_pair()
    with pytest.raises(DimensionError):
        augment(img, np.zeros((3, 3), dtype=np.uint8))


# ---------------------------------------------------------------------------
# splitting


def _entries(total_by_class):
    out = []
    k = 0
    for fence, n in total_by_class.items():
        for _ in range(n):
            out.append(ManifestEntry(f"e{k:03d}", f"e{k:03d}.png", "still", fence))
            k += 1
    return out


def test_split_52_balanced_is_41_5_6_stratified():
    entries = _entries({"double": 26, "single": 26})
    out = split_dataset(entries, seed=0)
    by = {(e.fence, e.split) for e in out}
    counts = {s: sum(e.split == s for e in out) for s in ("train", "val", "test")}
    assert counts == {"train": 41, "val": 5, "test": 6}
    per = {(f, s): sum(e.fence == f and e.split == s for e in out)
           for f in ("double", "single") for s in ("train", "val", "test")}
    assert per[("double", "train")] == 21 and per[("single", "train")] == 20
    assert per[("double", "val")] == 3 and per[("single", "val")] == 2
    assert per[("double", "test")] == 2 and per[("single", "test")] == 4
    assert by  # every combination observed at least once above


@pytest.mark.parametrize("n,expect", [(10, (8, 1, 1)), (80, (64, 8, 8)), (5, (4, 0, 1))])
def test_split_totals_follow_floor_rule(n, expect):
    out = split_dataset(_entries({"single": n}), seed=3)
    got = tuple(sum(e.split == s for e in out) for s in ("train", "val", "test"))
    assert got == expect


def test_split_preserves_input_order_and_entries():
    entries = _entries({"double": 7, "single": 5})
    out = split_dataset(entries, seed=9)
    assert [e.id for e in out] == [e.id for e in entries]
    assert all(e.split is None for e in entries)  # originals untouched
    assert all(o.split in ("train", "val", "test") for o in out)


def test_split_is_deterministic_per_seed():
    entries = _entries({"double": 13, "single": 17})
    a = split_dataset(entries, seed=5)
    b = split_dataset(entries, seed=5)
    assert [e.split for e in a] == [e.split for e in b]
    c = split_dataset(entries, seed=6)
    assert [e.split for e in a] != [e.split for e in c]


@settings(max_examples=30, deadline=None)
@given(nd=st.integers(0, 40), ns=st.integers(1, 40), seed=st.integers(0, 10 ** 6))
def test_split_partitions_every_entry(nd, ns, seed):
    entries = _entries({"double": nd, "single": ns})
    out = split_dataset(entries, seed=seed)
    n = nd + ns
    counts = {s: sum(e.split == s for e in out) for s in ("train", "val", "test")}
    assert sum(counts.values()) == n
    assert counts["train"] == int(np.floor(0.8 * n))
    assert counts["val"] == int(np.floor(0.1 * n))


def test_split_validation():
    with pytest.raises(EmptyInputError):
        split_dataset([])
    with pytest.raises(ConfigError):
        split_dataset(_entries({"single": 4}), fractions=(0.5, 0.4, 0.2))
    with pytest.raises(ConfigError):
        split_dataset(_entries({"single": 4}), fractions=(0.9, 0.2, -0.1))


# ---------------------------------------------------------------------------
# file I/O


def test_image_png_round_trip(tmp_path):
    img = np.round(np.random.default_rng(0).random((9, 11, 3)) * 255) / 255.0
    p = tmp_path / "img.png"
    save_image(p, img)
    back = load_image(p)
    assert back.shape == (9, 11, 3) and back.dtype == np.float64
    assert np.allclose(back, img, atol=1e-12)  # values on the 1/255 grid survive


def test_mask_png_round_trip(tmp_path):
    mask = (np.random.default_rng(1).random((14, 6)) > 0.5).astype(np.uint8)
    p = tmp_path / "mask.png"
    save_mask(p, mask)
    back = load_mask(p)
    assert back.dtype == np.uint8
    assert np.array_equal(back, mask)


def test_manifest_round_trip(tmp_path):
    entries = [
        ManifestEntry("a", "a.png", "drone", "double", "train", "a_mask.png", 7),
        ManifestEntry("b", "b.png", "still", "single"),
    ]
    p = tmp_path / "manifest.json"
    save_manifest(p, entries)
    assert load_manifest(p) == entries


def test_manifest_entry_requires_core_fields():
    with pytest.raises(DataError):
        ManifestEntry.from_dict({"id": "x", "path": "x.png"})
