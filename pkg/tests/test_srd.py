from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from intercache.config import SrdParams
from intercache.denoiser import denoise_step_full, full_denoise, mac_count
from intercache.srd import (GatherMap, MaskContainmentError, MaskSet, build_mask_set, dilate,
                            format_mask_set, keyframe_propagate, masks_for_request,
                            project_to_latent, srd_step, stage2_mac_fraction)
from intercache.verify import dilate_bruteforce
from intercache.world import object_cells, prompt_embedding

from .conftest import SMALL, SMALL64, make_scene


def project_bruteforce(pixel, p):
    f, hp, wp = pixel.shape
    out = np.zeros((f, hp // p, wp // p), dtype=bool)
    for k in range(f):
        for i in range(hp // p):
            for j in range(wp // p):
                out[k, i, j] = any(pixel[k, i * p + a, j * p + b] for a in range(p) for b in range(p))
    return out


masks_st = st.tuples(st.integers(1, 8), st.integers(1, 32), st.integers(1, 32)).flatmap(
    lambda shape: arrays(bool, shape, elements=st.booleans()))


# -- keyframe propagation ------------------------------------------------------------

def test_keyframe_group_one_is_identity(rng):
    m = rng.random((5, 6, 6)) < 0.3
    assert np.array_equal(keyframe_propagate(m, 1), m)


def test_keyframe_group_all_frames(rng):
    m = rng.random((4, 6, 6)) < 0.3
    out = keyframe_propagate(m, 4)
    assert all(np.array_equal(out[f], m[0]) for f in range(4))


def test_keyframe_moving_object(vocab):
    scene = make_scene(vocab, objects=(("red", "kite", "flies", (1, 3), (0, 2), (0, 1)),))
    cfg = replace(SMALL, frames=4)
    direct = object_cells(scene, (0,), cfg)
    out = keyframe_propagate(direct, 2)
    for f in range(4):
        assert np.array_equal(out[f], direct[(f // 2) * 2])
    assert not np.array_equal(out[1], direct[1])


def test_keyframe_rejects_zero_group():
    with pytest.raises(ValueError):
        keyframe_propagate(np.zeros((2, 2, 2), bool), 0)


# -- projection ----------------------------------------------------------------------

def test_project_examples():
    assert not project_to_latent(np.zeros((2, 8, 8), bool), 2).any()
    px = np.zeros((1, 8, 8), bool)
    px[0, 5, 2] = True
    out = project_to_latent(px, 2)
    assert out.sum() == 1 and out[0, 2, 1]


def test_project_dimension_mismatch():
    with pytest.raises(ValueError):
        project_to_latent(np.zeros((1, 7, 8), bool), 2)
    with pytest.raises(ValueError):
        project_to_latent(np.zeros((1, 8, 8), bool), 2, (8, 8))


def test_project_oracle_random(rng):
    for _ in range(200):
        p = int(rng.integers(1, 5))
        f, h, w = int(rng.integers(1, 9)), int(rng.integers(1, 33 // p + 1)), int(rng.integers(1, 33 // p + 1))
        px = rng.random((f, h * p, w * p)) < rng.uniform(0, 0.2)
        assert np.array_equal(project_to_latent(px, p), project_bruteforce(px, p))


# -- dilation ------------------------------------------------------------------------

def test_dilate_examples():
    m = np.zeros((1, 5, 5), bool)
    m[0, 0, 2] = True
    assert np.array_equal(dilate(m, 0), m)
    out = dilate(m, 1)
    expected = np.zeros((1, 5, 5), bool)
    expected[0, 0:2, 1:4] = True
    assert np.array_equal(out, expected)


def test_dilate_oracle_16(rng):
    for r in (1, 2, 3):
        m = rng.random((1, 16, 16)) < 0.1
        assert np.array_equal(dilate(m, r), dilate_bruteforce(m, r))


@settings(max_examples=120, deadline=None)
@given(masks_st, st.integers(0, 4))
def test_dilate_matches_bruteforce(mask, r):
    assert np.array_equal(dilate(mask, r), dilate_bruteforce(mask, r))


@settings(max_examples=80, deadline=None)
@given(masks_st, st.integers(0, 4), st.integers(0, 4))
def test_dilate_monotone(mask, r1, r2):
    lo, hi = sorted((r1, r2))
    assert not np.any(dilate(mask, lo) & ~dilate(mask, hi))
    smaller = mask.copy()
    smaller.flat[::2] = False
    assert not np.any(dilate(smaller, hi) & ~dilate(mask, hi))


def test_dilate_negative_radius():
    with pytest.raises(ValueError):
        dilate(np.zeros((1, 2, 2), bool), -1)


# -- mask sets -----------------------------------------------------------------------

def test_mask_set_examples():
    zero = build_mask_set(np.zeros((2, 16, 16), bool), 2, 4)
    assert not zero.edit.any() and not zero.see.any() and len(zero.gather) == 0
    ones = build_mask_set(np.ones((2, 16, 16), bool), 1, 3)
    assert ones.edit.all() and ones.see.all()
    base = np.zeros((1, 16, 16), bool)
    base[0, 6:10, 6:10] = True
    ms = build_mask_set(base, 2, 4)
    assert (ms.base.sum(), ms.edit.sum(), ms.see.sum()) == (16, 64, 144)


@settings(max_examples=100, deadline=None)
@given(masks_st, st.integers(0, 4), st.integers(0, 4))
def test_mask_set_containment(base, a, b):
    r, rp = sorted((a, b))
    ms = build_mask_set(base, r, rp)
    assert not np.any(ms.base & ~ms.edit) and not np.any(ms.edit & ~ms.see)


def test_mask_set_detects_broken_dilation():
    with pytest.raises(MaskContainmentError):
        build_mask_set(np.ones((1, 4, 4), bool), 1, 2, dilate_fn=lambda m, r: np.zeros_like(m))
    with pytest.raises(ValueError):
        build_mask_set(np.ones((1, 4, 4), bool), 3, 2)


@settings(max_examples=60, deadline=None)
@given(masks_st)
def test_gather_scatter_round_trip(see):
    g = GatherMap.from_mask(see)
    x = np.arange(see.size * 3, dtype=float).reshape(see.size, 3)
    assert np.array_equal(g.scatter(np.zeros_like(x), g.gather(x))[see.reshape(-1)], x[see.reshape(-1)])
    assert np.array_equal(g.scatter(x, g.gather(x)), x)
    assert np.all(np.diff(g.indices) > 0) and len(g) == int(see.sum())
    assert all(g.inverse[i] == k for k, i in enumerate(g.indices))


# -- srd_step ------------------------------------------------------------------------

def _setup(vocab, cfg):
    from intercache.denoiser import init_weights
    w = init_weights(cfg)
    src = make_scene(vocab)
    tgt = make_scene(vocab, objects=(("wild", "dog", "runs", (2, 5), (2, 5), (0, 0)),))
    traj = full_denoise(prompt_embedding(src, vocab, cfg), cfg, w)
    pe = prompt_embedding(tgt, vocab, cfg, (1,))
    return w, src, traj, pe


def test_srd_full_mask_equals_full_step_double(vocab):
    w, _, traj, pe = _setup(vocab, SMALL64)
    ones = build_mask_set(np.ones((SMALL64.frames, SMALL64.grid_h, SMALL64.grid_w), bool), 0, 0)
    for t in range(SMALL64.steps):
        a = srd_step(traj[t], traj[t + 1], ones, pe, t, 2.0, 1.5, SMALL64, w)
        b = denoise_step_full(traj[t], pe, t, 2.0, 1.5, SMALL64, w)
        assert np.array_equal(a, b)


def test_srd_full_mask_equals_full_step_single(vocab):
    w, _, traj, pe = _setup(vocab, SMALL)
    ones = build_mask_set(np.ones((SMALL.frames, SMALL.grid_h, SMALL.grid_w), bool), 0, 0)
    a = srd_step(traj[1], traj[2], ones, pe, 1, 2.0, 1.5, SMALL, w)
    b = denoise_step_full(traj[1], pe, 1, 2.0, 1.5, SMALL, w)
    assert np.max(np.abs(a - b)) <= 1e-5 * np.max(np.abs(b))


def test_srd_empty_edit_is_source(vocab):
    w, _, traj, pe = _setup(vocab, SMALL)
    base = np.zeros((SMALL.frames, SMALL.grid_h, SMALL.grid_w), bool)
    ms = build_mask_set(base, 1, 2)
    assert np.array_equal(srd_step(traj[1], traj[2], ms, pe, 1, 1.0, 1.0, SMALL, w), traj[2])
    # see non-empty but edit empty: context is computed and discarded
    see = np.ones_like(base)
    ms = MaskSet(base, base, see, 0, 1)
    assert np.array_equal(srd_step(traj[1], traj[2], ms, pe, 1, 1.0, 1.0, SMALL, w), traj[2])


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 100_000), r=st.integers(0, 2), extra=st.integers(0, 2), t=st.integers(0, 3))
def test_srd_fusion_exactness(vocab_seed0, seed, r, extra, t):
    w, traj, pe = vocab_seed0
    rng = np.random.default_rng(seed)
    base = rng.random((SMALL.frames, SMALL.grid_h, SMALL.grid_w)) < rng.uniform(0, 0.2)
    ms = build_mask_set(base, r, r + extra)
    sl = rng.standard_normal((SMALL.n_tokens, SMALL.d)).astype(np.float32)
    out = srd_step(traj[t], sl, ms, pe, t, 1.5, 1.2, SMALL, w)
    keep = ~ms.edit.reshape(-1)
    assert np.array_equal(out[keep], sl[keep])


@pytest.fixture(scope="module")
def vocab_seed0():
    from intercache.world import Vocabulary
    w, _, traj, pe = _setup(Vocabulary(0), SMALL)
    return w, traj, pe


def test_srd_mask_shape_checked(vocab):
    w, _, traj, pe = _setup(vocab, SMALL)
    bad = build_mask_set(np.zeros((1, 4, 4), bool), 0, 0)
    with pytest.raises(ValueError):
        srd_step(traj[0], traj[1], bad, pe, 0, 1.0, 1.0, SMALL, w)


def test_masks_for_request_pipeline(vocab):
    cfg = replace(SMALL, frames=4)
    scene = make_scene(vocab, objects=(("red", "kite", "flies", (2, 4), (1, 3), (0, 1)),))
    ms = masks_for_request(scene, (0,), cfg, SrdParams(r=1, r_prime=2, group_size=2, pool_factor=2))
    cells = object_cells(scene, (0,), cfg)
    assert np.array_equal(ms.base, keyframe_propagate(cells, 2))
    assert np.array_equal(ms.edit, dilate(ms.base, 1))
    empty = masks_for_request(scene, (), cfg, SrdParams())
    assert not empty.see.any()


def test_stage2_mac_fraction():
    shape = (SMALL.frames, SMALL.grid_h, SMALL.grid_w)
    ones = build_mask_set(np.ones(shape, bool), 0, 0)
    assert stage2_mac_fraction(ones, SMALL, 4, 2) == 1.0
    assert stage2_mac_fraction(build_mask_set(np.zeros(shape, bool), 0, 0), SMALL, 4, 2) == 0.0
    half = np.zeros(shape, bool)
    half[:, :4] = True
    ms = build_mask_set(half, 0, 0)
    L = SMALL.n_tokens
    expected = mac_count("step", L // 2, 4, SMALL) / mac_count("step", L, 4, SMALL)
    assert stage2_mac_fraction(ms, SMALL, 4, 3) == expected


def test_format_mask_set():
    base = np.zeros((1, 3, 3), bool)
    base[0, 1, 1] = True
    text = format_mask_set(build_mask_set(base, 0, 1))
    assert "...\n.#.\n..." in text and "###\n###\n###" in text and "total: 9 / 9" in text
