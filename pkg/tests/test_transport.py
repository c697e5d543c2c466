import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proxybdpt.scene import load_shipped
from proxybdpt.transport import (
    FullPath,
    PathVertex,
    SubPath,
    balance_mis_weight,
    connection_contribution,
    geometry_term,
    read_pfm,
    render_bdpt,
    render_pt,
    strategy_pdf,
    subpath_from_batch,
    trace_eye_batch,
    trace_eye_subpath,
    trace_light_batch,
    trace_light_subpath,
    write_pfm,
)
from proxybdpt.transport.mis import _to_area
from proxybdpt.transport.render import connect, strategies
from proxybdpt.transport.subpath import CAMERA, DIFFUSE, LIGHT, strategy_pdfs_single


def vertex(pos, nrm, flag=DIFFUSE, mid=0, prim=-1):
    return PathVertex(np.asarray(pos, float), np.asarray(nrm, float), mid, None, flag, 1.0, np.ones(3), prim)


# ---------------------------------------------------------------------------
# sub-paths


def test_light_subpath_starts_on_emitter(diffuse_box):
    rng = np.random.default_rng(0)
    for _ in range(20):
        sp = trace_light_subpath(diffuse_box, 4, rng)
        y0 = sp.vertices[0]
        assert y0.flag == LIGHT
        assert y0.pdf_fwd == pytest.approx(1 / diffuse_box.total_light_area)
        assert diffuse_box.emitter_of_prim[y0.primitive_id] >= 0
        assert 1 <= len(sp) <= 4


def test_eye_subpath_starts_at_camera(diffuse_box):
    sp = trace_eye_subpath(diffuse_box, (1, 2), 4, np.random.default_rng(1))
    assert sp.vertices[0].flag == CAMERA
    assert np.allclose(sp.vertices[0].position, diffuse_box.camera.position)
    assert len(sp) >= 2  # closed box: the camera ray always hits


def test_subpath_root_must_match_kind():
    with pytest.raises(ValueError):
        SubPath([vertex([0, 0, 0], [0, 0, 1], flag=CAMERA)], "light")
    with pytest.raises(ValueError):
        SubPath([vertex([0, 0, 0], [0, 0, 1], flag=LIGHT)], "eye")


def test_full_path_needs_eye_surface_vertex(diffuse_box):
    rng = np.random.default_rng(2)
    light = trace_light_subpath(diffuse_box, 4, rng)
    eye = trace_eye_subpath(diffuse_box, (0, 0), 4, rng)
    with pytest.raises(ValueError):
        FullPath(light, eye, 1, 1)
    fp = FullPath(light, eye, 1, 2)
    assert fp.k == 2 and len(fp.surface_vertices()) == 2


# ---------------------------------------------------------------------------
# geometry term


def test_geometry_term_facing_points(diffuse_box):
    a = vertex([0.5, 0.2, 0.5], [0, 1, 0])
    b = vertex([0.5, 0.8, 0.5], [0, -1, 0])
    assert geometry_term(a, b, diffuse_box) == pytest.approx(1 / 0.36)


def test_geometry_term_oblique_and_symmetric(diffuse_box):
    a = vertex([0.2, 0.1, 0.2], [0, 1, 0])
    b = vertex([0.9, 0.7, 0.3], [-1, 0, 0])
    d = b.position - a.position
    L2 = d @ d
    expect = abs(d[1]) * abs(d[0]) / L2 / L2
    assert geometry_term(a, b, diffuse_box) == pytest.approx(expect)
    assert geometry_term(b, a, diffuse_box) == pytest.approx(expect)


def test_geometry_term_camera_has_no_cosine(diffuse_box):
    cam = vertex(diffuse_box.camera.position, [0, 0, -1], flag=CAMERA)
    p = vertex([0.5, 0.0, 0.5], [0, 1, 0])
    d = p.position - cam.position
    assert geometry_term(cam, p, diffuse_box) == pytest.approx(abs(d[1]) / np.linalg.norm(d) / (d @ d))


def test_geometry_term_occluded_is_zero(diffuse_box):
    # the ball sits between these two points
    c = diffuse_box.geometry.center[6]
    a = vertex([c[0], 0.0, c[2]], [0, 1, 0])
    b = vertex([c[0], 1.0, c[2]], [0, -1, 0])
    assert geometry_term(a, b, diffuse_box) == 0.0


def test_geometry_term_coincident_raises(diffuse_box):
    a = vertex([0.5, 0.5, 0.5], [0, 1, 0])
    with pytest.raises(ValueError):
        geometry_term(a, a, diffuse_box)


# ---------------------------------------------------------------------------
# connections: scalar route vs batched route


@pytest.mark.parametrize("name", ["diffuse_box", "mirror_box"])
def test_connection_value_matches_batched(name):
    scene = load_shipped(name)
    rng = np.random.default_rng(3)
    n = 256
    D = 4
    light = trace_light_batch(scene, n, D, rng)
    px = rng.integers(scene.camera.width, size=n)
    py = rng.integers(scene.camera.height, size=n)
    eye = trace_eye_batch(scene, px, py, D, rng)
    checked = 0
    for s, t in strategies(D, D, D):
        ok = (eye.length >= t - 1) & (light.length >= s)
        idx = np.flatnonzero(ok)[:12]
        if len(idx) == 0:
            continue
        batch = connect(scene, light, idx, s, eye, idx, t)
        for j, i in enumerate(idx):
            ls = subpath_from_batch(scene, light, i)
            es = subpath_from_batch(scene, eye, i)
            single = connection_contribution(SubPath(ls.vertices[:s], "light"), SubPath(es.vertices[:t], "eye"), scene)
            assert np.allclose(single, batch[j], rtol=1e-9, atol=1e-12)
            checked += 1
    assert checked > 50


# ---------------------------------------------------------------------------
# strategy densities


def trace_density(light, eye, s, t):
    p = 1.0
    for v in light.vertices[:s]:
        p *= v.pdf_fwd
    for v in eye.vertices[1:t]:
        p *= v.pdf_fwd
    return p


@pytest.mark.parametrize("name", ["diffuse_box", "mirror_box", "hallway_mini"])
def test_strategy_pdf_matches_trace_bookkeeping(name):
    scene = load_shipped(name)
    rng = np.random.default_rng(4)
    D = scene.settings.max_depth
    checked = 0
    for _ in range(150):
        light = trace_light_subpath(scene, D, rng)
        eye = trace_eye_subpath(scene, (int(rng.integers(scene.camera.width)), int(rng.integers(scene.camera.height))), D, rng)
        for s in range(0, len(light) + 1):
            for t in range(2, len(eye) + 1):
                if s + t - 1 > D:
                    continue
                fp = FullPath(light, eye, s, t)
                verts = fp.surface_vertices()
                # specular junction vertices have no connectable density
                if s >= 1 and (verts[s - 1].specular or verts[s].specular):
                    continue
                if s == 0 and not scene.emitter_of_prim[verts[0].primitive_id] >= 0:
                    continue
                expect = trace_density(light, eye, s, t)
                got = strategy_pdf(fp, s, t, scene)
                assert got == pytest.approx(expect, rel=1e-9)
                checked += 1
    assert checked > 100


def test_specular_junction_has_zero_density(mirror_box):
    rng = np.random.default_rng(5)
    seen = 0
    for _ in range(400):
        light = trace_light_subpath(mirror_box, 5, rng)
        eye = trace_eye_subpath(mirror_box, (32, 32), 5, rng)
        for s in range(1, len(light) + 1):
            if s + 1 > 5 or not light.vertices[s - 1].specular or s < 2:
                continue
            fp = FullPath(light, eye, s, 2)
            assert strategy_pdf(fp, s, 2, mirror_box) == 0.0
            seen += 1
    assert seen > 0


def test_strategy_pdf_rejects_bad_split(diffuse_box):
    rng = np.random.default_rng(6)
    fp = FullPath(trace_light_subpath(diffuse_box, 4, rng), trace_eye_subpath(diffuse_box, (0, 0), 4, rng), 1, 2)
    with pytest.raises(ValueError):
        strategy_pdf(fp, 2, 2, diffuse_box)


def sampled_full_paths(scene, n, seed):
    rng = np.random.default_rng(seed)
    D = scene.settings.max_depth
    out = []
    while len(out) < n:
        light = trace_light_subpath(scene, D, rng)
        eye = trace_eye_subpath(scene, (int(rng.integers(scene.camera.width)), int(rng.integers(scene.camera.height))), D, rng)
        s = int(rng.integers(0, len(light) + 1))
        t = int(rng.integers(2, len(eye) + 1)) if len(eye) >= 2 else 0
        if t < 2 or s + t - 1 > D:
            continue
        fp = FullPath(light, eye, s, t)
        p = strategy_pdfs_single(fp, scene)
        if p[s] > 0:
            out.append((fp, s, t))
    return out


@pytest.mark.parametrize("name", ["diffuse_box", "mirror_box"])
def test_balance_weights_partition_unity(name):
    scene = load_shipped(name)
    for fp, s, t in sampled_full_paths(scene, 300, 7):
        p = strategy_pdfs_single(fp, scene)
        total = sum(balance_mis_weight(fp, (j, fp.k + 1 - j), scene) for j in range(fp.k) if p[j] > 0)
        assert total == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(
    st.floats(1e-3, 1e3), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1),
    st.floats(0.05, 1), st.floats(0.01, 5.0),
)
def test_area_solid_angle_roundtrip(pdf, nx, ny, nz, cz, dist):
    n = np.array([nx, ny, nz + 2.0])
    n /= np.linalg.norm(n)
    x = np.zeros((1, 3))
    d = np.array([np.sqrt(1 - cz * cz), 0.0, cz]) * dist
    y = x + d
    area = _to_area(np.array([pdf]), x, y, n[None])[0]
    # back to solid angle: multiply by dist^2 / |cos|
    back = area * dist**2 / abs(np.dot(n, d / dist))
    assert back == pytest.approx(pdf, rel=1e-9)


# ---------------------------------------------------------------------------
# renderers


def test_pt_and_bdpt_agree_on_diffuse_box(diffuse_box):
    pt = render_pt(diffuse_box, 4096, np.random.default_rng(8))
    bd = render_bdpt(diffuse_box, 4096, np.random.default_rng(9))
    se = np.sqrt(pt.stderr**2 + bd.stderr**2)
    assert np.all(np.abs(pt.image - bd.image) < 5 * se + 1e-6)


def test_bdpt_furnace(furnace):
    res = render_bdpt(furnace, 128, np.random.default_rng(10))
    assert res.image.mean() == pytest.approx(2.0, rel=0.01)


def test_render_is_deterministic_for_a_seed(diffuse_box):
    a = render_bdpt(diffuse_box, 8, np.random.default_rng(11)).image
    b = render_bdpt(diffuse_box, 8, np.random.default_rng(11)).image
    assert np.array_equal(a, b)


def test_time_budget_stops(diffuse_box):
    res = render_pt(diffuse_box, None, np.random.default_rng(12), time_budget=0.2)
    assert res.spp >= 1
    assert res.elapsed < 5


def test_pfm_roundtrip(tmp_path):
    img = np.random.default_rng(13).random((5, 7, 3)).astype(np.float32)
    write_pfm(tmp_path / "x.pfm", img)
    assert np.array_equal(read_pfm(tmp_path / "x.pfm"), img)
