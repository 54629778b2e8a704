import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from msfem.errors import ConfigError
from msfem.field import (
    BoundarySpec,
    PermeabilityModel,
    balanced_blobs,
    cell_weights,
    gen_perm,
    load_perm,
    load_source,
    parse_field_spec,
    transmissibilities,
    write_raster,
)
from msfem.fine import saddle_oracle, solve_fine
from msfem.grid import FineGrid, build_hierarchy


def test_small_raster(tmp_path):
    p = tmp_path / "k.txt"
    p.write_text("2 2\n1 1 1 1\n")
    assert np.array_equal(load_perm(p), np.ones(4))


def test_raster_with_zero_names_the_cell(tmp_path):
    p = tmp_path / "k.txt"
    p.write_text("2 2\n1 1 0 1\n")
    with pytest.raises(ConfigError, match="cell 2"):
        load_perm(p)


def test_raster_size_mismatch(tmp_path):
    p = tmp_path / "k.txt"
    p.write_text("2 2\n1 1 1\n")
    with pytest.raises(ConfigError, match="4"):
        load_perm(p)
    p.write_text("2 2\n1 1 1 1\n")
    with pytest.raises(ConfigError, match="grid"):
        load_perm(p, shape=(3, 2))
    with pytest.raises(ConfigError):
        load_perm(tmp_path / "missing.txt")


def test_spe10_slice_layout(tmp_path):
    rng = np.random.default_rng(1)
    k = np.exp(rng.standard_normal(220 * 60))
    p = tmp_path / "slice.txt"
    write_raster(p, k, 220, 60)
    out = load_perm(p, format="spe10", shape=(220, 60))
    assert out.size == 13200
    assert np.array_equal(out, k)


def test_source_raster_allows_negative(tmp_path):
    p = tmp_path / "f.txt"
    write_raster(p, [-1.0, 0.0, 2.5, 3.0], 2, 2)
    assert np.array_equal(load_source(p), [-1.0, 0.0, 2.5, 3.0])


def test_generators():
    assert np.array_equal(gen_perm("uniform(1)", 5, 4), np.ones(20))
    k = gen_perm("inclusions,contrast=1e4,count=5,size=3", 20, 20, seed=3)
    assert set(np.unique(k)) == {1.0, 1e4}
    assert (k == 1e4).sum() == 5 * 9
    c = gen_perm("channels,contrast=1e4,count=3", 20, 20, seed=3).reshape(20, 20)
    rows = np.flatnonzero((c == 1e4).all(axis=1))
    assert rows.size == 3 and np.all((c == 1e4).any(axis=1) == np.isin(np.arange(20), rows))
    ln = gen_perm("gen:lognormal,sigma=2,corr=2", 16, 16, seed=9)
    assert np.all(ln > 0) and np.all(np.isfinite(ln))


def test_generator_determinism_and_seed():
    a = gen_perm("inclusions,contrast=100,count=10", 30, 30, seed=2**63 + 5)
    b = gen_perm("inclusions,contrast=100,count=10", 30, 30, seed=2**63 + 5)
    c = gen_perm("inclusions,contrast=100,count=10", 30, 30, seed=6)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_inclusions_do_not_touch():
    k = gen_perm("inclusions,contrast=1e4,count=40,size=3", 100, 100, seed=5).reshape(100, 100)
    from scipy import ndimage

    labels, n = ndimage.label(k > 1)
    assert n == 40


@pytest.mark.parametrize("spec", ["bogus", "uniform,foo=1", "inclusions,contrast=x", "uniform(0)",
                                  "inclusions,count=1000,size=5"])
def test_bad_specs(spec):
    with pytest.raises(ConfigError):
        gen_perm(spec, 20, 20)


def test_parse_field_spec_forms():
    assert parse_field_spec("uniform(3)") == ("uniform", {"_0": 3.0})
    assert parse_field_spec("gen:channels,count=2") == ("channels", {"count": 2.0})


def test_transmissibility_examples():
    g = FineGrid(2, 1, 1.0, 0.5)
    bc = BoundarySpec.parse("left=0")
    t = transmissibilities([3.0, 3.0], g, bc)
    assert t[g.vedge(1, 0)] == pytest.approx(3.0)
    t = transmissibilities([1.0, 3.0], g, bc)
    assert t[g.vedge(1, 0)] == pytest.approx(1.5)
    t = transmissibilities([2.0, 1.0], g, bc)
    assert t[g.vedge(0, 0)] == 4.0
    # Neumann edges carry nothing
    assert t[g.vedge(2, 0)] == 0.0 and t[g.hedge(0, 0)] == 0.0


def test_dirichlet_half_cell_value_matches_mixed_oracle():
    """With kappa=2 the Dirichlet coefficient 4 reproduces the mixed solution on a 4x4 grid."""
    h = build_hierarchy(4, 4, 1, 1)
    g = h.fine
    kappa = np.full(16, 2.0)
    bc = BoundarySpec.parse("left=1,right=0")
    model = PermeabilityModel.build(kappa, g, bc)
    de, _ = bc.dirichlet_edges(g)
    assert np.all(model.trans[de] == 4.0)
    f = np.linspace(-1, 1, 16)
    _, sol = solve_fine(g, model, f, bc)
    u, p = saddle_oracle(g, kappa, f, bc)
    assert np.allclose(sol.p, p, rtol=0, atol=1e-12)
    assert np.allclose(sol.u, u, rtol=0, atol=1e-12)


def test_cell_weight_examples():
    g = FineGrid(3, 3)
    bc = BoundarySpec.parse("left=0")
    w = cell_weights(transmissibilities(np.ones(9), g, bc), g)
    assert w[4] == 4.0
    w = cell_weights(transmissibilities(np.full(9, 7.0), g, bc), g)
    assert w[4] == 28.0
    trans = np.zeros(g.n_edges)
    trans[g.cell_edges[4]] = [1, 1.5, 2, 0.5]
    assert cell_weights(trans, g)[4] == 5.0


def test_balanced_blobs_have_zero_mass():
    g = FineGrid(40, 40)
    f = balanced_blobs(g, 4, 4, magnitude=2.0)
    assert f.sum() == 0
    assert set(np.unique(f)) == {-2.0, 0.0, 2.0}


def test_affine_boundary_parsing():
    bc = BoundarySpec.parse("left=1+2*s,right=-1e-3-2.5*s,top=neumann")
    assert (bc.left.value, bc.left.slope) == (1.0, 2.0)
    assert (bc.right.value, bc.right.slope) == (-1e-3, -2.5)
    assert not bc.top.is_dirichlet and not bc.bottom.is_dirichlet
    g = FineGrid(4, 4)
    e, v = bc.dirichlet_edges(g)
    assert np.allclose(v[:4], 1 + 2 * (np.arange(4) + 0.5) / 4)
    with pytest.raises(ConfigError):
        BoundarySpec.parse("middle=1")
    with pytest.raises(ConfigError):
        BoundarySpec.parse("left")


kappas = arrays(float, 36, elements=st.floats(1e-3, 1e3))
bcs = st.sampled_from(["left=1", "left=1,right=0", "top=2,bottom=0,left=1", "left=0,right=0,top=0,bottom=0"])


@given(kappas, bcs)
def test_harmonic_bounds_and_purity(kappa, bc):
    g = FineGrid(6, 6)
    spec = BoundarySpec.parse(bc)
    t = transmissibilities(kappa, g, spec)
    e = g.interior_edges
    k1, k2 = kappa[g.edge_cells[e, 0]], kappa[g.edge_cells[e, 1]]
    assert np.all(t[e] >= np.minimum(k1, k2) * (1 - 1e-12))
    assert np.all(t[e] <= np.maximum(k1, k2) * (1 + 1e-12))
    assert np.array_equal(t, transmissibilities(kappa.copy(), g, spec))
    assert np.all(cell_weights(t, g) > 0)


@given(kappas, bcs, st.floats(1e-3, 1e3))
def test_scaling_kappa_scales_coefficients(kappa, bc, c):
    g = FineGrid(6, 6)
    spec = BoundarySpec.parse(bc)
    t = transmissibilities(kappa, g, spec)
    tc = transmissibilities(c * kappa, g, spec)
    assert np.allclose(tc, c * t, rtol=1e-13, atol=0)
    assert np.allclose(cell_weights(tc, g), c * cell_weights(t, g), rtol=1e-13, atol=0)


def test_nonpositive_kappa_rejected():
    g = FineGrid(2, 2)
    with pytest.raises(ConfigError):
        transmissibilities([1, 1, -1, 1], g, BoundarySpec.parse("left=0"))
    with pytest.raises(ConfigError):
        PermeabilityModel.build(np.ones(3), g, BoundarySpec.parse("left=0"))


@pytest.mark.parametrize("text, expected", [
    ("2", (2.0, 0.0)), ("1+2*s", (1.0, 2.0)), ("1-s", (1.0, -1.0)), ("0.5*s", (0.0, 0.5)),
    ("-1e-3-2.5*s", (-1e-3, -2.5)), ("1e+2+3e-1*s", (100.0, 0.3)), ("-s", (0.0, -1.0)),
])
def test_affine_value_forms(text, expected):
    sc = BoundarySpec.parse(f"left={text}").left
    assert (sc.value, sc.slope) == pytest.approx(expected)


@pytest.mark.parametrize("text", ["x", "1+", "", "1+2*t", "2**s"])
def test_bad_affine_values(text):
    with pytest.raises(ConfigError):
        BoundarySpec.parse(f"left={text}")
