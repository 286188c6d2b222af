import itertools
import json
import math
from collections import Counter, deque

import numpy as np
import pytest

from threedp.errors import InvalidGraft
from threedp.geometry import ContactParams, HopfContactCoords, Pose, axis_angle_quat, compose
from threedp.scenegraph import (
    NORTH,
    ROOT,
    ContactPrior,
    Floating,
    SceneContext,
    SceneGraph,
    candidate_pairs,
    count_structures,
    dumps_graph,
    enumerate_structures,
    graph_from_dict,
    graph_to_dict,
    is_tree,
    prior_logpdf,
    sample_prior,
    sample_structure,
    sever_graft,
    world_poses,
)
from threedp.shapes import ShapeBelief


def cube_ctx(n=3, **kw):
    beliefs = {f"o{i}": ShapeBelief(np.ones((2, 2, 2)), 1.0) for i in range(n)}
    return SceneContext(beliefs, **kw)


def flush_on_top():
    return ContactParams(4, 5, HopfContactCoords(0, 0, 0, NORTH, 0.0))


def test_world_pose_floating():
    ctx = cube_ctx(1)
    p = Pose(np.array([1.0, 2, 3]), axis_angle_quat([0, 1, 0], 0.7))
    g = SceneGraph(("o0",), (ROOT,), (Floating(p),))
    assert world_poses(g, ctx.planes)[0] == p


def test_world_pose_chain_stack():
    ctx = cube_ctx(2)
    pa = Pose(np.array([5.0, -1, 2]), axis_angle_quat([1, 2, 3], 0.9))
    g = SceneGraph(("o0", "o1"), (ROOT, 0), (Floating(pa), flush_on_top()))
    xa, xb = world_poses(g, ctx.planes)
    # 2x2x2 cube: B sits one cube height above A along A's local +z
    expect = compose(pa, Pose(np.array([0.0, 0.0, 2.0])))
    assert np.allclose(xb.t, expect.t, atol=1e-12)
    assert np.allclose(xb.R, expect.R, atol=1e-12)


def test_rerooting_keeps_world_pose():
    ctx = cube_ctx(2)
    pa = Pose(np.array([5.0, -1, 2]), axis_angle_quat([1, 2, 3], 0.9))
    g = SceneGraph(("o0", "o1"), (ROOT, 0), (Floating(pa), flush_on_top()))
    xb = world_poses(g, ctx.planes)[1]
    g2 = SceneGraph(g.types, (ROOT, ROOT), (Floating(pa), Floating(xb)))
    assert world_poses(g2, ctx.planes)[1] == xb


def test_sever_graft_examples():
    new, prev = sever_graft((ROOT, ROOT), 1, 0)
    assert new == (ROOT, 0) and prev == ROOT
    back, prev2 = sever_graft(new, 1, prev)
    assert back == (ROOT, ROOT) and prev2 == 0
    with pytest.raises(InvalidGraft):
        sever_graft((ROOT, 0), 0, 1)
    with pytest.raises(InvalidGraft):
        sever_graft((ROOT, 0), 0, 0)


def test_sever_graft_preserves_trees(rng):
    for _ in range(10_000):
        n = int(rng.integers(1, 7))
        parent = sample_structure(n, rng)
        v = int(rng.integers(n))
        pairs = [u for (w, u) in candidate_pairs(parent) if w == v]
        u = pairs[rng.integers(len(pairs))]
        new, prev = sever_graft(parent, v, u)
        assert is_tree(new)
        assert sever_graft(new, v, prev)[0] == tuple(parent)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_sever_graft_irreducible(n):
    trees = set(enumerate_structures(n))
    start = next(iter(trees))
    seen, todo = {start}, deque([start])
    while todo:
        t = todo.popleft()
        for v, u in candidate_pairs(t):
            nxt = sever_graft(t, v, u)[0]
            if nxt not in seen:
                seen.add(nxt)
                todo.append(nxt)
    assert seen == trees


def test_candidate_pairs_examples():
    assert candidate_pairs((ROOT,)) == {(0, ROOT)}
    assert candidate_pairs((ROOT, ROOT)) == {(0, ROOT), (0, 1), (1, ROOT), (1, 0)}
    chain = candidate_pairs((ROOT, 0))
    assert (0, 1) not in chain and (1, 0) in chain


def brute_force_trees(n):
    out = 0
    for p in itertools.product(range(-1, n), repeat=n):
        ok = True
        for v in range(n):
            u, steps = v, 0
            while u != -1 and steps <= n:
                u, steps = p[u], steps + 1
            ok &= u == -1
        out += ok
    return out


@pytest.mark.parametrize("n,expected", [(1, 1), (2, 3), (3, 16), (4, 125)])
def test_count_structures(n, expected):
    assert count_structures(n) == expected
    assert brute_force_trees(n) == expected
    assert len(enumerate_structures(n)) == expected


def test_prior_single_floating_at_centre():
    ctx = cube_ctx(1)
    g = SceneGraph(("o0",), (ROOT,), (Floating(Pose()),))
    vol = float(np.prod(ctx.bounds_hi - ctx.bounds_lo))
    assert prior_logpdf(g, ctx) == pytest.approx(-math.log(vol) - 2 * math.log(math.pi), abs=1e-12)


def test_prior_contact_child_at_mode():
    ctx = cube_ctx(2)
    g = SceneGraph(("o0", "o1"), (ROOT, 0), (Floating(Pose()), flush_on_top()))
    vol = 100.0**3
    k = 250.0
    # vMF on S^2 at its mode: k / (4 pi sinh k) * e^k, taken in log space
    log_vmf_mode = math.log(k) - math.log(4 * math.pi) - (k + math.log1p(-math.exp(-2 * k)) - math.log(2)) + k
    expect = (
        -1 * math.log(3)                       # 1 / (N+1)^(N-1)
        - math.log(vol) - 2 * math.log(math.pi)  # floating parent
        - math.log(36) - 2 * math.log(100.0)   # faces and offsets
        - 0.5 * math.log(2 * math.pi)          # N(0; 0, 1)
        + log_vmf_mode
        - math.log(2 * math.pi)                # phi
    )
    assert prior_logpdf(g, ctx) == pytest.approx(expect, abs=1e-9)


def test_prior_offset_out_of_support():
    ctx = cube_ctx(2)
    th = ContactParams(4, 5, HopfContactCoords(60.0, 0, 0, NORTH, 0.0))
    g = SceneGraph(("o0", "o1"), (ROOT, 0), (Floating(Pose()), th))
    assert prior_logpdf(g, ctx) == -np.inf
    far = SceneGraph(("o0",), (ROOT,), (Floating(Pose(np.array([0, 0, 51.0]))),))
    assert prior_logpdf(far, ctx) == -np.inf


def fibonacci_sphere(n):
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    th = np.pi * (1 + 5**0.5) * i
    r = np.sqrt(1 - z * z)
    return np.column_stack([r * np.cos(th), r * np.sin(th), z])


def test_contact_prior_integrates_to_one():
    """Quadrature over (a, b, z, eta, phi) for one face pair, times 36 pairs."""
    from threedp.scenegraph import contact_logpdf

    cp = ContactPrior(ab_half_width=2.0, z_std=1.0, kappa=3.0)
    etas = fibonacci_sphere(4000)
    d_eta = 4 * math.pi / len(etas)
    z = np.linspace(-8, 8, 161)
    dz = z[1] - z[0]
    # density factorises; integrate each factor on its own grid through the full logpdf
    base = lambda **kw: math.exp(contact_logpdf(ContactParams(0, 0, HopfContactCoords(
        kw.get("a", 0), kw.get("b", 0), kw.get("z", 0), kw.get("eta", NORTH), kw.get("phi", 0))), cp))
    p0 = base()
    dab = 0.1
    ab = np.arange(-2.5, 2.5, dab) + dab / 2  # midpoints
    I_a = sum(base(a=a) for a in ab) * dab / p0
    I_z = sum(base(z=v) for v in z) * dz / p0
    I_eta = sum(base(eta=e) for e in etas if e[2] > -1 + 1e-6) * d_eta / p0
    I_phi = 2 * math.pi
    total = 36 * p0 * I_a * I_a * I_z * I_eta * I_phi
    assert total == pytest.approx(1.0, rel=0.02)


def test_sample_prior_g0(rng):
    ctx = cube_ctx(3)
    for _ in range(20):
        g = sample_prior(ctx, 3, ("o0", "o1", "o2"), rng, mode="g0")
        assert g.parent == (ROOT, ROOT, ROOT)
        for th in g.params:
            assert ctx.in_bounds(th.pose.t)


def test_sample_structure_uniform(rng):
    n_draws = 100_000
    counts = Counter(sample_structure(3, rng) for _ in range(n_draws))
    assert set(counts) == set(enumerate_structures(3))
    p = 1 / 16
    sigma = math.sqrt(p * (1 - p) / n_draws)
    for c in counts.values():
        assert abs(c / n_draws - p) < 3 * sigma * 1.3  # 16 simultaneous checks


def test_json_round_trip(rng):
    ctx = cube_ctx(3)
    g = sample_prior(ctx, 3, ("o0", "o1", "o2"), rng, mode="uniform")
    d = graph_to_dict(g)
    assert set(d) == {"n", "types", "nodes"}
    for node in d["nodes"]:
        assert set(node) == {"id", "parent", "param"}
        kind = node["param"]["kind"]
        keys = {"kind", "t", "q"} if kind == "floating" else {"kind", "f", "fp", "a", "b", "z", "eta", "phi"}
        assert set(node["param"]) == keys
    back = graph_from_dict(json.loads(json.dumps(d)))
    assert back == g
    assert dumps_graph(back) == dumps_graph(g)


def test_graph_invariants():
    with pytest.raises(ValueError):
        SceneGraph(("a", "a"), (ROOT, ROOT), (Floating(Pose()), Floating(Pose())))
    with pytest.raises(ValueError):
        SceneGraph(("a", "b"), (1, 0), (flush_on_top(), flush_on_top()))
    with pytest.raises(ValueError):
        SceneGraph(("a",), (ROOT,), (flush_on_top(),))
