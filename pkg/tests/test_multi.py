import math

import numpy as np
import pytest

from conftest import LAYOUT, random_scene
from hvsense import multi, single
from hvsense._search import left_null_space
from hvsense.errors import InfeasibleError, UnobservableDimensionError
from hvsense.geometry import ClusterLayout, Pose, Scene, angle_diff, forward_observe, observe, shift_toas


def test_offsets():
    assert multi.offsets(0.0, 3.0, 6.0, 3) == (3.0, 6.0)
    np.testing.assert_allclose(multi.offsets(math.pi / 2, 3.0, 6.0, 2), (0.0, 3.0), atol=1e-15)
    w = 1.234
    k2, k3, k4 = (np.array(multi.offsets(w, 3.0, 6.0, k)) for k in (2, 3, 4))
    np.testing.assert_allclose(k3, k2 + k4, atol=1e-12)


def test_shapes_and_null_dimension():
    rng = np.random.default_rng(0)
    obs = observe(random_scene(rng, 6, multi=True))
    system = multi.assemble_multi(obs, 0.2)
    assert system.A_hat.shape == (10, 9)
    assert system.B.shape == (10,)
    assert left_null_space(system.A_hat).shape[1] == 1
    assert sum(system.partition) == 6


def test_sign_convention_locked_by_oracle(oracle_fixtures):
    checked = 0
    for fx in oracle_fixtures:
        if fx["scene"]["layout"] is None:
            continue
        scene = Scene.from_dict(fx["scene"])
        system = multi.assemble_multi(observe(scene), scene.hv_pose.heading)
        z = np.r_[
            [fx["paths"][i]["nu"] for i in system.order],
            fx["paths"][system.order[0]]["d"],
            scene.layout.length,
            scene.layout.width,
        ]
        assert np.max(np.abs(system.A_hat @ z - system.B)) <= 1e-9
        checked += 1
    assert checked >= 5


def test_shape_columns_follow_membership():
    rng = np.random.default_rng(1)
    obs = observe(random_scene(rng, 10, multi=True))
    w = 0.8
    system = multi.assemble_multi(obs, w)
    m = len(obs) - 1
    labels = [obs[i].cluster for i in system.order][1:]
    col_l, col_w = system.A_hat[:, -2], system.A_hat[:, -1]
    for r, k in enumerate(labels):
        # anchor is cluster 1, so entries are nonzero exactly on P2+P3 (L) and P3+P4 (W)
        assert abs(col_l[r]) == pytest.approx(math.cos(w) if k in (2, 3) else 0.0, abs=1e-15)
        assert abs(col_l[m + r]) == pytest.approx(math.sin(w) if k in (2, 3) else 0.0, abs=1e-15)
        assert abs(col_w[r]) == pytest.approx(math.sin(w) if k in (3, 4) else 0.0, abs=1e-15)
        assert abs(col_w[m + r]) == pytest.approx(math.cos(w) if k in (3, 4) else 0.0, abs=1e-15)


def test_a_block_matches_single_solver():
    rng = np.random.default_rng(2)
    obs = observe(random_scene(rng, 8, multi=True))
    system = multi.assemble_multi(obs, 1.1)
    plain = single.assemble([obs[i] for i in system.order], 1.1)
    assert np.array_equal(system.A_hat[:, :-2], plain.A)
    assert np.array_equal(system.B, plain.B)


def test_single_cluster_labelling_is_unobservable():
    rng = np.random.default_rng(3)
    scene = random_scene(rng, 8, multi=True)
    obs = [type(o)(o.theta, o.phi, cluster=1, toa_ticks=o.toa_ticks) for o in observe(scene)]
    system = multi.assemble_multi(obs, 0.4)
    assert np.all(system.A_hat[:, -2:] == 0.0)
    with pytest.raises(UnobservableDimensionError):
        multi.sense_multi(obs)


def test_missing_width_side_is_unobservable():
    rng = np.random.default_rng(4)
    base = random_scene(rng, 8, multi=True)
    scene = Scene(base.hv_pose, base.scatterers, (1, 2) * 4, LAYOUT, base.gamma)
    with pytest.raises(UnobservableDimensionError, match="width"):
        multi.sense_multi(observe(scene))


def test_feasibility_gate():
    rng = np.random.default_rng(5)
    obs = observe(random_scene(rng, 5, multi=True))
    with pytest.raises(InfeasibleError, match="P<6"):
        multi.sense_multi(obs)
    with pytest.raises(InfeasibleError):
        multi.search_orientation_multi(obs)


def test_p6_recovers_everything():
    # the minimal system can have an exact twin solution; it must then be flagged
    rng = np.random.default_rng(6)
    resolved = 0
    for _ in range(20):
        scene = random_scene(rng, 6, multi=True)
        est = multi.sense_multi(observe(scene))
        if abs(angle_diff(est.omega_star, scene.hv_pose.heading)) > 1e-6:
            assert est.ambiguous
            continue
        resolved += 1
        np.testing.assert_allclose(est.vertices, scene.cluster_positions(), atol=1e-4)
        assert est.L_star == pytest.approx(3.0, abs=1e-4)
        assert est.W_star == pytest.approx(6.0, abs=1e-4)
    assert resolved >= 17


def test_rectangle_closure_and_centroid():
    rng = np.random.default_rng(7)
    est = multi.sense_multi(observe(random_scene(rng, 12, multi=True)))
    v = est.vertices
    np.testing.assert_allclose(v[2], v[1] + v[3] - v[0], atol=1e-6)
    np.testing.assert_allclose(est.centroid, v.mean(axis=0))
    assert np.linalg.norm(v[1] - v[0]) == pytest.approx(est.L_star, abs=1e-6)
    assert np.linalg.norm(v[3] - v[0]) == pytest.approx(est.W_star, abs=1e-6)


def four_per_cluster(rng, per=4):
    scene = random_scene(rng, 4 * per, multi=True)
    labels = tuple(k for k in (1, 2, 3, 4) for _ in range(per))
    return Scene(scene.hv_pose, scene.scatterers, labels, LAYOUT, scene.gamma)


def test_sixteen_paths_agree_with_per_cluster_solves():
    rng = np.random.default_rng(8)
    scene = four_per_cluster(rng, per=5)
    obs = observe(scene)
    est = multi.sense_multi(obs)
    np.testing.assert_allclose(est.vertices, scene.cluster_positions(), atol=1e-4)
    for k in (1, 2, 3, 4):
        own = [o for o in obs if o.cluster == k]
        pos = single.sense(own).position
        np.testing.assert_allclose(pos, est.vertices[k - 1], atol=1e-3)


def test_prior_helps_at_six_paths():
    rng = np.random.default_rng(9)
    scene = random_scene(rng, 6, multi=True)
    obs = observe(scene)
    est = multi.sense_multi(obs)
    np.testing.assert_allclose(est.vertices, scene.cluster_positions(), atol=1e-4)
    for k in (1, 2, 3, 4):
        own = [o for o in obs if o.cluster == k]
        with pytest.raises(InfeasibleError):
            single.sense(own)


def test_collapsed_layout_matches_single_solver():
    rng = np.random.default_rng(10)
    base = random_scene(rng, 9, multi=True)
    scene = Scene(base.hv_pose, base.scatterers, base.clusters, ClusterLayout(0.0, 0.0), base.gamma)
    obs = observe(scene)
    colocated = [type(o)(o.theta, o.phi, toa_ticks=o.toa_ticks) for o in obs]
    ordered = [colocated[i] for i in multi.assemble_multi(obs, 0.0).order]
    ref = single.sense(ordered).position
    est = multi.sense_multi(obs, known_dims=(0.0, 0.0))
    np.testing.assert_allclose(est.centroid, ref, atol=1e-6)
    np.testing.assert_allclose(est.centroid, scene.hv_pose.position, atol=1e-6)


def test_known_dims_needs_only_four_paths():
    rng = np.random.default_rng(11)
    scene = random_scene(rng, 4, multi=True)
    est = multi.sense_multi(observe(scene), known_dims=(3.0, 6.0))
    np.testing.assert_allclose(est.vertices, scene.cluster_positions(), atol=1e-4)


def test_reanchoring_without_cluster_one():
    rng = np.random.default_rng(12)
    scene = random_scene(rng, 14, multi=True)
    obs = [o for o in observe(scene) if o.cluster != 1]
    if len(obs) < 6:
        pytest.skip("scene drew too few paths outside cluster 1")
    system = multi.assemble_multi(obs, scene.hv_pose.heading)
    assert system.anchor == 2
    est = multi.sense_multi(obs)
    np.testing.assert_allclose(est.vertices, scene.cluster_positions(), atol=1e-4)


def test_reference_reordered_into_cluster_one():
    rng = np.random.default_rng(13)
    scene = random_scene(rng, 8, multi=True)
    obs = observe(scene)
    rotated = obs[3:] + obs[:3]
    system = multi.assemble_multi(rotated, 0.0)
    assert rotated[system.order[0]].cluster == 1
    a, b = multi.sense_multi(obs), multi.sense_multi(rotated)
    np.testing.assert_allclose(a.vertices, b.vertices, atol=1e-6)


def test_gamma_shift_bit_identical():
    rng = np.random.default_rng(14)
    obs = observe(random_scene(rng, 9, multi=True))
    a = multi.sense_multi(obs)
    for delta in (-1e-3, 4.4e-8, 1e-3):
        b = multi.sense_multi(shift_toas(obs, delta))
        assert a.omega_star == b.omega_star
        assert np.array_equal(a.vertices, b.vertices)
        assert np.array_equal(a.z_hat, b.z_hat)


def test_z_hat_in_caller_order():
    rng = np.random.default_rng(15)
    scene = random_scene(rng, 10, multi=True)
    pairs = forward_observe(scene)
    est = multi.sense_multi([o for o, _ in pairs])
    np.testing.assert_allclose(est.z_hat[:10], [g.nu for _, g in pairs], atol=1e-6)
    np.testing.assert_allclose(est.z_hat[-2:], [3.0, 6.0], atol=1e-6)


def test_swapped_dimensions_are_recovered():
    rng = np.random.default_rng(16)
    base = random_scene(rng, 10, multi=True)
    lay = ClusterLayout(6.0, 3.0)
    scene = Scene(Pose(base.hv_pose.position, base.hv_pose.heading), base.scatterers, base.clusters, lay, base.gamma)
    est = multi.sense_multi(observe(scene))
    assert (est.L_star, est.W_star) == pytest.approx((6.0, 3.0), abs=1e-4)


def test_oversized_layout_flagged_implausible():
    rng = np.random.default_rng(8)
    obs = observe(random_scene(rng, 12, multi=True, layout=ClusterLayout(40.0, 6.0)))
    est = multi.sense_multi(obs)
    assert not est.valid and any("vehicle-sized" in w for w in est.warnings)
    relaxed = multi.sense_multi(obs, single.SolverConfig(max_dimension=50.0))
    assert relaxed.valid and relaxed.L_star == pytest.approx(40.0, abs=1e-4)
    # a supplied layout is never second-guessed
    assert multi.sense_multi(obs, known_dims=(40.0, 6.0)).valid
