import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmvr import quat
from mmvr.errors import InputError
from mmvr.kinematics import forward_kinematics
from mmvr.pose_adjust import (FootLockState, IKChain, RootClampConfig, arm_chains, clamp_root, foot_lock, leg_chains,
                              quintic_decay, solve_two_bone, two_bone_ik)

IDENT = np.array([1.0, 0.0, 0.0, 0.0])
A, B, C = np.zeros(3), np.array([0.0, -0.3, 0.0]), np.array([0.0, -0.6, 0.0])
POLE = np.array([0.0, 0.0, 1.0])


def _mid(new_a):
    return A + quat.rotate(new_a, B - A)


def _interior_angle(a, b, c):
    u, v = a - b, c - b
    return np.degrees(np.arccos(np.clip(u @ v / np.linalg.norm(u) / np.linalg.norm(v), -1, 1)))


# -- root clamp -------------------------------------------------------------------

def test_clamp_outside_radius():
    cfg = RootClampConfig(alpha=0.3, drift_gain=0.0)
    assert np.allclose(clamp_root([0.5, 0.0], [0.0, 0.0], cfg), [0.3, 0.0])


def test_clamp_inside_radius_is_identity():
    cfg = RootClampConfig(alpha=0.3, drift_gain=0.0)
    p = np.array([0.12, -0.16])
    assert np.array_equal(clamp_root(p, [0.0, 0.0], cfg), p)
    assert np.array_equal(clamp_root([1.0, 1.0], [1.0, 1.0], cfg), [1.0, 1.0])


def test_drift_moves_toward_target_proportionally_to_speed():
    cfg = RootClampConfig(alpha=0.3, drift_gain=0.5)
    out = clamp_root([0.2, 0.0], [0.0, 0.0], cfg, speed=1.0, dt=0.1)
    assert np.allclose(out, [0.15, 0.0])
    assert np.allclose(clamp_root([0.01, 0.0], [0.0, 0.0], cfg, speed=10.0, dt=1.0), [0.0, 0.0])


def test_clamp_config_validation():
    with pytest.raises(InputError):
        RootClampConfig(alpha=0.0)
    with pytest.raises(InputError):
        RootClampConfig(drift_gain=-1.0)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0), st.floats(0.0, 2.0))
def test_clamp_holds_on_random_walks(seed, alpha, gain):
    rng = np.random.default_rng(seed)
    cfg = RootClampConfig(alpha, gain)
    p, t = np.zeros(2), np.zeros(2)
    for _ in range(200):
        t = t + rng.normal(0, 0.05, 2)
        p = p + rng.normal(0, 0.08, 2)
        p = clamp_root(p, t, cfg, speed=rng.uniform(0, 2), dt=1 / 60)
        assert np.linalg.norm(p - t) <= alpha + 1e-9


# -- two-bone IK --------------------------------------------------------------------

def test_full_extension_is_straight():
    new_a, new_b, c = solve_two_bone(A, B, C, IDENT, IDENT, [0.0, 0.0, 0.6], POLE)
    assert np.allclose(c, [0, 0, 0.6], atol=1e-9)
    assert _interior_angle(A, _mid(new_a), c) == pytest.approx(180.0, abs=1e-3)


def test_law_of_cosines_bend():
    # equal bones 0.3 and target at 0.3: the three joints form an equilateral triangle
    l1 = l2 = 0.3
    d = 0.3
    oracle = np.degrees(np.arccos((l1 ** 2 + l2 ** 2 - d ** 2) / (2 * l1 * l2)))
    new_a, _, c = solve_two_bone(A, B, C, IDENT, IDENT, [0.0, -0.3, 0.0], POLE)
    assert np.allclose(c, [0, -0.3, 0], atol=1e-9)
    assert _interior_angle(A, _mid(new_a), c) == pytest.approx(oracle, abs=1e-6)
    assert oracle == pytest.approx(60.0)
    # bends toward the pole
    assert _mid(new_a)[2] > 0


def test_unreachable_target_extends_toward_it():
    target = np.array([0.6, -0.8, 0.0])  # distance 1.0
    _, _, c = solve_two_bone(A, B, C, IDENT, IDENT, target, POLE)
    assert np.allclose(c, 0.6 * target, atol=1e-9)
    assert np.linalg.norm(target - c) == pytest.approx(0.4)


def test_target_at_root_is_an_error():
    with pytest.raises(InputError):
        solve_two_bone(A, B, C, IDENT, IDENT, A, POLE)


@settings(max_examples=100)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.lists(st.floats(-1, 1), min_size=4, max_size=4),
       st.floats(0.05, 1.2), st.booleans())
def test_bone_lengths_preserved(direction, qa, dist, keep_bend):
    d = np.array(direction)
    if np.linalg.norm(d) < 1e-3 or np.linalg.norm(qa) < 1e-3:
        return
    ra = quat.normalize(np.array(qa))
    b = A + quat.rotate(ra, np.array([0.0, -0.3, 0.0]))
    c = b + quat.rotate(ra, np.array([0.0, -0.25, 0.05]))
    l2 = np.linalg.norm(c - b)
    target = dist * d / np.linalg.norm(d)
    new_a, new_b, c_new = solve_two_bone(A, b, c, ra, ra, target, POLE, keep_bend)
    b_new = A + quat.rotate(new_a, quat.rotate(quat.inv(ra), b - A))
    assert abs(np.linalg.norm(b_new - A) - 0.3) < 1e-6
    assert abs(np.linalg.norm(c_new - b_new) - l2) < 1e-6
    assert np.allclose(quat.rotate(new_b, quat.rotate(quat.inv(ra), c - b)), c_new - b_new, atol=1e-6)
    if dist <= 0.3 + l2 - 1e-6 and dist >= abs(0.3 - l2) + 1e-6:
        assert np.allclose(c_new, target, atol=1e-6)


def test_chain_validation():
    with pytest.raises(InputError):
        IKChain(0, 1, 2, (0.3, 0.0))
    with pytest.raises(InputError):
        IKChain(0, 1, 2, (0.3, 0.3), softness=1.0)


@pytest.fixture(scope="module")
def stance(walk_db):
    db = walk_db
    i = int(np.flatnonzero(db.contacts[:, 0] & db.contacts[:, 1])[0]) if (db.contacts.all(axis=1)).any() else 60
    parents = np.asarray(db.skeleton.parents)
    return db, parents, db.positions[i].copy(), db.rotations[i].copy()


def test_skeleton_ik_reaches_target(stance):
    db, parents, pos, rot = stance
    arms = arm_chains(db.skeleton, db.joints)
    gp, gr = forward_kinematics(parents, pos, rot)
    ch = arms["left"]
    target = gp[ch.root] + 0.5 * (gp[ch.end] - gp[ch.root]) + np.array([0.0, 0.05, 0.1])
    goal_rot = quat.from_yaw(0.4)
    new, reached = two_bone_ik(ch, parents, rot, gp, gr, target, goal_rot)
    gp2, gr2 = forward_kinematics(parents, pos, new)
    assert np.allclose(gp2[ch.end], target, atol=1e-6)
    assert np.allclose(reached, target, atol=1e-6)
    assert abs(abs(quat.mul(gr2[ch.end], quat.inv(goal_rot))[0]) - 1) < 1e-9
    changed = np.flatnonzero(np.any(new != rot, axis=1))
    assert set(changed) <= {ch.root, ch.mid, ch.end}


# -- foot lock -----------------------------------------------------------------------

def _run_lock(stance, drags, contacts, state=None):
    db, parents, pos, rot = stance
    legs = leg_chains(db.skeleton, db.joints)
    state = FootLockState() if state is None else state
    feet = [legs["left"].end, legs["right"].end]
    out = []
    for k, drag in enumerate(drags):
        p = pos.copy()
        p[0] = pos[0] + np.array([drag, 0.0, 0.0])
        new = foot_lock(legs, parents, p, rot, contacts[k], state, 1 / 60)
        gp, _ = forward_kinematics(parents, p, new)
        out.append((new, gp[feet], p))
    return out, state, legs


def test_locked_foot_stays_while_root_is_dragged(stance):
    drags = np.linspace(0.0, 0.03, 20)
    out, state, _ = _run_lock(stance, drags, [(True, True)] * 20)
    feet = np.array([f for _, f, _ in out])
    drift = np.linalg.norm(feet - feet[0], axis=-1).max()
    assert drift < 1e-3
    assert state.feet["left"].locked and state.feet["right"].locked


def test_no_contact_is_a_no_op(stance):
    _, _, _, rot = stance
    out, _, _ = _run_lock(stance, np.linspace(0, 0.03, 10), [(False, False)] * 10)
    for new, _, _ in out:
        assert np.array_equal(new, rot)


def test_far_departure_unlocks_without_ik(stance):
    _, _, _, rot = stance
    drags = [0.0, 0.0, 0.25, 0.26, 0.27]
    out, state, _ = _run_lock(stance, drags, [(True, True)] * len(drags))
    for new, _, _ in out[2:]:
        assert np.array_equal(new, rot)
    assert not state.feet["left"].locked and not state.feet["right"].locked


def test_relocks_after_contact_restarts(stance):
    drags = [0.0] * 3 + [0.25] * 3 + [0.25] * 3 + [0.26] * 3
    contacts = [(True, True)] * 6 + [(False, False)] * 3 + [(True, True)] * 3
    _, state, _ = _run_lock(stance, drags, contacts)
    assert state.feet["left"].locked


def test_only_leg_joints_change(stance):
    _, _, _, rot = stance
    out, _, legs = _run_lock(stance, np.linspace(0, 0.1, 30), [(True, True)] * 30)
    allowed = {j for ch in legs.values() for j in (ch.root, ch.mid, ch.end)}
    for new, _, _ in out:
        assert set(np.flatnonzero(np.any(new != rot, axis=1))) <= allowed


def test_contact_release_blends_smoothly(stance):
    drags = np.concatenate([np.linspace(0, 0.1, 20), np.full(20, 0.1)])
    contacts = [(True, True)] * 20 + [(False, False)] * 20
    out, _, _ = _run_lock(stance, drags, contacts)
    feet = np.array([f for _, f, _ in out])
    steps = np.linalg.norm(np.diff(feet, axis=0), axis=-1)
    # the pinned foot eases onto the dragged pose instead of jumping 10 cm
    assert steps[19:].max() < 0.03
    assert np.allclose(feet[-1], out[-1][1], atol=1e-12)
    matched = forward_kinematics(stance[1], out[-1][2], stance[3])[0]
    legs = leg_chains(stance[0].skeleton, stance[0].joints)
    assert np.allclose(feet[-1], matched[[legs["left"].end, legs["right"].end]], atol=1e-9)


def test_quintic_decay_boundary_conditions():
    x0, v0, T = np.array([0.2, -0.1]), np.array([1.0, 0.5]), 0.25
    x, v = quintic_decay(x0, v0, T, 0.0)
    assert np.allclose(x, x0) and np.allclose(v, v0)
    h = 1e-6
    for t in np.linspace(0.01, 0.24, 7):
        xp, _ = quintic_decay(x0, v0, T, t + h)
        xm, _ = quintic_decay(x0, v0, T, t - h)
        assert np.allclose((xp - xm) / (2 * h), quintic_decay(x0, v0, T, t)[1], atol=1e-6)
    xe, ve = quintic_decay(x0, v0, T, T - 1e-9)
    assert np.allclose(xe, 0, atol=1e-7) and np.allclose(ve, 0, atol=1e-5)
    assert np.array_equal(quintic_decay(x0, v0, T, T)[0], np.zeros(2))
