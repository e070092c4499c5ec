import numpy as np

from keyprim.metrics import resample_arclength


def arclength_rmse(gen, ref, n=200):
    """RMSE between arc-length resamplings, relative to the reference path length."""
    a, b = resample_arclength(gen, n), resample_arclength(ref, n)
    length = np.sum(np.linalg.norm(np.diff(b, axis=0), axis=1))
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))) / length)


def brute_force_endpose(master, stats, start, w_rot, angle_step, u_target):
    """Exhaustive candidate search built on scipy rotations.

    Returns ``(best_index, best_distance, distances)``.
    """
    from scipy.spatial.transform import Rotation

    from keyprim.bridge import perpendicular_basis

    z_master = master.axis
    e1, _ = perpendicular_basis(z_master)
    tilted = np.cos(stats.angle_mean) * z_master + np.sin(stats.angle_mean) * e1
    n = int(np.ceil(2 * np.pi / angle_step - 1e-9))
    w, x, y, z = start.orientation
    r_start = Rotation.from_quat([x, y, z, w])
    z_start = r_start.apply([0.0, 0.0, 1.0])
    dists = []
    for k in range(n):
        axis = Rotation.from_rotvec(z_master * k * angle_step).apply(tilted)
        cross = np.cross(z_start, axis)
        angle = np.arctan2(np.linalg.norm(cross), z_start @ axis)
        turn = Rotation.from_rotvec(cross / np.linalg.norm(cross) * angle) if angle > 0 else Rotation.identity()
        cand = turn * r_start
        dists.append(np.linalg.norm(u_target - start.position) + w_rot * (cand * r_start.inv()).magnitude())
    dists = np.array(dists)
    return int(np.argmin(dists)), float(dists.min()), dists


def random_pour_scenario(seed, stats):
    """A new master mug placement, slave mug and start pose for pouring."""
    from keyprim.data import mug_keypoints
    from keyprim.manifold import Pose, quat_from_axis_angle, quat_mul

    r = np.random.default_rng(seed)
    m_pos = np.array([r.uniform(0.3, 0.8), r.uniform(-0.3, 0.3), 0.0])
    m_q = quat_from_axis_angle([0, 0, 1], r.uniform(-np.pi, np.pi))
    if r.uniform() < 0.5:
        m_q = quat_mul(quat_from_axis_angle(r.standard_normal(3), r.uniform(0, 0.3)), m_q)
    master = mug_keypoints("master", "master", m_pos, m_q, height=r.uniform(0.08, 0.14), radius=r.uniform(0.03, 0.06))
    s_q = quat_mul(quat_from_axis_angle(r.standard_normal(3), r.uniform(0, 0.5)),
                   quat_from_axis_angle([0, 0, 1], r.uniform(-np.pi, np.pi)))
    start_pos = np.array([r.uniform(0.2, 0.5), r.uniform(-0.4, 0.0), r.uniform(0.0, 0.1)])
    slave = mug_keypoints("slave", "slave", start_pos, s_q)
    return master, slave, Pose(start_pos, s_q)
