"""Compiled physics core.

Everything in here is numba-jitted and operates on flat float64 arrays so the
1 kHz inner loop (control + contacts + articulated-body dynamics + integration)
runs without Python overhead. The public simulator API wraps these functions.

State vector layout (38 floats):
    [0:3]   base position, world
    [3:7]   base orientation quaternion (w, x, y, z), body-to-world
    [7:19]  joint angles, FR,FL,RR,RL x (hip, thigh, knee)
    [19:22] base linear velocity, world
    [22:25] base angular velocity, world
    [25:37] joint velocities
    [37]    time

Spatial 6-vectors follow the [angular; linear] convention; body-frame spatial
quantities are expressed at the body frame origin.
"""

import numpy as np
from numba import njit

STATE_DIM = 38
POS = 0
QUAT = 3
Q = 7
LINVEL = 19
ANGVEL = 22
QD = 25
TIME = 37

NUM_LEGS = 4
NUM_JOINTS = 12
NUM_BODIES = 13

# Trajectory record row: t, pos(3), quat(4), q(12), v(3), w(3), qd(12),
# applied torques(12), contact flags(4).
RECORD_WIDTH = 54

_JIT = dict(cache=True, nogil=True)


# ---------------------------------------------------------------------------
# Small math helpers
# ---------------------------------------------------------------------------

@njit(**_JIT)
def _skew(r):
    m = np.zeros((3, 3))
    m[0, 1] = -r[2]
    m[0, 2] = r[1]
    m[1, 0] = r[2]
    m[1, 2] = -r[0]
    m[2, 0] = -r[1]
    m[2, 1] = r[0]
    return m


@njit(**_JIT)
def quat_to_rot(q):
    """Body-to-world rotation matrix from a unit quaternion (w, x, y, z)."""
    w, x, y, z = q[0], q[1], q[2], q[3]
    r = np.empty((3, 3))
    r[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    r[0, 1] = 2.0 * (x * y - w * z)
    r[0, 2] = 2.0 * (x * z + w * y)
    r[1, 0] = 2.0 * (x * y + w * z)
    r[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    r[1, 2] = 2.0 * (y * z - w * x)
    r[2, 0] = 2.0 * (x * z - w * y)
    r[2, 1] = 2.0 * (y * z + w * x)
    r[2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return r


@njit(**_JIT)
def quat_mul(a, b):
    out = np.empty(4)
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]
    return out


@njit(**_JIT)
def _axis_angle_rot(axis, angle):
    """Rodrigues rotation about a unit axis."""
    c = np.cos(angle)
    s = np.sin(angle)
    k = _skew(axis)
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


@njit(**_JIT)
def _spatial_transform(e, r):
    """Motion-vector coordinate transform X_child<-parent.

    e: 3x3 coordinate rotation (parent coords -> child coords).
    r: child origin expressed in the parent frame.
    """
    x = np.zeros((6, 6))
    x[:3, :3] = e
    x[3:, 3:] = e
    x[3:, :3] = -e @ _skew(r)
    return x


@njit(**_JIT)
def _spatial_inertia(mass, com, inertia_com):
    """6x6 spatial inertia about the body origin from COM data."""
    c = _skew(com)
    ii = np.zeros((6, 6))
    ii[:3, :3] = inertia_com + mass * (c @ c.T)
    ii[:3, 3:] = mass * c
    ii[3:, :3] = mass * c.T
    ii[3:, 3:] = mass * np.eye(3)
    return ii


@njit(**_JIT)
def _crm_apply(v, m):
    """Spatial cross product v x m for motion vectors."""
    out = np.empty(6)
    out[0] = v[1] * m[2] - v[2] * m[1]
    out[1] = v[2] * m[0] - v[0] * m[2]
    out[2] = v[0] * m[1] - v[1] * m[0]
    out[3] = v[1] * m[5] - v[2] * m[4] + v[4] * m[2] - v[5] * m[1]
    out[4] = v[2] * m[3] - v[0] * m[5] + v[5] * m[0] - v[3] * m[2]
    out[5] = v[0] * m[4] - v[1] * m[3] + v[3] * m[1] - v[4] * m[0]
    return out


@njit(**_JIT)
def _crf_apply(v, f):
    """Spatial cross product v x* f for force vectors."""
    out = np.empty(6)
    out[0] = v[1] * f[2] - v[2] * f[1] + v[4] * f[5] - v[5] * f[4]
    out[1] = v[2] * f[0] - v[0] * f[2] + v[5] * f[3] - v[3] * f[5]
    out[2] = v[0] * f[1] - v[1] * f[0] + v[3] * f[4] - v[4] * f[3]
    out[3] = v[1] * f[5] - v[2] * f[4]
    out[4] = v[2] * f[3] - v[0] * f[5]
    out[5] = v[0] * f[4] - v[1] * f[3]
    return out


# ---------------------------------------------------------------------------
# Kinematics passes
# ---------------------------------------------------------------------------

@njit(**_JIT)
def compute_kinematics(state, parent, joint_axis, joint_pos):
    """World poses, parent-to-child transforms and body spatial velocities.

    Returns (R, o, Xup, v): world rotations (13,3,3), world origins (13,3),
    motion transforms X_body<-parent (13,6,6) with the base entry being
    X_base<-world, and body-frame spatial velocities (13,6).
    """
    r_all = np.zeros((NUM_BODIES, 3, 3))
    o_all = np.zeros((NUM_BODIES, 3))
    xup = np.zeros((NUM_BODIES, 6, 6))
    v = np.zeros((NUM_BODIES, 6))

    r0 = quat_to_rot(state[QUAT:QUAT + 4])
    r_all[0] = r0
    o_all[0] = state[POS:POS + 3]
    xup[0] = _spatial_transform(r0.T, state[POS:POS + 3])
    v[0, :3] = r0.T @ state[ANGVEL:ANGVEL + 3]
    v[0, 3:] = r0.T @ state[LINVEL:LINVEL + 3]

    for i in range(1, NUM_BODIES):
        j = i - 1
        p = parent[i]
        rj = _axis_angle_rot(joint_axis[j], state[Q + j])
        r_all[i] = r_all[p] @ rj
        o_all[i] = o_all[p] + r_all[p] @ joint_pos[j]
        xup[i] = _spatial_transform(rj.T, joint_pos[j])
        vi = xup[i] @ v[p]
        vi[:3] += joint_axis[j] * state[QD + j]
        v[i] = vi
    return r_all, o_all, xup, v


@njit(**_JIT)
def foot_world_states(r_all, o_all, v, foot_offset):
    """World positions and velocities of the four foot points."""
    pw = np.zeros((NUM_LEGS, 3))
    vw = np.zeros((NUM_LEGS, 3))
    for leg in range(NUM_LEGS):
        body = 3 + 3 * leg
        rb = r_all[body]
        pw[leg] = o_all[body] + rb @ foot_offset
        wb = v[body, :3]
        vb = v[body, 3:]
        vw[leg] = rb @ (vb + np.cross(wb, foot_offset))
    return pw, vw


@njit(**_JIT)
def leg_foot_state(q1, q2, q3, qd1, qd2, qd3, side, d_off, l1, l2):
    """Leg-frame foot position, velocity and Jacobian (closed form)."""
    d = side * d_off
    s2 = np.sin(q2)
    c2 = np.cos(q2)
    s23 = np.sin(q2 - q3)
    c23 = np.cos(q2 - q3)
    c1 = np.cos(q1)
    s1 = np.sin(q1)
    xp = l1 * s2 + l2 * s23
    zp = -l1 * c2 - l2 * c23

    p = np.empty(3)
    p[0] = xp
    p[1] = c1 * d - s1 * zp
    p[2] = s1 * d + c1 * zp

    jac = np.empty((3, 3))
    dx2 = l1 * c2 + l2 * c23
    dz2 = l1 * s2 + l2 * s23
    dx3 = -l2 * c23
    dz3 = -l2 * s23
    jac[0, 0] = 0.0
    jac[0, 1] = dx2
    jac[0, 2] = dx3
    jac[1, 0] = -s1 * d - c1 * zp
    jac[1, 1] = -s1 * dz2
    jac[1, 2] = -s1 * dz3
    jac[2, 0] = c1 * d - s1 * zp
    jac[2, 1] = c1 * dz2
    jac[2, 2] = c1 * dz3

    vel = np.empty(3)
    vel[0] = jac[0, 0] * qd1 + jac[0, 1] * qd2 + jac[0, 2] * qd3
    vel[1] = jac[1, 0] * qd1 + jac[1, 1] * qd2 + jac[1, 2] * qd3
    vel[2] = jac[2, 0] * qd1 + jac[2, 1] * qd2 + jac[2, 2] * qd3
    return p, vel, jac


# ---------------------------------------------------------------------------
# Contacts
# ---------------------------------------------------------------------------

@njit(**_JIT)
def surface_height(x, y, boxes):
    """Terrain surface height at (x, y): ground plane plus any box tops."""
    h = 0.0
    for b in range(boxes.shape[0]):
        cx, cy, hx, hy, bh, cth, sth = (boxes[b, 0], boxes[b, 1], boxes[b, 2],
                                        boxes[b, 3], boxes[b, 4], boxes[b, 5],
                                        boxes[b, 6])
        dx = x - cx
        dy = y - cy
        bx = cth * dx + sth * dy
        by = -sth * dx + cth * dy
        if -hx <= bx <= hx and -hy <= by <= hy and bh > h:
            h = bh
    return h


@njit(**_JIT)
def foot_contacts(pw, vw, boxes, wall_y, mu, k_n, d_n, k_t, d_cap, radius):
    """Penalty contact forces for the four feet.

    Normal: f_n = max(0, k_n * depth - d_n * (v . n)); tangential: viscous
    opposition to slip clamped to the Coulomb cone mu * f_n. Reported scalars
    describe the strongest contact per foot; the force sums all of them.

    d_cap bounds the effective damping coefficients (normal approach and
    tangential) at the impulse-stability limit m_eff/dt: the apparent foot
    mass is far below d_n * dt, and an uncapped explicit damper reverses the
    approach velocity within one step and pumps energy (contact chatter).
    The cap is inactive for dt small enough, so the discrete law converges
    to the continuous one.

    Returns (force (4,3) world, normal (4,), tangential (4,), depth (4,),
    in_contact (4,)).
    """
    force = np.zeros((NUM_LEGS, 3))
    fn_rep = np.zeros(NUM_LEGS)
    ft_rep = np.zeros(NUM_LEGS)
    depth_rep = np.zeros(NUM_LEGS)
    flags = np.zeros(NUM_LEGS)

    for leg in range(NUM_LEGS):
        px, py, pz = pw[leg, 0], pw[leg, 1], pw[leg, 2]
        vel = vw[leg]
        fn_sum = 0.0
        fn_best = -1.0

        n_contacts = 0
        normals = np.zeros((8, 3))
        depths = np.zeros(8)

        # Ground plane z = 0.
        depth = radius - pz
        if depth > 0.0:
            normals[n_contacts, 2] = 1.0
            depths[n_contacts] = depth
            n_contacts += 1

        # Boxes (sphere vs oriented box resting on the ground).
        for b in range(boxes.shape[0]):
            cx, cy, hx, hy, bh, cth, sth = (boxes[b, 0], boxes[b, 1],
                                            boxes[b, 2], boxes[b, 3],
                                            boxes[b, 4], boxes[b, 5],
                                            boxes[b, 6])
            dx = px - cx
            dy = py - cy
            bx = cth * dx + sth * dy
            by = -sth * dx + cth * dy
            bz = pz - 0.5 * bh
            hz = 0.5 * bh
            qx = min(max(bx, -hx), hx)
            qy = min(max(by, -hy), hy)
            qz = min(max(bz, -hz), hz)
            ex = bx - qx
            ey = by - qy
            ez = bz - qz
            dist_sq = ex * ex + ey * ey + ez * ez
            if dist_sq > radius * radius:
                continue
            if dist_sq > 1e-16:
                dist = np.sqrt(dist_sq)
                nbx = ex / dist
                nby = ey / dist
                nbz = ez / dist
                depth = radius - dist
            else:
                # Sphere centre inside the box: push out of the nearest face.
                gap_x = hx - abs(bx)
                gap_y = hy - abs(by)
                gap_z = hz - abs(bz)
                nbx = 0.0
                nby = 0.0
                nbz = 0.0
                if gap_z <= gap_x and gap_z <= gap_y:
                    nbz = 1.0 if bz >= 0.0 else -1.0
                    depth = radius + gap_z
                elif gap_x <= gap_y:
                    nbx = 1.0 if bx >= 0.0 else -1.0
                    depth = radius + gap_x
                else:
                    nby = 1.0 if by >= 0.0 else -1.0
                    depth = radius + gap_y
            if n_contacts < 8:
                normals[n_contacts, 0] = cth * nbx - sth * nby
                normals[n_contacts, 1] = sth * nbx + cth * nby
                normals[n_contacts, 2] = nbz
                depths[n_contacts] = depth
                n_contacts += 1

        # Walls at y = +/- wall_y (disabled when wall_y <= 0).
        if wall_y > 0.0:
            depth = (py + radius) - wall_y
            if depth > 0.0 and n_contacts < 8:
                normals[n_contacts, 1] = -1.0
                depths[n_contacts] = depth
                n_contacts += 1
            depth = (-py + radius) - wall_y
            if depth > 0.0 and n_contacts < 8:
                normals[n_contacts, 1] = 1.0
                depths[n_contacts] = depth
                n_contacts += 1

        for c in range(n_contacts):
            n = normals[c]
            depth = depths[c]
            vn = vel[0] * n[0] + vel[1] * n[1] + vel[2] * n[2]
            d_eff = d_n
            if vn < 0.0 and d_eff > d_cap:
                d_eff = d_cap
            fn = k_n * depth - d_eff * vn
            if fn < 0.0:
                fn = 0.0
            vt = np.empty(3)
            vt[0] = vel[0] - vn * n[0]
            vt[1] = vel[1] - vn * n[1]
            vt[2] = vel[2] - vn * n[2]
            kt_eff = k_t if k_t < d_cap else d_cap
            ft = -kt_eff * vt
            ft_mag = np.sqrt(ft[0] ** 2 + ft[1] ** 2 + ft[2] ** 2)
            cone = mu * fn
            if ft_mag > cone and ft_mag > 0.0:
                scale = cone / ft_mag
                ft *= scale
                ft_mag = cone
            force[leg, 0] += fn * n[0] + ft[0]
            force[leg, 1] += fn * n[1] + ft[1]
            force[leg, 2] += fn * n[2] + ft[2]
            fn_sum += fn
            if fn > fn_best:
                fn_best = fn
                fn_rep[leg] = fn
                ft_rep[leg] = ft_mag
                depth_rep[leg] = depth
        if fn_sum > 1.0:
            flags[leg] = 1.0
    return force, fn_rep, ft_rep, depth_rep, flags


# ---------------------------------------------------------------------------
# Articulated-body forward dynamics
# ---------------------------------------------------------------------------

@njit(**_JIT)
def _foot_spatial_forces(r_all, o_all, foot_force_w, foot_pos_w):
    """World foot forces as body-frame spatial forces on the calf bodies."""
    fext = np.zeros((NUM_BODIES, 6))
    for leg in range(NUM_LEGS):
        body = 3 + 3 * leg
        f = foot_force_w[leg]
        if f[0] == 0.0 and f[1] == 0.0 and f[2] == 0.0:
            continue
        arm = foot_pos_w[leg] - o_all[body]
        n_w = np.cross(arm, f)
        fext[body, :3] = r_all[body].T @ n_w
        fext[body, 3:] = r_all[body].T @ f
    return fext


@njit(**_JIT)
def articulated_body_accel(xup, v, qd, tau, fext, parent, joint_axis,
                           body_mass, body_com, body_inertia,
                           gravity, base_fixed, locked):
    """Featherstone articulated-body algorithm for the 13-body tree.

    tau are the 12 joint torques (already through the actuator and limit
    models); fext are body-frame spatial forces. Returns the 18 generalised
    accelerations: base spatial acceleration in base coordinates (angular,
    linear at the base origin) followed by the joint accelerations.
    """
    ia = np.zeros((NUM_BODIES, 6, 6))
    pa = np.zeros((NUM_BODIES, 6))
    c = np.zeros((NUM_BODIES, 6))
    u_vec = np.zeros((NUM_JOINTS, 6))
    d_inv = np.zeros(NUM_JOINTS)
    u_sc = np.zeros(NUM_JOINTS)

    for i in range(NUM_BODIES):
        ia[i] = _spatial_inertia(body_mass[i], body_com[i], body_inertia[i])
        pa[i] = _crf_apply(v[i], ia[i] @ v[i]) - fext[i]
        if i > 0:
            j = i - 1
            vj = np.zeros(6)
            if not locked[j]:
                vj[:3] = joint_axis[j] * qd[j]
            c[i] = _crm_apply(v[i], vj)

    # Backward sweep: articulated inertias toward the base.
    for i in range(NUM_BODIES - 1, 0, -1):
        j = i - 1
        p = parent[i]
        if locked[j]:
            ia_a = ia[i]
            pa_a = pa[i] + ia_a @ c[i]
        else:
            s = np.zeros(6)
            s[:3] = joint_axis[j]
            uu = ia[i] @ s
            dj = s @ uu
            uj = tau[j] - s @ pa[i]
            u_vec[j] = uu
            d_inv[j] = 1.0 / dj
            u_sc[j] = uj
            ia_a = ia[i] - np.outer(uu, uu) * d_inv[j]
            pa_a = pa[i] + ia_a @ c[i] + uu * (uj * d_inv[j])
        ia[p] = ia[p] + xup[i].T @ ia_a @ xup[i]
        pa[p] = pa[p] + xup[i].T @ pa_a

    # Base: free joint (S = identity) or fixed.
    g_sp = np.zeros(6)
    g_sp[5] = -gravity
    a0 = xup[0] @ (-g_sp)
    accel = np.zeros(6 + NUM_JOINTS)
    a = np.zeros((NUM_BODIES, 6))
    if base_fixed:
        a[0] = a0
    else:
        qdd0 = np.linalg.solve(ia[0], -pa[0] - ia[0] @ a0)
        accel[:6] = qdd0
        a[0] = a0 + qdd0

    for i in range(1, NUM_BODIES):
        j = i - 1
        p = parent[i]
        ai = xup[i] @ a[p] + c[i]
        if locked[j]:
            a[i] = ai
        else:
            s = np.zeros(6)
            s[:3] = joint_axis[j]
            qdd = (u_sc[j] - u_vec[j] @ ai) * d_inv[j]
            accel[6 + j] = qdd
            a[i] = ai + s * qdd
    return accel


@njit(**_JIT)
def base_accel_to_world(accel, r0, v_base):
    """Convert the base spatial acceleration to world-frame classical form.

    Returns (linear acceleration of the base origin point, angular
    acceleration), both world frame.
    """
    alpha_b = accel[:3]
    a_o_b = accel[3:6]
    w_b = v_base[:3]
    v_o_b = v_base[3:]
    a_lin = r0 @ (a_o_b + np.cross(w_b, v_o_b))
    a_ang = r0 @ alpha_b
    return a_lin, a_ang


# ---------------------------------------------------------------------------
# Actuator, limits, control
# ---------------------------------------------------------------------------

@njit(**_JIT)
def actuator_torque(commanded, joint_vel, max_torque, max_speed):
    """Torque cap plus the speed rule: no driving past the max joint speed."""
    tau = commanded
    if tau > max_torque:
        tau = max_torque
    elif tau < -max_torque:
        tau = -max_torque
    if (joint_vel >= max_speed and tau > 0.0) or \
       (joint_vel <= -max_speed and tau < 0.0):
        tau = 0.0
    return tau


@njit(**_JIT)
def limit_penalty_torques(q, qd, q_min, q_max, k_lim, d_lim):
    """One-sided spring-damper torques at the joint travel ends."""
    tau = np.zeros(NUM_JOINTS)
    for j in range(NUM_JOINTS):
        if q[j] > q_max[j]:
            t = -k_lim * (q[j] - q_max[j]) - d_lim * qd[j]
            tau[j] = min(t, 0.0)
        elif q[j] < q_min[j]:
            t = -k_lim * (q[j] - q_min[j]) - d_lim * qd[j]
            tau[j] = max(t, 0.0)
    return tau


@njit(**_JIT)
def integrate_semi_implicit(state, accel_lin, accel_ang, qdd, dt):
    """Semi-implicit Euler: velocities first, then positions; quaternion via
    the exponential map, renormalised."""
    out = state.copy()
    out[LINVEL:LINVEL + 3] = state[LINVEL:LINVEL + 3] + accel_lin * dt
    out[ANGVEL:ANGVEL + 3] = state[ANGVEL:ANGVEL + 3] + accel_ang * dt
    out[QD:QD + 12] = state[QD:QD + 12] + qdd * dt

    out[POS:POS + 3] = state[POS:POS + 3] + out[LINVEL:LINVEL + 3] * dt
    out[Q:Q + 12] = state[Q:Q + 12] + out[QD:QD + 12] * dt

    w = out[ANGVEL:ANGVEL + 3] * dt
    angle = np.sqrt(w[0] ** 2 + w[1] ** 2 + w[2] ** 2)
    dq = np.empty(4)
    if angle < 1e-12:
        dq[0] = 1.0
        dq[1] = 0.5 * w[0]
        dq[2] = 0.5 * w[1]
        dq[3] = 0.5 * w[2]
    else:
        half = 0.5 * angle
        s = np.sin(half) / angle
        dq[0] = np.cos(half)
        dq[1] = s * w[0]
        dq[2] = s * w[1]
        dq[3] = s * w[2]
    qn = quat_mul(dq, state[QUAT:QUAT + 4])
    norm = np.sqrt(qn[0] ** 2 + qn[1] ** 2 + qn[2] ** 2 + qn[3] ** 2)
    out[QUAT:QUAT + 4] = qn / norm
    out[TIME] = state[TIME] + dt
    return out


@njit(**_JIT)
def run_control_steps(state, mode, foot_targets, joint_targets,
                      kp_cart, kd_cart, kp_joint, kd_joint,
                      parent, joint_axis, joint_pos,
                      body_mass, body_com, body_inertia, foot_offset,
                      side_signs, hip_offset, l1, l2,
                      q_min, q_max, k_lim, d_lim,
                      max_torque, max_speed,
                      boxes, wall_y, mu, k_n, d_n, k_t, d_cap, foot_radius,
                      gravity, n_steps, dt,
                      record, record_buf):
    """Run `n_steps` physics steps under one policy action.

    mode 0: Cartesian impedance tracking of foot_targets (4,3, leg frame).
    mode 1: joint-space PD tracking of joint_targets (12,).

    Returns (state, energy_abs, energy_net, max_abs_torque, diverged,
    steps_done, mean_normal_force (4,)). Energy integrates actuator torque
    times joint velocity at the pre-step velocities; energy_abs sums
    |tau_j * qd_j| per joint, energy_net integrates |sum_j tau_j qd_j|.
    The mean normal force averages each foot's dominant contact over the
    executed steps (the step-scale chatter of stiff penalty contacts washes
    out at the policy rate).
    """
    locked = np.zeros(NUM_JOINTS, dtype=np.bool_)
    energy_abs = 0.0
    energy_net = 0.0
    max_abs_tau = 0.0
    diverged = False
    steps_done = 0
    fn_accum = np.zeros(NUM_LEGS)

    for step in range(n_steps):
        # Divergence guard: catch runaway states before velocity-product
        # terms overflow inside the dynamics (np.linalg.solve raises on inf).
        ok = True
        for k in range(STATE_DIM):
            x = state[k]
            if not np.isfinite(x) or x > 1e6 or x < -1e6:
                ok = False
                break
        if not ok:
            diverged = True
            break

        q = state[Q:Q + 12]
        qd = state[QD:QD + 12]

        tau_applied = np.zeros(NUM_JOINTS)
        if mode == 0:
            for leg in range(NUM_LEGS):
                j = 3 * leg
                p, vel, jac = leg_foot_state(
                    q[j], q[j + 1], q[j + 2], qd[j], qd[j + 1], qd[j + 2],
                    side_signs[leg], hip_offset, l1, l2)
                fx = kp_cart[0] * (foot_targets[leg, 0] - p[0]) - kd_cart[0] * vel[0]
                fy = kp_cart[1] * (foot_targets[leg, 1] - p[1]) - kd_cart[1] * vel[1]
                fz = kp_cart[2] * (foot_targets[leg, 2] - p[2]) - kd_cart[2] * vel[2]
                tau_applied[j] = jac[0, 0] * fx + jac[1, 0] * fy + jac[2, 0] * fz
                tau_applied[j + 1] = jac[0, 1] * fx + jac[1, 1] * fy + jac[2, 1] * fz
                tau_applied[j + 2] = jac[0, 2] * fx + jac[1, 2] * fy + jac[2, 2] * fz
        else:
            for j in range(NUM_JOINTS):
                tau_applied[j] = kp_joint * (joint_targets[j] - q[j]) - kd_joint * qd[j]

        for j in range(NUM_JOINTS):
            tau_applied[j] = actuator_torque(tau_applied[j], qd[j],
                                             max_torque, max_speed)
            a = abs(tau_applied[j])
            if a > max_abs_tau:
                max_abs_tau = a

        tau_total = tau_applied + limit_penalty_torques(q, qd, q_min, q_max,
                                                        k_lim, d_lim)

        r_all, o_all, xup, v = compute_kinematics(state, parent, joint_axis,
                                                  joint_pos)
        pw, vw = foot_world_states(r_all, o_all, v, foot_offset)
        force, fn_rep, _, _, flags = foot_contacts(pw, vw, boxes, wall_y, mu,
                                                   k_n, d_n, k_t, d_cap,
                                                   foot_radius)
        for leg in range(NUM_LEGS):
            fn_accum[leg] += fn_rep[leg]
        fext = _foot_spatial_forces(r_all, o_all, force, pw)
        accel = articulated_body_accel(xup, v, qd, tau_total, fext, parent,
                                       joint_axis, body_mass, body_com,
                                       body_inertia, gravity, False, locked)
        a_lin, a_ang = base_accel_to_world(accel, r_all[0], v[0])

        power_net = 0.0
        for j in range(NUM_JOINTS):
            pj = tau_applied[j] * qd[j]
            energy_abs += abs(pj) * dt
            power_net += pj
        energy_net += abs(power_net) * dt

        if record:
            row = record_buf[step]
            row[0] = state[TIME]
            row[1:4] = state[POS:POS + 3]
            row[4:8] = state[QUAT:QUAT + 4]
            row[8:20] = q
            row[20:23] = state[LINVEL:LINVEL + 3]
            row[23:26] = state[ANGVEL:ANGVEL + 3]
            row[26:38] = qd
            row[38:50] = tau_applied
            row[50:54] = flags

        state = integrate_semi_implicit(state, a_lin, a_ang, accel[6:], dt)
        steps_done += 1
        if not np.all(np.isfinite(state)):
            diverged = True
            break

    fn_mean = fn_accum / max(steps_done, 1)
    return (state, energy_abs, energy_net, max_abs_tau, diverged, steps_done,
            fn_mean)
