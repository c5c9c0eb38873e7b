"""Independent reference implementations the tests check the library against.

Everything here is deliberately written from the defining equations (stacked
least squares, textbook Kalman recursions, double loops) rather than reusing
library code paths.
"""

import numpy as np


# --- linear-Gaussian batch smoothing -------------------------------------

def batch_map_solution(x0, p0, f_mat, q_mat, h_mat, zs, rs):
    """MAP trajectory of the linear-Gaussian batch by stacked normal equations.

    Minimizes the prior term at scan 1, the dynamics terms between scans, and
    measurement terms for scans 2..T (``zs[0]`` is ignored to mirror the
    filter convention that the prior already represents the scan-1
    posterior; pass ``None`` for scans without a measurement).

    Returns (means, covs): per-scan 4-vectors and the 4x4 diagonal blocks of
    the inverse normal-equation matrix (the smoothed marginal covariances).
    """
    t_len = len(zs)
    nx = x0.size
    big = np.zeros((t_len * nx, t_len * nx))
    rhs = np.zeros(t_len * nx)

    p0_inv = np.linalg.inv(p0)
    big[:nx, :nx] += p0_inv
    rhs[:nx] += p0_inv @ x0

    q_inv = np.linalg.inv(q_mat)
    for t in range(t_len - 1):
        a = slice(t * nx, (t + 1) * nx)
        b = slice((t + 1) * nx, (t + 2) * nx)
        big[a, a] += f_mat.T @ q_inv @ f_mat
        big[a, b] += -f_mat.T @ q_inv
        big[b, a] += -q_inv @ f_mat
        big[b, b] += q_inv

    for t in range(1, t_len):
        if zs[t] is None:
            continue
        r_inv = np.linalg.inv(rs[t])
        a = slice(t * nx, (t + 1) * nx)
        big[a, a] += h_mat.T @ r_inv @ h_mat
        rhs[t * nx:(t + 1) * nx] += h_mat.T @ r_inv @ zs[t]

    solution = np.linalg.solve(big, rhs)
    inv = np.linalg.inv(big)
    means = [solution[t * nx:(t + 1) * nx] for t in range(t_len)]
    covs = [inv[t * nx:(t + 1) * nx, t * nx:(t + 1) * nx] for t in range(t_len)]
    return means, covs


def kalman_rts(x0, p0, f_mat, q_mat, h_mat, zs, rs):
    """Textbook forward Kalman filter + RTS smoother.

    The state at scan 1 is the prior posterior; measurements apply from scan
    2 on (``None`` entries are prediction-only). Returns smoothed means and
    covariances.
    """
    t_len = len(zs)
    xs = [x0.copy()]
    ps = [p0.copy()]
    x_preds, p_preds = [], []
    for t in range(1, t_len):
        x_pred = f_mat @ xs[-1]
        p_pred = f_mat @ ps[-1] @ f_mat.T + q_mat
        x_preds.append(x_pred)
        p_preds.append(p_pred)
        if zs[t] is None:
            xs.append(x_pred)
            ps.append(p_pred)
            continue
        s_mat = h_mat @ p_pred @ h_mat.T + rs[t]
        gain = p_pred @ h_mat.T @ np.linalg.inv(s_mat)
        xs.append(x_pred + gain @ (zs[t] - h_mat @ x_pred))
        ps.append(p_pred - gain @ h_mat @ p_pred)

    sm_x = [None] * t_len
    sm_p = [None] * t_len
    sm_x[-1] = xs[-1]
    sm_p[-1] = ps[-1]
    for t in range(t_len - 2, -1, -1):
        gain = ps[t] @ f_mat.T @ np.linalg.inv(p_preds[t])
        sm_x[t] = xs[t] + gain @ (sm_x[t + 1] - x_preds[t])
        sm_p[t] = ps[t] + gain @ (sm_p[t + 1] - p_preds[t]) @ gain.T
    return sm_x, sm_p


# --- 6-state navigation Kalman filter -------------------------------------

def nav_transition(dt):
    """F and B of the planar dead-reckoning error model: x' = F x + B a."""
    f_mat = np.eye(6)
    f_mat[0, 2] = f_mat[1, 3] = dt
    f_mat[0, 4] = f_mat[1, 5] = -0.5 * dt * dt
    f_mat[2, 4] = f_mat[3, 5] = -dt
    b_mat = np.zeros((6, 2))
    b_mat[0, 0] = b_mat[1, 1] = 0.5 * dt * dt
    b_mat[2, 0] = b_mat[3, 1] = dt
    return f_mat, b_mat


def nav_process_noise(dt, q_accel, bias_psd):
    q = np.zeros((6, 6))
    for p, v in ((0, 2), (1, 3)):
        q[p, p] = q_accel * dt ** 3 / 3.0
        q[p, v] = q[v, p] = q_accel * dt ** 2 / 2.0
        q[v, v] = q_accel * dt
    q[4, 4] = q[5, 5] = bias_psd * dt
    return q


def nav_kf_predict(x, p, accel, dt, q_accel, bias_psd):
    f_mat, b_mat = nav_transition(dt)
    x_new = f_mat @ x + b_mat @ np.asarray(accel, dtype=float)
    p_new = f_mat @ p @ f_mat.T + nav_process_noise(dt, q_accel, bias_psd)
    return x_new, 0.5 * (p_new + p_new.T)


def nav_kf_update(x, p, z, r):
    h_mat = np.zeros((2, 6))
    h_mat[0, 0] = h_mat[1, 1] = 1.0
    s_mat = h_mat @ p @ h_mat.T + r
    gain = p @ h_mat.T @ np.linalg.inv(s_mat)
    x_new = x + gain @ (z - h_mat @ x)
    p_new = p - gain @ s_mat @ gain.T
    return x_new, 0.5 * (p_new + p_new.T)


# --- map statistics --------------------------------------------------------

def brute_variability(values, row, col, half_width):
    """Double-loop mean squared deviation around a cell, template clipped."""
    rows, cols = values.shape
    center = values[row, col]
    total = 0.0
    count = 0
    for r in range(max(row - half_width, 0), min(row + half_width, rows - 1) + 1):
        for c in range(max(col - half_width, 0), min(col + half_width, cols - 1) + 1):
            if r == row and c == col:
                continue
            total += (center - values[r, c]) ** 2
            count += 1
    return total / count


def gaussian_weights(points, center, cov):
    """Directly evaluated normalized Gaussian densities."""
    inv = np.linalg.inv(cov)
    det = np.linalg.det(cov)
    dens = []
    for pt in points:
        d = np.asarray(pt, dtype=float) - center
        dens.append(np.exp(-0.5 * d @ inv @ d) / (2.0 * np.pi * np.sqrt(det)))
    dens = np.array(dens)
    return dens / dens.sum()
