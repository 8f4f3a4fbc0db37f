"""Compiled inner loops.

Everything that runs once per integration step lives here so that the public
functions in :mod:`cavitycool.model`, :mod:`cavitycool.forces` and
:mod:`cavitycool.dynamics` share one implementation of the field shapes and
force formulas.  Parameters travel as flat float64 arrays; the index layout is
defined by the ``P_*`` and ``S_*`` constants below and filled by
:func:`cavitycool.dynamics.pack_params` / :func:`pack_schedule`.
"""

import math

import numpy as np
from numba import njit

# --- parameter vector layout -------------------------------------------------
P_G0 = 0
P_KAPPA = 1
P_GAMMA = 2
P_DELTA_C = 3  # omega_C - omega_P
P_DELTA_AP = 4  # omega_A - omega_P
P_OMEGA0 = 5
P_MASS = 6
P_K_CAV = 7
P_K_TRAP = 8
P_K_IC = 9
P_K_PUMP = 10
P_U_SW = 11
P_STARK = 12
P_U_IC = 13
P_W_SW = 14
P_W_PUMP = 15
P_W_CAV = 16
P_IC_PHASE = 17
P_ORIGIN = 18  # 3 slots
P_E_SW = 21
P_E_CAV = 24
P_E_PUMP = 27
P_GRAV = 30  # acceleration vector, 3 slots
P_HBAR = 33
P_FRICTION = 34  # multiplies every friction coefficient
P_NOISE = 35  # multiplies every diffusion coefficient
P_PE_CAP = 36
P_HARMONIC = 37  # > 0 selects the harmonic test well
P_H_OMEGA = 38  # 3 slots, angular trap frequency per global axis
P_H_BETA = 41  # 3 slots, friction rate per global axis
P_H_DIFF = 44  # 3 slots, momentum diffusion per global axis
P_TAU_BRIGHT = 47
P_TAU_DARK = 48  # <= 0 disables blinking
P_LOSS_RATE = 49
P_REGION_SW = 50
P_TUBE = 51
P_CAPTURE_HOLD = 52
P_SIZE = 53

# --- schedule vector layout --------------------------------------------------
S_MOD_EPS = 0
S_MOD_FREQ = 1
S_FILTER_START = 2
S_FILTER_DURATION = 3
S_RAMP = 4
S_FILTER_FLOOR = 5
S_DURATION = 6
S_SIZE = 7

# --- field output layout -----------------------------------------------------
F_G = 0
F_GRAD_G = 1
F_STARK = 4
F_GRAD_STARK = 5
F_OMEGA = 8
F_DELTA_A = 9
F_PE = 10
F_U = 11
F_FORCE = 12  # -grad U, 3 slots
F_RSCAT = 15
F_U_SW = 16
F_SIZE = 17

LOSS_NONE = 0
LOSS_REGION = 1
LOSS_TUBE = 2
LOSS_BACKGROUND = 3
LOSS_NONFINITE = 4


@njit(cache=True)
def trap_factor(sched, t):
    """Depth of the standing-wave trap relative to nominal at time ``t``."""
    f = 1.0
    start = sched[S_FILTER_START]
    dur = sched[S_FILTER_DURATION]
    if dur > 0.0 and t >= start and t <= start + dur:
        ramp = sched[S_RAMP]
        floor = sched[S_FILTER_FLOOR]
        tau = t - start
        if ramp > 0.0 and tau < ramp:
            f = floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * tau / ramp))
        elif ramp > 0.0 and tau > dur - ramp:
            f = floor + (1.0 - floor) * 0.5 * (1.0 - math.cos(math.pi * (tau - dur + ramp) / ramp))
        else:
            f = floor
    eps = sched[S_MOD_EPS]
    if eps != 0.0:
        f *= 1.0 + eps * math.sin(2.0 * math.pi * sched[S_MOD_FREQ] * t)
    return f


@njit(cache=True)
def pump_active(windows, t):
    for i in range(windows.shape[0]):
        if t >= windows[i, 0] and t < windows[i, 1]:
            return 1.0
    return 0.0


@njit(cache=True)
def pump_off_for_good(windows, t):
    for i in range(windows.shape[0]):
        if windows[i, 1] > t:
            return False
    return True


@njit(cache=True)
def eval_fields(p, r, sw_factor, pump_on, out):
    """Fill ``out`` with the local fields at position ``r`` (m)."""
    o0 = r[0] - p[P_ORIGIN]
    o1 = r[1] - p[P_ORIGIN + 1]
    o2 = r[2] - p[P_ORIGIN + 2]
    d2 = o0 * o0 + o1 * o1 + o2 * o2

    if p[P_HARMONIC] > 0.0:
        m = p[P_MASS]
        out[:] = 0.0
        u = 0.0
        for i in range(3):
            w = p[P_H_OMEGA + i]
            x = r[i] - p[P_ORIGIN + i]
            u += 0.5 * m * w * w * x * x
            out[F_FORCE + i] = -m * w * w * x
        out[F_U] = u
        return

    # standing-wave trap: shape S = cos^2(k x_sw) exp(-2 rho_sw^2 / w_sw^2)
    e0 = p[P_E_SW]
    e1 = p[P_E_SW + 1]
    e2 = p[P_E_SW + 2]
    k_t = p[P_K_TRAP]
    w_sw = p[P_W_SW]
    xs = o0 * e0 + o1 * e1 + o2 * e2
    rho2 = d2 - xs * xs
    env = math.exp(-2.0 * rho2 / (w_sw * w_sw))
    c = math.cos(k_t * xs)
    c2 = c * c
    s2 = math.sin(2.0 * k_t * xs)
    shape = c2 * env
    a = -k_t * s2 * env
    b = -4.0 * c2 * env / (w_sw * w_sw)
    gs0 = a * e0 + b * (o0 - xs * e0)
    gs1 = a * e1 + b * (o1 - xs * e1)
    gs2 = a * e2 + b * (o2 - xs * e2)

    stark = p[P_STARK] * sw_factor
    out[F_STARK] = stark * shape
    out[F_GRAD_STARK] = stark * gs0
    out[F_GRAD_STARK + 1] = stark * gs1
    out[F_GRAD_STARK + 2] = stark * gs2
    usw = p[P_U_SW] * sw_factor
    u = -usw * shape
    out[F_U_SW] = u
    f0 = usw * gs0
    f1 = usw * gs1
    f2 = usw * gs2

    # cavity mode g = g0 cos(k_c x_c) exp(-rho_c^2 / w_c^2) and the
    # intracavity lattice -U_ic cos^2(k_ic x_c + phi) exp(-2 rho_c^2 / w_c^2)
    e0 = p[P_E_CAV]
    e1 = p[P_E_CAV + 1]
    e2 = p[P_E_CAV + 2]
    w_c = p[P_W_CAV]
    xc = o0 * e0 + o1 * e1 + o2 * e2
    rho2 = d2 - xc * xc
    env1 = math.exp(-rho2 / (w_c * w_c))
    k_c = p[P_K_CAV]
    cc = math.cos(k_c * xc)
    sc = math.sin(k_c * xc)
    g0 = p[P_G0]
    g = g0 * cc * env1
    a = -g0 * k_c * sc * env1
    b = -2.0 * g / (w_c * w_c)
    out[F_G] = g
    out[F_GRAD_G] = a * e0 + b * (o0 - xc * e0)
    out[F_GRAD_G + 1] = a * e1 + b * (o1 - xc * e1)
    out[F_GRAD_G + 2] = a * e2 + b * (o2 - xc * e2)

    uic = p[P_U_IC]
    if uic != 0.0:
        env2 = env1 * env1
        ph = p[P_K_IC] * xc + p[P_IC_PHASE]
        ci = math.cos(ph)
        ci2 = ci * ci
        u -= uic * ci2 * env2
        a = -p[P_K_IC] * math.sin(2.0 * ph) * env2
        b = -4.0 * ci2 * env2 / (w_c * w_c)
        f0 += uic * (a * e0 + b * (o0 - xc * e0))
        f1 += uic * (a * e1 + b * (o1 - xc * e1))
        f2 += uic * (a * e2 + b * (o2 - xc * e2))
    out[F_U] = u
    out[F_FORCE] = f0
    out[F_FORCE + 1] = f1
    out[F_FORCE + 2] = f2

    # pump: transverse Gaussian, no longitudinal standing wave
    e0 = p[P_E_PUMP]
    e1 = p[P_E_PUMP + 1]
    e2 = p[P_E_PUMP + 2]
    w_p = p[P_W_PUMP]
    xp = o0 * e0 + o1 * e1 + o2 * e2
    rho2 = d2 - xp * xp
    om = p[P_OMEGA0] * math.exp(-rho2 / (w_p * w_p)) * pump_on
    out[F_OMEGA] = om

    gam = p[P_GAMMA]
    da = p[P_DELTA_AP] + out[F_STARK]
    pe = om * om / (da * da + gam * gam)
    out[F_DELTA_A] = da
    out[F_PE] = pe
    kap = p[P_KAPPA]
    dc = p[P_DELTA_C]
    out[F_RSCAT] = 2.0 * kap * g * g / (dc * dc + kap * kap) * pe


@njit(cache=True)
def friction_coefficients(p, fields, bright, coef):
    """Scalar prefactors c_i of F_i = -c_i a_i (a_i . v).

    ``coef`` = [c_pump, c_cav, c_sw_cav, c_sw_sis]; the matching axis vectors
    are k_P e_pump, grad g and grad Delta_S (both standing-wave terms).
    ``c_pump`` already includes both counter-propagating beams.
    """
    hbar = p[P_HBAR]
    pe = fields[F_PE] * bright
    kap = p[P_KAPPA]
    dc = p[P_DELTA_C]
    gam = p[P_GAMMA]
    da = fields[F_DELTA_A]
    g = fields[F_G]
    den = dc * dc + kap * kap
    lor = kap * dc / (den * den)
    lat = da * da + gam * gam
    coef[0] = 2.0 * 4.0 * hbar * lor * g * g * pe
    coef[1] = 4.0 * hbar * lor * pe
    coef[2] = 4.0 * hbar * lor * g * g * pe / lat
    coef[3] = 4.0 * hbar * da / (2.0 * gam * lat) * pe * pe


@njit(cache=True)
def diffusion_coefficients(p, fields, bright, diff):
    """[D_pump (both beams), D_cav, D_spont (total, split 1/3 per axis)]."""
    hbar = p[P_HBAR]
    pe = fields[F_PE] * bright
    hk_p = hbar * p[P_K_PUMP]
    hk_c = hbar * p[P_K_CAV]
    scat = 2.0 * p[P_GAMMA] * pe
    diff[0] = 2.0 * hk_p * hk_p * scat
    diff[1] = hk_c * hk_c * fields[F_RSCAT] * bright
    diff[2] = hk_c * hk_c * scat


@njit(cache=True)
def _damp(v, a0, a1, a2, rate_per_norm2, h):
    n2 = a0 * a0 + a1 * a1 + a2 * a2
    if n2 == 0.0 or rate_per_norm2 == 0.0:
        return
    vp = (v[0] * a0 + v[1] * a1 + v[2] * a2) / n2
    f = math.exp(-rate_per_norm2 * n2 * h) - 1.0
    v[0] += f * vp * a0
    v[1] += f * vp * a1
    v[2] += f * vp * a2


@njit(cache=True)
def _ou_half(p, fields, bright, v, h, coef, diff):
    """Exact linear friction followed by Gaussian momentum kicks over ``h``."""
    m = p[P_MASS]
    if p[P_HARMONIC] > 0.0:
        for i in range(3):
            beta = p[P_H_BETA + i] * p[P_FRICTION]
            v[i] *= math.exp(-beta * h)
            dd = p[P_H_DIFF + i] * p[P_NOISE]
            if dd > 0.0:
                v[i] += math.sqrt(2.0 * dd * h) / m * np.random.standard_normal()
        return
    fr = p[P_FRICTION]
    if fr != 0.0 and bright > 0.0:
        friction_coefficients(p, fields, bright, coef)
        kp = p[P_K_PUMP]
        _damp(v, kp * p[P_E_PUMP], kp * p[P_E_PUMP + 1], kp * p[P_E_PUMP + 2], fr * coef[0] / m, h)
        _damp(v, fields[F_GRAD_G], fields[F_GRAD_G + 1], fields[F_GRAD_G + 2], fr * coef[1] / m, h)
        _damp(v, fields[F_GRAD_STARK], fields[F_GRAD_STARK + 1], fields[F_GRAD_STARK + 2],
              fr * (coef[2] + coef[3]) / m, h)
    ns = p[P_NOISE]
    if ns != 0.0 and bright > 0.0:
        diffusion_coefficients(p, fields, bright, diff)
        sp = math.sqrt(2.0 * ns * diff[0] * h) / m * np.random.standard_normal()
        sc = math.sqrt(2.0 * ns * diff[1] * h) / m * np.random.standard_normal()
        ss = math.sqrt(2.0 * ns * diff[2] / 3.0 * h) / m
        for i in range(3):
            v[i] += sp * p[P_E_PUMP + i] + sc * p[P_E_CAV + i] + ss * np.random.standard_normal()


@njit(cache=True)
def seed_rng(seed):
    np.random.seed(seed)


@njit(cache=True)
def integrate(p, sched, windows, r, v, state, dt, nsteps, stride, rate_stride,
              samples, rates):
    """Propagate one trajectory for up to ``nsteps`` OBABO steps.

    ``r`` and ``v`` are updated in place.  ``state`` = [t, bright, bound_since,
    captured_at, lost_at, loss_reason, pe_violations, steps_done, n_samples,
    n_rates, t_background, fast_forwarded].  ``samples`` rows are
    (t, x, y, z, vx, vy, vz, R_scat * bright, bright); ``rates`` rows are
    (t_start, mean emitted rate, mean intrinsic rate) per ``rate_stride`` steps.
    """
    m = p[P_MASS]
    h = 0.5 * dt
    fields = np.zeros(F_SIZE)
    coef = np.zeros(4)
    diff = np.zeros(3)
    t = state[0]
    bright = state[1]
    bound_since = state[2]
    captured_at = state[3]
    lost_at = state[4]
    reason = int(state[5])
    pe_viol = int(state[6])
    t_bg = state[10]
    tube2 = p[P_TUBE] * p[P_TUBE]
    region = p[P_REGION_SW]
    hold = p[P_CAPTURE_HOLD]
    harmonic = p[P_HARMONIC] > 0.0
    gx = p[P_GRAV]
    gy = p[P_GRAV + 1]
    gz = p[P_GRAV + 2]
    u_ic_max = p[P_U_IC]
    duration = sched[S_DURATION]

    tau_b = p[P_TAU_BRIGHT]
    tau_d = p[P_TAU_DARK]
    blink = tau_d > 0.0 and tau_b > 0.0
    p_bd = 0.0
    p_db = 0.0
    if blink:
        p_bd = -math.expm1(-dt / tau_b)
        p_db = -math.expm1(-dt / tau_d)

    eval_fields(p, r, trap_factor(sched, t), pump_active(windows, t), fields)
    ns = int(state[8])
    nr = int(state[9])
    acc_emit = 0.0
    acc_intr = 0.0
    acc_n = 0
    rate_t0 = t
    done = 0
    for step in range(nsteps):
        if ns < samples.shape[0] and (int(state[7]) + step) % stride == 0:
            samples[ns, 0] = t
            samples[ns, 1] = r[0]
            samples[ns, 2] = r[1]
            samples[ns, 3] = r[2]
            samples[ns, 4] = v[0]
            samples[ns, 5] = v[1]
            samples[ns, 6] = v[2]
            samples[ns, 7] = fields[F_RSCAT] * bright
            samples[ns, 8] = bright
            ns += 1

        _ou_half(p, fields, bright, v, h, coef, diff)
        v[0] += h * (fields[F_FORCE] / m + gx)
        v[1] += h * (fields[F_FORCE + 1] / m + gy)
        v[2] += h * (fields[F_FORCE + 2] / m + gz)
        r[0] += dt * v[0]
        r[1] += dt * v[1]
        r[2] += dt * v[2]
        t += dt
        eval_fields(p, r, trap_factor(sched, t), pump_active(windows, t), fields)
        v[0] += h * (fields[F_FORCE] / m + gx)
        v[1] += h * (fields[F_FORCE + 1] / m + gy)
        v[2] += h * (fields[F_FORCE + 2] / m + gz)
        if blink:
            if bright > 0.0:
                if np.random.random() < p_bd:
                    bright = 0.0
            elif np.random.random() < p_db:
                bright = 1.0
        _ou_half(p, fields, bright, v, h, coef, diff)
        done += 1

        if fields[F_PE] > p[P_PE_CAP]:
            pe_viol += 1
        acc_emit += fields[F_RSCAT] * bright
        acc_intr += fields[F_RSCAT]
        acc_n += 1
        if acc_n == rate_stride:
            if nr < rates.shape[0]:
                rates[nr, 0] = rate_t0
                rates[nr, 1] = acc_emit / acc_n
                rates[nr, 2] = acc_intr / acc_n
                nr += 1
            acc_emit = 0.0
            acc_intr = 0.0
            acc_n = 0
            rate_t0 = t

        if not (math.isfinite(r[0]) and math.isfinite(r[1]) and math.isfinite(r[2])
                and math.isfinite(v[0]) and math.isfinite(v[1]) and math.isfinite(v[2])):
            lost_at = t
            reason = LOSS_NONFINITE
            break

        if t_bg > 0.0 and t >= t_bg:
            lost_at = t
            reason = LOSS_BACKGROUND
            break

        if harmonic:
            continue

        ke = 0.5 * m * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
        e_local = ke + fields[F_U_SW]
        if e_local < 0.0:
            if bound_since < 0.0:
                bound_since = t
            if captured_at < 0.0 and t - bound_since >= hold:
                captured_at = bound_since
        else:
            bound_since = -1.0

        o0 = r[0] - p[P_ORIGIN]
        o1 = r[1] - p[P_ORIGIN + 1]
        o2 = r[2] - p[P_ORIGIN + 2]
        xs = o0 * p[P_E_SW] + o1 * p[P_E_SW + 1] + o2 * p[P_E_SW + 2]
        if abs(xs) > region:
            lost_at = t
            reason = LOSS_REGION
            break
        rho2 = o0 * o0 + o1 * o1 + o2 * o2 - xs * xs
        if e_local > 0.0 and rho2 > tube2:
            lost_at = t
            reason = LOSS_TUBE
            break

        # A bound atom in a static, pump-free and gravity-free potential
        # whose energy lies below every barrier can never leave its well.
        if (step & 1023) == 0 and gx == 0.0 and gy == 0.0 and gz == 0.0 \
                and sched[S_MOD_EPS] == 0.0 and pump_off_for_good(windows, t) \
                and t > sched[S_FILTER_START] + sched[S_FILTER_DURATION] \
                and ke + fields[F_U] < -u_ic_max:
            state[11] = t
            if t_bg > 0.0 and t_bg < duration:
                lost_at = t_bg
                reason = LOSS_BACKGROUND
                t = t_bg
            else:
                t = duration
            break

    if acc_n > 0 and nr < rates.shape[0]:
        rates[nr, 0] = rate_t0
        rates[nr, 1] = acc_emit / acc_n
        rates[nr, 2] = acc_intr / acc_n
        nr += 1

    state[0] = t
    state[1] = bright
    state[2] = bound_since
    state[3] = captured_at
    state[4] = lost_at
    state[5] = reason
    state[6] = pe_viol
    state[7] += done
    state[8] = ns
    state[9] = nr
    return done
