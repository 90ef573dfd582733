# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. Each function replays the pure-Python kernel of the
same name draw for draw."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, cos, pow, INFINITY
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef double PI = 3.141592653589793


cdef inline uint64_t sm_next(uint64_t* st) noexcept nogil:
    st[0] += <uint64_t>0x9E3779B97F4A7C15ULL
    cdef uint64_t z = st[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double sm_uniform(uint64_t* st) noexcept nogil:
    return <double>(sm_next(st) >> 11) * (1.0 / 9007199254740992.0)


cdef inline int sm_randint(uint64_t* st, int n) noexcept nogil:
    return <int>(sm_uniform(st) * n)


cdef inline double sm_normal(uint64_t* st) noexcept nogil:
    cdef double u1 = sm_uniform(st)
    cdef double u2 = sm_uniform(st)
    if u1 < 1e-300:
        u1 = 1e-300
    return sqrt(-2.0 * log(u1)) * cos(2.0 * PI * u2)


cdef double sm_gamma(uint64_t* st, double shape) noexcept nogil:
    cdef double g, u, d, c, x, v
    if shape < 1.0:
        g = sm_gamma(st, shape + 1.0)
        u = sm_uniform(st)
        if u < 1e-300:
            u = 1e-300
        return g * pow(u, 1.0 / shape)
    d = shape - 1.0 / 3.0
    c = 1.0 / sqrt(9.0 * d)
    while True:
        x = sm_normal(st)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = sm_uniform(st)
        if u < 1e-300:
            u = 1e-300
        if log(u) < 0.5 * x * x + d - d * v + d * log(v):
            return d * v


cdef inline double sm_beta(uint64_t* st, double a, double b) noexcept nogil:
    cdef double x = sm_gamma(st, a)
    cdef double y = sm_gamma(st, b)
    return x / (x + y)


cdef inline int argmax_row(double* q, int n) noexcept nogil:
    cdef int i, best = 0
    for i in range(1, n):
        if q[i] > q[best]:
            best = i
    return best


cdef inline int eps_greedy(uint64_t* st, double* q, int n, double eps) noexcept nogil:
    if eps > 0.0 and sm_uniform(st) < eps:
        return sm_randint(st, n)
    return argmax_row(q, n)


def bandit_simulate(int algo, const double[::1] means, Py_ssize_t T, uint64_t seed, double param):
    cdef int K = means.shape[0]
    cdef uint64_t st = seed
    cdef double[::1] counts = np.zeros(K)
    cdef double[::1] sums = np.zeros(K)
    cdef double[::1] est = np.zeros(K)
    cdef double[::1] alpha = np.ones(K)
    cdef double[::1] beta = np.ones(K)
    cdef double[::1] theta = np.zeros(K)
    arms_np = np.empty(T, dtype=np.int64)
    rewards_np = np.empty(T)
    cdef int64_t[::1] arms = arms_np
    cdef double[::1] rewards = rewards_np
    cdef Py_ssize_t t
    cdef int i, a
    cdef double r
    with nogil:
        for t in range(T):
            for i in range(K):
                est[i] = sums[i] / counts[i] if counts[i] > 0 else 0.0
            if algo == 0:
                a = eps_greedy(&st, &est[0], K, param)
            elif algo == 1:
                a = -1
                for i in range(K):
                    if counts[i] <= 0:
                        a = i
                        break
                if a < 0:
                    for i in range(K):
                        theta[i] = est[i] + param / sqrt(counts[i])
                    a = argmax_row(&theta[0], K)
            else:
                for i in range(K):
                    theta[i] = sm_beta(&st, alpha[i], beta[i])
                a = argmax_row(&theta[0], K)
            r = 1.0 if sm_uniform(&st) < means[a] else 0.0
            counts[a] += 1.0
            sums[a] += r
            if algo == 2:
                if r == 1.0:
                    alpha[a] += 1.0
                else:
                    beta[a] += 1.0
            arms[t] = a
            rewards[t] = r
    return arms_np, rewards_np


cdef inline void double_update(double* qi, double* qo, int W, int s, int a, double r, int s2,
                               bint done, double eta, double gamma) noexcept nogil:
    cdef double target
    if done:
        target = r
    else:
        target = r + gamma * qi[s2 * W + argmax_row(&qo[s2 * W], W)]
    qi[s * W + a] += eta * (target - qi[s * W + a])


def maxbias_runs(int method, int n_runs, int n_episodes, double epsilon, double eta,
                 double gamma, int n_b, double mean, double std, uint64_t seed):
    cdef int W = n_b if n_b > 2 else 2
    left_np = np.zeros((n_runs, n_episodes), dtype=np.uint8)
    qb_np = np.zeros((n_runs, n_episodes))
    cdef unsigned char[:, ::1] left = left_np
    cdef double[:, ::1] qb = qb_np
    init = np.zeros((3, W))
    init[0, 2:] = -np.inf
    init[1, n_b:] = -np.inf
    cdef double[::1] q1 = np.empty(3 * W)
    cdef double[::1] q2 = np.empty(3 * W)
    cdef double[::1] init_flat = init.ravel()
    cdef double[::1] sc = np.empty(W)
    cdef uint64_t seeder = seed
    cdef uint64_t st
    cdef int run, ep, s, a, s2, nv, i
    cdef bint done
    cdef double r, target, m
    with nogil:
        for run in range(n_runs):
            st = sm_next(&seeder)
            for i in range(3 * W):
                q1[i] = init_flat[i]
                q2[i] = init_flat[i]
            for ep in range(n_episodes):
                s = 0
                done = False
                while not done:
                    nv = 2 if s == 0 else n_b
                    if method == 0:
                        for i in range(nv):
                            sc[i] = q1[s * W + i]
                    else:
                        for i in range(nv):
                            sc[i] = 0.5 * (q1[s * W + i] + q2[s * W + i])
                    a = eps_greedy(&st, &sc[0], nv, epsilon)
                    if s == 0:
                        if a == 1:
                            left[run, ep] = 1
                            s2 = 1
                            r = 0.0
                            done = False
                        else:
                            s2 = 2
                            r = 0.0
                            done = True
                    else:
                        s2 = 2
                        done = True
                        if std > 0:
                            r = mean + std * sm_normal(&st)
                        else:
                            r = mean
                    if method == 0:
                        if done:
                            target = r
                        else:
                            m = q1[s2 * W]
                            for i in range(1, W):
                                if q1[s2 * W + i] > m:
                                    m = q1[s2 * W + i]
                            target = r + gamma * m
                        q1[s * W + a] += eta * (target - q1[s * W + a])
                    else:
                        if sm_uniform(&st) < 0.5:
                            double_update(&q1[0], &q2[0], W, s, a, r, s2, done, eta, gamma)
                        else:
                            double_update(&q2[0], &q1[0], W, s, a, r, s2, done, eta, gamma)
                    s = s2
                m = -INFINITY
                for i in range(n_b):
                    if method == 0:
                        if q1[W + i] > m:
                            m = q1[W + i]
                    else:
                        if 0.5 * (q1[W + i] + q2[W + i]) > m:
                            m = 0.5 * (q1[W + i] + q2[W + i])
                qb[run, ep] = m
    return left_np, qb_np


cdef inline int sample_row(const double* cdf, int n, double u) noexcept nogil:
    # first index with cdf > u, clamped to n - 1
    cdef int i
    for i in range(n):
        if cdf[i] > u:
            return i
    return n - 1


def tabular_control(int algo, const double[:, :, ::1] cdf, const double[:, :, ::1] reward,
                    const unsigned char[::1] terminal, const double[::1] init_cdf, Py_ssize_t steps,
                    double gamma, uint64_t seed, double epsilon, bint glie, double lr_power,
                    double lr_const, bint use_const, int horizon, double glie_power=1.0):
    cdef int S = cdf.shape[0]
    cdef int A = cdf.shape[1]
    Q_np = np.zeros((S, A))
    cdef double[:, ::1] Q = Q_np
    cdef double[:, ::1] N = np.zeros((S, A))
    returns = []
    ends = []
    cdef uint64_t st = seed
    cdef Py_ssize_t t
    cdef long k = 1
    cdef double eps = epsilon
    cdef int s, a, s2, a2, t_ep, i
    cdef double r, ret, disc, eta, target, m
    cdef bint done
    s = sample_row(&init_cdf[0], S, sm_uniform(&st))
    a = eps_greedy(&st, &Q[s, 0], A, eps)
    ret = 0.0
    disc = 1.0
    t_ep = 0
    for t in range(steps):
        s2 = sample_row(&cdf[s, a, 0], S, sm_uniform(&st))
        r = reward[s, a, s2]
        done = terminal[s2] != 0
        ret += disc * r
        disc *= gamma
        t_ep += 1
        N[s, a] += 1.0
        if use_const:
            eta = lr_const
        else:
            eta = 1.0 / pow(N[s, a], lr_power)
        if algo == 0:
            if done:
                target = r
            else:
                m = Q[s2, 0]
                for i in range(1, A):
                    if Q[s2, i] > m:
                        m = Q[s2, i]
                target = r + gamma * m
            Q[s, a] += eta * (target - Q[s, a])
            a2 = -1
        else:
            if done:
                a2 = -1
                target = r
            else:
                a2 = eps_greedy(&st, &Q[s2, 0], A, eps)
                target = r + gamma * Q[s2, a2]
            Q[s, a] += eta * (target - Q[s, a])
        if done or t_ep >= horizon:
            returns.append(ret)
            ends.append(t + 1)
            k += 1
            if glie:
                eps = epsilon / pow(k, glie_power)
            s = sample_row(&init_cdf[0], S, sm_uniform(&st))
            a = eps_greedy(&st, &Q[s, 0], A, eps)
            ret = 0.0
            disc = 1.0
            t_ep = 0
        else:
            s = s2
            if algo == 1:
                a = a2
            else:
                a = eps_greedy(&st, &Q[s, 0], A, eps)
    return Q_np, np.array(returns, dtype=float), np.array(ends, dtype=np.int64)
