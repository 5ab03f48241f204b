# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: branch-and-bound over dispatch orders, order simulation."""

from libc.stdlib cimport malloc, free

cdef long INF = 1 << 62


cdef struct Ctx:
    int J
    int M
    int L
    int total
    int* mach
    int* ptime
    int* length
    int* nxt
    long* jr
    long* mf
    long* rem_job
    long* rem_mach
    int* cand
    long* cest
    long best
    long nodes
    long budget
    int aborted
    int prune
    int dominance


cdef void _dfs(Ctx* c, int depth) noexcept nogil:
    cdef int j, k, m, i, a, n, mstar, jj
    cdef long v, lb, est, cstar, p, end, old_jr, old_mf, ms, tmp_e
    cdef int tmp_j
    cdef int* cand
    cdef long* cest
    if depth == c.total:
        ms = 0
        for m in range(c.M):
            if c.mf[m] > ms:
                ms = c.mf[m]
        if ms < c.best:
            c.best = ms
        return
    c.nodes += 1
    if c.nodes > c.budget:
        c.aborted = 1
        return
    if c.prune:
        lb = 0
        for j in range(c.J):
            v = c.jr[j] + c.rem_job[j]
            if v > lb:
                lb = v
        for m in range(c.M):
            v = c.mf[m] + c.rem_mach[m]
            if v > lb:
                lb = v
        if lb >= c.best:
            return
    cand = c.cand + depth * c.J
    cest = c.cest + depth * c.J
    n = 0
    cstar = INF
    mstar = -1
    for j in range(c.J):
        k = c.nxt[j]
        if k < c.length[j]:
            m = c.mach[j * c.L + k]
            est = c.jr[j] if c.jr[j] > c.mf[m] else c.mf[m]
            cand[n] = j
            cest[n] = est
            n += 1
            if est + c.ptime[j * c.L + k] < cstar:
                cstar = est + c.ptime[j * c.L + k]
                mstar = m
    if c.dominance:
        a = 0
        for i in range(n):
            j = cand[i]
            if c.mach[j * c.L + c.nxt[j]] == mstar and cest[i] < cstar:
                cand[a] = j
                cest[a] = cest[i]
                a += 1
        n = a
    # insertion sort by (est, job)
    for i in range(1, n):
        tmp_j = cand[i]
        tmp_e = cest[i]
        a = i - 1
        while a >= 0 and (cest[a] > tmp_e or (cest[a] == tmp_e and cand[a] > tmp_j)):
            cand[a + 1] = cand[a]
            cest[a + 1] = cest[a]
            a -= 1
        cand[a + 1] = tmp_j
        cest[a + 1] = tmp_e
    for i in range(n):
        j = cand[i]
        k = c.nxt[j]
        m = c.mach[j * c.L + k]
        p = c.ptime[j * c.L + k]
        old_jr = c.jr[j]
        old_mf = c.mf[m]
        end = cest[i] + p
        c.jr[j] = end
        c.mf[m] = end
        c.nxt[j] = k + 1
        c.rem_job[j] -= p
        c.rem_mach[m] -= p
        _dfs(c, depth + 1)
        c.nxt[j] = k
        c.rem_job[j] += p
        c.rem_mach[m] += p
        c.jr[j] = old_jr
        c.mf[m] = old_mf
        if c.aborted:
            return


def bnb_solve(machines, times, int n_machines, long node_budget, bint prune=True,
              bint dominance=True, upper_bound=None):
    """See ``jsslab._kernels_py.bnb_solve``."""
    cdef Ctx c
    cdef int j, k, J = len(machines), L = 0
    for row in machines:
        if len(row) > L:
            L = len(row)
    c.J = J
    c.M = n_machines
    c.L = L if L > 0 else 1
    c.total = 0
    c.mach = <int*> malloc(J * c.L * sizeof(int))
    c.ptime = <int*> malloc(J * c.L * sizeof(int))
    c.length = <int*> malloc((J + 1) * sizeof(int))
    c.nxt = <int*> malloc((J + 1) * sizeof(int))
    c.jr = <long*> malloc((J + 1) * sizeof(long))
    c.rem_job = <long*> malloc((J + 1) * sizeof(long))
    c.mf = <long*> malloc((n_machines + 1) * sizeof(long))
    c.rem_mach = <long*> malloc((n_machines + 1) * sizeof(long))
    try:
        for k in range(n_machines):
            c.mf[k] = 0
            c.rem_mach[k] = 0
        for j in range(J):
            row_m = machines[j]
            row_t = times[j]
            c.length[j] = len(row_m)
            c.total += len(row_m)
            c.nxt[j] = 0
            c.jr[j] = 0
            c.rem_job[j] = 0
            for k in range(len(row_m)):
                c.mach[j * c.L + k] = row_m[k]
                c.ptime[j * c.L + k] = row_t[k]
                c.rem_job[j] += row_t[k]
                c.rem_mach[row_m[k]] += row_t[k]
        c.cand = <int*> malloc((c.total + 1) * (J + 1) * sizeof(int))
        c.cest = <long*> malloc((c.total + 1) * (J + 1) * sizeof(long))
        c.best = INF if upper_bound is None or upper_bound == float("inf") else <long> upper_bound
        c.nodes = 0
        c.budget = node_budget
        c.aborted = 0
        c.prune = prune
        c.dominance = dominance
        with nogil:
            _dfs(&c, 0)
        free(c.cand)
        free(c.cest)
        best = c.best if c.best < INF else -1
        return int(best), int(c.nodes), not c.aborted
    finally:
        free(c.mach)
        free(c.ptime)
        free(c.length)
        free(c.nxt)
        free(c.jr)
        free(c.rem_job)
        free(c.mf)
        free(c.rem_mach)


def simulate_order(machines, times, int n_machines, job_order):
    cdef int J = len(machines)
    cdef list nxt = [0] * J
    cdef list jr = [0] * J
    cdef list mf = [0] * n_machines
    cdef int j, k, m
    cdef long end
    for j in job_order:
        k = nxt[j]
        m = machines[j][k]
        end = max(<long> jr[j], <long> mf[m]) + <long> times[j][k]
        jr[j] = end
        mf[m] = end
        nxt[j] = k + 1
    return max(mf) if mf else 0
