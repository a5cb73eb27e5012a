"""Eigensolvers that keep tiny eigenvalues accurate relative to themselves.

Two structures show up repeatedly:

* Gram matrices ``G^H G`` of a tall factor whose rows carry wildly different
  weights (lattice sums of rank-one projectors).  Forming ``G^H G`` and calling
  ``eigh`` loses every eigenvalue below ``eps * ||G||^2``.  :func:`gram_eigh`
  works on the factor instead: row-sorted Householder QR with column pivoting,
  followed by one-sided Jacobi on the triangular factor.
* Arrowhead Hermitian matrices: diagonal except for a small "head" block and
  its coupling column.  :func:`arrowhead_eigh` splits off the head invariant
  subspace by a Riccati fixed point.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg

EPS = np.finfo(float).eps


def _jacobi_columns(M, tol=EPS, max_sweeps=60):
    """One-sided Jacobi: returns ``(norms, W)`` with ``M W`` having orthogonal columns."""
    M = np.array(M, dtype=complex)
    n = M.shape[1]
    W = np.eye(n, dtype=complex)
    for _ in range(max_sweeps):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                a = np.vdot(M[:, i], M[:, i]).real
                b = np.vdot(M[:, j], M[:, j]).real
                c = np.vdot(M[:, i], M[:, j])
                ac = abs(c)
                if ac <= tol * np.sqrt(a * b) or ac == 0.0:
                    continue
                rotated = True
                ph = c / ac
                zeta = (b - a) / (2.0 * ac)
                t = (1.0 if zeta >= 0 else -1.0) / (abs(zeta) + np.hypot(1.0, zeta))
                cs = 1.0 / np.hypot(1.0, t)
                sn = cs * t
                mi, mj = M[:, i].copy(), M[:, j] * np.conj(ph)
                M[:, i] = cs * mi - sn * mj
                M[:, j] = sn * mi + cs * mj
                wi, wj = W[:, i].copy(), W[:, j] * np.conj(ph)
                W[:, i] = cs * wi - sn * wj
                W[:, j] = sn * wi + cs * wj
        if not rotated:
            break
    return np.linalg.norm(M, axis=0), W, M


def gram_eigh(G):
    """Eigen-decomposition of ``G^H G`` computed from the factor ``G``.

    Returns ascending eigenvalues (squared singular values of ``G``) and
    orthonormal eigenvectors.  Small eigenvalues are accurate relative to
    themselves when the rows of ``G`` are badly scaled but otherwise well
    conditioned.
    """
    G = np.asarray(G)
    m, n = G.shape
    rows = np.linalg.norm(G, axis=1)
    G = G[np.argsort(-rows, kind="stable")]
    if m < n:
        G = np.vstack([G, np.zeros((n - m, n), dtype=G.dtype)])
    R, piv = scipy.linalg.qr(G, mode="r", pivoting=True)
    R = R[:n]
    # R^H W = U S  =>  R^H R = U S^2 U^H
    sv, _, RW = _jacobi_columns(R.conj().T)
    U = np.zeros((n, n), dtype=complex)
    good = sv > 0
    U[:, good] = RW[:, good] / sv[good]
    if not good.all():
        # complete the basis for exactly-zero singular values
        q, _ = np.linalg.qr(np.hstack([U[:, good], np.eye(n)]))
        U[:, ~good] = q[:, good.sum():n]
    V = np.zeros((n, n), dtype=complex)
    V[piv] = U
    w = sv ** 2
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def _secular_head(F, s, d, mu0, maxiter=50):
    """Head eigenpairs from the Schur-complement factor ``F``.

    An eigenpair ``(mu, [x; v])`` of the arrowhead matrix with ``mu`` below the
    diagonal satisfies ``F^H F v = mu M(mu) v`` with
    ``M(mu) = I + sum_m s_m^H s_m / (d_m (d_m - mu))`` and
    ``x_m = s_m v / (mu - d_m)``.  Each eigenvalue is found by iterating on
    ``mu``; ``M`` is whitened by its Cholesky factor so that the eigenvalues
    still come from a factor.  Returns ``(mu, vectors)`` with the head rows
    first, or None if an iteration does not settle.
    """
    h = len(mu0)
    mus = np.empty(h)
    Vs = np.empty((h + len(d), h), dtype=complex)
    for i in range(h):
        mu = float(mu0[i])
        for _ in range(maxiter):
            if mu >= d.min():
                return None
            Mmat = np.eye(h) + (s.conj().T * (1.0 / (d * (d - mu)))) @ s
            Ci = np.linalg.inv(np.linalg.cholesky(0.5 * (Mmat + Mmat.conj().T)).conj().T)
            w, U = gram_eigh(F @ Ci)
            new = float(w[i])
            done = abs(new - mu) <= 4 * EPS * abs(new)
            mu = new
            if done:
                break
        else:
            return None
        v = Ci @ U[:, i]
        x = (s @ v) / (mu - d)
        vec = np.concatenate([v, x])
        mus[i] = mu
        Vs[:, i] = vec / np.linalg.norm(vec)
    return mus, Vs


def _as_index(head, n):
    return np.arange(n)[head] if not isinstance(head, np.ndarray) else head


def arrowhead_eigh(H, head=None, head_factor=None, separation=0.5, maxiter=100):
    """Eigen-decomposition of Hermitian ``H`` with ascending eigenvalues.

    If ``head`` is given and ``H`` restricted to the complement of ``head`` is
    diagonal, the invariant subspace attached to the head block is split off
    through the fixed point ``X_m = s_m (L - d_m)^-1``, ``L = T + s^H X``.  This
    is used whenever the head eigenvalues are well separated from the diagonal
    (``||L|| <= separation * min|d|``); otherwise plain ``eigh`` is used.

    ``head_factor`` is an optional tall matrix ``F`` with
    ``F^H F = T - s^H diag(d)^-1 s``.  When the coupling is weak
    (``||X||^2 <= eps``) the head eigenvalues are then taken from ``F`` by
    :func:`gram_eigh`, which avoids the cancellation in that difference.
    """
    H = np.asarray(H)
    n = H.shape[0]
    if head is None:
        return np.linalg.eigh(H)
    hi = _as_index(head, n)
    ri = np.setdiff1d(np.arange(n), hi)
    if len(ri) == 0:
        return gram_eigh(head_factor) if head_factor is not None else np.linalg.eigh(H)
    R = H[np.ix_(ri, ri)]
    d = np.real(np.diag(R)).copy()
    if np.count_nonzero(R - np.diag(np.diag(R))) or np.min(np.abs(d)) == 0:
        return np.linalg.eigh(H)

    s = H[np.ix_(ri, hi)]
    free = ~np.any(s != 0, axis=1)
    if free.any():
        # rows not coupled to the head are exact eigenpairs; solve the rest
        keep = np.concatenate([ri[~free], hi])
        sub = H[np.ix_(keep, keep)]
        nh = np.arange(len(keep) - len(hi), len(keep))
        w1, V1 = arrowhead_eigh(sub, nh, head_factor, separation, maxiter)
        V = np.zeros((n, n), dtype=V1.dtype)
        V[keep, :len(keep)] = V1
        V[ri[free], len(keep) + np.arange(free.sum())] = 1.0
        w = np.concatenate([w1, d[free]])
        order = np.argsort(w, kind="stable")
        return w[order], V[:, order]
    T = H[np.ix_(hi, hi)]
    h = len(hi)
    eye = np.eye(h)
    X = np.zeros_like(s, dtype=complex)
    L = T.astype(complex)
    converged = False
    for _ in range(maxiter):
        Xn = np.linalg.solve(np.swapaxes(L[None] - d[:, None, None] * eye, 1, 2),
                             s[..., None])[..., 0]
        Ln = T + s.conj().T @ Xn
        delta = np.linalg.norm(Xn - X)
        X, L = Xn, Ln
        if delta <= 1e-15 * max(np.linalg.norm(X), 1e-300):
            converged = True
            break
    if not converged or np.linalg.norm(L, 2) > separation * np.min(np.abs(d)):
        return np.linalg.eigh(H)

    # small block: P^(1/2) L P^(-1/2), P = I + X^H X
    pw, pv = np.linalg.eigh(eye + X.conj().T @ X)
    P_half = (pv * np.sqrt(pw)) @ pv.conj().T
    P_mhalf = (pv / np.sqrt(pw)) @ pv.conj().T
    Cs = P_half @ L @ P_mhalf
    mu, U = np.linalg.eigh(0.5 * (Cs + Cs.conj().T))
    Ws = P_mhalf @ U
    small = None
    if head_factor is not None and np.all(d > 0):
        small = _secular_head(np.asarray(head_factor), s, d, mu)
        if small is not None:
            mu, Vs = small

    # big block on the complement [I; -X^H] Q^(-1/2), Q = I + X X^H
    ux, sx, _ = np.linalg.svd(X, full_matrices=False)
    corr = 1.0 / np.sqrt(1.0 + sx * sx) - 1.0

    def q_mhalf(M):
        return M + ux @ (corr[:, None] * (ux.conj().T @ M))

    Cb = np.diag(d).astype(complex) - s @ X.conj().T - X @ s.conj().T + X @ T @ X.conj().T
    Cb = q_mhalf(q_mhalf(Cb).conj().T).conj().T
    nu, Ub = np.linalg.eigh(0.5 * (Cb + Cb.conj().T))

    Wb = q_mhalf(Ub)
    V = np.zeros((n, n), dtype=complex)
    nb = len(ri)
    V[np.ix_(ri, np.arange(nb))] = Wb
    V[np.ix_(hi, np.arange(nb))] = -X.conj().T @ Wb
    if small is None:
        V[np.ix_(ri, nb + np.arange(h))] = X @ Ws
        V[np.ix_(hi, nb + np.arange(h))] = Ws
    else:
        V[:, nb:][ri] = Vs[h:]
        V[:, nb:][hi] = Vs[:h]
    w = np.concatenate([nu, mu])
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]
