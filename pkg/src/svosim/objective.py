"""Vectorized value/gradient engine for one best-response subproblem.

The decision variables are the stacked control sequences of the solved
agents. The minimized function is the negated socially weighted sum of
rewards (terms constant in the decision variables dropped) plus a quadratic
penalty on violated keep-out ellipse constraints. Disc-pair TTC terms,
ellipse terms and tracking terms are evaluated as flat row batches with
hand-coded reverse-mode gradients.

Sign convention: `cost` is the negative of the reward being maximized, so
the engine always minimizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .trajectories import DesiredTrajectory, eval_desired_full

TINY_NORM = 1e-9
COSINE_EPS = 1e-6


@dataclass
class SolvedAgentData:
    """Per-agent inputs for an agent whose controls are optimized."""

    agent_id: int
    x0: np.ndarray  # (5,)
    wheelbase: float
    delta_max: float
    offsets: tuple[float, float]
    radius: float
    v_max: float
    weights: tuple[float, float, float, float, float, float]
    coeff: float
    desired: DesiredTrajectory


@dataclass
class FixedAgentData:
    """Per-agent inputs for an agent held to a predicted rollout."""

    agent_id: int
    states: np.ndarray  # (T+1, 5)
    controls: np.ndarray  # (T, 2)
    offsets: tuple[float, float]
    radius: float
    v_max: float
    weights: tuple[float, float, float, float, float, float]
    coeff: float
    desired: DesiredTrajectory


def _wrap(phi: np.ndarray) -> np.ndarray:
    return -((-phi + math.pi) % (2.0 * math.pi) - math.pi)


class ObjectiveEngine:
    """Evaluates the penalized best-response cost and its exact gradient.

    Weight layout per agent: (k_v, k_u, k_speeding, k_lat, k_lon, k_ttc).
    """

    def __init__(
        self,
        solved: list[SolvedAgentData],
        fixed: list[FixedAgentData],
        horizon: int,
        dt: float,
        v_eps: float,
        use_literal_inflation: bool,
        cosine_toward_ado: bool,
        margin: float,
        gap_floor: float,
    ) -> None:
        if horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not solved:
            raise ValueError("at least one solved agent is required")
        self.solved = solved
        self.fixed = fixed
        self.T = horizon
        self.dt = dt
        self.v_eps = v_eps
        self.literal = use_literal_inflation
        self.toward = cosine_toward_ado
        self.margin = margin
        self.gap_floor = gap_floor

        self.n_s = len(solved)
        self.n_f = len(fixed)
        self.n_all = self.n_s + self.n_f
        steps = horizon + 1

        # stacked per-(agent, step) storage; solved agents occupy the first
        # n_s * steps entries and are refreshed on every evaluation
        self._pos = np.zeros((self.n_all * steps, 2))
        self._cos = np.zeros(self.n_all * steps)
        self._sin = np.zeros(self.n_all * steps)
        self._spd = np.zeros(self.n_all * steps)
        for k, agent in enumerate(fixed):
            if agent.states.shape != (steps, 5):
                raise ValueError("fixed rollouts must cover the full horizon")
            sl = slice((self.n_s + k) * steps, (self.n_s + k + 1) * steps)
            self._pos[sl] = agent.states[:, :2]
            self._cos[sl] = np.cos(agent.states[:, 2])
            self._sin[sl] = np.sin(agent.states[:, 2])
            self._spd[sl] = agent.states[:, 4]

        self._all_offsets = np.array(
            [a.offsets for a in solved] + [a.offsets for a in fixed]
        )
        self._all_radius = np.array(
            [a.radius for a in solved] + [a.radius for a in fixed]
        )
        ttc_weight = np.array(
            [a.coeff * a.weights[5] for a in solved]
            + [a.coeff * a.weights[5] for a in fixed]
        )

        self._solved_arrays()
        self._build_ttc_rows(ttc_weight, steps)
        self._build_ellipse_rows(steps)
        self._const_cost = self._constant_cost()

    # ------------------------------------------------------------------
    # row construction

    def _solved_arrays(self) -> None:
        s = self.solved
        self._x0 = np.array([a.x0 for a in s], dtype=float)
        self._wb = np.array([a.wheelbase for a in s])
        self._dmax = np.array([a.delta_max for a in s])
        self._vmax_s = np.array([a.v_max for a in s])
        self._w_s = np.array([a.weights for a in s])
        self._c_s = np.array([a.coeff for a in s])

    def _pair_rows(
        self, pairs: list[tuple[int, int]], ttc_weight: np.ndarray, steps: int
    ) -> dict[str, np.ndarray]:
        """Expand directed vehicle pairs into disc-pair rows over all steps."""
        keys = ("fm", "fj", "oe", "oa", "rsum", "kw", "m_scatter", "j_scatter")
        rows: dict[str, list[np.ndarray]] = {k: [] for k in keys}
        t_idx = np.arange(steps)
        for m, j in pairs:
            for oe in self._all_offsets[m]:
                for oa in self._all_offsets[j]:
                    rows["fm"].append(m * steps + t_idx)
                    rows["fj"].append(j * steps + t_idx)
                    rows["oe"].append(np.full(steps, oe))
                    rows["oa"].append(np.full(steps, oa))
                    rows["rsum"].append(
                        np.full(steps, self._all_radius[m] + self._all_radius[j])
                    )
                    rows["kw"].append(np.full(steps, ttc_weight[m]))
                    rows["m_scatter"].append(
                        m * steps + t_idx
                        if m < self.n_s
                        else np.full(steps, -1, dtype=int)
                    )
                    rows["j_scatter"].append(
                        j * steps + t_idx
                        if j < self.n_s
                        else np.full(steps, -1, dtype=int)
                    )
        out: dict[str, np.ndarray] = {}
        for k, chunks in rows.items():
            out[k] = np.concatenate(chunks) if chunks else np.zeros(0, dtype=int)
        return out

    def _build_ttc_rows(self, ttc_weight: np.ndarray, steps: int) -> None:
        pairs = [
            (m, j)
            for m in range(self.n_all)
            for j in range(self.n_all)
            if m != j and (m < self.n_s or j < self.n_s)
        ]
        self._ttc = self._pair_rows(pairs, ttc_weight, steps)
        const_pairs = [
            (m, j)
            for m in range(self.n_s, self.n_all)
            for j in range(self.n_s, self.n_all)
            if m != j
        ]
        self._ttc_const = self._pair_rows(const_pairs, ttc_weight, steps)

    def _build_ellipse_rows(self, steps: int) -> None:
        keys = ("fa", "fb", "ob", "A", "B", "a_scatter", "b_scatter")
        rows: dict[str, list[np.ndarray]] = {k: [] for k in keys}
        t_idx = np.arange(steps)
        for a in range(self.n_s):
            spread_a = max(abs(o) for o in self._all_offsets[a])
            for b in range(self.n_all):
                if b == a:
                    continue
                reach = self._all_radius[a] + self._all_radius[b] + self.margin
                for ob in self._all_offsets[b]:
                    rows["fa"].append(a * steps + t_idx)
                    rows["fb"].append(b * steps + t_idx)
                    rows["ob"].append(np.full(steps, ob))
                    rows["A"].append(np.full(steps, spread_a + reach))
                    rows["B"].append(np.full(steps, reach))
                    rows["a_scatter"].append(a * steps + t_idx)
                    rows["b_scatter"].append(
                        b * steps + t_idx
                        if b < self.n_s
                        else np.full(steps, -1, dtype=int)
                    )
        self._ell = {
            k: np.concatenate(v) if v else np.zeros(0, dtype=int)
            for k, v in rows.items()
        }

    # ------------------------------------------------------------------
    # forward model

    def rollout(self, U: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Forward-Euler rollout of all solved agents.

        Returns states (n_s, T+1, 5) plus per-step masks that are 1.0 where
        the steering / speed update was not clamped.
        """
        n_s, T, dt = self.n_s, self.T, self.dt
        X = np.empty((n_s, T + 1, 5))
        X[:, 0] = self._x0
        free_delta = np.empty((n_s, T))
        free_v = np.empty((n_s, T))
        for t in range(T):
            x, y, phi, delta, v = (X[:, t, i] for i in range(5))
            X[:, t + 1, 0] = x + dt * v * np.cos(phi)
            X[:, t + 1, 1] = y + dt * v * np.sin(phi)
            X[:, t + 1, 2] = _wrap(phi + dt * (v / self._wb) * np.tan(delta))
            delta_next = delta + dt * U[:, t, 0]
            free_delta[:, t] = (delta_next > -self._dmax) & (delta_next < self._dmax)
            X[:, t + 1, 3] = np.clip(delta_next, -self._dmax, self._dmax)
            v_next = v + dt * U[:, t, 1]
            free_v[:, t] = v_next > 0.0
            X[:, t + 1, 4] = np.maximum(v_next, 0.0)
        return X, free_delta, free_v

    def _fill(self, X: np.ndarray) -> None:
        steps = self.T + 1
        sl = slice(0, self.n_s * steps)
        flat = X.reshape(-1, 5)
        self._pos[sl] = flat[:, :2]
        self._cos[sl] = np.cos(flat[:, 2])
        self._sin[sl] = np.sin(flat[:, 2])
        self._spd[sl] = flat[:, 4]

    # ------------------------------------------------------------------
    # cost pieces

    def _ttc_batch(
        self,
        rows: dict[str, np.ndarray],
        grads: tuple[np.ndarray, np.ndarray, np.ndarray] | None,
    ) -> float:
        """Alignment-scaled inverse-TTC cost over a disc-pair row batch."""
        fm, fj = rows["fm"], rows["fj"]
        if fm.size == 0:
            return 0.0
        oe, oa, rsum, kw = rows["oe"], rows["oa"], rows["rsum"], rows["kw"]

        cm, sm = self._cos[fm], self._sin[fm]
        cj, sj = self._cos[fj], self._sin[fj]
        vm, vj = self._spd[fm], self._spd[fj]
        px = self._pos[fm, 0] + oe * cm - self._pos[fj, 0] - oa * cj
        py = self._pos[fm, 1] + oe * sm - self._pos[fj, 1] - oa * sj

        n = np.maximum(np.hypot(px, py), TINY_NORM)
        gap = n - rsum
        unclamped = gap > self.gap_floor
        G = np.maximum(gap, self.gap_floor)
        h = -(px * cm + py * sm)

        buffer = self.v_eps * np.where(h > 0.0, -1.0, 1.0) * (vj > 0.0)
        vj_eff = vj + buffer
        wx = vm * cm - vj_eff * cj
        wy = vm * sm - vj_eff * sj
        dw = px * wx + py * wy

        approach = dw * h < 0.0 if self.toward else dw * h > 0.0
        active = approach & (np.abs(h) >= COSINE_EPS * n)
        if self.literal:
            cost = kw * (dw * h * G) ** 2 / n**8
        else:
            cost = kw * (dw * h) ** 2 / (G**2 * n**4)
        cost = np.where(active, cost, 0.0)
        total = float(cost.sum())

        if grads is None:
            return total
        idx = np.flatnonzero(active)
        if idx.size == 0:
            return total

        gpos, gphi, gv = grads
        c = cost[idx]
        px_, py_, n_, G_, h_, dw_ = px[idx], py[idx], n[idx], G[idx], h[idx], dw[idx]
        wx_, wy_ = wx[idx], wy[idx]
        cm_, sm_, cj_, sj_ = cm[idx], sm[idx], cj[idx], sj[idx]
        vm_, vjeff_ = vm[idx], vj_eff[idx]

        gamma = 2.0 if self.literal else -2.0
        nu = 8.0 if self.literal else 4.0
        d_dw = 2.0 * c / dw_
        d_h = 2.0 * c / h_
        d_n = -nu * c / n_ + gamma * (c / G_) * unclamped[idx]
        ux, uy = px_ / n_, py_ / n_

        gpx = d_dw * wx_ - d_h * cm_ + d_n * ux
        gpy = d_dw * wy_ - d_h * sm_ + d_n * uy
        gwx = d_dw * px_
        gwy = d_dw * py_

        m_rows = np.flatnonzero(rows["m_scatter"][idx] >= 0)
        if m_rows.size:
            tgt = rows["m_scatter"][idx][m_rows]
            oe_ = oe[idx][m_rows]
            dpx, dpy = -sm_[m_rows], cm_[m_rows]
            np.add.at(gpos[:, 0], tgt, gpx[m_rows])
            np.add.at(gpos[:, 1], tgt, gpy[m_rows])
            # heading moves the disc center, the relative velocity and the
            # front indicator direction
            phi_term = (
                (gpx[m_rows] * oe_ + gwx[m_rows] * vm_[m_rows]) * dpx
                + (gpy[m_rows] * oe_ + gwy[m_rows] * vm_[m_rows]) * dpy
                - d_h[m_rows] * (px_[m_rows] * dpx + py_[m_rows] * dpy)
            )
            np.add.at(gphi, tgt, phi_term)
            np.add.at(gv, tgt, gwx[m_rows] * cm_[m_rows] + gwy[m_rows] * sm_[m_rows])

        j_rows = np.flatnonzero(rows["j_scatter"][idx] >= 0)
        if j_rows.size:
            tgt = rows["j_scatter"][idx][j_rows]
            oa_ = oa[idx][j_rows]
            dpx, dpy = -sj_[j_rows], cj_[j_rows]
            np.add.at(gpos[:, 0], tgt, -gpx[j_rows])
            np.add.at(gpos[:, 1], tgt, -gpy[j_rows])
            phi_term = (
                -(gpx[j_rows] * oa_ + gwx[j_rows] * vjeff_[j_rows]) * dpx
                - (gpy[j_rows] * oa_ + gwy[j_rows] * vjeff_[j_rows]) * dpy
            )
            np.add.at(gphi, tgt, phi_term)
            np.add.at(
                gv, tgt, -(gwx[j_rows] * cj_[j_rows] + gwy[j_rows] * sj_[j_rows])
            )
        return total

    def _penalty(
        self,
        grads: tuple[np.ndarray, np.ndarray, np.ndarray] | None,
        mu: float,
    ) -> float:
        """Sum of squared keep-out ellipse violations, returned at unit
        weight; scattered gradients are scaled by mu."""
        r = self._ell
        fa, fb, ob = r["fa"], r["fb"], r["ob"]
        if fa.size == 0:
            return 0.0
        A, B = r["A"], r["B"]
        ca, sa = self._cos[fa], self._sin[fa]
        cb, sb = self._cos[fb], self._sin[fb]
        relx = self._pos[fb, 0] + ob * cb - self._pos[fa, 0]
        rely = self._pos[fb, 1] + ob * sb - self._pos[fa, 1]
        xi = ca * relx + sa * rely
        eta = -sa * relx + ca * rely
        g = (xi / A) ** 2 + (eta / B) ** 2 - 1.0
        viol = np.maximum(-g, 0.0)
        total = float(np.sum(viol**2))
        if grads is None or total == 0.0:
            return total

        gpos, gphi, _ = grads
        idx = np.flatnonzero(viol > 0.0)
        dpen_dg = -2.0 * mu * viol[idx]
        gxi = dpen_dg * 2.0 * xi[idx] / A[idx] ** 2
        geta = dpen_dg * 2.0 * eta[idx] / B[idx] ** 2
        grelx = gxi * ca[idx] - geta * sa[idx]
        grely = gxi * sa[idx] + geta * ca[idx]

        tgt_a = r["a_scatter"][idx]
        np.add.at(gpos[:, 0], tgt_a, -grelx)
        np.add.at(gpos[:, 1], tgt_a, -grely)
        np.add.at(gphi, tgt_a, gxi * eta[idx] - geta * xi[idx])

        b_rows = np.flatnonzero(r["b_scatter"][idx] >= 0)
        if b_rows.size:
            tgt_b = r["b_scatter"][idx][b_rows]
            ob_ = ob[idx][b_rows]
            dpx, dpy = -sb[idx][b_rows], cb[idx][b_rows]
            np.add.at(gpos[:, 0], tgt_b, grelx[b_rows])
            np.add.at(gpos[:, 1], tgt_b, grely[b_rows])
            np.add.at(gphi, tgt_b, ob_ * (grelx[b_rows] * dpx + grely[b_rows] * dpy))
        return total

    def _own_cost(
        self,
        X: np.ndarray,
        U: np.ndarray,
        agents: list,
        coeffs: np.ndarray,
        vmax: np.ndarray,
        weights: np.ndarray,
        grads: tuple[np.ndarray, np.ndarray, np.ndarray] | None,
        gU: np.ndarray | None,
        base_index: int = 0,
    ) -> float:
        """Speed payoff, speeding, effort and tracking terms (negated
        rewards) for a block of agents."""
        steps = self.T + 1
        total = 0.0
        for k, agent in enumerate(agents):
            c = coeffs[k]
            k_v, k_u, k_sp, k_lat, k_lon, _ = weights[k]
            v = X[k, :, 4]
            slack = np.maximum(v - vmax[k], 0.0)
            total -= c * k_v * float(np.sum(v**2))
            total += c * k_sp * float(np.sum(slack**2))
            total += c * k_u * float(np.sum(U[k] ** 2))

            dx_steps = np.diff(X[k, :, 0])
            dy_steps = np.diff(X[k, :, 1])
            seg = np.hypot(dx_steps, dy_steps)
            s = np.concatenate(([0.0], np.cumsum(seg)))
            xd, yd, phid, xps, yps, phps = eval_desired_full(agent.desired, s)
            dx = X[k, :, 0] - xd
            dy = X[k, :, 1] - yd
            cphi, sphi = np.cos(phid), np.sin(phid)
            e_lat = -sphi * dx + cphi * dy
            e_lon = cphi * dx + sphi * dy
            total += c * float(k_lat * np.sum(e_lat**2) + k_lon * np.sum(e_lon**2))

            if grads is None:
                continue
            gpos, _, gv = grads
            sl = slice((base_index + k) * steps, (base_index + k + 1) * steps)
            gv[sl] += -2.0 * c * k_v * v + 2.0 * c * k_sp * slack
            if gU is not None:
                gU[base_index + k] += 2.0 * c * k_u * U[k]

            gdx = 2.0 * c * (k_lon * e_lon * cphi - k_lat * e_lat * sphi)
            gdy = 2.0 * c * (k_lat * e_lat * cphi + k_lon * e_lon * sphi)
            gpos_x = gpos[sl, 0]
            gpos_y = gpos[sl, 1]
            gpos_x += gdx
            gpos_y += gdy
            # matched-progress dependence: the reference pose advances with
            # the rollout's own accumulated path length
            gs = (
                -gdx * xps
                - gdy * yps
                + 2.0 * c * (k_lon - k_lat) * e_lat * e_lon * phps
            )
            g_seg = np.cumsum(gs[::-1])[::-1][1:]
            safe = seg > TINY_NORM
            ux = np.where(safe, dx_steps / np.maximum(seg, TINY_NORM), 0.0)
            uy = np.where(safe, dy_steps / np.maximum(seg, TINY_NORM), 0.0)
            gpos_x[1:] += g_seg * ux
            gpos_y[1:] += g_seg * uy
            gpos_x[:-1] -= g_seg * ux
            gpos_y[:-1] -= g_seg * uy
        return total

    def _constant_cost(self) -> float:
        """Cost terms independent of the decision variables: the held
        agents' own terms and their mutual TTC terms."""
        if self.n_f == 0:
            return 0.0
        X_f = np.stack([a.states for a in self.fixed])
        U_f = np.stack([a.controls for a in self.fixed])
        coeffs = np.array([a.coeff for a in self.fixed])
        vmax = np.array([a.v_max for a in self.fixed])
        weights = np.array([a.weights for a in self.fixed])
        total = self._own_cost(
            X_f, U_f, self.fixed, coeffs, vmax, weights, None, None, self.n_s
        )
        total += self._ttc_batch(self._ttc_const, None)
        return total

    # ------------------------------------------------------------------
    # adjoint of the rollout

    def _backprop(
        self,
        X: np.ndarray,
        free_delta: np.ndarray,
        free_v: np.ndarray,
        gpos: np.ndarray,
        gphi: np.ndarray,
        gv: np.ndarray,
        gU: np.ndarray,
    ) -> np.ndarray:
        """Pull per-state gradients back through the Euler rollout."""
        n_s, T, dt = self.n_s, self.T, self.dt
        steps = T + 1
        gx = gpos[: n_s * steps, 0].reshape(n_s, steps)
        gy = gpos[: n_s * steps, 1].reshape(n_s, steps)
        gph = gphi[: n_s * steps].reshape(n_s, steps)
        gvv = gv[: n_s * steps].reshape(n_s, steps)

        lam_x = gx[:, T].copy()
        lam_y = gy[:, T].copy()
        lam_phi = gph[:, T].copy()
        lam_delta = np.zeros(n_s)
        lam_v = gvv[:, T].copy()
        for t in range(T, 0, -1):
            phi = X[:, t - 1, 2]
            delta = X[:, t - 1, 3]
            v = X[:, t - 1, 4]
            cosp, sinp = np.cos(phi), np.sin(phi)
            tand = np.tan(delta)
            sec2 = 1.0 + tand**2
            fd = free_delta[:, t - 1]
            fv = free_v[:, t - 1]

            gU[:, t - 1, 0] += dt * fd * lam_delta
            gU[:, t - 1, 1] += dt * fv * lam_v

            new_phi = (
                lam_phi
                + dt * v * (-sinp) * lam_x
                + dt * v * cosp * lam_y
                + gph[:, t - 1]
            )
            new_delta = fd * lam_delta + dt * (v / self._wb) * sec2 * lam_phi
            new_v = (
                fv * lam_v
                + dt * cosp * lam_x
                + dt * sinp * lam_y
                + dt * tand / self._wb * lam_phi
                + gvv[:, t - 1]
            )
            lam_x = lam_x + gx[:, t - 1]
            lam_y = lam_y + gy[:, t - 1]
            lam_phi = new_phi
            lam_delta = new_delta
            lam_v = new_v
        return gU

    # ------------------------------------------------------------------
    # public evaluations

    def cost_and_grad(self, z: np.ndarray, mu: float) -> tuple[float, np.ndarray]:
        """Penalized reduced cost and its gradient w.r.t. flat controls."""
        T, n_s = self.T, self.n_s
        steps = T + 1
        U = z.reshape(n_s, T, 2)
        X, free_delta, free_v = self.rollout(U)
        self._fill(X)

        gpos = np.zeros((self.n_all * steps, 2))
        gphi = np.zeros(self.n_all * steps)
        gv = np.zeros(self.n_all * steps)
        gU = np.zeros((n_s, T, 2))
        grads = (gpos, gphi, gv)

        total = self._ttc_batch(self._ttc, grads)
        total += mu * self._penalty(grads, mu)
        total += self._own_cost(
            X, U, self.solved, self._c_s, self._vmax_s, self._w_s, grads, gU
        )
        gU = self._backprop(X, free_delta, free_v, gpos, gphi, gv, gU)
        return total, gU.ravel()

    def cost(self, z: np.ndarray, mu: float) -> float:
        U = z.reshape(self.n_s, self.T, 2)
        X, _, _ = self.rollout(U)
        return self.cost_states(U, X, mu)

    def cost_states(self, U: np.ndarray, X: np.ndarray, mu: float) -> float:
        """Penalized reduced cost at explicitly supplied solved rollouts."""
        self._fill(X)
        total = self._ttc_batch(self._ttc, None)
        if mu != 0.0:
            total += mu * self._penalty(None, mu)
        total += self._own_cost(
            X, U, self.solved, self._c_s, self._vmax_s, self._w_s, None, None
        )
        return total

    def penalty_measure(self, X: np.ndarray) -> float:
        """Unit-weight squared ellipse violation at the given rollouts."""
        self._fill(X)
        return self._penalty(None, 1.0)

    def objective_full(self, U: np.ndarray, X: np.ndarray) -> float:
        """Socially weighted reward sum over all agents at the given solved
        rollouts, including the terms constant in the decision variables."""
        return -(self.cost_states(U, X, mu=0.0) + self._const_cost)
