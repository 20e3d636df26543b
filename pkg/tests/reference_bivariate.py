"""Directly coded samplers for the bivariate binary-test models.

Meta-regression::

    logit p_ikj = m_kj + eps_ikj,   (eps_ik1, eps_ik0) ~ N(0, Sigma)

Standard ANOVA::

    logit p_ikj = m_kj + eta_ij + eps_ikj,   (eta_i1, eta_i0) ~ N(0, Sigma),
    eps_ikj ~ N(0, tau_kj^2),  tau_kj ~ U(0, 5)

with m_kj ~ N(0, 1000) and Sigma^-1 ~ Wishart(I, 2). Counts are plain
binomials; nothing here touches the multi-threshold machinery. Updates run in
the engine's order and draw random numbers in the same sequence so that, for
the same seed, the chains coincide draw for draw.
"""
import math

import numpy as np
from scipy.stats import binom

FIXED_VAR = 1000.0
TAU_UPPER = 5.0


class BinaryNetwork:
    def __init__(self, data):
        self.tests = [t.test_id for t in data.tests]
        self.studies = sorted(data.studies)
        units, counts = [], {}
        for s in data.series:
            key = (s.study_id, s.test_id)
            if key not in counts:
                units.append(key)
                counts[key] = {}
            counts[key][int(s.group)] = (s.positives[0], s.group_size)
        self.units = units
        self.unit_test = np.array([self.tests.index(t) for _, t in units])
        self.unit_study = np.array([self.studies.index(s) for s, _ in units])
        # coordinate 0: diseased (true positives), coordinate 1: non-diseased (false positives)
        self.x = np.array([[counts[u][1][0], counts[u][0][0]] for u in units], float)
        self.n = np.array([[counts[u][1][1], counts[u][0][1]] for u in units], float)
        self.saturated = float(np.sum(binom.logpmf(self.x, self.n, self.x / self.n)))


def _loglik(net, eta):
    return binom.logpmf(net.x, net.n, 1.0 / (1.0 + np.exp(-eta)))


class ReferenceChain:
    def __init__(self, net, anova, rng, target=0.44):
        self.net, self.anova, self.rng, self.target = net, anova, rng, target
        k, u, i = len(net.tests), len(net.units), len(net.studies)
        self.m = np.zeros((k, 2))
        self.eps = np.zeros((u, 2))
        self.eta = np.zeros((i, 2))
        self.sigma = np.eye(2)
        self.tau = np.full((k, 2), 0.5)
        self.scale = {"fixed": np.full((k, 2), 0.1), "unit": np.full((u, 2), 0.3),
                      "study": np.full((i, 2), 0.2), "tau": np.full((k, 2), 0.3),
                      "tau_scale": np.full((k, 2), 0.3)}
        self.batch = 0
        self.reset()
        for c in range(2):
            p = (np.bincount(net.unit_test, net.x[:, c], k) + 0.5) / (np.bincount(net.unit_test, net.n[:, c], k) + 1.0)
            self.m[:, c] = np.clip(np.log(p / (1 - p)), -4.0, 4.0)
        jitter = 0.5 * rng.standard_normal((k, 4))
        self.m += jitter[:, :2]

    def reset(self):
        self.acc = {key: np.zeros_like(v) for key, v in self.scale.items()}
        self.prop = {key: np.zeros_like(v) for key, v in self.scale.items()}

    def eta_units(self):
        net = self.net
        out = self.m[net.unit_test] + self.eps
        if self.anova:
            out = out + self.eta[net.unit_study]
        return out

    def metropolis(self, key, c, idx, log_ratio):
        ok = np.log(self.rng.random(len(log_ratio))) < log_ratio
        self.acc[key][idx, c] += ok
        self.prop[key][idx, c] += 1
        return ok

    def unit_precision(self):
        """Per-unit 2x2 precision of (eps_1, eps_0)."""
        net = self.net
        if self.anova:
            out = np.zeros((len(net.units), 2, 2))
            out[:, 0, 0] = 1.0 / self.tau[net.unit_test, 0] ** 2
            out[:, 1, 1] = 1.0 / self.tau[net.unit_test, 1] ** 2
            return out
        return np.broadcast_to(np.linalg.inv(self.sigma), (len(net.units), 2, 2))

    def sweep(self):
        net = self.net
        k, i = len(net.tests), len(net.studies)
        # fixed effects
        for c in range(2):
            step = self.scale["fixed"][:, c] * self.rng.standard_normal(k)
            old_ll = _loglik(net, self.eta_units())[:, c]
            new_m = self.m.copy()
            new_m[:, c] += step
            eta = new_m[net.unit_test] + self.eps + (self.eta[net.unit_study] if self.anova else 0.0)
            d = np.bincount(net.unit_test, _loglik(net, eta)[:, c] - old_ll, k)
            ratio = d - 0.5 * (new_m[:, c] ** 2 - self.m[:, c] ** 2) / FIXED_VAR
            ok = self.metropolis("fixed", c, np.arange(k), ratio)
            self.m[ok, c] = new_m[ok, c]
        # study-by-test effects
        for c in range(2):
            prec = self.unit_precision()
            other = 1 - c
            step = self.scale["unit"][:, c] * self.rng.standard_normal(len(net.units))
            old, new = self.eps[:, c].copy(), self.eps[:, c] + step
            lin = prec[:, c, other] * self.eps[:, other]
            d_prior = -0.5 * prec[:, c, c] * (new ** 2 - old ** 2) - lin * (new - old)
            old_ll = _loglik(net, self.eta_units())[:, c]
            trial = self.eps.copy()
            trial[:, c] = new
            eta = self.m[net.unit_test] + trial + (self.eta[net.unit_study] if self.anova else 0.0)
            ok = self.metropolis("unit", c, np.arange(len(net.units)), _loglik(net, eta)[:, c] - old_ll + d_prior)
            self.eps[ok, c] = new[ok]
        # study effects
        if self.anova:
            q = np.linalg.inv(self.sigma)
            for c in range(2):
                other = 1 - c
                step = self.scale["study"][:, c] * self.rng.standard_normal(i)
                old, new = self.eta[:, c].copy(), self.eta[:, c] + step
                d_prior = -0.5 * q[c, c] * (new ** 2 - old ** 2) - q[c, other] * self.eta[:, other] * (new - old)
                old_ll = _loglik(net, self.eta_units())[:, c]
                trial = self.eta.copy()
                trial[:, c] = new
                eta = self.m[net.unit_test] + self.eps + trial[net.unit_study]
                d = np.bincount(net.unit_study, _loglik(net, eta)[:, c] - old_ll, i)
                ok = self.metropolis("study", c, np.arange(i), d + d_prior)
                self.eta[ok, c] = new[ok]
        # exact moves along directions that leave the likelihood unchanged
        prec = self.unit_precision()
        for c in range(2):
            pe = np.einsum("nb,nb->n", prec[:, c, :], self.eps)
            a = np.bincount(net.unit_test, prec[:, c, c], k) + 1.0 / FIXED_VAR
            b = np.bincount(net.unit_test, pe, k) - self.m[:, c] / FIXED_VAR
            delta = b / a + self.rng.standard_normal(k) / np.sqrt(a)
            self.m[:, c] += delta
            self.eps[:, c] -= delta[net.unit_test]
        if self.anova:
            q = np.linalg.inv(self.sigma)
            for c in range(2):
                pe = np.einsum("nb,nb->n", prec[:, c, :], self.eps)
                a = np.bincount(net.unit_study, prec[:, c, c], i) + q[c, c]
                b = np.bincount(net.unit_study, pe, i) - self.eta @ q[c]
                delta = b / a + self.rng.standard_normal(i) / np.sqrt(a)
                self.eta[:, c] += delta
                self.eps[:, c] -= delta[net.unit_study]
        # covariance: Wishart full conditional of the precision, Bartlett construction
        x = self.eta if self.anova else self.eps
        df = 2.0 + x.shape[0]
        scale = np.linalg.inv(np.eye(2) + x.T @ x)
        chi = self.rng.chisquare([df, df - 1.0])
        z = self.rng.standard_normal()
        bart = np.array([[math.sqrt(chi[0]), 0.0], [z, math.sqrt(chi[1])]])
        la = np.linalg.cholesky(scale) @ bart
        self.sigma = np.linalg.inv(la @ la.T)
        # interaction standard deviations, random walk on log tau
        if self.anova:
            for c in range(2):
                cnt = np.bincount(net.unit_test, minlength=k).astype(float)
                ss = np.bincount(net.unit_test, self.eps[:, c] ** 2, k)
                old = np.log(self.tau[:, c])
                new = old + self.scale["tau"][:, c] * self.rng.standard_normal(k)

                def target(lt):
                    # U(0, 5) on tau, with the log-scale Jacobian
                    inside = np.where(lt < math.log(TAU_UPPER), lt, -np.inf)
                    return -cnt * lt - 0.5 * ss * np.exp(-2 * lt) + inside

                ok = self.metropolis("tau", c, np.arange(k), target(new) - target(old))
                self.tau[ok, c] = np.exp(new[ok])
                # joint move: tau and its interaction effects scaled by the same factor
                old = np.log(self.tau[:, c])
                new = old + self.scale["tau_scale"][:, c] * self.rng.standard_normal(k)
                prior = lambda lt: np.where(lt < math.log(TAU_UPPER), lt, -np.inf)
                trial = self.eps.copy()
                trial[:, c] *= np.exp(new - old)[net.unit_test]
                eta = self.m[net.unit_test] + trial + self.eta[net.unit_study]
                d = np.bincount(net.unit_test, _loglik(net, eta)[:, c] - _loglik(net, self.eta_units())[:, c], k)
                ok = self.metropolis("tau_scale", c, np.arange(k), prior(new) - prior(old) + d)
                self.tau[ok, c] = np.exp(new[ok])
                self.eps[ok[net.unit_test], c] = trial[ok[net.unit_test], c]

    def adapt(self):
        self.batch += 1
        gain = min(1.0, 2.0 / math.sqrt(self.batch))
        for key, scale in self.scale.items():
            prop = self.prop[key]
            if not (prop > 0).any():
                continue
            rate = np.where(prop > 0, self.acc[key] / np.maximum(prop, 1), self.target)
            scale *= np.exp(gain * (rate - self.target))
        self.reset()

    def deviance(self):
        return -2.0 * (float(np.sum(_loglik(self.net, self.eta_units()))) - self.net.saturated)


def run_reference(data, *, anova: bool, seed: int, chains: int, warmup: int, keep: int, adapt_window: int = 50):
    """Draws keyed by parameter kind: m (C, n, K, 2), eps, eta, sigma (C, n, 2, 2), tau, deviance."""
    net = BinaryNetwork(data)
    out = {key: [] for key in ("m", "eps", "eta", "sigma", "tau", "deviance")}
    for c in range(chains):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, c])))
        ch = ReferenceChain(net, anova, rng)
        for it in range(warmup):
            ch.sweep()
            if (it + 1) % adapt_window == 0:
                ch.adapt()
        rec = {key: [] for key in out}
        for _ in range(keep):
            ch.sweep()
            rec["m"].append(ch.m.copy())
            rec["eps"].append(ch.eps.copy())
            rec["eta"].append(ch.eta.copy())
            rec["sigma"].append(ch.sigma.copy())
            rec["tau"].append(ch.tau.copy())
            rec["deviance"].append(ch.deviance())
        for key in out:
            out[key].append(np.array(rec[key]))
    return {key: np.array(v) for key, v in out.items()}, net


def engine_arrays(samples, model):
    """The engine's draws rearranged like :func:`run_reference` output."""
    c, n, _ = samples.draws.shape
    names = samples.names
    k, u, i = model.n_tests, model.n_units, model.n_studies
    pos = {name: j for j, name in enumerate(names)}

    def grab(fmt, rows, labels):
        idx = [[pos[fmt(r, g)] for g in labels] for r in rows]
        return samples.draws[:, :, np.array(idx)]

    groups = ("diseased", "nondiseased")
    out = {
        "m": grab(lambda t, g: f"m[{t},{g}]", model.test_ids, groups),
        "eps": grab(lambda un, g: f"eps[{un[0]},{un[1]},{g}]", model.units, groups),
        "deviance": samples.deviance,
    }
    if model.spec.variant.is_anova:
        out["eta"] = grab(lambda s, g: f"eta[{s},{g}]", model.study_ids, groups)
        out["tau"] = grab(lambda t, g: f"tau_m[{t},{g}]", model.test_ids, groups)
    chol = np.zeros((c, n, 2, 2))
    block = model.blocks[0].name
    chol[..., 0, 0] = samples.draws[:, :, pos[f"chol:{block}[0,0]"]]
    chol[..., 1, 0] = samples.draws[:, :, pos[f"chol:{block}[1,0]"]]
    chol[..., 1, 1] = samples.draws[:, :, pos[f"chol:{block}[1,1]"]]
    out["sigma"] = chol @ np.swapaxes(chol, -1, -2)
    assert (k, u, i) == (len(model.test_ids), len(model.units), len(model.study_ids))
    return out
