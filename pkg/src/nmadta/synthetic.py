"""Synthetic evidence networks with the shapes of the two case-study reviews.

``hcc_like``: 130 studies, 28 tests (4 continuous), AFP reported at 157
distinct thresholds with up to 48 in one study; connected, with several
one-study tests, and disconnected once every continuous test is reduced to its
reference threshold.

``prostate_like``: 37 studies, 4 tests (4K, PCA3 and PHI continuous, SelectMDx
binary); connected, with no co-evaluation left after reduction.

``recovery``: 20 studies each evaluating 3 continuous tests at 3 thresholds,
used for posterior-recovery checks.

All counts are drawn by the sequential binomial scheme from a known parameter
state, which is returned alongside the data.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logit

from .dataset import Dataset, DiseaseGroup, TestDescriptor, TestKind
from .model import CovarianceStructure, Model, ModelSpec, ModelVariant, ParameterState
from .simulate import DesignRow, design_dataset, simulate_dataset

__all__ = ["SyntheticNetwork", "hcc_like", "prostate_like", "recovery", "NETWORKS", "generate"]


@dataclass
class SyntheticNetwork:
    data: Dataset
    truth: ParameterState
    spec: ModelSpec


@dataclass(frozen=True)
class _TestTruth:
    test_id: str
    name: str
    c_star: float | None
    sens: float
    spec: float
    sigma1: float = 1.0
    sigma0: float = 1.0


_HCC_TESTS = (
    _TestTruth("AFP", "AFP", 20.0, 0.61, 0.90, 1.6, 0.9),
    _TestTruth("AFP_L3", "AFP-L3", 10.0, 0.48, 0.94, 0.9, 0.6),
    _TestTruth("AFP_RATE", "AFP progression rate", None, 0.65, 0.97),
    _TestTruth("US", "B-mode US", None, 0.65, 0.95),
    _TestTruth("CEUS", "CEUS", None, 0.90, 0.97),
    _TestTruth("CAFPI", "Combined AFP index", None, 0.80, 0.62),
    _TestTruth("DCP_MAU", "DCP (mAU/mL)", 40.0, 0.75, 0.74, 1.1, 0.8),
    _TestTruth("DCP_NG", "DCP (ng/mL)", 7.5, 0.55, 0.95, 0.8, 0.7),
    _TestTruth("MODEL1", "Model based on DCP, AFP, gender, and age", None, 0.86, 0.90),
    _TestTruth("DOYLESTOWN", "Doylestown algorithm", None, 0.47, 0.94),
    _TestTruth("CE_MRI", "Dynamic contrast-enhanced MRI", None, 0.87, 0.93),
    _TestTruth("GALAD", "GALAD", None, 0.75, 0.80),
    _TestTruth("HCC_ART", "HCC-ART", None, 0.85, 0.84),
    _TestTruth("HES", "HES algorithm", None, 0.45, 0.91),
    _TestTruth("LGALAD", "Longitudinal GALAD", None, 0.70, 0.91),
    _TestTruth("MFB_I", "mFB-I", None, 0.70, 0.91),
    _TestTruth("MFB_J", "mFB-J", None, 0.70, 0.91),
    _TestTruth("MODEL2", "Model based on AFP and DCP", None, 0.75, 0.86),
    _TestTruth("MODEL3", "Model based on age, gender, AFP and DCP", None, 0.67, 0.90),
    _TestTruth("CT", "Multiphase HCC-specific protocol CT", None, 0.88, 0.92),
    _TestTruth("NC_MRI", "Noncontrast MRI", None, 0.88, 0.98),
    _TestTruth("PEB_AFP", "PEB algorithm (AFP)", None, 0.82, 0.90),
    _TestTruth("PEB_DCP", "PEB algorithm (DCP)", None, 0.68, 0.90),
    _TestTruth("PM_DL", "PM-DL model", None, 0.95, 0.99),
    _TestTruth("SAFP1", "Serial AFP", None, 0.86, 0.88),
    _TestTruth("SAFP2", "Serial AFP - any increase", None, 0.69, 0.70),
    _TestTruth("UFB_AFP", "uFB (AFP)", None, 0.85, 0.90),
    _TestTruth("UFB_DCP", "uFB (DCP)", None, 0.76, 0.90),
)

_PROSTATE_TESTS = (
    _TestTruth("4K", "4K", 20.0, 0.75, 0.72, 1.2, 0.9),
    _TestTruth("PCA3", "PCA3", 35.0, 0.75, 0.47, 1.3, 1.1),
    _TestTruth("PHI", "PHI", 35.0, 0.86, 0.49, 1.0, 0.8),
    _TestTruth("SELECTMDX", "SelectMDx", None, 0.55, 0.76),
)

_RECOVERY_TESTS = (
    _TestTruth("T1", "T1", 10.0, 0.75, 0.85, 1.0, 0.8),
    _TestTruth("T2", "T2", 50.0, 0.60, 0.90, 0.7, 1.2),
    _TestTruth("T3", "T3", 5.0, 0.85, 0.70, 1.3, 1.0),
)


def _descriptors(truths) -> list[TestDescriptor]:
    return [TestDescriptor(t.test_id, t.name, TestKind.BINARY if t.c_star is None else TestKind.CONTINUOUS, t.c_star)
            for t in truths]


def _rows(study: str, test: _TestTruth, thresholds, rng) -> list[DesignRow]:
    th = (None,) if test.c_star is None else tuple(sorted(float(c) for c in thresholds))
    n1 = int(rng.integers(25, 200))
    n0 = int(rng.integers(60, 500))
    return [DesignRow(study, test.test_id, DiseaseGroup.DISEASED, th, n1),
            DesignRow(study, test.test_id, DiseaseGroup.NONDISEASED, th, n0)]


def _truth_state(model: Model, truths, rng, *, tau_m=0.5, tau_s=0.15, study_sd=0.4, study_corr=-0.3):
    """Fixed effects from the target accuracies, random effects drawn under the model."""
    st = model.new_state()
    by_id = {t.test_id: t for t in truths}
    for k, tid in enumerate(model.test_ids):
        t = by_id[tid]
        st.fixed[k, 0] = logit(t.sens)
        st.fixed[k, 1] = logit(1.0 - t.spec)
        if t.c_star is not None:
            st.fixed[k, 2] = math.log(t.sigma1)
            st.fixed[k, 3] = math.log(t.sigma0)
    st.tau[:, :2] = tau_m
    st.tau[:, 2:] = tau_s
    for b, block in enumerate(model.blocks):
        cov = np.eye(block.dim) * study_sd ** 2
        if block.dim >= 2 and tuple(block.coords[:2]) == (0, 1):
            cov[0, 1] = cov[1, 0] = study_corr * study_sd ** 2
        if tuple(block.coords) == (2, 3):
            cov = np.eye(2) * tau_s ** 2
        elif block.dim == 4:
            cov[2:, 2:] = np.eye(2) * tau_s ** 2
        st.chol[b] = np.linalg.cholesky(cov)
    st.hyper_mean[:] = math.log(tau_m)
    st.hyper_sd[:] = 0.3
    return model.draw_random_effects(st, rng)


def _simulate(tests, design, truths, spec, seed) -> SyntheticNetwork:
    skeleton = design_dataset(tests, design)
    model = Model(skeleton, spec, check=False)
    rng = np.random.default_rng([seed, 1])
    truth = _truth_state(model, truths, rng)
    data = simulate_dataset(spec, truth, rng_seed=int(np.random.SeedSequence([seed, 2]).generate_state(1)[0]))
    return SyntheticNetwork(data, truth, spec)


def _afp_thresholds(rng, n_afp_studies: int, no_ref: set[int]) -> list[list[float]]:
    """AFP threshold lists: 157 distinct values, one study with 48, 20 ng/mL most common."""
    common = [10.0, 20.0, 50.0, 100.0, 200.0, 400.0]
    extra = set()
    while len(extra) < 157 - len(common):
        v = round(float(np.exp(rng.uniform(math.log(1.5), math.log(1000.0)))), 1)
        if v not in common:
            extra.add(v)
    pool = sorted(extra)
    rng.shuffle(pool)
    sizes = []
    for i in range(n_afp_studies):
        u = rng.random()
        sizes.append(48 if i == 0 else 1 if u < 0.45 else int(rng.integers(2, 4)) if u < 0.85 else int(rng.integers(4, 11)))
    lists: list[set] = []
    for i, size in enumerate(sizes):
        chosen = set()
        if i not in no_ref and (i == 0 or rng.random() < 0.75):
            chosen.add(20.0)
        others = [c for c in common if c != 20.0]
        while len(chosen) < min(size, 3) and len(chosen) < size:
            chosen.add(float(rng.choice(others)))
        lists.append(chosen)
    # every pool value is used at least once, filling studies up to their size
    cursor = 0
    for i, size in enumerate(sizes):
        while len(lists[i]) < size and cursor < len(pool):
            lists[i].add(pool[cursor])
            cursor += 1
    while cursor < len(pool):
        i = int(rng.integers(1, n_afp_studies))
        if len(lists[i]) < 10:
            lists[i].add(pool[cursor])
            cursor += 1
    return [sorted(s) for s in lists]


def hcc_like(seed: int = 2025) -> SyntheticNetwork:
    rng = np.random.default_rng([seed, 0])
    truths = {t.test_id: t for t in _HCC_TESTS}
    tests = _descriptors(_HCC_TESTS)
    studies = [f"H{i:03d}" for i in range(1, 131)]
    members: dict[str, list[str]] = {s: [] for s in studies}
    imaging = ["US", "CE_MRI", "CT"]
    # imaging comparisons
    for s in studies[:30]:
        k = int(rng.integers(1, 3))
        members[s].extend(str(t) for t in rng.choice(imaging, size=k, replace=False))
        if rng.random() < 0.4:
            members[s].append("AFP")
    for s in studies[:3]:
        members[s] = sorted(set(members[s]) | {"US", "CEUS"})
    for s in studies[3:6]:
        members[s] = sorted(set(members[s]) | {"CE_MRI", "NC_MRI"})
    # biomarker studies, all with AFP
    for s in studies[30:]:
        members[s].append("AFP")
        for tid, p in (("AFP_L3", 0.12), ("DCP_MAU", 0.15), ("DCP_NG", 0.06), ("GALAD", 0.05), ("US", 0.05)):
            if rng.random() < p:
                members[s].append(tid)
    few = {"DOYLESTOWN": 3, "HES": 2, "MODEL2": 4, "SAFP1": 2}
    single = ["AFP_RATE", "CAFPI", "MODEL1", "HCC_ART", "LGALAD", "MFB_I", "MFB_J", "MODEL3",
              "PEB_AFP", "PEB_DCP", "PM_DL", "SAFP2", "UFB_AFP", "UFB_DCP"]
    slot = 31
    no_ref_studies = set()
    for tid in single:
        members[studies[slot]].append(tid)
        no_ref_studies.add(studies[slot])
        slot += 1
    for tid, n in few.items():
        for _ in range(n):
            members[studies[slot]].append(tid)
            slot += 1
    for s in ("GALAD", "DCP_NG", "AFP_L3", "DCP_MAU"):
        while sum(s in m for m in members.values()) < 3:
            members[studies[int(rng.integers(30, 130))]].append(s)
    afp_studies = [s for s in studies if "AFP" in members[s]]
    # the 48-threshold study must report 20 ng/mL
    order = [s for s in afp_studies if s not in no_ref_studies]
    order = order[:1] + [s for s in afp_studies if s != order[0]]
    afp_lists = _afp_thresholds(rng, len(order), {i for i, s in enumerate(order) if s in no_ref_studies})
    afp_thresholds = dict(zip(order, afp_lists))
    ref_choices = {
        "AFP_L3": ([10.0], [5.0, 10.0, 15.0, 7.0]),
        "DCP_MAU": ([40.0], [40.0, 100.0, 150.0, 60.0]),
        "DCP_NG": ([7.5], [7.5, 5.0, 10.0]),
    }
    design = []
    for s in studies:
        for tid in dict.fromkeys(members[s]):
            t = truths[tid]
            if tid == "AFP":
                th = afp_thresholds[s]
            elif tid in ref_choices:
                base, opts = ref_choices[tid]
                extra = [float(c) for c in rng.choice(opts, size=int(rng.integers(0, 3)), replace=False)]
                th = sorted(set(base + extra) if rng.random() < 0.8 else set(extra or opts[1:2]))
            else:
                th = [None]
            design.extend(_rows(s, t, th, rng))
    spec = ModelSpec(ModelVariant.ANOVA_PLUS, CovarianceStructure.REDUCED2)
    return _simulate(tests, design, _HCC_TESTS, spec, seed)


def prostate_like(seed: int = 2025) -> SyntheticNetwork:
    rng = np.random.default_rng([seed, 10])
    truths = {t.test_id: t for t in _PROSTATE_TESTS}
    tests = _descriptors(_PROSTATE_TESTS)
    studies = [f"P{i:02d}" for i in range(1, 38)]
    # (tests, thresholds per test); multi-test studies never report every continuous test at its reference
    multi = [
        {"PHI": [35.0, 45.0], "4K": [7.5, 15.0]},
        {"PHI": [25.0, 55.0], "PCA3": [35.0]},
        {"4K": [20.0, 25.0], "PCA3": [25.0, 50.0]},
        {"PHI": [30.0, 40.0], "SELECTMDX": [None]},
        {"PCA3": [20.0, 60.0], "SELECTMDX": [None]},
        {"PHI": [24.0, 27.0, 30.0], "4K": [20.0]},
    ]
    single = (["PHI"] * 14 + ["4K"] * 7 + ["PCA3"] * 6 + ["SELECTMDX"] * 4)
    ref_extra = {"PHI": [25.0, 30.0, 40.0, 45.0, 55.0], "4K": [7.5, 10.0, 15.0, 25.0], "PCA3": [20.0, 25.0, 50.0]}
    design = []
    for s, spec_ in zip(studies, multi):
        for tid, th in spec_.items():
            design.extend(_rows(s, truths[tid], th, rng))
    for s, tid in zip(studies[len(multi):], single):
        t = truths[tid]
        if t.c_star is None:
            th = [None]
        else:
            k = int(rng.integers(0, 4))
            th = sorted({t.c_star, *(float(c) for c in rng.choice(ref_extra[tid], size=k, replace=False))})
        design.extend(_rows(s, t, th, rng))
    spec = ModelSpec(ModelVariant.META_REGRESSION, CovarianceStructure.FULL4)
    return _simulate(tests, design, _PROSTATE_TESTS, spec, seed)


def recovery(seed: int = 0, n_studies: int = 20) -> SyntheticNetwork:
    """Every study evaluates the three continuous tests at three thresholds, simulated under ANOVA."""
    rng = np.random.default_rng([seed, 20])
    tests = _descriptors(_RECOVERY_TESTS)
    design = []
    for i in range(n_studies):
        for t in _RECOVERY_TESTS:
            offsets = rng.choice([-0.8, -0.4, 0.4, 0.8], size=2, replace=False)
            th = [t.c_star] + [round(float(t.c_star * math.exp(o)), 6) for o in offsets]
            design.extend(_rows(f"R{i:02d}", t, th, rng))
    spec = ModelSpec(ModelVariant.ANOVA, CovarianceStructure.REDUCED2)
    return _simulate(tests, design, _RECOVERY_TESTS, spec, seed)


NETWORKS = {"hcc_like": hcc_like, "prostate_like": prostate_like, "recovery": recovery}


def generate(name: str, seed: int) -> SyntheticNetwork:
    if name not in NETWORKS:
        raise KeyError(f"unknown network {name!r}; choose from {sorted(NETWORKS)}")
    return NETWORKS[name](seed)
