"""Small synthetic networks and dataset builders shared by the test modules."""
import math

import numpy as np

from nmadta.dataset import DiseaseGroup, TestDescriptor, TestKind
from nmadta.model import CovarianceStructure, Model, ModelSpec, ModelVariant
from nmadta.simulate import DesignRow, design_dataset, simulate_dataset

HEADER = "study_id,test_id,test_kind,group,threshold,positives,group_size\n"


def csv_rows(rows) -> str:
    """rows: (study, test, kind, group, threshold, positives, size) tuples."""
    return HEADER + "".join(",".join(str(v) for v in r) + "\n" for r in rows)


def binary_pair(study, test, tp, n1, fp, n0):
    return [(study, test, "binary", "diseased", "NA", tp, n1),
            (study, test, "binary", "nondiseased", "NA", fp, n0)]


def binary_network(seed: int = 0, n_studies: int = 8, spec: ModelSpec | None = None):
    """All-binary network of three tests; every study evaluates two or three of them."""
    rng = np.random.default_rng(seed)
    tests = [TestDescriptor(t, t, TestKind.BINARY, None) for t in ("A", "B", "C")]
    design = []
    for i in range(n_studies):
        chosen = ("A", "B", "C") if i % 3 == 0 else (("A", "B") if i % 3 == 1 else ("B", "C"))
        for t in chosen:
            design.append(DesignRow(f"S{i:02d}", t, DiseaseGroup.DISEASED, (None,), int(rng.integers(30, 120))))
            design.append(DesignRow(f"S{i:02d}", t, DiseaseGroup.NONDISEASED, (None,), int(rng.integers(60, 300))))
    spec = spec or ModelSpec(ModelVariant.META_REGRESSION, CovarianceStructure.REDUCED2)
    model = Model(design_dataset(tests, design), spec, check=False)
    st = model.new_state()
    st.fixed[:, 0] = [1.0, 0.4, 1.6]
    st.fixed[:, 1] = [-2.0, -1.2, -1.6]
    for b in range(len(model.blocks)):
        st.chol[b] = np.linalg.cholesky(np.array([[0.25, -0.05], [-0.05, 0.16]]))
    st.tau[:] = 0.3
    st = model.draw_random_effects(st, rng)
    return simulate_dataset(spec, st, rng_seed=seed + 1)


def continuous_network(seed: int = 0, n_studies: int = 6):
    """Two continuous tests at two or three thresholds plus one binary test."""
    rng = np.random.default_rng(seed)
    tests = [TestDescriptor("X", "X", TestKind.CONTINUOUS, 10.0),
             TestDescriptor("Y", "Y", TestKind.CONTINUOUS, 5.0),
             TestDescriptor("Z", "Z", TestKind.BINARY, None)]
    design = []
    for i in range(n_studies):
        s = f"S{i:02d}"
        for tid, cs in (("X", 10.0), ("Y", 5.0)):
            th = tuple(sorted({cs, round(cs * math.exp(rng.choice([-0.5, 0.5, 1.0])), 6)}))
            for g in DiseaseGroup:
                design.append(DesignRow(s, tid, g, th, int(rng.integers(40, 150))))
        if i % 2 == 0:
            for g in DiseaseGroup:
                design.append(DesignRow(s, "Z", g, (None,), int(rng.integers(40, 150))))
    spec = ModelSpec(ModelVariant.META_REGRESSION, CovarianceStructure.FULL4)
    model = Model(design_dataset(tests, design), spec, check=False)
    st = model.new_state()
    st.fixed[:, 0] = [0.8, 1.2, 0.5]
    st.fixed[:, 1] = [-1.5, -1.0, -2.0]
    st.fixed[:2, 2:] = [[0.1, -0.2], [0.0, 0.2]]
    st.chol[0] = np.linalg.cholesky(np.diag([0.2, 0.2, 0.02, 0.02]))
    st = model.draw_random_effects(st, rng)
    return simulate_dataset(spec, st, rng_seed=seed + 1)


ALL_SPECS = [ModelSpec(v, c, wishart_convention=w)
             for v in ModelVariant for c in CovarianceStructure
             for w in ("precision", "covariance")]


def matrix_fixtures() -> dict:
    """Networks exercising the two structural requirements of the four variants.

    ``disconnected``: two tests never co-evaluated, each in two studies.
    ``one_study``: connected network in which test C appears in a single study.
    """
    disconnected = (binary_pair("S1", "A", 40, 50, 5, 60) + binary_pair("S2", "A", 35, 50, 8, 60)
                    + binary_pair("S3", "B", 30, 50, 10, 60) + binary_pair("S4", "B", 25, 50, 12, 60))
    one_study = (binary_pair("S1", "A", 40, 50, 5, 60) + binary_pair("S1", "B", 30, 50, 10, 60)
                 + binary_pair("S2", "A", 35, 50, 8, 60) + binary_pair("S2", "B", 25, 50, 12, 60)
                 + binary_pair("S2", "C", 20, 50, 6, 60))
    return {"disconnected": csv_rows(disconnected), "one_study": csv_rows(one_study)}


# (fixture, variant) -> accepted, as documented for each model variant
MATRIX_EXPECTED = {
    ("disconnected", "independent"): True,
    ("disconnected", "meta_regression"): True,
    ("disconnected", "anova"): False,
    ("disconnected", "anova_plus"): False,
    ("one_study", "independent"): False,
    ("one_study", "meta_regression"): True,
    ("one_study", "anova"): False,
    ("one_study", "anova_plus"): True,
}


# criterion number -> (passed, detail); filled by test_acceptance, printed at the end of the session
ACCEPTANCE: dict = {}
