"""Patch-based sparse classification and anomaly screening for sonar-style imagery."""

from .anomaly_detector import (
    KsDecision,
    ReferenceDistribution,
    detect_anomaly,
    ks_critical,
    ks_statistic,
)
from .dict_learn import (
    CodeMatrix,
    DfdlConfig,
    dfdl_objective,
    learn_dictionary,
    load_dictionary,
    save_dictionary,
    sparse_code_omp,
)
from .patch_sampler import (
    Image,
    PatchConfig,
    PatchSet,
    build_dictionary,
    intensity_mask,
    load_image,
    sample_patches,
    save_image,
)
from .pcs_classifier import (
    CvConfig,
    EvalReport,
    LikelihoodRecord,
    PcsModel,
    build_src_baseline,
    classify_patch_set,
    cross_validate,
    evaluate,
    evaluate_src,
    load_model,
    residual_affinity,
    save_model,
    src_classify,
)
from .sas_synth import (
    DatasetManifest,
    NoiseSpec,
    SceneSpec,
    apply_rayleigh_noise,
    generate_dataset,
    render_scene,
)
from .sparse_solver import (
    Dictionary,
    ProbabilisticPrior,
    SolverOptions,
    SparseSolution,
    SpikeSlabParams,
    brute_force_oracle,
    map_prior_to_penalties,
    objective_value,
    solve_l1,
    solve_spike_slab,
)

__version__ = "0.1.0"
