"""Services package for the EnvCF toolkit."""

from .seeding import derive_seed

from .grid import (
    make_grid,
    gain_to_gray,
    gray_to_gain,
    compose_envcf,
    decompose_envcf,
    downsample,
)

from .synth import (
    EnvCFPair,
    SyntheticDataset,
    fspl_db,
    split_indices,
    rasterize_buildings,
    gen_city,
    count_walls,
    simulate_gain,
    make_pair,
    gen_dataset,
)

from .schedule import (
    Schedule,
    linear_schedule,
    q_sample,
    chain_step,
)

from .denoiser import (
    ConditionalUNet,
    Batch,
    LossResult,
    GradResult,
    TrainState,
    time_embed,
    param_count,
    init_params,
    upsample_condition,
    forward,
    loss,
    grad,
    adam_step,
    ema_update,
)

from .storage import (
    RunManifest,
    LossLog,
    write_envcf,
    read_envcf,
    save_dataset,
    load_dataset,
    save_checkpoint,
    load_checkpoint,
    load_model,
    run_manifest,
    read_manifest,
)

from .trainer import TrainResult, PlateauDetector, train

from .sampler import predict_x0, ddpm_step, sample, sample_batch

from .baselines import (
    METHODS,
    ExponentialVariogram,
    KrigingDiagnostics,
    RbfDiagnostics,
    nearest_upsample,
    bilinear_upsample,
    empirical_variogram,
    fit_variogram,
    ordinary_kriging_weights,
    ordinary_kriging,
    kriging_interpolate,
    kriging_upsample,
    rbf_condition,
    rbf_interpolate,
    rbf_upsample,
    upsample,
)

from .metrics import (
    PSNR_CAP_DB,
    REPORTED_ROWS,
    PairScore,
    MethodScore,
    EvaluationReport,
    psnr,
    ssim,
    nmse,
    score_pair,
    evaluate,
    write_report,
)

from .pipeline import (
    ALL_METHODS,
    configure_determinism,
    run_gen_data,
    run_degrade,
    run_train,
    run_sample,
    run_baseline,
    run_eval,
    run_bench,
    pipeline_smoke,
)

__all__ = [
    # Seeding
    "derive_seed",
    # Grid and rasters
    "make_grid",
    "gain_to_gray",
    "gray_to_gain",
    "compose_envcf",
    "decompose_envcf",
    "downsample",
    # Synthetic data
    "EnvCFPair",
    "SyntheticDataset",
    "fspl_db",
    "split_indices",
    "rasterize_buildings",
    "gen_city",
    "count_walls",
    "simulate_gain",
    "make_pair",
    "gen_dataset",
    # Diffusion schedule
    "Schedule",
    "linear_schedule",
    "q_sample",
    "chain_step",
    # Denoiser
    "ConditionalUNet",
    "Batch",
    "LossResult",
    "GradResult",
    "TrainState",
    "time_embed",
    "param_count",
    "init_params",
    "upsample_condition",
    "forward",
    "loss",
    "grad",
    "adam_step",
    "ema_update",
    # Persistence
    "RunManifest",
    "LossLog",
    "write_envcf",
    "read_envcf",
    "save_dataset",
    "load_dataset",
    "save_checkpoint",
    "load_checkpoint",
    "load_model",
    "run_manifest",
    "read_manifest",
    # Training and sampling
    "TrainResult",
    "PlateauDetector",
    "train",
    "predict_x0",
    "ddpm_step",
    "sample",
    "sample_batch",
    # Baselines
    "METHODS",
    "ExponentialVariogram",
    "KrigingDiagnostics",
    "RbfDiagnostics",
    "nearest_upsample",
    "bilinear_upsample",
    "empirical_variogram",
    "fit_variogram",
    "ordinary_kriging_weights",
    "ordinary_kriging",
    "kriging_interpolate",
    "kriging_upsample",
    "rbf_condition",
    "rbf_interpolate",
    "rbf_upsample",
    "upsample",
    # Metrics
    "PSNR_CAP_DB",
    "REPORTED_ROWS",
    "PairScore",
    "MethodScore",
    "EvaluationReport",
    "psnr",
    "ssim",
    "nmse",
    "score_pair",
    "evaluate",
    "write_report",
    # Pipelines
    "ALL_METHODS",
    "configure_determinism",
    "run_gen_data",
    "run_degrade",
    "run_train",
    "run_sample",
    "run_baseline",
    "run_eval",
    "run_bench",
    "pipeline_smoke",
]
