"""State-transition diffusion imputation for control-driven time series."""

from ._stdiff import (
    Checkpoint,
    LedgerEntry,
    MaskResult,
    ModelDims,
    NoiseSchedule,
    ScheduleConfig,
    StdiffError,
    TimeSeriesTable,
    TrainConfig,
    TrainResult,
    apply_baseline,
    fill_kalman,
    fill_linear,
    fill_locf,
    forward_noise,
    generate_block_masks,
    impute,
    load_checkpoint,
    load_csv,
    masked_mae_rmse,
    missing_rates,
    noise_prediction_loss,
    reverse_step,
    save_checkpoint,
    save_csv,
    simulate_nonlinear_plant,
    simulate_scalar_plant,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
