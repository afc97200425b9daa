"""Low-field MRI simulation and GAN-based restoration at desk scale.

Pipeline: degrade clean volumes into simulated low-field scans
(resampling + SNR-calibrated Rician noise), train an unpaired Cycle-GAN
restorer and a paired denoising-autoencoder baseline, then evaluate and
compare both with SSIM/PSNR cohort reports.
"""

from .degrade import SimulationParams, calibrate_sigma, resample, rician_noise, simulate_lowfield
from .metrics import MetricsRecord, SSIMParams, evaluate_cohort, mse, psnr, ssim
from .nets import (
    DAEConfig,
    DiscriminatorConfig,
    GeneratorConfig,
    build_dae,
    build_discriminator,
    build_generator,
    count_parameters,
)
from .report import ComparisonSummary, compare_models, difference_map, histogram_report, panel_figure
from .train import TrainConfig, TrainHistory, train_cyclegan, train_dae, restore_volume
from .volume import PhantomSpec, Volume, load_volume, make_phantom, normalize_intensity, save_volume

__version__ = "0.1.0"
