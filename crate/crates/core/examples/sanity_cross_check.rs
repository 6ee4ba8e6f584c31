//! Analytic smoothing covariance against Monte Carlo on the linear scalar check model.
use robust_smoother::sim::{monte_carlo, EstimatorMode, SanityModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let runs = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(10_000);
    let seed = std::env::args().nth(2).map(|s| s.parse()).transpose()?.unwrap_or(42);
    let mut model = SanityModel::new(runs, seed)?;
    let analytic = model.analytic()?;
    println!("analytic Psa = {:.6}  Pf = {:.6}", analytic.psa_scalar(), analytic.pf_scalar());
    for mode in [EstimatorMode::RobustSmoother, EstimatorMode::Ngcf] {
        model.config.estimator = mode;
        let mc = monte_carlo(&model.config, &model.gains()?)?;
        let target = if mode == EstimatorMode::Ngcf { analytic.pf_scalar() } else { analytic.psa_scalar() };
        println!(
            "{:?}: empirical {:.6} ± {:.6}  ({:+.2} SE)",
            mode,
            mc.error_covariance,
            mc.standard_error,
            (mc.error_covariance - target) / mc.standard_error
        );
    }
    Ok(())
}
