//! A plant given as explicit matrices in a TOML configuration: a lightly
//! damped second-order process with an uncertain noise channel, smoothed over
//! a 50 ms lag.

use robust_smoother::cli::{design, Config};
use robust_smoother::covariance::{build_closed_loop, smoothed_error_covariance, structured_delta};

const CONFIG: &str = r#"
seed = 7

[plant]
a = [[0.0, 1.0], [-25.0, -2.0]]
b1 = [[0.0, 0.0], [1.0, 0.0]]
c0 = [[1.0, 0.0]]
c2 = [[1.0, 0.0]]
d21 = [[0.0, 0.05]]

# the process noise enters through an uncertain channel
[[plant.channels]]
b1 = [[0.0], [1.0]]
c1 = [[0.2, 0.0]]
d21 = [[0.0]]

# sensor noise, with no uncertainty output
[[plant.channels]]
b1 = [[0.0], [0.0]]
c1 = [[0.0, 0.0]]
d21 = [[0.05]]

[delay]
realization = "balanced"
order = 3
delta = 0.05

[synthesis]
tau = 1.0
optimize = true

[synthesis.search]
starts = 4
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = Config::from_toml(CONFIG)?;
    let problem = cfg.problem()?;
    println!("compact dims {:?}", problem.compact.dims);
    let d = design(&cfg, &problem)?;
    let s = &d.solution;
    println!("V = {:.5} at tau = {:.4e}, lambda = {:?}", s.vtau, s.point.tau, s.point.lambda);
    for d1 in [0.0, -1.0, 1.0] {
        let cl = build_closed_loop(&problem.compact, s, &structured_delta(&problem.compact, d1, 0.0))?;
        let rep = smoothed_error_covariance(&cl, cfg.delay.delta)?;
        println!("delta1 = {d1:+}: smoothed {:.5}, filtered {:.5}", rep.psa_scalar(), rep.pf_scalar());
    }
    Ok(())
}
