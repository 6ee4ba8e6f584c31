//! The numerical kernels on a small filtering problem: a stabilizing CARE
//! solution, the stationary covariance from a Lyapunov solve, and its
//! propagation with the matrix exponential.

use robust_smoother::numkernel::{self, Mat, RiccatiProblem};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // second-order oscillator observed in white noise
    let a = Mat::from_row_slice(2, 2, &[0.0, 1.0, -4.0, -0.4]);
    let b = Mat::from_row_slice(2, 1, &[0.0, 1.0]);
    let c = Mat::from_row_slice(1, 2, &[1.0, 0.0]);
    let r = 0.01;

    // Y Aᵀ + A Y − Y Cᵀ C Y / r + B Bᵀ = 0 in the generic form X A' + A'ᵀ X + X S X + Q = 0
    let prob = RiccatiProblem::new(a.transpose(), &b * b.transpose(), -(c.transpose() * &c) / r)?;
    let sol = numkernel::solve_care(&prob)?;
    println!("Kalman covariance Y = {}relative residual {:.2e}, stabilizing {}", sol.x, sol.relative_residual, sol.stabilizing);

    let gain = &sol.x * c.transpose() / r;
    let closed = &a - &gain * &c;
    println!("filter poles {:?}", numkernel::eigenvalues(&closed));

    let noise = &b * b.transpose() + &gain * gain.transpose() * r;
    let lyap = numkernel::solve_lyapunov(&closed, &noise)?;
    println!("error covariance P = {}residual {:.2e}", lyap.p, lyap.residual);

    for t in [0.1, 0.5, 2.0] {
        let phi = numkernel::expm(&closed, t);
        println!("corr(e(t), e(0)) at t = {t}: {:.5}", (&phi * &lyap.p)[(0, 0)] / lyap.p[(0, 0)]);
    }
    Ok(())
}
