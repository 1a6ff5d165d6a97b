use backcom::solver::hermitian;
use backcom::solver::ipm::SolverOptions;
use backcom::solver::sdp::{solve_complex_sdp, SdpConstraint, SdpProblem, Sense};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_hermitian(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| {
        Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    });
    hermitian::symmetrize(&(g.clone() + g.adjoint()))
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..50 {
        let dim = 2 + (trial % 4);
        let n_extra = trial % 3;
        let mut constraints = vec![SdpConstraint {
            mats: vec![DMatrix::identity(dim, dim).map(|v| Complex64::new(v, 0.0))],
            scalar_coeffs: vec![],
            rhs: 1.0 + rng.random::<f64>(),
            sense: Sense::LessEq,
            label: "trace".into(),
        }];
        for k in 0..n_extra {
            let g = random_hermitian(dim, &mut rng);
            let a = hermitian::symmetrize(&(&g * &g));
            constraints.push(SdpConstraint {
                mats: vec![a],
                scalar_coeffs: vec![],
                rhs: 0.5 + rng.random::<f64>(),
                sense: Sense::LessEq,
                label: format!("extra {k}"),
            });
        }
        let prob = SdpProblem {
            block_dims: vec![dim],
            num_scalars: 0,
            objective_mats: vec![random_hermitian(dim, &mut rng)],
            objective_scalars: vec![],
            objective_constant: 0.0,
            constraints,
        };
        let sol = solve_complex_sdp(&prob, None, &SolverOptions::default()).unwrap();
        println!(
            "trial {trial}: dim {dim} extra {n_extra} converged {} obj {:.8} gap {:.3e} stat {:.3e}",
            sol.converged, sol.objective, sol.duality_gap, sol.stationarity
        );
    }
}
