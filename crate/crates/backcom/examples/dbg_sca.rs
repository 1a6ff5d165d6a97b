use backcom::beamforming::*;
use backcom::channel::{generate_channels, GeometryConfig};
use backcom::config::SystemConfig;
use backcom::solver::hermitian;
use nalgebra::DMatrix;
use num_complex::Complex64;

fn main() {
    let cfg = SystemConfig {
        n_bds: 2,
        n_tx_antennas: 2,
        n_rx_antennas: 2,
        r_min: 0.0,
        e_source: 0.5,
        ..SystemConfig::default()
    };
    let ch = generate_channels(&cfg, &GeometryConfig::default(), 13);
    let t = vec![0.5, 0.5];
    let alpha = vec![0.5, 0.5];
    let prob = BeamformingProblem::new(&ch, &cfg, t, alpha, 0.0);
    let m = 2;
    let init: Vec<DMatrix<Complex64>> = (0..2)
        .map(|k| {
            let h = &ch.forward[k];
            let u = h / Complex64::new(h.norm(), 0.0);
            let outer = &u * u.adjoint();
            let eye = DMatrix::from_diagonal_element(m, m, Complex64::new(1.0, 0.0));
            hermitian::symmetrize(
                &((outer * Complex64::new(0.999, 0.0) + eye * Complex64::new(0.0005, 0.0))
                    * Complex64::new(0.2, 0.0)),
            )
        })
        .collect();
    println!("init objective: {}", prob.true_objective(&init));
    let counted = dbg_counted(&prob, &init);
    let state = ScaState::at_incumbent(&prob, init.clone());
    match solve_sdp_iteration(&prob, &state, &counted) {
        Ok(it) => {
            println!(
                "iterate surrogate {} true {} kkt {:.2e}",
                it.objective,
                prob.true_objective(&it.w),
                it.kkt_residual
            );
            for k in 0..2 {
                let tx: f64 = it.w[k].diagonal().iter().map(|z| z.re).sum();
                println!(" W{k}: tx {tx}");
            }
        }
        Err(e) => println!("iterate error: {e}"),
    }
    match run_sca(&prob, &init, &counted) {
        Ok(out) => {
            println!("history: {:?}", out.state.objective_history);
            let spent: f64 = (0..2)
                .map(|k| 0.5 * out.w[k].diagonal().iter().map(|z| z.re).sum::<f64>())
                .sum();
            println!("spent {spent}");
        }
        Err(e) => println!("sca error: {e}"),
    }
}

fn dbg_counted(prob: &BeamformingProblem, w: &[DMatrix<Complex64>]) -> BeamHarvestSet {
    // Re-derive via public API.
    BeamHarvestSet::from_warm(prob, w)
}
