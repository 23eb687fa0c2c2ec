use fhnlab::model::{Kernel, ModelParams, SpatialField};
use fhnlab::particles::{empirical_moments, ParticleSystem};

fn system(eps: f64, nodes: usize) -> ParticleSystem {
    let rho = SpatialField::constant(nodes, 1.0).unwrap();
    ParticleSystem::new(ModelParams::fitzhugh_nagumo(eps).unwrap(), &rho, &Kernel::exponential(1.0, 1.0)).unwrap()
}

fn field(n: usize, x: f64) -> SpatialField {
    SpatialField::constant(n, x).unwrap()
}

#[test]
fn same_seed_same_trajectory() {
    let sys = system(0.05, 4);
    let run = |seed| {
        let mut ens = sys.init_ensemble(400, &field(4, 1.0), &field(4, 0.2), 0.5, seed).unwrap();
        sys.run(&mut ens, 0.2, 1e-3, 0.1, 2.0).unwrap();
        ens.neurons.iter().map(|n| (n.v.to_bits(), n.w.to_bits())).collect::<Vec<_>>()
    };
    assert_eq!(run(11), run(11));
    assert_ne!(run(11), run(12));
}

#[test]
fn gaussian_cloud_dispersion_concentrates() {
    // v ~ N(V0, eps / rho0): D_2 estimates eps within chi-square fluctuations.
    let eps = 0.05;
    let n = 20_000;
    let sys = system(eps, 1);
    let ens = sys.init_ensemble(n, &field(1, 0.7), &field(1, 0.0), 0.5, 5).unwrap();
    let m = empirical_moments(&sys, &ens, 2.0).unwrap();
    let tol = 3.0 * eps * (2.0 / n as f64).sqrt();
    assert!((m[0].d_q - eps).abs() <= tol, "D2 {} vs {eps} (tol {tol})", m[0].d_q);
}
