//! The generic core in `f32`, checked against the `f64` results.

use stratcomm::dsbs_analytic::dsbs_solve;
use stratcomm::info_measures::channel_capacity;
use stratcomm::problem_model::{dsbs_to_problem, Channel, DsbsParams};
use stratcomm::splitting_solver::{solve_splitting, GridConfig};
use stratcomm::{Problem32, Real};

#[test]
fn closed_form_in_f32() {
    let s = dsbs_solve(&DsbsParams::<f32>::symmetric(0.5, 0.3, 0.0, 0.4).unwrap()).unwrap();
    assert!((s.value.to_f64_lossy() - 0.121_161).abs() < 1e-4);
}

#[test]
fn grid_solver_in_f32() {
    let params = DsbsParams::<f64>::symmetric(0.5, 0.3, 0.0, 0.0).unwrap();
    let p64 = dsbs_to_problem(&params, None).unwrap();
    let p32: Problem32 = p64.cast();
    let cfg = GridConfig::with_step(1e-2);
    let a = solve_splitting(&p64, 0.4, &cfg).unwrap().value;
    let b = solve_splitting(&p32, 0.4f32, &cfg).unwrap().value;
    assert!((a - f64::from(b)).abs() < 1e-4, "{a} vs {b}");
}

#[test]
fn capacity_in_f32() {
    let ch = Channel::<f32>::bsc(0.1).unwrap();
    let c = channel_capacity(ch.rows(), 1e-6, 10_000).unwrap();
    assert!((c.capacity - 0.531_004).abs() < 1e-5);
}
