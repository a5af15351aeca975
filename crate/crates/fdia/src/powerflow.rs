//! Newton-Raphson AC power flow in polar coordinates, plus the bus-injection
//! and branch-flow evaluations that produce measurement vectors.

use crate::grid::{AdmittanceMatrix, BusKind, Grid};
use crate::{FdiaError, Result};
use num_complex::Complex64;

/// Solved power-flow state.
#[derive(Debug, Clone)]
pub struct PfSolution {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub max_mismatch: f64,
}

/// Bus injections (and optionally branch flows) at a given state.
#[derive(Debug, Clone)]
pub struct Measurements {
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    pub flows: Option<Vec<BranchFlow>>,
}

/// Per in-service branch: complex power entering at each end.
#[derive(Debug, Clone, Copy)]
pub struct BranchFlow {
    pub branch: usize,
    pub p_from: f64,
    pub q_from: f64,
    pub p_to: f64,
    pub q_to: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct PfOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub flat_start: bool,
}

impl Default for PfOptions {
    fn default() -> Self {
        PfOptions {
            tol: 1e-8,
            max_iter: 20,
            flat_start: true,
        }
    }
}

/// Bus power injections from the AC power flow equations, one sparse row
/// traversal per bus.
pub fn compute_injections(
    v: &[f64],
    theta: &[f64],
    ybus: &AdmittanceMatrix,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = ybus.n;
    if v.len() != n || theta.len() != n {
        return Err(FdiaError::Dimension(format!(
            "state vectors ({}, {}) vs ybus size {n}",
            v.len(),
            theta.len()
        )));
    }
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        let mut pi = 0.0;
        let mut qi = 0.0;
        for (j, y) in ybus.matrix.row(i) {
            let tij = theta[i] - theta[j];
            let (s, c) = tij.sin_cos();
            pi += v[i] * v[j] * (y.re * c + y.im * s);
            qi += v[i] * v[j] * (y.re * s - y.im * c);
        }
        p[i] = pi;
        q[i] = qi;
    }
    Ok((p, q))
}

/// Branch flows at a solved state. Handled in complex form with the same
/// tap/shift stamps as the Ybus assembly, which reduces to the textbook
/// scalar formulas for nominal branches.
pub fn compute_branch_flows(solution: &PfSolution, grid: &Grid) -> Result<Vec<BranchFlow>> {
    let vc: Vec<Complex64> = solution
        .v
        .iter()
        .zip(&solution.theta)
        .map(|(&m, &a)| Complex64::from_polar(m, a))
        .collect();
    let mut flows = Vec::new();
    for (idx, br) in grid.branches.iter().enumerate() {
        if !br.in_service {
            continue;
        }
        let y = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let ych = Complex64::new(0.0, br.b_charging / 2.0);
        let t = Complex64::from_polar(br.tap, br.shift);
        let (vf, vt) = (vc[br.from], vc[br.to]);
        let i_from = (y + ych) / (br.tap * br.tap) * vf - y / t.conj() * vt;
        let i_to = (y + ych) * vt - y / t * vf;
        let s_from = vf * i_from.conj();
        let s_to = vt * i_to.conj();
        flows.push(BranchFlow {
            branch: idx,
            p_from: s_from.re,
            q_from: s_from.im,
            p_to: s_to.re,
            q_to: s_to.im,
        });
    }
    Ok(flows)
}

/// Scheduled net injections (generation minus load) per bus.
pub fn scheduled_injections(grid: &Grid) -> (Vec<f64>, Vec<f64>) {
    let n = grid.n();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for bus in &grid.buses {
        p[bus.ordinal] -= bus.p_load;
        q[bus.ordinal] -= bus.q_load;
    }
    for g in grid.gens.iter().filter(|g| g.in_service) {
        p[g.bus] += g.p_gen;
        q[g.bus] += g.q_gen;
    }
    (p, q)
}

/// Voltage setpoint per bus: the first in-service generator's v_set, falling
/// back to the bus's own v_init.
fn voltage_setpoints(grid: &Grid) -> Vec<f64> {
    let mut v: Vec<f64> = grid.buses.iter().map(|b| b.v_init).collect();
    for g in grid.gens.iter().filter(|g| g.in_service) {
        if g.v_set > 0.0 {
            v[g.bus] = g.v_set;
        }
    }
    v
}

/// Full Newton-Raphson: unknowns are theta at PV+PQ buses and V at PQ buses,
/// analytic polar Jacobian, direct linear solve per iteration (dense LU up to
/// 512 buses, sparse elimination above).
pub fn solve_ac_power_flow(
    grid: &Grid,
    ybus: &AdmittanceMatrix,
    options: PfOptions,
) -> Result<PfSolution> {
    grid.validate()?;
    let n = grid.n();
    let setpoints = voltage_setpoints(grid);
    let mut v: Vec<f64> = if options.flat_start {
        grid.buses
            .iter()
            .map(|b| match b.kind {
                BusKind::Pq => 1.0,
                _ => setpoints[b.ordinal],
            })
            .collect()
    } else {
        grid.buses
            .iter()
            .map(|b| match b.kind {
                BusKind::Pq => b.v_init,
                _ => setpoints[b.ordinal],
            })
            .collect()
    };
    let slack_theta = grid.buses[grid.slack_index].theta_init;
    let mut theta: Vec<f64> = if options.flat_start {
        vec![slack_theta; n]
    } else {
        grid.buses.iter().map(|b| b.theta_init).collect()
    };
    theta[grid.slack_index] = slack_theta;

    let (th_pos, v_pos, m) = unknown_layout(grid);

    let (p_sched, q_sched) = scheduled_injections(grid);
    let mut trace = Vec::new();
    for iter in 0..=options.max_iter {
        let f = mismatch(grid, ybus, &v, &theta, &p_sched, &q_sched, &th_pos, &v_pos, m)?;
        let max_mismatch = f.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
        trace.push(max_mismatch);
        if max_mismatch < options.tol {
            return Ok(PfSolution {
                v,
                theta,
                iterations: iter,
                max_mismatch,
            });
        }
        if iter == options.max_iter {
            break;
        }
        let jac = jacobian_triplets(grid, ybus, &v, &theta, &th_pos, &v_pos)?;
        let rhs: Vec<f64> = f.iter().map(|&x| -x).collect();
        let delta = if m <= 512 {
            solve_dense(m, &jac, &rhs).ok_or(FdiaError::SingularJacobian(iter))?
        } else {
            solve_sparse(m, &jac, &rhs).ok_or(FdiaError::SingularJacobian(iter))?
        };
        for b in &grid.buses {
            let i = b.ordinal;
            if th_pos[i] != usize::MAX {
                theta[i] += delta[th_pos[i]];
            }
            if v_pos[i] != usize::MAX {
                v[i] += delta[v_pos[i]];
            }
        }
    }
    Err(FdiaError::Divergence {
        iterations: options.max_iter,
        max_mismatch: *trace.last().unwrap(),
        trace,
    })
}

/// Newton unknown layout for a grid: positions of theta (non-slack buses)
/// and V (PQ buses) in the flat unknown vector, plus its length. Entries
/// for fixed quantities are `usize::MAX`.
pub fn unknown_layout(grid: &Grid) -> (Vec<usize>, Vec<usize>, usize) {
    let n = grid.n();
    let mut th_pos = vec![usize::MAX; n];
    let mut v_pos = vec![usize::MAX; n];
    let mut m = 0;
    for b in &grid.buses {
        if b.kind != BusKind::Slack {
            th_pos[b.ordinal] = m;
            m += 1;
        }
    }
    for b in &grid.buses {
        if b.kind == BusKind::Pq {
            v_pos[b.ordinal] = m;
            m += 1;
        }
    }
    (th_pos, v_pos, m)
}

/// Analytic polar Jacobian at an operating point, as (row, col, value)
/// triplets over [`unknown_layout`]'s ordering. Rows are P mismatches at
/// non-slack buses then Q mismatches at PQ buses.
pub fn power_flow_jacobian(
    grid: &Grid,
    ybus: &AdmittanceMatrix,
    v: &[f64],
    theta: &[f64],
) -> Result<Vec<(usize, usize, f64)>> {
    let (th_pos, v_pos, _) = unknown_layout(grid);
    jacobian_triplets(grid, ybus, v, theta, &th_pos, &v_pos)
}

/// Mismatch vector f = calculated - scheduled at an operating point, over
/// [`unknown_layout`]'s row ordering.
pub fn power_flow_mismatch(
    grid: &Grid,
    ybus: &AdmittanceMatrix,
    v: &[f64],
    theta: &[f64],
) -> Result<Vec<f64>> {
    let (th_pos, v_pos, m) = unknown_layout(grid);
    let (p_sched, q_sched) = scheduled_injections(grid);
    mismatch(grid, ybus, v, theta, &p_sched, &q_sched, &th_pos, &v_pos, m)
}

/// Mismatch vector f = calculated - scheduled over the unknown layout.
#[allow(clippy::too_many_arguments)]
fn mismatch(
    grid: &Grid,
    ybus: &AdmittanceMatrix,
    v: &[f64],
    theta: &[f64],
    p_sched: &[f64],
    q_sched: &[f64],
    th_pos: &[usize],
    v_pos: &[usize],
    m: usize,
) -> Result<Vec<f64>> {
    let (p, q) = compute_injections(v, theta, ybus)?;
    let mut f = vec![0.0; m];
    for b in &grid.buses {
        let i = b.ordinal;
        if th_pos[i] != usize::MAX {
            f[th_pos[i]] = p[i] - p_sched[i];
        }
        if v_pos[i] != usize::MAX {
            f[v_pos[i]] = q[i] - q_sched[i];
        }
    }
    Ok(f)
}

/// Analytic polar Jacobian as (row, col, value) triplets over the unknown
/// layout shared with `mismatch`.
fn jacobian_triplets(
    grid: &Grid,
    ybus: &AdmittanceMatrix,
    v: &[f64],
    theta: &[f64],
    th_pos: &[usize],
    v_pos: &[usize],
) -> Result<Vec<(usize, usize, f64)>> {
    let (p, q) = compute_injections(v, theta, ybus)?;
    let mut triplets = Vec::new();
    for b in &grid.buses {
        let i = b.ordinal;
        let rp = th_pos[i]; // P-mismatch row (non-slack)
        let rq = v_pos[i]; // Q-mismatch row (PQ)
        if rp == usize::MAX && rq == usize::MAX {
            continue;
        }
        for (j, y) in ybus.matrix.row(i) {
            let (g, bb) = (y.re, y.im);
            if j == i {
                if rp != usize::MAX {
                    triplets.push((rp, th_pos[i], -q[i] - bb * v[i] * v[i]));
                    if v_pos[i] != usize::MAX {
                        triplets.push((rp, v_pos[i], p[i] / v[i] + g * v[i]));
                    }
                }
                if rq != usize::MAX {
                    triplets.push((rq, th_pos[i], p[i] - g * v[i] * v[i]));
                    triplets.push((rq, v_pos[i], q[i] / v[i] - bb * v[i]));
                }
            } else {
                let tij = theta[i] - theta[j];
                let (s, c) = tij.sin_cos();
                let dp_dth = v[i] * v[j] * (g * s - bb * c);
                let dq_dth = -v[i] * v[j] * (g * c + bb * s);
                let dp_dv = v[i] * (g * c + bb * s);
                let dq_dv = v[i] * (g * s - bb * c);
                if rp != usize::MAX {
                    if th_pos[j] != usize::MAX {
                        triplets.push((rp, th_pos[j], dp_dth));
                    }
                    if v_pos[j] != usize::MAX {
                        triplets.push((rp, v_pos[j], dp_dv));
                    }
                }
                if rq != usize::MAX {
                    if th_pos[j] != usize::MAX {
                        triplets.push((rq, th_pos[j], dq_dth));
                    }
                    if v_pos[j] != usize::MAX {
                        triplets.push((rq, v_pos[j], dq_dv));
                    }
                }
            }
        }
    }
    Ok(triplets)
}

fn solve_dense(m: usize, triplets: &[(usize, usize, f64)], rhs: &[f64]) -> Option<Vec<f64>> {
    let mut a = nalgebra::DMatrix::<f64>::zeros(m, m);
    for &(r, c, v) in triplets {
        a[(r, c)] += v;
    }
    let b = nalgebra::DVector::from_column_slice(rhs);
    let lu = a.lu();
    lu.solve(&b).map(|x| x.iter().copied().collect())
}

/// Sparse Gaussian elimination with diagonal pivoting on sorted row vectors.
/// Used above the dense cutoff; verified against the dense path in tests.
fn solve_sparse(m: usize, triplets: &[(usize, usize, f64)], rhs: &[f64]) -> Option<Vec<f64>> {
    use std::collections::BTreeMap;
    let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); m];
    for &(r, c, v) in triplets {
        *rows[r].entry(c).or_insert(0.0) += v;
    }
    let mut b = rhs.to_vec();
    // column -> rows with a (possibly stale) entry in that column
    let mut col_rows: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (r, row) in rows.iter().enumerate() {
        for &c in row.keys() {
            col_rows[c].push(r);
        }
    }
    for k in 0..m {
        let pivot = *rows[k].get(&k)?;
        if pivot.abs() < 1e-14 {
            return None;
        }
        let candidates = std::mem::take(&mut col_rows[k]);
        for r in candidates {
            if r <= k {
                continue;
            }
            let Some(&akr) = rows[r].get(&k) else { continue };
            let factor = akr / pivot;
            rows[r].remove(&k);
            let updates: Vec<(usize, f64)> = rows[k]
                .range((k + 1)..)
                .map(|(&c, &v)| (c, v))
                .collect();
            for (c, v) in updates {
                let entry = rows[r].entry(c).or_insert_with(|| {
                    col_rows[c].push(r);
                    0.0
                });
                *entry -= factor * v;
            }
            b[r] -= factor * b[k];
        }
    }
    // back substitution
    let mut x = vec![0.0; m];
    for k in (0..m).rev() {
        let mut acc = b[k];
        for (&c, &v) in rows[k].range((k + 1)..) {
            acc -= v * x[c];
        }
        x[k] = acc / rows[k][&k];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_ybus, Branch, Bus, Gen};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_bus_loaded(p_load: f64, q_load: f64) -> Grid {
        Grid {
            base_mva: 100.0,
            buses: vec![
                Bus {
                    ordinal: 0,
                    kind: BusKind::Slack,
                    p_load: 0.0,
                    q_load: 0.0,
                    g_shunt: 0.0,
                    b_shunt: 0.0,
                    v_init: 1.0,
                    theta_init: 0.0,
                },
                Bus {
                    ordinal: 1,
                    kind: BusKind::Pq,
                    p_load,
                    q_load,
                    g_shunt: 0.0,
                    b_shunt: 0.0,
                    v_init: 1.0,
                    theta_init: 0.0,
                },
            ],
            branches: vec![Branch {
                from: 0,
                to: 1,
                r: 0.0,
                x: 0.1,
                b_charging: 0.0,
                tap: 1.0,
                shift: 0.0,
                in_service: true,
            }],
            gens: vec![Gen {
                bus: 0,
                p_gen: 0.0,
                q_gen: 0.0,
                v_set: 1.0,
                in_service: true,
            }],
            slack_index: 0,
        }
    }

    #[test]
    fn injections_vanish_at_flat_state_without_shunts() {
        let grid = two_bus_loaded(0.5, 0.1);
        let ybus = build_ybus(&grid).unwrap();
        let (p, q) = compute_injections(&[1.0, 1.0], &[0.0, 0.0], &ybus).unwrap();
        for i in 0..2 {
            assert!(p[i].abs() < 1e-14 && q[i].abs() < 1e-14);
        }
    }

    #[test]
    fn injections_two_bus_hand_value() {
        let grid = two_bus_loaded(0.0, 0.0);
        let ybus = build_ybus(&grid).unwrap();
        let (p, _) = compute_injections(&[1.0, 1.0], &[0.0, -0.05], &ybus).unwrap();
        // P_1 = 10 sin(0.05)
        assert!((p[0] - 10.0 * 0.05_f64.sin()).abs() < 1e-12);
        assert!((p[0] - 0.49979).abs() < 1e-4);
    }

    #[test]
    fn injections_match_dense_complex_power_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let grid = random_grid(10, &mut rng);
        let ybus = build_ybus(&grid).unwrap();
        let n = 10;
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.9..1.1)).collect();
        let theta: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let (p, q) = compute_injections(&v, &theta, &ybus).unwrap();
        // dense oracle: S = diag(V e^{j theta}) conj(Y V e^{j theta})
        let vc: Vec<Complex64> = v
            .iter()
            .zip(&theta)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect();
        for i in 0..n {
            let mut iy = Complex64::new(0.0, 0.0);
            for j in 0..n {
                iy += ybus.matrix.get(i, j) * vc[j];
            }
            let s = vc[i] * iy.conj();
            assert!((p[i] - s.re).abs() < 1e-12);
            assert!((q[i] - s.im).abs() < 1e-12);
        }
    }

    fn random_grid(n: usize, rng: &mut ChaCha8Rng) -> Grid {
        let mut buses = Vec::new();
        for i in 0..n {
            buses.push(Bus {
                ordinal: i,
                kind: if i == 0 { BusKind::Slack } else { BusKind::Pq },
                p_load: rng.gen_range(0.0..0.3),
                q_load: rng.gen_range(0.0..0.1),
                g_shunt: 0.0,
                b_shunt: 0.0,
                v_init: 1.0,
                theta_init: 0.0,
            });
        }
        let mut branches: Vec<Branch> = (1..n)
            .map(|i| Branch {
                from: rng.gen_range(0..i),
                to: i,
                r: rng.gen_range(0.005..0.05),
                x: rng.gen_range(0.05..0.3),
                b_charging: rng.gen_range(0.0..0.05),
                tap: 1.0,
                shift: 0.0,
                in_service: true,
            })
            .collect();
        branches.push(Branch {
            from: 0,
            to: n - 1,
            r: 0.01,
            x: 0.1,
            b_charging: 0.0,
            tap: 1.0,
            shift: 0.0,
            in_service: true,
        });
        Grid {
            base_mva: 100.0,
            buses,
            branches,
            gens: vec![Gen {
                bus: 0,
                p_gen: 0.0,
                q_gen: 0.0,
                v_set: 1.0,
                in_service: true,
            }],
            slack_index: 0,
        }
    }

    #[test]
    fn zero_load_converges_immediately() {
        let grid = two_bus_loaded(0.0, 0.0);
        let ybus = build_ybus(&grid).unwrap();
        let sol = solve_ac_power_flow(&grid, &ybus, PfOptions::default()).unwrap();
        assert!(sol.iterations <= 1);
        assert!((sol.v[1] - 1.0).abs() < 1e-10);
        assert!(sol.theta[1].abs() < 1e-10);
    }

    /// Multi-resolution grid search over (V_2, theta_2), refining down to
    /// 1e-7 steps, as an independent solution oracle.
    fn grid_search_two_bus(grid: &Grid) -> (f64, f64) {
        let ybus = build_ybus(grid).unwrap();
        let (p_sched, q_sched) = scheduled_injections(grid);
        let mism = |v2: f64, th2: f64| -> f64 {
            let (p, q) = compute_injections(&[1.0, v2], &[0.0, th2], &ybus).unwrap();
            ((p[1] - p_sched[1]).powi(2) + (q[1] - q_sched[1]).powi(2)).sqrt()
        };
        let (mut v_lo, mut v_hi) = (0.8, 1.2);
        let (mut t_lo, mut t_hi) = (-0.5, 0.1);
        let (mut best_v, mut best_t) = (1.0, 0.0);
        loop {
            let mut best = f64::MAX;
            let steps = 60;
            for iv in 0..=steps {
                let v2 = v_lo + (v_hi - v_lo) * iv as f64 / steps as f64;
                for it in 0..=steps {
                    let t2 = t_lo + (t_hi - t_lo) * it as f64 / steps as f64;
                    let f = mism(v2, t2);
                    if f < best {
                        best = f;
                        best_v = v2;
                        best_t = t2;
                    }
                }
            }
            let dv = (v_hi - v_lo) / steps as f64;
            let dt = (t_hi - t_lo) / steps as f64;
            if dv < 1e-7 && dt < 1e-7 {
                return (best_v, best_t);
            }
            v_lo = best_v - 2.0 * dv;
            v_hi = best_v + 2.0 * dv;
            t_lo = best_t - 2.0 * dt;
            t_hi = best_t + 2.0 * dt;
        }
    }

    #[test]
    fn two_bus_matches_grid_search_oracle() {
        let grid = two_bus_loaded(0.5, 0.1);
        let ybus = build_ybus(&grid).unwrap();
        let sol = solve_ac_power_flow(&grid, &ybus, PfOptions::default()).unwrap();
        let (v2, t2) = grid_search_two_bus(&grid);
        assert!((sol.v[1] - v2).abs() < 1e-6, "{} vs {}", sol.v[1], v2);
        assert!((sol.theta[1] - t2).abs() < 1e-6, "{} vs {}", sol.theta[1], t2);
    }

    #[test]
    fn residual_closure_on_random_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = random_grid(10, &mut rng);
        let ybus = build_ybus(&grid).unwrap();
        let sol = solve_ac_power_flow(&grid, &ybus, PfOptions::default()).unwrap();
        let (p, q) = compute_injections(&sol.v, &sol.theta, &ybus).unwrap();
        let (ps, qs) = scheduled_injections(&grid);
        for b in &grid.buses {
            let i = b.ordinal;
            if b.kind != BusKind::Slack {
                assert!((p[i] - ps[i]).abs() < 1e-8);
            }
            if b.kind == BusKind::Pq {
                assert!((q[i] - qs[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn losses_are_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let grid = random_grid(8, &mut rng);
        let ybus = build_ybus(&grid).unwrap();
        let sol = solve_ac_power_flow(&grid, &ybus, PfOptions::default()).unwrap();
        let flows = compute_branch_flows(&sol, &grid).unwrap();
        for f in &flows {
            let loss = f.p_from + f.p_to;
            assert!(loss > -1e-10, "negative loss {loss} on branch {}", f.branch);
        }
        // total generation = load + losses
        let (p, _) = compute_injections(&sol.v, &sol.theta, &ybus).unwrap();
        let total_inj: f64 = p.iter().sum();
        let total_loss: f64 = flows.iter().map(|f| f.p_from + f.p_to).sum();
        assert!((total_inj - total_loss).abs() < 1e-8);
    }

    #[test]
    fn branch_flow_zero_at_flat_state() {
        let grid = two_bus_loaded(0.0, 0.0);
        let sol = PfSolution {
            v: vec![1.0, 1.0],
            theta: vec![0.0, 0.0],
            iterations: 0,
            max_mismatch: 0.0,
        };
        let flows = compute_branch_flows(&sol, &grid).unwrap();
        assert!(flows[0].p_from.abs() < 1e-14);
        assert!(flows[0].q_from.abs() < 1e-14);
    }

    #[test]
    fn branch_flow_equals_injection_on_lossless_line() {
        let grid = two_bus_loaded(0.5, 0.1);
        let ybus = build_ybus(&grid).unwrap();
        let sol = solve_ac_power_flow(&grid, &ybus, PfOptions::default()).unwrap();
        let flows = compute_branch_flows(&sol, &grid).unwrap();
        let (p, _) = compute_injections(&sol.v, &sol.theta, &ybus).unwrap();
        assert!((flows[0].p_from - p[0]).abs() < 1e-10);
    }

    #[test]
    fn branch_flow_matches_scalar_formula_on_nominal_branch() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let grid = random_grid(6, &mut rng);
        let ybus = build_ybus(&grid).unwrap();
        let sol = solve_ac_power_flow(&grid, &ybus, PfOptions::default()).unwrap();
        let flows = compute_branch_flows(&sol, &grid).unwrap();
        for f in &flows {
            let br = &grid.branches[f.branch];
            let y = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
            let (g, b) = (y.re, y.im);
            let bs = br.b_charging / 2.0;
            let (vi, vj) = (sol.v[br.from], sol.v[br.to]);
            let tij = sol.theta[br.from] - sol.theta[br.to];
            let p_ij = vi * vi * g - vi * vj * (g * tij.cos() + b * tij.sin());
            let q_ij = -vi * vi * (bs + b) - vi * vj * (g * tij.sin() - b * tij.cos());
            assert!((f.p_from - p_ij).abs() < 1e-10);
            assert!((f.q_from - q_ij).abs() < 1e-10);
        }
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let grid = random_grid(7, &mut rng);
        let ybus = build_ybus(&grid).unwrap();
        let n = grid.n();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.95..1.05)).collect();
        let theta: Vec<f64> = (0..n)
            .map(|i| if i == 0 { 0.0 } else { rng.gen_range(-0.2..0.2) })
            .collect();

        let mut th_pos = vec![usize::MAX; n];
        let mut v_pos = vec![usize::MAX; n];
        let mut m = 0;
        for i in 1..n {
            th_pos[i] = m;
            m += 1;
        }
        for b in &grid.buses {
            if b.kind == BusKind::Pq {
                v_pos[b.ordinal] = m;
                m += 1;
            }
        }
        let (ps, qs) = scheduled_injections(&grid);
        let eval = |v: &[f64], theta: &[f64]| {
            mismatch(&grid, &ybus, v, theta, &ps, &qs, &th_pos, &v_pos, m).unwrap()
        };
        let triplets = jacobian_triplets(&grid, &ybus, &v, &theta, &th_pos, &v_pos).unwrap();
        let mut jac = vec![vec![0.0; m]; m];
        for (r, c, val) in triplets {
            jac[r][c] += val;
        }
        let h = 1e-6;
        for col in 0..m {
            let perturb = |sign: f64| {
                let mut v2 = v.clone();
                let mut t2 = theta.clone();
                for i in 0..n {
                    if th_pos[i] == col {
                        t2[i] += sign * h;
                    }
                    if v_pos[i] == col {
                        v2[i] += sign * h;
                    }
                }
                eval(&v2, &t2)
            };
            let fp = perturb(1.0);
            let fm = perturb(-1.0);
            for row in 0..m {
                let fd = (fp[row] - fm[row]) / (2.0 * h);
                let denom = fd.abs().max(1.0);
                assert!(
                    (jac[row][col] - fd).abs() / denom < 1e-5,
                    "J[{row}][{col}] analytic {} vs fd {}",
                    jac[row][col],
                    fd
                );
            }
        }
    }

    #[test]
    fn divergence_reported_with_trace() {
        // an absurd load that no solution satisfies
        let grid = two_bus_loaded(50.0, 20.0);
        let ybus = build_ybus(&grid).unwrap();
        let err = solve_ac_power_flow(&grid, &ybus, PfOptions::default()).unwrap_err();
        match err {
            FdiaError::Divergence { trace, .. } => assert!(!trace.is_empty()),
            other => panic!("expected divergence, got {other}"),
        }
    }

    #[test]
    fn sparse_solver_agrees_with_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..5 {
            let m = 60;
            let mut triplets = Vec::new();
            for r in 0..m {
                triplets.push((r, r, rng.gen_range(5.0..10.0)));
                for _ in 0..3 {
                    let c = rng.gen_range(0..m);
                    if c != r {
                        triplets.push((r, c, rng.gen_range(-1.0..1.0)));
                    }
                }
            }
            let rhs: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let xd = solve_dense(m, &triplets, &rhs).unwrap();
            let xs = solve_sparse(m, &triplets, &rhs).unwrap();
            for i in 0..m {
                assert!((xd[i] - xs[i]).abs() < 1e-9);
            }
        }
    }
}
