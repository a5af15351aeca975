//! Per-unit grid model, bus admittance matrix, and the weighted topology graph.

use crate::sparse::{CsrComplex, CsrReal};
use crate::{FdiaError, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

/// One bus, all quantities per-unit on the system base, angles in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub ordinal: usize,
    pub kind: BusKind,
    pub p_load: f64,
    pub q_load: f64,
    pub g_shunt: f64,
    pub b_shunt: f64,
    pub v_init: f64,
    pub theta_init: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance (split half per end).
    pub b_charging: f64,
    pub tap: f64,
    pub shift: f64,
    pub in_service: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gen {
    pub bus: usize,
    pub p_gen: f64,
    pub q_gen: f64,
    pub v_set: f64,
    pub in_service: bool,
}

/// In-memory grid, per-unit on `base_mva`, buses densely numbered 0..n-1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub gens: Vec<Gen>,
    pub slack_index: usize,
}

impl Grid {
    pub fn n(&self) -> usize {
        self.buses.len()
    }

    /// Enforce the structural invariants every other module assumes.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(FdiaError::Validation("grid has no buses".into()));
        }
        let mut slacks = 0;
        for (i, bus) in self.buses.iter().enumerate() {
            if bus.ordinal != i {
                return Err(FdiaError::Validation(format!(
                    "bus ordinals not dense: position {i} holds ordinal {}",
                    bus.ordinal
                )));
            }
            if bus.v_init <= 0.0 {
                return Err(FdiaError::Validation(format!(
                    "bus {i} has non-positive v_init"
                )));
            }
            let is_slack = bus.kind == BusKind::Slack;
            if is_slack {
                slacks += 1;
            }
            if is_slack != (i == self.slack_index) {
                return Err(FdiaError::Validation(format!(
                    "bus {i} kind disagrees with slack_index {}",
                    self.slack_index
                )));
            }
        }
        if slacks != 1 {
            return Err(FdiaError::Validation(format!(
                "expected exactly one slack bus, found {slacks}"
            )));
        }
        for br in &self.branches {
            if br.from >= n || br.to >= n {
                return Err(FdiaError::Validation(format!(
                    "branch {}-{} references a nonexistent bus (n={n})",
                    br.from, br.to
                )));
            }
            if br.from == br.to {
                return Err(FdiaError::Validation(format!(
                    "branch connects bus {} to itself",
                    br.from
                )));
            }
            if br.in_service && br.r == 0.0 && br.x == 0.0 {
                return Err(FdiaError::DegenerateBranch {
                    from: br.from,
                    to: br.to,
                });
            }
            if br.tap <= 0.0 {
                return Err(FdiaError::Validation(format!(
                    "branch {}-{} has non-positive tap ratio",
                    br.from, br.to
                )));
            }
        }
        for g in &self.gens {
            if g.bus >= n {
                return Err(FdiaError::Validation(format!(
                    "generator references nonexistent bus {}",
                    g.bus
                )));
            }
        }
        Ok(())
    }
}

/// Sparse complex bus admittance matrix.
#[derive(Debug, Clone)]
pub struct AdmittanceMatrix {
    pub n: usize,
    pub matrix: CsrComplex,
}

/// Symmetric nonnegative edge-weight matrix plus degree vector.
#[derive(Debug, Clone)]
pub struct WeightedGraph {
    pub n: usize,
    pub weights: CsrReal,
    pub degrees: Vec<f64>,
}

/// Standard Ybus assembly: series admittance plus half charging per end,
/// off-nominal taps on the from side, phase shift on the off-diagonals,
/// bus shunts on the diagonal. Parallel branches accumulate.
pub fn build_ybus(grid: &Grid) -> Result<AdmittanceMatrix> {
    grid.validate()?;
    let n = grid.n();
    let mut triplets: Vec<(usize, usize, Complex64)> = Vec::new();
    for br in &grid.branches {
        if !br.in_service {
            continue;
        }
        let y = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let ych = Complex64::new(0.0, br.b_charging / 2.0);
        let t = Complex64::from_polar(br.tap, br.shift);
        let (f, to) = (br.from, br.to);
        triplets.push((f, f, (y + ych) / (br.tap * br.tap)));
        triplets.push((to, to, y + ych));
        triplets.push((f, to, -y / t.conj()));
        triplets.push((to, f, -y / t));
    }
    for bus in &grid.buses {
        if bus.g_shunt != 0.0 || bus.b_shunt != 0.0 {
            triplets.push((
                bus.ordinal,
                bus.ordinal,
                Complex64::new(bus.g_shunt, bus.b_shunt),
            ));
        }
    }
    Ok(AdmittanceMatrix {
        n,
        matrix: CsrComplex::from_triplets(n, n, triplets),
    })
}

/// Edge weight = |1/(r+jx)| summed over in-service branches between a pair.
/// Taps, shifts, and charging do not enter the topology graph.
pub fn build_weighted_adjacency(grid: &Grid) -> Result<WeightedGraph> {
    grid.validate()?;
    let n = grid.n();
    let mut triplets = Vec::new();
    for br in &grid.branches {
        if !br.in_service {
            continue;
        }
        let w = 1.0 / (br.r * br.r + br.x * br.x).sqrt();
        triplets.push((br.from, br.to, w));
        triplets.push((br.to, br.from, w));
    }
    let weights = CsrReal::from_triplets(n, n, triplets);
    let degrees: Vec<f64> = (0..n).map(|i| weights.row(i).map(|(_, w)| w).sum()).collect();
    let graph = WeightedGraph { n, weights, degrees };
    let components = check_connectivity(&graph);
    if components.len() > 1 {
        let example = components[1].clone();
        return Err(FdiaError::Disconnected {
            count: components.len(),
            example,
        });
    }
    Ok(graph)
}

/// Connected components over nonzero weights, each listed as sorted vertices.
/// The component containing vertex 0 comes first.
pub fn check_connectivity(graph: &WeightedGraph) -> Vec<Vec<usize>> {
    let n = graph.n;
    let mut seen = vec![false; n];
    let mut components = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut stack = vec![start];
        let mut comp = Vec::new();
        seen[start] = true;
        while let Some(v) = stack.pop() {
            comp.push(v);
            for (u, w) in graph.weights.row(v) {
                if w != 0.0 && !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        comp.sort_unstable();
        components.push(comp);
    }
    components
}

/// Number of connected components.
pub fn component_count(graph: &WeightedGraph) -> usize {
    check_connectivity(graph).len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    pub(crate) fn two_bus_grid(x: f64, in_service: bool) -> Grid {
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
                    p_load: 0.0,
                    q_load: 0.0,
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
                x,
                b_charging: 0.0,
                tap: 1.0,
                shift: 0.0,
                in_service,
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
    fn ybus_two_bus_line() {
        let grid = two_bus_grid(0.1, true);
        let y = build_ybus(&grid).unwrap();
        let expect = |re: f64, im: f64| Complex64::new(re, im);
        assert_relative_eq!(y.matrix.get(0, 0).im, expect(0.0, -10.0).im, epsilon = 1e-12);
        assert_relative_eq!(y.matrix.get(0, 1).im, 10.0, epsilon = 1e-12);
        assert_relative_eq!(y.matrix.get(1, 0).im, 10.0, epsilon = 1e-12);
        assert_relative_eq!(y.matrix.get(1, 1).im, -10.0, epsilon = 1e-12);
        assert_eq!(y.matrix.get(0, 0).re, 0.0);
    }

    #[test]
    fn ybus_out_of_service_branch_is_empty() {
        let grid = two_bus_grid(0.1, false);
        let y = build_ybus(&grid).unwrap();
        assert_eq!(y.matrix.nnz(), 0);
    }

    /// Dense O(n^2) reference Ybus, written independently of the sparse path.
    fn dense_ybus_oracle(grid: &Grid) -> Vec<Vec<Complex64>> {
        let n = grid.n();
        let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
        for br in grid.branches.iter().filter(|b| b.in_service) {
            let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
            let half = Complex64::new(0.0, br.b_charging / 2.0);
            let tap = Complex64::from_polar(br.tap, br.shift);
            y[br.from][br.from] += (ys + half) / (tap * tap.conj());
            y[br.to][br.to] += ys + half;
            y[br.from][br.to] += -ys / tap.conj();
            y[br.to][br.from] += -ys / tap;
        }
        for b in &grid.buses {
            y[b.ordinal][b.ordinal] += Complex64::new(b.g_shunt, b.b_shunt);
        }
        y
    }

    fn three_bus_with_transformer() -> Grid {
        let mut grid = two_bus_grid(0.1, true);
        grid.buses.push(Bus {
            ordinal: 2,
            kind: BusKind::Pq,
            p_load: 0.3,
            q_load: 0.1,
            g_shunt: 0.01,
            b_shunt: 0.05,
            v_init: 1.0,
            theta_init: 0.0,
        });
        grid.branches.push(Branch {
            from: 1,
            to: 2,
            r: 0.02,
            x: 0.2,
            b_charging: 0.04,
            tap: 1.05,
            shift: std::f64::consts::FRAC_PI_6,
            in_service: true,
        });
        grid
    }

    #[test]
    fn ybus_matches_dense_oracle_with_tap_and_shift() {
        let grid = three_bus_with_transformer();
        let y = build_ybus(&grid).unwrap();
        let oracle = dense_ybus_oracle(&grid);
        for i in 0..3 {
            for j in 0..3 {
                let d = (y.matrix.get(i, j) - oracle[i][j]).norm();
                assert!(d < 1e-12, "Y[{i}][{j}] off by {d}");
            }
        }
    }

    #[test]
    fn ybus_rejects_degenerate_branch() {
        let grid = two_bus_grid(0.0, true);
        assert!(matches!(
            build_ybus(&grid),
            Err(FdiaError::DegenerateBranch { .. })
        ));
    }

    #[test]
    fn ybus_rejects_dangling_bus() {
        let mut grid = two_bus_grid(0.1, true);
        grid.branches[0].to = 99;
        assert!(matches!(build_ybus(&grid), Err(FdiaError::Validation(_))));
    }

    #[test]
    fn adjacency_single_line() {
        let grid = two_bus_grid(0.1, true);
        let w = build_weighted_adjacency(&grid).unwrap();
        assert_relative_eq!(w.weights.get(0, 1), 10.0, epsilon = 1e-12);
        assert_relative_eq!(w.weights.get(1, 0), 10.0, epsilon = 1e-12);
        assert_eq!(w.weights.get(0, 0), 0.0);
        assert_relative_eq!(w.degrees[0], 10.0, epsilon = 1e-12);
    }

    #[test]
    fn adjacency_parallel_lines_sum() {
        let mut grid = two_bus_grid(0.2, true);
        grid.branches.push(grid.branches[0].clone());
        let w = build_weighted_adjacency(&grid).unwrap();
        assert_relative_eq!(w.weights.get(0, 1), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn adjacency_excludes_out_of_service() {
        let grid = two_bus_grid(0.1, false);
        // The single line down means the graph splits in two.
        assert!(matches!(
            build_weighted_adjacency(&grid),
            Err(FdiaError::Disconnected { count: 2, .. })
        ));
    }

    #[test]
    fn connectivity_counts() {
        let path = WeightedGraph {
            n: 3,
            weights: CsrReal::from_triplets(
                3,
                3,
                vec![(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)],
            ),
            degrees: vec![1.0, 2.0, 1.0],
        };
        assert_eq!(component_count(&path), 1);

        let disjoint = WeightedGraph {
            n: 4,
            weights: CsrReal::from_triplets(
                4,
                4,
                vec![(0, 1, 1.0), (1, 0, 1.0), (2, 3, 1.0), (3, 2, 1.0)],
            ),
            degrees: vec![1.0, 1.0, 1.0, 1.0],
        };
        assert_eq!(component_count(&disjoint), 2);
    }

    /// Union-find oracle for component counting on random graphs.
    #[test]
    fn connectivity_matches_union_find_on_random_graph() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let n = 50;
            let mut triplets = Vec::new();
            let mut parent: Vec<usize> = (0..n).collect();
            fn find(p: &mut [usize], mut v: usize) -> usize {
                while p[v] != v {
                    p[v] = p[p[v]];
                    v = p[v];
                }
                v
            }
            for _ in 0..40 {
                let a = rng.gen_range(0..n);
                let b = rng.gen_range(0..n);
                if a == b {
                    continue;
                }
                triplets.push((a, b, 1.0));
                triplets.push((b, a, 1.0));
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra] = rb;
            }
            let oracle = (0..n)
                .filter(|&v| find(&mut parent, v) == v)
                .count();
            let g = WeightedGraph {
                n,
                weights: CsrReal::from_triplets(n, n, triplets),
                degrees: vec![0.0; n],
            };
            assert_eq!(component_count(&g), oracle);
        }
    }

    #[test]
    fn ybus_symmetric_without_taps_or_shifts() {
        let mut grid = three_bus_with_transformer();
        grid.branches[1].tap = 1.0;
        grid.branches[1].shift = 0.0;
        let y = build_ybus(&grid).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let d = (y.matrix.get(i, j) - y.matrix.get(j, i)).norm();
                assert!(d < 1e-14);
            }
        }
    }

    #[test]
    fn removing_branch_never_increases_weight() {
        let grid = three_bus_with_transformer();
        let full = build_weighted_adjacency(&grid).unwrap();
        let mut reduced_grid = grid.clone();
        reduced_grid.branches.push(Branch {
            from: 0,
            to: 2,
            r: 0.05,
            x: 0.3,
            b_charging: 0.0,
            tap: 1.0,
            shift: 0.0,
            in_service: true,
        });
        let bigger = build_weighted_adjacency(&reduced_grid).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!(bigger.weights.get(i, j) >= full.weights.get(i, j) - 1e-15);
            }
        }
    }
}
