//! Static network model and nonlinear AC power-flow solver.
//!
//! All quantities are in per-unit on the system base. The solver is a plain
//! full Newton-Raphson from flat start with a dense LU factorization of the
//! Jacobian; at feeder scale (tens of buses) sparsity machinery buys
//! nothing. Buses are either the single slack or PQ.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Default lower voltage-magnitude limit (per-unit).
pub const DEFAULT_V_MIN: f64 = 0.95;
/// Default upper voltage-magnitude limit (per-unit).
pub const DEFAULT_V_MAX: f64 = 1.05;
/// Default power-mismatch convergence tolerance (per-unit).
pub const DEFAULT_TOLERANCE: f64 = 1e-8;
/// Default Newton-Raphson iteration cap.
pub const DEFAULT_MAX_ITER: usize = 50;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("network topology is not a single connected component ({0} of {1} buses reachable)")]
    Disconnected(usize, usize),
    #[error("network with {buses} buses and {lines} lines is not a radial tree")]
    NotRadial { buses: usize, lines: usize },
    #[error("line {from}-{to} has (near-)zero impedance")]
    SingularBranch { from: usize, to: usize },
    #[error("line {from}-{to} references an unknown bus")]
    UnknownBus { from: usize, to: usize },
    #[error("line endpoints coincide at bus {0}")]
    SelfLoop(usize),
    #[error("expected exactly one slack bus, found {0}")]
    SlackCount(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("Jacobian is singular at iteration {0}")]
    SingularJacobian(usize),
    #[error("invalid line {from}-{to}: {reason}")]
    BadLine { from: usize, to: usize, reason: String },
}

/// Bus classification. The slack bus pins voltage magnitude and angle and
/// absorbs the system power imbalance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Slack,
    Pq,
}

/// A network bus with its specified injections (per-unit).
#[derive(Debug, Clone)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Active load, per-unit.
    pub p_load: f64,
    /// Reactive load, per-unit.
    pub q_load: f64,
    /// Active generation/injection, per-unit.
    pub p_gen: f64,
    /// Reactive generation/injection, per-unit.
    pub q_gen: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Bus {
    pub fn new(id: usize, kind: BusKind) -> Self {
        Self {
            id,
            kind,
            p_load: 0.0,
            q_load: 0.0,
            p_gen: 0.0,
            q_gen: 0.0,
            v_min: DEFAULT_V_MIN,
            v_max: DEFAULT_V_MAX,
        }
    }

    /// Net specified active injection (generation minus load).
    pub fn p_spec(&self) -> f64 {
        self.p_gen - self.p_load
    }

    /// Net specified reactive injection.
    pub fn q_spec(&self) -> f64 {
        self.q_gen - self.q_load
    }
}

/// A series branch between two buses (per-unit impedance).
#[derive(Debug, Clone)]
pub struct Line {
    /// Index into the bus list (0-based).
    pub from: usize,
    /// Index into the bus list (0-based).
    pub to: usize,
    pub resistance: f64,
    pub reactance: f64,
    pub length_km: f64,
}

impl Line {
    fn validate(&self, n_buses: usize) -> Result<(), GridError> {
        if self.from == self.to {
            return Err(GridError::SelfLoop(self.from));
        }
        if self.from >= n_buses || self.to >= n_buses {
            return Err(GridError::UnknownBus { from: self.from, to: self.to });
        }
        if self.resistance < 0.0 {
            return Err(GridError::BadLine {
                from: self.from,
                to: self.to,
                reason: "negative resistance".into(),
            });
        }
        if self.reactance <= 0.0 {
            return Err(GridError::BadLine {
                from: self.from,
                to: self.to,
                reason: "reactance must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Dense conductance/susceptance matrices of the bus admittance matrix.
/// No shunt elements are modeled, so every row sums to zero.
#[derive(Debug, Clone)]
pub struct AdmittanceMatrix {
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.g.nrows()
    }
}

/// Result of a power-flow solve.
#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    /// Per-bus voltage magnitude, per-unit.
    pub v_mag: Vec<f64>,
    /// Per-bus voltage angle, rad.
    pub v_ang: Vec<f64>,
    pub iterations: usize,
    /// Infinity norm of the final power mismatch, per-unit.
    pub max_mismatch: f64,
    pub converged: bool,
}

/// A voltage-limit breach at one bus.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageViolation {
    pub bus: usize,
    pub magnitude: f64,
    /// The limit that was crossed.
    pub bound: f64,
}

/// The immutable network: buses, lines, and the cached admittance matrix.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub ybus: AdmittanceMatrix,
    /// Index of the slack bus in `buses`.
    pub slack: usize,
    /// System MVA base.
    pub base_mva: f64,
    /// System voltage base, kV.
    pub base_kv: f64,
}

impl NetworkModel {
    /// Builds and validates the model: exactly one slack, connected radial
    /// tree, valid impedances.
    pub fn new(
        buses: Vec<Bus>,
        lines: Vec<Line>,
        base_mva: f64,
        base_kv: f64,
    ) -> Result<Self, GridError> {
        let slacks: Vec<usize> = buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Slack)
            .map(|(i, _)| i)
            .collect();
        if slacks.len() != 1 {
            return Err(GridError::SlackCount(slacks.len()));
        }
        if lines.len() + 1 != buses.len() {
            return Err(GridError::NotRadial { buses: buses.len(), lines: lines.len() });
        }
        let ybus = build_ybus(&buses, &lines)?;
        Ok(Self { buses, lines, ybus, slack: slacks[0], base_mva, base_kv })
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Converts kW on the device side to per-unit on the system base.
    pub fn kw_to_pu(&self, kw: f64) -> f64 {
        kw / (self.base_mva * 1000.0)
    }

    /// Converts per-unit power to kW.
    pub fn pu_to_kw(&self, pu: f64) -> f64 {
        pu * self.base_mva * 1000.0
    }
}

/// Builds the bus admittance matrix from line data.
///
/// `Y[i][j] = -1/z_ij` for each line `(i, j)`; diagonals accumulate the
/// connected line admittances. Errors on zero-impedance branches and on
/// disconnected topologies.
pub fn build_ybus(buses: &[Bus], lines: &[Line]) -> Result<AdmittanceMatrix, GridError> {
    let n = buses.len();
    let mut g = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);

    for line in lines {
        line.validate(n)?;
        let z2 = line.resistance * line.resistance + line.reactance * line.reactance;
        if z2 < 1e-12 {
            return Err(GridError::SingularBranch { from: line.from, to: line.to });
        }
        // y = 1/z = (r - jx) / |z|^2
        let gy = line.resistance / z2;
        let by = -line.reactance / z2;
        let (i, j) = (line.from, line.to);
        g[(i, i)] += gy;
        g[(j, j)] += gy;
        g[(i, j)] -= gy;
        g[(j, i)] -= gy;
        b[(i, i)] += by;
        b[(j, j)] += by;
        b[(i, j)] -= by;
        b[(j, i)] -= by;
    }

    // Connectivity check by traversal over the line list.
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1usize;
    while let Some(i) = stack.pop() {
        for line in lines {
            let other = if line.from == i {
                line.to
            } else if line.to == i {
                line.from
            } else {
                continue;
            };
            if !seen[other] {
                seen[other] = true;
                count += 1;
                stack.push(other);
            }
        }
    }
    if count != n {
        return Err(GridError::Disconnected(count, n));
    }

    Ok(AdmittanceMatrix { g, b })
}

/// Evaluates the AC injection equations at the given voltage profile:
/// `P_i = sum_j |V_i||V_j| (G_ij cos th_ij + B_ij sin th_ij)` and the
/// corresponding reactive form.
pub fn power_injection(
    v_mag: &[f64],
    v_ang: &[f64],
    y: &AdmittanceMatrix,
) -> Result<(Vec<f64>, Vec<f64>), GridError> {
    let n = y.n();
    if v_mag.len() != n {
        return Err(GridError::Dimension { expected: n, got: v_mag.len() });
    }
    if v_ang.len() != n {
        return Err(GridError::Dimension { expected: n, got: v_ang.len() });
    }
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        let (vi, ti) = (v_mag[i], v_ang[i]);
        let mut pi = 0.0;
        let mut qi = 0.0;
        for j in 0..n {
            let gij = y.g[(i, j)];
            let bij = y.b[(i, j)];
            if gij == 0.0 && bij == 0.0 {
                continue;
            }
            let dt = ti - v_ang[j];
            let (s, c) = dt.sin_cos();
            pi += v_mag[j] * (gij * c + bij * s);
            qi += v_mag[j] * (gij * s - bij * c);
        }
        p[i] = vi * pi;
        q[i] = vi * qi;
    }
    Ok((p, q))
}

/// Solves the network by full Newton-Raphson from flat start (V = 1, th = 0).
///
/// Non-convergence yields a `PowerFlowSolution` with `converged = false`,
/// never a silent answer; a singular Jacobian is a hard error.
pub fn solve_power_flow(
    net: &NetworkModel,
    tolerance: f64,
    max_iter: usize,
) -> Result<PowerFlowSolution, GridError> {
    solve_power_flow_from(net, tolerance, max_iter, 1.0)
}

/// As [`solve_power_flow`] but with an explicit slack voltage setpoint.
pub fn solve_power_flow_from(
    net: &NetworkModel,
    tolerance: f64,
    max_iter: usize,
    slack_v: f64,
) -> Result<PowerFlowSolution, GridError> {
    let n = net.n_buses();
    let slack = net.slack;
    let y = &net.ybus;

    // Flat start; the slack magnitude is pinned.
    let mut v: Vec<f64> = vec![1.0; n];
    let mut th: Vec<f64> = vec![0.0; n];
    v[slack] = slack_v;

    // Unknown ordering: angles of all non-slack buses, then magnitudes of
    // all PQ buses (every non-slack bus here is PQ).
    let idx: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let m = idx.len();

    let p_spec: Vec<f64> = net.buses.iter().map(Bus::p_spec).collect();
    let q_spec: Vec<f64> = net.buses.iter().map(Bus::q_spec).collect();

    let mut iterations = 0usize;
    loop {
        let (p_calc, q_calc) = power_injection(&v, &th, y)?;

        let mut mismatch = DVector::zeros(2 * m);
        let mut max_mis: f64 = 0.0;
        for (r, &i) in idx.iter().enumerate() {
            let dp = p_spec[i] - p_calc[i];
            let dq = q_spec[i] - q_calc[i];
            mismatch[r] = dp;
            mismatch[m + r] = dq;
            max_mis = max_mis.max(dp.abs()).max(dq.abs());
        }

        if max_mis <= tolerance {
            return Ok(PowerFlowSolution {
                v_mag: v,
                v_ang: th,
                iterations,
                max_mismatch: max_mis,
                converged: true,
            });
        }
        if iterations >= max_iter {
            return Ok(PowerFlowSolution {
                v_mag: v,
                v_ang: th,
                iterations,
                max_mismatch: max_mis,
                converged: false,
            });
        }

        // Jacobian in the (dP/dth, dP/dV; dQ/dth, dQ/dV) block layout.
        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for (r, &i) in idx.iter().enumerate() {
            let vi = v[i];
            for (c, &k) in idx.iter().enumerate() {
                if i == k {
                    jac[(r, c)] = -q_calc[i] - y.b[(i, i)] * vi * vi;
                    jac[(r, m + c)] = p_calc[i] / vi + y.g[(i, i)] * vi;
                    jac[(m + r, c)] = p_calc[i] - y.g[(i, i)] * vi * vi;
                    jac[(m + r, m + c)] = q_calc[i] / vi - y.b[(i, i)] * vi;
                } else {
                    let gik = y.g[(i, k)];
                    let bik = y.b[(i, k)];
                    if gik == 0.0 && bik == 0.0 {
                        continue;
                    }
                    let dt = th[i] - th[k];
                    let (s, c_) = dt.sin_cos();
                    let vk = v[k];
                    jac[(r, c)] = vi * vk * (gik * s - bik * c_);
                    jac[(r, m + c)] = vi * (gik * c_ + bik * s);
                    jac[(m + r, c)] = -vi * vk * (gik * c_ + bik * s);
                    jac[(m + r, m + c)] = vi * (gik * s - bik * c_);
                }
            }
        }

        let lu = jac.lu();
        let dx = lu
            .solve(&mismatch)
            .ok_or(GridError::SingularJacobian(iterations))?;

        for (r, &i) in idx.iter().enumerate() {
            th[i] += dx[r];
            v[i] += dx[m + r];
        }
        iterations += 1;
    }
}

/// Reports every bus whose solved magnitude sits outside its limits.
pub fn check_voltage_limits(sol: &PowerFlowSolution, buses: &[Bus]) -> Vec<VoltageViolation> {
    buses
        .iter()
        .enumerate()
        .filter_map(|(i, bus)| {
            let vm = sol.v_mag[i];
            if vm < bus.v_min {
                Some(VoltageViolation { bus: bus.id, magnitude: vm, bound: bus.v_min })
            } else if vm > bus.v_max {
                Some(VoltageViolation { bus: bus.id, magnitude: vm, bound: bus.v_max })
            } else {
                None
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_bus(p_load: f64, q_load: f64, r: f64, x: f64) -> NetworkModel {
        let mut b2 = Bus::new(2, BusKind::Pq);
        b2.p_load = p_load;
        b2.q_load = q_load;
        NetworkModel::new(
            vec![Bus::new(1, BusKind::Slack), b2],
            vec![Line { from: 0, to: 1, resistance: r, reactance: x, length_km: 1.0 }],
            10.0,
            12.66,
        )
        .unwrap()
    }

    #[test]
    fn ybus_single_reactive_line() {
        let net = two_bus(0.0, 0.0, 0.0, 0.1);
        let y = &net.ybus;
        assert!((y.b[(0, 0)] - (-10.0)).abs() < 1e-12);
        assert!((y.b[(1, 1)] - (-10.0)).abs() < 1e-12);
        assert!((y.b[(0, 1)] - 10.0).abs() < 1e-12);
        assert!((y.b[(1, 0)] - 10.0).abs() < 1e-12);
        assert_eq!(y.g.amax(), 0.0);
    }

    #[test]
    fn ybus_disconnected_is_error() {
        let buses = vec![Bus::new(1, BusKind::Slack), Bus::new(2, BusKind::Pq)];
        match build_ybus(&buses, &[]) {
            Err(GridError::Disconnected(1, 2)) => {}
            other => panic!("expected Disconnected, got {other:?}"),
        }
    }

    #[test]
    fn ybus_zero_impedance_is_error() {
        let buses = vec![Bus::new(1, BusKind::Slack), Bus::new(2, BusKind::Pq)];
        let lines = vec![Line { from: 0, to: 1, resistance: 0.0, reactance: 1e-9, length_km: 1.0 }];
        assert!(matches!(
            build_ybus(&buses, &lines),
            Err(GridError::SingularBranch { .. }) | Err(GridError::BadLine { .. })
        ));
    }

    #[test]
    fn injection_flat_profile_is_zero() {
        let net = two_bus(0.1, 0.05, 0.01, 0.1);
        let (p, q) = power_injection(&[1.0, 1.0], &[0.0, 0.0], &net.ybus).unwrap();
        for i in 0..2 {
            assert!(p[i].abs() < 1e-14);
            assert!(q[i].abs() < 1e-14);
        }
    }

    #[test]
    fn injection_hand_case() {
        // B = [[-10,10],[10,-10]], G = 0, V = (1,1), th = (0, -0.1)
        let net = two_bus(0.0, 0.0, 0.0, 0.1);
        let (p, _) = power_injection(&[1.0, 1.0], &[0.0, -0.1], &net.ybus).unwrap();
        assert!((p[0] - 10.0 * 0.1f64.sin()).abs() < 1e-12);
        assert!((p[1] + 10.0 * 0.1f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn injection_matches_complex_oracle() {
        // S = V . (Y V)* evaluated with complex arithmetic, independent of
        // the trig form used by power_injection.
        let buses = vec![
            Bus::new(1, BusKind::Slack),
            Bus::new(2, BusKind::Pq),
            Bus::new(3, BusKind::Pq),
            Bus::new(4, BusKind::Pq),
        ];
        let lines = vec![
            Line { from: 0, to: 1, resistance: 0.02, reactance: 0.08, length_km: 1.0 },
            Line { from: 1, to: 2, resistance: 0.05, reactance: 0.11, length_km: 1.0 },
            Line { from: 1, to: 3, resistance: 0.03, reactance: 0.07, length_km: 1.0 },
        ];
        let y = build_ybus(&buses, &lines).unwrap();
        let v = [1.02, 0.98, 0.97, 1.01];
        let th = [0.0, -0.03, -0.05, 0.02];

        let (p, q) = power_injection(&v, &th, &y).unwrap();

        use nalgebra::Complex;
        let n = 4;
        let vc: Vec<Complex<f64>> =
            (0..n).map(|i| Complex::from_polar(v[i], th[i])).collect();
        for i in 0..n {
            let mut acc = Complex::new(0.0, 0.0);
            for j in 0..n {
                acc += Complex::new(y.g[(i, j)], y.b[(i, j)]) * vc[j];
            }
            let s = vc[i] * acc.conj();
            assert!((p[i] - s.re).abs() < 1e-12, "P mismatch at {i}");
            assert!((q[i] - s.im).abs() < 1e-12, "Q mismatch at {i}");
        }
    }

    #[test]
    fn no_load_solves_flat_immediately() {
        let net = two_bus(0.0, 0.0, 0.01, 0.1);
        let sol = solve_power_flow(&net, 1e-8, 50).unwrap();
        assert!(sol.converged);
        assert!(sol.iterations <= 1);
        assert_eq!(sol.v_mag, vec![1.0, 1.0]);
        assert_eq!(sol.v_ang, vec![0.0, 0.0]);
    }

    #[test]
    fn two_bus_closed_form() {
        // Lossless line x = 0.1, P = 0.1, Q = 0 at the load bus. The exact
        // solution follows from P = 10 V sin(th), 0 = 10 V cos(th) - 10 V^2:
        // V = cos(th) and sin(th)cos(th) = -0.01, so th = -asin(0.02)/2.
        let net = two_bus(0.1, 0.0, 0.0, 0.1);
        let sol = solve_power_flow(&net, 1e-13, 50).unwrap();
        assert!(sol.converged);
        let th_exact = -0.5 * 0.02f64.asin();
        let v_exact = th_exact.cos();
        assert!((sol.v_ang[1] - th_exact).abs() < 1e-10, "angle {}", sol.v_ang[1]);
        assert!((sol.v_mag[1] - v_exact).abs() < 1e-10, "magnitude {}", sol.v_mag[1]);
        // The small-angle shortcut -asin(P x) agrees to ~5e-7.
        assert!((sol.v_ang[1] + 0.01f64.asin()).abs() < 1e-5);
    }

    #[test]
    fn solution_respects_specified_loads() {
        let net = two_bus(0.15, 0.08, 0.02, 0.12);
        let sol = solve_power_flow(&net, 1e-10, 50).unwrap();
        assert!(sol.converged);
        let (p, q) = power_injection(&sol.v_mag, &sol.v_ang, &net.ybus).unwrap();
        assert!((p[1] + 0.15).abs() < 1e-9);
        assert!((q[1] + 0.08).abs() < 1e-9);
        // Energy balance: total injection equals line losses.
        let loss: f64 = p.iter().sum();
        assert!(loss > 0.0 && loss < 0.01, "loss {loss}");
    }

    #[test]
    fn nonconvergence_is_flagged_not_silent() {
        // Impossible loading far beyond the maximum power transfer.
        let net = two_bus(50.0, 0.0, 0.0, 0.1);
        let sol = solve_power_flow(&net, 1e-8, 20).unwrap();
        assert!(!sol.converged);
        assert!(sol.max_mismatch > 1e-8);
    }

    #[test]
    fn voltage_limit_checks() {
        let net = two_bus(0.0, 0.0, 0.01, 0.1);
        let mut sol = solve_power_flow(&net, 1e-8, 50).unwrap();
        assert!(check_voltage_limits(&sol, &net.buses).is_empty());
        sol.v_mag[1] = 0.94;
        let v = check_voltage_limits(&sol, &net.buses);
        assert_eq!(v, vec![VoltageViolation { bus: 2, magnitude: 0.94, bound: 0.95 }]);
    }

    #[test]
    fn solution_invariant_under_bus_permutation() {
        // Permute the bus order, solve, and un-permute: voltages match the
        // original solve to solver precision.
        let buses = |ids: &[usize]| -> Vec<Bus> {
            ids.iter()
                .map(|&id| {
                    let mut b =
                        Bus::new(id, if id == 1 { BusKind::Slack } else { BusKind::Pq });
                    if id > 1 {
                        b.p_load = 0.02 * id as f64;
                        b.q_load = 0.01 * id as f64;
                    }
                    b
                })
                .collect()
        };
        let line = |f: usize, t: usize, x: f64| Line {
            from: f,
            to: t,
            resistance: 0.01,
            reactance: x,
            length_km: 1.0,
        };
        // Original order 1-2-3-4 (chain).
        let net = NetworkModel::new(
            buses(&[1, 2, 3, 4]),
            vec![line(0, 1, 0.08), line(1, 2, 0.06), line(2, 3, 0.09)],
            10.0,
            12.66,
        )
        .unwrap();
        let sol = solve_power_flow(&net, 1e-12, 50).unwrap();

        // Permuted storage order 3-1-4-2; same electrical topology.
        let perm = NetworkModel::new(
            buses(&[3, 1, 4, 2]),
            vec![line(1, 3, 0.08), line(3, 0, 0.06), line(0, 2, 0.09)],
            10.0,
            12.66,
        )
        .unwrap();
        let psol = solve_power_flow(&perm, 1e-12, 50).unwrap();
        assert!(sol.converged && psol.converged);
        // Map by bus id: original index i holds id i+1; permuted order is [3,1,4,2].
        let where_in_perm = [1usize, 3, 0, 2];
        for (i, &j) in where_in_perm.iter().enumerate() {
            assert!((sol.v_mag[i] - psol.v_mag[j]).abs() < 1e-9, "bus id {}", i + 1);
            assert!((sol.v_ang[i] - psol.v_ang[j]).abs() < 1e-9, "bus id {}", i + 1);
        }
    }

    proptest! {
        #[test]
        fn ybus_is_symmetric_with_zero_row_sums(
            rs in proptest::collection::vec(0.001f64..0.5, 5),
            xs in proptest::collection::vec(0.01f64..0.8, 5),
        ) {
            // A 6-bus random radial chain.
            let buses: Vec<Bus> = (0..6)
                .map(|i| Bus::new(i + 1, if i == 0 { BusKind::Slack } else { BusKind::Pq }))
                .collect();
            let lines: Vec<Line> = (0..5)
                .map(|i| Line {
                    from: i,
                    to: i + 1,
                    resistance: rs[i],
                    reactance: xs[i],
                    length_km: 1.0,
                })
                .collect();
            let y = build_ybus(&buses, &lines).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    prop_assert_eq!(y.g[(i, j)], y.g[(j, i)]);
                    prop_assert_eq!(y.b[(i, j)], y.b[(j, i)]);
                }
                let gsum: f64 = (0..6).map(|j| y.g[(i, j)]).sum();
                let bsum: f64 = (0..6).map(|j| y.b[(i, j)]).sum();
                prop_assert!(gsum.abs() < 1e-9);
                prop_assert!(bsum.abs() < 1e-9);
            }
        }

        #[test]
        fn newton_raphson_is_deterministic(p in 0.01f64..0.3, q in 0.0f64..0.15) {
            let net = two_bus(p, q, 0.02, 0.1);
            let a = solve_power_flow(&net, 1e-10, 50).unwrap();
            let b = solve_power_flow(&net, 1e-10, 50).unwrap();
            prop_assert_eq!(a.v_mag, b.v_mag);
            prop_assert_eq!(a.v_ang, b.v_ang);
            prop_assert_eq!(a.iterations, b.iterations);
        }
    }
}
