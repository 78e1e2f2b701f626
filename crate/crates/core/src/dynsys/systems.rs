//! Right-hand sides, map updates and the integrators that turn a
//! [`SystemSpec`] into a raw trajectory.

use super::{SystemKind, SystemSpec};
use crate::{Error, Result};

/// Any state component beyond this magnitude counts as a blow-up.
const BLOW_UP: f64 = 1e6;

/// Continuous-time benchmark systems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowModel {
    Lorenz { sigma: f64, rho: f64, beta: f64 },
    Rossler { a: f64, b: f64, c: f64 },
    VanDerPol { mu: f64 },
    Duffing { delta: f64, alpha: f64, beta: f64, gamma: f64, omega: f64 },
    DoublePendulum { m1: f64, m2: f64, l1: f64, l2: f64, g: f64 },
}

impl FlowModel {
    pub fn from_spec(spec: &SystemSpec) -> Result<Self> {
        let p = |name| spec.param(name);
        Ok(match spec.kind {
            SystemKind::Lorenz => FlowModel::Lorenz {
                sigma: p("sigma")?,
                rho: p("rho")?,
                beta: p("beta")?,
            },
            SystemKind::Rossler => FlowModel::Rossler {
                a: p("a")?,
                b: p("b")?,
                c: p("c")?,
            },
            SystemKind::VanDerPol => FlowModel::VanDerPol { mu: p("mu")? },
            SystemKind::Duffing => FlowModel::Duffing {
                delta: p("delta")?,
                alpha: p("alpha")?,
                beta: p("beta")?,
                gamma: p("gamma")?,
                omega: p("omega")?,
            },
            SystemKind::DoublePendulum => FlowModel::DoublePendulum {
                m1: p("m1")?,
                m2: p("m2")?,
                l1: p("l1")?,
                l2: p("l2")?,
                g: p("g")?,
            },
            other => {
                return Err(Error::config(format!("{other} is not a continuous-time flow")))
            }
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            FlowModel::Lorenz { .. } | FlowModel::Rossler { .. } => 3,
            FlowModel::VanDerPol { .. } | FlowModel::Duffing { .. } => 2,
            FlowModel::DoublePendulum { .. } => 4,
        }
    }

    pub fn deriv(&self, t: f64, x: &[f64], dx: &mut [f64]) {
        match *self {
            FlowModel::Lorenz { sigma, rho, beta } => {
                dx[0] = sigma * (x[1] - x[0]);
                dx[1] = x[0] * (rho - x[2]) - x[1];
                dx[2] = x[0] * x[1] - beta * x[2];
            }
            FlowModel::Rossler { a, b, c } => {
                dx[0] = -x[1] - x[2];
                dx[1] = x[0] + a * x[1];
                dx[2] = b + x[2] * (x[0] - c);
            }
            FlowModel::VanDerPol { mu } => {
                dx[0] = x[1];
                dx[1] = mu * (1.0 - x[0] * x[0]) * x[1] - x[0];
            }
            FlowModel::Duffing {
                delta,
                alpha,
                beta,
                gamma,
                omega,
            } => {
                dx[0] = x[1];
                dx[1] = -delta * x[1] - alpha * x[0] - beta * x[0].powi(3)
                    + gamma * (omega * t).cos();
            }
            FlowModel::DoublePendulum { m1, m2, l1, l2, g } => {
                let (th1, th2, w1, w2) = (x[0], x[1], x[2], x[3]);
                let d = th2 - th1;
                let (sd, cd) = d.sin_cos();
                let den1 = (m1 + m2) * l1 - m2 * l1 * cd * cd;
                let den2 = (l2 / l1) * den1;
                dx[0] = w1;
                dx[1] = w2;
                dx[2] = (m2 * l1 * w1 * w1 * sd * cd
                    + m2 * g * th2.sin() * cd
                    + m2 * l2 * w2 * w2 * sd
                    - (m1 + m2) * g * th1.sin())
                    / den1;
                dx[3] = (-m2 * l2 * w2 * w2 * sd * cd
                    + (m1 + m2) * (g * th1.sin() * cd - l1 * w1 * w1 * sd - g * th2.sin()))
                    / den2;
            }
        }
    }
}

/// Classical fourth-order Runge-Kutta with reusable stage buffers.
pub(crate) struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub(crate) fn new(dim: usize) -> Self {
        Rk4 {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    pub(crate) fn step(&mut self, flow: &FlowModel, t: f64, x: &mut [f64], h: f64) {
        let n = x.len();
        flow.deriv(t, x, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k1[i];
        }
        flow.deriv(t + 0.5 * h, &self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k2[i];
        }
        flow.deriv(t + 0.5 * h, &self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = x[i] + h * self.k3[i];
        }
        flow.deriv(t + h, &self.tmp, &mut self.k4);
        for i in 0..n {
            x[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

/// One RK4 step from `(t, x)`.
pub fn rk4_step(flow: &FlowModel, t: f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut out = x.to_vec();
    Rk4::new(x.len()).step(flow, t, &mut out, h);
    out
}

/// Discrete-time benchmark maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiscreteMap {
    Logistic { r: f64 },
    Henon { a: f64, b: f64 },
}

impl DiscreteMap {
    pub fn from_spec(spec: &SystemSpec) -> Result<Self> {
        match spec.kind {
            SystemKind::Logistic => Ok(DiscreteMap::Logistic { r: spec.param("r")? }),
            SystemKind::Henon => Ok(DiscreteMap::Henon {
                a: spec.param("a")?,
                b: spec.param("b")?,
            }),
            other => Err(Error::config(format!("{other} is not a discrete map"))),
        }
    }

    pub fn step(&self, state: &mut [f64]) {
        match *self {
            DiscreteMap::Logistic { r } => state[0] = r * state[0] * (1.0 - state[0]),
            DiscreteMap::Henon { a, b } => {
                let (x, y) = (state[0], state[1]);
                state[0] = 1.0 - a * x * x + y;
                state[1] = b * x;
            }
        }
    }

    fn escaped(&self, state: &[f64]) -> bool {
        match self {
            DiscreteMap::Logistic { .. } => !(0.0..=1.0).contains(&state[0]),
            DiscreteMap::Henon { .. } => state.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP),
        }
    }
}

/// States sampled at increasing times, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    pub times: Vec<f64>,
    pub data: Vec<f64>,
}

impl Trajectory {
    fn with_capacity(dim: usize, n: usize) -> Self {
        Trajectory {
            dim,
            times: Vec::with_capacity(n),
            data: Vec::with_capacity(n * dim),
        }
    }

    pub fn push(&mut self, t: f64, state: &[f64]) {
        debug_assert_eq!(state.len(), self.dim);
        self.times.push(t);
        self.data.extend_from_slice(state);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn component(&self, index: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(index).step_by(self.dim).copied()
    }

    pub fn duration(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }
}

fn blown_up(state: &[f64]) -> bool {
    state.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP)
}

/// Fixed-step RK4 over a 10%-style lead-in (discarded) followed by
/// `[0, total_time]`, recording every integrator step.
pub fn integrate_flow(spec: &SystemSpec) -> Result<Trajectory> {
    spec.validate()?;
    let flow = FlowModel::from_spec(spec)?;
    let h = spec.integrator_dt;
    let lead_steps = (spec.transient_fraction * spec.total_time / h).round() as usize;
    let main_steps = (spec.total_time / h - 1e-9).ceil() as usize;
    let lead = lead_steps as f64 * h;

    let mut x = spec.initial_state.clone();
    let mut rk = Rk4::new(flow.dim());
    for k in 0..lead_steps {
        rk.step(&flow, k as f64 * h, &mut x, h);
        if blown_up(&x) {
            return Err(Error::BlowUp {
                time: (k + 1) as f64 * h - lead,
            });
        }
    }

    let mut traj = Trajectory::with_capacity(flow.dim(), main_steps + 1);
    traj.push(0.0, &x);
    for k in 0..main_steps {
        rk.step(&flow, lead + k as f64 * h, &mut x, h);
        let t = (k + 1) as f64 * h;
        if blown_up(&x) {
            return Err(Error::BlowUp { time: t });
        }
        traj.push(t, &x);
    }
    Ok(traj)
}

/// Iterates a map through its lead-in and then records `n_samples` states.
pub fn iterate_map(spec: &SystemSpec) -> Result<Trajectory> {
    spec.validate()?;
    let map = DiscreteMap::from_spec(spec)?;
    if let DiscreteMap::Logistic { .. } = map {
        let x0 = spec.initial_state[0];
        if !(x0 > 0.0 && x0 < 1.0) {
            return Err(Error::config("logistic initial state must lie in (0, 1)"));
        }
    }
    let lead = (spec.transient_fraction * spec.n_samples as f64).round() as usize;
    let mut state = spec.initial_state.clone();
    for step in 0..lead {
        map.step(&mut state);
        if map.escaped(&state) {
            return Err(Error::MapDivergence { step: step + 1 });
        }
    }
    let mut traj = Trajectory::with_capacity(state.len(), spec.n_samples);
    traj.push(0.0, &state);
    for i in 1..spec.n_samples {
        map.step(&mut state);
        if map.escaped(&state) {
            return Err(Error::MapDivergence { step: lead + i });
        }
        traj.push(i as f64, &state);
    }
    Ok(traj)
}

/// Euler-stepped Mackey-Glass with a ring buffer holding one delay of history.
#[derive(Debug, Clone)]
pub(crate) struct MackeyGlass {
    beta: f64,
    gamma: f64,
    power: f64,
    h: f64,
    /// `ring[pos]` is the value one delay in the past.
    ring: Vec<f64>,
    pos: usize,
    x: f64,
}

impl MackeyGlass {
    pub(crate) fn from_spec(spec: &SystemSpec) -> Result<Self> {
        if spec.kind != SystemKind::MackeyGlass {
            return Err(Error::config(format!("{} is not Mackey-Glass", spec.kind)));
        }
        let tau = spec.param("tau")?;
        let h = spec.integrator_dt;
        if !(tau > 0.0) {
            return Err(Error::config("Mackey-Glass delay must be positive"));
        }
        let ratio = tau / h;
        let len = ratio.round();
        if len < 1.0 || (ratio - len).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::config(format!(
                "Euler substep {h} does not divide the delay {tau}"
            )));
        }
        let c = spec.initial_state[0];
        Ok(MackeyGlass {
            beta: spec.param("beta")?,
            gamma: spec.param("gamma")?,
            power: spec.param("n")?,
            h,
            ring: vec![c; len as usize],
            pos: 0,
            x: c,
        })
    }

    pub(crate) fn step(&mut self) {
        let delayed = self.ring[self.pos];
        let drive = self.beta * delayed / (1.0 + delayed.powf(self.power));
        let next = self.x + self.h * (drive - self.gamma * self.x);
        self.ring[self.pos] = self.x;
        self.pos = (self.pos + 1) % self.ring.len();
        self.x = next;
    }

    pub(crate) fn value(&self) -> f64 {
        self.x
    }

    /// Squared distance between two delay states advanced in lockstep.
    pub(crate) fn distance_sq(&self, other: &MackeyGlass) -> f64 {
        let d0 = self.x - other.x;
        d0 * d0
            + self
                .ring
                .iter()
                .zip(&other.ring)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
    }

    /// Moves `other` to `self + scale * (other - self)` across the whole delay state.
    pub(crate) fn rescale_towards(&self, other: &mut MackeyGlass, scale: f64) {
        other.x = self.x + scale * (other.x - self.x);
        for (o, s) in other.ring.iter_mut().zip(&self.ring) {
            *o = s + scale * (*o - s);
        }
    }

    pub(crate) fn perturb(&mut self, eps: f64) {
        self.x += eps;
    }

    pub(crate) fn diverged(&self) -> bool {
        !self.x.is_finite() || self.x.abs() > BLOW_UP
    }
}

/// Mackey-Glass with constant pre-history, recording every Euler substep
/// after the lead-in.
pub fn integrate_mackey_glass(spec: &SystemSpec) -> Result<Trajectory> {
    spec.validate()?;
    let mut mg = MackeyGlass::from_spec(spec)?;
    let h = spec.integrator_dt;
    let lead_steps = (spec.transient_fraction * spec.total_time / h).round() as usize;
    let main_steps = (spec.total_time / h - 1e-9).ceil() as usize;
    let lead = lead_steps as f64 * h;
    for k in 0..lead_steps {
        mg.step();
        if mg.diverged() {
            return Err(Error::BlowUp {
                time: (k + 1) as f64 * h - lead,
            });
        }
    }
    let mut traj = Trajectory::with_capacity(1, main_steps + 1);
    traj.push(0.0, &[mg.value()]);
    for k in 0..main_steps {
        mg.step();
        let t = (k + 1) as f64 * h;
        if mg.diverged() {
            return Err(Error::BlowUp { time: t });
        }
        traj.push(t, &[mg.value()]);
    }
    Ok(traj)
}

/// Dispatches to the integrator matching the system kind.
pub(crate) fn simulate(spec: &SystemSpec) -> Result<Trajectory> {
    match spec.kind {
        k if k.is_flow() => integrate_flow(spec),
        k if k.is_map() => iterate_map(spec),
        _ => integrate_mackey_glass(spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lorenz_origin_is_fixed_point() {
        let flow = FlowModel::from_spec(&SystemSpec::standard(SystemKind::Lorenz)).unwrap();
        let mut dx = [1.0; 3];
        flow.deriv(0.0, &[0.0; 3], &mut dx);
        assert_eq!(dx, [0.0; 3]);

        let mut spec = SystemSpec::standard(SystemKind::Lorenz).with_samples(200);
        spec.initial_state = vec![0.0; 3];
        let traj = integrate_flow(&spec).unwrap();
        assert!(traj.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn van_der_pol_settles_on_bounded_cycle() {
        let spec = SystemSpec::standard(SystemKind::VanDerPol).with_samples(1000);
        let traj = integrate_flow(&spec).unwrap();
        let tail = traj.len() / 2;
        let max = traj.component(0).skip(tail).fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 3.0 && max > 1.5, "max |x| = {max}");
    }

    #[test]
    fn van_der_pol_matches_fine_reference() {
        // fine-step RK4 reference with dt = 1e-4 over a short window
        let mut spec = SystemSpec::standard(SystemKind::VanDerPol).with_samples(50);
        spec.transient_fraction = 0.0;
        let traj = integrate_flow(&spec).unwrap();
        let flow = FlowModel::from_spec(&spec).unwrap();
        let mut x = spec.initial_state.clone();
        let mut rk = Rk4::new(2);
        let h = 1e-4;
        let steps = (spec.total_time / h).round() as usize;
        for k in 0..steps {
            rk.step(&flow, k as f64 * h, &mut x, h);
        }
        let last = traj.state(traj.len() - 1);
        assert!((traj.times[traj.len() - 1] - spec.total_time).abs() < 1e-9);
        assert!((last[0] - x[0]).abs() < 1e-5, "{} vs {}", last[0], x[0]);
        assert!(traj.component(0).all(|v| v.abs() < 3.0));
    }

    #[test]
    fn rk4_error_drops_sixteenfold() {
        let flow = FlowModel::from_spec(&SystemSpec::standard(SystemKind::Lorenz)).unwrap();
        let x0 = [1.0, 1.0, 1.0];
        let t_end = 0.05;
        let run = |h: f64| {
            let mut x = x0.to_vec();
            let mut rk = Rk4::new(3);
            let n = (t_end / h).round() as usize;
            for k in 0..n {
                rk.step(&flow, k as f64 * h, &mut x, h);
            }
            x
        };
        let reference = run(t_end / 4096.0);
        let err = |h: f64| {
            run(h)
                .iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(t_end / 8.0) / err(t_end / 16.0);
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn logistic_hits_one_then_zero() {
        let map = DiscreteMap::Logistic { r: 4.0 };
        let mut s = [0.5];
        map.step(&mut s);
        assert_eq!(s[0], 1.0);
        map.step(&mut s);
        assert_eq!(s[0], 0.0);
    }

    #[test]
    fn henon_from_origin() {
        let map = DiscreteMap::Henon { a: 1.4, b: 0.3 };
        let mut s = [0.0, 0.0];
        map.step(&mut s);
        assert_eq!(s, [1.0, 0.0]);
    }

    #[test]
    fn logistic_stays_in_unit_interval() {
        let traj = iterate_map(&SystemSpec::standard(SystemKind::Logistic)).unwrap();
        assert_eq!(traj.len(), 7500);
        assert!(traj.component(0).all(|v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn logistic_rejects_bad_start() {
        let mut spec = SystemSpec::standard(SystemKind::Logistic);
        spec.initial_state = vec![1.5];
        assert!(matches!(iterate_map(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn logistic_escape_is_reported() {
        let mut spec = SystemSpec::standard(SystemKind::Logistic);
        spec.params.insert("r".into(), 4.5);
        assert!(matches!(iterate_map(&spec), Err(Error::MapDivergence { .. })));
    }

    #[test]
    fn flow_blow_up_is_reported() {
        // Lorenz with a large negative beta runs away exponentially
        let mut spec = SystemSpec::standard(SystemKind::Lorenz).with_samples(2000);
        spec.params.insert("beta".into(), -5.0);
        match integrate_flow(&spec) {
            Err(Error::BlowUp { time }) => assert!(time.is_finite()),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn mackey_glass_pure_decay() {
        let mut spec = SystemSpec::standard(SystemKind::MackeyGlass).with_samples(50);
        spec.params.insert("beta".into(), 0.0);
        spec.initial_state = vec![1.0];
        spec.transient_fraction = 0.0;
        let traj = integrate_mackey_glass(&spec).unwrap();
        for (t, x) in traj.times.iter().zip(traj.component(0)) {
            let exact = (-0.1 * t).exp();
            // (1 - 0.01)^k vs exp(-0.01 k): relative gap grows like 5e-4 t
            assert!((x - exact).abs() <= 1e-3 * t * exact + 1e-15, "t={t}");
        }
    }

    #[test]
    fn mackey_glass_fixed_point_history() {
        // beta c / (1 + c^n) = gamma c holds at c = 1 for beta = 2 gamma
        let mut spec = SystemSpec::standard(SystemKind::MackeyGlass).with_samples(200);
        spec.initial_state = vec![1.0];
        let traj = integrate_mackey_glass(&spec).unwrap();
        assert!(traj.component(0).all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn mackey_glass_requires_integral_buffer() {
        let mut spec = SystemSpec::standard(SystemKind::MackeyGlass);
        spec.integrator_dt = 0.3;
        assert!(matches!(integrate_mackey_glass(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn double_pendulum_upper_arm_cannot_flip() {
        let spec = SystemSpec::standard(SystemKind::DoublePendulum).with_samples(1500);
        let traj = integrate_flow(&spec).unwrap();
        assert!(traj.component(0).all(|v| v.abs() < std::f64::consts::PI));
    }
}
