//! Synthetic dynamics: Genz difference maps and the Lorenz system.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sequence;
use crate::error::{Error, Result};
use crate::par::{self, Exec};

/// The six Genz test functions, used as `x(t+1) = g(x(t))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenzKind {
    #[serde(alias = "g1")]
    Oscillatory,
    #[serde(alias = "g2")]
    ProductPeak,
    #[serde(alias = "g3")]
    CornerPeak,
    #[serde(alias = "g4")]
    Gaussian,
    #[serde(alias = "g5")]
    Continuous,
    #[serde(alias = "g6")]
    Discontinuous,
}

impl GenzKind {
    pub const ALL: [GenzKind; 6] = [
        GenzKind::Oscillatory,
        GenzKind::ProductPeak,
        GenzKind::CornerPeak,
        GenzKind::Gaussian,
        GenzKind::Continuous,
        GenzKind::Discontinuous,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GenzKind::Oscillatory => "oscillatory",
            GenzKind::ProductPeak => "product_peak",
            GenzKind::CornerPeak => "corner_peak",
            GenzKind::Gaussian => "gaussian",
            GenzKind::Continuous => "continuous",
            GenzKind::Discontinuous => "discontinuous",
        }
    }
}

impl fmt::Display for GenzKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GenzKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let alias = match s {
            "g1" => Some(GenzKind::Oscillatory),
            "g2" => Some(GenzKind::ProductPeak),
            "g3" => Some(GenzKind::CornerPeak),
            "g4" => Some(GenzKind::Gaussian),
            "g5" => Some(GenzKind::Continuous),
            "g6" => Some(GenzKind::Discontinuous),
            _ => None,
        };
        alias
            .or_else(|| GenzKind::ALL.into_iter().find(|k| k.name() == s))
            .ok_or_else(|| Error::Config(format!("unknown Genz function {s:?}")))
    }
}

/// One application of the selected Genz map.
///
/// Product peak uses `(c⁻² + (x + w)²)⁻¹`.
pub fn genz_step(kind: GenzKind, w: f64, c: f64, x: f64) -> Result<f64> {
    use std::f64::consts::PI;
    if !x.is_finite() {
        return Err(Error::Data(format!("non-finite Genz state {x}")));
    }
    let next = match kind {
        GenzKind::Oscillatory => (2.0 * PI * w + c * x).cos(),
        GenzKind::ProductPeak => {
            if c == 0.0 {
                return Err(Error::Data("product peak undefined for c = 0".into()));
            }
            1.0 / (c.powi(-2) + (x + w).powi(2))
        }
        GenzKind::CornerPeak => {
            let base = 1.0 + c * x;
            if base == 0.0 {
                return Err(Error::Data(format!("corner peak singular at x = {x}")));
            }
            base.powi(-2)
        }
        GenzKind::Gaussian => (-(c * c) * PI * (x - w).powi(2)).exp(),
        GenzKind::Continuous => (-(c * c) * PI * (x - w).abs()).exp(),
        GenzKind::Discontinuous => {
            if x > w {
                0.0
            } else {
                (c * x).exp()
            }
        }
    };
    Ok(next)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenzSpec {
    pub kind: GenzKind,
    #[serde(default = "half")]
    pub w: f64,
    #[serde(default = "unit")]
    pub c: f64,
    #[serde(default = "ten_thousand")]
    pub n_samples: usize,
    #[serde(default = "hundred")]
    pub seq_len: usize,
    #[serde(default = "small_range")]
    pub init_range: [f64; 2],
    /// Independent channels stacked per time step.
    #[serde(default = "one")]
    pub channels: usize,
}

fn half() -> f64 {
    0.5
}
fn unit() -> f64 {
    1.0
}
fn ten_thousand() -> usize {
    10_000
}
fn hundred() -> usize {
    100
}
fn one() -> usize {
    1
}
fn small_range() -> [f64; 2] {
    [-0.1, 0.1]
}

impl GenzSpec {
    /// 10 000 sequences of 100 steps, `w = 0.5`, `c = 1`, starts in `[-0.1, 0.1]`.
    pub fn standard(kind: GenzKind) -> Self {
        GenzSpec {
            kind,
            w: half(),
            c: unit(),
            n_samples: ten_thousand(),
            seq_len: hundred(),
            init_range: small_range(),
            channels: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.w) || !(0.0..=1.0).contains(&self.c) {
            return Err(Error::Config(format!("w and c must lie in [0, 1]: w={}, c={}", self.w, self.c)));
        }
        if self.n_samples == 0 || self.seq_len == 0 || self.channels == 0 {
            return Err(Error::Config("Genz dataset sizes must be positive".into()));
        }
        if self.init_range[0] > self.init_range[1] {
            return Err(Error::Config("init_range must be [lo, hi]".into()));
        }
        Ok(())
    }
}

/// Independent RNG stream per sequence index.
pub(crate) fn stream_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..=range[1])
    }
}

pub fn gen_genz_dataset(spec: &GenzSpec, seed: u64, exec: Exec) -> Result<Vec<Sequence>> {
    spec.validate()?;
    let seqs = par::map_range(exec, spec.n_samples, |i| -> Result<Sequence> {
        let mut rng = stream_rng(seed, i);
        let mut x: Vec<f64> = (0..spec.channels).map(|_| uniform(&mut rng, spec.init_range)).collect();
        let mut seq = Vec::with_capacity(spec.seq_len);
        for _ in 0..spec.seq_len {
            seq.push(x.clone());
            for v in x.iter_mut() {
                *v = genz_step(spec.kind, spec.w, spec.c, *v)?;
            }
        }
        Ok(seq)
    });
    seqs.into_iter().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorenzSpec {
    #[serde(default = "sigma")]
    pub sigma: f64,
    #[serde(default = "rho")]
    pub rho: f64,
    #[serde(default = "beta")]
    pub beta: f64,
    #[serde(default = "dt")]
    pub dt: f64,
    #[serde(default = "ten_thousand")]
    pub n_traj: usize,
    #[serde(default = "small_range")]
    pub init_range: [f64; 2],
    /// Arc length between retained samples.
    #[serde(default = "ten")]
    pub resample_distance: f64,
    /// Retained samples per trajectory.
    #[serde(default = "fifty")]
    pub n_points: usize,
    /// Integration steps before giving up on reaching `n_points`.
    #[serde(default = "max_steps")]
    pub max_steps: usize,
}

fn sigma() -> f64 {
    10.0
}
fn rho() -> f64 {
    28.0
}
fn beta() -> f64 {
    2.667
}
fn dt() -> f64 {
    0.01
}
fn ten() -> f64 {
    10.0
}
fn fifty() -> usize {
    50
}
fn max_steps() -> usize {
    200_000
}

impl Default for LorenzSpec {
    fn default() -> Self {
        LorenzSpec {
            sigma: sigma(),
            rho: rho(),
            beta: beta(),
            dt: dt(),
            n_traj: ten_thousand(),
            init_range: small_range(),
            resample_distance: ten(),
            n_points: fifty(),
            max_steps: max_steps(),
        }
    }
}

impl LorenzSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.n_traj == 0 || self.n_points == 0 {
            return Err(Error::Config("Lorenz spec needs dt > 0, n_traj ≥ 1, n_points ≥ 1".into()));
        }
        if !(self.resample_distance > 0.0) {
            return Err(Error::Config("resample_distance must be positive".into()));
        }
        Ok(())
    }

    pub fn derivative(&self, s: [f64; 3]) -> [f64; 3] {
        let [x, y, z] = s;
        [
            self.sigma * (y - x),
            x * (self.rho - z) - y,
            x * y - self.beta * z,
        ]
    }

    /// One classical fourth-order Runge-Kutta step of size `h`.
    pub fn rk4_step(&self, s: [f64; 3], h: f64) -> [f64; 3] {
        let add = |a: [f64; 3], b: [f64; 3], k: f64| [a[0] + k * b[0], a[1] + k * b[1], a[2] + k * b[2]];
        let k1 = self.derivative(s);
        let k2 = self.derivative(add(s, k1, h / 2.0));
        let k3 = self.derivative(add(s, k2, h / 2.0));
        let k4 = self.derivative(add(s, k3, h));
        let mut out = s;
        for i in 0..3 {
            out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out
    }

    /// `steps` RK4 steps of size `dt`, including the initial point.
    pub fn integrate_raw(&self, x0: [f64; 3], steps: usize) -> Result<Vec<[f64; 3]>> {
        let mut out = Vec::with_capacity(steps + 1);
        let mut s = x0;
        out.push(s);
        for _ in 0..steps {
            s = self.rk4_step(s, self.dt);
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data("Lorenz trajectory diverged".into()));
            }
            out.push(s);
        }
        Ok(out)
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Resampled Lorenz trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub points: Vec<[f64; 3]>,
    /// Integration step index of each retained point.
    pub step_index: Vec<usize>,
    /// Largest single integration segment encountered.
    pub max_segment: f64,
}

/// Integrates with RK4 and keeps the first integration point once the arc
/// length travelled since the previous retained point reaches
/// `resample_distance`. Stops after `n_points` retained points.
pub fn lorenz_integrate(spec: &LorenzSpec, x0: [f64; 3]) -> Result<Trajectory> {
    spec.validate()?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite Lorenz initial state".into()));
    }
    let mut points = Vec::with_capacity(spec.n_points);
    let mut step_index = Vec::with_capacity(spec.n_points);
    let mut s = x0;
    let mut arc = 0.0;
    let mut max_segment: f64 = 0.0;
    for step in 1..=spec.max_steps {
        let next = spec.rk4_step(s, spec.dt);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("Lorenz trajectory diverged at step {step}")));
        }
        let seg = dist(s, next);
        max_segment = max_segment.max(seg);
        arc += seg;
        s = next;
        if arc >= spec.resample_distance {
            points.push(s);
            step_index.push(step);
            arc = 0.0;
            if points.len() == spec.n_points {
                return Ok(Trajectory {
                    points,
                    step_index,
                    max_segment,
                });
            }
        }
    }
    Err(Error::Data(format!(
        "only {} of {} resampled points within {} steps",
        points.len(),
        spec.n_points,
        spec.max_steps
    )))
}

pub fn gen_lorenz_dataset(spec: &LorenzSpec, seed: u64, exec: Exec) -> Result<Vec<Sequence>> {
    spec.validate()?;
    let seqs = par::map_range(exec, spec.n_traj, |i| -> Result<Sequence> {
        let mut rng = stream_rng(seed, i);
        let x0 = [
            uniform(&mut rng, spec.init_range),
            uniform(&mut rng, spec.init_range),
            uniform(&mut rng, spec.init_range),
        ];
        let traj = lorenz_integrate(spec, x0)?;
        Ok(traj.points.iter().map(|p| p.to_vec()).collect())
    });
    seqs.into_iter().collect()
}
