//! Causality maps between feature maps and the causality factors derived
//! from them.
//!
//! A [`FeatureStack`] holds `k` non-negative `n x n` activation maps. After
//! dividing by the global maximum, each value reads as the probability that
//! a feature is present at a location, and a [`CausalityMap`] entry `(i, j)`
//! estimates `P(F_i | F_j)`:
//!
//! * **Max**: `max(F_i) * max(F_j) / sum(F_j)`.
//! * **Lehmer**: `LM_p(F_i x F_j) / LM_p(F_j)`, where `F_i x F_j` is the
//!   vector of all `n^4` pairwise products and `LM_p(x) = sum x^(p+1) / sum x^p`.
//!
//! Because the power sums of a pairwise-product vector factor into products
//! of per-map power sums, `LM_p(F_i x F_j) = LM_p(F_i) * LM_p(F_j)`. The
//! Lehmer map is therefore constant down each column and equal to the
//! per-map Lehmer mean of the row feature. It is evaluated in that form.
//!
//! Feature `i` is counted as a cause of `j` when `P(F_i|F_j) > P(F_j|F_i)`;
//! [`extract_factors`] turns those counts into per-map weights.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};
use crate::textfmt;

/// Lower clamp applied before raising activations to a Lehmer power.
pub const LEHMER_EPS: f64 = 1e-8;

/// Lehmer powers evaluated in the reference experiments.
pub const LEHMER_P_GRID: [f64; 6] = [-100.0, -2.0, -1.0, 0.0, 1.0, 100.0];

/// `k` non-negative `n x n` feature maps, stored row-major as `[k, n, n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack {
    k: usize,
    n: usize,
    values: Vec<f32>,
}

impl FeatureStack {
    pub fn new(k: usize, n: usize, values: Vec<f32>) -> Result<Self> {
        if k == 0 || n == 0 {
            return Err(Error::shape("feature_stack", format!("k={k}, n={n} must be >= 1")));
        }
        if values.len() != k * n * n {
            return Err(Error::shape(
                "feature_stack",
                format!("[{k},{n},{n}] needs {} values, got {}", k * n * n, values.len()),
            ));
        }
        if let Some(bad) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!(
                "feature stack values must be finite and non-negative (post-ReLU), found {bad}"
            )));
        }
        Ok(FeatureStack { k, n, values })
    }

    /// Reads a rank-3 `[k, n, n]` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            &[k, h, w] if h == w => Self::new(k, h, t.data().to_vec()),
            s => Err(Error::shape("feature_stack", format!("expected [k,n,n], got {s:?}"))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![self.k, self.n, self.n], self.values.clone())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Values of map `i`, flattened.
    pub fn map(&self, i: usize) -> &[f32] {
        let area = self.n * self.n;
        &self.values[i * area..(i + 1) * area]
    }

    pub fn global_max(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }
}

/// Divides every activation by the maximum over all maps. An all-zero stack
/// is returned unchanged.
pub fn normalize_stack(f: &FeatureStack) -> FeatureStack {
    let max = f.global_max();
    if max == 0.0 {
        return f.clone();
    }
    let values = f.values.iter().map(|&v| (v as f64 / max as f64) as f32).collect();
    FeatureStack {
        k: f.k,
        n: f.n,
        values,
    }
}

/// `k x k` matrix whose entry `(i, j)` estimates `P(F_i | F_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CausalityMap {
    k: usize,
    entries: Vec<f32>,
}

impl CausalityMap {
    pub fn new(k: usize, entries: Vec<f32>) -> Result<Self> {
        if k == 0 || entries.len() != k * k {
            return Err(Error::shape(
                "causality_map",
                format!("map must be square with k >= 1: k={k}, {} entries", entries.len()),
            ));
        }
        Ok(CausalityMap { k, entries })
    }

    /// Builds a map from rows, rejecting ragged or non-square input.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let k = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != k) {
            return Err(Error::shape(
                "causality_map",
                format!("non-square map: {k} rows but a row has {} columns", r.len()),
            ));
        }
        Self::new(k, rows.concat())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.entries[i * self.k + j]
    }

    pub fn entries(&self) -> &[f32] {
        &self.entries
    }

    pub fn transpose(&self) -> CausalityMap {
        let k = self.k;
        let entries = (0..k * k).map(|idx| self.get(idx % k, idx / k)).collect();
        CausalityMap { k, entries }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![self.k, self.k], self.entries.clone())
    }

    /// One line per row `i` (conditioned feature), `k` comma-separated values.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.k {
            let row = &self.entries[i * self.k..(i + 1) * self.k];
            out.push_str(&textfmt::format_row(row.iter().map(|&v| v as f64)));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows = textfmt::parse_rows(text).map_err(|detail| Error::Format {
            format: "CSV",
            field: "cell",
            detail,
        })?;
        let rows: Vec<Vec<f32>> = rows
            .into_iter()
            .map(|r| r.into_iter().map(|v| v as f32).collect())
            .collect();
        Self::from_rows(&rows)
    }
}

/// Per-feature-map weights produced by [`extract_factors`] or
/// [`damaged_factors`].
#[derive(Clone, Debug, PartialEq)]
pub struct FactorVector {
    weights: Vec<f32>,
}

impl FactorVector {
    pub fn new(weights: Vec<f32>) -> Self {
        FactorVector { weights }
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = textfmt::format_row(self.weights.iter().map(|&v| v as f64));
        s.push('\n');
        s
    }
}

/// Conditional-probability estimator used to fill the map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Estimator {
    Max,
    Lehmer { p: f64 },
}

impl Estimator {
    pub fn validate(&self) -> Result<()> {
        match self {
            Estimator::Lehmer { p } if !p.is_finite() => {
                Err(Error::invalid(format!("Lehmer power must be finite, got {p}")))
            }
            _ => Ok(()),
        }
    }
}

/// Whether factors favor maps that mostly cause or mostly are caused.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Causes,
    Effects,
}

/// `Full` keeps integer counts, `Bool` thresholds them to `{0, 1}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Full,
    Bool,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Causes => "causes",
            Direction::Effects => "effects",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causes" => Ok(Direction::Causes),
            "effects" => Ok(Direction::Effects),
            _ => Err(Error::invalid(format!("direction must be causes|effects, got {s:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Full => "full",
            Mode::Bool => "bool",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "bool" => Ok(Mode::Bool),
            _ => Err(Error::invalid(format!("mode must be full|bool, got {s:?}"))),
        }
    }
}

/// Generalized Lehmer mean `sum x^(p+1) / sum x^p` of strictly positive values.
///
/// The vector is rescaled by its maximum (p >= 0) or minimum (p < 0) first,
/// so every `x^p` term lies in `(0, 1]` and `|p|` up to 100 neither
/// overflows nor underflows to a zero denominator.
pub fn lehmer_mean(x: &[f64], p: f64) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::invalid("Lehmer mean of an empty vector"));
    }
    if !p.is_finite() {
        return Err(Error::invalid(format!("Lehmer power must be finite, got {p}")));
    }
    if let Some(bad) = x.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!(
            "Lehmer mean needs strictly positive finite values, found {bad}"
        )));
    }
    Ok(LehmerParts::compute(x, p).mean)
}

/// Scaled power sums behind one Lehmer mean, kept for the gradient.
struct LehmerParts {
    scale: f64,
    /// `sum u^p` with `u = x / scale`
    pow_sum: f64,
    mean: f64,
}

impl LehmerParts {
    fn compute(x: &[f64], p: f64) -> Self {
        let scale = if p >= 0.0 {
            x.iter().copied().fold(f64::MIN_POSITIVE, f64::max)
        } else {
            x.iter().copied().fold(f64::INFINITY, f64::min)
        };
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for &v in x {
            let u = v / scale;
            let up = u.powf(p);
            den += up;
            num += up * u;
        }
        let mean_scaled = num / den;
        LehmerParts {
            scale,
            pow_sum: den,
            mean: scale * mean_scaled,
        }
    }

    /// `d LM_p / d x_e`, invariant to the rescaling.
    fn grad(&self, x: f64, p: f64) -> f64 {
        let u = x / self.scale;
        let up = u.powf(p);
        let lm_scaled = self.mean / self.scale;
        let second = if p == 0.0 { 0.0 } else { p * (up / u) * lm_scaled };
        ((p + 1.0) * up - second) / self.pow_sum
    }
}

/// Max-method map of a normalized stack. Columns whose conditioning map sums
/// to zero are left at zero.
pub fn causality_map_max(f: &FeatureStack) -> CausalityMap {
    MaxTrace::compute(f.k, f.n * f.n, &f.values).map
}

/// Lehmer-method map of a normalized stack, with values clamped below at
/// [`LEHMER_EPS`] before powering.
pub fn causality_map_lehmer(f: &FeatureStack, p: f64) -> Result<CausalityMap> {
    Estimator::Lehmer { p }.validate()?;
    Ok(LehmerTrace::compute(f.k, f.n * f.n, &f.values, p).map)
}

/// Normalizes `f` and applies the chosen estimator.
pub fn causality_map(f: &FeatureStack, estimator: Estimator) -> Result<CausalityMap> {
    let normalized = normalize_stack(f);
    match estimator {
        Estimator::Max => Ok(causality_map_max(&normalized)),
        Estimator::Lehmer { p } => causality_map_lehmer(&normalized, p),
    }
}

struct MaxTrace {
    map: CausalityMap,
    /// Per-map maximum and the flat stack index where it was found.
    maxima: Vec<(f64, usize)>,
    sums: Vec<f64>,
}

impl MaxTrace {
    fn compute(k: usize, area: usize, values: &[f32]) -> Self {
        let mut maxima = Vec::with_capacity(k);
        let mut sums = Vec::with_capacity(k);
        for i in 0..k {
            let slice = &values[i * area..(i + 1) * area];
            let mut best = (slice[0] as f64, i * area);
            for (e, &v) in slice.iter().enumerate().skip(1) {
                if (v as f64) > best.0 {
                    best = (v as f64, i * area + e);
                }
            }
            maxima.push(best);
            sums.push(slice.iter().map(|&v| v as f64).sum::<f64>());
        }
        let mut entries = vec![0.0f32; k * k];
        for i in 0..k {
            for j in 0..k {
                if sums[j] > 0.0 {
                    entries[i * k + j] = (maxima[i].0 * maxima[j].0 / sums[j]) as f32;
                }
            }
        }
        MaxTrace {
            map: CausalityMap { k, entries },
            maxima,
            sums,
        }
    }

    fn vjp(&self, area: usize, upstream: &[f32]) -> Vec<f64> {
        let k = self.map.k;
        let mut d_max = vec![0.0f64; k];
        let mut d_sum = vec![0.0f64; k];
        for i in 0..k {
            for j in 0..k {
                let s = self.sums[j];
                if s <= 0.0 {
                    continue;
                }
                let g = upstream[i * k + j] as f64;
                let (mi, mj) = (self.maxima[i].0, self.maxima[j].0);
                d_max[i] += g * mj / s;
                d_max[j] += g * mi / s;
                d_sum[j] -= g * mi * mj / (s * s);
            }
        }
        let mut grad = vec![0.0f64; k * area];
        for j in 0..k {
            grad[j * area..(j + 1) * area].iter_mut().for_each(|v| *v = d_sum[j]);
        }
        for i in 0..k {
            grad[self.maxima[i].1] += d_max[i];
        }
        grad
    }
}

struct LehmerTrace {
    map: CausalityMap,
    p: f64,
    clamped: Vec<f64>,
    parts: Vec<LehmerParts>,
}

impl LehmerTrace {
    fn compute(k: usize, area: usize, values: &[f32], p: f64) -> Self {
        let clamped: Vec<f64> = values.iter().map(|&v| (v as f64).max(LEHMER_EPS)).collect();
        let parts: Vec<LehmerParts> = clamped
            .chunks(area)
            .map(|c| LehmerParts::compute(c, p))
            .collect();
        // LM_p(F_i x F_j) / LM_p(F_j) = LM_p(F_i) for every conditioning j
        let entries = (0..k * k).map(|idx| parts[idx / k].mean as f32).collect();
        LehmerTrace {
            map: CausalityMap { k, entries },
            p,
            clamped,
            parts,
        }
    }

    fn vjp(&self, area: usize, values: &[f32], upstream: &[f32]) -> Vec<f64> {
        let k = self.map.k;
        let mut grad = vec![0.0f64; k * area];
        for i in 0..k {
            let d_mean: f64 = upstream[i * k..(i + 1) * k].iter().map(|&g| g as f64).sum();
            for e in i * area..(i + 1) * area {
                // the clamp is flat below epsilon
                if (values[e] as f64) >= LEHMER_EPS {
                    grad[e] = d_mean * self.parts[i].grad(self.clamped[e], self.p);
                }
            }
        }
        grad
    }
}

/// Differentiable causality map of a `[k, n, n]` stack on `tape`, including
/// the global-max normalization.
pub fn causality_map_on_tape(tape: &mut Tape, stack: Var, estimator: Estimator) -> Result<Var> {
    estimator.validate()?;
    let x = tape.value(stack);
    let (k, area) = match x.shape() {
        &[k, h, w] if h == w && k > 0 && h > 0 => (k, h * w),
        s => return Err(Error::shape("causality_map", format!("expected [k,n,n], got {s:?}"))),
    };
    let raw = x.data().to_vec();
    let (gmax, gidx) = raw
        .iter()
        .enumerate()
        .fold((0.0f32, 0usize), |best, (e, &v)| if v > best.0 { (v, e) } else { best });
    let normalized: Vec<f32> = if gmax > 0.0 {
        raw.iter().map(|&v| (v as f64 / gmax as f64) as f32).collect()
    } else {
        raw.clone()
    };

    let norm_vjp = move |g_norm: Vec<f64>| -> Vec<f32> {
        if gmax <= 0.0 {
            return g_norm.into_iter().map(|v| v as f32).collect();
        }
        let m = gmax as f64;
        let cross: f64 = g_norm.iter().zip(&raw).map(|(g, &x)| g * x as f64).sum();
        let mut out: Vec<f64> = g_norm.iter().map(|g| g / m).collect();
        out[gidx] -= cross / (m * m);
        out.into_iter().map(|v| v as f32).collect()
    };

    let var = match estimator {
        Estimator::Max => {
            let trace = MaxTrace::compute(k, area, &normalized);
            let value = trace.map.to_tensor();
            tape.custom(
                &[stack],
                value,
                Box::new(move |g| vec![norm_vjp(trace.vjp(area, g))]),
            )
        }
        Estimator::Lehmer { p } => {
            let trace = LehmerTrace::compute(k, area, &normalized, p);
            let value = trace.map.to_tensor();
            tape.custom(
                &[stack],
                value,
                Box::new(move |g| vec![norm_vjp(trace.vjp(area, &normalized, g))]),
            )
        }
    };
    Ok(var)
}

/// Per-map cause and effect counts. Ties count for neither side.
pub fn cause_effect_counts(c: &CausalityMap) -> (Vec<u32>, Vec<u32>) {
    let k = c.k;
    let mut causes = vec![0u32; k];
    let mut effects = vec![0u32; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let (ij, ji) = (c.get(i, j), c.get(j, i));
            if ij > ji {
                causes[i] += 1;
                effects[j] += 1;
            } else if ji > ij {
                causes[j] += 1;
                effects[i] += 1;
            }
        }
    }
    (causes, effects)
}

/// Causality factors: `relu(causes - effects)` for [`Direction::Causes`],
/// `relu(effects - causes)` for [`Direction::Effects`], optionally
/// thresholded to `{0, 1}`.
pub fn extract_factors(c: &CausalityMap, direction: Direction, mode: Mode) -> FactorVector {
    let (causes, effects) = cause_effect_counts(c);
    let weights = causes
        .iter()
        .zip(&effects)
        .map(|(&ca, &ef)| {
            let diff = match direction {
                Direction::Causes => ca as i64 - ef as i64,
                Direction::Effects => ef as i64 - ca as i64,
            };
            let w = diff.max(0);
            match mode {
                Mode::Full => w as f32,
                Mode::Bool => (w > 0) as u8 as f32,
            }
        })
        .collect();
    FactorVector { weights }
}

fn draw_rng(seed: u64, draw: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw);
    rng
}

/// Random map with entries uniform on `[0, 1)`. The pair `(seed, draw)`
/// fully determines the result; callers advance `draw` on every forward pass.
pub fn damaged_map(k: usize, seed: u64, draw: u64) -> Result<CausalityMap> {
    if k == 0 {
        return Err(Error::invalid("damaged map needs k >= 1"));
    }
    let mut rng = draw_rng(seed, draw);
    let entries = (0..k * k).map(|_| rng.random::<f32>()).collect();
    Ok(CausalityMap { k, entries })
}

/// Random factors: uniform integers in `[0, k-1]` (full) or fair bits (bool).
pub fn damaged_factors(k: usize, mode: Mode, seed: u64, draw: u64) -> Result<FactorVector> {
    if k == 0 {
        return Err(Error::invalid("damaged factors need k >= 1"));
    }
    let mut rng = draw_rng(seed, draw ^ 0x5eed_fac7_0000_0000);
    let weights = (0..k)
        .map(|_| match mode {
            Mode::Full => rng.random_range(0..k) as f32,
            Mode::Bool => rng.random::<bool>() as u8 as f32,
        })
        .collect();
    Ok(FactorVector { weights })
}
