//! Roving-ABX psychometric model, lapse-wrapped least-squares fitting,
//! bootstrap confidence intervals and simulated observers.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::exec::{derive_seed, ExecPolicy};

/// Lapse rates are confined to `[0, LAPSE_MAX]`.
pub const LAPSE_MAX: f64 = 0.06;
const BETA_MAX: f64 = 1e3;
const S0_MIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    SynthVsSynth,
    SynthVsReference,
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Condition::SynthVsSynth => "synth-vs-synth",
            Condition::SynthVsReference => "synth-vs-reference",
        })
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synth-vs-synth" => Ok(Condition::SynthVsSynth),
            "synth-vs-reference" => Ok(Condition::SynthVsReference),
            other => Err(Error::InvalidConfig(format!("unknown condition `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
}

/// Stimulus ids shown as A, B and X.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub a: String,
    pub b: String,
    pub x: String,
}

impl Triplet {
    /// The interval X repeats, if it matches exactly one of them.
    pub fn answer(&self) -> Option<Choice> {
        match (self.x == self.a, self.x == self.b) {
            (true, false) => Some(Choice::A),
            (false, true) => Some(Choice::B),
            _ => None,
        }
    }
}

/// One ABX response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub session: String,
    /// Position in the session's trial order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial: Option<usize>,
    pub condition: Condition,
    pub scale: f64,
    pub image: String,
    pub stimuli: Triplet,
    pub response: Choice,
    pub correct: bool,
    pub response_ms: f64,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    /// Quality notes attached when the record was written.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl TrialRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Format(format!("scale {} must be > 0", self.scale)));
        }
        let answer = self
            .stimuli
            .answer()
            .ok_or_else(|| Error::Format("X must repeat exactly one of A and B".into()))?;
        if (answer == self.response) != self.correct {
            return Err(Error::Format(format!(
                "correct flag {} disagrees with response {:?} and X = {}",
                self.correct, self.response, self.stimuli.x
            )));
        }
        Ok(())
    }
}

/// Parse a line-delimited JSON trial log, validating every record.
pub fn read_trials(reader: impl BufRead) -> Result<Vec<TrialRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrialRecord =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        rec.validate().map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_trials(trials: &[TrialRecord], mut out: impl Write) -> Result<()> {
    for t in trials {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n").map_err(|e| Error::io("<trial log>", e))?;
    }
    Ok(())
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `d² = β₀ (1 − s₀² / s²)` above `s₀`, zero at and below it.
pub fn detectability(s: f64, s0: f64, beta0: f64) -> f64 {
    if s > s0 {
        beta0 * (1.0 - (s0 * s0) / (s * s))
    } else {
        0.0
    }
}

/// Roving-ABX proportion correct as a function of `d²`.
pub fn pc_abx_from_detectability(d2: f64) -> f64 {
    let u = normal_cdf(d2 / 6f64.sqrt());
    let v = normal_cdf(d2 / 2.0);
    let nu = normal_cdf(-d2 / 6f64.sqrt());
    let nv = normal_cdf(-d2 / 2.0);
    u * v + nu * nv
}

pub fn pc_abx(s: f64, s0: f64, beta0: f64) -> f64 {
    pc_abx_from_detectability(detectability(s, s0, beta0))
}

pub fn pc_with_lapse(s: f64, s0: f64, beta0: f64, lapse: f64) -> f64 {
    lapse + (1.0 - 2.0 * lapse) * pc_abx(s, s0, beta0)
}

/// Observer parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsychometricParams {
    pub s0: f64,
    pub beta0: f64,
    pub lapse: f64,
}

impl PsychometricParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.s0 > 0.0 && self.beta0 > 0.0) {
            return Err(Error::InvalidConfig(format!("need s0 > 0 and beta0 > 0, got {self:?}")));
        }
        if !(0.0..=LAPSE_MAX).contains(&self.lapse) {
            return Err(Error::InvalidConfig(format!("lapse {} outside [0, {LAPSE_MAX}]", self.lapse)));
        }
        Ok(())
    }

    pub fn pc(&self, s: f64) -> f64 {
        pc_with_lapse(s, self.s0, self.beta0, self.lapse)
    }
}

/// Arithmetic mean of per-observer estimates.
pub fn pool_estimates(fits: &[PsychometricParams]) -> Result<PsychometricParams> {
    if fits.is_empty() {
        return Err(Error::InsufficientData("no estimates to pool".into()));
    }
    let n = fits.len() as f64;
    Ok(PsychometricParams {
        s0: fits.iter().map(|f| f.s0).sum::<f64>() / n,
        beta0: fits.iter().map(|f| f.beta0).sum::<f64>() / n,
        lapse: fits.iter().map(|f| f.lapse).sum::<f64>() / n,
    })
}

/// Trials and hits at one scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleCount {
    pub scale: f64,
    pub trials: usize,
    pub correct: usize,
}

/// Per-scale counts for one condition, sorted by scale.
pub fn tally(trials: &[TrialRecord], condition: Condition) -> Vec<ScaleCount> {
    let mut map: BTreeMap<u64, ScaleCount> = BTreeMap::new();
    for t in trials.iter().filter(|t| t.condition == condition) {
        let e = map.entry(t.scale.to_bits()).or_insert(ScaleCount {
            scale: t.scale,
            trials: 0,
            correct: 0,
        });
        e.trials += 1;
        e.correct += t.correct as usize;
    }
    let mut out: Vec<ScaleCount> = map.into_values().collect();
    out.sort_by(|a, b| a.scale.total_cmp(&b.scale));
    out
}

fn loss(counts: &[ScaleCount], p: &PsychometricParams) -> f64 {
    counts
        .iter()
        .filter(|c| c.trials > 0)
        .map(|c| {
            let emp = c.correct as f64 / c.trials as f64;
            c.trials as f64 * (emp - p.pc(c.scale)).powi(2)
        })
        .sum()
}

struct Minimum {
    x: Vec<f64>,
    f: f64,
    iterations: usize,
    converged: bool,
}

/// Nelder-Mead simplex search.
fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, start: &[f64], step: &[f64], max_iter: usize, tol: f64) -> Minimum {
    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += step[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let size = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if (values[n] - values[0]).abs() <= tol * (values[0].abs() + 1e-12) && size <= 1e-9 {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (simplex[n][j] - centroid[j])).collect() };
        let reflected = along(-1.0);
        let fr = f(&reflected);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let (contracted, fc) = if fr < values[n] {
                let c = along(-0.5);
                let fc = f(&c);
                (c, fc)
            } else {
                let c = along(0.5);
                let fc = f(&c);
                (c, fc)
            };
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    simplex[i] = (0..n).map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j])).collect();
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    Minimum {
        x: simplex[best].clone(),
        f: values[best],
        iterations,
        converged,
    }
}

/// Search coordinates: log s₀, log β₀ and λ, each projected into its box.
fn decode(x: &[f64], s_max: f64) -> (PsychometricParams, f64) {
    let (s0_lo, s0_hi) = (S0_MIN.ln(), s_max.ln());
    let (b_lo, b_hi) = (1e-3f64.ln(), BETA_MAX.ln());
    let u = x[0].clamp(s0_lo, s0_hi);
    let v = x[1].clamp(b_lo, b_hi);
    let l = x.get(2).copied().unwrap_or(0.0).clamp(0.0, LAPSE_MAX);
    let excess = (x[0] - u).powi(2) + (x[1] - v).powi(2) + x.get(2).map_or(0.0, |&w| (w - l).powi(2));
    (
        PsychometricParams {
            s0: u.exp(),
            beta0: v.exp(),
            lapse: l,
        },
        excess,
    )
}

/// Where the fit ended up relative to its constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub starts: usize,
    pub lapse_at_lower_bound: bool,
    pub lapse_at_upper_bound: bool,
    pub beta_at_upper_bound: bool,
    /// Every scale's empirical proportion correct is 1.
    pub ceiling: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub level: f64,
    pub samples: usize,
    pub failures: usize,
    pub s0: Interval,
    pub beta0: Interval,
    pub lapse: Interval,
    /// Largest lapse seen in any refit.
    pub max_lapse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsychometricFit {
    pub condition: Condition,
    pub params: PsychometricParams,
    pub trials: usize,
    pub scales: Vec<ScaleCount>,
    pub diagnostics: FitDiagnostics,
    pub ci: Option<BootstrapCi>,
}

fn default_starts(counts: &[ScaleCount]) -> Vec<[f64; 3]> {
    let lo = counts.first().map_or(0.1, |c| c.scale);
    let hi = counts.last().map_or(1.0, |c| c.scale);
    let mut starts = Vec::new();
    for s0 in [0.5 * lo, lo + 0.25 * (hi - lo), lo + 0.5 * (hi - lo), lo + 0.75 * (hi - lo)] {
        for beta0 in [1.0, 4.0, 16.0] {
            starts.push([s0.max(2.0 * S0_MIN), beta0, 0.02]);
        }
    }
    starts
}

fn fit_counts(counts: &[ScaleCount], fixed_lapse: Option<f64>, starts: &[[f64; 3]]) -> Result<(PsychometricParams, FitDiagnostics)> {
    let populated = counts.iter().filter(|c| c.trials > 0).count();
    if populated < 2 {
        return Err(Error::InsufficientData(format!("need trials at 2 or more scales, got {populated}")));
    }
    let s_max = 10.0 * counts.iter().map(|c| c.scale).fold(0.0, f64::max);
    let objective = |x: &[f64]| {
        let mut full = x.to_vec();
        if let Some(l) = fixed_lapse {
            full.push(l);
        }
        let (p, excess) = decode(&full, s_max);
        loss(counts, &p) + excess
    };
    let mut best: Option<(Minimum, usize)> = None;
    for (i, s) in starts.iter().enumerate() {
        let mut x0 = vec![s[0].ln(), s[1].ln()];
        let mut step = vec![0.3, 0.5];
        if fixed_lapse.is_none() {
            x0.push(s[2]);
            step.push(0.02);
        }
        let m = nelder_mead(&objective, &x0, &step, 2000, 1e-12);
        if best.as_ref().is_none_or(|(b, _)| m.f < b.f) {
            best = Some((m, i));
        }
    }
    let (m, _) = best.ok_or_else(|| Error::InvalidConfig("no start points".into()))?;
    let mut full = m.x.clone();
    if let Some(l) = fixed_lapse {
        full.push(l);
    }
    let (mut params, _) = decode(&full, s_max);
    for bound in [0.0, LAPSE_MAX] {
        let snapped = PsychometricParams { lapse: bound, ..params };
        if (params.lapse - bound).abs() < 1e-6 && loss(counts, &snapped) <= loss(counts, &params) {
            params = snapped;
        }
    }
    if !m.f.is_finite() {
        return Err(Error::NonConvergence(format!(
            "loss {} after {} iterations from {} starts",
            m.f,
            m.iterations,
            starts.len()
        )));
    }
    let diagnostics = FitDiagnostics {
        loss: loss(counts, &params),
        iterations: m.iterations,
        converged: m.converged,
        starts: starts.len(),
        lapse_at_lower_bound: params.lapse <= 0.0,
        lapse_at_upper_bound: params.lapse >= LAPSE_MAX,
        beta_at_upper_bound: params.beta0 >= BETA_MAX * (1.0 - 1e-9),
        ceiling: counts.iter().filter(|c| c.trials > 0).all(|c| c.correct == c.trials),
    };
    Ok((params, diagnostics))
}

/// Count-weighted least-squares fit of `(s₀, β₀, λ)` for one condition.
pub fn fit_psychometric(trials: &[TrialRecord], condition: Condition) -> Result<PsychometricFit> {
    let counts = tally(trials, condition);
    let (params, diagnostics) = fit_counts(&counts, None, &default_starts(&counts))?;
    Ok(PsychometricFit {
        condition,
        params,
        trials: counts.iter().map(|c| c.trials).sum(),
        scales: counts,
        diagnostics,
        ci: None,
    })
}

/// One lapse rate per observer: λ estimated jointly over all conditions
/// present, then `(s₀, β₀)` refitted per condition with λ held fixed.
pub fn fit_shared_lapse(trials: &[TrialRecord]) -> Result<Vec<PsychometricFit>> {
    let conditions: Vec<Condition> = {
        let mut c: Vec<Condition> = trials.iter().map(|t| t.condition).collect();
        c.sort();
        c.dedup();
        c
    };
    let per: Vec<Vec<ScaleCount>> = conditions.iter().map(|&c| tally(trials, c)).collect();
    let initial = conditions
        .iter()
        .map(|&c| fit_psychometric(trials, c))
        .collect::<Result<Vec<_>>>()?;
    let s_max = 10.0 * per.iter().flatten().map(|c| c.scale).fold(0.0, f64::max);
    // coordinates: (log s0, log beta0) per condition, then lambda
    let k = conditions.len();
    let objective = |x: &[f64]| {
        (0..k)
            .map(|i| {
                let (p, excess) = decode(&[x[2 * i], x[2 * i + 1], x[2 * k]], s_max);
                loss(&per[i], &p) + excess
            })
            .sum::<f64>()
    };
    let mut x0: Vec<f64> = initial.iter().flat_map(|f| [f.params.s0.ln(), f.params.beta0.ln()]).collect();
    x0.push(initial.iter().map(|f| f.params.lapse).sum::<f64>() / k as f64);
    let mut step = vec![0.2; 2 * k];
    step.push(0.01);
    let m = nelder_mead(&objective, &x0, &step, 4000, 1e-12);
    let lapse = m.x[2 * k].clamp(0.0, LAPSE_MAX);
    conditions
        .iter()
        .zip(per)
        .zip(initial)
        .map(|((&condition, counts), init)| {
            let mut starts = default_starts(&counts);
            starts.push([init.params.s0, init.params.beta0, lapse]);
            let (params, diagnostics) = fit_counts(&counts, Some(lapse), &starts)?;
            Ok(PsychometricFit {
                condition,
                params,
                trials: counts.iter().map(|c| c.trials).sum(),
                scales: counts,
                diagnostics,
                ci: None,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub samples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            samples: 10_000,
            level: 0.68,
            seed: 0,
        }
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

fn percentile(mut values: Vec<f64>, level: f64) -> Interval {
    values.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Interval {
        lower: quantile(&values, tail),
        upper: quantile(&values, 1.0 - tail),
    }
}

/// Percentile intervals from refits on trials resampled with replacement.
pub fn bootstrap_ci(trials: &[TrialRecord], fit: &PsychometricFit, config: &BootstrapConfig, policy: ExecPolicy) -> Result<BootstrapCi> {
    if config.samples == 0 {
        return Err(Error::InvalidConfig("bootstrap needs at least one sample".into()));
    }
    if !(config.level > 0.0 && config.level < 1.0) {
        return Err(Error::InvalidConfig(format!("level {} must lie in (0, 1)", config.level)));
    }
    let scales: Vec<f64> = fit.scales.iter().map(|c| c.scale).collect();
    let pool: Vec<(usize, bool)> = trials
        .iter()
        .filter(|t| t.condition == fit.condition)
        .filter_map(|t| scales.iter().position(|&s| s == t.scale).map(|i| (i, t.correct)))
        .collect();
    if pool.is_empty() {
        return Err(Error::InsufficientData(format!("no {} trials", fit.condition)));
    }
    let mut starts = vec![[fit.params.s0, fit.params.beta0, fit.params.lapse]];
    starts.extend(default_starts(&fit.scales).into_iter().step_by(4));

    let refits = policy.map(config.samples, |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, r as u64));
        let mut counts: Vec<ScaleCount> = scales
            .iter()
            .map(|&scale| ScaleCount {
                scale,
                trials: 0,
                correct: 0,
            })
            .collect();
        for _ in 0..pool.len() {
            let (i, hit) = pool[rng.random_range(0..pool.len())];
            counts[i].trials += 1;
            counts[i].correct += hit as usize;
        }
        fit_counts(&counts, None, &starts).ok().map(|(p, _)| p)
    });
    let ok: Vec<PsychometricParams> = refits.iter().flatten().copied().collect();
    let failures = config.samples - ok.len();
    if failures * 20 > config.samples || ok.is_empty() {
        return Err(Error::BootstrapFailures {
            failures,
            total: config.samples,
        });
    }
    Ok(BootstrapCi {
        level: config.level,
        samples: config.samples,
        failures,
        s0: percentile(ok.iter().map(|p| p.s0).collect(), config.level),
        beta0: percentile(ok.iter().map(|p| p.beta0).collect(), config.level),
        lapse: percentile(ok.iter().map(|p| p.lapse).collect(), config.level),
        max_lapse: ok.iter().map(|p| p.lapse).fold(0.0, f64::max),
    })
}

/// Trials per scale and the images they cycle through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub scales: Vec<f64>,
    pub trials_per_scale: usize,
    pub images: usize,
}

fn synthetic_trial(
    session: &str,
    condition: Condition,
    scale: f64,
    image: usize,
    index: usize,
    x_is_a: bool,
    correct: bool,
) -> TrialRecord {
    let a = format!("{index}-a");
    let b = format!("{index}-b");
    let x = if x_is_a { a.clone() } else { b.clone() };
    let answer = if x_is_a { Choice::A } else { Choice::B };
    let other = if x_is_a { Choice::B } else { Choice::A };
    TrialRecord {
        session: session.into(),
        trial: Some(index),
        condition,
        scale,
        image: format!("img{image:02}"),
        stimuli: Triplet { a, b, x },
        response: if correct { answer } else { other },
        correct,
        response_ms: 0.0,
        timestamp: index as u64,
        flags: Vec::new(),
    }
}

/// Bernoulli observer answering correctly with probability `params.pc(s)`.
pub fn simulate_observer(params: &PsychometricParams, design: &Design, condition: Condition, seed: u64) -> Result<Vec<TrialRecord>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(design.scales.len() * design.trials_per_scale);
    for &s in &design.scales {
        let p = params.pc(s);
        for t in 0..design.trials_per_scale {
            let x_is_a = rng.random_bool(0.5);
            let correct = rng.random::<f64>() < p;
            let index = out.len();
            out.push(synthetic_trial("simulated", condition, s, t % design.images.max(1), index, x_is_a, correct));
        }
    }
    Ok(out)
}

/// Observer whose hit count at each scale is `round(n · PC(s))` exactly.
pub fn expected_observer(params: &PsychometricParams, design: &Design, condition: Condition) -> Result<Vec<TrialRecord>> {
    params.validate()?;
    let mut out = Vec::new();
    for &s in &design.scales {
        let hits = (design.trials_per_scale as f64 * params.pc(s)).round() as usize;
        for t in 0..design.trials_per_scale {
            let index = out.len();
            out.push(synthetic_trial("expected", condition, s, t % design.images.max(1), index, t % 2 == 0, t < hits));
        }
    }
    Ok(out)
}
