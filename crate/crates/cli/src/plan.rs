//! ABX session plans: the fixed, seeded trial order and its stimuli.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use metamer_core::psychometrics::{Choice, Condition, Triplet};
use metamer_core::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub stimulus_ms: u64,
    pub blank_ms: u64,
}

impl Timing {
    /// Shortest possible A, blank, B, blank, X sequence.
    pub fn min_trial_ms(&self) -> u64 {
        3 * self.stimulus_ms + 2 * self.blank_ms
    }
}

/// Stimulus names available for one (image, scale) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStimuli {
    pub image: String,
    pub scale: f64,
    /// Metamers of the image from distinct noise seeds (at least two).
    pub synth: Vec<String>,
    /// Decoded reference `I′` of the image.
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub conditions: Vec<Condition>,
    pub scales: Vec<f64>,
    pub images: Vec<String>,
    pub reps: usize,
}

impl Design {
    pub fn trial_count(&self) -> usize {
        self.conditions.len() * self.scales.len() * self.images.len() * self.reps
    }
}

/// One trial as the server knows it. `views` are the opaque ids the client
/// sees; `stimuli` are stimulus names, with X repeating A or B.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub index: usize,
    pub condition: Condition,
    pub scale: f64,
    pub image: String,
    pub stimuli: Triplet,
    pub answer: Choice,
    pub views: [String; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub session: String,
    pub seed: u64,
    pub timing: Timing,
    pub fixation_radius_px: f64,
    pub image_size: usize,
    pub design: Design,
    /// Free-form provenance (γ, codec checksums, synthesis seeds).
    #[serde(default)]
    pub metadata: serde_json::Value,
    /// Stimulus directory, relative to the plan file unless absolute.
    pub stimulus_dir: PathBuf,
    /// Stimulus name → file name inside `stimulus_dir`.
    pub files: BTreeMap<String, String>,
    pub trials: Vec<TrialSpec>,
}

fn opaque_id(seed: u64, session: &str, index: usize, slot: usize) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(session.as_bytes());
    h.update((index as u64).to_le_bytes());
    h.update((slot as u64).to_le_bytes());
    hex::encode(&h.finalize()[..12])
}

/// Build the seeded trial order for `design` over the given cells.
///
/// Each (condition, scale, image) cell gets `reps` trials. Synth-vs-synth
/// pairs two metamers of different seeds; synth-vs-reference pairs a metamer
/// with `I′`. A/B order and which one X repeats are seeded coin flips, and
/// the whole list is shuffled once.
pub fn build_trials(session: &str, design: &Design, cells: &[CellStimuli], seed: u64) -> Result<Vec<TrialSpec>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(design.trial_count());
    for &condition in &design.conditions {
        for &scale in &design.scales {
            for image in &design.images {
                let cell = cells
                    .iter()
                    .find(|c| &c.image == image && c.scale == scale)
                    .ok_or_else(|| CliError::Input(format!("no stimuli for image {image} at scale {scale}")))?;
                if cell.synth.len() < 2 {
                    return Err(CliError::Input(format!("image {image} at scale {scale} needs two metamer seeds")));
                }
                let n = cell.synth.len();
                for rep in 0..design.reps {
                    let (mut a, mut b) = match condition {
                        Condition::SynthVsSynth => (cell.synth[rep % n].clone(), cell.synth[(rep + 1) % n].clone()),
                        Condition::SynthVsReference => (cell.synth[rep % n].clone(), cell.reference.clone()),
                    };
                    if rng.random::<bool>() {
                        std::mem::swap(&mut a, &mut b);
                    }
                    let answer = if rng.random::<bool>() { Choice::A } else { Choice::B };
                    let x = match answer {
                        Choice::A => a.clone(),
                        Choice::B => b.clone(),
                    };
                    trials.push((condition, scale, image.clone(), Triplet { a, b, x }, answer));
                }
            }
        }
    }
    trials.shuffle(&mut rng);
    Ok(trials
        .into_iter()
        .enumerate()
        .map(|(index, (condition, scale, image, stimuli, answer))| TrialSpec {
            index,
            condition,
            scale,
            image,
            stimuli,
            answer,
            views: std::array::from_fn(|slot| opaque_id(seed, session, index, slot)),
        })
        .collect())
}

impl SessionPlan {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut plan: SessionPlan = serde_json::from_slice(&bytes)?;
        if plan.stimulus_dir.is_relative() {
            plan.stimulus_dir = path.parent().unwrap_or(Path::new(".")).join(&plan.stimulus_dir);
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e).into())
    }

    /// Indices are 0..n in order, answers agree with X, every stimulus has a file.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Input(format!("plan {}: {m}", self.session)));
        if self.trials.len() != self.design.trial_count() {
            return bad(format!("{} trials, design needs {}", self.trials.len(), self.design.trial_count()));
        }
        for (i, t) in self.trials.iter().enumerate() {
            if t.index != i {
                return bad(format!("trial {i} is numbered {}", t.index));
            }
            if t.stimuli.answer() != Some(t.answer) {
                return bad(format!("trial {i}: answer key disagrees with X"));
            }
            for name in [&t.stimuli.a, &t.stimuli.b] {
                if !self.files.contains_key(name) {
                    return bad(format!("trial {i}: stimulus {name} has no file"));
                }
            }
        }
        Ok(())
    }

    pub fn stimulus_path(&self, name: &str) -> Option<PathBuf> {
        self.files.get(name).map(|f| self.stimulus_dir.join(f))
    }

    /// Every referenced stimulus file exists.
    pub fn check_files(&self) -> Result<()> {
        for (name, file) in &self.files {
            let path = self.stimulus_dir.join(file);
            if !path.is_file() {
                return Err(CliError::Input(format!("stimulus {name}: missing file {}", path.display())));
            }
        }
        Ok(())
    }

    /// Trial counts per (condition, scale, image).
    pub fn cell_counts(&self) -> BTreeMap<(Condition, String, String), usize> {
        let mut counts = BTreeMap::new();
        for t in &self.trials {
            *counts.entry((t.condition, format!("{}", t.scale), t.image.clone())).or_insert(0) += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cells(images: &[&str], scales: &[f64]) -> Vec<CellStimuli> {
        let mut out = Vec::new();
        for &img in images {
            for &s in scales {
                out.push(CellStimuli {
                    image: img.into(),
                    scale: s,
                    synth: vec![format!("{img}-{s}-0"), format!("{img}-{s}-1")],
                    reference: format!("{img}-ref"),
                });
            }
        }
        out
    }

    fn design(images: &[&str], scales: &[f64], reps: usize) -> Design {
        Design {
            conditions: vec![Condition::SynthVsSynth, Condition::SynthVsReference],
            scales: scales.to_vec(),
            images: images.iter().map(|s| s.to_string()).collect(),
            reps,
        }
    }

    #[test]
    fn full_design_has_the_expected_cell_counts() {
        let images: Vec<String> = (0..10).map(|i| format!("img{i}")).collect();
        let refs: Vec<&str> = images.iter().map(String::as_str).collect();
        let scales = [0.3, 0.4, 0.5, 0.6, 0.7];
        let d = design(&refs, &scales, 30);
        let trials = build_trials("s", &d, &cells(&refs, &scales), 1).unwrap();
        assert_eq!(trials.len(), 10 * 30 * 5 * 2);
        let mut counts: BTreeMap<(Condition, String, String), usize> = BTreeMap::new();
        for t in &trials {
            *counts.entry((t.condition, t.scale.to_string(), t.image.clone())).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 100);
        assert!(counts.values().all(|&n| n == 30));
    }

    #[test]
    fn triplets_follow_the_condition() {
        let d = design(&["a", "b"], &[0.4, 0.6], 6);
        let trials = build_trials("s", &d, &cells(&["a", "b"], &[0.4, 0.6]), 3).unwrap();
        for t in &trials {
            assert_eq!(t.stimuli.answer(), Some(t.answer));
            let refs = [&t.stimuli.a, &t.stimuli.b].iter().filter(|n| n.ends_with("-ref")).count();
            match t.condition {
                Condition::SynthVsSynth => assert_eq!(refs, 0),
                Condition::SynthVsReference => assert_eq!(refs, 1),
            }
            assert_ne!(t.stimuli.a, t.stimuli.b);
        }
        let xa = trials.iter().filter(|t| t.answer == Choice::A).count();
        assert!(xa > 0 && xa < trials.len());
    }

    #[test]
    fn order_is_seeded() {
        let d = design(&["a", "b"], &[0.4, 0.6], 5);
        let c = cells(&["a", "b"], &[0.4, 0.6]);
        assert_eq!(build_trials("s", &d, &c, 9).unwrap(), build_trials("s", &d, &c, 9).unwrap());
        assert_ne!(build_trials("s", &d, &c, 9).unwrap(), build_trials("s", &d, &c, 10).unwrap());
    }

    #[test]
    fn opaque_ids_do_not_reveal_the_repeat() {
        let d = design(&["a"], &[0.5], 8);
        let trials = build_trials("s", &d, &cells(&["a"], &[0.5]), 2).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for t in &trials {
            for v in &t.views {
                assert!(seen.insert(v.clone()), "view id reused");
                assert!(!v.contains('a') || v.chars().all(|c| c.is_ascii_hexdigit()));
            }
        }
    }

    #[test]
    fn missing_cell_is_an_error() {
        let d = design(&["a", "b"], &[0.5], 2);
        assert!(build_trials("s", &d, &cells(&["a"], &[0.5]), 0).is_err());
    }
}
