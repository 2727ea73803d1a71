//! Built-in applications, one per stability class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Application, ExecContext, RunError, StabilityClass, TaskResult};
use crate::granularity::TaskSpec;
use crate::seed;
use crate::tuple_space::AppId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppName {
    Matmul,
    ParallelSearch,
    MonteCarloPi,
    RandomReduce,
}

impl AppName {
    pub const ALL: [AppName; 4] =
        [AppName::Matmul, AppName::ParallelSearch, AppName::MonteCarloPi, AppName::RandomReduce];

    pub fn as_str(self) -> &'static str {
        match self {
            AppName::Matmul => "matmul",
            AppName::ParallelSearch => "parallel_search",
            AppName::MonteCarloPi => "monte_carlo_pi",
            AppName::RandomReduce => "random_reduce",
        }
    }

    pub fn stability(self) -> StabilityClass {
        match self {
            AppName::Matmul => StabilityClass::DetInDetOut,
            AppName::ParallelSearch => StabilityClass::DetInNonDetOut,
            AppName::MonteCarloPi => StabilityClass::NonDetInNonDetOut,
            AppName::RandomReduce => StabilityClass::NonDetInDetOut,
        }
    }
}

/// Per-application knobs. Fields that do not apply to the chosen app are ignored.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppOptions {
    /// matmul: multiply by the identity instead of a random matrix.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub identity_rhs: bool,
    /// parallel_search: indices holding the target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<u64>>,
}

/// Instantiates a built-in application over `n` work units.
pub fn builtin(
    name: AppName,
    n: u64,
    options: &AppOptions,
    run_seed: u64,
) -> Result<Box<dyn Application>, RunError> {
    if n == 0 {
        return Err(RunError::InvalidApp("total work must be positive".into()));
    }
    Ok(match name {
        AppName::Matmul => Box::new(MatMul::new(n as usize, run_seed, options.identity_rhs)),
        AppName::ParallelSearch => {
            let targets = options.targets.clone().unwrap_or_else(|| {
                let mut t = vec![n / 3, 2 * n / 3];
                t.dedup();
                t
            });
            if let Some(bad) = targets.iter().find(|&&t| t >= n) {
                return Err(RunError::InvalidApp(format!("target index {bad} outside 0..{n}")));
            }
            Box::new(ParallelSearch::new(n as usize, &targets, run_seed))
        }
        AppName::MonteCarloPi => Box::new(MonteCarloPi::new(n)),
        AppName::RandomReduce => Box::new(RandomReduce::new(n, run_seed)),
    })
}

fn f64s_to_bytes(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(f64::to_le_bytes).collect()
}

fn u64_at(bytes: &[u8], word: usize) -> Option<u64> {
    bytes.get(word * 8..word * 8 + 8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
}

/// Dense `C = A × B`, one work unit per row of `C`.
#[derive(Debug, Clone)]
pub struct MatMul {
    n: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl MatMul {
    pub fn new(n: usize, run_seed: u64, identity_rhs: bool) -> Self {
        let mut rng = seed::rng(run_seed, seed::stream::DATA);
        let a = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = if identity_rhs {
            (0..n * n).map(|i| if i / n == i % n { 1.0 } else { 0.0 }).collect()
        } else {
            (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        Self { n, a, b }
    }

    pub fn lhs(&self) -> &[f64] {
        &self.a
    }

    fn row(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        let n = self.n;
        (0..n).map(move |j| (0..n).fold(0.0, |acc, k| acc + self.a[i * n + k] * self.b[k * n + j]))
    }

    /// Sequential reference product, row-major bytes.
    pub fn reference(&self) -> Vec<u8> {
        f64s_to_bytes((0..self.n).flat_map(|i| self.row(i)))
    }

    pub fn decode(answer: &[u8]) -> Vec<f64> {
        answer.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
    }
}

impl Application for MatMul {
    fn app_id(&self) -> AppId {
        AppId::new(AppName::Matmul.as_str())
    }

    fn stability(&self) -> StabilityClass {
        StabilityClass::DetInDetOut
    }

    fn total_work(&self) -> u64 {
        self.n as u64
    }

    fn execute(&self, task: &TaskSpec, _ctx: &ExecContext) -> Vec<u8> {
        f64s_to_bytes((task.start as usize..task.end() as usize).flat_map(|i| self.row(i)))
    }

    fn merge(&self, results: &[TaskResult<'_>]) -> Vec<u8> {
        let mut ordered: Vec<_> = results.iter().collect();
        ordered.sort_by_key(|r| r.task.start);
        ordered.into_iter().flat_map(|r| r.payload.iter().copied()).collect()
    }

    fn verify(&self, answer: &[u8]) -> bool {
        answer == self.reference()
    }
}

/// Finds any index holding the target. With several hits, the one whose task
/// completed first wins, so the answer depends on the assignment.
#[derive(Debug, Clone)]
pub struct ParallelSearch {
    haystack: Vec<u32>,
    target: u32,
}

impl ParallelSearch {
    pub const TARGET: u32 = 1_000_007;

    pub fn new(n: usize, targets: &[u64], run_seed: u64) -> Self {
        let mut rng = seed::rng(run_seed, seed::stream::DATA);
        let mut haystack: Vec<u32> = (0..n).map(|_| rng.gen_range(0..1_000_000)).collect();
        for &t in targets {
            haystack[t as usize] = Self::TARGET;
        }
        Self { haystack, target: Self::TARGET }
    }

    pub fn haystack(&self) -> &[u32] {
        &self.haystack
    }

    pub fn target(&self) -> u32 {
        self.target
    }

    /// The accepted index, if any.
    pub fn decode(answer: &[u8]) -> Option<u64> {
        u64_at(answer, 0)
    }
}

impl Application for ParallelSearch {
    fn app_id(&self) -> AppId {
        AppId::new(AppName::ParallelSearch.as_str())
    }

    fn stability(&self) -> StabilityClass {
        StabilityClass::DetInNonDetOut
    }

    fn total_work(&self) -> u64 {
        self.haystack.len() as u64
    }

    fn execute(&self, task: &TaskSpec, _ctx: &ExecContext) -> Vec<u8> {
        (task.start..task.end())
            .find(|&i| self.haystack[i as usize] == self.target)
            .map(|i| i.to_le_bytes().to_vec())
            .unwrap_or_default()
    }

    fn merge(&self, results: &[TaskResult<'_>]) -> Vec<u8> {
        let mut by_arrival: Vec<_> = results.iter().collect();
        by_arrival.sort_by_key(|r| (r.completed_at, r.task.task_id));
        by_arrival
            .into_iter()
            .find(|r| !r.payload.is_empty())
            .map(|r| r.payload.to_vec())
            .unwrap_or_default()
    }

    fn verify(&self, answer: &[u8]) -> bool {
        match Self::decode(answer) {
            Some(i) => self.haystack.get(i as usize) == Some(&self.target),
            None => !self.haystack.contains(&self.target),
        }
    }
}

/// Estimates π from `n` uniform samples in the unit square. Each task draws
/// its samples from its own task seed.
#[derive(Debug, Clone)]
pub struct MonteCarloPi {
    samples: u64,
}

impl MonteCarloPi {
    pub fn new(samples: u64) -> Self {
        Self { samples }
    }

    /// Hits inside the quarter circle for one task.
    pub fn hits(task_seed: u64, samples: u64) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(task_seed);
        (0..samples)
            .filter(|_| {
                let (x, y): (f64, f64) = (rng.gen(), rng.gen());
                x * x + y * y <= 1.0
            })
            .count() as u64
    }

    pub fn encode_answer(hits: u64, samples: u64) -> Vec<u8> {
        let estimate = 4.0 * hits as f64 / samples as f64;
        [hits.to_le_bytes(), samples.to_le_bytes(), estimate.to_le_bytes()].concat()
    }

    /// `(hits, samples, estimate)`.
    pub fn decode(answer: &[u8]) -> Option<(u64, u64, f64)> {
        if answer.len() != 24 {
            return None;
        }
        Some((u64_at(answer, 0)?, u64_at(answer, 1)?, f64::from_bits(u64_at(answer, 2)?)))
    }
}

impl Application for MonteCarloPi {
    fn app_id(&self) -> AppId {
        AppId::new(AppName::MonteCarloPi.as_str())
    }

    fn stability(&self) -> StabilityClass {
        StabilityClass::NonDetInNonDetOut
    }

    fn total_work(&self) -> u64 {
        self.samples
    }

    fn execute(&self, task: &TaskSpec, ctx: &ExecContext) -> Vec<u8> {
        let hits = Self::hits(ctx.task_seed, task.units);
        [hits.to_le_bytes(), task.units.to_le_bytes()].concat()
    }

    fn merge(&self, results: &[TaskResult<'_>]) -> Vec<u8> {
        let (hits, samples) = results.iter().fold((0, 0), |(h, s), r| {
            (h + u64_at(r.payload, 0).unwrap_or(0), s + u64_at(r.payload, 1).unwrap_or(0))
        });
        Self::encode_answer(hits, samples)
    }

    fn verify(&self, answer: &[u8]) -> bool {
        match Self::decode(answer) {
            Some((_, samples, estimate)) if samples == self.samples => {
                (estimate - std::f64::consts::PI).abs() <= 6.0 / (samples as f64).sqrt()
            }
            _ => false,
        }
    }
}

/// Floating-point sum whose reduction order is shuffled by a generator seeded
/// from result arrival times. The expected output is the plain sum, but the
/// rounding depends on timing.
#[derive(Debug, Clone)]
pub struct RandomReduce {
    n: u64,
    run_seed: u64,
}

impl RandomReduce {
    pub fn new(n: u64, run_seed: u64) -> Self {
        Self { n, run_seed }
    }

    fn value(&self, index: u64) -> f64 {
        let bits = seed::mix3(self.run_seed, seed::stream::DATA, index) >> 11;
        bits as f64 / (1u64 << 53) as f64 * 1000.0
    }

    pub fn reference(&self) -> f64 {
        (0..self.n).map(|i| self.value(i)).sum()
    }
}

impl Application for RandomReduce {
    fn app_id(&self) -> AppId {
        AppId::new(AppName::RandomReduce.as_str())
    }

    fn stability(&self) -> StabilityClass {
        StabilityClass::NonDetInDetOut
    }

    fn total_work(&self) -> u64 {
        self.n
    }

    fn execute(&self, task: &TaskSpec, _ctx: &ExecContext) -> Vec<u8> {
        let partial: f64 = (task.start..task.end()).map(|i| self.value(i)).sum();
        partial.to_le_bytes().to_vec()
    }

    fn merge(&self, results: &[TaskResult<'_>]) -> Vec<u8> {
        let stamp = results.iter().fold(0u64, |acc, r| seed::mix(acc, r.completed_at));
        let mut rng = ChaCha8Rng::seed_from_u64(stamp);
        let mut partials: Vec<f64> = results
            .iter()
            .map(|r| f64::from_le_bytes(r.payload.try_into().unwrap_or([0; 8])))
            .collect();
        for i in (1..partials.len()).rev() {
            partials.swap(i, rng.gen_range(0..=i));
        }
        partials.into_iter().sum::<f64>().to_le_bytes().to_vec()
    }

    fn verify(&self, answer: &[u8]) -> bool {
        let Ok(bytes) = <[u8; 8]>::try_from(answer) else {
            return false;
        };
        let reference = self.reference();
        (f64::from_le_bytes(bytes) - reference).abs() <= 1e-9 * reference.abs().max(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tuple_space::WorkerId;

    fn ctx(task_id: u64) -> ExecContext {
        ExecContext { run_seed: 5, task_seed: seed::task_seed(5, task_id), worker: WorkerId(0), now: 0 }
    }

    fn run_all(app: &dyn Application, grain: u64) -> Vec<u8> {
        let tasks = app.decompose(grain).unwrap();
        let payloads: Vec<Vec<u8>> = tasks.iter().map(|t| app.execute(t, &ctx(t.task_id))).collect();
        let results: Vec<TaskResult<'_>> = tasks
            .iter()
            .zip(&payloads)
            .map(|(t, p)| TaskResult { task: *t, payload: p, completed_at: t.task_id })
            .collect();
        app.merge(&results)
    }

    #[test]
    fn matmul_by_identity() {
        let m = MatMul::new(8, 3, true);
        let answer = run_all(&m, 3);
        assert_eq!(MatMul::decode(&answer), m.lhs());
        assert!(m.verify(&answer));
    }

    #[test]
    fn matmul_grain_independent() {
        let m = MatMul::new(10, 9, false);
        assert_eq!(run_all(&m, 1), run_all(&m, 4));
        assert_eq!(run_all(&m, 10), m.reference());
    }

    #[test]
    fn search_finds_a_target() {
        let s = ParallelSearch::new(100, &[3, 97], 1);
        let answer = run_all(&s, 10);
        assert_eq!(ParallelSearch::decode(&answer), Some(3));
        assert!(s.verify(&answer));
        assert!(!s.verify(&5u64.to_le_bytes()));
    }

    #[test]
    fn search_without_target() {
        let s = ParallelSearch::new(50, &[], 1);
        let answer = run_all(&s, 7);
        assert!(answer.is_empty());
        assert!(s.verify(&answer));
    }

    #[test]
    fn pi_estimate_is_close() {
        let app = MonteCarloPi::new(100_000);
        let answer = run_all(&app, 10_000);
        let (_, samples, est) = MonteCarloPi::decode(&answer).unwrap();
        assert_eq!(samples, 100_000);
        assert!((est - std::f64::consts::PI).abs() < 0.02, "{est}");
        assert!(app.verify(&answer));
    }

    #[test]
    fn random_reduce_near_reference() {
        let app = RandomReduce::new(500, 2);
        assert!(app.verify(&run_all(&app, 7)));
        assert!(!app.verify(&[0; 8]));
    }

    #[test]
    fn builtin_rejects_bad_targets() {
        let opts = AppOptions { targets: Some(vec![10]), ..Default::default() };
        assert!(builtin(AppName::ParallelSearch, 10, &opts, 0).is_err());
        assert!(builtin(AppName::Matmul, 0, &AppOptions::default(), 0).is_err());
    }

    #[test]
    fn classes_cover_the_taxonomy() {
        let mut classes: Vec<_> = AppName::ALL.iter().map(|a| a.stability()).collect();
        classes.dedup();
        assert_eq!(classes.len(), 4);
    }
}
