//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use exforge_core::gateway::{CompletionResult, GenerationConfig, ReplayCassette};
use exforge_core::grid::{build_grid, GridJob, GridSpec};
use exforge_core::prompt::{build_exercise_prompt, KeywordSet, PrimeLibrary, PrimingExercise};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name)).expect("fixture exists")
}

pub fn prime(id: &str) -> PrimingExercise {
    PrimeLibrary::builtin().get(id).expect("built-in prime").clone()
}

pub fn keywords(context: Option<&str>, concepts: &[&str]) -> KeywordSet {
    KeywordSet::new(context, (!concepts.is_empty()).then_some(concepts)).unwrap()
}

/// Adds a completion for the exercise prompt built from `prime` + `keywords`.
pub fn record_exercise(
    cassette: &mut ReplayCassette,
    prime: &PrimingExercise,
    keywords: &KeywordSet,
    config: &GenerationConfig,
    text: &str,
) {
    let prompt = build_exercise_prompt(prime, keywords).unwrap();
    cassette.record(&prompt, config, CompletionResult::fixture(text));
}

pub const PASSING_ICE_HOCKEY: &str = "Write a function called ice_hockey_check that takes a score and returns a message.
--Sample solution--
def ice_hockey_check(score):
  if score > 5:
    return \"penalty\"
  else:
    return \"keep playing\"
--Tests--
class Test(unittest.TestCase):
  def test_ice_hockey_check(self):
    self.assertEquals(ice_hockey_check(5), 'keep playing')
    self.assertEquals(ice_hockey_check(6), 'penalty')
";

/// Solution prints instead of returning, so the tests fail.
pub const PRINTING_ICE_HOCKEY: &str = "Write a function called ice_hockey_check that takes a score and returns a message.
--Sample solution--
def ice_hockey_check(score):
  if score > 5:
    print(\"penalty\")
  else:
    print(\"keep playing\")
--Tests--
class Test(unittest.TestCase):
  def test_ice_hockey_check(self):
    self.assertEquals(ice_hockey_check(5), 'keep playing')
    self.assertEquals(ice_hockey_check(6), 'penalty')
";

/// Categories of the authored 240-bundle grid fixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Neither,
    TestsOnly,
    SolutionOnly,
    SolutionOnlyCrash,
    PassFull,
    PassPartial,
    BothCrash,
    BothFail,
}

/// (kind, count). Derived by hand: 203 with a solution (38 solution only +
/// 165 both), 170 with tests (5 tests only + 165 both), 21 crashing
/// solutions so 182 run, 51 passing suites of which 3 cover 2 of 3
/// statements.
pub const OUTCOME_MIX: [(Kind, usize); 8] = [
    (Kind::Neither, 32),
    (Kind::TestsOnly, 5),
    (Kind::SolutionOnly, 28),
    (Kind::SolutionOnlyCrash, 10),
    (Kind::PassFull, 48),
    (Kind::PassPartial, 3),
    (Kind::BothCrash, 11),
    (Kind::BothFail, 103),
];

/// Kind of job `i`, spread over the grid with a fixed stride permutation.
pub fn mixed_kind(i: usize) -> Kind {
    let slot = (i * 7) % 240;
    let mut acc = 0;
    for (kind, n) in OUTCOME_MIX {
        acc += n;
        if slot < acc {
            return kind;
        }
    }
    unreachable!("mix sums to 240")
}

pub fn mixed_completion(i: usize) -> String {
    let statement = format!("Exercise variant {i}: write a small function.\n");
    let body = match mixed_kind(i) {
        Kind::Neither => String::new(),
        Kind::TestsOnly => "--Tests--\nclass Test(unittest.TestCase):\n  def test_x(self):\n    self.assertEqual(f(1), 1)\n".into(),
        Kind::SolutionOnly => "--Sample solution--\ndef f(x):\n  return x\n".into(),
        Kind::SolutionOnlyCrash => "--Sample solution--\nraise ValueError(\"boom\")\n".into(),
        Kind::PassFull => "--Sample solution--\ndef add(a, b):\n  return a + b\n--Tests--\nclass Test(unittest.TestCase):\n  def test_add(self):\n    self.assertEquals(add(2, 3), 5)\n".into(),
        Kind::PassPartial => "--Sample solution--\ndef pick(x):\n  if x:\n    return 1\n--Tests--\nclass Test(unittest.TestCase):\n  def test_pick(self):\n    self.assertEqual(pick(0), None)\n".into(),
        Kind::BothCrash => "--Sample solution--\nvalue = 1 / 0\n--Tests--\nclass Test(unittest.TestCase):\n  def test_value(self):\n    self.assertEqual(value, 0)\n".into(),
        Kind::BothFail => "--Sample solution--\ndef double(x):\n  print(x * 2)\n--Tests--\nclass Test(unittest.TestCase):\n  def test_double(self):\n    self.assertEquals(double(2), 4)\n".into(),
    };
    format!("{statement}{body}")
}

pub fn base_config() -> GenerationConfig {
    GenerationConfig::default().with_model("fixture-model")
}

/// The 240 jobs of the default grid and a cassette answering each of them
/// with the fixture completion for its index.
pub fn mixed_grid() -> (Vec<GridJob>, ReplayCassette) {
    let jobs = build_grid(&GridSpec::standard()).unwrap();
    let primes = PrimeLibrary::builtin();
    let mut cassette = ReplayCassette::default();
    let base = base_config();
    for (i, job) in jobs.iter().enumerate() {
        let config = base
            .clone()
            .with_temperature(job.temperature)
            .with_sample(base.sample + job.repeat_index);
        let prime = primes.get(&job.prime_id).unwrap();
        record_exercise(
            &mut cassette,
            prime,
            &job.keywords().unwrap(),
            &config,
            &mixed_completion(i),
        );
    }
    (jobs, cassette)
}
