mod common;

use std::time::{Duration, Instant};

use common::prime;
use exforge_core::builtin::programs;
use exforge_core::sandbox::{
    CoverageReport, ExecLimits, RunStatus, Sandbox, SandboxError, SandboxSettings, TestStatus,
};

const SPEEDING_SOLUTION: &str = "def speeding_check(speed):
  if speed > 120:
    return \"You are fined for $200\"
  elif speed > 100:
    return \"You are fined for $100\"
  else:
    return \"All good, race ahead\"
";

fn limits() -> ExecLimits {
    ExecLimits::default()
}

#[test]
fn speeding_check_program_runs() {
    let out = Sandbox::default().run_solution(programs::SPEEDING_CHECK, &limits()).unwrap();
    assert_eq!(out.status, RunStatus::Ok);
    assert_eq!(out.exit_code, Some(0));
    assert!(out.stdout.contains("All good, race ahead"));
    assert_eq!(out.stdout.lines().count(), 3);
}

#[test]
fn division_by_zero_is_runtime_error() {
    let out = Sandbox::default().run_solution("1/0\n", &limits()).unwrap();
    assert_eq!(out.status, RunStatus::RuntimeError);
    assert_ne!(out.exit_code, Some(0));
    assert!(out.stderr.contains("ZeroDivisionError"));
}

#[test]
fn infinite_loop_times_out() {
    let limit = ExecLimits::default().with_timeout(Duration::from_secs(1));
    let started = Instant::now();
    let out = Sandbox::default().run_solution("while True: pass\n", &limit).unwrap();
    assert_eq!(out.status, RunStatus::Timeout);
    assert!(out.duration >= Duration::from_secs(1));
    assert!(started.elapsed() < Duration::from_secs(3));
}

#[test]
fn missing_runtime_is_launch_failure() {
    let sandbox = Sandbox::new(SandboxSettings {
        python: "/nonexistent/python3".into(),
        ..SandboxSettings::default()
    });
    let out = sandbox.run_solution("x = 1\n", &limits()).unwrap();
    assert_eq!(out.status, RunStatus::LaunchFailure);
    assert!(matches!(
        sandbox.run_tests("x = 1\n", "class T(unittest.TestCase):\n  def test_a(self): pass\n", &limits()),
        Err(SandboxError::LaunchFailure(_))
    ));
}

#[test]
fn scripted_stdin_drives_rainfall() {
    let out = Sandbox::default()
        .run_solution_with_input(programs::RAINFALL, Some("10\n20\n-5\n9999\n"), &limits())
        .unwrap();
    assert_eq!(out.status, RunStatus::Ok);
    assert!(out.stdout.contains("Invalid input"));
    assert!(out.stdout.contains("Average: 15.0"));
    // Without input the first input() call hits end of file.
    let out = Sandbox::default().run_solution(programs::RAINFALL, &limits()).unwrap();
    assert_eq!(out.status, RunStatus::RuntimeError);
}

#[test]
fn speeding_check_prime_tests_pass() {
    let p = prime("speeding_check");
    let outcome = Sandbox::default()
        .run_tests(&p.sample_solution, &p.tests, &limits())
        .unwrap();
    assert_eq!(outcome.status, TestStatus::AllPassed);
    assert_eq!((outcome.total, outcome.passed), (1, 1));
}

#[test]
fn converter_prime_tests_pass() {
    // Hand arithmetic: 10 / 0.75 * 0.9 = 12.0 and 10 / 0.9 * 0.75 = 8.333333333333332.
    assert_eq!(10.0_f64 / 0.75 * 0.9, 12.0);
    assert_eq!(10.0_f64 / 0.9 * 0.75, 8.333333333333332);
    let p = prime("converter");
    let outcome = Sandbox::default()
        .run_tests(&p.sample_solution, &p.tests, &limits())
        .unwrap();
    assert_eq!(outcome.status, TestStatus::AllPassed, "{:?}", outcome.failures);
    assert_eq!(outcome.total, 2);
}

#[test]
fn impossible_expectation_fails() {
    let solution = "def evens(numbers):\n  return [n for n in numbers if n % 2 == 0]\n";
    let tests = "class Test(unittest.TestCase):\n  def test_evens(self):\n    self.assertEqual(evens([1, 2, 3]), [2, 4])\n";
    let outcome = Sandbox::default().run_tests(solution, tests, &limits()).unwrap();
    assert_eq!(outcome.status, TestStatus::SomeFailed);
    assert_eq!(outcome.failures.len(), 1);
    assert_eq!(outcome.failures[0].test_name, "Test.test_evens");
}

#[test]
fn printing_instead_of_returning_fails() {
    let solution = "def double(x):\n  print(x * 2)\n";
    let tests = "class Test(unittest.TestCase):\n  def test_double(self):\n    self.assertEquals(double(2), 4)\n";
    let outcome = Sandbox::default().run_tests(solution, tests, &limits()).unwrap();
    assert_eq!(outcome.status, TestStatus::SomeFailed);
}

#[test]
fn import_crash_is_errored_and_no_test_class_is_no_tests() {
    let outcome = Sandbox::default()
        .run_tests("raise RuntimeError('x')\n", "class T(unittest.TestCase):\n  def test_a(self): pass\n", &limits())
        .unwrap();
    assert_eq!(outcome.status, TestStatus::Errored);
    let outcome = Sandbox::default()
        .run_tests("x = 1\n", "y = x + 1\n", &limits())
        .unwrap();
    assert_eq!(outcome.status, TestStatus::NoTests);
}

// Executable statements of the solution, by line: 1 def, 2 if, 3 return,
// 4 elif, 5 return, 7 return. Line 6 (`else:`) is not a statement.
#[test]
fn full_branch_tests_cover_every_statement() {
    let p = prime("speeding_check");
    let (outcome, coverage) = Sandbox::default()
        .measure_coverage(SPEEDING_SOLUTION, &p.tests, &limits())
        .unwrap();
    assert_eq!(outcome.status, TestStatus::AllPassed);
    assert_eq!(coverage, CoverageReport::new(6, 6));
    assert_eq!(coverage.fraction(), Some(1.0));
}

// Speed 121 executes lines 1, 2 and 3 only: 3 of 6.
#[test]
fn single_test_covers_half() {
    let tests = "class Test(unittest.TestCase):\n  def test_fast(self):\n    self.assertEqual(speeding_check(121), 'You are fined for $200')\n";
    let (outcome, coverage) = Sandbox::default()
        .measure_coverage(SPEEDING_SOLUTION, tests, &limits())
        .unwrap();
    assert_eq!(outcome.status, TestStatus::AllPassed);
    assert_eq!(coverage, CoverageReport::new(3, 6));
    assert_eq!(coverage.fraction(), Some(0.5));
}

#[test]
fn blank_tests_are_not_applicable() {
    let (outcome, coverage) = Sandbox::default()
        .measure_coverage(SPEEDING_SOLUTION, "  \n", &limits())
        .unwrap();
    assert_eq!(outcome.status, TestStatus::NoTests);
    assert!(!coverage.is_applicable());
}

#[test]
fn adding_a_test_never_lowers_coverage() {
    let one = "class Test(unittest.TestCase):\n  def test_a(self):\n    speeding_check(121)\n";
    let two = format!("{one}  def test_b(self):\n    speeding_check(50)\n");
    let sandbox = Sandbox::default();
    let (_, a) = sandbox.measure_coverage(SPEEDING_SOLUTION, one, &limits()).unwrap();
    let (_, b) = sandbox.measure_coverage(SPEEDING_SOLUTION, &two, &limits()).unwrap();
    assert!(b.statements_hit >= a.statements_hit);
    assert_eq!(a.statements_total, b.statements_total);
}

#[test]
fn run_tests_agrees_with_coverage_run() {
    let p = prime("converter");
    let sandbox = Sandbox::default();
    let plain = sandbox.run_tests(&p.sample_solution, &p.tests, &limits()).unwrap();
    let (traced, _) = sandbox.measure_coverage(&p.sample_solution, &p.tests, &limits()).unwrap();
    assert_eq!(plain, traced);
}

#[test]
fn runs_do_not_touch_the_working_directory() {
    let before: Vec<_> = std::fs::read_dir(".").unwrap().map(|e| e.unwrap().file_name()).collect();
    let out = Sandbox::default()
        .run_solution("open('stray.txt', 'w').write('x')\n", &limits())
        .unwrap();
    assert_eq!(out.status, RunStatus::Ok);
    let after: Vec<_> = std::fs::read_dir(".").unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(before, after);
}

#[test]
fn concurrent_runs_are_isolated() {
    let sandbox = Sandbox::default();
    let code = "import os\nprint(os.getcwd())\nopen('marker', 'x').write('1')\n";
    let dirs: Vec<String> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..4)
            .map(|_| s.spawn(|| sandbox.run_solution(code, &limits()).unwrap()))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                let out = h.join().unwrap();
                assert_eq!(out.status, RunStatus::Ok, "{}", out.stderr);
                out.stdout.trim().to_string()
            })
            .collect()
    });
    let mut unique = dirs.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(unique.len(), 4);
}

#[test]
fn network_is_denied() {
    let out = Sandbox::default()
        .run_solution("import socket\nsocket.socket()\n", &limits())
        .unwrap();
    assert_eq!(out.status, RunStatus::RuntimeError);
}

#[test]
fn output_is_capped() {
    let limit = ExecLimits {
        max_output_bytes: 1000,
        ..ExecLimits::default()
    };
    let out = Sandbox::default().run_solution("print('x' * 100000)\n", &limit).unwrap();
    assert!(out.stdout.len() <= 1000);
}
