//! Fixture cassettes and config for the CLI and service tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use exforge::Config;
use exforge_core::builtin;
use exforge_core::gateway::{CompletionResult, GenerationConfig, ReplayCassette};
use exforge_core::prompt::{
    build_exercise_prompt, build_explanation_prompt, ExplanationStyle, KeywordSet, PrimeLibrary,
};

pub const ICE_HOCKEY: &str = include_str!("../fixtures/ice_hockey_completion.txt");
pub const FISHERMAN_EXPLANATION: &str = include_str!("../fixtures/fisherman_explanation.txt");

/// Same exercise, but the solution prints instead of returning.
pub fn printing_ice_hockey() -> String {
    ICE_HOCKEY
        .replace("return \"You are", "print(\"You are")
        .replace("conduct\"\n  else", "conduct\")\n  else")
        .replace("return \"All good, keep playing\"", "print(\"All good, keep playing\")")
}

/// The generation settings the tools use under the default config.
pub fn default_generation() -> GenerationConfig {
    let c = Config::default();
    GenerationConfig {
        max_tokens: c.generation.max_tokens,
        ..GenerationConfig::default()
    }
    .with_model(c.generation.model_id)
}

pub fn record_exercise(
    cassette: &mut ReplayCassette,
    prime: &str,
    context: Option<&str>,
    temperature: f64,
    sample: u32,
    text: &str,
) {
    let prime = PrimeLibrary::builtin().get(prime).unwrap().clone();
    let keywords = KeywordSet::new(context, None).unwrap();
    let prompt = build_exercise_prompt(&prime, &keywords).unwrap();
    let config = default_generation().with_temperature(temperature).with_sample(sample);
    cassette.record(&prompt, &config, CompletionResult::fixture(text));
}

/// speeding_check + "ice hockey" at temperature 0: sample 0 passes, sample
/// 1 fails its tests, sample 2 passes. "music" sample 0 prints. Plus a
/// step-by-step explanation of the Fisherman program.
pub fn fixture_cassette() -> ReplayCassette {
    let mut c = ReplayCassette::default();
    let printing = printing_ice_hockey();
    record_exercise(&mut c, "speeding_check", Some("ice hockey"), 0.0, 0, ICE_HOCKEY);
    record_exercise(&mut c, "speeding_check", Some("ice hockey"), 0.0, 1, &printing);
    record_exercise(&mut c, "speeding_check", Some("ice hockey"), 0.0, 2, ICE_HOCKEY);
    record_exercise(&mut c, "speeding_check", Some("music"), 0.0, 0, &printing);
    let prompt =
        build_explanation_prompt(builtin::programs::FISHERMAN, ExplanationStyle::StepByStep).unwrap();
    c.record(
        &prompt,
        &default_generation(),
        CompletionResult::fixture(FISHERMAN_EXPLANATION),
    );
    c
}

pub fn write_cassette(dir: &Path) -> PathBuf {
    let path = dir.join("fixture.jsonl");
    std::fs::write(&path, fixture_cassette().to_jsonl()).unwrap();
    path
}

/// A replay config rooted in `dir`.
pub fn config(dir: &Path) -> Config {
    let mut c = Config {
        store: dir.join("store"),
        ..Config::default()
    };
    c.backend.cassette = Some(write_cassette(dir));
    c
}
