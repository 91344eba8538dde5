//! Built-in seed exercises, reference programs and keyword themes.

pub const SPEEDING_CHECK_PRIME: &str = include_str!("../primes/speeding_check.txt");
pub const CONVERTER_PRIME: &str = include_str!("../primes/converter.txt");

/// `(id, file contents)` for every built-in prime.
pub const PRIME_FILES: [(&str, &str); 2] = [
    ("speeding_check", SPEEDING_CHECK_PRIME),
    ("converter", CONVERTER_PRIME),
];

/// Reference programs used for explanation generation.
pub mod programs {
    pub const SPEEDING_CHECK: &str = include_str!("../programs/speeding_check.py");
    pub const FIZZ_BUZZ: &str = include_str!("../programs/fizz_buzz.py");
    pub const RAINFALL: &str = include_str!("../programs/rainfall.py");
    pub const CONVERTER: &str = include_str!("../programs/converter.py");
    pub const FISHERMAN: &str = include_str!("../programs/fisherman.py");

    /// The four programs explained in the step-by-step study, in order.
    pub const EXPLANATION_SET: [(&str, &str); 4] = [
        ("speeding_check", SPEEDING_CHECK),
        ("fizz_buzz", FIZZ_BUZZ),
        ("rainfall", RAINFALL),
        ("converter", CONVERTER),
    ];
}

/// Contextual themes offered for exercise generation.
pub const CONTEXTS: [&str; 9] = [
    "hiking",
    "fishing",
    "relationships",
    "football",
    "music",
    "health",
    "ice hockey",
    "books",
    "cooking",
];

/// Programming-concept set named "function".
pub const FUNCTION_CONCEPTS: [&str; 5] = [
    "function",
    "parameters",
    "dictionary",
    "dict comprehension",
    "arithmetics",
];

/// Programming-concept set named "class".
pub const CLASS_CONCEPTS: [&str; 4] = ["class", "list", "list comprehension", "conditional"];

/// Looks up a named concept set.
pub fn concept_set(name: &str) -> Option<&'static [&'static str]> {
    match name {
        "function" => Some(&FUNCTION_CONCEPTS),
        "class" => Some(&CLASS_CONCEPTS),
        _ => None,
    }
}
