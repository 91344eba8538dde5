use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{PrimingExercise, PromptError};
use crate::builtin;
use crate::parser;

/// Seed exercises keyed by id. Files are UTF-8 text in the exercise-block
/// marker format, one prime per file, id taken from the file stem.
#[derive(Debug, Clone, Default)]
pub struct PrimeLibrary {
    primes: BTreeMap<String, PrimingExercise>,
}

impl PrimeLibrary {
    /// The two seed exercises that ship with the crate.
    pub fn builtin() -> Self {
        let mut lib = Self::default();
        for (id, text) in builtin::PRIME_FILES {
            let prime = parse_prime(id, text).expect("built-in primes are valid");
            lib.primes.insert(prime.id.clone(), prime);
        }
        lib
    }

    /// Loads every `*.txt` file under `dir` (non-recursive).
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let entries = fs::read_dir(dir)
            .map_err(|e| PromptError::Library(format!("{}: {e}", dir.display())))?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "txt"))
            .collect();
        paths.sort();
        let mut lib = Self::default();
        for path in paths {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| PromptError::Library(format!("bad file name {}", path.display())))?
                .to_string();
            let text = fs::read_to_string(&path)
                .map_err(|e| PromptError::Library(format!("{}: {e}", path.display())))?;
            lib.insert(parse_prime(&id, &text)?)?;
        }
        Ok(lib)
    }

    pub fn insert(&mut self, prime: PrimingExercise) -> Result<(), PromptError> {
        prime.validate(true)?;
        if self.primes.contains_key(&prime.id) {
            return Err(PromptError::Library(format!("duplicate prime id `{}`", prime.id)));
        }
        self.primes.insert(prime.id.clone(), prime);
        Ok(())
    }

    /// Adds the primes of `other`, failing on id clashes.
    pub fn merge(&mut self, other: PrimeLibrary) -> Result<(), PromptError> {
        for prime in other.primes.into_values() {
            self.insert(prime)?;
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&PrimingExercise, PromptError> {
        self.primes
            .get(id)
            .ok_or_else(|| PromptError::Library(format!("unknown prime `{id}`")))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.primes.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PrimingExercise> {
        self.primes.values()
    }

    pub fn len(&self) -> usize {
        self.primes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primes.is_empty()
    }
}

/// Parses one prime file. Missing statement or solution sections are errors.
pub fn parse_prime(id: &str, text: &str) -> Result<PrimingExercise, PromptError> {
    let sections = parser::split_sections(text);
    let prime = PrimingExercise {
        id: id.to_string(),
        keywords: sections.keywords.unwrap_or_default(),
        problem_statement: sections.problem_statement.unwrap_or_default().to_string(),
        sample_solution: sections.sample_solution.unwrap_or_default().to_string(),
        tests: sections.tests.unwrap_or_default().to_string(),
    };
    prime.validate(true)?;
    Ok(prime)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_library_has_both_primes() {
        let lib = PrimeLibrary::builtin();
        assert_eq!(lib.ids().collect::<Vec<_>>(), vec!["converter", "speeding_check"]);
        let speeding = lib.get("speeding_check").unwrap();
        assert_eq!(speeding.keywords, ["cars", "function", "parameters", "conditional"]);
        assert!(speeding.sample_solution.starts_with("def speeding_check(speed):"));
        assert!(lib.get("nope").is_err());
    }

    #[test]
    fn load_dir_reads_txt_files_only() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), builtin::SPEEDING_CHECK_PRIME).unwrap();
        fs::write(dir.path().join("notes.md"), "ignored").unwrap();
        let lib = PrimeLibrary::load_dir(dir.path()).unwrap();
        assert_eq!(lib.len(), 1);
        assert_eq!(lib.get("a").unwrap().tests, PrimeLibrary::builtin().get("speeding_check").unwrap().tests);
    }

    #[test]
    fn prime_without_solution_is_rejected() {
        let err = parse_prime("bad", "--Problem statement--\nDo it.\n").unwrap_err();
        assert!(matches!(err, PromptError::InvalidPrime { .. }));
    }

    #[test]
    fn duplicate_ids_rejected_on_merge() {
        let mut lib = PrimeLibrary::builtin();
        assert!(lib.merge(PrimeLibrary::builtin()).is_err());
    }
}
