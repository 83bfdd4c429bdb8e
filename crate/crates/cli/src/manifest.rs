//! Experiment manifests.
//!
//! A manifest is a TOML document (JSON is accepted when the text starts
//! with `{`). Values are resolved in the order defaults < manifest <
//! command-line flags, and the resolved manifest is validated as a whole
//! before any sampling starts.

use std::fmt;
use std::path::PathBuf;

use chase_escape::analytics::{spectral, Regime};
use chase_escape::{Caps, InitialSpec, ModelParams, OffspringLaw, OffspringSpec, TimerLaw};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Analytics,
    CeSim,
    BaSim,
    KbrwSim,
    CoupleCheck,
    Qwalk,
    Biggins,
    TailFit,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Analytics => "analytics",
            Kind::CeSim => "ce-sim",
            Kind::BaSim => "ba-sim",
            Kind::KbrwSim => "kbrw-sim",
            Kind::CoupleCheck => "couple-check",
            Kind::Qwalk => "qwalk",
            Kind::Biggins => "biggins",
            Kind::TailFit => "tail-fit",
        }
    }

    fn needs_replicates(self) -> bool {
        !matches!(self, Kind::Analytics | Kind::TailFit)
    }

    fn uses_tree(self) -> bool {
        matches!(self, Kind::CeSim | Kind::CoupleCheck)
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which killed walk `kbrw-sim` runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WalkProcess {
    #[default]
    ChaseEscape,
    BirthAssassination,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapsSpec {
    pub max_nodes: Option<u64>,
    pub max_generation: Option<u32>,
    pub depth_limit: Option<u32>,
}

/// Manifest as written. Every field is optional here so that missing values
/// are reported by [`validate`] together with all other problems.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawManifest {
    pub kind: Option<Kind>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub replicates: Option<u64>,
    pub lambda: Option<f64>,
    pub offspring: Option<OffspringSpec>,
    pub timer: Option<TimerLaw>,
    pub initial: Option<InitialSpec>,
    #[serde(default)]
    pub caps: CapsSpec,
    /// kbrw-sim: which point process.
    pub process: Option<WalkProcess>,
    /// kbrw-sim, qwalk, biggins: starting position.
    pub start: Option<f64>,
    /// qwalk: step cap per walk.
    pub step_cap: Option<u64>,
    /// biggins: tilt; defaults to ρ⋆.
    pub rho: Option<f64>,
    /// biggins: number of generations.
    pub generations: Option<u32>,
    /// biggins: roulette threshold.
    pub eta: Option<f64>,
    /// biggins: particle cap.
    pub max_particles: Option<usize>,
    /// analytics: generations of the outer boundary of the initial set.
    pub boundary_generations: Option<Vec<u32>>,
    /// analytics: renewal function arguments.
    pub renewal_at: Option<Vec<f64>>,
    /// tail-fit: CSV produced by a simulation subcommand.
    pub input: Option<PathBuf>,
    /// tail-fit: column holding the counts; `z` or `n` by default.
    pub column: Option<String>,
    pub n_min: Option<u64>,
    pub n_max: Option<u64>,
    /// tail-fit: levels for the critical trend statistic.
    pub n_list: Option<Vec<u64>>,
}

/// Command-line values that take precedence over the manifest.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub kind: Option<Kind>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_REPLICATES: u64 = 10_000;
pub const DEFAULT_OUT: &str = "results";

#[derive(Clone, Debug)]
pub struct Manifest {
    pub kind: Kind,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub replicates: u64,
    pub caps: Caps,
    /// The resolved manifest as it enters the hash, without `workers`
    /// and `out`, which do not affect results.
    pub echo: RawManifest,
    pub raw: RawManifest,
}

impl Manifest {
    pub fn lambda(&self) -> f64 {
        self.raw.lambda.expect("validated")
    }

    pub fn offspring(&self) -> OffspringLaw {
        OffspringLaw::from_spec(self.raw.offspring.as_ref().expect("validated")).expect("validated")
    }

    pub fn params(&self) -> ModelParams {
        ModelParams::new(self.lambda(), self.offspring()).expect("validated")
    }

    pub fn timer(&self) -> TimerLaw {
        self.raw
            .timer
            .clone()
            .unwrap_or_else(|| TimerLaw::exponential(1.0).expect("unit rate"))
    }

    pub fn initial(&self) -> InitialSpec {
        self.raw.initial.clone().unwrap_or_else(|| InitialSpec::root(0.0))
    }

    /// Hex SHA-256 of the canonical JSON of [`Manifest::echo`].
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(&self.echo).expect("manifest serializes");
        hex::encode(Sha256::digest(canonical))
    }
}

/// One offending field and what is wrong with it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn err(field: &str, message: impl Into<String>) -> FieldError {
    FieldError {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Parses manifest text; TOML unless the first non-blank character is `{`.
pub fn parse(text: &str) -> Result<RawManifest, Vec<FieldError>> {
    let parsed = if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| e.to_string())
    } else {
        toml::from_str(text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| vec![err("manifest", e.trim().to_string())])
}

/// Parses and validates manifest text with no command-line overrides.
pub fn validate(text: &str) -> Result<Manifest, Vec<FieldError>> {
    resolve(parse(text)?, &Overrides::default())
}

/// Applies overrides and checks every field, returning all problems found.
pub fn resolve(mut raw: RawManifest, overrides: &Overrides) -> Result<Manifest, Vec<FieldError>> {
    let mut errors = Vec::new();
    if let Some(k) = overrides.kind {
        match raw.kind {
            Some(m) if m != k => errors.push(err(
                "kind",
                format!("manifest is for `{m}` but the `{k}` subcommand was run"),
            )),
            _ => raw.kind = Some(k),
        }
    }
    if overrides.seed.is_some() {
        raw.seed = overrides.seed;
    }
    if overrides.workers.is_some() {
        raw.workers = overrides.workers;
    }
    if overrides.out.is_some() {
        raw.out = overrides.out.clone();
    }

    let Some(kind) = raw.kind else {
        errors.push(err("kind", "experiment kind is required"));
        return Err(errors);
    };
    let workers = raw.workers.unwrap_or_else(default_workers);
    if workers == 0 {
        errors.push(err("workers", "workers must be at least 1"));
    }
    let replicates = raw.replicates.unwrap_or(DEFAULT_REPLICATES);
    if kind.needs_replicates() && replicates == 0 {
        errors.push(err("replicates", "replicates must be at least 1"));
    }

    let defaults = Caps::default();
    let caps = Caps {
        max_nodes: raw.caps.max_nodes.unwrap_or(defaults.max_nodes),
        max_generation: raw.caps.max_generation.unwrap_or(defaults.max_generation),
        depth_limit: raw.caps.depth_limit,
    };
    if caps.max_nodes == 0 {
        errors.push(err("caps.max_nodes", "max_nodes must be at least 1"));
    }
    if caps.max_generation == 0 {
        errors.push(err("caps.max_generation", "max_generation must be at least 1"));
    }

    let needs_lambda = kind != Kind::TailFit;
    if needs_lambda {
        match raw.lambda {
            None => errors.push(err("lambda", "lambda is required")),
            Some(l) if !(l > 0.0 && l.is_finite()) => {
                errors.push(err("lambda", "lambda must be positive"))
            }
            _ => {}
        }
    }

    let is_ba = matches!(kind, Kind::BaSim)
        || (kind == Kind::KbrwSim && raw.process == Some(WalkProcess::BirthAssassination));
    let needs_offspring = needs_lambda && !is_ba;
    let mut law = None;
    if needs_offspring {
        match &raw.offspring {
            None => errors.push(err("offspring", "offspring law is required")),
            Some(spec) => match OffspringLaw::from_spec(spec) {
                Ok(l) => law = Some(l),
                Err(e) => errors.push(err("offspring", e.to_string())),
            },
        }
    } else if raw.offspring.is_some() && kind != Kind::Analytics {
        errors.push(err("offspring", format!("not used by `{kind}`")));
    }
    if let Some(t) = &raw.timer {
        if let Err(e) = t.validate() {
            errors.push(err("timer", e.to_string()));
        }
    }
    if raw.timer.is_some() && !is_ba && kind != Kind::Analytics {
        errors.push(err("timer", format!("not used by `{kind}`")));
    }

    if let Some(init) = &raw.initial {
        if !kind.uses_tree() {
            errors.push(err("initial", format!("not used by `{kind}`")));
        }
        if !(init.delay >= 0.0 && init.delay.is_finite()) {
            errors.push(err("initial.delay", "delay must be finite and nonnegative"));
        }
        if init.paths.is_empty() {
            errors.push(err("initial.paths", "the initial set must contain the root"));
        } else if !init.paths.iter().any(|p| p.is_empty()) {
            errors.push(err("initial.paths", "the initial set must contain the root (path [])"));
        }
        let beyond_root = init.paths.iter().any(|p| !p.is_empty());
        if let Some(l) = &law {
            match l.deterministic() {
                Some(d) => {
                    if let Some(p) = init.paths.iter().find(|p| p.iter().any(|&i| i >= d)) {
                        errors.push(err(
                            "initial.paths",
                            format!("path {p:?} uses a child index beyond d = {d}"),
                        ));
                    }
                }
                None if beyond_root => errors.push(err(
                    "initial.paths",
                    "initial sets beyond the root need a d-ary offspring law",
                )),
                None => {}
            }
        }
        if let Some(depth) = caps.depth_limit {
            if init.paths.iter().any(|p| p.len() as u32 > depth) {
                errors.push(err("initial.paths", "a path is deeper than caps.depth_limit"));
            }
        }
    }

    if let Some(x) = raw.start {
        if !matches!(kind, Kind::KbrwSim | Kind::Qwalk | Kind::Biggins) {
            errors.push(err("start", format!("not used by `{kind}`")));
        } else if !(x >= 0.0 && x.is_finite()) {
            errors.push(err("start", "start must be finite and nonnegative"));
        }
    }

    let params = match (raw.lambda, &law) {
        (Some(l), Some(law)) if l > 0.0 && l.is_finite() => ModelParams::new(l, law.clone()).ok(),
        _ => None,
    };
    let regime = params.as_ref().and_then(|p| spectral(p).ok()).map(|s| s.regime);

    match kind {
        Kind::CoupleCheck => {
            if raw.initial.as_ref().is_some_and(|i| i.paths.iter().any(|p| !p.is_empty())) {
                errors.push(err(
                    "initial.paths",
                    "couple-check compares runs started from the root only",
                ));
            }
            if regime == Some(Regime::Supercritical) && caps.depth_limit.is_none() {
                errors.push(err(
                    "caps.depth_limit",
                    "couple-check above criticality needs a truncated tree",
                ));
            }
        }
        Kind::Qwalk => {
            if matches!(regime, Some(Regime::Supercritical)) {
                errors.push(err("lambda", "the tilted walk exists only at or below criticality"));
            }
            if raw.step_cap == Some(0) {
                errors.push(err("step_cap", "step_cap must be at least 1"));
            }
        }
        Kind::Biggins => {
            if let Some(r) = raw.rho {
                if !(r > 0.0 && r < 1.0) {
                    errors.push(err("rho", "rho must lie in (0, 1)"));
                }
            } else if matches!(regime, Some(Regime::Supercritical)) {
                errors.push(err("rho", "rho is required above criticality"));
            }
            if raw.generations == Some(0) {
                errors.push(err("generations", "generations must be at least 1"));
            }
            if let Some(e) = raw.eta {
                if !(e > 0.0 && e.is_finite()) {
                    errors.push(err("eta", "eta must be positive"));
                }
            }
            if raw.max_particles == Some(0) {
                errors.push(err("max_particles", "max_particles must be at least 1"));
            }
        }
        Kind::Analytics => {
            if let Some(b) = &raw.boundary_generations {
                if let Some(l) = &law {
                    if l.deterministic().is_none() {
                        errors.push(err(
                            "boundary_generations",
                            "boundary prefactors need a d-ary offspring law (integer d)",
                        ));
                    }
                }
                if b.is_empty() || b.contains(&0) {
                    errors.push(err(
                        "boundary_generations",
                        "boundary generations must be a nonempty list of positive integers",
                    ));
                }
                if matches!(regime, Some(Regime::Supercritical)) {
                    errors.push(err("boundary_generations", "boundary prefactors need λ ≤ λ_c"));
                }
            }
            if let Some(xs) = &raw.renewal_at {
                if xs.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
                    errors.push(err("renewal_at", "renewal arguments must be finite and nonnegative"));
                }
                if matches!(regime, Some(Regime::Supercritical)) {
                    errors.push(err("renewal_at", "the renewal function needs λ ≤ λ_c"));
                }
            }
        }
        Kind::TailFit => {
            if raw.input.is_none() {
                errors.push(err("input", "input CSV is required"));
            }
            match (raw.n_min, raw.n_max) {
                (Some(a), Some(b)) if a == 0 || a >= b => {
                    errors.push(err("n_min", "need 1 <= n_min < n_max"))
                }
                (Some(_), Some(_)) => {}
                (None, None) if raw.n_list.is_some() => {}
                _ => errors.push(err("n_min", "n_min and n_max are required together")),
            }
            if let Some(ns) = &raw.n_list {
                if ns.iter().any(|&n| n < 2) {
                    errors.push(err("n_list", "trend levels must be at least 2"));
                }
            }
        }
        Kind::KbrwSim | Kind::CeSim | Kind::BaSim => {}
    }

    if !errors.is_empty() {
        return Err(errors);
    }
    let mut echo = raw.clone();
    echo.seed = Some(raw.seed.unwrap_or(DEFAULT_SEED));
    echo.replicates = kind.needs_replicates().then_some(replicates);
    echo.workers = None;
    echo.out = None;
    Ok(Manifest {
        kind,
        seed: raw.seed.unwrap_or(DEFAULT_SEED),
        workers,
        out: raw.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        replicates,
        caps,
        echo,
        raw,
    })
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
kind = "ce-sim"
lambda = 0.15
offspring = { kind = "d-ary", d = 2 }
"#;

    #[test]
    fn minimal_ce_manifest_is_valid() {
        let m = validate(MINIMAL).unwrap();
        assert_eq!(m.kind, Kind::CeSim);
        assert_eq!(m.replicates, DEFAULT_REPLICATES);
        assert_eq!(m.seed, DEFAULT_SEED);
        assert_eq!(m.caps, Caps::default());
    }

    #[test]
    fn json_is_accepted() {
        let m = validate(r#"{"kind":"ce-sim","lambda":0.15,"offspring":{"kind":"d-ary","d":2}}"#).unwrap();
        assert_eq!(m.lambda(), 0.15);
    }

    #[test]
    fn negative_lambda_is_reported() {
        let errs = validate(&MINIMAL.replace("0.15", "-1")).unwrap_err();
        assert!(errs.iter().any(|e| e.message == "lambda must be positive"), "{errs:?}");
    }

    #[test]
    fn table_sum_is_named() {
        let text = r#"
kind = "ce-sim"
lambda = 0.1
offspring = { kind = "table", p = { "0" = 0.4, "2" = 0.5 } }
"#;
        let errs = validate(text).unwrap_err();
        assert!(errs.iter().any(|e| e.message.contains("0.9")), "{errs:?}");
    }

    #[test]
    fn every_problem_is_listed() {
        let text = r#"
kind = "ce-sim"
lambda = -1
replicates = 0
offspring = { kind = "table", p = { "0" = 0.4, "2" = 0.5 } }
"#;
        let errs = validate(text).unwrap_err();
        let fields: Vec<&str> = errs.iter().map(|e| e.field.as_str()).collect();
        assert_eq!(fields, ["replicates", "lambda", "offspring"]);
    }

    #[test]
    fn flags_override_the_manifest() {
        let raw = parse(&format!("{MINIMAL}seed = 3\nworkers = 2\n")).unwrap();
        let over = Overrides {
            seed: Some(9),
            workers: Some(1),
            ..Default::default()
        };
        let m = resolve(raw, &over).unwrap();
        assert_eq!((m.seed, m.workers), (9, 1));
    }

    #[test]
    fn hash_ignores_workers_and_out() {
        let a = validate(&format!("{MINIMAL}workers = 1\nout = \"a\"\n")).unwrap();
        let b = validate(&format!("{MINIMAL}workers = 4\nout = \"b\"\n")).unwrap();
        let c = validate(&format!("{MINIMAL}seed = 1\n")).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn subcommand_must_match_manifest_kind() {
        let raw = parse(MINIMAL).unwrap();
        let over = Overrides {
            kind: Some(Kind::BaSim),
            ..Default::default()
        };
        assert!(resolve(raw, &over).unwrap_err()[0].field == "kind");
    }

    #[test]
    fn cross_field_rules() {
        let gw = r#"
kind = "analytics"
lambda = 0.1
offspring = { kind = "poisson", mean = 2.5 }
boundary_generations = [1, 1]
"#;
        let errs = validate(gw).unwrap_err();
        assert!(errs[0].message.contains("integer d"), "{errs:?}");

        let couple = r#"
kind = "couple-check"
lambda = 0.3
offspring = { kind = "d-ary", d = 2 }
"#;
        assert_eq!(validate(couple).unwrap_err()[0].field, "caps.depth_limit");
        assert!(validate(&format!("{couple}[caps]\ndepth_limit = 12\n")).is_ok());

        let unknown = format!("{MINIMAL}lamda = 0.2\n");
        assert_eq!(validate(&unknown).unwrap_err()[0].field, "manifest");
    }

    #[test]
    fn ba_manifest_needs_no_offspring() {
        let m = validate("kind = \"ba-sim\"\nlambda = 0.2\n").unwrap();
        assert_eq!(m.timer(), TimerLaw::exponential(1.0).unwrap());
        let bad = "kind = \"ba-sim\"\nlambda = 0.2\ntimer = { kind = \"exponential\", rate = 0.0 }\n";
        assert_eq!(validate(bad).unwrap_err()[0].field, "timer");
    }
}
