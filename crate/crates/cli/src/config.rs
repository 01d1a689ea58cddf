//! Run configuration.
//!
//! Values are layered: built-in defaults, then command-line flags, then the
//! TOML config file (the file wins). Relative paths in the file resolve
//! against the file's directory.

use std::path::{Path, PathBuf};

use psyagree_core::agreement::Coefficient;
use psyagree_core::irt::RaschConfig;
use psyagree_core::validation::ValidationConfig;
use psyagree_core::PopulationKind;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Item bank, CSV or JSON.
    pub bank: Option<PathBuf>,
    /// Long-format response files, CSV or JSON.
    pub responses: Vec<PathBuf>,
    /// Name of the population the others are compared against.
    pub reference: Option<String>,
    /// Restrict analysis to these categories; empty means all.
    pub categories: Vec<String>,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
    /// Treat non-convergence and undefined distances as errors.
    pub strict: bool,
    /// Populations the validation protocol screens; empty means every
    /// population of kind `human`.
    pub screen_populations: Vec<String>,
    pub validation: ValidationConfig,
    pub clustering: ClusteringConfig,
    pub irt: RaschConfig,
    pub agreement: AgreementConfig,
    pub simulate: SimulateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            bank: None,
            responses: Vec::new(),
            reference: None,
            categories: Vec::new(),
            output_dir: None,
            seed: 20_241,
            strict: false,
            screen_populations: Vec::new(),
            validation: ValidationConfig::default(),
            clustering: ClusteringConfig::default(),
            irt: RaschConfig::default(),
            agreement: AgreementConfig::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

/// Number of clusters: chosen by silhouette, or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClusterK {
    #[default]
    Auto,
    Fixed(usize),
}

impl Serialize for ClusterK {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ClusterK::Auto => s.serialize_str("auto"),
            ClusterK::Fixed(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for ClusterK {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(usize),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(k) => Ok(ClusterK::Fixed(k)),
            Raw::Str(s) if s == "auto" => Ok(ClusterK::Auto),
            Raw::Str(s) => {
                s.parse().map(ClusterK::Fixed).map_err(|_| serde::de::Error::custom(format!("k must be \"auto\" or an integer, got `{s}`")))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    /// Only "average" is supported.
    pub linkage: String,
    pub k: ClusterK,
    /// Upper end of the silhouette search; defaults to n_items - 1.
    pub k_max: Option<usize>,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig { linkage: "average".into(), k: ClusterK::Auto, k_max: None }
    }
}

/// Coefficient used for each agreement table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgreementConfig {
    pub difficulty: Coefficient,
    pub comembership: Coefficient,
    pub rasch_b: Coefficient,
    pub item_total: Coefficient,
}

impl Default for AgreementConfig {
    fn default() -> Self {
        AgreementConfig {
            difficulty: Coefficient::Spearman,
            comembership: Coefficient::Pearson,
            rasch_b: Coefficient::Pearson,
            item_total: Coefficient::Pearson,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimModel {
    Rasch,
    Guesser,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimCategory {
    pub name: String,
    pub n_items: usize,
    #[serde(default = "default_b_min")]
    pub b_min: f64,
    #[serde(default = "default_b_max")]
    pub b_max: f64,
}

fn default_b_min() -> f64 {
    -2.0
}

fn default_b_max() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimPopulation {
    pub name: String,
    pub kind: PopulationKind,
    pub model: SimModel,
    pub n_respondents: usize,
    #[serde(default)]
    pub theta_mean: f64,
    #[serde(default = "default_sd")]
    pub theta_sd: f64,
    #[serde(default = "default_choices")]
    pub n_choices: u32,
    /// Defaults to the run seed plus the population's position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_sd() -> f64 {
    1.0
}

fn default_choices() -> u32 {
    3
}

/// What `simulate` generates. The default is a desk-scale study: one
/// 15-item category, 27 reference respondents, 240 proxies sharing the
/// same item difficulties, and 240 random guessers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub categories: Vec<SimCategory>,
    pub populations: Vec<SimPopulation>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let pop = |name: &str, kind, model, n| SimPopulation {
            name: name.into(),
            kind,
            model,
            n_respondents: n,
            theta_mean: 0.0,
            theta_sd: 1.0,
            n_choices: 3,
            seed: None,
        };
        SimulateConfig {
            categories: vec![SimCategory { name: "demo".into(), n_items: 15, b_min: -2.0, b_max: 2.0 }],
            populations: vec![
                pop("human", PopulationKind::Human, SimModel::Rasch, 27),
                pop("proxy", PopulationKind::Proxy, SimModel::Rasch, 240),
                pop("random", PopulationKind::Random, SimModel::Guesser, 240),
            ],
        }
    }
}

fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        // a tagged enum is replaced whole, not merged field by field
        (toml::Value::Table(b), toml::Value::Table(o)) if !o.contains_key("mode") => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn rebase(table: &mut toml::Table, dir: &Path) {
    let fix = |v: &mut toml::Value| {
        if let toml::Value::String(s) = v {
            let p = Path::new(s.as_str());
            if p.is_relative() {
                *s = dir.join(p).to_string_lossy().into_owned();
            }
        }
    };
    for key in ["bank", "output_dir"] {
        if let Some(v) = table.get_mut(key) {
            fix(v);
        }
    }
    if let Some(toml::Value::Array(items)) = table.get_mut("responses") {
        items.iter_mut().for_each(fix);
    }
}

impl RunConfig {
    /// Overlay a TOML config file on top of `self`.
    pub fn with_file(self, path: &Path) -> CliResult<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut overlay: toml::Table = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        rebase(&mut overlay, path.parent().unwrap_or(Path::new(".")));
        let mut base = toml::Value::try_from(&self).map_err(|e| CliError::Config(e.to_string()))?;
        merge(&mut base, toml::Value::Table(overlay));
        let cfg: RunConfig = base.try_into().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Checks that do not touch the filesystem.
    pub fn check(&self) -> CliResult<()> {
        self.validation.validate()?;
        if self.clustering.linkage != "average" {
            return Err(CliError::Config(format!("unsupported linkage `{}` (only \"average\")", self.clustering.linkage)));
        }
        if self.clustering.k == ClusterK::Fixed(0) || self.clustering.k == ClusterK::Fixed(1) {
            return Err(CliError::Config("clustering.k must be >= 2".into()));
        }
        if self.irt.quadrature_points < 2 {
            return Err(CliError::Config("irt.quadrature_points must be >= 2".into()));
        }
        Ok(())
    }

    pub fn require_bank(&self) -> CliResult<&Path> {
        let p = self.bank.as_deref().ok_or_else(|| CliError::Usage("no item bank given (--bank)".into()))?;
        require_exists(p)?;
        Ok(p)
    }

    pub fn require_responses(&self) -> CliResult<&[PathBuf]> {
        if self.responses.is_empty() {
            return Err(CliError::Usage("no response files given (--responses)".into()));
        }
        for p in &self.responses {
            require_exists(p)?;
        }
        Ok(&self.responses)
    }

    pub fn require_output(&self) -> CliResult<&Path> {
        self.output_dir.as_deref().ok_or_else(|| CliError::Usage("no output directory given (--out)".into()))
    }
}

fn require_exists(p: &Path) -> CliResult<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{} does not exist", p.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("run.toml");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn file_overrides_flags_and_keeps_the_rest() {
        let dir = tempfile::tempdir().unwrap();
        let flags = RunConfig { reference: Some("flag-ref".into()), seed: 5, strict: true, ..RunConfig::default() };
        let p = write(dir.path(), "reference = \"file-ref\"\nbank = \"b.csv\"\n[validation]\nreject_below = 0.3\n[clustering]\nk = 3\n");
        let cfg = flags.with_file(&p).unwrap();
        assert_eq!(cfg.reference.as_deref(), Some("file-ref"));
        assert_eq!(cfg.seed, 5);
        assert!(cfg.strict);
        assert_eq!(cfg.validation.reject_below, 0.3);
        assert_eq!(cfg.validation.accept_above, 0.6);
        assert_eq!(cfg.clustering.k, ClusterK::Fixed(3));
        assert_eq!(cfg.bank.unwrap(), dir.path().join("b.csv"));
    }

    #[test]
    fn bad_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        for body in [
            "unknown_key = 1\n",
            "[validation]\nreject_below = 0.9\n",
            "[clustering]\nlinkage = \"ward\"\n",
            "[clustering]\nk = \"many\"\n",
            "[irt]\ndiscrimination = { mode = \"fixed\", value = -1.0 }\nquadrature_points = 1\n",
        ] {
            let p = write(dir.path(), body);
            let err = RunConfig::default().with_file(&p).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{body}: {err}");
        }
    }

    #[test]
    fn simulate_section_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "[irt.discrimination]\nmode = \"estimated_shared\"\n\n[[simulate.categories]]\nname = \"x\"\nn_items = 4\n\n[[simulate.populations]]\nname = \"g\"\nkind = \"random\"\nmodel = \"guesser\"\nn_respondents = 9\nn_choices = 1\n",
        );
        let cfg = RunConfig::default().with_file(&p).unwrap();
        assert_eq!(cfg.simulate.categories.len(), 1);
        assert_eq!(cfg.simulate.populations[0].n_choices, 1);
        assert_eq!(cfg.irt.discrimination, psyagree_core::irt::DiscriminationMode::EstimatedShared);
        assert_eq!(cfg.irt.quadrature_points, 61);
    }
}
