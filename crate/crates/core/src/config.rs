//! Flat `key = value` configuration files.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Lists are comma-separated. Relative paths resolve against the file's
//! directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::ensemble::MatchMode;
use crate::error::{Error, Result};
use crate::linsvm::SvmParams;
use crate::represent::Aggregation;

/// Parsed key/value pairs; every key must be consumed.
#[derive(Debug, Default)]
pub struct KeyValues {
    values: BTreeMap<String, String>,
    base: PathBuf,
}

impl KeyValues {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let key = key.trim().to_string();
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", n + 1)));
            }
        }
        Ok(KeyValues {
            values,
            base: base.to_path_buf(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn take_str(&mut self, key: &str) -> Option<String> {
        self.values.remove(key)
    }

    pub fn take<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take_str(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::Config(format!("invalid value {raw:?} for {key}"))),
        }
    }

    pub fn take_list<T: FromStr>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        match self.take_str(key) {
            None => Ok(default),
            Some(raw) => raw
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse()
                        .map_err(|_| Error::Config(format!("invalid list item {s:?} for {key}")))
                })
                .collect(),
        }
    }

    pub fn take_path(&mut self, key: &str) -> Option<PathBuf> {
        self.take_str(key).map(|p| self.base.join(p))
    }

    /// Like [`take_path`](Self::take_path), resolving `default` as well.
    pub fn take_path_or(&mut self, key: &str, default: PathBuf) -> PathBuf {
        let p = self.take_str(key).map(PathBuf::from).unwrap_or(default);
        self.base.join(p)
    }

    pub fn finish(self) -> Result<()> {
        match self.values.keys().next() {
            None => Ok(()),
            Some(key) => Err(Error::Config(format!("unknown key {key:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    pub image_features: PathBuf,
    pub embeddings: PathBuf,
    pub out_dir: PathBuf,
    pub lexicon: Option<PathBuf>,
    pub lemma_map: Option<PathBuf>,
    pub min_count: usize,
    pub gate: f64,
    pub alpha: f64,
    pub alphas: Vec<f64>,
    pub c_const: usize,
    pub c_grid: Vec<usize>,
    pub neg_ratio: usize,
    pub c_reg: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub aggregation: Aggregation,
    pub tags: Vec<String>,
    pub match_mode: MatchMode,
}

pub fn default_alpha_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: PathBuf::from("corpus.jsonl"),
            image_features: PathBuf::from("image_features.txt"),
            embeddings: PathBuf::from("embeddings.txt"),
            out_dir: PathBuf::from("out"),
            lexicon: None,
            lemma_map: None,
            min_count: 30,
            gate: 0.70,
            alpha: 0.6,
            alphas: default_alpha_grid(),
            c_const: 4,
            c_grid: (0..=8).collect(),
            neg_ratio: 10,
            c_reg: 1.0,
            tol: 1e-3,
            max_iter: 1000,
            seed: 0,
            aggregation: Aggregation::Mean,
            tags: Vec::new(),
            match_mode: MatchMode::Exact,
        }
    }
}

impl FromStr for MatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(MatchMode::Exact),
            "substring" => Ok(MatchMode::Substring),
            other => Err(Error::Config(format!("unknown match mode {other:?}"))),
        }
    }
}

impl PipelineConfig {
    pub fn from_key_values(mut kv: KeyValues) -> Result<Self> {
        let d = PipelineConfig::default();
        let config = PipelineConfig {
            corpus: kv.take_path_or("corpus", d.corpus),
            image_features: kv.take_path_or("image_features", d.image_features),
            embeddings: kv.take_path_or("embeddings", d.embeddings),
            out_dir: kv.take_path_or("out_dir", d.out_dir),
            lexicon: kv.take_path("lexicon"),
            lemma_map: kv.take_path("lemma_map"),
            min_count: kv.take("min_count", d.min_count)?,
            gate: kv.take("gate", d.gate)?,
            alpha: kv.take("alpha", d.alpha)?,
            alphas: kv.take_list("alphas", d.alphas)?,
            c_const: kv.take("c_const", d.c_const)?,
            c_grid: kv.take_list("c_grid", d.c_grid)?,
            neg_ratio: kv.take("neg_ratio", d.neg_ratio)?,
            c_reg: kv.take("c_reg", d.c_reg)?,
            tol: kv.take("tol", d.tol)?,
            max_iter: kv.take("max_iter", d.max_iter)?,
            seed: kv.take("seed", d.seed)?,
            aggregation: kv.take("aggregation", d.aggregation)?,
            tags: kv.take_list("tags", d.tags)?,
            match_mode: kv.take("match_mode", d.match_mode)?,
        };
        kv.finish()?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_key_values(KeyValues::load(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be in [0, 1], got {v}")))
            }
        };
        unit("alpha", self.alpha)?;
        unit("gate", self.gate)?;
        for &a in &self.alphas {
            unit("alphas entry", a)?;
        }
        if self.alphas.is_empty() || self.c_grid.is_empty() {
            return Err(Error::Config("alphas and c_grid must be nonempty".into()));
        }
        if self.min_count == 0 || self.neg_ratio == 0 || self.max_iter == 0 {
            return Err(Error::Config(
                "min_count, neg_ratio and max_iter must be positive".into(),
            ));
        }
        if !(self.c_reg > 0.0 && self.tol > 0.0) {
            return Err(Error::Config("c_reg and tol must be positive".into()));
        }
        Ok(())
    }

    pub fn svm(&self) -> SvmParams {
        SvmParams {
            c_reg: self.c_reg,
            tol: self.tol,
            max_iter: self.max_iter,
            seed: self.seed,
        }
    }

    /// Canonical `key = value` text of every setting.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        line("corpus", self.corpus.display().to_string());
        line("image_features", self.image_features.display().to_string());
        line("embeddings", self.embeddings.display().to_string());
        line("out_dir", self.out_dir.display().to_string());
        if let Some(p) = &self.lexicon {
            line("lexicon", p.display().to_string());
        }
        if let Some(p) = &self.lemma_map {
            line("lemma_map", p.display().to_string());
        }
        out.push_str(&self.parameter_text());
        out
    }

    /// The non-path settings, which fix what every stage computes.
    fn parameter_text(&self) -> String {
        let join = |v: Vec<String>| v.join(", ");
        let mut out = String::new();
        let mut line = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        line("min_count", self.min_count.to_string());
        line("gate", self.gate.to_string());
        line("alpha", self.alpha.to_string());
        line("alphas", join(self.alphas.iter().map(f64::to_string).collect()));
        line("c_const", self.c_const.to_string());
        line("c_grid", join(self.c_grid.iter().map(usize::to_string).collect()));
        line("neg_ratio", self.neg_ratio.to_string());
        line("c_reg", self.c_reg.to_string());
        line("tol", self.tol.to_string());
        line("max_iter", self.max_iter.to_string());
        line("seed", self.seed.to_string());
        line("aggregation", self.aggregation.to_string());
        line("tags", self.tags.join(", "));
        line(
            "match_mode",
            match self.match_mode {
                MatchMode::Exact => "exact".into(),
                MatchMode::Substring => "substring".into(),
            },
        );
        out
    }

    /// Hash of the parameters; input files are tracked by content instead.
    pub fn parameter_hash(&self) -> String {
        hex::encode(Sha256::digest(self.parameter_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = PipelineConfig::default();
        assert_eq!(c.min_count, 30);
        assert_eq!(c.gate, 0.70);
        assert_eq!((c.alpha, c.c_const, c.neg_ratio), (0.6, 4, 10));
        assert_eq!(c.alphas.len(), 11);
        assert_eq!(c.c_grid, (0..=8).collect::<Vec<_>>());
        assert_eq!(c.svm(), SvmParams::default());
    }

    #[test]
    fn parses_and_resolves_paths() {
        let text = "# comment\ncorpus = data/c.jsonl\nalpha = 0.5 # inline\nalphas = 0, 0.5,1\ntags = jump, ride bike\naggregation = max\n";
        let c = PipelineConfig::from_key_values(KeyValues::parse(text, Path::new("/cfg")).unwrap()).unwrap();
        assert_eq!(c.corpus, PathBuf::from("/cfg/data/c.jsonl"));
        assert_eq!(c.alpha, 0.5);
        assert_eq!(c.alphas, [0.0, 0.5, 1.0]);
        assert_eq!(c.tags, ["jump", "ride bike"]);
        assert_eq!(c.aggregation, Aggregation::Max);
        assert_eq!(c.out_dir, PathBuf::from("/cfg/out"));
        let again = PipelineConfig::from_key_values(KeyValues::parse(&c.to_text(), Path::new("/")).unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn rejects_bad_configs() {
        let parse = |t: &str| PipelineConfig::from_key_values(KeyValues::parse(t, Path::new(".")).unwrap());
        assert!(parse("alpha = 1.5").is_err());
        assert!(parse("gate = -0.1").is_err());
        assert!(parse("min_count = 0").is_err());
        assert!(parse("bogus = 1").is_err());
        assert!(parse("seed = x").is_err());
        assert!(KeyValues::parse("no equals", Path::new(".")).is_err());
        assert!(KeyValues::parse("a = 1\na = 2", Path::new(".")).is_err());
    }

    #[test]
    fn hash_ignores_paths() {
        let a = PipelineConfig::default();
        let b = PipelineConfig { out_dir: "elsewhere".into(), ..a.clone() };
        assert_eq!(a.parameter_hash(), b.parameter_hash());
        let c = PipelineConfig { seed: 1, ..a.clone() };
        assert_ne!(a.parameter_hash(), c.parameter_hash());
    }
}
