//! Versioned text formats for the baseline patch classifier and the forest.
//!
//! Both are line-oriented `key value...` files. Floats are written with the
//! shortest representation that parses back to the same bits, so a saved
//! model reloads bit-identically.

use std::fmt::Write as _;
use std::path::Path;

use wsi_core::classifier::{BaselineModel, TrainParams};
use wsi_core::forest::{ForestConfig, ForestModel, Node, Tree};

use crate::error::{Result, WsiError};
use crate::formats::{read_text, write_text};

pub const BASELINE_MAGIC: &str = "wsi-baseline 1";
pub const FOREST_MAGIC: &str = "wsi-forest 1";

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "none".into(), |x| x.to_string())
}

/// Cursor over `key value...` lines with line-numbered errors.
struct Lines<'a> {
    path: &'a Path,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        Self { path, iter: text.lines().enumerate(), line: 0 }
    }

    fn err(&self, msg: impl std::fmt::Display) -> WsiError {
        WsiError::format(self.path, format!("line {}: {msg}", self.line))
    }

    fn next_line(&mut self) -> Result<&'a str> {
        let (i, l) = self.iter.next().ok_or_else(|| WsiError::format(self.path, "unexpected end of file"))?;
        self.line = i + 1;
        Ok(l)
    }

    fn expect(&mut self, exact: &str) -> Result<()> {
        let l = self.next_line()?;
        if l != exact {
            return Err(self.err(format!("expected {exact:?}, found {l:?}")));
        }
        Ok(())
    }

    /// Value part of a line starting with `key `.
    fn field(&mut self, key: &str) -> Result<&'a str> {
        let l = self.next_line()?;
        l.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| self.err(format!("expected {key:?}, found {l:?}")))
    }

    fn parse<T: std::str::FromStr>(&self, raw: &str, what: &str) -> Result<T> {
        raw.trim().parse().map_err(|_| self.err(format!("bad {what} {raw:?}")))
    }

    fn value<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let raw = self.field(key)?;
        self.parse(raw, key)
    }

    fn optional<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        let raw = self.field(key)?;
        if raw.trim() == "none" {
            Ok(None)
        } else {
            self.parse(raw, key).map(Some)
        }
    }

    fn floats(&mut self, key: &str) -> Result<Vec<f64>> {
        let raw = self.field(key)?;
        raw.split_whitespace().map(|t| self.parse(t, key)).collect()
    }

    fn finish(mut self) -> Result<()> {
        match self.iter.find(|(_, l)| !l.trim().is_empty()) {
            None => Ok(()),
            Some((i, l)) => Err(WsiError::format(self.path, format!("line {}: trailing content {l:?}", i + 1))),
        }
    }
}

pub fn baseline_to_text(m: &BaselineModel) -> String {
    let mut s = String::new();
    let p = &m.train_meta;
    let _ = writeln!(s, "{BASELINE_MAGIC}");
    let _ = writeln!(s, "feature_spec {}", m.feature_spec);
    let _ = writeln!(s, "epochs {}", p.epochs);
    let _ = writeln!(s, "learn_rate {}", p.learn_rate);
    let _ = writeln!(s, "batch_size {}", opt(p.batch_size));
    let _ = writeln!(s, "seed {}", p.seed);
    let _ = writeln!(s, "bias {}", m.bias);
    let _ = writeln!(s, "weights {}", join(&m.weights));
    s
}

pub fn parse_baseline(path: &Path, text: &str) -> Result<BaselineModel> {
    let mut l = Lines::new(path, text);
    l.expect(BASELINE_MAGIC)?;
    let feature_spec = l.field("feature_spec")?.to_string();
    let train_meta = TrainParams {
        epochs: l.value("epochs")?,
        learn_rate: l.value("learn_rate")?,
        batch_size: l.optional("batch_size")?,
        seed: l.value("seed")?,
    };
    let bias = l.value("bias")?;
    let weights = l.floats("weights")?;
    l.finish()?;
    let m = BaselineModel { feature_spec, weights, bias, train_meta };
    m.validate().map_err(|e| WsiError::format(path, e.to_string()))?;
    Ok(m)
}

pub fn write_baseline(path: &Path, m: &BaselineModel) -> Result<()> {
    write_text(path, &baseline_to_text(m))
}

pub fn read_baseline(path: &Path) -> Result<BaselineModel> {
    parse_baseline(path, &read_text(path)?)
}

/// A forest together with the names of the feature columns it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestFile {
    pub feature_names: Vec<String>,
    pub model: ForestModel,
}

pub fn forest_to_text(f: &ForestFile) -> String {
    let m = &f.model;
    let c = &m.config;
    let mut s = String::new();
    let _ = writeln!(s, "{FOREST_MAGIC}");
    let _ = writeln!(s, "n_trees {}", c.n_trees);
    let _ = writeln!(s, "max_depth {}", opt(c.max_depth));
    let _ = writeln!(s, "min_samples_leaf {}", c.min_samples_leaf);
    let _ = writeln!(s, "mtry {}", opt(c.mtry));
    let _ = writeln!(s, "bootstrap {}", c.bootstrap);
    let _ = writeln!(s, "seed {}", c.seed);
    let _ = writeln!(s, "feature_dim {}", m.feature_dim);
    let _ = writeln!(s, "feature_names {}", f.feature_names.join(" "));
    let _ = writeln!(s, "oob_error {}", opt(m.oob_error));
    let _ = writeln!(s, "importances {}", join(&m.importances));
    for (i, t) in m.trees.iter().enumerate() {
        let _ = writeln!(s, "tree {i} {}", t.nodes.len());
        for n in &t.nodes {
            match n {
                Node::Split { feature, threshold, right } => {
                    let _ = writeln!(s, "S {feature} {threshold} {right}");
                }
                Node::Leaf { p_tumor } => {
                    let _ = writeln!(s, "L {p_tumor}");
                }
            }
        }
    }
    s
}

pub fn parse_forest(path: &Path, text: &str) -> Result<ForestFile> {
    let mut l = Lines::new(path, text);
    l.expect(FOREST_MAGIC)?;
    let config = ForestConfig {
        n_trees: l.value("n_trees")?,
        max_depth: l.optional("max_depth")?,
        min_samples_leaf: l.value("min_samples_leaf")?,
        mtry: l.optional("mtry")?,
        bootstrap: l.value("bootstrap")?,
        seed: l.value("seed")?,
    };
    let feature_dim: usize = l.value("feature_dim")?;
    let feature_names: Vec<String> = l.field("feature_names")?.split_whitespace().map(str::to_string).collect();
    if feature_names.len() != feature_dim {
        return Err(l.err(format!("{} feature names for dimension {feature_dim}", feature_names.len())));
    }
    let oob_error = l.optional("oob_error")?;
    let importances = l.floats("importances")?;
    let mut trees = Vec::with_capacity(config.n_trees);
    for i in 0..config.n_trees {
        let head = l.field("tree")?;
        let mut parts = head.split_whitespace();
        let idx: usize = l.parse(parts.next().unwrap_or(""), "tree index")?;
        let count: usize = l.parse(parts.next().unwrap_or(""), "node count")?;
        if idx != i {
            return Err(l.err(format!("tree {idx} out of order, expected {i}")));
        }
        let mut nodes = Vec::with_capacity(count);
        for _ in 0..count {
            let line = l.next_line()?;
            let tok: Vec<&str> = line.split_whitespace().collect();
            let node = match tok.as_slice() {
                ["S", f, t, r] => Node::Split {
                    feature: l.parse(f, "feature")?,
                    threshold: l.parse(t, "threshold")?,
                    right: l.parse(r, "right child")?,
                },
                ["L", p] => Node::Leaf { p_tumor: l.parse(p, "leaf probability")? },
                _ => return Err(l.err(format!("bad node {line:?}"))),
            };
            nodes.push(node);
        }
        trees.push(Tree { nodes });
    }
    l.finish()?;
    let model = ForestModel { config, feature_dim, trees, importances, oob_error };
    model.validate().map_err(|e| WsiError::format(path, e.to_string()))?;
    Ok(ForestFile { feature_names, model })
}

pub fn write_forest(path: &Path, f: &ForestFile) -> Result<()> {
    write_text(path, &forest_to_text(f))
}

pub fn read_forest(path: &Path) -> Result<ForestFile> {
    parse_forest(path, &read_text(path)?)
}
