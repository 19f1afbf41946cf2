//! Dataset manifest: UTF-8 text, one clip per line,
//! `clip_id<TAB>path<TAB>class_id<TAB>origin<TAB>params`.
//!
//! `origin` is `raw`, `emda` or `vtlp`; `params` is a comma-separated
//! `key=value` list (`-` when empty). Paths are relative to the manifest's
//! directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::emda::EmdaParams;
use super::eq::EqParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmdaRecipe {
    pub src1: String,
    pub src2: String,
    pub params: EmdaParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VtlpRecipe {
    pub src: String,
    pub warp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Origin {
    Raw,
    Emda(EmdaRecipe),
    Vtlp(VtlpRecipe),
}

impl Origin {
    pub fn tag(&self) -> &'static str {
        match self {
            Origin::Raw => "raw",
            Origin::Emda(_) => "emda",
            Origin::Vtlp(_) => "vtlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub path: String,
    pub class_id: u32,
    pub origin: Origin,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

fn blob(pairs: &[(&str, String)]) -> String {
    if pairs.is_empty() {
        return "-".to_string();
    }
    let mut s = String::new();
    for (i, (k, v)) in pairs.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{k}={v}");
    }
    s
}

fn parse_blob(s: &str) -> Result<BTreeMap<String, String>> {
    if s == "-" || s.is_empty() {
        return Ok(BTreeMap::new());
    }
    s.split(',')
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Parse(format!("bad parameter '{kv}'")))
        })
        .collect()
}

struct Fields(BTreeMap<String, String>);

impl Fields {
    fn str(&self, k: &str) -> Result<String> {
        self.0
            .get(k)
            .cloned()
            .ok_or_else(|| Error::Parse(format!("missing parameter '{k}'")))
    }

    fn f64(&self, k: &str) -> Result<f64> {
        self.str(k)?
            .parse()
            .map_err(|_| Error::Parse(format!("parameter '{k}' is not a number")))
    }
}

impl ManifestEntry {
    fn params_blob(&self) -> String {
        match &self.origin {
            Origin::Raw => blob(&[]),
            Origin::Emda(r) => {
                let p = &r.params;
                let mut pairs = vec![
                    ("src1", r.src1.clone()),
                    ("src2", r.src2.clone()),
                    ("alpha", p.alpha.to_string()),
                    ("beta", p.beta.to_string()),
                    ("f0a", p.psi1.f0.to_string()),
                    ("ga", p.psi1.gain_db.to_string()),
                    ("qa", p.psi1.q.to_string()),
                    ("f0b", p.psi2.f0.to_string()),
                    ("gb", p.psi2.gain_db.to_string()),
                    ("qb", p.psi2.q.to_string()),
                ];
                if let Some(t) = p.max_delay {
                    pairs.push(("tmax", t.to_string()));
                }
                blob(&pairs)
            }
            Origin::Vtlp(r) => blob(&[("src", r.src.clone()), ("warp", r.warp.to_string())]),
        }
    }

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.clip_id,
            self.path,
            self.class_id,
            self.origin.tag(),
            self.params_blob()
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(Error::Parse(format!("expected 5 tab-separated fields: '{line}'")));
        }
        let class_id = cols[2]
            .parse()
            .map_err(|_| Error::Parse(format!("bad class id '{}'", cols[2])))?;
        let f = Fields(parse_blob(cols[4])?);
        let origin = match cols[3] {
            "raw" => Origin::Raw,
            "emda" => Origin::Emda(EmdaRecipe {
                src1: f.str("src1")?,
                src2: f.str("src2")?,
                params: EmdaParams {
                    alpha: f.f64("alpha")?,
                    beta: f.f64("beta")?,
                    max_delay: f.0.get("tmax").map(|_| f.f64("tmax")).transpose()?,
                    psi1: EqParams {
                        f0: f.f64("f0a")?,
                        gain_db: f.f64("ga")?,
                        q: f.f64("qa")?,
                    },
                    psi2: EqParams {
                        f0: f.f64("f0b")?,
                        gain_db: f.f64("gb")?,
                        q: f.f64("qb")?,
                    },
                },
            }),
            "vtlp" => Origin::Vtlp(VtlpRecipe {
                src: f.str("src")?,
                warp: f.f64("warp")?,
            }),
            other => return Err(Error::Parse(format!("unknown origin '{other}'"))),
        };
        Ok(Self {
            clip_id: cols[0].to_string(),
            path: cols[1].to_string(),
            class_id,
            origin,
        })
    }

    /// Location of the entry's audio given the manifest directory.
    pub fn resolve(&self, base: &Path) -> PathBuf {
        base.join(&self.path)
    }
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| ManifestEntry::parse_line(l).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries })
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|e| e.to_line() + "\n").collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct class ids in ascending order.
    pub fn classes(&self) -> Vec<u32> {
        let mut c: Vec<u32> = self.entries.iter().map(|e| e.class_id).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Entry count per class.
    pub fn class_counts(&self) -> BTreeMap<u32, usize> {
        let mut m = BTreeMap::new();
        for e in &self.entries {
            *m.entry(e.class_id).or_insert(0) += 1;
        }
        m
    }

    pub fn find(&self, clip_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.clip_id == clip_id)
    }
}
