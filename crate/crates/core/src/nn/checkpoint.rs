//! Text checkpoint container.
//!
//! ```text
//! maser-checkpoint 1
//! meta <key> <json value>
//! array <name> <rows> <cols>
//! <row 0 values, space separated>
//! ...
//! end
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so a
//! save/load cycle is bitwise exact. Array names are `<group>/<param>` where the
//! group is one of `utility.<k>`, `mixer`, `repr.<k>`, `target_utility.<k>` or
//! `target_mixer`. Lines starting with `#` are ignored. Unknown `meta` keys are
//! preserved; readers must ignore keys they do not understand.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::params::{NetParams, ParamSet};
use super::tensor::Tensor;
use crate::error::{MaserError, Result};

pub const FORMAT_TAG: &str = "maser-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, serde_json::Value>,
    pub arrays: Vec<(String, Tensor)>,
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> MaserError {
    MaserError::Parse(format!("checkpoint line {line}: {msg}"))
}

impl Checkpoint {
    pub fn from_params(params: &ParamSet) -> Self {
        let mut arrays = Vec::new();
        let mut add = |group: String, p: &NetParams| {
            for (n, t) in p.names().iter().zip(p.tensors()) {
                arrays.push((format!("{group}/{n}"), t.clone()));
            }
        };
        for (k, p) in params.utility.iter().enumerate() {
            add(format!("utility.{k}"), p);
        }
        add("mixer".into(), &params.mixer);
        for (k, p) in params.repr.iter().enumerate() {
            add(format!("repr.{k}"), p);
        }
        for (k, p) in params.target_utility.iter().enumerate() {
            add(format!("target_utility.{k}"), p);
        }
        add("target_mixer".into(), &params.target_mixer);
        Self {
            meta: BTreeMap::new(),
            arrays,
        }
    }

    /// Rebuilds a [`ParamSet`] whose layout matches `template`.
    pub fn to_params(&self, template: &ParamSet) -> Result<ParamSet> {
        let lookup: BTreeMap<&str, &Tensor> = self.arrays.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let fill = |group: String, tpl: &NetParams| -> Result<NetParams> {
            let mut out = NetParams::new();
            for (n, t) in tpl.names().iter().zip(tpl.tensors()) {
                let key = format!("{group}/{n}");
                let found = lookup
                    .get(key.as_str())
                    .ok_or_else(|| MaserError::Parse(format!("checkpoint lacks array {key}")))?;
                if found.shape() != t.shape() {
                    return Err(MaserError::Config(format!(
                        "array {key}: checkpoint shape {:?}, expected {:?}",
                        found.shape(),
                        t.shape()
                    )));
                }
                out.push(n.clone(), (*found).clone());
            }
            Ok(out)
        };
        let utility = (0..template.utility.len())
            .map(|k| fill(format!("utility.{k}"), &template.utility[k]))
            .collect::<Result<Vec<_>>>()?;
        let repr = (0..template.repr.len())
            .map(|k| fill(format!("repr.{k}"), &template.repr[k]))
            .collect::<Result<Vec<_>>>()?;
        let target_utility = (0..template.target_utility.len())
            .map(|k| fill(format!("target_utility.{k}"), &template.target_utility[k]))
            .collect::<Result<Vec<_>>>()?;
        Ok(ParamSet {
            utility,
            mixer: fill("mixer".into(), &template.mixer)?,
            repr,
            target_utility,
            target_mixer: fill("target_mixer".into(), &template.target_mixer)?,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{FORMAT_TAG} {FORMAT_VERSION}\n");
        for (k, v) in &self.meta {
            let _ = writeln!(s, "meta {k} {v}");
        }
        for (name, t) in &self.arrays {
            let _ = writeln!(s, "array {name} {} {}", t.rows(), t.cols());
            for r in 0..t.rows() {
                let row: Vec<String> = t.row_slice(r).iter().map(|v| format!("{v:?}")).collect();
                s.push_str(&row.join(" "));
                s.push('\n');
            }
        }
        s.push_str("end\n");
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (ln, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
        let mut hp = header.split_whitespace();
        if hp.next() != Some(FORMAT_TAG) {
            return Err(parse_err(ln, "missing format tag"));
        }
        let version: u32 = hp
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_err(ln, "missing version"))?;
        if version > FORMAT_VERSION {
            return Err(parse_err(ln, format!("unsupported version {version}")));
        }
        let mut ck = Checkpoint::default();
        let mut ended = false;
        while let Some((ln, line)) = lines.next() {
            let (kind, rest) = line.split_once(' ').unwrap_or((line, ""));
            match kind {
                "meta" => {
                    let (k, v) = rest.split_once(' ').ok_or_else(|| parse_err(ln, "meta needs key and value"))?;
                    let v = serde_json::from_str(v).map_err(|e| parse_err(ln, e))?;
                    ck.meta.insert(k.to_string(), v);
                }
                "array" => {
                    let parts: Vec<&str> = rest.split_whitespace().collect();
                    if parts.len() != 3 {
                        return Err(parse_err(ln, "array needs name rows cols"));
                    }
                    let rows: usize = parts[1].parse().map_err(|e| parse_err(ln, e))?;
                    let cols: usize = parts[2].parse().map_err(|e| parse_err(ln, e))?;
                    let mut data = Vec::with_capacity(rows * cols);
                    for _ in 0..rows {
                        let (rl, row) = lines.next().ok_or_else(|| parse_err(ln, "truncated array"))?;
                        let before = data.len();
                        for tok in row.split_whitespace() {
                            data.push(tok.parse::<f64>().map_err(|e| parse_err(rl, e))?);
                        }
                        if data.len() - before != cols {
                            return Err(parse_err(rl, format!("expected {cols} values")));
                        }
                    }
                    ck.arrays.push((parts[0].to_string(), Tensor::from_vec(rows, cols, data)));
                }
                "end" => {
                    ended = true;
                    break;
                }
                other => return Err(parse_err(ln, format!("unknown record `{other}`"))),
            }
        }
        if !ended {
            return Err(MaserError::Parse("checkpoint truncated: no `end` record".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        let mut u = NetParams::new();
        u.push("w", Tensor::from_vec(2, 2, vec![0.1, -1e-300, 3.5e10, f64::MIN_POSITIVE]));
        let mut m = NetParams::new();
        m.push("b", Tensor::row(&[1.0 / 3.0]));
        let mut r = NetParams::new();
        r.push("w", Tensor::row(&[-0.0, 2.0]));
        ParamSet::new(vec![u], m, vec![r])
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let p = sample();
        let mut ck = Checkpoint::from_params(&p);
        ck.meta.insert("env".into(), serde_json::json!("skirmish-2v2"));
        let back = Checkpoint::parse(&ck.to_text()).unwrap();
        assert_eq!(back.meta, ck.meta);
        let q = back.to_params(&p).unwrap();
        assert!(p.first_difference(&q).is_none());
        assert_eq!(p.target_mixer, q.target_mixer);
    }

    #[test]
    fn truncated_file_rejected() {
        let text = Checkpoint::from_params(&sample()).to_text();
        let cut = &text[..text.len() - 4];
        assert!(Checkpoint::parse(cut).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let ck = Checkpoint::from_params(&sample());
        let mut other = sample();
        other.mixer.tensors_mut()[0] = Tensor::row(&[1.0, 2.0]);
        assert!(ck.to_params(&other).is_err());
    }
}
