use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One attention head of the harvested model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HeadKey {
    pub layer: u16,
    pub head: u16,
}

impl HeadKey {
    pub fn new(layer: usize, head: usize) -> Self {
        HeadKey {
            layer: layer as u16,
            head: head as u16,
        }
    }

    /// Row-major index over `layers x heads`.
    pub fn flat(&self, heads: usize) -> usize {
        self.layer as usize * heads + self.head as usize
    }

    pub fn all(layers: usize, heads: usize) -> Vec<HeadKey> {
        (0..layers)
            .flat_map(|l| (0..heads).map(move |h| HeadKey::new(l, h)))
            .collect()
    }
}

impl fmt::Display for HeadKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.layer, self.head)
    }
}

impl FromStr for HeadKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (l, h) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("head '{s}' is not of the form layer:head")))?;
        let parse = |x: &str| {
            x.trim()
                .parse::<u16>()
                .map_err(|_| Error::Config(format!("head '{s}' is not of the form layer:head")))
        };
        Ok(HeadKey {
            layer: parse(l)?,
            head: parse(h)?,
        })
    }
}

/// Parses a head list: one `layer:head` per line or comma-separated;
/// blank lines and `#` comments are ignored.
pub fn parse_head_list(text: &str) -> Result<BTreeSet<HeadKey>> {
    let mut out = BTreeSet::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("");
        for item in line.split(',') {
            if !item.trim().is_empty() {
                out.insert(item.parse()?);
            }
        }
    }
    Ok(out)
}

pub fn format_head_list(heads: &BTreeSet<HeadKey>) -> String {
    heads.iter().map(|h| format!("{h}\n")).collect()
}

/// Per-layer boolean masks for the transformer blocks.
pub fn head_masks(heads: &BTreeSet<HeadKey>, layers: usize, per_layer: usize) -> Result<Vec<Vec<bool>>> {
    let mut masks = vec![vec![false; per_layer]; layers];
    for h in heads {
        if h.layer as usize >= layers || h.head as usize >= per_layer {
            return Err(Error::Config(format!(
                "head {h} outside a model of {layers} layers x {per_layer} heads"
            )));
        }
        masks[h.layer as usize][h.head as usize] = true;
    }
    Ok(masks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format() {
        let set = parse_head_list("0:1\n# comment\n3:2, 1:0\n\n").unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(format_head_list(&set), "0:1\n1:0\n3:2\n");
        assert!(parse_head_list("3-2").is_err());
        assert!(head_masks(&set, 2, 4).is_err());
        let m = head_masks(&set, 4, 4).unwrap();
        assert!(m[3][2] && m[0][1] && !m[0][0]);
    }
}
