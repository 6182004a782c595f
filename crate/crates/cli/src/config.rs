//! Plain-text pipeline configuration: `[section]` headers followed by
//! `key = value` lines. Every key must already exist in the section's
//! defaults; nested fields use dotted keys (`encoder.layers`).

use serde::{Deserialize, Serialize};
use serde_json::Value;

use apmae::classify::GbdtConfig;
use apmae::cluster::ClusterConfig;
use apmae::intervene::DESK_POOL;
use apmae::lm::{HarvestOptions, LmConfig};
use apmae::mae::MaeConfig;
use apmae::miner::TaskKind;
use apmae::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSection {
    pub files: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MineSection {
    pub context_len: usize,
    pub tasks: Vec<TaskKind>,
    /// Extra noise instances appended after mining.
    pub noise: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSection {
    pub holdout: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestSection {
    #[serde(flatten)]
    pub options: HarvestOptions,
    pub tasks: Vec<TaskKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifySection {
    #[serde(flatten)]
    pub gbdt: GbdtConfig,
    pub folds: usize,
    pub balance_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervenePlan {
    pub task: TaskKind,
    pub pool_size: usize,
    pub seed: u64,
    /// Seeds for the random-head baseline.
    pub random_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub corpus: CorpusSection,
    pub mine: MineSection,
    pub split: SplitSection,
    pub lm: LmConfig,
    pub harvest: HarvestSection,
    pub mae: MaeConfig,
    pub cluster: ClusterConfig,
    pub classify: ClassifySection,
    pub intervene: IntervenePlan,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: CorpusSection { files: 200, seed: 0 },
            mine: MineSection {
                context_len: 64,
                tasks: TaskKind::MINED.to_vec(),
                noise: 0,
                seed: 0,
            },
            split: SplitSection { holdout: 0.2, seed: 0 },
            lm: LmConfig::desk(),
            harvest: HarvestSection {
                options: HarvestOptions::default(),
                tasks: TaskKind::MINED.to_vec(),
            },
            mae: MaeConfig::desk(),
            cluster: ClusterConfig::default(),
            classify: ClassifySection {
                gbdt: GbdtConfig::default(),
                folds: apmae::classify::DEFAULT_FOLDS,
                balance_seed: 0,
            },
            intervene: IntervenePlan {
                task: TaskKind::EndOfLine,
                pool_size: DESK_POOL,
                seed: 0,
                random_seeds: 3,
            },
        }
    }
}

const SECTIONS: [&str; 9] = ["corpus", "mine", "split", "lm", "harvest", "mae", "cluster", "classify", "intervene"];

fn preset(section: &str, name: &str) -> Result<Value> {
    let v = match section {
        "lm" => serde_json::to_value(LmConfig::preset(name)?)?,
        "mae" => serde_json::to_value(match name {
            "full" => MaeConfig::full(),
            "desk" => MaeConfig::desk(),
            "tiny" => MaeConfig::tiny(),
            _ => return Err(Error::Config(format!("unknown mae preset {name:?}"))),
        })?,
        _ => return Err(Error::Config(format!("section [{section}] has no presets"))),
    };
    Ok(v)
}

/// Parses `raw` into the JSON type of `current`.
fn typed(current: &Value, raw: &str, key: &str) -> Result<Value> {
    let bad = || Error::Config(format!("bad value {raw:?} for {key}"));
    Ok(match current {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad())?),
        Value::Number(n) if n.is_f64() => serde_json::Number::from_f64(raw.parse().map_err(|_| bad())?)
            .map(Value::Number)
            .ok_or_else(bad)?,
        Value::Number(_) => match raw.parse::<u64>() {
            Ok(u) => Value::from(u),
            Err(_) => {
                let f: f64 = raw.parse().map_err(|_| bad())?;
                serde_json::Number::from_f64(f).map(Value::Number).ok_or_else(bad)?
            }
        },
        Value::String(_) => Value::String(raw.to_string()),
        Value::Array(_) => Value::Array(
            raw.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| Value::String(s.to_string()))
                .collect(),
        ),
        Value::Null => {
            if raw == "none" {
                Value::Null
            } else if let Ok(u) = raw.parse::<u64>() {
                Value::from(u)
            } else if let Ok(f) = raw.parse::<f64>() {
                serde_json::Number::from_f64(f).map(Value::Number).ok_or_else(bad)?
            } else {
                Value::String(raw.to_string())
            }
        }
        Value::Object(_) => return Err(Error::Config(format!("{key} is a group; set its fields with dotted keys"))),
    })
}

fn set(section: &mut Value, key: &str, raw: &str, name: &str) -> Result<()> {
    let mut node = section;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("[{name}] {key}: not a group")))?;
        let child = obj
            .get_mut(*part)
            .ok_or_else(|| Error::Config(format!("unknown key [{name}] {key}")))?;
        if i + 1 == parts.len() {
            let v = typed(child, raw, key)?;
            *child = v;
            return Ok(());
        }
        node = child;
    }
    unreachable!("split yields at least one part")
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut root = serde_json::to_value(PipelineConfig::default())?;
        let mut current: Option<String> = None;
        let mut pending: Vec<(String, Vec<(usize, String, String)>)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim().to_string();
                if !SECTIONS.contains(&name.as_str()) {
                    return Err(Error::Config(format!("line {}: unknown section [{name}]", lineno + 1)));
                }
                current = Some(name.clone());
                pending.push((name, Vec::new()));
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key = value", lineno + 1)));
            };
            if current.is_none() {
                return Err(Error::Config(format!("line {}: key outside a section", lineno + 1)));
            }
            pending
                .last_mut()
                .unwrap()
                .1
                .push((lineno + 1, k.trim().to_string(), v.trim().to_string()));
        }
        for (name, entries) in pending {
            let section = root.get_mut(&name).unwrap();
            if let Some((_, _, p)) = entries.iter().find(|(_, k, _)| k == "preset") {
                *section = preset(&name, p)?;
            }
            for (line, k, v) in entries.iter().filter(|(_, k, _)| k != "preset") {
                set(section, k, v, &name).map_err(|e| Error::Config(format!("line {line}: {e}")))?;
            }
        }
        let cfg: PipelineConfig = serde_json::from_value(root).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.lm.validate()?;
        self.mae.validate()?;
        self.classify.gbdt.validate()?;
        if self.mine.context_len != self.lm.context_len {
            return Err(Error::Config(format!(
                "[mine] context_len {} differs from [lm] context_len {}",
                self.mine.context_len, self.lm.context_len
            )));
        }
        if !(0.0..1.0).contains(&self.split.holdout) {
            return Err(Error::Config(format!("[split] holdout {} outside [0, 1)", self.split.holdout)));
        }
        Ok(())
    }

    /// The fully resolved configuration in the input format.
    pub fn render(&self) -> String {
        let root = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        for name in SECTIONS {
            out.push_str(&format!("[{name}]\n"));
            flatten("", &root[name], &mut out);
        }
        out
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut String) {
    let Some(obj) = v.as_object() else { return };
    let mut keys: Vec<&String> = obj.keys().collect();
    keys.sort();
    for k in keys {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match &obj[k] {
            Value::Object(_) => flatten(&key, &obj[k], out),
            Value::Array(a) => {
                let items: Vec<String> = a.iter().map(scalar).collect();
                out.push_str(&format!("{key} = {}\n", items.join(", ")));
            }
            other => out.push_str(&format!("{key} = {}\n", scalar(other))),
        }
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "none".into(),
        other => other.to_string(),
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_render() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::parse(&cfg.render()).unwrap(), cfg);
    }

    #[test]
    fn overrides_presets_and_dotted_keys() {
        let text = "\
# comment
[lm]
width = 64
preset = tiny
total_steps = 7

[mae]
encoder.layers = 2
scaling.kind = identity
global_lr = 0.001

[harvest]
tasks = END_OF_LINE, IDENTIFIER
balance = true

[mine]
context_len = 16
";
        let cfg = PipelineConfig::parse(text).unwrap();
        assert_eq!(cfg.lm.layers, 2);
        assert_eq!(cfg.lm.width, 64);
        assert_eq!(cfg.lm.total_steps, 7);
        assert_eq!(cfg.mae.encoder.layers, 2);
        assert_eq!(cfg.mae.scaling, apmae::pattern::Scaling::Identity);
        assert_eq!(cfg.mae.global_lr, Some(0.001));
        assert_eq!(cfg.harvest.tasks, vec![TaskKind::EndOfLine, TaskKind::Identifier]);
        assert!(cfg.harvest.options.balance);
        assert_eq!(PipelineConfig::parse(&cfg.render()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_and_sections_are_errors() {
        for text in [
            "[lm]\nwidht = 3\n",
            "[nope]\n",
            "width = 3\n",
            "[lm]\nwidth\n",
            "[lm]\nwidth = wide\n",
            "[mae]\nencoder = 3\n",
            "[lm]\npreset = huge\n",
            "[harvest]\ntasks = SOMETHING\n",
        ] {
            assert!(matches!(PipelineConfig::parse(text), Err(Error::Config(_))), "{text:?}");
        }
    }

    #[test]
    fn mismatched_context_is_rejected() {
        assert!(PipelineConfig::parse("[mine]\ncontext_len = 32\n").is_err());
    }
}
