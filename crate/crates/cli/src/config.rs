//! Run configuration: JSON file plus flags, resolved into validated settings.
//!
//! Layers apply in this order, later ones winning: built-in defaults, the
//! file's `preset_run`, the file's other fields, the flags' `--preset-run`,
//! the other flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use fakeguard_core::model::{EnsembleConfig, Family, Preset};
use fakeguard_core::train::{Optimizer, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    Resnet,
    Xception,
    Both,
}

impl ModelChoice {
    pub fn families(self) -> Vec<Family> {
        match self {
            ModelChoice::Resnet => vec![Family::Resnet],
            ModelChoice::Xception => vec![Family::Xception],
            ModelChoice::Both => vec![Family::Resnet, Family::Xception],
        }
    }
}

/// `mini`, `full`, or either followed by `-resnet`, `-xception` or `-both`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PresetChoice {
    pub preset: Preset,
    pub model: Option<ModelChoice>,
}

impl FromStr for PresetChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (size, model) = match s.split_once('-') {
            Some((size, model)) => (size, Some(model)),
            None => (s, None),
        };
        let preset = match size {
            "mini" => Preset::Mini,
            "full" => Preset::Full,
            _ => {
                return Err(format!(
                    "unknown preset '{s}' (expected mini or full, optionally with -resnet, -xception or -both)"
                ))
            }
        };
        let model = match model {
            None => None,
            Some("resnet") => Some(ModelChoice::Resnet),
            Some("xception") => Some(ModelChoice::Xception),
            Some("both") => Some(ModelChoice::Both),
            Some(_) => {
                return Err(format!(
                    "unknown preset '{s}' (model part must be resnet, xception or both)"
                ))
            }
        };
        Ok(Self { preset, model })
    }
}

impl Serialize for PresetChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let model = match self.model {
            None => "",
            Some(ModelChoice::Resnet) => "-resnet",
            Some(ModelChoice::Xception) => "-xception",
            Some(ModelChoice::Both) => "-both",
        };
        s.serialize_str(&format!("{}{model}", self.preset))
    }
}

impl<'de> Deserialize<'de> for PresetChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// `a,b`: ResNet and Xception soft-vote weights.
pub fn parse_ensemble_weights(s: &str) -> Result<EnsembleConfig, String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected two comma-separated weights, got '{s}'"))?;
    let num = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|e| format!("bad ensemble weight '{v}': {e}"))
    };
    Ok(EnsembleConfig {
        resnet_weight: num(a)?,
        xception_weight: num(b)?,
    })
}

/// One configuration layer; every field optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: Option<ModelChoice>,
    pub preset: Option<PresetChoice>,
    pub preset_run: Option<String>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub optimizer: Option<Optimizer>,
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub n_frames: Option<usize>,
    pub k_folds: Option<usize>,
    pub seed: Option<u64>,
    pub ensemble: Option<EnsembleConfig>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
    }
}

/// Fully resolved settings for train and kfold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub data: PathBuf,
    pub out: PathBuf,
    pub model: ModelChoice,
    pub preset: Preset,
    pub train: TrainConfig,
    pub ensemble: EnsembleConfig,
}

struct Builder {
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    model: ModelChoice,
    preset: Preset,
    train: TrainConfig,
    ensemble: EnsembleConfig,
}

impl Builder {
    fn preset_run(&mut self, layer: &RunConfig) -> Result<(), Failure> {
        if let Some(name) = &layer.preset_run {
            self.train
                .apply_preset(name)
                .map_err(|e| Failure::config(e.to_string()))?;
        }
        Ok(())
    }

    fn fields(&mut self, layer: &RunConfig) {
        let t = &mut self.train;
        if let Some(p) = layer.preset {
            self.preset = p.preset;
            if let Some(m) = p.model {
                self.model = m;
            }
        }
        macro_rules! take {
            ($($src:ident => $dst:expr),* $(,)?) => {
                $(if let Some(v) = layer.$src.clone() { $dst = v; })*
            };
        }
        if layer.data.is_some() {
            self.data.clone_from(&layer.data);
        }
        if layer.out.is_some() {
            self.out.clone_from(&layer.out);
        }
        take!(
            model => self.model,
            epochs => t.epochs,
            batch_size => t.batch_size,
            learning_rate => t.learning_rate,
            optimizer => t.optimizer,
            gamma => t.focal.gamma,
            alpha => t.focal.alpha,
            n_frames => t.n_frames,
            k_folds => t.k_folds,
            seed => t.seed,
            ensemble => self.ensemble,
        );
    }
}

pub fn resolve(file: &RunConfig, flags: &RunConfig) -> Result<Resolved, Failure> {
    let mut b = Builder {
        data: None,
        out: None,
        model: ModelChoice::Both,
        preset: Preset::Mini,
        train: TrainConfig::default(),
        ensemble: EnsembleConfig::default(),
    };
    b.preset_run(file)?;
    b.fields(file);
    b.preset_run(flags)?;
    b.fields(flags);
    b.train.validate().map_err(|e| Failure::config(e.to_string()))?;
    if b.model == ModelChoice::Both {
        b.ensemble.validate().map_err(|e| Failure::config(e.to_string()))?;
    }
    Ok(Resolved {
        data: b
            .data
            .ok_or_else(|| Failure::config("no dataset given (use --data or \"data\" in the config file)"))?,
        out: b
            .out
            .ok_or_else(|| Failure::config("no output directory given (use --out or \"out\" in the config file)"))?,
        model: b.model,
        preset: b.preset,
        train: b.train,
        ensemble: b.ensemble,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(json: &str) -> RunConfig {
        serde_json::from_str(json).unwrap()
    }

    fn base() -> RunConfig {
        layer(r#"{"data": "d", "out": "o"}"#)
    }

    #[test]
    fn preset_names() {
        let p: PresetChoice = "mini-both".parse().unwrap();
        assert_eq!((p.preset, p.model), (Preset::Mini, Some(ModelChoice::Both)));
        let p: PresetChoice = "full".parse().unwrap();
        assert_eq!((p.preset, p.model), (Preset::Full, None));
        assert!("tiny".parse::<PresetChoice>().is_err());
        assert!("mini-vgg".parse::<PresetChoice>().is_err());
        assert_eq!(
            serde_json::to_string(&"full-xception".parse::<PresetChoice>().unwrap()).unwrap(),
            "\"full-xception\""
        );
    }

    #[test]
    fn run_presets_expand() {
        let r = resolve(&base(), &layer(r#"{"preset_run": "fig5"}"#)).unwrap();
        assert_eq!((r.train.epochs, r.train.batch_size, r.train.n_frames), (300, 64, 6));
    }

    #[test]
    fn precedence_matrix() {
        // epochs set by: nothing, file preset, file field, flag preset, flag field
        let file_preset = r#""preset_run": "fig2""#;
        let file_field = r#""epochs": 7"#;
        let flag_preset = r#""preset_run": "fig5""#;
        let flag_field = r#""epochs": 9"#;
        for mask in 0u8..16 {
            let pick = |bit: u8, s: &str| if mask & bit != 0 { Some(s.to_string()) } else { None };
            let join = |parts: Vec<Option<String>>| {
                let body: Vec<String> = parts.into_iter().flatten().collect();
                format!("{{{}}}", body.join(","))
            };
            let mut file = layer(&join(vec![pick(1, file_preset), pick(2, file_field)]));
            file.data = Some("d".into());
            file.out = Some("o".into());
            let flags = layer(&join(vec![pick(4, flag_preset), pick(8, flag_field)]));
            let want = if mask & 8 != 0 {
                9
            } else if mask & 4 != 0 {
                300
            } else if mask & 2 != 0 {
                7
            } else {
                100
            };
            assert_eq!(resolve(&file, &flags).unwrap().train.epochs, want, "mask {mask:04b}");
        }
    }

    #[test]
    fn flag_model_beats_file_preset_model() {
        let mut file = base();
        file.preset = Some("full-xception".parse().unwrap());
        let flags = RunConfig {
            model: Some(ModelChoice::Resnet),
            ..RunConfig::default()
        };
        let r = resolve(&file, &flags).unwrap();
        assert_eq!((r.preset, r.model), (Preset::Full, ModelChoice::Resnet));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"epoch": 3}"#).is_err());
        assert!(resolve(&base(), &layer(r#"{"epochs": 0}"#)).is_err());
        assert!(resolve(&base(), &layer(r#"{"preset_run": "fig3"}"#)).is_err());
        assert!(resolve(&RunConfig::default(), &RunConfig::default()).is_err());
        let zero = RunConfig {
            ensemble: Some(EnsembleConfig {
                resnet_weight: 0.0,
                xception_weight: 0.0,
            }),
            ..RunConfig::default()
        };
        assert!(resolve(&base(), &zero).is_err());
    }

    #[test]
    fn ensemble_weight_flag() {
        let e = parse_ensemble_weights("1, 3").unwrap();
        assert_eq!((e.resnet_weight, e.xception_weight), (1.0, 3.0));
        assert!(parse_ensemble_weights("1").is_err());
    }
}
