//! Run configuration files and the named hyperparameter presets.

use std::path::{Path, PathBuf};

use mixmatch_core::experts::{DiscriminatorMode, ExpertKind};
use mixmatch_core::sampler::PositionOrder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::read_text;
use crate::remote::RemoteExpertEndpoint;

pub const VOCAB_FILE: &str = "vocab.txt";
pub const MLM_FILE: &str = "mlm.json";
pub const CLASSIFIER_FILE: &str = "classifier.json";
pub const DEFAULT_SAMPLES_PER_PROMPT: usize = 20;
pub const DEFAULT_EPOCHS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Generate,
    Revise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExpertSpec {
    Mlm {
        weight: f64,
    },
    Discriminator {
        weight: f64,
        #[serde(default)]
        mode: DiscriminatorMode,
    },
    Hamming {
        weight: f64,
    },
    Fuzzy {
        weight: f64,
        #[serde(default)]
        embeddings: Option<PathBuf>,
    },
    Lexicon {
        weight: f64,
        #[serde(default)]
        lexicon: Option<PathBuf>,
    },
    Remote {
        weight: f64,
        #[serde(flatten)]
        endpoint: RemoteExpertEndpoint,
    },
}

impl ExpertSpec {
    pub fn kind(&self) -> ExpertKind {
        match self {
            ExpertSpec::Mlm { .. } => ExpertKind::Mlm,
            ExpertSpec::Discriminator { .. } => ExpertKind::Discriminator,
            ExpertSpec::Hamming { .. } => ExpertKind::Hamming,
            ExpertSpec::Fuzzy { .. } => ExpertKind::Fuzzy,
            ExpertSpec::Lexicon { .. } => ExpertKind::Lexicon,
            ExpertSpec::Remote { .. } => ExpertKind::Remote,
        }
    }

    pub fn weight(&self) -> f64 {
        match self {
            ExpertSpec::Mlm { weight }
            | ExpertSpec::Discriminator { weight, .. }
            | ExpertSpec::Hamming { weight }
            | ExpertSpec::Fuzzy { weight, .. }
            | ExpertSpec::Lexicon { weight, .. }
            | ExpertSpec::Remote { weight, .. } => *weight,
        }
    }

    pub fn weight_mut(&mut self) -> &mut f64 {
        match self {
            ExpertSpec::Mlm { weight }
            | ExpertSpec::Discriminator { weight, .. }
            | ExpertSpec::Hamming { weight }
            | ExpertSpec::Fuzzy { weight, .. }
            | ExpertSpec::Lexicon { weight, .. }
            | ExpertSpec::Remote { weight, .. } => weight,
        }
    }

    /// Parses `url:name:weight`. The URL may itself contain colons.
    pub fn parse_remote(arg: &str) -> std::result::Result<Self, String> {
        let mut parts = arg.rsplitn(3, ':');
        let (Some(weight), Some(name), Some(url)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(format!("expected url:name:weight, got {arg:?}"));
        };
        let weight = weight.parse::<f64>().map_err(|e| format!("bad weight in {arg:?}: {e}"))?;
        Ok(ExpertSpec::Remote { weight, endpoint: RemoteExpertEndpoint::new(url, name) })
    }
}

/// Where proposals come from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProposalSpec {
    /// The neighbor MLM in the model directory.
    #[default]
    Local,
    Remote {
        #[serde(flatten)]
        endpoint: RemoteExpertEndpoint,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    #[default]
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    #[serde(default)]
    pub preset: Option<String>,
    pub model_dir: PathBuf,
    #[serde(default)]
    pub experts: Vec<ExpertSpec>,
    #[serde(default)]
    pub proposal: ProposalSpec,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub order: PositionOrder,
    /// Total sequence length for generation.
    #[serde(default)]
    pub length: Option<usize>,
    #[serde(default)]
    pub prompts: Vec<String>,
    #[serde(default)]
    pub prompt_file: Option<PathBuf>,
    #[serde(default = "default_samples")]
    pub samples_per_prompt: usize,
    #[serde(default)]
    pub source_file: Option<PathBuf>,
    /// Source lines are `position<TAB>text`; only that position is revised.
    #[serde(default)]
    pub verb_replace: bool,
    #[serde(default = "default_one")]
    pub samples_per_source: usize,
    #[serde(default = "default_one")]
    pub target_class: usize,
    /// Fallback lexicon for lexicon experts that name none.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    /// Fallback embeddings for fuzzy experts that name none.
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub trace: bool,
    #[serde(default)]
    pub trace_format: TraceFormat,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES_PER_PROMPT
}

fn default_one() -> usize {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    /// A configuration with defaults for everything but the task and model
    /// directory.
    pub fn new(task: Task, model_dir: impl Into<PathBuf>) -> Self {
        Self {
            task,
            preset: None,
            model_dir: model_dir.into(),
            experts: Vec::new(),
            proposal: ProposalSpec::Local,
            epochs: None,
            seed: 0,
            order: PositionOrder::Permutation,
            length: None,
            prompts: Vec::new(),
            prompt_file: None,
            samples_per_prompt: DEFAULT_SAMPLES_PER_PROMPT,
            source_file: None,
            verb_replace: false,
            samples_per_source: 1,
            target_class: 1,
            lexicon: None,
            embeddings: None,
            out_dir: default_out(),
            trace: false,
            trace_format: TraceFormat::Csv,
            threads: None,
        }
    }

    /// Reads a JSON config; relative paths are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(&read_text(path)?)
            .map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.model_dir);
        fix(&mut self.out_dir);
        for p in [&mut self.prompt_file, &mut self.source_file, &mut self.lexicon, &mut self.embeddings]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        for e in &mut self.experts {
            match e {
                ExpertSpec::Fuzzy { embeddings: Some(p), .. } | ExpertSpec::Lexicon { lexicon: Some(p), .. } => fix(p),
                _ => {}
            }
        }
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.model_dir.join(VOCAB_FILE)
    }

    pub fn mlm_path(&self) -> PathBuf {
        self.model_dir.join(MLM_FILE)
    }

    pub fn classifier_path(&self) -> PathBuf {
        self.model_dir.join(CLASSIFIER_FILE)
    }

    /// Applies the named preset: it supplies the expert list when the config
    /// has none, and the epoch count when the config leaves it unset.
    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        let preset = Preset::find(name).ok_or_else(|| {
            Error::Config(vec![format!(
                "unknown preset `{name}` (known: {})",
                PRESETS.iter().map(|p| p.name).collect::<Vec<_>>().join(", ")
            )])
        })?;
        if preset.task != self.task {
            return Err(Error::Config(vec![format!(
                "preset `{name}` is for task {:?}, config has {:?}",
                preset.task, self.task
            )]));
        }
        if self.experts.is_empty() {
            self.experts = preset.experts();
        }
        self.epochs.get_or_insert(preset.epochs);
        self.verb_replace |= preset.verb_replace;
        self.preset = Some(name.to_string());
        Ok(())
    }

    /// Overrides the weight of every expert of `kind`. Returns how many
    /// experts matched.
    pub fn set_weight(&mut self, kind: ExpertKind, weight: f64) -> usize {
        let mut n = 0;
        for e in self.experts.iter_mut().filter(|e| e.kind() == kind) {
            *e.weight_mut() = weight;
            n += 1;
        }
        n
    }

    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or(DEFAULT_EPOCHS)
    }

    /// Checks everything that can be checked without sampling and reports
    /// every problem at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let need_file = |errs: &mut Vec<String>, what: &str, p: &Path| {
            if !p.is_file() {
                errs.push(format!("{what} not found: {}", p.display()));
            }
        };
        need_file(&mut errs, "vocabulary", &self.vocab_path());
        if matches!(self.proposal, ProposalSpec::Local) || self.experts.iter().any(|e| e.kind() == ExpertKind::Mlm) {
            need_file(&mut errs, "masked LM", &self.mlm_path());
        }
        if self.experts.iter().any(|e| e.kind() == ExpertKind::Discriminator) {
            need_file(&mut errs, "classifier", &self.classifier_path());
        }
        if self.experts.is_empty() {
            log::warn!("no experts configured; sampling from the proposal alone");
        }
        if self.epochs == Some(0) {
            errs.push("epochs must be at least 1".into());
        }
        for (n, e) in self.experts.iter().enumerate() {
            let w = e.weight();
            if !w.is_finite() {
                errs.push(format!("expert #{n} ({}) has non-finite weight", e.kind().as_str()));
            } else if w < 0.0 {
                log::warn!("expert #{n} ({}) has negative weight {w}", e.kind().as_str());
            }
            match e {
                ExpertSpec::Hamming { .. } | ExpertSpec::Fuzzy { .. } if self.task == Task::Generate => {
                    errs.push(format!("{} expert needs a source sequence (task revise)", e.kind().as_str()));
                }
                _ => {}
            }
            match e {
                ExpertSpec::Fuzzy { embeddings, .. } => match embeddings.as_ref().or(self.embeddings.as_ref()) {
                    Some(p) => need_file(&mut errs, "embeddings", p),
                    None => errs.push("fuzzy expert has no embeddings file".into()),
                },
                ExpertSpec::Lexicon { lexicon, .. } => match lexicon.as_ref().or(self.lexicon.as_ref()) {
                    Some(p) => need_file(&mut errs, "lexicon", p),
                    None => errs.push("lexicon expert has no lexicon file".into()),
                },
                ExpertSpec::Remote { endpoint, .. } => {
                    if let Err(msg) = endpoint.validate() {
                        errs.push(msg);
                    }
                }
                _ => {}
            }
        }
        if let ProposalSpec::Remote { endpoint } = &self.proposal {
            if let Err(msg) = endpoint.validate() {
                errs.push(msg);
            }
        }
        match self.task {
            Task::Generate => {
                match self.length {
                    None => errs.push("generation needs `length`".into()),
                    Some(len) => {
                        for p in &self.prompts {
                            if p.split_whitespace().count() >= len {
                                errs.push(format!("prompt {p:?} leaves nothing to generate at length {len}"));
                            }
                        }
                    }
                }
                if self.prompts.is_empty() && self.prompt_file.is_none() {
                    errs.push("generation needs `prompts` or `prompt_file`".into());
                }
                if let Some(p) = &self.prompt_file {
                    need_file(&mut errs, "prompt file", p);
                }
                if self.samples_per_prompt == 0 {
                    errs.push("samples_per_prompt must be at least 1".into());
                }
            }
            Task::Revise => {
                match &self.source_file {
                    Some(p) => need_file(&mut errs, "source file", p),
                    None => errs.push("revision needs `source_file`".into()),
                }
                if self.samples_per_source == 0 {
                    errs.push("samples_per_source must be at least 1".into());
                }
            }
        }
        if self.threads == Some(0) {
            errs.push("threads must be at least 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Hyperparameters for the reported experiments, invocable by name.
#[derive(Debug, Clone, Copy)]
pub struct Preset {
    pub name: &'static str,
    pub task: Task,
    pub description: &'static str,
    pub epochs: usize,
    pub mlm: f64,
    pub discriminator: f64,
    pub hamming: f64,
    pub fuzzy: f64,
    pub lexicon: f64,
    pub verb_replace: bool,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "prompted-sentiment",
        task: Task::Generate,
        description: "prompted sentiment generation: alpha=40, 15 epochs",
        epochs: 15,
        mlm: 1.0,
        discriminator: 40.0,
        hamming: 0.0,
        fuzzy: 0.0,
        lexicon: 0.0,
        verb_replace: false,
    },
    Preset {
        name: "sentiment-disc",
        task: Task::Revise,
        description: "sentiment transfer favoring the discriminator: alpha=100, beta=25, 8 epochs",
        epochs: 8,
        mlm: 1.0,
        discriminator: 100.0,
        hamming: 25.0,
        fuzzy: 0.0,
        lexicon: 0.0,
        verb_replace: false,
    },
    Preset {
        name: "sentiment-hamming",
        task: Task::Revise,
        description: "sentiment transfer favoring faithfulness: alpha=100, beta=50, 8 epochs",
        epochs: 8,
        mlm: 1.0,
        discriminator: 100.0,
        hamming: 50.0,
        fuzzy: 0.0,
        lexicon: 0.0,
        verb_replace: false,
    },
    Preset {
        name: "agency",
        task: Task::Revise,
        description: "agency revision: alpha=100, beta=50, theta=100, 8 epochs",
        epochs: 8,
        mlm: 1.0,
        discriminator: 100.0,
        hamming: 50.0,
        fuzzy: 0.0,
        lexicon: 100.0,
        verb_replace: false,
    },
    Preset {
        name: "agency-verb-replace",
        task: Task::Revise,
        description: "agency revision of one given verb: alpha=100, beta=50, theta=100, 30 epochs",
        epochs: 30,
        mlm: 1.0,
        discriminator: 100.0,
        hamming: 50.0,
        fuzzy: 0.0,
        lexicon: 100.0,
        verb_replace: true,
    },
    Preset {
        name: "formality-disc",
        task: Task::Revise,
        description: "formality transfer favoring the discriminator: alpha=140, beta=15, gamma=100, 5 epochs",
        epochs: 5,
        mlm: 1.0,
        discriminator: 140.0,
        hamming: 15.0,
        fuzzy: 100.0,
        lexicon: 0.0,
        verb_replace: false,
    },
    Preset {
        name: "formality-bertscore",
        task: Task::Revise,
        description: "formality transfer favoring semantic similarity: alpha=140, beta=50, gamma=300, 5 epochs",
        epochs: 5,
        mlm: 1.0,
        discriminator: 140.0,
        hamming: 50.0,
        fuzzy: 300.0,
        lexicon: 0.0,
        verb_replace: false,
    },
];

impl Preset {
    pub fn find(name: &str) -> Option<&'static Preset> {
        PRESETS.iter().find(|p| p.name == name)
    }

    /// Expert list in the order mlm, discriminator, hamming, fuzzy, lexicon;
    /// zero-weight experts are omitted.
    pub fn experts(&self) -> Vec<ExpertSpec> {
        let mut out = Vec::new();
        if self.mlm != 0.0 {
            out.push(ExpertSpec::Mlm { weight: self.mlm });
        }
        if self.discriminator != 0.0 {
            out.push(ExpertSpec::Discriminator { weight: self.discriminator, mode: DiscriminatorMode::LogPosterior });
        }
        if self.hamming != 0.0 {
            out.push(ExpertSpec::Hamming { weight: self.hamming });
        }
        if self.fuzzy != 0.0 {
            out.push(ExpertSpec::Fuzzy { weight: self.fuzzy, embeddings: None });
        }
        if self.lexicon != 0.0 {
            out.push(ExpertSpec::Lexicon { weight: self.lexicon, lexicon: None });
        }
        out
    }
}
