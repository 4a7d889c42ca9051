//! Experiment protocol: build the task and network for a cell, train,
//! evaluate, extract the learned operators.

pub mod render;
pub mod suite;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::mnist::{load_mnist, mnist_path_from_env, MNIST_ENV, TARGET_SIZE};
use crate::data::{invert_dataset, make_task, DiskorectConfig, ImageSource, SamplePair, Task};
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::morpho::{make_se, MorphOp, SeKind, SeShape, StructuringElement};
use crate::net::{Bimonn, InitScheme, LayerStatus};
use crate::pipeline::{binarize_network, Blocker, Pipeline};
use crate::train::{evaluate, init_network, train, TrainConfig, TrainLog};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Diskorect,
    Mnist,
    InvertedMnist,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Diskorect => "diskorect",
            DatasetKind::Mnist => "mnist",
            DatasetKind::InvertedMnist => "inverted_mnist",
        }
    }

    fn is_mnist(self) -> bool {
        !matches!(self, DatasetKind::Diskorect)
    }
}

/// Optional replacements for the protocol defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub loss: Option<LossKind>,
    pub learning_rate: Option<f64>,
    pub iterations: Option<usize>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub p_fixed: Option<f64>,
    pub bias_init_raw: Option<f64>,
    pub init: Option<InitScheme>,
    pub freeze_p: Option<bool>,
    pub eval_every: Option<usize>,
    pub stop_dice_error: Option<f64>,
    pub stop_patience: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub dataset: DatasetKind,
    pub operation: MorphOp,
    pub se_shape: SeKind,
    /// Window side; 5 for MNIST erosion/dilation, 7 otherwise.
    #[serde(default)]
    pub se_size: Option<usize>,
    /// Complement every input before building targets.
    #[serde(default)]
    pub complement: bool,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default)]
    pub diskorect: DiskorectConfig,
    /// Falls back to the `BIMONN_MNIST` environment variable.
    #[serde(default)]
    pub mnist_path: Option<PathBuf>,
    /// Use at most this many MNIST images per split.
    #[serde(default)]
    pub mnist_limit: Option<usize>,
    /// Held-out pairs evaluated during training.
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    /// Held-out pairs for the final report.
    #[serde(default = "default_test_samples")]
    pub test_samples: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_eval_samples() -> usize {
    64
}

fn default_test_samples() -> usize {
    256
}

/// Standard MNIST training images once the validation split is removed.
const MNIST_TRAIN_IMAGES: usize = 55_000;
const MNIST_EPOCHS: usize = 3;
const DISKORECT_ITERATIONS: usize = 30_000;
const DISKORECT_EVAL_OFFSET: u64 = 1 << 40;
const DISKORECT_TEST_OFFSET: u64 = 1 << 41;

impl ExperimentSpec {
    pub fn new(dataset: DatasetKind, operation: MorphOp, se_shape: SeKind) -> Self {
        Self {
            dataset,
            operation,
            se_shape,
            se_size: None,
            complement: false,
            train: TrainOverrides::default(),
            diskorect: DiskorectConfig::default(),
            mnist_path: None,
            mnist_limit: None,
            eval_samples: default_eval_samples(),
            test_samples: default_test_samples(),
            output_dir: None,
        }
    }

    /// Reads TOML, or JSON when the file ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn se_size(&self) -> usize {
        self.se_size.unwrap_or(match (self.dataset.is_mnist(), self.operation.depth()) {
            (true, 1) => 5,
            _ => 7,
        })
    }

    pub fn structuring_element(&self) -> Result<StructuringElement> {
        let side = self.se_size();
        make_se(SeShape::default_for(self.se_shape, side), side)
    }

    /// Protocol defaults with the overrides applied.
    pub fn train_config(&self) -> TrainConfig {
        let single = self.operation.depth() == 1;
        let (loss, lr, iterations) = if self.dataset.is_mnist() {
            let batch = self.train.batch_size.unwrap_or(32);
            let iters = (MNIST_EPOCHS * MNIST_TRAIN_IMAGES).div_ceil(batch);
            (LossKind::Mse, if single { 0.1 } else { 0.01 }, iters)
        } else {
            (LossKind::Dice, if single { 0.01 } else { 0.001 }, DISKORECT_ITERATIONS)
        };
        let d = TrainConfig::default();
        let o = &self.train;
        TrainConfig {
            loss: o.loss.unwrap_or(loss),
            learning_rate: o.learning_rate.unwrap_or(lr),
            iterations: o.iterations.unwrap_or(iterations),
            batch_size: o.batch_size.unwrap_or(d.batch_size),
            seed: o.seed.unwrap_or(d.seed),
            p_fixed: o.p_fixed.unwrap_or(d.p_fixed),
            bias_init_raw: o.bias_init_raw.unwrap_or(d.bias_init_raw),
            init: o.init.unwrap_or(d.init),
            adam: d.adam,
            freeze_p: o.freeze_p.unwrap_or(d.freeze_p),
            eval_every: o.eval_every.unwrap_or(d.eval_every),
            stop_dice_error: o.stop_dice_error.or(d.stop_dice_error),
            stop_patience: o.stop_patience.unwrap_or(d.stop_patience),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let side = self.se_size();
        if side.is_multiple_of(2) {
            return Err(Error::Config(format!("se_size {side} must be odd")));
        }
        self.structuring_element()?;
        self.train_config().validate()?;
        if self.eval_samples == 0 || self.test_samples == 0 {
            return Err(Error::Config("eval_samples and test_samples must be positive".into()));
        }
        let image = if self.dataset.is_mnist() {
            TARGET_SIZE
        } else {
            self.diskorect.validate()?;
            self.diskorect.image_size
        };
        // each stacked layer masks another band of side / 2 pixels
        if 2 * self.operation.depth() * (side / 2) >= image {
            return Err(Error::Config(format!(
                "se_size {side} leaves no unmasked pixels on {image}x{image} images"
            )));
        }
        Ok(())
    }

    /// The spec trained on complemented inputs with the dual operator.
    pub fn dual(&self) -> Self {
        Self {
            operation: self.operation.dual(),
            complement: !self.complement,
            ..self.clone()
        }
    }

    pub fn label(&self) -> String {
        format!(
            "{}{}/{}/{}-{}",
            if self.complement { "complemented " } else { "" },
            self.dataset.name(),
            self.operation.name(),
            self.se_shape.name(),
            self.se_size()
        )
    }
}

/// Training task plus evaluation and test pairs.
pub struct PreparedData {
    pub task: Task,
    pub eval: Vec<SamplePair>,
    pub test: Vec<SamplePair>,
}

pub fn prepare_data(spec: &ExperimentSpec) -> Result<PreparedData> {
    let se = spec.structuring_element()?;
    let wrap = |src: ImageSource| {
        let inverted = spec.dataset == DatasetKind::InvertedMnist;
        let src = if inverted { invert_dataset(src) } else { src };
        if spec.complement {
            invert_dataset(src)
        } else {
            src
        }
    };
    if spec.dataset.is_mnist() {
        let path = spec
            .mnist_path
            .clone()
            .or_else(mnist_path_from_env)
            .ok_or_else(|| Error::Config(format!("MNIST path not given; set {MNIST_ENV} or mnist_path")))?;
        let split = load_mnist(&path, TARGET_SIZE, spec.mnist_limit)?;
        let mk = |imgs: Vec<_>| make_task(wrap(ImageSource::images(imgs)), spec.operation, se.clone());
        let task = mk(split.train)?;
        let valid = mk(split.valid)?;
        let test = mk(split.test)?;
        let take = |t: &Task, n: usize| t.pairs(0, n.min(t.source.len().unwrap_or(n)));
        Ok(PreparedData {
            eval: take(&valid, spec.eval_samples),
            test: take(&test, spec.test_samples),
            task,
        })
    } else {
        let task = make_task(wrap(ImageSource::Diskorect(spec.diskorect.clone())), spec.operation, se)?;
        Ok(PreparedData {
            eval: task.pairs(DISKORECT_EVAL_OFFSET, spec.eval_samples),
            test: task.pairs(DISKORECT_TEST_OFFSET, spec.test_samples),
            task,
        })
    }
}

/// Operators the network should end up computing, in layer order.
pub fn target_ops(op: MorphOp, se: &StructuringElement) -> Vec<(MorphOp, StructuringElement)> {
    match op {
        MorphOp::Dilation | MorphOp::Erosion => vec![(op, se.clone())],
        MorphOp::Opening => vec![(MorphOp::Erosion, se.clone()), (MorphOp::Dilation, se.clone())],
        MorphOp::Closing => vec![(MorphOp::Dilation, se.clone()), (MorphOp::Erosion, se.clone())],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractedOp {
    pub op: MorphOp,
    pub se: StructuringElement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub label: String,
    pub spec: ExperimentSpec,
    pub config: TrainConfig,
    pub final_dice_error: f64,
    pub iterations_run: usize,
    pub stopped_early: bool,
    pub first_below_threshold: Option<usize>,
    pub first_activated: Option<usize>,
    pub statuses: Vec<LayerStatus<f64>>,
    /// Per neuron, `None` when not activated.
    pub extracted: Vec<Option<ExtractedOp>>,
    pub targets: Vec<ExtractedOp>,
    pub all_activated: bool,
    /// Extracted operators equal the generating ones.
    pub matches_target: bool,
    /// Pipeline output equals the thresholded network on every test pair
    /// (interior pixels); `None` when the network cannot be binarized.
    pub binarization_agrees: Option<bool>,
    pub wall_clock_seconds: f64,
    pub dice_curve: Vec<(usize, f64)>,
}

impl ExperimentReport {
    pub fn activation_marks(&self) -> String {
        self.statuses
            .iter()
            .flat_map(LayerStatus::flags)
            .map(|f| if f { '✓' } else { '✗' })
            .collect()
    }
}

/// Output of a finished run.
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub net: Bimonn<f64>,
    pub log: TrainLog,
    pub data: PreparedData,
}

/// Thresholded network vs. pipeline on interior pixels.
pub fn check_binarization(net: &Bimonn<f64>, pipeline: &Pipeline, pairs: &[SamplePair]) -> Result<bool> {
    let border = net.loss_mask().border;
    for pair in pairs {
        let net_out = net.predict_binary(&[pair.input.to_real()])?;
        let pipe_out = pipeline.apply(std::slice::from_ref(&pair.input))?;
        if !net_out[0].eq_interior(&pipe_out[0], border) {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentRun> {
    spec.validate()?;
    let started = Instant::now();
    let data = prepare_data(spec)?;
    let config = spec.train_config();
    let se = spec.structuring_element()?;
    let mut net = Bimonn::<f64>::chain(spec.operation.depth(), se.half_width(), config.p_fixed)?;
    init_network(&mut net, &config);
    let log = train(&mut net, &data.task, &data.eval, &config)?;
    let final_dice_error = evaluate(&net, &data.test)?;

    let statuses = net.find_activation();
    let extracted: Vec<Option<ExtractedOp>> = statuses
        .iter()
        .map(|s| match s {
            LayerStatus::Bise { status, .. } => status.operation().map(|(op, se)| ExtractedOp { op, se: se.clone() }),
            LayerStatus::Bisel { .. } => None,
        })
        .collect();
    let targets: Vec<ExtractedOp> = target_ops(spec.operation, &se)
        .into_iter()
        .map(|(op, se)| ExtractedOp { op, se })
        .collect();
    let all_activated = statuses.iter().all(LayerStatus::is_activated);
    let matches_target = extracted.iter().zip(&targets).all(|(e, t)| e.as_ref() == Some(t));
    let binarization_agrees = match binarize_network(&net) {
        Ok(pipeline) => Some(check_binarization(&net, &pipeline, &data.test)?),
        Err(_) => None,
    };
    let report = ExperimentReport {
        label: spec.label(),
        spec: spec.clone(),
        config,
        final_dice_error,
        iterations_run: log.iterations_run,
        stopped_early: log.stopped_early,
        first_below_threshold: log.first_below_threshold,
        first_activated: log.first_activated,
        statuses,
        extracted,
        targets,
        all_activated,
        matches_target,
        binarization_agrees,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        dice_curve: log.dice_curve(),
    };
    let run = ExperimentRun { report, net, log, data };
    if let Some(dir) = &spec.output_dir {
        write_run(&run, dir)?;
    }
    Ok(run)
}

/// `report.json`, `log.csv`, `checkpoint.json` and the PNG panels.
pub fn write_run(run: &ExperimentRun, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&run.report)?)?;
    run.log.save_csv(&dir.join("log.csv"))?;
    let mut ck = Checkpoint::from_network(&run.net);
    ck.meta = Some(serde_json::to_value(&run.report.spec)?);
    ck.save(&dir.join("checkpoint.json"))?;
    render::render_report(&run.report, &run.net, dir)?;
    Ok(())
}

/// Result of binarizing a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum BinarizeOutcome {
    Pipeline {
        pipeline: Pipeline,
        /// Spot-check pairs where pipeline and network agree.
        agreeing: usize,
        checked: usize,
    },
    Refused {
        blockers: Vec<Blocker>,
    },
}

pub const SPOT_CHECKS: usize = 20;

/// Exports the morphological pipeline of a checkpoint and spot-checks it on
/// held-out Diskorect images, or refuses with the offending neurons.
pub fn binarize_checkpoint(ck: &Checkpoint) -> Result<BinarizeOutcome> {
    let net = ck.to_network()?;
    if net.in_channels() != 1 {
        return Err(Error::Config("spot checks need a single-channel network".into()));
    }
    match binarize_network(&net) {
        Err(blockers) => Ok(BinarizeOutcome::Refused { blockers }),
        Ok(pipeline) => {
            let cfg = DiskorectConfig::default();
            let border = net.loss_mask().border;
            let mut agreeing = 0;
            for idx in 0..SPOT_CHECKS as u64 {
                let x = cfg.sample(DISKORECT_TEST_OFFSET + idx);
                let net_out = net.predict_binary(&[x.to_real()])?;
                let pipe_out = pipeline.apply(&[x])?;
                agreeing += net_out[0].eq_interior(&pipe_out[0], border) as usize;
            }
            Ok(BinarizeOutcome::Pipeline {
                pipeline,
                agreeing,
                checked: SPOT_CHECKS,
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub primal: ExperimentReport,
    pub dual: ExperimentReport,
    /// Iterations to the DICE threshold, dual over primal.
    pub convergence_ratio: Option<f64>,
    pub dice_error_gap: f64,
}

/// Runs `spec` and its dual (complemented inputs, dual operator) with the
/// same seed.
pub fn duality_probe(spec: &ExperimentSpec) -> Result<DualityReport> {
    let mut primal_spec = spec.clone();
    let mut dual_spec = spec.dual();
    if let Some(dir) = &spec.output_dir {
        primal_spec.output_dir = Some(dir.join("primal"));
        dual_spec.output_dir = Some(dir.join("dual"));
    }
    let primal = run_experiment(&primal_spec)?.report;
    let dual = run_experiment(&dual_spec)?.report;
    let convergence_ratio = match (primal.first_below_threshold, dual.first_below_threshold) {
        (Some(a), Some(b)) => Some(b as f64 / a as f64),
        _ => None,
    };
    let report = DualityReport {
        dice_error_gap: (primal.final_dice_error - dual.final_dice_error).abs(),
        primal,
        dual,
        convergence_ratio,
    };
    if let Some(dir) = &spec.output_dir {
        std::fs::write(dir.join("duality.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn protocol_defaults() {
        let s = ExperimentSpec::new(DatasetKind::Diskorect, MorphOp::Dilation, SeKind::Disk);
        let c = s.train_config();
        assert_eq!((c.loss, c.learning_rate, c.iterations), (LossKind::Dice, 0.01, 30_000));
        assert_eq!(s.se_size(), 7);
        let s = ExperimentSpec::new(DatasetKind::Diskorect, MorphOp::Closing, SeKind::Disk);
        assert_eq!(s.train_config().learning_rate, 0.001);
        let s = ExperimentSpec::new(DatasetKind::Mnist, MorphOp::Erosion, SeKind::Stick);
        let c = s.train_config();
        assert_eq!((c.loss, c.learning_rate), (LossKind::Mse, 0.1));
        assert_eq!(c.iterations, 5157);
        assert_eq!(s.se_size(), 5);
        let s = ExperimentSpec::new(DatasetKind::InvertedMnist, MorphOp::Opening, SeKind::Cross);
        assert_eq!((s.train_config().learning_rate, s.se_size()), (0.01, 7));
    }

    #[test]
    fn dual_of_dual_is_identity() {
        let s = ExperimentSpec::new(DatasetKind::Diskorect, MorphOp::Opening, SeKind::Stick);
        assert_eq!(s.dual().operation, MorphOp::Closing);
        assert!(s.dual().complement);
        assert_eq!(s.dual().dual(), s);
    }

    #[test]
    fn toml_spec_parses_and_validates() {
        let text = r#"
            dataset = "diskorect"
            operation = "erosion"
            se_shape = "cross"
            [train]
            iterations = 10
        "#;
        let s: ExperimentSpec = toml::from_str(text).unwrap();
        s.validate().unwrap();
        assert_eq!(s.train_config().iterations, 10);
        let bad: std::result::Result<ExperimentSpec, _> = toml::from_str("dataset = \"cifar\"\noperation = \"erosion\"\nse_shape = \"disk\"");
        assert!(bad.is_err());
        let mut s2 = s.clone();
        s2.se_size = Some(4);
        assert!(s2.validate().is_err());
        s2.se_size = Some(51);
        assert!(s2.validate().is_err());
    }

    #[test]
    fn mnist_without_path_is_a_config_error() {
        let mut s = ExperimentSpec::new(DatasetKind::Mnist, MorphOp::Dilation, SeKind::Disk);
        s.mnist_path = Some(PathBuf::from("/nonexistent/mnist"));
        assert!(prepare_data(&s).is_err());
    }

    #[test]
    fn short_run_produces_a_consistent_report() {
        let mut s = ExperimentSpec::new(DatasetKind::Diskorect, MorphOp::Dilation, SeKind::Cross);
        s.se_size = Some(3);
        s.diskorect.image_size = 24;
        s.diskorect.rect_side = (3, 8);
        s.diskorect.disk_radius = (2, 4);
        s.train.iterations = Some(30);
        s.train.batch_size = Some(4);
        s.eval_samples = 4;
        s.test_samples = 8;
        let dir = tempfile::tempdir().unwrap();
        s.output_dir = Some(dir.path().to_path_buf());
        let run = run_experiment(&s).unwrap();
        let r = &run.report;
        assert!((0.0..=1.0).contains(&r.final_dice_error));
        assert_eq!(r.extracted.len(), 1);
        assert_eq!(r.all_activated, r.extracted[0].is_some());
        for f in ["report.json", "log.csv", "checkpoint.json"] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        // rerunning the echoed spec reproduces the result
        let again = run_experiment(&ExperimentSpec { output_dir: None, ..r.spec.clone() }).unwrap();
        assert_eq!(again.report.final_dice_error, r.final_dice_error);
        let ck = Checkpoint::load(&dir.path().join("checkpoint.json")).unwrap();
        assert_eq!(ck.to_network().unwrap().parameters(), run.net.parameters());
    }
}
