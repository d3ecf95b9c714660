//! Multi-perspective visual projection.
//!
//! Tokens are merged in three DPC-KNN stages (stage s+1 clusters the means of
//! stage s). The content path maps every stage mean through a shared matrix
//! `W` (d_in → d_h) and stacks the stages row-wise. The relation path builds a
//! thresholded graph over each stage's means, runs the shared GCN on it and
//! stacks the per-stage outputs in the same order. The two are fused as
//! `alpha * content + relation`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density_peaks::{
    cluster_events, cluster_tokens, expand_event_tokens, frame_representations, EventPartition,
    KnnConfig,
};
use crate::error::{Error, Result};
use crate::relation_graph::{gcn_forward, Activation, GcnParams, RelationGraph};
use crate::token_model::{
    read_token_file, write_atomic, write_token_file, AudioFeatures, FrameSequence, Matrix,
    TokenMatrix,
};

pub const STAGE_COUNT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub center_count: usize,
    pub k: usize,
}

impl StageConfig {
    pub fn knn(&self) -> KnnConfig {
        KnnConfig::new(self.k, self.center_count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// `alpha * content + relation`
    #[default]
    Add,
    /// `[alpha * content | relation]`, doubling the width.
    Concat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioConfig {
    pub d_a: usize,
    /// Hidden widths between d_a and d_h; empty means a single affine layer.
    pub hidden: Vec<usize>,
}

/// Shapes and hyperparameters; everything except the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionConfig {
    pub d_in: usize,
    pub d_h: usize,
    pub stages: [StageConfig; STAGE_COUNT],
    pub tau: f64,
    pub alpha: f64,
    pub gcn_depth: usize,
    /// Width of hidden GCN layers; `None` means `d_in`.
    pub gcn_hidden: Option<usize>,
    pub activation: Activation,
    /// Keep the diagonal of the thresholded adjacency before self-loops are
    /// added, doubling self weight.
    pub self_edges: bool,
    pub fusion: FusionMode,
    /// Frame clustering into events.
    pub event_config: KnnConfig,
    /// Token clustering inside each event.
    pub event_tokens: KnnConfig,
    pub audio: Option<AudioConfig>,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            d_in: 1024,
            d_h: 4096,
            stages: [
                StageConfig {
                    center_count: 64,
                    k: 5,
                },
                StageConfig {
                    center_count: 32,
                    k: 5,
                },
                StageConfig {
                    center_count: 16,
                    k: 5,
                },
            ],
            tau: 0.1,
            alpha: 1.0,
            gcn_depth: 2,
            gcn_hidden: None,
            activation: Activation::Relu,
            self_edges: false,
            fusion: FusionMode::Add,
            event_config: KnnConfig::new(3, 4),
            event_tokens: KnnConfig::new(5, 64),
            audio: Some(AudioConfig {
                d_a: 512,
                hidden: vec![512],
            }),
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_h == 0 {
            return Err(Error::Config("d_in and d_h must be positive".into()));
        }
        for (s, stage) in self.stages.iter().enumerate() {
            if stage.center_count == 0 || stage.k == 0 {
                return Err(Error::Config(format!(
                    "stage {}: center_count and k must be positive",
                    s + 1
                )));
            }
            if s > 0 && stage.center_count > self.stages[s - 1].center_count {
                return Err(Error::Config(format!(
                    "stage {}: {} clusters exceeds the {} of stage {s}",
                    s + 1,
                    stage.center_count,
                    self.stages[s - 1].center_count
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau {} outside [0, 1]", self.tau)));
        }
        if !self.alpha.is_finite() {
            return Err(Error::Config("alpha must be finite".into()));
        }
        if self.gcn_depth == 0 || self.gcn_hidden == Some(0) {
            return Err(Error::Config(
                "GCN depth and widths must be positive".into(),
            ));
        }
        for (name, c) in [
            ("event_config", self.event_config),
            ("event_tokens", self.event_tokens),
        ] {
            if c.k == 0 || c.center_count == 0 {
                return Err(Error::Config(format!(
                    "{name}: k and center_count must be positive"
                )));
            }
        }
        if let Some(audio) = &self.audio {
            if audio.d_a == 0 || audio.hidden.contains(&0) {
                return Err(Error::Config("audio widths must be positive".into()));
            }
        }
        Ok(())
    }

    /// Rows of the projected output for an image.
    pub fn output_rows(&self) -> usize {
        self.stages.iter().map(|s| s.center_count).sum()
    }

    pub fn output_width(&self) -> usize {
        match self.fusion {
            FusionMode::Add => self.d_h,
            FusionMode::Concat => 2 * self.d_h,
        }
    }

    fn gcn_widths(&self) -> Vec<usize> {
        let hidden = self.gcn_hidden.unwrap_or(self.d_in);
        let mut widths = vec![self.d_in];
        widths.extend(std::iter::repeat_n(hidden, self.gcn_depth - 1));
        widths.push(self.d_h);
        widths
    }
}

/// Affine layers with ReLU between them (not after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<(Matrix, Vec<f64>)>,
}

impl MlpParams {
    pub fn new(layers: Vec<(Matrix, Vec<f64>)>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Parameter("an MLP needs at least one layer".into()));
        }
        for (l, (w, b)) in layers.iter().enumerate() {
            if b.len() != w.cols() {
                return Err(Error::Dimension(format!(
                    "MLP layer {l}: bias length {} for output width {}",
                    b.len(),
                    w.cols()
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parameter(format!("MLP layer {l}: non-finite bias")));
            }
            if l > 0 && layers[l - 1].0.cols() != w.rows() {
                return Err(Error::Dimension(format!(
                    "MLP layer {l} expects width {} but receives {}",
                    w.rows(),
                    layers[l - 1].0.cols()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[(Matrix, Vec<f64>)] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].0.rows()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].0.cols()
    }
}

/// Weights plus the configuration they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionParams {
    pub config: ProjectionConfig,
    pub seed: u64,
    pub proj_weight: Matrix,
    pub gcn: GcnParams,
    pub mlp: Option<MlpParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Representations {
    pub content: Matrix,
    pub relation: Matrix,
    pub fused: Matrix,
}

/// Uniform in ±1/√fan_in, drawn as `f32` so weights survive a save/load
/// round trip exactly. Every tensor has its own ChaCha stream.
fn uniform_matrix(seed: u64, stream: u64, rows: usize, cols: usize) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let bound = 1.0 / (rows as f32).sqrt();
    let data = (0..rows * cols)
        .map(|_| f64::from(rng.gen_range(-bound..=bound)))
        .collect();
    Matrix::from_parts(rows, cols, data)
}

fn uniform_vec(seed: u64, stream: u64, len: usize, fan_in: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let bound = 1.0 / (fan_in as f32).sqrt();
    (0..len)
        .map(|_| f64::from(rng.gen_range(-bound..=bound)))
        .collect()
}

const STREAM_PROJ: u64 = 1;
const STREAM_GCN: u64 = 100;
const STREAM_MLP: u64 = 200;

/// Deterministic seeded weights for `config`.
pub fn init_params(config: &ProjectionConfig, seed: u64) -> Result<ProjectionParams> {
    config.validate()?;
    let proj_weight = uniform_matrix(seed, STREAM_PROJ, config.d_in, config.d_h);
    let widths = config.gcn_widths();
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(l, w)| uniform_matrix(seed, STREAM_GCN + l as u64, w[0], w[1]))
        .collect();
    let gcn = GcnParams::new(layers, config.activation)?;
    let mlp = match &config.audio {
        None => None,
        Some(audio) => {
            let mut widths = vec![audio.d_a];
            widths.extend(&audio.hidden);
            widths.push(config.d_h);
            let layers = widths
                .windows(2)
                .enumerate()
                .map(|(l, w)| {
                    let stream = STREAM_MLP + 2 * l as u64;
                    (
                        uniform_matrix(seed, stream, w[0], w[1]),
                        uniform_vec(seed, stream + 1, w[1], w[0]),
                    )
                })
                .collect();
            Some(MlpParams::new(layers)?)
        }
    };
    Ok(ProjectionParams {
        config: config.clone(),
        seed,
        proj_weight,
        gcn,
        mlp,
    })
}

impl ProjectionParams {
    /// Assembles params from loaded weights, checking every shape against
    /// `config`.
    pub fn from_parts(
        config: ProjectionConfig,
        seed: u64,
        proj_weight: Matrix,
        gcn: GcnParams,
        mlp: Option<MlpParams>,
    ) -> Result<Self> {
        config.validate()?;
        if proj_weight.shape() != (config.d_in, config.d_h) {
            return Err(Error::Dimension(format!(
                "projection matrix is {:?}, config wants {:?}",
                proj_weight.shape(),
                (config.d_in, config.d_h)
            )));
        }
        if gcn.input_width() != config.d_in || gcn.output_width() != config.d_h {
            return Err(Error::Dimension(format!(
                "GCN maps {} -> {}, config wants {} -> {}",
                gcn.input_width(),
                gcn.output_width(),
                config.d_in,
                config.d_h
            )));
        }
        if let Some(m) = &mlp {
            if m.output_width() != config.d_h {
                return Err(Error::Dimension(format!(
                    "audio MLP outputs {}, config wants {}",
                    m.output_width(),
                    config.d_h
                )));
            }
        }
        Ok(Self {
            config,
            seed,
            proj_weight,
            gcn,
            mlp,
        })
    }

    /// Replaces hyperparameters that do not change weight shapes.
    pub fn with_overrides(
        mut self,
        tau: Option<f64>,
        alpha: Option<f64>,
        stages: Option<[StageConfig; STAGE_COUNT]>,
    ) -> Result<Self> {
        if let Some(t) = tau {
            self.config.tau = t;
        }
        if let Some(a) = alpha {
            self.config.alpha = a;
        }
        if let Some(s) = stages {
            self.config.stages = s;
        }
        self.config.validate()?;
        Ok(self)
    }
}

fn check_stage_feasible(stage: usize, cfg: &StageConfig, inputs: usize) -> Result<()> {
    cfg.knn()
        .validate(inputs)
        .map_err(|e| Error::Parameter(format!("stage {stage} cannot cluster {inputs} inputs: {e}")))
}

/// Stage means (pre-projection) and the projected content representation.
pub fn multi_scale_content(
    tokens: &TokenMatrix,
    params: &ProjectionParams,
) -> Result<(Matrix, Vec<Matrix>)> {
    let cfg = &params.config;
    if tokens.cols() != cfg.d_in {
        return Err(Error::Dimension(format!(
            "tokens have width {}, params expect {}",
            tokens.cols(),
            cfg.d_in
        )));
    }
    let mut stage_means: Vec<Matrix> = Vec::with_capacity(STAGE_COUNT);
    for (s, stage) in cfg.stages.iter().enumerate() {
        let input = stage_means.last().unwrap_or(tokens);
        check_stage_feasible(s + 1, stage, input.rows())?;
        let means = cluster_tokens(input, stage.knn())?.means;
        stage_means.push(means);
    }
    let stacked = Matrix::vstack(&stage_means)?;
    let content = stacked.matmul(&params.proj_weight)?;
    Ok((content, stage_means))
}

/// Per-stage GCN outputs over the stage relation graphs, stacked in stage
/// order.
pub fn multi_scale_relation(stage_means: &[Matrix], params: &ProjectionParams) -> Result<Matrix> {
    let cfg = &params.config;
    let outputs = stage_means
        .iter()
        .map(|means| {
            let graph = RelationGraph::build(means.clone(), cfg.tau, cfg.self_edges)?;
            gcn_forward(&graph, &params.gcn)
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::vstack(&outputs)
}

pub fn fuse(content: &Matrix, relation: &Matrix, alpha: f64, mode: FusionMode) -> Result<Matrix> {
    if content.shape() != relation.shape() {
        return Err(Error::Dimension(format!(
            "content {:?} and relation {:?} differ in shape",
            content.shape(),
            relation.shape()
        )));
    }
    match mode {
        FusionMode::Add => content.scale(alpha).add(relation),
        FusionMode::Concat => Matrix::hstack(&[content.scale(alpha), relation.clone()]),
    }
}

/// Content, relation and fused representations for one image's tokens.
pub fn project_image(tokens: &TokenMatrix, params: &ProjectionParams) -> Result<Representations> {
    let (content, stage_means) = multi_scale_content(tokens, params)?;
    let relation = multi_scale_relation(&stage_means, params)?;
    let fused = fuse(
        &content,
        &relation,
        params.config.alpha,
        params.config.fusion,
    )?;
    Ok(Representations {
        content,
        relation,
        fused,
    })
}

/// Events of a video and their expanded tokens, concatenated in event order.
pub fn expand_video(
    video: &FrameSequence,
    params: &ProjectionParams,
) -> Result<(EventPartition, TokenMatrix)> {
    let reps = frame_representations(video);
    let partition = cluster_events(&reps, params.config.event_config)?;
    let tokens = expand_event_tokens(video, &partition, params.config.event_tokens)?;
    Ok((partition, tokens))
}

pub fn project_video(video: &FrameSequence, params: &ProjectionParams) -> Result<Representations> {
    let (_, tokens) = expand_video(video, params)?;
    project_image(&tokens, params)
}

/// Row-wise MLP over audio features.
pub fn audio_project(features: &AudioFeatures, mlp: &MlpParams) -> Result<Matrix> {
    let x = features.matrix();
    if x.cols() != mlp.input_width() {
        return Err(Error::Dimension(format!(
            "audio width {} does not match MLP input {}",
            x.cols(),
            mlp.input_width()
        )));
    }
    let last = mlp.layers.len() - 1;
    let mut h = x.clone();
    for (l, (w, b)) in mlp.layers.iter().enumerate() {
        let z = h.matmul(w)?;
        let cols = z.cols();
        let data = z
            .into_data()
            .chunks_exact(cols)
            .flat_map(|row| {
                row.iter().zip(b).map(move |(v, bias)| {
                    let y = v + bias;
                    if l < last {
                        y.max(0.0)
                    } else {
                        y
                    }
                })
            })
            .collect();
        h = Matrix::from_parts(x.rows(), cols, data);
    }
    Ok(h)
}

// ---- persistence -------------------------------------------------------

pub const MANIFEST_FORMAT: &str = "emoproj-params/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsManifest {
    pub format: String,
    pub seed: u64,
    pub tau: f64,
    pub activation: Activation,
    pub config: ProjectionConfig,
    /// Projection matrix, then GCN layers in order, then MLP weight/bias pairs.
    pub tensors: Vec<TensorEntry>,
}

fn bias_matrix(b: &[f64]) -> Matrix {
    Matrix::from_parts(1, b.len(), b.to_vec())
}

/// Writes `manifest.json` plus one tensor file per weight into `dir`.
/// Returns the manifest path.
pub fn save_params(params: &ProjectionParams, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut named: Vec<(String, Matrix)> = vec![("proj_weight".into(), params.proj_weight.clone())];
    for (l, w) in params.gcn.layers().iter().enumerate() {
        named.push((format!("gcn.{l}"), w.clone()));
    }
    if let Some(mlp) = &params.mlp {
        for (l, (w, b)) in mlp.layers().iter().enumerate() {
            named.push((format!("mlp.{l}.weight"), w.clone()));
            named.push((format!("mlp.{l}.bias"), bias_matrix(b)));
        }
    }
    let mut tensors = Vec::with_capacity(named.len());
    for (name, m) in &named {
        let file = format!("{name}.tok");
        write_token_file(m, dir.join(&file))?;
        tensors.push(TensorEntry {
            name: name.clone(),
            file,
            shape: [m.rows(), m.cols()],
        });
    }
    let manifest = ParamsManifest {
        format: MANIFEST_FORMAT.into(),
        seed: params.seed,
        tau: params.config.tau,
        activation: params.config.activation,
        config: params.config.clone(),
        tensors,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

/// Loads params from a manifest path (or a directory holding `manifest.json`).
pub fn load_params(path: impl AsRef<Path>) -> Result<ProjectionParams> {
    let mut path = path.as_ref().to_path_buf();
    if path.is_dir() {
        path = path.join("manifest.json");
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ParamsManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Config(format!(
            "unsupported params format '{}'",
            manifest.format
        )));
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut config = manifest.config;
    config.tau = manifest.tau;
    config.activation = manifest.activation;

    let load = |entry: &TensorEntry| -> Result<Matrix> {
        let m = read_token_file(base.join(&entry.file))?;
        if [m.rows(), m.cols()] != entry.shape {
            return Err(Error::Config(format!(
                "tensor {} has shape {:?}, manifest says {:?}",
                entry.name,
                m.shape(),
                entry.shape
            )));
        }
        Ok(m)
    };
    let find = |name: &str| manifest.tensors.iter().find(|t| t.name == name);

    let proj_weight = load(
        find("proj_weight").ok_or_else(|| Error::Config("manifest lacks proj_weight".into()))?,
    )?;
    let mut gcn_layers = Vec::new();
    while let Some(entry) = find(&format!("gcn.{}", gcn_layers.len())) {
        gcn_layers.push(load(entry)?);
    }
    let gcn = GcnParams::new(gcn_layers, config.activation)?;
    let mut mlp_layers = Vec::new();
    while let Some(entry) = find(&format!("mlp.{}.weight", mlp_layers.len())) {
        let l = mlp_layers.len();
        let w = load(entry)?;
        let b = load(
            find(&format!("mlp.{l}.bias"))
                .ok_or_else(|| Error::Config(format!("manifest lacks mlp.{l}.bias")))?,
        )?;
        mlp_layers.push((w, b.into_data()));
    }
    let mlp = if mlp_layers.is_empty() {
        None
    } else {
        Some(MlpParams::new(mlp_layers)?)
    };
    config.gcn_depth = gcn.layers().len();
    ProjectionParams::from_parts(config, manifest.seed, proj_weight, gcn, mlp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(d_in: usize, d_h: usize, stages: [usize; 3], k: usize) -> ProjectionConfig {
        ProjectionConfig {
            d_in,
            d_h,
            stages: stages.map(|c| StageConfig { center_count: c, k }),
            audio: Some(AudioConfig {
                d_a: 3,
                hidden: vec![4],
            }),
            ..ProjectionConfig::default()
        }
    }

    #[test]
    fn defaults() {
        let c = ProjectionConfig::default();
        assert_eq!(c.tau, 0.1);
        assert_eq!(c.alpha, 1.0);
        assert_eq!(c.gcn_depth, 2);
        assert_eq!(c.stages.map(|s| s.center_count), [64, 32, 16]);
        assert_eq!(c.stages[0].k, 5);
        assert_eq!(c.event_config.k, 3);
        assert_eq!(c.output_rows(), 112);
        c.validate().unwrap();
    }

    #[test]
    fn config_rejects_growing_stages_and_bad_tau() {
        let mut c = small_config(2, 2, [2, 3, 1], 1);
        assert!(c.validate().unwrap_err().to_string().contains("stage 2"));
        c.stages[1].center_count = 1;
        c.tau = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn same_seed_same_params() {
        let c = small_config(4, 3, [4, 2, 1], 1);
        let a = init_params(&c, 7).unwrap();
        let b = init_params(&c, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_params(&c, 8).unwrap());
        let bound = 0.5;
        assert!(a.proj_weight.data().iter().all(|v| v.abs() <= bound));
        assert_eq!(a.gcn.layers().len(), 2);
        assert_eq!(a.gcn.layers()[0].shape(), (4, 4));
        assert_eq!(a.gcn.layers()[1].shape(), (4, 3));
    }

    #[test]
    fn single_global_mean_stage_reduction() {
        let c = small_config(2, 3, [1, 1, 1], 1);
        let p = init_params(&c, 1).unwrap();
        let tokens = Matrix::from_rows(&[[1.0, 2.0], [3.0, 0.0], [5.0, 4.0]]).unwrap();
        let (content, means) = multi_scale_content(&tokens, &p).unwrap();
        for m in &means {
            assert_eq!(m.data(), &[3.0, 2.0]);
        }
        let expected = Matrix::from_rows(&[[3.0, 2.0]])
            .unwrap()
            .matmul(&p.proj_weight)
            .unwrap();
        for r in 0..3 {
            assert_eq!(content.row(r), expected.row(0));
        }
    }

    #[test]
    fn far_pairs_form_stage_one() {
        let c = small_config(1, 2, [2, 1, 1], 1);
        let p = init_params(&c, 3).unwrap();
        let tokens = Matrix::new(4, 1, vec![0.0, 1.0, 100.0, 101.0]).unwrap();
        let (_, means) = multi_scale_content(&tokens, &p).unwrap();
        assert_eq!(means[0].data(), &[0.5, 100.5]);
    }

    #[test]
    fn infeasible_stage_is_named() {
        let c = small_config(1, 2, [3, 2, 1], 2);
        let p = init_params(&c, 3).unwrap();
        let tokens = Matrix::new(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        // stage 2 has 3 inputs so k = 2 is fine; stage 3 sees 2 inputs
        let err = multi_scale_content(&tokens, &p).unwrap_err();
        assert!(err.to_string().contains("stage 3"), "{err}");
        let wide = Matrix::new(1, 2, vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            multi_scale_content(&wide, &p),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn fusion_cases() {
        let c = Matrix::from_rows(&[[1.0, -2.0]]).unwrap();
        let r = Matrix::from_rows(&[[0.5, 0.25]]).unwrap();
        assert_eq!(fuse(&c, &r, 0.0, FusionMode::Add).unwrap(), r);
        let zero = Matrix::zeros(1, 2);
        assert_eq!(fuse(&c, &zero, 1.0, FusionMode::Add).unwrap(), c);
        let cat = fuse(&c, &r, 2.0, FusionMode::Concat).unwrap();
        assert_eq!(cat.data(), &[2.0, -4.0, 0.5, 0.25]);
        assert!(fuse(&c, &Matrix::zeros(2, 2), 1.0, FusionMode::Add).is_err());
    }

    #[test]
    fn zero_gcn_gives_relu_zero() {
        let c = small_config(2, 3, [2, 2, 1], 1);
        let mut p = init_params(&c, 5).unwrap();
        p.gcn = GcnParams::new(
            vec![Matrix::zeros(2, 2), Matrix::zeros(2, 3)],
            Activation::Relu,
        )
        .unwrap();
        let tokens = Matrix::from_rows(&[[0.0, 1.0], [4.0, 4.0], [9.0, 0.0]]).unwrap();
        let reps = project_image(&tokens, &p).unwrap();
        assert!(reps.relation.data().iter().all(|&v| v == 0.0));
        assert_eq!(reps.fused, reps.content);
    }

    #[test]
    fn mlp_identity_and_zero() {
        let x = AudioFeatures(Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]).unwrap());
        let id = MlpParams::new(vec![(Matrix::identity(2), vec![0.0, 0.0])]).unwrap();
        assert_eq!(audio_project(&x, &id).unwrap(), *x.matrix());

        let zero = MlpParams::new(vec![
            (Matrix::zeros(2, 3), vec![1.0, 1.0, 1.0]),
            (Matrix::zeros(3, 2), vec![0.25, -7.0]),
        ])
        .unwrap();
        let out = audio_project(&x, &zero).unwrap();
        assert_eq!(out.data(), &[0.25, -7.0, 0.25, -7.0]);

        let narrow = AudioFeatures(Matrix::zeros(1, 3));
        assert!(audio_project(&narrow, &id).is_err());
        assert!(MlpParams::new(vec![(Matrix::zeros(2, 2), vec![0.0])]).is_err());
    }

    #[test]
    fn params_round_trip_through_disk() {
        let c = small_config(3, 2, [3, 2, 1], 1);
        let p = init_params(&c, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_params(&p, dir.path()).unwrap();
        let text = fs::read_to_string(&manifest).unwrap();
        assert!(text.contains("\"tau\": 0.1"));
        assert!(text.contains("\"activation\": \"relu\""));
        assert_eq!(load_params(&manifest).unwrap(), p);
        assert_eq!(load_params(dir.path()).unwrap(), p);
    }

    #[test]
    fn overrides_are_validated() {
        let c = small_config(2, 2, [2, 1, 1], 1);
        let p = init_params(&c, 1).unwrap();
        assert!(p.clone().with_overrides(Some(2.0), None, None).is_err());
        let q = p.with_overrides(Some(0.3), Some(0.5), None).unwrap();
        assert_eq!((q.config.tau, q.config.alpha), (0.3, 0.5));
    }
}
