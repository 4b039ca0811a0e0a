//! Hyperbolic GCN channels, the Euclidean reference layer and Möbius fusion.
//!
//! A layer maps ball points `H` (curvature `c_in`) to
//! `exp_o^{c_out}(σ(Â · log_o^{c_in}(H) · W))`, row by row. Row-wise work
//! is dispatched through [`Exec`]; dense products go through `ndarray`.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{kernels, BallPoint, Curvature};
use crate::graph::NormalizedGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::None => z,
        }
    }

    /// Derivative, with 0 at the ReLU kink.
    #[inline]
    fn grad(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::None => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// `d_in × d_out`.
    pub weight: Array2<f64>,
    pub c_in: Curvature,
    pub c_out: Curvature,
    pub activation: Activation,
}

impl LayerParams {
    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Structure,
    Visual,
}

impl ChannelKind {
    pub fn name(self) -> &'static str {
        match self {
            ChannelKind::Structure => "structure",
            ChannelKind::Visual => "visual",
        }
    }
}

impl std::fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One embedding channel: Euclidean input features plus a stack of layers.
///
/// Structure-channel features are trainable; visual-channel features are
/// fixed inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub kind: ChannelKind,
    /// `n × d0` features in the tangent space at the origin.
    pub features: Array2<f64>,
    pub layers: Vec<LayerParams>,
}

impl ChannelModel {
    pub fn new(kind: ChannelKind, features: Array2<f64>, layers: Vec<LayerParams>) -> Result<Self> {
        let model = ChannelModel {
            kind,
            features,
            layers,
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks layer chaining and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidInput("channel has no layers".into()));
        }
        let mut dim = self.features.ncols();
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.input_dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: layer.input_dim(),
                    context: "layer input dimension",
                });
            }
            if l > 0 && self.layers[l - 1].c_out != layer.c_in {
                return Err(Error::CurvatureMismatch {
                    left: self.layers[l - 1].c_out.value(),
                    right: layer.c_in.value(),
                });
            }
            if layer.weight.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("layer {l} weight is not finite")));
            }
            dim = layer.output_dim();
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("input features are not finite".into()));
        }
        Ok(())
    }

    pub fn features_trainable(&self) -> bool {
        self.kind == ChannelKind::Structure
    }

    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn input_curvature(&self) -> Curvature {
        self.layers[0].c_in
    }

    pub fn output_curvature(&self) -> Curvature {
        self.layers.last().expect("validated").c_out
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("validated").output_dim()
    }

    /// Whether entity `i` has a non-zero input vector. Visual entities
    /// without an image have an all-zero row.
    pub fn has_input(&self, i: usize) -> bool {
        self.features.row(i).iter().any(|&v| v != 0.0)
    }

    /// Trainable tensors with their parameter paths, in a fixed order.
    pub fn params(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        if self.features_trainable() {
            out.push((format!("{}.features", self.kind), &self.features));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("{}.layers.{l}.weight", self.kind), &layer.weight));
        }
        out
    }

    /// Mutable counterpart of [`ChannelModel::params`], same order.
    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::new();
        if self.features_trainable() {
            out.push(&mut self.features);
        }
        for layer in &mut self.layers {
            out.push(&mut layer.weight);
        }
        out
    }
}

/// Layer dimensions and curvatures of a channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Width of each layer's output; the input width comes from the features.
    pub layer_dims: Vec<usize>,
    /// `layer_dims.len() + 1` curvatures: input, then each layer's output.
    pub curvatures: Vec<Curvature>,
    pub activation: Activation,
    /// Whether the last layer also applies `activation`.
    pub activate_last: bool,
}

impl ChannelConfig {
    /// `layers` layers of width `dim` at curvature 1.
    pub fn uniform(dim: usize, layers: usize) -> Self {
        ChannelConfig {
            layer_dims: vec![dim; layers],
            curvatures: vec![Curvature::ONE; layers + 1],
            activation: Activation::Relu,
            activate_last: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.layer_dims.is_empty() || self.layer_dims.contains(&0) {
            return Err(Error::InvalidInput("layer dims must be non-empty and positive".into()));
        }
        if self.curvatures.len() != self.layer_dims.len() + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.layer_dims.len() + 1,
                actual: self.curvatures.len(),
                context: "curvature count",
            });
        }
        Ok(())
    }

    fn build_layers<R: Rng>(&self, input_dim: usize, rng: &mut R) -> Result<Vec<LayerParams>> {
        self.validate()?;
        let mut d_in = input_dim;
        let last = self.layer_dims.len() - 1;
        Ok(self
            .layer_dims
            .iter()
            .enumerate()
            .map(|(l, &d_out)| {
                let layer = LayerParams {
                    weight: glorot(d_in, d_out, rng),
                    c_in: self.curvatures[l],
                    c_out: self.curvatures[l + 1],
                    activation: if l < last || self.activate_last {
                        self.activation
                    } else {
                        Activation::None
                    },
                };
                d_in = d_out;
                layer
            })
            .collect())
    }
}

/// Glorot/Xavier uniform initialization.
fn glorot<R: Rng>(d_in: usize, d_out: usize, rng: &mut R) -> Array2<f64> {
    let bound = (6.0 / (d_in + d_out) as f64).sqrt();
    Array2::from_shape_fn((d_in, d_out), |_| rng.gen_range(-bound..bound))
}

/// Structure channel with free `n × input_dim` features drawn from
/// `N(0, 1/input_dim)` and rows capped at norm `0.9/√c₀`.
pub fn init_structure_channel<R: Rng>(
    n: usize,
    input_dim: usize,
    config: &ChannelConfig,
    rng: &mut R,
) -> Result<ChannelModel> {
    if n == 0 || input_dim == 0 {
        return Err(Error::InvalidInput("structure channel needs n > 0 and d0 > 0".into()));
    }
    let normal = Normal::new(0.0, 1.0 / (input_dim as f64).sqrt()).expect("valid std");
    let mut features = Array2::from_shape_fn((n, input_dim), |_| normal.sample(rng));
    let cap = 0.9 / config.curvatures[0].value().sqrt();
    for mut row in features.axis_iter_mut(Axis(0)) {
        let norm = row.dot(&row).sqrt();
        if norm > cap {
            row.mapv_inplace(|v| v * cap / norm);
        }
    }
    let layers = config.build_layers(input_dim, rng)?;
    ChannelModel::new(ChannelKind::Structure, features, layers)
}

/// Visual channel over per-entity feature vectors (`None` = no image).
/// Vectors are L2-normalized and scaled by 0.5; missing ones become zero.
pub fn init_visual_channel<R: Rng>(
    vectors: &[Option<Vec<f64>>],
    config: &ChannelConfig,
    rng: &mut R,
) -> Result<ChannelModel> {
    let dv = vectors
        .iter()
        .flatten()
        .map(Vec::len)
        .next()
        .ok_or_else(|| Error::InvalidInput("no visual features present".into()))?;
    let mut features = Array2::zeros((vectors.len(), dv));
    for (i, v) in vectors.iter().enumerate() {
        let Some(v) = v else { continue };
        if v.len() != dv {
            return Err(Error::DimensionMismatch {
                expected: dv,
                actual: v.len(),
                context: "visual feature vector",
            });
        }
        let norm = kernels::norm(v);
        if norm > 0.0 {
            for (j, x) in v.iter().enumerate() {
                features[[i, j]] = 0.5 * x / norm;
            }
        }
    }
    let layers = config.build_layers(dv, rng)?;
    ChannelModel::new(ChannelKind::Visual, features, layers)
}

/// Applies `f(in_row, out_row)` to every row.
fn map_rows<F>(x: ArrayView2<'_, f64>, out_cols: usize, exec: Exec, f: F) -> Array2<f64>
where
    F: Fn(&[f64], &mut [f64]) + Sync + Send,
{
    let x = x.as_standard_layout();
    let mut out = Array2::zeros((x.nrows(), out_cols));
    let slice = out.as_slice_mut().expect("fresh array is contiguous");
    exec.for_each_row(slice, out_cols, |i, row| {
        f(x.row(i).as_slice().expect("standard layout"), row)
    });
    out
}

/// Applies `f(a_row, b_row, out_row)` to every row pair.
fn zip_rows<F>(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, exec: Exec, f: F) -> Array2<f64>
where
    F: Fn(&[f64], &[f64], &mut [f64]) + Sync + Send,
{
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let cols = a.ncols();
    let mut out = Array2::zeros((a.nrows(), cols));
    let slice = out.as_slice_mut().expect("fresh array is contiguous");
    exec.for_each_row(slice, cols, |i, row| {
        f(
            a.row(i).as_slice().expect("standard layout"),
            b.row(i).as_slice().expect("standard layout"),
            row,
        )
    });
    out
}

fn check_finite(x: ArrayView2<'_, f64>, what: &str) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{what} contains non-finite values")));
    }
    Ok(())
}

/// Row-wise `exp_o^c`: Euclidean features onto the ball.
pub fn lift_to_ball(x: ArrayView2<'_, f64>, c: Curvature, exec: Exec) -> Result<Array2<f64>> {
    check_finite(x, "features")?;
    let cv = c.value();
    Ok(map_rows(x, x.ncols(), exec, |v, o| kernels::exp0(v, cv, o)))
}

/// Row-wise `log_o^c`.
pub fn log_rows(h: ArrayView2<'_, f64>, c: Curvature, exec: Exec) -> Array2<f64> {
    let cv = c.value();
    map_rows(h, h.ncols(), exec, |y, o| kernels::log0(y, cv, o))
}

/// Intermediate values of one layer, kept for the backward pass.
#[derive(Debug, Clone)]
struct LayerTrace {
    input: Array2<f64>,
    propagated: Array2<f64>,
    pre_activation: Array2<f64>,
}

fn layer_forward(
    h: ArrayView2<'_, f64>,
    graph: &NormalizedGraph,
    params: &LayerParams,
    exec: Exec,
) -> Result<(Array2<f64>, LayerTrace)> {
    if h.nrows() != graph.num_nodes() {
        return Err(Error::DimensionMismatch {
            expected: graph.num_nodes(),
            actual: h.nrows(),
            context: "layer input rows vs graph nodes",
        });
    }
    if h.ncols() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            actual: h.ncols(),
            context: "layer input width vs weight rows",
        });
    }
    let tangent = log_rows(h, params.c_in, exec);
    let propagated = graph.propagate(tangent.view(), exec);
    let pre_activation = propagated.dot(&params.weight);
    let act = params.activation;
    let c_out = params.c_out.value();
    let output = map_rows(
        pre_activation.view(),
        params.output_dim(),
        exec,
        |z, o| {
            for (oi, zi) in o.iter_mut().zip(z) {
                *oi = act.apply(*zi);
            }
            let s = o.to_vec();
            kernels::exp0(&s, c_out, o);
        },
    );
    Ok((
        output,
        LayerTrace {
            input: h.to_owned(),
            propagated,
            pre_activation,
        },
    ))
}

/// One hyperbolic GCN layer: `exp^{c_out}(σ(Â · log^{c_in}(H) · W))`.
pub fn hgcn_layer(
    h: ArrayView2<'_, f64>,
    graph: &NormalizedGraph,
    params: &LayerParams,
    exec: Exec,
) -> Result<Array2<f64>> {
    layer_forward(h, graph, params, exec).map(|(out, _)| out)
}

/// Euclidean GCN layer `ReLU(Â · H · W)`.
pub fn euclid_gcn_layer(
    h: ArrayView2<'_, f64>,
    graph: &NormalizedGraph,
    weight: ArrayView2<'_, f64>,
    exec: Exec,
) -> Result<Array2<f64>> {
    if h.nrows() != graph.num_nodes() {
        return Err(Error::DimensionMismatch {
            expected: graph.num_nodes(),
            actual: h.nrows(),
            context: "layer input rows vs graph nodes",
        });
    }
    if h.ncols() != weight.nrows() {
        return Err(Error::DimensionMismatch {
            expected: weight.nrows(),
            actual: h.ncols(),
            context: "layer input width vs weight rows",
        });
    }
    let mut out = graph.propagate(h, exec).dot(&weight);
    out.mapv_inplace(|v| v.max(0.0));
    Ok(out)
}

/// Forward values needed by [`backward_channel`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub output: Array2<f64>,
    layers: Vec<LayerTrace>,
}

/// Lifts the channel's features and folds all layers.
pub fn forward_channel(
    model: &ChannelModel,
    graph: &NormalizedGraph,
    exec: Exec,
) -> Result<Array2<f64>> {
    forward_traced(model, graph, exec).map(|t| t.output)
}

pub fn forward_traced(
    model: &ChannelModel,
    graph: &NormalizedGraph,
    exec: Exec,
) -> Result<ForwardTrace> {
    model.validate()?;
    if model.num_nodes() != graph.num_nodes() {
        return Err(Error::DimensionMismatch {
            expected: graph.num_nodes(),
            actual: model.num_nodes(),
            context: "feature rows vs graph nodes",
        });
    }
    let mut h = lift_to_ball(model.features.view(), model.input_curvature(), exec)?;
    let mut layers = Vec::with_capacity(model.layers.len());
    for params in &model.layers {
        let (next, trace) = layer_forward(h.view(), graph, params, exec)?;
        layers.push(trace);
        h = next;
    }
    Ok(ForwardTrace { output: h, layers })
}

impl ForwardTrace {
    /// Which pre-activations were strictly positive, layer by layer. Changes
    /// in this pattern mark ReLU kinks.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.layers
            .iter()
            .flat_map(|t| t.pre_activation.iter().map(|&z| z > 0.0))
            .collect()
    }
}

/// Gradients for the trainable tensors of a channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGrads {
    /// Present only for channels with trainable features.
    pub features: Option<Array2<f64>>,
    pub weights: Vec<Array2<f64>>,
}

impl ChannelGrads {
    /// Tensors in the same order as [`ChannelModel::params`].
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        self.features.iter().chain(self.weights.iter()).collect()
    }
}

/// Reverse pass: given `∂L/∂output`, returns `∂L/∂θ` for every trainable θ.
///
/// Uses `Âᵀ = Â`, which holds for every [`NormalizedGraph`].
pub fn backward_channel(
    model: &ChannelModel,
    graph: &NormalizedGraph,
    trace: &ForwardTrace,
    grad_output: ArrayView2<'_, f64>,
    exec: Exec,
) -> Result<ChannelGrads> {
    if grad_output.dim() != trace.output.dim() {
        return Err(Error::InvalidInput("gradient shape does not match output".into()));
    }
    let mut grad = grad_output.to_owned();
    let mut weights = vec![Array2::zeros((0, 0)); model.layers.len()];
    for (l, (params, t)) in model.layers.iter().zip(&trace.layers).enumerate().rev() {
        let act = params.activation;
        let c_out = params.c_out.value();
        // through exp map and activation
        let grad_pre = zip_rows(t.pre_activation.view(), grad.view(), exec, |z, g, o| {
            let s: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            kernels::exp0_vjp(&s, c_out, g, o);
            for (oi, zi) in o.iter_mut().zip(z) {
                *oi *= act.grad(*zi);
            }
        });
        weights[l] = t.propagated.t().dot(&grad_pre);
        let grad_prop = grad_pre.dot(&params.weight.t());
        let grad_tangent = graph.propagate(grad_prop.view(), exec);
        let c_in = params.c_in.value();
        grad = zip_rows(t.input.view(), grad_tangent.view(), exec, |y, g, o| {
            kernels::log0_vjp(y, c_in, g, o)
        });
    }
    let features = if model.features_trainable() {
        let c0 = model.input_curvature().value();
        Some(zip_rows(model.features.view(), grad.view(), exec, |x, g, o| {
            kernels::exp0_vjp(x, c0, g, o)
        }))
    } else {
        None
    };
    Ok(ChannelGrads { features, weights })
}

/// Weight `β` of the structure channel in the Möbius fusion, and the ball the
/// two channels must share.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    beta: f64,
    curvature: Curvature,
}

impl FusionConfig {
    pub fn new(beta: f64, curvature: Curvature) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidInput(format!("beta must be in [0, 1], got {beta}")));
        }
        Ok(FusionConfig { beta, curvature })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }
}

/// `(β ⊗ h_s) ⊕ ((1 − β) ⊗ h_v)`.
pub fn fuse(h_struct: &BallPoint, h_visual: &BallPoint, cfg: &FusionConfig) -> Result<BallPoint> {
    for p in [h_struct, h_visual] {
        if p.curvature() != cfg.curvature {
            return Err(Error::CurvatureMismatch {
                left: p.curvature().value(),
                right: cfg.curvature.value(),
            });
        }
    }
    if h_struct.dim() != h_visual.dim() {
        return Err(Error::DimensionMismatch {
            expected: h_struct.dim(),
            actual: h_visual.dim(),
            context: "fused channel dimensions",
        });
    }
    let mut out = vec![0.0; h_struct.dim()];
    fuse_row(
        h_struct.coords(),
        h_visual.coords(),
        cfg.beta,
        cfg.curvature.value(),
        &mut out,
    );
    Ok(BallPoint::projected(out, cfg.curvature))
}

fn fuse_row(hs: &[f64], hv: &[f64], beta: f64, c: f64, out: &mut [f64]) {
    if beta == 1.0 {
        out.copy_from_slice(hs);
        return;
    }
    if beta == 0.0 {
        out.copy_from_slice(hv);
        return;
    }
    let mut a = vec![0.0; hs.len()];
    let mut b = vec![0.0; hs.len()];
    kernels::mobius_scale(beta, hs, c, &mut a);
    kernels::mobius_scale(1.0 - beta, hv, c, &mut b);
    kernels::mobius_add(&a, &b, c, out);
}

/// Row-wise [`fuse`] over two embedding matrices.
pub fn fuse_rows(
    h_struct: ArrayView2<'_, f64>,
    h_visual: ArrayView2<'_, f64>,
    cfg: &FusionConfig,
    exec: Exec,
) -> Result<Array2<f64>> {
    if h_struct.dim() != h_visual.dim() {
        return Err(Error::DimensionMismatch {
            expected: h_struct.ncols(),
            actual: h_visual.ncols(),
            context: "fused channel shapes",
        });
    }
    if cfg.beta == 1.0 {
        return Ok(h_struct.to_owned());
    }
    if cfg.beta == 0.0 {
        return Ok(h_visual.to_owned());
    }
    let (beta, c) = (cfg.beta, cfg.curvature.value());
    Ok(zip_rows(h_struct, h_visual, exec, |s, v, o| fuse_row(s, v, beta, c, o)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{adjacency_from_edges, union_of};
    use ndarray::{arr2, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_layer(d: usize, act: Activation) -> LayerParams {
        LayerParams {
            weight: Array2::eye(d),
            c_in: Curvature::ONE,
            c_out: Curvature::ONE,
            activation: act,
        }
    }

    fn assert_rows_close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) {
        assert_eq!(a.dim(), b.dim());
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < tol, "{a} vs {b}");
        }
    }

    #[test]
    fn lift_examples() {
        let z = lift_to_ball(Array2::zeros((3, 2)).view(), Curvature::ONE, Exec::Serial).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        let y = lift_to_ball(arr2(&[[0.5, 0.0]]).view(), Curvature::ONE, Exec::Serial).unwrap();
        assert!((y[[0, 0]] - 0.4621171573).abs() < 1e-10);
        let x = arr2(&[[0.3, -1.2, 0.7], [2.0, 0.1, -0.5]]);
        let back = log_rows(
            lift_to_ball(x.view(), Curvature::ONE, Exec::Parallel).unwrap().view(),
            Curvature::ONE,
            Exec::Parallel,
        );
        assert_rows_close(&back, &x, 1e-9);
        assert!(lift_to_ball(arr2(&[[f64::NAN]]).view(), Curvature::ONE, Exec::Serial).is_err());
    }

    #[test]
    fn isolated_node_identity_layer() {
        let g = adjacency_from_edges(1, &[]).unwrap();
        let h = lift_to_ball(arr2(&[[0.3, -0.4]]).view(), Curvature::ONE, Exec::Serial).unwrap();
        let out = hgcn_layer(h.view(), &g, &identity_layer(2, Activation::None), Exec::Serial).unwrap();
        assert_rows_close(&out, &h, 1e-9);
    }

    #[test]
    fn disconnected_nodes_do_not_mix() {
        let g = adjacency_from_edges(2, &[]).unwrap();
        let h = lift_to_ball(arr2(&[[0.3, -0.4], [-0.1, 0.9]]).view(), Curvature::ONE, Exec::Serial)
            .unwrap();
        let out = hgcn_layer(h.view(), &g, &identity_layer(2, Activation::None), Exec::Serial).unwrap();
        assert_rows_close(&out, &h, 1e-9);
    }

    #[test]
    fn k3_constant_rows_are_preserved() {
        let g = adjacency_from_edges(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        let row = [0.2_f64.tanh(), 0.0];
        let h = arr2(&[row, row, row]);
        let out = hgcn_layer(h.view(), &g, &identity_layer(2, Activation::None), Exec::Serial).unwrap();
        assert_rows_close(&out, &h, 1e-12);

        let e = arr2(&[[0.2, 0.5], [0.2, 0.5], [0.2, 0.5]]);
        let out = euclid_gcn_layer(e.view(), &g, Array2::eye(2).view(), Exec::Serial).unwrap();
        assert_rows_close(&out, &e, 1e-12);
    }

    #[test]
    fn layer_rejects_dimension_mismatch() {
        let g = adjacency_from_edges(2, &[(0, 1)]).unwrap();
        let h = Array2::zeros((2, 3));
        assert!(matches!(
            hgcn_layer(h.view(), &g, &identity_layer(2, Activation::Relu), Exec::Serial),
            Err(Error::DimensionMismatch { .. })
        ));
        let h = Array2::zeros((3, 2));
        assert!(hgcn_layer(h.view(), &g, &identity_layer(2, Activation::Relu), Exec::Serial).is_err());
        assert!(euclid_gcn_layer(h.view(), &g, Array2::eye(2).view(), Exec::Serial).is_err());
    }

    #[test]
    fn euclid_layer_examples() {
        let g = adjacency_from_edges(3, &[]).unwrap();
        let h = arr2(&[[0.1, 2.0], [0.0, 0.3], [4.0, 1.0]]);
        let out = euclid_gcn_layer(h.view(), &g, Array2::eye(2).view(), Exec::Serial).unwrap();
        assert_eq!(out, h);
        let z = euclid_gcn_layer(
            Array2::zeros((3, 2)).view(),
            &g,
            arr2(&[[1.0, -2.0], [3.0, 0.5]]).view(),
            Exec::Serial,
        )
        .unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tiny_curvature_matches_euclidean_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = adjacency_from_edges(12, &[(0, 1), (1, 2), (2, 3), (4, 5), (5, 6), (6, 4), (7, 8), (9, 11)])
            .unwrap();
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut x: Array2<f64> = Array2::from_shape_fn((12, 6), |_| normal.sample(&mut rng));
        for mut row in x.rows_mut() {
            let n = row.dot(&row).sqrt();
            row.mapv_inplace(|v| v / n * 1e-3);
        }
        let weight = Array2::from_shape_fn((6, 5), |_| normal.sample(&mut rng) * 0.5);
        let c = Curvature::new(1e-6).unwrap();
        let params = LayerParams {
            weight: weight.clone(),
            c_in: c,
            c_out: c,
            activation: Activation::Relu,
        };
        let h = lift_to_ball(x.view(), c, Exec::Serial).unwrap();
        let out = hgcn_layer(h.view(), &g, &params, Exec::Serial).unwrap();
        let hyp = log_rows(out.view(), c, Exec::Serial);
        let euc = euclid_gcn_layer(x.view(), &g, weight.view(), Exec::Serial).unwrap();
        let diff = (&hyp - &euc).mapv(|v| v * v).sum().sqrt();
        let norm = euc.mapv(|v| v * v).sum().sqrt();
        assert!(norm > 0.0);
        assert!(diff / norm < 1e-3, "relative error {}", diff / norm);
    }

    fn small_channel(features: Array2<f64>, layers: usize) -> ChannelModel {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = features.ncols();
        let cfg = ChannelConfig::uniform(d, layers);
        let layers = cfg.build_layers(d, &mut rng).unwrap();
        ChannelModel::new(ChannelKind::Structure, features, layers).unwrap()
    }

    #[test]
    fn zero_features_stay_at_origin() {
        let g = adjacency_from_edges(4, &[(0, 1), (2, 3), (1, 2)]).unwrap();
        let model = small_channel(Array2::zeros((4, 3)), 2);
        let out = forward_channel(&model, &g, Exec::Serial).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic_across_exec_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = adjacency_from_edges(30, &(0..29).map(|i| (i, i + 1)).collect::<Vec<_>>()).unwrap();
        let model = init_structure_channel(30, 6, &ChannelConfig::uniform(6, 2), &mut rng).unwrap();
        let a = forward_channel(&model, &g, Exec::Serial).unwrap();
        let b = forward_channel(&model, &g, Exec::Serial).unwrap();
        let c = forward_channel(&model, &g, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn outputs_satisfy_ball_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = adjacency_from_edges(10, &[(0, 1), (1, 2), (3, 4), (5, 9)]).unwrap();
        let mut model = init_structure_channel(10, 4, &ChannelConfig::uniform(4, 3), &mut rng).unwrap();
        // blow up the weights so exp maps saturate
        for w in model.params_mut() {
            w.mapv_inplace(|v| v * 50.0);
        }
        let trace = forward_traced(&model, &g, Exec::Serial).unwrap();
        for row in trace.output.rows() {
            assert!(row.dot(&row).sqrt() < 1.0);
        }
    }

    #[test]
    fn channel_validation() {
        let mut model = small_channel(Array2::zeros((2, 3)), 2);
        model.layers[1].c_in = Curvature::new(2.0).unwrap();
        assert!(matches!(model.validate(), Err(Error::CurvatureMismatch { .. })));
        let mut model = small_channel(Array2::zeros((2, 3)), 2);
        model.layers[1].weight = Array2::zeros((4, 3));
        assert!(matches!(model.validate(), Err(Error::DimensionMismatch { .. })));
        let g = adjacency_from_edges(3, &[]).unwrap();
        let model = small_channel(Array2::zeros((2, 3)), 1);
        assert!(forward_channel(&model, &g, Exec::Serial).is_err());
    }

    #[test]
    fn visual_channel_normalizes_and_zero_fills() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vecs = vec![Some(vec![3.0, 4.0]), None, Some(vec![0.0, -2.0])];
        let m = init_visual_channel(&vecs, &ChannelConfig::uniform(2, 1), &mut rng).unwrap();
        assert_eq!(m.features, arr2(&[[0.3, 0.4], [0.0, 0.0], [0.0, -0.5]]));
        assert!(!m.features_trainable());
        assert_eq!(m.params().len(), 1);
        let bad = vec![Some(vec![1.0]), Some(vec![1.0, 2.0])];
        assert!(init_visual_channel(&bad, &ChannelConfig::uniform(2, 1), &mut rng).is_err());
        assert!(init_visual_channel(&[None], &ChannelConfig::uniform(2, 1), &mut rng).is_err());
    }

    #[test]
    fn structure_features_are_capped() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut cfg = ChannelConfig::uniform(8, 2);
        cfg.curvatures[0] = Curvature::new(4.0).unwrap();
        let m = init_structure_channel(50, 8, &cfg, &mut rng).unwrap();
        for row in m.features.rows() {
            assert!(row.dot(&row).sqrt() <= 0.45 + 1e-12);
        }
        assert_eq!(
            m.params().iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(),
            ["structure.features", "structure.layers.0.weight", "structure.layers.1.weight"]
        );
    }

    #[test]
    fn fusion_endpoints_and_half_sum() {
        let c = Curvature::ONE;
        let hs = BallPoint::new(vec![0.3, -0.2], c).unwrap();
        let hv = BallPoint::new(vec![-0.5, 0.1], c).unwrap();
        let one = FusionConfig::new(1.0, c).unwrap();
        let zero = FusionConfig::new(0.0, c).unwrap();
        assert_eq!(fuse(&hs, &hv, &one).unwrap(), hs);
        assert_eq!(fuse(&hs, &hv, &zero).unwrap(), hv);
        let half = FusionConfig::new(0.5, c).unwrap();
        let same = fuse(&hs, &hs, &half).unwrap();
        for (x, y) in same.coords().iter().zip(hs.coords()) {
            assert!((x - y).abs() < 1e-8);
        }
        assert!(FusionConfig::new(1.5, c).is_err());
        let other = BallPoint::new(vec![0.1], c).unwrap();
        assert!(fuse(&hs, &other, &half).is_err());
    }

    #[test]
    fn fuse_rows_matches_pointwise() {
        let c = Curvature::ONE;
        let a = arr2(&[[0.3, -0.2], [0.0, 0.5]]);
        let b = arr2(&[[-0.5, 0.1], [0.2, 0.2]]);
        let cfg = FusionConfig::new(0.7, c).unwrap();
        let m = fuse_rows(a.view(), b.view(), &cfg, Exec::Parallel).unwrap();
        for i in 0..2 {
            let p = fuse(
                &BallPoint::new(a.row(i).to_vec(), c).unwrap(),
                &BallPoint::new(b.row(i).to_vec(), c).unwrap(),
                &cfg,
            )
            .unwrap();
            assert_eq!(m.row(i).to_vec(), p.coords());
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g1 = adjacency_from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 2)]).unwrap();
        let g2 = adjacency_from_edges(4, &[(0, 1), (1, 3)]).unwrap();
        let g = union_of(&g1, &g2).graph;
        let model = init_structure_channel(9, 3, &ChannelConfig::uniform(3, 2), &mut rng).unwrap();
        // scalar objective: Σ wᵢⱼ · outᵢⱼ with fixed random w
        let probe = Array2::from_shape_fn((9, 3), |_| rng.gen_range(-1.0..1.0));
        let objective = |m: &ChannelModel| -> f64 {
            let out = forward_channel(m, &g, Exec::Serial).unwrap();
            (&out * &probe).sum()
        };
        let trace = forward_traced(&model, &g, Exec::Serial).unwrap();
        let grads = backward_channel(&model, &g, &trace, probe.view(), Exec::Serial).unwrap();
        let tensors: Vec<Array2<f64>> = grads.tensors().into_iter().cloned().collect();
        let h = 1e-6;
        for (p, analytic) in tensors.iter().enumerate() {
            for idx in 0..analytic.len() {
                let (r, c) = (idx / analytic.ncols(), idx % analytic.ncols());
                let mut plus = model.clone();
                plus.params_mut()[p][[r, c]] += h;
                let mut minus = model.clone();
                minus.params_mut()[p][[r, c]] -= h;
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let a = analytic[[r, c]];
                assert!(
                    (a - numeric).abs() < 1e-6 * (1.0 + a.abs()),
                    "param {p} [{r},{c}]: {a} vs {numeric}"
                );
            }
        }
    }
}
