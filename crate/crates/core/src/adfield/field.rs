use std::fs;
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::encoding::{encode_batch, encode_batch_backward, encoded_width};
use super::mlp::{Linear, Mlp, MlpTape};
use crate::{seed, Error, Result, Scalar};

/// Shape and activation settings of an [`MlpField`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    pub hidden: usize,
    /// Number of linear layers in the density net (≥ 1).
    pub density_layers: usize,
    /// Number of linear layers in the colour net (≥ 1).
    pub color_layers: usize,
    /// Width of the feature vector passed from the density net to the colour net.
    pub feature: usize,
    pub l_pos: usize,
    pub l_dir: usize,
    /// Adds a fourth colour-net output that becomes the per-sample variance β.
    pub beta_head: bool,
    pub beta_floor: f64,
    /// Initial β produced by a freshly initialised head.
    pub beta_init: f64,
    /// Positions are divided by this before encoding.
    pub bound: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            hidden: 64,
            density_layers: 3,
            color_layers: 2,
            feature: 64,
            l_pos: 6,
            l_dir: 2,
            beta_head: false,
            beta_floor: 1e-6,
            beta_init: 0.05,
            bound: 1.0,
        }
    }
}

impl FieldConfig {
    fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.density_layers == 0 || self.color_layers == 0 {
            return Err(Error::InvalidArgument("field layers and widths must be positive".into()));
        }
        if !(self.beta_floor > 0.0) || !(self.bound > 0.0) || !(self.beta_init > self.beta_floor) {
            return Err(Error::InvalidArgument(
                "field needs bound > 0 and beta_init > beta_floor > 0".into(),
            ));
        }
        Ok(())
    }

    fn density_widths(&self) -> Vec<usize> {
        let mut w = vec![encoded_width(3, self.l_pos)];
        w.extend(std::iter::repeat_n(self.hidden, self.density_layers - 1));
        w.push(1 + self.feature);
        w
    }

    fn color_widths(&self) -> Vec<usize> {
        let mut w = vec![self.feature + encoded_width(3, self.l_dir)];
        w.extend(std::iter::repeat_n(self.hidden, self.color_layers - 1));
        w.push(if self.beta_head { 4 } else { 3 });
        w
    }
}

/// Radiance field: a density net mapping encoded positions to `(σ_raw, feature)` and a colour
/// net mapping `(feature, encoded direction)` to `c_raw` and optionally `β_raw`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpField<T> {
    pub config: FieldConfig,
    pub density_net: Mlp<T>,
    pub color_net: Mlp<T>,
}

/// Per-point field outputs for a batch of `n` points.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldOutput<T> {
    pub sigma: Array1<T>,
    /// `n × 3`.
    pub color: Array2<T>,
    pub beta: Option<Array1<T>>,
}

/// Upstream gradients with respect to a [`FieldOutput`].
#[derive(Clone, Debug)]
pub struct FieldOutputGrad<T> {
    pub sigma: Array1<T>,
    pub color: Array2<T>,
    pub beta: Option<Array1<T>>,
}

impl<T: Scalar> FieldOutputGrad<T> {
    pub fn zeros(n: usize, beta: bool) -> Self {
        FieldOutputGrad {
            sigma: Array1::zeros(n),
            color: Array2::zeros((n, 3)),
            beta: beta.then(|| Array1::zeros(n)),
        }
    }
}

/// Multiplicative dropout masks on the inputs of the last density and colour layers.
/// Entries are 0 or `1/(1−p)`; rows are per point (or a single broadcast row).
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask<T> {
    pub density: Array2<T>,
    pub color: Array2<T>,
}

impl<T: Scalar> DropoutMask<T> {
    pub fn ones(field: &MlpField<T>, rows: usize) -> Self {
        DropoutMask {
            density: Array2::ones((rows, field.density_net.head_width())),
            color: Array2::ones((rows, field.color_net.head_width())),
        }
    }

    pub fn zeros(field: &MlpField<T>, rows: usize) -> Self {
        DropoutMask {
            density: Array2::zeros((rows, field.density_net.head_width())),
            color: Array2::zeros((rows, field.color_net.head_width())),
        }
    }

    /// Independent Bernoulli keep/drop per entry with drop rate `p ∈ [0, 1)`.
    pub fn sample(field: &MlpField<T>, rows: usize, p: f64, rng: &mut seed::Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout rate must be in [0, 1), got {p}")));
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let mut draw = |cols: usize| {
            Array2::from_shape_simple_fn((rows, cols), || {
                if rng.random::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
        };
        let density = draw(field.density_net.head_width());
        let color = draw(field.color_net.head_width());
        Ok(DropoutMask { density, color })
    }

    fn check(&self, field: &MlpField<T>, n: usize) -> Result<()> {
        let ok = |m: &Array2<T>, w: usize| m.ncols() == w && (m.nrows() == 1 || m.nrows() == n);
        if !ok(&self.density, field.density_net.head_width()) || !ok(&self.color, field.color_net.head_width()) {
            return Err(Error::ShapeMismatch(format!(
                "dropout mask shapes {:?}/{:?} do not fit {n} points",
                self.density.dim(),
                self.color.dim()
            )));
        }
        Ok(())
    }
}

/// Everything [`field_backward`] needs from one [`field_forward`] evaluation.
#[derive(Clone, Debug)]
pub struct FieldTape<T> {
    scaled_x: Array2<T>,
    dirs: Array2<T>,
    density: MlpTape<T>,
    color: MlpTape<T>,
    sigma_raw: Array1<T>,
    color_raw: Array2<T>,
    mask: Option<DropoutMask<T>>,
}

impl<T: Scalar> FieldTape<T> {
    pub fn len(&self) -> usize {
        self.sigma_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma_raw.is_empty()
    }

    /// Input of the last density layer (after dropout), `n × hidden`.
    pub fn density_head_input(&self) -> ArrayView2<'_, T> {
        self.density.head_input()
    }

    /// Input of the last colour layer (after dropout), `n × hidden`.
    pub fn color_head_input(&self) -> ArrayView2<'_, T> {
        self.color.head_input()
    }

    /// ReLU activity of both networks; the field is smooth while this pattern is unchanged.
    pub fn active_units(&self) -> Vec<bool> {
        let mut v = self.density.active_units();
        v.extend(self.color.active_units());
        v
    }

    pub fn sigma_raw(&self) -> &Array1<T> {
        &self.sigma_raw
    }

    /// Pre-activation colour-net outputs (`n × 3`, or `n × 4` with a β head).
    pub fn color_raw(&self) -> &Array2<T> {
        &self.color_raw
    }
}

/// Gradients from [`field_backward`].
#[derive(Clone, Debug)]
pub struct FieldGradients<T> {
    /// Same structure as the field; `None` when parameter gradients were not requested.
    pub params: Option<MlpField<T>>,
    pub x: Array2<T>,
    pub d: Array2<T>,
}

impl<T: Scalar> MlpField<T> {
    pub fn new(config: FieldConfig, seed_value: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed_value);
        let density_net = Mlp::init(&config.density_widths(), &mut rng);
        let mut color_net = Mlp::init(&config.color_widths(), &mut rng);
        if config.beta_head {
            let last = color_net.layers.last_mut().expect("non-empty");
            last.bias[3] = T::lit((config.beta_init - config.beta_floor).softplus_inv());
        }
        Ok(MlpField {
            config,
            density_net,
            color_net,
        })
    }

    /// A field whose weights and biases are all zero.
    pub fn zeros(config: FieldConfig) -> Result<Self> {
        config.validate()?;
        let z = |w: Vec<usize>| Mlp {
            layers: w.windows(2).map(|p| Linear::zeros(p[0], p[1])).collect(),
        };
        Ok(MlpField {
            density_net: z(config.density_widths()),
            color_net: z(config.color_widths()),
            config,
        })
    }

    pub fn zeros_like(&self) -> Self {
        MlpField {
            config: self.config.clone(),
            density_net: self.density_net.zeros_like(),
            color_net: self.color_net.zeros_like(),
        }
    }

    pub fn has_beta(&self) -> bool {
        self.config.beta_head
    }

    pub fn num_params(&self) -> usize {
        self.density_net.num_params() + self.color_net.num_params()
    }

    /// Parameter blocks in a fixed order (density layers, then colour layers; weight then bias).
    pub fn param_slices(&self) -> Vec<&[T]> {
        let mut v = self.density_net.param_slices();
        v.extend(self.color_net.param_slices());
        v
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.density_net.param_slices_mut();
        v.extend(self.color_net.param_slices_mut());
        v
    }

    pub fn convert<U: Scalar>(&self) -> MlpField<U> {
        let conv = |m: &Mlp<T>| Mlp {
            layers: m
                .layers
                .iter()
                .map(|l| Linear {
                    weight: l.weight.mapv(|v| U::lit(v.as_f64())),
                    bias: l.bias.mapv(|v| U::lit(v.as_f64())),
                })
                .collect(),
        };
        MlpField {
            config: self.config.clone(),
            density_net: conv(&self.density_net),
            color_net: conv(&self.color_net),
        }
    }

    pub fn forward(
        &self,
        x: ArrayView2<T>,
        d: ArrayView2<T>,
        mask: Option<&DropoutMask<T>>,
    ) -> Result<(FieldOutput<T>, FieldTape<T>)> {
        field_forward(self, x, d, mask)
    }
}

/// Evaluates the field at `n` points `x` (`n × 3`) seen from unit directions `d` (`n × 3`).
pub fn field_forward<T: Scalar>(
    field: &MlpField<T>,
    x: ArrayView2<T>,
    d: ArrayView2<T>,
    mask: Option<&DropoutMask<T>>,
) -> Result<(FieldOutput<T>, FieldTape<T>)> {
    let n = x.nrows();
    if x.ncols() != 3 || d.dim() != (n, 3) {
        return Err(Error::ShapeMismatch(format!(
            "field inputs must be n×3, got {:?} and {:?}",
            x.dim(),
            d.dim()
        )));
    }
    if let Some(m) = mask {
        m.check(field, n)?;
    }
    let cfg = &field.config;
    let scaled_x = x.mapv(|v| v / T::lit(cfg.bound));
    let (dens_out, density) = field.density_net.forward(
        encode_batch(scaled_x.view(), cfg.l_pos),
        mask.map(|m| m.density.view()),
        "density",
    )?;
    let sigma_raw = dens_out.column(0).to_owned();
    let color_in = concatenate![Axis(1), dens_out.slice(s![.., 1..]), encode_batch(d, cfg.l_dir)];
    let (color_raw, color) = field.color_net.forward(color_in, mask.map(|m| m.color.view()), "color")?;

    let out = FieldOutput {
        sigma: sigma_raw.mapv(T::softplus),
        color: color_raw.slice(s![.., 0..3]).mapv(T::sigmoid),
        beta: cfg
            .beta_head
            .then(|| color_raw.column(3).mapv(|v| v.softplus() + T::lit(cfg.beta_floor))),
    };
    let tape = FieldTape {
        scaled_x,
        dirs: d.to_owned(),
        density,
        color,
        sigma_raw,
        color_raw,
        mask: mask.cloned(),
    };
    Ok((out, tape))
}

/// Reverse pass through one recorded evaluation. Input gradients are always returned;
/// parameter gradients only when `with_params` is set.
pub fn field_backward<T: Scalar>(
    field: &MlpField<T>,
    tape: &FieldTape<T>,
    upstream: &FieldOutputGrad<T>,
    with_params: bool,
) -> Result<FieldGradients<T>> {
    let n = tape.len();
    if upstream.sigma.len() != n
        || upstream.color.dim() != (n, 3)
        || upstream.beta.as_ref().is_some_and(|b| b.len() != n)
        || (upstream.beta.is_some() && !field.has_beta())
    {
        return Err(Error::ShapeMismatch(format!("upstream gradients do not match {n} points")));
    }
    let cfg = &field.config;
    let mut params = with_params.then(|| field.zeros_like());

    let mut g_color_raw = Array2::zeros(tape.color_raw.dim());
    for r in 0..n {
        for c in 0..3 {
            let s = tape.color_raw[[r, c]].sigmoid();
            g_color_raw[[r, c]] = upstream.color[[r, c]] * s * (T::one() - s);
        }
        if let Some(gb) = &upstream.beta {
            g_color_raw[[r, 3]] = gb[r] * tape.color_raw[[r, 3]].sigmoid();
        }
    }
    let g_color_in = field.color_net.backward(
        &tape.color,
        g_color_raw,
        tape.mask.as_ref().map(|m| m.color.view()),
        params.as_mut().map(|p| &mut p.color_net),
    );
    let feat = cfg.feature;
    let g_d = encode_batch_backward(tape.dirs.view(), cfg.l_dir, g_color_in.slice(s![.., feat..]));

    let mut g_dens = Array2::zeros((n, 1 + feat));
    for r in 0..n {
        g_dens[[r, 0]] = upstream.sigma[r] * tape.sigma_raw[r].sigmoid();
    }
    g_dens.slice_mut(s![.., 1..]).assign(&g_color_in.slice(s![.., 0..feat]));
    let g_enc = field.density_net.backward(
        &tape.density,
        g_dens,
        tape.mask.as_ref().map(|m| m.density.view()),
        params.as_mut().map(|p| &mut p.density_net),
    );
    let g_x = encode_batch_backward(tape.scaled_x.view(), cfg.l_pos, g_enc.view()) / T::lit(cfg.bound);
    Ok(FieldGradients { params, x: g_x, d: g_d })
}

pub const CHECKPOINT_FORMAT: &str = "radunc-field";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    inputs: usize,
    outputs: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FieldRecord {
    format: String,
    version: u32,
    config: FieldConfig,
    density_net: Vec<LayerRecord>,
    color_net: Vec<LayerRecord>,
}

fn to_records<T: Scalar>(m: &Mlp<T>) -> Vec<LayerRecord> {
    m.layers
        .iter()
        .map(|l| LayerRecord {
            inputs: l.inputs(),
            outputs: l.outputs(),
            weight: l.weight.iter().map(|v| v.as_f64()).collect(),
            bias: l.bias.iter().map(|v| v.as_f64()).collect(),
        })
        .collect()
}

fn from_records<T: Scalar>(records: Vec<LayerRecord>, widths: &[usize]) -> std::result::Result<Mlp<T>, String> {
    if records.len() + 1 != widths.len() {
        return Err(format!("expected {} layers, found {}", widths.len() - 1, records.len()));
    }
    let mut layers = Vec::with_capacity(records.len());
    for (k, r) in records.into_iter().enumerate() {
        if (r.inputs, r.outputs) != (widths[k], widths[k + 1])
            || r.weight.len() != r.inputs * r.outputs
            || r.bias.len() != r.outputs
        {
            return Err(format!("layer {k} has inconsistent shape"));
        }
        layers.push(Linear {
            weight: Array2::from_shape_vec((r.inputs, r.outputs), r.weight.into_iter().map(T::lit).collect())
                .expect("checked length"),
            bias: r.bias.into_iter().map(T::lit).collect(),
        });
    }
    Ok(Mlp { layers })
}

impl<T: Scalar> MlpField<T> {
    pub fn to_json(&self) -> String {
        let rec = FieldRecord {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            density_net: to_records(&self.density_net),
            color_net: to_records(&self.color_net),
        };
        serde_json::to_string(&rec).expect("field serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let rec: FieldRecord = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if rec.format != CHECKPOINT_FORMAT || rec.version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint {} v{}", rec.format, rec.version));
        }
        rec.config.validate().map_err(|e| e.to_string())?;
        Ok(MlpField {
            density_net: from_records(rec.density_net, &rec.config.density_widths())?,
            color_net: from_records(rec.color_net, &rec.config.color_widths())?,
            config: rec.config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|reason| Error::malformed(path, reason))
    }
}
