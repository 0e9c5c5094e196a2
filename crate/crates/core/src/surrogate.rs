//! Dense tanh network used as a per-step increment model for a classical
//! machine, its analytic input Jacobian, and the JSON weight-file format.
//!
//! The prediction is `x̂_{n+1} = x_n + h·s⊙tanh(W_K z_K + b_K)` with
//! `z_{k+1} = tanh(W_k z_k + b_k)` and `z_0` the normalized inputs. Outputs
//! are increments of `(δ, Δω)`.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::Deserializer;
use serde::ser::{Error as _, Serializer};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use crate::algebraizer::{wrap_angle, Increment, IncrementModel};
use crate::error::{Error, Result};
use crate::machine::{MachineParams, Polar};

pub const SCHEMA_VERSION: u32 = 1;

/// Input names in network order.
pub const INPUT_NAMES: [&str; 6] = ["h", "delta_minus_theta", "domega", "v_n", "v_np1", "dtheta"];

/// Column order of [`SurrogateNet::input_jacobian`].
pub const JACOBIAN_COLUMNS: [&str; 7] = [
    "h",
    "delta_n",
    "domega_n",
    "v_n",
    "theta_n",
    "v_np1",
    "theta_np1",
];

const OUTPUT_DIM: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct InputSpec {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

/// Ranges of the physical inputs the surrogate is trained on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputDomain {
    pub h: (f64, f64),
    pub delta_minus_theta: (f64, f64),
    pub domega: (f64, f64),
    pub v: (f64, f64),
    pub dtheta: (f64, f64),
}

impl Default for InputDomain {
    fn default() -> Self {
        use std::f64::consts::PI;
        Self {
            h: (0.001, 0.04),
            delta_minus_theta: (0.0, PI / 3.0),
            domega: (-0.015, 0.015),
            v: (0.97, 1.03),
            dtheta: (-PI, PI),
        }
    }
}

impl InputDomain {
    pub fn specs(&self) -> Vec<InputSpec> {
        let ranges = [
            self.h,
            self.delta_minus_theta,
            self.domega,
            self.v,
            self.v,
            self.dtheta,
        ];
        INPUT_NAMES
            .iter()
            .zip(ranges)
            .map(|(name, (lo, hi))| InputSpec {
                name: name.to_string(),
                lo,
                hi,
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub machine_params_hash: String,
    pub trained_at: String,
    pub epochs: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateNet {
    pub layers: Vec<Layer>,
    pub inputs: Vec<InputSpec>,
    pub output_scale: Vec<f64>,
    pub h_max: f64,
    pub provenance: Provenance,
    /// Free-text remark stored with the weights.
    pub note: Option<String>,
}

/// Value and input Jacobian of `x̂_{n+1}`; columns follow [`JACOBIAN_COLUMNS`].
#[derive(Clone, Debug)]
pub struct ForwardJacobian {
    pub value: DVector<f64>,
    pub jacobian: DMatrix<f64>,
}

impl SurrogateNet {
    pub fn new(
        layers: Vec<Layer>,
        inputs: Vec<InputSpec>,
        output_scale: Vec<f64>,
        h_max: f64,
        provenance: Provenance,
    ) -> Result<Self> {
        let net = Self {
            layers,
            inputs,
            output_scale,
            h_max,
            provenance,
            note: None,
        };
        net.validate()?;
        Ok(net)
    }

    /// Net with the given hidden widths and weights drawn uniformly from
    /// `[−scale, scale]`, over the default input domain.
    pub fn seeded(hidden: &[usize], scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![INPUT_NAMES.len()];
        widths.extend_from_slice(hidden);
        widths.push(OUTPUT_DIM);
        let layers = widths
            .windows(2)
            .map(|w| Layer {
                w: DMatrix::from_fn(w[1], w[0], |_, _| rng.gen_range(-scale..=scale)),
                b: DVector::from_fn(w[1], |_, _| rng.gen_range(-scale..=scale)),
            })
            .collect();
        Self {
            layers,
            inputs: InputDomain::default().specs(),
            output_scale: vec![5.7, 0.3],
            h_max: 0.04,
            provenance: Provenance {
                seed,
                ..Provenance::default()
            },
            note: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::WeightFile(m));
        if self.inputs.len() != INPUT_NAMES.len() {
            return bad(format!(
                "expected {} inputs with normalization ranges, found {}",
                INPUT_NAMES.len(),
                self.inputs.len()
            ));
        }
        for (k, (spec, name)) in self.inputs.iter().zip(INPUT_NAMES).enumerate() {
            if spec.name != name {
                return bad(format!("inputs[{k}] is `{}`, expected `{name}`", spec.name));
            }
            if !(spec.lo.is_finite() && spec.hi.is_finite() && spec.lo < spec.hi) {
                return bad(format!("inputs[{k}] needs finite lo < hi"));
            }
        }
        if !(self.h_max.is_finite() && self.h_max > 0.0) {
            return bad("h_max_s must be positive".into());
        }
        if self.layers.is_empty() {
            return bad("at least one layer is required".into());
        }
        let mut width = self.inputs.len();
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.w.ncols() != width {
                return bad(format!(
                    "layers[{k}] has {} columns but the previous width is {width}",
                    layer.w.ncols()
                ));
            }
            if layer.b.len() != layer.w.nrows() {
                return bad(format!(
                    "layers[{k}] bias length {} != rows {}",
                    layer.b.len(),
                    layer.w.nrows()
                ));
            }
            if !layer.w.iter().chain(layer.b.iter()).all(|v| v.is_finite()) {
                return bad(format!("layers[{k}] contains non-finite values"));
            }
            width = layer.w.nrows();
        }
        if width != OUTPUT_DIM || self.output_scale.len() != OUTPUT_DIM {
            return bad(format!(
                "output width {width} and output_scale length {} must both be {OUTPUT_DIM}",
                self.output_scale.len()
            ));
        }
        if !self.output_scale.iter().all(|s| s.is_finite() && *s > 0.0) {
            return bad("output_scale entries must be positive".into());
        }
        Ok(())
    }

    /// Raw (unnormalized) input vector for one step.
    pub fn encode(h: f64, x_n: &[f64], y_n: Polar, y_np1: Polar) -> [f64; 6] {
        [
            h,
            wrap_angle(x_n[0] - y_n.theta),
            x_n[1],
            y_n.v,
            y_np1.v,
            wrap_angle(y_np1.theta - y_n.theta),
        ]
    }

    /// `∂raw/∂[h, δ_n, Δω_n, V_n, θ_n, V_{n+1}, θ_{n+1}]`, away from wrap points.
    fn encoding_jacobian() -> DMatrix<f64> {
        let mut e = DMatrix::zeros(6, 7);
        e[(0, 0)] = 1.0;
        e[(1, 1)] = 1.0;
        e[(1, 4)] = -1.0;
        e[(2, 2)] = 1.0;
        e[(3, 3)] = 1.0;
        e[(4, 5)] = 1.0;
        e[(5, 6)] = 1.0;
        e[(5, 4)] = -1.0;
        e
    }

    fn normalize(&self, raw: &[f64]) -> DVector<f64> {
        DVector::from_fn(raw.len(), |i, _| {
            let s = &self.inputs[i];
            2.0 * (raw[i] - s.lo) / (s.hi - s.lo) - 1.0
        })
    }

    fn check_raw(&self, raw: &[f64]) -> Result<()> {
        if raw.len() != self.inputs.len() {
            return Err(Error::Dimension(format!(
                "network takes {} inputs, got {}",
                self.inputs.len(),
                raw.len()
            )));
        }
        Ok(())
    }

    /// Per-unit-time increment `g = s⊙tanh(…)` at raw inputs.
    pub fn output(&self, raw: &[f64]) -> Result<DVector<f64>> {
        self.check_raw(raw)?;
        let mut z = self.normalize(raw);
        for layer in &self.layers {
            z = (&layer.w * z + &layer.b).map(f64::tanh);
        }
        Ok(z.component_mul(&DVector::from_column_slice(&self.output_scale)))
    }

    /// `g` and `∂g/∂raw`.
    pub fn output_jacobian(&self, raw: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check_raw(raw)?;
        let n = raw.len();
        let mut z = self.normalize(raw);
        let mut dz = DMatrix::from_fn(n, n, |r, c| {
            if r == c {
                2.0 / (self.inputs[r].hi - self.inputs[r].lo)
            } else {
                0.0
            }
        });
        for layer in &self.layers {
            z = (&layer.w * z + &layer.b).map(f64::tanh);
            let slope = z.map(|t| 1.0 - t * t);
            dz = &layer.w * dz;
            for (r, s) in slope.iter().enumerate() {
                dz.row_mut(r).scale_mut(*s);
            }
        }
        for (r, s) in self.output_scale.iter().enumerate() {
            z[r] *= s;
            dz.row_mut(r).scale_mut(*s);
        }
        Ok((z, dz))
    }

    fn check_state(x_n: &[f64]) -> Result<()> {
        if x_n.len() != OUTPUT_DIM {
            return Err(Error::Dimension(format!(
                "surrogate predicts {OUTPUT_DIM} states, got {}",
                x_n.len()
            )));
        }
        Ok(())
    }

    /// `x̂_{n+1}`. At `h = 0` the result equals `x_n` exactly.
    pub fn forward(&self, h: f64, x_n: &[f64], y_n: Polar, y_np1: Polar) -> Result<DVector<f64>> {
        Self::check_state(x_n)?;
        let g = self.output(&Self::encode(h, x_n, y_n, y_np1))?;
        Ok(DVector::from_fn(OUTPUT_DIM, |i, _| x_n[i] + h * g[i]))
    }

    /// `x̂_{n+1}` with its partials with respect to every step input.
    pub fn input_jacobian(
        &self,
        h: f64,
        x_n: &[f64],
        y_n: Polar,
        y_np1: Polar,
    ) -> Result<ForwardJacobian> {
        Self::check_state(x_n)?;
        let (g, dg) = self.output_jacobian(&Self::encode(h, x_n, y_n, y_np1))?;
        let mut jac = dg * Self::encoding_jacobian() * h;
        for i in 0..OUTPUT_DIM {
            jac[(i, 0)] += g[i];
            jac[(i, 1 + i)] += 1.0;
        }
        Ok(ForwardJacobian {
            value: DVector::from_fn(OUTPUT_DIM, |i, _| x_n[i] + h * g[i]),
            jacobian: jac,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json()?)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: WeightDoc =
            serde_json::from_str(text).map_err(|e| Error::WeightFile(e.to_string()))?;
        if doc.schema != SCHEMA_VERSION {
            return Err(Error::WeightFile(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                doc.schema
            )));
        }
        if doc.activation != "tanh" {
            return Err(Error::WeightFile(format!(
                "unsupported activation `{}`",
                doc.activation
            )));
        }
        let mut layers = Vec::with_capacity(doc.layers.len());
        for (k, l) in doc.layers.into_iter().enumerate() {
            if l.w.len() != l.rows * l.cols {
                return Err(Error::WeightFile(format!(
                    "layers[{k}].w has {} values, expected rows·cols = {}",
                    l.w.len(),
                    l.rows * l.cols
                )));
            }
            let w: Vec<f64> = l.w.into_iter().map(|d| d.0).collect();
            layers.push(Layer {
                w: DMatrix::from_row_slice(l.rows, l.cols, &w),
                b: DVector::from_iterator(l.b.len(), l.b.into_iter().map(|d| d.0)),
            });
        }
        let net = Self {
            layers,
            inputs: doc
                .inputs
                .into_iter()
                .map(|i| InputSpec {
                    name: i.name,
                    lo: i.lo.0,
                    hi: i.hi.0,
                })
                .collect(),
            output_scale: doc.output_scale.into_iter().map(|d| d.0).collect(),
            h_max: doc.h_max_s.0,
            provenance: doc.provenance,
            note: doc.note,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        let doc = WeightDoc {
            schema: SCHEMA_VERSION,
            activation: "tanh".into(),
            h_max_s: Dec(self.h_max),
            inputs: self
                .inputs
                .iter()
                .map(|i| InputDoc {
                    name: i.name.clone(),
                    lo: Dec(i.lo),
                    hi: Dec(i.hi),
                })
                .collect(),
            output_scale: self.output_scale.iter().copied().map(Dec).collect(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerDoc {
                    rows: l.w.nrows(),
                    cols: l.w.ncols(),
                    w: (0..l.w.nrows())
                        .flat_map(|r| (0..l.w.ncols()).map(move |c| (r, c)))
                        .map(|rc| Dec(l.w[rc]))
                        .collect(),
                    b: l.b.iter().copied().map(Dec).collect(),
                })
                .collect(),
            provenance: self.provenance.clone(),
            note: self.note.clone(),
        };
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        Ok(text)
    }

    /// Forward/Jacobian/hard-constraint checks at `points` seeded random
    /// in-domain inputs.
    pub fn self_check(&self, points: usize, seed: u64) -> Result<SelfCheckReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut report = SelfCheckReport {
            points,
            ..Default::default()
        };
        for _ in 0..points {
            let raw: Vec<f64> = self
                .inputs
                .iter()
                .map(|s| rng.gen_range(s.lo..=s.hi))
                .collect();
            let h = raw[0].min(self.h_max);
            let theta_n = rng.gen_range(-1.0..1.0);
            let x_n = [raw[1] + theta_n, raw[2]];
            let y_n = Polar::new(raw[3], theta_n);
            let y_np1 = Polar::new(raw[4], theta_n + raw[5] * 0.5);

            let at_zero = self.forward(0.0, &x_n, y_n, y_np1)?;
            for i in 0..OUTPUT_DIM {
                if at_zero[i] != x_n[i] {
                    report.hard_constraint_violations += 1;
                }
            }
            let fj = self.input_jacobian(h, &x_n, y_n, y_np1)?;
            if !fj.value.iter().all(|v| v.is_finite()) {
                return Err(Error::SelfCheck {
                    what: "surrogate forward",
                    deviation: f64::NAN,
                    tolerance: 0.0,
                });
            }
            let fd = finite_difference_jacobian(self, h, &x_n, y_n, y_np1, 1e-6)?;
            for (a, b) in fj.jacobian.iter().zip(fd.iter()) {
                report.jacobian_max_rel = report.jacobian_max_rel.max(relative_deviation(*a, *b));
            }
        }
        if report.hard_constraint_violations > 0 {
            return Err(Error::SelfCheck {
                what: "surrogate hard constraint",
                deviation: report.hard_constraint_violations as f64,
                tolerance: 0.0,
            });
        }
        if report.jacobian_max_rel > 1e-6 {
            return Err(Error::SelfCheck {
                what: "surrogate input Jacobian",
                deviation: report.jacobian_max_rel,
                tolerance: 1e-6,
            });
        }
        Ok(report)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SelfCheckReport {
    pub points: usize,
    pub hard_constraint_violations: usize,
    pub jacobian_max_rel: f64,
}

/// `|a − b| / max(|a|, |b|, 1)`.
pub fn relative_deviation(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Central differences of [`SurrogateNet::forward`] over the columns of
/// [`JACOBIAN_COLUMNS`].
pub fn finite_difference_jacobian(
    net: &SurrogateNet,
    h: f64,
    x_n: &[f64],
    y_n: Polar,
    y_np1: Polar,
    step: f64,
) -> Result<DMatrix<f64>> {
    let base = [h, x_n[0], x_n[1], y_n.v, y_n.theta, y_np1.v, y_np1.theta];
    let mut out = DMatrix::zeros(OUTPUT_DIM, base.len());
    for c in 0..base.len() {
        let eval = |sign: f64| {
            let mut p = base;
            p[c] += sign * step;
            net.forward(
                p[0],
                &[p[1], p[2]],
                Polar::new(p[3], p[4]),
                Polar::new(p[5], p[6]),
            )
        };
        let d = (eval(1.0)? - eval(-1.0)?) / (2.0 * step);
        out.set_column(c, &d);
    }
    Ok(out)
}

/// SHA-256 over the machine constants, formatted with 17 significant
/// digits in declaration order and joined with commas.
pub fn fingerprint(p: &MachineParams) -> String {
    let fields = [
        p.h,
        p.d,
        p.xd,
        p.xd_prime,
        p.xq,
        p.xq_prime,
        p.rs,
        p.td0_prime,
        p.tq0_prime,
        p.p_m,
        p.e_fd,
    ];
    let mut text = fields
        .iter()
        .map(|v| format!("{v:.16e}"))
        .collect::<Vec<_>>()
        .join(",");
    text.push_str(if p.classical {
        ",classical"
    } else {
        ",two-axis"
    });
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// What to do with surrogate inputs outside the trained domain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DomainPolicy {
    #[default]
    Reject,
    /// Clamp to the domain boundary and log a warning.
    Clamp,
}

/// Adapter that plugs a [`SurrogateNet`] into the step residual of a
/// classical machine with active states `(δ, Δω)`.
#[derive(Clone)]
pub struct NeuralIncrement {
    pub net: SurrogateNet,
    pub policy: DomainPolicy,
}

impl fmt::Debug for NeuralIncrement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NeuralIncrement")
            .field("layers", &self.net.layers.len())
            .field("h_max", &self.net.h_max)
            .field("policy", &self.policy)
            .finish()
    }
}

impl NeuralIncrement {
    pub fn new(net: SurrogateNet, policy: DomainPolicy) -> Self {
        Self { net, policy }
    }
}

impl IncrementModel for NeuralIncrement {
    fn dim(&self) -> usize {
        OUTPUT_DIM
    }

    fn h_max(&self) -> f64 {
        self.net.h_max
    }

    fn increment(&self, h: f64, x_n: &[f64], y_n: Polar, y_np1: Polar) -> Result<Increment> {
        SurrogateNet::check_state(x_n)?;
        let mut raw = SurrogateNet::encode(h, x_n, y_n, y_np1);
        let mut clamped = [false; 6];
        for (k, spec) in self.net.inputs.iter().enumerate() {
            let v = raw[k];
            if v >= spec.lo && v <= spec.hi {
                continue;
            }
            match self.policy {
                DomainPolicy::Reject => {
                    return Err(Error::OutOfDomain {
                        name: spec.name.clone(),
                        value: v,
                        lo: spec.lo,
                        hi: spec.hi,
                    })
                }
                DomainPolicy::Clamp => {
                    log::warn!(
                        "surrogate input {} = {v} clamped to [{}, {}]",
                        spec.name,
                        spec.lo,
                        spec.hi
                    );
                    raw[k] = v.clamp(spec.lo, spec.hi);
                    clamped[k] = true;
                }
            }
        }
        let (g, mut dg) = self.net.output_jacobian(&raw)?;
        for (k, c) in clamped.iter().enumerate() {
            if *c {
                dg.column_mut(k).fill(0.0);
            }
        }
        // raw[4] = V_{n+1}, raw[5] = wrap(θ_{n+1} − θ_n)
        Ok(Increment {
            value: g,
            d_y_np1: DMatrix::from_fn(OUTPUT_DIM, 2, |r, c| dg[(r, 4 + c)]),
        })
    }
}

// ---------------------------------------------------------------------------
// Weight file

/// Number written with 17 significant digits.
#[derive(Clone, Copy, Debug)]
struct Dec(f64);

impl Serialize for Dec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(S::Error::custom("non-finite value in weight file"));
        }
        let raw = RawValue::from_string(format!("{:.16e}", self.0)).map_err(S::Error::custom)?;
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Dec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        f64::deserialize(d).map(Dec)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightDoc {
    schema: u32,
    activation: String,
    h_max_s: Dec,
    inputs: Vec<InputDoc>,
    output_scale: Vec<Dec>,
    layers: Vec<LayerDoc>,
    provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputDoc {
    name: String,
    lo: Dec,
    hi: Dec,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    rows: usize,
    cols: usize,
    w: Vec<Dec>,
    b: Vec<Dec>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn zero_net() -> SurrogateNet {
        let mut net = SurrogateNet::seeded(&[4, 3], 1.0, 0);
        for l in &mut net.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        net
    }

    #[test]
    fn zero_weights_keep_state() {
        let net = zero_net();
        let x = net
            .forward(
                0.02,
                &[0.4, 0.01],
                Polar::new(1.0, 0.1),
                Polar::new(1.01, 0.2),
            )
            .unwrap();
        assert_eq!(x.as_slice(), &[0.4, 0.01]);
        let fj = net
            .input_jacobian(
                0.02,
                &[0.4, 0.01],
                Polar::new(1.0, 0.1),
                Polar::new(1.01, 0.2),
            )
            .unwrap();
        let mut expected = DMatrix::zeros(2, 7);
        expected[(0, 1)] = 1.0;
        expected[(1, 2)] = 1.0;
        assert_eq!(fj.jacobian, expected);
    }

    #[test]
    fn single_neuron_composition() {
        let mut inputs = InputDomain::default().specs();
        inputs[0].lo = 0.0;
        inputs[0].hi = 0.04;
        let mut w1 = DMatrix::zeros(1, 6);
        w1[(0, 0)] = 1.0;
        let net = SurrogateNet::new(
            vec![
                Layer {
                    w: w1,
                    b: DVector::zeros(1),
                },
                Layer {
                    w: DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
                    b: DVector::zeros(2),
                },
            ],
            inputs,
            vec![1.0, 1.0],
            0.04,
            Provenance::default(),
        )
        .unwrap();
        // h = 0.03 normalizes to 0.5
        let g = net.output(&[0.03, 0.5, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(g[0], 0.5f64.tanh().tanh(), epsilon = 1e-15);
        assert_abs_diff_eq!(g[0], 0.431808, epsilon = 1e-6);
    }

    #[test]
    fn hard_constraint_and_h_derivative() {
        let net = SurrogateNet::seeded(&[8, 8], 0.8, 3);
        let (x_n, yn, ynp1) = ([0.5, 0.004], Polar::new(1.0, 0.2), Polar::new(0.99, 0.25));
        let x = net.forward(0.0, &x_n, yn, ynp1).unwrap();
        assert_eq!(x.as_slice(), &x_n);
        let fj = net.input_jacobian(0.0, &x_n, yn, ynp1).unwrap();
        let g = net
            .output(&SurrogateNet::encode(0.0, &x_n, yn, ynp1))
            .unwrap();
        assert_eq!(fj.jacobian[(0, 0)], g[0]);
        assert_eq!(fj.jacobian[(1, 0)], g[1]);
    }

    #[test]
    fn jacobian_matches_differences() {
        for seed in 0..5 {
            let net = SurrogateNet::seeded(&[6, 5], 0.7, seed);
            let (x_n, yn, ynp1) = (
                [0.6, -0.003],
                Polar::new(1.01, -0.3),
                Polar::new(0.995, -0.2),
            );
            let fj = net.input_jacobian(0.015, &x_n, yn, ynp1).unwrap();
            let fd = finite_difference_jacobian(&net, 0.015, &x_n, yn, ynp1, 1e-6).unwrap();
            for (a, b) in fj.jacobian.iter().zip(fd.iter()) {
                assert!(relative_deviation(*a, *b) < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn increment_bounded_by_scale() {
        let net = SurrogateNet::seeded(&[6], 3.0, 9);
        let h = 0.02;
        let x = net
            .forward(h, &[0.2, 0.0], Polar::new(1.0, 0.0), Polar::new(1.0, 0.1))
            .unwrap();
        assert!((x[0] - 0.2).abs() <= h * 5.7);
        assert!(x[1].abs() <= h * 0.3);
    }

    #[test]
    fn weight_round_trip_is_exact() {
        let mut net = SurrogateNet::seeded(&[7, 4], 1.3, 11);
        net.provenance.machine_params_hash =
            fingerprint(&crate::machine::preset_params("m3").unwrap());
        net.note = Some("scaled tanh output".into());
        let text = net.to_json().unwrap();
        let back = SurrogateNet::from_json(&text).unwrap();
        assert_eq!(back, net);
        assert!(text.contains("e"));
    }

    #[test]
    fn broken_chain_rejected() {
        let net = SurrogateNet::seeded(&[5, 4], 1.0, 1);
        let text = net.to_json().unwrap();
        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc["layers"][1]["cols"] = 4.into();
        doc["layers"][1]["w"] = serde_json::Value::Array(vec![0.0.into(); 16]);
        let err = SurrogateNet::from_json(&doc.to_string()).unwrap_err();
        assert!(
            matches!(err, Error::WeightFile(ref m) if m.contains("layers[1]")),
            "{err}"
        );
    }

    #[test]
    fn schema_and_metadata_checks() {
        let net = SurrogateNet::seeded(&[3], 1.0, 1);
        let mut doc: serde_json::Value = serde_json::from_str(&net.to_json().unwrap()).unwrap();
        doc["schema"] = 2.into();
        assert!(SurrogateNet::from_json(&doc.to_string()).is_err());
        doc["schema"] = 1.into();
        doc["inputs"] = serde_json::Value::Array(vec![]);
        assert!(matches!(
            SurrogateNet::from_json(&doc.to_string()),
            Err(Error::WeightFile(_))
        ));
    }

    #[test]
    fn domain_policy() {
        let net = SurrogateNet::seeded(&[4], 0.5, 2);
        let reject = NeuralIncrement::new(net.clone(), DomainPolicy::Reject);
        let out = reject.increment(
            0.02,
            &[0.2, 0.05],
            Polar::new(1.0, 0.0),
            Polar::new(1.0, 0.0),
        );
        assert!(matches!(out, Err(Error::OutOfDomain { ref name, .. }) if name == "domega"));
        let clamp = NeuralIncrement::new(net, DomainPolicy::Clamp);
        let a = clamp
            .increment(
                0.02,
                &[0.2, 0.05],
                Polar::new(1.0, 0.0),
                Polar::new(1.0, 0.0),
            )
            .unwrap();
        let b = clamp
            .increment(
                0.02,
                &[0.2, 0.015],
                Polar::new(1.0, 0.0),
                Polar::new(1.0, 0.0),
            )
            .unwrap();
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn fingerprint_depends_on_values() {
        let m3 = crate::machine::preset_params("m3").unwrap();
        let mut other = m3.clone();
        other.h += 1e-12;
        assert_eq!(fingerprint(&m3).len(), 64);
        assert_ne!(fingerprint(&m3), fingerprint(&other));
        assert_eq!(fingerprint(&m3), fingerprint(&m3.clone()));
    }
}
